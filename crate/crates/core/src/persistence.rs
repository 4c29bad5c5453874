//! Persistence certificates.
//!
//! A network is certified persistent when it has a strictly positive linear
//! conserved quantity and every minimal siphon carries a nonnegative
//! conserved quantity supported inside it. The test is sufficient only: a
//! failed search is reported as inconclusive, never as non-persistence.

use serde::Serialize;
use thiserror::Error;

use crate::conservation::{
    positive_conserved_on_support, strictly_positive_conserved, CertificateError,
    ConservedQuantity,
};
use crate::crn::{compartmental_crn, Crn, StoichiometricMatrix};
use crate::graph::CompartmentalGraph;
use crate::petri::{closed_form_siphons, PetriError, PetriNet, Siphon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    PersistentCertified,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PersistenceMethod {
    StructuralCorollary,
    Theorem1General,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceVerdict {
    pub verdict: Verdict,
    pub method: PersistenceMethod,
    pub global_certificate: Option<ConservedQuantity>,
    /// Every minimal siphon examined, with its certificate when one was found.
    pub siphon_certificates: Vec<(Siphon, Option<ConservedQuantity>)>,
    pub reason: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuditError {
    #[error("global certificate: {0}")]
    Global(CertificateError),
    #[error("certificate for siphon {siphon:?}: {source}")]
    Siphon {
        siphon: Vec<usize>,
        source: CertificateError,
    },
    #[error("certified verdict is missing a certificate")]
    Missing,
}

impl PersistenceVerdict {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::PersistentCertified
    }

    /// Re-check every certificate against `gamma`, independently of how it
    /// was produced. A certified verdict must carry all of them.
    pub fn audit(&self, gamma: &StoichiometricMatrix) -> Result<(), AuditError> {
        match &self.global_certificate {
            Some(c) => c.verify(gamma, None, true).map_err(AuditError::Global)?,
            None if self.is_certified() => return Err(AuditError::Missing),
            None => {}
        }
        for (siphon, cert) in &self.siphon_certificates {
            match cert {
                Some(c) => c
                    .verify(gamma, Some(siphon.places()), false)
                    .map_err(|source| AuditError::Siphon {
                        siphon: siphon.places().to_vec(),
                        source,
                    })?,
                None if self.is_certified() => return Err(AuditError::Missing),
                None => {}
            }
        }
        Ok(())
    }

    pub fn to_json(&self, species: &[String]) -> serde_json::Value {
        let cert_json = |c: &ConservedQuantity| {
            serde_json::json!({
                "coefficients": c,
                "support": c.support().iter().map(|&j| species[j].clone()).collect::<Vec<_>>(),
                "expression": c.expression(species),
            })
        };
        let siphons: Vec<serde_json::Value> = self
            .siphon_certificates
            .iter()
            .map(|(s, c)| {
                serde_json::json!({
                    "siphon": s.names(species),
                    "certificate": c.as_ref().map(cert_json),
                })
            })
            .collect();
        serde_json::json!({
            "verdict": self.verdict,
            "method": self.method,
            "reason": self.reason,
            "global_certificate": self.global_certificate.as_ref().map(cert_json),
            "siphon_certificates": siphons,
        })
    }
}

/// Certificates read off the graph: all-ones globally, `sum n_i` for `{N}`,
/// `sum s_i` for `{S}`, and `n_i + s_i` for `{N_i, S_i}`. Only strongly
/// connected graphs are certified.
pub fn check_persistence_structural(g: &CompartmentalGraph) -> PersistenceVerdict {
    let m = g.m();
    let species = 2 * m;
    let siphons = match closed_form_siphons(g) {
        Ok(s) => s,
        Err(_) => {
            return PersistenceVerdict {
                verdict: Verdict::Inconclusive,
                method: PersistenceMethod::StructuralCorollary,
                global_certificate: None,
                siphon_certificates: Vec::new(),
                reason: "compartmental graph is not strongly connected; the structural criterion does not apply".into(),
            }
        }
    };
    let global = ConservedQuantity::from_integers(&vec![1; species]);
    let gamma = compartmental_crn(g).stoichiometric_matrix();
    let mut all_found = global.verify(&gamma, None, true).is_ok();
    let siphon_certificates = siphons
        .into_iter()
        .map(|s| {
            let cert = structural_certificate(m, &s);
            let ok = cert.verify(&gamma, Some(s.places()), false).is_ok();
            all_found &= ok;
            (s, ok.then_some(cert))
        })
        .collect();
    let (verdict, reason) = if all_found {
        (
            Verdict::PersistentCertified,
            "strongly connected compartmental graph; every minimal siphon carries a conserved quantity".to_string(),
        )
    } else {
        (
            Verdict::Inconclusive,
            "a structural certificate failed re-verification".to_string(),
        )
    };
    PersistenceVerdict {
        verdict,
        method: PersistenceMethod::StructuralCorollary,
        global_certificate: Some(global),
        siphon_certificates,
        reason,
    }
}

fn structural_certificate(m: usize, siphon: &Siphon) -> ConservedQuantity {
    // the indicator of each closed-form siphon is itself conserved
    ConservedQuantity::indicator(2 * m, siphon.places())
}

/// General test on any network: exact LP searches for a strictly positive
/// conserved quantity and for one certificate per minimal siphon.
pub fn check_persistence_theorem1(crn: &Crn, place_cap: usize) -> Result<PersistenceVerdict, PetriError> {
    let net = PetriNet::from_crn(crn);
    let siphons = net.minimal_siphons(place_cap)?;
    let gamma = crn.stoichiometric_matrix();
    let global = strictly_positive_conserved(&gamma);
    let siphon_certificates: Vec<(Siphon, Option<ConservedQuantity>)> = siphons
        .into_iter()
        .map(|s| {
            let cert = positive_conserved_on_support(&gamma, s.places());
            (s, cert)
        })
        .collect();
    let missing: Vec<&Siphon> = siphon_certificates
        .iter()
        .filter(|(_, c)| c.is_none())
        .map(|(s, _)| s)
        .collect();
    let (verdict, reason) = match (&global, missing.first()) {
        (Some(_), None) => (
            Verdict::PersistentCertified,
            "strictly positive conserved quantity found and every minimal siphon carries a conserved quantity".to_string(),
        ),
        (None, _) => (
            Verdict::Inconclusive,
            "no strictly positive linear conserved quantity exists".to_string(),
        ),
        (Some(_), Some(s)) => (
            Verdict::Inconclusive,
            format!(
                "minimal siphon {{{}}} contains no conserved quantity",
                s.names(crn.species()).join(",")
            ),
        ),
    };
    Ok(PersistenceVerdict {
        verdict,
        method: PersistenceMethod::Theorem1General,
        global_certificate: global,
        siphon_certificates,
        reason,
    })
}
