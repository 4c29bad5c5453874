//! Chemical reaction networks with monotone kinetics, and the network
//! induced by a compartmental graph.

use serde::Serialize;
use thiserror::Error;

use crate::conservation::{self, ConservedQuantity};
use crate::graph::CompartmentalGraph;
use crate::rate::{RateLaw, RateSpec};

/// Absolute slack allowed below zero before a state is rejected.
pub const TOL_STATE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CrnError {
    #[error("reaction {reaction}: stoichiometric vectors must have length {expected}")]
    Length { reaction: usize, expected: usize },
    #[error("reaction {0} does not change the state (reactant equals product)")]
    NoChange(usize),
    #[error("reaction {reaction}: rate depends on {support:?} but the reactant support is {reactants:?}")]
    SupportMismatch {
        reaction: usize,
        support: Vec<usize>,
        reactants: Vec<usize>,
    },
    #[error("reaction {reaction}: rate law takes {arity} arguments but {declared} dependencies are declared")]
    Arity {
        reaction: usize,
        arity: usize,
        declared: usize,
    },
    #[error("state has {got} coordinates, expected {expected}")]
    StateLength { expected: usize, got: usize },
    #[error("state coordinate {index} is negative ({value})")]
    NegativeState { index: usize, value: f64 },
}

/// A rate law bound to the species it reads, in argument order.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFunction {
    pub law: RateLaw,
    pub support: Vec<usize>,
}

impl RateFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let args: Vec<f64> = self.support.iter().map(|&j| x[j]).collect();
        self.law.eval(&args)
    }

    /// Mass action on the full reactant complex.
    pub fn mass_action(k: f64, reactants: &[u32]) -> Self {
        let (support, orders) = reactants
            .iter()
            .enumerate()
            .filter(|(_, &y)| y > 0)
            .map(|(j, &y)| (j, y))
            .unzip();
        RateFunction {
            law: RateLaw::MassAction { k, orders },
            support,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub reactants: Vec<u32>,
    pub products: Vec<u32>,
    pub rate: RateFunction,
}

impl Reaction {
    pub fn reactant_support(&self) -> Vec<usize> {
        support_of(&self.reactants)
    }

    pub fn product_support(&self) -> Vec<usize> {
        support_of(&self.products)
    }
}

fn support_of(y: &[u32]) -> Vec<usize> {
    y.iter()
        .enumerate()
        .filter_map(|(j, &v)| (v > 0).then_some(j))
        .collect()
}

/// Integer `M x R` matrix whose column `r` is `y'_r - y_r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoichiometricMatrix {
    species: usize,
    reactions: usize,
    data: Vec<i64>,
}

impl StoichiometricMatrix {
    pub fn from_columns(species: usize, columns: &[Vec<i64>]) -> Self {
        let reactions = columns.len();
        let mut data = vec![0; species * reactions];
        for (r, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), species);
            for (j, &v) in col.iter().enumerate() {
                data[j * reactions + r] = v;
            }
        }
        StoichiometricMatrix {
            species,
            reactions,
            data,
        }
    }

    pub fn species(&self) -> usize {
        self.species
    }

    pub fn reactions(&self) -> usize {
        self.reactions
    }

    pub fn get(&self, species: usize, reaction: usize) -> i64 {
        self.data[species * self.reactions + reaction]
    }

    pub fn column(&self, reaction: usize) -> Vec<i64> {
        (0..self.species).map(|j| self.get(j, reaction)).collect()
    }

    pub fn row(&self, species: usize) -> &[i64] {
        &self.data[species * self.reactions..(species + 1) * self.reactions]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crn {
    species: Vec<String>,
    reactions: Vec<Reaction>,
}

impl Crn {
    pub fn new(species: Vec<String>, reactions: Vec<Reaction>) -> Result<Self, CrnError> {
        let m = species.len();
        for (i, r) in reactions.iter().enumerate() {
            if r.reactants.len() != m || r.products.len() != m {
                return Err(CrnError::Length {
                    reaction: i,
                    expected: m,
                });
            }
            if r.reactants == r.products {
                return Err(CrnError::NoChange(i));
            }
            if r.rate.law.arity() != r.rate.support.len() {
                return Err(CrnError::Arity {
                    reaction: i,
                    arity: r.rate.law.arity(),
                    declared: r.rate.support.len(),
                });
            }
            let mut declared = r.rate.support.clone();
            declared.sort_unstable();
            declared.dedup();
            let reactants = r.reactant_support();
            if declared != reactants || declared.len() != r.rate.support.len() {
                return Err(CrnError::SupportMismatch {
                    reaction: i,
                    support: r.rate.support.clone(),
                    reactants,
                });
            }
        }
        Ok(Crn { species, reactions })
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn species_count(&self) -> usize {
        self.species.len()
    }

    pub fn reaction_count(&self) -> usize {
        self.reactions.len()
    }

    pub fn stoichiometric_matrix(&self) -> StoichiometricMatrix {
        let cols: Vec<Vec<i64>> = self
            .reactions
            .iter()
            .map(|r| {
                r.products
                    .iter()
                    .zip(&r.reactants)
                    .map(|(&p, &y)| i64::from(p) - i64::from(y))
                    .collect()
            })
            .collect();
        StoichiometricMatrix::from_columns(self.species.len(), &cols)
    }

    /// `sum_i K_i(x) (y'_i - y_i)`.
    pub fn ode_rhs(&self, x: &[f64]) -> Result<Vec<f64>, CrnError> {
        if x.len() != self.species.len() {
            return Err(CrnError::StateLength {
                expected: self.species.len(),
                got: x.len(),
            });
        }
        if let Some((index, &value)) = x.iter().enumerate().find(|(_, &v)| v < -TOL_STATE) {
            return Err(CrnError::NegativeState { index, value });
        }
        let mut dx = vec![0.0; x.len()];
        for r in &self.reactions {
            let rate = r.rate.eval(x);
            for (j, (&p, &y)) in r.products.iter().zip(&r.reactants).enumerate() {
                if p != y {
                    dx[j] += rate * (f64::from(p) - f64::from(y));
                }
            }
        }
        Ok(dx)
    }

    pub fn conservation_basis(&self) -> Vec<ConservedQuantity> {
        conservation::left_null_space(&self.stoichiometric_matrix())
    }

    pub fn positive_conserved_on_support(&self, allowed: &[usize]) -> Option<ConservedQuantity> {
        conservation::positive_conserved_on_support(&self.stoichiometric_matrix(), allowed)
    }

    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct ReactionJson<'a> {
            reactants: &'a [u32],
            products: &'a [u32],
            rate: RateJson,
        }
        #[derive(Serialize)]
        struct RateJson {
            kind: &'static str,
            support: Vec<String>,
            #[serde(skip_serializing_if = "Option::is_none")]
            k: Option<f64>,
            #[serde(skip_serializing_if = "Option::is_none")]
            orders: Option<Vec<u32>>,
            #[serde(skip_serializing_if = "Option::is_none")]
            half_saturation: Option<Vec<f64>>,
            #[serde(skip_serializing_if = "Option::is_none")]
            name: Option<String>,
        }
        let reactions: Vec<ReactionJson> = self
            .reactions
            .iter()
            .map(|r| {
                let mut rate = RateJson {
                    kind: r.rate.law.kind(),
                    support: r.rate.support.iter().map(|&j| self.species[j].clone()).collect(),
                    k: None,
                    orders: None,
                    half_saturation: None,
                    name: None,
                };
                match &r.rate.law {
                    RateLaw::MassAction { k, orders } => {
                        rate.k = Some(*k);
                        rate.orders = Some(orders.clone());
                    }
                    RateLaw::Saturating { k, half_saturation } => {
                        rate.k = Some(*k);
                        rate.half_saturation = Some(half_saturation.clone());
                    }
                    RateLaw::Custom(c) => rate.name = Some(c.name().to_string()),
                }
                ReactionJson {
                    reactants: &r.reactants,
                    products: &r.products,
                    rate,
                }
            })
            .collect();
        serde_json::json!({ "species": self.species, "reactions": reactions })
    }
}

/// Place/species index of `N_i` (particles in compartment `i`).
pub fn particle_species(i: usize) -> usize {
    i
}

/// Place/species index of `S_i` (free space in compartment `i`) for `m`
/// compartments.
pub fn space_species(m: usize, i: usize) -> usize {
    m + i
}

pub fn compartmental_species_names(m: usize) -> Vec<String> {
    (1..=m)
        .map(|i| format!("N{i}"))
        .chain((1..=m).map(|i| format!("S{i}")))
        .collect()
}

/// The CRN with species `N_1..N_m, S_1..S_m` and one reaction
/// `N_i + S_j -> N_j + S_i` per edge `(i, j)`, in edge order.
pub fn compartmental_crn(g: &CompartmentalGraph) -> Crn {
    let m = g.m();
    let reactions = g
        .edges()
        .iter()
        .map(|e| {
            let mut reactants = vec![0u32; 2 * m];
            let mut products = vec![0u32; 2 * m];
            reactants[particle_species(e.from)] = 1;
            reactants[space_species(m, e.to)] = 1;
            products[particle_species(e.to)] = 1;
            products[space_species(m, e.from)] = 1;
            Reaction {
                reactants,
                products,
                rate: edge_rate(&e.rate, m, e.from, e.to),
            }
        })
        .collect();
    Crn::new(compartmental_species_names(m), reactions)
        .expect("compartmental construction yields a valid network")
}

fn edge_rate(spec: &RateSpec, m: usize, from: usize, to: usize) -> RateFunction {
    RateFunction {
        law: spec.law(),
        support: vec![particle_species(from), space_species(m, to)],
    }
}

/// The six-species, three-reaction cyclic network
/// `X1+X5 -> X2+X4`, `X2+X6 -> X3+X5`, `X3+X4 -> X1+X6` with mass action
/// coefficients `k`.
pub fn triangle_exchange_network(k: [f64; 3]) -> Crn {
    let spec: [([usize; 2], [usize; 2]); 3] = [([0, 4], [1, 3]), ([1, 5], [2, 4]), ([2, 3], [0, 5])];
    let reactions = spec
        .iter()
        .zip(k)
        .map(|((ins, outs), k)| {
            let mut reactants = vec![0u32; 6];
            let mut products = vec![0u32; 6];
            ins.iter().for_each(|&j| reactants[j] = 1);
            outs.iter().for_each(|&j| products[j] = 1);
            let rate = RateFunction::mass_action(k, &reactants);
            Reaction {
                reactants,
                products,
                rate,
            }
        })
        .collect();
    Crn::new((1..=6).map(|i| format!("X{i}")).collect(), reactions).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(m: usize, edges: &[(usize, usize)]) -> CompartmentalGraph {
        CompartmentalGraph::build(&GraphSpec::uniform(m, edges)).unwrap()
    }

    #[test]
    fn triangle_network_stoichiometry() {
        let crn = triangle_exchange_network([1.0; 3]);
        let gamma = crn.stoichiometric_matrix();
        assert_eq!((gamma.species(), gamma.reactions()), (6, 3));
        assert_eq!(gamma.column(0), vec![-1, 1, 0, 1, -1, 0]);
        assert_eq!(gamma.column(1), vec![0, -1, 1, 0, 1, -1]);
        assert_eq!(gamma.column(2), vec![1, 0, -1, -1, 0, 1]);
    }

    #[test]
    fn single_reaction_column() {
        let reactants = vec![1, 0];
        let crn = Crn::new(
            vec!["X1".into(), "X2".into()],
            vec![Reaction {
                rate: RateFunction::mass_action(1.0, &reactants),
                reactants,
                products: vec![0, 1],
            }],
        )
        .unwrap();
        assert_eq!(crn.stoichiometric_matrix().column(0), vec![-1, 1]);
    }

    #[test]
    fn compartmental_triangle_matches_exchange_network() {
        let g = graph(3, &[(1, 2), (2, 3), (3, 1)]);
        let crn = compartmental_crn(&g);
        assert_eq!(crn.species(), &["N1", "N2", "N3", "S1", "S2", "S3"]);
        assert_eq!(
            crn.stoichiometric_matrix(),
            triangle_exchange_network([1.0; 3]).stoichiometric_matrix()
        );
        // same kinetics too, under N_i = X_i, S_i = X_{i+3}
        let x = [0.3, 0.7, 0.2, 0.9, 0.1, 0.5];
        assert_eq!(
            crn.ode_rhs(&x).unwrap(),
            triangle_exchange_network([1.0; 3]).ode_rhs(&x).unwrap()
        );
    }

    #[test]
    fn single_edge_reaction() {
        let crn = compartmental_crn(&graph(2, &[(1, 2)]));
        assert_eq!(crn.reaction_count(), 1);
        let r = &crn.reactions()[0];
        assert_eq!(r.reactants, vec![1, 0, 0, 1]);
        assert_eq!(r.products, vec![0, 1, 1, 0]);
        assert_eq!(r.rate.support, vec![0, 3]);
    }

    #[test]
    fn cycle_species_incidence() {
        for m in 2..8 {
            let edges: Vec<_> = (1..=m).map(|i| (i, i % m + 1)).collect();
            let crn = compartmental_crn(&graph(m, &edges));
            assert_eq!(crn.reaction_count(), m);
            for j in 0..2 * m {
                let hits = crn
                    .reactions()
                    .iter()
                    .filter(|r| r.reactants[j] > 0 || r.products[j] > 0)
                    .count();
                assert_eq!(hits, 2, "species {j} of {m}-cycle");
            }
        }
    }

    #[test]
    fn ode_rhs_hand_evaluated() {
        let crn = triangle_exchange_network([1.0; 3]);
        let dx = crn.ode_rhs(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(dx, vec![-1.0, 1.0, 0.0, 1.0, -1.0, 0.0]);
        assert_eq!(crn.ode_rhs(&[0.0; 6]).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn ode_rhs_rejects_negative_state() {
        let crn = triangle_exchange_network([1.0; 3]);
        let err = crn.ode_rhs(&[1.0, -1e-3, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(err, Err(CrnError::NegativeState { index: 1, value: -1e-3 }));
        assert!(crn.ode_rhs(&[1.0, -1e-10, 0.0, 0.0, 1.0, 0.0]).is_ok());
        assert!(matches!(crn.ode_rhs(&[1.0]), Err(CrnError::StateLength { .. })));
    }

    #[test]
    fn total_is_conserved_at_random_states() {
        let crn = triangle_exchange_network([1.3, 0.4, 2.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..5.0)).collect();
            let dx = crn.ode_rhs(&x).unwrap();
            let total: f64 = dx.iter().sum();
            assert!(total.abs() <= 1e-12 * dx.iter().map(|v| v.abs()).sum::<f64>().max(1.0));
        }
    }

    #[test]
    fn validation_errors() {
        let names = vec!["A".to_string(), "B".to_string()];
        let same = Reaction {
            reactants: vec![1, 0],
            products: vec![1, 0],
            rate: RateFunction::mass_action(1.0, &[1, 0]),
        };
        assert_eq!(Crn::new(names.clone(), vec![same]), Err(CrnError::NoChange(0)));
        let wrong_support = Reaction {
            reactants: vec![1, 0],
            products: vec![0, 1],
            rate: RateFunction::mass_action(1.0, &[0, 1]),
        };
        assert!(matches!(
            Crn::new(names.clone(), vec![wrong_support]),
            Err(CrnError::SupportMismatch { .. })
        ));
        let short = Reaction {
            reactants: vec![1],
            products: vec![0, 1],
            rate: RateFunction::mass_action(1.0, &[1]),
        };
        assert!(matches!(Crn::new(names, vec![short]), Err(CrnError::Length { .. })));
    }

    #[test]
    fn json_export_lists_species_and_vectors() {
        let crn = compartmental_crn(&graph(2, &[(1, 2), (2, 1)]));
        let v = crn.to_json();
        assert_eq!(v["species"], serde_json::json!(["N1", "N2", "S1", "S2"]));
        assert_eq!(v["reactions"][0]["reactants"], serde_json::json!([1, 0, 0, 1]));
        assert_eq!(v["reactions"][1]["products"], serde_json::json!([1, 0, 0, 1]));
        assert_eq!(v["reactions"][0]["rate"]["support"], serde_json::json!(["N1", "S2"]));
        assert_eq!(v["reactions"][0]["rate"]["kind"], "mass_action");
    }
}
