//! Linear conserved quantities, computed exactly over the rationals.

use num::{BigInt, BigRational, Integer, One, Signed, ToPrimitive, Zero};
use serde::ser::{Serialize, SerializeSeq, Serializer};
use thiserror::Error;

use crate::crn::StoichiometricMatrix;
use crate::lp::{self, LpOutcome, Q};

/// A nonzero coefficient vector `c` with `c^T Gamma = 0`. Stored as a
/// primitive integer vector when produced by this module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConservedQuantity {
    coefficients: Vec<BigRational>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CertificateError {
    #[error("certificate has {got} coefficients, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("certificate is the zero vector")]
    Zero,
    #[error("coefficient of species {0} is negative")]
    Negative(usize),
    #[error("coefficient of species {0} is not strictly positive")]
    NotStrictlyPositive(usize),
    #[error("species {0} lies outside the allowed support")]
    OutsideSupport(usize),
    #[error("c^T Gamma is nonzero at reaction {reaction} (residual {residual})")]
    Residual { reaction: usize, residual: String },
}

impl ConservedQuantity {
    pub fn new(coefficients: Vec<BigRational>) -> Self {
        ConservedQuantity { coefficients }
    }

    pub fn from_integers(coefficients: &[i64]) -> Self {
        ConservedQuantity {
            coefficients: coefficients
                .iter()
                .map(|&v| BigRational::from_integer(v.into()))
                .collect(),
        }
    }

    /// Indicator vector of `support` in dimension `len`.
    pub fn indicator(len: usize, support: &[usize]) -> Self {
        let mut c = vec![0i64; len];
        support.iter().for_each(|&j| c[j] = 1);
        Self::from_integers(&c)
    }

    pub fn coefficients(&self) -> &[BigRational] {
        &self.coefficients
    }

    pub fn support(&self) -> Vec<usize> {
        self.coefficients
            .iter()
            .enumerate()
            .filter_map(|(j, c)| (!c.is_zero()).then_some(j))
            .collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.coefficients.iter().all(|c| !c.is_negative())
    }

    /// Exact `c^T Gamma`.
    pub fn residual(&self, gamma: &StoichiometricMatrix) -> Vec<BigRational> {
        (0..gamma.reactions())
            .map(|r| {
                self.coefficients
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| !c.is_zero())
                    .fold(BigRational::zero(), |acc, (j, c)| {
                        acc + c * BigRational::from_integer(gamma.get(j, r).into())
                    })
            })
            .collect()
    }

    /// Check conservation, nonnegativity, optional strict positivity, and
    /// support containment from scratch.
    pub fn verify(
        &self,
        gamma: &StoichiometricMatrix,
        allowed: Option<&[usize]>,
        strictly_positive: bool,
    ) -> Result<(), CertificateError> {
        if self.coefficients.len() != gamma.species() {
            return Err(CertificateError::Length {
                expected: gamma.species(),
                got: self.coefficients.len(),
            });
        }
        if self.coefficients.iter().all(Zero::is_zero) {
            return Err(CertificateError::Zero);
        }
        for (j, c) in self.coefficients.iter().enumerate() {
            if c.is_negative() {
                return Err(CertificateError::Negative(j));
            }
            if strictly_positive && c.is_zero() {
                return Err(CertificateError::NotStrictlyPositive(j));
            }
            if let Some(allowed) = allowed {
                if !c.is_zero() && !allowed.contains(&j) {
                    return Err(CertificateError::OutsideSupport(j));
                }
            }
        }
        if let Some((reaction, residual)) = self
            .residual(gamma)
            .into_iter()
            .enumerate()
            .find(|(_, v)| !v.is_zero())
        {
            return Err(CertificateError::Residual {
                reaction,
                residual: residual.to_string(),
            });
        }
        Ok(())
    }

    /// Human-readable linear form such as `N1 + 2 S1`.
    pub fn expression(&self, names: &[String]) -> String {
        let terms: Vec<String> = self
            .coefficients
            .iter()
            .zip(names)
            .filter(|(c, _)| !c.is_zero())
            .map(|(c, name)| {
                if c.is_one() {
                    name.clone()
                } else {
                    format!("{c} {name}")
                }
            })
            .collect();
        terms.join(" + ")
    }

    fn normalized(coefficients: Vec<BigRational>) -> Self {
        ConservedQuantity {
            coefficients: primitive_integer(coefficients),
        }
    }
}

/// Coefficients serialize as `[numerator, denominator]` pairs.
impl Serialize for ConservedQuantity {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.coefficients.len()))?;
        for c in &self.coefficients {
            seq.serialize_element(&(big_to_json(c.numer()), big_to_json(c.denom())))?;
        }
        seq.end()
    }
}

fn big_to_json(v: &BigInt) -> serde_json::Value {
    match v.to_i64() {
        Some(i) => serde_json::Value::from(i),
        None => serde_json::Value::from(v.to_string()),
    }
}

/// Scale to the primitive integer vector on the same ray.
fn primitive_integer(v: Vec<BigRational>) -> Vec<BigRational> {
    let lcm = v
        .iter()
        .fold(BigInt::one(), |acc, c| acc.lcm(c.denom()));
    let ints: Vec<BigInt> = v.iter().map(|c| (c * BigRational::from_integer(lcm.clone())).to_integer()).collect();
    let gcd = ints
        .iter()
        .fold(BigInt::zero(), |acc, c| acc.gcd(c));
    if gcd.is_zero() {
        return v;
    }
    ints.into_iter()
        .map(|c| BigRational::from_integer(c / &gcd))
        .collect()
}

/// Basis of `{c : c^T Gamma = 0}` by reduced row echelon form of
/// `Gamma^T`. One vector per free species column; dimension is
/// `M - rank(Gamma)`.
pub fn left_null_space(gamma: &StoichiometricMatrix) -> Vec<ConservedQuantity> {
    let (n_species, n_reactions) = (gamma.species(), gamma.reactions());
    // rows = reactions, cols = species
    let mut a: Vec<Vec<BigRational>> = (0..n_reactions)
        .map(|r| {
            (0..n_species)
                .map(|j| BigRational::from_integer(gamma.get(j, r).into()))
                .collect()
        })
        .collect();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n_species {
        let Some(p) = (row..n_reactions).find(|&i| !a[i][col].is_zero()) else {
            continue;
        };
        a.swap(row, p);
        let inv = a[row][col].clone();
        for v in a[row].iter_mut() {
            *v /= &inv;
        }
        let pivot_row = a[row].clone();
        for (i, other) in a.iter_mut().enumerate() {
            if i != row && !other[col].is_zero() {
                let f = other[col].clone();
                for (v, pv) in other.iter_mut().zip(&pivot_row) {
                    *v -= &f * pv;
                }
            }
        }
        pivots.push(col);
        row += 1;
        if row == n_reactions {
            break;
        }
    }
    (0..n_species)
        .filter(|j| !pivots.contains(j))
        .map(|free| {
            let mut c = vec![BigRational::zero(); n_species];
            c[free] = BigRational::one();
            for (r, &pc) in pivots.iter().enumerate() {
                c[pc] = -a[r][free].clone();
            }
            ConservedQuantity::normalized(c)
        })
        .collect()
}

/// Look for `c >= 0`, `c != 0`, `c^T Gamma = 0` with support inside
/// `allowed`, by maximizing `sum c` over `0 <= c <= 1`.
pub fn positive_conserved_on_support(
    gamma: &StoichiometricMatrix,
    allowed: &[usize],
) -> Option<ConservedQuantity> {
    let mut cols: Vec<usize> = allowed.to_vec();
    cols.sort_unstable();
    cols.dedup();
    if cols.is_empty() {
        return None;
    }
    let k = cols.len();
    let r = gamma.reactions();
    // variables: c_0..c_{k-1}, u_0..u_{k-1} (upper-bound slacks)
    let n = 2 * k;
    let mut a = Vec::with_capacity(r + k);
    let mut b = Vec::with_capacity(r + k);
    for reaction in 0..r {
        let mut row = vec![Q::zero(); n];
        for (v, &j) in row.iter_mut().zip(&cols) {
            *v = Q::from_integer(gamma.get(j, reaction).into());
        }
        a.push(row);
        b.push(Q::zero());
    }
    for i in 0..k {
        let mut row = vec![Q::zero(); n];
        row[i] = Q::one();
        row[k + i] = Q::one();
        a.push(row);
        b.push(Q::one());
    }
    let mut objective = vec![Q::zero(); n];
    objective[..k].iter_mut().for_each(|v| *v = Q::one());
    match lp::maximize(&a, &b, &objective) {
        LpOutcome::Optimal { x, value } if value.is_positive() => {
            let mut c = vec![BigRational::zero(); gamma.species()];
            for (i, &j) in cols.iter().enumerate() {
                c[j] = x[i].clone();
            }
            Some(ConservedQuantity::normalized(c))
        }
        _ => None,
    }
}

/// Look for a conserved `c` with every entry strictly positive, by
/// maximizing `t` subject to `c_j >= t`, `c^T Gamma = 0`, `c <= 1`, `t <= 1`.
pub fn strictly_positive_conserved(gamma: &StoichiometricMatrix) -> Option<ConservedQuantity> {
    let m = gamma.species();
    let r = gamma.reactions();
    // variables: c (m), t, w (m surplus), u (m upper slack), v (t slack)
    let t = m;
    let w0 = m + 1;
    let u0 = 2 * m + 1;
    let v = 3 * m + 1;
    let n = 3 * m + 2;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for reaction in 0..r {
        let mut row = vec![Q::zero(); n];
        for (j, cell) in row.iter_mut().enumerate().take(m) {
            *cell = Q::from_integer(gamma.get(j, reaction).into());
        }
        a.push(row);
        b.push(Q::zero());
    }
    for j in 0..m {
        let mut row = vec![Q::zero(); n];
        row[j] = Q::one();
        row[t] = -Q::one();
        row[w0 + j] = -Q::one();
        a.push(row);
        b.push(Q::zero());
        let mut row = vec![Q::zero(); n];
        row[j] = Q::one();
        row[u0 + j] = Q::one();
        a.push(row);
        b.push(Q::one());
    }
    let mut row = vec![Q::zero(); n];
    row[t] = Q::one();
    row[v] = Q::one();
    a.push(row);
    b.push(Q::one());
    let mut objective = vec![Q::zero(); n];
    objective[t] = Q::one();
    match lp::maximize(&a, &b, &objective) {
        LpOutcome::Optimal { x, value } if value.is_positive() => {
            Some(ConservedQuantity::normalized(x[..m].to_vec()))
        }
        _ => None,
    }
}
