//! Monotone rate functions.
//!
//! Every rate is differentiable, nondecreasing in each argument it depends
//! on, and vanishes as soon as one of those arguments is zero. Built-in laws
//! satisfy this analytically; user-supplied closures are screened numerically
//! before they are accepted.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("parameter `{name}` must be finite and positive, got {value}")]
    BadParameter { name: &'static str, value: f64 },
    #[error("rate `{name}` is nonzero ({value}) at {point:?} where a dependency is zero")]
    NonvanishingAtZero {
        name: String,
        point: Vec<f64>,
        value: f64,
    },
    #[error("rate `{name}` decreases along argument {arg} at {point:?} (slope {slope})")]
    NotMonotone {
        name: String,
        arg: usize,
        point: Vec<f64>,
        slope: f64,
    },
    #[error("rate `{name}` is not finite and nonnegative at {point:?}")]
    NotFinite { name: String, point: Vec<f64> },
    #[error("rate law takes {expected} arguments, got {got}")]
    Arity { expected: usize, got: usize },
}

type RateClosure = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A user-supplied rate. The closure receives the values of the declared
/// dependencies in order.
#[derive(Clone)]
pub struct CustomRate {
    name: String,
    arity: usize,
    f: Arc<RateClosure>,
}

impl CustomRate {
    /// Screens the closure on seeded random points in `[0, scale]^arity`
    /// before accepting it.
    pub fn new<F>(name: impl Into<String>, arity: usize, scale: f64, f: F) -> Result<Self, RateError>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let rate = CustomRate {
            name: name.into(),
            arity,
            f: Arc::new(f),
        };
        validate_law(&RateLaw::Custom(rate.clone()), scale, 200, 0x5eed)?;
        Ok(rate)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.arity
    }
}

impl fmt::Debug for CustomRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomRate")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .finish_non_exhaustive()
    }
}

impl PartialEq for CustomRate {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.arity == other.arity && Arc::ptr_eq(&self.f, &other.f)
    }
}

/// Rate of a compartmental transition `N_i + S_j -> N_j + S_i` as a
/// function of the donor's particles and the recipient's free space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateSpec {
    /// `k * n * s`
    MassAction { k: f64 },
    /// `k * n/(a+n) * s/(b+s)`
    Saturating { k: f64, a: f64, b: f64 },
    #[serde(skip)]
    Custom(CustomRate),
}

impl RateSpec {
    pub fn validate(&self) -> Result<(), RateError> {
        match self {
            RateSpec::MassAction { k } => positive("k", *k),
            RateSpec::Saturating { k, a, b } => {
                positive("k", *k)?;
                positive("a", *a)?;
                positive("b", *b)
            }
            RateSpec::Custom(c) if c.arity != 2 => Err(RateError::Arity {
                expected: 2,
                got: c.arity,
            }),
            RateSpec::Custom(_) => Ok(()),
        }
    }

    /// The two-argument law `(particles, space) -> rate`.
    pub fn law(&self) -> RateLaw {
        match self {
            RateSpec::MassAction { k } => RateLaw::MassAction {
                k: *k,
                orders: vec![1, 1],
            },
            RateSpec::Saturating { k, a, b } => RateLaw::Saturating {
                k: *k,
                half_saturation: vec![*a, *b],
            },
            RateSpec::Custom(c) => RateLaw::Custom(c.clone()),
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), RateError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(RateError::BadParameter { name, value })
    }
}

/// An n-ary monotone rate law evaluated on the values of its dependencies.
#[derive(Debug, Clone, PartialEq)]
pub enum RateLaw {
    /// `k * prod x_j^{orders_j}`
    MassAction { k: f64, orders: Vec<u32> },
    /// `k * prod x_j / (a_j + x_j)`
    Saturating { k: f64, half_saturation: Vec<f64> },
    Custom(CustomRate),
}

impl RateLaw {
    pub fn arity(&self) -> usize {
        match self {
            RateLaw::MassAction { orders, .. } => orders.len(),
            RateLaw::Saturating { half_saturation, .. } => half_saturation.len(),
            RateLaw::Custom(c) => c.arity,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RateLaw::MassAction { .. } => "mass_action",
            RateLaw::Saturating { .. } => "saturating",
            RateLaw::Custom(_) => "custom",
        }
    }

    pub fn eval(&self, args: &[f64]) -> f64 {
        debug_assert_eq!(args.len(), self.arity());
        match self {
            RateLaw::MassAction { k, orders } => args
                .iter()
                .zip(orders)
                .fold(*k, |acc, (&x, &p)| acc * powu(x, p)),
            RateLaw::Saturating { k, half_saturation } => args
                .iter()
                .zip(half_saturation)
                .fold(*k, |acc, (&x, &a)| acc * x / (a + x)),
            RateLaw::Custom(c) => (c.f)(args),
        }
    }

    /// Partial derivative with respect to argument `j`.
    pub fn partial(&self, args: &[f64], j: usize) -> f64 {
        match self {
            RateLaw::MassAction { k, orders } => {
                if orders[j] == 0 {
                    return 0.0;
                }
                let mut acc = *k * f64::from(orders[j]) * powu(args[j], orders[j] - 1);
                for (i, (&x, &p)) in args.iter().zip(orders).enumerate() {
                    if i != j {
                        acc *= powu(x, p);
                    }
                }
                acc
            }
            RateLaw::Saturating { k, half_saturation } => {
                let mut acc = *k;
                for (i, (&x, &a)) in args.iter().zip(half_saturation).enumerate() {
                    acc *= if i == j { a / ((a + x) * (a + x)) } else { x / (a + x) };
                }
                acc
            }
            RateLaw::Custom(c) => {
                // one-sided at the orthant boundary
                let h = 1e-6 * (1.0 + args[j].abs());
                let mut hi = args.to_vec();
                let mut lo = args.to_vec();
                hi[j] += h;
                lo[j] = (lo[j] - h).max(0.0);
                ((c.f)(&hi) - (c.f)(&lo)) / (hi[j] - lo[j])
            }
        }
    }

    pub fn gradient(&self, args: &[f64]) -> Vec<f64> {
        (0..args.len()).map(|j| self.partial(args, j)).collect()
    }
}

fn powu(x: f64, p: u32) -> f64 {
    match p {
        0 => 1.0,
        1 => x,
        2 => x * x,
        _ => x.powi(p as i32),
    }
}

/// Numerically screen a law for finiteness, vanishing on the coordinate
/// hyperplanes, and monotonicity, on `samples` seeded random points in
/// `[0, scale]^arity`.
pub fn validate_law(law: &RateLaw, scale: f64, samples: usize, seed: u64) -> Result<(), RateError> {
    let name = match law {
        RateLaw::Custom(c) => c.name.clone(),
        other => other.kind().to_string(),
    };
    let arity = law.arity();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let point: Vec<f64> = (0..arity).map(|_| rng.gen_range(0.0..scale)).collect();
        let v = law.eval(&point);
        if !(v.is_finite() && v >= 0.0) {
            return Err(RateError::NotFinite { name, point });
        }
        for j in 0..arity {
            let mut zeroed = point.clone();
            zeroed[j] = 0.0;
            let z = law.eval(&zeroed);
            if z != 0.0 {
                return Err(RateError::NonvanishingAtZero {
                    name,
                    point: zeroed,
                    value: z,
                });
            }
            let h = 1e-6 * scale;
            let mut hi = point.clone();
            let mut lo = point.clone();
            hi[j] += h;
            lo[j] = (lo[j] - h).max(0.0);
            let slope = (law.eval(&hi) - law.eval(&lo)) / (hi[j] - lo[j]);
            if !slope.is_finite() || slope < -1e-8 {
                return Err(RateError::NotMonotone {
                    name,
                    arg: j,
                    point,
                    slope,
                });
            }
        }
    }
    Ok(())
}
