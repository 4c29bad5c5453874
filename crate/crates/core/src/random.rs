//! Seeded generators for graphs and states, shared by the verification
//! campaigns, the tests and the benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::graph::{CompartmentSpec, CompartmentalGraph, EdgeSpec, GraphSpec};
use crate::rate::RateSpec;

/// RNG for trial `index` of a campaign seeded with `seed`; independent of
/// the order in which trials run.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateFamily {
    MassAction,
    Saturating,
    Mixed,
}

/// Capacities and rate constants in `[0.5, 2]`.
pub fn random_rate<R: Rng>(rng: &mut R, family: RateFamily) -> RateSpec {
    let saturating = match family {
        RateFamily::MassAction => false,
        RateFamily::Saturating => true,
        RateFamily::Mixed => rng.gen_bool(0.5),
    };
    let k = rng.gen_range(0.5..=2.0);
    if saturating {
        RateSpec::Saturating {
            k,
            a: rng.gen_range(0.2..=2.0),
            b: rng.gen_range(0.2..=2.0),
        }
    } else {
        RateSpec::MassAction { k }
    }
}

/// Each ordered pair `(i, j)`, `i != j`, is an edge with probability `p`.
pub fn random_graph<R: Rng>(rng: &mut R, m: usize, p: f64, family: RateFamily) -> CompartmentalGraph {
    let compartments = (1..=m)
        .map(|i| CompartmentSpec {
            name: format!("q{i}"),
            capacity: rng.gen_range(0.5..=2.0),
        })
        .collect();
    let mut edges = Vec::new();
    for from in 1..=m {
        for to in 1..=m {
            if from != to && rng.gen_bool(p) {
                edges.push(EdgeSpec {
                    from,
                    to,
                    rate: random_rate(rng, family),
                });
            }
        }
    }
    CompartmentalGraph::build(&GraphSpec { compartments, edges }).expect("generated graph is valid")
}

/// A random Hamiltonian cycle plus extra edges with probability `p`, so
/// strong connectivity holds by construction.
pub fn random_strongly_connected<R: Rng>(rng: &mut R, m: usize, p: f64, family: RateFamily) -> CompartmentalGraph {
    let compartments = (1..=m)
        .map(|i| CompartmentSpec {
            name: format!("q{i}"),
            capacity: rng.gen_range(0.5..=2.0),
        })
        .collect();
    let mut order: Vec<usize> = (1..=m).collect();
    order.shuffle(rng);
    let mut present = vec![vec![false; m + 1]; m + 1];
    if m > 1 {
        for w in 0..m {
            present[order[w]][order[(w + 1) % m]] = true;
        }
    }
    let mut edges = Vec::new();
    for from in 1..=m {
        for to in 1..=m {
            if from != to && (present[from][to] || rng.gen_bool(p)) {
                edges.push(EdgeSpec {
                    from,
                    to,
                    rate: random_rate(rng, family),
                });
            }
        }
    }
    let g = CompartmentalGraph::build(&GraphSpec { compartments, edges }).expect("generated graph is valid");
    debug_assert!(g.is_strongly_connected());
    g
}

/// A point of the box uniformly at random.
pub fn random_state<R: Rng>(rng: &mut R, capacities: &[f64]) -> Vec<f64> {
    capacities.iter().map(|&c| rng.gen_range(0.0..=c)).collect()
}

/// A random level `s` in `[lo, hi] * I(c)`.
pub fn random_level<R: Rng>(rng: &mut R, capacities: &[f64], lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..=hi) * capacities.iter().sum::<f64>()
}

/// `n_i = min(c_i, lambda w_i)` with `lambda` chosen so `sum n_i = s`.
/// Coordinates with `w_i = 0` stay at zero.
pub fn water_fill(capacities: &[f64], weights: &[f64], s: f64) -> Option<Vec<f64>> {
    let reachable: f64 = capacities
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(c, _)| c)
        .sum();
    if s < 0.0 || s > reachable * (1.0 + 1e-12) {
        return None;
    }
    let fill = |lambda: f64| -> f64 {
        capacities
            .iter()
            .zip(weights)
            .map(|(&c, &w)| c.min(lambda * w))
            .sum()
    };
    let mut hi = 1.0;
    while fill(hi) < s && hi < 1e300 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fill(mid) < s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut n: Vec<f64> = capacities
        .iter()
        .zip(weights)
        .map(|(&c, &w)| c.min(hi * w))
        .collect();
    // put the bisection remainder on one unsaturated coordinate
    let excess = n.iter().sum::<f64>() - s;
    if let Some(i) = (0..n.len())
        .filter(|&i| weights[i] > 0.0)
        .max_by(|&a, &b| (n[a].min(capacities[a] - n[a])).total_cmp(&n[b].min(capacities[b] - n[b])))
    {
        n[i] = (n[i] - excess).clamp(0.0, capacities[i]);
    }
    Some(n)
}

/// A point of `L_s` strictly inside the box, for `0 < s < I(c)`.
pub fn random_interior_in_level<R: Rng>(rng: &mut R, capacities: &[f64], s: f64) -> Vec<f64> {
    let total: f64 = capacities.iter().sum();
    let weights: Vec<f64> = capacities.iter().map(|&c| c * rng.gen_range(0.01..=1.0)).collect();
    let corner = water_fill(capacities, &weights, s).expect("level within range");
    let theta = rng.gen_range(0.05..=0.95);
    capacities
        .iter()
        .zip(&corner)
        .map(|(&c, &q)| (1.0 - theta) * s * c / total + theta * q)
        .collect()
}

/// A point of `L_s` with at least one coordinate at `0` or at `c_i`, or
/// `None` when the level set has no such point other than `0` and `c`.
pub fn random_boundary_in_level<R: Rng>(rng: &mut R, capacities: &[f64], s: f64) -> Option<Vec<f64>> {
    let m = capacities.len();
    let total: f64 = capacities.iter().sum();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    for i in order {
        let mut weights: Vec<f64> = capacities.iter().map(|&c| c * rng.gen_range(0.01..=1.0)).collect();
        let empty_ok = s < total - capacities[i];
        let full_ok = s > capacities[i];
        let empty = match (empty_ok, full_ok) {
            (true, true) => rng.gen_bool(0.5),
            (true, false) => true,
            (false, true) => false,
            (false, false) => continue,
        };
        if empty {
            weights[i] = 0.0;
            if let Some(n) = water_fill(capacities, &weights, s) {
                return Some(n);
            }
        } else {
            weights[i] = 0.0;
            let rest = water_fill(capacities, &weights, s - capacities[i]);
            if let Some(mut n) = rest {
                n[i] = capacities[i];
                return Some(n);
            }
        }
    }
    None
}

/// `a <= b` componentwise in the box, differing in at least one coordinate.
pub fn random_ordered_pair<R: Rng>(rng: &mut R, capacities: &[f64]) -> (Vec<f64>, Vec<f64>) {
    loop {
        let a = random_state(rng, capacities);
        let b: Vec<f64> = a
            .iter()
            .zip(capacities)
            .map(|(&x, &c)| if rng.gen_bool(0.5) { x + rng.gen_range(0.0..=1.0) * (c - x) } else { x })
            .collect();
        if a != b {
            return (a, b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_of_order() {
        let a: f64 = trial_rng(7, 3).gen();
        let _: f64 = trial_rng(7, 2).gen();
        let b: f64 = trial_rng(7, 3).gen();
        assert_eq!(a, b);
        assert_ne!(a, trial_rng(7, 4).gen::<f64>());
    }

    #[test]
    fn generated_graphs_are_strongly_connected() {
        let mut rng = trial_rng(1, 0);
        for m in 1..=8 {
            for _ in 0..20 {
                assert!(random_strongly_connected(&mut rng, m, 0.2, RateFamily::Mixed).is_strongly_connected());
            }
        }
    }

    #[test]
    fn level_samplers_hit_the_level() {
        let mut rng = trial_rng(2, 0);
        let c = [0.5, 2.0, 1.0, 0.7];
        for _ in 0..200 {
            let s = random_level(&mut rng, &c, 0.01, 0.99);
            let n = random_interior_in_level(&mut rng, &c, s);
            assert!((n.iter().sum::<f64>() - s).abs() < 1e-12);
            assert!(n.iter().zip(&c).all(|(&x, &ci)| x > 0.0 && x < ci));
            let b = random_boundary_in_level(&mut rng, &c, s).unwrap();
            assert!((b.iter().sum::<f64>() - s).abs() < 1e-12);
            assert!(b.iter().zip(&c).all(|(&x, &ci)| (0.0..=ci).contains(&x)));
            assert!(b.iter().zip(&c).any(|(&x, &ci)| x == 0.0 || x == ci));
        }
    }

    #[test]
    fn single_compartment_has_no_boundary_point() {
        let mut rng = trial_rng(3, 0);
        assert!(random_boundary_in_level(&mut rng, &[1.0], 0.5).is_none());
    }

    #[test]
    fn ordered_pairs_are_ordered() {
        let mut rng = trial_rng(4, 0);
        let c = [1.0, 1.5, 0.5];
        for _ in 0..100 {
            let (a, b) = random_ordered_pair(&mut rng, &c);
            assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
            assert!(b.iter().zip(&c).all(|(&y, &ci)| y <= ci));
        }
    }
}
