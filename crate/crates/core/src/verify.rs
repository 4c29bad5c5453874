//! Verification campaigns over the reduced dynamics of one graph.
//!
//! Every trial draws from its own RNG stream, so reports are identical
//! whether trials run in parallel or not.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{
    boundary_floor, matrix_measure_l1, total, DynamicsError, EquilibriumOptions, PairOptions,
    ReducedSystem, SimOptions,
};
use crate::graph::CompartmentalGraph;
use crate::random::{
    random_boundary_in_level, random_interior_in_level, random_level, random_ordered_pair,
    random_state, trial_rng,
};

pub const TOL_CONSERVATION: f64 = 1e-9;
pub const TOL_JACOBIAN_FD: f64 = 1e-5;
pub const TOL_COLUMN_SUM: f64 = 1e-10;
pub const TOL_MEASURE: f64 = 1e-9;
pub const TOL_EQ_AGREEMENT: f64 = 1e-7;
pub const TOL_PAIR: f64 = 1e-9;
pub const FD_STEP: f64 = 1e-6;
pub const NEAR_BOUNDARY: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Pairs per pair check, points per Jacobian check, starts per
    /// persistence check.
    pub trials: usize,
    pub levels: usize,
    pub starts_per_level: usize,
    pub t_end: f64,
    pub sim: SimOptions,
    pub equilibrium: EquilibriumOptions,
    pub pair: PairOptions,
    /// Points per axis for the boundary scan; chosen from `m` when `None`.
    pub boundary_grid: Option<usize>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            trials: 20,
            levels: 5,
            starts_per_level: 10,
            t_end: 50.0,
            sim: SimOptions::default(),
            equilibrium: EquilibriumOptions::default(),
            pair: PairOptions::default(),
            boundary_grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// The extreme value the tolerance is compared against.
    pub measured: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub all_passed: bool,
    pub seed: u64,
    pub compartments: usize,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersistenceEvidence {
    pub trials: usize,
    /// Smallest distance to the boundary over the tail window of every run.
    pub interior_floor: f64,
    /// Smallest tail floor over runs started `1e-6` from an empty face.
    pub near_empty_floor: f64,
    /// Same for runs started `1e-6` from a full face.
    pub near_full_floor: f64,
    pub tail_window: f64,
}

// stream ids keep the checks' random draws apart
const STREAM_JACOBIAN: u64 = 1 << 32;
const STREAM_EQUILIBRIUM: u64 = 2 << 32;
const STREAM_ORDERED: u64 = 3 << 32;
const STREAM_UNORDERED: u64 = 4 << 32;
const STREAM_PERSIST: u64 = 5 << 32;
const STREAM_REPULSION: u64 = 6 << 32;
const STREAM_CONVERGENCE: u64 = 7 << 32;

fn finite(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        0.0
    }
}

fn first_error<T>(results: &[Result<T, DynamicsError>]) -> Option<String> {
    results.iter().find_map(|r| r.as_ref().err().map(ToString::to_string))
}

/// Grid points per axis for the boundary scan, keeping `grid^m` moderate.
pub fn default_boundary_grid(m: usize) -> usize {
    let budget = 200_000f64;
    (budget.powf(1.0 / m.max(1) as f64).floor() as usize).clamp(2, 11)
}

/// A state with each coordinate in `[margin c_i, (1 - margin) c_i]`.
fn interior_point<R: Rng>(rng: &mut R, capacities: &[f64], margin: f64) -> Vec<f64> {
    capacities
        .iter()
        .map(|&c| c * rng.gen_range(margin..=1.0 - margin))
        .collect()
}

/// Largest entrywise relative deviation between the analytic Jacobian and
/// central differences; entries that vanish identically are compared
/// absolutely.
pub fn jacobian_fd_error(sys: &ReducedSystem, n: &[f64], h: f64) -> Result<f64, DynamicsError> {
    let j = sys.jacobian(n)?;
    let fd = finite_difference_jacobian(sys, n, h)?;
    Ok(j.iter()
        .zip(fd.iter())
        .map(|(&a, &b)| if a == 0.0 { b.abs() } else { (a - b).abs() / a.abs() })
        .fold(0.0, f64::max))
}

pub fn finite_difference_jacobian(sys: &ReducedSystem, n: &[f64], h: f64) -> Result<DMatrix<f64>, DynamicsError> {
    let m = n.len();
    let mut fd = DMatrix::zeros(m, m);
    for k in 0..m {
        let mut hi = n.to_vec();
        let mut lo = n.to_vec();
        hi[k] += h;
        lo[k] -= h;
        let fh = sys.rhs(&hi)?;
        let fl = sys.rhs(&lo)?;
        for i in 0..m {
            fd[(i, k)] = (fh[i] - fl[i]) / (2.0 * h);
        }
    }
    Ok(fd)
}

/// Tail-window floors from random interior, near-empty and near-full starts.
pub fn verify_persistence_numerically(
    sys: &ReducedSystem,
    trials: usize,
    seed: u64,
    t_end: f64,
    opts: &SimOptions,
) -> Result<PersistenceEvidence, DynamicsError> {
    sys.require_strongly_connected()?;
    let c = sys.capacities().to_vec();
    let tail_window = 0.1 * t_end;
    let sim = SimOptions {
        sample_dt: Some((t_end / 1000.0).max(1e-3)),
        ..*opts
    };
    let tail_floor = |n0: &[f64]| -> Result<f64, DynamicsError> {
        let traj = sys.simulate(n0, t_end, &sim)?;
        Ok(traj
            .times
            .iter()
            .zip(&traj.states)
            .filter(|(&t, _)| t >= t_end - tail_window)
            .map(|(_, n)| boundary_floor(n, &c))
            .fold(f64::INFINITY, f64::min))
    };
    let runs: Vec<Result<[f64; 3], DynamicsError>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(seed, STREAM_PERSIST + k as u64);
            let interior = random_state(&mut rng, &c);
            let i = rng.gen_range(0..c.len());
            let mut near_empty = interior_point(&mut rng, &c, 0.2);
            near_empty[i] = NEAR_BOUNDARY;
            let mut near_full = interior_point(&mut rng, &c, 0.2);
            near_full[i] = c[i] - NEAR_BOUNDARY;
            Ok([tail_floor(&interior)?, tail_floor(&near_empty)?, tail_floor(&near_full)?])
        })
        .collect();
    let mut floors = [f64::INFINITY; 3];
    for r in runs {
        let r = r?;
        for k in 0..3 {
            floors[k] = floors[k].min(r[k]);
        }
    }
    Ok(PersistenceEvidence {
        trials,
        interior_floor: floors[0],
        near_empty_floor: floors[1],
        near_full_floor: floors[2],
        tail_window,
    })
}

/// Run every check on `g`. Graphs that are not strongly connected are
/// refused.
pub fn run_suite(g: &CompartmentalGraph, cfg: &VerifyConfig) -> Result<VerificationReport, DynamicsError> {
    let sys = ReducedSystem::new(g);
    sys.require_strongly_connected()?;
    if cfg.trials == 0 || cfg.levels == 0 || cfg.starts_per_level == 0 {
        return Err(DynamicsError::InvalidArgument("trial counts must be positive".into()));
    }
    if !(cfg.t_end.is_finite() && cfg.t_end > 0.0) {
        return Err(DynamicsError::InvalidArgument(format!("t_end must be positive, got {}", cfg.t_end)));
    }
    let c = sys.capacities().to_vec();
    let mut checks = Vec::new();

    checks.push(conservation_check(&sys, cfg));
    checks.extend(jacobian_checks(&sys, cfg));
    checks.push(equilibrium_check(&sys, cfg));

    let ordered: Vec<_> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(cfg.seed, STREAM_ORDERED + k as u64);
            let (a, b) = random_ordered_pair(&mut rng, &c);
            sys.verify_monotonicity(&a, &b, cfg.t_end, &cfg.pair)
        })
        .collect();
    let min_gap = ordered.iter().flatten().map(|r| r.min_gap).fold(f64::INFINITY, f64::min);
    let min_strict = ordered
        .iter()
        .flatten()
        .filter_map(|r| r.min_strict_gap)
        .fold(f64::INFINITY, f64::min);
    let violations = ordered.iter().filter(|r| r.is_err()).count();
    checks.push(Check {
        name: "monotonicity".into(),
        passed: violations == 0,
        measured: finite(min_gap),
        tolerance: cfg.pair.tol,
        samples: ordered.len(),
        detail: first_error(&ordered).unwrap_or_else(|| {
            format!(
                "{violations} violations; smallest strict gap for t >= {} is {:e}",
                cfg.pair.t_strict,
                finite(min_strict)
            )
        }),
    });

    let unordered: Vec<_> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(cfg.seed, STREAM_UNORDERED + k as u64);
            let a = random_state(&mut rng, &c);
            let b = random_state(&mut rng, &c);
            sys.verify_contraction(&a, &b, cfg.t_end, &cfg.pair)
        })
        .collect();
    let expansions = unordered.iter().filter(|r| r.is_err()).count();
    let max_increase = unordered.iter().flatten().map(|r| r.max_increase).fold(0.0, f64::max);
    let max_measure = unordered.iter().flatten().map(|r| r.max_abs_measure).fold(0.0, f64::max);
    checks.push(Check {
        name: "l1_contraction".into(),
        passed: expansions == 0,
        measured: max_increase,
        tolerance: cfg.pair.tol,
        samples: unordered.len(),
        detail: first_error(&unordered).unwrap_or_else(|| format!("{expansions} expansions")),
    });
    checks.push(Check {
        name: "matrix_measure_along_trajectories".into(),
        passed: expansions == 0 && max_measure <= cfg.pair.measure_tol,
        measured: max_measure,
        tolerance: cfg.pair.measure_tol,
        samples: unordered.len(),
        detail: "max |mu_1(J)| at sampled trajectory states".into(),
    });

    checks.push(convergence_check(&sys, cfg));

    let grid = cfg.boundary_grid.unwrap_or_else(|| default_boundary_grid(c.len()));
    checks.push(match sys.boundary_equilibria_scan(grid) {
        Ok(r) => Check {
            name: "boundary_equilibria".into(),
            passed: r.passed,
            measured: finite(r.min_nonzero_residual),
            tolerance: r.zero_tolerance,
            samples: r.points_scanned,
            detail: format!(
                "grid {grid}; zero field at empty: {}, at full: {}, elsewhere on the boundary: {}",
                r.zero_at_empty,
                r.zero_at_full,
                r.nontrivial_zeros.len()
            ),
        },
        Err(e) => failed("boundary_equilibria", 0.0, e),
    });

    checks.push(repulsion_check(&sys, cfg));

    checks.push(
        match verify_persistence_numerically(&sys, cfg.trials, cfg.seed, cfg.t_end, &cfg.sim) {
            Ok(ev) => {
                let floor = ev.interior_floor.min(ev.near_empty_floor).min(ev.near_full_floor);
                Check {
                    name: "persistence_evidence".into(),
                    passed: floor > 0.0 && ev.near_empty_floor > NEAR_BOUNDARY && ev.near_full_floor > NEAR_BOUNDARY,
                    measured: floor,
                    tolerance: 0.0,
                    samples: 3 * ev.trials,
                    detail: format!(
                        "empirical tail floors over the last {} time units: interior {:e}, near-empty {:e}, near-full {:e}",
                        ev.tail_window, ev.interior_floor, ev.near_empty_floor, ev.near_full_floor
                    ),
                }
            }
            Err(e) => failed("persistence_evidence", 0.0, e),
        },
    );

    Ok(VerificationReport {
        all_passed: checks.iter().all(|c| c.passed),
        seed: cfg.seed,
        compartments: c.len(),
        checks,
    })
}

fn failed(name: &str, tolerance: f64, e: DynamicsError) -> Check {
    Check {
        name: name.into(),
        passed: false,
        measured: 0.0,
        tolerance,
        samples: 0,
        detail: e.to_string(),
    }
}

fn conservation_check(sys: &ReducedSystem, cfg: &VerifyConfig) -> Check {
    let tol = TOL_CONSERVATION * sys.total_capacity();
    let c = sys.capacities();
    let runs: Vec<Result<f64, DynamicsError>> = (0..cfg.trials.min(10))
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(cfg.seed, STREAM_PERSIST + (1 << 31) + k as u64);
            let n0 = random_state(&mut rng, c);
            Ok(sys.simulate(&n0, cfg.t_end, &cfg.sim)?.stats.max_conservation_drift)
        })
        .collect();
    let drift = runs.iter().flatten().cloned().fold(0.0, f64::max);
    Check {
        name: "conservation".into(),
        passed: runs.iter().all(|r| r.is_ok()) && drift <= tol,
        measured: drift,
        tolerance: tol,
        samples: runs.len(),
        detail: first_error(&runs).unwrap_or_else(|| format!("max |I(n(t)) - I(n(0))| over t in [0, {}]", cfg.t_end)),
    }
}

fn jacobian_checks(sys: &ReducedSystem, cfg: &VerifyConfig) -> Vec<Check> {
    let c = sys.capacities();
    let samples: Vec<Result<[f64; 4], DynamicsError>> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(cfg.seed, STREAM_JACOBIAN + k as u64);
            let n = interior_point(&mut rng, c, 1e-3);
            let j = sys.jacobian(&n)?;
            let scale = j.amax().max(1e-300);
            let col = (0..j.ncols()).map(|k| j.column(k).sum().abs()).fold(0.0, f64::max) / scale;
            let mut sign: f64 = 0.0;
            for r in 0..j.nrows() {
                for k in 0..j.ncols() {
                    let v = j[(r, k)];
                    sign = sign.max(if r == k { v } else { -v });
                }
            }
            Ok([jacobian_fd_error(sys, &n, FD_STEP)?, col, sign, matrix_measure_l1(&j).abs()])
        })
        .collect();
    let err = first_error(&samples);
    let max = |k: usize| samples.iter().flatten().map(|s| s[k]).fold(0.0, f64::max);
    let ok = err.is_none();
    let mk = |name: &str, measured: f64, tolerance: f64, detail: &str| Check {
        name: name.into(),
        passed: ok && measured <= tolerance,
        measured,
        tolerance,
        samples: samples.len(),
        detail: err.clone().unwrap_or_else(|| detail.into()),
    };
    vec![
        mk(
            "jacobian_finite_differences",
            max(0),
            TOL_JACOBIAN_FD,
            "max_ik |J - J_fd|_ik / |J_ik|, central differences with step 1e-6",
        ),
        mk(
            "jacobian_column_sums",
            max(1),
            TOL_COLUMN_SUM,
            "max |sum_i J_ik| / max|J|",
        ),
        mk(
            "jacobian_sign_pattern",
            max(2),
            0.0,
            "largest positive diagonal or negative off-diagonal entry",
        ),
        mk("matrix_measure", max(3), TOL_MEASURE, "max |mu_1(J)| at random interior points"),
    ]
}

fn equilibrium_check(sys: &ReducedSystem, cfg: &VerifyConfig) -> Check {
    let c = sys.capacities();
    let per_level: Vec<Result<(f64, f64), DynamicsError>> = (0..cfg.levels)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(cfg.seed, STREAM_EQUILIBRIUM + k as u64);
            let s = random_level(&mut rng, c, 0.02, 0.98);
            let reference = sys.find_equilibrium(s, &cfg.equilibrium)?;
            let mut spread: f64 = 0.0;
            let mut residual = reference.residual;
            for j in 0..cfg.starts_per_level {
                // every third start on the boundary of the level set
                let start = if j % 3 == 0 {
                    random_boundary_in_level(&mut rng, c, s)
                } else {
                    None
                }
                .unwrap_or_else(|| random_interior_in_level(&mut rng, c, s));
                let e = sys.equilibrium_from(&start, &cfg.equilibrium)?;
                residual = residual.max(e.residual);
                let gap = e
                    .point
                    .iter()
                    .zip(&reference.point)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                spread = spread.max(gap);
            }
            Ok((spread, residual))
        })
        .collect();
    let spread = per_level.iter().flatten().map(|r| r.0).fold(0.0, f64::max);
    let residual = per_level.iter().flatten().map(|r| r.1).fold(0.0, f64::max);
    Check {
        name: "equilibrium_uniqueness".into(),
        passed: per_level.iter().all(|r| r.is_ok()) && spread <= TOL_EQ_AGREEMENT,
        measured: spread,
        tolerance: TOL_EQ_AGREEMENT,
        samples: cfg.levels * (cfg.starts_per_level + 1),
        detail: first_error(&per_level).unwrap_or_else(|| {
            format!(
                "{} levels x {} starts; max residual {residual:e}",
                cfg.levels, cfg.starts_per_level
            )
        }),
    }
}

fn convergence_check(sys: &ReducedSystem, cfg: &VerifyConfig) -> Check {
    let c = sys.capacities();
    let runs: Vec<Result<f64, DynamicsError>> = (0..cfg.levels)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(cfg.seed, STREAM_CONVERGENCE + k as u64);
            let s = random_level(&mut rng, c, 0.02, 0.98);
            let a = random_interior_in_level(&mut rng, c, s);
            let e = sys.find_equilibrium(total(&a), &cfg.equilibrium)?;
            Ok(sys.verify_contraction(&a, &e.point, cfg.t_end, &cfg.pair)?.max_increase)
        })
        .collect();
    Check {
        name: "monotone_convergence".into(),
        passed: runs.iter().all(|r| r.is_ok()),
        measured: runs.iter().flatten().cloned().fold(0.0, f64::max),
        tolerance: cfg.pair.tol,
        samples: runs.len(),
        detail: first_error(&runs).unwrap_or_else(|| "largest increase of |rho(t,a) - e|_1 between samples".into()),
    }
}

fn repulsion_check(sys: &ReducedSystem, cfg: &VerifyConfig) -> Check {
    let c = sys.capacities();
    let layer = 1e-2 * c.iter().cloned().fold(f64::INFINITY, f64::min);
    let runs: Vec<Result<(bool, f64), DynamicsError>> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(cfg.seed, STREAM_REPULSION + k as u64);
            let mut n0 = interior_point(&mut rng, c, 0.2);
            let i = rng.gen_range(0..c.len());
            n0[i] = if k % 2 == 0 { NEAR_BOUNDARY } else { c[i] - NEAR_BOUNDARY };
            let r = sys.boundary_repulsion(&n0, 1.0, 0.01, layer, &cfg.sim)?;
            Ok((r.increasing_in_layer, r.min_floor_after_start))
        })
        .collect();
    let failures = runs.iter().flatten().filter(|r| !r.0 || r.1 <= NEAR_BOUNDARY).count();
    Check {
        name: "boundary_repulsion".into(),
        passed: runs.iter().all(|r| r.is_ok()) && failures == 0,
        measured: runs.iter().flatten().map(|r| r.1).fold(f64::INFINITY, f64::min),
        tolerance: NEAR_BOUNDARY,
        samples: runs.len(),
        detail: first_error(&runs).unwrap_or_else(|| {
            format!("{failures} starts whose floor failed to rise strictly inside the layer {layer:e} over t in [0, 1]")
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphSpec;

    #[test]
    fn triangle_suite_passes_and_is_deterministic() {
        let g = CompartmentalGraph::build(&GraphSpec::uniform(3, &[(1, 2), (2, 3), (3, 1)])).unwrap();
        let cfg = VerifyConfig {
            trials: 4,
            levels: 2,
            starts_per_level: 3,
            t_end: 10.0,
            ..VerifyConfig::default()
        };
        let a = run_suite(&g, &cfg).unwrap();
        for check in &a.checks {
            assert!(check.passed, "{check:?}");
        }
        let b = run_suite(&g, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn suite_refuses_path_graph() {
        let g = CompartmentalGraph::build(&GraphSpec::uniform(2, &[(1, 2)])).unwrap();
        assert!(matches!(
            run_suite(&g, &VerifyConfig::default()),
            Err(DynamicsError::NotStronglyConnected { .. })
        ));
    }

    #[test]
    fn boundary_grid_budget() {
        assert_eq!(default_boundary_grid(3), 11);
        assert_eq!(default_boundary_grid(6), 7);
        assert_eq!(default_boundary_grid(20), 2);
    }
}
