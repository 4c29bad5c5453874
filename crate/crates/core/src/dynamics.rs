//! Reduced dynamics on the capacity box `C = [0,c_1] x ... x [0,c_m]`.
//!
//! With `s_i = c_i - n_i` eliminated, each edge `i -> j` moves particles at
//! rate `K_ij(n_i, c_j - n_j)`. The total `I(n) = sum n_i` is a first
//! integral, the Jacobian is compartmental (nonnegative off-diagonal, zero
//! column sums), and its l1 matrix measure is zero.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::crn::TOL_STATE;
use crate::graph::{CompartmentalGraph, DonorRecipientIndex};
use crate::integrate::{integrate, Flow, IntegrateError, IntegratorOptions, StepStats};
use crate::rate::RateLaw;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("state has {got} coordinates, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("coordinate {index} = {value} lies outside [0, {capacity}]")]
    StateOutOfBox {
        index: usize,
        value: f64,
        capacity: f64,
    },
    #[error("integrator left the capacity box at t = {t}: n{} = {value} (capacity {capacity}); tighten tolerances", index + 1)]
    BoxViolation {
        t: f64,
        index: usize,
        value: f64,
        capacity: f64,
    },
    #[error("step size underflow at t = {t} (h = {h})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("integrator step limit {limit} reached at t = {t}")]
    MaxStepsExceeded { t: f64, limit: usize },
    #[error("compartmental graph is not strongly connected ({components} strong components); this check assumes strong connectivity")]
    NotStronglyConnected { components: usize },
    #[error("level {level} outside [0, {max}]")]
    LevelOutOfRange { level: f64, max: f64 },
    #[error("equilibrium search did not converge: residual {residual:e} after t = {time}; {detail}")]
    NoConvergence {
        residual: f64,
        time: f64,
        detail: String,
    },
    #[error("order violated at t = {t}: coordinate n{} differs by {gap:e}", index + 1)]
    OrderViolation { t: f64, index: usize, gap: f64 },
    #[error("l1 expansion detected at t = {t}: {detail}")]
    ExpansionDetected { t: f64, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<IntegrateError<DynamicsError>> for DynamicsError {
    fn from(e: IntegrateError<DynamicsError>) -> Self {
        match e {
            IntegrateError::StepSizeUnderflow { t, h } => DynamicsError::StepSizeUnderflow { t, h },
            IntegrateError::MaxSteps { t, limit } => DynamicsError::MaxStepsExceeded { t, limit },
            IntegrateError::Observer(e) => e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Record only `t0 + k * dt` (and the final time) when set; every
    /// accepted step otherwise.
    pub sample_dt: Option<f64>,
    pub max_steps: usize,
    pub tol_state: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            sample_dt: None,
            max_steps: 5_000_000,
            tol_state: TOL_STATE,
        }
    }
}

impl SimOptions {
    fn integrator(&self) -> IntegratorOptions {
        IntegratorOptions {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_steps: self.max_steps,
            max_step: None,
            sample_dt: self.sample_dt,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TrajectoryStats {
    pub steps: usize,
    pub rejected_steps: usize,
    pub rhs_evals: usize,
    /// Largest `|I(n(t)) - I(n(0))|` over all accepted steps.
    pub max_conservation_drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: TrajectoryStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    /// `t,n1,...,nm,I`
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let m = self.states.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("n{i}")));
        header.push("I".into());
        w.write_record(&header)?;
        for (t, n) in self.times.iter().zip(&self.states) {
            let mut row = Vec::with_capacity(m + 2);
            row.push(t.to_string());
            row.extend(n.iter().map(f64::to_string));
            row.push(total(n).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumResult {
    pub level: f64,
    pub point: Vec<f64>,
    /// `max_i |rhs_i(point)|`
    pub residual: f64,
    pub tolerance: f64,
    pub integration_time: f64,
    pub integration_steps: usize,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumOptions {
    pub sim: SimOptions,
    /// Residual target; `None` means `1e-10 * (1 + max_i c_i)`.
    pub tol_eq: Option<f64>,
    pub max_time: f64,
    pub max_newton: usize,
    /// Integration hands over to Newton once the residual is below
    /// `handoff * tol_eq`; integrator noise keeps the residual from falling
    /// much below the absolute tolerance on its own.
    pub handoff: f64,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            sim: SimOptions::default(),
            tol_eq: None,
            max_time: 1e6,
            max_newton: 50,
            handoff: 1e4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOptions {
    pub sim: SimOptions,
    /// Shared sample spacing for both trajectories.
    pub sample_dt: f64,
    pub tol: f64,
    /// Strict order is asserted from this time on.
    pub t_strict: f64,
    pub strict_margin: f64,
    /// Bound on `|mu_1(J)|` at sampled states.
    pub measure_tol: f64,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            sim: SimOptions {
                abs_tol: 1e-12,
                rel_tol: 1e-11,
                ..SimOptions::default()
            },
            sample_dt: 0.05,
            tol: 1e-9,
            t_strict: 0.1,
            strict_margin: 1e-12,
            measure_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub samples: usize,
    /// Smallest `rho_i(t,b) - rho_i(t,a)` over all samples and coordinates.
    pub min_gap: f64,
    /// Smallest gap at `t >= t_strict` when strict order was required.
    pub min_strict_gap: Option<f64>,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub samples: usize,
    pub initial_distance: f64,
    pub max_distance: f64,
    pub final_distance: f64,
    /// Largest increase of the l1 distance between consecutive samples.
    pub max_increase: f64,
    pub max_abs_measure: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryScanReport {
    pub grid: usize,
    pub points_scanned: usize,
    pub zero_at_empty: bool,
    pub zero_at_full: bool,
    /// Boundary points other than `0` and `c` where the field vanished.
    pub nontrivial_zeros: Vec<Vec<f64>>,
    pub min_nonzero_residual: f64,
    pub zero_tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepulsionReport {
    pub times: Vec<f64>,
    /// `boundary_floor` at each sample.
    pub floors: Vec<f64>,
    /// Width of the boundary layer in which the floor must rise.
    pub layer: f64,
    /// First sample time with the floor at or above `layer`.
    pub exit_time: Option<f64>,
    /// The floor rose strictly between consecutive samples while inside the layer.
    pub increasing_in_layer: bool,
    /// Smallest floor over samples with `t > 0`.
    pub min_floor_after_start: f64,
}

#[derive(Debug, Clone)]
struct ReducedEdge {
    from: usize,
    to: usize,
    law: RateLaw,
}

/// The reduced system of a compartmental graph.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    capacities: Vec<f64>,
    edges: Vec<ReducedEdge>,
    index: DonorRecipientIndex,
    components: usize,
}

pub fn total(n: &[f64]) -> f64 {
    n.iter().sum()
}

/// `min_i min(n_i, c_i - n_i)`: distance to the boundary of the box.
pub fn boundary_floor(n: &[f64], capacities: &[f64]) -> f64 {
    n.iter()
        .zip(capacities)
        .map(|(&x, &c)| x.min(c - x))
        .fold(f64::INFINITY, f64::min)
}

/// `max_i [A_ii + sum_{j != i} |A_ji|]`, the measure induced by the l1 norm.
pub fn matrix_measure_l1(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|i| {
            a[(i, i)]
                + (0..a.nrows())
                    .filter(|&j| j != i)
                    .map(|j| a[(j, i)].abs())
                    .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

impl ReducedSystem {
    pub fn new(g: &CompartmentalGraph) -> Self {
        ReducedSystem {
            capacities: g.capacities().to_vec(),
            edges: g
                .edges()
                .iter()
                .map(|e| ReducedEdge {
                    from: e.from,
                    to: e.to,
                    law: e.rate.law(),
                })
                .collect(),
            index: g.donors_recipients(),
            components: g.strong_components().components.len(),
        }
    }

    pub fn m(&self) -> usize {
        self.capacities.len()
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn total_capacity(&self) -> f64 {
        total(&self.capacities)
    }

    pub fn donors_recipients(&self) -> &DonorRecipientIndex {
        &self.index
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.components == 1
    }

    pub fn require_strongly_connected(&self) -> Result<(), DynamicsError> {
        if self.is_strongly_connected() {
            Ok(())
        } else {
            Err(DynamicsError::NotStronglyConnected {
                components: self.components,
            })
        }
    }

    /// Default equilibrium residual target `1e-10 (1 + max c_i)`.
    pub fn default_tol_eq(&self) -> f64 {
        1e-10 * (1.0 + self.capacities.iter().cloned().fold(0.0, f64::max))
    }

    pub fn check_state(&self, n: &[f64], tol: f64) -> Result<(), DynamicsError> {
        if n.len() != self.m() {
            return Err(DynamicsError::Dimension {
                expected: self.m(),
                got: n.len(),
            });
        }
        for (index, (&value, &capacity)) in n.iter().zip(&self.capacities).enumerate() {
            if !(value >= -tol && value <= capacity + tol) {
                return Err(DynamicsError::StateOutOfBox {
                    index,
                    value,
                    capacity,
                });
            }
        }
        Ok(())
    }

    /// Field evaluated with rate arguments clamped at zero, so stage values
    /// a hair outside the box stay well defined.
    fn field(&self, n: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for e in &self.edges {
            let args = [n[e.from].max(0.0), (self.capacities[e.to] - n[e.to]).max(0.0)];
            let rate = e.law.eval(&args);
            out[e.from] -= rate;
            out[e.to] += rate;
        }
    }

    pub fn rhs(&self, n: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        self.check_state(n, TOL_STATE)?;
        let mut out = vec![0.0; self.m()];
        self.field(n, &mut out);
        Ok(out)
    }

    pub fn jacobian(&self, n: &[f64]) -> Result<DMatrix<f64>, DynamicsError> {
        self.check_state(n, TOL_STATE)?;
        let m = self.m();
        let mut j = DMatrix::zeros(m, m);
        for e in &self.edges {
            let args = [n[e.from].max(0.0), (self.capacities[e.to] - n[e.to]).max(0.0)];
            let d_particles = e.law.partial(&args, 0);
            // d/dn_to of K(n_from, c_to - n_to)
            let d_space = -e.law.partial(&args, 1);
            j[(e.from, e.from)] -= d_particles;
            j[(e.to, e.from)] += d_particles;
            j[(e.from, e.to)] -= d_space;
            j[(e.to, e.to)] += d_space;
        }
        Ok(j)
    }

    pub fn simulate(&self, n0: &[f64], t_end: f64, opts: &SimOptions) -> Result<Trajectory, DynamicsError> {
        self.check_state(n0, opts.tol_state)?;
        if !(t_end.is_finite() && t_end >= 0.0) {
            return Err(DynamicsError::InvalidArgument(format!("t_end must be finite and nonnegative, got {t_end}")));
        }
        if let Some(dt) = opts.sample_dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(DynamicsError::InvalidArgument(format!("sample spacing must be positive, got {dt}")));
            }
        }
        let level = total(n0);
        let mut traj = Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            stats: TrajectoryStats::default(),
        };
        let every_step = opts.sample_dt.is_none();
        let mut drift: f64 = 0.0;
        let (_, stats) = integrate(
            |_, y, dy| self.field(y, dy),
            0.0,
            n0,
            t_end,
            &opts.integrator(),
            |acc| {
                self.check_box(acc.t, acc.y, opts.tol_state)?;
                drift = drift.max((total(acc.y) - level).abs());
                if every_step || acc.on_grid {
                    traj.times.push(acc.t);
                    traj.states.push(acc.y.to_vec());
                }
                Ok(Flow::Continue)
            },
        )?;
        traj.stats = stats_of(stats, drift);
        Ok(traj)
    }

    fn check_box(&self, t: f64, y: &[f64], tol: f64) -> Result<(), DynamicsError> {
        for (index, (&value, &capacity)) in y.iter().zip(&self.capacities).enumerate() {
            if !(value >= -tol && value <= capacity + tol) {
                return Err(DynamicsError::BoxViolation { t, index, value, capacity });
            }
        }
        Ok(())
    }

    fn check_level(&self, level: f64) -> Result<(), DynamicsError> {
        let max = self.total_capacity();
        if !(level >= 0.0 && level <= max) {
            return Err(DynamicsError::LevelOutOfRange { level, max });
        }
        Ok(())
    }

    /// The steady state in the level set `I(n) = s`, started from the
    /// proportional point `n_i = s c_i / I(c)`.
    pub fn find_equilibrium(&self, level: f64, opts: &EquilibriumOptions) -> Result<EquilibriumResult, DynamicsError> {
        self.require_strongly_connected()?;
        self.check_level(level)?;
        let tol = opts.tol_eq.unwrap_or_else(|| self.default_tol_eq());
        let trivial = |point: Vec<f64>| EquilibriumResult {
            level,
            residual: sup_norm(&self.rhs(&point).expect("box corner")),
            point,
            tolerance: tol,
            integration_time: 0.0,
            integration_steps: 0,
            newton_iterations: 0,
        };
        if level == 0.0 {
            return Ok(trivial(vec![0.0; self.m()]));
        }
        if level == self.total_capacity() {
            return Ok(trivial(self.capacities.clone()));
        }
        let cap = self.total_capacity();
        let start: Vec<f64> = self.capacities.iter().map(|&c| level * c / cap).collect();
        self.equilibrium_from(&start, opts)
    }

    /// Integrate from `start` until the residual is small, then polish with damped Newton steps restricted to `sum delta = 0`.
    pub fn equilibrium_from(&self, start: &[f64], opts: &EquilibriumOptions) -> Result<EquilibriumResult, DynamicsError> {
        self.require_strongly_connected()?;
        self.check_state(start, opts.sim.tol_state)?;
        let level = total(start);
        let tol = opts.tol_eq.unwrap_or_else(|| self.default_tol_eq());
        let cap = self.total_capacity();
        if level <= 0.0 || level >= cap {
            let point = if level <= 0.0 { vec![0.0; self.m()] } else { self.capacities.clone() };
            return Ok(EquilibriumResult {
                level,
                residual: sup_norm(&self.rhs(&point)?),
                point,
                tolerance: tol,
                integration_time: 0.0,
                integration_steps: 0,
                newton_iterations: 0,
            });
        }

        let mut point = start.to_vec();
        let mut reached = 0.0;
        let mut sim = opts.sim;
        sim.sample_dt = None;
        let (_, stats) = integrate(
            |_, y, dy| self.field(y, dy),
            0.0,
            start,
            opts.max_time,
            &sim.integrator(),
            |acc| {
                self.check_box(acc.t, acc.y, sim.tol_state)?;
                point.copy_from_slice(acc.y);
                reached = acc.t;
                Ok(if sup_norm(acc.dy) <= opts.handoff.max(1.0) * tol { Flow::Stop } else { Flow::Continue })
            },
        )?;

        let (point, newton_iterations) = self.newton_polish(point, opts.max_newton);
        let residual = sup_norm(&self.rhs(&point)?);
        if residual > tol {
            return Err(DynamicsError::NoConvergence {
                residual,
                time: reached,
                detail: format!("tolerance {tol:e} not met after {newton_iterations} Newton iterations"),
            });
        }
        if let Some(i) = (0..self.m()).find(|&i| !(point[i] > 0.0 && point[i] < self.capacities[i])) {
            return Err(DynamicsError::NoConvergence {
                residual,
                time: reached,
                detail: format!("converged point touches the boundary at n{}", i + 1),
            });
        }
        Ok(EquilibriumResult {
            level,
            point,
            residual,
            tolerance: tol,
            integration_time: reached,
            integration_steps: stats.accepted,
            newton_iterations,
        })
    }

    fn newton_polish(&self, mut n: Vec<f64>, max_iter: usize) -> (Vec<f64>, usize) {
        let m = self.m();
        let mut f = vec![0.0; m];
        self.field(&n, &mut f);
        let mut norm = sup_norm(&f);
        let mut iterations = 0;
        while iterations < max_iter && norm > 0.0 {
            let Ok(mut j) = self.jacobian(&n) else { break };
            // rows of J sum to the zero row, so the last equation is
            // redundant; swap it for the level constraint sum(delta) = 0
            let mut rhs = DVector::from_iterator(m, f.iter().map(|v| -v));
            for k in 0..m {
                j[(m - 1, k)] = 1.0;
            }
            rhs[m - 1] = 0.0;
            let Some(delta) = j.lu().solve(&rhs) else { break };
            let mut alpha = 1.0;
            let mut improved = false;
            let mut trial = vec![0.0; m];
            let mut ft = vec![0.0; m];
            for _ in 0..30 {
                for i in 0..m {
                    trial[i] = n[i] + alpha * delta[i];
                }
                let inside = trial
                    .iter()
                    .zip(&self.capacities)
                    .all(|(&x, &c)| x > 0.0 && x < c);
                if inside {
                    self.field(&trial, &mut ft);
                    let nt = sup_norm(&ft);
                    if nt < norm {
                        n.copy_from_slice(&trial);
                        f.copy_from_slice(&ft);
                        norm = nt;
                        improved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            iterations += 1;
            if !improved {
                break;
            }
        }
        (n, iterations)
    }

    fn paired(
        &self,
        a: &[f64],
        b: &[f64],
        t_end: f64,
        opts: &PairOptions,
    ) -> Result<(Trajectory, Trajectory), DynamicsError> {
        self.require_strongly_connected()?;
        let mut sim = opts.sim;
        sim.sample_dt = Some(opts.sample_dt);
        let ta = self.simulate(a, t_end, &sim)?;
        let tb = self.simulate(b, t_end, &sim)?;
        debug_assert_eq!(ta.times, tb.times);
        Ok((ta, tb))
    }

    /// Order preservation: `a <= b` implies `rho(t,a) <= rho(t,b)`, and
    /// `a < b` implies strict order in every coordinate for `t >= t_strict`.
    pub fn verify_monotonicity(
        &self,
        a: &[f64],
        b: &[f64],
        t_end: f64,
        opts: &PairOptions,
    ) -> Result<MonotonicityReport, DynamicsError> {
        self.check_state(a, opts.sim.tol_state)?;
        self.check_state(b, opts.sim.tol_state)?;
        if let Some(i) = (0..self.m()).find(|&i| a[i] > b[i]) {
            return Err(DynamicsError::InvalidArgument(format!(
                "initial states are not ordered: a{} > b{}",
                i + 1,
                i + 1
            )));
        }
        let strict = a != b;
        let (ta, tb) = self.paired(a, b, t_end, opts)?;
        let mut min_gap = f64::INFINITY;
        let mut min_strict_gap: Option<f64> = None;
        for ((&t, x), y) in ta.times.iter().zip(&ta.states).zip(&tb.states) {
            for i in 0..self.m() {
                let gap = y[i] - x[i];
                min_gap = min_gap.min(gap);
                if gap < -opts.tol {
                    return Err(DynamicsError::OrderViolation { t, index: i, gap });
                }
                if strict && t >= opts.t_strict {
                    min_strict_gap = Some(min_strict_gap.map_or(gap, |g: f64| g.min(gap)));
                    if gap <= opts.strict_margin {
                        return Err(DynamicsError::OrderViolation { t, index: i, gap });
                    }
                }
            }
        }
        Ok(MonotonicityReport {
            samples: ta.len(),
            min_gap,
            min_strict_gap,
            tolerance: opts.tol,
        })
    }

    /// l1 non-expansion of trajectory pairs plus the zero matrix measure of
    /// the Jacobian along both trajectories.
    pub fn verify_contraction(
        &self,
        a: &[f64],
        b: &[f64],
        t_end: f64,
        opts: &PairOptions,
    ) -> Result<ContractionReport, DynamicsError> {
        let (ta, tb) = self.paired(a, b, t_end, opts)?;
        let d0 = l1_distance(a, b);
        let mut prev = d0;
        let mut max_distance: f64 = 0.0;
        let mut max_increase = f64::NEG_INFINITY;
        let mut max_abs_measure: f64 = 0.0;
        for ((&t, x), y) in ta.times.iter().zip(&ta.states).zip(&tb.states) {
            let d = l1_distance(x, y);
            max_distance = max_distance.max(d);
            if d > d0 + opts.tol {
                return Err(DynamicsError::ExpansionDetected {
                    t,
                    detail: format!("distance {d:e} exceeds initial distance {d0:e}"),
                });
            }
            max_increase = max_increase.max(d - prev);
            if d > prev + opts.tol {
                return Err(DynamicsError::ExpansionDetected {
                    t,
                    detail: format!("distance grew from {prev:e} to {d:e}"),
                });
            }
            prev = d;
            for state in [x, y] {
                let mu = matrix_measure_l1(&self.jacobian(state)?);
                max_abs_measure = max_abs_measure.max(mu.abs());
                if mu.abs() > opts.measure_tol {
                    return Err(DynamicsError::ExpansionDetected {
                        t,
                        detail: format!("matrix measure {mu:e} is nonzero"),
                    });
                }
            }
        }
        Ok(ContractionReport {
            samples: ta.len(),
            initial_distance: d0,
            max_distance,
            final_distance: prev,
            max_increase: max_increase.max(0.0),
            max_abs_measure,
            tolerance: opts.tol,
        })
    }

    /// Sample the distance to the boundary on `[0, horizon]` with spacing
    /// `dt` and check that it rises strictly while below `layer`.
    pub fn boundary_repulsion(
        &self,
        n0: &[f64],
        horizon: f64,
        dt: f64,
        layer: f64,
        opts: &SimOptions,
    ) -> Result<RepulsionReport, DynamicsError> {
        self.require_strongly_connected()?;
        let sim = SimOptions { sample_dt: Some(dt), ..*opts };
        let traj = self.simulate(n0, horizon, &sim)?;
        let floors: Vec<f64> = traj.states.iter().map(|n| boundary_floor(n, &self.capacities)).collect();
        let exit = floors.iter().position(|&f| f >= layer);
        let inside = exit.unwrap_or(floors.len());
        let increasing_in_layer = floors[..inside.min(floors.len())]
            .iter()
            .zip(&floors[1..])
            .all(|(a, b)| b > a);
        let min_floor_after_start = floors[1..].iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(RepulsionReport {
            exit_time: exit.map(|k| traj.times[k]),
            times: traj.times,
            floors,
            layer,
            increasing_in_layer,
            min_floor_after_start,
        })
    }

    /// Evaluate the field on the boundary points of a `grid^m` lattice of the
    /// box; only `0` and `c` may be equilibria.
    pub fn boundary_equilibria_scan(&self, grid: usize) -> Result<BoundaryScanReport, DynamicsError> {
        self.require_strongly_connected()?;
        if grid < 2 {
            return Err(DynamicsError::InvalidArgument("boundary grid needs at least 2 points per axis".into()));
        }
        let m = self.m();
        let zero_tolerance = 1e-12 * (1.0 + self.capacities.iter().cloned().fold(0.0, f64::max));
        let mut idx = vec![0usize; m];
        let mut n = vec![0.0; m];
        let mut f = vec![0.0; m];
        let mut report = BoundaryScanReport {
            grid,
            points_scanned: 0,
            zero_at_empty: false,
            zero_at_full: false,
            nontrivial_zeros: Vec::new(),
            min_nonzero_residual: f64::INFINITY,
            zero_tolerance,
            passed: false,
        };
        loop {
            if idx.iter().any(|&k| k == 0 || k == grid - 1) {
                for i in 0..m {
                    // exact endpoints, no roundoff at the faces
                    n[i] = if idx[i] == grid - 1 {
                        self.capacities[i]
                    } else {
                        self.capacities[i] * idx[i] as f64 / (grid - 1) as f64
                    };
                }
                self.field(&n, &mut f);
                let r = sup_norm(&f);
                report.points_scanned += 1;
                let empty = idx.iter().all(|&k| k == 0);
                let full = idx.iter().all(|&k| k == grid - 1);
                if r <= zero_tolerance {
                    if empty {
                        report.zero_at_empty = true;
                    } else if full {
                        report.zero_at_full = true;
                    } else {
                        report.nontrivial_zeros.push(n.clone());
                    }
                } else {
                    report.min_nonzero_residual = report.min_nonzero_residual.min(r);
                }
            }
            // odometer increment
            let mut k = 0;
            while k < m {
                idx[k] += 1;
                if idx[k] < grid {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == m {
                break;
            }
        }
        report.passed = report.zero_at_empty && report.zero_at_full && report.nontrivial_zeros.is_empty();
        Ok(report)
    }
}

fn stats_of(stats: StepStats, drift: f64) -> TrajectoryStats {
    TrajectoryStats {
        steps: stats.accepted,
        rejected_steps: stats.rejected,
        rhs_evals: stats.rhs_evals,
        max_conservation_drift: drift,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crn::compartmental_crn;
    use crate::graph::GraphSpec;
    use crate::rate::RateSpec;

    fn triangle() -> ReducedSystem {
        ReducedSystem::new(&CompartmentalGraph::build(&GraphSpec::uniform(3, &[(1, 2), (2, 3), (3, 1)])).unwrap())
    }

    fn hetero_triangle() -> CompartmentalGraph {
        let mut spec = GraphSpec::uniform(3, &[(1, 2), (2, 3), (3, 1)]);
        spec.edges[0].rate = RateSpec::MassAction { k: 2.0 };
        spec.edges[1].rate = RateSpec::Saturating { k: 1.5, a: 0.3, b: 0.7 };
        spec.edges[2].rate = RateSpec::MassAction { k: 0.5 };
        spec.compartments[1].capacity = 2.0;
        CompartmentalGraph::build(&spec).unwrap()
    }

    #[test]
    fn rhs_by_hand() {
        let sys = triangle();
        assert_eq!(sys.rhs(&[1.0, 0.0, 0.0]).unwrap(), vec![-1.0, 1.0, 0.0]);
        assert_eq!(sys.rhs(&[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert_eq!(sys.rhs(&[1.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(matches!(sys.rhs(&[1.5, 0.0, 0.0]), Err(DynamicsError::StateOutOfBox { index: 0, .. })));
        assert!(matches!(sys.rhs(&[0.5]), Err(DynamicsError::Dimension { .. })));
    }

    #[test]
    fn rhs_agrees_with_full_network() {
        let g = hetero_triangle();
        let sys = ReducedSystem::new(&g);
        let crn = compartmental_crn(&g);
        let n = [0.4, 1.1, 0.25];
        let mut x: Vec<f64> = n.to_vec();
        x.extend(n.iter().zip(g.capacities()).map(|(n, c)| c - n));
        let full = crn.ode_rhs(&x).unwrap();
        let reduced = sys.rhs(&n).unwrap();
        for i in 0..3 {
            assert!((full[i] - reduced[i]).abs() < 1e-15);
            assert!((full[3 + i] + reduced[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn jacobian_structure_and_trivial_case() {
        let sys = ReducedSystem::new(&hetero_triangle());
        let j = sys.jacobian(&[0.4, 1.1, 0.25]).unwrap();
        for k in 0..3 {
            assert!(j.column(k).sum().abs() < 1e-12);
            assert!(j[(k, k)] <= 0.0);
        }
        assert!(matrix_measure_l1(&j).abs() < 1e-12);
        let single = ReducedSystem::new(&CompartmentalGraph::build(&GraphSpec::uniform(1, &[])).unwrap());
        assert_eq!(single.jacobian(&[0.3]).unwrap(), DMatrix::zeros(1, 1));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let sys = ReducedSystem::new(&hetero_triangle());
        let n = [0.5, 1.0, 0.5];
        let j = sys.jacobian(&n).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut hi = n;
            let mut lo = n;
            hi[k] += h;
            lo[k] -= h;
            let fh = sys.rhs(&hi).unwrap();
            let fl = sys.rhs(&lo).unwrap();
            for i in 0..3 {
                let fd = (fh[i] - fl[i]) / (2.0 * h);
                assert!((fd - j[(i, k)]).abs() <= 1e-6, "J[{i},{k}] = {} vs {fd}", j[(i, k)]);
            }
        }
    }

    #[test]
    fn simulation_conserves_total_and_stays_interior() {
        let sys = triangle();
        let traj = sys.simulate(&[0.5, 0.3, 0.2], 50.0, &SimOptions::default()).unwrap();
        assert!(traj.stats.max_conservation_drift <= 1e-9);
        for n in &traj.states {
            assert!((total(n) - 1.0).abs() <= 1e-9);
            assert!(boundary_floor(n, sys.capacities()) > 0.0);
        }
    }

    #[test]
    fn boundary_start_enters_interior() {
        let sys = triangle();
        let opts = SimOptions { sample_dt: Some(0.01), ..SimOptions::default() };
        for n0 in [[0.0, 0.5, 1.0], [0.5, 0.0, 0.0], [1.0, 1.0, 0.0]] {
            let traj = sys.simulate(&n0, 1.0, &opts).unwrap();
            assert_eq!(traj.times[1], 0.01);
            assert!(boundary_floor(&traj.states[1], sys.capacities()) > 0.0, "{n0:?} -> {:?}", traj.states[1]);
        }
    }

    #[test]
    fn simulate_rejects_bad_input() {
        let sys = triangle();
        assert!(matches!(sys.simulate(&[1.2, 0.0, 0.0], 1.0, &SimOptions::default()), Err(DynamicsError::StateOutOfBox { .. })));
        assert!(sys.simulate(&[0.2, 0.0, 0.0], f64::NAN, &SimOptions::default()).is_err());
    }

    #[test]
    fn equilibrium_trivial_and_symmetric() {
        let sys = triangle();
        let opts = EquilibriumOptions::default();
        assert_eq!(sys.find_equilibrium(0.0, &opts).unwrap().point, vec![0.0; 3]);
        assert_eq!(sys.find_equilibrium(3.0, &opts).unwrap().point, vec![1.0; 3]);
        let e = sys.find_equilibrium(1.2, &opts).unwrap();
        for v in &e.point {
            assert!((v - 0.4).abs() <= 1e-12);
        }
        assert!(matches!(sys.find_equilibrium(3.5, &opts), Err(DynamicsError::LevelOutOfRange { .. })));
    }

    #[test]
    fn equilibrium_is_start_independent() {
        let sys = ReducedSystem::new(&hetero_triangle());
        let opts = EquilibriumOptions::default();
        let reference = sys.find_equilibrium(1.7, &opts).unwrap();
        assert!(reference.residual <= reference.tolerance);
        for start in [[1.0, 0.7, 0.0], [0.0, 1.7, 0.0], [0.2, 0.5, 1.0], [0.9, 0.0, 0.8]] {
            let e = sys.equilibrium_from(&start, &opts).unwrap();
            let gap = e.point.iter().zip(&reference.point).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap <= 1e-7, "{start:?}: {gap}");
        }
    }

    #[test]
    fn verifiers_refuse_disconnected_graphs() {
        let sys = ReducedSystem::new(&CompartmentalGraph::build(&GraphSpec::uniform(2, &[(1, 2)])).unwrap());
        assert!(sys.simulate(&[0.5, 0.5], 1.0, &SimOptions::default()).is_ok());
        assert!(matches!(sys.find_equilibrium(1.0, &EquilibriumOptions::default()), Err(DynamicsError::NotStronglyConnected { components: 2 })));
        assert!(sys.boundary_equilibria_scan(5).is_err());
        assert!(sys.verify_contraction(&[0.1, 0.1], &[0.2, 0.2], 1.0, &PairOptions::default()).is_err());
    }

    #[test]
    fn monotone_pairs() {
        let sys = ReducedSystem::new(&hetero_triangle());
        let opts = PairOptions::default();
        let same = sys.verify_monotonicity(&[0.3, 0.5, 0.2], &[0.3, 0.5, 0.2], 10.0, &opts).unwrap();
        assert_eq!(same.min_gap, 0.0);
        assert!(same.min_strict_gap.is_none());
        let r = sys.verify_monotonicity(&[0.3, 0.5, 0.2], &[0.3, 0.9, 0.2], 10.0, &opts).unwrap();
        assert!(r.min_strict_gap.unwrap() > 1e-12);
        assert!(matches!(
            sys.verify_monotonicity(&[0.4, 0.5, 0.2], &[0.3, 0.9, 0.2], 10.0, &opts),
            Err(DynamicsError::InvalidArgument(_))
        ));
    }

    #[test]
    fn contraction_pairs() {
        let sys = ReducedSystem::new(&hetero_triangle());
        let opts = PairOptions::default();
        let same = sys.verify_contraction(&[0.3, 0.5, 0.2], &[0.3, 0.5, 0.2], 10.0, &opts).unwrap();
        assert_eq!(same.max_distance, 0.0);
        let r = sys.verify_contraction(&[0.9, 0.1, 0.2], &[0.1, 1.8, 0.0], 20.0, &opts).unwrap();
        assert!(r.final_distance < r.initial_distance);
        assert!(r.max_abs_measure <= 1e-9);
    }

    #[test]
    fn convergence_to_equilibrium_is_monotone_in_l1() {
        let sys = ReducedSystem::new(&hetero_triangle());
        let a = [0.95, 0.05, 0.5];
        let e = sys.find_equilibrium(total(&a), &EquilibriumOptions::default()).unwrap();
        let r = sys.verify_contraction(&a, &e.point, 30.0, &PairOptions::default()).unwrap();
        assert!(r.max_increase <= 1e-9);
        assert!(r.final_distance < 1e-3 * r.initial_distance);
    }

    #[test]
    fn triangle_boundary_scan() {
        let r = triangle().boundary_equilibria_scan(11).unwrap();
        assert!(r.passed, "{:?}", r.nontrivial_zeros);
        assert_eq!(r.points_scanned, 11 * 11 * 11 - 9 * 9 * 9);
    }

    #[test]
    fn csv_layout() {
        let traj = triangle().simulate(&[0.5, 0.3, 0.2], 1.0, &SimOptions { sample_dt: Some(0.5), ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,n1,n2,n3,I");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,0.5,0.3,0.2,"));
    }
}
