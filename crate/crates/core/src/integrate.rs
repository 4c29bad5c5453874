//! Explicit adaptive Dormand–Prince 5(4) integrator with FSAL and optional
//! landing on a fixed sample grid.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
    /// Largest step allowed; `None` means the whole horizon.
    pub max_step: Option<f64>,
    /// When set, steps are shortened to land exactly on `t0 + k * dt`.
    pub sample_dt: Option<f64>,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_steps: 5_000_000,
            max_step: None,
            sample_dt: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum IntegrateError<E> {
    #[error("step size underflow at t = {t} (h = {h})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("step limit of {limit} reached at t = {t}")]
    MaxSteps { t: f64, limit: usize },
    #[error(transparent)]
    Observer(E),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// An accepted point handed to the observer.
#[derive(Debug, Clone, Copy)]
pub struct Accepted<'a> {
    pub t: f64,
    pub y: &'a [f64],
    /// Derivative at `(t, y)`, free thanks to FSAL.
    pub dy: &'a [f64],
    /// True when `t` is a sample-grid point (or the final time).
    pub on_grid: bool,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn scaled_norm(v: &[f64], y: &[f64], y_new: &[f64], abs_tol: f64, rel_tol: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let sum: f64 = v
        .iter()
        .zip(y.iter().zip(y_new))
        .map(|(e, (a, b))| {
            let sc = abs_tol + rel_tol * a.abs().max(b.abs());
            (e / sc) * (e / sc)
        })
        .sum();
    (sum / v.len() as f64).sqrt()
}

/// Integrate `y' = f(t, y)` from `t0` to `t_end`. The observer sees the
/// initial point and every accepted step; returning `Flow::Stop` ends the
/// run early. Returns the final time reached.
pub fn integrate<F, O, E>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &IntegratorOptions,
    mut observe: O,
) -> Result<(f64, StepStats), IntegrateError<E>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(Accepted<'_>) -> Result<Flow, E>,
{
    let n = y0.len();
    let mut stats = StepStats::default();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k1 = vec![0.0; n];
    f(t, &y, &mut k1);
    stats.rhs_evals += 1;
    if observe(Accepted { t, y: &y, dy: &k1, on_grid: true }).map_err(IntegrateError::Observer)? == Flow::Stop
        || t_end <= t0
    {
        return Ok((t, stats));
    }

    let span = t_end - t0;
    let max_step = opts.max_step.unwrap_or(span).min(span);
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];

    // initial step guess
    let mut h = {
        let d0 = scaled_norm(&y, &y, &y, opts.abs_tol, opts.rel_tol);
        let d1 = scaled_norm(&k1, &y, &y, opts.abs_tol, opts.rel_tol);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(max_step);
        for i in 0..n {
            tmp[i] = y[i] + h0 * k1[i];
        }
        f(t + h0, &tmp, &mut k2);
        stats.rhs_evals += 1;
        for i in 0..n {
            err[i] = (k2[i] - k1[i]) / h0;
        }
        let d2 = scaled_norm(&err, &y, &y, opts.abs_tol, opts.rel_tol);
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(max_step)
    };

    let mut next_grid_index: u64 = 1;
    let grid_time = |k: u64| -> f64 {
        match opts.sample_dt {
            Some(dt) => (t0 + k as f64 * dt).min(t_end),
            None => t_end,
        }
    };
    let mut rejected_last = false;

    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(IntegrateError::MaxSteps { t, limit: opts.max_steps });
        }
        let target = grid_time(next_grid_index);
        let mut hit = false;
        let mut step = h.min(max_step);
        if t + step >= target - 1e-12 * target.abs().max(1.0) {
            step = target - t;
            hit = true;
        }
        if step <= 1e-14 * t.abs().max(1.0) {
            if hit {
                // already at the target within roundoff
                t = target;
                next_grid_index += 1;
                if t >= t_end {
                    return Ok((t, stats));
                }
                continue;
            }
            return Err(IntegrateError::StepSizeUnderflow { t, h: step });
        }

        for i in 0..n {
            tmp[i] = y[i] + step * A21 * k1[i];
        }
        f(t + C2 * step, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + step * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * step, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + step * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * step, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + step * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * step, &tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i]
                + step * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + step, &tmp, &mut k6);
        for i in 0..n {
            y_new[i] = y[i]
                + step * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + step, &y_new, &mut k7);
        stats.rhs_evals += 6;
        for i in 0..n {
            err[i] = step
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let err_norm = scaled_norm(&err, &y, &y_new, opts.abs_tol, opts.rel_tol);

        let factor = if err_norm == 0.0 {
            5.0
        } else {
            (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
        };
        if err_norm <= 1.0 {
            stats.accepted += 1;
            t = if hit { target } else { t + step };
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            if hit {
                next_grid_index += 1;
            }
            let on_grid = hit;
            let flow = observe(Accepted { t, y: &y, dy: &k1, on_grid }).map_err(IntegrateError::Observer)?;
            if flow == Flow::Stop || t >= t_end {
                return Ok((t, stats));
            }
            // a step cut short by the grid should not shrink the next one
            let base = if hit { h.max(step) } else { step };
            h = if rejected_last { base * factor.min(1.0) } else { base * factor };
            rejected_last = false;
        } else {
            stats.rejected += 1;
            rejected_last = true;
            h = step * factor.min(1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(
        f: impl FnMut(f64, &[f64], &mut [f64]),
        y0: &[f64],
        t_end: f64,
        opts: &IntegratorOptions,
    ) -> Vec<(f64, Vec<f64>, bool)> {
        let mut out = Vec::new();
        integrate::<_, _, ()>(f, 0.0, y0, t_end, opts, |a| {
            out.push((a.t, a.y.to_vec(), a.on_grid));
            Ok(Flow::Continue)
        })
        .unwrap();
        out
    }

    #[test]
    fn exponential_decay_accuracy() {
        let out = run(|_, y, dy| dy[0] = -y[0], &[1.0], 5.0, &IntegratorOptions::default());
        let (t, y, _) = out.last().unwrap();
        assert_eq!(*t, 5.0);
        assert!((y[0] - (-5.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn harmonic_oscillator_period() {
        let opts = IntegratorOptions { abs_tol: 1e-12, rel_tol: 1e-12, ..Default::default() };
        let tau = 2.0 * std::f64::consts::PI;
        let out = run(|_, y, dy| { dy[0] = y[1]; dy[1] = -y[0]; }, &[1.0, 0.0], tau, &opts);
        let (_, y, _) = out.last().unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9 && y[1].abs() < 1e-9);
    }

    #[test]
    fn grid_points_are_hit_exactly() {
        let opts = IntegratorOptions { sample_dt: Some(0.25), ..Default::default() };
        let out = run(|_, y, dy| dy[0] = -2.0 * y[0], &[1.0], 2.0, &opts);
        let grid: Vec<f64> = out.iter().filter(|p| p.2).map(|p| p.0).collect();
        let want: Vec<f64> = (0..=8).map(|k| k as f64 * 0.25).collect();
        assert_eq!(grid, want);
    }

    #[test]
    fn observer_can_stop_and_fail() {
        let mut seen = 0;
        let (t, _) = integrate::<_, _, ()>(|_, _, dy| dy[0] = 1.0, 0.0, &[0.0], 100.0, &IntegratorOptions::default(), |a| {
            seen += 1;
            Ok(if a.y[0] > 1.0 { Flow::Stop } else { Flow::Continue })
        })
        .unwrap();
        assert!(t < 100.0 && seen >= 2);
        let err = integrate(|_, _, dy| dy[0] = 1.0, 0.0, &[0.0], 1.0, &IntegratorOptions::default(), |a| {
            if a.t > 0.0 { Err("boom") } else { Ok(Flow::Continue) }
        });
        assert_eq!(err, Err(IntegrateError::Observer("boom")));
    }

    #[test]
    fn step_limit_reported() {
        let opts = IntegratorOptions { max_steps: 3, ..Default::default() };
        let err = integrate::<_, _, ()>(|_, y, dy| dy[0] = -50.0 * y[0], 0.0, &[1.0], 100.0, &opts, |_| Ok(Flow::Continue));
        assert!(matches!(err, Err(IntegrateError::MaxSteps { limit: 3, .. })));
    }

    #[test]
    fn linear_invariant_preserved_to_roundoff() {
        // closed two-compartment exchange: y0 + y1 constant
        let out = run(
            |_, y, dy| {
                let r = 2.0 * y[0] * (1.0 - y[1]) - 0.5 * y[1] * (1.0 - y[0]);
                dy[0] = -r;
                dy[1] = r;
            },
            &[0.9, 0.05],
            100.0,
            &IntegratorOptions::default(),
        );
        for (_, y, _) in &out {
            assert!((y[0] + y[1] - 0.95).abs() < 1e-13);
        }
    }
}
