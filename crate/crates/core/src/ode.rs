//! Adaptive Dormand-Prince 5(4) integration for flat real state vectors.
//!
//! Steps are clipped so that every output time `k * dt_out` is hit exactly;
//! the observer sees the state at each output time and may stop the run.

use std::ops::ControlFlow;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step; `None` picks one from the initial derivative.
    pub h_init: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            h_init: None,
            max_steps: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

// Dormand-Prince tableau
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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrate `dy/dt = rhs(t, y)` from `t = 0` to `t_max`, calling `observe` at
/// `t = 0, dt_out, 2 dt_out, ...`. Returns the final time reached.
pub fn integrate<F, O>(
    y: &mut [f64],
    t_max: f64,
    dt_out: f64,
    opts: &IntegratorOptions,
    mut rhs: F,
    mut observe: O,
) -> Result<(f64, IntegratorStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]) -> Result<ControlFlow<()>>,
{
    let n = y.len();
    let mut stats = IntegratorStats::default();
    if observe(0.0, y)?.is_break() || t_max <= 0.0 {
        return Ok((0.0, stats));
    }
    let n_out = (t_max / dt_out).round().max(1.0) as usize;

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];

    rhs(0.0, y, &mut k1);
    stats.rhs_evals += 1;

    let mut t = 0.0;
    let mut h = opts.h_init.unwrap_or_else(|| initial_step(y, &k1, opts)).min(dt_out);
    let mut last_err = 1e-4f64;

    for k_out in 1..=n_out {
        let t_target = k_out as f64 * dt_out;
        while t < t_target {
            if stats.accepted + stats.rejected >= opts.max_steps {
                return Err(Error::TooManySteps {
                    steps: opts.max_steps,
                    t,
                });
            }
            let remaining = t_target - t;
            let clipped = h >= remaining * (1.0 - 1e-12);
            let step = if clipped { remaining } else { h };
            if step < 1e-14 * t_target.max(1.0) {
                return Err(Error::StepSizeUnderflow { t });
            }

            for i in 0..n {
                ytmp[i] = y[i] + step * A21 * k1[i];
            }
            rhs(t + C2 * step, &ytmp, &mut k2);
            for i in 0..n {
                ytmp[i] = y[i] + step * (A31 * k1[i] + A32 * k2[i]);
            }
            rhs(t + C3 * step, &ytmp, &mut k3);
            for i in 0..n {
                ytmp[i] = y[i] + step * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            rhs(t + C4 * step, &ytmp, &mut k4);
            for i in 0..n {
                ytmp[i] = y[i] + step * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            rhs(t + C5 * step, &ytmp, &mut k5);
            for i in 0..n {
                ytmp[i] = y[i]
                    + step * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            rhs(t + step, &ytmp, &mut k6);
            for i in 0..n {
                ynew[i] = y[i]
                    + step * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            rhs(t + step, &ynew, &mut k7);
            stats.rhs_evals += 6;

            let mut err2 = 0.0;
            for i in 0..n {
                let e = step
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
                err2 += (e / sc) * (e / sc);
            }
            let err = (err2 / n.max(1) as f64).sqrt();
            if !err.is_finite() {
                h = step * 0.2;
                stats.rejected += 1;
                continue;
            }

            if err <= 1.0 {
                // PI step-size control
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.17) * last_err.powf(0.04)).clamp(0.2, 5.0)
                };
                last_err = err.max(1e-4);
                t = if clipped { t_target } else { t + step };
                y.copy_from_slice(&ynew);
                std::mem::swap(&mut k1, &mut k7);
                stats.accepted += 1;
                let proposal = step * fac;
                // a clipped step says nothing about how large h may grow
                h = if clipped { h.max(proposal) } else { proposal };
            } else {
                let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                h = step * fac;
                stats.rejected += 1;
            }
        }
        if observe(t, y)?.is_break() {
            return Ok((t, stats));
        }
    }
    Ok((t, stats))
}

fn initial_step(y: &[f64], f0: &[f64], opts: &IntegratorOptions) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for (yi, fi) in y.iter().zip(f0) {
        let sc = opts.atol + opts.rtol * yi.abs();
        d0 += (yi / sc).powi(2);
        d1 += (fi / sc).powi(2);
    }
    let (d0, d1) = (d0.sqrt(), d1.sqrt());
    if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        (0.01 * d0 / d1).max(1e-8)
    }
}
