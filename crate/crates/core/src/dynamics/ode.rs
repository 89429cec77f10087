//! Embedded Dormand–Prince 5(4) pair with dense output.
//!
//! Plain explicit adaptive stepping: the callers restart integration at every
//! protocol discontinuity, renormalize or re-pivot state in the post-step
//! hook, and receive interpolated values at their requested sample times.
//! k1 is recomputed each step (no FSAL reuse) because the hook may modify
//! the state.

use crate::error::{Error, Result};

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
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rel: f64,
    pub abs: f64,
    pub max_steps: usize,
    /// Stability cap on |h|. Near an equilibrium the error estimate vanishes
    /// and an uncapped controller inflates the step beyond the linear
    /// stability region, ringing roundoff up to tolerance scale.
    pub h_max: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rel: 1e-11,
            abs: 1e-13,
            max_steps: 50_000_000,
            h_max: f64::INFINITY,
        }
    }
}

struct Work {
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
    cont: [Vec<f64>; 5],
}

impl Work {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            y_stage: vec![0.0; n],
            y_new: vec![0.0; n],
            cont: std::array::from_fn(|_| vec![0.0; n]),
        }
    }
}

/// Integrate dy/dt = f(t, y) from t0 to t1 (either direction), emitting
/// interpolated states at the `samples` times, which must be monotone in the
/// direction of integration and lie within the span. `post_step` runs after
/// every accepted step and may modify the state in place.
pub fn integrate_adaptive<F, P, S>(
    mut rhs: F,
    t0: f64,
    t1: f64,
    y: &mut Vec<f64>,
    samples: &[f64],
    opts: &OdeOptions,
    mut post_step: P,
    mut emit: S,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    P: FnMut(f64, &mut [f64]) -> Result<()>,
    S: FnMut(f64, &[f64]) -> Result<()>,
{
    let n = y.len();
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let mut next_sample = 0usize;

    // Samples that coincide with the start are emitted before stepping.
    while next_sample < samples.len() && (samples[next_sample] - t0) * dir <= 0.0 {
        emit(samples[next_sample], y)?;
        next_sample += 1;
    }
    if span == 0.0 {
        return Ok(());
    }

    let mut w = Work::new(n);
    let mut t = t0;
    let scale = |yi: f64, yn: f64| opts.abs + opts.rel * yi.abs().max(yn.abs());

    // Initial step from the RHS magnitude at the start.
    rhs(t, y, &mut w.k[0])?;
    let mut h = {
        let d0: f64 = y
            .iter()
            .map(|v| (v / (opts.abs + opts.rel * v.abs())).powi(2))
            .sum::<f64>()
            .sqrt();
        let d1: f64 = w.k[0]
            .iter()
            .zip(y.iter())
            .map(|(f, v)| (f / (opts.abs + opts.rel * v.abs())).powi(2))
            .sum::<f64>()
            .sqrt();
        let h0 = if d1 > 1e-10 {
            0.01 * d0.max(1.0) / d1
        } else {
            1e-6 * span
        };
        dir * h0
            .min(span / 10.0)
            .min(opts.h_max)
            .max(1e-12 * span.min(opts.h_max))
    };

    let mut steps = 0usize;
    while (t1 - t) * dir > 0.0 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::StepLimit {
                t,
                max_steps: opts.max_steps,
            });
        }
        if h.abs() < 1e-15 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, h });
        }
        if (t + h - t1) * dir > 0.0 {
            h = t1 - t;
        }

        rhs(t, y, &mut w.k[0])?;
        stage(&mut w.y_stage, y, h, &[(A21, 0)], &w.k);
        rhs(t + C2 * h, &w.y_stage, &mut w.k[1])?;
        stage(&mut w.y_stage, y, h, &[(A31, 0), (A32, 1)], &w.k);
        rhs(t + C3 * h, &w.y_stage, &mut w.k[2])?;
        stage(&mut w.y_stage, y, h, &[(A41, 0), (A42, 1), (A43, 2)], &w.k);
        rhs(t + C4 * h, &w.y_stage, &mut w.k[3])?;
        stage(
            &mut w.y_stage,
            y,
            h,
            &[(A51, 0), (A52, 1), (A53, 2), (A54, 3)],
            &w.k,
        );
        rhs(t + C5 * h, &w.y_stage, &mut w.k[4])?;
        stage(
            &mut w.y_stage,
            y,
            h,
            &[(A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4)],
            &w.k,
        );
        rhs(t + h, &w.y_stage, &mut w.k[5])?;
        stage(
            &mut w.y_new,
            y,
            h,
            &[(B1, 0), (B3, 2), (B4, 3), (B5, 4), (B6, 5)],
            &w.k,
        );
        rhs(t + h, &w.y_new, &mut w.k[6])?;

        let mut err_acc = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * w.k[0][i]
                    + E3 * w.k[2][i]
                    + E4 * w.k[3][i]
                    + E5 * w.k[4][i]
                    + E6 * w.k[5][i]
                    + E7 * w.k[6][i]);
            let s = scale(y[i], w.y_new[i]);
            err_acc += (e / s) * (e / s);
        }
        let err = (err_acc / n as f64).sqrt();

        if !err.is_finite() {
            h *= 0.2;
            continue;
        }
        if err > 1.0 {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            continue;
        }

        // Accepted: build the interpolant and emit any samples inside.
        if next_sample < samples.len() {
            let t_new = t + h;
            let has_inside = (samples[next_sample] - t) * dir > 0.0
                && (samples[next_sample] - t_new) * dir <= 1e-12 * t_new.abs().max(1.0);
            if has_inside {
                build_interpolant(&mut w, y, h);
                while next_sample < samples.len() {
                    let ts = samples[next_sample];
                    if (ts - t_new) * dir > 1e-12 * t_new.abs().max(1.0) {
                        break;
                    }
                    let theta = ((ts - t) / h).clamp(0.0, 1.0);
                    emit_dense(&w, theta, &mut emit, ts)?;
                    next_sample += 1;
                }
            }
        }

        t += h;
        y.copy_from_slice(&w.y_new);
        post_step(t, y)?;

        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h.abs() > opts.h_max {
            h = dir * opts.h_max;
        }
    }
    Ok(())
}

fn stage(out: &mut [f64], y: &[f64], h: f64, coeffs: &[(f64, usize)], k: &[Vec<f64>; 7]) {
    out.copy_from_slice(y);
    for &(c, j) in coeffs {
        let kj = &k[j];
        for i in 0..out.len() {
            out[i] += h * c * kj[i];
        }
    }
}

fn build_interpolant(w: &mut Work, y: &[f64], h: f64) {
    let n = y.len();
    for i in 0..n {
        let dy = w.y_new[i] - y[i];
        let bspl = h * w.k[0][i] - dy;
        w.cont[0][i] = y[i];
        w.cont[1][i] = dy;
        w.cont[2][i] = bspl;
        w.cont[3][i] = dy - h * w.k[6][i] - bspl;
        w.cont[4][i] = h
            * (D1 * w.k[0][i]
                + D3 * w.k[2][i]
                + D4 * w.k[3][i]
                + D5 * w.k[4][i]
                + D6 * w.k[5][i]
                + D7 * w.k[6][i]);
    }
}

fn emit_dense<S>(w: &Work, theta: f64, emit: &mut S, t: f64) -> Result<()>
where
    S: FnMut(f64, &[f64]) -> Result<()>,
{
    let n = w.y_new.len();
    let mut out = vec![0.0; n];
    let th1 = 1.0 - theta;
    for i in 0..n {
        out[i] = w.cont[0][i]
            + theta
                * (w.cont[1][i]
                    + th1 * (w.cont[2][i] + theta * (w.cont[3][i] + th1 * w.cont[4][i])));
    }
    emit(t, &out)
}
