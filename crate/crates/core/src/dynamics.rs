//! Time integration under driving protocols and per-order residual
//! extraction.
//!
//! Two integration routes cover every experiment: the exact Schrödinger
//! equation (the oracle), mapped to chart coordinates sample by sample, and
//! Hamilton's equations for H₀ integrated directly in the chart. Both use
//! the same adaptive 5(4) pair, restart exactly at protocol discontinuities,
//! and re-pivot when the chart degrades. Deviation extraction subtracts the
//! tracked fixed point and then the hierarchy shifts order by order, with
//! angle unwrapping against the previous sample.

mod ode;

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::chart::{self, ChartState, Wavefunction};
use crate::classical::{find_fixed_points, fixed_point_on_branch, gamma_at, ParametricHamiltonian};
use crate::diff;
use crate::error::{Error, Result};
use crate::hierarchy::{self, shifts_up_to};

pub use ode::OdeOptions;

/// Populations this close to the coordinate boundary make the chart singular.
pub const SINGULARITY_MARGIN: f64 = 1e-6;
/// Per-step norm drift the Schrödinger driver tolerates before declaring the
/// tolerance too loose.
pub const NORM_DRIFT_BOUND: f64 = 1e-9;
/// Default dense-output density per linearization period.
pub const SAMPLES_PER_PERIOD: f64 = 40.0;

/// Driving protocol R(t) with closed-form time derivatives and the times at
/// which any derivative jumps.
#[derive(Debug, Clone, PartialEq)]
pub enum Protocol {
    Constant {
        r0: f64,
    },
    /// R = r0 + rate·t. A sudden switch-on of the rate at t = 0 is part of
    /// the protocol semantics (Ṙ jumps from 0 to `rate`).
    Linear {
        r0: f64,
        rate: f64,
    },
    /// R = r0 + ½·accel·t².
    Quadratic {
        r0: f64,
        accel: f64,
    },
    /// |Ṙ| = amplitude with the sign of sin(νt): the rate flips at every
    /// t = kπ/ν, tracing a triangle wave in R.
    SquareWaveRate {
        amplitude: f64,
        nu: f64,
    },
    /// Piecewise-linear interpolation through (t, R) knots, constant outside.
    PiecewiseLinear {
        knots: Vec<(f64, f64)>,
    },
}

impl Protocol {
    pub fn r(&self, t: f64) -> f64 {
        match self {
            Protocol::Constant { r0 } => *r0,
            Protocol::Linear { r0, rate } => r0 + rate * t,
            Protocol::Quadratic { r0, accel } => r0 + 0.5 * accel * t * t,
            Protocol::SquareWaveRate { amplitude, nu } => {
                let half = std::f64::consts::PI / nu;
                let k = (t / half).floor();
                let base = t - k * half;
                // Alternating ramps between 0 and amplitude·half.
                let ki = k as i64;
                if ki.rem_euclid(2) == 0 {
                    amplitude * base
                } else {
                    amplitude * (half - base)
                }
            }
            Protocol::PiecewiseLinear { knots } => {
                if knots.is_empty() {
                    return 0.0;
                }
                if t <= knots[0].0 {
                    return knots[0].1;
                }
                for w in knots.windows(2) {
                    if t <= w[1].0 {
                        let f = (t - w[0].0) / (w[1].0 - w[0].0);
                        return w[0].1 + f * (w[1].1 - w[0].1);
                    }
                }
                knots[knots.len() - 1].1
            }
        }
    }

    /// d^m R/dt^m for m ≥ 1, right-continuous at discontinuities.
    pub fn deriv(&self, m: usize, t: f64) -> f64 {
        assert!(m >= 1);
        match self {
            Protocol::Constant { .. } => 0.0,
            Protocol::Linear { rate, .. } => {
                if m == 1 {
                    *rate
                } else {
                    0.0
                }
            }
            Protocol::Quadratic { accel, .. } => match m {
                1 => accel * t,
                2 => *accel,
                _ => 0.0,
            },
            Protocol::SquareWaveRate { amplitude, nu } => {
                if m == 1 {
                    let half = std::f64::consts::PI / nu;
                    let k = (t / half).floor() as i64;
                    if k.rem_euclid(2) == 0 {
                        *amplitude
                    } else {
                        -amplitude
                    }
                } else {
                    0.0
                }
            }
            Protocol::PiecewiseLinear { knots } => {
                if m > 1 || knots.len() < 2 {
                    return 0.0;
                }
                if t < knots[0].0 || t >= knots[knots.len() - 1].0 {
                    return 0.0;
                }
                for w in knots.windows(2) {
                    if t < w[1].0 {
                        return (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                    }
                }
                0.0
            }
        }
    }

    /// (Ṙ, R̈, ..., d^kR/dt^k) at t.
    pub fn deriv_tuple(&self, t: f64, k: usize) -> Vec<f64> {
        (1..=k).map(|m| self.deriv(m, t)).collect()
    }

    /// Sorted derivative-jump times strictly inside (t0, t1).
    pub fn discontinuities_in(&self, t0: f64, t1: f64) -> Vec<f64> {
        let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        let mut out = match self {
            Protocol::SquareWaveRate { nu, .. } => {
                let half = std::f64::consts::PI / nu;
                let mut v = Vec::new();
                let mut k = (lo / half).floor() as i64;
                loop {
                    let t = k as f64 * half;
                    if t > hi {
                        break;
                    }
                    if t > lo {
                        v.push(t);
                    }
                    k += 1;
                }
                v
            }
            Protocol::PiecewiseLinear { knots } => knots
                .iter()
                .map(|&(t, _)| t)
                .filter(|&t| t > lo && t < hi)
                .collect(),
            _ => Vec::new(),
        };
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Cross-check the supplied derivatives against finite differences of
    /// R(t) away from discontinuities, to the documented 1e-8.
    pub fn validate(&self, t_span: (f64, f64), max_order: usize) -> Result<()> {
        let (t0, t1) = t_span;
        let discs = self.discontinuities_in(t0.min(t1), t0.max(t1));
        // The widest probe stencil reaches ±4 second-derivative steps.
        let clear = |t: f64| {
            let reach = 6.0 * diff::step_second(t);
            discs.iter().all(|&d| (t - d).abs() > reach)
        };
        for i in 0..48 {
            let t = t0 + (t1 - t0) * (i as f64 + 0.5) / 48.0;
            if !clear(t) {
                continue;
            }
            for m in 1..=max_order {
                let supplied = self.deriv(m, t);
                let fd = match m {
                    1 => diff::derivative_auto(|x| self.r(x), t).value,
                    2 => diff::second_derivative_auto(|x| self.r(x), t).value,
                    _ => diff::derivative_auto(|x| self.deriv(m - 1, x), t).value,
                };
                if (supplied - fd).abs() > 1e-8 * supplied.abs().max(1.0) {
                    return Err(Error::DerivativeUnstable {
                        disagreement: (supplied - fd).abs(),
                        bound: 1e-8 * supplied.abs().max(1.0),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        match self {
            Protocol::Constant { .. } => "constant",
            Protocol::Linear { .. } => "linear",
            Protocol::Quadratic { .. } => "quadratic",
            Protocol::SquareWaveRate { .. } => "square-wave-rate",
            Protocol::PiecewiseLinear { .. } => "piecewise",
        }
    }
}

/// Integration tolerances and budgets.
#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    /// Stability cap on the step, normally ~2.5 / (fastest linearization
    /// frequency along the run). See [`max_linearization_frequency`].
    pub h_max: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-11,
            abs_tol: 1e-13,
            max_steps: 50_000_000,
            h_max: f64::INFINITY,
        }
    }
}

impl IntegrateOptions {
    /// Looser pair for long sweeps where the tight oracle tolerance would be
    /// needlessly slow.
    pub fn long_sweep() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            ..Self::default()
        }
    }

    pub fn with_stability_cap(mut self, freq_max: f64) -> Self {
        // At hω = 1 the pair's imaginary-axis growth factor is ~1e-5 per
        // step, small enough that sub-tolerance oscillations are not pumped
        // before the error controller can see them.
        self.h_max = 1.0 / freq_max;
        self
    }

    fn ode(&self) -> OdeOptions {
        OdeOptions {
            rel: self.rel_tol,
            abs: self.abs_tol,
            max_steps: self.max_steps,
            h_max: self.h_max,
        }
    }
}

/// Per-order deviation data attached to a trajectory (single canonical pair).
#[derive(Debug, Clone)]
pub struct Deviations {
    /// Deepest extracted order K.
    pub order: usize,
    /// Tracked branch index.
    pub branch: usize,
    /// Fixed point per sample, in the sample's pivot.
    pub pbar: Vec<f64>,
    pub qbar: Vec<f64>,
    /// dp[k−1][i] = δ^k p at sample i (unwrapped), k = 1..=order.
    pub dp: Vec<Vec<f64>>,
    pub dq: Vec<Vec<f64>>,
    /// shift_a[k−1][i] = A_k at sample i, k = 1..=order.
    pub shift_a: Vec<Vec<f64>>,
    pub shift_b: Vec<Vec<f64>>,
    /// Linearization frequency scale √|det Γ₀| per sample.
    pub freq: Vec<f64>,
}

/// One completed (or attempted) action window.
#[derive(Debug, Clone, Copy)]
pub struct ActionWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub start_index: usize,
    pub end_index: usize,
    /// |shoelace| / 2π over the window.
    pub value: f64,
    pub orientation: i8,
    /// Whether the window passed the orbit-closure test.
    pub closed: bool,
}

/// Running action estimates for one deviation order.
#[derive(Debug, Clone)]
pub struct ActionSeries {
    /// 0 for the raw orbit about the fixed point, k ≥ 1 for (δ^k p, δ^k q).
    pub order: usize,
    pub windows: Vec<ActionWindow>,
}

/// A sampled trajectory in chart coordinates.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub pairs: usize,
    /// Row-major: p[i·pairs + j] is pair j at sample i, wrapped to [−π, π).
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub pivot: Vec<u8>,
    pub pivot_switches: usize,
    /// Largest pre-renormalization norm defect per accepted step
    /// (Schrödinger route only).
    pub max_norm_drift: f64,
    pub deviations: Option<Deviations>,
    pub actions: Vec<ActionSeries>,
    pub err: Option<Vec<f64>>,
}

impl Trajectory {
    fn with_capacity(pairs: usize, n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            pairs,
            p: Vec::with_capacity(n * pairs),
            q: Vec::with_capacity(n * pairs),
            pivot: Vec::with_capacity(n),
            pivot_switches: 0,
            max_norm_drift: 0.0,
            deviations: None,
            actions: Vec::new(),
            err: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn chart_at(&self, i: usize) -> ChartState {
        let m = self.pairs;
        ChartState::new_unchecked(
            DVector::from_row_slice(&self.p[i * m..(i + 1) * m]),
            DVector::from_row_slice(&self.q[i * m..(i + 1) * m]),
            self.pivot[i] as usize,
        )
    }

    fn push(&mut self, t: f64, p: &[f64], q: &[f64], pivot: usize) {
        self.times.push(t);
        self.p.extend(p.iter().map(|&x| chart::wrap_angle(x)));
        self.q.extend_from_slice(q);
        self.pivot.push(pivot as u8);
    }
}

/// Uniform sample grid including both endpoints.
pub fn sample_times(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    assert!(dt > 0.0);
    let span = t1 - t0;
    let n = (span.abs() / dt).ceil().max(1.0) as usize;
    let mut out: Vec<f64> = (0..=n).map(|i| t0 + span * i as f64 / n as f64).collect();
    if let Some(last) = out.last_mut() {
        *last = t1;
    }
    out
}

/// Fastest linearization frequency √|det Γ₀| along the protocol range,
/// scanned on the tracked branch.
pub fn max_linearization_frequency(
    h: &ParametricHamiltonian,
    protocol: &Protocol,
    t_span: (f64, f64),
    branch: usize,
) -> Result<f64> {
    let mut anchor = find_fixed_points(h, protocol.r(t_span.0))?
        .into_iter()
        .nth(branch)
        .expect("branch exists");
    let mut freq_max: f64 = 0.0;
    for i in 0..=128 {
        let t = t_span.0 + (t_span.1 - t_span.0) * i as f64 / 128.0;
        let fp = fixed_point_on_branch(h, protocol.r(t), &anchor, None)?;
        freq_max = freq_max.max(gamma_at(h, &fp.chart, fp.r)?.frequency_scale());
        anchor = fp;
    }
    Ok(freq_max)
}

/// Sample spacing giving `per_period` points per linearization period
/// 2π/√|det Γ₀|, using the stiffest point of the protocol range.
pub fn default_sample_dt(
    h: &ParametricHamiltonian,
    protocol: &Protocol,
    t_span: (f64, f64),
    branch: usize,
    per_period: f64,
) -> Result<f64> {
    let freq_max = max_linearization_frequency(h, protocol, t_span, branch)?;
    Ok(std::f64::consts::TAU / freq_max / per_period)
}

fn segment_bounds(protocol: &Protocol, t0: f64, t1: f64) -> Vec<(f64, f64)> {
    let mut cuts = protocol.discontinuities_in(t0.min(t1), t0.max(t1));
    if t1 < t0 {
        cuts.reverse();
    }
    let mut bounds = Vec::with_capacity(cuts.len() + 1);
    let mut a = t0;
    for c in cuts {
        bounds.push((a, c));
        a = c;
    }
    bounds.push((a, t1));
    bounds
}

fn slice_samples(samples: &[f64], a: f64, b: f64, dir: f64, include_start: bool) -> Vec<f64> {
    samples
        .iter()
        .copied()
        .filter(|&s| {
            let after_a = if include_start {
                (s - a) * dir >= 0.0
            } else {
                (s - a) * dir > 0.0
            };
            after_a && (s - b) * dir <= 0.0
        })
        .collect()
}

/// Integrate iħ∂ψ/∂t = Ĥ₀(R(t))ψ (ħ = 1) and map every sample to the chart
/// with pivot hysteresis. The state is renormalized and re-gauged after each
/// accepted step; a per-step norm defect beyond [`NORM_DRIFT_BOUND`] aborts.
pub fn integrate_schrodinger(
    h: &ParametricHamiltonian,
    psi0: &Wavefunction,
    protocol: &Protocol,
    t_span: (f64, f64),
    samples: &[f64],
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    assert!(opts.rel_tol >= 1e-13, "rel_tol below supported range");
    let n = psi0.dim();
    let mut y: Vec<f64> = Vec::with_capacity(2 * n);
    for c in psi0.amplitudes().iter() {
        y.push(c.re);
        y.push(c.im);
    }
    let state = RefCell::new((
        Trajectory::with_capacity(n - 1, samples.len()),
        psi0.dominant_component(),
    ));
    let max_drift = RefCell::new(0.0f64);
    let dir = if t_span.1 >= t_span.0 { 1.0 } else { -1.0 };

    let mut first_segment = true;
    for (a, b) in segment_bounds(protocol, t_span.0, t_span.1) {
        let seg_samples = slice_samples(samples, a, b, dir, first_segment);
        first_segment = false;
        let mut dydt_ws = vec![Complex64::new(0.0, 0.0); n];
        ode::integrate_adaptive(
            |t, y, dy| {
                let m = h.matrix_at(protocol.r(t))?;
                for i in 0..n {
                    let mut s = Complex64::new(0.0, 0.0);
                    for j in 0..n {
                        s += m[(i, j)] * Complex64::new(y[2 * j], y[2 * j + 1]);
                    }
                    dydt_ws[i] = s;
                }
                for i in 0..n {
                    // dc/dt = −i·s
                    dy[2 * i] = dydt_ws[i].im;
                    dy[2 * i + 1] = -dydt_ws[i].re;
                }
                Ok(())
            },
            a,
            b,
            &mut y,
            &seg_samples,
            &opts.ode(),
            |t, y| {
                let norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                let drift = (norm - 1.0).abs();
                if drift > NORM_DRIFT_BOUND {
                    return Err(Error::NormDrift {
                        t,
                        drift,
                        bound: NORM_DRIFT_BOUND,
                    });
                }
                {
                    let mut d = max_drift.borrow_mut();
                    *d = d.max(drift);
                }
                for v in y.iter_mut() {
                    *v /= norm;
                }
                // Re-gauge so the dominant component is real positive; the
                // chart is blind to the phase, and a fixed gauge keeps the
                // integration invariant under global phases of ψ0.
                let (mut best, mut best_pop) = (0usize, 0.0f64);
                for i in 0..n {
                    let pop = y[2 * i] * y[2 * i] + y[2 * i + 1] * y[2 * i + 1];
                    if pop > best_pop {
                        best = i;
                        best_pop = pop;
                    }
                }
                let phase = Complex64::new(y[2 * best], y[2 * best + 1]).arg();
                let rot = Complex64::from_polar(1.0, -phase);
                for i in 0..n {
                    let c = Complex64::new(y[2 * i], y[2 * i + 1]) * rot;
                    y[2 * i] = c.re;
                    y[2 * i + 1] = c.im;
                }
                Ok(())
            },
            |t, y| {
                let amps = DVector::from_fn(n, |i, _| Complex64::new(y[2 * i], y[2 * i + 1]));
                let psi = Wavefunction::normalized(amps);
                let mut st = state.borrow_mut();
                let pivot = chart::select_pivot(&psi, st.1)?;
                if pivot != st.1 {
                    st.0.pivot_switches += 1;
                    st.1 = pivot;
                }
                let cs = chart::to_chart(&psi, pivot)?;
                st.0.push(t, cs.p.as_slice(), cs.q.as_slice(), pivot);
                Ok(())
            },
        )?;
    }
    let (mut traj, _) = state.into_inner();
    traj.max_norm_drift = max_drift.into_inner();
    Ok(traj)
}

/// Integrate dp/dt = −∂H₀/∂q, dq/dt = ∂H₀/∂p with time-dependent R(t),
/// re-pivoting when the pivot population degrades and failing with
/// `ChartSingularity` when a population reaches the coordinate boundary.
pub fn integrate_hamilton(
    h: &ParametricHamiltonian,
    s0: &ChartState,
    protocol: &Protocol,
    t_span: (f64, f64),
    samples: &[f64],
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    let m = s0.pairs();
    let mut y: Vec<f64> = s0.p.iter().copied().chain(s0.q.iter().copied()).collect();
    let state = RefCell::new((Trajectory::with_capacity(m, samples.len()), s0.pivot));
    let dir = if t_span.1 >= t_span.0 { 1.0 } else { -1.0 };

    let mut first_segment = true;
    for (a, b) in segment_bounds(protocol, t_span.0, t_span.1) {
        let seg_samples = slice_samples(samples, a, b, dir, first_segment);
        first_segment = false;
        ode::integrate_adaptive(
            |t, y, dy| {
                let (p, q) = y.split_at(m);
                let total: f64 = q.iter().sum();
                if q.iter().any(|&qi| !(qi > 0.0 && qi < 1.0)) || total >= 1.0 {
                    dy.fill(f64::NAN);
                    return Ok(());
                }
                let pivot = state.borrow().1;
                let s = ChartState::new_unchecked(
                    DVector::from_row_slice(p),
                    DVector::from_row_slice(q),
                    pivot,
                );
                let (dhdp, dhdq) = crate::classical::gradient(h, &s, protocol.r(t))?;
                for i in 0..m {
                    dy[i] = -dhdq[i];
                    dy[m + i] = dhdp[i];
                }
                Ok(())
            },
            a,
            b,
            &mut y,
            &seg_samples,
            &opts.ode(),
            |t, y| {
                let (_, q) = y.split_at(m);
                let pivot_pop = 1.0 - q.iter().sum::<f64>();
                if let Some(&qmin) = q
                    .iter()
                    .filter(|v| v.is_finite())
                    .min_by(|x, w| x.total_cmp(w))
                {
                    if qmin < SINGULARITY_MARGIN {
                        return Err(Error::ChartSingularity {
                            t,
                            population: qmin,
                            margin: SINGULARITY_MARGIN,
                        });
                    }
                }
                if pivot_pop <= chart::PIVOT_THRESHOLD {
                    let (qmax_i, qmax) = q
                        .iter()
                        .copied()
                        .enumerate()
                        .max_by(|x, w| x.1.total_cmp(&w.1))
                        .expect("non-empty chart");
                    if qmax > chart::REPIVOT_TARGET_MIN {
                        let mut st = state.borrow_mut();
                        let old = ChartState::new_unchecked(
                            DVector::from_row_slice(&y[..m]),
                            DVector::from_row_slice(&y[m..]),
                            st.1,
                        );
                        // Component index in Hilbert space of pair qmax_i.
                        let target = (0..m + 1)
                            .filter(|&j| j != st.1)
                            .nth(qmax_i)
                            .expect("pair maps to a component");
                        let new = chart::repivot(&old, target)?;
                        for i in 0..m {
                            y[i] = new.p[i];
                            y[m + i] = new.q[i];
                        }
                        st.0.pivot_switches += 1;
                        st.1 = target;
                    } else if pivot_pop < SINGULARITY_MARGIN {
                        return Err(Error::ChartSingularity {
                            t,
                            population: pivot_pop,
                            margin: SINGULARITY_MARGIN,
                        });
                    }
                }
                Ok(())
            },
            |t, y| {
                let mut st = state.borrow_mut();
                let pivot = st.1;
                st.0.push(t, &y[..m], &y[m..], pivot);
                Ok(())
            },
        )?;
    }
    let (traj, _) = state.into_inner();
    Ok(traj)
}

/// Maximum pointwise chart distance between two trajectories sampled at the
/// same times, reconciling pivots sample by sample.
pub fn max_chart_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    assert_eq!(a.len(), b.len(), "trajectories sampled on the same grid");
    let mut worst: f64 = 0.0;
    for i in 0..a.len() {
        let sa = a.chart_at(i);
        let sb = b.chart_at(i);
        let sb = if sb.pivot == sa.pivot {
            sb
        } else {
            chart::repivot(&sb, sa.pivot)?
        };
        worst = worst.max(sa.distance(&sb));
    }
    Ok(worst)
}

struct ShiftCacheEntry {
    a: Vec<f64>,
    b: Vec<f64>,
    freq: f64,
}

/// Fill per-order deviations, hierarchy shift predictions, the linearization
/// frequency, and the windowed action series for a single-pair trajectory.
///
/// The followed branch is resolved by overlap at the first sample and tracked
/// by index afterwards. Shifts are evaluated on a per-segment grid (segments
/// break at protocol discontinuities and pivot switches) and interpolated
/// linearly in time; fixed points are evaluated exactly at every sample.
pub fn extract_deviations(
    mut traj: Trajectory,
    h: &ParametricHamiltonian,
    protocol: &Protocol,
    order: usize,
) -> Result<Trajectory> {
    assert_eq!(traj.pairs, 1, "deviation extraction is single-pair");
    assert!(order >= 1);
    let n = traj.len();
    if n == 0 {
        return Ok(traj);
    }

    // Resolve the branch at the first sample by overlap.
    let psi0 = chart::to_wavefunction(&traj.chart_at(0))?;
    let fps = find_fixed_points(h, protocol.r(traj.times[0]))?;
    let (branch, anchor) = fps
        .into_iter()
        .enumerate()
        .max_by(|(_, fa), (_, fb)| {
            let oa = Wavefunction::normalized(fa.eigvec.clone()).overlap_modulus(&psi0);
            let ob = Wavefunction::normalized(fb.eigvec.clone()).overlap_modulus(&psi0);
            oa.total_cmp(&ob)
        })
        .expect("non-degenerate spectrum");

    // Segment boundaries: protocol discontinuities and pivot switches.
    let mut seg_starts: Vec<usize> = vec![0];
    let discs = protocol.discontinuities_in(
        traj.times[0].min(traj.times[n - 1]),
        traj.times[0].max(traj.times[n - 1]),
    );
    let mut di = 0;
    for i in 1..n {
        let mut cut = traj.pivot[i] != traj.pivot[i - 1];
        while di < discs.len() && discs[di] <= traj.times[i] {
            if discs[di] > traj.times[i - 1] {
                cut = true;
            }
            di += 1;
        }
        if cut {
            seg_starts.push(i);
        }
    }
    seg_starts.push(n);

    let mut dev = Deviations {
        order,
        branch,
        pbar: vec![0.0; n],
        qbar: vec![0.0; n],
        dp: vec![vec![0.0; n]; order],
        dq: vec![vec![0.0; n]; order],
        shift_a: vec![vec![0.0; n]; order],
        shift_b: vec![vec![0.0; n]; order],
        freq: vec![0.0; n],
    };

    let mut cache: HashMap<Vec<u64>, ShiftCacheEntry> = HashMap::new();
    let shift_at = |t: f64,
                    pivot: usize,
                    anchor: &crate::classical::FixedPoint,
                    cache: &mut HashMap<Vec<u64>, ShiftCacheEntry>|
     -> Result<ShiftCacheEntry> {
        let r = protocol.r(t);
        let tuple = protocol.deriv_tuple(t, order);
        let mut key: Vec<u64> = Vec::with_capacity(order + 2);
        key.push(r.to_bits());
        key.extend(tuple.iter().map(|x| x.to_bits()));
        key.push(pivot as u64);
        if let Some(e) = cache.get(&key) {
            return Ok(ShiftCacheEntry {
                a: e.a.clone(),
                b: e.b.clone(),
                freq: e.freq,
            });
        }
        let fp = fixed_point_on_branch(h, r, anchor, Some(pivot))?;
        let shifts = shifts_up_to(h, &fp, &tuple, order, order.max(hierarchy::K_MAX_DEFAULT))?;
        let entry = ShiftCacheEntry {
            a: shifts.iter().map(|s| s.a1()).collect(),
            b: shifts.iter().map(|s| s.b1()).collect(),
            freq: gamma_at(h, &fp.chart, r)?.frequency_scale(),
        };
        cache.insert(
            key,
            ShiftCacheEntry {
                a: entry.a.clone(),
                b: entry.b.clone(),
                freq: entry.freq,
            },
        );
        Ok(entry)
    };

    // Branch anchor advanced sample by sample, so continuity tracking never
    // spans more than one sampling interval.
    let mut anchor = anchor;

    for w in seg_starts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let pivot = traj.pivot[lo] as usize;
        // Shift grid over the segment, walked in time order with its own
        // advancing anchor.
        let count = hi - lo;
        let npts = (count / 4).clamp(2, 1025);
        let mut grid_t = Vec::with_capacity(npts);
        let mut grid: Vec<ShiftCacheEntry> = Vec::with_capacity(npts);
        let mut grid_anchor = anchor.clone();
        for gi in 0..npts {
            let t = if npts == 1 {
                traj.times[lo]
            } else {
                traj.times[lo]
                    + (traj.times[hi - 1] - traj.times[lo]) * gi as f64 / (npts - 1) as f64
            };
            grid_t.push(t);
            grid.push(shift_at(t, pivot, &grid_anchor, &mut cache)?);
            grid_anchor = fixed_point_on_branch(h, protocol.r(t), &grid_anchor, Some(pivot))?;
        }
        let interp = |t: f64, k: usize| -> (f64, f64, f64) {
            // (A_k, B_k, freq) linearly interpolated on the segment grid.
            let j = match grid_t.binary_search_by(|g| g.total_cmp(&t)) {
                Ok(j) => j.min(grid_t.len() - 1),
                Err(j) => j.clamp(1, grid_t.len() - 1),
            };
            let (j0, j1) = if j == 0 { (0, 0) } else { (j - 1, j) };
            if j0 == j1 || grid_t[j1] == grid_t[j0] {
                return (grid[j0].a[k], grid[j0].b[k], grid[j0].freq);
            }
            let f = ((t - grid_t[j0]) / (grid_t[j1] - grid_t[j0])).clamp(0.0, 1.0);
            (
                grid[j0].a[k] + f * (grid[j1].a[k] - grid[j0].a[k]),
                grid[j0].b[k] + f * (grid[j1].b[k] - grid[j0].b[k]),
                grid[j0].freq + f * (grid[j1].freq - grid[j0].freq),
            )
        };

        let mut prev_dp: Option<f64> = None;
        for i in lo..hi {
            let t = traj.times[i];
            let fp = fixed_point_on_branch(h, protocol.r(t), &anchor, Some(pivot))?;
            anchor = fp.clone();
            dev.pbar[i] = fp.chart.p1();
            dev.qbar[i] = fp.chart.q1();
            let base = chart::angle_diff(traj.p[i], dev.pbar[i]);
            let dp1 = match prev_dp {
                None => base,
                Some(prev) => prev + chart::angle_diff(base, prev),
            };
            prev_dp = Some(dp1);
            let dq1 = traj.q[i] - dev.qbar[i];
            dev.dp[0][i] = dp1;
            dev.dq[0][i] = dq1;
            for k in 0..order {
                let (ak, bk, f) = interp(t, k);
                dev.shift_a[k][i] = ak;
                dev.shift_b[k][i] = bk;
                if k == 0 {
                    dev.freq[i] = f;
                }
                if k + 1 < order {
                    dev.dp[k + 1][i] = dev.dp[k][i] - ak;
                    dev.dq[k + 1][i] = dev.dq[k][i] - bk;
                }
            }
        }
    }

    traj.actions = action_series(&traj, &dev, &seg_starts);
    traj.deviations = Some(dev);
    Ok(traj)
}

/// Lagrange interpolation of a sample series at index position i + frac,
/// using up to four neighbouring nodes within [lo, hi).
fn interp_series(v: &[f64], lo: usize, hi: usize, i: usize, frac: f64) -> f64 {
    if frac == 0.0 {
        return v[i];
    }
    let x = i as f64 + frac;
    let j0 = i.saturating_sub(1).max(lo);
    let j1 = (i + 2).min(hi - 1);
    let mut out = 0.0;
    for a in j0..=j1 {
        let mut w = 1.0;
        for b in j0..=j1 {
            if b != a {
                w *= (x - b as f64) / (a as f64 - b as f64);
            }
        }
        out += w * v[a];
    }
    out
}

/// Windowed action estimates: window boundaries sit at exact multiples of the
/// accumulated linearization phase (interpolated between samples so the
/// polygon closes), and reset at pivot switches. Windows that still fail the
/// closure test keep their shoelace estimate but are flagged open.
fn action_series(traj: &Trajectory, dev: &Deviations, seg_starts: &[usize]) -> Vec<ActionSeries> {
    let n = traj.len();
    let orders = dev.order + 1;
    let mut series: Vec<ActionSeries> = (0..orders)
        .map(|order| ActionSeries {
            order,
            windows: Vec::new(),
        })
        .collect();

    // Pivot-switch boundaries (a protocol discontinuity does not interrupt
    // the orbit, but a pivot change flips coordinate signs).
    let mut resets = vec![0usize];
    for w in seg_starts.windows(2) {
        let i = w[1];
        if i < n && i > 0 && traj.pivot[i] != traj.pivot[i - 1] {
            resets.push(i);
        }
    }
    resets.push(n);
    resets.dedup();

    for rw in resets.windows(2) {
        let (lo, hi) = (rw[0], rw[1]);
        if hi - lo < 3 {
            continue;
        }
        // Phase-crossing boundaries as (sample before, fraction into the
        // next interval).
        let mut bounds: Vec<(usize, f64)> = vec![(lo, 0.0)];
        let mut phase = 0.0;
        let mut target = std::f64::consts::TAU;
        for i in lo + 1..hi {
            let dphi = dev.freq[i] * (traj.times[i] - traj.times[i - 1]).abs();
            if dphi > 0.0 {
                while phase + dphi >= target {
                    bounds.push((i - 1, (target - phase) / dphi));
                    target += std::f64::consts::TAU;
                }
            }
            phase += dphi;
        }

        let coord = |k: usize, j: usize| -> (f64, f64) {
            if k == 0 {
                (dev.dp[0][j], dev.dq[0][j])
            } else {
                (dev.dp[k - 1][j], dev.dq[k - 1][j])
            }
        };
        let point_at = |k: usize, b: (usize, f64)| -> (f64, f64) {
            let src_p = if k == 0 { &dev.dp[0] } else { &dev.dp[k - 1] };
            let src_q = if k == 0 { &dev.dq[0] } else { &dev.dq[k - 1] };
            (
                interp_series(src_p, lo, hi, b.0, b.1),
                interp_series(src_q, lo, hi, b.0, b.1),
            )
        };
        let time_at = |b: (usize, f64)| -> f64 {
            if b.1 == 0.0 || b.0 + 1 >= hi {
                traj.times[b.0]
            } else {
                traj.times[b.0] + b.1 * (traj.times[b.0 + 1] - traj.times[b.0])
            }
        };

        for bw in bounds.windows(2) {
            let (b0, b1) = (bw[0], bw[1]);
            let first_full = if b0.1 == 0.0 { b0.0 } else { b0.0 + 1 };
            for s in series.iter_mut() {
                let k = s.order;
                let mut orbit = Vec::with_capacity(b1.0 - first_full + 3);
                orbit.push(point_at(k, b0));
                for j in first_full + 1..=b1.0 {
                    orbit.push(coord(k, j));
                }
                orbit.push(point_at(k, b1));
                let (value, orientation, closed) = match hierarchy::action_with_orientation(&orbit)
                {
                    Ok((v, o)) => (v, o, true),
                    Err(_) => {
                        let signed = hierarchy::shoelace(&orbit) / std::f64::consts::TAU;
                        (signed.abs(), if signed >= 0.0 { 1 } else { -1 }, false)
                    }
                };
                s.windows.push(ActionWindow {
                    t_start: time_at(b0),
                    t_end: time_at(b1),
                    start_index: first_full,
                    end_index: b1.0,
                    value,
                    orientation,
                    closed,
                });
            }
        }
    }
    series
}

/// Time-weighted mean of a per-sample series over one action window,
/// trapezoidal with linear interpolation at the fractional window ends.
pub fn window_mean(traj: &Trajectory, series: &[f64], w: &ActionWindow) -> f64 {
    let times = &traj.times;
    let n = times.len();
    let value_at = |t: f64, hint: usize| -> f64 {
        let mut i = hint.min(n - 2);
        while i > 0 && times[i] > t {
            i -= 1;
        }
        while i + 2 < n && times[i + 1] < t {
            i += 1;
        }
        let f = ((t - times[i]) / (times[i + 1] - times[i])).clamp(0.0, 1.0);
        series[i] + f * (series[i + 1] - series[i])
    };
    let (s, e) = (w.start_index, w.end_index);
    let mut integral = 0.0;
    // Partial head from the interpolated boundary to the first full sample.
    if w.t_start < times[s] {
        let v0 = value_at(w.t_start, s.saturating_sub(1));
        integral += 0.5 * (v0 + series[s]) * (times[s] - w.t_start);
    }
    for j in s..e {
        integral += 0.5 * (series[j] + series[j + 1]) * (times[j + 1] - times[j]);
    }
    if w.t_end > times[e] {
        let v1 = value_at(w.t_end, e);
        integral += 0.5 * (series[e] + v1) * (w.t_end - times[e]);
    }
    integral / (w.t_end - w.t_start)
}

/// Per-sample infidelity 1 − |⟨ψ(p̄,q̄)|ψ(p,q)⟩|² between the actual state and
/// the instantaneous eigenstate. Requires deviations to be extracted.
pub fn adiabatic_error(traj: &Trajectory) -> Result<Vec<f64>> {
    let dev = traj
        .deviations
        .as_ref()
        .expect("extract deviations before computing the adiabatic error");
    let mut out = Vec::with_capacity(traj.len());
    for i in 0..traj.len() {
        let pivot = traj.pivot[i] as usize;
        let actual = chart::to_wavefunction(&ChartState::pair(traj.p[i], traj.q[i], pivot))?;
        let ideal = chart::to_wavefunction(&ChartState::pair(dev.pbar[i], dev.qbar[i], pivot))?;
        let ov = ideal.overlap_modulus(&actual);
        out.push((1.0 - ov * ov).max(0.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::AnalyticClassical;
    use crate::models::{spin_analytic_solution, LandauZener, SpinRotatingField};
    use num_complex::Complex64;
    use std::f64::consts::TAU;

    fn spin_eigenstate(alpha: f64) -> Wavefunction {
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        Wavefunction::normalized(DVector::from_vec(vec![
            Complex64::new(inv, 0.0),
            Complex64::from_polar(inv, alpha),
        ]))
    }

    #[test]
    fn protocol_shapes_and_derivatives() {
        let sq = Protocol::SquareWaveRate {
            amplitude: 2.0,
            nu: 1.0,
        };
        let half = std::f64::consts::PI;
        assert!((sq.r(0.3) - 0.6).abs() < 1e-14);
        assert!((sq.r(half) - 2.0 * half).abs() < 1e-12);
        assert!((sq.r(2.0 * half) - 0.0).abs() < 1e-12);
        assert_eq!(sq.deriv(1, 0.3), 2.0);
        assert_eq!(sq.deriv(1, half + 0.1), -2.0);
        let discs = sq.discontinuities_in(0.0, 10.0);
        assert_eq!(discs.len(), 3);
        assert!((discs[0] - half).abs() < 1e-12);

        for proto in [
            Protocol::Constant { r0: 0.4 },
            Protocol::Linear {
                r0: 0.0,
                rate: 1e-5,
            },
            Protocol::Quadratic {
                r0: 0.0,
                accel: 7.96e-12,
            },
            sq,
            Protocol::PiecewiseLinear {
                knots: vec![(0.0, 0.0), (1.0, 0.5), (3.0, -0.2)],
            },
        ] {
            proto.validate((0.05, 9.3), 3).unwrap();
        }
    }

    #[test]
    fn eigenstate_is_stationary_in_both_routes() {
        let h = SpinRotatingField { l: 1.0 }.hamiltonian();
        let proto = Protocol::Constant { r0: 0.7 };
        let psi0 = spin_eigenstate(0.7);
        let samples = sample_times(0.0, 50.0, 0.5);
        let opts = IntegrateOptions::default();
        let ts = integrate_schrodinger(&h, &psi0, &proto, (0.0, 50.0), &samples, &opts).unwrap();
        let s0 = chart::to_chart(&psi0, 0).unwrap();
        let capped = opts.with_stability_cap(1.0);
        let th = integrate_hamilton(&h, &s0, &proto, (0.0, 50.0), &samples, &capped).unwrap();
        for traj in [&ts, &th] {
            for i in 0..traj.len() {
                assert!(chart::angle_diff(traj.p[i], 0.7).abs() < 1e-10);
                assert!((traj.q[i] - 0.5).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn spin_linear_protocol_matches_first_order_solution() {
        let (l, omega) = (1.0, 1e-5);
        let h = SpinRotatingField { l }.hamiltonian();
        let proto = Protocol::Linear {
            r0: 0.0,
            rate: omega,
        };
        let psi0 = spin_eigenstate(0.0);
        let t1 = 10.0 / l;
        let samples = sample_times(0.0, t1, TAU / l / 64.0);
        let traj = integrate_schrodinger(
            &h,
            &psi0,
            &proto,
            (0.0, t1),
            &samples,
            &IntegrateOptions::default(),
        )
        .unwrap();
        let traj = extract_deviations(traj, &h, &proto, 1).unwrap();
        let dev = traj.deviations.as_ref().unwrap();
        let bound = 10.0 * (omega / l) * (omega / l);
        for (i, &t) in traj.times.iter().enumerate() {
            let dp_ref = -omega / l * (l * t).sin();
            let dq_ref = omega / (2.0 * l) * (1.0 - (l * t).cos());
            assert!((dev.dp[0][i] - dp_ref).abs() < bound, "dp at t = {t}");
            assert!((dev.dq[0][i] - dq_ref).abs() < bound, "dq at t = {t}");
        }
        // The first-order analytic wavefunction agrees to the same order.
        for (i, &t) in traj.times.iter().enumerate() {
            let ana = chart::to_chart(&spin_analytic_solution(l, omega, t), 0).unwrap();
            assert!(chart::angle_diff(ana.p1(), traj.p[i]).abs() < bound);
            assert!((ana.q1() - traj.q[i]).abs() < bound);
        }
    }

    #[test]
    fn oracle_equivalence_short() {
        let opts = IntegrateOptions::default();
        // Spin under slow rotation, starting slightly off the fixed point.
        let h = SpinRotatingField { l: 1.0 }.hamiltonian();
        let proto = Protocol::Linear {
            r0: 0.0,
            rate: 1e-5,
        };
        let psi0 = Wavefunction::normalized(DVector::from_vec(vec![
            Complex64::new(0.72, 0.0),
            Complex64::new(0.69, 0.05),
        ]));
        let t1 = 10.0 * TAU;
        let samples = sample_times(0.0, t1, TAU / 40.0);
        let ts = integrate_schrodinger(&h, &psi0, &proto, (0.0, t1), &samples, &opts).unwrap();
        let s0 = chart::to_chart(&psi0, 0).unwrap();
        let th = integrate_hamilton(
            &h,
            &s0,
            &proto,
            (0.0, t1),
            &samples,
            &opts.with_stability_cap(1.0),
        )
        .unwrap();
        let d = max_chart_distance(&th, &ts).unwrap();
        assert!(d < 1e-8, "spin distance {d:.3e}");

        // Landau–Zener under a slow sweep.
        let h = LandauZener { x: 1.0 }.hamiltonian();
        let proto = Protocol::Linear {
            r0: -1.0,
            rate: 1e-3,
        };
        let fp = find_fixed_points(&h, -1.0).unwrap()[0].clone();
        let psi0 = Wavefunction::normalized(fp.eigvec.clone());
        let t1 = 10.0 * TAU / (2.0f64).sqrt();
        let samples = sample_times(0.0, t1, TAU / 60.0);
        let ts = integrate_schrodinger(&h, &psi0, &proto, (0.0, t1), &samples, &opts).unwrap();
        let s0 = chart::to_chart(&psi0, fp.chart.pivot).unwrap();
        let th = integrate_hamilton(
            &h,
            &s0,
            &proto,
            (0.0, t1),
            &samples,
            &opts.with_stability_cap(1.5),
        )
        .unwrap();
        let d = max_chart_distance(&th, &ts).unwrap();
        assert!(d < 1e-8, "lz distance {d:.3e}");
    }

    #[test]
    fn global_phase_never_reaches_the_chart() {
        let h = SpinRotatingField { l: 1.0 }.hamiltonian();
        let proto = Protocol::Linear {
            r0: 0.0,
            rate: 1e-5,
        };
        let psi0 = spin_eigenstate(0.0);
        let rotated = Wavefunction::normalized(
            psi0.amplitudes().clone() * Complex64::from_polar(1.0, 1.234567),
        );
        let samples = sample_times(0.0, 40.0, 0.2);
        let opts = IntegrateOptions::default();
        let a = integrate_schrodinger(&h, &psi0, &proto, (0.0, 40.0), &samples, &opts).unwrap();
        let b = integrate_schrodinger(&h, &rotated, &proto, (0.0, 40.0), &samples, &opts).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..a.len() {
            worst = worst.max(chart::angle_diff(a.p[i], b.p[i]).abs());
            worst = worst.max((a.q[i] - b.q[i]).abs());
        }
        assert!(worst < 1e-12, "phase leakage {worst:.3e}");
    }

    #[test]
    fn forward_backward_round_trip() {
        let h = SpinRotatingField { l: 1.0 }.hamiltonian();
        let proto = Protocol::Linear {
            r0: 0.0,
            rate: 1e-5,
        };
        let s0 = ChartState::pair(0.2, 0.45, 0);
        let opts = IntegrateOptions::default().with_stability_cap(1.0);
        let fwd = integrate_hamilton(&h, &s0, &proto, (0.0, 50.0), &[50.0], &opts).unwrap();
        let end = fwd.chart_at(0);
        let back = integrate_hamilton(&h, &end, &proto, (50.0, 0.0), &[0.0], &opts).unwrap();
        let s_back = back.chart_at(0);
        assert!(s_back.distance(&s0) < 1e-8);
    }

    #[test]
    fn norm_drift_rejects_loose_tolerance() {
        let h = SpinRotatingField { l: 1.0 }.hamiltonian();
        let proto = Protocol::Constant { r0: 0.0 };
        // Not an eigenstate, so the phases actually evolve.
        let psi0 = Wavefunction::normalized(DVector::from_vec(vec![
            Complex64::new(0.9, 0.0),
            Complex64::new(0.4358898943540674, 0.0),
        ]));
        let opts = IntegrateOptions {
            rel_tol: 1e-6,
            abs_tol: 1e-6,
            max_steps: 100_000,
            ..Default::default()
        };
        let out = integrate_schrodinger(&h, &psi0, &proto, (0.0, 2000.0), &[2000.0], &opts);
        assert!(matches!(out, Err(Error::NormDrift { .. })), "{out:?}");
    }

    #[test]
    fn chart_singularity_detected() {
        // dq/dt = p with p decreasing: q is driven through zero.
        let toy = ParametricHamiltonian::from_classical(
            2,
            AnalyticClassical {
                pivot: 0,
                value: Box::new(|s: &ChartState, _| 0.5 * s.p1() * s.p1() + 0.01 * s.q1()),
                gradient: None,
                hessian: None,
                fixed_points: None,
            },
        );
        let s0 = ChartState::pair(-0.01, 0.05, 0);
        let proto = Protocol::Constant { r0: 0.0 };
        let out = integrate_hamilton(
            &toy,
            &s0,
            &proto,
            (0.0, 100.0),
            &[100.0],
            &IntegrateOptions::default(),
        );
        assert!(
            matches!(out, Err(Error::ChartSingularity { .. })),
            "{out:?}"
        );
    }

    #[test]
    fn step_underflow_at_finite_time_blowup() {
        // H = p/(0.5 − q) drives q into the interior pole in finite time;
        // the adaptive step collapses before any population margin trips.
        let toy = ParametricHamiltonian::from_classical(
            2,
            AnalyticClassical {
                pivot: 0,
                value: Box::new(|s: &ChartState, _| s.p1() / (0.5 - s.q1())),
                gradient: Some(Box::new(|s: &ChartState, _| {
                    let d = 0.5 - s.q1();
                    (
                        DVector::from_vec(vec![1.0 / d]),
                        DVector::from_vec(vec![s.p1() / (d * d)]),
                    )
                })),
                hessian: None,
                fixed_points: None,
            },
        );
        let s0 = ChartState::pair(0.1, 0.4, 0);
        let out = integrate_hamilton(
            &toy,
            &s0,
            &Protocol::Constant { r0: 0.0 },
            (0.0, 10.0),
            &[10.0],
            &IntegrateOptions::default(),
        );
        assert!(
            matches!(
                out,
                Err(Error::StepUnderflow { .. }) | Err(Error::StepLimit { .. })
            ),
            "{out:?}"
        );
    }

    #[test]
    fn eigenstate_deviations_vanish_at_all_orders() {
        let h = LandauZener { x: 1.0 }.hamiltonian();
        let proto = Protocol::Constant { r0: 0.3 };
        let fp = find_fixed_points(&h, 0.3).unwrap()[0].clone();
        let psi0 = Wavefunction::normalized(fp.eigvec.clone());
        let samples = sample_times(0.0, 30.0, 0.25);
        let traj = integrate_schrodinger(
            &h,
            &psi0,
            &proto,
            (0.0, 30.0),
            &samples,
            &IntegrateOptions::default(),
        )
        .unwrap();
        let traj = extract_deviations(traj, &h, &proto, 2).unwrap();
        let dev = traj.deviations.as_ref().unwrap();
        assert_eq!(dev.branch, 0);
        for k in 0..2 {
            for i in 0..traj.len() {
                assert!(dev.dp[k][i].abs() < 1e-10 && dev.dq[k][i].abs() < 1e-10);
            }
        }
        let err = adiabatic_error(&traj).unwrap();
        assert!(err.iter().all(|&e| e < 1e-12));
    }

    #[test]
    fn spin_protocol_one_center_and_action() {
        let (l, omega) = (1.0, 1e-5);
        let h = SpinRotatingField { l }.hamiltonian();
        let proto = Protocol::Linear {
            r0: 0.0,
            rate: omega,
        };
        let psi0 = spin_eigenstate(0.0);
        let t1 = 20.0 * TAU / l;
        let samples = sample_times(0.0, t1, TAU / l / 64.0);
        let traj = integrate_schrodinger(
            &h,
            &psi0,
            &proto,
            (0.0, t1),
            &samples,
            &IntegrateOptions::default(),
        )
        .unwrap();
        let traj = extract_deviations(traj, &h, &proto, 2).unwrap();
        let dev = traj.deviations.as_ref().unwrap();

        // Shift prediction matches the closed form everywhere.
        let b1 = omega / (2.0 * l);
        for i in 0..traj.len() {
            assert!(dev.shift_a[0][i].abs() < 1e-12);
            assert!((dev.shift_b[0][i] - b1).abs() < 1e-12);
        }

        // Measured orbit center over full cycles sits on (A₁, B₁) within 1%.
        let i1_series: Vec<&ActionWindow> = traj.actions[1].windows.iter().collect();
        assert!(i1_series.len() >= 15);
        for w in &i1_series {
            assert!(w.closed, "window at t = {} not closed", w.t_start);
            let mean_dp = window_mean(&traj, &dev.dp[0], w);
            let mean_dq = window_mean(&traj, &dev.dq[0], w);
            assert!(mean_dp.abs() < 0.01 * omega / l);
            assert!((mean_dq - b1).abs() < 0.01 * b1);
            // The action equals ω²/4L² within 2%.
            let i1_ref = omega * omega / (4.0 * l * l);
            assert!(
                (w.value - i1_ref).abs() < 0.02 * i1_ref,
                "I1 = {} vs {}",
                w.value,
                i1_ref
            );
        }
        let values: Vec<f64> = i1_series.iter().map(|w| w.value).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let drift = (values.iter().cloned().fold(f64::MIN, f64::max)
            - values.iter().cloned().fold(f64::MAX, f64::min))
            / mean;
        assert!(drift < 0.01, "I1 drift {drift:.3e}");

        // Deviation identity: δ²  = δ − (A₁, B₁).
        for i in 0..traj.len() {
            assert!((dev.dp[1][i] - (dev.dp[0][i] - dev.shift_a[0][i])).abs() < 1e-15);
            assert!((dev.dq[1][i] - (dev.dq[0][i] - dev.shift_b[0][i])).abs() < 1e-15);
        }

        // Mean infidelity sits within a factor 4 of α̇²/4L².
        let err = adiabatic_error(&traj).unwrap();
        let mean_err = err.iter().sum::<f64>() / err.len() as f64;
        let plateau = omega * omega / (4.0 * l * l);
        assert!(mean_err < 4.0 * plateau && mean_err > plateau / 4.0);
    }

    #[test]
    fn square_wave_rate_breaks_adiabaticity() {
        let (l, omega) = (1.0, 1e-5);
        let h = SpinRotatingField { l }.hamiltonian();
        let proto = Protocol::SquareWaveRate {
            amplitude: omega,
            nu: 1.0,
        };
        let psi0 = spin_eigenstate(0.0);
        let t1 = 2000.0;
        let samples = sample_times(0.0, t1, TAU / l / 40.0);
        let traj = integrate_hamilton(
            &h,
            &chart::to_chart(&psi0, 0).unwrap(),
            &proto,
            (0.0, t1),
            &samples,
            &IntegrateOptions::default().with_stability_cap(1.0),
        )
        .unwrap();
        let traj = extract_deviations(traj, &h, &proto, 1).unwrap();
        let dev = traj.deviations.as_ref().unwrap();
        let max_dq = dev.dq[0].iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(
            max_dq > 100.0 * omega / l,
            "max |δq| = {max_dq:.3e} did not grow"
        );
        // The zeroth-order action is not conserved.
        let i0: Vec<f64> = traj.actions[0].windows.iter().map(|w| w.value).collect();
        let (lo, hi) = (
            i0.iter().cloned().fold(f64::MAX, f64::min),
            i0.iter().cloned().fold(f64::MIN, f64::max),
        );
        let mean = i0.iter().sum::<f64>() / i0.len() as f64;
        assert!((hi - lo) / mean > 0.1, "I0 variation too small");
    }
}
