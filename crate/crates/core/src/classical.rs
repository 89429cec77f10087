//! Classical form of a parametric quantum Hamiltonian.
//!
//! The expectation value H₀(p, q; R) = ⟨ψ(p,q)|Ĥ₀(R)|ψ(p,q)⟩ turns the
//! Schrödinger flow into Hamilton's equations on the chart. Energy
//! eigenstates become fixed points of that flow, and the second partials of
//! H₀ assemble into the Γ matrix that governs the linearized motion around
//! them.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::chart::{self, ChartState, Wavefunction};
use crate::diff;
use crate::error::{Error, Result};

/// Minimal eigenvalue gap below which the hierarchy is declared undefined.
pub const DEGENERACY_FLOOR: f64 = 1e-8;
/// Residual bound for the Hamilton vector field at a fixed point.
pub const FP_TOLERANCE: f64 = 1e-10;
/// Chart distance past which branch continuity is considered broken.
pub const CONTINUITY_BOUND: f64 = 0.1;
/// Richardson disagreement bound for numeric derivatives of H₀.
pub const DERIVATIVE_BOUND: f64 = 1e-6;

type MatrixGen = Box<dyn Fn(f64) -> DMatrix<Complex64> + Send + Sync>;
type ValueFn = Box<dyn Fn(&ChartState, f64) -> f64 + Send + Sync>;
type GradientFn = Box<dyn Fn(&ChartState, f64) -> (DVector<f64>, DVector<f64>) + Send + Sync>;
type HessianFn = Box<dyn Fn(&ChartState, f64) -> HessianBlocks + Send + Sync>;
type FixedPointFn = Box<dyn Fn(f64, usize) -> (f64, f64) + Send + Sync>;

/// Second partials of H₀ grouped by canonical block.
#[derive(Debug, Clone)]
pub struct HessianBlocks {
    /// ∂²H/∂p_i∂p_j
    pub pp: DMatrix<f64>,
    /// ∂²H/∂p_i∂q_j
    pub pq: DMatrix<f64>,
    /// ∂²H/∂q_i∂q_j
    pub qq: DMatrix<f64>,
}

impl HessianBlocks {
    pub fn pair(pp: f64, pq: f64, qq: f64) -> Self {
        Self {
            pp: DMatrix::from_element(1, 1, pp),
            pq: DMatrix::from_element(1, 1, pq),
            qq: DMatrix::from_element(1, 1, qq),
        }
    }
}

/// Closed-form classical data a model can attach next to its matrix
/// generator. All closures are expressed in the chart with the given pivot.
pub struct AnalyticClassical {
    pub pivot: usize,
    pub value: ValueFn,
    pub gradient: Option<GradientFn>,
    pub hessian: Option<HessianFn>,
    /// Fixed points by branch index (ascending energy), as a single canonical
    /// pair. Only meaningful for two-level models.
    pub fixed_points: Option<FixedPointFn>,
}

/// R-dependent Hermitian generator plus optional closed-form classical data.
pub struct ParametricHamiltonian {
    dim: usize,
    matrix: Option<MatrixGen>,
    analytic: Option<AnalyticClassical>,
}

impl ParametricHamiltonian {
    /// Hamiltonian defined by its matrix generator alone; every classical
    /// quantity is derived numerically.
    pub fn from_matrix(dim: usize, matrix: MatrixGen) -> Self {
        assert!(dim >= 2);
        Self {
            dim,
            matrix: Some(matrix),
            analytic: None,
        }
    }

    /// Synthetic phase-space Hamiltonian with no quantum generator. Spectral
    /// operations are unavailable on it.
    pub fn from_classical(dim: usize, analytic: AnalyticClassical) -> Self {
        assert!(dim >= 2);
        Self {
            dim,
            matrix: None,
            analytic: Some(analytic),
        }
    }

    /// Matrix generator together with closed forms. The two descriptions are
    /// cross-validated on a deterministic grid of states at the probe R
    /// values: hermiticity to 1e-12, value agreement to 1e-10.
    pub fn from_parts(
        dim: usize,
        matrix: MatrixGen,
        analytic: AnalyticClassical,
        probe_rs: &[f64],
    ) -> Self {
        assert!(dim >= 2);
        let h = Self {
            dim,
            matrix: Some(matrix),
            analytic: Some(analytic),
        };
        for &r in probe_rs {
            let m = h.matrix_at(r).unwrap();
            let drift = (&m - m.adjoint()).norm();
            assert!(
                drift <= 1e-12,
                "generator not Hermitian at R = {r}: {drift:.3e}"
            );
            for s in probe_states(dim, h.analytic.as_ref().unwrap().pivot) {
                let via_matrix = h.expectation(&s, r).unwrap();
                let via_form = (h.analytic.as_ref().unwrap().value)(&s, r);
                assert!(
                    (via_matrix - via_form).abs() <= 1e-10,
                    "closed form disagrees with expectation at R = {r}: {via_matrix} vs {via_form}"
                );
            }
        }
        h
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_matrix(&self) -> bool {
        self.matrix.is_some()
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.analytic.as_ref().is_some_and(|a| a.gradient.is_some())
    }

    pub fn has_analytic_fixed_points(&self) -> bool {
        self.analytic
            .as_ref()
            .is_some_and(|a| a.fixed_points.is_some())
    }

    pub fn matrix_at(&self, r: f64) -> Result<DMatrix<Complex64>> {
        match &self.matrix {
            Some(gen) => Ok(gen(r)),
            None => Err(Error::NoMatrixGenerator),
        }
    }

    /// ⟨ψ(s)|Ĥ₀(R)|ψ(s)⟩ through explicit reconstruction.
    fn expectation(&self, s: &ChartState, r: f64) -> Result<f64> {
        let m = self.matrix_at(r)?;
        let psi = chart::to_wavefunction(s)?;
        let v = psi.amplitudes();
        let e = v.dotc(&(&m * v));
        debug_assert!(e.im.abs() < 1e-12, "expectation not real: {e}");
        Ok(e.re)
    }

    /// Adapt a state into the analytic chart if the closed forms can serve
    /// it; returns the state expressed in the analytic pivot plus a sign for
    /// first-derivative quantities ((p,q) → (−p, 1−q) flips gradients).
    fn analytic_frame(&self, s: &ChartState) -> Option<(ChartState, f64)> {
        let a = self.analytic.as_ref()?;
        if s.pivot == a.pivot {
            return Some((s.clone(), 1.0));
        }
        if self.dim == 2 {
            let (p, q) = chart::swap_pivot_pair(s.p1(), s.q1());
            return Some((ChartState::pair(p, q, a.pivot), -1.0));
        }
        None
    }

    /// The classical Hamiltonian value at a chart point.
    pub fn value(&self, s: &ChartState, r: f64) -> Result<f64> {
        if let Some((sa, _)) = self.analytic_frame(s) {
            let a = self.analytic.as_ref().unwrap();
            return Ok((a.value)(&sa, r));
        }
        self.expectation(s, r)
    }

    /// Value function used by the numeric derivative paths; prefers the
    /// closed form when one exists for this pivot.
    fn value_fn(&self, pivot: usize, r: f64) -> impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + '_ {
        move |p: &DVector<f64>, q: &DVector<f64>| {
            let s = ChartState::new_unchecked(p.clone(), q.clone(), pivot);
            self.value(&s, r).expect("value evaluation")
        }
    }
}

/// Distance from q_i (and the pivot population) to the coordinate boundary;
/// finite-difference probes must stay inside it.
fn q_room(s: &ChartState, i: usize) -> f64 {
    s.q[i]
        .min(1.0 - s.q[i])
        .min(s.pivot_population())
        .max(1e-12)
}

/// H₀ behaves like √q near the population boundary, so probe steps must be a
/// small fraction of the boundary distance for the stencils to converge
/// there (relative truncation goes as (h/room)⁴).
const Q_ROOM_FRACTION: f64 = 1.0 / 80.0;

/// The classical Hamiltonian H₀(p, q; R) = ⟨ψ|Ĥ₀(R)|ψ⟩.
pub fn classical_hamiltonian(h: &ParametricHamiltonian, s: &ChartState, r: f64) -> Result<f64> {
    h.value(s, r)
}

/// Partial derivatives (∂H₀/∂p_i, ∂H₀/∂q_i), analytic when supplied and
/// otherwise by Richardson-extrapolated central differences.
pub fn gradient(
    h: &ParametricHamiltonian,
    s: &ChartState,
    r: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if h.has_analytic_gradient() {
        if let Some((sa, sign)) = h.analytic_frame(s) {
            let a = h.analytic.as_ref().unwrap();
            let (dp, dq) = (a.gradient.as_ref().unwrap())(&sa, r);
            return Ok((sign * dp, sign * dq));
        }
    }
    gradient_numeric(h, s, r)
}

/// Finite-difference gradient, available regardless of closed forms.
pub fn gradient_numeric(
    h: &ParametricHamiltonian,
    s: &ChartState,
    r: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = s.pairs();
    let f = h.value_fn(s.pivot, r);
    let mut dp = DVector::zeros(m);
    let mut dq = DVector::zeros(m);
    for i in 0..m {
        let est = diff::derivative(
            |x| {
                let mut p = s.p.clone();
                p[i] = x;
                f(&p, &s.q)
            },
            s.p[i],
            diff::step_first(s.p[i]),
        );
        dp[i] = est.checked(DERIVATIVE_BOUND)?;
        let hq = diff::step_first(s.q[i]).min(q_room(s, i) * Q_ROOM_FRACTION);
        let est = diff::derivative(
            |x| {
                let mut q = s.q.clone();
                q[i] = x;
                f(&s.p, &q)
            },
            s.q[i],
            hq,
        );
        dq[i] = est.checked(DERIVATIVE_BOUND)?;
    }
    Ok((dp, dq))
}

/// Second partials of H₀ at a chart point, as canonical blocks.
pub fn hessian(h: &ParametricHamiltonian, s: &ChartState, r: f64) -> Result<HessianBlocks> {
    if let Some((sa, _)) = h.analytic_frame(s) {
        let a = h.analytic.as_ref().unwrap();
        if let Some(hess) = a.hessian.as_ref() {
            // Second derivatives are invariant under the pivot swap (the
            // Jacobian is −1 in both variables).
            return Ok(hess(&sa, r));
        }
    }
    hessian_numeric(h, s, r)
}

/// Finite-difference Hessian with widened steps and Richardson control.
pub fn hessian_numeric(h: &ParametricHamiltonian, s: &ChartState, r: f64) -> Result<HessianBlocks> {
    let m = s.pairs();
    let f = h.value_fn(s.pivot, r);
    let mut pp = DMatrix::zeros(m, m);
    let mut pq = DMatrix::zeros(m, m);
    let mut qq = DMatrix::zeros(m, m);
    let at = |p: &DVector<f64>, q: &DVector<f64>| f(p, q);
    for i in 0..m {
        let est = diff::second_derivative(
            |x| {
                let mut p = s.p.clone();
                p[i] = x;
                at(&p, &s.q)
            },
            s.p[i],
            diff::step_second(s.p[i]),
        );
        pp[(i, i)] = est.checked(DERIVATIVE_BOUND)?;
        let hq = diff::step_second(s.q[i]).min(q_room(s, i) * Q_ROOM_FRACTION);
        let est = diff::second_derivative(
            |x| {
                let mut q = s.q.clone();
                q[i] = x;
                at(&s.p, &q)
            },
            s.q[i],
            hq,
        );
        qq[(i, i)] = est.checked(DERIVATIVE_BOUND)?;
        for j in 0..m {
            let hm = diff::step_second(s.p[i])
                .min(diff::step_second(s.q[j]))
                .min(q_room(s, j) * Q_ROOM_FRACTION);
            let est = diff::mixed_derivative_at(
                |x, y| {
                    let mut p = s.p.clone();
                    let mut q = s.q.clone();
                    p[i] = x;
                    q[j] = y;
                    at(&p, &q)
                },
                s.p[i],
                s.q[j],
                hm,
            );
            pq[(i, j)] = est.checked(DERIVATIVE_BOUND)?;
            if j > i {
                let est = diff::mixed_derivative(
                    |x, y| {
                        let mut p = s.p.clone();
                        p[i] = x;
                        p[j] = y;
                        at(&p, &s.q)
                    },
                    s.p[i],
                    s.p[j],
                );
                pp[(i, j)] = est.checked(DERIVATIVE_BOUND)?;
                pp[(j, i)] = pp[(i, j)];
                let hm = diff::step_second(s.q[i])
                    .min(diff::step_second(s.q[j]))
                    .min(q_room(s, i).min(q_room(s, j)) * Q_ROOM_FRACTION);
                let est = diff::mixed_derivative_at(
                    |x, y| {
                        let mut q = s.q.clone();
                        q[i] = x;
                        q[j] = y;
                        at(&s.p, &q)
                    },
                    s.q[i],
                    s.q[j],
                    hm,
                );
                qq[(i, j)] = est.checked(DERIVATIVE_BOUND)?;
                qq[(j, i)] = qq[(i, j)];
            }
        }
    }
    Ok(HessianBlocks { pp, pq, qq })
}

/// The 2(n−1)×2(n−1) linearization matrix of the Hamilton flow.
#[derive(Debug, Clone)]
pub struct GammaMatrix {
    pub entries: DMatrix<f64>,
    pub eval_point: ChartState,
    pub r: f64,
}

impl GammaMatrix {
    pub fn from_blocks(blocks: &HessianBlocks, eval_point: ChartState, r: f64) -> Self {
        let m = blocks.pp.nrows();
        let mut g = DMatrix::zeros(2 * m, 2 * m);
        // d/dt (δp; δq) = Γ (δp; δq):
        //   δp row: −H_qp δp − H_qq δq, with H_qp = (H_pq)ᵀ
        //   δq row:  H_pp δp + H_pq δq
        g.view_mut((0, 0), (m, m))
            .copy_from(&(-blocks.pq.transpose()));
        g.view_mut((0, m), (m, m)).copy_from(&(-&blocks.qq));
        g.view_mut((m, 0), (m, m)).copy_from(&blocks.pp);
        g.view_mut((m, m), (m, m)).copy_from(&blocks.pq);
        Self {
            entries: g,
            eval_point,
            r,
        }
    }

    pub fn det(&self) -> f64 {
        self.entries.determinant()
    }

    /// Inverse, failing when the determinant sits at the degeneracy floor.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        if self.det().abs() <= DEGENERACY_FLOOR {
            return Err(Error::DegenerateSpectrum {
                r: self.r,
                gap: self.det().abs(),
                floor: DEGENERACY_FLOOR,
            });
        }
        Ok(self
            .entries
            .clone()
            .try_inverse()
            .expect("determinant checked above"))
    }

    /// Frequency scale of the linearized motion, |det Γ|^(1/(2m)). For one
    /// canonical pair this is √|det Γ|.
    pub fn frequency_scale(&self) -> f64 {
        let m = self.entries.nrows();
        self.det().abs().powf(1.0 / m as f64)
    }
}

/// Γ evaluated at an arbitrary chart point.
pub fn gamma_at(h: &ParametricHamiltonian, s: &ChartState, r: f64) -> Result<GammaMatrix> {
    let blocks = hessian(h, s, r)?;
    Ok(GammaMatrix::from_blocks(&blocks, s.clone(), r))
}

/// Γ from the pure finite-difference path, for cross-validation.
pub fn gamma_at_numeric(h: &ParametricHamiltonian, s: &ChartState, r: f64) -> Result<GammaMatrix> {
    let blocks = hessian_numeric(h, s, r)?;
    Ok(GammaMatrix::from_blocks(&blocks, s.clone(), r))
}

/// A fixed point of the classical flow: the image of one energy eigenstate.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub chart: ChartState,
    pub r: f64,
    /// Branch label: index into the ascending eigenvalue order at the R where
    /// the branch was first located, carried by continuity afterwards.
    pub branch: usize,
    pub energy: f64,
    /// Eigenvector representative, kept for continuity matching.
    pub eigvec: DVector<Complex64>,
}

impl FixedPoint {
    /// ‖Ĥ₀ v − E v‖ for the stored representative.
    pub fn eigen_residual(&self, h: &ParametricHamiltonian) -> Result<f64> {
        let m = h.matrix_at(self.r)?;
        Ok((&m * &self.eigvec - self.eigvec.scale(self.energy)).norm())
    }
}

fn eigen_sorted(h: &ParametricHamiltonian, r: f64) -> Result<Vec<(f64, DVector<Complex64>)>> {
    let m = h.matrix_at(r)?;
    let se = m.symmetric_eigen();
    let mut pairs: Vec<(f64, DVector<Complex64>)> = se
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, se.eigenvectors.column(i).into_owned()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut min_gap = f64::INFINITY;
    for w in pairs.windows(2) {
        min_gap = min_gap.min(w[1].0 - w[0].0);
    }
    if min_gap <= DEGENERACY_FLOOR {
        return Err(Error::DegenerateSpectrum {
            r,
            gap: min_gap,
            floor: DEGENERACY_FLOOR,
        });
    }
    Ok(pairs)
}

/// All instantaneous fixed points at R, one per eigenstate, branch-labelled
/// by ascending energy.
pub fn find_fixed_points(h: &ParametricHamiltonian, r: f64) -> Result<Vec<FixedPoint>> {
    if let Some(fps) = analytic_fixed_points(h, r) {
        return Ok(fps);
    }
    let pairs = eigen_sorted(h, r)?;
    pairs
        .into_iter()
        .enumerate()
        .map(|(branch, (energy, v))| {
            let psi = Wavefunction::normalized(v.clone());
            let pivot = psi.dominant_component();
            Ok(FixedPoint {
                chart: chart::to_chart(&psi, pivot)?,
                r,
                branch,
                energy,
                eigvec: v,
            })
        })
        .collect()
}

fn analytic_fixed_points(h: &ParametricHamiltonian, r: f64) -> Option<Vec<FixedPoint>> {
    let a = h.analytic.as_ref()?;
    let fp_fn = a.fixed_points.as_ref()?;
    if h.dim != 2 {
        return None;
    }
    let mut out = Vec::with_capacity(2);
    for branch in 0..2 {
        let (p, q) = fp_fn(r, branch);
        let fp = fixed_point_from_pair(h, r, branch, p, q, a.pivot).ok()?;
        out.push(fp);
    }
    Some(out)
}

fn fixed_point_from_pair(
    h: &ParametricHamiltonian,
    r: f64,
    branch: usize,
    p: f64,
    q: f64,
    pivot: usize,
) -> Result<FixedPoint> {
    // Pivot on the dominant component, matching the eigendecomposition path.
    let (chart_state, psi) = if q > 0.5 && pivot == 0 {
        let (p1, q1) = chart::swap_pivot_pair(p, q);
        let s = ChartState::pair(p1, q1, 1);
        let psi = chart::to_wavefunction(&s)?;
        (s, psi)
    } else {
        let s = ChartState::pair(p, q, pivot);
        let psi = chart::to_wavefunction(&s)?;
        (s, psi)
    };
    let energy = h.value(&chart_state, r)?;
    Ok(FixedPoint {
        chart: chart_state,
        r,
        branch,
        energy,
        eigvec: psi.amplitudes().clone(),
    })
}

/// Re-locate a tracked branch at a new R, matching by maximal overlap with
/// the previous eigenvector and keeping the previous pivot where possible.
pub fn track_fixed_point(
    h: &ParametricHamiltonian,
    prev: &FixedPoint,
    r: f64,
) -> Result<FixedPoint> {
    let fp = fixed_point_on_branch(h, r, prev, None)?;
    let d = chart_distance_any_pivot(&fp.chart, &prev.chart)?;
    if d > CONTINUITY_BOUND {
        return Err(Error::BranchJump {
            r_from: prev.r,
            r_to: r,
            distance: d,
            bound: CONTINUITY_BOUND,
        });
    }
    Ok(fp)
}

fn chart_distance_any_pivot(a: &ChartState, b: &ChartState) -> Result<f64> {
    if a.pivot == b.pivot {
        Ok(a.distance(b))
    } else {
        Ok(chart::repivot_forced(a, b.pivot)?.distance(b))
    }
}

/// Locate the fixed point on `anchor`'s branch at R, optionally forcing the
/// chart pivot (needed when differencing across nearby R values).
pub fn fixed_point_on_branch(
    h: &ParametricHamiltonian,
    r: f64,
    anchor: &FixedPoint,
    pivot: Option<usize>,
) -> Result<FixedPoint> {
    if h.has_analytic_fixed_points() && h.dim == 2 {
        let a = h.analytic.as_ref().unwrap();
        let (p, q) = (a.fixed_points.as_ref().unwrap())(r, anchor.branch);
        let mut fp = fixed_point_from_pair(h, r, anchor.branch, p, q, a.pivot)?;
        if let Some(pv) = pivot {
            if fp.chart.pivot != pv {
                fp.chart = chart::repivot_forced(&fp.chart, pv)?;
            }
        }
        return Ok(fp);
    }
    let pairs = eigen_sorted(h, r)?;
    let (_, (energy, v)) = pairs
        .into_iter()
        .enumerate()
        .max_by(|(_, (_, va)), (_, (_, vb))| {
            let oa = va.dotc(&anchor.eigvec).norm();
            let ob = vb.dotc(&anchor.eigvec).norm();
            oa.total_cmp(&ob)
        })
        .expect("non-empty spectrum");
    let psi = Wavefunction::normalized(v.clone());
    let chart_state = match pivot {
        Some(pv) => chart::to_chart_forced(&psi, pv)?,
        None => chart::to_chart(&psi, chart::select_pivot(&psi, anchor.chart.pivot)?)?,
    };
    Ok(FixedPoint {
        chart: chart_state,
        r,
        branch: anchor.branch,
        energy,
        eigvec: v,
    })
}

/// d(p̄, q̄)/dR along a tracked branch, by Richardson-extrapolated central
/// differences with branch continuity and angle unwrapping enforced at every
/// stencil point. Uses the closed-form branch when the model provides one.
pub fn fixed_point_r_derivative(
    h: &ParametricHamiltonian,
    fp: &FixedPoint,
    r: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = fp.chart.pairs();
    let step = diff::step_first(r);
    let pivot = fp.chart.pivot;
    let eval = |rr: f64| -> Result<(DVector<f64>, DVector<f64>)> {
        let f = fixed_point_on_branch(h, rr, fp, Some(pivot))?;
        let d = f.chart.distance(&fp.chart);
        if d > CONTINUITY_BOUND {
            return Err(Error::BranchJump {
                r_from: r,
                r_to: rr,
                distance: d,
                bound: CONTINUITY_BOUND,
            });
        }
        // Unwrap each angle to the branch anchor so differencing never
        // crosses the cut.
        let mut p = f.chart.p.clone();
        for i in 0..m {
            p[i] = fp.chart.p[i] + chart::angle_diff(p[i], fp.chart.p[i]);
        }
        Ok((p, f.chart.q.clone()))
    };
    // Five-point stencil values at r ± 2h, ±h, plus the halved pair.
    let mut dp = DVector::zeros(m);
    let mut dq = DVector::zeros(m);
    for i in 0..m {
        let fi_p = |rr: f64| eval(rr).map(|(p, _)| p[i]);
        let fi_q = |rr: f64| eval(rr).map(|(_, q)| q[i]);
        dp[i] = derivative_fallible(&fi_p, r, step)?;
        dq[i] = derivative_fallible(&fi_q, r, step)?;
    }
    Ok((dp, dq))
}

/// Richardson first derivative of a fallible function, levels at h and 2h.
fn derivative_fallible<F: Fn(f64) -> Result<f64>>(f: &F, x: f64, h: f64) -> Result<f64> {
    let stencil = |hh: f64| -> Result<f64> {
        Ok(
            (f(x - 2.0 * hh)? - 8.0 * f(x - hh)? + 8.0 * f(x + hh)? - f(x + 2.0 * hh)?)
                / (12.0 * hh),
        )
    };
    let fine = stencil(h)?;
    let coarse = stencil(2.0 * h)?;
    diff::Estimate {
        value: (16.0 * fine - coarse) / 15.0,
        error: (fine - coarse).abs() / 15.0,
    }
    .checked(DERIVATIVE_BOUND)
}

/// Deterministic probe states used by the construction-time cross-check.
fn probe_states(dim: usize, pivot: usize) -> Vec<ChartState> {
    let m = dim - 1;
    let mut out = Vec::new();
    for t in 0..24 {
        let mut p = DVector::zeros(m);
        let mut q = DVector::zeros(m);
        for i in 0..m {
            let u = ((0.619 * t as f64 + 0.271 * i as f64).fract() * 0.84 + 0.08) / m as f64;
            p[i] = chart::wrap_angle(0.37 + 1.9 * t as f64 + 0.83 * i as f64);
            q[i] = u;
        }
        out.push(ChartState::new(p, q, pivot).expect("probe populations in range"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LandauZener, SpinRotatingField};
    use std::f64::consts::PI;

    #[test]
    fn spin_value_examples() {
        let h = SpinRotatingField { l: 1.0 }.hamiltonian();
        let alpha = 0.3;
        let s = ChartState::pair(alpha, 0.5, 0);
        assert!((classical_hamiltonian(&h, &s, alpha).unwrap() - 0.5).abs() < 1e-12);
        for q in [1e-15, 1.0 - 1e-15] {
            let s = ChartState::pair(1.0, q, 0);
            assert!(classical_hamiltonian(&h, &s, alpha).unwrap().abs() < 1e-7);
        }
    }

    #[test]
    fn lz_value_example() {
        let h = LandauZener { x: 1.0 }.hamiltonian();
        for q in [0.2, 0.5, 0.77] {
            let s = ChartState::pair(PI, q, 0);
            let expect = -(q - q * q).sqrt();
            assert!((classical_hamiltonian(&h, &s, 0.0).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_spin_example() {
        let h = SpinRotatingField { l: 1.0 }.hamiltonian();
        let alpha = 0.8;
        // At the fixed point the vector field vanishes.
        let s = ChartState::pair(alpha, 0.5, 0);
        let (dp, dq) = gradient(&h, &s, alpha).unwrap();
        assert!(dp[0].abs() < FP_TOLERANCE && dq[0].abs() < FP_TOLERANCE);
        // Off the fixed point: dH/dq = (1-2q)/(2 sqrt(q-q^2)) at p = alpha.
        let s = ChartState::pair(alpha, 0.25, 0);
        let (_, dq) = gradient(&h, &s, alpha).unwrap();
        assert!((dq[0] - 0.5 / (2.0 * 0.1875f64.sqrt())).abs() < 1e-10);
        let (_, dq_fd) = gradient_numeric(&h, &s, alpha).unwrap();
        assert!((dq_fd[0] - dq[0]).abs() < 1e-8);
    }

    #[test]
    fn gradient_lz_zero_at_p_pi() {
        let h = LandauZener { x: 1.0 }.hamiltonian();
        let s = ChartState::pair(PI, 0.37, 0);
        let (dp, _) = gradient(&h, &s, 0.4).unwrap();
        assert!(dp[0].abs() < 1e-10);
    }

    #[test]
    fn gamma_spin_fixed_point() {
        let h = SpinRotatingField { l: 1.0 }.hamiltonian();
        let alpha = 0.3;
        let s = ChartState::pair(alpha, 0.5, 0);
        for g in [
            gamma_at(&h, &s, alpha).unwrap(),
            gamma_at_numeric(&h, &s, alpha).unwrap(),
        ] {
            assert!((g.entries[(0, 0)]).abs() < 1e-8);
            assert!((g.entries[(0, 1)] - 2.0).abs() < 1e-8);
            assert!((g.entries[(1, 0)] + 0.5).abs() < 1e-8);
            assert!((g.entries[(1, 1)]).abs() < 1e-8);
            assert!((g.det() - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn gamma_quadratic_toy_exact() {
        // H = a q²/2 + b p²/2 has constant Γ = [[0, −a], [b, 0]].
        let (a, b) = (1.7, 0.4);
        let toy = ParametricHamiltonian::from_classical(
            2,
            AnalyticClassical {
                pivot: 0,
                value: Box::new(move |s: &ChartState, _| {
                    0.5 * a * s.q1() * s.q1() + 0.5 * b * s.p1() * s.p1()
                }),
                gradient: None,
                hessian: None,
                fixed_points: None,
            },
        );
        let s = ChartState::pair(0.21, 0.4, 0);
        let g = gamma_at(&toy, &s, 0.0).unwrap();
        assert!((g.entries[(0, 1)] + a).abs() < 1e-9);
        assert!((g.entries[(1, 0)] - b).abs() < 1e-9);
        assert!(g.entries[(0, 0)].abs() < 1e-9 && g.entries[(1, 1)].abs() < 1e-9);
    }

    #[test]
    fn fixed_points_spin() {
        let h = SpinRotatingField { l: 1.0 }.hamiltonian();
        let alpha = 0.3;
        let fps = find_fixed_points(&h, alpha).unwrap();
        assert_eq!(fps.len(), 2);
        // Ascending energy: p̄ = α + π first (−L/2), then p̄ = α (+L/2).
        assert!(chart::angle_diff(fps[0].chart.p1(), alpha + PI).abs() < 1e-10);
        assert!(chart::angle_diff(fps[1].chart.p1(), alpha).abs() < 1e-10);
        for fp in &fps {
            assert!((fp.chart.q1() - 0.5).abs() < 1e-10);
            assert!(fp.eigen_residual(&h).unwrap() < 1e-10);
            let (dp, dq) = gradient(&h, &fp.chart, alpha).unwrap();
            assert!(dp.amax() + dq.amax() < FP_TOLERANCE);
        }
    }

    #[test]
    fn fixed_points_lz() {
        let h = LandauZener { x: 1.0 }.hamiltonian();
        let fps = find_fixed_points(&h, 0.0).unwrap();
        assert!(chart::angle_diff(fps[0].chart.p1(), PI).abs() < 1e-10);
        assert!((fps[0].chart.q1() - 0.5).abs() < 1e-10);
        assert!(chart::angle_diff(fps[1].chart.p1(), 0.0).abs() < 1e-10);
        // Far along the sweep the lower branch piles onto component 1.
        let far = find_fixed_points(&h, 1e4).unwrap();
        let q_lower = match far[0].chart.pivot {
            0 => far[0].chart.q1(),
            _ => 1.0 - far[0].chart.q1(),
        };
        assert!(q_lower > 1.0 - 1e-4);
    }

    #[test]
    fn eigen_matches_analytic_branch() {
        // The generic eigendecomposition path and the closed-form branch agree.
        let lz = LandauZener { x: 1.0 };
        let with_forms = lz.hamiltonian();
        let matrix_only = lz.hamiltonian_matrix_only();
        for &z in &[-3.0, -0.4, 0.0, 0.9, 2.5] {
            let a = find_fixed_points(&with_forms, z).unwrap();
            let b = find_fixed_points(&matrix_only, z).unwrap();
            for (fa, fb) in a.iter().zip(&b) {
                assert!(chart_distance_any_pivot(&fa.chart, &fb.chart).unwrap() < 1e-9);
                assert!((fa.energy - fb.energy).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn degenerate_spectrum_detected() {
        let h = ParametricHamiltonian::from_matrix(
            2,
            Box::new(|_r| DMatrix::from_element(2, 2, Complex64::new(0.0, 0.0))),
        );
        assert!(matches!(
            find_fixed_points(&h, 0.0),
            Err(Error::DegenerateSpectrum { .. })
        ));
    }

    #[test]
    fn fp_derivative_spin() {
        let h = SpinRotatingField { l: 1.0 }.hamiltonian();
        let alpha = 0.7;
        let fp = &find_fixed_points(&h, alpha).unwrap()[1];
        let (dp, dq) = fixed_point_r_derivative(&h, fp, alpha).unwrap();
        assert!((dp[0] - 1.0).abs() < 1e-9);
        assert!(dq[0].abs() < 1e-9);
    }

    #[test]
    fn fp_derivative_lz() {
        let lz = LandauZener { x: 1.0 };
        for h in [lz.hamiltonian(), lz.hamiltonian_matrix_only()] {
            let z = 0.8;
            let fp = find_fixed_points(&h, z)
                .unwrap()
                .into_iter()
                .next()
                .unwrap();
            let (dp, dq) = fixed_point_r_derivative(&h, &fp, z).unwrap();
            // The closed form is a pivot-0 statement; in the swapped chart
            // the population derivative flips sign.
            let sign = if fp.chart.pivot == 0 { 1.0 } else { -1.0 };
            let expect = sign / (2.0 * (1.0 + z * z).powf(1.5));
            assert!(dp[0].abs() < 1e-9);
            assert!(
                (dq[0] - expect).abs() < 1e-9,
                "dq = {} vs {}",
                dq[0],
                expect
            );
        }
    }

    #[test]
    fn branch_jump_near_tiny_gap() {
        // With a vanishing coupling the branch moves by O(1) in chart
        // distance across the differencing stencil, which continuity
        // tracking must refuse.
        let h = LandauZener { x: 5e-5 }.hamiltonian();
        let fp = find_fixed_points(&h, 0.0)
            .unwrap()
            .into_iter()
            .next()
            .unwrap();
        let out = fixed_point_r_derivative(&h, &fp, 0.0);
        assert!(matches!(out, Err(Error::BranchJump { .. })), "{out:?}");
    }

    #[test]
    fn fp_derivative_r_independent() {
        let h = ParametricHamiltonian::from_matrix(
            2,
            Box::new(|_r| {
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        Complex64::new(0.3, 0.0),
                        Complex64::new(0.5, 0.0),
                        Complex64::new(0.5, 0.0),
                        Complex64::new(-0.3, 0.0),
                    ],
                )
            }),
        );
        let fp = find_fixed_points(&h, 1.0)
            .unwrap()
            .into_iter()
            .next()
            .unwrap();
        let (dp, dq) = fixed_point_r_derivative(&h, &fp, 1.0).unwrap();
        assert!(dp.amax() < 1e-10 && dq.amax() < 1e-10);
    }
}
