//! Order-by-order deviation hierarchy around a tracked fixed point.
//!
//! Driving R(t) displaces the followed trajectory away from the instantaneous
//! fixed point. The order-k residual is governed by a quadratic Hamiltonian
//! whose own fixed point (A_k, B_k) is built recursively from Γ₀⁻¹, partial
//! derivatives of the lower-order shifts with respect to the derivative tuple
//! (R, Ṙ, ..., d^kR/dt^k), and graded corrections Δ^jΓ assembled from
//! directional derivatives of Γ along the accumulated shifts.
//!
//! Grading: a factor (d^mR/dt^m)^n carries grade m·n, and every term of the
//! order-k shift carries grade exactly k. Note the grade is a bookkeeping
//! order, not automatically an order of magnitude: protocols with slowly
//! decaying derivative tuples (for instance R = ε sin t) make all grades
//! comparable, and weighing the terms is left to the experiment layer.

use nalgebra::{DMatrix, DVector};

use crate::chart::ChartState;
use crate::classical::{
    fixed_point_on_branch, fixed_point_r_derivative, gamma_at, hessian, FixedPoint,
    ParametricHamiltonian, DERIVATIVE_BOUND,
};
use crate::diff;
use crate::error::{Error, Result};

/// Default deepest hierarchy order. Third order exercises the general graded
/// recursion while keeping the highest required partials of H₀ at fifth
/// order, which the widened-step differencing still resolves.
pub const K_MAX_DEFAULT: usize = 3;

/// Step scale for differencing the shift maps over (R, Ṙ, ...). The maps are
/// polynomial in every derivative variable (degree ≤ 3 at the supported
/// orders), so the five-point stencil is exact there and the step only
/// matters for the R direction.
const SHIFT_MAP_STEP: f64 = 1e-3;

/// Orbits whose bounding box falls below this floor are treated as collapsed
/// to a point: their action is the raw (tiny) shoelace value and closure is
/// not enforced.
pub const ORBIT_COLLAPSE_FLOOR: f64 = 1e-9;

/// Closure tolerance for action orbits, as a fraction of the orbit diameter.
pub const ORBIT_CLOSURE_REL: f64 = 1e-3;

/// Anything with an m·n grade attached.
pub trait Graded {
    fn grade(&self) -> usize;
}

/// A scalar bookkeeping term: a coefficient times a product of factors
/// (derivative order m, power n), carrying grade Σ m·n.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedTerm {
    pub coefficient: f64,
    pub factors: Vec<(usize, u32)>,
}

impl GradedTerm {
    pub fn new(coefficient: f64, factors: Vec<(usize, u32)>) -> Self {
        Self {
            coefficient,
            factors,
        }
    }
}

impl Graded for GradedTerm {
    fn grade(&self) -> usize {
        self.factors.iter().map(|&(m, n)| m * n as usize).sum()
    }
}

/// The T^j selection: exactly the grade-j subset, order preserved.
pub fn grade_select<T: Graded + Clone>(terms: &[T], j: usize) -> Vec<T> {
    terms.iter().filter(|t| t.grade() == j).cloned().collect()
}

struct GradedValue<T> {
    value: T,
    grade: usize,
}

impl<T: Clone> Clone for GradedValue<T> {
    fn clone(&self) -> Self {
        Self {
            value: self.value.clone(),
            grade: self.grade,
        }
    }
}

impl<T> Graded for GradedValue<T> {
    fn grade(&self) -> usize {
        self.grade
    }
}

/// The order-k displacement (A_k, B_k) of the adiabatic trajectory, together
/// with the derivative tuple it was evaluated at.
#[derive(Debug, Clone)]
pub struct OrderShift {
    pub order: usize,
    /// Phase-like components.
    pub a: DVector<f64>,
    /// Population-like components.
    pub b: DVector<f64>,
    pub r: f64,
    /// d^m R/dt^m for m = 1..=order.
    pub derivs: Vec<f64>,
}

impl OrderShift {
    pub fn zero(order: usize, pairs: usize, r: f64, derivs: Vec<f64>) -> Self {
        Self {
            order,
            a: DVector::zeros(pairs),
            b: DVector::zeros(pairs),
            r,
            derivs,
        }
    }

    /// Stacked (a; b) vector.
    pub fn as_vector(&self) -> DVector<f64> {
        stack(&self.a, &self.b)
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }

    /// Single-pair accessors.
    pub fn a1(&self) -> f64 {
        assert_eq!(self.a.len(), 1);
        self.a[0]
    }

    pub fn b1(&self) -> f64 {
        assert_eq!(self.b.len(), 1);
        self.b[0]
    }
}

/// Quadratic Hamiltonian of the order-k residual: second partials of H₀ at
/// the k-th expansion point, centered on (A_k, B_k).
#[derive(Debug, Clone)]
pub struct DeviationHamiltonian {
    pub order: usize,
    /// ∂²H₀/∂p², ∂²H₀/∂p∂q, ∂²H₀/∂q² at the expansion point.
    pub c_pp: DMatrix<f64>,
    pub c_pq: DMatrix<f64>,
    pub c_qq: DMatrix<f64>,
    pub center: OrderShift,
}

impl DeviationHamiltonian {
    /// Single-pair coefficients (c_pp, c_pq, c_qq).
    pub fn coefficients(&self) -> (f64, f64, f64) {
        assert_eq!(self.c_pp.nrows(), 1);
        (self.c_pp[(0, 0)], self.c_pq[(0, 0)], self.c_qq[(0, 0)])
    }

    /// c_pp c_qq − c_pq², positive exactly for elliptic (spiral) motion.
    pub fn discriminant(&self) -> f64 {
        let (cpp, cpq, cqq) = self.coefficients();
        cpp * cqq - cpq * cpq
    }

    pub fn is_elliptic(&self) -> bool {
        self.discriminant() > 0.0
    }

    /// Angular frequency of the residual oscillation.
    pub fn frequency(&self) -> f64 {
        self.discriminant().abs().sqrt()
    }

    /// Closed-form action of a residual orbit with energy offset E:
    /// I = |E| / √(c_pp c_qq − c_pq²).
    pub fn action_of_energy(&self, e: f64) -> f64 {
        e.abs() / self.frequency()
    }

    /// Value of the quadratic form at a residual (δp, δq) from the center.
    pub fn value(&self, dp: f64, dq: f64) -> f64 {
        let (cpp, cpq, cqq) = self.coefficients();
        let x = dp - self.center.a1();
        let y = dq - self.center.b1();
        0.5 * cpp * x * x + cpq * x * y + 0.5 * cqq * y * y
    }

    /// Orbit amplitudes (|δp|max, |δq|max) around the center for action I.
    pub fn amplitudes(&self, action: f64) -> (f64, f64) {
        let (cpp, _, cqq) = self.coefficients();
        let freq = self.frequency();
        (
            (2.0 * action * cqq.abs() / freq).sqrt(),
            (2.0 * action * cpp.abs() / freq).sqrt(),
        )
    }
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let m = a.len();
    DVector::from_fn(2 * m, |i, _| if i < m { a[i] } else { b[i - m] })
}

fn unstack(v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let m = v.len() / 2;
    (v.rows(0, m).into_owned(), v.rows(m, m).into_owned())
}

/// (A₁, B₁) = Γ₀⁻¹ (∂p̄/∂R, ∂q̄/∂R) Ṙ.
pub fn first_order_shift(
    h: &ParametricHamiltonian,
    fp: &FixedPoint,
    r: f64,
    rdot: f64,
) -> Result<OrderShift> {
    let here = fixed_point_on_branch(h, r, fp, Some(fp.chart.pivot))?;
    let ginv = gamma_at(h, &here.chart, r)?.inverse()?;
    let (dp, dq) = fixed_point_r_derivative(h, &here, r)?;
    let v = &ginv * stack(&dp, &dq) * rdot;
    let (a, b) = unstack(&v);
    Ok(OrderShift {
        order: 1,
        a,
        b,
        r,
        derivs: vec![rdot],
    })
}

/// H₁: second partials of H₀ at the fixed point, centered on (A₁, B₁).
pub fn first_order_hamiltonian(
    h: &ParametricHamiltonian,
    fp: &FixedPoint,
    r: f64,
    rdot: f64,
) -> Result<DeviationHamiltonian> {
    let here = fixed_point_on_branch(h, r, fp, Some(fp.chart.pivot))?;
    let center = first_order_shift(h, &here, r, rdot)?;
    let blocks = hessian(h, &here.chart, r)?;
    Ok(DeviationHamiltonian {
        order: 1,
        c_pp: blocks.pp,
        c_pq: blocks.pq,
        c_qq: blocks.qq,
        center,
    })
}

/// H_k: second partials at the expansion point shifted by the accumulated
/// lower-order centers, centered on (A_k, B_k). `shifts` must hold orders
/// 1..=k at the same tuple.
pub fn kth_order_hamiltonian(
    h: &ParametricHamiltonian,
    fp: &FixedPoint,
    shifts: &[OrderShift],
    k: usize,
) -> Result<DeviationHamiltonian> {
    assert!(k >= 1 && shifts.len() >= k);
    let here = fixed_point_on_branch(h, shifts[0].r, fp, Some(fp.chart.pivot))?;
    let m = here.chart.pairs();
    let mut dp = DVector::zeros(m);
    let mut dq = DVector::zeros(m);
    for s in &shifts[..k - 1] {
        dp += &s.a;
        dq += &s.b;
    }
    let point = displace(&here.chart, &dp, &dq, 1.0)?;
    let blocks = hessian(h, &point, shifts[0].r)?;
    Ok(DeviationHamiltonian {
        order: k,
        c_pp: blocks.pp,
        c_pq: blocks.pq,
        c_qq: blocks.qq,
        center: shifts[k - 1].clone(),
    })
}

fn displace(base: &ChartState, up: &DVector<f64>, uq: &DVector<f64>, t: f64) -> Result<ChartState> {
    ChartState::new(&base.p + up * t, &base.q + uq * t, base.pivot)
}

/// Largest displacement along ±uq that keeps every population and the pivot
/// population inside (0, 1).
fn population_room(base: &ChartState, uq: &DVector<f64>) -> f64 {
    let mut room = f64::INFINITY;
    let pivot_pop = base.pivot_population();
    let drift: f64 = uq.iter().map(|x| x.abs()).sum();
    if drift > 0.0 {
        room = room.min(pivot_pop / drift);
    }
    for i in 0..uq.len() {
        let u = uq[i].abs();
        if u > 0.0 {
            room = room.min(base.q[i].min(1.0 - base.q[i]) / u);
        }
    }
    room
}

/// Nested directional derivative of Γ along the given unit directions, by
/// Richardson-extrapolated central differences with steps widened one factor
/// of two per nesting level.
fn gamma_nested_directional(
    h: &ParametricHamiltonian,
    base: &ChartState,
    r: f64,
    units: &[(DVector<f64>, DVector<f64>)],
) -> Result<DMatrix<f64>> {
    let Some(((up, uq), rest)) = units.split_last() else {
        return Ok(gamma_at(h, base, r)?.entries);
    };
    let level = units.len() as u32;
    let mut step = diff::step_nested(level);
    let room = population_room(base, uq);
    if room.is_finite() {
        // Same boundary scaling as the Hessian probes: Γ is singular at the
        // population edge.
        step = step.min(room / 80.0).max(1e-9);
    }
    let eval = |t: f64| -> Result<DMatrix<f64>> {
        gamma_nested_directional(h, &displace(base, up, uq, t)?, r, rest)
    };
    let fine = (eval(step)? - eval(-step)?) / (2.0 * step);
    let coarse = (eval(2.0 * step)? - eval(-2.0 * step)?) / (4.0 * step);
    Ok((fine * 4.0 - coarse) / 3.0)
}

/// δΓ: directional derivative of Γ along a shift vector, evaluated at the
/// fixed point. Linear in the shift.
pub fn delta_gamma(
    h: &ParametricHamiltonian,
    fp: &FixedPoint,
    shift: &OrderShift,
    r: f64,
) -> Result<DMatrix<f64>> {
    let here = fixed_point_on_branch(h, r, fp, Some(fp.chart.pivot))?;
    let m = here.chart.pairs();
    let mag = shift.norm();
    if mag == 0.0 {
        return Ok(DMatrix::zeros(2 * m, 2 * m));
    }
    let unit = (shift.a.clone() / mag, shift.b.clone() / mag);
    Ok(gamma_nested_directional(h, &here.chart, r, &[unit])? * mag)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

/// Non-decreasing sequences of length `size` over 1..=max.
fn multisets(max: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(size);
    fn rec(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, lo: usize, max: usize, left: usize) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for v in lo..=max {
            cur.push(v);
            rec(out, cur, v, max, left - 1);
            cur.pop();
        }
    }
    rec(&mut out, &mut cur, 1, max, size);
    out
}

struct DirTerm {
    orders: Vec<usize>,
    coefficient: f64,
}

impl Graded for DirTerm {
    fn grade(&self) -> usize {
        self.orders.iter().sum()
    }
}

impl Clone for DirTerm {
    fn clone(&self) -> Self {
        Self {
            orders: self.orders.clone(),
            coefficient: self.coefficient,
        }
    }
}

/// Δ^jΓ: the grade-j part of Σ_{i≥1} 1/(i+1)! (Σ_r A_r ∂_p + B_r ∂_q)^i Γ.
///
/// Terms are enumerated as multisets of shift orders with their multinomial
/// weight, tagged with grade Σ orders, passed through the T^j selection, and
/// only the survivors are evaluated as nested directional derivatives.
pub fn delta_j_gamma(
    h: &ParametricHamiltonian,
    fp: &FixedPoint,
    shifts: &[OrderShift],
    j: usize,
) -> Result<DMatrix<f64>> {
    assert!(j >= 1, "Δ^jΓ defined for j ≥ 1");
    assert!(shifts.len() >= j, "need shifts of orders 1..={j}");
    for (i, s) in shifts.iter().enumerate().take(j) {
        assert_eq!(s.order, i + 1, "shifts must be ordered 1..=k");
    }
    let here = fixed_point_on_branch(h, shifts[0].r, fp, Some(fp.chart.pivot))?;
    let m = here.chart.pairs();

    let mut terms: Vec<DirTerm> = Vec::new();
    for i in 1..=j {
        for orders in multisets(j, i) {
            let mut mult_prod = 1.0;
            let mut run = 1usize;
            for w in 0..orders.len() {
                if w + 1 < orders.len() && orders[w + 1] == orders[w] {
                    run += 1;
                } else {
                    mult_prod *= factorial(run);
                    run = 1;
                }
            }
            let orderings = factorial(i) / mult_prod;
            terms.push(DirTerm {
                orders,
                coefficient: orderings / factorial(i + 1),
            });
        }
    }

    let selected = grade_select(&terms, j);
    let mut sum = DMatrix::zeros(2 * m, 2 * m);
    for term in &selected {
        let mut mag = term.coefficient;
        let mut units = Vec::with_capacity(term.orders.len());
        for &r_ord in &term.orders {
            let s = &shifts[r_ord - 1];
            let norm = s.norm();
            mag *= norm;
            if norm == 0.0 {
                break;
            }
            units.push((s.a.clone() / norm, s.b.clone() / norm));
        }
        if mag == 0.0 {
            continue;
        }
        sum += gamma_nested_directional(h, &here.chart, shifts[0].r, &units)? * mag;
    }
    Ok(sum)
}

/// (A₂, B₂) = Γ₀⁻¹[(∂A₁/∂R)Ṙ + (∂A₁/∂Ṙ)R̈] − ½Γ₀⁻¹ δΓ (A₁, B₁),
/// implemented directly (the general graded recursion is the independent
/// second path).
pub fn second_order_shift(
    h: &ParametricHamiltonian,
    fp: &FixedPoint,
    r: f64,
    rdot: f64,
    rddot: f64,
) -> Result<OrderShift> {
    let here = fixed_point_on_branch(h, r, fp, Some(fp.chart.pivot))?;
    let ginv = gamma_at(h, &here.chart, r)?.inverse()?;
    let s1 = first_order_shift(h, &here, r, rdot)?;

    // ∂(A₁,B₁)/∂R at fixed Ṙ, tracked along the branch.
    let d_dr = vector_derivative(
        |x| Ok(first_order_shift(h, &here, x, rdot)?.as_vector()),
        r,
        SHIFT_MAP_STEP * r.abs().max(1.0),
    )?;
    // (A₁,B₁) is linear in Ṙ, so the partial is the unit-rate shift.
    let d_drdot = first_order_shift(h, &here, r, 1.0)?.as_vector();

    let dgam = delta_gamma(h, &here, &s1, r)?;
    let v = &ginv * (d_dr * rdot + d_drdot * rddot) - (&ginv * (dgam * s1.as_vector())) * 0.5;
    let (a, b) = unstack(&v);
    Ok(OrderShift {
        order: 2,
        a,
        b,
        r,
        derivs: vec![rdot, rddot],
    })
}

/// Five-point-stencil Richardson derivative of a fallible vector map.
fn vector_derivative<F: Fn(f64) -> Result<DVector<f64>>>(
    f: F,
    x: f64,
    h: f64,
) -> Result<DVector<f64>> {
    let stencil = |hh: f64| -> Result<DVector<f64>> {
        Ok(
            (f(x - 2.0 * hh)? - f(x - hh)? * 8.0 + f(x + hh)? * 8.0 - f(x + 2.0 * hh)?)
                / (12.0 * hh),
        )
    };
    let fine = stencil(h)?;
    let coarse = stencil(2.0 * h)?;
    let value = (&fine * 16.0 - &coarse) / 15.0;
    let err = (&fine - &coarse).norm() / 15.0;
    if err > DERIVATIVE_BOUND * value.norm().max(1.0) {
        return Err(Error::DerivativeUnstable {
            disagreement: err,
            bound: DERIVATIVE_BOUND * value.norm().max(1.0),
        });
    }
    Ok(value)
}

/// (A_k, B_k) by the general graded recursion, with the default maximum
/// order.
pub fn kth_order_shift(
    h: &ParametricHamiltonian,
    fp: &FixedPoint,
    derivs: &[f64],
    k: usize,
) -> Result<OrderShift> {
    kth_order_shift_with(h, fp, derivs, k, K_MAX_DEFAULT)
}

/// (A_k, B_k) = Γ₀⁻¹ Σ_{j=0}^{k−1} ∂(A_{k−1},B_{k−1})/∂(d^jR/dt^j) · d^{j+1}R/dt^{j+1}
///            − Γ₀⁻¹ Σ_{j=1}^{k−1} Δ^jΓ (A_{k−j}, B_{k−j}),
/// with the zeroth map being the fixed point itself. All contributions are
/// tagged with their grade and passed through the T^k selection before
/// summation.
pub fn kth_order_shift_with(
    h: &ParametricHamiltonian,
    fp: &FixedPoint,
    derivs: &[f64],
    k: usize,
    k_max: usize,
) -> Result<OrderShift> {
    if k == 0 || k > k_max {
        return Err(Error::GradeOverflow {
            requested: k,
            max: k_max,
        });
    }
    assert!(
        derivs.len() >= k,
        "need d^mR/dt^m for m = 1..={k}, got {}",
        derivs.len()
    );
    let (a, b) = shift_vector(h, fp, fp.r, derivs, k)?;
    Ok(OrderShift {
        order: k,
        a,
        b,
        r: fp.r,
        derivs: derivs[..k].to_vec(),
    })
}

/// Recursive evaluation of the order-k shift at an arbitrary tuple; `anchor`
/// carries the branch and pivot.
fn shift_vector(
    h: &ParametricHamiltonian,
    anchor: &FixedPoint,
    r: f64,
    derivs: &[f64],
    k: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let here = fixed_point_on_branch(h, r, anchor, Some(anchor.chart.pivot))?;
    let ginv = gamma_at(h, &here.chart, r)?.inverse()?;
    let m = here.chart.pairs();
    let mut terms: Vec<GradedValue<DVector<f64>>> = Vec::new();

    // Derivative-chain contributions over the tuple variables x_0 = R,
    // x_m = d^mR/dt^m; each term multiplies by x_{j+1} = derivs[j].
    for j in 0..k {
        let mult = derivs[j];
        if mult == 0.0 {
            continue;
        }
        let partial = if k == 1 {
            if j > 0 {
                continue; // the fixed point depends on R only
            }
            let (dp, dq) = fixed_point_r_derivative(h, &here, r)?;
            stack(&dp, &dq)
        } else {
            partial_of_shift(h, anchor, r, derivs, k - 1, j)?
        };
        terms.push(GradedValue {
            value: &ginv * partial * mult,
            grade: (k - 1) - j + (j + 1),
        });
    }

    // Γ-correction contributions Δ^jΓ (A_{k−j}, B_{k−j}).
    if k >= 2 {
        let mut lower: Vec<OrderShift> = Vec::with_capacity(k - 1);
        for kk in 1..k {
            let (a, b) = shift_vector(h, anchor, r, derivs, kk)?;
            lower.push(OrderShift {
                order: kk,
                a,
                b,
                r,
                derivs: derivs[..kk].to_vec(),
            });
        }
        for j in 1..k {
            let dg = delta_j_gamma(h, &here, &lower, j)?;
            let target = &lower[k - j - 1];
            terms.push(GradedValue {
                value: -(&ginv * (dg * target.as_vector())),
                grade: j + (k - j),
            });
        }
    }

    let selected = grade_select(&terms, k);
    let mut sum = DVector::zeros(2 * m);
    for t in &selected {
        sum += &t.value;
    }
    Ok(unstack(&sum))
}

/// ∂/∂x_j of the order-`order` shift map, x_0 = R and x_m = d^mR/dt^m.
fn partial_of_shift(
    h: &ParametricHamiltonian,
    anchor: &FixedPoint,
    r: f64,
    derivs: &[f64],
    order: usize,
    j: usize,
) -> Result<DVector<f64>> {
    let x0 = if j == 0 { r } else { derivs[j - 1] };
    let eval = |x: f64| -> Result<DVector<f64>> {
        let (a, b) = if j == 0 {
            shift_vector(h, anchor, x, derivs, order)?
        } else {
            let mut d = derivs.to_vec();
            d[j - 1] = x;
            shift_vector(h, anchor, r, &d, order)?
        };
        Ok(stack(&a, &b))
    };
    vector_derivative(eval, x0, SHIFT_MAP_STEP * x0.abs().max(1.0))
}

/// All shifts of orders 1..=k at one tuple, via the graded recursion.
pub fn shifts_up_to(
    h: &ParametricHamiltonian,
    fp: &FixedPoint,
    derivs: &[f64],
    k: usize,
    k_max: usize,
) -> Result<Vec<OrderShift>> {
    (1..=k)
        .map(|kk| kth_order_shift_with(h, fp, derivs, kk, k_max))
        .collect()
}

/// Action of a sampled closed orbit: the trapezoidal shoelace area divided by
/// 2π, returned as (magnitude, orientation).
///
/// Orbits smaller than [`ORBIT_COLLAPSE_FLOOR`] across are treated as
/// collapsed and integrated without a closure check; otherwise the endpoint
/// gap must stay within [`ORBIT_CLOSURE_REL`] of the diameter.
pub fn action_with_orientation(orbit: &[(f64, f64)]) -> Result<(f64, i8)> {
    if orbit.len() < 3 {
        return Ok((0.0, 0));
    }
    let (mut pmin, mut pmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut qmin, mut qmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(p, q) in orbit {
        pmin = pmin.min(p);
        pmax = pmax.max(p);
        qmin = qmin.min(q);
        qmax = qmax.max(q);
    }
    let diameter = ((pmax - pmin).powi(2) + (qmax - qmin).powi(2)).sqrt();
    if diameter >= ORBIT_COLLAPSE_FLOOR {
        let first = orbit[0];
        let last = orbit[orbit.len() - 1];
        let gap = ((first.0 - last.0).powi(2) + (first.1 - last.1).powi(2)).sqrt();
        let tolerance = ORBIT_CLOSURE_REL * diameter;
        if gap > tolerance {
            return Err(Error::OrbitNotClosed {
                gap,
                tolerance,
                diameter,
            });
        }
    }
    let signed = shoelace(orbit) / std::f64::consts::TAU;
    Ok((signed.abs(), if signed >= 0.0 { 1 } else { -1 }))
}

/// Action magnitude of a sampled closed orbit.
pub fn action(orbit: &[(f64, f64)]) -> Result<f64> {
    action_with_orientation(orbit).map(|(v, _)| v)
}

/// Signed shoelace area of a polygon given as (δp, δq) vertices, traversed
/// in order and closed back to the start. The integral convention is
/// ∮ δp · d(δq).
pub fn shoelace(orbit: &[(f64, f64)]) -> f64 {
    let n = orbit.len();
    let mut area = 0.0;
    for i in 0..n {
        let (p0, q0) = orbit[i];
        let (p1, q1) = orbit[(i + 1) % n];
        area += 0.5 * (p0 + p1) * (q1 - q0);
    }
    area
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::find_fixed_points;
    use crate::classical::AnalyticClassical;
    use crate::models::{lz_closed_forms, spin_closed_forms, LandauZener, SpinRotatingField};

    fn spin_fp(l: f64, alpha: f64) -> (ParametricHamiltonian, FixedPoint) {
        let h = SpinRotatingField { l }.hamiltonian();
        let fp = find_fixed_points(&h, alpha).unwrap()[SpinRotatingField::UPPER_BRANCH].clone();
        (h, fp)
    }

    fn lz_fp(x: f64, z: f64) -> (ParametricHamiltonian, FixedPoint) {
        // Pinned to the pivot-0 chart, in which the closed forms are stated.
        let h = LandauZener { x }.hamiltonian();
        let fp = find_fixed_points(&h, z).unwrap()[LandauZener::LOWER_BRANCH].clone();
        let fp = fixed_point_on_branch(&h, z, &fp, Some(0)).unwrap();
        (h, fp)
    }

    #[test]
    fn first_order_spin() {
        let (h, fp) = spin_fp(1.0, 0.4);
        let s = first_order_shift(&h, &fp, 0.4, 1e-5).unwrap();
        assert!(s.a1().abs() < 1e-16);
        assert!((s.b1() - 5e-6).abs() < 1e-12);
        let zero = first_order_shift(&h, &fp, 0.4, 0.0).unwrap();
        assert!(zero.norm() == 0.0);
    }

    #[test]
    fn first_order_lz() {
        for z in [-2.0, 0.0, 1.3] {
            let (h, fp) = lz_fp(1.0, z);
            let s = first_order_shift(&h, &fp, z, 1e-3).unwrap();
            let expect = lz_closed_forms(1.0, z, 1e-3).shift1;
            assert!((s.a1() - expect.0).abs() < 1e-11, "z = {z}");
            assert!(s.b1().abs() < 1e-11);
        }
    }

    #[test]
    fn first_order_linear_in_rate() {
        let (h, fp) = lz_fp(1.0, 0.7);
        let s1 = first_order_shift(&h, &fp, 0.7, 1e-3).unwrap();
        let s2 = first_order_shift(&h, &fp, 0.7, 2e-3).unwrap();
        assert!((s2.as_vector() - s1.as_vector() * 2.0).norm() < 1e-10 * s1.norm().max(1e-30));
    }

    #[test]
    fn first_order_hamiltonian_spin() {
        let (h, fp) = spin_fp(1.0, 1.1);
        let d = first_order_hamiltonian(&h, &fp, 1.1, 1e-5).unwrap();
        let forms = spin_closed_forms(1.0, 1.1, 1e-5);
        let (cpp, cpq, cqq) = d.coefficients();
        assert!((cpp - forms.h1.0).abs() < 1e-10);
        assert!((cpq - forms.h1.1).abs() < 1e-10);
        assert!((cqq - forms.h1.2).abs() < 1e-10);
        assert!((d.center.b1() - forms.shift1.1).abs() < 1e-12);
        assert!(d.is_elliptic());
        // Closed-form action of the sudden-start orbit.
        let e = d.value(0.0, 0.0);
        assert!((d.action_of_energy(e) - forms.i1_sudden_start).abs() < 1e-18);
        let (dp_max, dq_max) = d.amplitudes(forms.i1_sudden_start);
        assert!((dp_max - 1e-5).abs() < 1e-12 && (dq_max - 5e-6).abs() < 1e-12);
    }

    #[test]
    fn first_order_hamiltonian_lz() {
        let (h, fp) = lz_fp(1.0, 0.9);
        let d = first_order_hamiltonian(&h, &fp, 0.9, 1e-3).unwrap();
        let forms = lz_closed_forms(1.0, 0.9, 1e-3);
        let (cpp, cpq, cqq) = d.coefficients();
        assert!((cpp - forms.h1.0).abs() < 1e-10);
        assert!(cpq.abs() < 1e-10);
        assert!((cqq - forms.h1.2).abs() < 1e-9);
        assert!(d.is_elliptic());
    }

    #[test]
    fn delta_gamma_spin_vanishes_at_fixed_point() {
        // Every third partial of the spin H₀ vanishes at (α, ½), so δΓ = 0.
        let (h, fp) = spin_fp(1.0, 0.4);
        let s1 = first_order_shift(&h, &fp, 0.4, 1e-5).unwrap();
        let dg = delta_gamma(&h, &fp, &s1, 0.4).unwrap();
        assert!(dg.norm() < 1e-13);
    }

    #[test]
    fn delta_gamma_lz_matches_symbolic() {
        // At the lower fixed point Γ_p = [[z, 0], [0, −z]], so a pure-A₁ shift
        // gives δΓ = A₁ Γ_p.
        let (x, z, v) = (1.0, 1.2, 1e-3);
        let (h, fp) = lz_fp(x, z);
        let s1 = first_order_shift(&h, &fp, z, v).unwrap();
        let a1 = s1.a1();
        let dg = delta_gamma(&h, &fp, &s1, z).unwrap();
        assert!((dg[(0, 0)] - a1 * z).abs() < 1e-9 * a1.abs().max(1e-12));
        assert!((dg[(1, 1)] + a1 * z).abs() < 1e-9 * a1.abs().max(1e-12));
        assert!(dg[(0, 1)].abs() < 1e-12 && dg[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn delta_gamma_linear_and_zero() {
        let (h, fp) = lz_fp(1.0, 0.6);
        let s1 = first_order_shift(&h, &fp, 0.6, 1e-3).unwrap();
        let dg1 = delta_gamma(&h, &fp, &s1, 0.6).unwrap();
        let mut s2 = s1.clone();
        s2.a *= 2.0;
        s2.b *= 2.0;
        let dg2 = delta_gamma(&h, &fp, &s2, 0.6).unwrap();
        assert!((dg2 - &dg1 * 2.0).norm() < 1e-10 * dg1.norm().max(1e-20));
        let zero = OrderShift::zero(1, 1, 0.6, vec![0.0]);
        assert!(delta_gamma(&h, &fp, &zero, 0.6).unwrap().norm() == 0.0);
    }

    #[test]
    fn delta_gamma_constant_gamma_toy() {
        let (a, b) = (1.3, 0.7);
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
        // Any probe point works as an expansion point for a constant Γ.
        let fp = FixedPoint {
            chart: ChartState::pair(0.0, 0.5, 0),
            r: 0.0,
            branch: 0,
            energy: 0.0,
            eigvec: nalgebra::DVector::from_element(2, num_complex::Complex64::new(0.0, 0.0)),
        };
        let shift = OrderShift {
            order: 1,
            a: DVector::from_vec(vec![0.02]),
            b: DVector::from_vec(vec![0.015]),
            r: 0.0,
            derivs: vec![1.0],
        };
        // Bypass branch machinery: evaluate the directional derivative
        // directly at the probe point.
        let mag = shift.norm();
        let unit = (shift.a.clone() / mag, shift.b.clone() / mag);
        let d = gamma_nested_directional(&toy, &fp.chart, 0.0, &[unit]).unwrap() * mag;
        assert!(d.norm() < 1e-9);
    }

    #[test]
    fn second_order_lz_closed_form() {
        let (x, v) = (1.0, 1e-3);
        for z in [-2.5, -1.0, 0.0, 0.7, 1.0, 3.0] {
            let (h, fp) = lz_fp(x, z);
            let s2 = second_order_shift(&h, &fp, z, v, 0.0).unwrap();
            let expect = lz_closed_forms(x, z, v).shift2;
            assert!(
                (s2.a1() - expect.0).abs() < 1e-11,
                "A2 at z = {z}: {} vs {}",
                s2.a1(),
                expect.0
            );
            assert!(
                (s2.b1() - expect.1).abs() < 1e-11,
                "B2 at z = {z}: {} vs {}",
                s2.b1(),
                expect.1
            );
        }
    }

    #[test]
    fn second_order_zero_inputs() {
        let (h, fp) = lz_fp(1.0, 0.4);
        let s2 = second_order_shift(&h, &fp, 0.4, 0.0, 0.0).unwrap();
        assert!(s2.norm() == 0.0);
    }

    #[test]
    fn second_order_homogeneity() {
        let (h, fp) = lz_fp(1.0, 0.8);
        let base = second_order_shift(&h, &fp, 0.8, 1e-3, 5e-7).unwrap();
        let scaled = second_order_shift(&h, &fp, 0.8, 2e-3, 2e-6).unwrap();
        let diff = (scaled.as_vector() - base.as_vector() * 4.0).norm();
        assert!(diff < 1e-10 * base.norm(), "diff = {diff:.3e}");
    }

    #[test]
    fn spin_second_order_and_general_path_agree() {
        let (h, fp) = spin_fp(1.0, 0.9);
        let direct = second_order_shift(&h, &fp, 0.9, 1e-5, 0.0).unwrap();
        let graded = kth_order_shift(&h, &fp, &[1e-5, 0.0], 2).unwrap();
        assert!((direct.as_vector() - graded.as_vector()).norm() < 1e-10);
        // All spin third partials vanish at the fixed point, so with α̈ = 0
        // the second-order shift is exactly zero.
        assert!(direct.norm() < 1e-13);
    }

    #[test]
    fn spin_second_order_accel_term() {
        // With α̈ = a: (A₂, B₂) = Γ₀⁻¹ (0, a/2L) = (−a/L², 0).
        let (l, a) = (1.0, 7.96e-12);
        let (h, fp) = spin_fp(l, 0.0);
        let s2 = second_order_shift(&h, &fp, 0.0, 1e-7, a).unwrap();
        assert!((s2.a1() + a / (l * l)).abs() < 1e-20);
        assert!(s2.b1().abs() < 1e-20);
    }

    #[test]
    fn path_consistency_k1_k2() {
        for z in [-1.7, 0.3, 2.2] {
            let (h, fp) = lz_fp(1.0, z);
            let d1 = first_order_shift(&h, &fp, z, 1e-3).unwrap();
            let k1 = kth_order_shift(&h, &fp, &[1e-3], 1).unwrap();
            assert!((d1.as_vector() - k1.as_vector()).norm() < 1e-10);
            let d2 = second_order_shift(&h, &fp, z, 1e-3, 2e-6).unwrap();
            let k2 = kth_order_shift(&h, &fp, &[1e-3, 2e-6], 2).unwrap();
            assert!((d2.as_vector() - k2.as_vector()).norm() < 1e-10);
        }
    }

    #[test]
    fn grade_overflow() {
        let (h, fp) = lz_fp(1.0, 0.0);
        assert!(matches!(
            kth_order_shift(&h, &fp, &[1e-3, 0.0, 0.0, 0.0], 4),
            Err(Error::GradeOverflow { .. })
        ));
    }

    #[test]
    fn third_order_scaling() {
        for (h, fp, r) in [
            {
                let (h, fp) = lz_fp(1.0, 0.9);
                (h, fp, 0.9)
            },
            {
                let (h, fp) = spin_fp(1.0, 0.4);
                (h, fp, 0.4)
            },
        ] {
            let _ = r;
            let tuple = [1e-3, 4e-7, 1e-10];
            let lam: f64 = 2.0;
            let scaled: Vec<f64> = tuple
                .iter()
                .enumerate()
                .map(|(i, &x)| x * lam.powi(i as i32 + 1))
                .collect();
            for k in 1..=3 {
                let base = kth_order_shift(&h, &fp, &tuple, k).unwrap();
                let up = kth_order_shift(&h, &fp, &scaled, k).unwrap();
                let expect = base.as_vector() * lam.powi(k as i32);
                let denom = expect.norm();
                if denom == 0.0 {
                    assert!(up.norm() == 0.0);
                } else {
                    let rel = (up.as_vector() - expect).norm() / denom;
                    assert!(rel < 1e-9, "k = {k}: rel = {rel:.3e}");
                }
            }
        }
    }

    #[test]
    fn delta_j_gamma_j1_is_half_delta_gamma() {
        for (h, fp, r, v) in [
            {
                let (h, fp) = lz_fp(1.0, 1.1);
                (h, fp, 1.1, 1e-3)
            },
            {
                let (h, fp) = spin_fp(1.0, 0.6);
                (h, fp, 0.6, 1e-5)
            },
        ] {
            let s1 = first_order_shift(&h, &fp, r, v).unwrap();
            let left = delta_j_gamma(&h, &fp, &[s1.clone()], 1).unwrap();
            let right = delta_gamma(&h, &fp, &s1, r).unwrap() * 0.5;
            assert!((left - right).norm() < 1e-12);
        }
    }

    #[test]
    fn delta_j_gamma_zero_shifts() {
        let (h, fp) = lz_fp(1.0, 0.5);
        let zeros = vec![
            OrderShift::zero(1, 1, 0.5, vec![0.0]),
            OrderShift::zero(2, 1, 0.5, vec![0.0, 0.0]),
        ];
        assert!(delta_j_gamma(&h, &fp, &zeros, 2).unwrap().norm() == 0.0);
    }

    #[test]
    fn grade_select_worked_example() {
        // T²(A₂ + B₂ + A₂² + A₂B₂) = A₂ + B₂; T³ = 0; T⁴ = A₂² + A₂B₂.
        let a2 = GradedTerm::new(1.0, vec![(2, 1)]);
        let b2 = GradedTerm::new(1.0, vec![(2, 1)]);
        let a2sq = GradedTerm::new(1.0, vec![(2, 2)]);
        let a2b2 = GradedTerm::new(1.0, vec![(2, 1), (2, 1)]);
        let terms = vec![a2.clone(), b2.clone(), a2sq.clone(), a2b2.clone()];
        assert_eq!(grade_select(&terms, 2), vec![a2, b2]);
        assert_eq!(grade_select(&terms, 3), Vec::<GradedTerm>::new());
        assert_eq!(grade_select(&terms, 4), vec![a2sq, a2b2]);
    }

    #[test]
    fn grade_two_monomial_enumeration() {
        // Hand enumeration of the grade-2 content of Σ 1/(i+1)! D^i Γ for a
        // single canonical pair: D = Σ_r (A_r ∂p + B_r ∂q). The surviving
        // monomials must be exactly {A₂, B₂, A₁², A₁B₁, B₁²}.
        let mut monomials: Vec<GradedTerm> = Vec::new();
        for i in 1..=2usize {
            for orders in multisets(2, i) {
                // Expand the component choice (A or B) per factor.
                let combos = 1usize << orders.len();
                for mask in 0..combos {
                    let mut factors: Vec<(usize, u32)> = Vec::new();
                    for (slot, &ord) in orders.iter().enumerate() {
                        // Tag A picks as (ord, 1) and B picks as (ord, 1) too:
                        // the grade only sees m·n. Keep the component in the
                        // coefficient sign-free label by position.
                        let _is_b = mask >> slot & 1 == 1;
                        factors.push((ord, 1));
                    }
                    monomials.push(GradedTerm::new(1.0, factors));
                }
            }
        }
        let selected = grade_select(&monomials, 2);
        // A₂, B₂ from the i = 1 multiset {2}; A₁², A₁B₁, B₁A₁, B₁² from {1,1}.
        assert_eq!(selected.len(), 2 + 4);
        assert!(selected.iter().all(|t| t.grade() == 2));
    }

    #[test]
    fn action_of_analytic_ellipse() {
        // Quadratic form with a cross term; the orbit of energy E has action
        // E/√(c_pp c_qq − c_pq²).
        let (cpp, cpq, cqq): (f64, f64, f64) = (0.8, 0.25, 1.9);
        let form = nalgebra::Matrix2::new(cpp, cpq, cpq, cqq);
        let se = form.symmetric_eigen();
        let e: f64 = 0.37;
        let n = 60_000;
        let mut orbit = Vec::with_capacity(n);
        for i in 0..n {
            let th = std::f64::consts::TAU * i as f64 / n as f64;
            let u = (2.0 * e / se.eigenvalues[0]).sqrt() * th.cos();
            let v = (2.0 * e / se.eigenvalues[1]).sqrt() * th.sin();
            let xy = se.eigenvectors * nalgebra::Vector2::new(u, v);
            orbit.push((xy[0], xy[1]));
        }
        let expect = e / (cpp * cqq - cpq * cpq).sqrt();
        let got = action(&orbit).unwrap();
        assert!((got - expect).abs() < 1e-8, "{got} vs {expect}");
    }

    #[test]
    fn action_collapsed_orbit() {
        let orbit = vec![(1e-13, -1e-13), (2e-13, 1e-13), (-1e-13, 0.0)];
        assert!(action(&orbit).unwrap() < 1e-24);
    }

    #[test]
    fn action_open_arc_rejected() {
        let orbit: Vec<(f64, f64)> = (0..100)
            .map(|i| {
                let th = 0.7 * std::f64::consts::TAU * i as f64 / 100.0;
                (th.cos(), th.sin())
            })
            .collect();
        assert!(matches!(action(&orbit), Err(Error::OrbitNotClosed { .. })));
    }

    #[test]
    fn lz_shift_decay_with_bias() {
        // Far along the sweep both components of every order fall off.
        let (h0, fp0) = lz_fp(1.0, 0.0);
        let near = kth_order_shift(&h0, &fp0, &[1e-3, 0.0, 0.0], 2).unwrap();
        let (h, fp) = lz_fp(1.0, 15.0);
        let far = kth_order_shift(&h, &fp, &[1e-3, 0.0, 0.0], 2).unwrap();
        let _ = near;
        let forms = lz_closed_forms(1.0, 15.0, 1e-3);
        assert!(far.b1().abs() < 1e-11 + forms.shift2.1.abs() * 2.0);
    }
}
