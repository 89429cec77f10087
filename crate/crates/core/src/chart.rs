//! Canonical chart on projective Hilbert space.
//!
//! A normalized n-component state maps to n−1 canonical pairs
//! `p_i = arg(c_j) − arg(c_pivot)`, `q_i = |c_j|²` (j running over the
//! non-pivot components in index order). The overall phase is removed, so the
//! chart parameterizes rays, not vectors. The map degenerates when the pivot
//! population vanishes; callers re-pivot to a better component instead.

use nalgebra::{DVector, Matrix2, Vector2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Below this pivot population the chart is ill-conditioned and callers must
/// re-pivot.
pub const PIVOT_THRESHOLD: f64 = 0.1;
/// Hysteresis: only switch pivots when an alternative carries at least this
/// much population, so a trajectory does not thrash between charts.
pub const REPIVOT_TARGET_MIN: f64 = 0.2;
/// Normalization tolerance for wavefunctions.
pub const NORM_TOL: f64 = 1e-12;

/// Wrap an angle into [−π, π).
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = a.rem_euclid(two_pi);
    if x >= std::f64::consts::PI {
        x -= two_pi;
    }
    x
}

/// Difference of two angles, reduced modulo 2π into [−π, π).
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// A normalized complex amplitude vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavefunction {
    amps: DVector<Complex64>,
}

impl Wavefunction {
    /// Build from amplitudes, checking dimension and normalization.
    pub fn new(amps: DVector<Complex64>) -> Self {
        assert!(amps.len() >= 2, "need at least a two-level system");
        let norm2: f64 = amps.iter().map(|c| c.norm_sqr()).sum();
        assert!(
            (norm2 - 1.0).abs() <= NORM_TOL,
            "state not normalized: |psi|^2 = {norm2}"
        );
        Self { amps }
    }

    /// Build from amplitudes of any norm, rescaling to unit norm.
    pub fn normalized(amps: DVector<Complex64>) -> Self {
        let norm = amps.norm();
        assert!(norm > 0.0, "cannot normalize the zero vector");
        Self::new(amps / Complex64::from(norm))
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amps
    }

    /// Population of one component.
    pub fn population(&self, i: usize) -> f64 {
        self.amps[i].norm_sqr()
    }

    /// Index of the largest-population component.
    pub fn dominant_component(&self) -> usize {
        let mut best = 0;
        let mut best_pop = 0.0;
        for (i, c) in self.amps.iter().enumerate() {
            let pop = c.norm_sqr();
            if pop > best_pop {
                best = i;
                best_pop = pop;
            }
        }
        best
    }

    /// |⟨self|other⟩|, which is 1 exactly when both describe the same ray.
    pub fn overlap_modulus(&self, other: &Wavefunction) -> f64 {
        self.amps.dotc(&other.amps).norm()
    }
}

/// Canonical coordinates of a ray relative to a pivot component.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartState {
    /// Relative phases, each in [−π, π).
    pub p: DVector<f64>,
    /// Populations of the non-pivot components, in component order.
    pub q: DVector<f64>,
    /// Component whose phase was removed.
    pub pivot: usize,
}

impl ChartState {
    pub fn new(p: DVector<f64>, q: DVector<f64>, pivot: usize) -> Result<Self> {
        assert_eq!(p.len(), q.len());
        let total: f64 = q.iter().sum();
        if total > 1.0 + NORM_TOL {
            return Err(Error::InvalidPopulations { total });
        }
        if q.iter().any(|&qi| !(0.0..=1.0 + NORM_TOL).contains(&qi)) {
            return Err(Error::InvalidPopulations { total });
        }
        Ok(Self {
            p: p.map(wrap_angle),
            q,
            pivot,
        })
    }

    /// Convenience constructor for a single canonical pair (two-level system).
    pub fn pair(p: f64, q: f64, pivot: usize) -> Self {
        Self::new(
            DVector::from_vec(vec![p]),
            DVector::from_vec(vec![q]),
            pivot,
        )
        .expect("valid single-pair chart state")
    }

    /// Construction without range validation, for integrator internals that
    /// probe transient out-of-range states. Angles are still wrapped.
    pub(crate) fn new_unchecked(p: DVector<f64>, q: DVector<f64>, pivot: usize) -> Self {
        Self {
            p: p.map(wrap_angle),
            q,
            pivot,
        }
    }

    /// Hilbert dimension n (one more than the number of pairs).
    pub fn dim(&self) -> usize {
        self.p.len() + 1
    }

    pub fn pairs(&self) -> usize {
        self.p.len()
    }

    /// Population remaining on the pivot component.
    pub fn pivot_population(&self) -> f64 {
        (1.0 - self.q.iter().sum::<f64>()).max(0.0)
    }

    /// Single-pair accessors; panic on higher dimensions.
    pub fn p1(&self) -> f64 {
        assert_eq!(self.pairs(), 1);
        self.p[0]
    }

    pub fn q1(&self) -> f64 {
        assert_eq!(self.pairs(), 1);
        self.q[0]
    }

    /// Max-norm distance to another state in the same chart; angles are
    /// compared modulo 2π.
    pub fn distance(&self, other: &ChartState) -> f64 {
        assert_eq!(self.pivot, other.pivot, "compare states in the same chart");
        let mut d: f64 = 0.0;
        for i in 0..self.pairs() {
            d = d.max(angle_diff(self.p[i], other.p[i]).abs());
            d = d.max((self.q[i] - other.q[i]).abs());
        }
        d
    }
}

/// Map a wavefunction to chart coordinates relative to `pivot`.
///
/// Fails with `PivotDegenerate` when the pivot population is at or below
/// [`PIVOT_THRESHOLD`]; the caller should re-pivot to the dominant component.
pub fn to_chart(psi: &Wavefunction, pivot: usize) -> Result<ChartState> {
    let n = psi.dim();
    assert!(pivot < n, "pivot out of range");
    let pivot_pop = psi.population(pivot);
    if pivot_pop <= PIVOT_THRESHOLD {
        return Err(Error::PivotDegenerate {
            pivot,
            population: pivot_pop,
            threshold: PIVOT_THRESHOLD,
        });
    }
    let pivot_arg = psi.amplitudes()[pivot].arg();
    let mut p = Vec::with_capacity(n - 1);
    let mut q = Vec::with_capacity(n - 1);
    for (j, c) in psi.amplitudes().iter().enumerate() {
        if j == pivot {
            continue;
        }
        p.push(wrap_angle(c.arg() - pivot_arg));
        q.push(c.norm_sqr());
    }
    ChartState::new(DVector::from_vec(p), DVector::from_vec(q), pivot)
}

/// Reconstruct the wavefunction of a chart state, with the pivot phase fixed
/// to zero.
pub fn to_wavefunction(chart: &ChartState) -> Result<Wavefunction> {
    let total: f64 = chart.q.iter().sum();
    if total > 1.0 + NORM_TOL {
        return Err(Error::InvalidPopulations { total });
    }
    let n = chart.dim();
    let mut amps = DVector::from_element(n, Complex64::new(0.0, 0.0));
    amps[chart.pivot] = Complex64::new((1.0 - total).max(0.0).sqrt(), 0.0);
    let mut k = 0;
    for j in 0..n {
        if j == chart.pivot {
            continue;
        }
        amps[j] = Complex64::from_polar(chart.q[k].max(0.0).sqrt(), chart.p[k]);
        k += 1;
    }
    // Renormalize away the rounding in sqrt/sum; the drift is at most NORM_TOL.
    Ok(Wavefunction::normalized(amps))
}

/// Re-express the same ray relative to a different pivot.
pub fn repivot(chart: &ChartState, new_pivot: usize) -> Result<ChartState> {
    if new_pivot == chart.pivot {
        return Ok(chart.clone());
    }
    let psi = to_wavefunction(chart)?;
    to_chart(&psi, new_pivot)
}

/// Chart mapping with the conditioning threshold bypassed, for forced frame
/// alignment of states that sit near a pivot boundary. The pivot amplitude
/// must still be nonzero for the angles to exist.
pub(crate) fn to_chart_forced(psi: &Wavefunction, pivot: usize) -> Result<ChartState> {
    let pop = psi.population(pivot);
    if pop < 1e-14 {
        return Err(Error::PivotDegenerate {
            pivot,
            population: pop,
            threshold: 0.0,
        });
    }
    let pivot_arg = psi.amplitudes()[pivot].arg();
    let n = psi.dim();
    let mut p = Vec::with_capacity(n - 1);
    let mut q = Vec::with_capacity(n - 1);
    for (j, c) in psi.amplitudes().iter().enumerate() {
        if j == pivot {
            continue;
        }
        p.push(wrap_angle(c.arg() - pivot_arg));
        q.push(c.norm_sqr());
    }
    ChartState::new(DVector::from_vec(p), DVector::from_vec(q), pivot)
}

pub(crate) fn repivot_forced(chart: &ChartState, new_pivot: usize) -> Result<ChartState> {
    if new_pivot == chart.pivot {
        return Ok(chart.clone());
    }
    let psi = to_wavefunction(chart)?;
    to_chart_forced(&psi, new_pivot)
}

/// One evolution step of the chart under a pivot-hysteresis policy: keep the
/// current pivot while its population stays above [`PIVOT_THRESHOLD`], and
/// otherwise move to the dominant component provided it holds at least
/// [`REPIVOT_TARGET_MIN`].
pub fn select_pivot(psi: &Wavefunction, current: usize) -> Result<usize> {
    let pop = psi.population(current);
    if pop > PIVOT_THRESHOLD {
        return Ok(current);
    }
    let best = psi.dominant_component();
    if psi.population(best) > REPIVOT_TARGET_MIN {
        Ok(best)
    } else {
        Err(Error::PivotDegenerate {
            pivot: current,
            population: pop,
            threshold: PIVOT_THRESHOLD,
        })
    }
}

/// 2×2 special case used in hot paths: swap the pivot of a single-pair chart.
/// The coordinates transform as (p, q) → (−p, 1 − q).
pub fn swap_pivot_pair(p: f64, q: f64) -> (f64, f64) {
    (wrap_angle(-p), 1.0 - q)
}

/// Complex 2×2 Hermitian eigen-pair helper for tests and models.
pub fn hermitian_2x2(m: &Matrix2<Complex64>) -> (Vector2<f64>, Matrix2<Complex64>) {
    let se = m.symmetric_eigen();
    (
        Vector2::new(se.eigenvalues[0], se.eigenvalues[1]),
        se.eigenvectors,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn psi2(a: Complex64, b: Complex64) -> Wavefunction {
        Wavefunction::normalized(DVector::from_vec(vec![a, b]))
    }

    fn re(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn equal_real_amplitudes() {
        let s = to_chart(&psi2(re(1.0), re(1.0)), 0).unwrap();
        assert!(s.p1().abs() < 1e-14);
        assert!((s.q1() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn phase_read_off() {
        let s = to_chart(&psi2(re(1.0), Complex64::new(0.0, 1.0)), 0).unwrap();
        assert!((s.p1() - FRAC_PI_2).abs() < 1e-14);
        assert!((s.q1() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn lz_ground_state_example() {
        // (cos(θ/2), −sin(θ/2)) lands at p = π, q = sin²(θ/2).
        let theta = (1.0f64 / 10.0).atan();
        let s = to_chart(&psi2(re((theta / 2.0).cos()), re(-(theta / 2.0).sin())), 0).unwrap();
        assert!(angle_diff(s.p1(), PI).abs() < 1e-14);
        assert!((s.q1() - (theta / 2.0).sin().powi(2)).abs() < 1e-14);
    }

    #[test]
    fn reconstruction_examples() {
        let psi = to_wavefunction(&ChartState::pair(0.0, 0.5, 0)).unwrap();
        assert!((psi.amplitudes()[0] - re(0.5f64.sqrt())).norm() < 1e-14);
        assert!((psi.amplitudes()[1] - re(0.5f64.sqrt())).norm() < 1e-14);

        // Phase π puts a sign on the non-pivot amplitude.
        let psi = to_wavefunction(&ChartState::pair(PI, 0.99, 0)).unwrap();
        assert!((psi.amplitudes()[0] - re(0.01f64.sqrt())).norm() < 1e-12);
        assert!((psi.amplitudes()[1] - re(-0.99f64.sqrt())).norm() < 1e-12);
    }

    #[test]
    fn invalid_populations_rejected() {
        let err = ChartState::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![0.7, 0.5]),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidPopulations { .. }));
    }

    #[test]
    fn degenerate_pivot_rejected() {
        let psi = psi2(re(0.05), re(1.0));
        let err = to_chart(&psi, 0).unwrap_err();
        assert!(matches!(err, Error::PivotDegenerate { .. }));
        // Hysteresis policy routes to the dominant component.
        assert_eq!(select_pivot(&psi, 0).unwrap(), 1);
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize) -> Wavefunction {
        let amps = DVector::from_fn(n, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        Wavefunction::normalized(amps)
    }

    #[test]
    fn round_trip_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1005);
        let mut checked = 0;
        while checked < 1000 {
            let n = 2 + (checked % 3);
            let psi = random_state(&mut rng, n);
            let pivot = psi.dominant_component();
            let s = to_chart(&psi, pivot).unwrap();
            let back = to_chart(&to_wavefunction(&s).unwrap(), pivot).unwrap();
            assert!(s.distance(&back) < 1e-12);
            // Projective identity: the reconstruction is the same ray.
            assert!((to_wavefunction(&s).unwrap().overlap_modulus(&psi) - 1.0).abs() < 1e-12);
            checked += 1;
        }
    }

    #[test]
    fn repivot_symmetric_state() {
        let s = to_chart(&psi2(re(1.0), re(1.0)), 0).unwrap();
        let r = repivot(&s, 1).unwrap();
        assert!(r.p1().abs() < 1e-14);
        assert!((r.q1() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn repivot_negates_phase() {
        let s = to_chart(&psi2(re(1.0), Complex64::new(0.0, 1.0)), 0).unwrap();
        let r = repivot(&s, 1).unwrap();
        assert!((r.p1() + FRAC_PI_2).abs() < 1e-14);
        assert!((r.q1() - 0.5).abs() < 1e-14);
        let (sp, sq) = swap_pivot_pair(s.p1(), s.q1());
        assert!((sp - r.p1()).abs() < 1e-14 && (sq - r.q1()).abs() < 1e-14);
    }

    #[test]
    fn repivot_preserves_ray_and_is_involutive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x2207);
        for _ in 0..1000 {
            let psi = random_state(&mut rng, 3);
            let a = psi.dominant_component();
            let s = to_chart(&psi, a).unwrap();
            // Pick any other component heavy enough to host the pivot.
            let Some(b) = (0..3).find(|&j| j != a && psi.population(j) > PIVOT_THRESHOLD) else {
                continue;
            };
            let r = repivot(&s, b).unwrap();
            let psi_a = to_wavefunction(&s).unwrap();
            let psi_b = to_wavefunction(&r).unwrap();
            assert!((psi_a.overlap_modulus(&psi_b) - 1.0).abs() < 1e-12);
            let back = repivot(&r, a).unwrap();
            assert!(s.distance(&back) < 1e-12);
        }
    }
}
