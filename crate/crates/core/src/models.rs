//! Built-in two-level models with closed-form classical data.
//!
//! Both models ship the matrix generator together with analytic value,
//! gradient, Hessian, and fixed-point branches, so every generic derivative
//! path in the library can be cross-checked against exact expressions.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::chart::{ChartState, Wavefunction};
use crate::classical::{AnalyticClassical, HessianBlocks, ParametricHamiltonian};

/// √(q − q²) and its first three derivatives. Valid for q strictly inside
/// (0, 1).
fn root_pop(q: f64) -> (f64, f64, f64, f64) {
    let u = q - q * q;
    let du = 1.0 - 2.0 * q;
    let g = u.sqrt();
    let g1 = du / (2.0 * g);
    let g2 = -1.0 / g - du * du / (4.0 * u * g);
    let g3 = 1.5 * du / (u * g) + 0.375 * du * du * du / (u * u * g);
    (g, g1, g2, g3)
}

/// Spin-1/2 in a rotating transverse field of strength L; the adiabatic
/// parameter R is the field angle α.
///
/// Matrix form: off-diagonal (L/2)e^{∓iα}, zero diagonal. Classical form:
/// H₀ = L√(q−q²)cos(α−p), with elliptic fixed points at (p̄, q̄) = (α, ½)
/// (upper branch) and (α+π, ½) (lower branch).
#[derive(Debug, Clone, Copy)]
pub struct SpinRotatingField {
    pub l: f64,
}

impl SpinRotatingField {
    /// Branch index (ascending energy) of the p̄ = α fixed point that the
    /// rotating-field experiments follow.
    pub const UPPER_BRANCH: usize = 1;

    pub fn hamiltonian(&self) -> ParametricHamiltonian {
        let l = self.l;
        ParametricHamiltonian::from_parts(
            2,
            Box::new(move |alpha: f64| {
                let off = Complex64::from_polar(l / 2.0, -alpha);
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        Complex64::new(0.0, 0.0),
                        off,
                        off.conj(),
                        Complex64::new(0.0, 0.0),
                    ],
                )
            }),
            self.analytic(),
            &[0.0, 0.7, 2.9, -1.3],
        )
    }

    /// Same generator with every closed form stripped, for exercising the
    /// purely numeric path.
    pub fn hamiltonian_matrix_only(&self) -> ParametricHamiltonian {
        let l = self.l;
        ParametricHamiltonian::from_matrix(
            2,
            Box::new(move |alpha: f64| {
                let off = Complex64::from_polar(l / 2.0, -alpha);
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        Complex64::new(0.0, 0.0),
                        off,
                        off.conj(),
                        Complex64::new(0.0, 0.0),
                    ],
                )
            }),
        )
    }

    fn analytic(&self) -> AnalyticClassical {
        let l = self.l;
        AnalyticClassical {
            pivot: 0,
            value: Box::new(move |s: &ChartState, alpha: f64| {
                let (g, _, _, _) = root_pop(s.q1());
                l * g * (alpha - s.p1()).cos()
            }),
            gradient: Some(Box::new(move |s: &ChartState, alpha: f64| {
                let (g, g1, _, _) = root_pop(s.q1());
                let (sin, cos) = (alpha - s.p1()).sin_cos();
                (
                    DVector::from_vec(vec![l * g * sin]),
                    DVector::from_vec(vec![l * g1 * cos]),
                )
            })),
            hessian: Some(Box::new(move |s: &ChartState, alpha: f64| {
                let (g, g1, g2, _) = root_pop(s.q1());
                let (sin, cos) = (alpha - s.p1()).sin_cos();
                HessianBlocks::pair(-l * g * cos, l * g1 * sin, l * g2 * cos)
            })),
            fixed_points: Some(Box::new(move |alpha: f64, branch: usize| {
                let p = if branch == Self::UPPER_BRANCH {
                    alpha
                } else {
                    alpha + std::f64::consts::PI
                };
                (p, 0.5)
            })),
        }
    }
}

/// Closed-form first-order data for the spin model's upper branch.
#[derive(Debug, Clone, Copy)]
pub struct SpinClosedForms {
    /// (p̄, q̄) of the followed branch.
    pub fixed_point: (f64, f64),
    /// (p̄, q̄) of the opposite branch.
    pub other_fixed_point: (f64, f64),
    /// Quadratic coefficients (c_pp, c_pq, c_qq) of the first-order
    /// Hamiltonian ½c_pp(δp−A₁)² + c_pq(δp−A₁)(δq−B₁) + ½c_qq(δq−B₁)².
    pub h1: (f64, f64, f64),
    /// First-order center (A₁, B₁) = (0, α̇/2L).
    pub shift1: (f64, f64),
    /// First-order action when α̇ jumps from 0 to its value at t = 0:
    /// I₁ = α̇²/4L².
    pub i1_sudden_start: f64,
}

/// Closed forms for the spin model at a given field angle and angular rate.
pub fn spin_closed_forms(l: f64, alpha: f64, alphadot: f64) -> SpinClosedForms {
    SpinClosedForms {
        fixed_point: (alpha, 0.5),
        other_fixed_point: (alpha + std::f64::consts::PI, 0.5),
        h1: (-l / 2.0, 0.0, -2.0 * l),
        shift1: (0.0, alphadot / (2.0 * l)),
        i1_sudden_start: alphadot * alphadot / (4.0 * l * l),
    }
}

/// First-order solution of the rotating-field problem under α = ωt starting
/// from the upper eigenstate: the relative phase is ωt − (ω/L)sin(Lt) and
/// the populations bulge by ±(ω/2L)(1 − cos Lt).
///
/// The sign of the sin term follows from the first-order dynamics itself
/// (δṗ(0) = 2L(δq − B₁) = −ω at the sudden start) and is confirmed by the
/// exact rotating-frame propagator. The expression is accurate to O(ω/L);
/// the constructor renormalizes the O(ω²) norm defect.
pub fn spin_analytic_solution(l: f64, omega: f64, t: f64) -> Wavefunction {
    let bump = omega / (2.0 * l) * (1.0 - (l * t).cos());
    let phase = omega * t - omega / l * (l * t).sin();
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    Wavefunction::normalized(DVector::from_vec(vec![
        Complex64::new(inv_sqrt2 * (1.0 - bump), 0.0),
        Complex64::from_polar(inv_sqrt2 * (1.0 + bump), phase),
    ]))
}

/// Landau–Zener model: constant coupling x > 0, diagonal bias z swept as the
/// adiabatic parameter R.
///
/// Matrix form: diag(z/2, −z/2) with off-diagonal x/2. The classical value
/// used here is the full expectation x√(q−q²)cos p − zq + z/2; the
/// state-independent z/2 offset shifts values only, never derivatives, so
/// all fixed points and hierarchy quantities match the offset-free form.
#[derive(Debug, Clone, Copy)]
pub struct LandauZener {
    pub x: f64,
}

impl LandauZener {
    /// Branch index of the lower-energy fixed point (p̄ = π, q̄ = ½ + z/2w)
    /// that the sweep experiments follow.
    pub const LOWER_BRANCH: usize = 0;

    pub fn hamiltonian(&self) -> ParametricHamiltonian {
        ParametricHamiltonian::from_parts(
            2,
            Self::generator(self.x),
            self.analytic(),
            &[-3.0, -0.5, 0.0, 0.9, 4.0],
        )
    }

    pub fn hamiltonian_matrix_only(&self) -> ParametricHamiltonian {
        ParametricHamiltonian::from_matrix(2, Self::generator(self.x))
    }

    fn generator(x: f64) -> Box<dyn Fn(f64) -> DMatrix<Complex64> + Send + Sync> {
        Box::new(move |z: f64| {
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    Complex64::new(z / 2.0, 0.0),
                    Complex64::new(x / 2.0, 0.0),
                    Complex64::new(x / 2.0, 0.0),
                    Complex64::new(-z / 2.0, 0.0),
                ],
            )
        })
    }

    fn analytic(&self) -> AnalyticClassical {
        let x = self.x;
        AnalyticClassical {
            pivot: 0,
            value: Box::new(move |s: &ChartState, z: f64| {
                let (g, _, _, _) = root_pop(s.q1());
                x * g * s.p1().cos() - z * s.q1() + z / 2.0
            }),
            gradient: Some(Box::new(move |s: &ChartState, z: f64| {
                let (g, g1, _, _) = root_pop(s.q1());
                let (sin, cos) = s.p1().sin_cos();
                (
                    DVector::from_vec(vec![-x * g * sin]),
                    DVector::from_vec(vec![x * g1 * cos - z]),
                )
            })),
            hessian: Some(Box::new(move |s: &ChartState, _z: f64| {
                let (g, g1, g2, _) = root_pop(s.q1());
                let (sin, cos) = s.p1().sin_cos();
                HessianBlocks::pair(-x * g * cos, -x * g1 * sin, x * g2 * cos)
            })),
            fixed_points: Some(Box::new(move |z: f64, branch: usize| {
                let w = (x * x + z * z).sqrt();
                if branch == Self::LOWER_BRANCH {
                    (std::f64::consts::PI, 0.5 + z / (2.0 * w))
                } else {
                    (0.0, 0.5 - z / (2.0 * w))
                }
            })),
        }
    }
}

/// Closed-form hierarchy data for the Landau–Zener lower branch.
#[derive(Debug, Clone, Copy)]
pub struct LzClosedForms {
    /// Lower branch (p̄, q̄) = (π, ½ + z/2√(x²+z²)).
    pub fixed_point: (f64, f64),
    pub other_fixed_point: (f64, f64),
    /// (c_pp, c_pq, c_qq) of H₁ at the exact fixed point:
    /// (x²/2w, 0, 2w(1 + z²/x²)).
    pub h1: (f64, f64, f64),
    /// (A₁, B₁) = (V/(x²+z²), 0).
    pub shift1: (f64, f64),
    /// Leading-order H₂ coefficients at the shifted expansion point:
    /// the cross term becomes −zV/(x²+z²).
    pub h2: (f64, f64, f64),
    /// (A₂, B₂) = (0, 5x²zV²/4(x²+z²)^{7/2}).
    pub shift2: (f64, f64),
}

/// Closed forms for the LZ lower branch at bias z and sweep rate V.
pub fn lz_closed_forms(x: f64, z: f64, v: f64) -> LzClosedForms {
    let w2 = x * x + z * z;
    let w = w2.sqrt();
    let c_pp = x * x / (2.0 * w);
    let c_qq = 2.0 * w * (1.0 + z * z / (x * x));
    LzClosedForms {
        fixed_point: (std::f64::consts::PI, 0.5 + z / (2.0 * w)),
        other_fixed_point: (0.0, 0.5 - z / (2.0 * w)),
        h1: (c_pp, 0.0, c_qq),
        shift1: (v / w2, 0.0),
        h2: (c_pp, -z * v / w2, c_qq),
        shift2: (0.0, 5.0 * x * x * z * v * v / (4.0 * w2.powf(3.5))),
    }
}

/// Reference Landau–Zener tunneling probability exp(−πx²/V). Every Taylor
/// coefficient in V vanishes, which is the benchmark for the all-orders decay
/// of the hierarchy shifts at large |z|.
pub fn lz_exact_tunneling_reference(x: f64, v: f64) -> f64 {
    (-std::f64::consts::PI * x * x / v).exp()
}
