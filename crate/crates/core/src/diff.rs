//! Central finite differences with two-level Richardson extrapolation.
//!
//! First derivatives use the 4th-order five-point stencil at steps h and h/2,
//! combined to 6th order; the level disagreement doubles as an error estimate.
//! Second derivatives and nested derivatives use progressively wider steps,
//! since each differencing level loses digits to roundoff.

use crate::error::{Error, Result};

/// Step scales, tuned so roundoff and truncation balance for smooth O(1)
/// functions: eps^(1/3) for first derivatives, eps^(1/6) for second, and a
/// further widening per nesting level (h, 2h, 4h).
pub fn step_first(x: f64) -> f64 {
    x.abs().max(1.0) * f64::EPSILON.powf(1.0 / 3.0)
}

pub fn step_second(x: f64) -> f64 {
    x.abs().max(1.0) * f64::EPSILON.powf(1.0 / 6.0)
}

/// Step for differencing a quantity that is itself a finite-difference result,
/// widened by a factor 2 per nesting level.
pub fn step_nested(level: u32) -> f64 {
    f64::EPSILON.powf(1.0 / 6.0) * f64::powi(2.0, level as i32)
}

/// A derivative estimate together with the Richardson level disagreement.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    /// Fail if the Richardson levels disagree beyond `bound` (absolute, with
    /// the value's own scale folded in).
    pub fn checked(self, bound: f64) -> Result<f64> {
        let scale = self.value.abs().max(1.0);
        if self.error > bound * scale {
            Err(Error::DerivativeUnstable {
                disagreement: self.error,
                bound: bound * scale,
            })
        } else {
            Ok(self.value)
        }
    }
}

/// 4th-order five-point first-derivative stencil.
fn d1_stencil<F: Fn(f64) -> f64>(f: &F, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

/// First derivative, two Richardson levels at steps h and 2h (widening
/// rather than halving keeps roundoff in check).
pub fn derivative<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> Estimate {
    let fine = d1_stencil(&f, x, h);
    let coarse = d1_stencil(&f, x, 2.0 * h);
    Estimate {
        value: (16.0 * fine - coarse) / 15.0,
        error: (fine - coarse).abs() / 15.0,
    }
}

/// First derivative at the default step for the point.
pub fn derivative_auto<F: Fn(f64) -> f64>(f: F, x: f64) -> Estimate {
    let h = step_first(x);
    derivative(f, x, h)
}

/// 4th-order five-point second-derivative stencil.
fn d2_stencil<F: Fn(f64) -> f64>(f: &F, x: f64, h: f64) -> f64 {
    (-f(x - 2.0 * h) + 16.0 * f(x - h) - 30.0 * f(x) + 16.0 * f(x + h) - f(x + 2.0 * h))
        / (12.0 * h * h)
}

/// Second derivative, Richardson over steps h and 2h (the wider pair keeps
/// roundoff in check).
pub fn second_derivative<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> Estimate {
    let fine = d2_stencil(&f, x, h);
    let coarse = d2_stencil(&f, x, 2.0 * h);
    Estimate {
        value: (16.0 * fine - coarse) / 15.0,
        error: (fine - coarse).abs() / 15.0,
    }
}

pub fn second_derivative_auto<F: Fn(f64) -> f64>(f: F, x: f64) -> Estimate {
    let h = step_second(x);
    second_derivative(f, x, h)
}

/// Mixed second partial ∂²f/∂x∂y via the four-point cross stencil with one
/// Richardson level, at the caller's step (the stencil reaches ±2h).
pub fn mixed_derivative_at<F: Fn(f64, f64) -> f64>(f: F, x: f64, y: f64, h: f64) -> Estimate {
    let cross = |s: f64| {
        (f(x + s, y + s) - f(x + s, y - s) - f(x - s, y + s) + f(x - s, y - s)) / (4.0 * s * s)
    };
    let fine = cross(h);
    let coarse = cross(2.0 * h);
    Estimate {
        value: (4.0 * fine - coarse) / 3.0,
        error: (fine - coarse).abs() / 3.0,
    }
}

/// Mixed second partial at the default step for the point.
pub fn mixed_derivative<F: Fn(f64, f64) -> f64>(f: F, x: f64, y: f64) -> Estimate {
    let h = step_second(x).min(step_second(y));
    mixed_derivative_at(f, x, y, h)
}
