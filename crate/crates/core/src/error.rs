use thiserror::Error;

/// Errors shared by all phase-space modules.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// The pivot component carries too little population for a well-conditioned chart.
    #[error(
        "pivot {pivot} population {population:.3e} is at or below the threshold {threshold:.3e}"
    )]
    PivotDegenerate {
        pivot: usize,
        population: f64,
        threshold: f64,
    },

    /// Chart populations sum past unity; no wavefunction reconstructs from them.
    #[error("populations sum to {total} > 1")]
    InvalidPopulations { total: f64 },

    /// The spectrum gap closed below the floor; fixed points and the hierarchy
    /// are undefined there.
    #[error("eigenvalue gap {gap:.3e} at R = {r} is at or below the degeneracy floor {floor:.3e}")]
    DegenerateSpectrum { r: f64, gap: f64, floor: f64 },

    /// Richardson levels of a finite-difference estimate disagree beyond the
    /// stability bound, indicating a pathological function or step size.
    #[error("finite-difference estimate unstable: Richardson levels disagree by {disagreement:.3e} (bound {bound:.3e})")]
    DerivativeUnstable { disagreement: f64, bound: f64 },

    /// Continuity tracking of a fixed-point branch failed between nearby R values.
    #[error("fixed-point branch jumped by {distance:.3e} in chart distance between R = {r_from} and R = {r_to} (bound {bound})")]
    BranchJump {
        r_from: f64,
        r_to: f64,
        distance: f64,
        bound: f64,
    },

    /// A hierarchy order beyond the configured maximum was requested.
    #[error("order {requested} exceeds the configured maximum {max}")]
    GradeOverflow { requested: usize, max: usize },

    /// The sampled orbit does not close well enough for an action integral.
    #[error(
        "orbit closure gap {gap:.3e} exceeds tolerance {tolerance:.3e} (diameter {diameter:.3e})"
    )]
    OrbitNotClosed {
        gap: f64,
        tolerance: f64,
        diameter: f64,
    },

    /// State norm drifted more per accepted step than the integrator tolerance
    /// should permit.
    #[error(
        "norm drift {drift:.3e} per step at t = {t} exceeds {bound:.3e}; tighten the tolerance"
    )]
    NormDrift { t: f64, drift: f64, bound: f64 },

    /// The adaptive integrator was forced below the minimal representable step.
    #[error("integration step underflow at t = {t} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },

    /// The integrator hit its step budget before reaching the end of the span.
    #[error("integration exceeded {max_steps} steps at t = {t}")]
    StepLimit { t: f64, max_steps: usize },

    /// A population reached the coordinate singularity and no re-pivot resolves it.
    #[error("chart singular at t = {t}: population {population:.3e} within {margin:.3e} of the coordinate boundary")]
    ChartSingularity {
        t: f64,
        population: f64,
        margin: f64,
    },

    /// Operation needs the Hermitian matrix generator, but the Hamiltonian was
    /// built from a classical form only.
    #[error("operation requires a matrix generator, but this Hamiltonian supplies only a classical form")]
    NoMatrixGenerator,
}

pub type Result<T> = std::result::Result<T, Error>;
