//! Experiment manifests: a TOML schema with full validation.
//!
//! Parse errors carry the line and column reported by the TOML parser;
//! validation errors name the offending key and the legal range.

use serde::Deserialize;

use adhier::dynamics::Protocol;
use adhier::models::{LandauZener, SpinRotatingField};
use adhier::ParametricHamiltonian;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {key}: {message}")]
    Invalid { key: String, message: String },
    #[error("unknown preset '{0}' (try `adhier presets list`)")]
    UnknownPreset(String),
    #[error("unknown sweep axis '{0}'")]
    UnknownAxis(String),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment id; output file names derive from it.
    pub name: String,
    pub model: ModelConfig,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub integration: IntegrationConfig,
    #[serde(default)]
    pub hierarchy: HierarchyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Spin-1/2 in a rotating field of strength `l`; R is the field angle.
    Spin {
        #[serde(default = "default_unit")]
        l: f64,
        /// Followed branch by ascending energy; the rotating-field
        /// experiments follow the upper one.
        #[serde(default = "default_spin_branch")]
        branch: usize,
    },
    /// Landau–Zener with coupling `x`; R is the diagonal bias z.
    Lz {
        #[serde(default = "default_unit")]
        x: f64,
        #[serde(default)]
        branch: usize,
    },
}

fn default_unit() -> f64 {
    1.0
}

fn default_spin_branch() -> usize {
    SpinRotatingField::UPPER_BRANCH
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProtocolConfig {
    Constant {
        r0: f64,
    },
    Linear {
        #[serde(default)]
        r0: f64,
        rate: f64,
    },
    Quadratic {
        #[serde(default)]
        r0: f64,
        accel: f64,
    },
    SquareWaveRate {
        amplitude: f64,
        #[serde(default = "default_unit")]
        nu: f64,
    },
    /// z swept linearly from −z0 to z0 at rate v; the time span derives from
    /// the range.
    LzSweep {
        v: f64,
        z0: f64,
    },
    Piecewise {
        knots: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    /// Required unless the protocol fixes its own span (lz-sweep).
    pub t_end: Option<f64>,
    #[serde(default = "default_samples_per_period")]
    pub samples_per_period: f64,
    /// Also integrate the Schrödinger oracle and report the agreement.
    #[serde(default = "default_true")]
    pub oracle: bool,
}

fn default_rel_tol() -> f64 {
    1e-11
}

fn default_abs_tol() -> f64 {
    1e-13
}

fn default_samples_per_period() -> f64 {
    adhier::dynamics::SAMPLES_PER_PERIOD
}

fn default_true() -> bool {
    true
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            rel_tol: default_rel_tol(),
            abs_tol: default_abs_tol(),
            t_end: None,
            samples_per_period: default_samples_per_period(),
            oracle: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyConfig {
    /// Deviation order K.
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
}

fn default_order() -> usize {
    2
}

fn default_k_max() -> usize {
    adhier::hierarchy::K_MAX_DEFAULT
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            order: default_order(),
            k_max: default_k_max(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Emitted trajectory rows are decimated to at most this count.
    #[serde(default = "default_max_csv_rows")]
    pub max_csv_rows: usize,
}

fn default_max_csv_rows() -> usize {
    200_000
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            max_csv_rows: default_max_csv_rows(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(invalid("name", "must be a non-empty [A-Za-z0-9_-]+ id"));
        }
        match &self.model {
            ModelConfig::Spin { l, branch } => {
                if *l <= 0.0 {
                    return Err(invalid("model.l", "coupling must be positive"));
                }
                if *branch > 1 {
                    return Err(invalid(
                        "model.branch",
                        "two-level model has branches 0 and 1",
                    ));
                }
            }
            ModelConfig::Lz { x, branch } => {
                if *x <= 0.0 {
                    return Err(invalid("model.x", "coupling must be positive"));
                }
                if *branch > 1 {
                    return Err(invalid(
                        "model.branch",
                        "two-level model has branches 0 and 1",
                    ));
                }
            }
        }
        match &self.protocol {
            ProtocolConfig::Linear { rate, .. } => {
                if !rate.is_finite() {
                    return Err(invalid("protocol.rate", "must be finite"));
                }
            }
            ProtocolConfig::Quadratic { accel, .. } => {
                if !accel.is_finite() {
                    return Err(invalid("protocol.accel", "must be finite"));
                }
            }
            ProtocolConfig::SquareWaveRate { amplitude, nu } => {
                if *amplitude <= 0.0 {
                    return Err(invalid("protocol.amplitude", "must be positive"));
                }
                if *nu <= 0.0 {
                    return Err(invalid("protocol.nu", "flip frequency must be positive"));
                }
            }
            ProtocolConfig::LzSweep { v, z0 } => {
                if *v <= 0.0 {
                    return Err(invalid("protocol.v", "sweep rate must be positive"));
                }
                if *z0 <= 0.0 {
                    return Err(invalid("protocol.z0", "sweep half-range must be positive"));
                }
                if !matches!(self.model, ModelConfig::Lz { .. }) {
                    return Err(invalid(
                        "protocol.kind",
                        "lz-sweep requires model.kind = \"lz\"",
                    ));
                }
            }
            ProtocolConfig::Piecewise { knots } => {
                if knots.len() < 2 {
                    return Err(invalid("protocol.knots", "need at least two knots"));
                }
                if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(invalid(
                        "protocol.knots",
                        "knot times must increase strictly",
                    ));
                }
            }
            ProtocolConfig::Constant { .. } => {}
        }
        let integ = &self.integration;
        if !(1e-13..=1e-6).contains(&integ.rel_tol) {
            return Err(invalid(
                "integration.rel_tol",
                "legal range is [1e-13, 1e-6]",
            ));
        }
        if !(1e-16..=integ.rel_tol).contains(&integ.abs_tol) {
            return Err(invalid(
                "integration.abs_tol",
                "legal range is [1e-16, rel_tol]",
            ));
        }
        if !(4.0..=4096.0).contains(&integ.samples_per_period) {
            return Err(invalid(
                "integration.samples_per_period",
                "legal range is [4, 4096]",
            ));
        }
        match (&self.protocol, integ.t_end) {
            (ProtocolConfig::LzSweep { .. }, _) => {}
            (_, Some(t)) if t > 0.0 && t.is_finite() => {}
            (_, Some(_)) => {
                return Err(invalid("integration.t_end", "must be positive and finite"))
            }
            (_, None) => {
                return Err(invalid(
                    "integration.t_end",
                    "required unless the protocol derives its own span",
                ))
            }
        }
        let hier = &self.hierarchy;
        if hier.k_max == 0 || hier.k_max > 4 {
            return Err(invalid("hierarchy.k_max", "legal range is [1, 4]"));
        }
        if hier.order == 0 || hier.order > hier.k_max {
            return Err(invalid("hierarchy.order", "legal range is [1, k_max]"));
        }
        if self.output.max_csv_rows < 1000 {
            return Err(invalid("output.max_csv_rows", "must be at least 1000"));
        }
        Ok(())
    }

    pub fn model_label(&self) -> String {
        match &self.model {
            ModelConfig::Spin { l, branch } => format!("spin(l={l}, branch={branch})"),
            ModelConfig::Lz { x, branch } => format!("lz(x={x}, branch={branch})"),
        }
    }

    pub fn branch(&self) -> usize {
        match &self.model {
            ModelConfig::Spin { branch, .. } => *branch,
            ModelConfig::Lz { branch, .. } => *branch,
        }
    }

    pub fn hamiltonian(&self) -> ParametricHamiltonian {
        match &self.model {
            ModelConfig::Spin { l, .. } => SpinRotatingField { l: *l }.hamiltonian(),
            ModelConfig::Lz { x, .. } => LandauZener { x: *x }.hamiltonian(),
        }
    }

    pub fn protocol(&self) -> Protocol {
        match &self.protocol {
            ProtocolConfig::Constant { r0 } => Protocol::Constant { r0: *r0 },
            ProtocolConfig::Linear { r0, rate } => Protocol::Linear {
                r0: *r0,
                rate: *rate,
            },
            ProtocolConfig::Quadratic { r0, accel } => Protocol::Quadratic {
                r0: *r0,
                accel: *accel,
            },
            ProtocolConfig::SquareWaveRate { amplitude, nu } => Protocol::SquareWaveRate {
                amplitude: *amplitude,
                nu: *nu,
            },
            ProtocolConfig::LzSweep { v, z0 } => Protocol::Linear { r0: -z0, rate: *v },
            ProtocolConfig::Piecewise { knots } => Protocol::PiecewiseLinear {
                knots: knots.clone(),
            },
        }
    }

    pub fn t_span(&self) -> (f64, f64) {
        match &self.protocol {
            ProtocolConfig::LzSweep { v, z0 } => (0.0, 2.0 * z0 / v),
            _ => (0.0, self.integration.t_end.expect("validated")),
        }
    }
}

/// Numeric parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    ModelL,
    ModelX,
    ProtocolRate,
    ProtocolAccel,
    ProtocolAmplitude,
    ProtocolNu,
    ProtocolV,
    ProtocolZ0,
    RelTol,
    TEnd,
}

impl SweepAxis {
    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        Ok(match name {
            "model.l" => Self::ModelL,
            "model.x" => Self::ModelX,
            "protocol.rate" => Self::ProtocolRate,
            "protocol.accel" => Self::ProtocolAccel,
            "protocol.amplitude" => Self::ProtocolAmplitude,
            "protocol.nu" => Self::ProtocolNu,
            "protocol.v" => Self::ProtocolV,
            "protocol.z0" => Self::ProtocolZ0,
            "integration.rel_tol" => Self::RelTol,
            "integration.t_end" => Self::TEnd,
            _ => return Err(ConfigError::UnknownAxis(name.to_string())),
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::ModelL => "model.l",
            Self::ModelX => "model.x",
            Self::ProtocolRate => "protocol.rate",
            Self::ProtocolAccel => "protocol.accel",
            Self::ProtocolAmplitude => "protocol.amplitude",
            Self::ProtocolNu => "protocol.nu",
            Self::ProtocolV => "protocol.v",
            Self::ProtocolZ0 => "protocol.z0",
            Self::RelTol => "integration.rel_tol",
            Self::TEnd => "integration.t_end",
        }
    }

    /// A copy of the config with this axis set to `value`, re-validated.
    pub fn apply(
        &self,
        base: &ExperimentConfig,
        value: f64,
    ) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = base.clone();
        match (self, &mut cfg.model, &mut cfg.protocol) {
            (Self::ModelL, ModelConfig::Spin { l, .. }, _) => *l = value,
            (Self::ModelX, ModelConfig::Lz { x, .. }, _) => *x = value,
            (Self::ProtocolRate, _, ProtocolConfig::Linear { rate, .. }) => *rate = value,
            (Self::ProtocolAccel, _, ProtocolConfig::Quadratic { accel, .. }) => *accel = value,
            (Self::ProtocolAmplitude, _, ProtocolConfig::SquareWaveRate { amplitude, .. }) => {
                *amplitude = value
            }
            (Self::ProtocolNu, _, ProtocolConfig::SquareWaveRate { nu, .. }) => *nu = value,
            (Self::ProtocolV, _, ProtocolConfig::LzSweep { v, .. }) => *v = value,
            (Self::ProtocolZ0, _, ProtocolConfig::LzSweep { z0, .. }) => *z0 = value,
            (Self::RelTol, _, _) => cfg.integration.rel_tol = value,
            (Self::TEnd, _, _) => cfg.integration.t_end = Some(value),
            _ => {
                return Err(ConfigError::Invalid {
                    key: self.label().to_string(),
                    message: "axis does not apply to this model/protocol".to_string(),
                })
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
