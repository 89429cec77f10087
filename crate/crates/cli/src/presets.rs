//! Built-in experiment manifests, embedded from `presets/`.

use crate::config::{ConfigError, ExperimentConfig};

pub const PRESETS: &[(&str, &str)] = &[
    ("fig3", include_str!("../presets/fig3.toml")),
    ("fig4", include_str!("../presets/fig4.toml")),
    ("fig5", include_str!("../presets/fig5.toml")),
    ("lz-sweep", include_str!("../presets/lz-sweep.toml")),
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let text = source(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    ExperimentConfig::from_toml(text)
}

/// Resolve an argument as a preset name first, then as a manifest path.
pub fn resolve(arg: &str) -> Result<ExperimentConfig, ConfigError> {
    if source(arg).is_some() {
        return load(arg);
    }
    let text = std::fs::read_to_string(arg)
        .map_err(|e| ConfigError::Parse(format!("cannot read '{arg}': {e}")))?;
    ExperimentConfig::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_parse_and_validate() {
        for (name, _) in PRESETS {
            let cfg = load(name).unwrap();
            assert_eq!(&cfg.name, name);
        }
    }

    #[test]
    fn unknown_preset_is_config_error() {
        assert!(matches!(load("nope"), Err(ConfigError::UnknownPreset(_))));
    }
}
