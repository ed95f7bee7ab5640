//! Named scenarios shipped with the binary.

use std::path::PathBuf;

use crate::config::{ConfigError, ScenarioConfig};

/// Environment variable naming a directory whose `NAME.toml` files replace
/// the built-in presets of the same name.
pub const PRESET_DIR_ENV: &str = "MFC_LAB_PRESET_DIR";

const BUILTIN: [(&str, &str); 6] = [
    ("accel", include_str!("../presets/accel.toml")),
    ("decel", include_str!("../presets/decel.toml")),
    ("advanced-cruise", include_str!("../presets/advanced-cruise.toml")),
    ("pi-compare", include_str!("../presets/pi-compare.toml")),
    ("theorem1-toy", include_str!("../presets/theorem1-toy.toml")),
    ("peaking-grid", include_str!("../presets/peaking-grid.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

/// Built-in preset text, ignoring overrides.
pub fn builtin_text(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

fn override_path(name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os(PRESET_DIR_ENV)?;
    let path = PathBuf::from(dir).join(format!("{name}.toml"));
    path.is_file().then_some(path)
}

/// Preset source text, preferring an override file.
pub fn preset_text(name: &str) -> Result<String, ConfigError> {
    if let Some(path) = override_path(name) {
        return std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        });
    }
    builtin_text(name)
        .map(str::to_owned)
        .ok_or_else(|| ConfigError::UnknownPreset {
            name: name.to_owned(),
            available: preset_names().join(", "),
        })
}

pub fn load_preset(name: &str) -> Result<ScenarioConfig, ConfigError> {
    ScenarioConfig::from_toml(&preset_text(name)?)
}

pub fn load_file(path: &std::path::Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScenarioConfig::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_resolves() {
        for name in preset_names() {
            let cfg = ScenarioConfig::from_toml(builtin_text(name).unwrap()).unwrap();
            assert_eq!(cfg.name, name);
            cfg.resolve().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn unknown_preset_lists_names() {
        let err = preset_text("nope").unwrap_err().to_string();
        assert!(err.contains("accel") && err.contains("peaking-grid"));
    }
}
