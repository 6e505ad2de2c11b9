//! TOML run configuration.
//!
//! The file must spell out every field (`RunConfig` derives with
//! `deny_unknown_fields`, so typos are hard errors, and serde reports any
//! missing field by name). `template` renders a complete file from the
//! built-in defaults to start from.

use std::path::Path;

use anyhow::{Context, Result};
use latentfill_core::pipeline::RunConfig;

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let config: RunConfig =
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    config.validate().map_err(anyhow::Error::new)?;
    Ok(config)
}

pub fn template(config: &RunConfig) -> Result<String> {
    Ok(toml::to_string_pretty(config)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_round_trips() {
        let config = RunConfig::tiny();
        let text = template(&config).unwrap();
        let parsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed, config);
        assert_eq!(parsed.fingerprint(), config.fingerprint());
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        // top-level typo
        let text = template(&RunConfig::tiny()).unwrap();
        let with_top = format!("not_a_real_knob = 3\n{text}");
        assert!(toml::from_str::<RunConfig>(&with_top).is_err());

        // typo inside a sub-table
        let mut with_nested = text.clone();
        with_nested.push_str("\n[dataset.bogus]\nx = 1\n");
        assert!(toml::from_str::<RunConfig>(&with_nested).is_err());
        let mut in_dataset = text;
        in_dataset.push_str("\nbogus = 1\n"); // lands inside [dataset]
        assert!(toml::from_str::<RunConfig>(&in_dataset).is_err());
    }

    #[test]
    fn missing_keys_are_hard_errors() {
        let text = template(&RunConfig::tiny()).unwrap();
        let without: String = text
            .lines()
            .filter(|l| !l.starts_with("tau"))
            .collect::<Vec<_>>()
            .join("\n");
        assert!(toml::from_str::<RunConfig>(&without).is_err());
    }
}
