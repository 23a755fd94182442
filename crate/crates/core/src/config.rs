//! Flat key=value configuration files, overridable from the command line.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::Variant;
use crate::trainer::{AblationMask, TrainConfig};

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::config(format!(
                "config line {}: expected key=value, got {raw:?}",
                ln + 1
            )));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Apply one setting to a training configuration.
pub fn apply_setting(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let bad = |what: &str| Error::config(format!("config {key}={value}: expected {what}"));
    match key {
        "variant" => cfg.variant = Variant::parse(value)?,
        "context" => cfg.context = value.parse().map_err(|_| bad("integer"))?,
        "dam" => cfg.dam = value.parse().map_err(|_| bad("true|false"))?,
        "iterations" => cfg.iterations = value.parse().map_err(|_| bad("integer"))?,
        "batch" => cfg.batch_size = value.parse().map_err(|_| bad("integer"))?,
        "lr" => cfg.lr = value.parse().map_err(|_| bad("number"))?,
        "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
        "sp_quality" => cfg.sp_quality = value.parse().map_err(|_| bad("number"))?,
        "ablate" => cfg.ablate = AblationMask::parse(value)?,
        "trials" => cfg.trials = value.parse().map_err(|_| bad("integer"))?,
        "tie_interval" => cfg.tie_interval = value.parse().map_err(|_| bad("integer"))?,
        other => {
            return Err(Error::config(format!(
                "unknown config key {other:?} (variant, context, dam, iterations, batch, lr, \
                 seed, sp_quality, ablate, trials, tie_interval)"
            )))
        }
    }
    Ok(())
}

pub fn apply_settings(cfg: &mut TrainConfig, settings: &BTreeMap<String, String>) -> Result<()> {
    for (k, v) in settings {
        apply_setting(cfg, k, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_comments_and_rejects_junk() {
        let text = "variant = largmu\ncontext=4  # best\n\n# full line comment\ndam = true\n";
        let map = parse_config(text).unwrap();
        let mut cfg = TrainConfig::default();
        apply_settings(&mut cfg, &map).unwrap();
        assert_eq!(cfg.variant, Variant::Largmu);
        assert_eq!(cfg.context, 4);
        assert!(cfg.dam);

        assert!(parse_config("this is not a setting\n").is_err());
        let mut cfg = TrainConfig::default();
        assert!(apply_setting(&mut cfg, "wat", "1").is_err());
        assert!(apply_setting(&mut cfg, "context", "four").is_err());
    }
}
