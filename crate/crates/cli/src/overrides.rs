//! Config resolution: file, then dedicated flags, then `--set key=value`.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use icrl::envs::EnvKind;
use icrl::harness::{TrainConfig, Variant};
use toml::{Table, Value};

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML config file; unspecified fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment, reset to its default size.
    #[arg(long)]
    pub env: Option<EnvKind>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Override any config field by dotted path, e.g. `optimizer.w_max=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    /// Resolved config with `seed` applied last.
    pub fn resolve(&self, seed: Option<u64>) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => TrainConfig::default(),
        };
        if let Some(kind) = self.env {
            cfg.env = kind.default_config();
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        if !self.set.is_empty() {
            cfg = apply_sets(&cfg, &self.set)?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `raw` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_sets(cfg: &TrainConfig, sets: &[String]) -> Result<TrainConfig> {
    let mut root: Table = cfg.to_toml_string()?.parse()?;
    for item in sets {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("override `{item}` is not KEY=VALUE"))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        let (last, parents) = path.split_last().expect("split yields one element");
        let mut table = &mut root;
        for part in parents {
            table = match table.get_mut(*part) {
                Some(Value::Table(t)) => t,
                _ => bail!("unknown config section `{part}` in `{key}`"),
            };
        }
        if !table.contains_key(*last) {
            bail!("unknown config field `{key}`");
        }
        let mut value = parse_value(raw.trim());
        // Integer literals given for float fields keep the field's type.
        if let (Some(Value::Float(_)), Value::Integer(i)) = (table.get(*last), &value) {
            value = Value::Float(*i as f64);
        }
        table.insert(last.to_string(), value);
    }
    Ok(TrainConfig::from_toml_str(&toml::to_string(&root)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_overrides_reach_nested_fields() {
        let base = TrainConfig::default();
        let cfg = apply_sets(
            &base,
            &["optimizer.w_max=3".into(), "group_size=4".into(), "variant=no_reweight".into()],
        )
        .unwrap();
        assert_eq!(cfg.optimizer.w_max, 3.0);
        assert_eq!(cfg.group_size, 4);
        assert_eq!(cfg.variant, Variant::NoReweight);
    }

    #[test]
    fn unknown_or_invalid_overrides_fail() {
        let base = TrainConfig::default();
        for bad in ["bogus=1", "optimizer.nope=1", "group_size=1", "steps"] {
            assert!(apply_sets(&base, &[bad.into()]).is_err(), "{bad}");
        }
    }

    #[test]
    fn flags_apply_in_order() {
        let args = ConfigArgs {
            env: Some(EnvKind::HopChain),
            steps: Some(7),
            set: vec!["env.horizon=5".into()],
            ..Default::default()
        };
        let cfg = args.resolve(Some(9)).unwrap();
        assert_eq!(cfg.env.kind(), EnvKind::HopChain);
        assert_eq!(cfg.env.horizon(), 5);
        assert_eq!((cfg.steps, cfg.seed), (7, 9));
    }
}
