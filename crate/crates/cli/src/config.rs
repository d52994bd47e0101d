//! Run configuration: one TOML document with a section per module, a single
//! top-level seed, and `PROGRESS_<SECTION>__<KEY>` environment overrides.

use std::path::{Path, PathBuf};

use progress_core::data::DemoOptions;
use progress_core::env::EnvConfig;
use progress_core::reward::RewardConfig;
use progress_core::rl::{OnlineConfig, EVAL_SEED_OFFSET};
use progress_core::rwr::RwrConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "PROGRESS_";

/// Sections whose own `seed` must be absent or equal to the top-level one.
const SEEDED_SECTIONS: [&str; 3] = ["env", "online", "rwr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub expert_demos: PathBuf,
    pub noisy_demos: PathBuf,
    pub reward_model: PathBuf,
    pub online_policy: PathBuf,
    pub rwr_policy: PathBuf,
    /// Metric files and run metadata land here.
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            expert_demos: "demos/expert.demos".into(),
            noisy_demos: "demos/noisy.demos".into(),
            reward_model: "checkpoints/reward.ckpt".into(),
            online_policy: "checkpoints/online_policy.ckpt".into(),
            rwr_policy: "checkpoints/rwr_policy.ckpt".into(),
            out_dir: "out".into(),
        }
    }
}

/// Mixed-quality demonstrations for reward-weighted imitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoisyDemos {
    pub count: usize,
    pub p_noise: f64,
    pub failed_fraction: f64,
    pub early_stop_fraction: f64,
    pub first_episode: u64,
}

impl Default for NoisyDemos {
    fn default() -> Self {
        let base = DemoOptions::noisy(40);
        Self {
            count: base.count,
            p_noise: base.p_noise,
            failed_fraction: base.failed_fraction,
            early_stop_fraction: base.early_stop_fraction,
            first_episode: 10_000,
        }
    }
}

impl NoisyDemos {
    pub fn options(&self) -> DemoOptions {
        DemoOptions {
            count: self.count,
            p_noise: self.p_noise,
            failed_fraction: self.failed_fraction,
            early_stop_fraction: self.early_stop_fraction,
            first_episode: self.first_episode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
    /// Episode seed of the first evaluation episode.
    pub first_episode: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes: 20,
            first_episode: EVAL_SEED_OFFSET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub env: EnvConfig,
    pub reward: RewardConfig,
    pub demos: DemoOptions,
    pub noisy_demos: NoisyDemos,
    pub online: OnlineConfig,
    pub rwr: RwrConfig,
    pub eval: EvalSection,
}

/// A loaded configuration plus what it was built from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub source_path: Option<PathBuf>,
    /// The config file exactly as read; empty when running on defaults.
    pub source_text: String,
    /// Applied `(variable, value)` overrides in application order.
    pub overrides: Vec<(String, String)>,
}

impl RunConfig {
    /// Parses `text`, applies `overrides` and validates every section.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for (name, value) in overrides {
            apply_override(&mut table, name, value)?;
        }
        let section_seeds: Vec<(&str, Option<toml::Value>)> = SEEDED_SECTIONS
            .iter()
            .map(|&s| (s, table.get(s).and_then(|t| t.get("seed")).cloned()))
            .collect();
        let mut config: RunConfig = table
            .try_into()
            .map_err(|e| CliError::Config(e.to_string()))?;
        for (section, seed) in section_seeds {
            if seed.is_some_and(|v| v.as_integer() != i64::try_from(config.seed).ok()) {
                return Err(CliError::Config(format!(
                    "`{section}.seed` differs from the top-level `seed`; set only the top-level one"
                )));
            }
        }
        config.propagate_seed();
        config.validate()?;
        Ok(config)
    }

    fn propagate_seed(&mut self) {
        self.env.seed = self.seed;
        self.online.seed = self.seed;
        self.rwr.seed = self.seed;
    }

    pub fn validate(&self) -> CliResult<()> {
        self.env.validate()?;
        self.reward.validate()?;
        self.online.validate()?;
        self.rwr.validate()?;
        if self.eval.episodes == 0 {
            return Err(CliError::Config("eval.episodes must be positive".into()));
        }
        Ok(())
    }

    /// Makes relative paths relative to `base`.
    pub fn rebase_paths(&mut self, base: &Path) {
        let paths = &mut self.paths;
        for path in [
            &mut paths.expert_demos,
            &mut paths.noisy_demos,
            &mut paths.reward_model,
            &mut paths.online_policy,
            &mut paths.rwr_policy,
            &mut paths.out_dir,
        ] {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}

/// `PROGRESS_ONLINE__TOTAL_ENV_STEPS` names `online.total_env_steps`;
/// `PROGRESS_SEED` names the top-level `seed`.
fn override_key(name: &str) -> CliResult<Vec<String>> {
    let rest = name.strip_prefix(ENV_PREFIX).ok_or_else(|| {
        CliError::Config(format!("override `{name}` lacks the {ENV_PREFIX} prefix"))
    })?;
    let parts: Vec<String> = rest.split("__").map(str::to_ascii_lowercase).collect();
    if parts.is_empty() || parts.len() > 2 || parts.iter().any(String::is_empty) {
        return Err(CliError::Config(format!(
            "cannot map override `{name}` to a config key"
        )));
    }
    Ok(parts)
}

/// Values are read as TOML (`0.5`, `true`, `[64, 64]`, `"push"`); anything
/// that does not parse is taken as a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn apply_override(table: &mut toml::Table, name: &str, raw: &str) -> CliResult<()> {
    let key = override_key(name)?;
    let value = parse_value(raw);
    match key.as_slice() {
        [field] => {
            table.insert(field.clone(), value);
        }
        [section, field] => {
            let entry = table
                .entry(section.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let section_table = entry
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("`{section}` is not a section")))?;
            section_table.insert(field.clone(), value);
        }
        _ => unreachable!("override_key yields one or two parts"),
    }
    Ok(())
}

/// Override variables from the process environment, sorted by name.
pub fn env_overrides() -> Vec<(String, String)> {
    let mut vars: Vec<(String, String)> = std::env::vars()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    vars
}

/// Reads `path` (or defaults when `None`), applies environment overrides and
/// resolves relative paths against the config file's directory.
pub fn load(path: Option<&Path>) -> CliResult<LoadedConfig> {
    let source_text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
        None => String::new(),
    };
    let overrides = env_overrides();
    let mut config = RunConfig::from_toml(&source_text, &overrides)?;
    if let Some(base) = path.and_then(Path::parent) {
        config.rebase_paths(base);
    }
    Ok(LoadedConfig {
        config,
        source_path: path.map(Path::to_path_buf),
        source_text,
        overrides,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn empty_document_gives_defaults() {
        let config = RunConfig::from_toml("", &[]).unwrap();
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.reward.alpha, 0.4);
        assert_eq!(config.online.reward_batch, 128);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[online]\nlearning_rat = 0.1\n", &[]).unwrap_err();
        assert_eq!(err.category(), "invalid-config");
        let err = RunConfig::from_toml("[nonsense]\n", &[]).unwrap_err();
        assert_eq!(err.category(), "invalid-config");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let err = RunConfig::from_toml("[reward]\nbeta = 1.5\n", &[]).unwrap_err();
        assert_eq!(err.category(), "invalid-config");
    }

    #[test]
    fn top_level_seed_reaches_every_module() {
        let config = RunConfig::from_toml("seed = 7\n", &[]).unwrap();
        assert_eq!(
            (config.env.seed, config.online.seed, config.rwr.seed),
            (7, 7, 7)
        );
        assert!(RunConfig::from_toml("[online]\nseed = 3\n", &[]).is_err());
        assert!(RunConfig::from_toml("seed = 3\n[online]\nseed = 3\n", &[]).is_ok());
    }

    #[test]
    fn overrides_take_precedence() {
        let overrides = pairs(&[
            ("PROGRESS_ONLINE__TOTAL_ENV_STEPS", "1234"),
            ("PROGRESS_ENV__VARIANT", "push"),
            ("PROGRESS_ONLINE__Q_HIDDEN", "[32, 16]"),
            ("PROGRESS_REWARD__BETA", "0.5"),
            ("PROGRESS_SEED", "9"),
        ]);
        let config = RunConfig::from_toml("[online]\ntotal_env_steps = 10\n", &overrides).unwrap();
        assert_eq!(config.online.total_env_steps, 1234);
        assert_eq!(config.env.variant, progress_core::env::Variant::Push);
        assert_eq!(config.online.q_hidden, vec![32, 16]);
        assert_eq!(config.reward.beta, 0.5);
        assert_eq!(config.seed, 9);
    }

    #[test]
    fn bad_overrides_are_rejected() {
        for name in [
            "PROGRESS_ONLINE__NOPE",
            "PROGRESS_A__B__C",
            "PROGRESS_ENV__SEED",
            "PROGRESS_",
        ] {
            assert!(
                RunConfig::from_toml("", &pairs(&[(name, "1")])).is_err(),
                "{name}"
            );
        }
    }

    #[test]
    fn serialized_config_round_trips() {
        let config =
            RunConfig::from_toml("seed = 4\n[env]\nfixed_goal = [0.7, 0.6]\n", &[]).unwrap();
        assert_eq!(
            RunConfig::from_toml(&config.to_toml(), &[]).unwrap(),
            config
        );
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut config = RunConfig::default();
        config.paths.out_dir = "/abs/out".into();
        config.rebase_paths(Path::new("/runs/a"));
        assert_eq!(
            config.paths.expert_demos,
            Path::new("/runs/a/demos/expert.demos")
        );
        assert_eq!(config.paths.out_dir, Path::new("/abs/out"));
    }
}
