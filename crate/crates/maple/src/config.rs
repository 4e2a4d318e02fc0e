//! Run configuration: a JSON file plus dotted-path overrides.

use std::fs;
use std::path::{Path, PathBuf};

use maple_core::eval::ExperimentConfig;
use maple_core::{Corpus, DevSource, Regime, SplitSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{MapleError, Result};

pub const SEED_ENV: &str = "MAPLE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    /// Fold file; leave-one-prompt-out with an 80/20 dev split when absent.
    #[serde(default)]
    pub folds: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub regime: Regime,
    #[serde(default = "yes")]
    pub use_context: bool,
    #[serde(default)]
    pub use_features: bool,
    #[serde(default = "half")]
    pub dropout_rate: f64,
    #[serde(default)]
    pub holistic_trait: Option<String>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn yes() -> bool {
    true
}

fn half() -> f64 {
    0.5
}

impl RunConfig {
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            regime: self.regime,
            use_context: self.use_context,
            use_features: self.use_features,
            dropout_rate: self.dropout_rate,
            holistic_trait: self.holistic_trait.clone(),
            train: self.train.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| MapleError::Config(e.to_string()))?;
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(MapleError::Config("dropout_rate must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Loads `path`, applies `overrides` (`a.b=value`) and resolves the seed
    /// (`cli_seed`, then the file, then `MAPLE_SEED`, then 0). Relative
    /// paths become absolute against the config file's directory.
    pub fn load(path: &Path, overrides: &[String], cli_seed: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MapleError::Config(format!("{}: {e}", path.display())))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| MapleError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let seed_in_file = value.pointer("/train/seed").is_some();
        let mut cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| MapleError::Config(format!("{}: {e}", path.display())))?;
        cfg.train.seed = match (cli_seed, seed_in_file) {
            (Some(s), _) => s,
            (None, true) => cfg.train.seed,
            (None, false) => env_seed()?.unwrap_or(0),
        };
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        let base = std::path::absolute(&base).map_err(|e| MapleError::io(&base, e))?;
        let absolute = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        cfg.manifest = absolute(&cfg.manifest);
        cfg.folds = cfg.folds.as_deref().map(absolute);
        cfg.output_dir = absolute(&cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| MapleError::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Sets `key.path=value`, parsing `value` as JSON and falling back to a string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| MapleError::Config(format!("override {spec:?} is not of the form key.path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(MapleError::Config(format!("override {spec:?} has an empty path segment")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| MapleError::Config(format!("override {spec:?}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

/// Fold file: explicit folds, or leave-one-prompt-out generated per corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldFile {
    #[serde(default)]
    pub leave_one_prompt_out: bool,
    /// Dev source for generated folds.
    #[serde(default)]
    pub dev: DevSource,
    #[serde(default)]
    pub folds: Vec<SplitSpec>,
}

impl FoldFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MapleError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| MapleError::Config(format!("{}: {e}", path.display())))
    }

    pub fn lopo() -> Self {
        FoldFile { leave_one_prompt_out: true, dev: DevSource::default(), folds: Vec::new() }
    }

    /// Fold list for `corpus`; generated folds carry `seed`.
    pub fn resolve(&self, corpus: &Corpus, seed: u64) -> Result<Vec<SplitSpec>> {
        match (self.leave_one_prompt_out, self.folds.is_empty()) {
            (true, true) => Ok(SplitSpec::leave_one_prompt_out(corpus, self.dev.clone(), seed)),
            (false, false) => Ok(self.folds.clone()),
            (true, false) => Err(MapleError::Config("fold file sets both leave_one_prompt_out and folds".into())),
            (false, true) => Err(MapleError::Config("fold file lists no folds".into())),
        }
    }
}
