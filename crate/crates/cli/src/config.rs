use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use replaysim::classifier::{LlrAggregation, TrainConfig};
use replaysim::features::FeatureKind;
use replaysim::metrics::TdcfParams;
use replaysim::replay::DEFAULT_WORK_RATE;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub components: usize,
    pub em_iters: usize,
    pub split_iters: usize,
    pub variance_floor_factor: f64,
    pub max_frames: Option<usize>,
    pub aggregation: LlrAggregation,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            components: t.components,
            em_iters: t.em_iters,
            split_iters: t.split_iters,
            variance_floor_factor: t.variance_floor_factor,
            max_frames: t.max_frames,
            aggregation: LlrAggregation::Mean,
        }
    }
}

/// Settings shared by all subcommands. On disk it is a JSON object with flat
/// dotted keys such as `"train.components": 512`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub master_seed: u64,
    pub sample_rate_work: u32,
    pub feature: FeatureKind,
    pub paths: Paths,
    pub train: TrainSection,
    pub tdcf: TdcfParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            sample_rate_work: DEFAULT_WORK_RATE,
            feature: FeatureKind::Cqcc,
            paths: Paths::default(),
            train: TrainSection::default(),
            tdcf: TdcfParams::shipped_default(),
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

fn unflatten(flat: &Map<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("dotted keys nest objects");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

impl RunConfig {
    pub fn to_flat(&self) -> Map<String, Value> {
        let mut out = Map::new();
        flatten("", &serde_json::to_value(self).expect("config serialises"), &mut out);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Value::Object(self.to_flat())).expect("config serialises") + "\n"
    }

    /// Reads flat dotted keys (nested objects are accepted too) over the
    /// defaults. Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        if !v.is_object() {
            bail!("config must be a JSON object");
        }
        let mut given = Map::new();
        flatten("", &v, &mut given);
        let mut merged = Self::default().to_flat();
        let mut unknown: Vec<&str> = Vec::new();
        for (k, v) in &given {
            match merged.get_mut(k) {
                Some(slot) => *slot = v.clone(),
                None => unknown.push(k),
            }
        }
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        let cfg: Self = serde_json::from_value(unflatten(&merged)).context("invalid config value")?;
        cfg.tdcf.validate()?;
        if cfg.sample_rate_work == 0 {
            bail!("sample_rate_work must be positive");
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn sha256(&self) -> String {
        let d = Sha256::digest(self.to_json().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            components: self.train.components,
            em_iters: self.train.em_iters,
            split_iters: self.train.split_iters,
            seed: self.master_seed,
            variance_floor_factor: self.train.variance_floor_factor,
            max_frames: self.train.max_frames,
        }
    }
}

/// Provenance written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunRecord<'a> {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub core_version: &'static str,
    pub command: &'a str,
    pub master_seed: u64,
    pub deterministic: bool,
    pub config_sha256: String,
    pub config: Map<String, Value>,
}

impl<'a> RunRecord<'a> {
    pub fn new(command: &'a str, cfg: &RunConfig, deterministic: bool) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            tool_version: env!("CARGO_PKG_VERSION"),
            core_version: replaysim::VERSION,
            command,
            master_seed: cfg.master_seed,
            deterministic,
            config_sha256: cfg.sha256(),
            config: cfg.to_flat(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_losslessly() {
        let mut c = RunConfig::default();
        c.master_seed = 7;
        c.paths.corpus = Some("data/corpus".into());
        c.train.components = 32;
        c.train.max_frames = Some(5000);
        c.tdcf.prior_spoof = 0.1;
        c.tdcf.prior_target = 0.8905;
        let text = c.to_json();
        assert!(text.contains("\"train.components\": 32"));
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn partial_and_nested_configs() {
        let c = RunConfig::from_json(r#"{"master_seed": 3, "train": {"components": 8}}"#).unwrap();
        assert_eq!((c.master_seed, c.train.components, c.train.em_iters), (3, 8, 20));
        assert!(RunConfig::from_json(r#"{"train.component": 8}"#).is_err());
        assert!(RunConfig::from_json(r#"{"feature": "mfcc"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"tdcf.cost_fa_cm": -1}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.sha256(), b.sha256());
        b.master_seed = 1;
        assert_ne!(a.sha256(), b.sha256());
    }
}
