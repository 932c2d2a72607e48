//! GMM back-end: EM training of bona fide and spoof models and
//! log-likelihood-ratio scoring.

mod gmm;

pub use gmm::{
    data_hash, gmm_loglik, score_llr, score_llr_with, train_gmm, GmmModel, LlrAggregation, TrainConfig, TrainedGmm,
};

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::features::{pool, FeatureKind, FeatureMatrix};

/// Sidecar metadata written next to each model file as `<model>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub feature: FeatureKind,
    pub class: String,
    pub components: usize,
    pub dims: usize,
    pub utterances: usize,
    pub frames_used: usize,
    pub data_sha256: String,
    pub config: TrainConfig,
    pub ll_history: Vec<f64>,
}

/// A bona fide / spoof GMM pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Countermeasure {
    pub feature: FeatureKind,
    pub bona: GmmModel<f64>,
    pub spoof: GmmModel<f64>,
}

pub const BONA_MODEL: &str = "bonafide.gmm";
pub const SPOOF_MODEL: &str = "spoof.gmm";

fn sidecar(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Countermeasure {
    /// Trains both models on pooled frames. The spoof model uses
    /// `seed + 1` so its frame subset differs from the bona fide one.
    pub fn train(
        feature: FeatureKind,
        bona: &[FeatureMatrix<f64>],
        spoof: &[FeatureMatrix<f64>],
        cfg: &TrainConfig,
    ) -> Result<(Self, [ModelMeta; 2])> {
        if bona.is_empty() || spoof.is_empty() {
            return Err(Error::Validation("training needs both bona fide and spoof utterances".into()));
        }
        let bona_pool = pool(bona)?;
        let spoof_pool = pool(spoof)?;
        for (name, p) in [("bonafide", &bona_pool), ("spoof", &spoof_pool)] {
            if p.frames() < cfg.components {
                return Err(arg(format!(
                    "{name} data has {} frames, fewer than K = {}",
                    p.frames(),
                    cfg.components
                )));
            }
        }
        let spoof_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(1),
            ..cfg.clone()
        };
        let tb = train_gmm(&bona_pool, cfg)?;
        let ts = train_gmm(&spoof_pool, &spoof_cfg)?;
        let meta = |class: &str, t: &TrainedGmm<f64>, p: &FeatureMatrix<f64>, n: usize, c: &TrainConfig| ModelMeta {
            feature,
            class: class.into(),
            components: t.model.components(),
            dims: t.model.dims(),
            utterances: n,
            frames_used: t.frames_used,
            data_sha256: data_hash(p),
            config: c.clone(),
            ll_history: t.ll_history.clone(),
        };
        let metas = [
            meta("bonafide", &tb, &bona_pool, bona.len(), cfg),
            meta("spoof", &ts, &spoof_pool, spoof.len(), &spoof_cfg),
        ];
        Ok((
            Self {
                feature,
                bona: tb.model,
                spoof: ts.model,
            },
            metas,
        ))
    }

    pub fn score(&self, f: &FeatureMatrix<f64>, agg: LlrAggregation) -> Result<f64> {
        score_llr_with(f, &self.bona, &self.spoof, agg)
    }

    /// Writes `bonafide.gmm`, `spoof.gmm` and their JSON sidecars into `dir`.
    pub fn save(&self, dir: &Path, metas: &[ModelMeta; 2]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, model, meta) in [(BONA_MODEL, &self.bona, &metas[0]), (SPOOF_MODEL, &self.spoof, &metas[1])] {
            let p = dir.join(name);
            model.save(&p)?;
            let json = serde_json::to_string_pretty(meta).expect("metadata serialises");
            std::fs::write(sidecar(&p), json + "\n").map_err(|e| Error::io(sidecar(&p), e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let bona = GmmModel::load(&dir.join(BONA_MODEL))?;
        let spoof = GmmModel::load(&dir.join(SPOOF_MODEL))?;
        let meta_path = sidecar(&dir.join(BONA_MODEL));
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: ModelMeta =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
        if bona.dims() != spoof.dims() {
            return Err(Error::Format("bona fide and spoof models have different dims".into()));
        }
        Ok(Self {
            feature: meta.feature,
            bona,
            spoof,
        })
    }
}

/// `UTT_ID SCORE` lines with six decimals.
pub fn format_scores(scores: &[(String, f64)]) -> String {
    let mut out = String::new();
    for (id, s) in scores {
        writeln!(out, "{id} {s:.6}").unwrap();
    }
    out
}

pub fn parse_scores(text: &str) -> Result<Vec<(String, f64)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(id), Some(s), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Format(format!("score line {}: expected 'UTT_ID SCORE'", i + 1)));
        };
        let score: f64 = s
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::Format(format!("score line {}: bad score '{s}'", i + 1)))?;
        if !seen.insert(id.to_string()) {
            return Err(Error::Format(format!("score line {}: duplicate id {id}", i + 1)));
        }
        out.push((id.to_string(), score));
    }
    Ok(out)
}

pub fn write_scores(path: &Path, scores: &[(String, f64)]) -> Result<()> {
    std::fs::write(path, format_scores(scores)).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<(String, f64)>> {
    parse_scores(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_text_round_trip() {
        let s = vec![("a".to_string(), 1.25), ("b".to_string(), -0.0000004)];
        let text = format_scores(&s);
        assert_eq!(text, "a 1.250000\nb -0.000000\n");
        let back = parse_scores(&text).unwrap();
        assert_eq!(back[0], ("a".to_string(), 1.25));
        assert!(parse_scores("a 1\na 2\n").is_err());
        assert!(parse_scores("a\n").is_err());
        assert!(parse_scores("a nan\n").is_err());
    }

    #[test]
    fn countermeasure_round_trip() {
        let mk = |off: f64| {
            let v: Vec<f64> = (0..200).map(|i| off + (i as f64 * 0.37).sin()).collect();
            FeatureMatrix::new(v, 100, 2, 0.01).unwrap()
        };
        let cfg = TrainConfig {
            components: 2,
            em_iters: 3,
            ..Default::default()
        };
        let (cm, metas) = Countermeasure::train(FeatureKind::Lfcc, &[mk(0.0)], &[mk(3.0)], &cfg).unwrap();
        assert!(cm.score(&mk(0.0), LlrAggregation::Mean).unwrap() > 0.0);
        assert!(cm.score(&mk(3.0), LlrAggregation::Mean).unwrap() < 0.0);
        let dir = tempfile::tempdir().unwrap();
        cm.save(dir.path(), &metas).unwrap();
        assert_eq!(Countermeasure::load(dir.path()).unwrap(), cm);
        assert_eq!(metas[0].ll_history.len(), 4);
        assert!(Countermeasure::train(FeatureKind::Lfcc, &[mk(0.0)], &[], &cfg).is_err());
        let big = TrainConfig { components: 500, ..cfg };
        assert!(matches!(
            Countermeasure::train(FeatureKind::Lfcc, &[mk(0.0)], &[mk(1.0)], &big),
            Err(Error::Argument(_))
        ));
    }
}
