use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{asv_rates, compute_eer, det_points, min_tdcf, AsvOperatingPoint, ScoreSet, TdcfParams};
use crate::error::{Error, Result};
use crate::replay::{Key, TrialManifest};
use crate::scalar::Real;

/// ASV scores split by trial type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AsvScores<T> {
    pub target: Vec<T>,
    pub nontarget: Vec<T>,
    pub spoof: Vec<T>,
}

/// Parses `UTT_ID SCORE TRIAL_TYPE` lines, TRIAL_TYPE one of `target`,
/// `nontarget`, `spoof`.
pub fn parse_asv_scores(text: &str) -> Result<AsvScores<f64>> {
    let mut out = AsvScores::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::Format(format!("ASV line {}: expected 'UTT_ID SCORE TRIAL_TYPE'", i + 1)));
        }
        let s: f64 = f[1]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::Format(format!("ASV line {}: bad score '{}'", i + 1, f[1])))?;
        match f[2] {
            "target" => out.target.push(s),
            "nontarget" => out.nontarget.push(s),
            "spoof" => out.spoof.push(s),
            t => return Err(Error::Format(format!("ASV line {}: unknown trial type '{t}'", i + 1))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub bonafide: usize,
    pub spoof: usize,
    pub eer: Option<f64>,
    pub eer_threshold: Option<f64>,
    pub min_tdcf: Option<f64>,
    pub tdcf_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trials: usize,
    pub bonafide: usize,
    pub spoof: usize,
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_tdcf: Option<f64>,
    pub tdcf_threshold: Option<f64>,
    pub asv: Option<AsvOperatingPoint>,
    pub tdcf_params: TdcfParams,
    /// Keyed `<env>_<attack>`: spoofs of that cell against the bona fide
    /// trials recorded in the same environment.
    pub per_condition: BTreeMap<String, CellMetrics>,
    #[serde(skip)]
    pub det: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }
}

fn cell<T: Real>(set: Option<ScoreSet<T>>, asv: Option<&AsvOperatingPoint>, params: &TdcfParams) -> Result<(Option<(f64, f64)>, Option<(f64, f64)>)> {
    let Some(s) = set else { return Ok((None, None)) };
    let eer = compute_eer(&s);
    let tdcf = match asv {
        Some(op) => Some(min_tdcf(&s, op, params)?),
        None => None,
    };
    Ok((Some(eer), tdcf))
}

/// Pooled and per-(environment, attack) EER and min t-DCF of CM scores keyed
/// by trial id. min t-DCF needs ASV scores; the ASV operating point is the
/// pooled target/non-target EER threshold.
pub fn evaluate(
    scores: &[(String, f64)],
    manifest: &TrialManifest,
    asv: Option<&AsvScores<f64>>,
    params: &TdcfParams,
) -> Result<EvalReport> {
    params.validate()?;
    let keys: HashMap<String, usize> = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.trial_id(manifest.partition), i))
        .collect();
    let unknown: Vec<&str> = scores.iter().filter(|(id, _)| !keys.contains_key(id)).map(|(id, _)| id.as_str()).collect();
    if !unknown.is_empty() {
        let shown: Vec<&str> = unknown.iter().take(10).copied().collect();
        return Err(Error::Validation(format!(
            "{} scored trials are not in the key file: {}{}",
            unknown.len(),
            shown.join(", "),
            if unknown.len() > 10 { ", ..." } else { "" }
        )));
    }
    let asv_op = asv.map(|a| asv_rates(a, None)).transpose()?;

    let mut bona = Vec::new();
    let mut spoof = Vec::new();
    let mut bona_by_env: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut spoof_by_cell: BTreeMap<String, (String, Vec<f64>)> = BTreeMap::new();
    for (id, s) in scores {
        let r = &manifest.records[keys[id]];
        match r.key {
            Key::Bonafide => {
                bona.push(*s);
                if let Some(e) = r.env {
                    bona_by_env.entry(e.to_string()).or_default().push(*s);
                }
            }
            Key::Spoof => {
                spoof.push(*s);
                let (e, a) = (r.env.expect("spoof records carry an env"), r.attack.expect("spoof records carry an attack"));
                spoof_by_cell
                    .entry(format!("{e}_{a}"))
                    .or_insert_with(|| (e.to_string(), Vec::new()))
                    .1
                    .push(*s);
            }
        }
    }
    let pooled = ScoreSet::new(bona.clone(), spoof.clone())
        .map_err(|e| Error::Validation(format!("pooled evaluation needs both keys: {e}")))?;
    let (eer, eer_threshold) = compute_eer(&pooled);
    let tdcf = asv_op.as_ref().map(|op| min_tdcf(&pooled, op, params)).transpose()?;

    let mut per_condition = BTreeMap::new();
    for (name, (env, sp)) in spoof_by_cell {
        let b = bona_by_env.get(&env).cloned().unwrap_or_default();
        let set = if b.is_empty() { None } else { Some(ScoreSet::new(b.clone(), sp.clone())?) };
        let (e, t) = cell(set, asv_op.as_ref(), params)?;
        per_condition.insert(
            name,
            CellMetrics {
                bonafide: b.len(),
                spoof: sp.len(),
                eer: e.map(|v| v.0),
                eer_threshold: e.map(|v| v.1),
                min_tdcf: t.map(|v| v.0),
                tdcf_threshold: t.map(|v| v.1),
            },
        );
    }
    Ok(EvalReport {
        trials: scores.len(),
        bonafide: bona.len(),
        spoof: spoof.len(),
        eer,
        eer_threshold,
        min_tdcf: tdcf.map(|v| v.0),
        tdcf_threshold: tdcf.map(|v| v.1),
        asv: asv_op,
        tdcf_params: *params,
        per_condition,
        det: det_points(&pooled),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::{generate_protocol, AttackLabel, Partition};
    use crate::room::EnvironmentLabel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn manifest() -> TrialManifest {
        let envs: Vec<EnvironmentLabel> = ["aaa", "ccc"].iter().map(|s| s.parse().unwrap()).collect();
        let attacks: Vec<AttackLabel> = ["AA", "CC"].iter().map(|s| s.parse().unwrap()).collect();
        generate_protocol(&["s1".to_string(), "s2".to_string()], 3, Partition::Dev, &envs, &attacks, 1).unwrap()
    }

    fn asv() -> AsvScores<f64> {
        AsvScores {
            target: vec![2.0, 3.0, 4.0],
            nontarget: vec![-1.0, 0.0, 1.0],
            spoof: vec![1.5, 2.5, 0.5, 3.5],
        }
    }

    #[test]
    fn parses_asv_file() {
        let a = parse_asv_scores("u1 1.5 target\nu2 -2 nontarget\n\nu3 0.25 spoof\n").unwrap();
        assert_eq!((a.target, a.nontarget, a.spoof), (vec![1.5], vec![-2.0], vec![0.25]));
        assert!(parse_asv_scores("u1 1.5 impostor\n").is_err());
        assert!(parse_asv_scores("u1 1.5\n").is_err());
    }

    #[test]
    fn perfect_and_constant_cms() {
        let m = manifest();
        let p = TdcfParams::shipped_default();
        let perfect: Vec<(String, f64)> = m
            .records
            .iter()
            .map(|r| (r.trial_id(m.partition), if r.key == Key::Bonafide { 1.0 } else { -1.0 }))
            .collect();
        let r = evaluate(&perfect, &m, Some(&asv()), &p).unwrap();
        assert_eq!((r.eer, r.min_tdcf), (0.0, Some(0.0)));
        assert_eq!(r.per_condition.len(), 4);
        let constant: Vec<(String, f64)> = perfect.iter().map(|(id, _)| (id.clone(), 0.3)).collect();
        let r = evaluate(&constant, &m, Some(&asv()), &p).unwrap();
        assert_eq!((r.eer, r.min_tdcf), (0.5, Some(1.0)));
        assert!(r.to_json().contains("\"per_condition\""));
    }

    #[test]
    fn cells_equal_subset_recomputation() {
        let m = manifest();
        let p = TdcfParams::shipped_default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scores: Vec<(String, f64)> = m
            .records
            .iter()
            .map(|r| (r.trial_id(m.partition), rng.gen_range(-1.0..1.0) + if r.key == Key::Bonafide { 0.5 } else { 0.0 }))
            .collect();
        let rep = evaluate(&scores, &m, Some(&asv()), &p).unwrap();
        let op = asv_rates(&asv(), None).unwrap();
        for (name, c) in &rep.per_condition {
            let (env, attack) = name.split_once('_').unwrap();
            let pick = |bona: bool| -> Vec<f64> {
                m.records
                    .iter()
                    .zip(&scores)
                    .filter(|(r, _)| {
                        r.env.map(|e| e.to_string()).as_deref() == Some(env)
                            && if bona {
                                r.key == Key::Bonafide
                            } else {
                                r.attack.map(|a| a.to_string()).as_deref() == Some(attack)
                            }
                    })
                    .map(|(_, s)| s.1)
                    .collect()
            };
            let s = ScoreSet::new(pick(true), pick(false)).unwrap();
            assert_eq!(c.eer, Some(compute_eer(&s).0));
            assert_eq!(c.min_tdcf, Some(min_tdcf(&s, &op, &p).unwrap().0));
        }
    }

    #[test]
    fn unknown_ids_are_listed() {
        let m = manifest();
        let err = evaluate(&[("nope".into(), 1.0)], &m, None, &TdcfParams::shipped_default()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref s) if s.contains("nope")));
    }
}
