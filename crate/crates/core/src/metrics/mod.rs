//! Detection metrics: EER, DET staircases, ASV operating points and the
//! tandem detection cost function (t-DCF).
//!
//! Everywhere a score `s` is accepted (called positive) when `s ≥ θ`.

mod report;

pub use report::{evaluate, parse_asv_scores, AsvScores, CellMetrics, EvalReport};

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::scalar::Real;

/// Positive (bona fide / target) and negative (spoof / non-target) scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet<T> {
    pub positives: Vec<T>,
    pub negatives: Vec<T>,
}

impl<T: Real> ScoreSet<T> {
    pub fn new(positives: Vec<T>, negatives: Vec<T>) -> Result<Self> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(arg(format!(
                "need positive and negative scores (got {} and {})",
                positives.len(),
                negatives.len()
            )));
        }
        if positives.iter().chain(&negatives).any(|s| !s.is_finite()) {
            return Err(arg("scores must be finite"));
        }
        Ok(Self { positives, negatives })
    }
}

/// Miss and false-alarm rates at every distinct score, ascending, followed by
/// a threshold above every score.
struct Sweep {
    thresholds: Vec<f64>,
    p_miss: Vec<f64>,
    p_fa: Vec<f64>,
}

fn sorted(v: &[impl Real]) -> Vec<f64> {
    let mut s: Vec<f64> = v.iter().map(|x| x.as_f64()).collect();
    s.sort_by(f64::total_cmp);
    s
}

fn sweep<T: Real>(s: &ScoreSet<T>) -> Sweep {
    let pos = sorted(&s.positives);
    let neg = sorted(&s.negatives);
    let mut all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut out = Sweep {
        thresholds: Vec::with_capacity(all.len() + 1),
        p_miss: Vec::with_capacity(all.len() + 1),
        p_fa: Vec::with_capacity(all.len() + 1),
    };
    let (mut i, mut j) = (0, 0);
    for &t in &all {
        while i < pos.len() && pos[i] < t {
            i += 1;
        }
        while j < neg.len() && neg[j] < t {
            j += 1;
        }
        out.thresholds.push(t);
        out.p_miss.push(i as f64 / np);
        out.p_fa.push((neg.len() - j) as f64 / nn);
    }
    out.thresholds.push(f64::INFINITY);
    out.p_miss.push(1.0);
    out.p_fa.push(0.0);
    out
}

/// Equal error rate and the threshold where miss and false-alarm rates
/// cross, interpolating linearly between adjacent thresholds.
pub fn compute_eer<T: Real>(s: &ScoreSet<T>) -> (f64, f64) {
    let sw = sweep(s);
    let i = (0..sw.thresholds.len())
        .find(|&i| sw.p_miss[i] >= sw.p_fa[i])
        .expect("the last threshold has p_miss = 1 >= p_fa = 0");
    if sw.p_miss[i] == sw.p_fa[i] || i == 0 {
        return (sw.p_miss[i], sw.thresholds[i]);
    }
    let d0 = sw.p_fa[i - 1] - sw.p_miss[i - 1];
    let d1 = sw.p_fa[i] - sw.p_miss[i];
    let t = d0 / (d0 - d1);
    let eer = sw.p_miss[i - 1] + t * (sw.p_miss[i] - sw.p_miss[i - 1]);
    let (a, b) = (sw.thresholds[i - 1], sw.thresholds[i]);
    let thr = if b.is_finite() { a + t * (b - a) } else { a };
    (eer, thr)
}

/// EER of the ROC convex hull (ROCCH): the point where the lower hull of
/// the (p_fa, p_miss) staircase meets p_miss = p_fa.
pub fn compute_eer_rocch<T: Real>(s: &ScoreSet<T>) -> f64 {
    let sw = sweep(s);
    let mut pts: Vec<(f64, f64)> = sw.p_fa.iter().copied().zip(sw.p_miss.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    for w in hull.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let (d0, d1) = (y0 - x0, y1 - x1);
        if d0 >= 0.0 && d1 <= 0.0 {
            if d0 == d1 {
                return y0;
            }
            let t = d0 / (d0 - d1);
            return y0 + t * (y1 - y0);
        }
    }
    hull[0].1.min(hull[0].0)
}

/// DET staircase `(p_miss, p_fa)`, one point per distinct threshold plus the
/// accept-nothing end point, from (0, 1) to (1, 0).
pub fn det_points<T: Real>(s: &ScoreSet<T>) -> Vec<(f64, f64)> {
    let sw = sweep(s);
    sw.p_miss.into_iter().zip(sw.p_fa).collect()
}

/// DET points as `p_miss,p_fa` CSV with a header.
pub fn det_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("p_miss,p_fa\n");
    for (m, f) in points {
        out.push_str(&format!("{m},{f}\n"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsvOperatingPoint {
    pub threshold: f64,
    pub p_miss_asv: f64,
    pub p_fa_asv: f64,
    pub p_miss_spoof_asv: f64,
}

/// ASV rates at `threshold`, by default the target/non-target EER threshold.
pub fn asv_rates<T: Real>(asv: &AsvScores<T>, threshold: Option<f64>) -> Result<AsvOperatingPoint> {
    if asv.target.is_empty() || asv.nontarget.is_empty() || asv.spoof.is_empty() {
        return Err(arg("ASV scores need target, nontarget and spoof trials"));
    }
    let threshold = match threshold {
        Some(t) => t,
        None => compute_eer(&ScoreSet::new(asv.target.clone(), asv.nontarget.clone())?).1,
    };
    let frac = |v: &[T], pred: &dyn Fn(f64) -> bool| v.iter().filter(|x| pred(x.as_f64())).count() as f64 / v.len() as f64;
    Ok(AsvOperatingPoint {
        threshold,
        p_miss_asv: frac(&asv.target, &|x| x < threshold),
        p_fa_asv: frac(&asv.nontarget, &|x| x >= threshold),
        p_miss_spoof_asv: frac(&asv.spoof, &|x| x < threshold),
    })
}

/// Costs and priors of the tandem detection cost function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdcfParams {
    pub cost_miss_asv: f64,
    pub cost_fa_asv: f64,
    pub cost_miss_cm: f64,
    pub cost_fa_cm: f64,
    pub prior_target: f64,
    pub prior_nontarget: f64,
    pub prior_spoof: f64,
}

/// The constants shipped in `config/tdcf_default.json`.
pub const DEFAULT_TDCF_CONFIG: &str = include_str!("../../config/tdcf_default.json");

impl TdcfParams {
    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("t-DCF constants: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn shipped_default() -> Self {
        Self::from_json(DEFAULT_TDCF_CONFIG).expect("shipped t-DCF config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let costs = [self.cost_miss_asv, self.cost_fa_asv, self.cost_miss_cm, self.cost_fa_cm];
        let priors = [self.prior_target, self.prior_nontarget, self.prior_spoof];
        if costs.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) || !costs.iter().any(|c| *c > 0.0) {
            return Err(arg("t-DCF costs must be nonnegative with at least one positive"));
        }
        if priors.iter().any(|p| !(0.0..=1.0).contains(p)) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(arg("t-DCF priors must be probabilities summing to 1"));
        }
        Ok(())
    }

    /// `(C1, C2)` for a fixed ASV operating point.
    pub fn constants(&self, asv: &AsvOperatingPoint) -> (f64, f64) {
        let c1 = self.prior_target * (self.cost_miss_cm - self.cost_miss_asv * asv.p_miss_asv)
            - self.prior_nontarget * self.cost_fa_asv * asv.p_fa_asv;
        let c2 = self.cost_fa_cm * self.prior_spoof * (1.0 - asv.p_miss_spoof_asv);
        (c1, c2)
    }
}

/// Minimum normalised t-DCF over all CM thresholds and its threshold.
///
/// `t-DCF(s) = C1·P_miss_cm(s) + C2·P_fa_cm(s)` with
/// `C1 = π_tar(C_miss_cm − C_miss_asv·P_miss_asv) − π_non·C_fa_asv·P_fa_asv`
/// and `C2 = C_fa_cm·π_spoof·(1 − P_miss_spoof_asv)`, normalised by
/// `min(C1, C2)`, the cost of the better of accept-all and reject-all.
pub fn min_tdcf<T: Real>(cm: &ScoreSet<T>, asv: &AsvOperatingPoint, params: &TdcfParams) -> Result<(f64, f64)> {
    params.validate()?;
    for (name, v) in [("p_miss_asv", asv.p_miss_asv), ("p_fa_asv", asv.p_fa_asv), ("p_miss_spoof_asv", asv.p_miss_spoof_asv)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(arg(format!("{name} = {v} is not a rate")));
        }
    }
    let (c1, c2) = params.constants(asv);
    if !(c1 > 0.0) {
        return Err(Error::DegenerateCost { name: "C1", value: c1 });
    }
    if !(c2 > 0.0) {
        return Err(Error::DegenerateCost { name: "C2", value: c2 });
    }
    let norm = c1.min(c2);
    let sw = sweep(cm);
    let mut best = (f64::INFINITY, f64::NAN);
    for i in 0..sw.thresholds.len() {
        let v = (c1 * sw.p_miss[i] + c2 * sw.p_fa[i]) / norm;
        if v < best.0 {
            best = (v, sw.thresholds[i]);
        }
    }
    Ok(best)
}
