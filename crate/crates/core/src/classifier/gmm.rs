use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{arg, Error, Result};
use crate::features::FeatureMatrix;
use crate::scalar::Real;

const MODEL_MAGIC: &[u8; 4] = b"GMMD";
/// Frames per E-step work unit; accumulators are reduced in chunk order.
const CHUNK: usize = 2048;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel<T> {
    dims: usize,
    weights: Vec<T>,
    means: Vec<T>,
    variances: Vec<T>,
    // log w_k − ½ Σ_d log(2π σ²_kd)
    log_norm: Vec<T>,
    inv_var: Vec<T>,
}

impl<T: Real> GmmModel<T> {
    pub fn new(weights: Vec<T>, means: Vec<T>, variances: Vec<T>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() % k != 0 || means.is_empty() {
            return Err(arg("GMM needs at least one component and matching mean rows"));
        }
        let dims = means.len() / k;
        if variances.len() != means.len() {
            return Err(arg("variances must be K × D"));
        }
        let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
        if weights.iter().any(|w| !(w.as_f64() >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(arg(format!("weights must be a simplex (sum {total})")));
        }
        if variances.iter().any(|v| !(v.as_f64() > 0.0) || !v.is_finite()) {
            return Err(arg("variances must be positive and finite"));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(arg("means must be finite"));
        }
        let inv_var: Vec<T> = variances.iter().map(|&v| T::one() / v).collect();
        let log_norm = (0..k)
            .map(|c| {
                let logdet: f64 = variances[c * dims..(c + 1) * dims].iter().map(|v| v.as_f64().ln()).sum();
                T::lit(weights[c].as_f64().ln() - 0.5 * (dims as f64 * LN_2PI + logdet))
            })
            .collect();
        Ok(Self {
            dims,
            weights,
            means,
            variances,
            log_norm,
            inv_var,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[T] {
        &self.means[k * self.dims..(k + 1) * self.dims]
    }

    pub fn variance(&self, k: usize) -> &[T] {
        &self.variances[k * self.dims..(k + 1) * self.dims]
    }

    pub fn cast<U: Real>(&self) -> GmmModel<U> {
        let c = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        GmmModel::new(c(&self.weights), c(&self.means), c(&self.variances)).expect("cast preserves validity")
    }

    /// Per-component joint log-densities `log w_k + log N(x; μ_k, σ²_k)`.
    fn component_logs(&self, x: &[T], out: &mut [T]) {
        let half = T::lit(0.5);
        for (k, o) in out.iter_mut().enumerate() {
            let mu = &self.means[k * self.dims..(k + 1) * self.dims];
            let iv = &self.inv_var[k * self.dims..(k + 1) * self.dims];
            let mut q = T::zero();
            for d in 0..self.dims {
                let e = x[d] - mu[d];
                q += e * e * iv[d];
            }
            *o = self.log_norm[k] - half * q;
        }
    }

    fn loglik_unchecked(&self, x: &[T], scratch: &mut [T]) -> T {
        self.component_logs(x, scratch);
        log_sum_exp(scratch)
    }

    /// `log Σ_k w_k N(x; μ_k, σ²_k)` via log-sum-exp.
    pub fn loglik(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dims {
            return Err(arg(format!("frame has {} dims, model has {}", x.len(), self.dims)));
        }
        let mut scratch = vec![T::zero(); self.components()];
        Ok(self.loglik_unchecked(x, &mut scratch))
    }

    /// Sum of frame log-likelihoods, accumulated in f64.
    pub fn total_loglik(&self, f: &FeatureMatrix<T>) -> Result<f64> {
        if f.dims() != self.dims {
            return Err(arg(format!("features have {} dims, model has {}", f.dims(), self.dims)));
        }
        let mut scratch = vec![T::zero(); self.components()];
        Ok(f.rows().map(|r| self.loglik_unchecked(r, &mut scratch).as_f64()).sum())
    }

    /// Binary form: `GMMD`, K (u32), D (u32), then f64 weights, means,
    /// variances, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * (self.weights.len() + 2 * self.means.len()));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(self.components() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        for v in self.weights.iter().chain(&self.means).chain(&self.variances) {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MODEL_MAGIC {
            return Err(Error::Format("not a GMM model file (bad magic)".into()));
        }
        let k = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let want = 8 * (k + 2 * k * d);
        if bytes.len() - 12 != want {
            return Err(Error::Format(format!("model body is {} bytes, expected {want}", bytes.len() - 12)));
        }
        let vals: Vec<T> = bytes[12..]
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let (w, rest) = vals.split_at(k);
        let (m, v) = rest.split_at(k * d);
        Self::new(w.to_vec(), m.to_vec(), v.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn log_sum_exp<T: Real>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

/// `log Σ_k w_k N(x; μ_k, σ²_k)`.
pub fn gmm_loglik<T: Real>(m: &GmmModel<T>, frame: &[T]) -> Result<T> {
    m.loglik(frame)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub components: usize,
    /// Full EM iterations after the last split.
    pub em_iters: usize,
    /// EM iterations after each binary split.
    pub split_iters: usize,
    pub seed: u64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub variance_floor_factor: f64,
    /// Train on a seeded random subset of at most this many frames.
    pub max_frames: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            components: 512,
            em_iters: 20,
            split_iters: 2,
            seed: 0,
            variance_floor_factor: 1e-6,
            max_frames: None,
        }
    }
}

/// A trained model with its training trace.
#[derive(Debug, Clone)]
pub struct TrainedGmm<T> {
    pub model: GmmModel<T>,
    /// Mean per-frame log-likelihood before each of the final EM
    /// iterations, plus one entry for the final model.
    pub ll_history: Vec<f64>,
    pub frames_used: usize,
}

/// Sufficient statistics of one E-step chunk.
struct Stats {
    ll: f64,
    n: Vec<f64>,
    sx: Vec<f64>,
    sxx: Vec<f64>,
}

impl Stats {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            ll: 0.0,
            n: vec![0.0; k],
            sx: vec![0.0; k * d],
            sxx: vec![0.0; k * d],
        }
    }

    fn add(&mut self, o: &Stats) {
        self.ll += o.ll;
        for (a, b) in self.n.iter_mut().zip(&o.n) {
            *a += b;
        }
        for (a, b) in self.sx.iter_mut().zip(&o.sx) {
            *a += b;
        }
        for (a, b) in self.sxx.iter_mut().zip(&o.sxx) {
            *a += b;
        }
    }
}

/// Soft E-step, or with `hard` each frame goes wholly to its most likely
/// component (lowest index on ties).
fn e_step(m: &GmmModel<f64>, data: &[f64], hard: bool) -> Stats {
    let (k, d) = (m.components(), m.dims());
    let partial: Vec<Stats> = data
        .par_chunks(CHUNK * d)
        .map(|chunk| {
            let mut s = Stats::zeros(k, d);
            let mut logs = vec![0.0; k];
            for x in chunk.chunks_exact(d) {
                m.component_logs(x, &mut logs);
                let total = log_sum_exp(&logs);
                s.ll += total;
                let best = hard.then(|| (0..k).fold(0, |b, c| if logs[c] > logs[b] { c } else { b }));
                for (c, &l) in logs.iter().enumerate() {
                    let g = match best {
                        Some(b) => f64::from(u8::from(b == c)),
                        None => (l - total).exp(),
                    };
                    if g == 0.0 {
                        continue;
                    }
                    s.n[c] += g;
                    let sx = &mut s.sx[c * d..(c + 1) * d];
                    let sxx = &mut s.sxx[c * d..(c + 1) * d];
                    for j in 0..d {
                        let gx = g * x[j];
                        sx[j] += gx;
                        sxx[j] += gx * x[j];
                    }
                }
            }
            s
        })
        .collect();
    let mut total = Stats::zeros(k, d);
    for p in &partial {
        total.add(p);
    }
    total
}

/// M-step with per-dimension variance flooring. Components that received
/// no responsibility keep their parameters; after a hard E-step they keep a
/// weight of one frame so later soft iterations can revive them.
fn m_step(m: &GmmModel<f64>, s: &Stats, floor: &[f64], hard: bool) -> Result<GmmModel<f64>> {
    let (k, d) = (m.components(), m.dims());
    let total: f64 = s.n.iter().sum();
    let mut weights = Vec::with_capacity(k);
    let mut means = m.means.clone();
    let mut vars = m.variances.clone();
    for c in 0..k {
        let n = s.n[c];
        weights.push(if hard { n.max(1.0) } else { n / total });
        if n <= 1e-10 * total {
            continue;
        }
        for j in 0..d {
            let mu = s.sx[c * d + j] / n;
            let var = s.sxx[c * d + j] / n - mu * mu;
            means[c * d + j] = mu;
            vars[c * d + j] = var.max(floor[j]);
        }
    }
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    GmmModel::new(weights, means, vars).map_err(|e| Error::Numerical(format!("EM produced an invalid model: {e}")))
}

/// Splits the `count` heaviest components (ties to the lower index):
/// means move to μ ± 0.1σ and the weight is shared equally.
fn split(m: &GmmModel<f64>, count: usize) -> GmmModel<f64> {
    let d = m.dims();
    let mut order: Vec<usize> = (0..m.components()).collect();
    order.sort_by(|&a, &b| m.weights[b].total_cmp(&m.weights[a]).then(a.cmp(&b)));
    let mut weights = m.weights.clone();
    let mut means = m.means.clone();
    let mut vars = m.variances.clone();
    for &c in order.iter().take(count) {
        weights[c] *= 0.5;
        weights.push(weights[c]);
        let sd: Vec<f64> = m.variance(c).iter().map(|v| v.sqrt()).collect();
        for j in 0..d {
            means[c * d + j] = m.means[c * d + j] + 0.1 * sd[j];
        }
        means.extend((0..d).map(|j| m.means[c * d + j] - 0.1 * sd[j]));
        vars.extend_from_slice(m.variance(c));
    }
    GmmModel::new(weights, means, vars).expect("split preserves validity")
}

/// Trains a diagonal GMM by binary splitting (1 → 2 → … → K, with
/// `split_iters` hard-assignment EM iterations per level, as in LBG vector
/// quantiser design) followed by `em_iters` soft EM iterations. Statistics are accumulated in f64 and reduced in a fixed
/// chunk order, so the result does not depend on the thread count.
pub fn train_gmm<T: Real>(frames: &FeatureMatrix<T>, cfg: &TrainConfig) -> Result<TrainedGmm<T>> {
    let d = frames.dims();
    if cfg.components == 0 || cfg.em_iters == 0 {
        return Err(arg("need K >= 1 and em_iters >= 1"));
    }
    let mut rows: Vec<usize> = (0..frames.frames()).collect();
    if let Some(cap) = cfg.max_frames {
        if cap < rows.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rows = sample(&mut rng, frames.frames(), cap).into_vec();
            rows.sort_unstable();
        }
    }
    let n = rows.len();
    if n < cfg.components {
        return Err(arg(format!("{n} training frames is fewer than K = {}", cfg.components)));
    }
    let data: Vec<f64> = rows.iter().flat_map(|&t| frames.row(t).iter().map(|v| v.as_f64())).collect();

    let mut mean = vec![0.0; d];
    for x in data.chunks_exact(d) {
        for j in 0..d {
            mean[j] += x[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for x in data.chunks_exact(d) {
        for j in 0..d {
            var[j] += (x[j] - mean[j]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= n as f64);
    let degenerate: Vec<usize> = (0..d).filter(|&j| !(var[j] > 0.0)).collect();
    if !degenerate.is_empty() {
        log::warn!("zero-variance feature dimensions {degenerate:?}; flooring");
    }
    let floor: Vec<f64> = var
        .iter()
        .map(|&v| if v > 0.0 { cfg.variance_floor_factor * v } else { cfg.variance_floor_factor.max(f64::MIN_POSITIVE) })
        .collect();
    let start_var: Vec<f64> = var.iter().zip(&floor).map(|(v, f)| v.max(*f)).collect();
    let mut model = GmmModel::new(vec![1.0], mean, start_var)?;

    while model.components() < cfg.components {
        let count = model.components().min(cfg.components - model.components());
        model = split(&model, count);
        for _ in 0..cfg.split_iters {
            model = m_step(&model, &e_step(&model, &data, true), &floor, true)?;
        }
        log::debug!("GMM split to {} components", model.components());
    }
    let mut ll_history = Vec::with_capacity(cfg.em_iters + 1);
    for it in 0..cfg.em_iters {
        let stats = e_step(&model, &data, false);
        ll_history.push(stats.ll / n as f64);
        log::debug!("EM iteration {}: mean log-likelihood {:.6}", it + 1, stats.ll / n as f64);
        model = m_step(&model, &stats, &floor, false)?;
    }
    ll_history.push(e_step(&model, &data, false).ll / n as f64);
    Ok(TrainedGmm {
        model: model.cast(),
        ll_history,
        frames_used: n,
    })
}

/// How frame log-likelihood ratios are combined into one score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlrAggregation {
    #[default]
    Mean,
    Sum,
}

/// Frame-averaged log-likelihood ratio; higher means more bona fide.
pub fn score_llr<T: Real>(f: &FeatureMatrix<T>, bona: &GmmModel<T>, spoof: &GmmModel<T>) -> Result<f64> {
    score_llr_with(f, bona, spoof, LlrAggregation::Mean)
}

pub fn score_llr_with<T: Real>(
    f: &FeatureMatrix<T>,
    bona: &GmmModel<T>,
    spoof: &GmmModel<T>,
    agg: LlrAggregation,
) -> Result<f64> {
    if bona.dims() != spoof.dims() {
        return Err(arg(format!("model dims differ: {} vs {}", bona.dims(), spoof.dims())));
    }
    if bona == spoof {
        return Ok(0.0);
    }
    let sum = bona.total_loglik(f)? - spoof.total_loglik(f)?;
    Ok(match agg {
        LlrAggregation::Mean => sum / f.frames() as f64,
        LlrAggregation::Sum => sum,
    })
}

/// Hex SHA-256 of the training frames in their binary feature form.
pub fn data_hash<T: Real>(frames: &FeatureMatrix<T>) -> String {
    let digest = Sha256::digest(frames.to_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn matrix(values: Vec<f64>, dims: usize) -> FeatureMatrix<f64> {
        let frames = values.len() / dims;
        FeatureMatrix::new(values, frames, dims, 0.01).unwrap()
    }

    fn cfg(k: usize) -> TrainConfig {
        TrainConfig {
            components: k,
            ..Default::default()
        }
    }

    #[test]
    fn standard_normal_values() {
        let m = GmmModel::<f64>::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        assert!((gmm_loglik(&m, &[0.0]).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-15);
        assert!((gmm_loglik(&m, &[1.0]).unwrap() + 1.418_938_533_204_672_7).abs() < 1e-15);
        assert!(gmm_loglik(&m, &[0.0, 1.0]).is_err());
        assert!(gmm_loglik(&m, &[1e6]).unwrap().is_finite());
    }

    #[test]
    fn loglik_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (k, d) = (5, 3);
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let mu: Vec<f64> = (0..k * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let var: Vec<f64> = (0..k * d).map(|_| rng.gen_range(0.3..2.0)).collect();
        let m = GmmModel::new(w.clone(), mu.clone(), var.clone()).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut p = 0.0;
            for c in 0..k {
                let mut dens = w[c];
                for j in 0..d {
                    let v = var[c * d + j];
                    dens *= (-(x[j] - mu[c * d + j]).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
                }
                p += dens;
            }
            let got = gmm_loglik(&m, &x).unwrap();
            assert!((got - p.ln()).abs() <= 1e-10 * p.ln().abs().max(1.0));
        }
    }

    #[test]
    fn single_component_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..2000).map(|_| rng.gen_range(-1.0..3.0)).collect();
        let t = train_gmm(&matrix(v.clone(), 2), &cfg(1)).unwrap();
        for j in 0..2 {
            let xs: Vec<f64> = v.iter().skip(j).step_by(2).copied().collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            assert_eq!(t.model.weights(), &[1.0]);
            assert!((t.model.mean(0)[j] - mean).abs() < 1e-10);
            assert!((t.model.variance(0)[j] - var).abs() < 1e-10);
        }
    }

    #[test]
    fn recovers_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v: Vec<f64> = (0..10_000)
            .map(|i| if i % 2 == 0 { 0.0 } else { 10.0 } + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let t = train_gmm(&matrix(v, 1), &cfg(2)).unwrap();
        let mut means = [t.model.mean(0)[0], t.model.mean(1)[0]];
        means.sort_by(f64::total_cmp);
        assert!(means[0].abs() < 0.2 && (means[1] - 10.0).abs() < 0.2, "{means:?}");
        for w in t.model.weights() {
            assert!((w - 0.5).abs() < 0.05);
        }
        assert_eq!(t.ll_history.len(), 21);
    }

    #[test]
    fn degenerate_data_respects_floor() {
        let mut v = vec![1.0; 400];
        for i in 0..100 {
            v[2 * i + 1] = (i % 3) as f64;
        }
        let t = train_gmm(&matrix(v, 2), &cfg(4)).unwrap();
        for k in 0..4 {
            assert!(t.model.variance(k).iter().all(|&s| s > 0.0));
        }
        assert!(train_gmm(&matrix(vec![0.0; 6], 2), &cfg(4)).is_err());
    }

    #[test]
    fn non_power_of_two_and_subsampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v: Vec<f64> = (0..3000).map(|_| rng.sample(StandardNormal)).collect();
        let c = TrainConfig {
            components: 5,
            em_iters: 3,
            max_frames: Some(500),
            ..Default::default()
        };
        let t = train_gmm(&matrix(v, 3), &c).unwrap();
        assert_eq!(t.model.components(), 5);
        assert_eq!(t.frames_used, 500);
    }

    #[test]
    fn model_file_round_trip() {
        let m = GmmModel::new(vec![0.25, 0.75], vec![1.0, -2.0, 0.5, 3.0], vec![1.0, 2.0, 0.1, 7.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.gmm");
        m.save(&p).unwrap();
        assert_eq!(GmmModel::<f64>::load(&p).unwrap(), m);
        assert!(GmmModel::<f64>::from_bytes(b"GMMD\x01\0\0\0").is_err());
    }

    #[test]
    fn single_frame_llr_closed_form() {
        let b = GmmModel::new(vec![1.0], vec![0.0, 1.0], vec![1.0, 4.0]).unwrap();
        let s = GmmModel::new(vec![1.0], vec![2.0, -1.0], vec![0.5, 1.0]).unwrap();
        let x = [0.3, 0.2];
        let ln = |m: f64, v: f64, x: f64| -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (x - m).powi(2) / (2.0 * v);
        let want = ln(0.0, 1.0, 0.3) + ln(1.0, 4.0, 0.2) - ln(2.0, 0.5, 0.3) - ln(-1.0, 1.0, 0.2);
        let got = score_llr(&matrix(x.to_vec(), 2), &b, &s).unwrap();
        assert!((got - want).abs() < 1e-10);
        assert_eq!(score_llr(&matrix(x.to_vec(), 2), &b, &b).unwrap(), 0.0);
        let one_d = GmmModel::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        assert!(score_llr(&matrix(x.to_vec(), 2), &b, &one_d).is_err());
    }

    #[test]
    fn bona_frames_score_positive() {
        let b = GmmModel::new(vec![1.0], vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let s = GmmModel::new(vec![1.0], vec![1.0, -0.5], vec![2.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
        assert!(score_llr(&matrix(v, 2), &b, &s).unwrap() > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn em_is_monotone(seed in any::<u64>(), k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let centres: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let v: Vec<f64> = (0..600)
                .map(|i| centres[i % 3] + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let t = train_gmm(&matrix(v, 2), &cfg(k)).unwrap();
            for w in t.ll_history.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{:?}", t.ll_history);
            }
        }

        #[test]
        fn training_is_deterministic(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..900).map(|_| rng.sample(StandardNormal)).collect();
            let a = train_gmm(&matrix(v.clone(), 3), &cfg(4)).unwrap();
            let b = train_gmm(&matrix(v, 3), &cfg(4)).unwrap();
            prop_assert_eq!(a.model.to_bytes(), b.model.to_bytes());
        }

        #[test]
        fn component_order_and_frame_order_do_not_matter(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = [0.2, 0.5, 0.3];
            let mu: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let var: Vec<f64> = (0..6).map(|_| rng.gen_range(0.2..2.0)).collect();
            let a = GmmModel::new(w.to_vec(), mu.clone(), var.clone()).unwrap();
            let perm = [2usize, 0, 1];
            let b = GmmModel::new(
                perm.iter().map(|&p| w[p]).collect(),
                perm.iter().flat_map(|&p| mu[2 * p..2 * p + 2].to_vec()).collect(),
                perm.iter().flat_map(|&p| var[2 * p..2 * p + 2].to_vec()).collect(),
            ).unwrap();
            let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-3.0..3.0)).collect();
            for r in x.chunks(2) {
                let (p, q) = (gmm_loglik(&a, r).unwrap(), gmm_loglik(&b, r).unwrap());
                prop_assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
            }
            let s = GmmModel::new(vec![1.0], vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
            let fwd = score_llr(&matrix(x.clone(), 2), &a, &s).unwrap();
            let rev: Vec<f64> = x.chunks(2).rev().flatten().copied().collect();
            let back = score_llr(&matrix(rev, 2), &a, &s).unwrap();
            prop_assert!((fwd - back).abs() <= 1e-12 * fwd.abs().max(1.0));
        }
    }
}
