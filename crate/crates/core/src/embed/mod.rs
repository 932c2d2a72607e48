//! Embedding-space analysis of attacks: per-speaker whitening, length
//! normalisation, WCCN, the asymmetric nearest-neighbour cosine distance
//! between classes, and UPGMA clustering.

mod cluster;

pub use cluster::{upgma, Dendrogram, Merge};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::features::FeatureMatrix;
use crate::scalar::Real;

const STD_FLOOR: f64 = 1e-8;
const RIDGE: f64 = 1e-6;

/// Labelled embedding vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    dims: usize,
    vectors: Vec<T>,
    pub utt_ids: Vec<String>,
    pub speaker_ids: Vec<String>,
    pub class_ids: Vec<String>,
}

impl<T: Real> EmbeddingSet<T> {
    pub fn new(
        vectors: Vec<T>,
        dims: usize,
        utt_ids: Vec<String>,
        speaker_ids: Vec<String>,
        class_ids: Vec<String>,
    ) -> Result<Self> {
        let n = utt_ids.len();
        if dims == 0 || vectors.len() != n * dims || speaker_ids.len() != n || class_ids.len() != n {
            return Err(arg(format!(
                "embedding shape mismatch: {} values, {dims} dims, {n}/{}/{} labels",
                vectors.len(),
                speaker_ids.len(),
                class_ids.len()
            )));
        }
        if let Some(i) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(arg(format!("non-finite value in embedding of {}", utt_ids[i / dims])));
        }
        Ok(Self {
            dims,
            vectors,
            utt_ids,
            speaker_ids,
            class_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.utt_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utt_ids.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn vector(&self, i: usize) -> &[T] {
        &self.vectors[i * self.dims..(i + 1) * self.dims]
    }

    fn with_vectors(&self, vectors: Vec<T>) -> Self {
        Self {
            vectors,
            ..self.clone()
        }
    }

    /// Row indices per label, labels in lexicographic order.
    fn groups(labels: &[String]) -> BTreeMap<&str, Vec<usize>> {
        let mut g: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            g.entry(l.as_str()).or_default().push(i);
        }
        g
    }

    /// Sorted distinct class labels.
    pub fn classes(&self) -> Vec<String> {
        Self::groups(&self.class_ids).keys().map(|s| s.to_string()).collect()
    }

    /// Parses `utt_id,speaker_id,class_id,v0,...,v{D-1}` rows; a first line
    /// starting with `utt_id` is taken as a header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
        if rdr.peek().is_some_and(|(_, l)| l.trim_start().starts_with("utt_id")) {
            rdr.next();
        }
        let (mut utt, mut spk, mut cls, mut vals) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut dims = None;
        for (i, line) in rdr {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() < 4 {
                return Err(Error::Format(format!("embedding line {}: need ids and at least one value", i + 1)));
            }
            let d = f.len() - 3;
            if *dims.get_or_insert(d) != d {
                return Err(Error::Format(format!("embedding line {}: {d} values, expected {}", i + 1, dims.unwrap())));
            }
            utt.push(f[0].to_string());
            spk.push(f[1].to_string());
            cls.push(f[2].to_string());
            for v in &f[3..] {
                let x: f64 = v
                    .parse()
                    .map_err(|_| Error::Format(format!("embedding line {}: bad value '{v}'", i + 1)))?;
                vals.push(T::lit(x));
            }
        }
        let dims = dims.ok_or_else(|| Error::Format("no embeddings in input".into()))?;
        Self::new(vals, dims, utt, spk, cls).map_err(|e| Error::Format(e.to_string()))
    }

    /// Rows of a feature file plus a `utt_id,speaker_id,class_id` labels CSV
    /// with one line per row (optional header).
    pub fn from_features(f: &FeatureMatrix<T>, labels: &str) -> Result<Self> {
        let mut lines: Vec<&str> = labels.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.first().is_some_and(|l| l.trim_start().starts_with("utt_id")) {
            lines.remove(0);
        }
        if lines.len() != f.frames() {
            return Err(Error::Format(format!("{} label rows for {} vectors", lines.len(), f.frames())));
        }
        let (mut utt, mut spk, mut cls) = (Vec::new(), Vec::new(), Vec::new());
        for (i, l) in lines.iter().enumerate() {
            let p: Vec<&str> = l.split(',').map(str::trim).collect();
            if p.len() != 3 {
                return Err(Error::Format(format!("label line {}: expected utt_id,speaker_id,class_id", i + 1)));
            }
            utt.push(p[0].to_string());
            spk.push(p[1].to_string());
            cls.push(p[2].to_string());
        }
        Self::new(f.values().to_vec(), f.dims(), utt, spk, cls)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("utt_id,speaker_id,class_id");
        for d in 0..self.dims {
            write!(out, ",v{d}").unwrap();
        }
        out.push('\n');
        for i in 0..self.len() {
            write!(out, "{},{},{}", self.utt_ids[i], self.speaker_ids[i], self.class_ids[i]).unwrap();
            for v in self.vector(i) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Per speaker: subtract the speaker mean and divide each dimension by the
/// speaker's (population) standard deviation, floored at 1e-8.
pub fn speaker_whiten<T: Real>(e: &EmbeddingSet<T>) -> Result<EmbeddingSet<T>> {
    let groups = EmbeddingSet::<T>::groups(&e.speaker_ids);
    let single: Vec<&str> = groups.iter().filter(|(_, v)| v.len() < 2).map(|(k, _)| *k).collect();
    if !single.is_empty() {
        return Err(arg(format!("speakers with fewer than two vectors: {}", single.join(", "))));
    }
    let d = e.dims;
    let mut out = e.vectors.clone();
    for rows in groups.values() {
        let n = rows.len() as f64;
        for j in 0..d {
            let mean = rows.iter().map(|&i| e.vectors[i * d + j].as_f64()).sum::<f64>() / n;
            let var = rows.iter().map(|&i| (e.vectors[i * d + j].as_f64() - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt().max(STD_FLOOR);
            for &i in rows {
                out[i * d + j] = T::lit((e.vectors[i * d + j].as_f64() - mean) / sd);
            }
        }
    }
    Ok(e.with_vectors(out))
}

/// Scales every vector to unit Euclidean length.
pub fn length_normalize<T: Real>(e: &EmbeddingSet<T>) -> Result<EmbeddingSet<T>> {
    let mut out = e.vectors.clone();
    for (i, v) in out.chunks_exact_mut(e.dims).enumerate() {
        let norm = v.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(arg(format!("zero vector for {}", e.utt_ids[i])));
        }
        v.iter_mut().for_each(|x| *x = T::lit(x.as_f64() / norm));
    }
    Ok(e.with_vectors(out))
}

/// Mean of the per-class (population) covariance matrices.
fn within_class_covariance<T: Real>(e: &EmbeddingSet<T>) -> Result<DMatrix<f64>> {
    let groups = EmbeddingSet::<T>::groups(&e.class_ids);
    let small: Vec<&str> = groups.iter().filter(|(_, v)| v.len() < 2).map(|(k, _)| *k).collect();
    if !small.is_empty() {
        return Err(arg(format!("classes with fewer than two vectors: {}", small.join(", "))));
    }
    let d = e.dims;
    let mut w = DMatrix::<f64>::zeros(d, d);
    for rows in groups.values() {
        let x = DMatrix::from_fn(rows.len(), d, |r, c| e.vectors[rows[r] * d + c].as_f64());
        let mean = x.row_mean();
        let centred = DMatrix::from_fn(rows.len(), d, |r, c| x[(r, c)] - mean[c]);
        w += centred.transpose() * &centred / rows.len() as f64;
    }
    Ok(w / groups.len() as f64)
}

/// WCCN: `W` is the mean within-class covariance and `B` the lower Cholesky
/// factor of `W⁻¹`; vectors map to `Bᵀx`, making the within-class
/// covariance the identity. If `W` is not positive definite a ridge of
/// `1e-6·trace(W)/D` is added first. Returns `(B, transformed)`, with `B`
/// row-major.
pub fn wccn<T: Real>(e: &EmbeddingSet<T>) -> Result<(Vec<T>, EmbeddingSet<T>)> {
    let d = e.dims;
    let w = within_class_covariance(e)?;
    let chol = match w.clone().cholesky() {
        Some(c) => c,
        None => {
            let ridge = RIDGE * w.trace() / d as f64;
            log::warn!("within-class covariance is singular; adding ridge {ridge:e}");
            let counts = EmbeddingSet::<T>::groups(&e.class_ids);
            let thin: Vec<&str> = counts.iter().filter(|(_, v)| v.len() <= d).map(|(k, _)| *k).collect();
            (w + DMatrix::identity(d, d) * ridge).cholesky().ok_or_else(|| {
                Error::Numerical(format!(
                    "within-class covariance is rank deficient beyond ridge repair; classes with no more vectors than dims: {}",
                    if thin.is_empty() { "none".into() } else { thin.join(", ") }
                ))
            })?
        }
    };
    let w_inv = chol.inverse();
    let w_inv = (&w_inv + w_inv.transpose()) * 0.5;
    let b = w_inv
        .cholesky()
        .ok_or_else(|| Error::Numerical("inverse within-class covariance is not positive definite".into()))?
        .l();
    let mut out = vec![T::zero(); e.vectors.len()];
    for i in 0..e.len() {
        let x = e.vector(i);
        for c in 0..d {
            // (Bᵀx)_c = Σ_r B[r, c] x_r with B lower-triangular
            let s: f64 = (c..d).map(|r| b[(r, c)] * x[r].as_f64()).sum();
            out[i * d + c] = T::lit(s);
        }
    }
    let b_rows: Vec<T> = (0..d).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| T::lit(b[(r, c)])).collect();
    Ok((b_rows, e.with_vectors(out)))
}

/// Class-by-class distances over a fixed label order. Not symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    /// Row-major, `values[i·M + j] = D(X_i, X_j)`.
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(labels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let m = labels.len();
        if values.len() != m * m {
            return Err(arg(format!("{} values for {m} labels", values.len())));
        }
        Ok(Self { labels, values })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size() + j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class");
        for l in &self.labels {
            write!(out, ",{l}").unwrap();
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..self.size() {
                write!(out, ",{}", self.get(i, j)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    xy / (xx * yy).sqrt()
}

/// `D(X_i, X_j) = (1/|X_i|) Σ_{x∈X_i} min_{y∈X_j} (1 − cos(x, y))`.
pub fn set_distance(xi: &[Vec<f64>], xj: &[Vec<f64>]) -> Result<f64> {
    if xi.is_empty() || xj.is_empty() {
        return Err(arg("attack distance needs nonempty classes"));
    }
    let total: f64 = xi
        .iter()
        .map(|x| xj.iter().map(|y| 1.0 - cosine(x, y)).fold(f64::INFINITY, f64::min))
        .sum();
    Ok(total / xi.len() as f64)
}

/// Attack distance between every ordered pair of classes (sorted labels),
/// with an exactly zero diagonal.
pub fn attack_distance<T: Real>(e: &EmbeddingSet<T>) -> Result<DistanceMatrix> {
    let groups = EmbeddingSet::<T>::groups(&e.class_ids);
    let labels: Vec<String> = groups.keys().map(|s| s.to_string()).collect();
    let sets: Vec<Vec<Vec<f64>>> = groups
        .values()
        .map(|rows| rows.iter().map(|&i| e.vector(i).iter().map(|v| v.as_f64()).collect()).collect())
        .collect();
    let m = labels.len();
    let values = (0..m * m)
        .into_par_iter()
        .map(|p| {
            let (i, j) = (p / m, p % m);
            if i == j {
                Ok(0.0)
            } else {
                set_distance(&sets[i], &sets[j])
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    DistanceMatrix::new(labels, values)
}

/// Output of the whiten → length-normalise → WCCN → distance → UPGMA chain.
#[derive(Debug, Clone)]
pub struct Analysis<T> {
    pub processed: EmbeddingSet<T>,
    pub transform: Vec<T>,
    pub distances: DistanceMatrix,
    pub dendrogram: Dendrogram,
}

pub fn analyze<T: Real>(e: &EmbeddingSet<T>) -> Result<Analysis<T>> {
    let normalized = length_normalize(&speaker_whiten(e)?)?;
    let (transform, processed) = wccn(&normalized)?;
    let distances = attack_distance(&processed)?;
    let dendrogram = upgma(&distances)?;
    Ok(Analysis {
        processed,
        transform,
        distances,
        dendrogram,
    })
}
