//! Countermeasure front-ends: CQCC and LFCC cepstra with deltas.

mod cqcc;
mod lfcc;
mod spline;

pub use cqcc::{cqcc, cqt, CqccConfig, CqtMatrix};
pub use lfcc::{lfcc, LfccConfig};
pub use spline::CubicSpline;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::signal::Waveform;

/// Floor applied to powers before taking logs.
pub const LOG_FLOOR: f64 = 1e-10;
const FEAT_MAGIC: &[u8; 4] = b"FEAT";

/// Which front-end to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Cqcc,
    Lfcc,
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cqcc" => Ok(Self::Cqcc),
            "lfcc" => Ok(Self::Lfcc),
            _ => Err(crate::error::arg(format!("unknown feature type '{s}'"))),
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cqcc => "cqcc",
            Self::Lfcc => "lfcc",
        })
    }
}

/// Frames × coefficients, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    frames: usize,
    dims: usize,
    values: Vec<T>,
    frame_shift: f64,
}

impl<T: Real> FeatureMatrix<T> {
    pub fn new(values: Vec<T>, frames: usize, dims: usize, frame_shift: f64) -> Result<Self> {
        if frames == 0 || dims == 0 {
            return Err(Error::Validation("feature matrix needs at least one frame and one dim".into()));
        }
        if values.len() != frames * dims {
            return Err(Error::Validation(format!(
                "{} values for a {frames}x{dims} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature matrix has non-finite values".into()));
        }
        Ok(Self {
            frames,
            dims,
            values,
            frame_shift,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Frame shift in seconds (0 when unknown, e.g. read from a file).
    pub fn frame_shift(&self) -> f64 {
        self.frame_shift
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[T] {
        &self.values[t * self.dims..(t + 1) * self.dims]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, T> {
        self.values.chunks_exact(self.dims)
    }

    pub fn cast<U: Real>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            frames: self.frames,
            dims: self.dims,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
            frame_shift: self.frame_shift,
        }
    }

    /// Binary little-endian form: `FEAT`, dims (u32), frames (u32), f32 data.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.values.len());
        out.extend_from_slice(FEAT_MAGIC);
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != FEAT_MAGIC {
            return Err(Error::Format("not a feature file (bad magic)".into()));
        }
        let dims = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() != 4 * dims * frames {
            return Err(Error::Format(format!(
                "feature file holds {} bytes of data, header says {frames}x{dims}",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        Self::new(values, frames, dims, 0.0).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// One comma-separated line per frame.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Stacks matrices with equal dims row-wise (frame shift of the first).
pub fn pool<T: Real>(mats: &[FeatureMatrix<T>]) -> Result<FeatureMatrix<T>> {
    let first = mats.first().ok_or_else(|| crate::error::arg("nothing to pool"))?;
    if let Some(m) = mats.iter().find(|m| m.dims != first.dims) {
        return Err(crate::error::arg(format!("cannot pool {}-dim and {}-dim features", first.dims, m.dims)));
    }
    let values: Vec<T> = mats.iter().flat_map(|m| m.values.iter().copied()).collect();
    let frames = mats.iter().map(|m| m.frames).sum();
    Ok(FeatureMatrix {
        frames,
        dims: first.dims,
        values,
        frame_shift: first.frame_shift,
    })
}

/// Runs the chosen front-end with its default configuration.
pub fn extract<T: Real>(w: &Waveform<T>, kind: FeatureKind) -> Result<FeatureMatrix<T>> {
    match kind {
        FeatureKind::Cqcc => cqcc(w, &CqccConfig::default()),
        FeatureKind::Lfcc => lfcc(w, &LfccConfig::default()),
    }
}

/// Appends deltas and delta-deltas: `d_t = (x_{t+1} − x_{t−1}) / 2` with the
/// first and last frames replicated. Output rows are
/// `[static, delta, delta-delta]`.
pub fn append_deltas<T: Real>(f: &FeatureMatrix<T>) -> FeatureMatrix<T> {
    if f.frames < 2 {
        log::warn!("delta of a single frame is zero");
    }
    let d1 = delta(&f.values, f.frames, f.dims);
    let d2 = delta(&d1, f.frames, f.dims);
    let mut values = Vec::with_capacity(3 * f.values.len());
    for t in 0..f.frames {
        let r = t * f.dims..(t + 1) * f.dims;
        values.extend_from_slice(&f.values[r.clone()]);
        values.extend_from_slice(&d1[r.clone()]);
        values.extend_from_slice(&d2[r]);
    }
    FeatureMatrix {
        frames: f.frames,
        dims: 3 * f.dims,
        values,
        frame_shift: f.frame_shift,
    }
}

fn delta<T: Real>(x: &[T], frames: usize, dims: usize) -> Vec<T> {
    let half = T::lit(0.5);
    let mut out = vec![T::zero(); x.len()];
    for t in 0..frames {
        let next = (t + 1).min(frames - 1);
        let prev = t.saturating_sub(1);
        for d in 0..dims {
            out[t * dims + d] = (x[next * dims + d] - x[prev * dims + d]) * half;
        }
    }
    out
}

/// Orthonormal DCT-II keeping the first `keep` coefficients.
#[derive(Debug, Clone)]
pub struct Dct<T> {
    n: usize,
    keep: usize,
    table: Vec<T>,
}

impl<T: Real> Dct<T> {
    pub fn new(n: usize, keep: usize) -> Self {
        assert!(n > 0 && keep <= n, "DCT needs 0 < keep <= n");
        let mut table = Vec::with_capacity(keep * n);
        for k in 0..keep {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            for i in 0..n {
                let c = (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
                table.push(T::lit(s * c));
            }
        }
        Self { n, keep, table }
    }

    pub fn forward(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.n);
        for (k, o) in out.iter_mut().take(self.keep).enumerate() {
            let row = &self.table[k * self.n..(k + 1) * self.n];
            *o = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
        }
    }

    /// Inverse from a full (`keep == n`) coefficient vector.
    pub fn inverse(&self, c: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            *o = (0..self.keep).map(|k| self.table[k * self.n + i] * c[k]).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(frames: usize, dims: usize, f: impl Fn(usize, usize) -> f64) -> FeatureMatrix<f64> {
        let v = (0..frames).flat_map(|t| (0..dims).map(move |d| (t, d))).map(|(t, d)| f(t, d)).collect();
        FeatureMatrix::new(v, frames, dims, 0.01).unwrap()
    }

    #[test]
    fn constant_input_has_zero_deltas() {
        let m = append_deltas(&matrix(6, 3, |_, d| d as f64 + 1.5));
        assert_eq!(m.dims(), 9);
        for row in m.rows() {
            assert!(row[3..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ramp_deltas() {
        let m = append_deltas(&matrix(7, 1, |t, _| t as f64));
        for t in 1..6 {
            assert_eq!(m.row(t)[1], 1.0);
        }
        for t in 2..5 {
            assert_eq!(m.row(t)[2], 0.0);
        }
        assert_eq!(m.row(0)[1], 0.5);
    }

    #[test]
    fn deltas_match_direct_formula() {
        let vals = [0.3, -1.2, 4.0, 2.5, -0.7, 0.0, 9.1, -3.3, 1.0, 0.25];
        let m = matrix(5, 2, |t, d| vals[t * 2 + d]);
        let out = append_deltas(&m);
        let x = |t: i64, d: usize| vals[(t.clamp(0, 4) as usize) * 2 + d];
        let dx = |t: i64, d: usize| (x(t + 1, d) - x(t - 1, d)) / 2.0;
        for t in 0..5i64 {
            for d in 0..2 {
                let row = out.row(t as usize);
                assert_eq!(row[d], x(t, d));
                assert_eq!(row[2 + d], dx(t, d));
                let ddx = (dx((t + 1).min(4), d) - dx((t - 1).max(0), d)) / 2.0;
                assert_eq!(row[4 + d], ddx);
            }
        }
    }

    #[test]
    fn single_frame_deltas_are_zero() {
        let out = append_deltas(&matrix(1, 4, |_, d| d as f64));
        assert_eq!(out.frames(), 1);
        assert!(out.row(0)[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feat_round_trip_and_errors() {
        let m = matrix(3, 4, |t, d| (t * 10 + d) as f64 * 0.25);
        let back = FeatureMatrix::<f64>::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.values(), m.values());
        assert_eq!(&m.to_bytes()[..4], b"FEAT");
        assert!(FeatureMatrix::<f64>::from_bytes(b"NOPE00000000").is_err());
        let mut short = m.to_bytes();
        short.pop();
        assert!(FeatureMatrix::<f64>::from_bytes(&short).is_err());
        assert_eq!(m.to_csv().lines().next().unwrap(), "0,0.25,0.5,0.75");
        assert!(FeatureMatrix::new(vec![f64::NAN], 1, 1, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn dct_is_orthonormal(x in proptest::collection::vec(-50.0f64..50.0, 1..64)) {
            let n = x.len();
            let dct = Dct::<f64>::new(n, n);
            let mut c = vec![0.0; n];
            let mut back = vec![0.0; n];
            dct.forward(&x, &mut c);
            dct.inverse(&c, &mut back);
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let e1: f64 = x.iter().map(|v| v * v).sum();
            let e2: f64 = c.iter().map(|v| v * v).sum();
            prop_assert!((e1 - e2).abs() <= 1e-9 * e1.max(1.0));
        }
    }
}
