use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{append_deltas, Dct, FeatureMatrix, LOG_FLOOR};
use crate::error::{arg, Result};
use crate::scalar::Real;
use crate::signal::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LfccConfig {
    /// Window length in seconds.
    pub win_len: f64,
    /// Window shift in seconds.
    pub win_shift: f64,
    pub n_fft: usize,
    pub n_filters: usize,
    pub n_static: usize,
}

impl Default for LfccConfig {
    fn default() -> Self {
        Self {
            win_len: 0.02,
            win_shift: 0.01,
            n_fft: 512,
            n_filters: 20,
            n_static: 20,
        }
    }
}

impl LfccConfig {
    /// (window, shift) in samples at `fs`.
    pub fn framing(&self, fs: u32) -> (usize, usize) {
        let w = (self.win_len * fs as f64).round() as usize;
        let s = (self.win_shift * fs as f64).round() as usize;
        (w, s)
    }

    /// `floor((n − win)/shift) + 1`, or one zero-padded frame when `n < win`.
    pub fn frame_count(&self, n: usize, fs: u32) -> usize {
        let (w, s) = self.framing(fs);
        if n < w {
            1
        } else {
            (n - w) / s + 1
        }
    }
}

/// Triangular filters with edges `linspace(0, fs/2, n_filters + 2)`; filter
/// `i` rises over `[e_i, e_{i+1}]` and falls over `[e_{i+1}, e_{i+2}]`.
fn filterbank(n_filters: usize, n_fft: usize, fs: u32) -> Vec<Vec<f64>> {
    let nyq = fs as f64 / 2.0;
    let edges: Vec<f64> = (0..n_filters + 2).map(|i| nyq * i as f64 / (n_filters + 1) as f64).collect();
    let bins = n_fft / 2 + 1;
    (0..n_filters)
        .map(|i| {
            let (lo, mid, hi) = (edges[i], edges[i + 1], edges[i + 2]);
            (0..bins)
                .map(|j| {
                    let f = j as f64 * fs as f64 / n_fft as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// LFCC: symmetric Hamming frames, `n_fft`-point power spectrum, linear
/// triangular filterbank, log (floored at 1e-10), orthonormal DCT-II keeping
/// `n_static` coefficients, then deltas and delta-deltas (60 dims by default).
/// No pre-emphasis or mean normalisation.
pub fn lfcc<T: Real>(w: &Waveform<T>, cfg: &LfccConfig) -> Result<FeatureMatrix<T>> {
    let fs = w.sample_rate();
    let (win, shift) = cfg.framing(fs);
    if win < 2 || shift == 0 {
        return Err(arg("LFCC window and shift must be positive"));
    }
    if cfg.n_fft < win {
        return Err(arg(format!("n_fft {} shorter than the {win}-sample window", cfg.n_fft)));
    }
    if cfg.n_filters == 0 || cfg.n_static == 0 || cfg.n_static > cfg.n_filters {
        return Err(arg("need 0 < n_static <= n_filters"));
    }
    let x = w.samples();
    if x.is_empty() {
        return Err(arg("empty signal"));
    }
    if x.len() < win {
        log::warn!("signal of {} samples is shorter than one LFCC frame; zero-padding", x.len());
    }
    let frames = cfg.frame_count(x.len(), fs);
    let window: Vec<T> = (0..win)
        .map(|n| T::lit(0.54 - 0.46 * (std::f64::consts::TAU * n as f64 / (win - 1) as f64).cos()))
        .collect();
    let bank: Vec<Vec<T>> = filterbank(cfg.n_filters, cfg.n_fft, fs)
        .into_iter()
        .map(|f| f.into_iter().map(T::lit).collect())
        .collect();
    let dct = Dct::<T>::new(cfg.n_filters, cfg.n_static);
    let fft = FftPlanner::<T>::new().plan_fft_forward(cfg.n_fft);
    let floor = T::lit(LOG_FLOOR);

    let bins = cfg.n_fft / 2 + 1;
    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.n_fft];
    let mut power = vec![T::zero(); bins];
    let mut energies = vec![T::zero(); cfg.n_filters];
    let mut values = vec![T::zero(); frames * cfg.n_static];
    for t in 0..frames {
        let start = t * shift;
        for (i, b) in buf.iter_mut().enumerate() {
            let v = if i < win { x.get(start + i).copied().unwrap_or(T::zero()) * window[i] } else { T::zero() };
            *b = Complex::new(v, T::zero());
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for (e, f) in energies.iter_mut().zip(&bank) {
            let s: T = f.iter().zip(&power).map(|(&a, &b)| a * b).sum();
            *e = s.max(floor).ln();
        }
        dct.forward(&energies, &mut values[t * cfg.n_static..(t + 1) * cfg.n_static]);
    }
    let statics = FeatureMatrix::new(values, frames, cfg.n_static, shift as f64 / fs as f64)?;
    Ok(append_deltas(&statics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Waveform<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16000).unwrap()
    }

    #[test]
    fn one_second_gives_99_frames() {
        let f = lfcc(&noise(16000, 1), &LfccConfig::default()).unwrap();
        assert_eq!(f.frames(), (16000 - 320) / 160 + 1);
        assert_eq!(f.frames(), 99);
        assert_eq!(f.dims(), 60);
        assert!((f.frame_shift() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_frames_identical() {
        let z = Waveform::new(vec![0.0f64; 4000], 16000).unwrap();
        let f = lfcc(&z, &LfccConfig::default()).unwrap();
        for t in 1..f.frames() {
            assert_eq!(f.row(t), f.row(0));
        }
    }

    #[test]
    fn short_signal_is_one_frame() {
        let f = lfcc(&noise(100, 2), &LfccConfig::default()).unwrap();
        assert_eq!(f.frames(), 1);
        assert_eq!(f.dims(), 60);
    }

    #[test]
    fn filters_are_half_overlapping_triangles() {
        let bank = filterbank(20, 512, 16000);
        assert_eq!(bank.len(), 20);
        assert_eq!(bank[0].len(), 257);
        // interior bins are covered by exactly two filters summing to one
        for j in 1..256 {
            let s: f64 = bank.iter().map(|f| f[j]).sum();
            let f = j as f64 * 16000.0 / 512.0;
            if f > 8000.0 / 21.0 && f < 8000.0 * 20.0 / 21.0 {
                assert!((s - 1.0).abs() < 1e-12, "bin {j}: {s}");
            }
            assert!(bank.iter().filter(|f| f[j] > 0.0).count() <= 2);
        }
    }

    #[test]
    fn gain_only_moves_c0() {
        let w = noise(8000, 3);
        let a = lfcc(&w, &LfccConfig::default()).unwrap();
        let b = lfcc(&w.scaled(0.25), &LfccConfig::default()).unwrap();
        let shift = 2.0 * 0.25f64.ln() * (20f64).sqrt();
        for t in 0..a.frames() {
            assert!((b.row(t)[0] - a.row(t)[0] - shift).abs() < 1e-6);
            for d in 1..20 {
                assert!((a.row(t)[d] - b.row(t)[d]).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn frame_count_matches_formula(n in 320usize..20000) {
            let f = lfcc(&noise(n, n as u64), &LfccConfig::default()).unwrap();
            prop_assert_eq!(f.frames(), (n - 320) / 160 + 1);
            prop_assert_eq!(f.dims(), 60);
        }
    }
}
