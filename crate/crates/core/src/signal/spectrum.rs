use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::Real;

/// One-sided power spectrum `|X(k)|²`, `k = 0..=nfft/2`, of `x` zero-padded
/// (or truncated) to `nfft` points.
pub fn power_spectrum<T: Real>(x: &[T], nfft: usize) -> Vec<T> {
    if nfft == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<T>> = (0..nfft)
        .map(|i| Complex::new(x.get(i).copied().unwrap_or_else(T::zero), T::zero()))
        .collect();
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    buf[..=nfft / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// Sum of `|X(k)|²` over one-sided bins whose frequency lies in `[lo, hi]` Hz.
pub fn band_power(x: &[f64], sample_rate: u32, lo: f64, hi: f64) -> f64 {
    let nfft = super::convolve::fast_fft_len(x.len().max(2));
    let df = sample_rate as f64 / nfft as f64;
    power_spectrum(x, nfft)
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = *k as f64 * df;
            f >= lo && f <= hi
        })
        .map(|(_, p)| p)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_dft() {
        let x: Vec<f64> = (0..37).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let n = 64;
        let p = power_spectrum(&x, n);
        assert_eq!(p.len(), 33);
        for (k, &pk) in p.iter().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let ph = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                re += v * ph.cos();
                im += v * ph.sin();
            }
            assert!((pk - (re * re + im * im)).abs() < 1e-9);
        }
    }

    #[test]
    fn band_power_isolates_tone() {
        let fs = 16000;
        let x: Vec<f64> = (0..16000)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / fs as f64).sin())
            .collect();
        let inside = band_power(&x, fs, 900.0, 1100.0);
        let outside = band_power(&x, fs, 1200.0, 8000.0);
        assert!(outside < 1e-12 * inside);
    }
}
