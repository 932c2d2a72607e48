use std::sync::atomic::{AtomicBool, Ordering};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{append_deltas, CubicSpline, Dct, FeatureMatrix, LOG_FLOOR};
use crate::error::{arg, Result};
use crate::scalar::Real;
use crate::signal::{fast_fft_len, Waveform};

/// The highest bin advances by at most this fraction of its window per hop.
const HOP_DIVISOR: f64 = 8.0;

static PAD_WARNED: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CqccConfig {
    /// Highest analysed frequency; `None` means fs/2.
    pub f_max: Option<f64>,
    pub octaves: u32,
    pub bins_per_octave: u32,
    /// Static cepstra kept (including c0).
    pub n_static: usize,
}

impl Default for CqccConfig {
    fn default() -> Self {
        Self {
            f_max: None,
            octaves: 9,
            bins_per_octave: 96,
            n_static: 30,
        }
    }
}

/// Bin layout of a constant-Q transform at one sample rate.
#[derive(Debug, Clone)]
struct Plan {
    f_min: f64,
    f_max: f64,
    q: f64,
    freqs: Vec<f64>,
    hop: usize,
    longest: usize,
}

impl Plan {
    fn new(fs: u32, cfg: &CqccConfig) -> Result<Self> {
        let nyquist = fs as f64 / 2.0;
        let f_max = cfg.f_max.unwrap_or(nyquist);
        if !(f_max > 0.0 && f_max <= nyquist) {
            return Err(arg(format!("f_max {f_max} Hz outside (0, {nyquist}]")));
        }
        if cfg.octaves == 0 || cfg.bins_per_octave == 0 {
            return Err(arg("octaves and bins per octave must be positive"));
        }
        let bpo = cfg.bins_per_octave as f64;
        let n = (cfg.octaves * cfg.bins_per_octave) as usize;
        let f_min = f_max / 2f64.powi(cfg.octaves as i32);
        let q = 1.0 / (2f64.powf(1.0 / bpo) - 1.0);
        let freqs: Vec<f64> = (0..n).map(|k| f_min * 2f64.powf(k as f64 / bpo)).collect();
        let top_window = (q * fs as f64 / freqs[n - 1]).round();
        let hop = ((top_window / HOP_DIVISOR).floor() as usize).max(1);
        let longest = (q * fs as f64 / f_min).ceil() as usize;
        Ok(Self {
            f_min,
            f_max,
            q,
            freqs,
            hop,
            longest,
        })
    }
}

/// Complex CQT coefficients, bin-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CqtMatrix<T> {
    pub bins: usize,
    pub frames: usize,
    /// Hop in samples.
    pub hop: usize,
    pub f_min: f64,
    pub q: f64,
    pub data: Vec<Complex<T>>,
}

impl<T: Real> CqtMatrix<T> {
    pub fn coeff(&self, bin: usize, frame: usize) -> Complex<T> {
        self.data[bin * self.frames + frame]
    }

    /// Centre frequency of `bin`.
    pub fn frequency(&self, bin: usize) -> f64 {
        self.f_min * 2f64.powf(bin as f64 * (1.0 / self.q + 1.0).log2())
    }
}

/// Mirror extension without repeating the edge sample.
fn reflect_index(p: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let r = p.rem_euclid(period);
    if r < n as i64 {
        r as usize
    } else {
        (period - r) as usize
    }
}

/// Runs the transform, handing each bin's kept coefficients to `sink`.
/// Returns the number of frames.
///
/// Each bin is a Hann window in frequency centred on `f_k` with half-width
/// `f_k / Q`, applied to one FFT of the (reflection-padded) signal. The
/// windowed band is folded into an inverse FFT of `M = L / hop` points,
/// which samples the band-pass analytic signal every `hop` samples.
fn transform<T: Real>(
    x: &[T],
    fs: u32,
    plan: &Plan,
    mut sink: impl FnMut(usize, &[Complex<T>]),
) -> Result<usize> {
    let n = x.len();
    if n == 0 {
        return Err(arg("empty signal"));
    }
    if n < plan.longest && !PAD_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!(
            "signal of {n} samples is shorter than the longest CQT window ({} samples); reflection-padding",
            plan.longest
        );
    }
    let hop = plan.hop;
    let need = n.max(plan.longest);
    let m = fast_fft_len(need.div_ceil(hop));
    let l = m * hop;
    let left = (l - n) / 2;
    let mut spec: Vec<Complex<T>> = (0..l)
        .map(|i| Complex::new(x[reflect_index(i as i64 - left as i64, n)], T::zero()))
        .collect();
    let mut planner = FftPlanner::<T>::new();
    planner.plan_fft_forward(l).process(&mut spec);
    let inverse = planner.plan_fft_inverse(m);
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); inverse.get_inplace_scratch_len()];

    let first = left.div_ceil(hop);
    let last = (left + n).div_ceil(hop).max(first + 1).min(m);
    let df = fs as f64 / l as f64;
    let scale = T::lit(2.0 / l as f64);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); m];
    for (k, &fk) in plan.freqs.iter().enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex::new(T::zero(), T::zero()));
        let half = fk / plan.q;
        let j0 = ((fk - half) / df).ceil().max(0.0) as usize;
        let j1 = (((fk + half) / df).floor() as usize).min(l / 2);
        for j in j0..=j1 {
            let u = (j as f64 * df - fk) / half;
            let w = 0.5 * (1.0 + (std::f64::consts::PI * u).cos());
            buf[j % m] = buf[j % m] + spec[j] * T::lit(w);
        }
        inverse.process_with_scratch(&mut buf, &mut scratch);
        for c in &mut buf[first..last] {
            *c = *c * scale;
        }
        sink(k, &buf[first..last]);
    }
    Ok(last - first)
}

/// Constant-Q transform with `octaves × bins_per_octave` geometrically spaced
/// bins `f_k = f_min·2^(k/B)`, `f_min = f_max / 2^octaves`, constant
/// `Q = 1/(2^(1/B) − 1)`. The hop is 1/8 of the highest bin's window length
/// (34 samples at 16 kHz). Signals shorter than the longest window are
/// reflection-padded; only frames inside the original signal are returned.
pub fn cqt<T: Real>(w: &Waveform<T>, cfg: &CqccConfig) -> Result<CqtMatrix<T>> {
    let plan = Plan::new(w.sample_rate(), cfg)?;
    let bins = plan.freqs.len();
    let mut data = Vec::new();
    let frames = transform(w.samples(), w.sample_rate(), &plan, |_, c| data.extend_from_slice(c))?;
    debug_assert_eq!(data.len(), bins * frames);
    Ok(CqtMatrix {
        bins,
        frames,
        hop: plan.hop,
        f_min: plan.f_min,
        q: plan.q,
        data,
    })
}

/// CQCC: log CQT power (floored at 1e-10), natural cubic spline onto the
/// uniform grid `f_min + j·(f_max − f_min)/(L − 1)`, `L` = number of bins,
/// orthonormal DCT-II keeping `n_static` coefficients, then deltas and
/// delta-deltas (90 dims by default).
pub fn cqcc<T: Real>(w: &Waveform<T>, cfg: &CqccConfig) -> Result<FeatureMatrix<T>> {
    let plan = Plan::new(w.sample_rate(), cfg)?;
    let bins = plan.freqs.len();
    if cfg.n_static == 0 || cfg.n_static > bins {
        return Err(arg(format!("n_static must be in 1..={bins}")));
    }
    let grid: Vec<f64> = (0..bins)
        .map(|j| plan.f_min + j as f64 * (plan.f_max - plan.f_min) / (bins - 1) as f64)
        .collect();
    let spline = CubicSpline::<T>::new(&plan.freqs, &grid)?;
    let dct = Dct::<T>::new(bins, cfg.n_static);

    let mut log_power: Vec<Vec<T>> = Vec::with_capacity(bins);
    let floor = T::lit(LOG_FLOOR);
    let frames = transform(w.samples(), w.sample_rate(), &plan, |_, c| {
        log_power.push(c.iter().map(|v| v.norm_sqr().max(floor).ln()).collect());
    })?;

    let mut column = vec![T::zero(); bins];
    let mut uniform = vec![T::zero(); bins];
    let mut values = vec![T::zero(); frames * cfg.n_static];
    for t in 0..frames {
        for (k, c) in column.iter_mut().enumerate() {
            *c = log_power[k][t];
        }
        spline.apply(&column, &mut uniform);
        dct.forward(&uniform, &mut values[t * cfg.n_static..(t + 1) * cfg.n_static]);
    }
    let shift = plan.hop as f64 / w.sample_rate() as f64;
    let statics = FeatureMatrix::new(values, frames, cfg.n_static, shift)?;
    Ok(append_deltas(&statics))
}
