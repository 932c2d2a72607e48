//! Replay loudspeakers as polynomial Hammerstein systems.
//!
//! A device maps `x` to `Σ_{n=1..5} xⁿ * Gₙ`. `G1` is the linear response
//! (a band-pass), `G2..G5` shape the harmonic distortion. Devices are
//! characterised by the occupied bandwidth (OB) and lower band edge (minF) of
//! `G1` and by the linear-to-nonlinear power ratio (LNLR).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{arg, Error, Result};
use crate::scalar::Real;
use crate::signal::{band_power, convolve_slices, ImpulseResponse, Waveform};

/// Hammerstein orders modelled.
pub const ORDERS: usize = 5;
/// Rate at which synthetic devices are designed; high-quality passbands
/// reach 17 kHz.
pub const DESIGN_RATE: u32 = 48_000;
const LINEAR_TAPS: usize = 1025;
const NONLINEAR_TAPS_16K: usize = 128;
const SYNTHESIS_ATTEMPTS: usize = 100;
const SWEEP_SECS: f64 = 0.5;
const MIN_SPECTRUM_POINTS: usize = 8192;

const OB_BOUND_HZ: f64 = 10_000.0;
const MINF_BOUND_HZ: f64 = 600.0;
const LNLR_BOUND_DB: f64 = 100.0;

/// Replay device quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityClass {
    Perfect,
    High,
    Low,
    /// Measurement satisfies neither the high nor the low bounds.
    Indeterminate,
}

impl QualityClass {
    /// Occupied-bandwidth bound in Hz (`> bound` for high, `< bound` for low).
    pub fn ob_bound(self) -> Option<f64> {
        matches!(self, Self::High | Self::Low).then_some(OB_BOUND_HZ)
    }

    pub fn minf_bound(self) -> Option<f64> {
        matches!(self, Self::High | Self::Low).then_some(MINF_BOUND_HZ)
    }

    pub fn lnlr_bound(self) -> Option<f64> {
        matches!(self, Self::High | Self::Low).then_some(LNLR_BOUND_DB)
    }

    fn as_str(self) -> &'static str {
        match self {
            Self::Perfect => "perfect",
            Self::High => "high",
            Self::Low => "low",
            Self::Indeterminate => "indeterminate",
        }
    }
}

impl fmt::Display for QualityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "perfect" => Ok(Self::Perfect),
            "high" => Ok(Self::High),
            "low" => Ok(Self::Low),
            "indeterminate" => Ok(Self::Indeterminate),
            _ => Err(arg(format!("unknown quality class '{s}'"))),
        }
    }
}

/// OB, minF (Hz) and LNLR (dB) of a device. Infinite values mark the
/// Perfect device (OB, LNLR) and linear devices (LNLR).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceMeasurement {
    #[serde(rename = "ob_hz", with = "maybe_inf")]
    pub ob: f64,
    #[serde(rename = "minf_hz")]
    pub minf: f64,
    #[serde(rename = "lnlr_db", with = "maybe_inf")]
    pub lnlr: f64,
}

/// Measurement plus its class, as written to report files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceReport {
    #[serde(flatten)]
    pub measurement: DeviceMeasurement,
    pub class: QualityClass,
}

impl DeviceReport {
    pub fn new(measurement: DeviceMeasurement) -> Self {
        Self {
            measurement,
            class: classify_device(&measurement),
        }
    }
}

/// JSON has no infinity; `+∞` is written as the string `"inf"`.
mod maybe_inf {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if matches!(t.to_ascii_lowercase().as_str(), "inf" | "infinity" | "+inf") => {
                Ok(f64::INFINITY)
            }
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got '{t}'"))),
        }
    }
}

/// Five-branch Hammerstein device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DeviceFile", into = "DeviceFile")]
pub struct DeviceModel {
    name: String,
    sample_rate: u32,
    branches: Vec<ImpulseResponse<f64>>,
    quality: Option<QualityClass>,
}

#[derive(Serialize, Deserialize)]
struct DeviceFile {
    name: String,
    sample_rate: u32,
    branches: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quality: Option<QualityClass>,
}

impl TryFrom<DeviceFile> for DeviceModel {
    type Error = Error;

    fn try_from(f: DeviceFile) -> Result<Self> {
        if f.sample_rate == 0 {
            return Err(Error::Validation("device sample rate must be positive".into()));
        }
        let branches = f
            .branches
            .into_iter()
            .map(|taps| ImpulseResponse::from_taps(taps, f.sample_rate))
            .collect::<Result<Vec<_>>>()?;
        let mut d = DeviceModel::new(f.name, branches)?;
        d.quality = f.quality;
        Ok(d)
    }
}

impl From<DeviceModel> for DeviceFile {
    fn from(d: DeviceModel) -> Self {
        DeviceFile {
            name: d.name,
            sample_rate: d.sample_rate,
            branches: d.branches.into_iter().map(|b| b.taps().to_vec()).collect(),
            quality: d.quality,
        }
    }
}

impl DeviceModel {
    /// Builds a device from exactly five branches (H1..H5) at one rate.
    pub fn new(name: impl Into<String>, branches: Vec<ImpulseResponse<f64>>) -> Result<Self> {
        if branches.len() != ORDERS {
            return Err(Error::Validation(format!(
                "a device needs {ORDERS} branches, got {}",
                branches.len()
            )));
        }
        let sample_rate = branches[0].sample_rate();
        if branches.iter().any(|b| b.sample_rate() != sample_rate) {
            return Err(Error::Validation("device branches differ in sample rate".into()));
        }
        if branches.iter().any(|b| b.is_empty()) {
            return Err(Error::Validation("device branches must have at least one tap".into()));
        }
        if branches[0].is_zero() {
            return Err(Error::Validation("linear branch H1 has zero energy".into()));
        }
        Ok(Self {
            name: name.into(),
            sample_rate,
            branches,
            quality: None,
        })
    }

    /// The distinguished identity device.
    pub fn perfect(sample_rate: u32) -> Result<Self> {
        let mut branches = vec![ImpulseResponse::delta(sample_rate)?];
        for _ in 1..ORDERS {
            branches.push(ImpulseResponse::zero(1, sample_rate)?);
        }
        let mut d = Self::new("perfect", branches)?;
        d.quality = Some(QualityClass::Perfect);
        Ok(d)
    }

    /// True for the unit-delta H1 with all nonlinear branches zero.
    pub fn is_perfect(&self) -> bool {
        self.branches[0].taps() == [1.0] && self.branches[1..].iter().all(|b| b.is_zero())
    }

    pub fn is_linear(&self) -> bool {
        self.branches[1..].iter().all(|b| b.is_zero())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn branches(&self) -> &[ImpulseResponse<f64>] {
        &self.branches
    }

    pub fn linear(&self) -> &ImpulseResponse<f64> {
        &self.branches[0]
    }

    /// Class the device was synthesized for, if recorded.
    pub fn quality(&self) -> Option<QualityClass> {
        if self.is_perfect() {
            return Some(QualityClass::Perfect);
        }
        self.quality
    }

    pub fn with_quality(mut self, quality: Option<QualityClass>) -> Self {
        self.quality = quality;
        self
    }

    /// Same device at another rate. Perfect stays perfect.
    pub fn resampled(&self, target_rate: u32) -> Result<Self> {
        if self.is_perfect() {
            return Ok(Self::perfect(target_rate)?.with_name(self.name.clone()));
        }
        let branches = self
            .branches
            .iter()
            .map(|b| b.resampled(target_rate))
            .collect::<Result<Vec<_>>>()?;
        let mut d = Self::new(self.name.clone(), branches)?;
        d.quality = self.quality;
        Ok(d)
    }

    /// Copy with every nonlinear branch multiplied by `gain`.
    pub fn with_nonlinear_gain(&self, gain: f64) -> Self {
        let mut d = self.clone();
        for b in &mut d.branches[1..] {
            *b = b.scaled(gain);
        }
        d
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("device model: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Passes `w` through the device: `y = Σ_n xⁿ * Gₙ`, full-convolution length
/// of the longest branch. The Perfect device returns the input unchanged.
/// Inputs are expected in [-1, 1].
pub fn apply_device<T: Real>(w: &Waveform<T>, d: &DeviceModel) -> Result<Waveform<T>> {
    if w.sample_rate() != d.sample_rate() {
        return Err(arg(format!(
            "waveform at {} Hz, device at {} Hz",
            w.sample_rate(),
            d.sample_rate()
        )));
    }
    if d.is_perfect() {
        return Ok(w.clone());
    }
    let x = w.samples();
    if x.is_empty() {
        return Ok(w.clone());
    }
    let longest = d.branches.iter().map(|b| b.len()).max().unwrap_or(1);
    let mut y = vec![T::zero(); x.len() + longest - 1];
    let mut power: Vec<T> = x.to_vec();
    for (n, branch) in d.branches.iter().enumerate() {
        if n > 0 {
            for (p, &v) in power.iter_mut().zip(x) {
                *p *= v;
            }
        }
        if branch.is_zero() {
            continue;
        }
        let g: Vec<T> = branch.taps().iter().map(|&t| T::lit(t)).collect();
        for (acc, v) in y.iter_mut().zip(convolve_slices(&power, &g)) {
            *acc += v;
        }
    }
    Waveform::new(y, w.sample_rate())
}

/// Lower band edge and occupied bandwidth of `h1`: the 0.5 % and 99.5 %
/// crossings of its cumulative power spectrum (trapezoidal integration on at
/// least 8192 points, linear interpolation between bins). Returns
/// `(ob, minf)` in Hz.
pub fn measure_ob_minf(h1: &ImpulseResponse<f64>) -> Result<(f64, f64)> {
    if h1.is_zero() {
        return Err(arg("H1 has zero energy"));
    }
    let nfft = h1.len().max(MIN_SPECTRUM_POINTS).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..nfft)
        .map(|i| Complex::new(h1.taps().get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let p: Vec<f64> = buf[..=nfft / 2].iter().map(|c| c.norm_sqr()).collect();
    let df = h1.sample_rate() as f64 / nfft as f64;
    let mut cum = Vec::with_capacity(p.len());
    cum.push(0.0);
    for k in 1..p.len() {
        cum.push(cum[k - 1] + 0.5 * (p[k - 1] + p[k]) * df);
    }
    let total = *cum.last().unwrap();
    let crossing = |frac: f64| -> f64 {
        let target = frac * total;
        let k = cum.partition_point(|&c| c < target).clamp(1, cum.len() - 1);
        let (c0, c1) = (cum[k - 1], cum[k]);
        let t = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
        (k as f64 - 1.0 + t) * df
    };
    let minf = crossing(0.005);
    let maxf = crossing(0.995);
    Ok((maxf - minf, minf))
}

/// Full-scale exponential sweep from `f1` to `f2` Hz.
fn log_sweep(f1: f64, f2: f64, len: usize, fs: f64) -> Vec<f64> {
    let dur = len as f64 / fs;
    let f2 = f2.max(f1 * (1.0 + 1e-9));
    let l = (f2 / f1).ln();
    (0..len)
        .map(|i| {
            let t = i as f64 / fs;
            (2.0 * std::f64::consts::PI * f1 * dur / l * ((t * l / dur).exp() - 1.0)).sin()
        })
        .collect()
}

/// Linear-to-nonlinear power ratio in dB.
///
/// The device is driven with a 0.5 s full-scale exponential sweep across the
/// OB of H1. `P_linear` is the power of the H1 branch output and
/// `P_nonlinear` the power of the summed output of branches 2..5, both
/// counted only in the OB of H1. Linear devices give `+∞`.
pub fn measure_lnlr(d: &DeviceModel) -> Result<f64> {
    if d.is_linear() {
        return Ok(f64::INFINITY);
    }
    let (ob, minf) = measure_ob_minf(d.linear())?;
    let maxf = minf + ob;
    let fs = d.sample_rate() as f64;
    let len = (SWEEP_SECS * fs).round() as usize;
    let x = log_sweep(minf.max(1.0), maxf, len, fs);
    let lin = convolve_slices(&x, d.linear().taps());
    let longest = d.branches[1..].iter().map(|b| b.len()).max().unwrap_or(1);
    let mut nl = vec![0.0; len + longest - 1];
    let mut power = x.clone();
    for branch in &d.branches[1..] {
        for (p, &v) in power.iter_mut().zip(&x) {
            *p *= v;
        }
        if branch.is_zero() {
            continue;
        }
        for (acc, v) in nl.iter_mut().zip(convolve_slices(&power, branch.taps())) {
            *acc += v;
        }
    }
    let p_lin = band_power(&lin, d.sample_rate(), minf, maxf);
    let p_nl = band_power(&nl, d.sample_rate(), minf, maxf);
    if p_nl == 0.0 {
        return Ok(f64::INFINITY);
    }
    if p_lin == 0.0 {
        return Err(Error::Numerical("linear branch has no power in its own OB".into()));
    }
    Ok(10.0 * (p_lin / p_nl).log10())
}

/// OB, minF and LNLR. The Perfect device measures `(∞, 0, ∞)`.
pub fn measure_device(d: &DeviceModel) -> Result<DeviceMeasurement> {
    if d.is_perfect() {
        return Ok(DeviceMeasurement {
            ob: f64::INFINITY,
            minf: 0.0,
            lnlr: f64::INFINITY,
        });
    }
    let (ob, minf) = measure_ob_minf(d.linear())?;
    Ok(DeviceMeasurement {
        ob,
        minf,
        lnlr: measure_lnlr(d)?,
    })
}

/// Quality class from the bounds (all inequalities strict).
pub fn classify_device(m: &DeviceMeasurement) -> QualityClass {
    if m.lnlr == f64::INFINITY && m.minf == 0.0 {
        QualityClass::Perfect
    } else if m.ob > OB_BOUND_HZ && m.minf < MINF_BOUND_HZ && m.lnlr > LNLR_BOUND_DB {
        QualityClass::High
    } else if m.ob < OB_BOUND_HZ && m.minf > MINF_BOUND_HZ && m.lnlr < LNLR_BOUND_DB {
        QualityClass::Low
    } else {
        QualityClass::Indeterminate
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
    }
}

fn hamming(i: usize, len: usize) -> f64 {
    if len == 1 {
        return 1.0;
    }
    0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos()
}

/// Hamming-windowed sinc band-pass with unit passband gain.
fn band_pass(f1: f64, f2: f64, fs: f64, len: usize) -> Vec<f64> {
    let mid = (len - 1) as f64 / 2.0;
    let (c1, c2) = (2.0 * f1 / fs, 2.0 * f2 / fs);
    (0..len)
        .map(|i| {
            let m = i as f64 - mid;
            hamming(i, len) * (c2 * sinc(c2 * m) - c1 * sinc(c1 * m))
        })
        .collect()
}

/// Random low-pass-shaped branch: filtered noise under a decaying envelope.
fn nonlinear_branch<R: Rng + ?Sized>(len: usize, fs: f64, rng: &mut R) -> Vec<f64> {
    let cutoff = rng.gen_range(1000.0..4000.0);
    let klen = 129;
    let mid = (klen - 1) / 2;
    let c = 2.0 * cutoff / fs;
    let kernel: Vec<f64> = (0..klen)
        .map(|i| hamming(i, klen) * c * sinc(c * (i as f64 - mid as f64)))
        .collect();
    let noise: Vec<f64> = (0..len + klen - 1).map(|_| rng.sample(StandardNormal)).collect();
    let filtered = convolve_slices(&noise, &kernel);
    (0..len)
        .map(|i| filtered[i + klen - 1] * (-3.0 * i as f64 / len as f64).exp())
        .collect()
}

/// Draws a device of the requested class at [`DESIGN_RATE`].
///
/// H1 is a windowed-sinc band-pass with passband `[minF*, minF* + band]`
/// (high: minF* in [200, 600] Hz, band in [10, 17] kHz; low: minF* in
/// [600, 1500] Hz, band in [7.5, 10] kHz). H2..H5 are 8 ms low-pass noise
/// bursts scaled jointly so the LNLR hits a target drawn from [100, 145] dB
/// (high) or [30, 100] dB (low). Draws are repeated until the measurement
/// classifies back into the class.
pub fn synthesize_device<R: Rng + ?Sized>(class: QualityClass, rng: &mut R) -> Result<DeviceModel> {
    let (minf_range, band_range, lnlr_range) = match class {
        QualityClass::Perfect => return DeviceModel::perfect(DESIGN_RATE),
        QualityClass::High => ((200.0, 600.0), (10_000.0, 17_000.0), (100.0, 145.0)),
        QualityClass::Low => ((600.0, 1500.0), (7_500.0, 10_000.0), (30.0, 100.0)),
        QualityClass::Indeterminate => return Err(arg("cannot synthesize an indeterminate device")),
    };
    let fs = DESIGN_RATE as f64;
    let nl_len = NONLINEAR_TAPS_16K * DESIGN_RATE as usize / 16_000;
    for _ in 0..SYNTHESIS_ATTEMPTS {
        let f1 = rng.gen_range(minf_range.0..minf_range.1);
        let f2 = f1 + rng.gen_range(band_range.0..band_range.1);
        let target = rng.gen_range(lnlr_range.0..lnlr_range.1);
        let mut branches = vec![ImpulseResponse::new(band_pass(f1, f2, fs, LINEAR_TAPS), DESIGN_RATE)?];
        for n in 2..=ORDERS {
            let rel = rng.gen_range(0.5..1.0) * 0.5f64.powi(n as i32 - 2);
            let taps: Vec<f64> = nonlinear_branch(nl_len, fs, rng).into_iter().map(|t| t * rel).collect();
            branches.push(ImpulseResponse::new(taps, DESIGN_RATE)?);
        }
        let raw = DeviceModel::new(class.to_string(), branches)?;
        let lnlr = measure_lnlr(&raw)?;
        if !lnlr.is_finite() {
            continue;
        }
        let device = raw
            .with_nonlinear_gain(10f64.powf((lnlr - target) / 20.0))
            .with_quality(Some(class));
        if classify_device(&measure_device(&device)?) == class {
            return Ok(device);
        }
    }
    Err(Error::Synthesis(format!(
        "no {class} device met the class bounds in {SYNTHESIS_ATTEMPTS} attempts"
    )))
}
