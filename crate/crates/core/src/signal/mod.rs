//! Sampled audio and impulse responses: WAV I/O, resampling, convolution.

mod convolve;
mod resample;
mod spectrum;
mod wav;

pub use convolve::{convolve, convolve_slices};
pub use resample::{resample, Resampler};
pub(crate) use convolve::fast_fft_len;
pub use spectrum::{band_power, power_spectrum};
pub use wav::{read_wav, write_wav, PCM16_SCALE};

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::scalar::Real;

/// Mono sampled audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    samples: Vec<T>,
    sample_rate: u32,
}

impl<T: Real> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(arg("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(arg(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![T::zero(); len], sample_rate)
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> T {
        self.samples
            .iter()
            .fold(T::zero(), |acc, &s| acc.max(s.abs()))
    }

    pub fn energy(&self) -> T {
        self.samples.iter().map(|&s| s * s).sum()
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: T) -> Self {
        Self {
            samples: self.samples.iter().map(|&s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Converts the sample type.
    pub fn cast<U: Real>(&self) -> Waveform<U> {
        Waveform {
            samples: self.samples.iter().map(|&s| U::lit(s.as_f64())).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Finite impulse response at a fixed sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct ImpulseResponse<T> {
    sample_rate: u32,
    taps: Vec<T>,
}

impl<T: Real> ImpulseResponse<T> {
    /// Builds an IR. Taps must be finite, nonempty and carry nonzero energy;
    /// use [`ImpulseResponse::zero`] for the all-zero response.
    pub fn new(taps: Vec<T>, sample_rate: u32) -> Result<Self> {
        let ir = Self::unchecked(taps, sample_rate)?;
        if ir.energy() <= T::zero() {
            return Err(arg("impulse response has zero energy"));
        }
        Ok(ir)
    }

    /// The explicitly-constructed all-zero response of `len` taps.
    pub fn zero(len: usize, sample_rate: u32) -> Result<Self> {
        Self::unchecked(vec![T::zero(); len.max(1)], sample_rate)
    }

    /// Unit impulse.
    pub fn delta(sample_rate: u32) -> Result<Self> {
        Self::new(vec![T::one()], sample_rate)
    }

    /// Builds an IR that may be all zero (nonlinear device branches).
    pub fn from_taps(taps: Vec<T>, sample_rate: u32) -> Result<Self> {
        Self::unchecked(taps, sample_rate)
    }

    fn unchecked(taps: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(arg("sample rate must be positive"));
        }
        if taps.is_empty() {
            return Err(arg("impulse response must have at least one tap"));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(arg("impulse response has non-finite taps"));
        }
        Ok(Self { sample_rate, taps })
    }

    /// Validates a deserialized IR (zero energy allowed).
    pub fn validated(self) -> Result<Self> {
        Self::unchecked(self.taps, self.sample_rate)
    }

    pub fn taps(&self) -> &[T] {
        &self.taps
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn energy(&self) -> T {
        self.taps.iter().map(|&t| t * t).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.taps.iter().all(|t| t.is_zero())
    }

    pub fn scaled(&self, gain: T) -> Self {
        Self {
            sample_rate: self.sample_rate,
            taps: self.taps.iter().map(|&t| t * gain).collect(),
        }
    }

    /// Resamples the response to `target_rate`, preserving the continuous-time
    /// system it represents (taps are rescaled by the rate ratio).
    pub fn resampled(&self, target_rate: u32) -> Result<Self> {
        if target_rate == self.sample_rate {
            return Ok(self.clone());
        }
        if self.is_zero() {
            let len = (self.len() as u64 * target_rate as u64).div_ceil(self.sample_rate as u64);
            return Self::zero(len as usize, target_rate);
        }
        let w = Waveform::new(self.taps.clone(), self.sample_rate)?;
        let out = resample(&w, target_rate)?;
        let gain = T::lit(self.sample_rate as f64 / target_rate as f64);
        Self::unchecked(
            out.into_samples().into_iter().map(|t| t * gain).collect(),
            target_rate,
        )
    }

    pub fn as_waveform(&self) -> Waveform<T> {
        Waveform {
            samples: self.taps.clone(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn cast<U: Real>(&self) -> ImpulseResponse<U> {
        ImpulseResponse {
            sample_rate: self.sample_rate,
            taps: self.taps.iter().map(|&t| U::lit(t.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(Waveform::<f64>::new(vec![0.0], 0).is_err());
        assert!(Waveform::new(vec![0.0, f64::NAN], 16000).is_err());
        assert!(Waveform::new(vec![f32::INFINITY], 16000).is_err());
    }

    #[test]
    fn impulse_response_energy_contract() {
        assert!(ImpulseResponse::<f64>::new(vec![], 16000).is_err());
        assert!(ImpulseResponse::new(vec![0.0f64, 0.0], 16000).is_err());
        let z = ImpulseResponse::<f64>::zero(4, 16000).unwrap();
        assert!(z.is_zero());
        assert_eq!(z.len(), 4);
        let d = ImpulseResponse::<f64>::delta(16000).unwrap();
        assert_eq!(d.energy(), 1.0);
    }

    #[test]
    fn ir_json_shape() {
        let ir = ImpulseResponse::new(vec![0.5f64, -0.25], 16000).unwrap();
        let json = serde_json::to_value(&ir).unwrap();
        assert_eq!(json["sample_rate"], 16000);
        assert_eq!(json["taps"][1], -0.25);
    }
}
