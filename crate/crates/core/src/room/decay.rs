use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::signal::ImpulseResponse;

const FIT_START_DB: f64 = -5.0;
const FIT_END_DB: f64 = -25.0;

/// Schroeder backward-integrated energy decay curve in dB re total energy.
pub fn schroeder_curve_db<T: Real>(ir: &ImpulseResponse<T>) -> Vec<f64> {
    let mut acc = 0.0f64;
    let mut edc: Vec<f64> = ir
        .taps()
        .iter()
        .rev()
        .map(|&v| {
            let v = v.as_f64();
            acc += v * v;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter()
        .map(|&e| {
            if total > 0.0 && e > 0.0 {
                10.0 * (e / total).log10()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Reverberation time from the Schroeder curve: least-squares line between
/// the −5 dB and −25 dB crossings, extrapolated to 60 dB (3 × T20).
pub fn measure_t60<T: Real>(ir: &ImpulseResponse<T>) -> Result<f64> {
    let edc = schroeder_curve_db(ir);
    let start = edc.iter().position(|&v| v <= FIT_START_DB);
    let end = edc.iter().position(|&v| v <= FIT_END_DB);
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) if e > s + 1 && edc[e].is_finite() => (s, e),
        _ => {
            return Err(Error::InsufficientDecay(
                "energy decay curve does not span -5 dB to -25 dB".into(),
            ))
        }
    };
    let fs = ir.sample_rate() as f64;
    let n = (end - start + 1) as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in edc[start..=end].iter().enumerate() {
        let t = i as f64 / fs;
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    if !(slope < 0.0) {
        return Err(Error::InsufficientDecay(format!(
            "non-decaying energy curve (slope {slope} dB/s)"
        )));
    }
    let t20 = -20.0 / slope;
    Ok(3.0 * t20)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn exp_ir(t60: f64, fs: u32, noise: bool) -> ImpulseResponse<f64> {
        let n = (2.0 * t60 * fs as f64) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let taps = (0..n)
            .map(|i| {
                let t = i as f64 / fs as f64;
                let env = (-6.91 * t / t60).exp();
                if noise {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    env * g
                } else {
                    env
                }
            })
            .collect();
        ImpulseResponse::new(taps, fs).unwrap()
    }

    #[test]
    fn analytic_exponential_decay() {
        for t60 in [0.1, 0.3, 0.8] {
            let m = measure_t60(&exp_ir(t60, 16000, false)).unwrap();
            assert!((m / t60 - 1.0).abs() < 0.05, "{t60}: {m}");
        }
    }

    #[test]
    fn gated_noise_envelope() {
        for t60 in [0.2, 0.3, 0.9] {
            let m = measure_t60(&exp_ir(t60, 16000, true)).unwrap();
            assert!((m / t60 - 1.0).abs() < 0.05, "{t60}: {m}");
        }
    }

    #[test]
    fn short_decay_is_rejected() {
        let ir = ImpulseResponse::new(vec![1.0, 0.9, 0.8, 0.7], 16000).unwrap();
        assert!(matches!(measure_t60(&ir), Err(Error::InsufficientDecay(_))));
    }
}
