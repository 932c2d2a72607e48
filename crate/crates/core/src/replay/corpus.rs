//! Speech-like test material: glottal pulse trains through time-varying
//! formant resonators, interleaved with fricative noise and pauses.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::trial_seed;
use crate::error::{arg, Error, Result};
use crate::signal::{write_wav, Waveform};

/// (F1, F2, F3) in Hz.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
];
const BANDWIDTHS: [f64; 3] = [80.0, 110.0, 160.0];
const EDGE_SILENCE: f64 = 0.15;
const OUTPUT_PEAK: f64 = 0.5;

/// Speaker characteristics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voice {
    pub f0: f64,
    pub formant_scale: f64,
    pub breathiness: f64,
}

impl Voice {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            f0: rng.gen_range(90.0..240.0),
            formant_scale: rng.gen_range(0.85..1.15),
            breathiness: rng.gen_range(0.02..0.1),
        }
    }
}

#[derive(Clone, Copy)]
enum Segment {
    Vowel([f64; 3]),
    Fricative(f64),
    Pause,
}

struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, f: f64, bw: f64, fs: f64) -> f64 {
        let r = (-std::f64::consts::PI * bw / fs).exp();
        let a1 = 2.0 * r * (2.0 * std::f64::consts::PI * f / fs).cos();
        let a2 = -r * r;
        let y = (1.0 - r) * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// One utterance of 1.2–2.2 s (plus 0.15 s silence at each end), peak 0.5.
pub fn synth_utterance<R: Rng + ?Sized>(voice: &Voice, fs: u32, rng: &mut R) -> Result<Waveform<f64>> {
    if fs < 8000 {
        return Err(arg("synthetic speech needs at least 8 kHz"));
    }
    let fsf = fs as f64;
    let active = rng.gen_range(1.2..2.2);
    let mut plan = Vec::new();
    let mut t = 0.0;
    while t < active {
        let u: f64 = rng.gen();
        let (seg, dur) = if u < 0.7 {
            let v = VOWELS[rng.gen_range(0..VOWELS.len())];
            (Segment::Vowel(v.map(|f| f * voice.formant_scale)), rng.gen_range(0.12..0.25))
        } else if u < 0.9 {
            let centre = rng.gen_range(3500.0..6000.0f64).min(0.4 * fsf);
            (Segment::Fricative(centre), rng.gen_range(0.06..0.12))
        } else {
            (Segment::Pause, rng.gen_range(0.05..0.1))
        };
        plan.push((seg, (dur * fsf) as usize));
        t += dur;
    }

    let edge = (EDGE_SILENCE * fsf) as usize;
    let mut out = vec![0.0; edge];
    let mut formants = VOWELS[0].map(|f| f * voice.formant_scale);
    let mut res = [Resonator { y1: 0.0, y2: 0.0 }, Resonator { y1: 0.0, y2: 0.0 }, Resonator { y1: 0.0, y2: 0.0 }];
    let mut fric = Resonator { y1: 0.0, y2: 0.0 };
    let (mut phase, mut g1, mut g2, mut g_prev) = (0.0, 0.0, 0.0, 0.0);
    let contour_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let total = plan.iter().map(|p| p.1).sum::<usize>().max(1) as f64;
    let mut n = 0usize;
    for (seg, len) in plan {
        let start = formants;
        let ramp = (0.02 * fsf) as usize;
        for i in 0..len {
            let env = {
                let a = (i.min(len - 1 - i) as f64 / ramp as f64).min(1.0);
                0.5 - 0.5 * (std::f64::consts::PI * a).cos()
            };
            let tt = n as f64 / fsf;
            let sample = match seg {
                Segment::Vowel(target) => {
                    let k = (i as f64 / (0.3 * len as f64)).min(1.0);
                    for j in 0..3 {
                        formants[j] = start[j] + k * (target[j] - start[j]);
                    }
                    let jitter = 1.0 + 0.01 * rng.sample::<f64, _>(StandardNormal);
                    let f0 = voice.f0
                        * (1.0 + 0.12 * (std::f64::consts::TAU * 0.7 * tt + contour_phase).sin()
                            - 0.1 * n as f64 / total)
                        * jitter;
                    phase += f0 / fsf;
                    let pulse = if phase >= 1.0 {
                        phase -= 1.0;
                        1.0
                    } else {
                        0.0
                    };
                    // glottal tilt, aspiration, lip radiation
                    g1 = 0.97 * g1 + pulse;
                    g2 = 0.97 * g2 + g1;
                    let src = g2 * 0.05 + voice.breathiness * rng.sample::<f64, _>(StandardNormal);
                    let rad = src - g_prev;
                    g_prev = src;
                    let mut y = rad;
                    for (j, r) in res.iter_mut().enumerate() {
                        y = r.step(y, formants[j], BANDWIDTHS[j], fsf);
                    }
                    y
                }
                Segment::Fricative(centre) => {
                    let noise: f64 = rng.sample(StandardNormal);
                    0.3 * fric.step(noise, centre, 1500.0, fsf)
                }
                Segment::Pause => 0.0,
            };
            out.push(env * sample);
            n += 1;
        }
    }
    out.extend(std::iter::repeat(0.0).take(edge));
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::Numerical("synthetic utterance is silent".into()));
    }
    let floor = 1e-4;
    let samples = out
        .into_iter()
        .map(|v| v * OUTPUT_PEAK / peak + floor * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Waveform::new(samples, fs)
}

/// Writes `<dir>/<speaker>_<nnn>.wav` for every speaker and utterance
/// (1-based, matching protocol utterance ids) and returns the ids. Voices and
/// utterances are seeded from `seed` and the ids.
pub fn synth_corpus(
    dir: &Path,
    speakers: &[String],
    utts_per_speaker: usize,
    fs: u32,
    seed: u64,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::with_capacity(speakers.len() * utts_per_speaker);
    for spk in speakers {
        let voice = Voice::random(&mut ChaCha8Rng::seed_from_u64(trial_seed(seed, spk, None, None)));
        for i in 1..=utts_per_speaker {
            let id = format!("{spk}_{i:03}");
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, &id, None, None));
            let w = synth_utterance(&voice, fs, &mut rng)?;
            write_wav(&dir.join(format!("{id}.wav")), &w)?;
            ids.push(id);
        }
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::band_power;

    #[test]
    fn utterance_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let voice = Voice::random(&mut rng);
        let w = synth_utterance(&voice, 16000, &mut rng).unwrap();
        let secs = w.duration_secs();
        assert!((1.5..2.6).contains(&secs), "{secs}");
        assert!((w.peak() - 0.5).abs() < 1e-3);
        // speech-like spectral tilt: most energy below 4 kHz
        let low = band_power(w.samples(), 16000, 0.0, 4000.0);
        let all = band_power(w.samples(), 16000, 0.0, 8000.0);
        assert!(low > 0.6 * all);
        assert!(synth_utterance(&voice, 4000, &mut rng).is_err());
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spk = vec!["p1".to_string(), "p2".to_string()];
        let ids = synth_corpus(a.path(), &spk, 2, 16000, 9).unwrap();
        synth_corpus(b.path(), &spk, 2, 16000, 9).unwrap();
        assert_eq!(ids, ["p1_001", "p1_002", "p2_001", "p2_002"]);
        for id in ids {
            let x = std::fs::read(a.path().join(format!("{id}.wav"))).unwrap();
            let y = std::fs::read(b.path().join(format!("{id}.wav"))).unwrap();
            assert_eq!(x, y);
        }
    }
}
