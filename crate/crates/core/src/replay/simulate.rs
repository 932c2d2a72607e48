use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AttackLabel, Key, Partition, TrialManifest, TrialRecord};
use crate::device::{
    apply_device, classify_device, measure_device, synthesize_device, DeviceMeasurement, DeviceModel,
};
use crate::error::{arg, Error, Result};
use crate::room::{
    measure_t60, place_attacker, sample_environment, simulate_rir, EnvironmentLabel, Level, Pattern,
    RoomInstance,
};
use crate::scalar::Real;
use crate::signal::{convolve, read_wav, resample, write_wav, ImpulseResponse, Waveform};

/// Delivery rate of every simulated trial.
pub const OUTPUT_RATE: u32 = 16_000;
/// Default simulation rate.
pub const DEFAULT_WORK_RATE: u32 = 96_000;
/// Peak level (−1 dBFS) applied when the delivered signal would clip.
const CLIP_PEAK: f64 = 0.891_250_938_133_745_5;
/// Peak level of the attacker's recording as it drives the device.
const DEVICE_DRIVE_PEAK: f64 = 1.0;
const DISTANCE_TOLERANCE: f64 = 1e-9;

fn rms<T: Real>(x: &[T]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / x.len() as f64).sqrt()
}

fn scale_to_peak<T: Real>(w: &Waveform<T>, peak: f64) -> Waveform<T> {
    let p = w.peak().as_f64();
    if p > 0.0 {
        w.scaled(T::lit(peak / p))
    } else {
        w.clone()
    }
}

/// Resamples to the delivery rate and pulls the peak to −1 dBFS if it
/// would clip.
fn deliver<T: Real>(w: &Waveform<T>) -> Result<Waveform<T>> {
    let out = resample(w, OUTPUT_RATE)?;
    if out.peak().as_f64() > 1.0 {
        Ok(scale_to_peak(&out, CLIP_PEAK))
    } else {
        Ok(out)
    }
}

fn check_rate<T: Real>(w: &Waveform<T>, fs_work: u32) -> Result<()> {
    if w.sample_rate() != fs_work {
        return Err(arg(format!(
            "source at {} Hz, working rate {fs_work} Hz",
            w.sample_rate()
        )));
    }
    Ok(())
}

fn talker_rir<T: Real>(room: &RoomInstance, fs: u32) -> Result<ImpulseResponse<T>> {
    let facing = room
        .mic
        .direction_to(room.talker)
        .ok_or_else(|| arg("talker coincides with the microphone"))?;
    simulate_rir(room, room.talker, room.mic, Pattern::Cardioid, facing, fs)
}

/// Bona fide presentation: talker → microphone (cardioid facing the talker),
/// then delivery at 16 kHz.
pub fn simulate_bonafide<T: Real>(w: &Waveform<T>, room: &RoomInstance, fs_work: u32) -> Result<Waveform<T>> {
    bonafide_chain(w, room, fs_work).map(|(out, _)| out)
}

/// Output plus the RIR that reached the microphone.
fn bonafide_chain<T: Real>(
    w: &Waveform<T>,
    room: &RoomInstance,
    fs_work: u32,
) -> Result<(Waveform<T>, ImpulseResponse<T>)> {
    check_rate(w, fs_work)?;
    let rir = talker_rir(room, fs_work)?;
    Ok((deliver(&convolve(w, &rir)?)?, rir))
}

/// Replay presentation. The talker is recorded at the attacker position
/// (omnidirectional), the recording is normalised to full scale and played
/// through `device`, the device output is brought back to the source RMS and
/// presented from the replay loudspeaker position to the microphone (cardioid
/// facing the loudspeaker), then delivered at 16 kHz.
pub fn simulate_replay<T: Real>(
    w: &Waveform<T>,
    room: &RoomInstance,
    attack: AttackLabel,
    device: &DeviceModel,
    fs_work: u32,
) -> Result<Waveform<T>> {
    replay_chain(w, room, attack, device, fs_work).map(|(out, _)| out)
}

fn replay_chain<T: Real>(
    w: &Waveform<T>,
    room: &RoomInstance,
    attack: AttackLabel,
    device: &DeviceModel,
    fs_work: u32,
) -> Result<(Waveform<T>, ImpulseResponse<T>)> {
    check_rate(w, fs_work)?;
    let class = match device.quality() {
        Some(q) => q,
        None => classify_device(&measure_device(device)?),
    };
    if class != attack.device_class() {
        return Err(arg(format!(
            "attack {attack} needs a {} device, got {class}",
            attack.device_class()
        )));
    }
    let (attacker, loudspeaker) = match (room.attacker, room.replay_source) {
        (Some(a), Some(l)) => (a, l),
        _ => return Err(arg("room has no attacker position")),
    };
    let (lo, hi) = attack.distance.attacker_distance();
    let da = room.talker.distance(attacker);
    if da < lo - DISTANCE_TOLERANCE || da > hi + DISTANCE_TOLERANCE {
        return Err(arg(format!(
            "attacker at {da:.3} m is outside zone {} ({lo}-{hi} m)",
            attack.distance.upper()
        )));
    }
    let device = if device.sample_rate() == fs_work {
        device.clone()
    } else {
        device.resampled(fs_work)?
    };

    let to_attacker: ImpulseResponse<T> =
        simulate_rir(room, room.talker, attacker, Pattern::Omnidirectional, [1.0, 0.0, 0.0], fs_work)?;
    let recording = scale_to_peak(&convolve(w, &to_attacker)?, DEVICE_DRIVE_PEAK);
    let played = apply_device(&recording, &device)?;
    let (src, out) = (rms(w.samples()), rms(played.samples()));
    let played = if out > 0.0 { played.scaled(T::lit(src / out)) } else { played };

    let facing = room
        .mic
        .direction_to(loudspeaker)
        .ok_or_else(|| arg("replay loudspeaker coincides with the microphone"))?;
    let to_mic: ImpulseResponse<T> =
        simulate_rir(room, loudspeaker, room.mic, Pattern::Cardioid, facing, fs_work)?;
    Ok((deliver(&convolve(&played, &to_mic)?)?, to_mic))
}

/// Grid execution settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Simulation sample rate; sources are resampled to it.
    pub fs_work: u32,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            fs_work: DEFAULT_WORK_RATE,
        }
    }
}

/// Per (environment, attack) cell summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub env: String,
    pub attack: String,
    pub count: usize,
    pub t60_target_mean: Option<f64>,
    /// Schroeder T60 of the RIR reaching the microphone.
    pub t60_measured_mean: Option<f64>,
    pub device_ob_hz_mean: Option<f64>,
    pub device_minf_hz_mean: Option<f64>,
    /// Mean over devices with finite LNLR.
    pub device_lnlr_db_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub trial: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub partition: Partition,
    pub master_seed: u64,
    pub fs_work: u32,
    pub records: usize,
    pub written: usize,
    /// Utterances with no WAV under the corpus directory.
    pub missing: Vec<String>,
    pub failed: Vec<RecordFailure>,
    pub conditions: Vec<ConditionStats>,
}

impl RunReport {
    pub fn is_success(&self) -> bool {
        self.missing.is_empty() && self.failed.is_empty()
    }

    /// Number of (environment, attack) cells holding spoof trials.
    pub fn spoof_condition_count(&self) -> usize {
        self.conditions.iter().filter(|c| c.attack != "-").count()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Default)]
struct RecordStats {
    t60_target: Option<f64>,
    t60_measured: Option<f64>,
    device: Option<DeviceMeasurement>,
}

enum Outcome {
    Written(RecordStats),
    Missing,
    Failed(String),
}

fn source_path(corpus_dir: &Path, utt_id: &str) -> PathBuf {
    corpus_dir.join(format!("{utt_id}.wav"))
}

fn room_for(record: &TrialRecord, env: EnvironmentLabel, master_seed: u64) -> Result<RoomInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(record.room_seed(master_seed));
    sample_environment(env, Some(Level::C), &mut rng)
}

fn simulate_record(
    record: &TrialRecord,
    source: &Waveform<f64>,
    master_seed: u64,
    fs_work: u32,
) -> Result<(Waveform<f64>, RecordStats)> {
    let Some(env) = record.env else {
        return Ok((resample(source, OUTPUT_RATE)?, RecordStats::default()));
    };
    let work = resample(source, fs_work)?;
    let room = room_for(record, env, master_seed)?;
    let mut stats = RecordStats {
        t60_target: Some(room.t60_target),
        ..Default::default()
    };
    match record.attack {
        None => {
            let (out, rir) = bonafide_chain(&work, &room, fs_work)?;
            stats.t60_measured = measure_t60(&rir).ok();
            Ok((out, stats))
        }
        Some(attack) => {
            let mut rng = ChaCha8Rng::seed_from_u64(record.seed);
            let room = place_attacker(&room, attack.distance, &mut rng)?;
            let device = synthesize_device(attack.device_class(), &mut rng)?;
            stats.device = Some(measure_device(&device)?);
            let (out, rir) = replay_chain(&work, &room, attack, &device, fs_work)?;
            stats.t60_measured = measure_t60(&rir).ok();
            Ok((out, stats))
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.filter(|v| v.is_finite()) {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Simulates every record of `manifest` from `<corpus_dir>/<utt_id>.wav`
/// into `<out_dir>/<trial_id>.wav` (16-bit, 16 kHz). Records run in parallel
/// on the current rayon pool; outputs depend only on the corpus, manifest and
/// master seed. Missing sources and per-record failures are reported, not
/// raised.
pub fn run_grid(
    corpus_dir: &Path,
    manifest: &TrialManifest,
    out_dir: &Path,
    master_seed: u64,
    options: GridOptions,
) -> Result<RunReport> {
    if options.fs_work == 0 {
        return Err(arg("working sample rate must be positive"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let partition = manifest.partition;
    let outcomes: Vec<Outcome> = manifest
        .records
        .par_iter()
        .map(|record| {
            let path = source_path(corpus_dir, &record.utt_id);
            if !path.is_file() {
                return Outcome::Missing;
            }
            let id = record.trial_id(partition);
            let result = read_wav(&path).and_then(|src| {
                let (out, stats) = simulate_record(record, &src, master_seed, options.fs_work)?;
                write_wav(&out_dir.join(format!("{id}.wav")), &out)?;
                Ok(stats)
            });
            match result {
                Ok(stats) => {
                    log::debug!("wrote {id}");
                    Outcome::Written(stats)
                }
                Err(e) => {
                    log::warn!("trial {id} failed: {e}");
                    Outcome::Failed(e.to_string())
                }
            }
        })
        .collect();

    let mut missing = Vec::new();
    let mut failed = Vec::new();
    let mut cells: BTreeMap<(String, String), Vec<RecordStats>> = BTreeMap::new();
    for (record, outcome) in manifest.records.iter().zip(outcomes) {
        match outcome {
            Outcome::Missing => missing.push(record.utt_id.clone()),
            Outcome::Failed(error) => failed.push(RecordFailure {
                trial: record.trial_id(partition),
                error,
            }),
            Outcome::Written(stats) => {
                let env = record.env.map_or_else(|| "-".into(), |e| e.to_string());
                let attack = record.attack.map_or_else(|| "-".into(), |a| a.to_string());
                debug_assert_eq!(record.key == Key::Spoof, attack != "-");
                cells.entry((env, attack)).or_default().push(stats);
            }
        }
    }
    missing.sort();
    missing.dedup();
    let written = cells.values().map(Vec::len).sum();
    let conditions = cells
        .into_iter()
        .map(|((env, attack), s)| ConditionStats {
            env,
            attack,
            count: s.len(),
            t60_target_mean: mean(s.iter().filter_map(|r| r.t60_target)),
            t60_measured_mean: mean(s.iter().filter_map(|r| r.t60_measured)),
            device_ob_hz_mean: mean(s.iter().filter_map(|r| r.device.map(|d| d.ob))),
            device_minf_hz_mean: mean(s.iter().filter_map(|r| r.device.map(|d| d.minf))),
            device_lnlr_db_mean: mean(s.iter().filter_map(|r| r.device.map(|d| d.lnlr))),
        })
        .collect();
    Ok(RunReport {
        partition,
        master_seed,
        fs_work: options.fs_work,
        records: manifest.records.len(),
        written,
        missing,
        failed,
        conditions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::{generate_protocol, synth_corpus};
    use crate::room::{Point, Level};
    use crate::signal::band_power;

    fn anechoic_room() -> RoomInstance {
        RoomInstance {
            label: EnvironmentLabel::new(Level::B, Level::A, Level::B),
            length_x: 4.0,
            width_y: 3.0,
            height_z: 2.7,
            t60_target: 0.1,
            absorption: 1.0,
            mic: Point::new(1.0, 1.5, 1.1),
            talker: Point::new(1.8, 1.5, 1.1),
            attacker: Some(Point::new(2.1, 1.5, 1.1)),
            replay_source: Some(Point::new(1.8, 1.5, 1.1)),
            attack_zone: Some(Level::A),
        }
    }

    fn tone(fs: u32, secs: f64) -> Waveform<f64> {
        let n = (fs as f64 * secs) as usize;
        Waveform::new(
            (0..n)
                .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / fs as f64).sin())
                .collect(),
            fs,
        )
        .unwrap()
    }

    fn argmax(x: &[f64]) -> usize {
        (0..x.len()).max_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs())).unwrap()
    }

    #[test]
    fn anechoic_bonafide_is_a_delayed_copy() {
        let room = anechoic_room();
        let mut x = vec![0.0; 1600];
        x[100] = 1.0;
        let w = Waveform::new(x, 16000).unwrap();
        let y = simulate_bonafide(&w, &room, 16000).unwrap();
        let d = 0.8;
        let delay = (d / crate::room::SPEED_OF_SOUND * 16000.0).round() as usize;
        assert_eq!(argmax(y.samples()), 100 + delay);
        let amp = y.samples()[100 + delay];
        assert!((amp - 1.0 / (4.0 * std::f64::consts::PI * d)).abs() < 0.02, "{amp}");
    }

    #[test]
    fn bonafide_length_arithmetic() {
        let room = anechoic_room();
        let w = tone(48000, 0.5);
        let rir: ImpulseResponse<f64> = talker_rir(&room, 48000).unwrap();
        let y = simulate_bonafide(&w, &room, 48000).unwrap();
        let full = w.len() + rir.len() - 1;
        assert_eq!(y.len(), (full as u64 * 16000).div_ceil(48000) as usize);
        assert_eq!(y.sample_rate(), 16000);
    }

    #[test]
    fn perfect_replay_in_anechoic_room_is_two_delays() {
        let room = anechoic_room();
        let mut x = vec![0.0; 1600];
        x[100] = 0.5;
        let w = Waveform::new(x, 16000).unwrap();
        let dev = DeviceModel::perfect(16000).unwrap();
        let y = simulate_replay(&w, &room, "AA".parse().unwrap(), &dev, 16000).unwrap();
        // talker→attacker 0.3 m then loudspeaker→mic 0.8 m
        let delay = ((0.3 + 0.8) / crate::room::SPEED_OF_SOUND * 16000.0).round() as usize;
        let peak = argmax(y.samples());
        assert!((peak as i64 - (100 + delay) as i64).abs() <= 1, "{peak} vs {}", 100 + delay);
        let energy: f64 = y.samples().iter().map(|v| v * v).sum();
        let near: f64 = y.samples()[peak - 85..peak + 85].iter().map(|v| v * v).sum();
        assert!(near > 0.99 * energy, "{}", near / energy);
    }

    #[test]
    fn replay_rejects_mismatched_device_and_zone() {
        let room = anechoic_room();
        let w = tone(16000, 0.1);
        let dev = DeviceModel::perfect(16000).unwrap();
        assert!(simulate_replay(&w, &room, "AC".parse().unwrap(), &dev, 16000).is_err());
        assert!(simulate_replay(&w, &room, "CA".parse().unwrap(), &dev, 16000).is_err());
        assert!(simulate_replay(&w, &room, "AA".parse().unwrap(), &dev, 8000).is_err());
    }

    #[test]
    fn low_device_replay_loses_energy_below_its_band() {
        let env: EnvironmentLabel = "bab".parse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let room = sample_environment(env, Some(Level::A), &mut rng).unwrap();
        let fs = 16000;
        let mut nrng = ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<f64> = (0..fs as usize)
            .map(|_| rand::Rng::gen_range(&mut nrng, -0.5..0.5))
            .collect();
        let w = Waveform::new(noise, fs).unwrap();
        let perfect = DeviceModel::perfect(fs).unwrap();
        let low = synthesize_device(crate::device::QualityClass::Low, &mut rng).unwrap();
        let (_, minf) = crate::device::measure_ob_minf(low.linear()).unwrap();
        let aa = simulate_replay(&w, &room, "AA".parse().unwrap(), &perfect, fs).unwrap();
        let ac = simulate_replay(&w, &room, "AC".parse().unwrap(), &low, fs).unwrap();
        let below = |y: &Waveform<f64>| {
            band_power(y.samples(), fs, 30.0, 0.5 * minf) / band_power(y.samples(), fs, 0.0, 8000.0)
        };
        assert!(below(&ac) < 0.1 * below(&aa), "{} vs {}", below(&ac), below(&aa));
    }

    #[test]
    fn replay_tail_outlasts_bonafide() {
        let env: EnvironmentLabel = "bbb".parse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let room = sample_environment(env, Some(Level::B), &mut rng).unwrap();
        let mut x = vec![0.0; 800];
        x[0] = 0.9;
        let w = Waveform::new(x, 16000).unwrap();
        let dev = DeviceModel::perfect(16000).unwrap();
        let bona = simulate_bonafide(&w, &room, 16000).unwrap();
        let spoof = simulate_replay(&w, &room, "BA".parse().unwrap(), &dev, 16000).unwrap();
        assert!(spoof.len() > bona.len());
        let late = |y: &Waveform<f64>| {
            let e: Vec<f64> = y.samples().iter().map(|v| v * v).collect();
            let total: f64 = e.iter().sum();
            let mut acc = 0.0;
            e.iter().position(|v| {
                acc += v;
                acc >= 0.99 * total
            })
        };
        assert!(late(&spoof).unwrap() > late(&bona).unwrap());
    }

    #[test]
    fn grid_is_deterministic_and_reports_cells() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        synth_corpus(&corpus, &["s1".to_string()], 2, 16000, 1).unwrap();
        let envs = ["aaa".parse().unwrap(), "aba".parse().unwrap()];
        let attacks = ["AA".parse().unwrap(), "CC".parse().unwrap()];
        let mut m = generate_protocol(&["s1".to_string()], 2, Partition::Train, &envs, &attacks, 3).unwrap();
        m.records.push(TrialRecord::new("s1", "s1_009", Some(envs[0]), None, 3).unwrap());
        let opts = GridOptions { fs_work: 16000 };
        let out1 = dir.path().join("o1");
        let out2 = dir.path().join("o2");
        let r1 = run_grid(&corpus, &m, &out1, 3, opts).unwrap();
        let r2 = run_grid(&corpus, &m, &out2, 3, opts).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.missing, ["s1_009"]);
        assert!(r1.failed.is_empty(), "{:?}", r1.failed);
        assert_eq!(r1.written, 12);
        assert_eq!(r1.conditions.len(), 6);
        assert_eq!(r1.spoof_condition_count(), 4);
        for r in &m.records[..12] {
            let name = format!("{}.wav", r.trial_id(Partition::Train));
            let a = std::fs::read(out1.join(&name)).unwrap();
            let b = std::fs::read(out2.join(&name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
        let cc = r1.conditions.iter().find(|c| c.attack == "CC").unwrap();
        assert!(cc.device_lnlr_db_mean.unwrap() < 100.0);
        let aa = r1.conditions.iter().find(|c| c.attack == "AA").unwrap();
        assert!(aa.device_lnlr_db_mean.is_none());
    }

    #[test]
    fn empty_manifest_gives_empty_report() {
        let dir = tempfile::tempdir().unwrap();
        let m = TrialManifest {
            partition: Partition::Eval,
            records: vec![],
        };
        let r = run_grid(dir.path(), &m, &dir.path().join("out"), 0, GridOptions::default()).unwrap();
        assert!(r.is_success());
        assert_eq!(r.records, 0);
        assert!(r.conditions.is_empty());
    }
}
