//! Replay-attack trials: attack taxonomy, protocol manifests, trial synthesis
//! and grid execution.

mod corpus;
mod simulate;

pub use corpus::{synth_corpus, synth_utterance, Voice};
pub use simulate::{
    run_grid, simulate_bonafide, simulate_replay, ConditionStats, GridOptions, RecordFailure,
    RunReport, DEFAULT_WORK_RATE, OUTPUT_RATE,
};

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::device::QualityClass;
use crate::error::{arg, Error, Result};
use crate::room::{EnvironmentLabel, Level};

/// Replay configuration: attacker-to-talker distance zone and device quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttackLabel {
    pub distance: Level,
    pub quality: Level,
}

impl AttackLabel {
    pub fn new(distance: Level, quality: Level) -> Self {
        Self { distance, quality }
    }

    /// All nine labels, `AA`, `AB`, … `CC`.
    pub fn all() -> Vec<AttackLabel> {
        Level::ALL
            .iter()
            .flat_map(|&d| Level::ALL.iter().map(move |&q| AttackLabel::new(d, q)))
            .collect()
    }

    /// Device class required by the quality category.
    pub fn device_class(self) -> QualityClass {
        match self.quality {
            Level::A => QualityClass::Perfect,
            Level::B => QualityClass::High,
            Level::C => QualityClass::Low,
        }
    }
}

impl fmt::Display for AttackLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.distance.upper(), self.quality.upper())
    }
}

impl FromStr for AttackLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let c: Vec<char> = s.chars().collect();
        let level = |ch: char| ch.is_ascii_uppercase().then(|| Level::from_char(ch)).flatten();
        match c.as_slice() {
            [d, q] => match (level(*d), level(*q)) {
                (Some(d), Some(q)) => Ok(Self::new(d, q)),
                _ => Err(arg(format!("invalid attack label '{s}'"))),
            },
            _ => Err(arg(format!("invalid attack label '{s}'"))),
        }
    }
}

impl Serialize for AttackLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AttackLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Key {
    Bonafide,
    Spoof,
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Key::Bonafide => "bonafide",
            Key::Spoof => "spoof",
        })
    }
}

impl FromStr for Key {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonafide" => Ok(Key::Bonafide),
            "spoof" => Ok(Key::Spoof),
            _ => Err(arg(format!("invalid key '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Dev,
    Eval,
}

impl Partition {
    /// Speakers per partition in the reference protocol.
    pub fn speaker_count(self) -> usize {
        match self {
            Partition::Train => 20,
            Partition::Dev => 10,
            Partition::Eval => 48,
        }
    }

    /// Speaker ids `T0001…`, `D0001…`, `E0001…` for the reference protocol.
    pub fn default_speakers(self) -> Vec<String> {
        let prefix = match self {
            Partition::Train => 'T',
            Partition::Dev => 'D',
            Partition::Eval => 'E',
        };
        (1..=self.speaker_count()).map(|i| format!("{prefix}{i:04}")).collect()
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Dev => "dev",
            Partition::Eval => "eval",
        })
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "dev" => Ok(Partition::Dev),
            "eval" => Ok(Partition::Eval),
            _ => Err(arg(format!("invalid partition '{s}'"))),
        }
    }
}

/// Seed of a trial: the first 8 bytes (little endian) of
/// SHA-256(`master|utt|env|attack`), with `-` for absent fields.
pub fn trial_seed(
    master_seed: u64,
    utt_id: &str,
    env: Option<EnvironmentLabel>,
    attack: Option<AttackLabel>,
) -> u64 {
    let env = env.map_or_else(|| "-".to_string(), |e| e.to_string());
    let attack = attack.map_or_else(|| "-".to_string(), |a| a.to_string());
    let digest = Sha256::digest(format!("{master_seed}|{utt_id}|{env}|{attack}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub speaker_id: String,
    pub utt_id: String,
    pub env: Option<EnvironmentLabel>,
    pub attack: Option<AttackLabel>,
    pub key: Key,
    pub seed: u64,
}

impl TrialRecord {
    pub fn new(
        speaker_id: impl Into<String>,
        utt_id: impl Into<String>,
        env: Option<EnvironmentLabel>,
        attack: Option<AttackLabel>,
        master_seed: u64,
    ) -> Result<Self> {
        let speaker_id = speaker_id.into();
        let utt_id = utt_id.into();
        for (what, s) in [("speaker id", &speaker_id), ("utterance id", &utt_id)] {
            if s.is_empty() || s == "-" || s.chars().any(char::is_whitespace) {
                return Err(arg(format!("invalid {what} '{s}'")));
            }
        }
        if attack.is_some() && env.is_none() {
            return Err(Error::Validation(format!(
                "spoof trial {utt_id} {} needs an environment",
                attack.unwrap()
            )));
        }
        let seed = trial_seed(master_seed, &utt_id, env, attack);
        Ok(Self {
            speaker_id,
            utt_id,
            env,
            attack,
            key: if attack.is_some() { Key::Spoof } else { Key::Bonafide },
            seed,
        })
    }

    /// Output stem `<partition>_<utt>_<env>_<attack>`, `-` for absent fields.
    pub fn trial_id(&self, partition: Partition) -> String {
        format!(
            "{partition}_{}_{}_{}",
            self.utt_id,
            self.env.map_or_else(|| "-".into(), |e| e.to_string()),
            self.attack.map_or_else(|| "-".into(), |a| a.to_string())
        )
    }

    /// Seed shared by every trial of this utterance in this environment; the
    /// room is drawn from it.
    pub fn room_seed(&self, master_seed: u64) -> u64 {
        trial_seed(master_seed, &self.utt_id, self.env, None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub partition: Partition,
    pub records: Vec<TrialRecord>,
}

impl TrialManifest {
    pub fn spoof_count(&self) -> usize {
        self.records.iter().filter(|r| r.key == Key::Spoof).count()
    }

    pub fn bonafide_count(&self) -> usize {
        self.records.len() - self.spoof_count()
    }

    /// Text form: an optional `# partition: <p>` header, then one
    /// `SPEAKER_ID UTT_ID ENV ATTACK KEY` line per record.
    pub fn to_text(&self) -> String {
        let mut out = format!("# partition: {}\n", self.partition);
        for r in &self.records {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                r.speaker_id,
                r.utt_id,
                r.env.map_or_else(|| "-".into(), |e| e.to_string()),
                r.attack.map_or_else(|| "-".into(), |a| a.to_string()),
                r.key
            ));
        }
        out
    }

    /// Parses the text form. `partition` is used when the text has no header
    /// (a header wins). Seeds are derived from `master_seed`.
    pub fn from_text(text: &str, partition: Option<Partition>, master_seed: u64) -> Result<Self> {
        let mut header = None;
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(p) = comment.trim().strip_prefix("partition:") {
                    header = Some(p.trim().parse::<Partition>()?);
                }
                continue;
            }
            let bad = |msg: String| Error::Format(format!("manifest line {}: {msg}", no + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields, got {}", f.len())));
            }
            let env = match f[2] {
                "-" => None,
                s => Some(s.parse::<EnvironmentLabel>().map_err(|e| bad(e.to_string()))?),
            };
            let attack = match f[3] {
                "-" => None,
                s => Some(s.parse::<AttackLabel>().map_err(|e| bad(e.to_string()))?),
            };
            let key: Key = f[4].parse().map_err(|e: Error| bad(e.to_string()))?;
            if (key == Key::Spoof) != attack.is_some() {
                return Err(bad("key must be spoof exactly when an attack is given".into()));
            }
            let rec = TrialRecord::new(f[0], f[1], env, attack, master_seed).map_err(|e| bad(e.to_string()))?;
            if !seen.insert((rec.utt_id.clone(), env, attack)) {
                return Err(Error::Validation(format!("duplicate trial on manifest line {}", no + 1)));
            }
            records.push(rec);
        }
        let partition = header
            .or(partition)
            .ok_or_else(|| arg("manifest has no partition header and none was given"))?;
        Ok(Self { partition, records })
    }

    pub fn load(path: &Path, partition: Option<Partition>, master_seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, partition, master_seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Builds a protocol. Utterance ids are `<speaker>_<nnn>` (1-based). Records
/// are ordered by environment, speaker, utterance, then attack, with each
/// bona fide record ahead of its spoofs.
pub fn generate_protocol(
    speakers: &[String],
    utts_per_speaker: usize,
    partition: Partition,
    envs: &[EnvironmentLabel],
    attacks: &[AttackLabel],
    master_seed: u64,
) -> Result<TrialManifest> {
    if speakers.is_empty() || envs.is_empty() || attacks.is_empty() || utts_per_speaker == 0 {
        return Err(arg("speakers, environments, attacks and utterances must be nonempty"));
    }
    let mut utts = Vec::with_capacity(speakers.len() * utts_per_speaker);
    let mut seen = HashSet::new();
    for spk in speakers {
        for i in 1..=utts_per_speaker {
            let utt = format!("{spk}_{i:03}");
            if !seen.insert(utt.clone()) {
                return Err(Error::Validation(format!("duplicate utterance id {utt}")));
            }
            utts.push((spk, utt));
        }
    }
    let mut records = Vec::with_capacity(envs.len() * utts.len() * (attacks.len() + 1));
    for &env in envs {
        for (spk, utt) in &utts {
            records.push(TrialRecord::new(spk.as_str(), utt.as_str(), Some(env), None, master_seed)?);
            for &attack in attacks {
                records.push(TrialRecord::new(spk.as_str(), utt.as_str(), Some(env), Some(attack), master_seed)?);
            }
        }
    }
    Ok(TrialManifest { partition, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn full(partition: Partition) -> TrialManifest {
        generate_protocol(
            &partition.default_speakers(),
            10,
            partition,
            &EnvironmentLabel::all(),
            &AttackLabel::all(),
            0,
        )
        .unwrap()
    }

    #[test]
    fn attack_labels() {
        let all: Vec<String> = AttackLabel::all().iter().map(|a| a.to_string()).collect();
        assert_eq!(all, ["AA", "AB", "AC", "BA", "BB", "BC", "CA", "CB", "CC"]);
        for a in AttackLabel::all() {
            assert_eq!(a.to_string().parse::<AttackLabel>().unwrap(), a);
        }
        assert!("aa".parse::<AttackLabel>().is_err());
        assert!("AD".parse::<AttackLabel>().is_err());
        assert_eq!("BC".parse::<AttackLabel>().unwrap().device_class(), QualityClass::Low);
    }

    #[test]
    fn single_environment_train_count() {
        let m = generate_protocol(
            &Partition::Train.default_speakers(),
            10,
            Partition::Train,
            &[EnvironmentLabel::all()[0]],
            &AttackLabel::all(),
            0,
        )
        .unwrap();
        assert_eq!(m.spoof_count(), 1800);
        assert_eq!(m.bonafide_count(), 200);
    }

    #[test]
    fn full_partition_counts() {
        assert_eq!(full(Partition::Train).spoof_count(), 48_600);
        assert_eq!(full(Partition::Dev).spoof_count(), 24_300);
        let eval = full(Partition::Eval);
        assert_eq!(eval.spoof_count(), 116_640);
        assert_eq!(eval.spoof_count() / 27, 4320);
    }

    #[test]
    fn ordering_and_bonafide_counterparts() {
        let m = generate_protocol(
            &["p1".to_string(), "p2".to_string()],
            2,
            Partition::Dev,
            &EnvironmentLabel::all()[..2],
            &AttackLabel::all()[..2],
            7,
        )
        .unwrap();
        let ids: Vec<String> = m.records.iter().map(|r| r.trial_id(m.partition)).collect();
        assert_eq!(ids[0], "dev_p1_001_aaa_-");
        assert_eq!(ids[1], "dev_p1_001_aaa_AA");
        assert_eq!(ids[2], "dev_p1_001_aaa_AB");
        assert_eq!(ids[3], "dev_p1_002_aaa_-");
        assert_eq!(ids[12], "dev_p1_001_aab_-");
        let bona: HashSet<_> = m
            .records
            .iter()
            .filter(|r| r.key == Key::Bonafide)
            .map(|r| (r.utt_id.clone(), r.env))
            .collect();
        assert!(m.records.iter().all(|r| bona.contains(&(r.utt_id.clone(), r.env))));
    }

    #[test]
    fn duplicates_and_empty_lists_rejected() {
        let dup = vec!["s".to_string(), "s".to_string()];
        let envs = EnvironmentLabel::all();
        let atk = AttackLabel::all();
        assert!(matches!(
            generate_protocol(&dup, 1, Partition::Train, &envs, &atk, 0),
            Err(Error::Validation(_))
        ));
        assert!(generate_protocol(&[], 1, Partition::Train, &envs, &atk, 0).is_err());
        assert!(generate_protocol(&["s".into()], 1, Partition::Train, &[], &atk, 0).is_err());
    }

    #[test]
    fn text_round_trip() {
        let m = generate_protocol(&["a".into(), "b".into()], 3, Partition::Eval, &EnvironmentLabel::all()[..3], &AttackLabel::all(), 11).unwrap();
        let text = m.to_text();
        assert!(text.lines().nth(2).unwrap() == "a a_001 aaa AA spoof");
        assert_eq!(TrialManifest::from_text(&text, None, 11).unwrap(), m);
        let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(TrialManifest::from_text(&body, None, 11).is_err());
        assert_eq!(TrialManifest::from_text(&body, Some(Partition::Eval), 11).unwrap(), m);
    }

    #[test]
    fn malformed_manifests() {
        let p = Some(Partition::Train);
        assert!(TrialManifest::from_text("a b aaa AA", p, 0).is_err());
        assert!(TrialManifest::from_text("a b aaa AA bonafide", p, 0).is_err());
        assert!(TrialManifest::from_text("a b aaa - spoof", p, 0).is_err());
        assert!(TrialManifest::from_text("a b - AA spoof", p, 0).is_err());
        assert!(TrialManifest::from_text("a b aaa AA spoof\na b aaa AA spoof", p, 0).is_err());
        let clean = TrialManifest::from_text("a b - - bonafide", p, 0).unwrap();
        assert_eq!(clean.records[0].trial_id(Partition::Train), "train_b_-_-");
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let env = Some(EnvironmentLabel::all()[5]);
        let s1 = trial_seed(1, "u1", env, None);
        assert_eq!(s1, trial_seed(1, "u1", env, None));
        assert_ne!(s1, trial_seed(2, "u1", env, None));
        assert_ne!(s1, trial_seed(1, "u2", env, None));
        assert_ne!(s1, trial_seed(1, "u1", env, Some(AttackLabel::all()[0])));
    }

    proptest! {
        #[test]
        fn spoofs_are_nine_per_bonafide(n_spk in 1usize..5, n_utt in 1usize..4, n_env in 1usize..27) {
            let speakers: Vec<String> = (0..n_spk).map(|i| format!("s{i}")).collect();
            let envs = &EnvironmentLabel::all()[..n_env];
            let m = generate_protocol(&speakers, n_utt, Partition::Train, envs, &AttackLabel::all(), 3).unwrap();
            for env in envs {
                let bona = m.records.iter().filter(|r| r.env == Some(*env) && r.key == Key::Bonafide).count();
                let spoof = m.records.iter().filter(|r| r.env == Some(*env) && r.key == Key::Spoof).count();
                prop_assert_eq!(bona, n_spk * n_utt);
                prop_assert_eq!(spoof, 9 * bona);
            }
        }
    }
}
