mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use replaysim::features::FeatureKind;
use replaysim::replay::{Partition, DEFAULT_WORK_RATE};

/// Replay-attack simulation, CQCC/LFCC-GMM countermeasures and tandem
/// evaluation.
#[derive(Debug, Parser)]
#[command(name = "replaysim", version)]
pub struct Cli {
    /// JSON config with flat dotted keys; explicit flags override it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads [default: logical cores]
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Force ordered reductions (recorded in run.json)
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Where to write the provenance record [default: next to the outputs]
    #[arg(long, global = true, value_name = "FILE")]
    pub run_json: Option<PathBuf>,
    /// Debug logging
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate every trial of a manifest from a directory of source WAVs
    Simulate(SimulateArgs),
    /// Write a trial manifest for a partition
    MakeProtocol(MakeProtocolArgs),
    /// Extract CQCC or LFCC features from WAV files
    ExtractFeatures(ExtractArgs),
    /// Train the bona fide and spoof GMMs of a countermeasure
    TrainCm(TrainArgs),
    /// Score trials with a trained countermeasure
    ScoreCm(ScoreArgs),
    /// EER and min t-DCF of countermeasure scores, pooled and per condition
    Evaluate(EvaluateArgs),
    /// Whitening, WCCN, attack distances and UPGMA on labelled embeddings
    AnalyzeEmbeddings(AnalyzeArgs),
    /// Measure OB, minF and LNLR of a device model
    MeasureDevice(MeasureDeviceArgs),
    /// Synthesise a random device of a quality class
    SynthDevice(SynthDeviceArgs),
    /// Write a synthetic speech-like corpus
    SynthCorpus(SynthCorpusArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Trial manifest
    #[arg(long, value_name = "FILE")]
    pub protocol: PathBuf,
    /// Directory holding <utt_id>.wav sources [config: paths.corpus]
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Output directory for <trial_id>.wav and report.json [config: paths.output]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Partition when the manifest has no header
    #[arg(long)]
    pub partition: Option<Partition>,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Simulation sample rate in Hz
    #[arg(long, default_value_t = DEFAULT_WORK_RATE)]
    pub fs_work: u32,
}

#[derive(Debug, Args)]
pub struct MakeProtocolArgs {
    #[arg(long, default_value = "train")]
    pub partition: Partition,
    /// Number of speakers [default: 20 train, 10 dev, 48 eval]
    #[arg(long)]
    pub speakers: Option<usize>,
    /// Utterances per speaker
    #[arg(long, default_value_t = 10)]
    pub utts: usize,
    /// Comma-separated environment labels such as aaa,ccc, or "all"
    #[arg(long, default_value = "all")]
    pub envs: String,
    /// Comma-separated attack labels such as AA,CC, or "all"
    #[arg(long, default_value = "all")]
    pub attacks: String,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Manifest to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of WAV files
    #[arg(long, value_name = "DIR")]
    pub audio: PathBuf,
    /// Output directory for <id>.feat
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Front-end: cqcc or lfcc
    #[arg(long, default_value = "cqcc")]
    pub feature: FeatureKind,
    /// Only extract the trials listed in this manifest
    #[arg(long, value_name = "FILE")]
    pub protocol: Option<PathBuf>,
    /// Also write <id>.csv
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest with bona fide and spoof trials
    #[arg(long, value_name = "FILE")]
    pub protocol: PathBuf,
    /// Directory of <trial_id>.feat files
    #[arg(long, value_name = "DIR", conflicts_with = "audio", required_unless_present = "audio")]
    pub features: Option<PathBuf>,
    /// Directory of <trial_id>.wav files to extract from
    #[arg(long, value_name = "DIR")]
    pub audio: Option<PathBuf>,
    /// Output model directory [config: paths.model]
    #[arg(long, value_name = "DIR")]
    pub model: Option<PathBuf>,
    /// Front-end: cqcc or lfcc
    #[arg(long, default_value = "cqcc")]
    pub feature: FeatureKind,
    /// Mixture components K
    #[arg(long, default_value_t = 512)]
    pub components: usize,
    /// EM iterations after the last split
    #[arg(long, default_value_t = 20)]
    pub em_iters: usize,
    /// EM iterations after each binary split
    #[arg(long, default_value_t = 2)]
    pub split_iters: usize,
    /// Variance floor as a fraction of the global variance
    #[arg(long, default_value_t = 1e-6)]
    pub variance_floor: f64,
    /// Train each model on a seeded subset of at most this many frames
    #[arg(long)]
    pub max_frames: Option<usize>,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Aggregation {
    Mean,
    Sum,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Manifest of trials to score
    #[arg(long, value_name = "FILE")]
    pub protocol: PathBuf,
    /// Directory of <trial_id>.feat files
    #[arg(long, value_name = "DIR", conflicts_with = "audio", required_unless_present = "audio")]
    pub features: Option<PathBuf>,
    /// Directory of <trial_id>.wav files to extract from
    #[arg(long, value_name = "DIR")]
    pub audio: Option<PathBuf>,
    /// Model directory [config: paths.model]
    #[arg(long, value_name = "DIR")]
    pub model: Option<PathBuf>,
    /// Score file to write [config: paths.scores]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Frame LLR aggregation
    #[arg(long, value_enum, default_value_t = Aggregation::Mean)]
    pub aggregation: Aggregation,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Countermeasure scores, `TRIAL_ID SCORE` per line [config: paths.scores]
    #[arg(long, value_name = "FILE")]
    pub scores: Option<PathBuf>,
    /// Key manifest
    #[arg(long, value_name = "FILE")]
    pub protocol: PathBuf,
    /// ASV scores, `UTT_ID SCORE target|nontarget|spoof` per line
    #[arg(long, value_name = "FILE")]
    pub asv_scores: Option<PathBuf>,
    /// t-DCF costs and priors [default: built-in constants]
    #[arg(long, value_name = "FILE")]
    pub tdcf_config: Option<PathBuf>,
    /// JSON report to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// DET points CSV [default: <out>.det.csv]
    #[arg(long, value_name = "FILE")]
    pub det: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// CSV of utt_id,speaker_id,class_id,v0,...
    #[arg(long, value_name = "FILE", conflicts_with = "features", required_unless_present = "features")]
    pub embeddings: Option<PathBuf>,
    /// Feature file whose rows are the embeddings
    #[arg(long, value_name = "FILE", requires = "labels")]
    pub features: Option<PathBuf>,
    /// utt_id,speaker_id,class_id per feature row
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MeasureDeviceArgs {
    /// Device model JSON
    #[arg(long, value_name = "FILE")]
    pub device: PathBuf,
    /// Report JSON [default: stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DeviceClass {
    Perfect,
    High,
    Low,
}

#[derive(Debug, Args)]
pub struct SynthDeviceArgs {
    #[arg(long, value_enum)]
    pub class: DeviceClass,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Device model JSON to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthCorpusArgs {
    /// Output directory for <speaker>_<nnn>.wav
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Speaker ids follow the partition's naming
    #[arg(long, default_value = "train")]
    pub partition: Partition,
    #[arg(long, default_value_t = 4)]
    pub speakers: usize,
    /// Utterances per speaker
    #[arg(long, default_value_t = 10)]
    pub utts: usize,
    #[arg(long, default_value_t = 16_000)]
    pub sample_rate: u32,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Bad invocation: exit status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Whether a flag was typed rather than left at its default.
pub struct Given<'a>(pub &'a ArgMatches);

impl Given<'_> {
    pub fn has(&self, id: &str) -> bool {
        matches!(self.0.value_source(id), Some(ValueSource::CommandLine | ValueSource::EnvVariable))
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose { "debug" } else { "info" }))
        .format_timestamp(None)
        .init();
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    match commands::run(&cli, Given(sub)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<Usage>().is_some() { 2 } else { 1 })
        }
    }
}
