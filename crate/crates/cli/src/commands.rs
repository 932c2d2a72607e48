use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use replaysim::classifier::{write_scores, Countermeasure, LlrAggregation};
use replaysim::device::{measure_device, synthesize_device, DeviceModel, DeviceReport, QualityClass};
use replaysim::embed::{analyze, EmbeddingSet};
use replaysim::features::{extract, CqccConfig, FeatureKind, FeatureMatrix, LfccConfig};
use replaysim::metrics::{det_csv, evaluate, parse_asv_scores, TdcfParams};
use replaysim::replay::{
    generate_protocol, run_grid, synth_corpus, AttackLabel, GridOptions, Key, Partition, TrialManifest,
};
use replaysim::room::EnvironmentLabel;
use replaysim::signal::read_wav;

use crate::config::{RunConfig, RunRecord};
use crate::{usage, Aggregation, Cli, Command, DeviceClass, Given};

pub fn run(cli: &Cli, given: Given) -> Result<bool> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("starting worker pool")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| usage(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    let ctx = Ctx { cli, given };
    match &cli.command {
        Command::Simulate(a) => {
            if ctx.given.has("seed") {
                cfg.master_seed = a.seed;
            }
            if ctx.given.has("fs_work") {
                cfg.sample_rate_work = a.fs_work;
            }
            set_path(&mut cfg.paths.corpus, &a.corpus);
            set_path(&mut cfg.paths.output, &a.out);
            simulate(&ctx, &cfg, &a.protocol, a.partition)
        }
        Command::MakeProtocol(a) => {
            if ctx.given.has("seed") {
                cfg.master_seed = a.seed;
            }
            make_protocol(&ctx, &cfg, a)
        }
        Command::ExtractFeatures(a) => {
            if ctx.given.has("feature") {
                cfg.feature = a.feature;
            }
            extract_features(&ctx, &cfg, a)
        }
        Command::TrainCm(a) => {
            let g = &ctx.given;
            if g.has("seed") {
                cfg.master_seed = a.seed;
            }
            if g.has("feature") {
                cfg.feature = a.feature;
            }
            if g.has("components") {
                cfg.train.components = a.components;
            }
            if g.has("em_iters") {
                cfg.train.em_iters = a.em_iters;
            }
            if g.has("split_iters") {
                cfg.train.split_iters = a.split_iters;
            }
            if g.has("variance_floor") {
                cfg.train.variance_floor_factor = a.variance_floor;
            }
            if a.max_frames.is_some() {
                cfg.train.max_frames = a.max_frames;
            }
            set_path(&mut cfg.paths.model, &a.model);
            train_cm(&ctx, &cfg, &a.protocol, Source::new(&a.features, &a.audio))
        }
        Command::ScoreCm(a) => {
            if ctx.given.has("aggregation") {
                cfg.train.aggregation = match a.aggregation {
                    Aggregation::Mean => LlrAggregation::Mean,
                    Aggregation::Sum => LlrAggregation::Sum,
                };
            }
            set_path(&mut cfg.paths.model, &a.model);
            set_path(&mut cfg.paths.scores, &a.out);
            score_cm(&ctx, &cfg, &a.protocol, Source::new(&a.features, &a.audio))
        }
        Command::Evaluate(a) => {
            set_path(&mut cfg.paths.scores, &a.scores);
            if let Some(p) = &a.tdcf_config {
                let text = read_input(p)?;
                cfg.tdcf = TdcfParams::from_json(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            }
            evaluate_cmd(&ctx, &cfg, a)
        }
        Command::AnalyzeEmbeddings(a) => analyze_cmd(&ctx, &cfg, a),
        Command::MeasureDevice(a) => measure_cmd(&ctx, &cfg, a),
        Command::SynthDevice(a) => {
            if ctx.given.has("seed") {
                cfg.master_seed = a.seed;
            }
            synth_device_cmd(&ctx, &cfg, a)
        }
        Command::SynthCorpus(a) => {
            if ctx.given.has("seed") {
                cfg.master_seed = a.seed;
            }
            synth_corpus_cmd(&ctx, &cfg, a)
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    given: Given<'a>,
}

impl Ctx<'_> {
    fn name(&self) -> &'static str {
        match self.cli.command {
            Command::Simulate(_) => "simulate",
            Command::MakeProtocol(_) => "make-protocol",
            Command::ExtractFeatures(_) => "extract-features",
            Command::TrainCm(_) => "train-cm",
            Command::ScoreCm(_) => "score-cm",
            Command::Evaluate(_) => "evaluate",
            Command::AnalyzeEmbeddings(_) => "analyze-embeddings",
            Command::MeasureDevice(_) => "measure-device",
            Command::SynthDevice(_) => "synth-device",
            Command::SynthCorpus(_) => "synth-corpus",
        }
    }

    /// Writes run.json to `--run-json`, else into `dir` or beside `file`.
    fn record(&self, cfg: &RunConfig, default: RecordAt) -> Result<()> {
        let path = match (&self.cli.run_json, default) {
            (Some(p), _) => p.clone(),
            (None, RecordAt::Dir(d)) => d.join("run.json"),
            (None, RecordAt::Beside(f)) => {
                let mut s = f.as_os_str().to_owned();
                s.push(".run.json");
                PathBuf::from(s)
            }
            (None, RecordAt::Nowhere) => return Ok(()),
        };
        RunRecord::new(self.name(), cfg, self.cli.deterministic).write(&path)
    }
}

enum RecordAt<'a> {
    Dir(&'a Path),
    Beside(&'a Path),
    Nowhere,
}

fn set_path(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

fn need<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| usage(format!("no {what} given (flag or config)")))
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{} is not a readable file", p.display())))
    }
}

fn require_dir(p: &Path) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{} is not a directory", p.display())))
    }
}

fn read_input(p: &Path) -> Result<String> {
    require_file(p)?;
    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn create_parent(p: &Path) -> Result<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => create_dir(d),
        _ => Ok(()),
    }
}

fn load_manifest(p: &Path, partition: Option<Partition>, seed: u64) -> Result<TrialManifest> {
    require_file(p)?;
    TrialManifest::load(p, partition, seed).with_context(|| format!("manifest {}", p.display()))
}

fn simulate(ctx: &Ctx, cfg: &RunConfig, protocol: &Path, partition: Option<Partition>) -> Result<bool> {
    let corpus = need(&cfg.paths.corpus, "corpus directory")?;
    let out = need(&cfg.paths.output, "output directory")?;
    require_dir(corpus)?;
    if cfg.sample_rate_work == 0 {
        return Err(usage("--fs-work must be positive"));
    }
    let manifest = load_manifest(protocol, partition, cfg.master_seed)?;
    let report = run_grid(
        corpus,
        &manifest,
        out,
        cfg.master_seed,
        GridOptions {
            fs_work: cfg.sample_rate_work,
        },
    )?;
    let path = out.join("report.json");
    std::fs::write(&path, report.to_json()? + "\n").with_context(|| format!("writing {}", path.display()))?;
    ctx.record(cfg, RecordAt::Dir(out))?;
    println!(
        "{} of {} trials written, {} spoof conditions, {} missing sources, {} failures",
        report.written,
        report.records,
        report.spoof_condition_count(),
        report.missing.len(),
        report.failed.len()
    );
    for m in &report.missing {
        eprintln!("missing source: {m}");
    }
    for f in &report.failed {
        eprintln!("failed: {} ({})", f.trial, f.error);
    }
    Ok(report.is_success())
}

fn parse_list<T: std::str::FromStr<Err = replaysim::Error>>(s: &str, all: fn() -> Vec<T>) -> Result<Vec<T>> {
    if s == "all" {
        return Ok(all());
    }
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|e| usage(e.to_string())))
        .collect()
}

fn make_protocol(ctx: &Ctx, cfg: &RunConfig, a: &crate::MakeProtocolArgs) -> Result<bool> {
    let envs = parse_list(&a.envs, EnvironmentLabel::all)?;
    let attacks = parse_list(&a.attacks, AttackLabel::all)?;
    let reference = a.partition.default_speakers();
    let speakers = match a.speakers {
        None => reference,
        Some(0) => return Err(usage("--speakers must be positive")),
        Some(n) => {
            let prefix = &reference[0][..1];
            (1..=n).map(|i| format!("{prefix}{i:04}")).collect()
        }
    };
    if a.utts == 0 {
        return Err(usage("--utts must be positive"));
    }
    let m = generate_protocol(&speakers, a.utts, a.partition, &envs, &attacks, cfg.master_seed)?;
    create_parent(&a.out)?;
    m.save(&a.out)?;
    ctx.record(cfg, RecordAt::Beside(&a.out))?;
    println!(
        "{} records: {} bona fide, {} spoof",
        m.records.len(),
        m.bonafide_count(),
        m.spoof_count()
    );
    Ok(true)
}

fn feature_dims(kind: FeatureKind) -> usize {
    match kind {
        FeatureKind::Cqcc => 3 * CqccConfig::default().n_static,
        FeatureKind::Lfcc => 3 * LfccConfig::default().n_static,
    }
}

/// Where per-trial features come from.
enum Source<'a> {
    Features(&'a Path),
    Audio(&'a Path),
}

impl<'a> Source<'a> {
    fn new(features: &'a Option<PathBuf>, audio: &'a Option<PathBuf>) -> Self {
        match (features, audio) {
            (Some(f), _) => Source::Features(f),
            (None, Some(a)) => Source::Audio(a),
            (None, None) => unreachable!("clap requires one of --features/--audio"),
        }
    }

    fn dir(&self) -> &Path {
        match self {
            Source::Features(d) | Source::Audio(d) => d,
        }
    }

    fn path(&self, id: &str) -> PathBuf {
        match self {
            Source::Features(d) => d.join(format!("{id}.feat")),
            Source::Audio(d) => d.join(format!("{id}.wav")),
        }
    }

    /// Fails listing every missing file.
    fn check(&self, ids: &[String]) -> Result<()> {
        require_dir(self.dir())?;
        let missing: Vec<&str> = ids.iter().filter(|id| !self.path(id).is_file()).map(String::as_str).collect();
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(10).copied().collect();
            bail!(
                "{} inputs missing under {}: {}{}",
                missing.len(),
                self.dir().display(),
                shown.join(", "),
                if missing.len() > 10 { ", ..." } else { "" }
            );
        }
        Ok(())
    }

    fn load(&self, ids: &[String], kind: FeatureKind) -> Result<Vec<FeatureMatrix<f64>>> {
        let want = feature_dims(kind);
        ids.par_iter()
            .map(|id| {
                let p = self.path(id);
                let f = match self {
                    Source::Features(_) => FeatureMatrix::read(&p)?,
                    Source::Audio(_) => extract(&read_wav::<f64>(&p)?, kind)?,
                };
                if f.dims() != want {
                    bail!("{}: {} dims, expected {want} for {kind}", p.display(), f.dims());
                }
                Ok(f)
            })
            .collect()
    }
}

fn extract_features(ctx: &Ctx, cfg: &RunConfig, a: &crate::ExtractArgs) -> Result<bool> {
    require_dir(&a.audio)?;
    let ids: Vec<String> = match &a.protocol {
        Some(p) => {
            let m = load_manifest(p, None, cfg.master_seed)?;
            m.records.iter().map(|r| r.trial_id(m.partition)).collect()
        }
        None => {
            let mut ids = Vec::new();
            for entry in std::fs::read_dir(&a.audio).with_context(|| format!("listing {}", a.audio.display()))? {
                let p = entry?.path();
                if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                    if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                        ids.push(stem.to_string());
                    }
                }
            }
            ids.sort();
            ids
        }
    };
    if ids.is_empty() {
        bail!("no WAV files to extract under {}", a.audio.display());
    }
    let src = Source::Audio(&a.audio);
    src.check(&ids)?;
    create_dir(&a.out)?;
    let results: Vec<Result<usize>> = ids
        .par_iter()
        .map(|id| {
            let f = extract(&read_wav::<f64>(&src.path(id))?, cfg.feature)?;
            f.write(&a.out.join(format!("{id}.feat")))?;
            if a.csv {
                let p = a.out.join(format!("{id}.csv"));
                std::fs::write(&p, f.to_csv()).with_context(|| format!("writing {}", p.display()))?;
            }
            Ok(f.frames())
        })
        .collect();
    let mut ok = true;
    let mut frames = 0;
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(n) => frames += n,
            Err(e) => {
                ok = false;
                eprintln!("failed: {id} ({e:#})");
            }
        }
    }
    ctx.record(cfg, RecordAt::Dir(&a.out))?;
    println!("{} files, {frames} {} frames", ids.len(), cfg.feature);
    Ok(ok)
}

fn split_by_key(m: &TrialManifest) -> (Vec<String>, Vec<String>) {
    let mut bona = Vec::new();
    let mut spoof = Vec::new();
    for r in &m.records {
        let id = r.trial_id(m.partition);
        match r.key {
            Key::Bonafide => bona.push(id),
            Key::Spoof => spoof.push(id),
        }
    }
    (bona, spoof)
}

fn train_cm(ctx: &Ctx, cfg: &RunConfig, protocol: &Path, src: Source) -> Result<bool> {
    let model_dir = need(&cfg.paths.model, "model directory")?;
    let tc = cfg.train_config();
    if tc.components == 0 || tc.em_iters == 0 {
        return Err(usage("--components and --em-iters must be positive"));
    }
    if tc.max_frames.is_some_and(|n| n < tc.components) {
        return Err(usage("--max-frames must be at least --components"));
    }
    let m = load_manifest(protocol, None, cfg.master_seed)?;
    let (bona_ids, spoof_ids) = split_by_key(&m);
    if bona_ids.is_empty() || spoof_ids.is_empty() {
        bail!(replaysim::Error::Validation(format!(
            "training manifest needs both keys, has {} bona fide and {} spoof",
            bona_ids.len(),
            spoof_ids.len()
        )));
    }
    src.check(&bona_ids)?;
    src.check(&spoof_ids)?;
    let bona = src.load(&bona_ids, cfg.feature)?;
    let spoof = src.load(&spoof_ids, cfg.feature)?;
    for (name, set) in [("bona fide", &bona), ("spoof", &spoof)] {
        let frames: usize = set.iter().map(FeatureMatrix::frames).sum();
        if frames < tc.components {
            return Err(usage(format!(
                "{name} training data has {frames} frames, fewer than K = {}",
                tc.components
            )));
        }
    }
    let (cm, metas) = Countermeasure::train(cfg.feature, &bona, &spoof, &tc)?;
    for meta in &metas {
        log::info!(
            "{} model: K={} on {} frames, LL {}",
            meta.class,
            meta.components,
            meta.frames_used,
            meta.ll_history.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
        );
    }
    cm.save(model_dir, &metas)?;
    ctx.record(cfg, RecordAt::Dir(model_dir))?;
    println!(
        "trained {} GMMs (K={}) on {} bona fide and {} spoof utterances",
        cfg.feature,
        tc.components,
        bona.len(),
        spoof.len()
    );
    Ok(true)
}

fn score_cm(ctx: &Ctx, cfg: &RunConfig, protocol: &Path, src: Source) -> Result<bool> {
    let model_dir = need(&cfg.paths.model, "model directory")?;
    let out = need(&cfg.paths.scores, "score file")?;
    require_dir(model_dir)?;
    let cm = Countermeasure::load(model_dir).with_context(|| format!("model {}", model_dir.display()))?;
    let m = load_manifest(protocol, None, cfg.master_seed)?;
    let ids: Vec<String> = m.records.iter().map(|r| r.trial_id(m.partition)).collect();
    src.check(&ids)?;
    let feats = src.load(&ids, cm.feature)?;
    if let Some(f) = feats.iter().find(|f| f.dims() != cm.bona.dims()) {
        bail!("features have {} dims, the model {}", f.dims(), cm.bona.dims());
    }
    let agg = cfg.train.aggregation;
    let scores: Vec<f64> = feats.par_iter().map(|f| cm.score(f, agg)).collect::<replaysim::Result<_>>()?;
    let scored: Vec<(String, f64)> = ids.into_iter().zip(scores).collect();
    create_parent(out)?;
    write_scores(out, &scored)?;
    ctx.record(cfg, RecordAt::Beside(out))?;
    println!("scored {} trials", scored.len());
    Ok(true)
}

fn evaluate_cmd(ctx: &Ctx, cfg: &RunConfig, a: &crate::EvaluateArgs) -> Result<bool> {
    let scores_path = need(&cfg.paths.scores, "score file")?;
    let text = read_input(scores_path)?;
    let scores = replaysim::classifier::parse_scores(&text).with_context(|| format!("scores {}", scores_path.display()))?;
    let m = load_manifest(&a.protocol, None, cfg.master_seed)?;
    let asv = match &a.asv_scores {
        Some(p) => Some(parse_asv_scores(&read_input(p)?).with_context(|| format!("ASV scores {}", p.display()))?),
        None => None,
    };
    let report = evaluate(&scores, &m, asv.as_ref(), &cfg.tdcf)?;
    let det = a.det.clone().unwrap_or_else(|| a.out.with_extension("det.csv"));
    create_parent(&a.out)?;
    create_parent(&det)?;
    std::fs::write(&a.out, report.to_json()).with_context(|| format!("writing {}", a.out.display()))?;
    std::fs::write(&det, det_csv(&report.det)).with_context(|| format!("writing {}", det.display()))?;
    ctx.record(cfg, RecordAt::Beside(&a.out))?;
    match report.min_tdcf {
        Some(t) => println!("EER {:.2}%  min t-DCF {t:.4}", 100.0 * report.eer),
        None => println!("EER {:.2}%", 100.0 * report.eer),
    }
    Ok(true)
}

fn analyze_cmd(ctx: &Ctx, cfg: &RunConfig, a: &crate::AnalyzeArgs) -> Result<bool> {
    let set: EmbeddingSet<f64> = match (&a.embeddings, &a.features, &a.labels) {
        (Some(p), _, _) => EmbeddingSet::from_csv(&read_input(p)?)?,
        (None, Some(f), Some(l)) => {
            require_file(f)?;
            EmbeddingSet::from_features(&FeatureMatrix::read(f)?, &read_input(l)?)?
        }
        _ => return Err(usage("give --embeddings, or --features with --labels")),
    };
    let res = analyze(&set)?;
    create_dir(&a.out)?;
    let d = set.dims();
    let mut wccn = String::new();
    for row in res.transform.chunks_exact(d) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        wccn.push_str(&cells.join(","));
        wccn.push('\n');
    }
    for (name, body) in [
        ("embeddings.csv", res.processed.to_csv()),
        ("wccn.csv", wccn),
        ("distances.csv", res.distances.to_csv()),
        ("dendrogram.json", res.dendrogram.to_json()),
        ("dendrogram.nwk", res.dendrogram.to_newick() + "\n"),
    ] {
        let p = a.out.join(name);
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
    }
    ctx.record(cfg, RecordAt::Dir(&a.out))?;
    println!("{}", res.dendrogram.to_newick());
    Ok(true)
}

fn measure_cmd(ctx: &Ctx, cfg: &RunConfig, a: &crate::MeasureDeviceArgs) -> Result<bool> {
    require_file(&a.device)?;
    let d = DeviceModel::load(&a.device)?;
    let report = DeviceReport::new(measure_device(&d)?);
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => {
            create_parent(p)?;
            std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?;
            ctx.record(cfg, RecordAt::Beside(p))?;
        }
        None => {
            print!("{json}");
            ctx.record(cfg, RecordAt::Nowhere)?;
        }
    }
    Ok(true)
}

fn synth_device_cmd(ctx: &Ctx, cfg: &RunConfig, a: &crate::SynthDeviceArgs) -> Result<bool> {
    let class = match a.class {
        DeviceClass::Perfect => QualityClass::Perfect,
        DeviceClass::High => QualityClass::High,
        DeviceClass::Low => QualityClass::Low,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    let d = synthesize_device(class, &mut rng)?;
    create_parent(&a.out)?;
    d.save(&a.out)?;
    ctx.record(cfg, RecordAt::Beside(&a.out))?;
    let m = measure_device(&d)?;
    println!("OB {:.1} Hz  minF {:.1} Hz  LNLR {:.2} dB", m.ob, m.minf, m.lnlr);
    Ok(true)
}

fn synth_corpus_cmd(ctx: &Ctx, cfg: &RunConfig, a: &crate::SynthCorpusArgs) -> Result<bool> {
    if a.speakers == 0 || a.utts == 0 || a.sample_rate == 0 {
        return Err(usage("--speakers, --utts and --sample-rate must be positive"));
    }
    let prefix = &a.partition.default_speakers()[0][..1];
    let speakers: Vec<String> = (1..=a.speakers).map(|i| format!("{prefix}{i:04}")).collect();
    let ids = synth_corpus(&a.out, &speakers, a.utts, a.sample_rate, cfg.master_seed)?;
    ctx.record(cfg, RecordAt::Dir(&a.out))?;
    println!("{} utterances written", ids.len());
    Ok(true)
}
