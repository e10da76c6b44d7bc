//! `ge2e`: corpus preparation, training, embedding and evaluation.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use ge2e_core::dsp::{preprocess_eval_utterance, preprocess_training_utterance, FeatureMatrix, FrameSpec, SourceId, VadConfig};
use ge2e_core::eval::{
    curve_csv, mean_error_curve, report_csv, run_duration_split, run_fixed_threshold, run_m_sweep, utterance_dvector,
    ReportRow, WindowSpec, DEFAULT_THRESHOLDS,
};
use ge2e_core::loss::Reduction;
use ge2e_core::net::NetConfig;
use ge2e_core::store::{self, Checkpoint, DVectorStore, Manifest, ManifestEntry, Split};
use ge2e_core::synth::{generate_synthetic_corpus, SynthSpec};
use ge2e_core::trainer::{train, PartialCorpus, StepMetrics, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "ge2e", version, about = "Text-independent speaker verification with the GE2E loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// key=value file; keys are long flag names, command-line flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
#[command(args_override_self = true)]
enum Command {
    /// Compute log-mel features for every manifest entry.
    Preprocess(PreprocessArgs),
    /// Render a synthetic corpus of WAV files plus a manifest.
    Synth(SynthArgs),
    /// Train the embedder on the train split of a manifest.
    Train(TrainArgs),
    /// Turn evaluation utterances into a d-vector store.
    Embed(EmbedArgs),
    /// Mean EER over repeated enrollment/verification rounds.
    Evaluate(EvaluateArgs),
    /// Mean EER for several enrollment sizes.
    SweepM(SweepArgs),
    /// Apply the dev-set EER threshold to other stores.
    FixedThreshold(FixedThresholdArgs),
    /// EER for short and long verification utterances.
    DurationSplit(DurationSplitArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    speakers: usize,
    #[arg(long, default_value_t = 10)]
    utterances: usize,
    #[arg(long, default_value_t = 2.5)]
    min_duration: f64,
    #[arg(long, default_value_t = 5.0)]
    max_duration: f64,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Index of the first speaker; use disjoint ranges for train and test corpora.
    #[arg(long, default_value_t = 0)]
    first_speaker: usize,
    #[arg(long, default_value = "train")]
    split: Split,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    /// Defaults to one pass over the partial utterances.
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    checkpoint_interval: usize,
    #[arg(long, default_value = "mean")]
    reduction: Reduction,
    #[arg(long, default_value_t = 3.0)]
    clip_norm: f64,
    #[arg(long, default_value_t = 1.0)]
    projection_grad_scale: f64,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    learn_scale: bool,
    #[arg(long, default_value_t = 768)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 256)]
    embedding_dim: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Embed only this split; by default every non-train entry.
    #[arg(long)]
    split: Option<Split>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Protocol {
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value_t = 5)]
    m: usize,
    /// Mean FAR/FRR curve over a 2001-point grid on [-1, 1].
    #[arg(long)]
    curve: Option<PathBuf>,
    #[command(flatten)]
    protocol: Protocol,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,7,10,15")]
    m_list: Vec<usize>,
    #[command(flatten)]
    protocol: Protocol,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct FixedThresholdArgs {
    #[arg(long)]
    dev: PathBuf,
    /// Repeatable; each store is reported under its file stem.
    #[arg(long, required = true, action = ArgAction::Append)]
    test: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[command(flatten)]
    protocol: Protocol,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct DurationSplitArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    boundary: f64,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[command(flatten)]
    protocol: Protocol,
    #[command(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 3 for numerical failures, 1 for I/O, 2 for everything else (bad input).
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<ge2e_core::Error>() {
            return match core {
                c if c.is_numerical() => 3,
                ge2e_core::Error::Io(_) => 1,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() {
            return 1;
        }
    }
    2
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess(a) => preprocess(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Embed(a) => embed(a),
        Command::Evaluate(a) => evaluate(a),
        Command::SweepM(a) => sweep_m(a),
        Command::FixedThreshold(a) => fixed_threshold(a),
        Command::DurationSplit(a) => duration_split(a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_speakers: a.speakers,
        utterances_per_speaker: a.utterances,
        min_duration: a.min_duration,
        max_duration: a.max_duration,
        noise_level: a.noise,
        seed: a.common.seed,
        first_speaker: a.first_speaker,
        split: a.split,
        ..SynthSpec::default()
    };
    let manifest = generate_synthetic_corpus(&spec, &a.out)?;
    println!("wrote {} utterances to {}", manifest.entries.len(), a.out.display());
    Ok(())
}

fn wav_training_partials(manifest: &Manifest, e: &ManifestEntry) -> Result<Vec<FeatureMatrix>> {
    let w = store::read_wav(&manifest.resolve(e))?;
    let partials = preprocess_training_utterance(&w, &VadConfig::default(), &FrameSpec::default())?;
    Ok(partials
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            let mut f = p.features;
            f.source = SourceId::new(e.speaker_id.clone(), e.utterance_id.clone(), k as u32);
            f
        })
        .collect())
}

fn eval_features(manifest: &Manifest, e: &ManifestEntry) -> Result<FeatureMatrix> {
    let source = SourceId::new(e.speaker_id.clone(), e.utterance_id.clone(), 0);
    let path = manifest.resolve(e);
    if e.is_features() {
        return Ok(store::read_features(&path, source)?);
    }
    let mut f = preprocess_eval_utterance(&store::read_wav(&path)?, &VadConfig::default(), &FrameSpec::default())?;
    f.source = source;
    Ok(f)
}

/// Train entries become one `.fmx` per partial utterance; dev/test entries
/// one `.fmx` per utterance. Entries without usable speech are skipped.
fn preprocess(a: PreprocessArgs) -> Result<()> {
    let manifest = store::ingest(&a.manifest)?;
    let mut out = Manifest {
        base_dir: a.out.clone(),
        entries: Vec::new(),
    };
    let mut skipped = 0;
    for e in &manifest.entries {
        if e.is_features() {
            bail!("{}/{} is already a feature file", e.speaker_id, e.utterance_id);
        }
        let dir = a.out.join(&e.speaker_id);
        fs::create_dir_all(&dir)?;
        let features = if e.split == Split::Train {
            wav_training_partials(&manifest, e)?
        } else {
            match eval_features(&manifest, e) {
                Ok(f) => vec![f],
                Err(err) if matches!(err.downcast_ref(), Some(ge2e_core::Error::NoSpeech)) => Vec::new(),
                Err(err) => return Err(err),
            }
        };
        if features.is_empty() {
            skipped += 1;
            eprintln!("skipping {}/{}: no usable speech", e.speaker_id, e.utterance_id);
        }
        let partial = e.split == Split::Train;
        for f in features {
            let utterance_id = if partial {
                format!("{}_p{}", e.utterance_id, f.source.segment)
            } else {
                e.utterance_id.clone()
            };
            let rel = PathBuf::from(&e.speaker_id).join(format!("{utterance_id}.fmx"));
            store::write_features(&a.out.join(&rel), &f)?;
            out.entries.push(ManifestEntry {
                speaker_id: e.speaker_id.clone(),
                utterance_id,
                path: rel,
                duration_seconds: e.duration_seconds,
                split: e.split,
            });
        }
    }
    out.write(&a.out.join("manifest.tsv"))?;
    println!(
        "wrote {} feature files ({} utterances skipped) to {}",
        out.entries.len(),
        skipped,
        a.out.display()
    );
    Ok(())
}

fn metrics_csv(metrics: &[StepMetrics]) -> String {
    let mut out = String::from("step,loss,grad_norm,w,b,t\n");
    for m in metrics {
        out.push_str(&format!("{},{},{},{},{},{}\n", m.step, m.loss, m.grad_norm, m.w, m.b, m.t));
    }
    out
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let manifest = store::ingest(&a.manifest)?;
    let mut features = Vec::new();
    for e in manifest.split(Split::Train) {
        if e.is_features() {
            let source = SourceId::new(e.speaker_id.clone(), e.utterance_id.clone(), 0);
            features.push(store::read_features(&manifest.resolve(e), source)?);
        } else {
            features.extend(wav_training_partials(&manifest, e)?);
        }
    }
    if features.is_empty() {
        bail!(ge2e_core::Error::InvalidConfig("manifest has no usable train entries".into()));
    }
    let corpus = PartialCorpus::from_features(features);
    let net = NetConfig {
        hidden_dim: a.hidden,
        num_layers: a.layers,
        embedding_dim: a.embedding_dim,
        ..NetConfig::full()
    };
    net.validate()?;
    let mut cfg = TrainConfig {
        seed: a.common.seed,
        epochs: a.epochs,
        batches_per_epoch: a.batches_per_epoch,
        checkpoint_interval: a.checkpoint_interval,
        reduction: a.reduction,
        clip_norm: a.clip_norm,
        projection_grad_scale: a.projection_grad_scale,
        learn_scale: a.learn_scale,
        max_steps: a.max_steps,
        ..TrainConfig::default()
    };
    cfg.batch.n_speakers = a.n;
    cfg.batch.m_utterances = a.m;
    cfg.adam.learning_rate = a.lr;

    fs::create_dir_all(&a.out)?;
    let out_dir = a.out.clone();
    let outcome = train(&corpus, net, &cfg, |s| {
        let path = out_dir.join(format!("epoch_{:04}.ckpt", s.epoch));
        store::write_checkpoint(
            &path,
            &Checkpoint {
                params: s.params.clone(),
                scale: s.scale,
            },
        )
    })?;
    store::write_checkpoint(
        &a.out.join("final.ckpt"),
        &Checkpoint {
            params: outcome.params,
            scale: outcome.scale,
        },
    )?;
    write_text(&a.out.join("metrics.csv"), &metrics_csv(&outcome.metrics))?;
    let last = outcome.metrics.last().map_or(f64::NAN, |m| m.loss);
    println!(
        "trained {} steps on {} speakers, final loss {last:.6}, w {:.4}, b {:.4}",
        outcome.steps,
        corpus.speakers.len(),
        outcome.scale.w,
        outcome.scale.b
    );
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let ckpt = store::read_checkpoint(&a.checkpoint)?;
    let manifest = store::ingest(&a.manifest)?;
    let spec = WindowSpec::default();
    let mut records = Vec::new();
    let mut skipped = 0;
    let wanted = |e: &&ManifestEntry| a.split.map_or(e.split != Split::Train, |s| e.split == s);
    for e in manifest.entries.iter().filter(wanted) {
        let features = match eval_features(&manifest, e) {
            Ok(f) => f,
            Err(err) if matches!(err.downcast_ref(), Some(ge2e_core::Error::NoSpeech)) => {
                skipped += 1;
                continue;
            }
            Err(err) => return Err(err),
        };
        match utterance_dvector(&ckpt.params, &features, &spec, e.duration_seconds) {
            Ok(d) => records.push(d),
            Err(ge2e_core::Error::TooShort { .. }) => skipped += 1,
            Err(err) => return Err(err.into()),
        }
    }
    if records.is_empty() {
        bail!(ge2e_core::Error::InvalidConfig("no utterance could be embedded".into()));
    }
    let dvs = DVectorStore::new(ckpt.params.config.embedding_dim, records)?;
    store::write_dvectors(&a.out, &dvs)?;
    println!("wrote {} d-vectors ({skipped} utterances skipped) to {}", dvs.len(), a.out.display());
    Ok(())
}

fn finish_report(rows: &[ReportRow], report: Option<&Path>) -> Result<()> {
    let csv = report_csv(rows);
    match report {
        Some(p) => write_text(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn sweep_rows(experiment: &str, store: &DVectorStore, m_values: &[usize], iters: usize, seed: u64) -> Result<Vec<ReportRow>> {
    Ok(run_m_sweep(store, m_values, iters, seed)?
        .into_iter()
        .map(|r| ReportRow {
            experiment: experiment.into(),
            subset: "all".into(),
            m: r.m,
            eer: r.mean_eer,
            far: r.mean_far,
            frr: r.mean_frr,
            threshold: r.mean_threshold,
        })
        .collect())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let dvs = store::read_dvectors(&a.store)?;
    let rows = sweep_rows("evaluate", &dvs, &[a.m], a.protocol.iters, a.common.seed)?;
    if let Some(path) = &a.curve {
        let n = DEFAULT_THRESHOLDS;
        let grid: Vec<f64> = (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect();
        let (far, frr) = mean_error_curve(&dvs, a.m, a.protocol.iters, a.common.seed, &grid)?;
        write_text(path, &curve_csv(&grid, &far, &frr))?;
    }
    finish_report(&rows, a.protocol.report.as_deref())
}

fn sweep_m(a: SweepArgs) -> Result<()> {
    let dvs = store::read_dvectors(&a.store)?;
    let rows = sweep_rows("sweep-m", &dvs, &a.m_list, a.protocol.iters, a.common.seed)?;
    finish_report(&rows, a.protocol.report.as_deref())
}

fn subset_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn fixed_threshold(a: FixedThresholdArgs) -> Result<()> {
    let dev = store::read_dvectors(&a.dev)?;
    let tests = a
        .test
        .iter()
        .map(|p| Ok((subset_name(p), store::read_dvectors(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(String, &DVectorStore)> = tests.iter().map(|(n, s)| (n.clone(), s)).collect();
    let report = run_fixed_threshold(&dev, &refs, a.m, a.protocol.iters, a.common.seed)?;
    let (dev_far, dev_frr) = mean_error_curve(&dev, a.m, a.protocol.iters, a.common.seed, &[report.threshold])?;
    let mut rows = vec![ReportRow {
        experiment: "fixed-threshold".into(),
        subset: format!("dev:{}", subset_name(&a.dev)),
        m: a.m,
        eer: report.dev_eer,
        far: dev_far[0],
        frr: dev_frr[0],
        threshold: report.threshold,
    }];
    rows.extend(report.rows.into_iter().map(|r| ReportRow {
        experiment: "fixed-threshold".into(),
        subset: r.subset,
        m: a.m,
        eer: r.eer,
        far: r.far,
        frr: r.frr,
        threshold: report.threshold,
    }));
    finish_report(&rows, a.protocol.report.as_deref())
}

fn duration_split(a: DurationSplitArgs) -> Result<()> {
    let dvs = store::read_dvectors(&a.store)?;
    let d = run_duration_split(&dvs, a.boundary, a.m, a.protocol.iters, a.common.seed)?;
    let rows: Vec<ReportRow> = [("short", d.short), ("long", d.long), ("all", d.all)]
        .into_iter()
        .map(|(name, r)| ReportRow {
            experiment: "duration-split".into(),
            subset: name.into(),
            m: a.m,
            eer: r.eer,
            far: r.far,
            frr: r.frr,
            threshold: r.threshold,
        })
        .collect();
    finish_report(&rows, a.protocol.report.as_deref())
}
