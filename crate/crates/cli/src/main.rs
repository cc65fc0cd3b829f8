//! `formant-tracker`: the full pipeline as subcommands.
//!
//! `synth` makes a ground-truthed corpus, `features` caches normalized
//! features, `train` fits the network, `track` and `baseline` produce
//! prediction tracks, `eval` scores them and `gradcheck` verifies the
//! gradient engine. Every subcommand is deterministic given its inputs and
//! `--seed` and writes outputs byte-for-byte reproducibly (sole exception:
//! the wall-clock seconds column of the training log).
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical
//! failure. Failures print exactly one line to stderr in the form
//! `error[<kind>]: <message>`.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use formant_tracker::baseline::{track_baseline, BaselineConfig};
use formant_tracker::dsp::features::{apply_norm, extract_features, fit_norm};
use formant_tracker::dsp::{AudioClip, FrameSpec};
use formant_tracker::error::ErrorKind;
use formant_tracker::eval::{evaluate, plot_data_csv, EvalConfig, PhoneClassMap};
use formant_tracker::io::{
    read_label_csv, read_manifest, read_norm_stats, read_track_csv, read_wav, write_atomic,
    write_feature_cache, write_norm_stats, write_track_csv, LABEL_HEADER,
};
use formant_tracker::model::{self, gradcheck_network, predict_utterance, ModelConfig};
use formant_tracker::nn::gradcheck::op_suite;
use formant_tracker::synth::{make_corpus, SAMPLE_RATE};
use formant_tracker::track::FormantTrack;
use formant_tracker::train::{self, into_train_utterances, load_manifest_features, write_records};
use formant_tracker::{Error, Result};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "formant-tracker", version, about = "Formant tracking toolkit")]
struct Cli {
    /// Cap on worker threads (the pipeline is currently single-threaded)
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/val/test corpus with exact formant labels
    Synth(SynthArgs),
    /// Extract per-frame features for every utterance in a manifest
    Features(FeaturesArgs),
    /// Train the tracking network and keep the best-validation weights
    Train(TrainArgs),
    /// Run the trained network over one utterance
    Track(TrackArgs),
    /// Run the classical LPC root-picking tracker over one utterance
    Baseline(BaselineArgs),
    /// Score a prediction track against reference labels
    Eval(EvalArgs),
    /// Verify analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
}

/// Analysis framing flags shared by the audio-consuming subcommands.
#[derive(Args)]
struct FrameArgs {
    /// Analysis window length in milliseconds
    #[arg(long, default_value_t = 30.0, value_name = "MS")]
    window_ms: f64,
    /// Hop between analysis windows in milliseconds
    #[arg(long, default_value_t = 10.0, value_name = "MS")]
    hop_ms: f64,
}

impl FrameArgs {
    fn spec(&self) -> Result<FrameSpec> {
        let spec = FrameSpec { window_ms: self.window_ms, hop_ms: self.hop_ms };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Training utterances to generate
    #[arg(long, value_name = "N")]
    train: usize,
    /// Validation utterances to generate
    #[arg(long, value_name = "N")]
    val: usize,
    /// Test utterances to generate
    #[arg(long, value_name = "N")]
    test: usize,
    /// Root seed; corpus streams are labeled per split and utterance
    #[arg(long, default_value_t = 0, value_name = "S")]
    seed: u64,
    /// Output directory (created if missing)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Manifest listing the utterances to process
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Directory for the .feat caches (created if missing)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Fit normalization stats on this manifest, write them to FILE and
    /// normalize the caches with them
    #[arg(long, value_name = "FILE", conflicts_with = "norm")]
    fit_norm: Option<PathBuf>,
    /// Normalize the caches with existing stats
    #[arg(long, value_name = "FILE")]
    norm: Option<PathBuf>,
    /// Accept sample rates other than 16 kHz (window sizes derive from ms)
    #[arg(long)]
    allow_any_rate: bool,
    #[command(flatten)]
    frame: FrameArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration file (key = value); the flags below override it
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Manifest of training utterances
    #[arg(long, value_name = "FILE")]
    train_manifest: PathBuf,
    /// Manifest of validation utterances
    #[arg(long, value_name = "FILE")]
    val_manifest: PathBuf,
    /// Normalization stats from `features --fit-norm`
    #[arg(long, value_name = "FILE")]
    norm: PathBuf,
    /// Where to write the best-validation weights
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Where to write the per-epoch record CSV
    #[arg(long, value_name = "FILE")]
    log: PathBuf,
    /// Override the config seed
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Override the config epoch cap
    #[arg(long, value_name = "N")]
    max_epochs: Option<usize>,
    /// Override the config batch size (utterances per batch)
    #[arg(long, value_name = "N")]
    batch: Option<usize>,
    /// Override the initial learning rate
    #[arg(long, value_name = "LR")]
    lr: Option<f64>,
    /// Override the learning rate used after epoch 50
    #[arg(long, value_name = "LR")]
    lr_after_50: Option<f64>,
    /// Accept sample rates other than 16 kHz
    #[arg(long)]
    allow_any_rate: bool,
    /// Suppress the per-epoch progress lines
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct TrackArgs {
    /// Trained weights from `train`
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Normalization stats the model was trained with
    #[arg(long, value_name = "FILE")]
    norm: PathBuf,
    /// Input WAV (16 kHz mono PCM16)
    #[arg(long = "in", value_name = "WAV")]
    input: PathBuf,
    /// Output prediction-track CSV
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
    /// Accept sample rates other than 16 kHz
    #[arg(long)]
    allow_any_rate: bool,
    #[command(flatten)]
    frame: FrameArgs,
}

#[derive(Args)]
struct BaselineArgs {
    /// Input WAV (16 kHz mono PCM16)
    #[arg(long = "in", value_name = "WAV")]
    input: PathBuf,
    /// Output prediction-track CSV
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
    /// LPC analysis order
    #[arg(long, default_value_t = 12, value_name = "P")]
    order: usize,
    /// Reject root candidates at or above this bandwidth (Hz)
    #[arg(long, default_value_t = 400.0, value_name = "HZ")]
    max_bandwidth: f64,
    /// Lower edge of the admissible frequency band (Hz)
    #[arg(long, default_value_t = 90.0, value_name = "HZ")]
    min_freq: f64,
    /// Margin below Nyquist excluded from the admissible band (Hz)
    #[arg(long, default_value_t = 50.0, value_name = "HZ")]
    top_margin: f64,
    /// Apply a 3-frame median filter to each formant slot
    #[arg(long)]
    median: bool,
    /// Pre-emphasis coefficient (0 disables the filter)
    #[arg(long, default_value_t = 0.97, value_name = "C")]
    preemphasis: f64,
    /// Accept sample rates other than 16 kHz
    #[arg(long)]
    allow_any_rate: bool,
    #[command(flatten)]
    frame: FrameArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction track CSV (plain track or label format)
    #[arg(long, value_name = "CSV")]
    pred: PathBuf,
    /// Reference label CSV
    #[arg(long = "ref", value_name = "CSV")]
    reference: PathBuf,
    /// Phone-to-class map file; defaults to the bundled TIMIT map
    #[arg(long, value_name = "FILE")]
    classmap: Option<PathBuf>,
    /// Output report CSV
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
    /// Frames kept on each side of a transition boundary
    #[arg(long, default_value_t = 3, value_name = "N")]
    transition_window: usize,
    /// Also print the report as an aligned table
    #[arg(long)]
    table: bool,
    /// Also write per-frame reference/prediction pairs for plotting
    #[arg(long, value_name = "CSV")]
    plot_data: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the probe inputs, weights and masks
    #[arg(long, default_value_t = 0, value_name = "S")]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = match e.kind() {
                ErrorKind::Usage => ("usage", 2),
                ErrorKind::Data => ("data", 3),
                ErrorKind::Numerical => ("numerical", 4),
            };
            eprintln!("error[{kind}]: {e}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::InvalidParam("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Features(a) => run_features(a),
        Command::Train(a) => run_train(a),
        Command::Track(a) => run_track(a),
        Command::Baseline(a) => run_baseline(a),
        Command::Eval(a) => run_eval(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    }
}

/// Input paths are checked up front so a typo fails as a usage error
/// before any output is touched; unreadable content is a data error.
fn require_files(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::InvalidParam(format!("input file {} does not exist", p.display())));
        }
    }
    Ok(())
}

fn expected_rate(allow_any: bool) -> Option<u32> {
    if allow_any {
        None
    } else {
        Some(SAMPLE_RATE)
    }
}

fn read_wav_checked(path: &Path, allow_any_rate: bool) -> Result<AudioClip> {
    let clip = read_wav(path)?;
    if let Some(rate) = expected_rate(allow_any_rate) {
        if clip.sample_rate != rate {
            return Err(Error::SampleRateMismatch { found: clip.sample_rate, expected: rate });
        }
    }
    Ok(clip)
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let m = make_corpus(a.train, a.val, a.test, a.seed, &a.out)?;
    for (n, path) in [(a.train, &m.train), (a.val, &m.val), (a.test, &m.test)] {
        println!("wrote {} ({n} utterances)", path.display());
    }
    Ok(())
}

fn run_features(a: FeaturesArgs) -> Result<()> {
    require_files(&[&a.manifest])?;
    if let Some(norm) = &a.norm {
        require_files(&[norm])?;
    }
    let spec = a.frame.spec()?;
    let entries = read_manifest(&a.manifest)?;
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut features = Vec::with_capacity(entries.len());
    let mut names = Vec::with_capacity(entries.len());
    for e in &entries {
        let clip = read_wav_checked(&e.audio_path, a.allow_any_rate)?;
        features.push(extract_features(&clip, &spec)?);
        let stem = e.audio_path.file_stem().and_then(|s| s.to_str()).ok_or_else(|| {
            Error::Parse(format!("manifest audio path {} has no stem", e.audio_path.display()))
        })?;
        let name = format!("{stem}.feat");
        if names.contains(&name) {
            return Err(Error::Parse(format!("feature cache name {name} collides")));
        }
        names.push(name);
    }

    let stats = match (&a.fit_norm, &a.norm) {
        (Some(path), None) => {
            let stats = fit_norm(&features)?;
            write_norm_stats(path, &stats)?;
            println!("wrote {}", path.display());
            Some(stats)
        }
        (None, Some(path)) => Some(read_norm_stats(path)?),
        (None, None) => None,
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };

    fs::create_dir_all(&a.out)?;
    for (fm, name) in features.iter_mut().zip(&names) {
        if let Some(stats) = &stats {
            apply_norm(fm, stats);
        }
        write_feature_cache(&a.out.join(name), fm)?;
    }
    println!(
        "wrote {} feature caches to {} ({})",
        names.len(),
        a.out.display(),
        if stats.is_some() { "normalized" } else { "unnormalized" }
    );
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut inputs: Vec<&Path> = vec![&a.train_manifest, &a.val_manifest, &a.norm];
    if let Some(cfg) = &a.config {
        inputs.push(cfg);
    }
    require_files(&inputs)?;

    let mut cfg = match &a.config {
        Some(path) => RunConfig::parse(&fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = a.max_epochs {
        cfg.train.max_epochs = epochs;
    }
    if let Some(batch) = a.batch {
        cfg.train.batch_utterances = batch;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr_initial = lr;
    }
    if let Some(lr) = a.lr_after_50 {
        cfg.train.lr_after_epoch50 = lr;
    }
    cfg.train.validate()?;

    let stats = read_norm_stats(&a.norm)?;
    let rate = expected_rate(a.allow_any_rate);
    let train_set =
        into_train_utterances(load_manifest_features(&a.train_manifest, &cfg.frame, rate)?, &stats)?;
    let val_set =
        into_train_utterances(load_manifest_features(&a.val_manifest, &cfg.frame, rate)?, &stats)?;

    let outcome = train::train(&cfg.model, &cfg.train, &train_set, &val_set, |r| {
        if !a.quiet {
            println!(
                "epoch {:3}  train {:.4}  val {:.4}  lr {}  {:.1}s",
                r.epoch, r.train_loss, r.val_loss, r.lr, r.seconds
            );
        }
        true
    })?;

    model::save(&outcome.weights, &a.out)?;
    write_records(&a.log, &outcome.records)?;
    println!(
        "best epoch {} (val {:.4}); wrote {} and {}",
        outcome.best_epoch,
        outcome.records[outcome.best_epoch - 1].val_loss,
        a.out.display(),
        a.log.display()
    );
    Ok(())
}

fn run_track(a: TrackArgs) -> Result<()> {
    require_files(&[&a.model, &a.norm, &a.input])?;
    let weights = model::load(&a.model)?;
    let stats = read_norm_stats(&a.norm)?;
    let clip = read_wav_checked(&a.input, a.allow_any_rate)?;
    let mut features = extract_features(&clip, &a.frame.spec()?)?;
    apply_norm(&mut features, &stats);
    let preds = predict_utterance(&weights, &features)?;
    let track = FormantTrack::from_predictions(&preds);
    write_track_csv(&a.out, &track)?;
    println!("wrote {} ({} frames)", a.out.display(), track.len());
    Ok(())
}

fn run_baseline(a: BaselineArgs) -> Result<()> {
    require_files(&[&a.input])?;
    let clip = read_wav_checked(&a.input, a.allow_any_rate)?;
    let cfg = BaselineConfig {
        order: a.order,
        max_bandwidth_hz: a.max_bandwidth,
        min_freq_hz: a.min_freq,
        top_margin_hz: a.top_margin,
        median_filter: a.median,
        preemphasis: a.preemphasis,
        frame: a.frame.spec()?,
        ..BaselineConfig::default()
    };
    let track = track_baseline(&clip, &cfg)?;
    write_track_csv(&a.out, &track)?;
    println!("wrote {} ({} frames)", a.out.display(), track.len());
    Ok(())
}

/// Reads a prediction in either CSV format, so reference label files can be
/// scored directly (e.g. to check that a reference scores zero against
/// itself).
fn read_pred_csv(path: &Path) -> Result<FormantTrack> {
    let first = fs::read_to_string(path)?.lines().next().unwrap_or_default().trim().to_string();
    if first == LABEL_HEADER.join(",") {
        read_label_csv(path)
    } else {
        read_track_csv(path)
    }
}

fn run_eval(a: EvalArgs) -> Result<()> {
    require_files(&[&a.pred, &a.reference])?;
    if let Some(map) = &a.classmap {
        require_files(&[map])?;
    }
    let map = match &a.classmap {
        Some(path) => PhoneClassMap::parse(&fs::read_to_string(path)?)?,
        None => PhoneClassMap::default_map(),
    };
    let pred = read_pred_csv(&a.pred)?;
    let reference = read_label_csv(&a.reference)?;
    let cfg = EvalConfig { transition_window: a.transition_window };
    let report = evaluate(&pred, &reference, &map, &cfg)?;
    report.write_csv(&a.out)?;
    if let Some(path) = &a.plot_data {
        write_atomic(path, plot_data_csv(&pred, &reference)?.as_bytes())?;
        println!("wrote {}", path.display());
    }
    if a.table {
        print!("{}", report.table());
    }
    println!("wrote {} ({} rows)", a.out.display(), report.rows.len());
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> Result<()> {
    // the tiny network: full depth, every operator, but narrow enough
    // for central differences over every parameter in seconds
    let tiny = ModelConfig {
        channels: 4,
        head_width: 6,
        input_dim: 5,
        dropout_p: 0.0,
        ..ModelConfig::default()
    };
    let mut rows = op_suite(a.seed);
    rows.extend(gradcheck_network(&tiny, 2, 16, a.seed)?);

    let mut failed = 0;
    for row in &rows {
        let status = if row.pass() { "ok" } else { "FAIL" };
        let note = if row.flat { "  (flat direction: |grad| bound)" } else { "" };
        println!("{status:4} {:<28} {:10.3e}  < {:.1e}{note}", row.name, row.value, row.bound);
        if !row.pass() {
            failed += 1;
        }
    }
    println!("gradcheck: {} of {} entries within tolerance", rows.len() - failed, rows.len());
    if failed > 0 {
        return Err(Error::GradcheckFailed { failed, total: rows.len() });
    }
    Ok(())
}
