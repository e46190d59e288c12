//! `tunedetect`: retune vocals, build pair datasets, train the detector and
//! evaluate it.
//!
//! Exit status: 0 on success, 1 when `detect --gate` flags the input, 2 on
//! any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tunedetect::audio::{load_wav, save_wav};
use tunedetect::corpus::{self, DatasetManifest, DatasetTag, Split};
use tunedetect::features::MelExtractor;
use tunedetect::nn::{load_classifier, load_embedder, save_classifier, save_embedder};
use tunedetect::pipeline::{
    self, robustness_eval, song_verdict_with, threshold_sweep, write_provenance, write_segment_csv, CountMode,
    Detector, PipelineConfig, RobustnessMode,
};
use tunedetect::retune::AutoTuner;

#[derive(Parser)]
#[command(name = "tunedetect", version, about = "Auto-Tune simulation and detection")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Retune a vocal WAV to the nearest equal-tempered notes.
    Tune {
        input: PathBuf,
        output: PathBuf,
        /// Also write the source pitch track as CSV.
        #[arg(long)]
        pitch_csv: Option<PathBuf>,
    },
    /// Dataset construction.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Compute and cache segment mel-spectrograms for a manifest.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        split: Option<SplitArg>,
    },
    /// Model training.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Score one file and print the song verdict.
    Detect {
        input: PathBuf,
        #[command(flatten)]
        models: ModelArgs,
        /// Per-segment likelihoods as CSV.
        #[arg(long)]
        segments: Option<PathBuf>,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        /// Exit with status 1 when the song is flagged.
        #[arg(long)]
        gate: bool,
    },
    /// Song-level threshold sweep over a song-pair manifest.
    Sweep {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Evaluation under MP3 compression or random post-processing.
    Robustness {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Where to record what was applied to each song (TOML).
        #[arg(long)]
        provenance: Option<PathBuf>,
        /// Overrides the augmentation seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Build pairs for one dataset.
    Build {
        #[arg(long, value_enum)]
        dataset: DatasetArg,
        /// Source directory (recordings for d1, song stems otherwise).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of synthetic pairs.
        #[arg(long)]
        pairs: Option<usize>,
        /// Synthetic vocals without accompaniment.
        #[arg(long)]
        no_accompaniment: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum TrainCommand {
    /// Train the embedder with semi-hard triplet mining.
    Embedder {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the classifier on embeddings of a frozen embedder.
    Classifier {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        embedder: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Mel cache directory (filled on first use).
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    embedder: PathBuf,
    #[arg(long)]
    classifier: PathBuf,
}

#[derive(Args)]
struct ThresholdArgs {
    /// Segment likelihood threshold.
    #[arg(long)]
    segment_threshold: Option<f64>,
    /// Minimum number of positive segments.
    #[arg(long, conflicts_with = "fraction_threshold")]
    count_threshold: Option<usize>,
    /// Minimum share of positive segments.
    #[arg(long)]
    fraction_threshold: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    models: ModelArgs,
    /// Report CSV.
    #[arg(long)]
    out: PathBuf,
    /// Split to evaluate (default: test).
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[command(flatten)]
    thresholds: ThresholdArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    D1,
    D2,
    D3,
    D4,
    Synth,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mp3,
    RandomProcessing,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Tune { input, output, pitch_csv } => {
            let vocal = load_wav(&input)?;
            let tuner = AutoTuner::new(cfg.pitch.clone(), vocal.sample_rate())?;
            let (tuned, track) = tuner.process_with_track(&vocal)?;
            save_wav(&output, &tuned)?;
            if let Some(p) = pitch_csv {
                track.write_csv(p)?;
            }
        }
        Command::Dataset(DatasetCommand::Build {
            dataset,
            input,
            out,
            pairs,
            no_accompaniment,
            seed,
        }) => {
            if let Some(s) = seed {
                cfg.build.seed = s;
                cfg.synth.seed = s;
            }
            build_dataset(&cfg, dataset, input.as_deref(), &out, pairs, no_accompaniment)?;
        }
        Command::Features { manifest, cache, split } => {
            let m = DatasetManifest::read_csv(&manifest)?;
            let extractor = MelExtractor::new(cfg.features.clone())?;
            let feats = pipeline::pair_features(&m, split.and_then(SplitArg::split), &extractor, cfg.detection.gate_ratio, Some(&cache))?;
            let n: usize = feats.iter().map(|p| p.negative.len() + p.positive.len()).sum();
            println!("cached {n} segments from {} pairs in {}", feats.len(), cache.display());
        }
        Command::Train(TrainCommand::Embedder {
            data,
            out,
            history,
            epochs,
            seed,
        }) => {
            if let Some(e) = epochs {
                cfg.embedder.max_epochs = e;
            }
            if let Some(s) = seed {
                cfg.embedder.seed = s;
            }
            let (train, val) = load_features(&cfg, &data)?;
            let (model, hist) = pipeline::fit_embedder(&train, &val, &cfg.embedder)?;
            let hash = save_embedder(&out, &model)?;
            if let Some(p) = history {
                hist.write_csv(p)?;
            }
            println!("embedder {} sha256 {hash} best_epoch {}", out.display(), fmt_opt(hist.best_epoch));
        }
        Command::Train(TrainCommand::Classifier {
            data,
            embedder,
            out,
            history,
            epochs,
            seed,
        }) => {
            if let Some(e) = epochs {
                cfg.classifier.max_epochs = e;
            }
            if let Some(s) = seed {
                cfg.classifier.seed = s;
            }
            let emb = load_embedder(&embedder)?;
            let (train, val) = load_features(&cfg, &data)?;
            let (model, hist) = pipeline::fit_classifier(&emb, &train, &val, &cfg.classifier)?;
            let hash = save_classifier(&out, &model)?;
            if let Some(p) = history {
                hist.write_csv(p)?;
            }
            println!("classifier {} sha256 {hash} best_epoch {}", out.display(), fmt_opt(hist.best_epoch));
        }
        Command::Detect {
            input,
            models,
            segments,
            thresholds,
            gate,
        } => {
            apply_thresholds(&mut cfg, &thresholds)?;
            let detector = detector(&cfg, &models)?;
            let scores = detector.detect(&load_wav(&input)?)?;
            if let Some(p) = segments {
                write_segment_csv(p, &scores)?;
            }
            let y: Vec<f32> = scores.iter().map(|s| s.likelihood).collect();
            let v = song_verdict_with(&y, cfg.detection.segment_threshold, cfg.detection.threshold())?;
            println!(
                "{}: autotuned={} positive_segments={}/{} count_threshold={}{}",
                input.display(),
                v.is_autotuned,
                pipeline::count_above(&y, v.segment_threshold),
                v.n_segments,
                v.count_threshold,
                if detector.separator.is_none() { " (input treated as isolated vocal)" } else { "" }
            );
            if gate && v.is_autotuned {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Sweep { eval } => {
            apply_thresholds(&mut cfg, &eval.thresholds)?;
            let (detector, manifest) = eval_inputs(&cfg, &eval)?;
            let (report, _) = threshold_sweep(&detector, &manifest, cfg.detection.segment_threshold, &cfg.detection.sweep())?;
            report.write_csv(&eval.out)?;
            print_summary(&report);
        }
        Command::Robustness {
            eval,
            mode,
            provenance,
            seed,
        } => {
            apply_thresholds(&mut cfg, &eval.thresholds)?;
            if let Some(s) = seed {
                cfg.augment.seed = s;
            }
            let (detector, manifest) = eval_inputs(&cfg, &eval)?;
            let mode = match mode {
                ModeArg::Mp3 => RobustnessMode::Mp3,
                ModeArg::RandomProcessing => RobustnessMode::RandomProcessing,
            };
            let codec = cfg.codec();
            let (report, records) = robustness_eval(
                &detector,
                &manifest,
                &cfg.augment,
                mode,
                codec.as_ref(),
                cfg.detection.segment_threshold,
                &cfg.detection.sweep(),
            )?;
            report.write_csv(&eval.out)?;
            if let Some(p) = provenance {
                write_provenance(p, &records)?;
            }
            print_summary(&report);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map_or_else(|| "-".into(), |e| e.to_string())
}

fn build_dataset(
    cfg: &PipelineConfig,
    dataset: DatasetArg,
    input: Option<&Path>,
    out: &Path,
    pairs: Option<usize>,
    no_accompaniment: bool,
) -> Result<()> {
    let need_input = || input.context("--input is required for this dataset");
    let manifests = match dataset {
        DatasetArg::Synth => {
            let mut synth = cfg.synth.clone();
            if let Some(n) = pairs {
                synth.n_pairs = n;
            }
            if no_accompaniment {
                synth.with_accompaniment = false;
            }
            vec![corpus::build_synth_corpus(&synth, &cfg.pitch, out)?]
        }
        DatasetArg::D1 => vec![corpus::build_d1(need_input()?, out, &build_options(cfg))?],
        DatasetArg::D2 | DatasetArg::D3 => {
            let (d2, d3) = corpus::build_d2_d3(need_input()?, out, &build_options(cfg))?;
            vec![d2, d3]
        }
        DatasetArg::D4 => vec![corpus::build_d4(need_input()?, out, &build_options(cfg))?],
    };
    for m in manifests {
        let count = |s| m.split(s).count();
        println!(
            "{} {} pairs (train {}, val {}, test {}) -> {}",
            m.dataset,
            m.len(),
            count(Split::Train),
            count(Split::Val),
            count(Split::Test),
            m.root.join(corpus::MANIFEST_FILE).display()
        );
    }
    Ok(())
}

fn build_options(cfg: &PipelineConfig) -> corpus::BuildOptions {
    corpus::BuildOptions {
        pitch: cfg.pitch.clone(),
        ..cfg.build.clone()
    }
}

fn load_features(cfg: &PipelineConfig, data: &DataArgs) -> Result<(Vec<pipeline::PairFeatures>, Vec<pipeline::PairFeatures>)> {
    let m = DatasetManifest::read_csv(&data.manifest)?;
    if m.dataset == DatasetTag::D4 {
        bail!("{} is a test-only dataset", data.manifest.display());
    }
    let extractor = MelExtractor::new(cfg.features.clone())?;
    let load = |s| pipeline::pair_features(&m, Some(s), &extractor, cfg.detection.gate_ratio, data.cache.as_deref());
    let train = load(Split::Train)?;
    if train.is_empty() {
        bail!("{} has no training pairs", data.manifest.display());
    }
    Ok((train, load(Split::Val)?))
}

fn apply_thresholds(cfg: &mut PipelineConfig, t: &ThresholdArgs) -> Result<()> {
    let d = &mut cfg.detection;
    if let Some(s) = t.segment_threshold {
        d.segment_threshold = s;
    }
    if let Some(c) = t.count_threshold {
        d.count_mode = CountMode::Count;
        d.count_threshold = c;
    }
    if let Some(f) = t.fraction_threshold {
        d.count_mode = CountMode::Fraction;
        d.fraction_threshold = f;
    }
    d.validate()?;
    Ok(())
}

fn detector(cfg: &PipelineConfig, models: &ModelArgs) -> Result<Detector> {
    let embedder = load_embedder(&models.embedder).with_context(|| format!("loading {}", models.embedder.display()))?;
    let classifier =
        load_classifier(&models.classifier).with_context(|| format!("loading {}", models.classifier.display()))?;
    let mut d = Detector::new(embedder, classifier).with_separator(cfg.separator());
    d.extractor = MelExtractor::new(cfg.features.clone())?;
    d.gate_ratio = cfg.detection.gate_ratio;
    Ok(d)
}

fn eval_inputs(cfg: &PipelineConfig, eval: &EvalArgs) -> Result<(Detector, DatasetManifest)> {
    let detector = detector(cfg, &eval.models)?;
    let mut manifest = DatasetManifest::read_csv(&eval.manifest)?;
    if let Some(s) = eval.split.split() {
        manifest = manifest.subset(s);
    }
    if manifest.is_empty() {
        bail!("{}: no pairs in the requested split", eval.manifest.display());
    }
    Ok((detector, manifest))
}

fn print_summary(report: &pipeline::EvalReport) {
    println!(
        "{}: {} songs, {} segments; segment precision {:.2} recall {:.2} accuracy {:.2}",
        report.condition,
        report.n_songs,
        report.n_segments,
        report.precision(),
        report.recall(),
        report.accuracy()
    );
    if let Some(best) = report.best_song_point() {
        let (mode, thr) = best.threshold.label();
        println!("best song accuracy {:.2} at {mode} {thr}", best.metrics.accuracy);
    }
    if !report.separated {
        println!("note: no separator configured; inputs were scored as isolated vocals");
    }
}
