//! `mitograde`: the grading pipeline as composable subcommands.
//!
//! Exit status: 0 on success, 1 on invalid input (bad flags, schema or
//! integrity violations, numerical failures), 2 on I/O errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mitograde::grading::{LogisticParams, ModelKind};
use mitograde::ingest::CorpusPaths;
use mitograde::mc_density::SearchMode;
use mitograde::pipeline::{self, EvalSource, FitConfig, Manifest, RoiConfig, SynthScenario};
use mitograde::synth::{FeatureSpec, GradingCorpusSpec, PlantedRule, ThresholdCaseSpec};
use mitograde::Error;

#[derive(Parser, Debug)]
#[command(name = "mitograde", version, about = "Mitotic-count hotspot search and meningioma grading")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, env = "MITOGRADE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with planted ground truth.
    Synth(SynthArgs),
    /// Per-slide non-maximum suppression of a detections table.
    Nms(NmsArgs),
    /// Find the confidence cut-off maximizing F1 against annotations.
    Threshold(ThresholdArgs),
    /// Locate each slide's mitotic-count hotspot window.
    Roi(RoiArgs),
    /// Train grading models.
    Fit(FitArgs),
    /// Score patients with trained models.
    Predict(PredictArgs),
    /// Correlations, MSE and rounded-grade accuracy of predictions.
    Evaluate(EvaluateArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Scenario {
    Grading,
    Threshold,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Rule {
    Cutoffs,
    Logistic,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Scenario::Grading)]
    scenario: Scenario,
    /// Number of patients (grading scenario).
    #[arg(long, default_value_t = 341)]
    patients: usize,
    #[arg(long, default_value_t = 3)]
    max_slides: usize,
    /// Grade rule: MC cut-offs 4 / 15, or the initial logistic curve.
    #[arg(long, value_enum, default_value_t = Rule::Cutoffs)]
    rule: Rule,
    /// Gaussian noise on the latent grade before rounding.
    #[arg(long, default_value_t = 0.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    mc_min: u32,
    #[arg(long, default_value_t = 40)]
    mc_max: u32,
    /// Patch feature dimension; 0 writes no features.
    #[arg(long, default_value_t = 0)]
    feature_dim: usize,
    #[arg(long, default_value_t = 4)]
    patches_per_slide: usize,
    #[arg(long, default_value_t = 2.0)]
    feature_signal: f64,
    /// Number of annotated slides (threshold scenario).
    #[arg(long, default_value_t = 4)]
    slides: usize,
    #[arg(long, default_value_t = 150)]
    truths_per_slide: usize,
    /// Confidence separating planted true from false positives.
    #[arg(long, default_value_t = 0.4)]
    separation: f64,
}

#[derive(Args, Debug)]
struct NmsArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Boxes overlapping a kept box with IoU above this are removed.
    #[arg(long, default_value_t = mitograde::nms::DEFAULT_IOU_THRESHOLD)]
    iou: f64,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    truths: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Maximum center distance in pixels for a detection to hit a truth.
    #[arg(long, default_value_t = mitograde::threshold_opt::DEFAULT_MATCH_RADIUS_PX)]
    radius: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exact,
    Strided,
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Directory holding slides.csv, detections.csv, labels.csv and
    /// optionally features.csv.
    #[arg(long)]
    corpus: PathBuf,
    /// Use this detections table instead of the corpus one (e.g. `nms`
    /// output).
    #[arg(long)]
    detections: Option<PathBuf>,
}

impl CorpusArgs {
    fn paths(&self) -> CorpusPaths {
        let mut p = CorpusPaths::in_dir(&self.corpus);
        if let Some(d) = &self.detections {
            p.detections = d.clone();
        }
        p
    }
}

#[derive(Args, Debug)]
struct RoiArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2.5)]
    area_mm2: f64,
    /// Width:height ratio, as `W:H` or a number.
    #[arg(long, default_value = "4:3", value_parser = parse_aspect)]
    aspect: f64,
    #[arg(long, value_enum, default_value_t = Mode::Exact)]
    mode: Mode,
    /// Grid pitch in pixels for `--mode strided`.
    #[arg(long)]
    stride: Option<f64>,
    /// Ignore detections below this confidence.
    #[arg(long, default_value_t = 0.0)]
    min_confidence: f64,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    roi: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// mc, image or combined.
    #[arg(long, default_value = "mc", value_parser = parse_kind)]
    model: ModelKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of fits; run r uses seed + r and its own patient split.
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    roi: PathBuf,
    /// Model files; prediction run r uses the r-th.
    #[arg(long = "model", required = true, num_args = 1..)]
    models: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Evaluate an existing predictions table.
    #[arg(long, conflicts_with_all = ["corpus", "roi", "models", "models_dir"])]
    predictions: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    roi: Option<PathBuf>,
    #[arg(long = "model", num_args = 1..)]
    models: Vec<PathBuf>,
    /// Use every model_run*.json in this directory (e.g. `fit` output).
    #[arg(long)]
    models_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write (MC, predicted score) pairs.
    #[arg(long)]
    plot_data: bool,
}

fn parse_aspect(s: &str) -> Result<f64, String> {
    let v = match s.split_once(':') {
        Some((w, h)) => {
            let w: f64 = w.trim().parse().map_err(|_| format!("bad aspect {s:?}"))?;
            let h: f64 = h.trim().parse().map_err(|_| format!("bad aspect {s:?}"))?;
            w / h
        }
        None => s.trim().parse().map_err(|_| format!("bad aspect {s:?}"))?,
    };
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("aspect must be positive, got {s:?}"))
    }
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn model_files(dir: &std::path::Path) -> Result<Vec<PathBuf>, Error> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut runs: Vec<(usize, PathBuf)> = Vec::new();
    for e in entries {
        let e = e.map_err(|err| Error::Io {
            path: dir.to_path_buf(),
            source: err,
        })?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(r) = name
            .strip_prefix("model_run")
            .and_then(|n| n.strip_suffix(".json"))
            .and_then(|n| n.parse().ok())
        {
            runs.push((r, e.path()));
        }
    }
    runs.sort();
    if runs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no model_run*.json files in {}",
            dir.display()
        )));
    }
    Ok(runs.into_iter().map(|(_, p)| p).collect())
}

fn synth(a: &SynthArgs) -> Result<Manifest, Error> {
    let scenario = match a.scenario {
        Scenario::Grading => {
            let mut spec = GradingCorpusSpec::new(a.patients);
            spec.max_slides_per_patient = a.max_slides;
            spec.noise_sd = a.noise_sd;
            spec.mc_range = (a.mc_min, a.mc_max);
            spec.rule = match a.rule {
                Rule::Cutoffs => PlantedRule::DEFAULT_CUTOFFS,
                Rule::Logistic => PlantedRule::Logistic(LogisticParams::INITIAL),
            };
            if a.feature_dim > 0 {
                spec.features = Some(FeatureSpec {
                    dim: a.feature_dim,
                    patches_per_slide: a.patches_per_slide,
                    signal: a.feature_signal,
                });
            }
            SynthScenario::Grading(spec)
        }
        Scenario::Threshold => SynthScenario::Threshold(ThresholdCaseSpec {
            n_slides: a.slides,
            truths_per_slide: a.truths_per_slide,
            separation: a.separation,
            ..ThresholdCaseSpec::default()
        }),
    };
    pipeline::run_synth(&a.out, a.seed, &scenario)
}

fn roi(a: &RoiArgs) -> Result<Manifest, Error> {
    let mode = match (a.mode, a.stride) {
        (Mode::Exact, None) => SearchMode::Exact,
        (Mode::Exact, Some(_)) => {
            return Err(Error::InvalidArgument("--stride requires --mode strided".into()))
        }
        (Mode::Strided, Some(stride_px)) => SearchMode::Strided { stride_px },
        (Mode::Strided, None) => {
            return Err(Error::InvalidArgument("--mode strided requires --stride".into()))
        }
    };
    let config = RoiConfig {
        area_mm2: a.area_mm2,
        aspect: a.aspect,
        mode,
        min_confidence: a.min_confidence,
    };
    pipeline::run_roi(&a.corpus.paths(), &a.out, &config)
}

fn fit(a: &FitArgs) -> Result<Manifest, Error> {
    let mut config = FitConfig::new(a.model, a.seed, a.runs);
    if let Some(v) = a.learning_rate {
        config.train.learning_rate = v;
    }
    if let Some(v) = a.max_epochs {
        config.train.max_epochs = v;
    }
    if let Some(v) = a.patience {
        config.train.patience = v;
    }
    if let Some(v) = a.val_fraction {
        config.train.val_fraction = v;
    }
    pipeline::run_fit(&a.corpus.paths(), &a.roi, &a.out, &config)
}

fn evaluate(a: &EvaluateArgs) -> Result<Manifest, Error> {
    let source = match &a.predictions {
        Some(p) => EvalSource::Predictions(p.clone()),
        None => {
            let (Some(corpus), Some(roi)) = (&a.corpus, &a.roi) else {
                return Err(Error::InvalidArgument(
                    "evaluate needs --predictions, or --corpus and --roi with models".into(),
                ));
            };
            let mut models = a.models.clone();
            if let Some(dir) = &a.models_dir {
                models.extend(model_files(dir)?);
            }
            let mut paths = CorpusPaths::in_dir(corpus);
            if let Some(d) = &a.detections {
                paths.detections = d.clone();
            }
            EvalSource::Models {
                corpus: paths,
                roi: roi.clone(),
                models,
            }
        }
    };
    pipeline::run_evaluate(&source, &a.out, a.plot_data)
}

fn run(cli: &Cli) -> Result<Manifest, Error> {
    pipeline::with_threads(cli.threads, || match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Nms(a) => pipeline::run_nms(&a.detections, &a.out, a.iou),
        Command::Threshold(a) => pipeline::run_threshold(&a.detections, &a.truths, &a.out, a.radius),
        Command::Roi(a) => roi(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => pipeline::run_predict(&a.corpus.paths(), &a.roi, &a.models, &a.out),
        Command::Evaluate(a) => evaluate(a),
    })?
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(m) => {
            let out = m.outputs.iter().map(|o| o.name.as_str()).collect::<Vec<_>>();
            eprintln!("{}: wrote {}", m.stage, out.join(", "));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
