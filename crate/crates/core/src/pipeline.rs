//! File-based pipeline stages.
//!
//! Each stage reads its inputs, writes its outputs into a caller-named
//! directory and finishes with `manifest.json`: the stage name, crate
//! version, seed, flags, and SHA-256 digests of every input and output.
//! Manifests record file names rather than absolute paths, so runs in
//! different directories produce byte-identical trees.
//!
//! Stages never modify their inputs. Parallel work is merged in input
//! order, so outputs do not depend on the thread count.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grading::{
    select_slide_per_patient, train, GradingModel, ModelKind, TrainConfig,
    TrainOutcome, TrainingRow,
};
use crate::ingest::{
    self, csv_writer, finish, fmt_real, for_each_record, group_by_patient, load_corpus, non_empty,
    parse_int, parse_real, read_detections, read_truths, write_detections, write_slides,
    write_truths, Corpus, CorpusPaths,
};
use crate::mc_density::{mc_for_slide, SearchMode};
use crate::metrics::{evaluate as eval_cases, multi_run_summary, EvalReport, RunSummary};
use crate::nms::non_max_suppression;
use crate::synth::{gen_grading_corpus, gen_threshold_case, GradingCorpusSpec, ThresholdCaseSpec};
use crate::threshold_opt::{optimize_threshold_multi, GroundTruthAnnotation, SlideEvidence};
use crate::types::Detection;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ROI_FILE: &str = "roi.csv";
pub const THRESHOLD_FILE: &str = "threshold.json";
pub const PR_CURVE_FILE: &str = "pr_curve.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CASES_FILE: &str = "cases.csv";
pub const PLOT_DATA_FILE: &str = "plot_data.csv";

const ROI_HEADER: [&str; 6] = ["slide_id", "mc", "left", "top", "width", "height"];
const PREDICTIONS_HEADER: [&str; 6] = ["run", "patient_id", "slide_id", "mc", "score", "who_grade"];

/// Name and content digest of one file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub role: String,
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub seed: Option<u64>,
    pub flags: BTreeMap<String, Value>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digest(role: &str, path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        role: role.to_string(),
        name: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: sha256_file(path)?,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Stage {
    name: &'static str,
    out: PathBuf,
    seed: Option<u64>,
    flags: BTreeMap<String, Value>,
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
}

impl Stage {
    fn begin(name: &'static str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Stage {
            name,
            out: out.to_path_buf(),
            seed: None,
            flags: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn flag(&mut self, key: &str, value: impl Serialize) {
        self.flags.insert(
            key.to_string(),
            serde_json::to_value(value).unwrap_or(Value::Null),
        );
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(digest(role, path)?);
        Ok(())
    }

    fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn finish(self) -> Result<Manifest> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| digest("output", p))
            .collect::<Result<_>>()?;
        let m = Manifest {
            tool: "mitograde".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stage: self.name.into(),
            seed: self.seed,
            flags: self.flags,
            inputs: self.inputs,
            outputs,
        };
        write_json(&self.out.join(MANIFEST_FILE), &m)?;
        Ok(m)
    }
}

fn corpus_inputs(stage: &mut Stage, paths: &CorpusPaths) -> Result<()> {
    stage.input("slides", &paths.slides)?;
    stage.input("detections", &paths.detections)?;
    stage.input("labels", &paths.labels)?;
    if let Some(f) = &paths.features {
        stage.input("features", f)?;
    }
    Ok(())
}

/// Runs `f` on a pool of `threads` workers (`None` = rayon's default).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::invalid("thread count must be at least 1"));
        }
        b = b.num_threads(n);
    }
    let pool = b
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum SynthScenario {
    /// Patients with planted grades: slides, detections, labels and
    /// optionally features.
    Grading(GradingCorpusSpec),
    /// Annotated slides for the threshold sweep: slides, detections and
    /// truths.
    Threshold(ThresholdCaseSpec),
}

pub fn run_synth(out: &Path, seed: u64, scenario: &SynthScenario) -> Result<Manifest> {
    let mut stage = Stage::begin("synth", out)?;
    stage.seed = Some(seed);
    stage.flag("spec", scenario);
    match scenario {
        SynthScenario::Grading(spec) => {
            let corpus = gen_grading_corpus(seed, spec)?;
            let paths = ingest::save_corpus(&corpus, out)?;
            for p in paths.all() {
                stage.outputs.push(p.to_path_buf());
            }
        }
        SynthScenario::Threshold(spec) => {
            let case = gen_threshold_case(seed, spec)?;
            let slides: Vec<_> = case.iter().map(|(s, _)| s.clone()).collect();
            write_slides(&stage.output(ingest::SLIDES_FILE), &slides)?;
            let det_path = stage.output(ingest::DETECTIONS_FILE);
            write_detections(
                &det_path,
                slides
                    .iter()
                    .flat_map(|s| s.detections.iter().map(move |d| (s.slide_id.as_str(), d))),
            )?;
            let truths: Vec<GroundTruthAnnotation> =
                case.into_iter().flat_map(|(_, t)| t).collect();
            write_truths(&stage.output(ingest::TRUTHS_FILE), &truths)?;
        }
    }
    stage.finish()
}

/// Detections grouped by slide id, slides in sorted order, detections in
/// file order.
fn by_slide(rows: Vec<(u64, String, Detection)>) -> BTreeMap<String, Vec<Detection>> {
    let mut m: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (_, id, d) in rows {
        m.entry(id).or_default().push(d);
    }
    m
}

/// Per-slide non-maximum suppression of a detections table.
pub fn run_nms(detections: &Path, out: &Path, iou_threshold: f64) -> Result<Manifest> {
    let mut stage = Stage::begin("nms", out)?;
    stage.flag("iou", iou_threshold);
    stage.input("detections", detections)?;
    let grouped: Vec<(String, Vec<Detection>)> = by_slide(read_detections(detections)?).into_iter().collect();
    let kept: Vec<(String, Vec<Detection>)> = grouped
        .into_par_iter()
        .map(|(id, dets)| Ok((id, non_max_suppression(&dets, iou_threshold)?)))
        .collect::<Result<_>>()?;
    let path = stage.output(ingest::DETECTIONS_FILE);
    write_detections(
        &path,
        kept.iter()
            .flat_map(|(id, d)| d.iter().map(move |d| (id.as_str(), d))),
    )?;
    stage.finish()
}

/// Confidence cut-off maximizing F1 against annotations, pooled over
/// slides. Writes the optimum and the full curve.
pub fn run_threshold(
    detections: &Path,
    truths: &Path,
    out: &Path,
    radius_px: f64,
) -> Result<Manifest> {
    let mut stage = Stage::begin("threshold", out)?;
    stage.flag("radius", radius_px);
    stage.input("detections", detections)?;
    stage.input("truths", truths)?;
    let dets = by_slide(read_detections(detections)?);
    let mut anns: BTreeMap<String, Vec<GroundTruthAnnotation>> = BTreeMap::new();
    for t in read_truths(truths)? {
        anns.entry(t.slide_id.clone()).or_default().push(t);
    }
    let mut ids: Vec<&String> = dets.keys().chain(anns.keys()).collect();
    ids.sort();
    ids.dedup();
    let evidence: Vec<SlideEvidence> = ids
        .iter()
        .map(|id| SlideEvidence {
            detections: dets.get(*id).map_or(&[][..], |v| v.as_slice()),
            truths: anns.get(*id).map_or(&[][..], |v| v.as_slice()),
        })
        .collect();
    let result = optimize_threshold_multi(&evidence, radius_px)?;
    write_json(&stage.output(THRESHOLD_FILE), &result)?;

    let path = stage.output(PR_CURVE_FILE);
    let mut w = csv_writer(&path)?;
    ingest::write_row(
        &mut w,
        &path,
        ["threshold", "precision", "recall", "f1", "tp", "fp", "fn"],
    )?;
    for p in &result.pr_curve {
        ingest::write_row(
            &mut w,
            &path,
            [
                fmt_real(p.threshold),
                fmt_real(p.precision),
                fmt_real(p.recall),
                fmt_real(p.f1),
                p.true_positives.to_string(),
                p.false_positives.to_string(),
                p.false_negatives.to_string(),
            ],
        )?;
    }
    finish(w, &path)?;
    stage.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiConfig {
    pub area_mm2: f64,
    pub aspect: f64,
    pub mode: SearchMode,
    /// Detections below this confidence are ignored.
    pub min_confidence: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        RoiConfig {
            area_mm2: crate::types::DEFAULT_WINDOW_AREA_MM2,
            aspect: crate::types::DEFAULT_WINDOW_ASPECT,
            mode: SearchMode::Exact,
            min_confidence: 0.0,
        }
    }
}

/// One row of the ROI table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiRow {
    pub slide_id: String,
    pub mc: u32,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

/// Hotspot window and mitotic count of every slide, in slide-table order.
pub fn compute_rois(corpus: &Corpus, config: &RoiConfig) -> Result<Vec<RoiRow>> {
    if !(0.0..=1.0).contains(&config.min_confidence) {
        return Err(Error::invalid("min confidence must lie in [0, 1]"));
    }
    corpus
        .slides()
        .par_iter()
        .map(|s| {
            let kept;
            let slide = if config.min_confidence > 0.0 {
                let mut c = s.clone();
                c.detections.retain(|d| d.confidence >= config.min_confidence);
                kept = c;
                &kept
            } else {
                s
            };
            let (mc, w) = mc_for_slide(slide, config.area_mm2, config.aspect, config.mode)?;
            Ok(RoiRow {
                slide_id: s.slide_id.clone(),
                mc,
                left: w.left,
                top: w.top,
                width: w.width_px,
                height: w.height_px,
            })
        })
        .collect()
}

pub fn write_roi(path: &Path, rows: &[RoiRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    ingest::write_row(&mut w, path, ROI_HEADER)?;
    for r in rows {
        ingest::write_row(
            &mut w,
            path,
            [
                r.slide_id.clone(),
                r.mc.to_string(),
                fmt_real(r.left),
                fmt_real(r.top),
                fmt_real(r.width),
                fmt_real(r.height),
            ],
        )?;
    }
    finish(w, path)
}

pub fn read_roi(path: &Path) -> Result<Vec<RoiRow>> {
    let mut out = Vec::new();
    for_each_record(path, &ROI_HEADER, |line, rec| {
        let mc = parse_int(path, line, rec, 1, "mc")?;
        out.push(RoiRow {
            slide_id: non_empty(path, line, rec, 0, "slide_id")?,
            mc: u32::try_from(mc).map_err(|_| ingest::parse_err(path, line, "mc out of range"))?,
            left: parse_real(path, line, rec, 2, "left")?,
            top: parse_real(path, line, rec, 3, "top")?,
            width: parse_real(path, line, rec, 4, "width")?,
            height: parse_real(path, line, rec, 5, "height")?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn run_roi(corpus: &CorpusPaths, out: &Path, config: &RoiConfig) -> Result<Manifest> {
    let mut stage = Stage::begin("roi", out)?;
    stage.flag("config", config);
    corpus_inputs(&mut stage, corpus)?;
    let rows = compute_rois(&load_corpus(corpus)?, config)?;
    write_roi(&stage.output(ROI_FILE), &rows)?;
    stage.finish()
}

/// Mitotic counts by slide id; every corpus slide must have one.
fn roi_counts(corpus: &Corpus, roi: &[RoiRow]) -> Result<HashMap<String, u32>> {
    let mut m = HashMap::with_capacity(roi.len());
    for r in roi {
        if corpus.slide(&r.slide_id).is_none() {
            return Err(Error::integrity(format!("ROI table names unknown slide {}", r.slide_id)));
        }
        if m.insert(r.slide_id.clone(), r.mc).is_some() {
            return Err(Error::integrity(format!("ROI table repeats slide {}", r.slide_id)));
        }
    }
    Ok(m)
}

/// One training row per patient from its highest-MC slide.
pub fn training_rows(corpus: &Corpus, roi: &[RoiRow]) -> Result<Vec<TrainingRow>> {
    let mcs = roi_counts(corpus, roi)?;
    let groups = group_by_patient(corpus);
    select_slide_per_patient(&groups, &mcs)?
        .iter()
        .map(|s| s.training_row())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub kind: ModelKind,
    /// Run `r` trains with seed `seed + r`, which also picks its split.
    pub seed: u64,
    pub runs: usize,
    pub train: TrainConfig,
}

impl FitConfig {
    pub fn new(kind: ModelKind, seed: u64, runs: usize) -> Self {
        FitConfig {
            kind,
            seed,
            runs,
            train: TrainConfig::for_kind(kind),
        }
    }
}

pub fn model_file_name(run: usize) -> String {
    format!("model_run{run}.json")
}

pub fn curve_file_name(run: usize) -> String {
    format!("curve_run{run}.csv")
}

/// Trains `config.runs` models with consecutive seeds.
pub fn fit_runs(rows: &[TrainingRow], config: &FitConfig) -> Result<Vec<TrainOutcome>> {
    if config.runs == 0 {
        return Err(Error::invalid("runs must be at least 1"));
    }
    (0..config.runs)
        .into_par_iter()
        .map(|r| {
            let mut cfg = config.train;
            cfg.seed = config.seed.wrapping_add(r as u64);
            train(config.kind, rows, &cfg)
        })
        .collect()
}

pub fn run_fit(corpus: &CorpusPaths, roi: &Path, out: &Path, config: &FitConfig) -> Result<Manifest> {
    let mut stage = Stage::begin("fit", out)?;
    stage.seed = Some(config.seed);
    stage.flag("config", config);
    corpus_inputs(&mut stage, corpus)?;
    stage.input("roi", roi)?;
    let corpus = load_corpus(corpus)?;
    let rows = training_rows(&corpus, &read_roi(roi)?)?;
    for (r, outcome) in fit_runs(&rows, config)?.into_iter().enumerate() {
        outcome.model.save(&stage.output(&model_file_name(r)))?;
        let path = stage.output(&curve_file_name(r));
        let mut w = csv_writer(&path)?;
        ingest::write_row(&mut w, &path, ["epoch", "train_loss", "val_loss", "best"])?;
        for (e, (t, v)) in outcome.train_curve.iter().zip(&outcome.val_curve).enumerate() {
            ingest::write_row(
                &mut w,
                &path,
                [
                    e.to_string(),
                    fmt_real(*t),
                    fmt_real(*v),
                    u8::from(e == outcome.best_epoch).to_string(),
                ],
            )?;
        }
        finish(w, &path)?;
    }
    stage.finish()
}

/// One patient-level prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub run: usize,
    pub patient_id: String,
    pub slide_id: String,
    pub mc: u32,
    pub score: f64,
    pub who_grade: u8,
}

/// Scores every patient on its highest-MC slide, in patient-id order.
pub fn predict_corpus(
    model: &GradingModel,
    run: usize,
    corpus: &Corpus,
    roi: &[RoiRow],
) -> Result<Vec<Prediction>> {
    let mcs = roi_counts(corpus, roi)?;
    let groups = group_by_patient(corpus);
    let selected = select_slide_per_patient(&groups, &mcs)?;
    selected
        .par_iter()
        .map(|s| {
            Ok(Prediction {
                run,
                patient_id: s.patient_id.to_string(),
                slide_id: s.slide.slide_id.clone(),
                mc: s.mc,
                score: model.predict(s.mc as f64, s.slide.patch_features.as_deref())?,
                who_grade: s.who_grade,
            })
        })
        .collect()
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = csv_writer(path)?;
    ingest::write_row(&mut w, path, PREDICTIONS_HEADER)?;
    for p in preds {
        ingest::write_row(
            &mut w,
            path,
            [
                p.run.to_string(),
                p.patient_id.clone(),
                p.slide_id.clone(),
                p.mc.to_string(),
                fmt_real(p.score),
                p.who_grade.to_string(),
            ],
        )?;
    }
    finish(w, path)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for_each_record(path, &PREDICTIONS_HEADER, |line, rec| {
        let grade = parse_int(path, line, rec, 5, "who_grade")?;
        if !(1..=3).contains(&grade) {
            return Err(ingest::parse_err(path, line, format!("who_grade must be 1, 2 or 3, got {grade}")));
        }
        let mc = parse_int(path, line, rec, 3, "mc")?;
        out.push(Prediction {
            run: parse_int(path, line, rec, 0, "run")? as usize,
            patient_id: non_empty(path, line, rec, 1, "patient_id")?,
            slide_id: non_empty(path, line, rec, 2, "slide_id")?,
            mc: u32::try_from(mc).map_err(|_| ingest::parse_err(path, line, "mc out of range"))?,
            score: parse_real(path, line, rec, 4, "score")?,
            who_grade: grade as u8,
        });
        Ok(())
    })?;
    Ok(out)
}

fn load_models(models: &[PathBuf]) -> Result<Vec<GradingModel>> {
    if models.is_empty() {
        return Err(Error::invalid("no model files given"));
    }
    models.iter().map(|p| GradingModel::load(p)).collect()
}

fn predict_all(models: &[GradingModel], corpus: &Corpus, roi: &[RoiRow]) -> Result<Vec<Prediction>> {
    let mut all = Vec::new();
    for (r, m) in models.iter().enumerate() {
        all.extend(predict_corpus(m, r, corpus, roi)?);
    }
    Ok(all)
}

/// Run `r` of the predictions table comes from `models[r]`.
pub fn run_predict(
    corpus: &CorpusPaths,
    roi: &Path,
    models: &[PathBuf],
    out: &Path,
) -> Result<Manifest> {
    let mut stage = Stage::begin("predict", out)?;
    corpus_inputs(&mut stage, corpus)?;
    stage.input("roi", roi)?;
    for m in models {
        stage.input("model", m)?;
    }
    let loaded = load_models(models)?;
    let corpus = load_corpus(corpus)?;
    let preds = predict_all(&loaded, &corpus, &read_roi(roi)?)?;
    write_predictions(&stage.output(PREDICTIONS_FILE), &preds)?;
    stage.finish()
}

/// Per-run reports plus their mean/SD block when there are several runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub runs: Vec<EvalReport>,
    pub summary: Option<RunSummary>,
}

pub fn evaluate_predictions(preds: &[Prediction]) -> Result<EvaluationOutput> {
    let mut by_run: BTreeMap<usize, Vec<(String, f64, u8)>> = BTreeMap::new();
    for p in preds {
        by_run
            .entry(p.run)
            .or_default()
            .push((p.patient_id.clone(), p.score, p.who_grade));
    }
    if by_run.is_empty() {
        return Err(Error::invalid("no predictions to evaluate"));
    }
    let runs = by_run
        .values()
        .map(|cases| eval_cases(cases))
        .collect::<Result<Vec<_>>>()?;
    let summary = if runs.len() >= 2 {
        Some(multi_run_summary(&runs)?)
    } else {
        None
    };
    Ok(EvaluationOutput { runs, summary })
}

/// Where evaluation gets its scores from.
#[derive(Debug, Clone)]
pub enum EvalSource {
    Models {
        corpus: CorpusPaths,
        roi: PathBuf,
        models: Vec<PathBuf>,
    },
    Predictions(PathBuf),
}

pub fn run_evaluate(source: &EvalSource, out: &Path, plot_data: bool) -> Result<Manifest> {
    let mut stage = Stage::begin("evaluate", out)?;
    stage.flag("plot_data", plot_data);
    let preds = match source {
        EvalSource::Models {
            corpus,
            roi,
            models,
        } => {
            corpus_inputs(&mut stage, corpus)?;
            stage.input("roi", roi)?;
            for m in models {
                stage.input("model", m)?;
            }
            let loaded = load_models(models)?;
            let corpus = load_corpus(corpus)?;
            let preds = predict_all(&loaded, &corpus, &read_roi(roi)?)?;
            write_predictions(&stage.output(PREDICTIONS_FILE), &preds)?;
            preds
        }
        EvalSource::Predictions(p) => {
            stage.input("predictions", p)?;
            read_predictions(p)?
        }
    };
    let result = evaluate_predictions(&preds)?;
    write_json(&stage.output(REPORT_FILE), &result)?;

    let path = stage.output(CASES_FILE);
    let mut w = csv_writer(&path)?;
    ingest::write_row(
        &mut w,
        &path,
        ["run", "case_id", "predicted_score", "who_grade", "rounded_grade"],
    )?;
    for (r, report) in result.runs.iter().enumerate() {
        for c in &report.per_case {
            ingest::write_row(
                &mut w,
                &path,
                [
                    r.to_string(),
                    c.case_id.clone(),
                    fmt_real(c.predicted_score),
                    c.who_grade.to_string(),
                    c.rounded_grade.to_string(),
                ],
            )?;
        }
    }
    finish(w, &path)?;

    if plot_data {
        let path = stage.output(PLOT_DATA_FILE);
        let mut w = csv_writer(&path)?;
        ingest::write_row(&mut w, &path, ["run", "mc", "score"])?;
        for p in &preds {
            ingest::write_row(
                &mut w,
                &path,
                [p.run.to_string(), p.mc.to_string(), fmt_real(p.score)],
            )?;
        }
        finish(w, &path)?;
    }
    stage.finish()
}
