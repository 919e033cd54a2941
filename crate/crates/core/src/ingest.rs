//! Corpus files: reading, validation and writing.
//!
//! A corpus lives in plain CSV files (UTF-8, LF line endings, header row):
//!
//! | file              | columns                                              |
//! |-------------------|------------------------------------------------------|
//! | `slides.csv`      | `slide_id,patient_id,width_px,height_px,microns_per_px` |
//! | `detections.csv`  | `slide_id,cx,cy,half_side,confidence`                |
//! | `labels.csv`      | `patient_id,who_grade`                               |
//! | `features.csv`    | `slide_id,patch_x,patch_y,f0,...,f{D-1}` (optional)  |
//! | `truths.csv`      | `slide_id,cx,cy,is_mitotic` (optional)               |
//!
//! Reals are written in their shortest round-trip decimal form. Columns must
//! match exactly; unknown columns are an error.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::threshold_opt::GroundTruthAnnotation;
use crate::types::{Detection, GradeLabel, PatchFeature, SlideGeometry, SlideRecord};

pub const SLIDES_FILE: &str = "slides.csv";
pub const DETECTIONS_FILE: &str = "detections.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const TRUTHS_FILE: &str = "truths.csv";

const SLIDES_HEADER: [&str; 5] = [
    "slide_id",
    "patient_id",
    "width_px",
    "height_px",
    "microns_per_px",
];
const DETECTIONS_HEADER: [&str; 5] = ["slide_id", "cx", "cy", "half_side", "confidence"];
const LABELS_HEADER: [&str; 2] = ["patient_id", "who_grade"];
const TRUTHS_HEADER: [&str; 4] = ["slide_id", "cx", "cy", "is_mitotic"];

/// A validated set of slides and patient labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    slides: Vec<SlideRecord>,
    labels: Vec<GradeLabel>,
    patients: BTreeMap<String, Vec<String>>,
}

/// One patient with all of their slides.
#[derive(Debug, Clone)]
pub struct PatientGroup<'a> {
    pub patient_id: &'a str,
    pub slides: Vec<&'a SlideRecord>,
    pub label: &'a GradeLabel,
}

impl Corpus {
    /// Builds a corpus, enforcing referential integrity.
    pub fn new(slides: Vec<SlideRecord>, labels: Vec<GradeLabel>) -> Result<Self> {
        let mut label_ids = HashSet::new();
        for label in &labels {
            if !(1..=3).contains(&label.who_grade) {
                return Err(Error::invalid(format!(
                    "patient {}: WHO grade must be 1, 2 or 3, got {}",
                    label.patient_id, label.who_grade
                )));
            }
            if !label_ids.insert(label.patient_id.as_str()) {
                return Err(Error::integrity(format!(
                    "duplicate label for patient {}",
                    label.patient_id
                )));
            }
        }

        let mut slide_ids = HashSet::new();
        let mut feature_dim: Option<usize> = None;
        let mut patients: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for slide in &slides {
            if !slide_ids.insert(slide.slide_id.as_str()) {
                return Err(Error::integrity(format!(
                    "duplicate slide_id {}",
                    slide.slide_id
                )));
            }
            slide.geometry.validate()?;
            for d in &slide.detections {
                d.validate()?;
                if !slide.geometry.contains(d.cx, d.cy) {
                    return Err(Error::integrity(format!(
                        "slide {}: detection at ({}, {}) lies outside the slide",
                        slide.slide_id, d.cx, d.cy
                    )));
                }
            }
            for p in slide.patch_features.iter().flatten() {
                if p.values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!(
                        "slide {}: non-finite patch feature",
                        slide.slide_id
                    )));
                }
                match feature_dim {
                    None => feature_dim = Some(p.dim()),
                    Some(d) if d != p.dim() => {
                        return Err(Error::integrity(format!(
                            "slide {}: feature dimension {} differs from corpus dimension {d}",
                            slide.slide_id,
                            p.dim()
                        )))
                    }
                    Some(_) => {}
                }
            }
            if !label_ids.contains(slide.patient_id.as_str()) {
                return Err(Error::integrity(format!(
                    "no grade label for patient {}",
                    slide.patient_id
                )));
            }
            patients
                .entry(slide.patient_id.clone())
                .or_default()
                .push(slide.slide_id.clone());
        }

        Ok(Corpus {
            slides,
            labels,
            patients,
        })
    }

    pub fn slides(&self) -> &[SlideRecord] {
        &self.slides
    }

    pub fn labels(&self) -> &[GradeLabel] {
        &self.labels
    }

    /// Patient id to slide ids, in slide order.
    pub fn patients(&self) -> &BTreeMap<String, Vec<String>> {
        &self.patients
    }

    pub fn slide(&self, slide_id: &str) -> Option<&SlideRecord> {
        self.slides.iter().find(|s| s.slide_id == slide_id)
    }

    pub fn label(&self, patient_id: &str) -> Option<&GradeLabel> {
        self.labels.iter().find(|l| l.patient_id == patient_id)
    }

    /// Feature dimension shared by all patches, if any slide carries patches.
    pub fn feature_dim(&self) -> Option<usize> {
        self.slides
            .iter()
            .flat_map(|s| s.patch_features.iter().flatten())
            .map(PatchFeature::dim)
            .next()
    }

    pub fn into_parts(self) -> (Vec<SlideRecord>, Vec<GradeLabel>) {
        (self.slides, self.labels)
    }

    /// Returns a copy with each slide's detections replaced by `f(slide)`.
    pub fn map_detections<F>(&self, mut f: F) -> Result<Corpus>
    where
        F: FnMut(&SlideRecord) -> Vec<Detection>,
    {
        let slides = self
            .slides
            .iter()
            .map(|s| SlideRecord {
                detections: f(s),
                ..s.clone()
            })
            .collect();
        Corpus::new(slides, self.labels.clone())
    }
}

/// Groups slides by patient, sorted by patient id. Every slide appears in
/// exactly one group.
pub fn group_by_patient(corpus: &Corpus) -> Vec<PatientGroup<'_>> {
    let by_id: HashMap<&str, &SlideRecord> = corpus
        .slides
        .iter()
        .map(|s| (s.slide_id.as_str(), s))
        .collect();
    let labels: HashMap<&str, &GradeLabel> = corpus
        .labels
        .iter()
        .map(|l| (l.patient_id.as_str(), l))
        .collect();
    corpus
        .patients
        .iter()
        .map(|(pid, slide_ids)| PatientGroup {
            patient_id: pid.as_str(),
            slides: slide_ids.iter().map(|id| by_id[id.as_str()]).collect(),
            label: labels[pid.as_str()],
        })
        .collect()
}

/// Locations of the corpus files.
#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub slides: PathBuf,
    pub detections: PathBuf,
    pub labels: PathBuf,
    pub features: Option<PathBuf>,
}

impl CorpusPaths {
    /// Standard file names inside `dir`; `features.csv` is used when present.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let features = dir.join(FEATURES_FILE);
        CorpusPaths {
            slides: dir.join(SLIDES_FILE),
            detections: dir.join(DETECTIONS_FILE),
            labels: dir.join(LABELS_FILE),
            features: features.exists().then_some(features),
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![
            self.slides.as_path(),
            self.detections.as_path(),
            self.labels.as_path(),
        ];
        v.extend(self.features.as_deref());
        v
    }
}

pub fn load_corpus(paths: &CorpusPaths) -> Result<Corpus> {
    let mut slides = read_slides(&paths.slides)?;
    let index: HashMap<String, usize> = slides
        .iter()
        .enumerate()
        .map(|(i, s)| (s.slide_id.clone(), i))
        .collect();

    for (line, slide_id, det) in read_detections(&paths.detections)? {
        let Some(&i) = index.get(&slide_id) else {
            return Err(parse_err(
                &paths.detections,
                line,
                format!("unknown slide_id {slide_id}"),
            ));
        };
        slides[i].detections.push(det);
    }

    if let Some(features_path) = &paths.features {
        for (line, slide_id, patch) in read_features(features_path)? {
            let Some(&i) = index.get(&slide_id) else {
                return Err(parse_err(
                    features_path,
                    line,
                    format!("unknown slide_id {slide_id}"),
                ));
            };
            slides[i].patch_features.get_or_insert_with(Vec::new).push(patch);
        }
    }

    let labels = read_labels(&paths.labels)?;
    Corpus::new(slides, labels)
}

/// Writes the corpus into `dir` under the standard file names. The
/// features file is written only when some slide carries patches.
pub fn save_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<CorpusPaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let slides_path = dir.join(SLIDES_FILE);
    write_slides(&slides_path, &corpus.slides)?;

    let det_path = dir.join(DETECTIONS_FILE);
    let pairs = corpus.slides.iter().flat_map(|s| {
        s.detections
            .iter()
            .map(move |d| (s.slide_id.as_str(), d))
    });
    write_detections(&det_path, pairs)?;

    let labels_path = dir.join(LABELS_FILE);
    let mut w = csv_writer(&labels_path)?;
    write_row(&mut w, &labels_path, LABELS_HEADER)?;
    for l in &corpus.labels {
        write_row(
            &mut w,
            &labels_path,
            [l.patient_id.clone(), l.who_grade.to_string()],
        )?;
    }
    finish(w, &labels_path)?;

    let features = match corpus.feature_dim() {
        Some(dim) => {
            let path = dir.join(FEATURES_FILE);
            let mut w = csv_writer(&path)?;
            write_row(&mut w, &path, features_header(dim))?;
            for s in &corpus.slides {
                for p in s.patch_features.iter().flatten() {
                    let mut row = vec![s.slide_id.clone(), fmt_real(p.patch_x), fmt_real(p.patch_y)];
                    row.extend(p.values.iter().map(|&v| fmt_real(v)));
                    write_row(&mut w, &path, row)?;
                }
            }
            finish(w, &path)?;
            Some(path)
        }
        None => None,
    };

    Ok(CorpusPaths {
        slides: slides_path,
        detections: det_path,
        labels: labels_path,
        features,
    })
}

/// Writes the slide table (geometry and patient linkage only).
pub fn write_slides(path: &Path, slides: &[SlideRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(&mut w, path, SLIDES_HEADER)?;
    for s in slides {
        write_row(
            &mut w,
            path,
            [
                s.slide_id.clone(),
                s.patient_id.clone(),
                s.geometry.width_px.to_string(),
                s.geometry.height_px.to_string(),
                fmt_real(s.geometry.microns_per_px),
            ],
        )?;
    }
    finish(w, path)
}

/// Writes a detections table from `(slide_id, detection)` pairs.
pub fn write_detections<'a, I>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a Detection)>,
{
    let mut w = csv_writer(path)?;
    write_row(&mut w, path, DETECTIONS_HEADER)?;
    for (slide_id, d) in rows {
        write_row(
            &mut w,
            path,
            [
                slide_id.to_string(),
                fmt_real(d.cx),
                fmt_real(d.cy),
                fmt_real(d.half_side),
                fmt_real(d.confidence),
            ],
        )?;
    }
    finish(w, path)
}

/// Reads a detections table into `(line, slide_id, detection)` rows.
pub fn read_detections(path: &Path) -> Result<Vec<(u64, String, Detection)>> {
    let mut out = Vec::new();
    for_each_record(path, &DETECTIONS_HEADER, |line, rec| {
        let det = Detection {
            cx: parse_real(path, line, rec, 1, "cx")?,
            cy: parse_real(path, line, rec, 2, "cy")?,
            half_side: parse_real(path, line, rec, 3, "half_side")?,
            confidence: parse_real(path, line, rec, 4, "confidence")?,
        };
        det.validate()
            .map_err(|e| parse_err(path, line, strip_prefix(e)))?;
        out.push((line, rec[0].to_string(), det));
        Ok(())
    })?;
    Ok(out)
}

pub fn read_slides(path: &Path) -> Result<Vec<SlideRecord>> {
    let mut out = Vec::new();
    for_each_record(path, &SLIDES_HEADER, |line, rec| {
        let geometry = SlideGeometry {
            width_px: parse_int(path, line, rec, 2, "width_px")?,
            height_px: parse_int(path, line, rec, 3, "height_px")?,
            microns_per_px: parse_real(path, line, rec, 4, "microns_per_px")?,
        };
        geometry
            .validate()
            .map_err(|e| parse_err(path, line, strip_prefix(e)))?;
        out.push(SlideRecord {
            slide_id: non_empty(path, line, rec, 0, "slide_id")?,
            patient_id: non_empty(path, line, rec, 1, "patient_id")?,
            geometry,
            detections: Vec::new(),
            patch_features: None,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<Vec<GradeLabel>> {
    let mut out = Vec::new();
    for_each_record(path, &LABELS_HEADER, |line, rec| {
        let grade: u8 = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("who_grade: not an integer: {:?}", &rec[1])))?;
        let label = GradeLabel::new(non_empty(path, line, rec, 0, "patient_id")?, grade)
            .map_err(|e| parse_err(path, line, strip_prefix(e)))?;
        out.push(label);
        Ok(())
    })?;
    Ok(out)
}

/// Reads a patch feature table into `(line, slide_id, patch)` rows.
pub fn read_features(path: &Path) -> Result<Vec<(u64, String, PatchFeature)>> {
    let mut reader = csv_reader(path)?;
    let header = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .clone();
    let dim = header.len().saturating_sub(3);
    let expected = features_header(dim);
    if dim == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header slide_id,patch_x,patch_y,f0,...,f{{D-1}}, got {}",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = record_line(&rec);
        let mut values = Vec::with_capacity(dim);
        for i in 0..dim {
            values.push(parse_real(path, line, &rec, 3 + i, "feature")?);
        }
        out.push((
            line,
            non_empty(path, line, &rec, 0, "slide_id")?,
            PatchFeature {
                patch_x: parse_real(path, line, &rec, 1, "patch_x")?,
                patch_y: parse_real(path, line, &rec, 2, "patch_y")?,
                values,
            },
        ));
    }
    Ok(out)
}

pub fn read_truths(path: &Path) -> Result<Vec<GroundTruthAnnotation>> {
    let mut out = Vec::new();
    for_each_record(path, &TRUTHS_HEADER, |line, rec| {
        let is_mitotic = match rec[3].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(parse_err(
                    path,
                    line,
                    format!("is_mitotic: expected 0/1/true/false, got {other:?}"),
                ))
            }
        };
        out.push(GroundTruthAnnotation {
            slide_id: non_empty(path, line, rec, 0, "slide_id")?,
            cx: parse_real(path, line, rec, 1, "cx")?,
            cy: parse_real(path, line, rec, 2, "cy")?,
            is_mitotic,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_truths(path: &Path, truths: &[GroundTruthAnnotation]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(&mut w, path, TRUTHS_HEADER)?;
    for t in truths {
        write_row(
            &mut w,
            path,
            [
                t.slide_id.clone(),
                fmt_real(t.cx),
                fmt_real(t.cy),
                if t.is_mitotic { "1" } else { "0" }.to_string(),
            ],
        )?;
    }
    finish(w, path)
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:?}")
}

fn features_header(dim: usize) -> Vec<String> {
    let mut h = vec!["slide_id".into(), "patch_x".into(), "patch_y".into()];
    h.extend((0..dim).map(|i| format!("f{i}")));
    h
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

pub(crate) fn write_row<I, T>(w: &mut csv::Writer<File>, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| csv_err(path, e))
}

pub(crate) fn finish(w: csv::Writer<File>, path: &Path) -> Result<()> {
    let mut file = w
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    file.flush().map_err(|e| Error::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file))
}

/// Checks the header row exactly and calls `f` for every record with its
/// 1-based line number.
pub(crate) fn for_each_record<F>(path: &Path, header: &[&str], mut f: F) -> Result<()>
where
    F: FnMut(u64, &csv::StringRecord) -> Result<()>,
{
    let mut reader = csv_reader(path)?;
    let got = reader.headers().map_err(|e| csv_err(path, e))?;
    if got.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header {}, got {}",
                header.join(","),
                got.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        f(record_line(&rec), &rec)?;
    }
    Ok(())
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => parse_err(
            path,
            line,
            format!("expected {expected_len} fields, found {len}"),
        ),
        other => parse_err(path, line, format!("{other:?}")),
    }
}

pub(crate) fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::InvalidArgument(m) => m,
        other => other.to_string(),
    }
}

pub(crate) fn parse_real(
    path: &Path,
    line: u64,
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> Result<f64> {
    let raw = &rec[idx];
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(
            path,
            line,
            format!("{name}: not a finite number: {raw:?}"),
        )),
    }
}

pub(crate) fn parse_int(path: &Path, line: u64, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<u64> {
    let raw = &rec[idx];
    raw.trim()
        .parse::<u64>()
        .map_err(|_| parse_err(path, line, format!("{name}: not a non-negative integer: {raw:?}")))
}

pub(crate) fn non_empty(
    path: &Path,
    line: u64,
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> Result<String> {
    let v = rec[idx].trim();
    if v.is_empty() {
        return Err(parse_err(path, line, format!("{name} is empty")));
    }
    Ok(v.to_string())
}
