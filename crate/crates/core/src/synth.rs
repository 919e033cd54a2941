//! Seeded synthetic corpora with planted ground truth.
//!
//! Every random draw descends from one user seed. Slide `i` of a corpus
//! uses the subseed `mix(seed, i)` (a SplitMix64 finalizer over the pair),
//! so slides can be generated in any order or in parallel with identical
//! results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grading::LogisticParams;
use crate::ingest::Corpus;
use crate::metrics::round_grade;
use crate::threshold_opt::GroundTruthAnnotation;
use crate::types::{
    window_dims_px, Detection, GradeLabel, PatchFeature, SlideGeometry, SlideRecord,
    DEFAULT_WINDOW_AREA_MM2, DEFAULT_WINDOW_ASPECT,
};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for item `index` under `seed`.
pub fn subseed(seed: u64, index: u64) -> u64 {
    splitmix(splitmix(seed) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(seed, index))
}

/// Dense cluster of detections inside a disc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub cx: f64,
    pub cy: f64,
    pub count: u32,
    pub radius_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideSpec {
    pub slide_id: String,
    pub patient_id: String,
    pub geometry: SlideGeometry,
    /// Uniform background detections per mm² of slide.
    pub background_rate: f64,
    pub hotspot: Option<Hotspot>,
    pub window_area_mm2: f64,
    pub window_aspect: f64,
    /// Confidences are drawn uniformly from this range.
    pub confidence: (f64, f64),
}

impl SlideSpec {
    pub fn new(slide_id: impl Into<String>, patient_id: impl Into<String>, geometry: SlideGeometry) -> Self {
        SlideSpec {
            slide_id: slide_id.into(),
            patient_id: patient_id.into(),
            geometry,
            background_rate: 0.0,
            hotspot: None,
            window_area_mm2: DEFAULT_WINDOW_AREA_MM2,
            window_aspect: DEFAULT_WINDOW_ASPECT,
            confidence: (0.5, 1.0),
        }
    }
}

/// Uniform point in the disc of radius `r` (strictly inside its bounding
/// box on the right and bottom).
fn in_disc(rng: &mut impl Rng, cx: f64, cy: f64, r: f64) -> (f64, f64) {
    let rho = r * rng.random::<f64>().sqrt();
    let phi = rng.random::<f64>() * std::f64::consts::TAU;
    (cx + rho * phi.cos(), cy + rho * phi.sin())
}

/// Generates one slide: `k` hotspot detections in a disc small enough to fit
/// one ROI window, plus uniform background detections kept at least a
/// window diagonal away from the disc, so that no window can hold hotspot
/// and background points together.
pub fn gen_slide(seed: u64, spec: &SlideSpec) -> Result<SlideRecord> {
    spec.geometry.validate()?;
    let (w, h) = window_dims_px(&spec.geometry, spec.window_area_mm2, spec.window_aspect)?;
    let (lo, hi) = spec.confidence;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(Error::invalid(format!(
            "confidence range must lie within [0, 1], got [{lo}, {hi}]"
        )));
    }
    if !(spec.background_rate.is_finite() && spec.background_rate >= 0.0) {
        return Err(Error::invalid("background rate must be non-negative"));
    }
    let (sw, sh) = (spec.geometry.width_px as f64, spec.geometry.height_px as f64);
    if let Some(hs) = &spec.hotspot {
        if !(hs.radius_px > 0.0 && 2.0 * hs.radius_px < w && 2.0 * hs.radius_px < h) {
            return Err(Error::invalid(format!(
                "hotspot radius {} px does not fit a {w:.1} x {h:.1} px window",
                hs.radius_px
            )));
        }
        if !(hs.cx - hs.radius_px >= 0.0
            && hs.cx + hs.radius_px < sw
            && hs.cy - hs.radius_px >= 0.0
            && hs.cy + hs.radius_px < sh)
        {
            return Err(Error::invalid("hotspot disc must lie inside the slide"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conf = |rng: &mut ChaCha8Rng| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    let mut detections = Vec::new();
    if let Some(hs) = &spec.hotspot {
        for _ in 0..hs.count {
            let (x, y) = in_disc(&mut rng, hs.cx, hs.cy, hs.radius_px);
            detections.push(Detection::new(x, y, conf(&mut rng)));
        }
    }

    let (wu, hu) = spec.geometry.extent_um();
    let expected = spec.background_rate * wu * hu / 1e6;
    let n_bg = expected.round() as usize;
    let exclusion = spec
        .hotspot
        .map(|hs| (hs.cx, hs.cy, hs.radius_px + (w * w + h * h).sqrt()));
    let max_attempts = 100 * n_bg.max(1);
    let mut placed = 0;
    let mut attempts = 0;
    while placed < n_bg && attempts < max_attempts {
        attempts += 1;
        let x = rng.random_range(0.0..sw);
        let y = rng.random_range(0.0..sh);
        if let Some((ex, ey, er)) = exclusion {
            if (x - ex).hypot(y - ey) <= er {
                continue;
            }
        }
        detections.push(Detection::new(x, y, conf(&mut rng)));
        placed += 1;
    }

    Ok(SlideRecord {
        slide_id: spec.slide_id.clone(),
        patient_id: spec.patient_id.clone(),
        geometry: spec.geometry,
        detections,
        patch_features: None,
    })
}

/// How the synthetic WHO grade follows from the mitotic count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PlantedRule {
    /// Grade 1 below `low`, grade 3 above `high`, grade 2 otherwise.
    Cutoffs { low: f64, high: f64 },
    /// Rounded output of a known logistic curve.
    Logistic(LogisticParams),
}

impl PlantedRule {
    pub const DEFAULT_CUTOFFS: PlantedRule = PlantedRule::Cutoffs {
        low: 4.0,
        high: 15.0,
    };

    /// Latent continuous grade for a count.
    pub fn latent(&self, mc: f64) -> f64 {
        match *self {
            PlantedRule::Cutoffs { low, high } => {
                if mc < low {
                    1.0
                } else if mc > high {
                    3.0
                } else {
                    2.0
                }
            }
            PlantedRule::Logistic(p) => p.forward(mc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub dim: usize,
    pub patches_per_slide: usize,
    /// Length of the shift along the planted direction per grade step.
    pub signal: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            dim: 512,
            patches_per_slide: 4,
            signal: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradingCorpusSpec {
    pub n_patients: usize,
    pub rule: PlantedRule,
    /// Standard deviation of Gaussian noise added to the latent grade before
    /// rounding.
    pub noise_sd: f64,
    pub max_slides_per_patient: usize,
    /// Inclusive range of each patient's maximal mitotic count.
    pub mc_range: (u32, u32),
    pub geometry: SlideGeometry,
    pub window_area_mm2: f64,
    pub window_aspect: f64,
    pub features: Option<FeatureSpec>,
}

impl GradingCorpusSpec {
    pub fn new(n_patients: usize) -> Self {
        GradingCorpusSpec {
            n_patients,
            rule: PlantedRule::DEFAULT_CUTOFFS,
            noise_sd: 0.0,
            max_slides_per_patient: 3,
            mc_range: (0, 40),
            geometry: SlideGeometry {
                width_px: 40_000,
                height_px: 30_000,
                microns_per_px: 0.25,
            },
            window_area_mm2: DEFAULT_WINDOW_AREA_MM2,
            window_aspect: DEFAULT_WINDOW_ASPECT,
            features: None,
        }
    }
}

/// Unit vector along which patch features shift with the grade.
pub fn planted_direction(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, u64::MAX);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

struct PatientDraw {
    slides: Vec<SlideRecord>,
    label: GradeLabel,
}

fn gen_patient(
    seed: u64,
    index: usize,
    spec: &GradingCorpusSpec,
    window: (f64, f64),
    direction: Option<&[f64]>,
) -> Result<PatientDraw> {
    let mut rng = rng_for(seed, index as u64);
    let patient_id = format!("P{index:04}");
    let mc = rng.random_range(spec.mc_range.0..=spec.mc_range.1);
    let latent = spec.rule.latent(mc as f64)
        + if spec.noise_sd > 0.0 {
            Normal::new(0.0, spec.noise_sd)
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(&mut rng)
        } else {
            0.0
        };
    let grade = round_grade(latent);

    let n_slides = rng.random_range(1..=spec.max_slides_per_patient);
    let max_at = rng.random_range(0..n_slides);
    let (w, h) = window;
    let radius = 0.4 * w.min(h);
    let (sw, sh) = (
        spec.geometry.width_px as f64,
        spec.geometry.height_px as f64,
    );

    let mut slides = Vec::with_capacity(n_slides);
    for j in 0..n_slides {
        let count = if j == max_at {
            mc
        } else {
            rng.random_range(0..=mc)
        };
        let mut s = SlideSpec::new(format!("{patient_id}_S{j}"), patient_id.clone(), spec.geometry);
        s.window_area_mm2 = spec.window_area_mm2;
        s.window_aspect = spec.window_aspect;
        s.hotspot = Some(Hotspot {
            cx: rng.random_range(radius..(sw - radius).max(radius + 1e-9)),
            cy: rng.random_range(radius..(sh - radius).max(radius + 1e-9)),
            count,
            radius_px: radius,
        });
        let mut slide = gen_slide(rng.random(), &s)?;
        if let (Some(f), Some(v)) = (&spec.features, direction) {
            let shift = f.signal * (latent - 2.0);
            slide.patch_features = Some(
                (0..f.patches_per_slide)
                    .map(|p| PatchFeature {
                        patch_x: p as f64 * 224.0,
                        patch_y: 0.0,
                        values: v
                            .iter()
                            .map(|vi| {
                                let noise: f64 = StandardNormal.sample(&mut rng);
                                shift * vi + noise
                            })
                            .collect(),
                    })
                    .collect(),
            );
        }
        slides.push(slide);
    }
    Ok(PatientDraw {
        slides,
        label: GradeLabel::new(patient_id, grade)?,
    })
}

/// Corpus of patients whose grades follow a planted rule of their maximal
/// mitotic count. The max-MC slide of every patient carries exactly that
/// count.
pub fn gen_grading_corpus(seed: u64, spec: &GradingCorpusSpec) -> Result<Corpus> {
    if spec.n_patients < 10 {
        return Err(Error::invalid(format!(
            "need at least 10 patients, got {}",
            spec.n_patients
        )));
    }
    if spec.max_slides_per_patient == 0 || spec.mc_range.0 > spec.mc_range.1 {
        return Err(Error::invalid("invalid slide count or MC range"));
    }
    if !(spec.noise_sd.is_finite() && spec.noise_sd >= 0.0) {
        return Err(Error::invalid("noise_sd must be non-negative"));
    }
    let window = window_dims_px(&spec.geometry, spec.window_area_mm2, spec.window_aspect)?;
    if 0.8 * window.0.min(window.1) >= (spec.geometry.width_px.min(spec.geometry.height_px)) as f64 {
        return Err(Error::invalid("slide too small for a hotspot window"));
    }
    let direction = spec
        .features
        .as_ref()
        .map(|f| planted_direction(seed, f.dim));

    let draws: Vec<PatientDraw> = (0..spec.n_patients)
        .into_par_iter()
        .map(|i| gen_patient(seed, i, spec, window, direction.as_deref()))
        .collect::<Result<_>>()?;
    let mut slides = Vec::new();
    let mut labels = Vec::new();
    for d in draws {
        slides.extend(d.slides);
        labels.push(d.label);
    }
    Corpus::new(slides, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCaseSpec {
    pub n_slides: usize,
    pub truths_per_slide: usize,
    /// Share of detections that are false positives.
    pub fp_fraction: f64,
    /// True positives score at or above this, false positives below.
    pub separation: f64,
    pub radius_px: f64,
    pub geometry: SlideGeometry,
}

impl Default for ThresholdCaseSpec {
    fn default() -> Self {
        ThresholdCaseSpec {
            n_slides: 4,
            truths_per_slide: 150,
            fp_fraction: 0.2,
            separation: 0.4,
            radius_px: 25.0,
            geometry: SlideGeometry {
                width_px: 20_000,
                height_px: 15_000,
                microns_per_px: 0.25,
            },
        }
    }
}

fn far_from(points: &[(f64, f64)], x: f64, y: f64, min_dist: f64) -> bool {
    points.iter().all(|&(px, py)| (px - x).hypot(py - y) > min_dist)
}

/// Annotated slides whose detections separate cleanly at `separation`:
/// every mitotic truth gets one detection within half the match radius and
/// a confidence in `[separation, 1]`; false positives sit away from all
/// mitotic truths with confidence below `separation`, each next to a
/// non-mitotic annotation.
pub fn gen_threshold_case(
    seed: u64,
    spec: &ThresholdCaseSpec,
) -> Result<Vec<(SlideRecord, Vec<GroundTruthAnnotation>)>> {
    if !(0.0..1.0).contains(&spec.fp_fraction) {
        return Err(Error::invalid("fp_fraction must lie in [0, 1)"));
    }
    if !(spec.separation > 0.0 && spec.separation < 1.0) {
        return Err(Error::invalid("separation must lie in (0, 1)"));
    }
    let (sw, sh) = (
        spec.geometry.width_px as f64,
        spec.geometry.height_px as f64,
    );
    let margin = 2.0 * spec.radius_px;
    let n_fp = ((spec.truths_per_slide as f64) * spec.fp_fraction / (1.0 - spec.fp_fraction)).round() as usize;
    (0..spec.n_slides)
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let slide_id = format!("T{i:03}");
            let sample_far = |taken: &[(f64, f64)], rng: &mut ChaCha8Rng| -> Result<(f64, f64)> {
                for _ in 0..10_000 {
                    let x = rng.random_range(margin..sw - margin);
                    let y = rng.random_range(margin..sh - margin);
                    if far_from(taken, x, y, 3.0 * spec.radius_px) {
                        return Ok((x, y));
                    }
                }
                Err(Error::invalid("slide too crowded for the requested annotations"))
            };
            let mut taken = Vec::new();
            let mut truths = Vec::new();
            let mut detections = Vec::new();
            for _ in 0..spec.truths_per_slide {
                let (x, y) = sample_far(&taken, &mut rng)?;
                taken.push((x, y));
                truths.push(GroundTruthAnnotation {
                    slide_id: slide_id.clone(),
                    cx: x,
                    cy: y,
                    is_mitotic: true,
                });
                let (dx, dy) = in_disc(&mut rng, x, y, 0.5 * spec.radius_px);
                detections.push(Detection::new(dx, dy, rng.random_range(spec.separation..=1.0)));
            }
            for _ in 0..n_fp {
                let (x, y) = sample_far(&taken, &mut rng)?;
                taken.push((x, y));
                truths.push(GroundTruthAnnotation {
                    slide_id: slide_id.clone(),
                    cx: x,
                    cy: y,
                    is_mitotic: false,
                });
                detections.push(Detection::new(x, y, rng.random_range(0.0..spec.separation)));
            }
            let slide = SlideRecord {
                slide_id: slide_id.clone(),
                patient_id: format!("TP{i:03}"),
                geometry: spec.geometry,
                detections,
                patch_features: None,
            };
            Ok((slide, truths))
        })
        .collect()
}
