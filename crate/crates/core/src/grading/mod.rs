//! Regression from ROI information to a continuous malignancy score.
//!
//! Three regressors share one training loop:
//!
//! * MC-only: `sigmoid(w1 * mc + b1) * w2 + b2`.
//! * image-only: a linear head over ROI patch features, averaged over
//!   patches.
//! * combined: both of the above merged by a two-input linear layer.
//!
//! Grades are per patient, so each patient is represented by the slide with
//! the highest mitotic count.

mod model;
mod params;
mod train;

use std::collections::HashMap;

pub use model::{GradingModel, ModelFile, ModelKind, Params, Standardizer, TrainConfig};
pub use params::{
    combined_forward, feature_forward, logistic_forward, logistic_gradient, mean_feature, sigmoid,
    CombinedOutput, CombinedParams, FeatureHeadParams, LogisticParams,
};
pub use train::{initial_params, split_patients, train, train_split, TrainOutcome, TrainingRow};

use crate::error::{Error, Result};
use crate::ingest::PatientGroup;
use crate::types::SlideRecord;

/// The slide representing a patient.
#[derive(Debug, Clone)]
pub struct SelectedSlide<'a> {
    pub patient_id: &'a str,
    pub slide: &'a SlideRecord,
    pub mc: u32,
    pub who_grade: u8,
}

impl SelectedSlide<'_> {
    pub fn training_row(&self) -> Result<TrainingRow> {
        let mean_features = match &self.slide.patch_features {
            Some(p) if !p.is_empty() => Some(mean_feature(p)?),
            _ => None,
        };
        Ok(TrainingRow {
            patient_id: self.patient_id.to_string(),
            mc: self.mc as f64,
            mean_features,
            target: self.who_grade as f64,
        })
    }
}

/// Highest-MC slide among `slides`; equal counts resolve to the smallest
/// slide id.
pub fn highest_mc_slide<'a>(
    slides: &[&'a SlideRecord],
    mcs: &HashMap<String, u32>,
) -> Result<(&'a SlideRecord, u32)> {
    let mut best: Option<(&SlideRecord, u32)> = None;
    for &s in slides {
        let mc = *mcs.get(&s.slide_id).ok_or_else(|| {
            Error::integrity(format!("no mitotic count for slide {}", s.slide_id))
        })?;
        let better = match best {
            None => true,
            Some((b, bmc)) => mc > bmc || (mc == bmc && s.slide_id < b.slide_id),
        };
        if better {
            best = Some((s, mc));
        }
    }
    best.ok_or_else(|| Error::integrity("patient has no slides"))
}

/// One slide per patient: the one with the highest mitotic count.
pub fn select_slide_per_patient<'a>(
    groups: &[PatientGroup<'a>],
    mcs: &HashMap<String, u32>,
) -> Result<Vec<SelectedSlide<'a>>> {
    groups
        .iter()
        .map(|g| {
            let (slide, mc) = highest_mc_slide(&g.slides, mcs)
                .map_err(|e| match e {
                    Error::Integrity(m) => Error::integrity(format!("patient {}: {m}", g.patient_id)),
                    other => other,
                })?;
            Ok(SelectedSlide {
                patient_id: g.patient_id,
                slide,
                mc,
                who_grade: g.label.who_grade,
            })
        })
        .collect()
}

/// Patient-level score, computed on the patient's highest-MC slide.
pub fn predict_patient(
    model: &GradingModel,
    slides: &[&SlideRecord],
    mcs: &HashMap<String, u32>,
) -> Result<f64> {
    let (slide, mc) = highest_mc_slide(slides, mcs)?;
    model.predict(mc as f64, slide.patch_features.as_deref())
}
