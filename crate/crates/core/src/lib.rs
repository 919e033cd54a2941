//! Mitotic-count based meningioma grading.
//!
//! The pipeline starts from detector output (candidate mitotic figures with
//! confidences) and ends with patient-level malignancy scores:
//!
//! 1. [`nms`] merges overlapping detections from tiled inference.
//! 2. [`threshold_opt`] picks the confidence cut-off maximizing F1.
//! 3. [`mc_density`] finds the fixed-area window with the most detections
//!    (the mitotic count hotspot).
//! 4. [`grading`] regresses the WHO grade from the count and/or patch
//!    features.
//! 5. [`metrics`] scores predictions against labels.
//!
//! [`synth`] generates corpora with planted ground truth and [`pipeline`]
//! wires the stages together over files.

pub mod error;
pub mod grading;
pub mod ingest;
pub mod mc_density;
pub mod metrics;
pub mod nms;
pub mod pipeline;
pub mod synth;
pub mod threshold_opt;
pub mod types;

pub use error::{Error, Result};
pub use types::{Detection, GradeLabel, PatchFeature, RoiWindow, SlideGeometry, SlideRecord};
