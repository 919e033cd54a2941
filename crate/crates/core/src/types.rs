//! Domain types shared across the pipeline.
//!
//! All geometry is expressed in slide pixel coordinates. Physical sizes are
//! converted through [`SlideGeometry::microns_per_px`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half side length of the square detection box, in pixels (50 px box).
pub const DEFAULT_HALF_SIDE_PX: f64 = 25.0;
/// Area of the mitotic-count window, roughly ten high power fields.
pub const DEFAULT_WINDOW_AREA_MM2: f64 = 2.5;
/// Width over height of the mitotic-count window.
pub const DEFAULT_WINDOW_ASPECT: f64 = 4.0 / 3.0;

const UM2_PER_MM2: f64 = 1.0e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlideGeometry {
    pub width_px: u64,
    pub height_px: u64,
    pub microns_per_px: f64,
}

impl SlideGeometry {
    pub fn new(width_px: u64, height_px: u64, microns_per_px: f64) -> Result<Self> {
        let g = SlideGeometry {
            width_px,
            height_px,
            microns_per_px,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::invalid(format!(
                "slide extent must be at least 1x1 px, got {}x{}",
                self.width_px, self.height_px
            )));
        }
        if !(self.microns_per_px.is_finite() && self.microns_per_px > 0.0) {
            return Err(Error::invalid(format!(
                "microns_per_px must be finite and positive, got {}",
                self.microns_per_px
            )));
        }
        Ok(())
    }

    /// Slide extent in microns.
    pub fn extent_um(&self) -> (f64, f64) {
        (
            self.width_px as f64 * self.microns_per_px,
            self.height_px as f64 * self.microns_per_px,
        )
    }

    /// Whether a point lies on the slide, `[0, width] x [0, height]`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= self.width_px as f64 && y <= self.height_px as f64
    }
}

/// One candidate mitotic figure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub cx: f64,
    pub cy: f64,
    pub half_side: f64,
    pub confidence: f64,
}

impl Detection {
    pub fn new(cx: f64, cy: f64, confidence: f64) -> Self {
        Detection {
            cx,
            cy,
            half_side: DEFAULT_HALF_SIDE_PX,
            confidence,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("detection center must be finite"));
        }
        if !(self.half_side.is_finite() && self.half_side > 0.0) {
            return Err(Error::invalid(format!(
                "detection half_side must be positive, got {}",
                self.half_side
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid(format!(
                "confidence must lie in [0, 1], got {}",
                self.confidence
            )));
        }
        Ok(())
    }

    /// Box as `(x0, y0, x1, y1)`.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.half_side,
            self.cy - self.half_side,
            self.cx + self.half_side,
            self.cy + self.half_side,
        )
    }

    pub fn area(&self) -> f64 {
        let side = 2.0 * self.half_side;
        side * side
    }

    pub fn center(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }
}

/// Feature vector emitted by the patch encoder for one ROI patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchFeature {
    pub patch_x: f64,
    pub patch_y: f64,
    pub values: Vec<f64>,
}

impl PatchFeature {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub slide_id: String,
    pub patient_id: String,
    pub geometry: SlideGeometry,
    pub detections: Vec<Detection>,
    pub patch_features: Option<Vec<PatchFeature>>,
}

impl SlideRecord {
    pub fn centers(&self) -> Vec<(f64, f64)> {
        self.detections.iter().map(Detection::center).collect()
    }
}

/// WHO grade assigned to a patient. Grades are per patient, not per slide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeLabel {
    pub patient_id: String,
    pub who_grade: u8,
}

impl GradeLabel {
    pub fn new(patient_id: impl Into<String>, who_grade: u8) -> Result<Self> {
        if !(1..=3).contains(&who_grade) {
            return Err(Error::invalid(format!(
                "WHO grade must be 1, 2 or 3, got {who_grade}"
            )));
        }
        Ok(GradeLabel {
            patient_id: patient_id.into(),
            who_grade,
        })
    }
}

/// Axis-aligned window with its mitotic count. Containment is half-open:
/// `[left, left + width) x [top, top + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiWindow {
    pub left: f64,
    pub top: f64,
    pub width_px: f64,
    pub height_px: f64,
    pub mitotic_count: u32,
}

impl RoiWindow {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        window_contains(self.left, self.top, self.width_px, self.height_px, x, y)
    }
}

/// Half-open containment test shared by every window search routine.
#[inline]
pub fn window_contains(left: f64, top: f64, w: f64, h: f64, x: f64, y: f64) -> bool {
    left <= x && x < left + w && top <= y && y < top + h
}

/// Pixel dimensions of a window of `area_mm2` with the given width/height
/// ratio on a slide of the given resolution. Dimensions stay fractional.
pub fn window_dims_px(
    geometry: &SlideGeometry,
    area_mm2: f64,
    aspect_w_over_h: f64,
) -> Result<(f64, f64)> {
    geometry.validate()?;
    if !(area_mm2.is_finite() && area_mm2 > 0.0) {
        return Err(Error::invalid(format!(
            "window area must be positive, got {area_mm2}"
        )));
    }
    if !(aspect_w_over_h.is_finite() && aspect_w_over_h > 0.0) {
        return Err(Error::invalid(format!(
            "window aspect must be positive, got {aspect_w_over_h}"
        )));
    }
    let area_um2 = area_mm2 * UM2_PER_MM2;
    let width_um = (area_um2 * aspect_w_over_h).sqrt();
    let height_um = (area_um2 / aspect_w_over_h).sqrt();
    Ok((
        width_um / geometry.microns_per_px,
        height_um / geometry.microns_per_px,
    ))
}
