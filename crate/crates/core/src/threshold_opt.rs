//! Detection confidence cutoff chosen by maximal F1 against annotations.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nms::confidence_order;
use crate::types::Detection;

pub const DEFAULT_MATCH_RADIUS_PX: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthAnnotation {
    pub slide_id: String,
    pub cx: f64,
    pub cy: f64,
    pub is_mitotic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl MatchCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_positives)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_negatives)
    }

    /// `2TP / (2TP + FP + FN)`, algebraically equal to `2PR / (P + R)`. The
    /// count form makes equal ratios compare exactly equal.
    pub fn f1(&self) -> f64 {
        ratio(
            2 * self.true_positives,
            2 * self.true_positives + self.false_positives + self.false_negatives,
        )
    }
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.true_positives += o.true_positives;
        self.false_positives += o.false_positives;
        self.false_negatives += o.false_negatives;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Greedy one-to-one matching by center distance. Detections are visited by
/// descending confidence and each claims the nearest unmatched mitotic truth
/// within `radius_px` (distance ties go to the earlier truth). Returns, per
/// detection in input order, whether it was matched, plus the number of
/// mitotic truths.
pub fn match_flags(
    detections: &[Detection],
    truths: &[GroundTruthAnnotation],
    radius_px: f64,
) -> Result<(Vec<bool>, usize)> {
    if !(radius_px.is_finite() && radius_px > 0.0) {
        return Err(Error::invalid(format!(
            "match radius must be positive, got {radius_px}"
        )));
    }
    let mitotic: Vec<(f64, f64)> = truths
        .iter()
        .filter(|t| t.is_mitotic)
        .map(|t| (t.cx, t.cy))
        .collect();

    let key = |x: f64, y: f64| ((x / radius_px).floor() as i64, (y / radius_px).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &(x, y)) in mitotic.iter().enumerate() {
        grid.entry(key(x, y)).or_default().push(i);
    }

    let r2 = radius_px * radius_px;
    let mut taken = vec![false; mitotic.len()];
    let mut matched = vec![false; detections.len()];
    for di in confidence_order(detections) {
        let d = &detections[di];
        let (kx, ky) = key(d.cx, d.cy);
        let mut best: Option<(f64, usize)> = None;
        for gx in kx - 1..=kx + 1 {
            for gy in ky - 1..=ky + 1 {
                for &ti in grid.get(&(gx, gy)).into_iter().flatten() {
                    if taken[ti] {
                        continue;
                    }
                    let (tx, ty) = mitotic[ti];
                    let dist2 = (tx - d.cx).powi(2) + (ty - d.cy).powi(2);
                    if dist2 > r2 {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bd, bi)) => dist2 < bd || (dist2 == bd && ti < bi),
                    };
                    if better {
                        best = Some((dist2, ti));
                    }
                }
            }
        }
        if let Some((_, ti)) = best {
            taken[ti] = true;
            matched[di] = true;
        }
    }
    Ok((matched, mitotic.len()))
}

pub fn match_detections(
    detections: &[Detection],
    truths: &[GroundTruthAnnotation],
    radius_px: f64,
) -> Result<MatchCounts> {
    let (flags, n_truth) = match_flags(detections, truths, radius_px)?;
    let tp = flags.iter().filter(|&&m| m).count();
    Ok(MatchCounts {
        true_positives: tp,
        false_positives: detections.len() - tp,
        false_negatives: n_truth - tp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub best_threshold: f64,
    pub best_f1: f64,
    /// Ascending by threshold.
    pub pr_curve: Vec<PrPoint>,
}

/// Detections and annotations of one slide.
#[derive(Debug, Clone, Copy)]
pub struct SlideEvidence<'a> {
    pub detections: &'a [Detection],
    pub truths: &'a [GroundTruthAnnotation],
}

/// Single-slide convenience wrapper around [`optimize_threshold_multi`].
pub fn optimize_threshold(
    detections: &[Detection],
    truths: &[GroundTruthAnnotation],
    radius_px: f64,
) -> Result<ThresholdResult> {
    optimize_threshold_multi(
        &[SlideEvidence {
            detections,
            truths,
        }],
        radius_px,
    )
}

/// Sweeps every distinct confidence as a cutoff (keeping detections with
/// confidence at or above it) and returns the cutoff of maximal F1, pooled
/// over all slides. Equal F1 resolves to the lowest cutoff.
///
/// Greedy matching visits detections by descending confidence, so matching
/// the detections above a cutoff reproduces the prefix of the full matching.
/// One matching per slide therefore yields the whole curve.
pub fn optimize_threshold_multi(slides: &[SlideEvidence<'_>], radius_px: f64) -> Result<ThresholdResult> {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut n_truth = 0usize;
    for s in slides {
        let (flags, nt) = match_flags(s.detections, s.truths, radius_px)?;
        n_truth += nt;
        scored.extend(s.detections.iter().zip(flags).map(|(d, m)| (d.confidence, m)));
    }
    if scored.is_empty() {
        return Err(if n_truth == 0 {
            Error::UndefinedF1
        } else {
            Error::invalid("threshold optimization needs at least one detection")
        });
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let counts = MatchCounts {
            true_positives: tp,
            false_positives: fp,
            false_negatives: n_truth - tp,
        };
        curve.push(PrPoint {
            threshold,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            true_positives: tp,
            false_positives: fp,
            false_negatives: counts.false_negatives,
        });
    }
    curve.reverse();

    // Ascending scan with strict improvement keeps the lowest cutoff on ties.
    let mut best = curve[0];
    for p in &curve[1..] {
        if p.f1 > best.f1 {
            best = *p;
        }
    }
    Ok(ThresholdResult {
        best_threshold: best.threshold,
        best_f1: best.f1,
        pr_curve: curve,
    })
}
