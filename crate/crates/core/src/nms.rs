//! Tiling of a slide for patch-wise inference and removal of duplicate
//! detections where tiles overlap.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Detection, SlideGeometry};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TILE_OVERLAP: f64 = 0.1;

/// Tile rectangle `[x, x + width) x [y, y + height)` in slide pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub x: u64,
    pub y: u64,
    pub width: u64,
    pub height: u64,
}

impl Tile {
    pub fn contains_px(&self, px: u64, py: u64) -> bool {
        px >= self.x && px < self.x + self.width && py >= self.y && py < self.y + self.height
    }
}

/// Lays square tiles over the slide on a regular grid. The stride is
/// `floor(tile_size * (1 - overlap))`; tiles in the last row and column are
/// cut at the slide border.
pub fn tile_plan(geometry: &SlideGeometry, tile_size: u64, overlap: f64) -> Result<Vec<Tile>> {
    geometry.validate()?;
    if tile_size == 0 {
        return Err(Error::invalid("tile size must be at least 1 px"));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid(format!(
            "tile overlap must lie in [0, 1), got {overlap}"
        )));
    }
    let stride = ((tile_size as f64 * (1.0 - overlap)).floor() as u64).max(1);
    let xs = offsets(geometry.width_px, tile_size, stride);
    let ys = offsets(geometry.height_px, tile_size, stride);
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            tiles.push(Tile {
                x,
                y,
                width: tile_size.min(geometry.width_px - x),
                height: tile_size.min(geometry.height_px - y),
            });
        }
    }
    Ok(tiles)
}

fn offsets(extent: u64, tile: u64, stride: u64) -> Vec<u64> {
    let mut v = vec![0];
    let mut at = 0;
    while at + tile < extent {
        at += stride;
        v.push(at);
    }
    v
}

/// Maps tile-local detections back onto slide coordinates.
pub fn project_to_slide(tile: &Tile, local: &[Detection]) -> Vec<Detection> {
    local
        .iter()
        .map(|d| Detection {
            cx: d.cx + tile.x as f64,
            cy: d.cy + tile.y as f64,
            ..*d
        })
        .collect()
}

pub fn iou(a: &Detection, b: &Detection) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.bbox();
    let (bx0, by0, bx1, by1) = b.bbox();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Processing order for greedy NMS: confidence descending, then `cy`, `cx`
/// and input index ascending.
pub fn confidence_order(detections: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| cmp_rank(detections, i, j));
    order
}

fn cmp_rank(d: &[Detection], i: usize, j: usize) -> Ordering {
    d[j].confidence
        .total_cmp(&d[i].confidence)
        .then(d[i].cy.total_cmp(&d[j].cy))
        .then(d[i].cx.total_cmp(&d[j].cx))
        .then(i.cmp(&j))
}

/// Greedy hard NMS. Keeps the best remaining detection and drops every
/// remaining detection whose IoU with it exceeds `iou_threshold`. Output is
/// in processing order (descending confidence).
pub fn non_max_suppression(detections: &[Detection], iou_threshold: f64) -> Result<Vec<Detection>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "IoU threshold must lie in (0, 1], got {iou_threshold}"
        )));
    }
    for d in detections {
        d.validate()?;
    }
    if detections.is_empty() {
        return Ok(Vec::new());
    }

    // Boxes with positive intersection have centers closer than the sum of
    // their half sides, so a grid with cells of twice the largest half side
    // only needs the 3x3 neighbourhood.
    let max_half = detections
        .iter()
        .map(|d| d.half_side)
        .fold(0.0_f64, f64::max);
    let cell = 2.0 * max_half;
    let key = |d: &Detection| ((d.cx / cell).floor() as i64, (d.cy / cell).floor() as i64);

    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut kept = Vec::new();
    'candidates: for i in confidence_order(detections) {
        let d = &detections[i];
        let (kx, ky) = key(d);
        for gx in kx - 1..=kx + 1 {
            for gy in ky - 1..=ky + 1 {
                if let Some(bucket) = grid.get(&(gx, gy)) {
                    if bucket
                        .iter()
                        .any(|&k| iou(&detections[k], d) > iou_threshold)
                    {
                        continue 'candidates;
                    }
                }
            }
        }
        grid.entry((kx, ky)).or_default().push(i);
        kept.push(*d);
    }
    Ok(kept)
}
