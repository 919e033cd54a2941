//! Mitotic-count hotspot search.
//!
//! Finds the placement of a fixed-size axis-aligned window that contains
//! the most detection centers. A window at top-left `(l, t)` contains a
//! point `(x, y)` iff `l <= x < l + w` and `t <= y < t + h`.
//!
//! Any maximal window can be slid right/down until its left edge sits on a
//! point's x and its top edge on a point's y (clamped into the allowed
//! placement range) without losing a point, so only those candidate
//! coordinates need to be examined. The exact search sweeps the candidate
//! tops in ascending order, keeps the points whose y lies in the current
//! band, and maintains per-candidate-left counts in a range-add/range-max
//! segment tree. That is `O(n log n)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{window_dims_px, window_contains, RoiWindow, SlideGeometry, SlideRecord};

/// Allowed range of window top-left positions, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub left_min: f64,
    pub left_max: f64,
    pub top_min: f64,
    pub top_max: f64,
}

impl Placement {
    pub const UNBOUNDED: Placement = Placement {
        left_min: f64::NEG_INFINITY,
        left_max: f64::INFINITY,
        top_min: f64::NEG_INFINITY,
        top_max: f64::INFINITY,
    };

    /// Positions that keep a `w x h` window on the slide. Along an axis where
    /// the slide is smaller than the window the only position is 0.
    pub fn on_slide(geometry: &SlideGeometry, w: f64, h: f64) -> Placement {
        Placement {
            left_min: 0.0,
            left_max: (geometry.width_px as f64 - w).max(0.0),
            top_min: 0.0,
            top_max: (geometry.height_px as f64 - h).max(0.0),
        }
    }

    fn fallback(&self) -> (f64, f64) {
        let pick = |lo: f64| if lo.is_finite() { lo } else { 0.0 };
        (pick(self.left_min), pick(self.top_min))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SearchMode {
    /// Exact maximizer over all placements.
    Exact,
    /// Window tops and lefts restricted to a grid with the given pitch in
    /// pixels, starting at the low end of the placement range.
    Strided { stride_px: f64 },
}

/// Segment tree over `n` slots holding integer counts. Supports adding to a
/// contiguous range and reading the global maximum with its leftmost slot.
///
/// Adds are not pushed down: each node stores the pending add of its whole
/// range and the max of its subtree including that add.
#[derive(Debug, Clone)]
pub struct MaxAddTree {
    n: usize,
    max: Vec<i32>,
    pending: Vec<i32>,
}

impl MaxAddTree {
    pub fn new(n: usize) -> Self {
        let size = 4 * n.max(1);
        MaxAddTree {
            n,
            max: vec![0; size],
            pending: vec![0; size],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Adds `v` to every slot in `lo..hi`.
    pub fn add(&mut self, lo: usize, hi: usize, v: i32) {
        if lo < hi {
            debug_assert!(hi <= self.n);
            self.add_rec(1, 0, self.n, lo, hi, v);
        }
    }

    fn add_rec(&mut self, node: usize, nl: usize, nr: usize, lo: usize, hi: usize, v: i32) {
        if lo <= nl && nr <= hi {
            self.max[node] += v;
            self.pending[node] += v;
            return;
        }
        let mid = (nl + nr) / 2;
        if lo < mid {
            self.add_rec(2 * node, nl, mid, lo, hi, v);
        }
        if hi > mid {
            self.add_rec(2 * node + 1, mid, nr, lo, hi, v);
        }
        self.max[node] = self.pending[node] + self.max[2 * node].max(self.max[2 * node + 1]);
    }

    /// Maximum value and the smallest slot holding it.
    pub fn max_leftmost(&self) -> (i32, usize) {
        assert!(self.n > 0, "empty tree");
        let (mut node, mut nl, mut nr) = (1, 0, self.n);
        while nr - nl > 1 {
            let below = self.max[node] - self.pending[node];
            let mid = (nl + nr) / 2;
            if self.max[2 * node] == below {
                node *= 2;
                nr = mid;
            } else {
                node = 2 * node + 1;
                nl = mid;
            }
        }
        (self.max[1], nl)
    }
}

fn check_dims(w: f64, h: f64) -> Result<()> {
    if !(w.is_finite() && w > 0.0 && h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!(
            "window dimensions must be positive, got {w} x {h}"
        )));
    }
    Ok(())
}

fn check_points(points: &[(f64, f64)]) -> Result<()> {
    if points.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(Error::invalid("point coordinates must be finite"));
    }
    Ok(())
}

fn sorted_distinct(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Candidate lefts and tops: point coordinates clamped into the placement.
fn point_candidates(points: &[(f64, f64)], p: &Placement) -> (Vec<f64>, Vec<f64>) {
    let ls = sorted_distinct(points.iter().map(|&(x, _)| x.clamp(p.left_min, p.left_max)).collect());
    let ts = sorted_distinct(points.iter().map(|&(_, y)| y.clamp(p.top_min, p.top_max)).collect());
    (ls, ts)
}

fn grid_candidates(lo: f64, hi: f64, stride: f64) -> Vec<f64> {
    let steps = ((hi - lo) / stride).floor() as usize;
    (0..=steps).map(|k| lo + k as f64 * stride).collect()
}

fn window(l: f64, t: f64, w: f64, h: f64, count: usize) -> RoiWindow {
    RoiWindow {
        left: l,
        top: t,
        width_px: w,
        height_px: h,
        mitotic_count: count as u32,
    }
}

/// Best `(count, left index, top index)` over the candidate grid, ties to
/// the smallest top and then the smallest left.
fn sweep(points: &[(f64, f64)], w: f64, h: f64, ls: &[f64], ts: &[f64]) -> (usize, usize, usize) {
    let mut by_y: Vec<(f64, f64)> = points.to_vec();
    by_y.sort_by(|a, b| a.1.total_cmp(&b.1));
    // Candidate lefts l with l <= x < l + w form one contiguous run.
    let spans: Vec<(usize, usize)> = by_y
        .iter()
        .map(|&(x, _)| {
            let lo = ls.partition_point(|&l| l + w <= x);
            let hi = ls.partition_point(|&l| l <= x);
            (lo, hi)
        })
        .collect();

    let mut tree = MaxAddTree::new(ls.len());
    let (mut ahead, mut behind) = (0, 0);
    let mut best: Option<(usize, usize, usize)> = None;
    for (ti, &t) in ts.iter().enumerate() {
        while ahead < by_y.len() && by_y[ahead].1 < t + h {
            tree.add(spans[ahead].0, spans[ahead].1, 1);
            ahead += 1;
        }
        while behind < ahead && by_y[behind].1 < t {
            tree.add(spans[behind].0, spans[behind].1, -1);
            behind += 1;
        }
        let (count, li) = tree.max_leftmost();
        let count = count as usize;
        if best.is_none_or(|(c, _, _)| count > c) {
            best = Some((count, li, ti));
        }
    }
    best.expect("at least one candidate top")
}

/// Exact maximal window with tops and lefts restricted to `placement`.
pub fn max_count_window_in(
    points: &[(f64, f64)],
    w: f64,
    h: f64,
    placement: &Placement,
) -> Result<RoiWindow> {
    check_dims(w, h)?;
    check_points(points)?;
    if points.is_empty() {
        let (l, t) = placement.fallback();
        return Ok(window(l, t, w, h, 0));
    }
    let (ls, ts) = point_candidates(points, placement);
    let (count, li, ti) = sweep(points, w, h, &ls, &ts);
    Ok(window(ls[li], ts[ti], w, h, count))
}

/// Exact maximal `w x h` window anywhere in the plane.
pub fn max_count_window(points: &[(f64, f64)], w: f64, h: f64) -> Result<RoiWindow> {
    max_count_window_in(points, w, h, &Placement::UNBOUNDED)
}

/// Reference search: counts every candidate window directly. `O(n^2 log n)`.
pub fn max_count_window_bruteforce_in(
    points: &[(f64, f64)],
    w: f64,
    h: f64,
    placement: &Placement,
) -> Result<RoiWindow> {
    check_dims(w, h)?;
    check_points(points)?;
    if points.is_empty() {
        let (l, t) = placement.fallback();
        return Ok(window(l, t, w, h, 0));
    }
    let (ls, ts) = point_candidates(points, placement);
    let mut best: Option<RoiWindow> = None;
    for &t in &ts {
        let mut xs: Vec<f64> = points
            .iter()
            .filter(|&&(_, y)| t <= y && y < t + h)
            .map(|&(x, _)| x)
            .collect();
        xs.sort_by(f64::total_cmp);
        for &l in &ls {
            let count = xs.partition_point(|&x| x < l + w) - xs.partition_point(|&x| x < l);
            if best.is_none_or(|b| count > b.mitotic_count as usize) {
                best = Some(window(l, t, w, h, count));
            }
        }
    }
    Ok(best.expect("non-empty candidates"))
}

pub fn max_count_window_bruteforce(points: &[(f64, f64)], w: f64, h: f64) -> Result<RoiWindow> {
    max_count_window_bruteforce_in(points, w, h, &Placement::UNBOUNDED)
}

/// Best window among placements on a regular grid of pitch `stride_px`.
/// Never exceeds the exact maximum.
pub fn max_count_window_strided(
    points: &[(f64, f64)],
    w: f64,
    h: f64,
    placement: &Placement,
    stride_px: f64,
) -> Result<RoiWindow> {
    check_dims(w, h)?;
    check_points(points)?;
    if !(stride_px.is_finite() && stride_px > 0.0) {
        return Err(Error::invalid(format!(
            "stride must be positive, got {stride_px}"
        )));
    }
    if points.is_empty() {
        let (l, t) = placement.fallback();
        return Ok(window(l, t, w, h, 0));
    }
    // Unbounded axes fall back to the span of placements touching a point.
    let span = |lo: f64, hi: f64, min_c: f64, max_c: f64, ext: f64| {
        let lo = if lo.is_finite() { lo } else { min_c - ext };
        let hi = if hi.is_finite() { hi } else { max_c };
        (lo, hi.max(lo))
    };
    let (min_x, max_x, min_y, max_y) = points.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    let (l0, l1) = span(placement.left_min, placement.left_max, min_x, max_x, w);
    let (t0, t1) = span(placement.top_min, placement.top_max, min_y, max_y, h);
    let ls = grid_candidates(l0, l1, stride_px);
    let ts = grid_candidates(t0, t1, stride_px);
    let (count, li, ti) = sweep(points, w, h, &ls, &ts);
    Ok(window(ls[li], ts[ti], w, h, count))
}

/// Counts points inside a window by direct scan.
pub fn count_in_window(points: &[(f64, f64)], left: f64, top: f64, w: f64, h: f64) -> usize {
    points
        .iter()
        .filter(|&&(x, y)| window_contains(left, top, w, h, x, y))
        .count()
}

/// Mitotic count of a slide: the detection count of its densest window of
/// `area_mm2` at the given aspect, with the window kept on the slide.
pub fn mc_for_slide(
    slide: &SlideRecord,
    area_mm2: f64,
    aspect: f64,
    mode: SearchMode,
) -> Result<(u32, RoiWindow)> {
    let (w, h) = window_dims_px(&slide.geometry, area_mm2, aspect)?;
    let placement = Placement::on_slide(&slide.geometry, w, h);
    let points = slide.centers();
    let roi = match mode {
        SearchMode::Exact => max_count_window_in(&points, w, h, &placement)?,
        SearchMode::Strided { stride_px } => {
            max_count_window_strided(&points, w, h, &placement, stride_px)?
        }
    };
    Ok((roi.mitotic_count, roi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Detection;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Literal O(n^3) evaluation of every point-anchored candidate.
    fn cubic(points: &[(f64, f64)], w: f64, h: f64) -> (usize, f64, f64) {
        let mut ts: Vec<f64> = points.iter().map(|p| p.1).collect();
        let mut ls: Vec<f64> = points.iter().map(|p| p.0).collect();
        ts.sort_by(f64::total_cmp);
        ls.sort_by(f64::total_cmp);
        let mut best = (0, f64::NAN, f64::NAN);
        let mut first = true;
        for &t in &ts {
            for &l in &ls {
                let c = count_in_window(points, l, t, w, h);
                if first || c > best.0 {
                    best = (c, t, l);
                    first = false;
                }
            }
        }
        best
    }

    #[test]
    fn tree_range_add_and_argmax() {
        let mut t = MaxAddTree::new(7);
        assert_eq!(t.max_leftmost(), (0, 0));
        t.add(2, 5, 1);
        t.add(4, 7, 1);
        assert_eq!(t.max_leftmost(), (2, 4));
        t.add(4, 5, -1);
        assert_eq!(t.max_leftmost(), (1, 2));
        t.add(0, 7, 3);
        assert_eq!(t.max_leftmost(), (4, 2));
    }

    #[test]
    fn tree_matches_array_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1usize, 2, 3, 5, 17, 64, 100] {
            let mut tree = MaxAddTree::new(n);
            let mut model = vec![0i32; n];
            for _ in 0..400 {
                let a = rng.random_range(0..n);
                let b = rng.random_range(a..=n);
                let v = rng.random_range(-2..=3);
                tree.add(a, b, v);
                model[a..b].iter_mut().for_each(|m| *m += v);
                let max = *model.iter().max().unwrap();
                let arg = model.iter().position(|&m| m == max).unwrap();
                assert_eq!(tree.max_leftmost(), (max, arg));
            }
        }
    }

    #[test]
    fn empty_points_fall_back_to_origin() {
        let r = max_count_window(&[], 5.0, 5.0).unwrap();
        assert_eq!((r.left, r.top, r.mitotic_count), (0.0, 0.0, 0));
        let r = max_count_window_bruteforce(&[], 5.0, 5.0).unwrap();
        assert_eq!((r.left, r.top, r.mitotic_count), (0.0, 0.0, 0));
    }

    #[test]
    fn single_point() {
        let r = max_count_window(&[(10.0, 10.0)], 5.0, 5.0).unwrap();
        assert_eq!((r.left, r.top, r.mitotic_count), (10.0, 10.0, 1));
    }

    #[test]
    fn cluster_beats_scatter() {
        let mut pts = vec![
            (50.0, 50.0),
            (51.0, 52.5),
            (52.0, 51.0),
            (53.5, 53.5),
            (50.5, 54.0),
            (54.0, 50.2),
            (52.2, 52.2),
        ];
        pts.extend([(0.0, 0.0), (100.0, 3.0), (20.0, 90.0)]);
        let fast = max_count_window(&pts, 5.0, 5.0).unwrap();
        let slow = max_count_window_bruteforce(&pts, 5.0, 5.0).unwrap();
        assert_eq!(fast.mitotic_count, 7);
        assert_eq!(fast, slow);
        assert_eq!(cubic(&pts, 5.0, 5.0).0, 7);
    }

    #[test]
    fn coincident_points() {
        let pts = vec![(3.0, 4.0); 9];
        assert_eq!(max_count_window(&pts, 1.0, 1.0).unwrap().mitotic_count, 9);
    }

    #[test]
    fn equal_clusters_resolve_to_smaller_top() {
        let a: Vec<(f64, f64)> = (0..5).map(|i| (100.0 + i as f64, 10.0 + i as f64)).collect();
        let b: Vec<(f64, f64)> = (0..5).map(|i| (10.0 + i as f64, 200.0 + i as f64)).collect();
        let pts: Vec<_> = b.iter().chain(a.iter()).copied().collect();
        let r = max_count_window(&pts, 10.0, 10.0).unwrap();
        assert_eq!((r.left, r.top, r.mitotic_count), (100.0, 10.0, 5));
    }

    #[test]
    fn right_and_bottom_edges_are_open() {
        let pts = [(0.0, 0.0), (5.0, 0.0)];
        assert_eq!(max_count_window(&pts, 5.0, 1.0).unwrap().mitotic_count, 1);
        assert_eq!(max_count_window(&pts, 5.0001, 1.0).unwrap().mitotic_count, 2);
    }

    #[test]
    fn agrees_with_cubic_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(1..40);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    (
                        rng.random_range(0..30) as f64,
                        rng.random_range(0..30) as f64,
                    )
                })
                .collect();
            let w = rng.random_range(1..12) as f64;
            let h = rng.random_range(1..12) as f64;
            let r = max_count_window(&pts, w, h).unwrap();
            let (c, t, l) = cubic(&pts, w, h);
            assert_eq!((r.mitotic_count as usize, r.top, r.left), (c, t, l));
        }
    }

    #[test]
    fn bounded_placement_matches_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let n = rng.random_range(1..60);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..80.0)))
                .collect();
            let p = Placement {
                left_min: 0.0,
                left_max: rng.random_range(0.0..90.0),
                top_min: 0.0,
                top_max: rng.random_range(0.0..70.0),
            };
            let w = rng.random_range(1.0..30.0);
            let h = rng.random_range(1.0..30.0);
            let fast = max_count_window_in(&pts, w, h, &p).unwrap();
            let slow = max_count_window_bruteforce_in(&pts, w, h, &p).unwrap();
            assert_eq!(fast, slow);
            assert!(fast.left <= p.left_max && fast.top <= p.top_max);
            assert_eq!(
                count_in_window(&pts, fast.left, fast.top, w, h),
                fast.mitotic_count as usize
            );
        }
    }

    #[test]
    fn strided_is_a_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let pts: Vec<(f64, f64)> = (0..200)
                .map(|_| (rng.random_range(0.0..500.0), rng.random_range(0.0..400.0)))
                .collect();
            let p = Placement {
                left_min: 0.0,
                left_max: 440.0,
                top_min: 0.0,
                top_max: 355.0,
            };
            let exact = max_count_window_in(&pts, 60.0, 45.0, &p).unwrap();
            let coarse = max_count_window_strided(&pts, 60.0, 45.0, &p, 7.0).unwrap();
            assert!(coarse.mitotic_count <= exact.mitotic_count);
            assert_eq!(
                count_in_window(&pts, coarse.left, coarse.top, 60.0, 45.0),
                coarse.mitotic_count as usize
            );
        }
    }

    #[test]
    fn strided_with_unit_stride_on_integer_points_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let pts: Vec<(f64, f64)> = (0..60)
                .map(|_| (rng.random_range(0..50) as f64, rng.random_range(0..50) as f64))
                .collect();
            let p = Placement {
                left_min: 0.0,
                left_max: 45.0,
                top_min: 0.0,
                top_max: 45.0,
            };
            let exact = max_count_window_in(&pts, 5.0, 5.0, &p).unwrap();
            let grid = max_count_window_strided(&pts, 5.0, 5.0, &p, 1.0).unwrap();
            // Ties may resolve to different windows; the count must agree.
            assert_eq!(exact.mitotic_count, grid.mitotic_count);
            assert_eq!(
                count_in_window(&pts, grid.left, grid.top, 5.0, 5.0),
                grid.mitotic_count as usize
            );
        }
    }

    #[test]
    fn slide_smaller_than_window_uses_origin() {
        let slide = SlideRecord {
            slide_id: "s".into(),
            patient_id: "p".into(),
            geometry: SlideGeometry::new(500, 400, 1.0).unwrap(),
            detections: vec![
                Detection::new(10.0, 10.0, 0.9),
                Detection::new(490.0, 390.0, 0.9),
            ],
            patch_features: None,
        };
        let (mc, roi) = mc_for_slide(&slide, 2.5, 4.0 / 3.0, SearchMode::Exact).unwrap();
        assert_eq!((mc, roi.left, roi.top), (2, 0.0, 0.0));
    }

    #[test]
    fn slide_without_detections() {
        let slide = SlideRecord {
            slide_id: "s".into(),
            patient_id: "p".into(),
            geometry: SlideGeometry::new(50_000, 40_000, 0.25).unwrap(),
            detections: vec![],
            patch_features: None,
        };
        let (mc, roi) = mc_for_slide(&slide, 2.5, 4.0 / 3.0, SearchMode::Exact).unwrap();
        assert_eq!((mc, roi.left, roi.top), (0, 0.0, 0.0));
    }

    #[test]
    fn rejects_degenerate_window() {
        assert!(max_count_window(&[(0.0, 0.0)], 0.0, 1.0).is_err());
        assert!(max_count_window(&[(0.0, 0.0)], 1.0, f64::NAN).is_err());
        assert!(max_count_window(&[(f64::NAN, 0.0)], 1.0, 1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn points() -> impl Strategy<Value = Vec<(f64, f64)>> {
            prop::collection::vec((0u16..200, 0u16..200), 0..80).prop_map(|v| {
                v.into_iter()
                    .map(|(x, y)| (x as f64 * 0.5, y as f64 * 0.5))
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn adding_a_point_never_lowers_the_count(
                pts in points(), extra in (0u16..200, 0u16..200), w in 1u8..40, h in 1u8..40,
            ) {
                let (w, h) = (w as f64, h as f64);
                let before = max_count_window(&pts, w, h).unwrap().mitotic_count;
                let mut more = pts.clone();
                more.push((extra.0 as f64 * 0.5, extra.1 as f64 * 0.5));
                prop_assert!(max_count_window(&more, w, h).unwrap().mitotic_count >= before);
            }

            #[test]
            fn translation_moves_the_window(
                pts in points(), dx in -64i32..64, dy in -64i32..64, w in 1u8..40, h in 1u8..40,
            ) {
                // Shifts by multiples of 0.5 on half-integer coordinates are exact.
                let (w, h) = (w as f64, h as f64);
                let (dx, dy) = (dx as f64 * 0.5, dy as f64 * 0.5);
                let a = max_count_window(&pts, w, h).unwrap();
                let moved: Vec<_> = pts.iter().map(|&(x, y)| (x + dx, y + dy)).collect();
                let b = max_count_window(&moved, w, h).unwrap();
                prop_assert_eq!(a.mitotic_count, b.mitotic_count);
                if !pts.is_empty() {
                    prop_assert_eq!((a.left + dx, a.top + dy), (b.left, b.top));
                }
            }

            #[test]
            fn permutation_invariant(pts in points(), seed in any::<u64>(), w in 1u8..40, h in 1u8..40) {
                use rand::seq::SliceRandom;
                let (w, h) = (w as f64, h as f64);
                let mut shuffled = pts.clone();
                shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                prop_assert_eq!(
                    max_count_window(&pts, w, h).unwrap(),
                    max_count_window(&shuffled, w, h).unwrap()
                );
            }
        }
    }
}
