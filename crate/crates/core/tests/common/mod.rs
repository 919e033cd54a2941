//! Definition-level reference implementations shared by the integration
//! tests. Each one favours obviousness over speed and shares no code with
//! the library beyond the plain data types.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mitograde::threshold_opt::GroundTruthAnnotation;
use mitograde::Detection;
use num::{BigInt, BigRational, Signed, ToPrimitive, Zero};

/// Max-count window by trying every (point x, point y) pair as the
/// top-left corner and counting every point. Returns (count, top, left)
/// with the smallest (top, left) among maxima.
pub fn naive_max_window(points: &[(f64, f64)], w: f64, h: f64) -> (usize, f64, f64) {
    let mut best = (0usize, f64::INFINITY, f64::INFINITY);
    for &(_, t) in points {
        for &(l, _) in points {
            let c = points
                .iter()
                .filter(|&&(x, y)| l <= x && x < l + w && t <= y && y < t + h)
                .count();
            if c > best.0 || (c == best.0 && (t, l) < (best.1, best.2)) {
                best = (c, t, l);
            }
        }
    }
    best
}

fn box_iou(a: &Detection, b: &Detection) -> f64 {
    let w = (a.cx + a.half_side).min(b.cx + b.half_side) - (a.cx - a.half_side).max(b.cx - b.half_side);
    let h = (a.cy + a.half_side).min(b.cy + b.half_side) - (a.cy - a.half_side).max(b.cy - b.half_side);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let sa = 2.0 * a.half_side;
    let sb = 2.0 * b.half_side;
    inter / (sa * sa + sb * sb - inter)
}

/// Greedy NMS exactly as defined: repeatedly take the best remaining box
/// and delete everything overlapping it beyond the threshold. Returns kept
/// input indices in selection order.
pub fn nms_oracle(d: &[Detection], thr: f64) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..d.len()).collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut bi = 0;
        for k in 1..remaining.len() {
            let (i, j) = (remaining[k], remaining[bi]);
            let better = d[i].confidence > d[j].confidence
                || (d[i].confidence == d[j].confidence
                    && (d[i].cy, d[i].cx, i) < (d[j].cy, d[j].cx, j));
            if better {
                bi = k;
            }
        }
        let top = remaining.swap_remove(bi);
        kept.push(top);
        remaining.retain(|&i| box_iou(&d[top], &d[i]) <= thr);
    }
    kept
}

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Pearson coefficient with every sum computed exactly in rationals; only
/// the final square root is rounded.
pub fn exact_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = BigRational::from_integer(BigInt::from(x.len()));
    let mx = x.iter().map(|&v| rat(v)).fold(BigRational::zero(), |a, b| a + b) / &n;
    let my = y.iter().map(|&v| rat(v)).fold(BigRational::zero(), |a, b| a + b) / &n;
    let (mut sxy, mut sxx, mut syy) = (BigRational::zero(), BigRational::zero(), BigRational::zero());
    for (&a, &b) in x.iter().zip(y) {
        let da = rat(a) - &mx;
        let db = rat(b) - &my;
        sxy += &da * &db;
        sxx += &da * &da;
        syy += &db * &db;
    }
    let q = (&sxy * &sxy / (sxx * syy)).to_f64().unwrap();
    let r = q.sqrt();
    if sxy.is_negative() {
        -r
    } else {
        r
    }
}

/// Rank of v[i] = (#less) + (#equal + 1) / 2.
pub fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn exact_mse(p: &[f64], t: &[f64]) -> f64 {
    let n = BigRational::from_integer(BigInt::from(p.len()));
    let s = p
        .iter()
        .zip(t)
        .map(|(&a, &b)| {
            let d = rat(a) - rat(b);
            &d * &d
        })
        .fold(BigRational::zero(), |a, b| a + b);
    (s / n).to_f64().unwrap()
}

fn within(d: &Detection, t: &GroundTruthAnnotation, r: f64) -> bool {
    (d.cx - t.cx).powi(2) + (d.cy - t.cy).powi(2) <= r * r
}

/// Greedy matching by the literal rule, scanning all truths per detection.
/// Returns the number of matched detections.
pub fn greedy_tp_oracle(d: &[Detection], truths: &[GroundTruthAnnotation], r: f64) -> usize {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&i, &j| {
        d[j].confidence
            .total_cmp(&d[i].confidence)
            .then(d[i].cy.total_cmp(&d[j].cy))
            .then(d[i].cx.total_cmp(&d[j].cx))
            .then(i.cmp(&j))
    });
    let mitotic: Vec<&GroundTruthAnnotation> = truths.iter().filter(|t| t.is_mitotic).collect();
    let mut taken = vec![false; mitotic.len()];
    let mut tp = 0;
    for i in order {
        let mut best: Option<(f64, usize)> = None;
        for (k, t) in mitotic.iter().enumerate() {
            if taken[k] || !within(&d[i], t, r) {
                continue;
            }
            let dist = (d[i].cx - t.cx).powi(2) + (d[i].cy - t.cy).powi(2);
            if best.is_none_or(|(bd, _)| dist < bd) {
                best = Some((dist, k));
            }
        }
        if let Some((_, k)) = best {
            taken[k] = true;
            tp += 1;
        }
    }
    tp
}

/// Maximum cardinality matching between detections and mitotic truths on
/// distance-feasible pairs (augmenting paths).
pub fn optimal_tp(d: &[Detection], truths: &[GroundTruthAnnotation], r: f64) -> usize {
    let mitotic: Vec<&GroundTruthAnnotation> = truths.iter().filter(|t| t.is_mitotic).collect();
    let adj: Vec<Vec<usize>> = d
        .iter()
        .map(|det| (0..mitotic.len()).filter(|&k| within(det, mitotic[k], r)).collect())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; mitotic.len()];
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &k in &adj[i] {
            if seen[k] {
                continue;
            }
            seen[k] = true;
            if owner[k].is_none_or(|j| augment(j, adj, seen, owner)) {
                owner[k] = Some(i);
                return true;
            }
        }
        false
    }
    (0..d.len())
        .filter(|&i| augment(i, &adj, &mut vec![false; mitotic.len()], &mut owner))
        .count()
}

/// Best (threshold, F1) by re-matching from scratch at every distinct
/// confidence; F1 as 2TP / (2TP + FP + FN). Ties go to the lower threshold.
pub fn enumerate_best_f1(
    slides: &[(Vec<Detection>, Vec<GroundTruthAnnotation>)],
    r: f64,
) -> (f64, f64) {
    let mut cands: Vec<f64> = slides
        .iter()
        .flat_map(|(d, _)| d.iter().map(|x| x.confidence))
        .collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let mut best = (f64::NAN, -1.0);
    for &c in &cands {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (d, t) in slides {
            let kept: Vec<Detection> = d.iter().copied().filter(|x| x.confidence >= c).collect();
            let m = greedy_tp_oracle(&kept, t, r);
            let n_truth = t.iter().filter(|x| x.is_mitotic).count();
            tp += m;
            fp += kept.len() - m;
            fneg += n_truth - m;
        }
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64;
        if f1 > best.1 {
            best = (c, f1);
        }
    }
    best
}

/// Central finite-difference check of an analytic gradient. The relative
/// error uses a floor of 1e-3 on the denominator so that components close
/// to zero (saturated sigmoid) are judged on absolute error.
pub fn max_grad_error(
    theta: &[f64],
    analytic: &[f64],
    loss: impl Fn(&[f64]) -> f64,
    step: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let mut p = theta.to_vec();
        let mut m = theta.to_vec();
        p[i] += step;
        m[i] -= step;
        let numeric = (loss(&p) - loss(&m)) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-3);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// Every file under `root` keyed by relative path.
pub fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
