//! Agreement between predicted malignancy scores and WHO grades.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least two pairs"));
    }
    check_finite(x)?;
    check_finite(y)
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::invalid(format!("non-finite value {} at position {i}", v[i]))),
        None => Ok(()),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation. A constant input is an error, not NaN.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("first input is constant"));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation("second input is constant"));
    }
    // sqrt of a rounded square is exact, so identical inputs give exactly 1.
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn fractional_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j averaged.
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of fractional ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&fractional_ranks(x), &fractional_ranks(y))
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::invalid(format!(
            "mse needs equal non-empty inputs, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    check_finite(pred)?;
    check_finite(target)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Nearest grade: half away from zero, clamped to 1..=3.
pub fn round_grade(score: f64) -> u8 {
    if score.is_nan() {
        return 1;
    }
    score.round().clamp(1.0, 3.0) as u8
}

/// Number of rounded predictions equal to the grade, the total, and the
/// rounded grades.
pub fn rounded_accuracy(scores: &[f64], grades: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    if scores.len() != grades.len() {
        return Err(Error::invalid("scores and grades differ in length"));
    }
    if let Some(g) = grades.iter().find(|g| !(1..=3).contains(*g)) {
        return Err(Error::invalid(format!("WHO grade out of range: {g}")));
    }
    let rounded: Vec<u8> = scores.iter().map(|&s| round_grade(s)).collect();
    let correct = rounded.iter().zip(grades).filter(|(r, g)| r == g).count();
    Ok((correct, scores.len(), rounded))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub predicted_score: f64,
    pub who_grade: u8,
    pub rounded_grade: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_case: Vec<CaseResult>,
    pub spearman: f64,
    pub pearson: f64,
    pub mse: f64,
    pub correct: usize,
    pub total: usize,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Scores every case against its grade.
pub fn evaluate(cases: &[(String, f64, u8)]) -> Result<EvalReport> {
    let scores: Vec<f64> = cases.iter().map(|c| c.1).collect();
    check_finite(&scores)?;
    let grades: Vec<u8> = cases.iter().map(|c| c.2).collect();
    let targets: Vec<f64> = grades.iter().map(|&g| g as f64).collect();
    let (correct, total, rounded) = rounded_accuracy(&scores, &grades)?;
    Ok(EvalReport {
        spearman: spearman(&scores, &targets)?,
        pearson: pearson(&scores, &targets)?,
        mse: mse(&scores, &targets)?,
        correct,
        total,
        per_case: cases
            .iter()
            .zip(rounded)
            .map(|((id, s, g), r)| CaseResult {
                case_id: id.clone(),
                predicted_score: *s,
                who_grade: *g,
                rounded_grade: r,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Mean and sample standard deviation (`n - 1` denominator).
    pub fn of(v: &[f64]) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::invalid("summary needs at least two values"));
        }
        // Shifted by the first value so identical runs report sd 0 exactly.
        let x0 = v[0];
        let m = x0 + v.iter().map(|x| x - x0).sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
        Ok(MeanSd {
            mean: m,
            sd: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: usize,
    pub spearman: MeanSd,
    pub pearson: MeanSd,
    pub mse: MeanSd,
    pub correct: MeanSd,
    pub total: usize,
}

/// Mean and SD of every metric across repeated training runs.
pub fn multi_run_summary(reports: &[EvalReport]) -> Result<RunSummary> {
    if reports.len() < 2 {
        return Err(Error::invalid(format!(
            "multi-run summary needs at least two reports, got {}",
            reports.len()
        )));
    }
    let pick = |f: fn(&EvalReport) -> f64| -> Result<MeanSd> {
        MeanSd::of(&reports.iter().map(f).collect::<Vec<_>>())
    };
    Ok(RunSummary {
        runs: reports.len(),
        spearman: pick(|r| r.spearman)?,
        pearson: pick(|r| r.pearson)?,
        mse: pick(|r| r.mse)?,
        correct: pick(|r| r.correct as f64)?,
        total: reports[0].total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverse() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_scores_are_rejected() {
        let cases = [("a".to_string(), f64::NAN, 1), ("b".to_string(), 2.0, 2)];
        assert!(matches!(evaluate(&cases), Err(Error::InvalidArgument(_))));
        assert!(mse(&[f64::INFINITY], &[1.0]).is_err());
        assert!(pearson(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn constant_is_an_error() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn average_ranks() {
        assert_eq!(fractional_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(fractional_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(fractional_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn monotone_transform_gives_one() {
        let x = [0.3, 1.7, -2.0, 5.5, 4.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert_eq!(spearman(&x, &y).unwrap(), 1.0);
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.5, 2.5, 3.5], &[1.0, 2.0, 3.0]).unwrap(), 0.25);
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn rounding_rules() {
        assert_eq!(round_grade(2.49), 2);
        assert_eq!(round_grade(2.5), 3);
        assert_eq!(round_grade(1.5), 2);
        assert_eq!(round_grade(3.7), 3);
        assert_eq!(round_grade(-0.4), 1);
        let (c, t, r) = rounded_accuracy(&[2.49, 2.5, 3.7], &[2, 2, 3]).unwrap();
        assert_eq!((c, t, r), (2, 3, vec![2, 3, 3]));
        assert!(rounded_accuracy(&[1.0], &[4]).is_err());
    }

    fn report(spearman: f64, correct: usize) -> EvalReport {
        EvalReport {
            per_case: vec![],
            spearman,
            pearson: 0.5,
            mse: 0.25,
            correct,
            total: 10,
        }
    }

    #[test]
    fn summary_of_two_runs() {
        let s = multi_run_summary(&[report(0.7, 7), report(0.9, 9)]).unwrap();
        assert!((s.spearman.mean - 0.8).abs() < 1e-15);
        assert!((s.spearman.sd - 0.1414213562373095).abs() < 1e-12);
        assert_eq!(s.pearson.sd, 0.0);
        assert_eq!(s.correct.mean, 8.0);
    }

    #[test]
    fn identical_runs_have_zero_sd() {
        let s = multi_run_summary(&[report(0.8, 8), report(0.8, 8), report(0.8, 8)]).unwrap();
        assert_eq!(
            (s.spearman.sd, s.pearson.sd, s.mse.sd, s.correct.sd),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn summary_needs_two() {
        assert!(multi_run_summary(&[report(0.8, 8)]).is_err());
    }

    #[test]
    fn evaluate_perfect_predictions() {
        let cases: Vec<(String, f64, u8)> = [1u8, 2, 3, 2, 1]
            .iter()
            .enumerate()
            .map(|(i, &g)| (format!("p{i}"), g as f64, g))
            .collect();
        let r = evaluate(&cases).unwrap();
        assert_eq!((r.spearman, r.mse, r.correct, r.total), (1.0, 0.0, 5, 5));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pearson_affine(
                pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
                a in prop::sample::select(vec![-3.5, -1.0, -0.25, 0.5, 2.0, 7.0]),
                b in -50.0f64..50.0,
            ) {
                let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let r = pearson(&x, &y).unwrap();
                let r2 = pearson(&ax, &y).unwrap();
                prop_assert!((r2 - a.signum() * r).abs() < 1e-12);
            }

            #[test]
            fn spearman_rank_invariant(
                pairs in prop::collection::vec((0u8..20, 0u8..20), 3..40),
            ) {
                let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
                let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
                prop_assume!(x.iter().any(|v| *v != x[0]) && y.iter().any(|v| *v != y[0]));
                let tx: Vec<f64> = x.iter().map(|v| v * v * v + 3.0 * v).collect();
                prop_assert_eq!(spearman(&x, &y).unwrap(), spearman(&tx, &y).unwrap());
            }

            #[test]
            fn bounded_outputs(
                pairs in prop::collection::vec((-5.0f64..5.0, 1u8..=3), 2..40),
            ) {
                let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let g: Vec<u8> = pairs.iter().map(|p| p.1).collect();
                let t: Vec<f64> = g.iter().map(|&v| v as f64).collect();
                let (c, n, r) = rounded_accuracy(&s, &g).unwrap();
                prop_assert!(c <= n);
                prop_assert!(r.iter().all(|v| (1..=3).contains(v)));
                prop_assert!(mse(&s, &t).unwrap() >= 0.0);
            }
        }
    }
}
