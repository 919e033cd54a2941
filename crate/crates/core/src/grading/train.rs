use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{GradingModel, ModelKind, Params, Standardizer, TrainConfig};
use super::params::{CombinedParams, FeatureHeadParams, LogisticParams};
use crate::error::{Error, Result};

/// One training case: a patient's mitotic count, the mean of its ROI patch
/// features (raw, unstandardized) and the regression target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub patient_id: String,
    pub mc: f64,
    pub mean_features: Option<Vec<f64>>,
    pub target: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GradingModel,
    /// Training loss of the parameters entering each epoch; entry 0 is the
    /// initialization.
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    /// Index into the curves of the returned parameters.
    pub best_epoch: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

/// Seeded patient split. Ids are sorted, shuffled, and the first
/// `ceil((1 - val_fraction) * n)` go to training; both sides are non-empty.
pub fn split_patients(
    patient_ids: &[String],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if patient_ids.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least two patients to split, got {}",
            patient_ids.len()
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let mut ids = patient_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != patient_ids.len() {
        return Err(Error::integrity("duplicate patient id in split"));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    // The epsilon absorbs representation error, e.g. 0.85 * 20.
    let n_train = (((1.0 - val_fraction) * n as f64) - 1e-9).ceil() as usize;
    let n_train = n_train.clamp(1, n - 1);
    let val = ids.split_off(n_train);
    Ok((ids, val))
}

struct Sample {
    mc: f64,
    x: Vec<f64>,
    target: f64,
}

fn mse_of(params: &Params, samples: &[Sample]) -> f64 {
    samples
        .iter()
        .map(|s| {
            let e = params.score(s.mc, &s.x) - s.target;
            e * e
        })
        .sum::<f64>()
        / samples.len() as f64
}

fn mean_gradient(params: &Params, samples: &[Sample], n_params: usize) -> Vec<f64> {
    let mut g = vec![0.0; n_params];
    for s in samples {
        for (acc, v) in g.iter_mut().zip(params.sample_gradient(s.mc, &s.x, s.target)) {
            *acc += v;
        }
    }
    let n = samples.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// Parameters training starts from.
pub fn initial_params(kind: ModelKind, feature_dim: usize, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = || FeatureHeadParams {
        weights: (0..feature_dim)
            .map(|_| rng.random_range(-0.01..=0.01))
            .collect(),
        bias: 2.0,
    };
    match kind {
        ModelKind::McOnly => Params::McOnly(LogisticParams::INITIAL),
        ModelKind::ImageOnly => Params::ImageOnly(head()),
        ModelKind::Combined => Params::Combined(CombinedParams {
            logistic: LogisticParams::INITIAL,
            feature_head: head(),
            merge_w_mc: 1.0,
            merge_w_img: 1.0,
            merge_b: 0.0,
        }),
    }
}

fn to_samples(
    rows: &[TrainingRow],
    kind: ModelKind,
    standardizer: Option<&Standardizer>,
) -> Result<Vec<Sample>> {
    rows.iter()
        .map(|r| {
            if !(r.mc.is_finite() && r.mc >= 0.0 && r.target.is_finite()) {
                return Err(Error::invalid(format!(
                    "patient {}: mitotic count and target must be finite, count non-negative",
                    r.patient_id
                )));
            }
            let x = match (kind.uses_features(), &r.mean_features, standardizer) {
                (false, _, _) => Vec::new(),
                (true, Some(f), Some(s)) => {
                    if f.len() != s.dim() {
                        return Err(Error::invalid(format!(
                            "patient {}: feature dimension {} differs from {}",
                            r.patient_id,
                            f.len(),
                            s.dim()
                        )));
                    }
                    s.apply(f)
                }
                (true, _, _) => {
                    return Err(Error::invalid(format!(
                        "patient {}: {} model needs patch features",
                        r.patient_id,
                        kind.name()
                    )))
                }
            };
            Ok(Sample {
                mc: r.mc,
                x,
                target: r.target,
            })
        })
        .collect()
}

/// Full-batch gradient descent on mean squared error with early stopping
/// on the validation loss. Returns the parameters of the epoch with the
/// lowest validation loss.
pub fn train_split(
    kind: ModelKind,
    train: &[TrainingRow],
    val: &[TrainingRow],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }

    let standardizer = if kind.uses_features() {
        let feats: Vec<&[f64]> = train
            .iter()
            .map(|r| {
                r.mean_features.as_deref().ok_or_else(|| {
                    Error::invalid(format!(
                        "patient {}: {} model needs patch features",
                        r.patient_id,
                        kind.name()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        Some(Standardizer::fit(&feats)?)
    } else {
        None
    };
    let train_s = to_samples(train, kind, standardizer.as_ref())?;
    let val_s = to_samples(val, kind, standardizer.as_ref())?;

    let dim = standardizer.as_ref().map_or(0, Standardizer::dim);
    let mut params = initial_params(kind, dim, config.seed);
    let mut theta = params.to_vec();
    let n_params = theta.len();

    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut stale = 0usize;
    for epoch in 0..=config.max_epochs {
        let train_loss = mse_of(&params, &train_s);
        let val_loss = mse_of(&params, &val_s);
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        train_curve.push(train_loss);
        val_curve.push(val_loss);
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
        if epoch == config.max_epochs {
            break;
        }
        let grad = mean_gradient(&params, &train_s, n_params);
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= config.learning_rate * g;
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::TrainingDiverged { epoch: epoch + 1 });
        }
        params = Params::from_vec(kind, &theta);
    }

    Ok(TrainOutcome {
        model: GradingModel {
            params: best.2,
            standardizer,
            seed: config.seed,
            config: *config,
        },
        train_curve,
        val_curve,
        best_epoch: best.1,
        train_ids: train.iter().map(|r| r.patient_id.clone()).collect(),
        val_ids: val.iter().map(|r| r.patient_id.clone()).collect(),
    })
}

/// Splits the rows by patient with the configured seed and trains.
pub fn train(kind: ModelKind, rows: &[TrainingRow], config: &TrainConfig) -> Result<TrainOutcome> {
    let ids: Vec<String> = rows.iter().map(|r| r.patient_id.clone()).collect();
    let (train_ids, _) = split_patients(&ids, config.val_fraction, config.seed)?;
    let train_set: std::collections::HashSet<&str> = train_ids.iter().map(String::as_str).collect();
    let (tr, va): (Vec<TrainingRow>, Vec<TrainingRow>) = rows
        .iter()
        .cloned()
        .partition(|r| train_set.contains(r.patient_id.as_str()));
    train_split(kind, &tr, &va, config)
}
