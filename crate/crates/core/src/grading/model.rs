use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{
    combined_forward, feature_forward, CombinedOutput, CombinedParams, FeatureHeadParams,
    LogisticParams,
};
use crate::error::{Error, Result};
use crate::types::PatchFeature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Logistic curve of the mitotic count alone.
    McOnly,
    /// Linear head over ROI patch features.
    ImageOnly,
    /// Both paths merged by a linear layer.
    Combined,
}

impl ModelKind {
    pub fn uses_features(self) -> bool {
        !matches!(self, ModelKind::McOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::McOnly => "mc_only",
            ModelKind::ImageOnly => "image_only",
            ModelKind::Combined => "combined",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" | "mc_only" => Ok(ModelKind::McOnly),
            "image" | "image_only" => Ok(ModelKind::ImageOnly),
            "combined" => Ok(ModelKind::Combined),
            other => Err(Error::invalid(format!(
                "unknown model kind {other:?} (expected mc, image or combined)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults per model kind: a larger step for the four-parameter MC
    /// model, a small one when a feature head is present.
    pub fn for_kind(kind: ModelKind) -> Self {
        TrainConfig {
            learning_rate: match kind {
                ModelKind::McOnly => 0.05,
                _ => 1e-3,
            },
            max_epochs: 10_000,
            patience: 50,
            val_fraction: 0.15,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid("validation fraction must lie in (0, 1)"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Per-dimension feature standardization fitted on the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics of the rows; dimensions with zero spread are
    /// left unscaled.
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::invalid("cannot standardize an empty feature set"))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            if r.len() != d {
                return Err(Error::invalid("feature vectors differ in dimension"));
            }
            mean.iter_mut().zip(r.iter()).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_patches(&self, patches: &[PatchFeature]) -> Result<Vec<PatchFeature>> {
        patches
            .iter()
            .map(|p| {
                if p.dim() != self.dim() {
                    return Err(Error::invalid(format!(
                        "patch feature dimension {} does not match model dimension {}",
                        p.dim(),
                        self.dim()
                    )));
                }
                Ok(PatchFeature {
                    values: self.apply(&p.values),
                    ..p.clone()
                })
            })
            .collect()
    }
}

/// Trainable parameters of one model kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    McOnly(LogisticParams),
    ImageOnly(FeatureHeadParams),
    Combined(CombinedParams),
}

impl Params {
    pub fn kind(&self) -> ModelKind {
        match self {
            Params::McOnly(_) => ModelKind::McOnly,
            Params::ImageOnly(_) => ModelKind::ImageOnly,
            Params::Combined(_) => ModelKind::Combined,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Params::McOnly(p) => p.to_array().to_vec(),
            Params::ImageOnly(p) => {
                let mut v = p.weights.clone();
                v.push(p.bias);
                v
            }
            Params::Combined(p) => p.to_vec(),
        }
    }

    pub fn from_vec(kind: ModelKind, v: &[f64]) -> Self {
        match kind {
            ModelKind::McOnly => Params::McOnly(LogisticParams::from_slice(v)),
            ModelKind::ImageOnly => Params::ImageOnly(FeatureHeadParams {
                weights: v[..v.len() - 1].to_vec(),
                bias: v[v.len() - 1],
            }),
            ModelKind::Combined => Params::Combined(CombinedParams::from_slice(v)),
        }
    }

    /// Score from a mitotic count and an averaged, standardized feature
    /// vector (ignored by the MC-only model).
    pub fn score(&self, mc: f64, mean_features: &[f64]) -> f64 {
        match self {
            Params::McOnly(p) => p.forward(mc),
            Params::ImageOnly(p) => p.score(mean_features),
            Params::Combined(p) => p.forward_mean(mc, mean_features).score,
        }
    }

    /// Gradient of `(score - target)^2`, in [`Params::to_vec`] order.
    pub fn sample_gradient(&self, mc: f64, mean_features: &[f64], target: f64) -> Vec<f64> {
        match self {
            Params::McOnly(p) => super::params::logistic_gradient(p, mc, target).to_vec(),
            Params::ImageOnly(p) => {
                let (mut g, gb) = p.gradient(mean_features, target);
                g.push(gb);
                g
            }
            Params::Combined(p) => p.gradient(mc, mean_features, target),
        }
    }
}

/// A trained regressor together with its input standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct GradingModel {
    pub params: Params,
    pub standardizer: Option<Standardizer>,
    pub seed: u64,
    pub config: TrainConfig,
}

impl GradingModel {
    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }

    fn standardized(&self, patches: Option<&[PatchFeature]>) -> Result<Vec<PatchFeature>> {
        let patches = patches.ok_or_else(|| {
            Error::invalid(format!(
                "{} model needs patch features",
                self.kind().name()
            ))
        })?;
        match &self.standardizer {
            Some(s) => s.apply_patches(patches),
            None => Ok(patches.to_vec()),
        }
    }

    /// Malignancy score for one ROI. The image path averages per-patch
    /// scores.
    pub fn predict(&self, mc: f64, patches: Option<&[PatchFeature]>) -> Result<f64> {
        match &self.params {
            Params::McOnly(p) => Ok(p.forward(mc)),
            Params::ImageOnly(p) => feature_forward(p, &self.standardized(patches)?),
            Params::Combined(p) => Ok(combined_forward(p, mc, &self.standardized(patches)?)?.score),
        }
    }

    /// Weighted contribution of each path. Single-path models report their
    /// whole score on their own path.
    pub fn explain(&self, mc: f64, patches: Option<&[PatchFeature]>) -> Result<CombinedOutput> {
        match &self.params {
            Params::McOnly(p) => {
                let s = p.forward(mc);
                Ok(CombinedOutput {
                    score: s,
                    mc_path: s,
                    img_path: 0.0,
                })
            }
            Params::ImageOnly(p) => {
                let s = feature_forward(p, &self.standardized(patches)?)?;
                Ok(CombinedOutput {
                    score: s,
                    mc_path: 0.0,
                    img_path: s,
                })
            }
            Params::Combined(p) => combined_forward(p, mc, &self.standardized(patches)?),
        }
    }

    pub fn to_file(&self) -> ModelFile {
        let mut f = ModelFile {
            kind: self.kind(),
            w1: None,
            b1: None,
            w2: None,
            b2: None,
            feature_weights: None,
            feature_bias: None,
            merge_w_mc: None,
            merge_w_img: None,
            merge_b: None,
            feature_mean: self.standardizer.as_ref().map(|s| s.mean.clone()),
            feature_std: self.standardizer.as_ref().map(|s| s.std.clone()),
            seed: self.seed,
            config: self.config,
        };
        let set_logistic = |f: &mut ModelFile, p: &LogisticParams| {
            f.w1 = Some(p.w1);
            f.b1 = Some(p.b1);
            f.w2 = Some(p.w2);
            f.b2 = Some(p.b2);
        };
        let set_head = |f: &mut ModelFile, p: &FeatureHeadParams| {
            f.feature_weights = Some(p.weights.clone());
            f.feature_bias = Some(p.bias);
        };
        match &self.params {
            Params::McOnly(p) => set_logistic(&mut f, p),
            Params::ImageOnly(p) => set_head(&mut f, p),
            Params::Combined(p) => {
                set_logistic(&mut f, &p.logistic);
                set_head(&mut f, &p.feature_head);
                f.merge_w_mc = Some(p.merge_w_mc);
                f.merge_w_img = Some(p.merge_w_img);
                f.merge_b = Some(p.merge_b);
            }
        }
        f
    }

    pub fn from_file(f: ModelFile) -> Result<Self> {
        fn need<T>(v: Option<T>, name: &str, kind: ModelKind) -> Result<T> {
            v.ok_or_else(|| Error::invalid(format!("{} model file lacks {name}", kind.name())))
        }
        let kind = f.kind;
        let logistic = |f: &ModelFile| -> Result<LogisticParams> {
            Ok(LogisticParams {
                w1: need(f.w1, "w1", kind)?,
                b1: need(f.b1, "b1", kind)?,
                w2: need(f.w2, "w2", kind)?,
                b2: need(f.b2, "b2", kind)?,
            })
        };
        let head = |f: &ModelFile| -> Result<FeatureHeadParams> {
            Ok(FeatureHeadParams {
                weights: need(f.feature_weights.clone(), "feature_weights", kind)?,
                bias: need(f.feature_bias, "feature_bias", kind)?,
            })
        };
        let params = match kind {
            ModelKind::McOnly => Params::McOnly(logistic(&f)?),
            ModelKind::ImageOnly => Params::ImageOnly(head(&f)?),
            ModelKind::Combined => Params::Combined(CombinedParams {
                logistic: logistic(&f)?,
                feature_head: head(&f)?,
                merge_w_mc: need(f.merge_w_mc, "merge_w_mc", kind)?,
                merge_w_img: need(f.merge_w_img, "merge_w_img", kind)?,
                merge_b: need(f.merge_b, "merge_b", kind)?,
            }),
        };
        let standardizer = match (f.feature_mean, f.feature_std) {
            (Some(mean), Some(std)) => {
                if mean.len() != std.len() || std.iter().any(|&s| s.is_nan() || s <= 0.0) {
                    return Err(Error::invalid("inconsistent feature standardization"));
                }
                Some(Standardizer { mean, std })
            }
            (None, None) => None,
            _ => return Err(Error::invalid("feature_mean and feature_std must come together")),
        };
        if let (Some(s), Params::ImageOnly(FeatureHeadParams { weights, .. }))
        | (Some(s), Params::Combined(CombinedParams { feature_head: FeatureHeadParams { weights, .. }, .. })) =
            (&standardizer, &params)
        {
            if s.dim() != weights.len() {
                return Err(Error::invalid("standardization and head differ in dimension"));
            }
        }
        if params.to_vec().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(GradingModel {
            params,
            standardizer,
            seed: f.seed,
            config: f.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.to_file()).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        GradingModel::from_file(file)
    }
}

/// Flat on-disk form of a model; fields of unused paths are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_bias: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_w_mc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_w_img: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_std: Option<Vec<f64>>,
    pub seed: u64,
    pub config: TrainConfig,
}
