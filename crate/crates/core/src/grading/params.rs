//! Forward passes and squared-error gradients of the three regressors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PatchFeature;

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Scaled and shifted sigmoid of the mitotic count:
/// `score = sigmoid(w1 * mc + b1) * w2 + b2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub w1: f64,
    pub b1: f64,
    pub w2: f64,
    pub b2: f64,
}

impl LogisticParams {
    /// Starting point for training. Spans scores of roughly 1 to 3 over
    /// typical counts without saturating the sigmoid.
    pub const INITIAL: LogisticParams = LogisticParams {
        w1: 0.1,
        b1: -1.0,
        w2: 2.0,
        b2: 1.0,
    };

    pub fn is_finite(&self) -> bool {
        [self.w1, self.b1, self.w2, self.b2].iter().all(|v| v.is_finite())
    }

    pub fn forward(&self, mc: f64) -> f64 {
        sigmoid(self.w1 * mc + self.b1) * self.w2 + self.b2
    }

    /// Score and its partial derivatives with respect to `(w1, b1, w2, b2)`.
    pub fn forward_with_partials(&self, mc: f64) -> (f64, [f64; 4]) {
        let s = sigmoid(self.w1 * mc + self.b1);
        let ds = self.w2 * s * (1.0 - s);
        (s * self.w2 + self.b2, [ds * mc, ds, s, 1.0])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        LogisticParams {
            w1: v[0],
            b1: v[1],
            w2: v[2],
            b2: v[3],
        }
    }
}

pub fn logistic_forward(params: &LogisticParams, mc: f64) -> f64 {
    params.forward(mc)
}

/// Gradient of `(score - target)^2` with respect to `(w1, b1, w2, b2)`.
pub fn logistic_gradient(params: &LogisticParams, mc: f64, target: f64) -> [f64; 4] {
    let (t, partials) = params.forward_with_partials(mc);
    let e2 = 2.0 * (t - target);
    partials.map(|p| e2 * p)
}

/// Linear head over patch features: `score = weights . values + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeadParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl FeatureHeadParams {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    pub fn score(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.weights.len());
        self.weights
            .iter()
            .zip(values)
            .map(|(w, v)| w * v)
            .sum::<f64>()
            + self.bias
    }

    /// Gradient of `(score - target)^2` as `(d weights, d bias)`.
    pub fn gradient(&self, values: &[f64], target: f64) -> (Vec<f64>, f64) {
        let e2 = 2.0 * (self.score(values) - target);
        (values.iter().map(|v| e2 * v).collect(), e2)
    }
}

fn check_patches(head: &FeatureHeadParams, patches: &[PatchFeature]) -> Result<()> {
    if patches.is_empty() {
        return Err(Error::invalid("image path needs at least one patch"));
    }
    if let Some(p) = patches.iter().find(|p| p.dim() != head.dim()) {
        return Err(Error::invalid(format!(
            "patch feature dimension {} does not match head dimension {}",
            p.dim(),
            head.dim()
        )));
    }
    Ok(())
}

/// Mean of the per-patch head scores.
pub fn feature_forward(params: &FeatureHeadParams, patches: &[PatchFeature]) -> Result<f64> {
    check_patches(params, patches)?;
    Ok(patches.iter().map(|p| params.score(&p.values)).sum::<f64>() / patches.len() as f64)
}

/// Element-wise mean of the patch feature vectors.
pub fn mean_feature(patches: &[PatchFeature]) -> Result<Vec<f64>> {
    let first = patches
        .first()
        .ok_or_else(|| Error::invalid("image path needs at least one patch"))?;
    let mut acc = vec![0.0; first.dim()];
    for p in patches {
        if p.dim() != acc.len() {
            return Err(Error::invalid("patch features differ in dimension"));
        }
        acc.iter_mut().zip(&p.values).for_each(|(a, v)| *a += v);
    }
    let n = patches.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Mitotic-count path and image path merged by a two-input linear layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedParams {
    pub logistic: LogisticParams,
    pub feature_head: FeatureHeadParams,
    pub merge_w_mc: f64,
    pub merge_w_img: f64,
    pub merge_b: f64,
}

impl CombinedParams {
    pub fn is_finite(&self) -> bool {
        self.logistic.is_finite()
            && self.feature_head.is_finite()
            && [self.merge_w_mc, self.merge_w_img, self.merge_b]
                .iter()
                .all(|v| v.is_finite())
    }

    /// Output for an already averaged feature vector.
    pub fn forward_mean(&self, mc: f64, mean_values: &[f64]) -> CombinedOutput {
        let mc_path = self.merge_w_mc * self.logistic.forward(mc);
        let img_path = self.merge_w_img * self.feature_head.score(mean_values);
        CombinedOutput {
            score: mc_path + img_path + self.merge_b,
            mc_path,
            img_path,
        }
    }

    /// Gradient of `(score - target)^2`, flattened in [`Self::to_vec`] order.
    pub fn gradient(&self, mc: f64, mean_values: &[f64], target: f64) -> Vec<f64> {
        let (lt, lpart) = self.logistic.forward_with_partials(mc);
        let g = self.feature_head.score(mean_values);
        let score = self.merge_w_mc * lt + self.merge_w_img * g + self.merge_b;
        let e2 = 2.0 * (score - target);
        let mut out = Vec::with_capacity(7 + mean_values.len());
        out.extend(lpart.iter().map(|p| e2 * self.merge_w_mc * p));
        let img = e2 * self.merge_w_img;
        out.extend(mean_values.iter().map(|v| img * v));
        out.push(img);
        out.extend([e2 * lt, e2 * g, e2]);
        out
    }

    /// `[w1, b1, w2, b2, weights.., bias, merge_w_mc, merge_w_img, merge_b]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.logistic.to_array().to_vec();
        v.extend(&self.feature_head.weights);
        v.extend([
            self.feature_head.bias,
            self.merge_w_mc,
            self.merge_w_img,
            self.merge_b,
        ]);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let d = v.len() - 8;
        CombinedParams {
            logistic: LogisticParams::from_slice(&v[..4]),
            feature_head: FeatureHeadParams {
                weights: v[4..4 + d].to_vec(),
                bias: v[4 + d],
            },
            merge_w_mc: v[5 + d],
            merge_w_img: v[6 + d],
            merge_b: v[7 + d],
        }
    }
}

/// Combined score with the weighted contribution of each path.
/// `score == mc_path + img_path + merge_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedOutput {
    pub score: f64,
    pub mc_path: f64,
    pub img_path: f64,
}

/// Mean over patches of the merged per-patch scores, with the mean weighted
/// contribution of each path.
pub fn combined_forward(
    params: &CombinedParams,
    mc: f64,
    patches: &[PatchFeature],
) -> Result<CombinedOutput> {
    check_patches(&params.feature_head, patches)?;
    let n = patches.len() as f64;
    let mc_path = params.merge_w_mc * params.logistic.forward(mc);
    let img_path = patches
        .iter()
        .map(|p| params.merge_w_img * params.feature_head.score(&p.values))
        .sum::<f64>()
        / n;
    let score = patches
        .iter()
        .map(|p| mc_path + params.merge_w_img * params.feature_head.score(&p.values) + params.merge_b)
        .sum::<f64>()
        / n;
    Ok(CombinedOutput {
        score,
        mc_path,
        img_path,
    })
}
