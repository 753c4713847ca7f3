//! Entropy, weighted descriptor fusion and logit enhancement.

use serde::{Deserialize, Serialize};

use crate::priors::PriorWeights;
use crate::retrieval::DescriptorLogits;
use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 5.0;

/// How class-specific descriptor weights are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum WeightMode {
    /// Rows of a prior matrix built from language-model responses.
    Llm,
    /// `1 / (1 + P + Z)` for every descriptor.
    Uniform,
    /// Seeded non-negative random rows, l1-normalized.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    alpha_s: f64,
    pub weight_mode: WeightMode,
}

impl FusionConfig {
    pub fn new(alpha_s: f64, weight_mode: WeightMode) -> Result<Self> {
        if !(alpha_s.is_finite() && alpha_s >= 0.0) {
            return Err(Error::validation(format!(
                "alpha_s must be finite and >= 0, got {alpha_s}"
            )));
        }
        Ok(Self {
            alpha_s,
            weight_mode,
        })
    }

    pub fn alpha_s(&self) -> f64 {
        self.alpha_s
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha_s: DEFAULT_ALPHA,
            weight_mode: WeightMode::Llm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub class: usize,
    pub entropy: f64,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probabilities = softmax(&logits);
        let class = argmax(&logits);
        let entropy = entropy_unchecked(&probabilities);
        Self {
            logits,
            probabilities,
            class,
            entropy,
        }
    }

    /// Class indices of the `k` largest logits, best first.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.logits.len()).collect();
        // stable sort keeps lower indices first among equal logits
        idx.sort_by(|&a, &b| self.logits[b].total_cmp(&self.logits[a]));
        idx.truncate(k);
        idx
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    h.max(0.0)
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probabilities: &[f64]) -> Result<f64> {
    if probabilities.is_empty()
        || probabilities
            .iter()
            .any(|&x| x.is_nan() || x < 0.0 || !x.is_finite())
    {
        return Err(Error::validation(
            "entropy needs a non-empty, non-negative distribution",
        ));
    }
    let sum: f64 = probabilities.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::validation(format!(
            "probabilities sum to {sum}, not 1"
        )));
    }
    Ok(entropy_unchecked(probabilities))
}

/// Weighted sum of descriptor rows: `s_j = sum_d w_d O[d][j]`.
pub fn fuse(logits: &DescriptorLogits, weights: &PriorWeights) -> Result<Vec<f64>> {
    let w = weights.as_slice();
    if w.len() != logits.rows() {
        return Err(Error::geometry(format!(
            "{} weights for {} descriptor rows",
            w.len(),
            logits.rows()
        )));
    }
    let mut s = vec![0.0; logits.classes()];
    for (d, &wd) in w.iter().enumerate() {
        for (acc, &o) in s.iter_mut().zip(logits.row(d)) {
            *acc += wd * o;
        }
    }
    Ok(s)
}

/// Adds the scaled cache logits onto the zero-shot logits and predicts.
pub fn enhance(zero_shot: &[f64], fused: &[f64], cfg: &FusionConfig) -> Result<Prediction> {
    if zero_shot.len() != fused.len() {
        return Err(Error::geometry(format!(
            "{} zero-shot logits vs {} fused logits",
            zero_shot.len(),
            fused.len()
        )));
    }
    let logits = zero_shot
        .iter()
        .zip(fused)
        .map(|(&z, &s)| z + cfg.alpha_s * s)
        .collect();
    Ok(Prediction::from_logits(logits))
}
