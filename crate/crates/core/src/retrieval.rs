//! Descriptor-wise affinity retrieval.
//!
//! For descriptor row `d` and class `j`, the retrieved logit is the sum over
//! the entries of block `j` of `exp(-beta * (1 - cos(q_d, k_d)))`. This is the
//! product of the affinity row vector with the one-hot label matrix of the
//! cache, evaluated block by block instead of materializing the labels.

use crate::cache::SkeletonCache;
use crate::descriptors::DescriptorSet;
use crate::{Error, Result};

pub const DEFAULT_BETA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityConfig {
    beta: f64,
}

impl AffinityConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::validation(format!(
                "beta must be a positive finite number, got {beta}"
            )));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for AffinityConfig {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA }
    }
}

/// `(1 + P + Z) x C` matrix of retrieved class logits, one row per descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorLogits {
    rows: usize,
    classes: usize,
    data: Vec<f64>,
}

impl DescriptorLogits {
    pub fn zeros(rows: usize, classes: usize) -> Self {
        Self {
            rows,
            classes,
            data: vec![0.0; rows * classes],
        }
    }

    pub fn from_rows(rows: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * classes {
            return Err(Error::geometry(format!(
                "{} values do not form {rows} x {classes}",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            classes,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, d: usize) -> &[f64] {
        &self.data[d * self.classes..(d + 1) * self.classes]
    }

    pub fn get(&self, d: usize, class: usize) -> f64 {
        self.data[d * self.classes + class]
    }
}

fn norm(x: &[f32]) -> f64 {
    x.iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

#[inline]
fn affinity_from_cos(cos: f64, beta: f64) -> f64 {
    (-beta * (1.0 - cos)).exp()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::geometry(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let denom = norm(a) * norm(b);
    Ok(if denom > 0.0 {
        (dot(a, b) / denom).clamp(-1.0, 1.0)
    } else {
        0.0
    })
}

pub fn affinity(query: &[f32], key: &[f32], beta: f64) -> Result<f64> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::validation(format!(
            "beta must be positive, got {beta}"
        )));
    }
    Ok(affinity_from_cos(cosine(query, key)?, beta))
}

pub fn retrieve(
    query: &DescriptorSet,
    cache: &SkeletonCache,
    cfg: &AffinityConfig,
) -> Result<DescriptorLogits> {
    cache.check_key(query)?;
    let rows = query.rows();
    let classes = cache.classes();
    let mut out = DescriptorLogits::zeros(rows, classes);
    if cache.is_empty() {
        return Ok(out);
    }
    let query_norms: Vec<f64> = (0..rows).map(|d| norm(query.row(d))).collect();
    for (j, block) in cache.blocks().enumerate() {
        for entry in block {
            for (d, &qn) in query_norms.iter().enumerate() {
                let k = entry.key.row(d);
                let denom = qn * norm(k);
                let cos = if denom > 0.0 {
                    (dot(query.row(d), k) / denom).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                out.data[d * classes + j] += affinity_from_cos(cos, cfg.beta);
            }
        }
    }
    Ok(out)
}
