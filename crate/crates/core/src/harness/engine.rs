//! The per-sample adaptation loop over a live cache.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cache::{CacheEntry, Geometry, SkeletonCache, UpdateOutcome, DEFAULT_CAPACITY};
use crate::descriptors::{extract_descriptors, DescriptorSet, PartitionScheme};
use crate::fusion::{enhance, fuse, FusionConfig, Prediction, WeightMode, DEFAULT_ALPHA};
use crate::priors::PriorMatrix;
use crate::retrieval::{retrieve, AffinityConfig, DescriptorLogits, DEFAULT_BETA};
use crate::tensorio::FeatureTensor;
use crate::{Error, Result};

/// Which prior row weights the fusion of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSelect {
    /// The row of the zero-shot predicted class.
    #[default]
    Predicted,
    /// Class j is scored with row j: `s_j = sum_d W[j][d] O[d][j]`.
    PerClassMax,
}

/// Hyperparameters and switches of one streaming run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub capacity: usize,
    pub beta: f64,
    pub alpha_s: f64,
    /// Retrieve against the cache as it was before this sample's update.
    pub retrieve_before_update: bool,
    /// Gate cache updates on the adapted prediction instead of the zero-shot
    /// one. Implies retrieval before update.
    pub gate_on_adapted: bool,
    pub gzsl: bool,
    pub prior_select: PriorSelect,
    pub weight_mode: WeightMode,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            capacity: DEFAULT_CAPACITY,
            beta: DEFAULT_BETA,
            alpha_s: DEFAULT_ALPHA,
            retrieve_before_update: false,
            gate_on_adapted: false,
            gzsl: false,
            prior_select: PriorSelect::Predicted,
            weight_mode: WeightMode::Llm,
        }
    }
}

impl RunParams {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::validation("K must be >= 1"));
        }
        AffinityConfig::new(self.beta)?;
        FusionConfig::new(self.alpha_s, self.weight_mode)?;
        Ok(())
    }

    fn updates_first(&self) -> bool {
        !(self.retrieve_before_update || self.gate_on_adapted)
    }
}

/// Wall-clock time spent in each phase of the loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub extract: Duration,
    pub baseline: Duration,
    pub update: Duration,
    pub retrieve: Duration,
    pub fuse: Duration,
}

impl PhaseTimes {
    pub fn total(&self) -> Duration {
        self.extract + self.baseline + self.update + self.retrieve + self.fuse
    }

    pub fn add(&mut self, other: &PhaseTimes) {
        self.extract += other.extract;
        self.baseline += other.baseline;
        self.update += other.update;
        self.retrieve += other.retrieve;
        self.fuse += other.fuse;
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub baseline: Prediction,
    pub adapted: Prediction,
    pub update: UpdateOutcome,
    pub times: PhaseTimes,
}

/// Streaming test-time adapter over a fixed prediction space.
pub struct Engine {
    scheme: PartitionScheme,
    priors: PriorMatrix,
    cache: SkeletonCache,
    affinity: AffinityConfig,
    fusion: FusionConfig,
    params: RunParams,
}

impl Engine {
    /// `priors` holds one row per class of the prediction space, in order.
    pub fn new(
        scheme: PartitionScheme,
        priors: PriorMatrix,
        channels: usize,
        params: RunParams,
    ) -> Result<Self> {
        params.validate()?;
        if priors.spatial() != scheme.spatial_count()
            || priors.temporal() != scheme.temporal_count()
        {
            return Err(Error::geometry(format!(
                "priors are for P={} Z={}, scheme has P={} Z={}",
                priors.spatial(),
                priors.temporal(),
                scheme.spatial_count(),
                scheme.temporal_count()
            )));
        }
        let geometry = Geometry::new(scheme.spatial_count(), scheme.temporal_count(), channels);
        let cache = SkeletonCache::new(priors.class_names().len(), params.capacity, geometry)?;
        Ok(Self {
            scheme,
            priors,
            cache,
            affinity: AffinityConfig::new(params.beta)?,
            fusion: FusionConfig::new(params.alpha_s, params.weight_mode)?,
            params,
        })
    }

    pub fn cache(&self) -> &SkeletonCache {
        &self.cache
    }

    pub fn scheme(&self) -> &PartitionScheme {
        &self.scheme
    }

    pub fn params(&self) -> &RunParams {
        &self.params
    }

    pub fn classes(&self) -> usize {
        self.cache.classes()
    }

    pub fn step(&mut self, features: &FeatureTensor, zero_shot: &[f64]) -> Result<StepOutcome> {
        let start = Instant::now();
        let desc = extract_descriptors(features, &self.scheme)?;
        let extract = start.elapsed();
        let mut out = self.step_descriptors(desc, zero_shot)?;
        out.times.extract = extract;
        Ok(out)
    }

    /// Runs the loop for a sample whose descriptors are already extracted.
    pub fn step_descriptors(
        &mut self,
        desc: DescriptorSet,
        zero_shot: &[f64],
    ) -> Result<StepOutcome> {
        if zero_shot.len() != self.classes() {
            return Err(Error::geometry(format!(
                "{} zero-shot logits for a {}-class prediction space",
                zero_shot.len(),
                self.classes()
            )));
        }
        let mut times = PhaseTimes::default();
        let mut clock = Instant::now();
        let mut lap = |slot: &mut Duration| {
            let now = Instant::now();
            *slot = now - clock;
            clock = now;
        };

        let baseline = Prediction::from_logits(zero_shot.to_vec());
        lap(&mut times.baseline);

        let mut update = None;
        if self.params.updates_first() {
            update = Some(self.cache.update(entry(&desc, &baseline))?);
            lap(&mut times.update);
        }

        let retrieved = retrieve(&desc, &self.cache, &self.affinity)?;
        lap(&mut times.retrieve);
        let fused = self.fuse_for(&retrieved, baseline.class)?;
        let adapted = enhance(zero_shot, &fused, &self.fusion)?;
        lap(&mut times.fuse);

        let update = match update {
            Some(u) => u,
            None => {
                let source = if self.params.gate_on_adapted {
                    &adapted
                } else {
                    &baseline
                };
                let u = self.cache.update(entry(&desc, source))?;
                lap(&mut times.update);
                u
            }
        };
        Ok(StepOutcome {
            baseline,
            adapted,
            update,
            times,
        })
    }

    /// Retrieval, fusion and enhancement only; the cache is left untouched.
    pub fn adapt(&self, desc: &DescriptorSet, zero_shot: &[f64]) -> Result<Prediction> {
        let retrieved = retrieve(desc, &self.cache, &self.affinity)?;
        let predicted = crate::fusion::argmax(zero_shot);
        let fused = self.fuse_for(&retrieved, predicted)?;
        enhance(zero_shot, &fused, &self.fusion)
    }

    /// Inserts a sample into the cache, gated on its zero-shot prediction.
    pub fn observe(&mut self, desc: &DescriptorSet, zero_shot: &[f64]) -> Result<UpdateOutcome> {
        let baseline = Prediction::from_logits(zero_shot.to_vec());
        self.cache.update(entry(desc, &baseline))
    }

    fn fuse_for(&self, retrieved: &DescriptorLogits, predicted: usize) -> Result<Vec<f64>> {
        match self.params.prior_select {
            PriorSelect::Predicted => fuse(retrieved, self.priors.row(predicted)),
            PriorSelect::PerClassMax => Ok((0..retrieved.classes())
                .map(|j| {
                    let w = self.priors.row(j).as_slice();
                    (0..retrieved.rows())
                        .map(|d| w[d] * retrieved.get(d, j))
                        .sum()
                })
                .collect()),
        }
    }
}

fn entry(desc: &DescriptorSet, p: &Prediction) -> CacheEntry {
    CacheEntry {
        key: desc.clone(),
        class: p.class,
        entropy: p.entropy as f32,
    }
}
