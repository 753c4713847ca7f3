//! Seeded synthetic streams with tunable baseline accuracy.
//!
//! Every class gets a Gaussian prototype tensor and optionally several
//! Gaussian variant offsets around it (different ways of performing the same
//! action). A sample is its class prototype plus one variant offset, chosen
//! uniformly, plus Gaussian noise. The zero-shot logit for class j is the
//! negative root-mean-square distance between the sample and prototype j,
//! plus Gaussian logit noise, so `logit_sigma` controls how often the
//! "frozen backbone" is wrong while the features stay informative.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dims, FeatureTensor, SampleRecord, StreamContainer};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub channels: usize,
    pub frames: usize,
    pub joints: usize,
    /// Standard deviation of prototype entries.
    pub proto_sigma: f32,
    /// Per-entry standard deviation of sample noise around the prototype.
    pub noise_sigma: f32,
    /// Standard deviation of the noise added to each zero-shot logit.
    pub logit_sigma: f32,
    pub seed: u64,
    pub samples_per_class: usize,
    /// The first `seen_classes` classes are flagged as seen.
    #[serde(default)]
    pub seen_classes: usize,
    /// Sub-prototypes per class; 1 disables variants.
    #[serde(default = "one")]
    pub variants_per_class: usize,
    /// Standard deviation of variant offset entries.
    #[serde(default)]
    pub variant_sigma: f32,
}

fn one() -> usize {
    1
}

impl SyntheticConfig {
    pub fn dims(&self) -> Dims {
        Dims::new(self.channels, self.frames, self.joints)
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes).map(|j| format!("class_{j:02}")).collect()
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.channels == 0 || self.frames == 0 || self.joints == 0 {
            return Err(Error::validation(
                "synthetic classes, channels, frames and joints must be >= 1",
            ));
        }
        for (name, s) in [
            ("proto_sigma", self.proto_sigma),
            ("noise_sigma", self.noise_sigma),
            ("logit_sigma", self.logit_sigma),
            ("variant_sigma", self.variant_sigma),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::validation(format!(
                    "{name} must be finite and >= 0, got {s}"
                )));
            }
        }
        if self.variants_per_class == 0 {
            return Err(Error::validation("variants_per_class must be >= 1"));
        }
        if self.seen_classes > self.classes {
            return Err(Error::validation("seen_classes exceeds classes"));
        }
        Ok(())
    }
}

/// Lazily generated synthetic stream. Each sample draws from its own ChaCha
/// stream, so generation order never changes the values.
pub struct SyntheticStream {
    config: SyntheticConfig,
    prototypes: Vec<Vec<f32>>,
    /// `[class][variant]` offsets; empty without variants.
    variants: Vec<Vec<Vec<f32>>>,
    labels: Vec<usize>,
    next: usize,
}

impl SyntheticStream {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        config.validate()?;
        let len = config.dims().len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let prototypes = (0..config.classes)
            .map(|_| {
                (0..len)
                    .map(|_| rng.sample::<f32, _>(StandardNormal) * config.proto_sigma)
                    .collect()
            })
            .collect();
        let mut labels: Vec<usize> = (0..config.classes)
            .flat_map(|j| std::iter::repeat_n(j, config.samples_per_class))
            .collect();
        labels.shuffle(&mut rng);

        let variants = if config.variants_per_class > 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(u64::MAX);
            (0..config.classes)
                .map(|_| {
                    (0..config.variants_per_class)
                        .map(|_| {
                            (0..len)
                                .map(|_| {
                                    rng.sample::<f32, _>(StandardNormal) * config.variant_sigma
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            config,
            prototypes,
            variants,
            labels,
            next: 0,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Generates sample `index` of the stream.
    pub fn sample(&self, index: usize) -> SampleRecord {
        let cfg = &self.config;
        let label = self.labels[index];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64 + 1);

        let mut data = self.prototypes[label].clone();
        if !self.variants.is_empty() {
            let v = rng.random_range(0..cfg.variants_per_class);
            for (x, &o) in data.iter_mut().zip(&self.variants[label][v]) {
                *x += o;
            }
        }
        for x in &mut data {
            *x += rng.sample::<f32, _>(StandardNormal) * cfg.noise_sigma;
        }

        let inv_len = 1.0 / data.len() as f64;
        let logits = self
            .prototypes
            .iter()
            .map(|other| {
                let sq: f64 = data
                    .iter()
                    .zip(other)
                    .map(|(&x, &p)| {
                        let d = f64::from(x - p);
                        d * d
                    })
                    .sum();
                let noise = rng.sample::<f32, _>(StandardNormal) * cfg.logit_sigma;
                -(sq * inv_len).sqrt() as f32 + noise
            })
            .collect();

        SampleRecord {
            features: FeatureTensor {
                dims: cfg.dims(),
                data,
            },
            zero_shot_logits: logits,
            true_label: label,
            seen: label < cfg.seen_classes,
        }
    }
}

impl Iterator for SyntheticStream {
    type Item = SampleRecord;

    fn next(&mut self) -> Option<SampleRecord> {
        if self.next >= self.labels.len() {
            return None;
        }
        let r = self.sample(self.next);
        self.next += 1;
        Some(r)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.labels.len() - self.next;
        (n, Some(n))
    }
}

/// Materializes the whole synthetic stream as a container.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<StreamContainer> {
    let stream = SyntheticStream::new(config.clone())?;
    let class_names = config.class_names();
    let dims = config.dims();
    let records = stream.collect();
    Ok(StreamContainer {
        class_names,
        dims,
        records,
    })
}
