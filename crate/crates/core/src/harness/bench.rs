//! Latency of retrieval + fusion as a function of sequence length.
//!
//! Descriptors are extracted before timing starts, so the measured path is
//! exactly what runs against the cache for each sample. Each round times one
//! pass over every prepared stream, rotating through the T values; the
//! reported mean is the fastest round's per-sample mean, which filters out
//! scheduler noise without changing what is measured.

use std::fs;
use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{Engine, RunParams};
use crate::descriptors::{extract_descriptors, DescriptorSet, PartitionScheme};
use crate::priors::PriorMatrix;
use crate::tensorio::{SyntheticConfig, SyntheticStream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Stream template; `frames` is replaced by each benchmarked T.
    pub synthetic: SyntheticConfig,
    pub params: RunParams,
    /// Samples timed per T.
    pub samples: usize,
    pub rounds: usize,
    /// Fill the cache from the stream before timing.
    pub warm: bool,
}

impl BenchConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.synthetic.validate()?;
        cfg.params.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub frames: usize,
    pub samples: usize,
    pub cache_entries: usize,
    pub mean_us: f64,
}

struct Prepared {
    frames: usize,
    engine: Engine,
    samples: Vec<(DescriptorSet, Vec<f64>)>,
}

fn prepare(cfg: &BenchConfig, scheme: &PartitionScheme, frames: usize) -> Result<Prepared> {
    let mut synthetic = cfg.synthetic.clone();
    synthetic.frames = frames;
    synthetic.seen_classes = 0;
    synthetic.samples_per_class = cfg.samples.div_ceil(synthetic.classes);
    let stream = SyntheticStream::new(synthetic.clone())?;
    let samples = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let r = stream.sample(i);
            let desc = extract_descriptors(&r.features, scheme)?;
            Ok((
                desc,
                r.zero_shot_logits
                    .iter()
                    .map(|&x| f64::from(x))
                    .collect::<Vec<f64>>(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let priors = PriorMatrix::uniform(
        synthetic.class_names(),
        scheme.spatial_count(),
        scheme.temporal_count(),
    )?;
    let mut engine = Engine::new(scheme.clone(), priors, synthetic.channels, cfg.params)?;
    if cfg.warm {
        for (desc, logits) in &samples {
            engine.observe(desc, logits)?;
        }
    }
    Ok(Prepared {
        frames,
        engine,
        samples,
    })
}

/// Mean retrieval + fusion time per sample for each sequence length.
pub fn bench_latency(
    cfg: &BenchConfig,
    scheme: &PartitionScheme,
    frame_values: &[usize],
) -> Result<Vec<LatencyRow>> {
    if frame_values.is_empty() {
        return Err(Error::validation("bench needs at least one T value"));
    }
    if cfg.samples == 0 || cfg.rounds == 0 {
        return Err(Error::validation(
            "bench needs samples >= 1 and rounds >= 1",
        ));
    }
    let prepared = frame_values
        .iter()
        .map(|&t| prepare(cfg, scheme, t))
        .collect::<Result<Vec<_>>>()?;

    let mut best = vec![f64::INFINITY; prepared.len()];
    for _ in 0..cfg.rounds {
        for (slot, p) in best.iter_mut().zip(&prepared) {
            let start = Instant::now();
            for (desc, logits) in &p.samples {
                black_box(p.engine.adapt(black_box(desc), black_box(logits))?);
            }
            let mean = start.elapsed().as_secs_f64() * 1e6 / p.samples.len() as f64;
            *slot = slot.min(mean);
        }
    }
    Ok(prepared
        .iter()
        .zip(best)
        .map(|(p, mean_us)| LatencyRow {
            frames: p.frames,
            samples: p.samples.len(),
            cache_entries: p.engine.cache().len(),
            mean_us,
        })
        .collect())
}

pub fn write_latency_csv(path: impl AsRef<Path>, rows: &[LatencyRow]) -> Result<()> {
    let mut out = String::from("frames,samples,cache_entries,mean_us\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.frames, r.samples, r.cache_entries, r.mean_us
        ));
    }
    fs::write(path, out)?;
    Ok(())
}
