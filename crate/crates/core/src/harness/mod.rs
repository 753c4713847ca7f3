//! Streaming evaluation: runs a container through the adaptation loop one
//! sample at a time and scores both the zero-shot and the adapted
//! predictions.
//!
//! Without `gzsl`, only samples of unseen classes are streamed and the
//! prediction space is restricted to the unseen classes (a class is seen when
//! its samples carry the seen flag). With `gzsl`, every sample is streamed
//! over the full class vocabulary and seen/unseen accuracies are reported.

mod bench;
mod engine;
mod metrics;
mod report;
mod sweep;

use std::path::PathBuf;
use std::time::Instant;

use crate::descriptors::{default_scheme, PartitionScheme};
use crate::fusion::WeightMode;
use crate::priors::{load_priors, PriorMatrix};
use crate::tensorio::{read_container, StreamContainer};
use crate::{Error, Result};

pub use bench::{bench_latency, write_latency_csv, BenchConfig, LatencyRow};
pub use engine::{Engine, PhaseTimes, PriorSelect, RunParams, StepOutcome};
pub use metrics::{gzsl_metrics, harmonic_mean, ConfusionMatrix, GzslScores};
pub use report::{
    emit_reports, ClassDelta, GzslReport, RankedClass, RunReport, Top5Record, UpdateCounts,
    REPORT_FILES,
};
pub use sweep::{sweep, write_sweep_csv, SweepParam, SweepRow};

use crate::cache::UpdateOutcome;

/// Everything a `run` needs, as given on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub container: PathBuf,
    /// Required when `params.weight_mode` is [`WeightMode::Llm`].
    pub priors: Option<PathBuf>,
    /// Partition scheme JSON; the Kinect-25 default when absent.
    pub scheme: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub params: RunParams,
}

/// Inputs of a run, loaded into memory.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub container: StreamContainer,
    pub priors: Option<PriorMatrix>,
    pub scheme: PartitionScheme,
}

impl RunInputs {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let container = read_container(&cfg.container)?;
        let priors = cfg.priors.as_ref().map(load_priors).transpose()?;
        let scheme = match &cfg.scheme {
            Some(p) => PartitionScheme::load(p)?,
            None => default_scheme(),
        };
        Ok(Self {
            container,
            priors,
            scheme,
        })
    }
}

/// Loads the configured inputs, streams them and writes the report files if
/// an output directory is set.
pub fn run_stream(cfg: &RunConfig) -> Result<RunReport> {
    let inputs = RunInputs::load(cfg)?;
    let report = run_stream_with(
        &inputs.container,
        inputs.priors.as_ref(),
        &inputs.scheme,
        &cfg.params,
    )?;
    if let Some(dir) = &cfg.output_dir {
        emit_reports(&report, dir)?;
        report.save(dir.join("report.json"))?;
    }
    Ok(report)
}

/// Per-class seen flags, derived from the records.
fn class_seen_flags(container: &StreamContainer) -> Result<Vec<bool>> {
    let mut flags: Vec<Option<bool>> = vec![None; container.class_count()];
    for (i, r) in container.records.iter().enumerate() {
        match flags[r.true_label] {
            Some(f) if f != r.seen => {
                return Err(Error::validation(format!(
                    "record {i}: class {:?} is flagged both seen and unseen",
                    container.class_names[r.true_label]
                )))
            }
            _ => flags[r.true_label] = Some(r.seen),
        }
    }
    Ok(flags.into_iter().map(|f| f.unwrap_or(false)).collect())
}

/// Resolves the weight rows of the whole container vocabulary.
fn resolve_priors(
    container: &StreamContainer,
    priors: Option<&PriorMatrix>,
    scheme: &PartitionScheme,
    mode: WeightMode,
) -> Result<PriorMatrix> {
    let (p, z) = (scheme.spatial_count(), scheme.temporal_count());
    let names = container.class_names.clone();
    match mode {
        WeightMode::Uniform => PriorMatrix::uniform(names, p, z),
        WeightMode::Random { seed } => PriorMatrix::random(names, p, z, seed),
        WeightMode::Llm => {
            let m =
                priors.ok_or_else(|| Error::validation("weight mode llm needs a prior matrix"))?;
            if m.class_names() != container.class_names.as_slice() {
                return Err(Error::validation(format!(
                    "prior matrix classes ({}) do not match container classes ({})",
                    m.class_names().len(),
                    container.class_count()
                )));
            }
            if m.spatial() != p || m.temporal() != z {
                return Err(Error::geometry(format!(
                    "priors are for P={} Z={}, scheme has P={p} Z={z}",
                    m.spatial(),
                    m.temporal()
                )));
            }
            Ok(m.clone())
        }
    }
}

fn ranked(logits: &[f64], order: &[usize]) -> Vec<RankedClass> {
    order
        .iter()
        .map(|&class| RankedClass {
            class,
            logit: logits[class],
        })
        .collect()
}

/// Streams an in-memory container through a fresh engine.
pub fn run_stream_with(
    container: &StreamContainer,
    priors: Option<&PriorMatrix>,
    scheme: &PartitionScheme,
    params: &RunParams,
) -> Result<RunReport> {
    params.validate()?;
    container.validate()?;
    scheme.check_joints(container.dims.joints)?;
    scheme.resolve_segments(container.dims.frames)?;

    let seen = class_seen_flags(container)?;
    let space: Vec<usize> = (0..container.class_count())
        .filter(|&j| params.gzsl || !seen[j])
        .collect();
    if space.is_empty() {
        return Err(Error::validation(
            "no unseen classes to evaluate in ZSL mode",
        ));
    }
    let mut local = vec![None; container.class_count()];
    for (i, &j) in space.iter().enumerate() {
        local[j] = Some(i);
    }

    let weights = resolve_priors(container, priors, scheme, params.weight_mode)?.select(&space);
    let mut engine = Engine::new(scheme.clone(), weights, container.dims.channels, *params)?;
    let classes = space.len();

    let mut confusion_baseline = ConfusionMatrix::new(classes);
    let mut confusion_adapted = ConfusionMatrix::new(classes);
    let mut top5 = Vec::new();
    let mut memory_trace = Vec::new();
    let mut updates = UpdateCounts::default();
    let mut timings = PhaseTimes::default();
    // (correct, total) for seen and unseen, baseline and adapted
    let mut split = [[0usize; 2]; 4];

    for (index, record) in container.records.iter().enumerate() {
        let Some(truth) = local[record.true_label] else {
            continue;
        };
        let zero_shot: Vec<f64> = space
            .iter()
            .map(|&j| f64::from(record.zero_shot_logits[j]))
            .collect();
        let out = engine.step(&record.features, &zero_shot)?;

        confusion_baseline.record(truth, out.baseline.class);
        confusion_adapted.record(truth, out.adapted.class);
        let group = if record.seen { 0 } else { 2 };
        for (offset, pred) in [out.baseline.class, out.adapted.class]
            .into_iter()
            .enumerate()
        {
            let slot = &mut split[group + offset];
            slot[0] += usize::from(pred == truth);
            slot[1] += 1;
        }
        match out.update {
            UpdateOutcome::Inserted => updates.inserted += 1,
            UpdateOutcome::Replaced { .. } => updates.replaced += 1,
            UpdateOutcome::Rejected => updates.rejected += 1,
        }
        top5.push(Top5Record {
            index,
            true_label: truth,
            baseline: ranked(&out.baseline.logits, &out.baseline.top_k(5)),
            adapted: ranked(&out.adapted.logits, &out.adapted.top_k(5)),
            top1_changed: out.baseline.class != out.adapted.class,
        });
        memory_trace.push(engine.cache().key_bytes());
        timings.add(&out.times);
    }

    let gzsl = if params.gzsl {
        let [bs, as_, bu, au] = split;
        Some(GzslReport {
            baseline: gzsl_metrics(bs[0], bs[1], bu[0], bu[1])?,
            adapted: gzsl_metrics(as_[0], as_[1], au[0], au[1])?,
        })
    } else {
        None
    };

    let per_class = space
        .iter()
        .enumerate()
        .map(|(i, &j)| ClassDelta {
            class: container.class_names[j].clone(),
            seen: seen[j],
            support: confusion_baseline.support(i),
            baseline: confusion_baseline.class_accuracy(i),
            adapted: confusion_adapted.class_accuracy(i),
        })
        .collect();

    Ok(RunReport {
        params: *params,
        class_names: space
            .iter()
            .map(|&j| container.class_names[j].clone())
            .collect(),
        samples: confusion_baseline.total() as usize,
        top1_baseline: confusion_baseline.accuracy(),
        top1_adapted: confusion_adapted.accuracy(),
        gzsl,
        confusion_baseline,
        confusion_adapted,
        per_class,
        top5,
        updates,
        memory_trace,
        timings,
    })
}

/// Wall-clock seconds of a closure, with its result.
pub(crate) fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}
