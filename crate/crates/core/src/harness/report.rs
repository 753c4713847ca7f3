//! Run reports and the files emitted from them.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::engine::{PhaseTimes, RunParams};
use super::metrics::{ConfusionMatrix, GzslScores};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GzslReport {
    pub baseline: GzslScores,
    pub adapted: GzslScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub class: String,
    pub seen: bool,
    pub support: u64,
    pub baseline: Option<f64>,
    pub adapted: Option<f64>,
}

impl ClassDelta {
    pub fn delta(&self) -> Option<f64> {
        Some(self.adapted? - self.baseline?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedClass {
    pub class: usize,
    pub logit: f64,
}

/// Top-5 logits of one sample before and after adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Top5Record {
    pub index: usize,
    pub true_label: usize,
    pub baseline: Vec<RankedClass>,
    pub adapted: Vec<RankedClass>,
    pub top1_changed: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateCounts {
    pub inserted: u64,
    pub replaced: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub params: RunParams,
    /// Classes of the prediction space, in index order.
    pub class_names: Vec<String>,
    pub samples: usize,
    pub top1_baseline: f64,
    pub top1_adapted: f64,
    pub gzsl: Option<GzslReport>,
    pub confusion_baseline: ConfusionMatrix,
    pub confusion_adapted: ConfusionMatrix,
    pub per_class: Vec<ClassDelta>,
    pub top5: Vec<Top5Record>,
    pub updates: UpdateCounts,
    /// Cache key bytes after each sample.
    pub memory_trace: Vec<u64>,
    pub timings: PhaseTimes,
}

/// The deterministic part of a report.
#[derive(Serialize)]
struct Metrics<'a> {
    params: &'a RunParams,
    class_names: &'a [String],
    samples: usize,
    top1_baseline: f64,
    top1_adapted: f64,
    gzsl: &'a Option<GzslReport>,
    updates: UpdateCounts,
    cache_key_bytes_final: u64,
    cache_key_bytes_peak: u64,
    memory_trace: &'a [u64],
}

#[derive(Serialize)]
struct Timing {
    samples: usize,
    extract_s: f64,
    baseline_s: f64,
    update_s: f64,
    retrieve_s: f64,
    fuse_s: f64,
    total_s: f64,
    mean_per_sample_us: f64,
}

impl RunReport {
    pub fn metrics_json(&self) -> String {
        let m = Metrics {
            params: &self.params,
            class_names: &self.class_names,
            samples: self.samples,
            top1_baseline: self.top1_baseline,
            top1_adapted: self.top1_adapted,
            gzsl: &self.gzsl,
            updates: self.updates,
            cache_key_bytes_final: self.memory_trace.last().copied().unwrap_or(0),
            cache_key_bytes_peak: self.memory_trace.iter().copied().max().unwrap_or(0),
            memory_trace: &self.memory_trace,
        };
        serde_json::to_string_pretty(&m).expect("metrics serialize") + "\n"
    }

    pub fn timing_json(&self) -> String {
        let t = &self.timings;
        let total = t.total().as_secs_f64();
        let timing = Timing {
            samples: self.samples,
            extract_s: t.extract.as_secs_f64(),
            baseline_s: t.baseline.as_secs_f64(),
            update_s: t.update.as_secs_f64(),
            retrieve_s: t.retrieve.as_secs_f64(),
            fuse_s: t.fuse.as_secs_f64(),
            total_s: total,
            mean_per_sample_us: if self.samples == 0 {
                0.0
            } else {
                total * 1e6 / self.samples as f64
            },
        };
        serde_json::to_string_pretty(&timing).expect("timing serializes") + "\n"
    }

    pub fn confusion_csv(&self, matrix: &ConfusionMatrix) -> String {
        let mut out = String::from("true\\predicted");
        for name in &self.class_names {
            out.push(',');
            out.push_str(&csv_field(name));
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(matrix.rows()) {
            out.push_str(&csv_field(name));
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn per_class_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("class,seen,support,baseline_acc,adapted_acc,delta\n");
        for c in &self.per_class {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                csv_field(&c.class),
                c.seen,
                c.support,
                opt(c.baseline),
                opt(c.adapted),
                opt(c.delta())
            ));
        }
        out
    }

    pub fn top5_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.top5 {
            out.push_str(&serde_json::to_string(r).expect("top-5 record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub const REPORT_FILES: [&str; 6] = [
    "metrics.json",
    "confusion_baseline.csv",
    "confusion_adapted.csv",
    "per_class_delta.csv",
    "top5_changes.jsonl",
    "timing.json",
];

/// Writes the six report files into `out_dir`, creating it if needed.
pub fn emit_reports(report: &RunReport, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let contents = [
        report.metrics_json(),
        report.confusion_csv(&report.confusion_baseline),
        report.confusion_csv(&report.confusion_adapted),
        report.per_class_csv(),
        report.top5_jsonl(),
        report.timing_json(),
    ];
    for (name, body) in REPORT_FILES.iter().zip(contents) {
        let mut f = fs::File::create(dir.join(name))?;
        f.write_all(body.as_bytes())?;
    }
    Ok(())
}
