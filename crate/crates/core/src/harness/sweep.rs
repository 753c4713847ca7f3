use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::RunParams;
use super::{run_stream_with, timed};
use crate::descriptors::PartitionScheme;
use crate::priors::PriorMatrix;
use crate::tensorio::StreamContainer;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    #[serde(rename = "K")]
    Capacity,
    AlphaS,
    Beta,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" | "capacity" => Ok(SweepParam::Capacity),
            "alpha_s" | "alpha-s" | "alpha" => Ok(SweepParam::AlphaS),
            "beta" => Ok(SweepParam::Beta),
            other => Err(Error::validation(format!(
                "unknown sweep parameter {other:?}"
            ))),
        }
    }
}

impl SweepParam {
    fn apply(self, params: &RunParams, value: f64) -> Result<RunParams> {
        let mut p = *params;
        match self {
            SweepParam::Capacity => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::validation(format!(
                        "K must be a positive integer, got {value}"
                    )));
                }
                p.capacity = value as usize;
            }
            SweepParam::AlphaS => p.alpha_s = value,
            SweepParam::Beta => p.beta = value,
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub top1_adapted: f64,
    pub top1_baseline: f64,
    pub runtime_s: f64,
}

/// Runs one stream per value, each on a fresh cache. Runs are independent
/// and execute in parallel; rows come back in the order of `values`.
pub fn sweep(
    container: &StreamContainer,
    priors: Option<&PriorMatrix>,
    scheme: &PartitionScheme,
    params: &RunParams,
    parameter: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::validation("sweep needs at least one value"));
    }
    let runs = values
        .iter()
        .map(|&v| parameter.apply(params, v))
        .collect::<Result<Vec<_>>>()?;
    runs.par_iter()
        .zip(values.par_iter())
        .map(|(p, &value)| {
            let (report, runtime_s) = timed(|| run_stream_with(container, priors, scheme, p));
            let report = report?;
            Ok(SweepRow {
                value,
                top1_adapted: report.top1_adapted,
                top1_baseline: report.top1_baseline,
                runtime_s,
            })
        })
        .collect()
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("value,top1_adapted,runtime_s,top1_baseline\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.value, r.top1_adapted, r.runtime_s, r.top1_baseline
        ));
    }
    fs::write(path, out)?;
    Ok(())
}
