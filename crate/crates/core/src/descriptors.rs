//! Partition schemes and descriptor pooling.
//!
//! A [`DescriptorSet`] stacks `1 + P + Z` pooled channel vectors in the fixed
//! order global, spatial groups, temporal segments. The same matrix serves as
//! cache key and as retrieval query.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::tensorio::FeatureTensor;
use crate::{Error, Result};

const FRACTION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct JointGroup {
    pub label: String,
    pub joints: Vec<usize>,
}

/// A temporal phase as a fraction range of the sequence. Resolved against
/// `T` frames it covers the 1-based frames `floor(start*T)+1 ..= floor(end*T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub label: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionScheme {
    spatial: Vec<JointGroup>,
    temporal: Vec<Segment>,
}

/// On-disk form: group name -> joint indices, segment name -> [start, end].
#[derive(Debug, Serialize, Deserialize)]
struct SchemeFile {
    spatial: IndexMap<String, Vec<usize>>,
    temporal: IndexMap<String, [f64; 2]>,
}

/// Kinect v2 25-joint body parts with beginning/middle/end thirds.
pub fn default_scheme() -> PartitionScheme {
    let group = |label: &str, joints: &[usize]| JointGroup {
        label: label.into(),
        joints: joints.to_vec(),
    };
    let third = |label: &str, start: f64, end: f64| Segment {
        label: label.into(),
        start,
        end,
    };
    PartitionScheme {
        spatial: vec![
            group("head", &[2, 3, 4, 8, 20]),
            group("torso", &[0, 1, 4, 8, 12, 16, 20]),
            group("arms", &[4, 5, 6, 7, 8, 9, 10, 11, 21, 22, 23, 24]),
            group("feet", &[0, 12, 13, 14, 15, 16, 17, 18, 19]),
        ],
        temporal: vec![
            third("begin", 0.0, 1.0 / 3.0),
            third("middle", 1.0 / 3.0, 2.0 / 3.0),
            third("end", 2.0 / 3.0, 1.0),
        ],
    }
}

impl PartitionScheme {
    pub fn new(spatial: Vec<JointGroup>, temporal: Vec<Segment>) -> Result<Self> {
        if spatial.is_empty() || temporal.is_empty() {
            return Err(Error::validation(
                "scheme needs at least one spatial group and one temporal segment",
            ));
        }
        for g in &spatial {
            if g.joints.is_empty() {
                return Err(Error::validation(format!(
                    "spatial group {:?} is empty",
                    g.label
                )));
            }
            let mut sorted = g.joints.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != g.joints.len() {
                return Err(Error::validation(format!(
                    "spatial group {:?} repeats a joint",
                    g.label
                )));
            }
        }
        let mut expected_start = 0.0;
        for s in &temporal {
            if !(s.start.is_finite() && s.end.is_finite()) || s.start >= s.end {
                return Err(Error::validation(format!(
                    "segment {:?} has an empty fraction range",
                    s.label
                )));
            }
            if (s.start - expected_start).abs() > FRACTION_EPS {
                return Err(Error::validation(format!(
                    "segment {:?} starts at {} but the previous one ends at {expected_start}",
                    s.label, s.start
                )));
            }
            expected_start = s.end;
        }
        if (expected_start - 1.0).abs() > FRACTION_EPS {
            return Err(Error::validation(
                "temporal segments must end at fraction 1",
            ));
        }
        Ok(Self { spatial, temporal })
    }

    pub fn spatial(&self) -> &[JointGroup] {
        &self.spatial
    }

    pub fn temporal(&self) -> &[Segment] {
        &self.temporal
    }

    /// Number of spatial groups (P).
    pub fn spatial_count(&self) -> usize {
        self.spatial.len()
    }

    /// Number of temporal segments (Z).
    pub fn temporal_count(&self) -> usize {
        self.temporal.len()
    }

    /// Descriptor rows produced per sample: `1 + P + Z`.
    pub fn descriptor_count(&self) -> usize {
        1 + self.spatial.len() + self.temporal.len()
    }

    pub fn spatial_labels(&self) -> Vec<&str> {
        self.spatial.iter().map(|g| g.label.as_str()).collect()
    }

    pub fn temporal_labels(&self) -> Vec<&str> {
        self.temporal.iter().map(|s| s.label.as_str()).collect()
    }

    /// Resolves every segment to a 0-based half-open frame range.
    ///
    /// Fails if any range would be empty, which always happens when
    /// `frames < Z`.
    pub fn resolve_segments(&self, frames: usize) -> Result<Vec<std::ops::Range<usize>>> {
        let t = frames as f64;
        let last = self.temporal.len() - 1;
        let mut out = Vec::with_capacity(self.temporal.len());
        for (i, s) in self.temporal.iter().enumerate() {
            let lo = (s.start * t + FRACTION_EPS).floor() as usize;
            let hi = if i == last {
                frames
            } else {
                (s.end * t + FRACTION_EPS).floor() as usize
            };
            if lo >= hi {
                return Err(Error::validation(format!(
                    "segment {:?} is empty for T={frames} (Z={})",
                    s.label,
                    self.temporal.len()
                )));
            }
            out.push(lo..hi);
        }
        Ok(out)
    }

    pub fn check_joints(&self, joints: usize) -> Result<()> {
        for g in &self.spatial {
            if let Some(&bad) = g.joints.iter().find(|&&j| j >= joints) {
                return Err(Error::validation(format!(
                    "spatial group {:?} references joint {bad}, tensor has V={joints}",
                    g.label
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = SchemeFile {
            spatial: self
                .spatial
                .iter()
                .map(|g| (g.label.clone(), g.joints.clone()))
                .collect(),
            temporal: self
                .temporal
                .iter()
                .map(|s| (s.label.clone(), [s.start, s.end]))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("scheme serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemeFile = serde_json::from_str(text)?;
        Self::new(
            file.spatial
                .into_iter()
                .map(|(label, joints)| JointGroup { label, joints })
                .collect(),
            file.temporal
                .into_iter()
                .map(|(label, [start, end])| Segment { label, start, end })
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// `(1 + P + Z) x N` descriptor matrix, rows ordered global, spatial, temporal.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    rows: usize,
    channels: usize,
    data: Vec<f32>,
}

impl DescriptorSet {
    pub fn from_rows(rows: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || channels == 0 || data.len() != rows * channels {
            return Err(Error::geometry(format!(
                "descriptor data of length {} does not form {rows} x {channels}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("descriptor contains non-finite values"));
        }
        Ok(Self {
            rows,
            channels,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn row(&self, d: usize) -> &[f32] {
        &self.data[d * self.channels..(d + 1) * self.channels]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            rows: self.rows,
            channels: self.channels,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }
}

/// Pools a feature tensor into its descriptor matrix.
pub fn extract_descriptors(
    features: &FeatureTensor,
    scheme: &PartitionScheme,
) -> Result<DescriptorSet> {
    let dims = features.dims();
    let (frames, joints) = (dims.frames, dims.joints);
    scheme.check_joints(joints)?;
    let segments = scheme.resolve_segments(frames)?;

    let rows = scheme.descriptor_count();
    let p = scheme.spatial_count();
    let mut data = vec![0f32; rows * dims.channels];
    // scratch: per-frame sums over joints and per-joint sums over frames
    let mut frame_sums = vec![0f64; frames];
    let mut joint_sums = vec![0f64; joints];

    for n in 0..dims.channels {
        frame_sums.iter_mut().for_each(|x| *x = 0.0);
        joint_sums.iter_mut().for_each(|x| *x = 0.0);
        let plane = features.channel(n);
        for (t, frame) in plane.chunks_exact(joints).enumerate() {
            let mut acc = 0.0;
            for (v, &x) in frame.iter().enumerate() {
                let x = f64::from(x);
                acc += x;
                joint_sums[v] += x;
            }
            frame_sums[t] = acc;
        }

        let total: f64 = frame_sums.iter().sum();
        data[n] = (total / (frames * joints) as f64) as f32;
        for (i, g) in scheme.spatial.iter().enumerate() {
            let s: f64 = g.joints.iter().map(|&v| joint_sums[v]).sum();
            data[(1 + i) * dims.channels + n] = (s / (g.joints.len() * frames) as f64) as f32;
        }
        for (i, r) in segments.iter().enumerate() {
            let s: f64 = frame_sums[r.clone()].iter().sum();
            data[(1 + p + i) * dims.channels + n] = (s / (r.len() * joints) as f64) as f32;
        }
    }
    Ok(DescriptorSet {
        rows,
        channels: dims.channels,
        data,
    })
}
