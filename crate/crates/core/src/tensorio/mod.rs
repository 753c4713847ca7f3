//! Feature/sample data model and the `SKC1` stream container.
//!
//! Format (all integers little-endian):
//! - header: magic `SKC1`, u32 version (= 1), u32 class count C,
//!   u32 sample count, u32 N, u32 T, u32 V
//! - class names: C entries of (u16 byte length, UTF-8 bytes)
//! - records, `sample_count` times: u32 true label, u8 seen flag,
//!   C x f32 zero-shot logits, N*T*V x f32 features (row-major N, T, V)
//!
//! Anything that does not match this layout exactly is rejected.

mod synthetic;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticStream};

pub const CONTAINER_MAGIC: [u8; 4] = *b"SKC1";
pub const CONTAINER_VERSION: u32 = 1;
/// Size of the fixed header in bytes.
pub const HEADER_LEN: usize = 28;

/// Feature tensor dimensions: channels, frames, joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub channels: usize,
    pub frames: usize,
    pub joints: usize,
}

impl Dims {
    pub fn new(channels: usize, frames: usize, joints: usize) -> Self {
        Self {
            channels,
            frames,
            joints,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.frames * self.joints
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.frames == 0 || self.joints == 0 {
            return Err(Error::validation(format!(
                "tensor dims must all be >= 1, got N={} T={} V={}",
                self.channels, self.frames, self.joints
            )));
        }
        Ok(())
    }
}

/// Person-averaged latent tensor of one sequence, row-major over
/// (channel, frame, joint).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    dims: Dims,
    data: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::validation(format!(
                "tensor data has {} values, dims require {}",
                data.len(),
                dims.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("tensor contains non-finite values"));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, value: f32) -> Result<Self> {
        Self::new(dims, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, frame: usize, joint: usize) -> f32 {
        let Dims { frames, joints, .. } = self.dims;
        self.data[(channel * frames + frame) * joints + joint]
    }

    /// Contiguous `T x V` plane of one channel.
    #[inline]
    pub fn channel(&self, channel: usize) -> &[f32] {
        let plane = self.dims.frames * self.dims.joints;
        &self.data[channel * plane..(channel + 1) * plane]
    }
}

/// One streamed test sample as exported from a frozen backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub features: FeatureTensor,
    pub zero_shot_logits: Vec<f32>,
    pub true_label: usize,
    /// Whether the sample's class belongs to the seen split.
    pub seen: bool,
}

/// An ordered stream of samples sharing one class vocabulary and one set of
/// tensor dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamContainer {
    pub class_names: Vec<String>,
    pub dims: Dims,
    pub records: Vec<SampleRecord>,
}

impl StreamContainer {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn sample_count(&self) -> usize {
        self.records.len()
    }

    /// Checks every container invariant.
    pub fn validate(&self) -> Result<()> {
        let classes = self.class_count();
        if classes == 0 {
            return Err(Error::validation("container declares no classes"));
        }
        let mut seen = HashSet::with_capacity(classes);
        for name in &self.class_names {
            if name.len() > u16::MAX as usize {
                return Err(Error::validation(format!(
                    "class name longer than 65535 bytes: {name:.32}..."
                )));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::validation(format!("duplicate class name {name:?}")));
            }
        }
        self.dims.validate()?;
        for (i, r) in self.records.iter().enumerate() {
            if r.features.dims() != self.dims {
                return Err(Error::validation(format!(
                    "record {i} has dims {:?}, container declares {:?}",
                    r.features.dims(),
                    self.dims
                )));
            }
            if r.zero_shot_logits.len() != classes {
                return Err(Error::validation(format!(
                    "record {i} has {} logits, container declares {classes} classes",
                    r.zero_shot_logits.len()
                )));
            }
            if r.zero_shot_logits.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    record: i,
                    field: "logit",
                });
            }
            if r.true_label >= classes {
                return Err(Error::validation(format!(
                    "record {i} has label {} >= class count {classes}",
                    r.true_label
                )));
            }
        }
        Ok(())
    }

    /// Serializes the container to `SKC1` bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let classes = self.class_count();
        let record_len = 5 + 4 * (classes + self.dims.len());
        let names_len: usize = self.class_names.iter().map(|n| 2 + n.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + names_len + record_len * self.records.len());

        out.extend_from_slice(&CONTAINER_MAGIC);
        for v in [
            CONTAINER_VERSION,
            to_u32(classes, "class count")?,
            to_u32(self.records.len(), "sample count")?,
            to_u32(self.dims.channels, "N")?,
            to_u32(self.dims.frames, "T")?,
            to_u32(self.dims.joints, "V")?,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for name in &self.class_names {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for r in &self.records {
            out.extend_from_slice(&(r.true_label as u32).to_le_bytes());
            out.push(u8::from(r.seen));
            for x in &r.zero_shot_logits {
                out.extend_from_slice(&x.to_le_bytes());
            }
            for x in r.features.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses `SKC1` bytes, validating every invariant.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Reader {
            buf: bytes,
            pos: 0,
            record: None,
        };
        let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
        if magic != CONTAINER_MAGIC {
            return Err(Error::BadMagic {
                expected: CONTAINER_MAGIC,
                found: magic,
            });
        }
        let version = cur.u32()?;
        if version != CONTAINER_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let classes = cur.u32()? as usize;
        let count = cur.u32()? as usize;
        let dims = Dims::new(
            cur.u32()? as usize,
            cur.u32()? as usize,
            cur.u32()? as usize,
        );
        dims.validate()?;
        if classes == 0 {
            return Err(Error::validation("container declares no classes"));
        }

        let mut class_names = Vec::with_capacity(classes);
        for _ in 0..classes {
            let len = cur.u16()? as usize;
            let raw = cur.take(len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| Error::validation("class name is not valid UTF-8"))?;
            class_names.push(name.to_owned());
        }

        let mut records = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            cur.record = Some(i);
            let true_label = cur.u32()? as usize;
            let seen = match cur.u8()? {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::validation(format!(
                        "record {i} has seen flag {other}, expected 0 or 1"
                    )))
                }
            };
            let zero_shot_logits = cur.f32s(classes)?;
            if zero_shot_logits.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    record: i,
                    field: "logit",
                });
            }
            let data = cur.f32s(dims.len())?;
            if data.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    record: i,
                    field: "feature",
                });
            }
            records.push(SampleRecord {
                features: FeatureTensor { dims, data },
                zero_shot_logits,
                true_label,
                seen,
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::TrailingBytes(bytes.len() - cur.pos));
        }

        let container = StreamContainer {
            class_names,
            dims,
            records,
        };
        container.validate()?;
        Ok(container)
    }
}

pub fn write_container(path: impl AsRef<Path>, container: &StreamContainer) -> Result<()> {
    let bytes = container.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<StreamContainer> {
    let bytes = fs::read(path)?;
    StreamContainer::from_bytes(&bytes)
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::validation(format!("{what} {v} does not fit in u32")))
}

/// Little-endian cursor that reports truncation with the record being read.
pub(crate) struct Reader<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
    pub(crate) record: Option<usize>,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self {
            buf,
            pos: 0,
            record: None,
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                record: self.record,
            }),
        }
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or(Error::Truncated {
            record: self.record,
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(classes: &[&str], dims: Dims) -> StreamContainer {
        StreamContainer {
            class_names: classes.iter().map(|s| s.to_string()).collect(),
            dims,
            records: vec![],
        }
    }

    fn record(dims: Dims, classes: usize, label: usize, fill: f32) -> SampleRecord {
        SampleRecord {
            features: FeatureTensor::filled(dims, fill).unwrap(),
            zero_shot_logits: (0..classes).map(|j| j as f32 * 0.5).collect(),
            true_label: label,
            seen: label.is_multiple_of(2),
        }
    }

    #[test]
    fn empty_container_is_header_plus_names() {
        let c = tiny(&["a", "bc"], Dims::new(4, 3, 2));
        let bytes = c.to_bytes().unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + (2 + 1) + (2 + 2));
        assert_eq!(&bytes[..4], b"SKC1");
        assert_eq!(StreamContainer::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn single_scalar_sample_layout() {
        let dims = Dims::new(1, 1, 1);
        let mut c = tiny(&["a", "b", "c"], dims);
        c.records.push(record(dims, 3, 1, 7.5));
        let bytes = c.to_bytes().unwrap();
        let names = 3 * (2 + 1);
        // label + seen flag + 3 logits + 1 feature
        assert_eq!(bytes.len(), HEADER_LEN + names + 4 + 1 + 3 * 4 + 4);
        let tail = &bytes[bytes.len() - 4..];
        assert_eq!(f32::from_le_bytes(tail.try_into().unwrap()), 7.5);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = tiny(&["a"], Dims::new(1, 1, 1)).to_bytes().unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            StreamContainer::from_bytes(&bytes),
            Err(Error::BadMagic { found, .. }) if &found == b"XXXX"
        ));
    }

    #[test]
    fn rejects_unknown_version() {
        let mut bytes = tiny(&["a"], Dims::new(1, 1, 1)).to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            StreamContainer::from_bytes(&bytes),
            Err(Error::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn truncation_names_the_record() {
        let dims = Dims::new(2, 3, 2);
        let mut c = tiny(&["a", "b"], dims);
        for i in 0..3 {
            c.records.push(record(dims, 2, i % 2, i as f32));
        }
        let bytes = c.to_bytes().unwrap();
        let record_len = 5 + 4 * (2 + dims.len());
        let cut = bytes.len() - record_len / 2;
        assert!(matches!(
            StreamContainer::from_bytes(&bytes[..cut]),
            Err(Error::Truncated { record: Some(2) })
        ));
        assert!(matches!(
            StreamContainer::from_bytes(&bytes[..10]),
            Err(Error::Truncated { record: None })
        ));
    }

    #[test]
    fn nan_payload_is_its_own_error() {
        let dims = Dims::new(1, 2, 1);
        let mut c = tiny(&["a"], dims);
        c.records.push(record(dims, 1, 0, 1.0));
        let mut bytes = c.to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            StreamContainer::from_bytes(&bytes),
            Err(Error::NonFinite {
                record: 0,
                field: "feature"
            })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = tiny(&["a"], Dims::new(1, 1, 1)).to_bytes().unwrap();
        bytes.push(0);
        assert!(matches!(
            StreamContainer::from_bytes(&bytes),
            Err(Error::TrailingBytes(1))
        ));
    }

    #[test]
    fn write_rejects_invariant_violations() {
        let dims = Dims::new(1, 1, 1);
        let mut c = tiny(&["a", "a"], dims);
        assert!(matches!(c.to_bytes(), Err(Error::Validation(_))));
        c.class_names[1] = "b".into();
        c.records.push(record(dims, 2, 5, 0.0));
        assert!(matches!(c.to_bytes(), Err(Error::Validation(_))));
    }

    #[test]
    fn tensor_rejects_nan_and_bad_length() {
        let dims = Dims::new(1, 1, 2);
        assert!(FeatureTensor::new(dims, vec![0.0]).is_err());
        assert!(FeatureTensor::new(dims, vec![0.0, f32::INFINITY]).is_err());
        assert!(FeatureTensor::new(Dims::new(0, 1, 1), vec![]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dims = Dims::new(2, 2, 2);
        let mut c = tiny(&["wave", "salute"], dims);
        c.records.push(record(dims, 2, 1, -0.25));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.skc1");
        write_container(&path, &c).unwrap();
        assert_eq!(read_container(&path).unwrap(), c);
    }
}
