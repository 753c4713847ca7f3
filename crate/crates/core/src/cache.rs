//! Class-blocked, entropy-gated descriptor cache.
//!
//! Each class owns a block of at most `K` entries. A new entry is appended
//! while its block has room; once full, it replaces the block's highest
//! entropy entry only if it is strictly more confident. Entries are filed
//! under the *predicted* class.
//!
//! Blocks are kept in age order (oldest first): a replacement removes the
//! evicted entry and appends the newcomer. Ties on the maximum entropy evict
//! the oldest of the tied entries.
//!
//! Snapshot format `SKCC` (little-endian): magic, u32 version, u32 C, K, P,
//! Z, N, then for each block a u32 entry count followed by that many entries
//! of (u32 class, f32 entropy, (1+P+Z)*N f32 key values).

use std::fs;
use std::path::Path;

use crate::descriptors::DescriptorSet;
use crate::tensorio::Reader;
use crate::{Error, Result};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"SKCC";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const SNAPSHOT_HEADER_LEN: usize = 28;
pub const DEFAULT_CAPACITY: usize = 8;

/// Slack allowed above `ln C` for entropies computed in floating point.
const ENTROPY_SLACK: f64 = 1e-6;

/// Descriptor layout shared by every key in a cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub spatial: usize,
    pub temporal: usize,
    pub channels: usize,
}

impl Geometry {
    pub fn new(spatial: usize, temporal: usize, channels: usize) -> Self {
        Self {
            spatial,
            temporal,
            channels,
        }
    }

    pub fn rows(&self) -> usize {
        1 + self.spatial + self.temporal
    }

    pub fn key_len(&self) -> usize {
        self.rows() * self.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub key: DescriptorSet,
    pub class: usize,
    pub entropy: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateOutcome {
    Inserted,
    Replaced { evicted_entropy: f32 },
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonCache {
    capacity: usize,
    geometry: Geometry,
    blocks: Vec<Vec<CacheEntry>>,
}

impl SkeletonCache {
    pub fn new(classes: usize, capacity: usize, geometry: Geometry) -> Result<Self> {
        if classes == 0
            || capacity == 0
            || geometry.spatial == 0
            || geometry.temporal == 0
            || geometry.channels == 0
        {
            return Err(Error::validation(format!(
                "cache parameters must be >= 1: C={classes} K={capacity} P={} Z={} N={}",
                geometry.spatial, geometry.temporal, geometry.channels
            )));
        }
        Ok(Self {
            capacity,
            geometry,
            blocks: vec![Vec::new(); classes],
        })
    }

    pub fn classes(&self) -> usize {
        self.blocks.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn block(&self, class: usize) -> &[CacheEntry] {
        &self.blocks[class]
    }

    pub fn blocks(&self) -> impl ExactSizeIterator<Item = &[CacheEntry]> {
        self.blocks.iter().map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(Vec::is_empty)
    }

    /// Bytes of key storage held by the cache (f32 descriptors only).
    pub fn key_bytes(&self) -> u64 {
        (self.len() * self.geometry.key_len() * 4) as u64
    }

    pub fn check_key(&self, key: &DescriptorSet) -> Result<()> {
        if key.rows() != self.geometry.rows() || key.channels() != self.geometry.channels {
            return Err(Error::geometry(format!(
                "key is {} x {}, cache expects {} x {}",
                key.rows(),
                key.channels(),
                self.geometry.rows(),
                self.geometry.channels
            )));
        }
        Ok(())
    }

    pub fn update(&mut self, entry: CacheEntry) -> Result<UpdateOutcome> {
        self.check_key(&entry.key)?;
        let classes = self.classes();
        if entry.class >= classes {
            return Err(Error::validation(format!(
                "entry class {} >= class count {classes}",
                entry.class
            )));
        }
        let h = f64::from(entry.entropy);
        if !(h >= 0.0 && h <= (classes as f64).ln() + ENTROPY_SLACK) {
            return Err(Error::validation(format!(
                "entry entropy {h} outside [0, ln {classes}]"
            )));
        }

        let block = &mut self.blocks[entry.class];
        if block.len() < self.capacity {
            block.push(entry);
            return Ok(UpdateOutcome::Inserted);
        }
        // first index wins ties, i.e. the oldest entry
        let (worst, worst_h) =
            block
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (i, e)| {
                    if e.entropy > acc.1 {
                        (i, e.entropy)
                    } else {
                        acc
                    }
                });
        if entry.entropy < worst_h {
            block.remove(worst);
            block.push(entry);
            Ok(UpdateOutcome::Replaced {
                evicted_entropy: worst_h,
            })
        } else {
            Ok(UpdateOutcome::Rejected)
        }
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let g = self.geometry;
        let mut out = Vec::with_capacity(
            SNAPSHOT_HEADER_LEN + 4 * self.classes() + self.len() * (8 + 4 * g.key_len()),
        );
        out.extend_from_slice(&SNAPSHOT_MAGIC);
        for v in [
            SNAPSHOT_VERSION,
            self.classes() as u32,
            self.capacity as u32,
            g.spatial as u32,
            g.temporal as u32,
            g.channels as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for block in &self.blocks {
            out.extend_from_slice(&(block.len() as u32).to_le_bytes());
            for e in block {
                out.extend_from_slice(&(e.class as u32).to_le_bytes());
                out.extend_from_slice(&e.entropy.to_le_bytes());
                for x in e.key.as_slice() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Reader::new(bytes);
        let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
        if magic != SNAPSHOT_MAGIC {
            return Err(Error::BadMagic {
                expected: SNAPSHOT_MAGIC,
                found: magic,
            });
        }
        let version = cur.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let classes = cur.u32()? as usize;
        let capacity = cur.u32()? as usize;
        let geometry = Geometry::new(
            cur.u32()? as usize,
            cur.u32()? as usize,
            cur.u32()? as usize,
        );
        let mut cache = Self::new(classes, capacity, geometry)?;
        for class in 0..classes {
            let count = cur.u32()? as usize;
            if count > capacity {
                return Err(Error::validation(format!(
                    "block {class} holds {count} entries, capacity is {capacity}"
                )));
            }
            for i in 0..count {
                cur.record = Some(i);
                let value = cur.u32()? as usize;
                if value != class {
                    return Err(Error::validation(format!(
                        "entry in block {class} is labelled {value}"
                    )));
                }
                let entropy = cur.f32()?;
                let key = DescriptorSet::from_rows(
                    geometry.rows(),
                    geometry.channels,
                    cur.f32s(geometry.key_len())?,
                )?;
                if !(entropy >= 0.0 && f64::from(entropy) <= (classes as f64).ln() + ENTROPY_SLACK)
                {
                    return Err(Error::validation(format!(
                        "entry entropy {entropy} out of range"
                    )));
                }
                cache.blocks[class].push(CacheEntry {
                    key,
                    class,
                    entropy,
                });
            }
            cur.record = None;
        }
        if cur.remaining() != 0 {
            return Err(Error::TrailingBytes(cur.remaining()));
        }
        Ok(cache)
    }

    pub fn snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_snapshot_bytes())?;
        Ok(())
    }

    pub fn restore(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_snapshot_bytes(&fs::read(path)?)
    }

    /// Restores a snapshot and checks that it matches the expected shape.
    pub fn restore_matching(
        path: impl AsRef<Path>,
        classes: usize,
        capacity: usize,
        geometry: Geometry,
    ) -> Result<Self> {
        let cache = Self::restore(path)?;
        if cache.classes() != classes || cache.capacity != capacity || cache.geometry != geometry {
            return Err(Error::geometry(format!(
                "snapshot has C={} K={} {:?}, expected C={classes} K={capacity} {geometry:?}",
                cache.classes(),
                cache.capacity,
                cache.geometry
            )));
        }
        Ok(cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom() -> Geometry {
        Geometry::new(1, 1, 2)
    }

    fn entry(class: usize, entropy: f32, fill: f32) -> CacheEntry {
        CacheEntry {
            key: DescriptorSet::from_rows(3, 2, vec![fill; 6]).unwrap(),
            class,
            entropy,
        }
    }

    fn entropies(c: &SkeletonCache, class: usize) -> Vec<f32> {
        c.block(class).iter().map(|e| e.entropy).collect()
    }

    #[test]
    fn new_cache_is_empty() {
        let c = SkeletonCache::new(5, DEFAULT_CAPACITY, Geometry::new(4, 3, 512)).unwrap();
        assert_eq!(c.len(), 0);
        assert_eq!(c.key_bytes(), 0);
        assert_eq!(c.capacity(), 8);
        assert!(SkeletonCache::new(0, 8, geom()).is_err());
        assert!(SkeletonCache::new(2, 0, geom()).is_err());
        assert!(SkeletonCache::new(2, 1, Geometry::new(1, 1, 0)).is_err());
    }

    #[test]
    fn replace_max_entropy() {
        let mut c = SkeletonCache::new(2, 2, geom()).unwrap();
        assert_eq!(
            c.update(entry(1, 0.1, 0.0)).unwrap(),
            UpdateOutcome::Inserted
        );
        assert_eq!(
            c.update(entry(1, 0.6, 0.0)).unwrap(),
            UpdateOutcome::Inserted
        );
        assert_eq!(
            c.update(entry(1, 0.5, 0.0)).unwrap(),
            UpdateOutcome::Replaced {
                evicted_entropy: 0.6
            }
        );
        assert_eq!(entropies(&c, 1), vec![0.1, 0.5]);
        assert!(c.block(0).is_empty());
    }

    #[test]
    fn tie_is_rejected() {
        let mut c = SkeletonCache::new(2, 1, geom()).unwrap();
        c.update(entry(0, 0.3, 1.0)).unwrap();
        let before = c.clone();
        assert_eq!(
            c.update(entry(0, 0.3, 2.0)).unwrap(),
            UpdateOutcome::Rejected
        );
        assert_eq!(c, before);
    }

    #[test]
    fn tied_maxima_evict_oldest() {
        let mut c = SkeletonCache::new(2, 3, geom()).unwrap();
        c.update(entry(0, 0.5, 1.0)).unwrap();
        c.update(entry(0, 0.2, 2.0)).unwrap();
        c.update(entry(0, 0.5, 3.0)).unwrap();
        c.update(entry(0, 0.1, 4.0)).unwrap();
        let fills: Vec<f32> = c.block(0).iter().map(|e| e.key.as_slice()[0]).collect();
        assert_eq!(fills, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_bad_entries() {
        let mut c = SkeletonCache::new(2, 2, geom()).unwrap();
        assert!(matches!(
            c.update(entry(2, 0.1, 0.0)),
            Err(Error::Validation(_))
        ));
        assert!(c.update(entry(0, 0.8, 0.0)).is_err()); // > ln 2
        assert!(c.update(entry(0, -0.1, 0.0)).is_err());
        let wrong = CacheEntry {
            key: DescriptorSet::from_rows(2, 2, vec![0.0; 4]).unwrap(),
            class: 0,
            entropy: 0.1,
        };
        assert!(matches!(c.update(wrong), Err(Error::Geometry(_))));
    }

    #[test]
    fn key_bytes_formula() {
        let mut c = SkeletonCache::new(3, 4, Geometry::new(1, 1, 2)).unwrap();
        c.update(entry(2, 0.0, 1.0)).unwrap();
        assert_eq!(c.key_bytes(), 24);
    }

    #[test]
    fn snapshot_of_empty_cache() {
        let c = SkeletonCache::new(3, 2, geom()).unwrap();
        let bytes = c.to_snapshot_bytes();
        assert_eq!(bytes.len(), SNAPSHOT_HEADER_LEN + 3 * 4);
        assert_eq!(SkeletonCache::from_snapshot_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn restore_checks_geometry() {
        let mut c = SkeletonCache::new(2, 2, geom()).unwrap();
        c.update(entry(0, 0.2, 1.5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.skcc");
        c.snapshot(&path).unwrap();
        assert_eq!(
            SkeletonCache::restore_matching(&path, 2, 2, geom()).unwrap(),
            c
        );
        assert!(matches!(
            SkeletonCache::restore_matching(&path, 2, 2, Geometry::new(1, 1, 3)),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn snapshot_rejects_corruption() {
        let mut c = SkeletonCache::new(2, 2, geom()).unwrap();
        c.update(entry(1, 0.2, 1.5)).unwrap();
        let bytes = c.to_snapshot_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            SkeletonCache::from_snapshot_bytes(&bad),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            SkeletonCache::from_snapshot_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
        let mut relabelled = bytes.clone();
        // first entry of block 1 starts after header + block-0 count + block-1 count
        relabelled[SNAPSHOT_HEADER_LEN + 8..SNAPSHOT_HEADER_LEN + 12]
            .copy_from_slice(&0u32.to_le_bytes());
        assert!(SkeletonCache::from_snapshot_bytes(&relabelled).is_err());
    }

    fn arb_updates() -> impl Strategy<Value = Vec<(usize, f32, f32)>> {
        prop::collection::vec((0usize..4, 0.0f32..1.38, -3.0f32..3.0), 0..200)
    }

    proptest! {
        #[test]
        fn capacity_and_monotone_max(updates in arb_updates(), cap in 1usize..5) {
            let mut c = SkeletonCache::new(4, cap, geom()).unwrap();
            let mut full_max = [None::<f32>; 4];
            for (class, h, fill) in updates {
                let before = c.clone();
                let outcome = c.update(entry(class, h, fill)).unwrap();
                if outcome == UpdateOutcome::Rejected {
                    prop_assert_eq!(&c, &before);
                }
                for (j, slot) in full_max.iter_mut().enumerate() {
                    prop_assert!(c.block(j).len() <= cap);
                    prop_assert!(c.block(j).iter().all(|e| e.class == j));
                    if c.block(j).len() == cap {
                        let m = c.block(j).iter().map(|e| e.entropy).fold(f32::NEG_INFINITY, f32::max);
                        if let Some(prev) = *slot {
                            prop_assert!(m <= prev);
                        }
                        *slot = Some(m);
                    }
                }
            }
        }

        #[test]
        fn snapshot_round_trip(updates in arb_updates()) {
            let mut c = SkeletonCache::new(4, 3, geom()).unwrap();
            for (class, h, fill) in updates {
                c.update(entry(class, h, fill)).unwrap();
            }
            prop_assert_eq!(SkeletonCache::from_snapshot_bytes(&c.to_snapshot_bytes()).unwrap(), c);
        }

        #[test]
        fn replay_is_deterministic(updates in arb_updates()) {
            let run = |u: &[(usize, f32, f32)]| {
                let mut c = SkeletonCache::new(4, 2, geom()).unwrap();
                for &(class, h, fill) in u {
                    c.update(entry(class, h, fill)).unwrap();
                }
                c
            };
            prop_assert_eq!(run(&updates), run(&updates));
        }
    }
}
