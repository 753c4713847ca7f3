use std::path::PathBuf;

use skeleton_cache::cache::{CacheEntry, Geometry, SkeletonCache};
use skeleton_cache::descriptors::{default_scheme, extract_descriptors, PartitionScheme};
use skeleton_cache::tensorio::{
    generate_synthetic, read_container, write_container, SyntheticConfig,
};
use skeleton_cache::Error;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config() -> SyntheticConfig {
    let mut cfg = SyntheticConfig::load(root().join("configs/default_synthetic.json")).unwrap();
    cfg.channels = 8;
    cfg.frames = 9;
    cfg.samples_per_class = 3;
    cfg.seen_classes = 4;
    cfg
}

#[test]
fn committed_scheme_is_the_default() {
    let scheme = PartitionScheme::load(root().join("configs/kinect25_scheme.json")).unwrap();
    assert_eq!(scheme, default_scheme());
    assert_eq!(
        scheme.resolve_segments(60).unwrap(),
        vec![0..20, 20..40, 40..60]
    );
}

#[test]
fn synthetic_container_survives_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.skc1");
    let c = generate_synthetic(&config()).unwrap();
    write_container(&path, &c).unwrap();
    let back = read_container(&path).unwrap();
    assert_eq!(back, c);
    let bits = |c: &skeleton_cache::tensorio::StreamContainer| -> Vec<u32> {
        c.records
            .iter()
            .flat_map(|r| r.features.data().iter().map(|x| x.to_bits()))
            .collect()
    };
    assert_eq!(bits(&back), bits(&c));
    assert_eq!(
        std::fs::metadata(&path).unwrap().len() as usize,
        c.to_bytes().unwrap().len()
    );

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(matches!(
        skeleton_cache::tensorio::StreamContainer::from_bytes(&bytes),
        Err(Error::Truncated { record: Some(29) })
    ));
}

#[test]
fn snapshot_restores_a_live_cache() {
    let c = generate_synthetic(&config()).unwrap();
    let scheme = default_scheme();
    let geometry = Geometry::new(4, 3, 8);
    let mut cache = SkeletonCache::new(10, 2, geometry).unwrap();
    for (i, r) in c.records.iter().enumerate() {
        let key = extract_descriptors(&r.features, &scheme).unwrap();
        cache
            .update(CacheEntry {
                key,
                class: r.true_label,
                entropy: (i % 7) as f32 * 0.3,
            })
            .unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.skcc");
    cache.snapshot(&path).unwrap();
    assert_eq!(
        SkeletonCache::restore_matching(&path, 10, 2, geometry).unwrap(),
        cache
    );
    let err = SkeletonCache::restore_matching(&path, 10, 3, geometry).unwrap_err();
    assert!(matches!(err, Error::Geometry(_)));
    assert!(SkeletonCache::restore(dir.path().join("missing")).is_err());
}
