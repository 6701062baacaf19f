use std::fs;
use std::path::Path;

use bdgnet::bdm::{ideal_bdm_with, BdmOptions, BinaryMask};
use bdgnet::data::{
    ingest, ingest_dataset, make_split, resize_mask_nearest, stack_batch, Augmentation, DatasetLayout, LayoutManifest,
    Preprocessor, SampleRecord, SplitManifest, Transform,
};
use bdgnet::Error;
use image::{ImageBuffer, Luma, Rgb, RgbImage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn layout() -> DatasetLayout {
    LayoutManifest::parse("[datasets.d]\nimages = \"img\"\nmasks = \"gt\"\n").unwrap().datasets.remove("d").unwrap()
}

fn disk(h: usize, w: usize, cy: f64, cx: f64, rad: f64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |r, c| (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2) <= rad * rad)
}

fn write_pair(root: &Path, stem: &str, mask: &BinaryMask) {
    fs::create_dir_all(root.join("img")).unwrap();
    fs::create_dir_all(root.join("gt")).unwrap();
    let img = RgbImage::from_fn(mask.width() as u32, mask.height() as u32, |c, r| {
        Rgb([(r * 9 % 256) as u8, (c * 5 % 256) as u8, if mask.get(r as usize, c as usize) { 220 } else { 30 }])
    });
    img.save(root.join(format!("img/{stem}.png"))).unwrap();
    mask.save(&root.join(format!("gt/{stem}.png"))).unwrap();
}

fn record(id: &str, size: usize) -> SampleRecord {
    let mask = disk(size, size, size as f64 * 0.4, size as f64 * 0.55, size as f64 * 0.25);
    let image = RgbImage::from_fn(size as u32, size as u32, |c, r| Rgb([(r * 3) as u8, (c * 7) as u8, 90]));
    SampleRecord { id: id.into(), dataset: "d".into(), image, mask }
}

#[test]
fn ingest_matches_pairs_by_stem_in_sorted_order() {
    let tmp = TempDir::new().unwrap();
    for stem in ["c", "a", "b"] {
        write_pair(tmp.path(), stem, &disk(20, 24, 10.0, 12.0, 5.0));
    }
    let recs = ingest_dataset(tmp.path(), "d", &layout()).unwrap();
    assert_eq!(recs.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
    for r in &recs {
        assert_eq!((r.image.height() as usize, r.image.width() as usize), (r.mask.height(), r.mask.width()));
        assert_eq!(r.mask, disk(20, 24, 10.0, 12.0, 5.0));
        assert_eq!(r.dataset, "d");
    }
    let manifest = LayoutManifest::parse("[datasets.d]\nimages = \"img\"\nmasks = \"gt\"\n").unwrap();
    assert_eq!(ingest(tmp.path(), &manifest).unwrap().len(), 3);
}

#[test]
fn unmatched_files_name_the_stem() {
    let tmp = TempDir::new().unwrap();
    write_pair(tmp.path(), "a", &disk(8, 8, 4.0, 4.0, 2.0));
    write_pair(tmp.path(), "lonely", &disk(8, 8, 4.0, 4.0, 2.0));
    fs::remove_file(tmp.path().join("gt/lonely.png")).unwrap();
    match ingest_dataset(tmp.path(), "d", &layout()) {
        Err(Error::MissingMask(stem)) => assert_eq!(stem, "lonely"),
        other => panic!("expected a missing mask error, got {other:?}"),
    }
    fs::remove_file(tmp.path().join("img/lonely.png")).unwrap();
    disk(8, 8, 4.0, 4.0, 2.0).save(&tmp.path().join("gt/orphan.png")).unwrap();
    match ingest_dataset(tmp.path(), "d", &layout()) {
        Err(Error::MissingImage(stem)) => assert_eq!(stem, "orphan"),
        other => panic!("expected a missing image error, got {other:?}"),
    }
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let tmp = TempDir::new().unwrap();
    write_pair(tmp.path(), "a", &disk(8, 8, 4.0, 4.0, 2.0));
    disk(8, 9, 4.0, 4.0, 2.0).save(&tmp.path().join("gt/a.png")).unwrap();
    let err = ingest_dataset(tmp.path(), "d", &layout()).unwrap_err();
    assert!(err.to_string().contains("`a`"), "{err}");
}

#[test]
fn sixteen_bit_and_rgb_masks_are_binarized_by_luma() {
    let tmp = TempDir::new().unwrap();
    let deep: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(4, 1, vec![1000, 30000, 40000, 65535]).unwrap();
    let deep_path = tmp.path().join("deep.png");
    deep.save(&deep_path).unwrap();
    let mask = BinaryMask::load(&deep_path).unwrap();
    assert_eq!(mask.as_slice(), [0, 0, 1, 1]);

    let rgb = RgbImage::from_raw(4, 1, vec![255, 0, 0, 255, 255, 255, 0, 255, 0, 0, 0, 0]).unwrap();
    let rgb_path = tmp.path().join("rgb.png");
    rgb.save(&rgb_path).unwrap();
    let first = BinaryMask::load(&rgb_path).unwrap();
    assert_eq!(first.as_slice(), [0, 1, 1, 0]);
    assert_eq!(BinaryMask::load(&rgb_path).unwrap(), first);
}

#[test]
fn split_counts_and_determinism() {
    for (total, train) in [(1000, 900), (612, 550)] {
        let ids: Vec<String> = (0..total).map(|i| format!("id{i:04}")).collect();
        let a = make_split(&ids, train, 42).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (train, total - train));
        assert!(a.train.iter().all(|id| !a.test.contains(id)));
        assert_eq!(make_split(&ids, train, 42).unwrap(), a);
        assert_ne!(make_split(&ids, train, 43).unwrap(), a);
    }
    assert!(make_split(&["x".to_string()], 2, 0).is_err());
}

#[test]
fn split_manifest_text_round_trip() {
    let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
    let mut manifest = SplitManifest { seed: 7, ..SplitManifest::default() };
    manifest.datasets.insert("kvasir".into(), make_split(&ids, 8, 7).unwrap());
    manifest.datasets.insert("clinic".into(), make_split(&ids[..5], 3, 7).unwrap());
    let text = manifest.to_text();
    assert!(text.starts_with("seed = 7\n"));
    assert!(text.contains("[kvasir.train]") && text.contains("[clinic.test]"));
    assert_eq!(SplitManifest::parse(&text).unwrap(), manifest);
}

#[test]
fn preprocessing_shapes_at_network_resolution() {
    let pre = Preprocessor::default();
    let sample = pre.prepare(&record("r", 200));
    assert_eq!(sample.image.len(), 3 * 352 * 352);
    assert_eq!((sample.mask.height(), sample.mask.width()), (352, 352));
    let bdm = BdmOptions::default();
    let batch = stack_batch(&[&sample], &[Transform::default()], &bdm).unwrap();
    assert_eq!(batch.images.shape().dims(), [1, 3, 352, 352]);
    assert_eq!(batch.masks.shape().dims(), [1, 1, 352, 352]);
    assert_eq!(batch.bdms.shape().dims(), [1, 1, 352, 352]);
    assert!(batch.masks.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn standardization_uses_configured_constants() {
    let pre = Preprocessor { size: 4, mean: [0.5, 0.25, 0.0], std: [0.5, 0.25, 1.0] };
    let img = RgbImage::from_pixel(7, 5, Rgb([255, 0, 51]));
    let planes = pre.image_planes(&img);
    assert!(planes[..16].iter().all(|&v| (v - 1.0).abs() < 1e-6));
    assert!(planes[16..32].iter().all(|&v| (v + 1.0).abs() < 1e-6));
    assert!(planes[32..].iter().all(|&v| (v - 0.2).abs() < 1e-6));
}

#[test]
fn boundary_map_is_computed_after_resizing() {
    let rec = record("r", 96);
    let pre = Preprocessor { size: 32, ..Preprocessor::default() };
    let sample = pre.prepare(&rec);
    let opts = BdmOptions::default();
    let batch = stack_batch(&[&sample], &[Transform::default()], &opts).unwrap();
    let after: Vec<f32> =
        ideal_bdm_with(&resize_mask_nearest(&rec.mask, 32, 32), &opts).unwrap().values.iter().map(|&v| v as f32).collect();
    assert_eq!(batch.bdms.as_slice(), after.as_slice());

    // Sampling the full-resolution map instead gives a different target.
    let full = ideal_bdm_with(&rec.mask, &opts).unwrap();
    let sampled: Vec<f32> = (0..32 * 32).map(|i| full.get(i / 32 * 3, i % 32 * 3) as f32).collect();
    assert_ne!(batch.bdms.as_slice(), sampled.as_slice());
}

#[test]
fn augmentation_keeps_image_mask_and_map_aligned() {
    let pre = Preprocessor { size: 24, ..Preprocessor::default() };
    let sample = pre.prepare(&record("r", 24));
    let opts = BdmOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..12 {
        let t = Augmentation::default().sample(&mut rng);
        let (img, mask, bdm) = sample.materialize(t, &opts).unwrap();
        assert_eq!(img, t.apply(&sample.image, 24));
        let expected_mask: Vec<f32> = t.apply(sample.mask.as_slice(), 24).iter().map(|&v| f32::from(v)).collect();
        assert_eq!(mask, expected_mask);
        let plain = ideal_bdm_with(&sample.mask, &opts).unwrap();
        let plain_f: Vec<f32> = plain.values.iter().map(|&v| v as f32).collect();
        // Flips and quarter turns are isometries of the grid, so the map transforms with the mask.
        assert_eq!(bdm, t.apply(&plain_f, 24));
    }
}

#[test]
fn augmentation_is_seeded() {
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..32).map(|_| Augmentation::default().sample(&mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(draw(5), draw(5));
    assert_ne!(draw(5), draw(6));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!((0..32).all(|_| Augmentation::none().sample(&mut rng).is_identity()));
}

proptest! {
    #[test]
    fn nearest_resize_preserves_binarity(bits in proptest::collection::vec(0u8..2, 13 * 17), h in 1usize..40, w in 1usize..40) {
        let mask = BinaryMask::new(13, 17, bits).unwrap();
        let out = resize_mask_nearest(&mask, h, w);
        prop_assert_eq!((out.height(), out.width()), (h, w));
        prop_assert!(out.as_slice().iter().all(|&v| v <= 1));
    }

    #[test]
    fn double_flip_is_identity(data in proptest::collection::vec(any::<u8>(), 36)) {
        for t in [Transform { hflip: true, ..Transform::default() }, Transform { vflip: true, ..Transform::default() }] {
            prop_assert_eq!(t.apply(&t.apply(&data, 6), 6), data.clone());
        }
        let quarter = Transform { rot90: 1, ..Transform::default() };
        let mut turned = data.clone();
        for _ in 0..4 {
            turned = quarter.apply(&turned, 6);
        }
        prop_assert_eq!(turned, data);
    }
}
