mod common;

use std::path::Path;

use edgecyclegan::data::{
    ingest_dataset, make_patches, replay_image, replay_mask, synth_fundus, AugmentSpec, DomainStyle, Layout, Split,
    SynthSpec, DRIVE_SPLIT_SIZE, STARE_SIZE,
};
use edgecyclegan::{Image, SegMask};
use proptest::prelude::*;

use common::{random_scene, rng};

fn write_rgb(path: &Path, seed: u64) {
    let mut r = rng(seed);
    random_scene(&mut r, 12, 3).save(path).unwrap();
}

fn write_mask(path: &Path, seed: u64) {
    let m = SegMask::from_fn(12, 12, |y, x| (y * 7 + x * 3 + seed as usize).is_multiple_of(5)).unwrap();
    // gif has no gray mode; go through RGBA so every encoder accepts it
    let rgba = m.to_image().to_dynamic().to_rgba8();
    rgba.save(path).unwrap();
}

fn drive_tree(root: &Path, tag: &str) {
    for d in ["images", "1st_manual", "mask"] {
        std::fs::create_dir_all(root.join(d)).unwrap();
    }
    for i in 0..DRIVE_SPLIT_SIZE {
        let id = if tag == "training" { i + 21 } else { i + 1 };
        write_rgb(&root.join(format!("images/{id:02}_{tag}.tif")), id as u64);
        write_mask(&root.join(format!("1st_manual/{id:02}_manual1.gif")), id as u64);
        write_mask(&root.join(format!("mask/{id:02}_{tag}_mask.gif")), 99);
    }
}

#[test]
fn drive_layout_loads_twenty_with_labels_and_fov() {
    let dir = tempfile::tempdir().unwrap();
    drive_tree(dir.path(), "training");
    let ds = ingest_dataset(dir.path(), Layout::Drive).unwrap();
    assert_eq!(ds.len(), DRIVE_SPLIT_SIZE);
    assert_eq!(ds.split, Split::Train);
    assert_eq!(ds.ids[0], "21");
    assert_eq!(ds.labels().unwrap().len(), DRIVE_SPLIT_SIZE);
    assert_eq!(ds.fov_masks.as_ref().unwrap().len(), DRIVE_SPLIT_SIZE);
    assert_eq!(ds.images[0].dims(), (12, 12, 3));
    let expect = SegMask::from_fn(12, 12, |y, x| (y * 7 + x * 3 + 21) % 5 == 0).unwrap();
    assert_eq!(ds.labels().unwrap()[0], expect);
}

#[test]
fn drive_missing_label_is_named() {
    let dir = tempfile::tempdir().unwrap();
    drive_tree(dir.path(), "test");
    std::fs::remove_file(dir.path().join("1st_manual/07_manual1.gif")).unwrap();
    let msg = ingest_dataset(dir.path(), Layout::Drive).unwrap_err().to_string();
    assert!(msg.contains("07") && msg.contains("07_manual1.gif"), "{msg}");
}

#[test]
fn drive_wrong_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    drive_tree(dir.path(), "test");
    std::fs::remove_file(dir.path().join("images/03_test.tif")).unwrap();
    assert!(ingest_dataset(dir.path(), Layout::Drive).is_err());
}

#[test]
fn stare_layout_prefers_either_observer() {
    let dir = tempfile::tempdir().unwrap();
    for i in 1..=STARE_SIZE {
        write_rgb(&dir.path().join(format!("im{i:04}.ppm")), i as u64);
        let obs = if i % 2 == 0 { "ah" } else { "vk" };
        write_mask(&dir.path().join(format!("im{i:04}.{obs}.ppm")), i as u64);
    }
    let ds = ingest_dataset(dir.path(), Layout::Stare).unwrap();
    assert_eq!(ds.len(), STARE_SIZE);
    assert!(ds.fov_masks.is_none());
    assert_eq!(ds.ids[0], "im0001");
    // ppm is lossless, so the written pixels come back exactly
    let mut r = rng(1);
    let orig = random_scene(&mut r, 12, 3);
    let back = &ds.images[0];
    let worst = orig.data().iter().zip(back.data()).map(|(a, b)| (a.clamp(0.0, 1.0) - b).abs()).fold(0f32, f32::max);
    assert!(worst <= 0.5 / 255.0 + 1e-6, "{worst}");
}

#[test]
fn stare_missing_label_fails() {
    let dir = tempfile::tempdir().unwrap();
    for i in 1..=STARE_SIZE {
        write_rgb(&dir.path().join(format!("im{i:04}.ppm")), i as u64);
        if i != 5 {
            write_mask(&dir.path().join(format!("im{i:04}.ah.ppm")), i as u64);
        }
    }
    let msg = ingest_dataset(dir.path(), Layout::Stare).unwrap_err().to_string();
    assert!(msg.contains("im0005"), "{msg}");
}

#[test]
fn generic_round_trip_through_export() {
    let ds = synth_fundus(&SynthSpec { count: 3, image_size: 24, seed: 4, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.export_generic(dir.path()).unwrap();
    let back = ingest_dataset(dir.path(), Layout::Generic).unwrap();
    assert_eq!(back.ids, ds.ids);
    assert_eq!(back.labels().unwrap(), ds.labels().unwrap());
    for (a, b) in ds.images.iter().zip(&back.images) {
        let worst = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max);
        assert!(worst <= 0.5 / 255.0 + 1e-6);
    }
}

#[test]
fn missing_root_is_an_error() {
    assert!(ingest_dataset("/definitely/not/here", Layout::Generic).is_err());
}

fn small_ds() -> edgecyclegan::data::FundusDataset {
    synth_fundus(&SynthSpec { count: 3, image_size: 40, seed: 9, ..Default::default() }).unwrap()
}

#[test]
fn patches_count_ids_and_replay() {
    let ds = small_ds();
    let spec = AugmentSpec { patches_per_domain: 7, patch_size: 16, window: Some(24), seed: 3, ..Default::default() };
    let set = make_patches(&ds, &spec).unwrap();
    assert_eq!(set.dataset.len(), 7);
    assert_eq!(set.records.len(), 7);
    assert_eq!(set.dataset.ids[0], format!("{}_p0000", ds.ids[0]));
    let sources: Vec<usize> = set.records.iter().map(|r| r.source).collect();
    assert_eq!(sources, vec![0, 1, 2, 0, 1, 2, 0]);
    for (i, rec) in set.records.iter().enumerate() {
        assert_eq!(replay_image(&ds.images[rec.source], rec).unwrap(), set.dataset.images[i]);
        assert_eq!(replay_mask(&ds.labels().unwrap()[rec.source], rec).unwrap(), set.dataset.labels().unwrap()[i]);
        assert!(rec.rotation_degrees.abs() <= spec.max_rotation_degrees);
        assert!(rec.window_top + rec.window_height <= 40 && rec.window_left + rec.window_width <= 40);
    }
    assert_eq!(make_patches(&ds, &spec).unwrap().records, set.records);
}

#[test]
fn zero_transform_whole_frame_is_a_resize() {
    let ds = small_ds();
    let spec = AugmentSpec {
        max_rotation_degrees: 0.0,
        max_shift_fraction: 0.0,
        patches_per_domain: 3,
        patch_size: 40,
        window: None,
        seed: 0,
    };
    let set = make_patches(&ds, &spec).unwrap();
    for i in 0..3 {
        let worst =
            set.dataset.images[i].data().iter().zip(ds.images[i].data()).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
        assert!(worst < 1e-5, "{worst}");
        assert_eq!(set.dataset.labels().unwrap()[i], ds.labels().unwrap()[i]);
    }
}

#[test]
fn oversized_window_is_rejected() {
    let spec = AugmentSpec { patches_per_domain: 2, patch_size: 16, window: Some(64), ..Default::default() };
    assert!(make_patches(&small_ds(), &spec).is_err());
}

#[test]
fn synthetic_vessel_fraction_is_plausible() {
    let mut fractions = Vec::new();
    for seed in 0..20 {
        let ds = synth_fundus(&SynthSpec { count: 1, image_size: 96, seed, ..Default::default() }).unwrap();
        let m = &ds.labels().unwrap()[0];
        fractions.push(m.count_ones() as f64 / (96.0 * 96.0));
    }
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    assert!(fractions.iter().all(|&f| f > 0.01), "{fractions:?}");
    assert!((0.03..0.2).contains(&mean), "{mean}");
}

#[test]
fn two_level_style_gives_two_intensities() {
    let style = DomainStyle { background: [0.8; 3], contrast: [0.5; 3], vignette: 0.0, noise_std: 0.0 };
    let ds = synth_fundus(&SynthSpec { count: 2, image_size: 48, style, seed: 2, ..Default::default() }).unwrap();
    for (im, m) in ds.images.iter().zip(ds.labels().unwrap()) {
        for y in 0..48 {
            for x in 0..48 {
                let v = im.get(y, x, 0);
                if m.get(y, x) == 0 {
                    // background pixels are untouched or only grazed by an edge
                    assert!(v > 0.55, "background {v} at {y},{x}");
                } else {
                    assert!(v <= 0.55 + 1e-6, "vessel {v} at {y},{x}");
                }
            }
        }
        assert!(im.data().iter().any(|&v| (v - 0.8).abs() < 1e-6));
        assert!(im.data().iter().any(|&v| (v - 0.3).abs() < 1e-6));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synthesis_is_deterministic(seed in 0u64..1000) {
        let spec = SynthSpec { count: 2, image_size: 32, style: DomainStyle::pale(), seed, ..Default::default() };
        let a = synth_fundus(&spec).unwrap();
        let b = synth_fundus(&spec).unwrap();
        prop_assert_eq!(&a.images, &b.images);
        prop_assert_eq!(a.labels().unwrap(), b.labels().unwrap());
    }

    #[test]
    fn vessels_are_darker_than_background_on_average(seed in 0u64..1000) {
        let ds = synth_fundus(&SynthSpec { count: 1, image_size: 48, seed, ..Default::default() }).unwrap();
        let (im, m): (&Image, &SegMask) = (&ds.images[0], &ds.labels().unwrap()[0]);
        let (mut vs, mut vn, mut bs, mut bn) = (0f64, 0usize, 0f64, 0usize);
        for y in 0..48 {
            for x in 0..48 {
                // warm style draws vessels in the green channel
                let g = im.get(y, x, 1) as f64;
                if m.get(y, x) == 1 { vs += g; vn += 1 } else { bs += g; bn += 1 }
            }
        }
        prop_assume!(vn > 0);
        prop_assert!(vs / vn as f64 + 0.05 < bs / bn as f64);
    }

    #[test]
    fn patch_replay_matches(seed in 0u64..500, size in 8usize..24) {
        let ds = small_ds();
        let spec = AugmentSpec { patches_per_domain: 3, patch_size: size, window: None, seed, ..Default::default() };
        let set = make_patches(&ds, &spec).unwrap();
        for (i, rec) in set.records.iter().enumerate() {
            prop_assert_eq!(&replay_image(&ds.images[rec.source], rec).unwrap(), &set.dataset.images[i]);
            prop_assert_eq!(set.dataset.images[i].dims(), (size, size, 3));
        }
    }
}
