use std::path::Path;

use ecgan::data::{
    denormalize, epoch_batches, load_idx, load_image_dir, normalize, read_pnm, subsample, synth_shapes, write_idx_images,
    write_idx_labels, write_pnm, AugmentPolicy, Dataset, Image,
};
use ecgan::tensor::{Rng, Tensor};
use ecgan::{DataError, Error};
use proptest::prelude::*;

fn data_err(e: Error) -> DataError {
    match e {
        Error::Data(d) => d,
        other => panic!("expected a data error, got {other}"),
    }
}

fn write(path: &Path, bytes: &[u8]) {
    std::fs::write(path, bytes).unwrap();
}

fn be(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_be_bytes()).collect()
}

#[test]
fn idx_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("x.idx"), dir.path().join("y.idx"));
    let pixels: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 4) as u8).collect();
    write_idx_images(&img, 4, 5, &pixels).unwrap();
    write_idx_labels(&lab, &[2, 0, 1]).unwrap();
    let d = load_idx(&img, &lab).unwrap();
    assert_eq!(d.images.shape(), &[3, 1, 4, 5]);
    assert_eq!(d.labels, [2, 0, 1]);
    assert_eq!(d.num_classes, 3);
    assert_eq!(d.images.data()[1], 4.0 / 255.0);
}

/// The five malformed-file classes, each with its error and byte offset.
#[test]
fn idx_rejects_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("x.idx");
    let lab = dir.path().join("y.idx");
    write_idx_labels(&lab, &[0, 1]).unwrap();

    // 1. wrong magic
    let mut bytes = be(&[0x0803 + 1, 2, 2, 2]);
    bytes.extend([0; 8]);
    write(&img, &bytes);
    let e = data_err(load_idx(&img, &lab).unwrap_err());
    assert!(matches!(e, DataError::BadMagic { found: 0x0804, .. }), "{e}");

    // 2. header cut short
    write(&img, &be(&[0x0803, 2])[..7]);
    let e = data_err(load_idx(&img, &lab).unwrap_err());
    assert_eq!(e, DataError::Truncated { file: img.display().to_string(), offset: 7, needed: 9 });

    // 3. payload cut short
    let mut bytes = be(&[0x0803, 2, 2, 2]);
    bytes.extend([0; 5]);
    write(&img, &bytes);
    let e = data_err(load_idx(&img, &lab).unwrap_err());
    assert_eq!(e, DataError::Truncated { file: img.display().to_string(), offset: 21, needed: 3 });

    // 4. trailing garbage
    let mut bytes = be(&[0x0803, 2, 2, 2]);
    bytes.extend([0; 10]);
    write(&img, &bytes);
    let e = data_err(load_idx(&img, &lab).unwrap_err());
    assert_eq!(e, DataError::TrailingBytes { file: img.display().to_string(), offset: 24, extra: 2 });

    // 5. image and label counts disagree
    let mut bytes = be(&[0x0803, 3, 2, 2]);
    bytes.extend([0; 12]);
    write(&img, &bytes);
    let e = data_err(load_idx(&img, &lab).unwrap_err());
    assert_eq!(e, DataError::CountMismatch { images: 3, labels: 2 });

    // Zero image dimensions are rejected at the offending header field.
    write(&img, &be(&[0x0803, 2, 0, 2]));
    let e = data_err(load_idx(&img, &lab).unwrap_err());
    assert!(matches!(e, DataError::InvalidHeader { offset: 8, .. }), "{e}");
}

fn gray(width: usize, height: usize, value: f32) -> Image {
    Image { width, height, channels: 1, pixels: vec![value; width * height] }
}

#[test]
fn image_directory_loading() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..4 {
        write_pnm(&dir.path().join(format!("{i}.pgm")), &gray(8, 8, i as f32 / 4.0)).unwrap();
    }
    let csv = dir.path().join("labels.csv");
    std::fs::write(&csv, "filename,label\n0.pgm,0\n1.pgm,1\n2.pgm,0\n3.pgm,1\n").unwrap();
    let d = load_image_dir(dir.path(), &csv, 16, 1).unwrap();
    assert_eq!((d.len(), d.num_classes), (4, 2));
    assert_eq!(d.images.shape(), &[4, 1, 16, 16]);
    assert_eq!(d.images.data()[16 * 16], 64.0 / 255.0);

    // Gray replicated to three channels.
    let d3 = load_image_dir(dir.path(), &csv, 16, 3).unwrap();
    assert_eq!(d3.images.shape(), &[4, 3, 16, 16]);

    std::fs::write(&csv, "filename,label\n0.pgm,0\nmissing.pgm,1\n").unwrap();
    match data_err(load_image_dir(dir.path(), &csv, 16, 1).unwrap_err()) {
        DataError::MissingFile { row: 2, path } => assert!(path.ends_with("missing.pgm")),
        e => panic!("{e}"),
    }
    std::fs::write(&csv, "filename,label\n0.pgm,cat\n").unwrap();
    let e = data_err(load_image_dir(dir.path(), &csv, 16, 1).unwrap_err());
    assert_eq!(e, DataError::UnknownLabel { row: 1, label: "cat".into() });
}

#[test]
fn large_pgm_is_downsampled() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = gray(64, 64, 0.0);
    for y in 0..64 {
        for x in 32..64 {
            img.pixels[y * 64 + x] = 1.0;
        }
    }
    write_pnm(&dir.path().join("a.pgm"), &img).unwrap();
    let csv = dir.path().join("labels.csv");
    std::fs::write(&csv, "filename,label\na.pgm,1\n").unwrap();
    let d = load_image_dir(dir.path(), &csv, 32, 1).unwrap();
    assert_eq!(d.images.shape(), &[1, 1, 32, 32]);
    assert_eq!(&d.images.data()[14..18], &[0.0, 0.0, 1.0, 1.0]);
}

#[test]
fn ppm_p6_parses() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ppm");
    let mut bytes = b"P6\n# colour\n2 2\n255\n".to_vec();
    bytes.extend([255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255]);
    write(&path, &bytes);
    let img = read_pnm(&path).unwrap();
    assert_eq!((img.width, img.height, img.channels), (2, 2, 3));
    // Planar: red plane first.
    assert_eq!(&img.pixels[0..4], &[1.0, 0.0, 0.0, 1.0]);
    assert_eq!(&img.pixels[4..8], &[0.0, 1.0, 0.0, 1.0]);

    let out = dir.path().join("d.ppm");
    write_pnm(&out, &img).unwrap();
    assert_eq!(read_pnm(&out).unwrap(), img);
}

#[test]
fn shapes_are_balanced_and_deterministic() {
    let d = synth_shapes(100, 3, 32, 0.1, 7).unwrap();
    assert_eq!(d.len(), 300);
    assert_eq!(d.class_counts(), [100, 100, 100]);
    assert_eq!(d, synth_shapes(100, 3, 32, 0.1, 7).unwrap());
    assert_ne!(d.images, synth_shapes(100, 3, 32, 0.1, 8).unwrap().images);
    assert!(synth_shapes(10, 6, 32, 0.0, 0).is_err());
    assert!(synth_shapes(10, 1, 32, 0.0, 0).is_err());
    assert!(synth_shapes(10, 3, 24, 0.0, 0).is_err());
}

#[test]
fn noiseless_squares_differ_only_by_position_and_size() {
    let d = synth_shapes(30, 2, 32, 0.0, 3).unwrap();
    for (img, &label) in d.images.data().chunks(32 * 32).zip(&d.labels) {
        if label != 0 {
            continue;
        }
        assert!(img.iter().all(|&v| v == 0.0 || v == 1.0));
        let on: Vec<(usize, usize)> = (0..32 * 32).filter(|&i| img[i] == 1.0).map(|i| (i % 32, i / 32)).collect();
        let (x0, x1) = (on.iter().map(|p| p.0).min().unwrap(), on.iter().map(|p| p.0).max().unwrap());
        let (y0, y1) = (on.iter().map(|p| p.1).min().unwrap(), on.iter().map(|p| p.1).max().unwrap());
        // A filled axis-aligned square.
        assert_eq!(on.len(), (x1 - x0 + 1) * (y1 - y0 + 1));
        assert!((x1 - x0).abs_diff(y1 - y0) <= 1);
    }
}

#[test]
fn normalization_round_trip() {
    let x = Tensor::rand_uniform(&[2, 1, 4, 4], 0.0, 1.0, &mut Rng::seed(0)).unwrap();
    let n = normalize(&x);
    assert!(n.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    for (a, b) in denormalize(&n).data().iter().zip(x.data()) {
        assert!((a - b).abs() <= f32::EPSILON);
    }
    let edges = Tensor::new(vec![1, 1, 1, 3], vec![0.0, 0.5, 1.0]).unwrap();
    assert_eq!(normalize(&edges).data(), &[-1.0, 0.0, 1.0]);
}

#[test]
fn disabled_augmentation_is_identity() {
    let x = Tensor::rand_uniform(&[3, 1, 8, 8], 0.0, 1.0, &mut Rng::seed(0)).unwrap();
    assert_eq!(AugmentPolicy::default().apply(&x, &mut Rng::seed(1)), x);
}

#[test]
fn augmentation_fills_with_minus_one_after_normalization() {
    let x = Tensor::ones(&[1, 1, 16, 16]);
    let d = Dataset::new(x, vec![0], 2).unwrap();
    let policy = AugmentPolicy { crop_pad: 4, rotation_deg: 0.0, enabled: true };
    let mut rng = Rng::seed(5);
    let shifted = (0..20).map(|_| d.batch(&[0], Some((&policy, &mut rng)))).find(|b| b.images.data().contains(&-1.0));
    assert!(shifted.is_some());
}

#[test]
fn subsample_examples() {
    let d = synth_shapes(100, 3, 16, 0.1, 0).unwrap();
    let s = subsample(&d, 10.0, 1).unwrap();
    assert_eq!(s.class_counts(), [10, 10, 10]);
    assert_eq!(subsample(&d, 100.0, 1).unwrap(), d);
    let small = synth_shapes(2, 3, 16, 0.1, 0).unwrap();
    let e = data_err(subsample(&small, 10.0, 0).unwrap_err());
    assert!(matches!(e, DataError::Underflow { class: 0, available: 2, .. }));
}

#[test]
fn batch_sizes_keep_the_short_tail() {
    let sizes: Vec<usize> = epoch_batches(10, 4, 0, 0).iter().map(Vec::len).collect();
    assert_eq!(sizes, [4, 4, 2]);
    assert_eq!(epoch_batches(10, 4, 9, 3), epoch_batches(10, 4, 9, 3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentation_stays_in_the_input_hull(seed in 0u64..1000, pad in 0usize..5, deg in 0.0f64..30.0) {
        let mut rng = Rng::seed(seed);
        let x = Tensor::rand_uniform(&[2, 2, 8, 8], 0.2, 0.9, &mut rng).unwrap();
        let policy = AugmentPolicy { crop_pad: pad, rotation_deg: deg, enabled: true };
        let y = policy.apply(&x, &mut rng);
        prop_assert_eq!(y.shape(), x.shape());
        // Bilinear weights are convex, so outputs lie between 0 (fill) and the max.
        prop_assert!(y.data().iter().all(|&v| (0.0..=0.9 + 1e-6).contains(&v)));
        let again = policy.apply(&x, &mut Rng::seed(seed));
        let mut rng2 = Rng::seed(seed);
        let _: Tensor = Tensor::rand_uniform(&[2, 2, 8, 8], 0.2, 0.9, &mut rng2).unwrap();
        prop_assert_eq!(policy.apply(&x, &mut rng2), y);
        prop_assert_eq!(again.shape(), x.shape());
    }

    #[test]
    fn stratified_counts_and_order(percent in 10.0f64..=100.0, seed in 0u64..100) {
        let d = synth_shapes(20, 4, 16, 0.0, 1).unwrap();
        let s = subsample(&d, percent, seed).unwrap();
        let want = (percent / 100.0 * 20.0).round() as usize;
        prop_assert_eq!(s.class_counts(), vec![want; 4]);
        // Labels are class-major in the source, so preserved order keeps them sorted.
        prop_assert!(s.labels.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn every_index_once_per_epoch(n in 1usize..200, b in 1usize..40, seed in 0u64..50, epoch in 0usize..5) {
        let batches = epoch_batches(n, b, seed, epoch);
        prop_assert!(batches.iter().all(|x| !x.is_empty() && x.len() <= b));
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
