//! Round trip through the IDX format: write shapes as IDX files, read them
//! back, then train and evaluate a classifier on the loaded copy.

use ecgan::data::{load_idx, synth_shapes, write_idx_images, write_idx_labels};
use ecgan::train::{evaluate, train, HyperParams, Models, Variant};

fn main() -> ecgan::Result<()> {
    let dir = std::env::temp_dir().join("ecgan_idx_example");
    std::fs::create_dir_all(&dir).map_err(|e| ecgan::Error::io("creating output dir", e))?;
    let source = synth_shapes(40, 4, 16, 0.1, 40)?;
    let pixels: Vec<u8> = source.images.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
    let labels: Vec<u8> = source.labels.iter().map(|&l| l as u8).collect();
    let (img_path, lbl_path) = (dir.join("shapes-images-idx3-ubyte"), dir.join("shapes-labels-idx1-ubyte"));
    write_idx_images(&img_path, 16, 16, &pixels)?;
    write_idx_labels(&lbl_path, &labels)?;

    let loaded = load_idx(&img_path, &lbl_path)?;
    println!("loaded {} images of {}x{}, {} classes, counts {:?}", loaded.len(), loaded.image_size(), loaded.image_size(), loaded.num_classes, loaded.class_counts());

    let hp = HyperParams { epochs: 5, batch_size: 16, ..HyperParams::default() };
    let models = Models { classifier_width: 8, ..Models::default() };
    let mut out = train(Variant::Baseline, &loaded, None, &hp, &models, &mut ())?;
    let acc = evaluate(out.session.evaluated(), &loaded)?;
    println!("training accuracy after {} epochs: {acc:.3}", hp.epochs);
    Ok(())
}
