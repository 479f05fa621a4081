//! Conditional EC-GAN: the class rides in the last latent entry and as an
//! extra discriminator channel. After training, one grid per class is
//! written and the classifier labels a balanced batch of samples.

use ecgan::data::{denormalize, synth_shapes, write_pnm};
use ecgan::harness::tile;
use ecgan::nn::balanced_labels;
use ecgan::tensor::{NormMode, Rng, Tape};
use ecgan::train::{pseudo_label, sample_images, train, HyperParams, Models, Variant};

fn main() -> ecgan::Result<()> {
    let k = 3;
    let data = synth_shapes(60, k, 16, 0.05, 30)?;
    let hp = HyperParams { epochs: 10, batch_size: 16, ..HyperParams::default() };
    let models = Models { classifier_width: 8, ..Models::default() };
    let mut run = train(Variant::Conditional, &data, Some(&data), &hp, &models, &mut ())?;
    let session = &mut run.session;
    let (g, c) = (session.generator.as_mut().expect("generator"), session.classifier.as_mut().expect("classifier"));

    for class in 0..k {
        let x = sample_images(g, 16, Some(&[class; 16]), &mut Rng::seed(class as u64))?;
        let path = std::env::temp_dir().join(format!("conditional_class{class}.pgm"));
        write_pnm(&path, &tile(&denormalize(&x)))?;
        println!("class {class} grid: {}", path.display());
    }

    // Label generated images the way training does: batch statistics, argmax.
    let labels = balanced_labels(300, k, 0);
    let x = sample_images(g, labels.len(), Some(&labels), &mut Rng::seed(9))?;
    let mut tape = Tape::new();
    let bound = c.bind(&mut tape, false);
    let xv = tape.constant(x);
    let logits = c.classify(&mut tape, &bound, xv, NormMode::Train { track: false })?;
    let (_, pred) = pseudo_label(tape.value(logits), -1.0);

    println!("rows: conditioning class, columns: classifier label");
    for class in 0..k {
        let row: Vec<usize> = (0..k)
            .map(|p| labels.iter().zip(&pred).filter(|&(&l, &q)| l == class && q == p).count())
            .collect();
        println!("  {class}: {row:?}");
    }
    Ok(())
}
