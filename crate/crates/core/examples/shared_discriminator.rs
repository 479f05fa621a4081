//! The shared two-headed discriminator next to an external classifier.
//!
//! Both see the same real data and the same kind of generator. The shared
//! network must split its trunk between telling real from fake and telling
//! classes apart; EC-GAN gives each task its own network.

use ecgan::data::synth_shapes;
use ecgan::train::{train, HyperParams, Models, Variant};

fn main() -> ecgan::Result<()> {
    let train_set = synth_shapes(40, 3, 16, 0.2, 20)?;
    let test = synth_shapes(100, 3, 16, 0.2, 21)?;
    let models = Models { classifier_width: 8, ..Models::default() };
    for (variant, on_generated) in [(Variant::Shared, false), (Variant::Shared, true), (Variant::EcGan, false)] {
        let hp = HyperParams { epochs: 8, batch_size: 8, shared_on_generated: on_generated, ..HyperParams::default() };
        let out = train(variant, &train_set, Some(&test), &hp, &models, &mut ())?;
        let net = out.session.shared.as_ref().or(out.session.classifier.as_ref()).expect("a classifying network");
        println!(
            "{:<6} pseudo-labels on generated: {:<5}  params {:>7}  test {:.3}",
            variant.name(),
            on_generated || variant == Variant::EcGan,
            net.num_parameters(),
            out.final_test_acc().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
