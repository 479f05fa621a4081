//! EC-GAN against a supervised-only classifier on a small noisy shape set.
//!
//! Each epoch prints the classifier's test accuracy and, for EC-GAN, the
//! fraction of generated images that cleared the confidence threshold.

use ecgan::data::synth_shapes;
use ecgan::train::{train, EpochRecord, HyperParams, Models, Observer, Session, Variant};

struct Print;

impl Observer for Print {
    fn on_epoch(&mut self, r: &EpochRecord, s: &Session) -> ecgan::Result<()> {
        let keep = r.keep_rate.map_or(String::from("-"), |k| format!("{k:.2}"));
        println!(
            "{:>8} epoch {:>2}  test {:.3}  train {:.3}  keep {keep}",
            s.variant.name(),
            r.epoch,
            r.test_acc.unwrap_or(f64::NAN),
            r.train_acc
        );
        Ok(())
    }
}

fn main() -> ecgan::Result<()> {
    let train_set = synth_shapes(40, 3, 16, 0.25, 10)?;
    let test = synth_shapes(100, 3, 16, 0.25, 11)?;
    let hp = HyperParams { epochs: 8, batch_size: 8, ..HyperParams::default() };
    let models = Models { classifier_width: 8, ..Models::default() };
    for variant in [Variant::Baseline, Variant::EcGan] {
        let out = train(variant, &train_set, Some(&test), &hp, &models, &mut Print)?;
        println!("{}: final test accuracy {:.3}\n", variant.name(), out.final_test_acc().unwrap_or(f64::NAN));
    }
    Ok(())
}
