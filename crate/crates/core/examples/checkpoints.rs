//! Save a trained classifier with its optimizer state, reload it, and check
//! that the reloaded copy predicts exactly as the original.

use ecgan::data::synth_shapes;
use ecgan::nn::{Checkpoint, Role};
use ecgan::train::{evaluate, predict, train, HyperParams, Models, Variant};

fn main() -> ecgan::Result<()> {
    let data = synth_shapes(30, 3, 16, 0.1, 50)?;
    let hp = HyperParams { epochs: 3, batch_size: 16, ..HyperParams::default() };
    let mut out = train(Variant::EcGan, &data, None, &hp, &Models::default(), &mut ())?;

    let dir = std::env::temp_dir().join("ecgan_checkpoint_example");
    std::fs::create_dir_all(&dir).map_err(|e| ecgan::Error::io("creating output dir", e))?;
    for (role, ckpt) in out.session.checkpoints() {
        let path = dir.join(format!("{role}.ckpt"));
        ckpt.save(&path)?;
        let bytes = std::fs::metadata(&path).map_err(|e| ecgan::Error::io("stat", e))?.len();
        println!("{role:<14} {bytes:>8} bytes, {} params", ckpt.network()?.num_parameters());
    }

    let back = Checkpoint::load(&dir.join("classifier.ckpt"))?;
    let step = back.optimizer().map_or(0, |o| o.step_count());
    let mut reloaded = back.network_as(Role::Classifier)?;
    let original = out.session.classifier.as_mut().expect("classifier");
    assert_eq!(predict(original, &data.images)?, predict(&mut reloaded, &data.images)?);
    println!("reloaded classifier (optimizer at step {step}) accuracy {:.3}", evaluate(&mut reloaded, &data)?);

    // Loading with the wrong role is an error, not a silent reinterpretation.
    if let Err(e) = back.network_as(Role::Generator) {
        println!("as generator: {e}");
    }
    Ok(())
}
