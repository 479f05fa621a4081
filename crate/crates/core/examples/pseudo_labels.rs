//! How the confidence threshold filters pseudo-labels.
//!
//! Random logits at three temperatures: sharper logits clear the threshold
//! more often, and raising the threshold never keeps more rows.

use ecgan::tensor::{Rng, Tensor};
use ecgan::train::pseudo_label;

fn main() -> ecgan::Result<()> {
    let thresholds = [0.0, 0.3, 0.5, 0.7, 0.9, 0.99];
    print!("{:>6}", "scale");
    for t in thresholds {
        print!("  t={t:<5}");
    }
    println!();
    for scale in [0.5, 2.0, 6.0] {
        let logits: Tensor = Tensor::randn_scaled(&[1000, 10], 0.0, scale, &mut Rng::seed(3))?;
        print!("{scale:>6}");
        for t in thresholds {
            let (rows, _) = pseudo_label(&logits, t);
            print!("  {:>7}", rows.len());
        }
        println!();
    }

    let logits = Tensor::new(vec![3, 3], vec![4.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.2, 0.1, 3.0])?;
    let (rows, labels) = pseudo_label(&logits, 0.7);
    println!("kept rows {rows:?} with labels {labels:?}");
    Ok(())
}
