//! A small adversarial-weight sweep through the experiment harness.
//!
//! Writes `metrics.csv`, `run.json` and `sweep_summary.csv` under the output
//! directory (a temp dir unless one is given).

use ecgan::harness::{cmd_sweep, Axis, ExperimentConfig};

fn main() -> ecgan::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("ecgan_lambda_sweep"), Into::into);
    let config = serde_json::json!({
        "data": {"source": "synth", "n_per_class": 30, "test_per_class": 60, "classes": 3, "size": 16, "noise": 0.2},
        "hyper": {"epochs": 5, "batch_size": 8},
        "models": {"classifier_width": 8},
        "lambdas": [0.0, 0.1, 1.0],
        "seeds": [0, 1],
        "checkpoints": false,
        "output_dir": out,
    });
    let cfg = ExperimentConfig::from_json(&config.to_string())?;
    for row in cmd_sweep(&cfg, Axis::Lambda)? {
        println!("lambda {:<4} {:<8} mean {:.3} std {:.3}", row.value, row.variant, row.mean_test_acc, row.std_test_acc);
    }
    println!("results in {}", out.display());
    Ok(())
}
