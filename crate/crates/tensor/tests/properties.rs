//! Property tests for the tensor and tape invariants.

use ecgan_tensor::{Activation, NormMode, Rng, Tape, Tensor, Var};
use proptest::prelude::*;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut Rng::seed(seed)).unwrap()
}

fn scaled(shape: &[usize], std: f64, seed: u64) -> Tensor {
    Tensor::randn_scaled(shape, 0.0, std, &mut Rng::seed(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(n in 1usize..6, k in 2usize..12, std in 0.1f64..50.0, seed in any::<u64>()) {
        let mut tape = Tape::new();
        let x = tape.leaf(scaled(&[n, k], std, seed), false);
        let p = tape.softmax(x).unwrap();
        for row in tape.value(p).data().chunks(k) {
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn batch_norm_centers_each_channel(n in 1usize..4, c in 1usize..5, hw in 1usize..6, shift in -5.0f64..5.0, seed in any::<u64>()) {
        let mut x = randn(&[n, c, hw, hw], seed);
        x.data_mut().iter_mut().for_each(|v| *v += shift as f32);
        let mut tape = Tape::new();
        let xv = tape.leaf(x, false);
        let g = tape.constant(Tensor::ones(&[c]));
        let b = tape.constant(Tensor::zeros(&[c]));
        let (mut rm, mut rv) = (Tensor::zeros(&[c]), Tensor::ones(&[c]));
        let y = tape.batch_norm(xv, g, b, &mut rm, &mut rv, NormMode::Train { track: true }, 0.1, 1e-5).unwrap();
        let spatial = hw * hw;
        let mut mean = vec![0.0f64; c];
        for (i, chunk) in tape.value(y).data().chunks(spatial).enumerate() {
            mean[i % c] += chunk.iter().map(|&v| v as f64).sum::<f64>();
        }
        for m in mean {
            prop_assert!((m / (n * spatial) as f64).abs() < 1e-5);
        }
        prop_assert!(rm.all_finite() && rv.all_finite());
    }

    #[test]
    fn conv_output_follows_size_formula(
        h in 1usize..12, w in 1usize..12, k in 1usize..5, stride in 1usize..4, pad in 0usize..3,
    ) {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[1, 2, h, w]), false);
        let wt = tape.leaf(Tensor::ones(&[3, 2, k, k]), false);
        let y = tape.conv2d(x, wt, None, stride, pad).unwrap();
        prop_assert_eq!(tape.shape(y), &[1, 3, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1][..]);
    }

    #[test]
    fn conv_then_transpose_restores_dcgan_sizes(half in 1usize..17, c in 1usize..4) {
        // Kernel 4, stride 2, pad 1: the sampling step of every DCGAN block.
        let size = 2 * half;
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[1, c, size, size]), false);
        let w = tape.leaf(Tensor::ones(&[c, c, 4, 4]), false);
        let down = tape.conv2d(x, w, None, 2, 1).unwrap();
        prop_assert_eq!(tape.shape(down)[2], half);
        let up = tape.conv_transpose2d(down, w, None, 2, 1).unwrap();
        prop_assert_eq!(tape.shape(up), &[1, c, size, size][..]);
    }

    #[test]
    fn sum_gradient_is_ones(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let mut tape = Tape::new();
        let x = tape.leaf(randn(&shape, seed), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap();
        prop_assert_eq!(g.len(), tape.value(x).numel());
        prop_assert!(g.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn losses_are_finite_and_nonnegative(n in 1usize..8, k in 2usize..6, std in 0.1f64..100.0, seed in any::<u64>()) {
        let logits = scaled(&[n, k], std, seed);
        let labels: Vec<usize> = (0..n).map(|i| (i * 7 + seed as usize) % k).collect();
        let targets: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let mut tape = Tape::new();
        let l = tape.leaf(logits, true);
        let ce = tape.cross_entropy(l, &labels, None).unwrap();
        let col = tape.select_rows(l, &(0..n).collect::<Vec<_>>()).unwrap();
        let col = tape.reshape(col, &[n * k, 1]).unwrap();
        let first = tape.select_rows(col, &(0..n).map(|i| i * k).collect::<Vec<_>>()).unwrap();
        let p = tape.sigmoid(first);
        let bce = tape.bce(p, &targets).unwrap();
        for loss in [ce, bce] {
            let v = tape.value(loss).item();
            prop_assert!(v.is_finite() && v >= 0.0, "loss {v}");
            tape.backward(loss).unwrap();
        }
        prop_assert!(tape.grad(l).unwrap().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn forward_and_backward_are_deterministic(seed in any::<u64>()) {
        let run = || {
            let mut rng = Rng::seed(seed);
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::randn(&[2, 2, 8, 8], &mut rng).unwrap(), true);
            let w = tape.leaf(Tensor::randn(&[3, 2, 4, 4], &mut rng).unwrap(), true);
            let h = tape.conv2d(x, w, None, 2, 1).unwrap();
            let h = tape.activation(h, Activation::LEAKY);
            let h = tape.conv_transpose2d(h, w, None, 2, 1).unwrap();
            let h = tape.tanh(h);
            let loss = tape.mean(h);
            tape.backward(loss).unwrap();
            let bits = |v: Var| tape.grad(v).unwrap().iter().map(|g| g.to_bits()).collect::<Vec<_>>();
            (tape.value(loss).item().to_bits(), bits(x), bits(w))
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn gradient_matches_value_length(shape in prop::collection::vec(1usize..4, 2..5), seed in any::<u64>()) {
        let mut tape = Tape::new();
        let x = tape.leaf(randn(&shape, seed), true);
        let y = tape.tanh(x);
        let y = tape.scale(y, 3.0);
        let loss = tape.mean(y);
        tape.backward(loss).unwrap();
        prop_assert_eq!(tape.grad(x).unwrap().len(), shape.iter().product::<usize>());
        prop_assert!(tape.value(y).all_finite());
    }
}
