use ecgan::optim::{Adam, AdamConfig, DecayPolicy, Slot};
use proptest::prelude::*;

/// Textbook Adam on one scalar, in f64.
fn reference_adam(theta0: f64, grad: impl Fn(f64) -> f64, cfg: AdamConfig, steps: usize) -> Vec<f64> {
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = grad(theta);
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powi(t as i32));
        let vh = v / (1.0 - cfg.beta2.powi(t as i32));
        theta -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        out.push(theta);
    }
    out
}

fn run_adam(theta0: f32, grad: impl Fn(f32) -> f32, cfg: AdamConfig, steps: usize) -> Vec<f32> {
    let mut theta = [theta0];
    let mut opt = Adam::new(cfg);
    let mut out = Vec::new();
    for _ in 0..steps {
        let g = [grad(theta[0])];
        opt.step(&mut [Slot { name: "w.weight", value: &mut theta, grad: Some(&g) }]).unwrap();
        out.push(theta[0]);
    }
    out
}

#[test]
fn matches_reference_on_square() {
    let cfg = AdamConfig { lr: 0.1, ..AdamConfig::classifier(0.1) };
    let expected = reference_adam(1.0, |t| 2.0 * t, cfg, 5);
    let got = run_adam(1.0, |t| 2.0 * t, cfg, 5);
    for (e, g) in expected.iter().zip(&got) {
        assert!((e - f64::from(*g)).abs() < 1e-6, "{expected:?} vs {got:?}");
    }
}

#[test]
fn first_step_moves_by_learning_rate() {
    // With bias correction the first step is lr·g/(|g|+ε) ≈ lr·sign(g).
    for cfg in [AdamConfig::gan(2e-4), AdamConfig::classifier(1e-3)] {
        let got = run_adam(0.5, |_| 3.0, cfg, 1)[0];
        assert!((f64::from(got) - (0.5 - cfg.lr)).abs() < 1e-7);
    }
}

#[test]
fn quadratic_loss_decreases_after_burn_in() {
    let cfg = AdamConfig::classifier(0.01);
    let path = run_adam(2.0, |t| 2.0 * (t - 0.5), cfg, 200);
    let loss: Vec<f32> = path.iter().map(|t| (t - 0.5) * (t - 0.5)).collect();
    for w in loss[20..].windows(2) {
        assert!(w[1] <= w[0], "loss rose: {w:?}");
    }
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let got = run_adam(0.75, |_| 0.0, AdamConfig::default(), 10);
    assert!(got.iter().all(|&t| t == 0.75));
}

#[test]
fn decay_pulls_weights_to_zero_without_data_gradient() {
    let decay = DecayPolicy::new(1e-3);
    let mut w = [2.0f32, -1.0];
    let mut opt = Adam::new(AdamConfig::classifier(1e-2));
    for _ in 0..5 {
        let mut g = [0.0f32; 2];
        decay.apply("fc.weight", &w.clone(), &mut g);
        opt.step(&mut [Slot { name: "fc.weight", value: &mut w, grad: Some(&g) }]).unwrap();
    }
    assert!(w[0] < 2.0 && w[1] > -1.0);
}

#[test]
fn state_is_keyed_by_name() {
    let mut a = [1.0f32];
    let mut b = [1.0f32];
    let mut opt = Adam::new(AdamConfig::default());
    opt.step(&mut [
        Slot { name: "a.weight", value: &mut a, grad: Some(&[1.0]) },
        Slot { name: "b.weight", value: &mut b, grad: Some(&[-1.0]) },
    ])
    .unwrap();
    let names: Vec<&str> = opt.moments().map(|(n, _)| n).collect();
    assert_eq!(names, ["a.weight", "b.weight"]);
    let err = opt.step(&mut [Slot { name: "a.weight", value: &mut a, grad: Some(&[1.0, 2.0]) }]);
    assert!(err.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn update_is_invariant_to_slot_order(
        values in prop::collection::vec(-2.0f32..2.0, 4),
        grads in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 4), 1..5),
    ) {
        let names = ["p0.weight", "p1.weight", "p2.bias", "p3.weight"];
        let run = |order: &[usize]| {
            let mut vals = values.clone();
            let mut opt = Adam::new(AdamConfig::gan(1e-2));
            for g in &grads {
                let mut slots: Vec<Option<Slot>> = vals
                    .chunks_mut(1)
                    .enumerate()
                    .map(|(i, v)| Some(Slot { name: names[i], value: v, grad: Some(&g[i..i + 1]) }))
                    .collect();
                let mut ordered: Vec<Slot> = order.iter().map(|&i| slots[i].take().unwrap()).collect();
                opt.step(&mut ordered).unwrap();
            }
            vals
        };
        prop_assert_eq!(run(&[0, 1, 2, 3]), run(&[3, 1, 0, 2]));
    }

    #[test]
    fn zero_coefficient_and_exempt_all_are_no_ops(
        value in prop::collection::vec(-5.0f32..5.0, 1..16),
        c in 0.0f64..1.0,
    ) {
        let grad: Vec<f32> = value.iter().map(|v| v * 0.3 - 0.1).collect();
        let mut g0 = grad.clone();
        DecayPolicy::new(0.0).apply("x.weight", &value, &mut g0);
        prop_assert_eq!(&g0, &grad);
        let mut g1 = grad.clone();
        DecayPolicy { coefficient: c, exempt: |_| true }.apply("x.weight", &value, &mut g1);
        prop_assert_eq!(&g1, &grad);
    }
}
