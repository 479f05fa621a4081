//! Architecture shapes, parameter counts, checkpoint round trips and
//! finite-difference checks of whole networks.

use ecgan::nn::{sample_latent, Checkpoint, Network, NetworkSpec, Role, LATENT_DIM};
use ecgan::optim::{Adam, AdamConfig};
use ecgan::tensor::gradcheck::{check, GradCheck, Graph};
use ecgan::tensor::{NormMode, Real, Rng, Tape, Tensor, Var};
use ecgan::Error;

const TRAIN: NormMode = NormMode::Train { track: false };

fn build(spec: &NetworkSpec, seed: u64) -> Network {
    Network::build(spec, &mut Rng::seed(seed)).unwrap()
}

#[test]
fn resnet18_parameter_count() {
    // Published count of the CIFAR-style ResNet-18 (3×3 stem, widths 64..512).
    let spec = NetworkSpec::new(Role::Classifier, 32, 3, 10).with_width(64).with_depth(2);
    assert_eq!(build(&spec, 0).num_parameters(), 11_173_962);
}

#[test]
fn adversarial_parameter_counts() {
    // Hand-counted layer by layer for 32px, base width 16, 3 channels.
    let g = NetworkSpec::new(Role::Generator, 32, 3, 3);
    // 100·64·16 + 2·64 + 64·32·16 + 2·32 + 32·16·16 + 2·16 + 16·3·16
    assert_eq!(build(&g, 0).num_parameters(), 144_352);
    let d = NetworkSpec::new(Role::Discriminator, 32, 3, 3);
    // 16·3·16 + 32·16·16 + 2·32 + 64·32·16 + 2·64 + 1·64·16
    assert_eq!(build(&d, 0).num_parameters(), 42_944);
    // The label channel widens the second conv's input by one.
    assert_eq!(build(&d.clone().with_conditional(true), 0).num_parameters(), 42_944 + 32 * 16);
    // Shared: discriminator trunk + validity head + class head (K·64·16 + K).
    let sd = NetworkSpec::new(Role::SharedDiscriminator, 32, 3, 3);
    assert_eq!(build(&sd, 0).num_parameters(), 42_944 + 3 * 64 * 16 + 3);
}

#[test]
fn shared_trunk_matches_discriminator_trunk() {
    let count = |net: &Network, prefix: &str| -> Vec<(String, Vec<usize>)> {
        net.params()
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| (p.name[prefix.len()..].to_string(), p.tensor.shape().to_vec()))
            .collect()
    };
    let d = build(&NetworkSpec::new(Role::Discriminator, 32, 1, 4), 0);
    let sd = build(&NetworkSpec::new(Role::SharedDiscriminator, 32, 1, 4), 0);
    assert_eq!(count(&d, "d.down"), count(&sd, "sd.down"));
}

#[test]
fn output_shapes() {
    let mut rng = Rng::seed(9);
    for size in [16, 32, 64] {
        for ch in [1, 3] {
            let x = Tensor::rand_uniform(&[3, ch, size, size], -1.0, 1.0, &mut rng).unwrap();
            let mut tape = Tape::new();
            let xv = tape.constant(x);

            let mut d = build(&NetworkSpec::new(Role::Discriminator, size, ch, 4), 1);
            let b = d.bind(&mut tape, false);
            let p = d.discriminate(&mut tape, &b, xv, None, TRAIN).unwrap();
            assert_eq!(tape.shape(p), &[3, 1]);
            assert!(tape.value(p).data().iter().all(|&v| v > 0.0 && v < 1.0));

            let mut c = build(&NetworkSpec::new(Role::Classifier, size, ch, 4), 2);
            let b = c.bind(&mut tape, false);
            let l = c.classify(&mut tape, &b, xv, TRAIN).unwrap();
            assert_eq!(tape.shape(l), &[3, 4]);

            let mut sd = build(&NetworkSpec::new(Role::SharedDiscriminator, size, ch, 4), 3);
            let b = sd.bind(&mut tape, false);
            let (logits, prob) = sd.shared(&mut tape, &b, xv, TRAIN).unwrap();
            assert_eq!((tape.shape(logits), tape.shape(prob)), (&[3, 4][..], &[3, 1][..]));
        }
    }
}

#[test]
fn conditional_discriminator_requires_labels() {
    let mut d = build(&NetworkSpec::new(Role::Discriminator, 16, 1, 3).with_conditional(true), 0);
    let mut tape = Tape::new();
    let b = d.bind(&mut tape, false);
    let x = tape.constant(Tensor::zeros(&[2, 1, 16, 16]));
    assert!(matches!(d.discriminate(&mut tape, &b, x, None, TRAIN), Err(Error::Contract(_))));
    let p = d.discriminate(&mut tape, &b, x, Some(&[0, 2]), TRAIN).unwrap();
    assert_eq!(tape.shape(p), &[2, 1]);
}

#[test]
fn label_channel_changes_the_output() {
    let mut d = build(&NetworkSpec::new(Role::Discriminator, 16, 1, 3).with_conditional(true), 4);
    let mut tape = Tape::new();
    let b = d.bind(&mut tape, false);
    let one = Tensor::randn(&[1, 1, 16, 16], &mut Rng::seed(5)).unwrap();
    let mut both = one.data().to_vec();
    both.extend_from_slice(one.data());
    let x = tape.constant(Tensor::new(vec![2, 1, 16, 16], both).unwrap());
    let p = d.discriminate(&mut tape, &b, x, Some(&[0, 2]), NormMode::Eval).unwrap();
    let out = tape.value(p).data();
    assert_ne!(out[0], out[1]);
}

#[test]
fn conditional_latent_carries_encoded_label() {
    let z: Tensor = sample_latent(3, Some((&[0, 1, 2], 3)), &mut Rng::seed(0)).unwrap();
    let last: Vec<f32> = z.data().chunks(LATENT_DIM).map(|r| r[LATENT_DIM - 1]).collect();
    assert_eq!(last, [-1.0, 0.0, 1.0]);
}

#[test]
fn wrong_input_shape_is_rejected() {
    let mut c = build(&NetworkSpec::new(Role::Classifier, 32, 3, 3), 0);
    let mut tape = Tape::new();
    let b = c.bind(&mut tape, false);
    let x = tape.constant(Tensor::zeros(&[1, 1, 32, 32]));
    assert!(matches!(c.classify(&mut tape, &b, x, TRAIN), Err(Error::Contract(_))));
}

#[test]
fn eval_mode_uses_running_statistics() {
    let mut c = build(&NetworkSpec::new(Role::Classifier, 16, 1, 3), 0);
    let x = Tensor::randn(&[4, 1, 16, 16], &mut Rng::seed(1)).unwrap();
    let run = |c: &mut Network, rows: std::ops::Range<usize>| {
        let mut tape = Tape::new();
        let b = c.bind(&mut tape, false);
        let xv = tape.constant(x.slice_rows(rows.start, rows.end));
        let l = c.classify(&mut tape, &b, xv, NormMode::Eval).unwrap();
        tape.value(l).data()[..3].to_vec()
    };
    // Eval output of a row does not depend on the rest of the batch.
    assert_eq!(run(&mut c, 0..4), run(&mut c, 0..1));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (i, spec) in [
        NetworkSpec::new(Role::Generator, 16, 3, 4).with_conditional(true),
        NetworkSpec::new(Role::Discriminator, 16, 1, 4),
        NetworkSpec::new(Role::Classifier, 16, 1, 4).with_depth(2),
        NetworkSpec::new(Role::SharedDiscriminator, 16, 3, 5),
    ]
    .iter()
    .enumerate()
    {
        let mut net = build(spec, i as u64);
        // Give the optimizer and running statistics non-trivial state.
        let mut opt = Adam::new(AdamConfig::gan(1e-3));
        let grads = ecgan::nn::Gradients {
            grads: net
                .params()
                .iter()
                .map(|p| p.kind.trainable().then(|| vec![0.5f32; p.tensor.numel()]))
                .collect(),
        };
        opt.step(&mut net.slots(&grads)).unwrap();
        for p in net.params_mut() {
            if !p.kind.trainable() {
                p.tensor.data_mut()[0] = 0.123;
            }
        }
        let path = dir.path().join(format!("{i}.ckpt"));
        Checkpoint::capture(&net, Some(&opt)).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let back = loaded.network().unwrap();
        assert_eq!(back.spec(), net.spec());
        for (a, b) in net.params().iter().zip(back.params()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.tensor), bits(&b.tensor), "{}", a.name);
        }
        assert_eq!(loaded.optimizer().unwrap(), opt);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(Checkpoint::capture(&back, Some(&opt)).to_bytes(), bytes);
    }
}

#[test]
fn checkpoint_role_and_corruption_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    let g = build(&NetworkSpec::new(Role::Generator, 16, 1, 3), 0);
    Checkpoint::capture(&g, None).save(&path).unwrap();
    let ck = Checkpoint::load(&path).unwrap();
    assert!(matches!(ck.network_as(Role::Classifier), Err(Error::RoleMismatch { .. })));
    assert!(ck.optimizer().is_none());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
    std::fs::write(&path, b"NOTACKPT").unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
}

/// A network as a graph of (trainable params…, input).
struct NetGraph {
    net: Network<f64>,
    labels: Vec<usize>,
}

impl Graph for NetGraph {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, vars: &[Var]) -> ecgan::tensor::Result<Var> {
        let (params, x) = vars.split_at(vars.len() - 1);
        let mut net = self.net.cast::<T>();
        let bound = net.bind_vars(params).unwrap();
        let out = match net.role() {
            Role::Generator => net.generate(tape, &bound, x[0], TRAIN).unwrap(),
            Role::Discriminator => {
                let p = net.discriminate(tape, &bound, x[0], None, TRAIN).unwrap();
                tape.bce(p, &vec![1.0; self.labels.len()])?
            }
            _ => {
                let l = net.classify(tape, &bound, x[0], TRAIN).unwrap();
                tape.cross_entropy(l, &self.labels, None)?
            }
        };
        Ok(out)
    }
}

/// Every trainable tensor and the input pass the f32 check on 10 instances.
fn check_network(spec: NetworkSpec, input_shape: &[usize]) {
    for instance in 0..10u64 {
        let mut rng = Rng::seed(100 + instance);
        let net = Network::<f64>::build(&spec, &mut rng).unwrap();
        let x = Tensor::randn(input_shape, &mut rng).unwrap();
        let labels = (0..input_shape[0]).map(|i| i % spec.num_classes).collect();
        let mut inputs: Vec<Tensor<f64>> = net.trainable().into_iter().cloned().collect();
        inputs.push(x);
        let graph = NetGraph { net, labels };
        let cfg = GradCheck { max_coords: Some(6), seed: instance, ..GradCheck::default() };
        let reports = check::<f32, _>(&graph, &inputs, &cfg).unwrap();
        for (i, r) in reports.iter().enumerate() {
            assert!(r.passes(1e-3), "{:?} instance {instance} input {i}: {r:?}", spec.role);
        }
    }
}

#[test]
fn generator_gradients() {
    check_network(NetworkSpec::new(Role::Generator, 16, 1, 3).with_width(8), &[4, LATENT_DIM]);
}

#[test]
fn discriminator_gradients() {
    check_network(NetworkSpec::new(Role::Discriminator, 16, 1, 3).with_width(8), &[4, 1, 16, 16]);
}

#[test]
fn classifier_gradients() {
    check_network(NetworkSpec::new(Role::Classifier, 16, 1, 3).with_width(8), &[4, 1, 16, 16]);
}
