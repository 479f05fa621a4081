//! Finite-difference check of a small convolutional classifier.
//!
//! The network is built in f64 and re-evaluated in f32 by the checker, so
//! the reported relative errors are what the training code actually sees.

use ecgan::nn::{Network, NetworkSpec, Role};
use ecgan::tensor::gradcheck::{check, GradCheck, Graph};
use ecgan::tensor::{NormMode, Real, Rng, Tape, Tensor, Var};

struct Loss {
    net: Network<f64>,
    labels: Vec<usize>,
}

impl Graph for Loss {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, vars: &[Var]) -> ecgan::tensor::Result<Var> {
        let (params, x) = vars.split_at(vars.len() - 1);
        let mut net = self.net.cast::<T>();
        let bound = net.bind_vars(params).expect("one var per trainable tensor");
        let logits = net.classify(tape, &bound, x[0], NormMode::Train { track: false }).expect("shapes agree");
        tape.cross_entropy(logits, &self.labels, None)
    }
}

fn main() -> ecgan::Result<()> {
    let mut rng = Rng::seed(7);
    let spec = NetworkSpec::new(Role::Classifier, 16, 1, 3).with_width(8);
    let net = Network::<f64>::build(&spec, &mut rng)?;
    let mut inputs: Vec<Tensor<f64>> = net.trainable().into_iter().cloned().collect();
    inputs.push(Tensor::randn(&[4, 1, 16, 16], &mut rng)?);
    let names: Vec<String> = net.params().iter().filter(|p| p.kind.trainable()).map(|p| p.name.clone()).collect();

    let graph = Loss { net, labels: vec![0, 1, 2, 0] };
    let reports = check::<f32, _>(&graph, &inputs, &GradCheck { max_coords: Some(8), ..GradCheck::default() })?;
    let mut worst: f64 = 0.0;
    for (i, r) in reports.iter().enumerate() {
        let name = names.get(i).map_or("input", String::as_str);
        println!("{name:<28} rel_error={:.2e} checked={} skipped={}", r.rel_error, r.checked, r.skipped);
        worst = worst.max(r.rel_error);
    }
    println!("worst relative error {worst:.2e} ({})", if worst < 1e-3 { "ok" } else { "too large" });
    Ok(())
}
