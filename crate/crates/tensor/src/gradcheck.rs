//! Central finite-difference gradient checking.
//!
//! A [`Graph`] is written once, generically over the element type. Its
//! analytic gradients are taken at the precision under test, while the
//! numeric side always re-runs the graph in `f64` with one coordinate
//! nudged at a time, using the fourth-order stencil
//!
//! ```text
//! f'(x) ≈ [f(x−2ε) − 8 f(x−ε) + 8 f(x+ε) − f(x+2ε)] / 12ε
//! ```
//!
//! Non-scalar outputs are reduced to `Σ out ⊙ r` for a fixed random `r`.
//! When a perturbed pass takes a different branch at any ReLU kink than the
//! unperturbed one (see [`Tape::kink_pattern`]), the probe is repeated with
//! a step up to 1000× smaller and discarded only if every retry straddles
//! a kink.

use crate::{Real, Result, Rng, Tape, Tensor, Var};

/// A computation over input tensors, instantiable at any precision.
pub trait Graph {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Result<Var>;
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub eps: f64,
    /// Coordinates probed per input; all when `None`.
    pub max_coords: Option<usize>,
    /// Seeds the projection and coordinate sampling.
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            eps: 1e-3,
            max_coords: None,
            seed: 0,
        }
    }
}

/// Outcome of comparing one input's analytic gradient against finite
/// differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckReport {
    /// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)` over the compared coordinates.
    pub rel_error: f64,
    pub checked: usize,
    /// Coordinates dropped because every probe step crossed a kink.
    pub skipped: usize,
}

impl CheckReport {
    /// Error below `tol`, with at least half the probed coordinates usable.
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.rel_error < tol && self.skipped <= self.checked
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(1e-8)
}

/// Up to `max` distinct coordinates of `0..len`, drawn deterministically.
pub fn sample_coords(len: usize, max: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if len > max {
        rng.shuffle(&mut idx);
        idx.truncate(max);
        idx.sort_unstable();
    }
    idx
}

/// Fixed projection weights for an output of the given shape.
fn projection(shape: &[usize], seed: u64) -> Tensor<f64> {
    if shape.iter().product::<usize>() == 1 {
        return Tensor::ones(shape);
    }
    Tensor::randn(shape, &mut Rng::stream(seed, 0x9e37)).expect("non-empty output")
}

struct Probe {
    value: f64,
    pattern: u64,
}

fn probe<G: Graph>(graph: &G, inputs: &[Tensor<f64>], seed: u64) -> Probe {
    let mut tape = Tape::<f64>::default();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = graph.eval(&mut tape, &vars).expect("forward succeeded at the base point");
    let r = projection(tape.shape(out), seed);
    let value = tape.value(out).data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
    Probe {
        value,
        pattern: tape.kink_pattern(),
    }
}

/// Analytic gradients of `Σ graph(inputs) ⊙ r` at precision `T` against
/// `f64` finite differences, one report per input.
pub fn check<T: Real, G: Graph>(graph: &G, inputs: &[Tensor<f64>], cfg: &GradCheck) -> Result<Vec<CheckReport>> {
    // Both sides evaluate at the point representable in `T`.
    let at_t: Vec<Tensor<T>> = inputs.iter().map(Tensor::cast).collect();
    let mut state: Vec<Tensor<f64>> = at_t.iter().map(Tensor::cast).collect();

    let mut tape = Tape::<T>::default();
    let vars: Vec<Var> = at_t.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = graph.eval(&mut tape, &vars)?;
    let r = tape.constant(projection(tape.shape(out), cfg.seed).cast());
    let prod = tape.mul(out, r)?;
    let loss = tape.sum(prod);
    tape.backward(loss)?;

    let base = probe(graph, &state, cfg.seed).pattern;
    let mut rng = Rng::stream(cfg.seed, 0x5a17);
    let mut reports = Vec::with_capacity(inputs.len());
    for (i, var) in vars.iter().enumerate() {
        let len = state[i].numel();
        let coords = sample_coords(len, cfg.max_coords.unwrap_or(len), &mut rng);
        let grad = tape.grad(*var);
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for &j in &coords {
            let orig = state[i].data()[j];
            let mut derivative = None;
            // A probe straddling a kink is retried with a smaller step;
            // f64 evaluation leaves ample headroom for that.
            for shrink in [1.0, 1e-1, 1e-2, 1e-3] {
                let h = cfg.eps * shrink;
                let mut at = |k: f64| {
                    state[i].data_mut()[j] = orig + k * h;
                    let p = probe(graph, &state, cfg.seed);
                    (p.pattern == base).then_some(p.value)
                };
                let points = [at(-2.0), at(-1.0), at(1.0), at(2.0)];
                state[i].data_mut()[j] = orig;
                if let [Some(m2), Some(m1), Some(p1), Some(p2)] = points {
                    derivative = Some((m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h));
                    break;
                }
            }
            if let Some(d) = derivative {
                numeric.push(d);
                analytic.push(grad.map_or(0.0, |g| g[j].f64()));
            }
        }
        reports.push(CheckReport {
            rel_error: relative_error(&analytic, &numeric),
            checked: analytic.len(),
            skipped: coords.len() - analytic.len(),
        });
    }
    Ok(reports)
}
