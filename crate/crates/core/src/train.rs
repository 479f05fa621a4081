//! Adversarial and classifier update steps and the epoch loop.
//!
//! Within a batch the order is fixed: discriminator, then generator, then
//! classifier. Generated images reach the classifier as constants, so the
//! classifier loss never moves the generator. Batchnorm running statistics of
//! a network are only updated by forward passes on the data that network is
//! fitted to in its own update: real images for the discriminator and
//! classifier, its own samples for the generator.

use ecgan_tensor::{NormMode, Rng, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::{epoch_batches, AugmentPolicy, Batch, Dataset};
use crate::error::{Error, Result};
use crate::nn::{balanced_labels, sample_latent, Checkpoint, Network, NetworkSpec, Role};
use crate::optim::{Adam, AdamConfig, DecayPolicy};

const TRACK: NormMode = NormMode::Train { track: true };
const BATCH_STATS: NormMode = NormMode::Train { track: false };

/// Independent random streams derived from the run seed.
mod stream {
    pub const INIT_G: u64 = 1;
    pub const INIT_D: u64 = 2;
    pub const INIT_C: u64 = 3;
    pub const INIT_SHARED: u64 = 4;
    pub const LATENT_D: u64 = 5;
    pub const LATENT_G: u64 = 6;
    pub const LATENT_C: u64 = 7;
    pub const AUGMENT: u64 = 8;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// External classifier trained on real and pseudo-labeled generated data.
    #[serde(rename = "ecgan")]
    EcGan,
    /// Classifier on real data only; no GAN.
    Baseline,
    /// Two-headed discriminator that also classifies.
    Shared,
    /// EC-GAN with a class-conditional generator and discriminator.
    #[serde(rename = "ecgan_conditional")]
    Conditional,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::EcGan => "ecgan",
            Variant::Baseline => "baseline",
            Variant::Shared => "shared",
            Variant::Conditional => "ecgan_conditional",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Weight of the generated-data term.
    pub lambda: f64,
    /// Pseudo-label confidence threshold; rows need `max softmax > threshold`,
    /// so 1 keeps nothing.
    pub threshold: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lr_c: f64,
    /// L2 coefficient for the classifier (and the shared discriminator).
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: AugmentPolicy,
    /// Shared baseline only: also fit the class head to pseudo-labeled
    /// generated images.
    pub shared_on_generated: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda: 0.1,
            threshold: 0.7,
            lr_g: 2e-4,
            lr_d: 2e-4,
            lr_c: 2e-4,
            weight_decay: 1e-3,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            augment: AugmentPolicy::default(),
            shared_on_generated: false,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must be in [0, 1]");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if [self.lr_g, self.lr_d, self.lr_c].iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return bad("learning rates must be positive");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be >= 0");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        Ok(())
    }

    fn decay(&self) -> DecayPolicy {
        DecayPolicy::new(self.weight_decay)
    }
}

/// Architecture knobs shared by all variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Models {
    pub gan_width: usize,
    pub classifier_width: usize,
    pub classifier_depth: usize,
}

impl Default for Models {
    fn default() -> Self {
        Models {
            gan_width: 16,
            classifier_width: 16,
            classifier_depth: 1,
        }
    }
}

/// Rows whose maximum softmax probability strictly exceeds `threshold`,
/// with their argmax labels (ties resolve to the lowest index).
pub fn pseudo_label(logits: &Tensor, threshold: f64) -> (Vec<usize>, Vec<usize>) {
    let k = logits.shape()[1];
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    if k == 0 {
        return (rows, labels);
    }
    for (i, row) in logits.data().chunks(k).enumerate() {
        let mut arg = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[arg] {
                arg = j;
            }
        }
        let max = f64::from(row[arg]);
        let denom: f64 = row.iter().map(|&v| (f64::from(v) - max).exp()).sum();
        if 1.0 / denom > threshold {
            rows.push(i);
            labels.push(arg);
        }
    }
    (rows, labels)
}

fn finite(step: u64, what: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged { step, what })
    }
}

fn update(net: &mut Network, tape: &Tape, bound: &crate::nn::Bound, opt: &mut Adam, decay: DecayPolicy, step: u64) -> Result<()> {
    let mut grads = net.gradients(tape, bound);
    if !grads.all_finite() {
        return Err(Error::Diverged { step, what: "gradient" });
    }
    decay.apply_to(net, &mut grads);
    opt.step(&mut net.slots(&grads))
}

/// Latent batch and, for conditional generators, its balanced labels.
fn latent(g: &Network, n: usize, rng: &mut Rng) -> Result<(Tensor, Option<Vec<usize>>)> {
    let spec = g.spec();
    if spec.conditional {
        let labels = balanced_labels(n, spec.num_classes, rng.below(spec.num_classes));
        let z = sample_latent(n, Some((&labels, spec.num_classes)), rng)?;
        Ok((z, Some(labels)))
    } else {
        Ok((sample_latent(n, None, rng)?, None))
    }
}

/// Generated batch as a constant on `tape` (the generator is not trained).
fn fake_batch(g: &mut Network, tape: &mut Tape, n: usize, rng: &mut Rng) -> Result<(Var, Option<Vec<usize>>)> {
    let (z, labels) = latent(g, n, rng)?;
    let gb = g.bind(tape, false);
    let z = tape.constant(z);
    let x = g.generate(tape, &gb, z, BATCH_STATS)?;
    Ok((tape.detach(x), labels))
}

/// Probability of "real" from either a plain or a shared discriminator.
fn validity(
    d: &mut Network,
    tape: &mut Tape,
    bound: &crate::nn::Bound,
    x: Var,
    labels: Option<&[usize]>,
    mode: NormMode,
) -> Result<(Var, Option<Var>)> {
    match d.role() {
        Role::SharedDiscriminator => {
            let (logits, prob) = d.shared(tape, bound, x, mode)?;
            Ok((prob, Some(logits)))
        }
        _ => Ok((d.discriminate(tape, bound, x, labels, mode)?, None)),
    }
}

/// `L_D = BCE(D(x), 1) + BCE(D(G(z)), 0)`; returns the loss.
pub fn discriminator_step(d: &mut Network, g: &mut Network, real: &Batch, opt: &mut Adam, rng: &mut Rng, step: u64) -> Result<f64> {
    let n = real.labels.len();
    let mut tape = Tape::new();
    let (fake, fake_labels) = fake_batch(g, &mut tape, n, rng)?;
    let db = d.bind(&mut tape, true);
    let x = tape.constant(real.images.clone());
    let real_labels = d.spec().conditional.then_some(real.labels.as_slice());
    let p_real = d.discriminate(&mut tape, &db, x, real_labels, TRACK)?;
    let p_fake = d.discriminate(&mut tape, &db, fake, fake_labels.as_deref(), BATCH_STATS)?;
    let l_real = tape.bce(p_real, &vec![1.0; n])?;
    let l_fake = tape.bce(p_fake, &vec![0.0; n])?;
    let loss = tape.add(l_real, l_fake)?;
    let value = finite(step, "discriminator loss", tape.value(loss).item().into())?;
    tape.backward(loss)?;
    update(d, &tape, &db, opt, DecayPolicy::none(), step)?;
    Ok(value)
}

/// `L_G = BCE(D(G(z)), 1)` against a plain or shared discriminator.
pub fn generator_step(g: &mut Network, d: &mut Network, n: usize, opt: &mut Adam, rng: &mut Rng, step: u64) -> Result<f64> {
    let mut tape = Tape::new();
    let (z, labels) = latent(g, n, rng)?;
    let gb = g.bind(&mut tape, true);
    let z = tape.constant(z);
    let fake = g.generate(&mut tape, &gb, z, TRACK)?;
    let db = d.bind(&mut tape, false);
    let (prob, _) = validity(d, &mut tape, &db, fake, labels.as_deref(), BATCH_STATS)?;
    let loss = tape.bce(prob, &vec![1.0; n])?;
    let value = finite(step, "generator loss", tape.value(loss).item().into())?;
    tape.backward(loss)?;
    update(g, &tape, &gb, opt, DecayPolicy::none(), step)?;
    Ok(value)
}

/// Classifier losses for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassifierStats {
    pub supervised: f64,
    /// Unweighted cross-entropy on the kept generated rows (0 if none).
    pub unsupervised: f64,
    pub keep_rate: f64,
}

/// `L_C = CE(C(x), y) + λ · CE(C(G(z))[keep], pseudo)`.
///
/// Pseudo-labels come from the same forward pass that is trained on, i.e.
/// from the classifier's parameters at the start of the step.
#[allow(clippy::too_many_arguments)]
pub fn classifier_step(
    c: &mut Network,
    g: Option<&mut Network>,
    real: &Batch,
    hp: &HyperParams,
    opt: &mut Adam,
    rng: &mut Rng,
    step: u64,
) -> Result<ClassifierStats> {
    let mut tape = Tape::new();
    let cb = c.bind(&mut tape, true);
    let x = tape.constant(real.images.clone());
    let logits = c.classify(&mut tape, &cb, x, TRACK)?;
    let sup = tape.cross_entropy(logits, &real.labels, None)?;
    let mut stats = ClassifierStats {
        supervised: finite(step, "classifier loss", tape.value(sup).item().into())?,
        ..Default::default()
    };
    let mut loss = sup;
    if let Some(g) = g {
        let n = real.labels.len();
        let (fake, _) = fake_batch(g, &mut tape, n, rng)?;
        let fake_logits = c.classify(&mut tape, &cb, fake, BATCH_STATS)?;
        let (rows, labels) = pseudo_label(tape.value(fake_logits), hp.threshold);
        let kept = tape.select_rows(fake_logits, &rows)?;
        let unsup = tape.cross_entropy(kept, &labels, None)?;
        stats.unsupervised = finite(step, "pseudo-label loss", tape.value(unsup).item().into())?;
        stats.keep_rate = rows.len() as f64 / n as f64;
        let weighted = tape.scale(unsup, hp.lambda);
        loss = tape.add(loss, weighted)?;
    }
    tape.backward(loss)?;
    update(c, &tape, &cb, opt, hp.decay(), step)?;
    Ok(stats)
}

/// Shared-discriminator losses for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SharedStats {
    pub adversarial: f64,
    pub classifier: ClassifierStats,
}

/// `λ·(BCE(D_d(G(z)),0) + BCE(D_d(x),1)) + CE(D_c(x), y)`, plus the
/// pseudo-labeled generated term on the class head when enabled.
pub fn shared_step(sd: &mut Network, g: &mut Network, real: &Batch, hp: &HyperParams, opt: &mut Adam, rng: &mut Rng, step: u64) -> Result<SharedStats> {
    let n = real.labels.len();
    let mut tape = Tape::new();
    let (fake, _) = fake_batch(g, &mut tape, n, rng)?;
    let sb = sd.bind(&mut tape, true);
    let x = tape.constant(real.images.clone());
    let (logits_real, p_real) = sd.shared(&mut tape, &sb, x, TRACK)?;
    let (logits_fake, p_fake) = sd.shared(&mut tape, &sb, fake, BATCH_STATS)?;
    let l_real = tape.bce(p_real, &vec![1.0; n])?;
    let l_fake = tape.bce(p_fake, &vec![0.0; n])?;
    let adv = tape.add(l_real, l_fake)?;
    let sup = tape.cross_entropy(logits_real, &real.labels, None)?;
    let mut stats = SharedStats {
        adversarial: finite(step, "discriminator loss", tape.value(adv).item().into())?,
        classifier: ClassifierStats {
            supervised: finite(step, "classifier loss", tape.value(sup).item().into())?,
            ..Default::default()
        },
    };
    let weighted = tape.scale(adv, hp.lambda);
    let mut loss = tape.add(weighted, sup)?;
    if hp.shared_on_generated {
        let (rows, labels) = pseudo_label(tape.value(logits_fake), hp.threshold);
        let kept = tape.select_rows(logits_fake, &rows)?;
        let unsup = tape.cross_entropy(kept, &labels, None)?;
        stats.classifier.unsupervised = finite(step, "pseudo-label loss", tape.value(unsup).item().into())?;
        stats.classifier.keep_rate = rows.len() as f64 / n as f64;
        let w = tape.scale(unsup, hp.lambda);
        loss = tape.add(loss, w)?;
    }
    tape.backward(loss)?;
    update(sd, &tape, &sb, opt, hp.decay(), step)?;
    Ok(stats)
}

/// Class logits of `images` in eval mode, in batches.
pub fn predict(net: &mut Network, images: &Tensor) -> Result<Vec<usize>> {
    let n = images.shape()[0];
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + 128).min(n);
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, false);
        let x = tape.constant(crate::data::normalize(&images.slice_rows(start, end)));
        let logits = match net.role() {
            Role::SharedDiscriminator => net.shared(&mut tape, &bound, x, NormMode::Eval)?.0,
            _ => net.classify(&mut tape, &bound, x, NormMode::Eval)?,
        };
        let (_, labels) = pseudo_label(tape.value(logits), -1.0);
        out.extend(labels);
        start = end;
    }
    Ok(out)
}

/// Fraction of `dataset` classified correctly.
pub fn evaluate(net: &mut Network, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(crate::DataError::Empty.into());
    }
    let pred = predict(net, &dataset.images)?;
    let correct = pred.iter().zip(&dataset.labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Samples `n` images in `[-1,1]` using batch statistics. Conditional
/// generators take `labels` (balanced if `None`).
pub fn sample_images(g: &mut Network, n: usize, labels: Option<&[usize]>, rng: &mut Rng) -> Result<Tensor> {
    let spec = g.spec().clone();
    let balanced;
    let labels = match (spec.conditional, labels) {
        (false, Some(_)) => return Err(Error::Contract("unconditional generator cannot take a class".into())),
        (false, None) => None,
        (true, Some(l)) => Some(l),
        (true, None) => {
            balanced = balanced_labels(n, spec.num_classes, 0);
            Some(balanced.as_slice())
        }
    };
    if let Some(l) = labels {
        if l.iter().any(|&k| k >= spec.num_classes) {
            return Err(Error::Contract("class out of range".into()));
        }
    }
    let z = sample_latent(n, labels.map(|l| (l, spec.num_classes)), rng)?;
    let mut tape = Tape::new();
    let bound = g.bind(&mut tape, false);
    let z = tape.constant(z);
    let x = g.generate(&mut tape, &bound, z, BATCH_STATS)?;
    Ok(tape.value(x).clone())
}

/// Per-epoch means over steps. GAN losses are absent for the baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_d: Option<f64>,
    pub loss_g: Option<f64>,
    pub loss_c_sup: f64,
    pub loss_c_unsup: Option<f64>,
    pub keep_rate: Option<f64>,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

/// Hook called after every epoch, e.g. to write checkpoints or metrics.
pub trait Observer {
    fn on_epoch(&mut self, _record: &EpochRecord, _session: &Session) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// Networks, optimizers and random streams of one training run.
pub struct Session {
    pub variant: Variant,
    pub hp: HyperParams,
    pub generator: Option<Network>,
    pub discriminator: Option<Network>,
    pub classifier: Option<Network>,
    pub shared: Option<Network>,
    pub opt_g: Option<Adam>,
    pub opt_d: Option<Adam>,
    pub opt_c: Option<Adam>,
    pub opt_shared: Option<Adam>,
    step: u64,
    latent_d: Rng,
    latent_g: Rng,
    latent_c: Rng,
    augment: Rng,
}

impl Session {
    pub fn new(variant: Variant, hp: &HyperParams, models: &Models, image_size: usize, channels: usize, num_classes: usize) -> Result<Self> {
        hp.validate()?;
        let seed = hp.seed;
        let gan = |role| NetworkSpec::new(role, image_size, channels, num_classes).with_width(models.gan_width);
        let conditional = variant == Variant::Conditional;
        let has_gan = variant != Variant::Baseline;
        let generator = has_gan
            .then(|| Network::build(&gan(Role::Generator).with_conditional(conditional), &mut Rng::stream(seed, stream::INIT_G)))
            .transpose()?;
        let discriminator = matches!(variant, Variant::EcGan | Variant::Conditional)
            .then(|| Network::build(&gan(Role::Discriminator).with_conditional(conditional), &mut Rng::stream(seed, stream::INIT_D)))
            .transpose()?;
        let shared = (variant == Variant::Shared)
            .then(|| Network::build(&gan(Role::SharedDiscriminator), &mut Rng::stream(seed, stream::INIT_SHARED)))
            .transpose()?;
        let classifier = (variant != Variant::Shared)
            .then(|| {
                let spec = NetworkSpec::new(Role::Classifier, image_size, channels, num_classes)
                    .with_width(models.classifier_width)
                    .with_depth(models.classifier_depth);
                Network::build(&spec, &mut Rng::stream(seed, stream::INIT_C))
            })
            .transpose()?;
        Ok(Session {
            variant,
            hp: hp.clone(),
            opt_g: generator.as_ref().map(|_| Adam::new(AdamConfig::gan(hp.lr_g))),
            opt_d: discriminator.as_ref().map(|_| Adam::new(AdamConfig::gan(hp.lr_d))),
            opt_c: classifier.as_ref().map(|_| Adam::new(AdamConfig::classifier(hp.lr_c))),
            opt_shared: shared.as_ref().map(|_| Adam::new(AdamConfig::gan(hp.lr_d))),
            generator,
            discriminator,
            classifier,
            shared,
            step: 0,
            latent_d: Rng::stream(seed, stream::LATENT_D),
            latent_g: Rng::stream(seed, stream::LATENT_G),
            latent_c: Rng::stream(seed, stream::LATENT_C),
            augment: Rng::stream(seed, stream::AUGMENT),
        })
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// The network whose class predictions are evaluated.
    pub fn evaluated(&mut self) -> &mut Network {
        self.classifier.as_mut().or(self.shared.as_mut()).expect("every variant has a classifier")
    }

    /// One step of every network on `batch`.
    pub fn step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let step = self.step;
        let n = batch.labels.len();
        let mut rec = StepRecord::default();
        match self.variant {
            Variant::Baseline => {
                let c = self.classifier.as_mut().unwrap();
                let stats = classifier_step(c, None, batch, &self.hp, self.opt_c.as_mut().unwrap(), &mut self.latent_c, step)?;
                rec.classifier = stats;
            }
            Variant::EcGan | Variant::Conditional => {
                let g = self.generator.as_mut().unwrap();
                let d = self.discriminator.as_mut().unwrap();
                rec.loss_d = Some(discriminator_step(d, g, batch, self.opt_d.as_mut().unwrap(), &mut self.latent_d, step)?);
                rec.loss_g = Some(generator_step(g, d, n, self.opt_g.as_mut().unwrap(), &mut self.latent_g, step)?);
                let c = self.classifier.as_mut().unwrap();
                rec.classifier = classifier_step(c, Some(g), batch, &self.hp, self.opt_c.as_mut().unwrap(), &mut self.latent_c, step)?;
            }
            Variant::Shared => {
                let g = self.generator.as_mut().unwrap();
                let sd = self.shared.as_mut().unwrap();
                let s = shared_step(sd, g, batch, &self.hp, self.opt_shared.as_mut().unwrap(), &mut self.latent_d, step)?;
                rec.loss_d = Some(s.adversarial);
                rec.classifier = s.classifier;
                rec.loss_g = Some(generator_step(g, sd, n, self.opt_g.as_mut().unwrap(), &mut self.latent_g, step)?);
            }
        }
        self.step += 1;
        Ok(rec)
    }

    /// Runs one epoch over `data` and returns step-averaged losses.
    pub fn epoch(&mut self, data: &Dataset, epoch: usize) -> Result<EpochRecord> {
        let batches = epoch_batches(data.len(), self.hp.batch_size, self.hp.seed, epoch);
        let mut sums = [0.0f64; 5];
        for idx in &batches {
            let policy = self.hp.augment;
            let batch = data.batch(idx, Some((&policy, &mut self.augment)));
            let r = self.step(&batch)?;
            for (s, v) in sums.iter_mut().zip([
                r.loss_d.unwrap_or(0.0),
                r.loss_g.unwrap_or(0.0),
                r.classifier.supervised,
                r.classifier.unsupervised,
                r.classifier.keep_rate,
            ]) {
                *s += v;
            }
        }
        let m = |i: usize| sums[i] / batches.len() as f64;
        let gan = self.variant != Variant::Baseline;
        let pseudo = matches!(self.variant, Variant::EcGan | Variant::Conditional)
            || (self.variant == Variant::Shared && self.hp.shared_on_generated);
        let train_acc = evaluate(self.evaluated(), data)?;
        Ok(EpochRecord {
            epoch,
            loss_d: gan.then(|| m(0)),
            loss_g: gan.then(|| m(1)),
            loss_c_sup: m(2),
            loss_c_unsup: pseudo.then(|| m(3)),
            keep_rate: pseudo.then(|| m(4)),
            train_acc,
            test_acc: None,
        })
    }

    /// Checkpoints of every network with its optimizer state, keyed by role.
    pub fn checkpoints(&self) -> Vec<(Role, Checkpoint)> {
        [
            (&self.generator, &self.opt_g),
            (&self.discriminator, &self.opt_d),
            (&self.classifier, &self.opt_c),
            (&self.shared, &self.opt_shared),
        ]
        .into_iter()
        .filter_map(|(net, opt)| net.as_ref().map(|n| (n.role(), Checkpoint::capture(n, opt.as_ref()))))
        .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepRecord {
    pub loss_d: Option<f64>,
    pub loss_g: Option<f64>,
    pub classifier: ClassifierStats,
}

pub struct Outcome {
    pub session: Session,
    pub history: Vec<EpochRecord>,
}

impl Outcome {
    pub fn final_test_acc(&self) -> Option<f64> {
        self.history.last().and_then(|r| r.test_acc)
    }
}

/// Trains `variant` for `hp.epochs` epochs, evaluating on `test` after each.
pub fn train(
    variant: Variant,
    data: &Dataset,
    test: Option<&Dataset>,
    hp: &HyperParams,
    models: &Models,
    observer: &mut dyn Observer,
) -> Result<Outcome> {
    if data.is_empty() {
        return Err(crate::DataError::Empty.into());
    }
    let mut session = Session::new(variant, hp, models, data.image_size(), data.channels(), data.num_classes)?;
    let mut history = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        let mut rec = session.epoch(data, epoch)?;
        if let Some(t) = test {
            rec.test_acc = Some(evaluate(session.evaluated(), t)?);
        }
        observer.on_epoch(&rec, &session)?;
        history.push(rec);
    }
    Ok(Outcome { session, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_label_threshold_is_strict_and_ties_go_low() {
        let l = Tensor::new(vec![3, 2], vec![0.0, 0.0, 3.0, 0.0, 0.0, 3.0]).unwrap();
        let (rows, labels) = pseudo_label(&l, 0.5);
        assert_eq!(rows, [1, 2]);
        assert_eq!(labels, [0, 1]);
        let (rows, labels) = pseudo_label(&l, -1.0);
        assert_eq!(rows, [0, 1, 2]);
        assert_eq!(labels[0], 0);
    }
}
