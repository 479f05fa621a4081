//! Network specifications, parameter storage and forward passes for the four
//! roles: generator, discriminator, residual classifier and the
//! shared-discriminator baseline.

mod checkpoint;

use std::fmt;

use ecgan_tensor::{Activation, NormMode, Real, Rng, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Slot;

pub use checkpoint::{Checkpoint, Header, Record, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Latent dimensionality fed to every generator.
pub const LATENT_DIM: usize = 100;
/// Batchnorm running-average momentum.
pub const BN_MOMENTUM: f64 = 0.1;
/// Batchnorm variance epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Standard deviation of the adversarial weight init.
pub const GAN_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Discriminator,
    Classifier,
    SharedDiscriminator,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Role::Generator => "generator",
            Role::Discriminator => "discriminator",
            Role::Classifier => "classifier",
            Role::SharedDiscriminator => "shared_discriminator",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: Role,
    pub image_size: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub base_width: usize,
    /// Generator reads the class from the last latent coordinate;
    /// discriminator gets a constant label channel after its first block.
    pub conditional: bool,
    /// Residual blocks per classifier stage.
    pub depth: usize,
}

impl NetworkSpec {
    /// Desk defaults: base width 16, one block per stage, unconditional.
    pub fn new(role: Role, image_size: usize, channels: usize, num_classes: usize) -> Self {
        NetworkSpec {
            role,
            image_size,
            channels,
            num_classes,
            base_width: 16,
            conditional: false,
            depth: 1,
        }
    }

    pub fn with_width(mut self, base_width: usize) -> Self {
        self.base_width = base_width;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_conditional(mut self, conditional: bool) -> Self {
        self.conditional = conditional;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Spec(msg));
        if self.image_size < 16 || !self.image_size.is_power_of_two() {
            return bad(format!("image_size {} must be a power of two >= 16", self.image_size));
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("channels {} must be 1 or 3", self.channels));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes {} must be >= 2", self.num_classes));
        }
        if self.base_width < 8 {
            return bad(format!("base_width {} must be >= 8", self.base_width));
        }
        if self.depth < 1 {
            return bad("depth must be >= 1".into());
        }
        if self.conditional && !matches!(self.role, Role::Generator | Role::Discriminator) {
            return bad(format!("{} cannot be conditional", self.role));
        }
        Ok(())
    }

    /// Number of stride-2 stages between 4×4 and the image size.
    fn doublings(&self) -> usize {
        (self.image_size / 4).trailing_zeros() as usize
    }
}

/// Maps class `k` of `K` onto `[-1, 1]`: `2k/(K−1) − 1`.
pub fn encode_label(k: usize, num_classes: usize) -> f64 {
    2.0 * k as f64 / (num_classes - 1) as f64 - 1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug)]
pub struct Param<T: Real = f32> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Debug)]
struct Residual {
    conv1: usize,
    bn1: Norm,
    conv2: usize,
    bn2: Norm,
    stride: usize,
    shortcut: Option<(usize, Norm)>,
}

#[derive(Clone, Debug)]
enum Layer {
    /// `[N,100] → [N,100,1,1]`.
    Latent,
    ConvT { w: usize, stride: usize, pad: usize },
    Conv { w: usize, bias: Option<usize>, stride: usize, pad: usize },
    Norm(Norm),
    Act(Activation),
    LabelChannel,
    Residual(Box<Residual>),
    Pool,
    Linear { w: usize, bias: usize },
    /// `[N,C,1,1] → [N,C]`.
    Flatten,
}

/// Parameter handles for one tape: a leaf per trainable parameter.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, index: usize) -> Option<Var> {
        self.vars.get(index).copied().flatten()
    }

    fn get(&self, index: usize) -> Var {
        self.vars[index].expect("running statistics are never bound")
    }
}

/// Gradients aligned with [`Network::params`]; `None` for running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T: Real = f32> {
    pub grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug)]
pub struct Network<T: Real = f32> {
    spec: NetworkSpec,
    params: Vec<Param<T>>,
    trunk: Vec<Layer>,
    heads: Vec<Vec<Layer>>,
}

struct Builder<'r, T: Real> {
    params: Vec<Param<T>>,
    rng: &'r mut Rng,
    he_init: bool,
}

impl<T: Real> Builder<'_, T> {
    fn push(&mut self, name: String, kind: ParamKind, tensor: Tensor<T>) -> usize {
        self.params.push(Param { name, kind, tensor });
        self.params.len() - 1
    }

    fn normal(&mut self, shape: &[usize], mean: f64, std: f64) -> Tensor<T> {
        Tensor::randn_scaled(shape, mean, std, self.rng).expect("builder shapes are non-empty")
    }

    /// Conv weight `[cout, cin, k, k]`.
    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize) -> usize {
        let std = if self.he_init {
            (2.0 / (cin * k * k) as f64).sqrt()
        } else {
            GAN_INIT_STD
        };
        let t = self.normal(&[cout, cin, k, k], 0.0, std);
        self.push(format!("{name}.weight"), ParamKind::Weight, t)
    }

    /// Conv-transpose weight `[cin, cout, k, k]`.
    fn conv_t(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> usize {
        let t = self.normal(&[cin, cout, k, k], 0.0, GAN_INIT_STD);
        self.push(format!("{name}.weight"), ParamKind::Weight, t)
    }

    fn bias(&mut self, name: &str, n: usize) -> usize {
        self.push(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(&[n]))
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let gamma = if self.he_init {
            Tensor::ones(&[c])
        } else {
            self.normal(&[c], 1.0, GAN_INIT_STD)
        };
        Norm {
            gamma: self.push(format!("{name}.gamma"), ParamKind::NormScale, gamma),
            beta: self.push(format!("{name}.beta"), ParamKind::NormShift, Tensor::zeros(&[c])),
            mean: self.push(format!("{name}.running_mean"), ParamKind::RunningMean, Tensor::zeros(&[c])),
            var: self.push(format!("{name}.running_var"), ParamKind::RunningVar, Tensor::ones(&[c])),
        }
    }
}

impl<T: Real> Network<T> {
    /// Builds and initialises a network. Adversarial roles draw weights from
    /// N(0, 0.02) and norm scales from N(1, 0.02); the classifier uses
    /// fan-in scaled normals with unit norm scales.
    pub fn build(spec: &NetworkSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            rng,
            he_init: spec.role == Role::Classifier,
        };
        let (trunk, heads) = match spec.role {
            Role::Generator => (generator_layers(spec, &mut b), Vec::new()),
            Role::Discriminator => {
                let trunk = disc_trunk(spec, &mut b, "d");
                let head = disc_head(spec, &mut b, "d.out");
                (trunk, vec![head])
            }
            Role::SharedDiscriminator => {
                let trunk = disc_trunk(spec, &mut b, "sd");
                let validity = disc_head(spec, &mut b, "sd.validity");
                let cin = spec.base_width << (spec.doublings() - 1);
                let w = b.conv("sd.class", spec.num_classes, cin, 4);
                let bias = b.bias("sd.class", spec.num_classes);
                let class = vec![
                    Layer::Conv { w, bias: Some(bias), stride: 1, pad: 0 },
                    Layer::Flatten,
                ];
                (trunk, vec![validity, class])
            }
            Role::Classifier => classifier_layers(spec, &mut b),
        };
        Ok(Network {
            spec: spec.clone(),
            params: b.params,
            trunk,
            heads,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn role(&self) -> Role {
        self.spec.role
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Count of trainable scalars (running statistics excluded).
    pub fn num_parameters(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind.trainable())
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// Same architecture and values at another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    tensor: p.tensor.cast(),
                })
                .collect(),
            trunk: self.trunk.clone(),
            heads: self.heads.clone(),
        }
    }

    /// Places every trainable parameter on the tape. With `trainable == false`
    /// the leaves are constants: gradients still flow through the network to
    /// its input but no parameter gradient is recorded.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| p.kind.trainable().then(|| tape.leaf(p.tensor.clone(), trainable)))
            .collect();
        Bound { vars }
    }

    /// Trainable tensors in binding order.
    pub fn trainable(&self) -> Vec<&Tensor<T>> {
        self.params.iter().filter(|p| p.kind.trainable()).map(|p| &p.tensor).collect()
    }

    /// Binds caller-created leaves, one per [`Network::trainable`] tensor.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<Bound> {
        let want = self.params.iter().filter(|p| p.kind.trainable()).count();
        if vars.len() != want {
            return Err(Error::Contract(format!("{} vars for {want} trainable tensors", vars.len())));
        }
        let mut it = vars.iter().copied();
        let vars = self.params.iter().map(|p| if p.kind.trainable() { it.next() } else { None }).collect();
        Ok(Bound { vars })
    }

    pub fn gradients(&self, tape: &Tape<T>, bound: &Bound) -> Gradients<T> {
        let grads = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                bound.var(i).map(|v| {
                    tape.grad(v)
                        .map(<[T]>::to_vec)
                        .unwrap_or_else(|| vec![T::zero(); p.tensor.numel()])
                })
            })
            .collect();
        Gradients { grads }
    }

    /// Pairs each trainable parameter with its gradient for an optimizer.
    pub fn slots<'a>(&'a mut self, grads: &'a Gradients<T>) -> Vec<Slot<'a, T>> {
        self.params
            .iter_mut()
            .zip(&grads.grads)
            .filter(|(p, _)| p.kind.trainable())
            .map(|(p, g)| Slot {
                name: &p.name,
                value: p.tensor.data_mut(),
                grad: g.as_deref(),
            })
            .collect()
    }

    fn expect_role(&self, role: Role) -> Result<()> {
        if self.spec.role == role {
            Ok(())
        } else {
            Err(Error::RoleMismatch {
                expected: role.to_string(),
                found: self.spec.role.to_string(),
            })
        }
    }

    /// `z: [N,100] → [N,C,S,S]` in `[-1,1]`.
    pub fn generate(&mut self, tape: &mut Tape<T>, bound: &Bound, z: Var, mode: NormMode) -> Result<Var> {
        self.expect_role(Role::Generator)?;
        let shape = tape.shape(z);
        if shape.len() != 2 || shape[1] != LATENT_DIM {
            return Err(Error::Contract(format!("latent must be [N,{LATENT_DIM}], got {shape:?}")));
        }
        self.run_trunk(tape, bound, z, None, mode)
    }

    /// Probability of "real", `[N,1]`. Conditional discriminators need labels.
    pub fn discriminate(
        &mut self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        labels: Option<&[usize]>,
        mode: NormMode,
    ) -> Result<Var> {
        self.expect_role(Role::Discriminator)?;
        let h = self.run_trunk(tape, bound, x, labels, mode)?;
        self.run_head(0, tape, bound, h, mode)
    }

    /// Class logits `[N,K]`.
    pub fn classify(&mut self, tape: &mut Tape<T>, bound: &Bound, x: Var, mode: NormMode) -> Result<Var> {
        self.expect_role(Role::Classifier)?;
        self.run_trunk(tape, bound, x, None, mode)
    }

    /// Shared trunk features, to be fed to [`Network::shared_heads`].
    pub fn shared_trunk(&mut self, tape: &mut Tape<T>, bound: &Bound, x: Var, mode: NormMode) -> Result<Var> {
        self.expect_role(Role::SharedDiscriminator)?;
        self.run_trunk(tape, bound, x, None, mode)
    }

    /// `(class logits [N,K], validity probability [N,1])` from trunk features.
    pub fn shared_heads(&mut self, tape: &mut Tape<T>, bound: &Bound, h: Var, mode: NormMode) -> Result<(Var, Var)> {
        self.expect_role(Role::SharedDiscriminator)?;
        let prob = self.run_head(0, tape, bound, h, mode)?;
        let logits = self.run_head(1, tape, bound, h, mode)?;
        Ok((logits, prob))
    }

    /// Trunk and both heads in one call.
    pub fn shared(&mut self, tape: &mut Tape<T>, bound: &Bound, x: Var, mode: NormMode) -> Result<(Var, Var)> {
        let h = self.shared_trunk(tape, bound, x, mode)?;
        self.shared_heads(tape, bound, h, mode)
    }

    fn check_input(&self, tape: &Tape<T>, x: Var) -> Result<()> {
        if self.spec.role == Role::Generator {
            return Ok(());
        }
        let s = &self.spec;
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1..] != [s.channels, s.image_size, s.image_size] {
            return Err(Error::Contract(format!(
                "{} expects [N,{},{},{}], got {shape:?}",
                s.role, s.channels, s.image_size, s.image_size
            )));
        }
        Ok(())
    }

    fn run_trunk(
        &mut self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        labels: Option<&[usize]>,
        mode: NormMode,
    ) -> Result<Var> {
        self.check_input(tape, x)?;
        if self.spec.conditional && self.spec.role == Role::Discriminator {
            let n = tape.shape(x)[0];
            match labels {
                None => return Err(Error::Contract("conditional discriminator needs labels".into())),
                Some(l) if l.len() != n => {
                    return Err(Error::Contract(format!("{} labels for a batch of {n}", l.len())))
                }
                Some(l) if l.iter().any(|&k| k >= self.spec.num_classes) => {
                    return Err(Error::Contract("label out of range".into()))
                }
                _ => {}
            }
        }
        let ctx = Ctx {
            labels,
            mode,
            num_classes: self.spec.num_classes,
        };
        run(&self.trunk, &mut self.params, tape, bound, x, &ctx)
    }

    fn run_head(&mut self, index: usize, tape: &mut Tape<T>, bound: &Bound, h: Var, mode: NormMode) -> Result<Var> {
        let ctx = Ctx {
            labels: None,
            mode,
            num_classes: self.spec.num_classes,
        };
        run(&self.heads[index], &mut self.params, tape, bound, h, &ctx)
    }
}

fn generator_layers<T: Real>(spec: &NetworkSpec, b: &mut Builder<T>) -> Vec<Layer> {
    let s = spec.doublings();
    let mut width = spec.base_width << (s - 1);
    let mut layers = vec![Layer::Latent];
    let w = b.conv_t("g.project", LATENT_DIM, width, 4);
    let bn = b.norm("g.project.bn", width);
    layers.extend([Layer::ConvT { w, stride: 1, pad: 0 }, Layer::Norm(bn), Layer::Act(Activation::Relu)]);
    for i in 1..s {
        let name = format!("g.up{i}");
        let w = b.conv_t(&name, width, width / 2, 4);
        let bn = b.norm(&format!("{name}.bn"), width / 2);
        layers.extend([Layer::ConvT { w, stride: 2, pad: 1 }, Layer::Norm(bn), Layer::Act(Activation::Relu)]);
        width /= 2;
    }
    let w = b.conv_t("g.out", width, spec.channels, 4);
    layers.extend([Layer::ConvT { w, stride: 2, pad: 1 }, Layer::Act(Activation::Tanh)]);
    layers
}

fn disc_trunk<T: Real>(spec: &NetworkSpec, b: &mut Builder<T>, prefix: &str) -> Vec<Layer> {
    let mut layers = Vec::new();
    let w = b.conv(&format!("{prefix}.down0"), spec.base_width, spec.channels, 4);
    layers.extend([Layer::Conv { w, bias: None, stride: 2, pad: 1 }, Layer::Act(Activation::LEAKY)]);
    if spec.conditional {
        layers.push(Layer::LabelChannel);
    }
    for i in 1..spec.doublings() {
        let cin = (spec.base_width << (i - 1)) + usize::from(i == 1 && spec.conditional);
        let cout = spec.base_width << i;
        let name = format!("{prefix}.down{i}");
        let w = b.conv(&name, cout, cin, 4);
        let bn = b.norm(&format!("{name}.bn"), cout);
        layers.extend([
            Layer::Conv { w, bias: None, stride: 2, pad: 1 },
            Layer::Norm(bn),
            Layer::Act(Activation::LEAKY),
        ]);
    }
    layers
}

fn disc_head<T: Real>(spec: &NetworkSpec, b: &mut Builder<T>, name: &str) -> Vec<Layer> {
    let cin = spec.base_width << (spec.doublings() - 1);
    let w = b.conv(name, 1, cin, 4);
    vec![
        Layer::Conv { w, bias: None, stride: 1, pad: 0 },
        Layer::Flatten,
        Layer::Act(Activation::Sigmoid),
    ]
}

fn classifier_layers<T: Real>(spec: &NetworkSpec, b: &mut Builder<T>) -> (Vec<Layer>, Vec<Vec<Layer>>) {
    let base = spec.base_width;
    let w = b.conv("c.stem", base, spec.channels, 3);
    let bn = b.norm("c.stem.bn", base);
    let mut layers = vec![
        Layer::Conv { w, bias: None, stride: 1, pad: 1 },
        Layer::Norm(bn),
        Layer::Act(Activation::Relu),
    ];
    let mut cin = base;
    for stage in 0..4 {
        let cout = base << stage;
        for block in 0..spec.depth {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let name = format!("c.stage{}.block{}", stage + 1, block + 1);
            let conv1 = b.conv(&format!("{name}.conv1"), cout, cin, 3);
            let bn1 = b.norm(&format!("{name}.bn1"), cout);
            let conv2 = b.conv(&format!("{name}.conv2"), cout, cout, 3);
            let bn2 = b.norm(&format!("{name}.bn2"), cout);
            let shortcut = (stride != 1 || cin != cout).then(|| {
                let w = b.conv(&format!("{name}.shortcut"), cout, cin, 1);
                (w, b.norm(&format!("{name}.shortcut.bn"), cout))
            });
            layers.push(Layer::Residual(Box::new(Residual {
                conv1,
                bn1,
                conv2,
                bn2,
                stride,
                shortcut,
            })));
            cin = cout;
        }
    }
    let fan_in = cin;
    let t = b.normal(&[fan_in, spec.num_classes], 0.0, (1.0 / fan_in as f64).sqrt());
    let w = b.push("c.head.weight".into(), ParamKind::Weight, t);
    let bias = b.bias("c.head", spec.num_classes);
    layers.extend([Layer::Pool, Layer::Linear { w, bias }]);
    (layers, Vec::new())
}

struct Ctx<'a> {
    labels: Option<&'a [usize]>,
    mode: NormMode,
    num_classes: usize,
}

fn norm<T: Real>(params: &mut [Param<T>], tape: &mut Tape<T>, bound: &Bound, x: Var, n: &Norm, mode: NormMode) -> Result<Var> {
    debug_assert!(n.mean < n.var);
    let (lo, hi) = params.split_at_mut(n.var);
    let mean = &mut lo[n.mean].tensor;
    let var = &mut hi[0].tensor;
    Ok(tape.batch_norm(x, bound.get(n.gamma), bound.get(n.beta), mean, var, mode, BN_MOMENTUM, BN_EPS)?)
}

fn run<T: Real>(
    layers: &[Layer],
    params: &mut [Param<T>],
    tape: &mut Tape<T>,
    bound: &Bound,
    mut x: Var,
    ctx: &Ctx,
) -> Result<Var> {
    for layer in layers {
        x = match layer {
            Layer::Latent => {
                let n = tape.shape(x)[0];
                tape.reshape(x, &[n, LATENT_DIM, 1, 1])?
            }
            Layer::ConvT { w, stride, pad } => tape.conv_transpose2d(x, bound.get(*w), None, *stride, *pad)?,
            Layer::Conv { w, bias, stride, pad } => {
                tape.conv2d(x, bound.get(*w), bias.map(|b| bound.get(b)), *stride, *pad)?
            }
            Layer::Norm(n) => norm(params, tape, bound, x, n, ctx.mode)?,
            Layer::Act(a) => tape.activation(x, *a),
            Layer::LabelChannel => {
                let labels = ctx.labels.expect("checked in run_trunk");
                let s = tape.shape(x).to_vec();
                let plane = s[2] * s[3];
                let mut data = Vec::with_capacity(s[0] * plane);
                for &k in labels {
                    data.extend(std::iter::repeat_n(T::of(encode_label(k, ctx.num_classes)), plane));
                }
                let channel = tape.constant(Tensor::new(vec![s[0], 1, s[2], s[3]], data)?);
                tape.concat_channels(x, channel)?
            }
            Layer::Residual(r) => {
                let mut h = tape.conv2d(x, bound.get(r.conv1), None, r.stride, 1)?;
                h = norm(params, tape, bound, h, &r.bn1, ctx.mode)?;
                h = tape.relu(h);
                h = tape.conv2d(h, bound.get(r.conv2), None, 1, 1)?;
                h = norm(params, tape, bound, h, &r.bn2, ctx.mode)?;
                let skip = match &r.shortcut {
                    Some((w, bn)) => {
                        let s = tape.conv2d(x, bound.get(*w), None, r.stride, 0)?;
                        norm(params, tape, bound, s, bn, ctx.mode)?
                    }
                    None => x,
                };
                let sum = tape.add(h, skip)?;
                tape.relu(sum)
            }
            Layer::Pool => tape.global_avg_pool(x)?,
            Layer::Linear { w, bias } => {
                let y = tape.matmul(x, bound.get(*w))?;
                tape.add_bias(y, bound.get(*bias))?
            }
            Layer::Flatten => {
                let s = tape.shape(x).to_vec();
                tape.reshape(x, &[s[0], s[1] * s[2] * s[3]])?
            }
        };
    }
    Ok(x)
}

/// Draws `n` latent vectors from N(0,1). With `labels`, the last coordinate
/// of row i is replaced by the encoded class `labels[i]`.
pub fn sample_latent<T: Real>(n: usize, labels: Option<(&[usize], usize)>, rng: &mut Rng) -> Result<Tensor<T>> {
    let data: Vec<T> = (0..n * LATENT_DIM).map(|_| T::of(rng.normal())).collect();
    let mut z = Tensor::new(vec![n, LATENT_DIM], data)?;
    if let Some((labels, k)) = labels {
        if labels.len() != n {
            return Err(Error::Contract(format!("{} labels for {n} latents", labels.len())));
        }
        for (row, &label) in z.data_mut().chunks_mut(LATENT_DIM).zip(labels) {
            row[LATENT_DIM - 1] = T::of(encode_label(label, k));
        }
    }
    Ok(z)
}

/// Balanced class assignment: row i gets class `(offset + i) mod K`.
pub fn balanced_labels(n: usize, num_classes: usize, offset: usize) -> Vec<usize> {
    (0..n).map(|i| (offset + i) % num_classes).collect()
}
