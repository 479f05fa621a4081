//! Experiment configs and the `train`, `sweep`, `generate` and `eval`
//! commands behind the binary.

use std::fs::File;
use std::path::{Path, PathBuf};

use ecgan_tensor::{Rng, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{self, load_idx, load_image_dir, subsample, synth_shapes, Dataset, Image};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Role};
use crate::train::{evaluate, sample_images, train, EpochRecord, HyperParams, Models, Observer, Session, Variant};

/// Environment variable overriding the config seed (a CLI flag wins over it).
pub const SEED_ENV: &str = "ECGAN_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Procedural shapes; the test split uses `seed + 1`.
    Synth {
        n_per_class: usize,
        test_per_class: usize,
        classes: usize,
        size: usize,
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    /// IDX files, resized to `size`.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
        size: usize,
    },
    /// Directories of PGM/PPM files listed in a `labels.csv`.
    Dir {
        root: PathBuf,
        labels_csv: PathBuf,
        test_root: Option<PathBuf>,
        test_labels_csv: Option<PathBuf>,
        size: usize,
        channels: usize,
    },
}

impl DataSource {
    /// Training split and optional test split.
    pub fn load(&self) -> Result<(Dataset, Option<Dataset>)> {
        match self {
            DataSource::Synth { n_per_class, test_per_class, classes, size, noise, seed } => {
                let train = synth_shapes(*n_per_class, *classes, *size, *noise, *seed)?;
                let test = (*test_per_class > 0)
                    .then(|| synth_shapes(*test_per_class, *classes, *size, *noise, seed.wrapping_add(1)))
                    .transpose()?;
                Ok((train, test))
            }
            DataSource::Idx { images, labels, test_images, test_labels, size } => {
                let train = load_idx(images, labels)?.resized(*size, 1)?;
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some(load_idx(i, l)?.resized(*size, 1)?),
                    (None, None) => None,
                    _ => return Err(Error::Config("test_images and test_labels go together".into())),
                };
                Ok((train, test))
            }
            DataSource::Dir { root, labels_csv, test_root, test_labels_csv, size, channels } => {
                let train = load_image_dir(root, labels_csv, *size, *channels)?;
                let test = match (test_root, test_labels_csv) {
                    (Some(r), Some(l)) => Some(load_image_dir(r, l, *size, *channels)?),
                    (None, None) => None,
                    _ => return Err(Error::Config("test_root and test_labels_csv go together".into())),
                };
                Ok((train, test))
            }
        }
    }
}

fn default_percent() -> Vec<f64> {
    vec![100.0]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_true() -> bool {
    true
}

fn default_sweep_variants() -> Vec<Variant> {
    vec![Variant::Baseline, Variant::EcGan]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub hyper: HyperParams,
    #[serde(default)]
    pub models: Models,
    #[serde(default = "default_percent")]
    pub dataset_percent: Vec<f64>,
    /// Values for the lambda sweep axis; `train` uses `hyper.lambda`.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    /// Turns the crop/rotation policy in `hyper.augment` on or off.
    #[serde(default)]
    pub augment: bool,
    /// Turns `hyper.weight_decay` on or off.
    #[serde(default = "default_true")]
    pub weight_decay: bool,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_sweep_variants")]
    pub sweep_variants: Vec<Variant>,
    pub output_dir: PathBuf,
    /// Write final checkpoints for every run.
    #[serde(default = "default_true")]
    pub checkpoints: bool,
}

fn default_variant() -> Variant {
    Variant::EcGan
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.seeds.is_empty() || self.dataset_percent.is_empty() {
            return Err(Error::Config("seeds and dataset_percent must be non-empty".into()));
        }
        if let Some(p) = self.dataset_percent.iter().find(|&&p| !(p > 0.0 && p <= 100.0)) {
            return Err(Error::Config(format!("dataset_percent {p} outside (0, 100]")));
        }
        if self.lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("lambdas must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Applies seed precedence (flag over environment over config).
    pub fn resolve_seeds(&mut self, flag: Option<u64>) -> Result<()> {
        if let Some(seed) = flag {
            self.seeds = vec![seed];
        } else if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
            self.seeds = vec![seed];
        }
        Ok(())
    }

    /// Hyperparameters of one cell with the toggles applied.
    pub fn cell_hyper(&self, seed: u64, lambda: f64, augment: bool, decay: bool) -> HyperParams {
        let mut hp = self.hyper.clone();
        hp.seed = seed;
        hp.lambda = lambda;
        hp.augment.enabled = augment;
        if !decay {
            hp.weight_decay = 0.0;
        }
        hp
    }
}

/// One line of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub variant: String,
    pub percent: f64,
    pub lambda: f64,
    pub seed: u64,
    pub epoch: usize,
    pub loss_d: Option<String>,
    pub loss_g: Option<String>,
    pub loss_c_sup: String,
    pub loss_c_unsup: Option<String>,
    pub keep_rate: Option<String>,
    pub train_acc: String,
    pub test_acc: Option<String>,
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

impl MetricsRow {
    fn new(cell: &Cell, rec: &EpochRecord) -> Self {
        MetricsRow {
            run_id: cell.run_id(),
            variant: cell.variant.name().into(),
            percent: cell.percent,
            lambda: cell.lambda,
            seed: cell.seed,
            epoch: rec.epoch,
            loss_d: rec.loss_d.map(fmt),
            loss_g: rec.loss_g.map(fmt),
            loss_c_sup: fmt(rec.loss_c_sup),
            loss_c_unsup: rec.loss_c_unsup.map(fmt),
            keep_rate: rec.keep_rate.map(fmt),
            train_acc: fmt(rec.train_acc),
            test_acc: rec.test_acc.map(fmt),
        }
    }
}

/// One training run of a sweep.
#[derive(Clone, Debug)]
struct Cell {
    variant: Variant,
    percent: f64,
    lambda: f64,
    seed: u64,
    augment: bool,
    decay: bool,
}

impl Cell {
    fn run_id(&self) -> String {
        let mut id = format!("{}-p{}-l{}-s{}", self.variant.name(), self.percent, self.lambda, self.seed);
        if self.augment {
            id.push_str("-aug");
        }
        if !self.decay {
            id.push_str("-nodecay");
        }
        id
    }
}

struct Recorder<'a> {
    writer: &'a mut csv::Writer<File>,
    cell: &'a Cell,
    checkpoint_dir: Option<PathBuf>,
    final_epoch: usize,
}

impl Observer for Recorder<'_> {
    fn on_epoch(&mut self, rec: &EpochRecord, session: &Session) -> Result<()> {
        self.writer
            .serialize(MetricsRow::new(self.cell, rec))
            .map_err(|e| Error::Config(format!("metrics.csv: {e}")))?;
        self.writer.flush().map_err(|e| Error::io("metrics.csv", e))?;
        if let (Some(dir), true) = (&self.checkpoint_dir, rec.epoch == self.final_epoch) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            for (role, ckpt) in session.checkpoints() {
                ckpt.save(&dir.join(format!("{role}.ckpt")))?;
            }
        }
        Ok(())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Final test (or train, without a test split) accuracy of every cell.
fn run_cells(cfg: &ExperimentConfig, cells: &[Cell], train_set: &Dataset, test: Option<&Dataset>) -> Result<Vec<f64>> {
    create_dir(&cfg.output_dir)?;
    let run_json = serde_json::to_string_pretty(cfg).expect("config serializes");
    std::fs::write(cfg.output_dir.join("run.json"), run_json + "\n").map_err(|e| Error::io("writing run.json", e))?;
    let mut writer = csv_writer(&cfg.output_dir.join("metrics.csv"))?;
    let mut accs = Vec::with_capacity(cells.len());
    for cell in cells {
        let data = if cell.percent < 100.0 {
            subsample(train_set, cell.percent, cell.seed)?
        } else {
            train_set.clone()
        };
        let hp = cfg.cell_hyper(cell.seed, cell.lambda, cell.augment, cell.decay);
        let mut rec = Recorder {
            writer: &mut writer,
            cell,
            checkpoint_dir: cfg.checkpoints.then(|| cfg.output_dir.join(cell.run_id())),
            final_epoch: hp.epochs - 1,
        };
        let out = train(cell.variant, &data, test, &hp, &cfg.models, &mut rec)?;
        let last = out.history.last().expect("at least one epoch");
        accs.push(last.test_acc.unwrap_or(last.train_acc));
    }
    Ok(accs)
}

/// Trains `cfg.variant` for every (percent, seed) pair. Returns the final
/// accuracy of each run.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let (train_set, test) = cfg.data.load()?;
    let mut cells = Vec::new();
    for &percent in &cfg.dataset_percent {
        for &seed in &cfg.seeds {
            cells.push(Cell {
                variant: cfg.variant,
                percent,
                lambda: cfg.hyper.lambda,
                seed,
                augment: cfg.augment,
                decay: cfg.weight_decay,
            });
        }
    }
    run_cells(cfg, &cells, &train_set, test.as_ref())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Percent,
    Lambda,
    Strategy,
}

/// One line of `sweep_summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub axis: String,
    pub value: String,
    pub variant: String,
    pub seeds: usize,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every (axis value × variant × seed) cell and summarises the final
/// test accuracies per (axis value × variant).
pub fn cmd_sweep(cfg: &ExperimentConfig, axis: Axis) -> Result<Vec<SummaryRow>> {
    let (train_set, test) = cfg.data.load()?;
    let base = Cell {
        variant: Variant::EcGan,
        percent: 100.0,
        lambda: cfg.hyper.lambda,
        seed: 0,
        augment: cfg.augment,
        decay: cfg.weight_decay,
    };
    let values: Vec<(String, Cell)> = match axis {
        Axis::Percent => cfg
            .dataset_percent
            .iter()
            .map(|&p| (p.to_string(), Cell { percent: p, ..base.clone() }))
            .collect(),
        Axis::Lambda => {
            if cfg.lambdas.is_empty() {
                return Err(Error::Config("lambda sweep needs a non-empty lambdas list".into()));
            }
            cfg.lambdas
                .iter()
                .map(|&l| (l.to_string(), Cell { lambda: l, ..base.clone() }))
                .collect()
        }
        Axis::Strategy => [("none", false, false), ("augment", true, false), ("decay", false, true), ("both", true, true)]
            .into_iter()
            .map(|(name, augment, decay)| (name.to_string(), Cell { augment, decay, ..base.clone() }))
            .collect(),
    };
    // The baseline ignores lambda, so a lambda sweep trains it once per seed.
    let mut cells = Vec::new();
    let mut slots = Vec::new();
    for (vi, (_, cell)) in values.iter().enumerate() {
        for &variant in &cfg.sweep_variants {
            for &seed in &cfg.seeds {
                let mut c = Cell { variant, seed, ..cell.clone() };
                if axis == Axis::Lambda && variant == Variant::Baseline {
                    c.lambda = values[0].1.lambda;
                    if vi > 0 {
                        let j = cells.iter().position(|o: &Cell| o.variant == variant && o.seed == seed).unwrap();
                        slots.push((vi, variant, j));
                        continue;
                    }
                }
                slots.push((vi, variant, cells.len()));
                cells.push(c);
            }
        }
    }
    let accs = run_cells(cfg, &cells, &train_set, test.as_ref())?;
    let mut rows = Vec::new();
    for (vi, (label, _)) in values.iter().enumerate() {
        for &variant in &cfg.sweep_variants {
            let a: Vec<f64> = slots
                .iter()
                .filter(|s| s.0 == vi && s.1 == variant)
                .map(|s| accs[s.2])
                .collect();
            let (mean, std) = mean_std(&a);
            rows.push(SummaryRow {
                axis: format!("{axis:?}").to_lowercase(),
                value: label.clone(),
                variant: variant.name().into(),
                seeds: a.len(),
                mean_test_acc: mean,
                std_test_acc: std,
            });
        }
    }
    let mut w = csv_writer(&cfg.output_dir.join("sweep_summary.csv"))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Error::Config(format!("sweep_summary.csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("sweep_summary.csv", e))?;
    Ok(rows)
}

/// Tiles `[N,C,S,S]` images in `[0,1]` into a grid `ceil(√N)` tiles wide;
/// unused tiles stay black.
pub fn tile(images: &Tensor) -> Image {
    let s = images.shape();
    let (n, c, size) = (s[0], s[1], s[2]);
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n.div_ceil(cols).max(1);
    let (width, height) = (cols * size, rows * size);
    let mut pixels = vec![0.0; c * width * height];
    for (i, img) in images.data().chunks(c * size * size).enumerate() {
        let (ox, oy) = ((i % cols) * size, (i / cols) * size);
        for ch in 0..c {
            for y in 0..size {
                let src = &img[(ch * size + y) * size..][..size];
                let dst = (ch * height + oy + y) * width + ox;
                pixels[dst..dst + size].copy_from_slice(src);
            }
        }
    }
    Image { width, height, channels: c, pixels }
}

/// Samples `n` images from a generator checkpoint into a PGM/PPM grid.
pub fn cmd_generate(ckpt: &Path, n: usize, class: Option<usize>, out: &Path, seed: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("--n must be positive".into()));
    }
    let mut g = Checkpoint::load(ckpt)?.network_as(Role::Generator)?;
    let labels = class.map(|k| vec![k; n]);
    let x = sample_images(&mut g, n, labels.as_deref(), &mut Rng::seed(seed))?;
    data::write_pnm(out, &tile(&data::denormalize(&x)))
}

/// Accuracy of a classifier (or shared discriminator) checkpoint on a dataset
/// given as `synth:key=value,...`, `idx:<images>,<labels>` or
/// `dir:<root>,<labels.csv>`.
pub fn cmd_eval(ckpt: &Path, data_spec: &str) -> Result<f64> {
    let ck = Checkpoint::load(ckpt)?;
    let mut net = match ck.role() {
        Role::SharedDiscriminator => ck.network()?,
        _ => ck.network_as(Role::Classifier)?,
    };
    let spec = net.spec().clone();
    let dataset = parse_data_spec(data_spec, spec.image_size, spec.channels, spec.num_classes)?;
    if dataset.num_classes > spec.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, checkpoint predicts {}",
            dataset.num_classes, spec.num_classes
        )));
    }
    evaluate(&mut net, &dataset)
}

fn parse_data_spec(text: &str, size: usize, channels: usize, classes: usize) -> Result<Dataset> {
    let (kind, rest) = text
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("data spec {text:?} needs a kind prefix")))?;
    match kind {
        "synth" => {
            let (mut n, mut noise, mut seed) = (100usize, 0.2f64, 1u64);
            for kv in rest.split(',').filter(|s| !s.is_empty()) {
                let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("bad synth field {kv:?}")))?;
                let bad = || Error::Config(format!("bad value for {k}: {v:?}"));
                match k {
                    "n_per_class" => n = v.parse().map_err(|_| bad())?,
                    "noise" => noise = v.parse().map_err(|_| bad())?,
                    "seed" => seed = v.parse().map_err(|_| bad())?,
                    _ => return Err(Error::Config(format!("unknown synth field {k:?}"))),
                }
            }
            let d = synth_shapes(n, classes, size, noise, seed)?;
            if channels == 1 {
                Ok(d)
            } else {
                d.resized(size, channels)
            }
        }
        "idx" => {
            let (i, l) = rest.split_once(',').ok_or_else(|| Error::Config("idx:<images>,<labels>".into()))?;
            load_idx(Path::new(i), Path::new(l))?.resized(size, channels)
        }
        "dir" => {
            let (r, l) = rest.split_once(',').ok_or_else(|| Error::Config("dir:<root>,<labels.csv>".into()))?;
            load_image_dir(Path::new(r), Path::new(l), size, channels)
        }
        _ => Err(Error::Config(format!("unknown data kind {kind:?}"))),
    }
}
