//! Task models, their data and the combined objective.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fwt::{self, FilterBankParams};
use crate::mnist::{load_mnist_idx, Dataset};
use crate::params::{Binding, ParamId, ParamStore};
use crate::recurrent::{Gru, GruConfig};
use crate::tasks::{self, adding_accuracy, copy_accuracy, Targets, TaskBatch};
use crate::training::config::{TaskKind, TrainConfig};
use crate::wavelet_linear::{LayerSpec, WaveletLinear};

/// Middle layer of the feed-forward classifier.
#[derive(Clone, Debug)]
pub enum MidLayer {
    Dense(ParamId),
    Wavelet(WaveletLinear),
}

/// `Dense(n_in→h) → ReLU → mid(h→h) + bias → ReLU → Dense(h→n_out)`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub n_in: usize,
    pub hidden: usize,
    pub n_out: usize,
    pub w1: ParamId,
    pub b1: ParamId,
    pub mid: MidLayer,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
}

fn uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

impl Mlp {
    pub fn init(
        store: &mut ParamStore,
        n_in: usize,
        hidden: usize,
        n_out: usize,
        wavelet: Option<&LayerSpec>,
        seed: u64,
    ) -> Result<Self> {
        if n_in == 0 || hidden == 0 || n_out == 0 {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = store.add("fc1.W", uniform(n_in, hidden, n_in, &mut rng));
        let b1 = store.add("fc1.b", Tensor::zeros(&[hidden]));
        let mid = match wavelet {
            Some(spec) => MidLayer::Wavelet(WaveletLinear::init(store, "mid", hidden, spec, rng.gen())?),
            None => MidLayer::Dense(store.add("mid.W", uniform(hidden, hidden, hidden, &mut rng))),
        };
        let b2 = store.add("mid.bias", Tensor::zeros(&[hidden]));
        let w3 = store.add("fc3.W", uniform(hidden, n_out, hidden, &mut rng));
        let b3 = store.add("fc3.b", Tensor::zeros(&[n_out]));
        Ok(Mlp { n_in, hidden, n_out, w1, b1, mid, b2, w3, b3 })
    }

    pub fn count_formula(n_in: usize, hidden: usize, n_out: usize, filter_len: Option<usize>) -> usize {
        let mid = match filter_len {
            Some(l) => 3 * hidden + 4 * l,
            None => hidden * hidden,
        };
        n_in * hidden + hidden + mid + hidden + hidden * n_out + n_out
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w1, self.b1];
        match &self.mid {
            MidLayer::Dense(w) => ids.push(*w),
            MidLayer::Wavelet(l) => ids.extend(l.trainable_ids()),
        }
        ids.extend([self.b2, self.w3, self.b3]);
        ids
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var, dropout: Option<&mut dyn RngCore>) -> Result<Var> {
        let h = tape.matmul(x, b.var(self.w1))?;
        let h = tape.add_bias(h, b.var(self.b1))?;
        let h = tape.relu(h);
        let h = match &self.mid {
            MidLayer::Dense(w) => tape.matmul(h, b.var(*w))?,
            MidLayer::Wavelet(l) => l.forward(tape, b, h, dropout)?,
        };
        let h = tape.add_bias(h, b.var(self.b2))?;
        let h = tape.relu(h);
        let y = tape.matmul(h, b.var(self.w3))?;
        tape.add_bias(y, b.var(self.b3))
    }
}

#[derive(Clone, Debug)]
pub enum Model {
    Recurrent(Box<Gru>),
    FeedForward(Mlp),
}

impl Model {
    /// Fresh model for `config`, registered in `store`.
    pub fn build(config: &TrainConfig, store: &mut ParamStore, data: &Data) -> Result<Self> {
        Model::build_for_width(config, store, data.input_width())
    }

    /// Like [`Model::build`] when only the input width is known.
    pub fn build_for_width(config: &TrainConfig, store: &mut ParamStore, n_in: usize) -> Result<Self> {
        let spec = layer_spec(config);
        match config.task {
            TaskKind::Mnist => {
                let wavelet = (!config.compress.is_empty()).then_some(&spec);
                let mlp = Mlp::init(store, n_in, config.hidden, 10, wavelet, config.seed)?;
                Ok(Model::FeedForward(mlp))
            }
            _ => {
                let gru = Gru::init(store, "", gru_config(config, n_in), config.seed)?;
                Ok(Model::Recurrent(Box::new(gru)))
            }
        }
    }

    pub fn filter_banks(&self) -> Vec<FilterBankParams> {
        match self {
            Model::Recurrent(g) => g.filter_banks(),
            Model::FeedForward(m) => match &m.mid {
                MidLayer::Wavelet(l) => vec![l.fb],
                MidLayer::Dense(_) => Vec::new(),
            },
        }
    }

    /// Wavelet layers with their parameter-name prefixes.
    pub fn wavelet_layers(&self) -> Vec<(String, &WaveletLinear)> {
        match self {
            Model::Recurrent(g) => g.wavelet_layers().map(|(gate, l)| (format!("{}.W", gate.name()), l)).collect(),
            Model::FeedForward(m) => match &m.mid {
                MidLayer::Wavelet(l) => vec![("mid".to_string(), l)],
                MidLayer::Dense(_) => Vec::new(),
            },
        }
    }

    pub fn wavelet_layers_mut(&mut self) -> Vec<&mut WaveletLinear> {
        match self {
            Model::Recurrent(g) => g.wavelet_layers_mut().collect(),
            Model::FeedForward(m) => match &mut m.mid {
                MidLayer::Wavelet(l) => vec![l],
                MidLayer::Dense(_) => Vec::new(),
            },
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Model::Recurrent(g) => g.param_ids(),
            Model::FeedForward(m) => m.param_ids(),
        }
    }

    pub fn count_params(&self, store: &ParamStore) -> usize {
        self.param_ids().iter().map(|&id| store.value(id).len()).sum()
    }
}

pub fn layer_spec(config: &TrainConfig) -> LayerSpec {
    LayerSpec {
        filter_len: config.filter_len,
        filter_init: config.filter_init,
        max_levels: config.max_levels,
        dropout_p: config.dropout,
    }
}

/// GRU shape for a task; `n_in` is the per-step input width.
pub fn gru_config(config: &TrainConfig, n_in: usize) -> GruConfig {
    let n_out = match config.task {
        TaskKind::Adding => 1,
        TaskKind::Copy => tasks::copy_classes(config.symbols),
        TaskKind::Mnist | TaskKind::SeqMnist => 10,
    };
    GruConfig { n_in, n_h: config.hidden, n_out: Some(n_out), compress: config.compress, layer: layer_spec(config) }
}

/// Exact count for `config` without building the model; image tasks assume
/// 28×28 inputs reduced by `config.downscale`.
pub fn count_for_config(config: &TrainConfig) -> Result<usize> {
    let side = 28 / config.downscale;
    match config.task {
        TaskKind::Mnist => {
            let filter = (!config.compress.is_empty()).then_some(config.filter_len);
            Ok(Mlp::count_formula(side * side, config.hidden, 10, filter))
        }
        task => {
            let n_in = match task {
                TaskKind::Adding => 2,
                TaskKind::Copy => tasks::copy_alphabet(config.symbols),
                _ => 1,
            };
            let c = gru_config(config, n_in);
            c.validate()?;
            Ok(c.count_params())
        }
    }
}

/// A training or evaluation batch.
#[derive(Clone, Debug)]
pub enum Batch {
    Sequence(TaskBatch),
    Images { x: Tensor, labels: Vec<usize> },
}

/// Image data for the MNIST tasks; synthetic tasks need none.
#[derive(Clone, Debug)]
pub struct Data {
    task: TaskKind,
    width: usize,
    pub train: Option<Dataset>,
    pub test: Option<Dataset>,
}

pub const TRAIN_FILES: (&str, &str) = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte");
pub const TEST_FILES: (&str, &str) = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");

/// Seed for the `index`-th draw of stream `stream` (splitmix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

impl Data {
    pub fn load(config: &TrainConfig) -> Result<Self> {
        match config.task {
            TaskKind::Adding => Ok(Data { task: config.task, width: 2, train: None, test: None }),
            TaskKind::Copy => {
                Ok(Data { task: config.task, width: tasks::copy_alphabet(config.symbols), train: None, test: None })
            }
            TaskKind::Mnist | TaskKind::SeqMnist => {
                let dir = &config.mnist_dir;
                let load = |(i, l): (&str, &str)| -> Result<Dataset> {
                    let d = load_mnist_idx(dir.join(i), dir.join(l))?;
                    if config.downscale > 1 {
                        d.downscale(config.downscale)
                    } else {
                        Ok(d)
                    }
                };
                let train = load(TRAIN_FILES)?;
                let train = if train.len() > config.train_limit { train.split(config.train_limit).0 } else { train };
                let test = load(TEST_FILES)?;
                let width = if config.task == TaskKind::Mnist { train.image_size() } else { 1 };
                Ok(Data { task: config.task, width, train: Some(train), test: Some(test) })
            }
        }
    }

    /// Whether the image files for `config` are present.
    pub fn mnist_available(dir: &Path) -> bool {
        [TRAIN_FILES.0, TRAIN_FILES.1, TEST_FILES.0, TEST_FILES.1].iter().all(|f| dir.join(f).is_file())
    }

    /// Per-step input width (pixels per image for the feed-forward task).
    pub fn input_width(&self) -> usize {
        self.width
    }

    fn images(&self, set: &Dataset, indices: &[usize]) -> Batch {
        match self.task {
            TaskKind::SeqMnist => {
                let (x, labels) = set.sequences(indices);
                Batch::Sequence(TaskBatch { inputs: x, targets: Targets::Classes { labels, classes: 10 }, mask: None })
            }
            _ => {
                let (x, labels) = set.batch(indices);
                Batch::Images { x, labels }
            }
        }
    }

    fn synthetic(&self, config: &TrainConfig, size: usize, seed: u64) -> Result<Batch> {
        let b = match self.task {
            TaskKind::Adding => tasks::gen_adding(config.seq_len, size, seed)?,
            _ => tasks::gen_copy(config.seq_len, config.symbols, size, seed)?,
        };
        Ok(Batch::Sequence(b))
    }

    /// Training batch for step `step` (fresh synthetic data, or a seeded
    /// random subset of the training images).
    pub fn train_batch(&self, config: &TrainConfig, step: usize) -> Result<Batch> {
        let seed = derive_seed(config.seed, TRAIN_STREAM, step as u64);
        match &self.train {
            None => self.synthetic(config, config.batch, seed),
            Some(set) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let idx: Vec<usize> = (0..config.batch).map(|_| rng.gen_range(0..set.len())).collect();
                Ok(self.images(set, &idx))
            }
        }
    }

    /// Held-out batches covering `samples` examples, in chunks of `chunk`.
    pub fn eval_batches(&self, config: &TrainConfig, samples: usize, chunk: usize) -> Result<Vec<Batch>> {
        let chunk = chunk.max(1);
        match &self.test {
            None => (0..samples.div_ceil(chunk))
                .map(|i| {
                    let size = chunk.min(samples - i * chunk);
                    self.synthetic(config, size, derive_seed(config.seed, EVAL_STREAM, i as u64))
                })
                .collect(),
            Some(set) => {
                let mut idx: Vec<usize> = (0..set.len()).collect();
                if samples < set.len() {
                    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, EVAL_STREAM, 0)));
                    idx.truncate(samples);
                }
                Ok(idx.chunks(chunk).map(|c| self.images(set, c)).collect())
            }
        }
    }
}

/// Task loss of one batch with its accuracy.
pub struct TaskOutput {
    pub loss: Var,
    pub accuracy: f64,
}

pub fn task_loss(
    model: &Model,
    tape: &mut Tape,
    binding: &Binding,
    batch: &Batch,
    dropout: Option<&mut dyn RngCore>,
) -> Result<TaskOutput> {
    match (model, batch) {
        (Model::FeedForward(mlp), Batch::Images { x, labels }) => {
            let xv = tape.constant(x.clone());
            let logits = mlp.forward(tape, binding, xv, dropout)?;
            let loss = tape.softmax_cross_entropy(logits, labels)?;
            let mask = [true];
            let accuracy = copy_accuracy(tape.value(logits), labels, &mask)?;
            Ok(TaskOutput { loss, accuracy })
        }
        (Model::Recurrent(gru), Batch::Sequence(b)) => {
            let ctx = gru.context(tape, binding)?;
            let xs: Vec<Var> = b.time_major().into_iter().map(|x| tape.constant(x)).collect();
            let states = gru.unroll(tape, &ctx, &xs, None)?;
            let last = *states.last().expect("non-empty sequence");
            match &b.targets {
                Targets::Regression(y) => {
                    let pred = gru.readout(tape, &ctx, last)?;
                    let target = tape.constant(y.clone());
                    let loss = tape.mse(pred, target)?;
                    let accuracy = adding_accuracy(tape.value(pred).data(), y.data())?;
                    Ok(TaskOutput { loss, accuracy })
                }
                Targets::Sequence { labels, .. } => {
                    let all = tape.concat_rows(&states)?;
                    let logits = gru.readout(tape, &ctx, all)?;
                    let loss = tape.softmax_cross_entropy(logits, labels)?;
                    let full = vec![true; b.steps()];
                    let mask = b.mask.as_deref().unwrap_or(&full);
                    let accuracy = copy_accuracy(tape.value(logits), labels, mask)?;
                    Ok(TaskOutput { loss, accuracy })
                }
                Targets::Classes { labels, .. } => {
                    let logits = gru.readout(tape, &ctx, last)?;
                    let loss = tape.softmax_cross_entropy(logits, labels)?;
                    let accuracy = copy_accuracy(tape.value(logits), labels, &[true])?;
                    Ok(TaskOutput { loss, accuracy })
                }
            }
        }
        _ => Err(Error::invalid("batch does not match the model type")),
    }
}

/// Combined objective with its parts.
pub struct LossOutput {
    pub total: Var,
    pub task: f64,
    pub wavelet: f64,
    pub accuracy: f64,
}

/// Task loss plus `weight · Σ (L_pr + L_ac)` over the model's filter banks.
/// With no banks (or `weight == 0`) the total is the task loss node itself.
pub fn total_loss(
    model: &Model,
    tape: &mut Tape,
    binding: &Binding,
    batch: &Batch,
    weight: f64,
    dropout: Option<&mut dyn RngCore>,
) -> Result<LossOutput> {
    let out = task_loss(model, tape, binding, batch, dropout)?;
    let task = tape.value(out.loss).item();
    let banks = model.filter_banks();
    if banks.is_empty() || weight == 0.0 {
        return Ok(LossOutput { total: out.loss, task, wavelet: 0.0, accuracy: out.accuracy });
    }
    let vars = banks.iter().map(|b| b.bind(tape, binding)).collect::<Result<Vec<_>>>()?;
    let wl = fwt::wavelet_loss(tape, &vars)?;
    let wavelet = tape.value(wl).item();
    let scaled = tape.scale(wl, weight);
    let total = tape.add(out.loss, scaled)?;
    Ok(LossOutput { total, task, wavelet, accuracy: out.accuracy })
}
