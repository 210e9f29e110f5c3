//! Optimizers, the combined objective and the training loop.

pub mod config;
pub mod model;
pub mod optim;

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::fwt::{self, FilterBank, FilterBankParams};
use crate::gradcheck::{check_store, Coords};
use crate::params::ParamStore;

pub use config::{LrSchedule, TaskKind, TrainConfig};
pub use model::{total_loss, Batch, Data, LossOutput, Model};
pub use optim::{clip_grad_norm, Optimizer, OptimizerConfig, OptimizerKind};

pub const METRICS_HEADER: &str = "step,task_loss,wavelet_loss,accuracy,seconds";

/// One logged row, averaged over the steps since the previous row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub task_loss: f64,
    pub wavelet_loss: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

impl MetricRow {
    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{:.3}", self.step, self.task_loss, self.wavelet_loss, self.accuracy, self.seconds)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Completed,
    Diverged { step: usize, reason: String },
}

pub struct TrainOutcome {
    pub model: Model,
    pub store: ParamStore,
    pub history: Vec<MetricRow>,
    pub status: RunStatus,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub task_loss: f64,
    pub accuracy: f64,
    pub samples: usize,
}

fn batch_size(b: &Batch) -> usize {
    match b {
        Batch::Sequence(t) => t.batch(),
        Batch::Images { labels, .. } => labels.len(),
    }
}

/// Runs the seeded training loop described by `config`. Rows are written
/// to `metrics` (header first) as they are logged, so a diverged run keeps
/// its partial history.
pub fn train(config: &TrainConfig, data: &Data, mut metrics: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    config.validate()?;
    let mut store = ParamStore::new();
    let model = Model::build(config, &mut store, data)?;
    let base_lr = config.optimizer_config().lr;
    let mut opt = Optimizer::new(config.optimizer_config(), &store)?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(model::derive_seed(config.seed, 3, 0));
    let weight = if config.wavelet_loss { config.wavelet_weight } else { 0.0 };
    let io_err = |e| Error::io("metrics", e);

    if let Some(w) = metrics.as_deref_mut() {
        writeln!(w, "{METRICS_HEADER}").map_err(io_err)?;
    }
    let start = Instant::now();
    let mut history = Vec::new();
    let (mut acc_task, mut acc_wave, mut acc_acc, mut count) = (0.0, 0.0, 0.0, 0usize);
    let mut status = RunStatus::Completed;

    for step in 1..=config.steps {
        let batch = data.train_batch(config, step)?;
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let dropout = (config.dropout > 0.0).then_some(&mut dropout_rng as &mut dyn rand::RngCore);
        let out = total_loss(&model, &mut tape, &binding, &batch, weight, dropout)?;
        let total = tape.value(out.total).item();
        if !total.is_finite() {
            status = RunStatus::Diverged { step, reason: format!("loss became {total}") };
            break;
        }
        let grads = tape.backward(out.total)?;
        store.zero_grad();
        store.accumulate(&binding, &grads);
        clip_grad_norm(&mut store, config.clip);
        if config.lr_schedule != LrSchedule::Constant {
            // the last cosine step is tiny but positive
            opt.set_lr(base_lr * config.lr_schedule.factor(step, config.steps))?;
        }
        match opt.step(&mut store) {
            Ok(()) => {}
            Err(Error::NonFinite { param }) => {
                status = RunStatus::Diverged { step, reason: format!("non-finite gradient in {param}") };
                break;
            }
            Err(e) => return Err(e),
        }

        acc_task += out.task;
        acc_wave += out.wavelet;
        acc_acc += out.accuracy;
        count += 1;
        if step % config.log_every == 0 {
            let n = count as f64;
            let row = MetricRow {
                step,
                task_loss: acc_task / n,
                wavelet_loss: acc_wave / n,
                accuracy: acc_acc / n,
                seconds: start.elapsed().as_secs_f64(),
            };
            if let Some(w) = metrics.as_deref_mut() {
                writeln!(w, "{}", row.to_csv()).map_err(io_err)?;
            }
            history.push(row);
            (acc_task, acc_wave, acc_acc, count) = (0.0, 0.0, 0.0, 0);
        }
    }
    if let Some(w) = metrics {
        w.flush().map_err(io_err)?;
    }
    Ok(TrainOutcome { model, store, history, status })
}

/// Mean task loss and accuracy on `samples` held-out examples.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    config: &TrainConfig,
    data: &Data,
    samples: usize,
) -> Result<EvalResult> {
    let mut loss = 0.0;
    let mut acc = 0.0;
    let mut total = 0usize;
    for batch in data.eval_batches(config, samples, 500)? {
        let n = batch_size(&batch);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let out = model::task_loss(model, &mut tape, &binding, &batch, None)?;
        loss += tape.value(out.loss).item() * n as f64;
        acc += out.accuracy * n as f64;
        total += n;
    }
    if total == 0 {
        return Err(Error::invalid("evaluation set is empty"));
    }
    Ok(EvalResult { task_loss: loss / total as f64, accuracy: acc / total as f64, samples: total })
}

/// Finite-difference check of the combined objective on `batch`, at most
/// `max_coords` coordinates per parameter. Returns `(name, max rel err)`.
pub fn grad_check_model(
    model: &Model,
    store: &ParamStore,
    batch: &Batch,
    wavelet_weight: f64,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    check_store(
        store,
        |tape, binding| Ok(total_loss(model, tape, binding, batch, wavelet_weight, None)?.total),
        eps,
        Coords::Sample { max: max_coords, seed },
    )
}

/// Result of optimizing a filter bank against the wavelet loss alone.
pub struct FilterFit {
    pub bank: FilterBank,
    /// `(step, loss before that step)`; the last entry is the final loss.
    pub history: Vec<(usize, f64)>,
}

/// Minimises `L_pr + L_ac` of a single bank with full-batch steps.
pub fn fit_filters(init: &FilterBank, steps: usize, opt: OptimizerConfig, log_every: usize) -> Result<FilterFit> {
    let mut store = ParamStore::new();
    let fbp = FilterBankParams::register(&mut store, "fb", init);
    let mut optimizer = Optimizer::new(opt, &store)?;
    let log_every = log_every.max(1);
    let mut history = Vec::new();
    for step in 0..=steps {
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let fv = fbp.bind(&mut tape, &binding)?;
        let loss = fwt::wavelet_loss(&mut tape, &[fv])?;
        let value = tape.value(loss).item();
        if step % log_every == 0 || step == steps {
            history.push((step, value));
        }
        if step == steps {
            break;
        }
        if !value.is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = tape.backward(loss)?;
        store.zero_grad();
        store.accumulate(&binding, &grads);
        optimizer.step(&mut store)?;
    }
    Ok(FilterFit { bank: fbp.read(&store), history })
}
