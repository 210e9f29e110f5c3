//! Synthetic sequence benchmarks and their metrics.
//!
//! Every sample draws from its own ChaCha stream selected by the sample
//! index, so a batch is a pure function of `(dims, seed)` and sample `i` does
//! not depend on the batch size.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Number of symbols to memorise in the copy task.
pub const COPY_LEN: usize = 10;

/// Targets of a [`TaskBatch`].
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// One value per sample (`[batch×1]`).
    Regression(Tensor),
    /// One class per step and sample, time-major: `labels[t * batch + b]`.
    Sequence { labels: Vec<usize>, classes: usize },
    /// One class per sample, read out after the last step.
    Classes { labels: Vec<usize>, classes: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskBatch {
    /// `[batch×T×n_in]`.
    pub inputs: Tensor,
    pub targets: Targets,
    /// Steps that count toward accuracy; `None` means all.
    pub mask: Option<Vec<bool>>,
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

impl TaskBatch {
    pub fn batch(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn n_in(&self) -> usize {
        self.inputs.shape()[2]
    }

    /// Input at step `t` for every sample, `[batch×n_in]`.
    pub fn step_input(&self, t: usize) -> Tensor {
        let (b, steps, n) = (self.batch(), self.steps(), self.n_in());
        let mut out = Vec::with_capacity(b * n);
        for s in 0..b {
            let start = (s * steps + t) * n;
            out.extend_from_slice(&self.inputs.data()[start..start + n]);
        }
        Tensor::matrix(b, n, out).expect("consistent sizes")
    }

    /// All steps in time order.
    pub fn time_major(&self) -> Vec<Tensor> {
        (0..self.steps()).map(|t| self.step_input(t)).collect()
    }

    /// One CSV row per sample: flattened inputs, then targets.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let (b, steps, n) = (self.batch(), self.steps(), self.n_in());
        let per = steps * n;
        let mut header: Vec<String> = (0..steps).flat_map(|t| (0..n).map(move |i| format!("x{t}_{i}"))).collect();
        match &self.targets {
            Targets::Regression(_) => header.push("y".into()),
            Targets::Sequence { .. } => header.extend((0..steps).map(|t| format!("y{t}"))),
            Targets::Classes { .. } => header.push("label".into()),
        }
        writeln!(w, "{}", header.join(","))?;
        for s in 0..b {
            let mut row: Vec<String> =
                self.inputs.data()[s * per..(s + 1) * per].iter().map(|v| v.to_string()).collect();
            match &self.targets {
                Targets::Regression(y) => row.push(y.data()[s].to_string()),
                Targets::Sequence { labels, .. } => row.extend((0..steps).map(|t| labels[t * b + s].to_string())),
                Targets::Classes { labels, .. } => row.push(labels[s].to_string()),
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Adding problem: each step is `(value ~ U(0,1), marker)`; one marker falls
/// in `[0, T/2)`, the other in `[T/2, T)`; the target is the sum of the two
/// marked values.
pub fn gen_adding(steps: usize, batch: usize, seed: u64) -> Result<TaskBatch> {
    if steps < 2 {
        return Err(Error::invalid(format!("adding task needs T >= 2, got {steps}")));
    }
    if batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let half = steps / 2;
    let mut inputs = vec![0.0; batch * steps * 2];
    let mut targets = Vec::with_capacity(batch);
    for s in 0..batch {
        let mut rng = sample_rng(seed, s);
        let row = &mut inputs[s * steps * 2..(s + 1) * steps * 2];
        for t in 0..steps {
            row[2 * t] = rng.gen::<f64>();
        }
        let a = rng.gen_range(0..half);
        let b = rng.gen_range(half..steps);
        row[2 * a + 1] = 1.0;
        row[2 * b + 1] = 1.0;
        targets.push(row[2 * a] + row[2 * b]);
    }
    Ok(TaskBatch {
        inputs: Tensor::new(vec![batch, steps, 2], inputs)?,
        targets: Targets::Regression(Tensor::matrix(batch, 1, targets)?),
        mask: None,
    })
}

/// Input alphabet of the copy task: blank `0`, symbols `1..=n`, marker `n+1`.
pub fn copy_alphabet(n: usize) -> usize {
    n + 2
}

/// Output classes of the copy task readout. The marker is never a target,
/// but the head keeps one row per input symbol.
pub fn copy_classes(n: usize) -> usize {
    n + 2
}

/// Copy-memory problem: `COPY_LEN` symbols from `1..=n`, `T` blanks, the
/// marker, then `COPY_LEN` blanks during which the symbols must be repeated.
/// Sequence length `T + 2·COPY_LEN + 1`; inputs are one-hot.
pub fn gen_copy(steps: usize, n: usize, batch: usize, seed: u64) -> Result<TaskBatch> {
    if n < 2 {
        return Err(Error::invalid(format!("copy task needs n >= 2 symbols, got {n}")));
    }
    if batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let len = steps + 2 * COPY_LEN + 1;
    let width = copy_alphabet(n);
    let mut inputs = vec![0.0; batch * len * width];
    let mut labels = vec![0usize; len * batch];
    for s in 0..batch {
        let mut rng = sample_rng(seed, s);
        let mut symbols = [0usize; COPY_LEN];
        for v in &mut symbols {
            *v = rng.gen_range(1..=n);
        }
        let mut seq = vec![0usize; len];
        seq[..COPY_LEN].copy_from_slice(&symbols);
        seq[COPY_LEN + steps] = n + 1;
        for (t, &sym) in seq.iter().enumerate() {
            inputs[(s * len + t) * width + sym] = 1.0;
        }
        for (k, &sym) in symbols.iter().enumerate() {
            labels[(len - COPY_LEN + k) * batch + s] = sym;
        }
    }
    let mut mask = vec![false; len];
    mask[len - COPY_LEN..].fill(true);
    Ok(TaskBatch {
        inputs: Tensor::new(vec![batch, len, width], inputs)?,
        targets: Targets::Sequence { labels, classes: copy_classes(n) },
        mask: Some(mask),
    })
}

/// Fraction of predictions within `0.05` of the target.
pub fn adding_accuracy(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::dim("adding_accuracy", &[pred.len()], &[target.len()]));
    }
    let hits = pred.iter().zip(target).filter(|(p, t)| (*p - *t).abs() < 0.05).count();
    Ok(hits as f64 / pred.len() as f64)
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) }).0
}

/// Argmax accuracy over masked steps. `logits` is time-major
/// `[(T·batch)×classes]`, aligned with `labels`; `mask` has one entry per
/// step.
pub fn copy_accuracy(logits: &Tensor, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let rows = logits.rows();
    if rows != labels.len() || mask.is_empty() || !rows.is_multiple_of(mask.len()) {
        return Err(Error::dim("copy_accuracy", logits.shape(), &[labels.len(), mask.len()]));
    }
    let batch = rows / mask.len();
    let (mut hits, mut total) = (0usize, 0usize);
    for (t, &on) in mask.iter().enumerate() {
        if !on {
            continue;
        }
        for b in 0..batch {
            let r = t * batch + b;
            total += 1;
            if argmax(logits.row(r)) == labels[r] {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid("mask selects no steps"));
    }
    Ok(hits as f64 / total as f64)
}

/// Mean squared error of always predicting `1.0`, over `samples` fresh
/// adding-task sequences.
pub fn constant_adding_mse(steps: usize, samples: usize, seed: u64) -> Result<f64> {
    let b = gen_adding(steps, samples, seed)?;
    let Targets::Regression(y) = &b.targets else { unreachable!() };
    Ok(y.data().iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>() / samples as f64)
}

/// Mean per-step cross entropy of a memoryless guesser over `samples` copy
/// sequences. It predicts the blank with certainty except on the recall
/// steps, where it spreads probability uniformly over `guess_classes`
/// classes that include all `n` symbols.
pub fn copy_guess_cross_entropy(
    steps: usize,
    n: usize,
    guess_classes: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if guess_classes < n {
        return Err(Error::invalid("guess must cover every symbol"));
    }
    if samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    // Chunks keep memory bounded; each chunk has its own seed.
    const CHUNK: usize = 4096;
    let len = steps + 2 * COPY_LEN + 1;
    let mut total = 0.0;
    for (c, start) in (0..samples).step_by(CHUNK).enumerate() {
        let size = CHUNK.min(samples - start);
        let b = gen_copy(steps, n, size, seed.wrapping_add(c as u64))?;
        let Targets::Sequence { labels, .. } = &b.targets else { unreachable!() };
        let mask = b.mask.as_ref().expect("copy batches carry a mask");
        for (t, &recall) in mask.iter().enumerate() {
            for s in 0..size {
                let label = labels[t * size + s];
                let p = match (recall, label) {
                    (true, _) => 1.0 / guess_classes as f64,
                    (false, 0) => 1.0,
                    (false, _) => 0.0,
                };
                total -= p.ln();
            }
        }
    }
    Ok(total / (len * samples) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adding_layout() {
        let b = gen_adding(10, 4, 1).unwrap();
        assert_eq!(b.inputs.shape(), &[4, 10, 2]);
        let x0 = b.step_input(0);
        assert_eq!(x0.shape(), &[4, 2]);
        assert_eq!(b.time_major().len(), 10);
        assert!(gen_adding(1, 4, 1).is_err());
    }

    #[test]
    fn accuracy_threshold() {
        let t = [0.3, 1.2, 1.9];
        assert_eq!(adding_accuracy(&t, &t).unwrap(), 1.0);
        let p: Vec<f64> = t.iter().map(|v| v + 0.04).collect();
        assert_eq!(adding_accuracy(&p, &t).unwrap(), 1.0);
        let p: Vec<f64> = t.iter().map(|v| v + 0.06).collect();
        assert_eq!(adding_accuracy(&p, &t).unwrap(), 0.0);
    }

    #[test]
    fn copy_sizes() {
        let b = gen_copy(5, 8, 3, 0).unwrap();
        assert_eq!(b.inputs.shape(), &[3, 26, 10]);
        let Targets::Sequence { labels, classes } = &b.targets else { panic!() };
        assert_eq!(*classes, 10);
        assert_eq!(labels.len(), 26 * 3);
        assert!(gen_copy(5, 1, 3, 0).is_err());
    }

    #[test]
    fn csv_rows() {
        let b = gen_adding(3, 2, 0).unwrap();
        let mut out = Vec::new();
        b.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), 7);
    }
}
