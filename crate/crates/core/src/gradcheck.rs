//! Central finite-difference checks against the tape's backward pass.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::params::{Binding, ParamStore};

/// Relative error with an absolute floor of `1e-3` on the denominator, so
/// coordinates whose true derivative is (numerically) zero do not blow up.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// Which coordinates of each input to probe.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// At most this many, sampled without replacement from a seeded stream.
    Sample {
        max: usize,
        seed: u64,
    },
}

impl Coords {
    pub(crate) fn pick(self, len: usize, salt: usize) -> Vec<usize> {
        match self {
            Coords::All => (0..len).collect(),
            Coords::Sample { max, seed } if max < len => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (salt as u64).wrapping_mul(0x9E37_79B9));
                let mut idx = sample(&mut rng, len, max).into_vec();
                idx.sort_unstable();
                idx
            }
            Coords::Sample { .. } => (0..len).collect(),
        }
    }
}

/// Compares backward against central differences of the scalar `f` for each
/// input tensor. Returns the maximum relative error per input.
pub fn check<F>(f: F, inputs: &[Tensor], eps: f64, coords: Coords) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut worst = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let mut max_err: f64 = 0.0;
        for i in coords.pick(inputs[k].len(), k) {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            max_err = max_err.max(rel_err(analytic.data()[i], numeric));
        }
        worst.push(max_err);
    }
    Ok(worst)
}

/// Finite-difference check of every parameter in `store` for the scalar
/// built by `f`. Returns `(name, max relative error)` per parameter.
pub fn check_store<F>(store: &ParamStore, f: F, eps: f64, coords: Coords) -> Result<Vec<(String, f64)>>
where
    F: Fn(&mut Tape, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let loss = f(&mut tape, &binding)?;
    let grads = tape.backward(loss)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let out = f(&mut tape, &binding)?;
        Ok(tape.value(out).item())
    };

    let mut probe = store.clone();
    let mut report = Vec::with_capacity(store.len());
    for (k, id) in store.ids().enumerate() {
        let len = store.value(id).len();
        let analytic = grads.get(binding.var(id)).cloned().unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
        let mut max_err: f64 = 0.0;
        for i in coords.pick(len, k) {
            let orig = probe.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig;
            max_err = max_err.max(rel_err(analytic.data()[i], (up - down) / (2.0 * eps)));
        }
        report.push((store.name(id).to_string(), max_err));
    }
    Ok(report)
}

/// Reduces a tensor-valued function to a scalar through fixed random weights,
/// `Σ w ⊙ y`, so its full Jacobian is exercised by [`check`].
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(y).shape().to_vec();
    let w: Vec<f64> = (0..tape.value(y).len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!(rel_err(1e-12, 0.0) < 1e-8);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sampled_coords_are_bounded_and_stable() {
        let c = Coords::Sample { max: 20, seed: 1 };
        let a = c.pick(1000, 3);
        assert_eq!(a.len(), 20);
        assert_eq!(a, c.pick(1000, 3));
        assert_eq!(c.pick(5, 0), vec![0, 1, 2, 3, 4]);
    }
}
