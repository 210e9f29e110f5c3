use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// A validated bijection on `0..n`. Applying it maps `y[i] = x[perm[i]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    forward: Rc<[usize]>,
    inverse: Rc<[usize]>,
}

impl Permutation {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let n = indices.len();
        let mut inverse = vec![usize::MAX; n];
        for (i, &p) in indices.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(Error::invalid(format!("permutation is not a bijection on 0..{n} (entry {i} = {p})")));
            }
            inverse[p] = i;
        }
        Ok(Permutation { forward: indices.into(), inverse: inverse.into() })
    }

    pub fn identity(n: usize) -> Self {
        let idx: Rc<[usize]> = (0..n).collect();
        Permutation { forward: idx.clone(), inverse: idx }
    }

    pub fn reversal(n: usize) -> Self {
        let idx: Rc<[usize]> = (0..n).rev().collect();
        Permutation { forward: idx.clone(), inverse: idx }
    }

    /// Uniform draw from the symmetric group.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        Permutation::new(idx).expect("shuffle yields a bijection")
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> Permutation {
        Permutation { forward: self.inverse.clone(), inverse: self.forward.clone() }
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn apply<T: Copy>(&self, x: &[T]) -> Vec<T> {
        self.forward.iter().map(|&p| x[p]).collect()
    }

    /// Scatter through the inverse: `out[perm[i]] = y[i]`.
    pub fn apply_inverse<T: Copy + Default>(&self, y: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); y.len()];
        for (i, &p) in self.forward.iter().enumerate() {
            out[p] = y[i];
        }
        out
    }
}
