//! Multilevel fast wavelet transform with learnable filter banks.
//!
//! Analysis applies stride-2 circular cross-correlation with `h0` (low-pass)
//! and `h1` (high-pass) to the running approximation. Synthesis runs the
//! transposed convolution with the time-reversed synthesis filters, which
//! makes it the exact inverse whenever the bank satisfies the
//! perfect-reconstruction and alias-cancellation conditions with the product
//! filter centred at `L - 1`.
//!
//! Flattened coefficient order is `[approx, coarsest detail, ..., finest detail]`.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::kernels::{self, Boundary};
use crate::autodiff::{Permutation, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};

/// Analysis filters `h0, h1` and synthesis filters `f0, f1` of equal even length.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub h0: Vec<f64>,
    pub h1: Vec<f64>,
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterInit {
    /// Every tap i.i.d. from U(-1, 1).
    RandomUniform,
    /// Haar filters centred in zero-padded vectors.
    HaarPadded,
}

impl FromStr for FilterInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "random_uniform" => Ok(FilterInit::RandomUniform),
            "haar" | "haar_padded" => Ok(FilterInit::HaarPadded),
            other => Err(Error::invalid(format!("unknown filter init `{other}`"))),
        }
    }
}

impl std::fmt::Display for FilterInit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterInit::RandomUniform => "random",
            FilterInit::HaarPadded => "haar",
        })
    }
}

fn check_len(len: usize) -> Result<()> {
    if len < 2 || !len.is_multiple_of(2) {
        return Err(Error::invalid(format!("filter length must be even and at least 2, got {len}")));
    }
    Ok(())
}

impl FilterBank {
    pub fn new(h0: Vec<f64>, h1: Vec<f64>, f0: Vec<f64>, f1: Vec<f64>) -> Result<Self> {
        let len = h0.len();
        if h1.len() != len || f0.len() != len || f1.len() != len {
            return Err(Error::invalid(format!(
                "filter lengths differ: {} {} {} {}",
                h0.len(),
                h1.len(),
                f0.len(),
                f1.len()
            )));
        }
        check_len(len)?;
        Ok(FilterBank { h0, h1, f0, f1 })
    }

    pub fn haar() -> Self {
        FilterBank::haar_padded(2).expect("length 2 is valid")
    }

    /// Haar taps placed at the two centre positions of length-`len` filters.
    pub fn haar_padded(len: usize) -> Result<Self> {
        check_len(len)?;
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let c = len / 2 - 1;
        let mut fb = FilterBank { h0: vec![0.0; len], h1: vec![0.0; len], f0: vec![0.0; len], f1: vec![0.0; len] };
        fb.h0[c..c + 2].copy_from_slice(&[a, a]);
        fb.h1[c..c + 2].copy_from_slice(&[a, -a]);
        fb.f0[c..c + 2].copy_from_slice(&[a, a]);
        fb.f1[c..c + 2].copy_from_slice(&[-a, a]);
        Ok(fb)
    }

    /// Orthogonal bank generated by a low-pass filter through the
    /// alternating-flip relations: `h1[k] = (-1)^k h0[L-1-k]`,
    /// `f0[k] = h0[L-1-k]`, `f1[k] = -(-1)^k h0[k]`.
    pub fn orthogonal(h0: Vec<f64>) -> Result<Self> {
        let len = h0.len();
        check_len(len)?;
        let sign = |k: usize| if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        let h1 = (0..len).map(|k| sign(k) * h0[len - 1 - k]).collect();
        let f0 = (0..len).map(|k| h0[len - 1 - k]).collect();
        let f1 = (0..len).map(|k| -sign(k) * h0[k]).collect();
        FilterBank::new(h0, h1, f0, f1)
    }

    pub fn random_uniform<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<Self> {
        check_len(len)?;
        let mut draw = || (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let h0 = draw();
        let h1 = draw();
        let f0 = draw();
        let f1 = draw();
        Ok(FilterBank { h0, h1, f0, f1 })
    }

    pub fn taps(&self) -> usize {
        self.h0.len()
    }

    pub fn filters(&self) -> [&[f64]; 4] {
        [&self.h0, &self.h1, &self.f0, &self.f1]
    }

    pub fn pr_loss(&self) -> f64 {
        self.eval_loss(pr_loss)
    }

    pub fn ac_loss(&self) -> f64 {
        self.eval_loss(ac_loss)
    }

    pub fn wavelet_loss(&self) -> f64 {
        self.pr_loss() + self.ac_loss()
    }

    /// Whether `sign(f0[k]) == sign((−1)^k · h1[k])` at every tap with
    /// `|f0[k]| > threshold`, the alternation shared by orthogonal banks.
    pub fn alternating_signs(&self, threshold: f64) -> bool {
        self.f0.iter().zip(&self.h1).enumerate().all(|(k, (&f, &h))| {
            let alt = if k % 2 == 0 { h } else { -h };
            f.abs() <= threshold || f.signum() == alt.signum()
        })
    }

    fn eval_loss(&self, f: impl Fn(&mut Tape, &FilterVars) -> Result<Var>) -> f64 {
        let mut tape = Tape::new();
        let vars = FilterVars::constant(&mut tape, self);
        let loss = f(&mut tape, &vars).expect("filter bank invariants hold");
        tape.value(loss).item()
    }

    /// One line per filter in the order `h0 h1 f0 f1`, space-separated.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in self.filters() {
            s.push_str(&join_values(f));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != 4 {
            return Err(Error::invalid(format!("filter bank text needs 4 lines (h0 h1 f0 f1), found {}", lines.len())));
        }
        let mut parsed = lines.iter().map(|l| parse_values(l));
        let mut next = || parsed.next().expect("four lines");
        FilterBank::new(next()?, next()?, next()?, next()?)
    }
}

pub(crate) fn join_values(v: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x}").expect("write to string");
    }
    s
}

pub(crate) fn parse_values(line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|_| Error::invalid(format!("not a number: `{tok}`"))))
        .collect()
}

/// Builds a bank with the given initialisation; `seed` only matters for
/// [`FilterInit::RandomUniform`].
pub fn init_filterbank(mode: FilterInit, len: usize, seed: u64) -> Result<FilterBank> {
    match mode {
        FilterInit::RandomUniform => FilterBank::random_uniform(len, &mut ChaCha8Rng::seed_from_u64(seed)),
        FilterInit::HaarPadded => FilterBank::haar_padded(len),
    }
}

/// Filter bank registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterBankParams {
    pub h0: ParamId,
    pub h1: ParamId,
    pub f0: ParamId,
    pub f1: ParamId,
}

impl FilterBankParams {
    pub fn register(store: &mut ParamStore, prefix: &str, fb: &FilterBank) -> Self {
        FilterBankParams {
            h0: store.add(format!("{prefix}.h0"), Tensor::vector(fb.h0.clone())),
            h1: store.add(format!("{prefix}.h1"), Tensor::vector(fb.h1.clone())),
            f0: store.add(format!("{prefix}.f0"), Tensor::vector(fb.f0.clone())),
            f1: store.add(format!("{prefix}.f1"), Tensor::vector(fb.f1.clone())),
        }
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.h0, self.h1, self.f0, self.f1]
    }

    pub fn read(&self, store: &ParamStore) -> FilterBank {
        let get = |id| store.value(id).data().to_vec();
        FilterBank { h0: get(self.h0), h1: get(self.h1), f0: get(self.f0), f1: get(self.f1) }
    }

    pub fn write(&self, store: &mut ParamStore, fb: &FilterBank) -> Result<()> {
        for (id, f) in self.ids().into_iter().zip(fb.filters()) {
            store.set(id, Tensor::vector(f.to_vec()))?;
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, binding: &Binding) -> Result<FilterVars> {
        FilterVars::new(tape, binding.var(self.h0), binding.var(self.h1), binding.var(self.f0), binding.var(self.f1))
    }
}

/// A filter bank living on a tape, with the reversed synthesis filters
/// precomputed for the transposed convolutions.
#[derive(Clone, Copy, Debug)]
pub struct FilterVars {
    pub h0: Var,
    pub h1: Var,
    pub f0: Var,
    pub f1: Var,
    f0_rev: Var,
    f1_rev: Var,
    taps: usize,
}

impl FilterVars {
    pub fn new(tape: &mut Tape, h0: Var, h1: Var, f0: Var, f1: Var) -> Result<Self> {
        let taps = tape.value(h0).len();
        for v in [h1, f0, f1] {
            if tape.value(v).shape() != tape.value(h0).shape() {
                return Err(Error::dim("filter bank", tape.value(h0).shape(), tape.value(v).shape()));
            }
        }
        if tape.value(h0).shape() != [taps] {
            return Err(Error::dim("filter bank", tape.value(h0).shape(), &[taps]));
        }
        check_len(taps)?;
        let rev = Permutation::reversal(taps);
        let f0_rev = tape.permute(f0, &rev)?;
        let f1_rev = tape.permute(f1, &rev)?;
        Ok(FilterVars { h0, h1, f0, f1, f0_rev, f1_rev, taps })
    }

    /// Non-trainable copy of `fb` on the tape.
    pub fn constant(tape: &mut Tape, fb: &FilterBank) -> Self {
        let [h0, h1, f0, f1] = fb.filters().map(|f| tape.constant(Tensor::vector(f.to_vec())));
        FilterVars::new(tape, h0, h1, f0, f1).expect("FilterBank invariants hold")
    }

    /// Trainable copy of `fb` on the tape.
    pub fn leaves(tape: &mut Tape, fb: &FilterBank) -> Self {
        let [h0, h1, f0, f1] = fb.filters().map(|f| tape.leaf(Tensor::vector(f.to_vec()), true));
        FilterVars::new(tape, h0, h1, f0, f1).expect("FilterBank invariants hold")
    }

    pub fn taps(&self) -> usize {
        self.taps
    }
}

/// Multilevel wavelet coefficients. `details[0]` is the finest scale.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffPyramid<T> {
    pub approx: T,
    pub details: Vec<T>,
}

impl<T> CoeffPyramid<T> {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// References in flattened order: approx, coarsest detail, ..., finest detail.
    pub fn flat_order(&self) -> Vec<&T> {
        std::iter::once(&self.approx).chain(self.details.iter().rev()).collect()
    }
}

impl CoeffPyramid<Vec<f64>> {
    pub fn flatten(&self) -> Vec<f64> {
        self.flat_order().into_iter().flatten().copied().collect()
    }

    pub fn unflatten(flat: &[f64], levels: usize) -> Result<Self> {
        let n = flat.len();
        check_signal(n, levels)?;
        let sizes = band_sizes(n, levels);
        let mut offset = 0;
        let mut bands: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&s| {
                let b = flat[offset..offset + s].to_vec();
                offset += s;
                b
            })
            .collect();
        let approx = bands.remove(0);
        bands.reverse();
        Ok(CoeffPyramid { approx, details: bands })
    }
}

/// Band lengths in flattened order for a signal of length `n`.
pub fn band_sizes(n: usize, levels: usize) -> Vec<usize> {
    let coarse = n >> levels;
    let mut sizes = vec![coarse];
    for j in (1..=levels).rev() {
        sizes.push(n >> j);
    }
    sizes
}

fn check_signal(n: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::invalid("wavelet transform needs at least one level"));
    }
    if !n.is_power_of_two() || n < 2 {
        return Err(Error::invalid(format!("signal length {n} is not a power of two (pad before transforming)")));
    }
    if levels > n.trailing_zeros() as usize {
        return Err(Error::invalid(format!("{levels} levels exceed what a length-{n} signal allows")));
    }
    Ok(())
}

/// Levels used when none is requested: keep halving while the coarsest band
/// stays at least `taps` long, at least one level, at most `cap`.
pub fn default_levels(n: usize, taps: usize, cap: usize) -> usize {
    let mut levels = 0;
    let mut len = n;
    while len / 2 >= taps && len.is_multiple_of(2) && levels < cap {
        len /= 2;
        levels += 1;
    }
    levels.max(1).min(n.trailing_zeros().max(1) as usize)
}

/// Forward transform of every row of `x` (`[n]` or `[batch×n]`).
pub fn analyze(tape: &mut Tape, x: Var, fb: &FilterVars, levels: usize) -> Result<CoeffPyramid<Var>> {
    check_signal(tape.value(x).cols(), levels)?;
    let mut low = x;
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        details.push(tape.conv1d_strided(low, fb.h1, 2, Boundary::Circular)?);
        low = tape.conv1d_strided(low, fb.h0, 2, Boundary::Circular)?;
    }
    Ok(CoeffPyramid { approx: low, details })
}

/// Inverse transform.
pub fn synthesize(tape: &mut Tape, p: &CoeffPyramid<Var>, fb: &FilterVars) -> Result<Var> {
    if p.details.is_empty() {
        return Err(Error::invalid("pyramid has no levels"));
    }
    let mut low = p.approx;
    for &detail in p.details.iter().rev() {
        let len = tape.value(low).cols();
        if tape.value(detail).shape() != tape.value(low).shape() {
            return Err(Error::dim("synthesize", tape.value(low).shape(), tape.value(detail).shape()));
        }
        let a = tape.conv1d_transposed_strided(low, fb.f0_rev, 2, Boundary::Circular, 2 * len)?;
        let d = tape.conv1d_transposed_strided(detail, fb.f1_rev, 2, Boundary::Circular, 2 * len)?;
        low = tape.add(a, d)?;
    }
    Ok(low)
}

pub fn flatten(tape: &mut Tape, p: &CoeffPyramid<Var>) -> Result<Var> {
    let parts: Vec<Var> = p.flat_order().into_iter().copied().collect();
    tape.concat_cols(&parts)
}

pub fn unflatten(tape: &mut Tape, flat: Var, levels: usize) -> Result<CoeffPyramid<Var>> {
    let n = tape.value(flat).cols();
    check_signal(n, levels)?;
    let mut offset = 0;
    let mut bands = Vec::with_capacity(levels + 1);
    for size in band_sizes(n, levels) {
        bands.push(tape.slice_cols(flat, offset, size)?);
        offset += size;
    }
    let approx = bands.remove(0);
    bands.reverse();
    Ok(CoeffPyramid { approx, details: bands })
}

/// Transform of a single signal without recording a tape.
pub fn analyze_signal(x: &[f64], fb: &FilterBank, levels: usize) -> Result<CoeffPyramid<Vec<f64>>> {
    check_signal(x.len(), levels)?;
    let mut low = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let len = low.len();
        let half = len / 2;
        details.push(kernels::conv_forward(&low, 1, len, &fb.h1, 2, Boundary::Circular, half));
        low = kernels::conv_forward(&low, 1, len, &fb.h0, 2, Boundary::Circular, half);
    }
    Ok(CoeffPyramid { approx: low, details })
}

/// Inverse of [`analyze_signal`].
pub fn synthesize_signal(p: &CoeffPyramid<Vec<f64>>, fb: &FilterBank) -> Result<Vec<f64>> {
    if p.details.is_empty() {
        return Err(Error::invalid("pyramid has no levels"));
    }
    let f0: Vec<f64> = fb.f0.iter().rev().copied().collect();
    let f1: Vec<f64> = fb.f1.iter().rev().copied().collect();
    let mut low = p.approx.clone();
    for detail in p.details.iter().rev() {
        let half = low.len();
        if detail.len() != half {
            return Err(Error::dim("synthesize", &[half], &[detail.len()]));
        }
        let mut a = kernels::conv_transpose(&low, 1, half, &f0, 2, Boundary::Circular, 2 * half);
        let d = kernels::conv_transpose(detail, 1, half, &f1, 2, Boundary::Circular, 2 * half);
        for (x, y) in a.iter_mut().zip(d) {
            *x += y;
        }
        low = a;
    }
    Ok(low)
}

/// Multiply-adds performed by [`analyze_signal`]: `Σ_j 2·L·n/2^j`.
pub fn analysis_cost(n: usize, taps: usize, levels: usize) -> usize {
    (1..=levels).map(|j| 2 * taps * (n >> j)).sum()
}

/// Squared deviation of `h0*f0 + h1*f1` from `2` at index `L-1` and zero elsewhere.
pub fn pr_loss(tape: &mut Tape, fb: &FilterVars) -> Result<Var> {
    let a = tape.poly_mul(fb.h0, fb.f0)?;
    let b = tape.poly_mul(fb.h1, fb.f1)?;
    let sum = tape.add(a, b)?;
    let mut target = vec![0.0; 2 * fb.taps - 1];
    target[fb.taps - 1] = 2.0;
    let target = tape.constant(Tensor::vector(target));
    let dev = tape.sub(sum, target)?;
    let sq = tape.mul(dev, dev)?;
    Ok(tape.sum(sq))
}

/// Squared deviation from `f0[k] = (-1)^k h1[k]` and `f1[k] = -(-1)^k h0[k]`.
pub fn ac_loss(tape: &mut Tape, fb: &FilterVars) -> Result<Var> {
    let alt: Vec<f64> = (0..fb.taps).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let alt = tape.constant(Tensor::vector(alt));
    let h1_alt = tape.mul(fb.h1, alt)?;
    let e0 = tape.sub(fb.f0, h1_alt)?;
    let h0_alt = tape.mul(fb.h0, alt)?;
    let e1 = tape.add(fb.f1, h0_alt)?;
    let both = tape.concat_cols(&[e0, e1])?;
    let sq = tape.mul(both, both)?;
    Ok(tape.sum(sq))
}

/// `Σ (pr_loss + ac_loss)` over all banks; zero for an empty list.
pub fn wavelet_loss(tape: &mut Tape, banks: &[FilterVars]) -> Result<Var> {
    let mut total = tape.constant(Tensor::scalar(0.0));
    for fb in banks {
        let pr = pr_loss(tape, fb)?;
        let ac = ac_loss(tape, fb)?;
        let both = tape.add(pr, ac)?;
        total = tape.add(total, both)?;
    }
    Ok(total)
}

/// Explicit `n×n` analysis matrix, one column per transformed unit vector,
/// rows in flattened pyramid order.
pub fn build_analysis_matrix(fb: &FilterBank, n: usize, levels: usize) -> Result<Tensor> {
    check_signal(n, levels)?;
    let mut m = Tensor::zeros(&[n, n]);
    let mut e = vec![0.0; n];
    for col in 0..n {
        e.fill(0.0);
        e[col] = 1.0;
        let flat = analyze_signal(&e, fb, levels)?.flatten();
        for (row, v) in flat.into_iter().enumerate() {
            m.data_mut()[row * n + col] = v;
        }
    }
    Ok(m)
}

/// Explicit `n×n` synthesis matrix acting on flattened pyramids.
pub fn build_synthesis_matrix(fb: &FilterBank, n: usize, levels: usize) -> Result<Tensor> {
    check_signal(n, levels)?;
    let mut m = Tensor::zeros(&[n, n]);
    let mut e = vec![0.0; n];
    for col in 0..n {
        e.fill(0.0);
        e[col] = 1.0;
        let x = synthesize_signal(&CoeffPyramid::unflatten(&e, levels)?, fb)?;
        for (row, v) in x.into_iter().enumerate() {
            m.data_mut()[row * n + col] = v;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn sign_pattern() {
        assert!(FilterBank::haar_padded(6).unwrap().alternating_signs(1e-3));
        let ortho = FilterBank::orthogonal(vec![0.3, 0.8, 0.4, -0.1]).unwrap();
        assert!(ortho.alternating_signs(1e-3));
        let mut flipped = ortho.clone();
        flipped.f0[1] = -flipped.f0[1];
        assert!(!flipped.alternating_signs(1e-3));
        flipped.f0[1] = 1e-4;
        assert!(flipped.alternating_signs(1e-3));
    }

    #[test]
    fn haar_two_level_hand_case() {
        let p = analyze_signal(&[1.0; 4], &FilterBank::haar(), 2).unwrap();
        assert_eq!(p.levels(), 2);
        assert!(p.details[0].iter().all(|v| v.abs() < 1e-15));
        assert_eq!(p.details[0].len(), 2);
        assert!(p.details[1][0].abs() < 1e-15);
        assert!((p.approx[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_signal_and_zero_pyramid() {
        let fb = FilterBank::haar_padded(6).unwrap();
        let p = analyze_signal(&[0.0; 16], &fb, 2).unwrap();
        assert!(p.flatten().iter().all(|&v| v == 0.0));
        let x = synthesize_signal(&p, &fb).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_power_of_two_and_bad_levels() {
        let fb = FilterBank::haar();
        assert!(matches!(analyze_signal(&[1.0; 12], &fb, 1), Err(Error::Validation(_))));
        assert!(analyze_signal(&[1.0; 8], &fb, 4).is_err());
        assert!(analyze_signal(&[1.0; 8], &fb, 0).is_err());
    }

    #[test]
    fn haar_losses_vanish() {
        let fb = FilterBank::haar();
        assert!(fb.pr_loss() < 1e-30);
        assert_eq!(fb.ac_loss(), 0.0);
        let padded = FilterBank::haar_padded(6).unwrap();
        assert_eq!(padded.h0, vec![0.0, 0.0, A, A, 0.0, 0.0]);
        assert!(padded.wavelet_loss() < 1e-30);
    }

    #[test]
    fn zero_filters_give_pr_loss_four() {
        let z = vec![0.0; 6];
        let fb = FilterBank::new(z.clone(), z.clone(), z.clone(), z).unwrap();
        assert_eq!(fb.pr_loss(), 4.0);
        assert_eq!(fb.ac_loss(), 0.0);
    }

    #[test]
    fn ac_loss_positive_when_sign_pattern_broken() {
        let mut fb = FilterBank::haar();
        fb.f0 = fb.h1.clone(); // f0 = [a, -a], needs [a, a]
        assert!(fb.ac_loss() > 0.0);
    }

    #[test]
    fn wavelet_loss_sums_banks() {
        let mut tape = Tape::new();
        let empty = wavelet_loss(&mut tape, &[]).unwrap();
        assert_eq!(tape.value(empty).item(), 0.0);

        let r1 = init_filterbank(FilterInit::RandomUniform, 6, 1).unwrap();
        let r2 = init_filterbank(FilterInit::RandomUniform, 6, 2).unwrap();
        let v1 = FilterVars::constant(&mut tape, &r1);
        let v2 = FilterVars::constant(&mut tape, &r2);
        let both = wavelet_loss(&mut tape, &[v1, v2]).unwrap();
        let expect = r1.wavelet_loss() + r2.wavelet_loss();
        assert!((tape.value(both).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn init_modes() {
        assert!(init_filterbank(FilterInit::HaarPadded, 5, 0).is_err());
        let a = init_filterbank(FilterInit::RandomUniform, 6, 7).unwrap();
        let b = init_filterbank(FilterInit::RandomUniform, 6, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.filters().iter().all(|f| f.iter().all(|v| (-1.0..1.0).contains(v))));
        assert_ne!(a, init_filterbank(FilterInit::RandomUniform, 6, 8).unwrap());
        assert_eq!("haar".parse::<FilterInit>().unwrap(), FilterInit::HaarPadded);
        assert!("db4".parse::<FilterInit>().is_err());
    }

    #[test]
    fn haar_analysis_matrix_n2() {
        let m = build_analysis_matrix(&FilterBank::haar(), 2, 1).unwrap();
        let expect = [A, A, A, -A];
        for (v, e) in m.data().iter().zip(expect) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn default_levels_rule() {
        assert_eq!(default_levels(64, 6, 6), 3);
        assert_eq!(default_levels(512, 6, 6), 6);
        assert_eq!(default_levels(1 << 20, 6, 6), 6);
        assert_eq!(default_levels(8, 6, 6), 1);
        assert_eq!(default_levels(64, 2, 3), 3);
    }

    #[test]
    fn band_layout() {
        assert_eq!(band_sizes(16, 3), vec![2, 2, 4, 8]);
        let p = analyze_signal(&(0..16).map(f64::from).collect::<Vec<_>>(), &FilterBank::haar(), 3).unwrap();
        let flat = p.flatten();
        assert_eq!(CoeffPyramid::unflatten(&flat, 3).unwrap(), p);
    }

    #[test]
    fn text_round_trip() {
        let fb = init_filterbank(FilterInit::RandomUniform, 6, 11).unwrap();
        let text = fb.to_text();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(FilterBank::from_text(&text).unwrap(), fb);
        assert!(FilterBank::from_text("1 2\n3 4\n").is_err());
        assert!(FilterBank::from_text("1 2\n3 4\n5 x\n7 8\n").is_err());
    }

    #[test]
    fn cost_is_linear() {
        assert!(analysis_cost(1 << 16, 6, 6) <= 2 * 6 * 2 * (1 << 16));
        assert_eq!(analysis_cost(16, 2, 1), 32);
    }
}
