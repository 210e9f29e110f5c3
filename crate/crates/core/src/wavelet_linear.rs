//! Structured linear layer `y = D · FWT⁻¹ · G · Π · FWT · B · x`.
//!
//! `D`, `G`, `B` are trainable diagonals (initialised to ones), `Π` is a fixed
//! random permutation of the flattened coefficient vector and the filter bank
//! is trainable. A layer of size `n` has `3n + 4L` trainable scalars.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Permutation, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fwt::{
    self, build_analysis_matrix, build_synthesis_matrix, default_levels, init_filterbank, join_values, parse_values,
    FilterBank, FilterBankParams, FilterInit, FilterVars,
};
use crate::params::{Binding, ParamId, ParamStore};

/// Construction options shared by every wavelet layer of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub filter_len: usize,
    pub filter_init: FilterInit,
    /// Upper bound on transform levels; the actual count also keeps the
    /// coarsest band at least `filter_len` long.
    pub max_levels: usize,
    pub dropout_p: f64,
}

impl Default for LayerSpec {
    fn default() -> Self {
        LayerSpec { filter_len: 6, filter_init: FilterInit::HaarPadded, max_levels: 6, dropout_p: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct WaveletLinear {
    n: usize,
    levels: usize,
    dropout_p: f64,
    perm: Permutation,
    pub d: ParamId,
    pub g: ParamId,
    pub b: ParamId,
    pub fb: FilterBankParams,
}

fn check_size(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::invalid(format!("wavelet layer size must be a power of two >= 2, got {n}")));
    }
    Ok(())
}

fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout probability {p} not in [0, 1)")));
    }
    Ok(())
}

impl WaveletLinear {
    /// Fresh layer: unit diagonals, seeded random permutation, filter bank
    /// from `spec.filter_init`.
    pub fn init(store: &mut ParamStore, name: &str, n: usize, spec: &LayerSpec, seed: u64) -> Result<Self> {
        check_size(n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perm = Permutation::random(n, &mut rng);
        let fb = init_filterbank(spec.filter_init, spec.filter_len, rng.gen())?;
        let fb = FilterBankParams::register(store, &format!("{name}.fb"), &fb);
        let levels = default_levels(n, spec.filter_len, spec.max_levels);
        WaveletLinear::with_parts(store, name, n, levels, perm, fb, spec.dropout_p)
    }

    /// Layer around an existing (possibly shared) filter bank.
    pub fn with_parts(
        store: &mut ParamStore,
        name: &str,
        n: usize,
        levels: usize,
        perm: Permutation,
        fb: FilterBankParams,
        dropout_p: f64,
    ) -> Result<Self> {
        check_size(n)?;
        check_dropout(dropout_p)?;
        if perm.len() != n {
            return Err(Error::invalid(format!("permutation has length {}, layer size is {n}", perm.len())));
        }
        if levels == 0 || levels > n.trailing_zeros() as usize {
            return Err(Error::invalid(format!("{levels} levels invalid for size {n}")));
        }
        let ones = || Tensor::full(&[n], 1.0);
        Ok(WaveletLinear {
            n,
            levels,
            dropout_p,
            perm,
            d: store.add(format!("{name}.d"), ones()),
            g: store.add(format!("{name}.g"), ones()),
            b: store.add(format!("{name}.b"), ones()),
            fb,
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        check_dropout(p)?;
        self.dropout_p = p;
        Ok(())
    }

    pub fn permutation(&self) -> &Permutation {
        &self.perm
    }

    pub fn filter_len(&self, store: &ParamStore) -> usize {
        store.value(self.fb.h0).len()
    }

    /// `3n + 4L`; the permutation is fixed and not counted.
    pub fn param_count(&self, store: &ParamStore) -> usize {
        3 * self.n + 4 * self.filter_len(store)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.d, self.g, self.b];
        ids.extend(self.fb.ids());
        ids
    }

    /// Applies the layer to every row of `x[batch×n]`. When `dropout` is given
    /// and the layer's dropout probability is positive, independent
    /// inverted-dropout masks are applied to `d`, `g` and `b`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        x: Var,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let fv = self.fb.bind(tape, binding)?;
        self.forward_with(tape, binding, x, &fv, dropout)
    }

    /// As [`WaveletLinear::forward`] with filters already on the tape, so
    /// tiles can share one bank.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        x: Var,
        fv: &FilterVars,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let width = tape.value(x).cols();
        if width != self.n {
            return Err(Error::dim("wavelet_linear", tape.value(x).shape(), &[self.n]));
        }
        let (mut d, mut g, mut b) = (binding.var(self.d), binding.var(self.g), binding.var(self.b));
        if let Some(rng) = dropout {
            if self.dropout_p > 0.0 {
                d = self.drop(tape, d, rng)?;
                g = self.drop(tape, g, rng)?;
                b = self.drop(tape, b, rng)?;
            }
        }
        let xb = tape.diag_scale(x, b)?;
        let coeffs = fwt::analyze(tape, xb, fv, self.levels)?;
        let flat = fwt::flatten(tape, &coeffs)?;
        let mixed = tape.permute(flat, &self.perm)?;
        let mixed = tape.diag_scale(mixed, g)?;
        let coeffs = fwt::unflatten(tape, mixed, self.levels)?;
        let y = fwt::synthesize(tape, &coeffs, fv)?;
        tape.diag_scale(y, d)
    }

    fn drop(&self, tape: &mut Tape, v: Var, rng: &mut dyn RngCore) -> Result<Var> {
        let keep = 1.0 - self.dropout_p;
        let mask: Vec<f64> =
            (0..self.n).map(|_| if rng.gen::<f64>() < self.dropout_p { 0.0 } else { 1.0 / keep }).collect();
        let mask = tape.constant(Tensor::vector(mask));
        tape.mul(v, mask)
    }

    /// The dense `n×n` matrix `M` with `y = M x`, assembled from explicit
    /// transform, permutation and diagonal matrices.
    pub fn explicit_matrix(&self, store: &ParamStore) -> Result<Tensor> {
        let n = self.n;
        let fb = self.fb.read(store);
        let a = build_analysis_matrix(&fb, n, self.levels)?;
        let s = build_synthesis_matrix(&fb, n, self.levels)?;
        let (d, g, b) = (store.value(self.d).data(), store.value(self.g).data(), store.value(self.b).data());
        // (G·Π·A·B)[i, j] = g[i] · A[perm[i], j] · b[j]
        let mut inner = vec![0.0; n * n];
        for i in 0..n {
            let src = self.perm.indices()[i];
            for j in 0..n {
                inner[i * n + j] = g[i] * a.at(src, j) * b[j];
            }
        }
        let mut m = crate::autodiff::kernels::matmul(s.data(), &inner, n, n, n);
        for (i, row) in m.chunks_mut(n).enumerate() {
            for v in row {
                *v *= d[i];
            }
        }
        Tensor::matrix(n, n, m)
    }

    /// Text checkpoint: header `n L levels dropout_p`, permutation indices,
    /// the four filters (`h0 h1 f0 f1`), then `d`, `g`, `b`; one line each.
    pub fn to_text(&self, store: &ParamStore) -> String {
        let fb = self.fb.read(store);
        let mut s = format!("{} {} {} {}\n", self.n, fb.taps(), self.levels, self.dropout_p);
        let perm: Vec<String> = self.perm.indices().iter().map(|i| i.to_string()).collect();
        s.push_str(&perm.join(" "));
        s.push('\n');
        s.push_str(&fb.to_text());
        for id in [self.d, self.g, self.b] {
            s.push_str(&join_values(store.value(id).data()));
            s.push('\n');
        }
        s
    }

    /// Number of lines written by [`WaveletLinear::to_text`].
    pub const TEXT_LINES: usize = 9;

    /// Registers a layer read from [`WaveletLinear::to_text`] output.
    pub fn from_text(store: &mut ParamStore, name: &str, text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != Self::TEXT_LINES {
            return Err(Error::invalid(format!(
                "wavelet layer text needs {} lines, found {}",
                Self::TEXT_LINES,
                lines.len()
            )));
        }
        let header: Vec<&str> = lines[0].split_whitespace().collect();
        if header.len() != 4 {
            return Err(Error::invalid("layer header must be `n L levels dropout_p`"));
        }
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| Error::invalid(format!("not an integer: `{s}`")));
        let n = parse_usize(header[0])?;
        let taps = parse_usize(header[1])?;
        let levels = parse_usize(header[2])?;
        let dropout_p: f64 = header[3].parse().map_err(|_| Error::invalid(format!("not a number: `{}`", header[3])))?;
        let perm = lines[1].split_whitespace().map(parse_usize).collect::<Result<Vec<_>>>()?;
        let perm = Permutation::new(perm)?;
        let fb = FilterBank::from_text(&lines[2..6].join("\n"))?;
        if fb.taps() != taps {
            return Err(Error::invalid(format!("header declares {taps} taps, filters have {}", fb.taps())));
        }
        let fbp = FilterBankParams::register(store, &format!("{name}.fb"), &fb);
        let layer = WaveletLinear::with_parts(store, name, n, levels, perm, fbp, dropout_p)?;
        for (line, id) in lines[6..].iter().zip([layer.d, layer.g, layer.b]) {
            let v = parse_values(line)?;
            if v.len() != n {
                return Err(Error::invalid(format!("diagonal has {} values, expected {n}", v.len())));
            }
            store.set(id, Tensor::vector(v))?;
        }
        Ok(layer)
    }

    /// Overwrites this layer's permutation, dropout rate and parameters
    /// from [`WaveletLinear::to_text`] output of the same shape.
    pub fn load_text(&mut self, store: &mut ParamStore, text: &str) -> Result<()> {
        let mut scratch = ParamStore::new();
        let other = WaveletLinear::from_text(&mut scratch, "scratch", text)?;
        if other.n != self.n || other.levels != self.levels {
            return Err(Error::invalid(format!(
                "layer text has n={} levels={}, expected n={} levels={}",
                other.n, other.levels, self.n, self.levels
            )));
        }
        let fb = other.fb.read(&scratch);
        if fb.taps() != self.filter_len(store) {
            return Err(Error::invalid("filter length differs from the layer's"));
        }
        self.fb.write(store, &fb)?;
        for (dst, src) in [(self.d, other.d), (self.g, other.g), (self.b, other.b)] {
            store.set(dst, scratch.value(src).clone())?;
        }
        self.perm = other.perm;
        self.dropout_p = other.dropout_p;
        Ok(())
    }
}

/// Applies square tiles sharing one filter bank to `x[batch×m]`: the input is
/// zero-padded to the tile size, tile outputs are concatenated and truncated
/// to `out_dim` columns.
pub fn forward_rect(
    tape: &mut Tape,
    binding: &Binding,
    x: Var,
    tiles: &[WaveletLinear],
    out_dim: usize,
    mut dropout: Option<&mut dyn RngCore>,
) -> Result<Var> {
    let first = tiles.first().ok_or_else(|| Error::invalid("forward_rect needs at least one tile"))?;
    let n = first.size();
    if tiles.iter().any(|t| t.size() != n || t.fb != first.fb) {
        return Err(Error::invalid("tiles must share size and filter bank"));
    }
    if out_dim == 0 || out_dim > tiles.len() * n {
        return Err(Error::invalid(format!("output width {out_dim} exceeds {} tiles of size {n}", tiles.len())));
    }
    let m = tape.value(x).cols();
    if m > n {
        return Err(Error::dim("forward_rect", tape.value(x).shape(), &[n]));
    }
    let padded = if m < n {
        let rows = tape.value(x).rows();
        let zeros = tape.constant(Tensor::zeros(&[rows, n - m]));
        tape.concat_cols(&[x, zeros])?
    } else {
        x
    };
    let fv = first.fb.bind(tape, binding)?;
    let mut outs = Vec::with_capacity(tiles.len());
    for tile in tiles {
        let rng = dropout.as_mut().map(|r| &mut **r as &mut dyn RngCore);
        outs.push(tile.forward_with(tape, binding, padded, &fv, rng)?);
    }
    let y = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    if out_dim == tiles.len() * n {
        Ok(y)
    } else {
        tape.slice_cols(y, 0, out_dim)
    }
}

/// Non-square wavelet layer built from tied square tiles.
#[derive(Clone, Debug)]
pub struct RectWavelet {
    in_dim: usize,
    out_dim: usize,
    tiles: Vec<WaveletLinear>,
}

impl RectWavelet {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        spec: &LayerSpec,
        seed: u64,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        let n = in_dim.next_power_of_two().max(2);
        let count = out_dim.div_ceil(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fb = init_filterbank(spec.filter_init, spec.filter_len, rng.gen())?;
        let fb = FilterBankParams::register(store, &format!("{name}.fb"), &fb);
        let levels = default_levels(n, spec.filter_len, spec.max_levels);
        let tiles = (0..count)
            .map(|i| {
                let perm = Permutation::random(n, &mut rng);
                WaveletLinear::with_parts(store, &format!("{name}.tile{i}"), n, levels, perm, fb, spec.dropout_p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RectWavelet { in_dim, out_dim, tiles })
    }

    pub fn tiles(&self) -> &[WaveletLinear] {
        &self.tiles
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn filter_bank(&self) -> FilterBankParams {
        self.tiles[0].fb
    }

    /// Tile diagonals plus one shared filter bank.
    pub fn param_count(&self, store: &ParamStore) -> usize {
        let n = self.tiles[0].size();
        self.tiles.len() * 3 * n + 4 * self.tiles[0].filter_len(store)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        x: Var,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        if tape.value(x).cols() != self.in_dim {
            return Err(Error::dim("rect_wavelet", tape.value(x).shape(), &[self.in_dim]));
        }
        forward_rect(tape, binding, x, &self.tiles, self.out_dim, dropout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_defaults() {
        let mut store = ParamStore::new();
        let layer = WaveletLinear::init(&mut store, "w", 4, &LayerSpec::default(), 1).unwrap();
        assert_eq!(store.value(layer.d).data(), &[1.0; 4]);
        assert_eq!(store.value(layer.g).data(), &[1.0; 4]);
        assert_eq!(store.value(layer.b).data(), &[1.0; 4]);
        assert!(WaveletLinear::init(&mut store, "bad", 12, &LayerSpec::default(), 1).is_err());
    }

    #[test]
    fn same_seed_same_permutation() {
        let mut s = ParamStore::new();
        let a = WaveletLinear::init(&mut s, "a", 64, &LayerSpec::default(), 9).unwrap();
        let b = WaveletLinear::init(&mut s, "b", 64, &LayerSpec::default(), 9).unwrap();
        let c = WaveletLinear::init(&mut s, "c", 64, &LayerSpec::default(), 10).unwrap();
        assert_eq!(a.permutation(), b.permutation());
        assert_ne!(a.permutation(), c.permutation());
    }

    #[test]
    fn parameter_counts() {
        let mut s = ParamStore::new();
        let big = WaveletLinear::init(&mut s, "big", 512, &LayerSpec::default(), 0).unwrap();
        assert_eq!(big.param_count(&s), 1560);
        assert_eq!(s.num_scalars(), 1560);
        assert_eq!(big.levels(), 6);
        let spec = LayerSpec { filter_len: 2, ..LayerSpec::default() };
        let mut s = ParamStore::new();
        let small = WaveletLinear::init(&mut s, "small", 8, &spec, 0).unwrap();
        assert_eq!(small.param_count(&s), 32);
        let ratio: f64 = (512.0 * 512.0) / 1560.0;
        assert!((ratio - 168.04).abs() < 0.01);
    }

    #[test]
    fn width_mismatch() {
        let mut s = ParamStore::new();
        let layer = WaveletLinear::init(&mut s, "w", 8, &LayerSpec::default(), 0).unwrap();
        let mut tape = Tape::new();
        let b = s.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(layer.forward(&mut tape, &b, x, None), Err(Error::Dimension { .. })));
    }

    #[test]
    fn rect_rejects_oversized_output() {
        let mut s = ParamStore::new();
        let r = RectWavelet::init(&mut s, "r", 3, 4, &LayerSpec::default(), 0).unwrap();
        let mut tape = Tape::new();
        let b = s.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(forward_rect(&mut tape, &b, x, r.tiles(), 9, None).is_err());
        assert!(forward_rect(&mut tape, &b, x, r.tiles(), 4, None).is_ok());
    }

    #[test]
    fn text_round_trip() {
        let mut s = ParamStore::new();
        let spec = LayerSpec { filter_init: FilterInit::RandomUniform, dropout_p: 0.25, ..LayerSpec::default() };
        let layer = WaveletLinear::init(&mut s, "w", 16, &spec, 3).unwrap();
        s.value_mut(layer.g).data_mut()[3] = -0.125;
        let text = layer.to_text(&s);
        let mut s2 = ParamStore::new();
        let back = WaveletLinear::from_text(&mut s2, "w", &text).unwrap();
        assert_eq!(back.to_text(&s2), text);
        assert_eq!(back.permutation(), layer.permutation());
        assert_eq!(back.dropout_p(), 0.25);
        assert!(WaveletLinear::from_text(&mut s2, "x", "4 6 1 0\n0 1 2\n").is_err());
    }
}
