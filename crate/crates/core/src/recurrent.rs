//! GRU cell with any subset of its recurrent matrices replaced by
//! wavelet-linear layers.
//!
//! Row-vector convention throughout: a batch of states is `h[batch×n_h]` and
//! dense maps are stored so that they act as `h · W`.
//!
//! ```text
//! g_r = σ(R_r(h) + x V_r + b_r)
//! g_z = σ(R_z(h) + x V_z + b_z)
//! z   = R(g_r ⊙ h) + x V + b
//! h'  = g_z ⊙ tanh(z) + (1 − g_z) ⊙ h
//! ```

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fwt::{FilterBankParams, FilterVars};
use crate::params::{Binding, ParamId, ParamStore};
use crate::wavelet_linear::{LayerSpec, WaveletLinear};

/// The three recurrent matrices of a GRU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gate {
    State,
    Reset,
    Update,
}

impl Gate {
    pub const ALL: [Gate; 3] = [Gate::State, Gate::Reset, Gate::Update];

    pub fn name(self) -> &'static str {
        match self {
            Gate::State => "state",
            Gate::Reset => "reset",
            Gate::Update => "update",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Which recurrent matrices are wavelet-compressed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CompressSet([bool; 3]);

impl CompressSet {
    pub fn none() -> Self {
        CompressSet([false; 3])
    }

    pub fn all() -> Self {
        CompressSet([true; 3])
    }

    pub fn only(gates: &[Gate]) -> Self {
        let mut s = CompressSet::none();
        for &g in gates {
            s.0[g.index()] = true;
        }
        s
    }

    pub fn contains(self, g: Gate) -> bool {
        self.0[g.index()]
    }

    pub fn len(self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

impl FromStr for CompressSet {
    type Err = Error;

    /// Comma-separated subset of `state,reset,update`; `none` and the empty
    /// string mean no compression, `all` means all three.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "" | "none" => return Ok(CompressSet::none()),
            "all" => return Ok(CompressSet::all()),
            _ => {}
        }
        let mut set = CompressSet::none();
        for part in s.split(',') {
            let gate = match part.trim() {
                "state" => Gate::State,
                "reset" => Gate::Reset,
                "update" => Gate::Update,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown recurrent matrix `{other}` (expected state, reset or update)"
                    )))
                }
            };
            set.0[gate.index()] = true;
        }
        Ok(set)
    }
}

impl fmt::Display for CompressSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = Gate::ALL.iter().filter(|g| self.contains(**g)).map(|g| g.name()).collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruConfig {
    pub n_in: usize,
    pub n_h: usize,
    /// Width of the dense readout head; `None` for no head.
    pub n_out: Option<usize>,
    pub compress: CompressSet,
    pub layer: LayerSpec,
}

impl GruConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.n_h == 0 || self.n_out == Some(0) {
            return Err(Error::invalid("GRU dimensions must be positive"));
        }
        if !self.compress.is_empty() && (!self.n_h.is_power_of_two() || self.n_h < 2) {
            return Err(Error::invalid(format!(
                "hidden size {} must be a power of two when a recurrent matrix is compressed",
                self.n_h
            )));
        }
        Ok(())
    }

    /// Exact trainable-scalar count.
    pub fn count_params(&self) -> usize {
        let n = self.n_h;
        let recurrent: usize = Gate::ALL
            .iter()
            .map(|&g| if self.compress.contains(g) { 3 * n + 4 * self.layer.filter_len } else { n * n })
            .sum();
        let readout = self.n_out.map_or(0, |o| o * n + o);
        recurrent + 3 * n * self.n_in + 3 * n + readout
    }
}

#[derive(Clone, Debug)]
pub enum RecurrentMap {
    Dense(ParamId),
    Wavelet(WaveletLinear),
}

#[derive(Clone, Debug)]
pub struct Gru {
    config: GruConfig,
    maps: [RecurrentMap; 3],
    inputs: [ParamId; 3],
    biases: [ParamId; 3],
    readout: Option<(ParamId, ParamId)>,
}

/// Per-tape state shared by all unrolled steps: the parameter binding and
/// the filter banks already placed on the tape.
pub struct StepContext<'a> {
    binding: &'a Binding,
    filters: [Option<FilterVars>; 3],
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

impl Gru {
    /// Dense matrices, input weights and the readout from
    /// `U(−1/√n_h, 1/√n_h)`; biases zero; wavelet layers at their defaults.
    pub fn init(store: &mut ParamStore, prefix: &str, config: GruConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.n_h;
        let bound = 1.0 / (n as f64).sqrt();
        let mut maps = Vec::with_capacity(3);
        for gate in Gate::ALL {
            let name = format!("{prefix}{}", gate.name());
            let map = if config.compress.contains(gate) {
                RecurrentMap::Wavelet(WaveletLinear::init(store, &format!("{name}.W"), n, &config.layer, rng.gen())?)
            } else {
                RecurrentMap::Dense(store.add(format!("{name}.W"), uniform(n, n, bound, &mut rng)))
            };
            maps.push(map);
        }
        let inputs =
            Gate::ALL.map(|g| store.add(format!("{prefix}{}.V", g.name()), uniform(config.n_in, n, bound, &mut rng)));
        let biases = Gate::ALL.map(|g| store.add(format!("{prefix}{}.b", g.name()), Tensor::zeros(&[n])));
        let readout = config.n_out.map(|o| {
            let w = store.add(format!("{prefix}readout.W"), uniform(n, o, bound, &mut rng));
            let b = store.add(format!("{prefix}readout.b"), Tensor::zeros(&[o]));
            (w, b)
        });
        let maps: [RecurrentMap; 3] = maps.try_into().expect("three gates");
        Ok(Gru { config, maps, inputs, biases, readout })
    }

    /// Assembles a GRU from parameters already in a store (checkpoint loading).
    pub fn from_parts(
        config: GruConfig,
        maps: [RecurrentMap; 3],
        inputs: [ParamId; 3],
        biases: [ParamId; 3],
        readout: Option<(ParamId, ParamId)>,
    ) -> Result<Self> {
        config.validate()?;
        for (gate, map) in Gate::ALL.iter().zip(&maps) {
            if matches!(map, RecurrentMap::Wavelet(_)) != config.compress.contains(*gate) {
                return Err(Error::invalid(format!("{} map disagrees with compression set", gate.name())));
            }
        }
        if readout.is_some() != config.n_out.is_some() {
            return Err(Error::invalid("readout presence disagrees with config"));
        }
        Ok(Gru { config, maps, inputs, biases, readout })
    }

    pub fn config(&self) -> &GruConfig {
        &self.config
    }

    pub fn map(&self, gate: Gate) -> &RecurrentMap {
        &self.maps[gate.index()]
    }

    pub fn input_weight(&self, gate: Gate) -> ParamId {
        self.inputs[gate.index()]
    }

    pub fn bias(&self, gate: Gate) -> ParamId {
        self.biases[gate.index()]
    }

    pub fn readout_params(&self) -> Option<(ParamId, ParamId)> {
        self.readout
    }

    pub fn wavelet_layers(&self) -> impl Iterator<Item = (Gate, &WaveletLinear)> {
        Gate::ALL.into_iter().zip(&self.maps).filter_map(|(g, m)| match m {
            RecurrentMap::Wavelet(w) => Some((g, w)),
            RecurrentMap::Dense(_) => None,
        })
    }

    pub fn wavelet_layers_mut(&mut self) -> impl Iterator<Item = &mut WaveletLinear> {
        self.maps.iter_mut().filter_map(|m| match m {
            RecurrentMap::Wavelet(w) => Some(w),
            RecurrentMap::Dense(_) => None,
        })
    }

    pub fn filter_banks(&self) -> Vec<FilterBankParams> {
        self.wavelet_layers().map(|(_, w)| w.fb).collect()
    }

    /// Every parameter this model owns.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for m in &self.maps {
            match m {
                RecurrentMap::Dense(w) => ids.push(*w),
                RecurrentMap::Wavelet(w) => ids.extend(w.trainable_ids()),
            }
        }
        ids.extend(self.inputs);
        ids.extend(self.biases);
        if let Some((w, b)) = self.readout {
            ids.extend([w, b]);
        }
        ids
    }

    /// Counted from the store; agrees with [`GruConfig::count_params`].
    pub fn count_params(&self, store: &ParamStore) -> usize {
        self.param_ids().iter().map(|&id| store.value(id).len()).sum()
    }

    pub fn context<'a>(&self, tape: &mut Tape, binding: &'a Binding) -> Result<StepContext<'a>> {
        let mut filters = [None; 3];
        for (slot, m) in filters.iter_mut().zip(&self.maps) {
            if let RecurrentMap::Wavelet(w) = m {
                *slot = Some(w.fb.bind(tape, binding)?);
            }
        }
        Ok(StepContext { binding, filters })
    }

    fn apply_map(&self, tape: &mut Tape, ctx: &StepContext, gate: Gate, h: Var) -> Result<Var> {
        match &self.maps[gate.index()] {
            RecurrentMap::Dense(w) => tape.matmul(h, ctx.binding.var(*w)),
            RecurrentMap::Wavelet(layer) => {
                let fv = ctx.filters[gate.index()].as_ref().expect("bound in context");
                layer.forward_with(tape, ctx.binding, h, fv, None)
            }
        }
    }

    fn input_term(&self, tape: &mut Tape, ctx: &StepContext, gate: Gate, x: Var) -> Result<Var> {
        let xv = tape.matmul(x, ctx.binding.var(self.inputs[gate.index()]))?;
        tape.add_bias(xv, ctx.binding.var(self.biases[gate.index()]))
    }

    /// One step from `h[batch×n_h]` with input `x[batch×n_in]`.
    pub fn step(&self, tape: &mut Tape, ctx: &StepContext, h: Var, x: Var) -> Result<Var> {
        let (hs, xs) = (tape.value(h).shape().to_vec(), tape.value(x).shape().to_vec());
        if hs.len() != 2 || xs.len() != 2 || hs[1] != self.config.n_h || xs[1] != self.config.n_in || hs[0] != xs[0] {
            return Err(Error::dim("gru_step", &hs, &xs));
        }
        let gate = |tape: &mut Tape, g: Gate| -> Result<Var> {
            let rec = self.apply_map(tape, ctx, g, h)?;
            let inp = self.input_term(tape, ctx, g, x)?;
            let pre = tape.add(rec, inp)?;
            Ok(tape.sigmoid(pre))
        };
        let r = gate(tape, Gate::Reset)?;
        let u = gate(tape, Gate::Update)?;
        let rh = tape.mul(r, h)?;
        let rec = self.apply_map(tape, ctx, Gate::State, rh)?;
        let inp = self.input_term(tape, ctx, Gate::State, x)?;
        let z = tape.add(rec, inp)?;
        let cand = tape.tanh(z);
        let diff = tape.sub(cand, h)?;
        let delta = tape.mul(u, diff)?;
        tape.add(h, delta)
    }

    /// Runs the cell over time-major inputs `xs[t]: [batch×n_in]` from `h0`
    /// (zeros when `None`); returns the hidden state after every step.
    pub fn unroll(&self, tape: &mut Tape, ctx: &StepContext, xs: &[Var], h0: Option<Var>) -> Result<Vec<Var>> {
        let first = xs.first().ok_or_else(|| Error::invalid("sequence must have at least one step"))?;
        let batch = tape.value(*first).rows();
        let mut h = match h0 {
            Some(h) => h,
            None => tape.constant(Tensor::zeros(&[batch, self.config.n_h])),
        };
        let mut states = Vec::with_capacity(xs.len());
        for &x in xs {
            h = self.step(tape, ctx, h, x)?;
            states.push(h);
        }
        Ok(states)
    }

    /// Dense head `h · W_o + b_o`.
    pub fn readout(&self, tape: &mut Tape, ctx: &StepContext, h: Var) -> Result<Var> {
        let (w, b) = self.readout.ok_or_else(|| Error::invalid("model has no readout head"))?;
        let y = tape.matmul(h, ctx.binding.var(w))?;
        tape.add_bias(y, ctx.binding.var(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n_in: usize, n_h: usize, n_out: Option<usize>, compress: &str) -> GruConfig {
        GruConfig { n_in, n_h, n_out, compress: compress.parse().unwrap(), layer: LayerSpec::default() }
    }

    #[test]
    fn compress_set_parsing() {
        assert_eq!("reset,state".parse::<CompressSet>().unwrap(), CompressSet::only(&[Gate::Reset, Gate::State]));
        assert_eq!("".parse::<CompressSet>().unwrap(), CompressSet::none());
        assert_eq!(CompressSet::all().to_string(), "state,reset,update");
        assert!("forget".parse::<CompressSet>().is_err());
    }

    #[test]
    fn table_counts() {
        assert_eq!(cfg(2, 512, Some(1), "none").count_params(), 791_553);
        assert_eq!(cfg(2, 512, Some(1), "reset").count_params(), 530_969);
        assert_eq!(cfg(2, 512, Some(1), "reset,state").count_params(), 270_385);
        assert_eq!(cfg(2, 512, Some(1), "all").count_params(), 9_801);
    }

    #[test]
    fn store_count_matches_formula() {
        for c in ["none", "update", "state,reset", "all"] {
            let config = cfg(3, 16, Some(4), c);
            let mut store = ParamStore::new();
            let gru = Gru::init(&mut store, "", config.clone(), 1).unwrap();
            assert_eq!(gru.count_params(&store), config.count_params());
            assert_eq!(store.num_scalars(), config.count_params());
        }
    }

    #[test]
    fn rejects_non_power_of_two_when_compressed() {
        assert!(cfg(1, 12, None, "reset").validate().is_err());
        assert!(cfg(1, 12, None, "none").validate().is_ok());
    }
}
