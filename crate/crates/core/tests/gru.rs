//! GRU step semantics, dense/wavelet equivalence and gradient checks.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavegru::autodiff::{Tape, Tensor, Var};
use wavegru::fwt::{FilterBank, FilterInit};
use wavegru::gradcheck::{check_store, Coords};
use wavegru::params::ParamStore;
use wavegru::recurrent::{CompressSet, Gate, Gru, GruConfig, RecurrentMap};
use wavegru::wavelet_linear::LayerSpec;

fn rand_vec(n: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn config(n_in: usize, n_h: usize, n_out: Option<usize>, compress: &str) -> GruConfig {
    GruConfig {
        n_in,
        n_h,
        n_out,
        compress: compress.parse().unwrap(),
        layer: LayerSpec { filter_init: FilterInit::RandomUniform, ..LayerSpec::default() },
    }
}

fn run_states(gru: &Gru, store: &ParamStore, xs: &[Tensor], h0: Option<Tensor>) -> Vec<Tensor> {
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let ctx = gru.context(&mut tape, &binding).unwrap();
    let xv: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let h0 = h0.map(|h| tape.constant(h));
    let states = gru.unroll(&mut tape, &ctx, &xv, h0).unwrap();
    states.iter().map(|&s| tape.value(s).clone()).collect()
}

fn fill(store: &mut ParamStore, gru: &Gru, value: f64) {
    for id in gru.param_ids() {
        let shape = store.value(id).shape().to_vec();
        store.set(id, Tensor::full(&shape, value)).unwrap();
    }
}

#[test]
fn zero_weights_halve_the_state() {
    let mut store = ParamStore::new();
    let gru = Gru::init(&mut store, "", config(3, 4, None, "none"), 0).unwrap();
    fill(&mut store, &gru, 0.0);
    let h0 = Tensor::matrix(2, 4, rand_vec(8, 1, 1.0)).unwrap();
    let xs: Vec<Tensor> = (0..6).map(|t| Tensor::matrix(2, 3, rand_vec(6, 10 + t, 1.0)).unwrap()).collect();
    let states = run_states(&gru, &store, &xs, Some(h0.clone()));
    for (t, s) in states.iter().enumerate() {
        let factor = 0.5f64.powi(t as i32 + 1);
        let expect = h0.map(|v| v * factor);
        assert!(s.max_abs_diff(&expect) < 1e-15, "step {t}");
    }
}

#[test]
fn scalar_cell_hand_value() {
    let mut store = ParamStore::new();
    let gru = Gru::init(&mut store, "", config(1, 1, None, "none"), 0).unwrap();
    fill(&mut store, &gru, 1.0);
    for g in Gate::ALL {
        store.set(gru.bias(g), Tensor::zeros(&[1])).unwrap();
    }
    let s = run_states(&gru, &store, &[Tensor::matrix(1, 1, vec![1.0]).unwrap()], None);
    let sig1 = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((sig1 - 0.7311).abs() < 1e-4);
    let expect = sig1 * 1f64.tanh();
    assert!((s[0].item() - expect).abs() < 1e-15);
    assert!((s[0].item() - 0.5568).abs() < 1e-4);
}

#[test]
fn single_step_unroll_equals_step() {
    let mut store = ParamStore::new();
    let gru = Gru::init(&mut store, "", config(2, 8, None, "reset"), 3).unwrap();
    let x = Tensor::matrix(4, 2, rand_vec(8, 4, 1.0)).unwrap();
    let h = Tensor::matrix(4, 8, rand_vec(32, 5, 1.0)).unwrap();
    let unrolled = run_states(&gru, &store, std::slice::from_ref(&x), Some(h.clone()));

    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let ctx = gru.context(&mut tape, &binding).unwrap();
    let (hv, xv) = (tape.constant(h), tape.constant(x));
    let stepped = gru.step(&mut tape, &ctx, hv, xv).unwrap();
    assert_eq!(tape.value(stepped).data(), unrolled[0].data());
}

#[test]
fn step_rejects_bad_shapes() {
    let mut store = ParamStore::new();
    let gru = Gru::init(&mut store, "", config(2, 4, None, "none"), 0).unwrap();
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let ctx = gru.context(&mut tape, &binding).unwrap();
    let h = tape.constant(Tensor::zeros(&[3, 4]));
    let x = tape.constant(Tensor::zeros(&[3, 5]));
    assert!(matches!(gru.step(&mut tape, &ctx, h, x), Err(wavegru::Error::Dimension { .. })));
    let x = tape.constant(Tensor::zeros(&[2, 2]));
    assert!(gru.step(&mut tape, &ctx, h, x).is_err());
}

/// Copies every shared parameter from a wavelet GRU into a dense GRU and
/// replaces each compressed map by its explicit matrix.
fn dense_twin(wave: &Gru, wstore: &ParamStore) -> (Gru, ParamStore) {
    let mut c = wave.config().clone();
    c.compress = CompressSet::none();
    let mut store = ParamStore::new();
    let dense = Gru::init(&mut store, "", c, 99).unwrap();
    for g in Gate::ALL {
        store.set(dense.input_weight(g), wstore.value(wave.input_weight(g)).clone()).unwrap();
        store.set(dense.bias(g), wstore.value(wave.bias(g)).clone()).unwrap();
        let RecurrentMap::Dense(target) = dense.map(g) else { unreachable!() };
        let w = match wave.map(g) {
            RecurrentMap::Dense(id) => wstore.value(*id).clone(),
            // Row convention: h · Mᵀ.
            RecurrentMap::Wavelet(layer) => layer.explicit_matrix(wstore).unwrap().transpose(),
        };
        store.set(*target, w).unwrap();
    }
    (dense, store)
}

fn randomize(store: &mut ParamStore, gru: &Gru, seed: u64) {
    for (k, id) in gru.param_ids().into_iter().enumerate() {
        let shape = store.value(id).shape().to_vec();
        let len = store.value(id).len();
        store.set(id, Tensor::new(shape, rand_vec(len, seed + k as u64, 0.6)).unwrap()).unwrap();
    }
}

#[test]
fn wavelet_step_equals_dense_step_with_explicit_matrix() {
    for compress in ["state", "reset", "update", "all"] {
        let mut wstore = ParamStore::new();
        let wave = Gru::init(&mut wstore, "", config(3, 8, None, compress), 7).unwrap();
        randomize(&mut wstore, &wave, 100);
        let (dense, dstore) = dense_twin(&wave, &wstore);
        let xs: Vec<Tensor> = (0..10).map(|t| Tensor::matrix(2, 3, rand_vec(6, 200 + t, 1.0)).unwrap()).collect();
        let a = run_states(&wave, &wstore, &xs, None);
        let b = run_states(&dense, &dstore, &xs, None);
        assert!(a[0].max_abs_diff(&b[0]) < 1e-12, "{compress}: first step");
        for (t, (sa, sb)) in a.iter().zip(&b).enumerate() {
            assert!(sa.max_abs_diff(sb) < 1e-6, "{compress}: step {t}");
        }
    }
}

#[test]
fn identity_configured_layers_match_dense_identity() {
    // Unit diagonals, identity permutation and Haar make every compressed map
    // the identity, so the dense twin carries W = I.
    let mut c = config(2, 16, None, "all");
    c.layer.filter_len = 2;
    c.layer.filter_init = FilterInit::HaarPadded;
    let mut wstore = ParamStore::new();
    let wave = Gru::init(&mut wstore, "", c, 8).unwrap();
    let mut ident_maps = Vec::new();
    for (g, layer) in wave.wavelet_layers() {
        assert_eq!(layer.fb.read(&wstore), FilterBank::haar());
        ident_maps.push(g);
    }
    assert_eq!(ident_maps.len(), 3);
    // The permutation is random, so rebuild with the identity one.
    let mut store = ParamStore::new();
    let mut layers = Vec::new();
    for g in Gate::ALL {
        let fb = wavegru::fwt::FilterBankParams::register(&mut store, g.name(), &FilterBank::haar());
        let l = wavegru::wavelet_linear::WaveletLinear::with_parts(
            &mut store,
            g.name(),
            16,
            3,
            wavegru::autodiff::Permutation::identity(16),
            fb,
            0.0,
        )
        .unwrap();
        layers.push(RecurrentMap::Wavelet(l));
    }
    let inputs = Gate::ALL
        .map(|g| store.add(format!("{}.V", g.name()), Tensor::matrix(2, 16, rand_vec(32, g as u64, 0.5)).unwrap()));
    let biases =
        Gate::ALL.map(|g| store.add(format!("{}.b", g.name()), Tensor::vector(rand_vec(16, 10 + g as u64, 0.5))));
    let mut cfg = wave.config().clone();
    cfg.layer.filter_len = 2;
    let ident = Gru::from_parts(cfg, layers.try_into().unwrap(), inputs, biases, None).unwrap();
    let (dense, dstore) = dense_twin(&ident, &store);
    for g in Gate::ALL {
        let RecurrentMap::Dense(w) = dense.map(g) else { unreachable!() };
        assert!(dstore.value(*w).max_abs_diff(&Tensor::identity(16)) < 1e-12);
    }
    let xs: Vec<Tensor> = (0..10).map(|t| Tensor::matrix(3, 2, rand_vec(6, 300 + t, 1.0)).unwrap()).collect();
    let a = run_states(&ident, &store, &xs, None);
    let b = run_states(&dense, &dstore, &xs, None);
    for (sa, sb) in a.iter().zip(&b) {
        assert!(sa.max_abs_diff(sb) < 1e-6);
    }
}

#[test]
fn gradients_through_five_steps() {
    for compress in ["none", "reset", "state,update"] {
        let mut store = ParamStore::new();
        let gru = Gru::init(&mut store, "", config(2, 8, Some(3), compress), 11).unwrap();
        randomize(&mut store, &gru, 500);
        let xs: Vec<Tensor> = (0..5).map(|t| Tensor::matrix(2, 2, rand_vec(4, 600 + t, 1.0)).unwrap()).collect();
        let report = check_store(
            &store,
            |tape, binding| {
                let ctx = gru.context(tape, binding)?;
                let xv: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
                let states = gru.unroll(tape, &ctx, &xv, None)?;
                let y = gru.readout(tape, &ctx, *states.last().unwrap())?;
                tape.softmax_cross_entropy(y, &[0, 2])
            },
            1e-5,
            Coords::Sample { max: 20, seed: 1 },
        )
        .unwrap();
        for (name, err) in &report {
            assert!(*err < 1e-4, "{compress} {name}: {err:e}");
        }
        let banks = report.iter().filter(|(n, _)| n.contains(".fb.")).count();
        assert_eq!(banks, 4 * CompressSet::len(compress.parse().unwrap()));
    }
}

#[test]
fn counts_for_sequence_tasks() {
    let counts = |n_in: usize, n_out: usize| -> Vec<usize> {
        ["none", "reset", "reset,state", "all"]
            .iter()
            .map(|c| config(n_in, 512, Some(n_out), c).count_params())
            .collect()
    };
    assert_eq!(counts(2, 1), vec![791_553, 530_969, 270_385, 9_801]);
    assert_eq!(counts(1, 10), vec![794_634, 534_050, 273_466, 12_882]);
    assert_eq!(counts(10, 10), vec![808_458, 547_874, 287_290, 26_706]);
}

/// Plain-loop GRU step returning `(h', tanh(z))`, row convention.
fn oracle_step(store: &ParamStore, gru: &Gru, h: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = gru.config().n_h;
    let n_in = gru.config().n_in;
    let affine = |g: Gate, hin: &[f64]| -> Vec<f64> {
        let RecurrentMap::Dense(w) = gru.map(g) else { panic!("dense only") };
        let (w, v, b) = (store.value(*w), store.value(gru.input_weight(g)), store.value(gru.bias(g)));
        (0..n)
            .map(|j| {
                let rec: f64 = (0..n).map(|i| hin[i] * w.at(i, j)).sum();
                let inp: f64 = (0..n_in).map(|i| x[i] * v.at(i, j)).sum();
                rec + inp + b.data()[j]
            })
            .collect()
    };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let r: Vec<f64> = affine(Gate::Reset, h).into_iter().map(sig).collect();
    let u: Vec<f64> = affine(Gate::Update, h).into_iter().map(sig).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = affine(Gate::State, &rh).into_iter().map(f64::tanh).collect();
    let next = (0..n).map(|j| u[j] * cand[j] + (1.0 - u[j]) * h[j]).collect();
    (next, cand)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn state_is_convex_combination(seed in 0u64..100_000) {
        let mut store = ParamStore::new();
        let gru = Gru::init(&mut store, "", config(2, 8, None, "none"), seed).unwrap();
        randomize(&mut store, &gru, seed);
        let h = rand_vec(8, seed + 7, 1.0);
        let x = rand_vec(2, seed + 8, 2.0);
        let got = run_states(
            &gru,
            &store,
            &[Tensor::matrix(1, 2, x.clone()).unwrap()],
            Some(Tensor::matrix(1, 8, h.clone()).unwrap()),
        );
        let (expect, cand) = oracle_step(&store, &gru, &h, &x);
        for j in 0..8 {
            let v = got[0].data()[j];
            prop_assert!((v - expect[j]).abs() < 1e-12);
            prop_assert!(v >= cand[j].min(h[j]) - 1e-12 && v <= cand[j].max(h[j]) + 1e-12);
        }
    }
}
