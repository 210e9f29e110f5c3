//! Builds a wavelet linear layer, compares its forward pass with the dense
//! matrix it represents, and prints the parameter savings.
//!
//! `cargo run --release --example wavelet_layer -- [n]`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavegru::autodiff::{Tape, Tensor};
use wavegru::fwt::FilterInit;
use wavegru::params::ParamStore;
use wavegru::wavelet_linear::{LayerSpec, WaveletLinear};

fn main() -> wavegru::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let mut store = ParamStore::new();
    let spec = LayerSpec { filter_init: FilterInit::RandomUniform, ..LayerSpec::default() };
    let layer = WaveletLinear::init(&mut store, "w", n, &spec, 7)?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::new(vec![4, n], (0..4 * n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let y = layer.forward(&mut tape, &binding, xv, None)?;

    // rows are activations, so the layer is x · Mᵀ
    let m = layer.explicit_matrix(&store)?;
    let mut dense = vec![0.0; 4 * n];
    for r in 0..4 {
        for i in 0..n {
            dense[r * n + i] = (0..n).map(|j| m.data()[i * n + j] * x.data()[r * n + j]).sum();
        }
    }
    let diff = tape.value(y).max_abs_diff(&Tensor::new(vec![4, n], dense)?);

    let params = layer.param_count(&store);
    println!("n={n}, {} levels, {} filter taps", layer.levels(), layer.filter_len(&store));
    println!("layer parameters {params} vs dense {}  ({:.1}x fewer)", n * n, (n * n) as f64 / params as f64);
    println!("max |layer(x) - x·Mᵀ| = {diff:.2e}");
    Ok(())
}
