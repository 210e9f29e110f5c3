//! Feed-forward classifier on downscaled MNIST with a wavelet-compressed
//! middle layer. Needs the IDX files in `mnist_dir` (see the README).
//!
//! `cargo run --release --example mnist_wavelet -- [key=value ...]`
//! e.g. `hidden=256 downscale=2 steps=3000 compress=none` for the dense twin.

use wavegru::training::{evaluate, train, Data, TaskKind, TrainConfig};

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> wavegru::Result<()> {
    let mut config = TrainConfig {
        task: TaskKind::Mnist,
        hidden: 256,
        compress: "state".parse()?,
        steps: 3000,
        batch: 64,
        optimizer: "adadelta".parse()?,
        log_every: 250,
        eval_samples: usize::MAX,
        ..TrainConfig::default()
    };
    for arg in std::env::args().skip(1) {
        config.apply_text(&arg)?;
    }
    config.validate()?;
    if !Data::mnist_available(&config.mnist_dir) {
        eprintln!("no MNIST files in {}", config.mnist_dir.display());
        std::process::exit(2);
    }
    let data = Data::load(&config)?;
    let mut out = std::io::stdout();
    let run = train(&config, &data, Some(&mut out))?;
    let eval = evaluate(&run.model, &run.store, &config, &data, config.eval_samples)?;
    println!(
        "params {}  test accuracy {:.2}% on {} images",
        run.model.count_params(&run.store),
        100.0 * eval.accuracy,
        eval.samples
    );
    Ok(())
}
