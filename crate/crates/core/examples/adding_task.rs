//! Trains a GRU (optionally wavelet-compressed) on the adding problem and
//! reports held-out accuracy.
//!
//! `cargo run --release --example adding_task -- [key=value ...]`
//! e.g. `compress=reset steps=20000 seed=1`.

use wavegru::training::{evaluate, train, Data, RunStatus, TaskKind, TrainConfig};

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> wavegru::Result<()> {
    let mut config = TrainConfig { task: TaskKind::Adding, steps: 2000, ..TrainConfig::default() };
    for arg in std::env::args().skip(1) {
        config.apply_text(&arg)?;
    }
    config.validate()?;
    let data = Data::load(&config)?;
    let mut out = std::io::stdout();
    let run = train(&config, &data, Some(&mut out))?;
    if let RunStatus::Diverged { step, reason } = &run.status {
        eprintln!("diverged at step {step}: {reason}");
    }
    let eval = evaluate(&run.model, &run.store, &config, &data, config.eval_samples)?;
    println!(
        "params {}  eval mse {:.5}  accuracy {:.2}%",
        run.model.count_params(&run.store),
        eval.task_loss,
        100.0 * eval.accuracy
    );
    Ok(())
}
