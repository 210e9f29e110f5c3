//! Trains a GRU on the copy-memory problem and reports recall accuracy on
//! held-out sequences.
//!
//! `cargo run --release --example copy_task -- [key=value ...]`
//! e.g. `compress=reset seq_len=30 symbols=8 steps=20000`.

use wavegru::training::{evaluate, train, Data, RunStatus, TaskKind, TrainConfig};

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> wavegru::Result<()> {
    let mut config = TrainConfig { task: TaskKind::Copy, steps: 2000, ..TrainConfig::default() };
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
        "params {}  eval cross entropy {:.5}  recall accuracy {:.2}%",
        run.model.count_params(&run.store),
        eval.task_loss,
        100.0 * eval.accuracy
    );
    Ok(())
}
