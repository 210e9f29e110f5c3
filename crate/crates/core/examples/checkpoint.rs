//! Trains a small reset-compressed GRU on the copy task, saves a checkpoint,
//! reloads it and checks that evaluation is unchanged.

use wavegru::checkpoint;
use wavegru::training::{evaluate, train, Data, TaskKind, TrainConfig};

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> wavegru::Result<()> {
    let config = TrainConfig {
        task: TaskKind::Copy,
        hidden: 16,
        seq_len: 10,
        steps: 300,
        log_every: 100,
        compress: "reset".parse()?,
        ..TrainConfig::default()
    };
    let data = Data::load(&config)?;
    let run = train(&config, &data, None)?;
    let before = evaluate(&run.model, &run.store, &config, &data, 500)?;

    let path = std::env::temp_dir().join("wavegru-example.ckpt");
    checkpoint::save(&path, &config, data.input_width(), &run.model, &run.store)?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    let back = checkpoint::load(&path)?;
    let after = evaluate(&back.model, &back.store, &back.config, &data, 500)?;
    std::fs::remove_file(&path).ok();

    println!("checkpoint {} ({bytes} bytes)", path.display());
    println!("before: loss {:.6} accuracy {:.3}", before.task_loss, before.accuracy);
    println!("after:  loss {:.6} accuracy {:.3}", after.task_loss, after.accuracy);
    assert_eq!(before, after);
    Ok(())
}
