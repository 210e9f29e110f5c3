//! Fits a random 6-tap filter bank to the wavelet loss alone and prints the
//! loss trajectory and the learned filters.
//!
//! `cargo run --release --example learn_filters -- [seed] [steps] [optimizer] [lr]`

use wavegru::fwt::{init_filterbank, FilterInit};
use wavegru::training::{fit_filters, OptimizerConfig, OptimizerKind};

fn main() -> wavegru::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let kind: OptimizerKind = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(OptimizerKind::Adam);
    let mut opt = OptimizerConfig::new(kind);
    if let Some(lr) = args.get(3).and_then(|s| s.parse().ok()) {
        opt = opt.with_lr(lr);
    }

    let init = init_filterbank(FilterInit::RandomUniform, 6, seed)?;
    let fit = fit_filters(&init, steps, opt, (steps / 10).max(1))?;
    for (step, loss) in &fit.history {
        println!("step {step:>6}  wavelet loss {loss:.3e}");
    }
    let names = ["h0", "h1", "f0", "f1"];
    for (name, f) in names.iter().zip(fit.bank.filters()) {
        let row: Vec<String> = f.iter().map(|v| format!("{v:+.4}")).collect();
        println!("{name}: {}", row.join(" "));
    }
    Ok(())
}
