//! Command-line front end: `wavegru <subcommand> [flags] [key=value ...]`.
//!
//! Settings are applied in order: defaults, `--config` file, positional
//! `key=value` overrides, then the explicit flags. Every run writes a config
//! echo, to `<out>/config.txt` when `--out` is given and to stderr (as `#`
//! comments) otherwise.
//!
//! Exit status: 0 on success, 1 for usage and validation errors, 2 for
//! runtime failures (divergence, I/O, failed checks).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::fwt::{self, default_levels, init_filterbank, FilterBank, FilterInit};
use crate::params::ParamStore;
use crate::tasks::TaskBatch;
use crate::training::model::count_for_config;
use crate::training::{
    evaluate, fit_filters, grad_check_model, train, Batch, Data, Model, OptimizerConfig, OptimizerKind, RunStatus,
    TrainConfig,
};

#[derive(Parser, Debug)]
#[command(name = "wavegru", version, about = "Wavelet-compressed GRU experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes metrics.csv, model.ckpt and config.txt to --out.
    Train(RunArgs),
    /// Evaluate a checkpoint on held-out data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Held-out examples (default: eval_samples from the checkpoint).
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `key=value` overrides of the stored configuration (data settings).
        overrides: Vec<String>,
    },
    /// Finite-difference check of the full training objective.
    Gradcheck {
        #[command(flatten)]
        run: RunArgs,
        /// Coordinates sampled per parameter.
        #[arg(long, default_value_t = 20)]
        coords: usize,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Print the trainable parameter count of the configured model.
    ParamCount(RunArgs),
    /// Time analyze + synthesize over signal sizes.
    BenchFwt {
        /// Comma-separated powers of two.
        #[arg(long, default_value = "8192,16384,32768,65536")]
        sizes: String,
        /// Timed repetitions per size; the median is reported.
        #[arg(long, default_value_t = 11)]
        reps: usize,
        #[arg(long, default_value_t = 6)]
        filter_len: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one batch of task data as CSV.
    GenData {
        #[command(flatten)]
        run: RunArgs,
        /// Samples to generate.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Report the wavelet loss of a filter bank, optionally after fitting it.
    VerifyFilters {
        #[arg(long, default_value = "haar")]
        init: String,
        #[arg(long, default_value_t = 6)]
        filter_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Gradient steps on the wavelet loss before reporting.
        #[arg(long, default_value_t = 0)]
        steps: usize,
        #[arg(long, default_value = "adam")]
        optimizer: String,
        #[arg(long)]
        lr: Option<f64>,
        /// Largest accepted final loss.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// adding, copy, mnist or seq-mnist.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Comma-separated subset of state, reset, update.
    #[arg(long)]
    compress: Option<String>,
    /// haar or random.
    #[arg(long)]
    filter_init: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` settings.
    overrides: Vec<String>,
}

fn apply_overrides(config: &mut TrainConfig, overrides: &[String]) -> Result<()> {
    for kv in overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Usage(format!("expected key=value, got `{kv}`")))?;
        config.set(k, v)?;
    }
    Ok(())
}

impl RunArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut config = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            config.apply_text(&text)?;
        }
        apply_overrides(&mut config, &self.overrides)?;
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("task", self.task.clone()),
            ("hidden", self.hidden.map(|v| v.to_string())),
            ("compress", self.compress.clone()),
            ("filter_init", self.filter_init.clone()),
            ("steps", self.steps.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                config.set(k, &v)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

/// One row of the transform benchmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub levels: usize,
    pub median_secs: f64,
    /// Median time over the previous row's median.
    pub ratio: Option<f64>,
}

/// Median wall time of `analyze_signal` + `synthesize_signal` at full depth
/// for each size. Sizes are timed in interleaved rounds after one untimed
/// warm-up round, so a slow patch of the machine hits every size alike. Small
/// sizes repeat the pair inside a sample until it has covered 2^16 points, and
/// report the time per pair.
pub fn bench_fwt(sizes: &[usize], reps: usize, filter_len: usize) -> Result<Vec<BenchRow>> {
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    let fb = FilterBank::haar_padded(filter_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut cases = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::invalid(format!("benchmark size {n} is not a power of two")));
        }
        let levels = default_levels(n, filter_len, usize::MAX);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        cases.push((n, levels, x));
    }
    let sample = |levels: usize, x: &[f64]| -> Result<f64> {
        let inner = (1usize << 16).div_ceil(x.len());
        let start = Instant::now();
        for _ in 0..inner {
            let p = fwt::analyze_signal(x, &fb, levels)?;
            std::hint::black_box(fwt::synthesize_signal(&p, &fb)?);
        }
        Ok(start.elapsed().as_secs_f64() / inner as f64)
    };
    let mut times = vec![Vec::with_capacity(reps); cases.len()];
    for round in 0..=reps {
        for ((_, levels, x), t) in cases.iter().zip(&mut times) {
            let secs = sample(*levels, x)?;
            if round > 0 {
                t.push(secs);
            }
        }
    }
    let mut rows: Vec<BenchRow> = Vec::with_capacity(cases.len());
    for ((n, levels, _), mut t) in cases.into_iter().zip(times) {
        t.sort_by(f64::total_cmp);
        let median = t[reps / 2];
        let ratio = rows.last().map(|r| median / r.median_secs);
        rows.push(BenchRow { n, levels, median_secs: median, ratio });
    }
    Ok(rows)
}

/// `270,385`
pub fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Count rounded to thousands, e.g. `≈270K`.
pub fn approx_thousands(n: usize) -> String {
    format!("≈{}K", (n + 500) / 1000)
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn echo(io: &mut Io, out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            ensure_dir(dir)?;
            let path = dir.join("config.txt");
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        }
        None => {
            for line in text.lines() {
                writeln!(io.err, "# {line}").map_err(write_err(Path::new("<stderr>")))?;
            }
            Ok(())
        }
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Failure that is not a library error (a check that did not pass).
struct Failed(String);

enum Outcome {
    Ok,
    Failed(Failed),
}

fn cmd_train(io: &mut Io, args: &RunArgs) -> Result<Outcome> {
    let config = args.resolve()?;
    echo(io, args.out.as_deref(), &config.to_text())?;
    let data = Data::load(&config)?;
    let run = match &args.out {
        Some(dir) => {
            let path = dir.join("metrics.csv");
            let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            train(&config, &data, Some(&mut file))?
        }
        None => train(&config, &data, Some(&mut *io.out))?,
    };
    if let RunStatus::Diverged { step, reason } = &run.status {
        return Ok(Outcome::Failed(Failed(format!("training diverged at step {step}: {reason}"))));
    }
    if let Some(dir) = &args.out {
        checkpoint::save(&dir.join("model.ckpt"), &config, data.input_width(), &run.model, &run.store)?;
    }
    let eval = evaluate(&run.model, &run.store, &config, &data, config.eval_samples)?;
    writeln!(
        io.out,
        "params {}  eval task_loss {:.6}  accuracy {:.4}  samples {}",
        run.model.count_params(&run.store),
        eval.task_loss,
        eval.accuracy,
        eval.samples
    )
    .map_err(stdout_err)?;
    Ok(Outcome::Ok)
}

fn cmd_eval(
    io: &mut Io,
    path: &Path,
    samples: Option<usize>,
    out: Option<&Path>,
    overrides: &[String],
) -> Result<Outcome> {
    let ck = checkpoint::load(path)?;
    let mut config = ck.config.clone();
    apply_overrides(&mut config, overrides)?;
    if let Some(s) = samples {
        config.eval_samples = s;
    }
    config.validate()?;
    echo(io, out, &config.to_text())?;
    let data = Data::load(&config)?;
    if data.input_width() != ck.input_width {
        return Err(Error::invalid(format!(
            "data has input width {}, checkpoint expects {}",
            data.input_width(),
            ck.input_width
        )));
    }
    let eval = evaluate(&ck.model, &ck.store, &config, &data, config.eval_samples)?;
    writeln!(io.out, "task_loss {:.6}  accuracy {:.4}  samples {}", eval.task_loss, eval.accuracy, eval.samples)
        .map_err(stdout_err)?;
    Ok(Outcome::Ok)
}

fn cmd_gradcheck(io: &mut Io, args: &RunArgs, coords: usize, eps: f64, tol: f64) -> Result<Outcome> {
    let config = args.resolve()?;
    echo(io, args.out.as_deref(), &config.to_text())?;
    let data = Data::load(&config)?;
    let mut store = ParamStore::new();
    let model = Model::build(&config, &mut store, &data)?;
    let batch = data.train_batch(&config, 1)?;
    let weight = if config.wavelet_loss { config.wavelet_weight } else { 0.0 };
    let report = grad_check_model(&model, &store, &batch, weight, eps, coords, config.seed)?;
    let mut worst = 0.0f64;
    for (name, err) in &report {
        writeln!(io.out, "{name:<16} {err:.3e}").map_err(stdout_err)?;
        worst = worst.max(*err);
    }
    writeln!(io.out, "max relative error {worst:.3e} (tolerance {tol:.0e})").map_err(stdout_err)?;
    if worst.is_nan() || worst >= tol {
        return Ok(Outcome::Failed(Failed(format!("gradient check failed: {worst:.3e} >= {tol:.0e}"))));
    }
    Ok(Outcome::Ok)
}

fn cmd_param_count(io: &mut Io, args: &RunArgs) -> Result<Outcome> {
    let config = args.resolve()?;
    echo(io, args.out.as_deref(), &config.to_text())?;
    let n = count_for_config(&config)?;
    writeln!(io.out, "{} parameters ({})", group_thousands(n), approx_thousands(n)).map_err(stdout_err)?;
    Ok(Outcome::Ok)
}

fn cmd_bench(io: &mut Io, sizes: &str, reps: usize, filter_len: usize, out: Option<&Path>) -> Result<Outcome> {
    let sizes = sizes
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| Error::invalid(format!("bad size `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    echo(io, out, &format!("sizes={}\nreps={reps}\nfilter_len={filter_len}\n", group_sizes(&sizes)))?;
    let rows = bench_fwt(&sizes, reps, filter_len)?;
    writeln!(io.out, "n,levels,median_us,ratio").map_err(stdout_err)?;
    for r in &rows {
        let ratio = r.ratio.map_or(String::from("-"), |v| format!("{v:.3}"));
        writeln!(io.out, "{},{},{:.2},{ratio}", r.n, r.levels, r.median_secs * 1e6).map_err(stdout_err)?;
    }
    Ok(Outcome::Ok)
}

fn group_sizes(sizes: &[usize]) -> String {
    sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

fn write_images_csv(w: &mut dyn Write, x: &crate::autodiff::Tensor, labels: &[usize]) -> std::io::Result<()> {
    let cols = x.cols();
    let header: Vec<String> = (0..cols).map(|i| format!("p{i}")).chain(["label".to_string()]).collect();
    writeln!(w, "{}", header.join(","))?;
    for (r, label) in labels.iter().enumerate() {
        let row: Vec<String> = x.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{label}", row.join(","))?;
    }
    Ok(())
}

fn cmd_gen_data(io: &mut Io, args: &RunArgs, count: usize) -> Result<Outcome> {
    let mut config = args.resolve()?;
    config.batch = count;
    config.validate()?;
    echo(io, args.out.as_deref(), &config.to_text())?;
    let data = Data::load(&config)?;
    let batch = data.train_batch(&config, 1)?;
    let write = |w: &mut dyn Write| -> std::io::Result<()> {
        match &batch {
            Batch::Sequence(b) => TaskBatch::write_csv(b, w),
            Batch::Images { x, labels } => write_images_csv(w, x, labels),
        }
    };
    match &args.out {
        Some(dir) => {
            let path = dir.join("data.csv");
            let mut file = std::io::BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
            write(&mut file).and_then(|_| file.flush()).map_err(|e| Error::io(&path, e))?;
        }
        None => write(&mut *io.out).map_err(stdout_err)?,
    }
    Ok(Outcome::Ok)
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    io: &mut Io,
    init: &str,
    filter_len: usize,
    seed: u64,
    steps: usize,
    optimizer: &str,
    lr: Option<f64>,
    tol: f64,
    out: Option<&Path>,
) -> Result<Outcome> {
    let mode: FilterInit = init.parse()?;
    let kind: OptimizerKind = optimizer.parse()?;
    let mut opt = OptimizerConfig::new(kind);
    if let Some(lr) = lr {
        opt = opt.with_lr(lr);
    }
    opt.validate()?;
    let lr_text = lr.map_or("default".to_string(), |v| v.to_string());
    echo(
        io,
        out,
        &format!(
            "init={mode}\nfilter_len={filter_len}\nseed={seed}\nsteps={steps}\noptimizer={kind}\nlr={lr_text}\ntol={tol}\n"
        ),
    )?;
    let bank = init_filterbank(mode, filter_len, seed)?;
    let p = |e| stdout_err(e);
    writeln!(io.out, "initial wavelet loss {:.6e}", bank.wavelet_loss()).map_err(p)?;
    let bank = if steps > 0 {
        let fit = fit_filters(&bank, steps, opt, (steps / 10).max(1))?;
        for (step, loss) in &fit.history {
            writeln!(io.out, "step {step:>7}  loss {loss:.6e}").map_err(p)?;
        }
        fit.bank
    } else {
        bank
    };
    let loss = bank.wavelet_loss();
    writeln!(io.out, "pr_loss {:.6e}  ac_loss {:.6e}", bank.pr_loss(), bank.ac_loss()).map_err(p)?;
    write!(io.out, "{}", bank.to_text()).map_err(p)?;
    let signs = bank.alternating_signs(1e-3);
    writeln!(io.out, "alternating sign pattern: {}", if signs { "yes" } else { "no" }).map_err(p)?;
    writeln!(io.out, "final wavelet loss {loss:.6e} (tolerance {tol:.0e})").map_err(p)?;
    if let Some(dir) = out {
        let path = dir.join("filters.txt");
        fs::write(&path, bank.to_text()).map_err(|e| Error::io(&path, e))?;
    }
    if loss.is_nan() || loss >= tol {
        return Ok(Outcome::Failed(Failed(format!("wavelet loss {loss:.3e} is not below {tol:.0e}"))));
    }
    Ok(Outcome::Ok)
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
                return 1;
            }
            let _ = write!(out, "{text}");
            return 0;
        }
    };
    let mut io = Io { out, err };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(&mut io, a),
        Command::Eval { checkpoint, samples, out, overrides } => {
            cmd_eval(&mut io, checkpoint, *samples, out.as_deref(), overrides)
        }
        Command::Gradcheck { run, coords, eps, tol } => cmd_gradcheck(&mut io, run, *coords, *eps, *tol),
        Command::ParamCount(a) => cmd_param_count(&mut io, a),
        Command::BenchFwt { sizes, reps, filter_len, out } => {
            cmd_bench(&mut io, sizes, *reps, *filter_len, out.as_deref())
        }
        Command::GenData { run, count } => cmd_gen_data(&mut io, run, *count),
        Command::VerifyFilters { init, filter_len, seed, steps, optimizer, lr, tol, out } => {
            cmd_verify(&mut io, init, *filter_len, *seed, *steps, optimizer, *lr, *tol, out.as_deref())
        }
    };
    let _ = io.out.flush();
    match result {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::Failed(Failed(msg))) => {
            let _ = writeln!(io.err, "error: {msg}");
            2
        }
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
