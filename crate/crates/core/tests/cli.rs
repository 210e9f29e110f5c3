//! End-to-end runs of the `wavegru` binary on tiny configurations.

use std::path::Path;
use std::process::{Command, Output};

fn wavegru(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavegru")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.cfg");
    std::fs::write(
        &path,
        "# small enough for a quick run\nhidden=8\nseq_len=6\nbatch=4\nsteps=20\nlog_every=5\neval_samples=40\n",
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn param_count_matches_reported_figure() {
    let o = wavegru(&["param-count", "--task", "adding", "--hidden", "512", "--compress", "reset,state"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("270,385"), "{out}");
    assert!(out.contains("≈270K"), "{out}");
    assert!(stderr(&o).contains("# compress=state,reset"));
}

#[test]
fn train_writes_metrics_checkpoint_and_echo_then_eval_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.display().to_string();
    let o = wavegru(&["train", "--config", &cfg, "--compress", "reset", "--seed", "3", "--out", &out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "step,task_loss,wavelet_loss,accuracy,seconds");
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[4].starts_with("20,"));

    let echo = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("seed=3") && echo.contains("compress=reset") && echo.contains("hidden=8"));
    assert!(stdout(&o).contains("eval task_loss"));

    let ck = out.join("model.ckpt").display().to_string();
    let e = wavegru(&["eval", "--checkpoint", &ck, "--samples", "16"]);
    assert_eq!(e.status.code(), Some(0), "{}", stderr(&e));
    assert!(stdout(&e).contains("samples 16"), "{}", stdout(&e));
}

#[test]
fn identical_seeds_reproduce_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = wavegru(&["train", "--config", &cfg, "--task", "copy", "--out", &out.display().to_string()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
        // drop the wall-clock column
        text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn gradcheck_passes_on_a_compressed_gru() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = wavegru(&["gradcheck", "--config", &cfg, "--compress", "state,reset,update", "--coords", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("max relative error"));
}

#[test]
fn bench_reports_one_row_per_size() {
    let o = wavegru(&["bench-fwt", "--sizes", "1024,2048,4096", "--reps", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].ends_with(",-"));
    assert!(rows[2].split(',').nth(3).unwrap().parse::<f64>().unwrap() > 0.0);
    assert_eq!(wavegru(&["bench-fwt", "--sizes", "1000"]).status.code(), Some(1));
}

#[test]
fn gen_data_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = wavegru(&["gen-data", "--task", "adding", "seq_len=5", "--count", "3", "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("data.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0].split(',').count(), 5 * 2 + 1);
    assert!(dir.path().join("config.txt").is_file());

    let o = wavegru(&["gen-data", "--task", "copy", "seq_len=4", "--count", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn verify_filters_haar_is_exact() {
    let o = wavegru(&["verify-filters", "--init", "haar"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let last = out.lines().find(|l| l.starts_with("final wavelet loss")).unwrap();
    let loss: f64 = last.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(loss < 1e-12, "{loss}");
    assert!(out.contains("alternating sign pattern: yes"));
}

#[test]
fn verify_filters_fails_for_unfitted_random_bank() {
    let o = wavegru(&["verify-filters", "--init", "random", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = wavegru(&["verify-filters", "--init", "random", "--seed", "2", "--steps", "3000", "--lr", "0.003"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn bad_input_exits_one_and_runtime_failure_exits_two() {
    let o = wavegru(&["train", "--steps", "2", "--unknown-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(wavegru(&["train", "hidn=4"]).status.code(), Some(1));
    assert_eq!(
        wavegru(&["param-count", "--task", "adding", "--compress", "reset", "--hidden", "48"]).status.code(),
        Some(1)
    );

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing").display().to_string();
    let o = wavegru(&["train", "--task", "mnist", &format!("mnist_dir={missing}"), "--steps", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = wavegru(&["eval", "--checkpoint", &missing]);
    assert_eq!(o.status.code(), Some(2));

    // a learning rate this large overflows the recurrent state
    let cfg = tiny_config(dir.path());
    let o = wavegru(&["train", "--config", &cfg, "lr=1e200", "clip=0", "--steps", "20"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"), "{}", stderr(&o));
}
