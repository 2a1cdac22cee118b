//! End-to-end tests that drive the compiled `nodecast` binary.

use std::path::Path;
use std::process::{Command, Output};

use nodecast_core::train::ForecastReport;

const BIN: &str = env!("CARGO_BIN_EXE_nodecast");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("NODECAST_OUT")
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// 120 hourly rows (five days starting Monday 2021-01-04), three variates
/// with distinct deterministic waveforms.
fn write_series_csv(path: &Path) {
    let mut text = String::from("date,a,b,c\n");
    for t in 0..120usize {
        let day = 4 + t / 24;
        let hour = t % 24;
        let phase = (t % 24) as f64 / 24.0 * std::f64::consts::TAU;
        let a = phase.sin();
        let b = 2.0 * phase.cos() + 0.5;
        let c = 0.01 * t as f64 - 1.0;
        text.push_str(&format!(
            "2021-01-{day:02} {hour:02}:00:00,{a},{b},{c}\n"
        ));
    }
    std::fs::write(path, text).unwrap();
}

fn base_config() -> String {
    r#"
[data]
train_len = 60
val_len = 30
test_len = 30
standardize = true

[model]
n_nodes = 3
input_len = 24
output_len = 4
embed_dim = 8
layers = 1
scalers = 4
groups = 2
kernel_lengths = [3]
factor_dim = 3
seed = 1

[train]
epochs = 2
batch_size = 8
learning_rate = 0.001
"#
    .to_string()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_series_csv(&dir.path().join("series.csv"));
        std::fs::write(dir.path().join("run.toml"), base_config()).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).display().to_string()
    }
}

#[test]
fn help_lists_subcommands_and_global_flags() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_of(&out);
    for needle in ["train", "eval", "naive", "ablate", "mc", "export-adj", "--threads", "--out"] {
        assert!(text.contains(needle), "--help output lacks '{needle}':\n{text}");
    }
}

#[test]
fn unknown_flags_exit_with_usage_code() {
    let out = run(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_writes_artifacts_and_is_deterministic_across_runs() {
    let ws = Workspace::new();
    let out_a = ws.path("run_a");
    let out_b = ws.path("run_b");

    let first = run(&[
        "train",
        "--config",
        &ws.path("run.toml"),
        "--data",
        &ws.path("series.csv"),
        "--out",
        &out_a,
    ]);
    assert_eq!(first.status.code(), Some(0), "stderr: {}", stderr_of(&first));
    for name in ["checkpoint_s4.ckpt", "history_s4.csv", "report.txt"] {
        let p = Path::new(&out_a).join(name);
        assert!(p.exists(), "missing artifact {name}");
    }
    let history = std::fs::read_to_string(Path::new(&out_a).join("history_s4.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss\n"));
    assert_eq!(history.lines().count(), 3, "2 epochs + header");

    // Second run via the NODECAST_OUT fallback instead of --out.
    let second = Command::new(BIN)
        .args([
            "train",
            "--config",
            &ws.path("run.toml"),
            "--data",
            &ws.path("series.csv"),
        ])
        .env("NODECAST_OUT", &out_b)
        .output()
        .expect("binary runs");
    assert_eq!(second.status.code(), Some(0), "stderr: {}", stderr_of(&second));

    let report_a = ForecastReport::from_key_value(
        &std::fs::read_to_string(Path::new(&out_a).join("report.txt")).unwrap(),
    )
    .unwrap();
    let report_b = ForecastReport::from_key_value(
        &std::fs::read_to_string(Path::new(&out_b).join("report.txt")).unwrap(),
    )
    .unwrap();
    assert_eq!(report_a.config_fingerprint, report_b.config_fingerprint);
    assert_eq!(report_a.averaged_mse, report_b.averaged_mse);
    assert_eq!(report_a.averaged_mae, report_b.averaged_mae);
    assert_eq!(report_a.per_horizon.len(), 1);
    assert_eq!(report_a.per_horizon[0].horizon, 4);
    assert_eq!(report_a.per_horizon[0].mse, report_b.per_horizon[0].mse);
    assert_eq!(report_a.history.len(), 2);
    for (ra, rb) in report_a.history.iter().zip(&report_b.history) {
        assert_eq!(ra.train_loss, rb.train_loss);
        assert_eq!(ra.val_loss, rb.val_loss);
    }
    assert!(report_a.per_horizon[0].mse.is_finite());
}

#[test]
fn misspelled_config_keys_are_reported_by_name() {
    let ws = Workspace::new();
    let cfg = base_config().replace("epochs = 2", "epochs = 2\ntypo_key = 1");
    std::fs::write(ws.dir.path().join("bad.toml"), cfg).unwrap();
    let out = run(&[
        "train",
        "--config",
        &ws.path("bad.toml"),
        "--data",
        &ws.path("series.csv"),
        "--out",
        &ws.path("out"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("typo_key"),
        "stderr should name the bad key: {}",
        stderr_of(&out)
    );
}

#[test]
fn eval_reproduces_the_training_report_and_writes_plot_data() {
    let ws = Workspace::new();
    let out_dir = ws.path("out");
    let trained = run(&[
        "train",
        "--config",
        &ws.path("run.toml"),
        "--data",
        &ws.path("series.csv"),
        "--out",
        &out_dir,
    ]);
    assert_eq!(trained.status.code(), Some(0), "stderr: {}", stderr_of(&trained));

    let ck = Path::new(&out_dir).join("checkpoint_s4.ckpt");
    let evald = run(&[
        "eval",
        "--checkpoint",
        &ck.display().to_string(),
        "--data",
        &ws.path("series.csv"),
        "--train-len",
        "60",
        "--val-len",
        "30",
        "--test-len",
        "30",
        "--node",
        "1",
        "--plot-windows",
        "3",
        "--out",
        &out_dir,
    ]);
    assert_eq!(evald.status.code(), Some(0), "stderr: {}", stderr_of(&evald));

    let train_report = ForecastReport::from_key_value(
        &std::fs::read_to_string(Path::new(&out_dir).join("report.txt")).unwrap(),
    )
    .unwrap();
    let eval_report = ForecastReport::from_key_value(
        &std::fs::read_to_string(Path::new(&out_dir).join("eval_report.txt")).unwrap(),
    )
    .unwrap();
    assert_eq!(
        train_report.per_horizon[0].mse,
        eval_report.per_horizon[0].mse,
        "the saved checkpoint must score exactly what training reported"
    );
    assert_eq!(train_report.per_horizon[0].mae, eval_report.per_horizon[0].mae);

    let plot = std::fs::read_to_string(Path::new(&out_dir).join("plot_s4_node1.csv")).unwrap();
    assert!(plot.starts_with("window,step,prediction,truth\n"));
    assert_eq!(plot.lines().count(), 1 + 3 * 4, "3 windows x 4 steps + header");
}

#[test]
fn naive_baseline_runs_from_explicit_split_flags() {
    let ws = Workspace::new();
    let out_dir = ws.path("out");
    let out = run(&[
        "naive",
        "--data",
        &ws.path("series.csv"),
        "--train-len",
        "60",
        "--val-len",
        "30",
        "--test-len",
        "30",
        "--input-len",
        "24",
        "--horizon",
        "4",
        "--out",
        &out_dir,
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = std::fs::read_to_string(Path::new(&out_dir).join("naive_report.txt")).unwrap();
    assert!(text.contains("horizon.4.mse="), "report: {text}");
    let report = ForecastReport::from_key_value(&text).unwrap();
    assert!(report.per_horizon[0].mse.is_finite());
}

#[test]
fn contradictory_ablation_switches_exit_with_usage_code() {
    let ws = Workspace::new();
    let out = run(&[
        "ablate",
        "--config",
        &ws.path("run.toml"),
        "--data",
        &ws.path("series.csv"),
        "--switch",
        "gcn",
        "--switch",
        "plain",
        "--out",
        &ws.path("out"),
    ]);
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr_of(&out));
}

#[test]
fn ablation_writes_a_table_with_base_and_variant_rows() {
    let ws = Workspace::new();
    let cfg = base_config().replace("epochs = 2", "epochs = 1");
    std::fs::write(ws.dir.path().join("fast.toml"), cfg).unwrap();
    let out_dir = ws.path("out");
    let out = run(&[
        "ablate",
        "--config",
        &ws.path("fast.toml"),
        "--data",
        &ws.path("series.csv"),
        "--switch",
        "w/o-hid",
        "--out",
        &out_dir,
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let table = std::fs::read_to_string(Path::new(&out_dir).join("ablation.txt")).unwrap();
    assert!(table.contains("base"), "table: {table}");
    assert!(table.contains("w/o-hid"), "table: {table}");
}

#[test]
fn mc_shift_files_are_bytewise_deterministic() {
    let ws = Workspace::new();
    let args = |out: &str| {
        vec![
            "mc".to_string(),
            "shift".to_string(),
            "--samples".to_string(),
            "2000".to_string(),
            "--seed".to_string(),
            "9".to_string(),
            "--out".to_string(),
            out.to_string(),
        ]
    };
    let out_a = ws.path("mc_a");
    let out_b = ws.path("mc_b");
    let first_args = args(&out_a);
    let second_args = args(&out_b);
    let first = run(&first_args.iter().map(String::as_str).collect::<Vec<_>>());
    let second = run(&second_args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(first.status.code(), Some(0), "stderr: {}", stderr_of(&first));
    assert_eq!(second.status.code(), Some(0));
    let hist_a = std::fs::read(Path::new(&out_a).join("mc_histogram.csv")).unwrap();
    let hist_b = std::fs::read(Path::new(&out_b).join("mc_histogram.csv")).unwrap();
    assert_eq!(hist_a, hist_b);
    let summary = std::fs::read_to_string(Path::new(&out_a).join("mc_shift.txt")).unwrap();
    assert!(summary.contains("empirical_mean="), "summary: {summary}");
    assert!(summary.contains("standard_error="), "summary: {summary}");
}

#[test]
fn mc_collapse_writes_a_summary() {
    let ws = Workspace::new();
    let out_dir = ws.path("out");
    let out = run(&[
        "mc",
        "collapse",
        "--mu-i",
        "0",
        "--mu-j",
        "1",
        "--sigma-i",
        "1",
        "--sigma-j",
        "3",
        "--nodes",
        "50",
        "--samples",
        "2000",
        "--out",
        &out_dir,
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = std::fs::read_to_string(Path::new(&out_dir).join("mc_collapse.txt")).unwrap();
    assert!(text.contains("diff_of_means="), "summary: {text}");
    let diff: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("diff_of_means="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((diff - 1.0).abs() < 0.1, "diff of means should be near 1, got {diff}");
}

#[test]
fn exported_adjacency_is_row_normalized_and_top_k_prunes() {
    let ws = Workspace::new();
    let out_dir = ws.path("out");
    let trained = run(&[
        "train",
        "--config",
        &ws.path("run.toml"),
        "--data",
        &ws.path("series.csv"),
        "--out",
        &out_dir,
    ]);
    assert_eq!(trained.status.code(), Some(0), "stderr: {}", stderr_of(&trained));
    let ck = Path::new(&out_dir).join("checkpoint_s4.ckpt");

    let parse_rows = |text: &str| -> Vec<Vec<f64>> {
        text.lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
            .collect()
    };

    let exported = run(&[
        "export-adj",
        "--checkpoint",
        &ck.display().to_string(),
        "--layer",
        "0",
        "--out",
        &out_dir,
    ]);
    assert_eq!(exported.status.code(), Some(0), "stderr: {}", stderr_of(&exported));
    let rows = parse_rows(
        &std::fs::read_to_string(Path::new(&out_dir).join("adjacency_l0.csv")).unwrap(),
    );
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert_eq!(row.len(), 3);
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "mixing rows are normalized, sum {sum}");
        assert!(row.iter().all(|&v| v > 0.0));
    }

    let pruned_dir = ws.path("pruned");
    let pruned = run(&[
        "export-adj",
        "--checkpoint",
        &ck.display().to_string(),
        "--layer",
        "0",
        "--top-k",
        "1",
        "--out",
        &pruned_dir,
    ]);
    assert_eq!(pruned.status.code(), Some(0), "stderr: {}", stderr_of(&pruned));
    let rows = parse_rows(
        &std::fs::read_to_string(Path::new(&pruned_dir).join("adjacency_l0.csv")).unwrap(),
    );
    for row in &rows {
        assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 2);
    }

    // Asking for a layer beyond the model is a usage error.
    let missing = run(&[
        "export-adj",
        "--checkpoint",
        &ck.display().to_string(),
        "--layer",
        "5",
        "--out",
        &out_dir,
    ]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn divergent_training_exits_with_the_divergence_code() {
    let ws = Workspace::new();
    let cfg = base_config().replace("learning_rate = 0.001", "learning_rate = 1e40");
    std::fs::write(ws.dir.path().join("wild.toml"), cfg).unwrap();
    let out = run(&[
        "train",
        "--config",
        &ws.path("wild.toml"),
        "--data",
        &ws.path("series.csv"),
        "--out",
        &ws.path("out"),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("step"), "stderr: {}", stderr_of(&out));
}

#[test]
fn unreadable_data_exits_with_the_data_code() {
    let ws = Workspace::new();
    let out = run(&[
        "train",
        "--config",
        &ws.path("run.toml"),
        "--data",
        &ws.path("no_such_file.csv"),
        "--out",
        &ws.path("out"),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
}
