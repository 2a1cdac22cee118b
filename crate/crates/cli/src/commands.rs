//! Subcommand definitions and implementations.
//!
//! Every command is deterministic given its seeds and inputs; artifacts are
//! written under `--out` (default: the `NODECAST_OUT` environment variable,
//! then the working directory).

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nodecast_core::data::{load_csv, prepare_windows, RawSeries, SplitSpec};
use nodecast_core::model::peek_checkpoint;
use nodecast_core::train::{
    ablation_run, config_fingerprint, evaluate_model, evaluate_naive, fingerprint_parts,
    plot_data_csv, train, AblationSwitch, EpochRecord, ForecastReport, HorizonMetrics,
};
use nodecast_core::{Dtype, Element, Error, McConfig, Model, Result, Tensor};

use crate::config::{load_config_file, lookup_preset, resolve, ResolvedRun};

#[derive(Debug, Parser)]
#[command(
    name = "nodecast",
    version,
    about = "Graph-based multivariate time-series forecasting toolkit",
    propagate_version = true
)]
pub struct Cli {
    /// Worker threads for internal parallelism (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output directory for artifacts (default: $NODECAST_OUT, then ".").
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per forecast length; write checkpoints, reports, and
    /// loss histories.
    Train(TrainArgs),
    /// Evaluate saved checkpoints on the test split; write a report and
    /// per-window plot data.
    Eval(EvalArgs),
    /// Evaluate the repeat-last-day baseline; write a report.
    Naive(NaiveArgs),
    /// Train the base configuration and one switched variant; write a
    /// side-by-side table.
    Ablate(AblateArgs),
    /// Monte Carlo simulators; write summaries and histogram CSVs.
    Mc(McArgs),
    /// Export a checkpoint layer's mixing matrix as CSV.
    ExportAdj(ExportAdjArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run-configuration TOML file ([data]/[model]/[train] sections).
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset CSV (a `date` column plus one numeric column per variate).
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset preset supplying baseline settings (overrides the file's).
    #[arg(long)]
    pub preset: Option<String>,
    /// Forecast length(s) to train; repeatable. Default: from config/preset.
    #[arg(long = "horizon")]
    pub horizons: Vec<usize>,
    /// Static adjacency CSV, required when the learned adjacency is disabled.
    #[arg(long)]
    pub static_adj: Option<PathBuf>,
    /// Numeric precision for parameters and data.
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    pub dtype: DtypeArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint(s) to evaluate, one per forecast length; repeatable.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset preset supplying the split sizes.
    #[arg(long)]
    pub preset: Option<String>,
    /// Training-split rows (without a preset).
    #[arg(long)]
    pub train_len: Option<usize>,
    /// Validation-split rows (without a preset).
    #[arg(long)]
    pub val_len: Option<usize>,
    /// Test-split rows (without a preset).
    #[arg(long)]
    pub test_len: Option<usize>,
    /// Variate index written to the plot-data file.
    #[arg(long, default_value_t = 0)]
    pub node: usize,
    /// Number of test windows in the plot-data file.
    #[arg(long, default_value_t = 8)]
    pub plot_windows: usize,
}

#[derive(Debug, Args)]
pub struct NaiveArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset preset supplying split sizes, standardization, and horizons.
    #[arg(long)]
    pub preset: Option<String>,
    /// Training-split rows (without a preset).
    #[arg(long)]
    pub train_len: Option<usize>,
    /// Validation-split rows (without a preset).
    #[arg(long)]
    pub val_len: Option<usize>,
    /// Test-split rows (without a preset).
    #[arg(long)]
    pub test_len: Option<usize>,
    /// Standardize with training statistics (default: preset setting, else true).
    #[arg(long)]
    pub standardize: Option<bool>,
    /// Input window length fed to the baseline (needs >= 24).
    #[arg(long, default_value_t = 96)]
    pub input_len: usize,
    /// Forecast length(s); repeatable. Default: preset horizons, else 96.
    #[arg(long = "horizon")]
    pub horizons: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Run-configuration TOML file.
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset preset supplying baseline settings.
    #[arg(long)]
    pub preset: Option<String>,
    /// Component switch; repeatable. One of: w/o-variate, w/o-hid, w/o-diw,
    /// w/o-adp, w/o-gfc, gcn, plain.
    #[arg(long = "switch")]
    pub switches: Vec<String>,
    /// Static adjacency CSV (required by w/o-adp).
    #[arg(long)]
    pub static_adj: Option<PathBuf>,
    /// Forecast length (default: first configured horizon).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Numeric precision for parameters and data.
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    pub dtype: DtypeArg,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[command(subcommand)]
    pub mode: McMode,
}

#[derive(Debug, Subcommand)]
pub enum McMode {
    /// Difference of aggregated class means under weighted-mean mixing.
    Collapse {
        /// Mean of class i features.
        #[arg(long, default_value_t = 0.0)]
        mu_i: f64,
        /// Mean of class j features.
        #[arg(long, default_value_t = 0.0)]
        mu_j: f64,
        /// Spread of class i features.
        #[arg(long, default_value_t = 1.0)]
        sigma_i: f64,
        /// Spread of class j features.
        #[arg(long, default_value_t = 3.0)]
        sigma_j: f64,
        /// Nodes per class.
        #[arg(long, default_value_t = 100)]
        nodes: usize,
        /// Monte Carlo draws.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Output distribution of the rectified scaled circular convolution.
    Shift {
        /// Feature mean.
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        /// Feature spread.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Circular kernel length.
        #[arg(long, default_value_t = 2)]
        kernel_len: usize,
        /// Per-channel feature scaling; repeatable, one per channel.
        /// Default: -0.25 and 0.25.
        #[arg(long = "scaler", allow_hyphen_values = true)]
        scalers: Vec<f64>,
        /// Positions per channel.
        #[arg(long, default_value_t = 32)]
        spatial: usize,
        /// Weight mean.
        #[arg(long, default_value_t = 0.0)]
        weight_mu: f64,
        /// Weight spread.
        #[arg(long, default_value_t = 1.0)]
        weight_sigma: f64,
        /// Monte Carlo draws.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Histogram bins.
        #[arg(long, default_value_t = 60)]
        bins: usize,
    },
}

#[derive(Debug, Args)]
pub struct ExportAdjArgs {
    /// Checkpoint to read.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Layer index.
    #[arg(long, default_value_t = 0)]
    pub layer: usize,
    /// Keep only the k largest entries per row, zeroing the rest.
    #[arg(long)]
    pub top_k: Option<usize>,
}

// ---------------------------------------------------------------------------
// Dispatch.
// ---------------------------------------------------------------------------

pub fn dispatch(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        // Ignore the error if a global pool already exists (e.g. in-process
        // tests); thread count only affects speed, not results.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let out = out_dir(cli.out.as_deref())?;
    match cli.command {
        Command::Train(args) => match args.dtype {
            DtypeArg::F32 => cmd_train::<f32>(&args, &out),
            DtypeArg::F64 => cmd_train::<f64>(&args, &out),
        },
        Command::Eval(args) => {
            let (_, dtype) = peek_checkpoint(&args.checkpoints[0])?;
            match dtype {
                Dtype::F32 => cmd_eval::<f32>(&args, &out),
                Dtype::F64 => cmd_eval::<f64>(&args, &out),
            }
        }
        Command::Naive(args) => cmd_naive(&args, &out),
        Command::Ablate(args) => match args.dtype {
            DtypeArg::F32 => cmd_ablate::<f32>(&args, &out),
            DtypeArg::F64 => cmd_ablate::<f64>(&args, &out),
        },
        Command::Mc(args) => cmd_mc(&args.mode, &out),
        Command::ExportAdj(args) => {
            let (_, dtype) = peek_checkpoint(&args.checkpoint)?;
            match dtype {
                Dtype::F32 => cmd_export_adj::<f32>(&args, &out),
                Dtype::F64 => cmd_export_adj::<f64>(&args, &out),
            }
        }
    }
}

fn out_dir(flag: Option<&Path>) -> Result<PathBuf> {
    let dir = match flag {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os("NODECAST_OUT") {
            Some(v) => PathBuf::from(v),
            None => PathBuf::from("."),
        },
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

fn cmd_train<E: Element>(args: &TrainArgs, out: &Path) -> Result<()> {
    let file = load_config_file(&args.config)?;
    let run = resolve(&file, args.preset.as_deref())?;
    let horizons = if args.horizons.is_empty() {
        run.horizons.clone()
    } else {
        args.horizons.clone()
    };
    let raw = load_series::<E>(&args.data, &run)?;
    let static_adj = match &args.static_adj {
        Some(p) => Some(read_adjacency_csv::<E>(p, run.model.n_nodes)?),
        None => None,
    };

    let started = Instant::now();
    let mut per_horizon = Vec::new();
    let mut single_history: Vec<EpochRecord> = Vec::new();
    for &s in &horizons {
        let mut cfg = run.model.clone();
        cfg.output_len = s;
        let data = prepare_windows(&raw, &run.split, run.standardize, cfg.input_len, s)?;
        let outcome = train(cfg, &run.train, &data, static_adj.clone())?;
        let metrics = evaluate_model(&outcome.model, &data.test)?;
        outcome.model.save(out.join(format!("checkpoint_s{s}.ckpt")))?;
        write_history_csv(&outcome.history, &out.join(format!("history_s{s}.csv")))?;
        eprintln!(
            "trained S={s}: test mse {:.6}, mae {:.6}, best epoch {:?}",
            metrics.mse, metrics.mae, outcome.best_epoch
        );
        if horizons.len() == 1 {
            single_history = outcome.history.clone();
        }
        per_horizon.push(metrics);
    }

    let report = ForecastReport::assemble(
        per_horizon,
        config_fingerprint(&run.model, &run.train),
        started.elapsed().as_secs_f64(),
        single_history,
    )?;
    let text = report.to_key_value();
    std::fs::write(out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_eval<E: Element>(args: &EvalArgs, out: &Path) -> Result<()> {
    let split = split_from(
        args.preset.as_deref(),
        args.train_len,
        args.val_len,
        args.test_len,
    )?;
    let raw = load_csv::<E>(&args.data)?;
    let started = Instant::now();
    let mut per_horizon: Vec<HorizonMetrics> = Vec::new();
    let mut fingerprint_src = Vec::new();
    for ck in &args.checkpoints {
        let model = Model::<E>::load(ck)?;
        let cfg = model.cfg.clone();
        check_node_count(&raw, cfg.n_nodes)?;
        let data = prepare_windows(
            &raw,
            &split,
            cfg.global_standardize,
            cfg.input_len,
            cfg.output_len,
        )?;
        per_horizon.push(evaluate_model(&model, &data.test)?);
        let plot = plot_data_csv(&model, &data.test, args.node, args.plot_windows)?;
        let plot_path = out.join(format!("plot_s{}_node{}.csv", cfg.output_len, args.node));
        std::fs::write(plot_path, plot)?;
        fingerprint_src.push(serde_json::to_string(&cfg).expect("config serializes"));
    }
    let parts: Vec<&str> = fingerprint_src.iter().map(String::as_str).collect();
    let report = ForecastReport::assemble(
        per_horizon,
        fingerprint_parts(&parts),
        started.elapsed().as_secs_f64(),
        Vec::new(),
    )?;
    let text = report.to_key_value();
    std::fs::write(out.join("eval_report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_naive(args: &NaiveArgs, out: &Path) -> Result<()> {
    let split = split_from(
        args.preset.as_deref(),
        args.train_len,
        args.val_len,
        args.test_len,
    )?;
    let standardize = match args.standardize {
        Some(v) => v,
        None => match args.preset.as_deref() {
            Some(name) => lookup_preset(name)?.standardize,
            None => true,
        },
    };
    let horizons: Vec<usize> = if !args.horizons.is_empty() {
        args.horizons.clone()
    } else if let Some(name) = args.preset.as_deref() {
        lookup_preset(name)?.horizons.to_vec()
    } else {
        vec![96]
    };

    let raw = load_csv::<f64>(&args.data)?;
    let started = Instant::now();
    let mut per_horizon = Vec::new();
    for &s in &horizons {
        let data = prepare_windows(&raw, &split, standardize, args.input_len, s)?;
        per_horizon.push(evaluate_naive(&data.test)?);
    }
    let fp = fingerprint_parts(&[
        "naive",
        &format!(
            "{},{},{},{},{}",
            split.train_len, split.val_len, split.test_len, standardize, args.input_len
        ),
    ]);
    let report = ForecastReport::assemble(
        per_horizon,
        fp,
        started.elapsed().as_secs_f64(),
        Vec::new(),
    )?;
    let text = report.to_key_value();
    std::fs::write(out.join("naive_report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_ablate<E: Element>(args: &AblateArgs, out: &Path) -> Result<()> {
    let file = load_config_file(&args.config)?;
    let run = resolve(&file, args.preset.as_deref())?;
    let mut cfg = run.model.clone();
    cfg.output_len = args.horizon.unwrap_or(run.horizons[0]);
    let switches: Vec<AblationSwitch> = args
        .switches
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()?;
    let raw = load_series::<E>(&args.data, &run)?;
    let static_adj = match &args.static_adj {
        Some(p) => Some(read_adjacency_csv::<E>(p, cfg.n_nodes)?),
        None => None,
    };
    let data = prepare_windows(&raw, &run.split, run.standardize, cfg.input_len, cfg.output_len)?;
    let report = ablation_run(&cfg, &switches, &run.train, &data, static_adj.as_ref())?;
    let table = report.to_table();
    std::fs::write(out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_mc(mode: &McMode, out: &Path) -> Result<()> {
    match *mode {
        McMode::Collapse {
            mu_i,
            mu_j,
            sigma_i,
            sigma_j,
            nodes,
            samples,
            seed,
        } => {
            let (diff, se) =
                nodecast_core::simulate_collapse(mu_i, mu_j, sigma_i, sigma_j, nodes, samples, seed)?;
            let text = format!(
                "diff_of_means={diff}\nstandard_error={se}\nn_samples={samples}\nnodes_per_class={nodes}\nseed={seed}\n"
            );
            std::fs::write(out.join("mc_collapse.txt"), &text)?;
            print!("{text}");
        }
        McMode::Shift {
            mu,
            sigma,
            kernel_len,
            ref scalers,
            spatial,
            weight_mu,
            weight_sigma,
            samples,
            seed,
            bins,
        } => {
            let scalers = if scalers.is_empty() {
                vec![-0.25, 0.25]
            } else {
                scalers.clone()
            };
            let cfg = McConfig {
                mu,
                sigma,
                kernel_len,
                channels: scalers.len(),
                spatial,
                scalers,
                weight_mu,
                weight_sigma,
                n_samples: samples,
                seed,
                bins,
            };
            let summary = nodecast_core::simulate_gfc_shift(&cfg)?;
            let text = format!(
                "n_samples={}\nempirical_mean={}\nempirical_std={}\nstandard_error={}\nseed={seed}\n",
                summary.n_samples,
                summary.empirical_mean,
                summary.empirical_std,
                summary.standard_error
            );
            std::fs::write(out.join("mc_shift.txt"), &text)?;
            nodecast_core::emit_histogram(&summary, out.join("mc_histogram.csv"))?;
            print!("{text}");
        }
    }
    Ok(())
}

fn cmd_export_adj<E: Element>(args: &ExportAdjArgs, out: &Path) -> Result<()> {
    let model = Model::<E>::load(&args.checkpoint)?;
    let mut a = model.adjacency_matrix(args.layer)?;
    if let Some(k) = args.top_k {
        a = keep_top_k_per_row(&a, k)?;
    }
    let path = out.join(format!("adjacency_l{}.csv", args.layer));
    std::fs::write(&path, matrix_csv(&a, args.layer))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared helpers.
// ---------------------------------------------------------------------------

fn load_series<E: Element>(path: &Path, run: &ResolvedRun) -> Result<RawSeries<E>> {
    let raw = load_csv::<E>(path)?;
    check_node_count(&raw, run.model.n_nodes)?;
    Ok(raw)
}

fn check_node_count<E: Element>(raw: &RawSeries<E>, n_nodes: usize) -> Result<()> {
    if raw.n_variates() != n_nodes {
        return Err(Error::config(
            "model.n_nodes",
            format!(
                "configuration expects {n_nodes} variates but the data has {}",
                raw.n_variates()
            ),
        ));
    }
    Ok(())
}

fn split_from(
    preset_name: Option<&str>,
    train_len: Option<usize>,
    val_len: Option<usize>,
    test_len: Option<usize>,
) -> Result<SplitSpec> {
    if let Some(name) = preset_name {
        let p = lookup_preset(name)?;
        return Ok(SplitSpec {
            train_len: train_len.unwrap_or(p.split.train_len),
            val_len: val_len.unwrap_or(p.split.val_len),
            test_len: test_len.unwrap_or(p.split.test_len),
        });
    }
    match (train_len, val_len, test_len) {
        (Some(tr), Some(va), Some(te)) => Ok(SplitSpec::new(tr, va, te)),
        _ => Err(Error::config(
            "split",
            "--train-len, --val-len, and --test-len are required without --preset",
        )),
    }
}

fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        text.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads an `n × n` matrix from CSV; `#`-prefixed and empty lines are skipped.
fn read_adjacency_csv<E: Element>(path: &Path, n: usize) -> Result<Tensor<E>> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0usize;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = 0usize;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|e| Error::Load {
                path: display.clone(),
                row: line_no + 1,
                reason: format!("bad matrix entry '{field}': {e}"),
            })?;
            data.push(E::of_f64(v));
            cols += 1;
        }
        if cols != n {
            return Err(Error::Load {
                path: display,
                row: line_no + 1,
                reason: format!("expected {n} columns, got {cols}"),
            });
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Load {
            path: display,
            row: text.lines().count(),
            reason: format!("expected {n} rows, got {rows}"),
        });
    }
    Tensor::new(vec![n, n], data)
}

fn matrix_csv<E: Element>(a: &Tensor<E>, layer: usize) -> String {
    let n = a.shape()[0];
    let mut text = format!("# layer={layer}\n");
    for r in 0..n {
        let row: Vec<String> = (0..n)
            .map(|c| format!("{}", a.data()[r * n + c].as_f64()))
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    text
}

fn keep_top_k_per_row<E: Element>(a: &Tensor<E>, k: usize) -> Result<Tensor<E>> {
    if k == 0 {
        return Err(Error::config("export.top_k", "must be positive"));
    }
    let n = a.shape()[0];
    let mut data = a.data().to_vec();
    for r in 0..n {
        let row = &mut data[r * n..(r + 1) * n];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| row[j].partial_cmp(&row[i]).expect("finite entries"));
        for &i in order.iter().skip(k) {
            row[i] = E::zero();
        }
    }
    Tensor::new(vec![n, n], data)
}

// ---------------------------------------------------------------------------
