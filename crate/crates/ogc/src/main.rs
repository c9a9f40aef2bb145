//! Command-line front end: run single experiments, sweep strategy grids,
//! write corrupted label sets and gradient-distribution dumps, and run the
//! built-in property checks.

use clap::{Args, Parser, Subcommand};
use ogc::harness::config::{ExperimentConfig, NoiseKind, StrategyKind};
use ogc::harness::{self, last_k_epoch_mean_test_acc, write_metrics_csv};
use ogc::model::MlpModel;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ogc",
    version,
    about = "Noisy-label training with optimized probability-gradient clipping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment; writes metrics.csv and model.ckpt.
    Train(CommonArgs),
    /// Run a grid of experiments and write a comparison table.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Strategies to compare, e.g. "fixed,linear,ema,optimized".
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
        /// epsilon0 values to compare (alternative sweep axis).
        #[arg(long, value_delimiter = ',')]
        epsilon0s: Vec<f64>,
        /// Noise settings per column, e.g. "none,symmetric:0.5,asymmetric:0.4".
        #[arg(long, value_delimiter = ',')]
        noises: Vec<String>,
    },
    /// Corrupt the configured dataset and write labels.csv.
    Corrupt(CommonArgs),
    /// Write the per-sample gradient-distribution dump dist.csv.
    ExportDist {
        #[command(flatten)]
        common: CommonArgs,
        /// Reuse a trained checkpoint instead of training first.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the built-in property checks.
    Verify,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, ExitCode> {
    match ExperimentConfig::from_path(&common.config) {
        Ok(mut cfg) => {
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            Ok(cfg)
        }
        Err(err) => {
            eprintln!("error: {err}");
            Err(ExitCode::from(2))
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Train(common) => {
            let cfg = match load_config(&common) {
                Ok(cfg) => cfg,
                Err(code) => return Ok(code),
            };
            fs::create_dir_all(&common.out_dir)?;
            let out = harness::train(&cfg)?;
            let metrics_path = common.out_dir.join("metrics.csv");
            write_metrics_csv(&out.metrics, BufWriter::new(File::create(&metrics_path)?))?;
            let ckpt_path = common.out_dir.join("model.ckpt");
            out.model.save(BufWriter::new(File::create(&ckpt_path)?))?;
            let last10 = last_k_epoch_mean_test_acc(&out.metrics, 10);
            let last = out.metrics.last().unwrap();
            println!(
                "trained {} epochs: test acc {:.4} (last-10 mean {:.4}), final tau {:.4}",
                cfg.epochs, last.test_acc, last10, last.tau
            );
            println!(
                "wrote {} and {}",
                metrics_path.display(),
                ckpt_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            common,
            strategies,
            epsilon0s,
            noises,
        } => {
            let cfg = match load_config(&common) {
                Ok(cfg) => cfg,
                Err(code) => return Ok(code),
            };
            fs::create_dir_all(&common.out_dir)?;
            run_sweep(&cfg, &strategies, &epsilon0s, &noises, &common.out_dir)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Corrupt(common) => {
            let cfg = match load_config(&common) {
                Ok(cfg) => cfg,
                Err(code) => return Ok(code),
            };
            fs::create_dir_all(&common.out_dir)?;
            let (train_data, _) = harness::build_datasets(&cfg)?;
            let path = common.out_dir.join("labels.csv");
            train_data.write_label_csv(BufWriter::new(File::create(&path)?))?;
            println!(
                "wrote {} ({} rows, flip rate {:.4})",
                path.display(),
                train_data.len(),
                train_data.empirical_flip_rate()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportDist { common, checkpoint } => {
            let cfg = match load_config(&common) {
                Ok(cfg) => cfg,
                Err(code) => return Ok(code),
            };
            fs::create_dir_all(&common.out_dir)?;
            let base = cfg.base_loss()?;
            let (model, train_data) = match checkpoint {
                Some(ckpt) => {
                    let model = MlpModel::load(File::open(&ckpt)?)?;
                    let (train_data, _) = harness::build_datasets(&cfg)?;
                    (model, train_data)
                }
                None => {
                    let out = harness::train(&cfg)?;
                    (out.model, out.train_data)
                }
            };
            let path = common.out_dir.join("dist.csv");
            harness::export_distribution(
                &model,
                &train_data,
                base,
                BufWriter::new(File::create(&path)?),
            )?;
            println!("wrote {} ({} rows)", path.display(), train_data.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify => {
            let results = harness::verify::run_all();
            let mut all_ok = true;
            for r in &results {
                let status = if r.passed { "ok" } else { "FAIL" };
                println!("{status:<4} {:<32} {}", r.name, r.detail);
                all_ok &= r.passed;
            }
            Ok(if all_ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

fn parse_noise(label: &str) -> Result<(NoiseKind, f64), String> {
    let (kind, rate) = match label.split_once(':') {
        None => (label, 0.0),
        Some((kind, rate)) => (
            kind,
            rate.parse::<f64>()
                .map_err(|_| format!("bad noise rate in '{label}'"))?,
        ),
    };
    let kind = match kind {
        "none" => NoiseKind::None,
        "symmetric" => NoiseKind::Symmetric,
        "asymmetric" => NoiseKind::Asymmetric,
        "instance" => NoiseKind::Instance,
        other => return Err(format!("unknown noise kind '{other}'")),
    };
    Ok((kind, rate))
}

fn parse_strategy(label: &str) -> Result<StrategyKind, String> {
    match label {
        "optimized" => Ok(StrategyKind::Optimized),
        "fixed" => Ok(StrategyKind::Fixed),
        "linear" => Ok(StrategyKind::Linear),
        "ema" => Ok(StrategyKind::Ema),
        other => Err(format!("unknown strategy '{other}'")),
    }
}

fn run_sweep(
    base_cfg: &ExperimentConfig,
    strategies: &[String],
    epsilon0s: &[f64],
    noises: &[String],
    out_dir: &Path,
) -> Result<(), Box<dyn std::error::Error>> {
    // default axis: the four threshold strategies
    let rows: Vec<(String, ExperimentConfig)> = if !epsilon0s.is_empty() {
        epsilon0s
            .iter()
            .map(|&e| {
                let mut cfg = base_cfg.clone();
                cfg.strategy = StrategyKind::Optimized;
                cfg.epsilon0 = e;
                (format!("epsilon0={e}"), cfg)
            })
            .collect()
    } else {
        let labels: Vec<String> = if strategies.is_empty() {
            ["fixed", "linear", "ema", "optimized"]
                .iter()
                .map(|s| s.to_string())
                .collect()
        } else {
            strategies.to_vec()
        };
        labels
            .iter()
            .map(|label| {
                let mut cfg = base_cfg.clone();
                cfg.strategy = parse_strategy(label)?;
                Ok((label.clone(), cfg))
            })
            .collect::<Result<_, String>>()?
    };

    let noise_cols: Vec<(String, NoiseKind, f64)> = if noises.is_empty() {
        vec![(
            "configured".to_string(),
            base_cfg.noise,
            base_cfg.noise_rate,
        )]
    } else {
        noises
            .iter()
            .map(|label| {
                let (kind, rate) = parse_noise(label)?;
                Ok((label.clone(), kind, rate))
            })
            .collect::<Result<_, String>>()?
    };

    let path = out_dir.join("sweep.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    write!(w, "method")?;
    for (label, _, _) in &noise_cols {
        write!(w, ",{label}")?;
    }
    writeln!(w, ",average")?;

    for (row_label, row_cfg) in &rows {
        let mut accs = Vec::with_capacity(noise_cols.len());
        for (col_label, kind, rate) in &noise_cols {
            let mut cfg = row_cfg.clone();
            cfg.noise = *kind;
            cfg.noise_rate = *rate;
            cfg.validate()?;
            let out = harness::train(&cfg)?;
            let acc = last_k_epoch_mean_test_acc(&out.metrics, 10);
            println!("{row_label} / {col_label}: last-10 test acc {acc:.4}");
            accs.push(acc);
        }
        write!(w, "{row_label}")?;
        for acc in &accs {
            write!(w, ",{acc}")?;
        }
        writeln!(w, ",{}", accs.iter().sum::<f64>() / accs.len() as f64)?;
    }
    drop(w);
    println!("wrote {}", path.display());
    Ok(())
}
