//! `edgesel`: train, evaluate and run edge models with pixel-wise feature
//! selection.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edgesel_core::data::{read_image, synth_dataset, tiled_predict, write_dataset, write_gray};
use edgesel_core::gradcheck::{run_scope, Scope};
use edgesel_core::pipeline::{
    checkpoint_path, evaluate, load_model, prepare_data, train, write_delta, write_report, RunLog,
};
use edgesel_core::{Error, EvalSplit, Mode, Result, RunConfig};
use edgesel_tensor::gradcheck::GradCheck;

#[derive(Parser)]
#[command(name = "edgesel", version, about = "Edge detection with pixel-wise feature selection")]
struct Cli {
    /// Worker threads for data preparation, prediction and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` run configuration.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Dataset root with images/ and edges/ (used when the config has none).
    #[arg(long, env = "EDGESEL_DATA")]
    data_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one stage or all three.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// 1, 2, 3 or all.
        #[arg(long, default_value = "all")]
        stage: String,
        /// Output directory (default: the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write metric reports.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// baseline, selected or both (both also writes a delta table).
        #[arg(long, default_value = "both")]
        mode: String,
        /// train or eval split (default: the config's eval_split).
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write an 8-bit edge map for one PNG image.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "selected")]
        mode: String,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// primitive, block or model.
        #[arg(long, default_value = "block")]
        scope: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Directory for gradcheck.log.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Generate a synthetic dataset on disk.
    Synth {
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Add pixel noise to the images.
        #[arg(long)]
        texture: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if cfg.data_root.is_none() {
        cfg.data_root = args.data_root.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_stages(s: &str) -> Result<Vec<u8>> {
    match s {
        "all" => Ok(vec![1, 2, 3]),
        "1" | "2" | "3" => Ok(vec![s.parse().expect("digit")]),
        _ => Err(Error::Config(format!("--stage must be 1, 2, 3 or all, got {s:?}"))),
    }
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { cfg, stage, out } => {
            let cfg = resolve(&cfg)?;
            let stages = parse_stages(&stage)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let log = RunLog::start(&out, "train.log", &cfg, &command_line())?;
            let data = prepare_data(&cfg)?;
            log.line(&format!("train samples {}", data.train.len()))?;
            train(&cfg, &stages, &data.train, &out, Some(&log))?;
            for s in &stages {
                println!("{}", checkpoint_path(&out, *s).display());
            }
        }
        Command::Eval {
            cfg,
            checkpoint,
            mode,
            split,
            out,
        } => {
            let mut cfg = resolve(&cfg)?;
            if let Some(s) = split {
                cfg.set("eval_split", &s)?;
            }
            let mode: Mode = mode.parse()?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let log = RunLog::start(&out, "eval.log", &cfg, &command_line())?;
            log.line(&format!("checkpoint {}", checkpoint.display()))?;
            let (model, store) = load_model(&cfg, &checkpoint)?;
            let data = prepare_data(&cfg)?;
            let samples = data.for_eval(cfg.eval_split);
            let split_name = if cfg.eval_split == EvalSplit::Train { "train" } else { "eval" };
            log.line(&format!("{split_name} samples {}", samples.len()))?;
            let mut reports = Vec::new();
            for (name, m) in [("baseline", Mode::Baseline), ("selected", Mode::Selected)] {
                if mode != Mode::Both && mode != m {
                    continue;
                }
                let r = evaluate(&cfg, &model, &store, samples, m)?;
                write_report(&out, name, &r)?;
                log.line(&format!("{name} ods {:.6} ois {:.6} ap {:.6}", r.ods, r.ois, r.ap))?;
                print!("{name}\n{}", r.to_text());
                reports.push(r);
            }
            if let [b, s] = &reports[..] {
                let table = write_delta(&out, b, s)?;
                log.line(table.trim_end())?;
                print!("{table}");
            }
        }
        Command::Predict {
            cfg,
            checkpoint,
            image,
            out,
            mode,
        } => {
            let cfg = resolve(&cfg)?;
            let mode: Mode = mode.parse()?;
            let log_dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let name = format!("{}.log", out.file_name().and_then(|n| n.to_str()).unwrap_or("predict"));
            let log = RunLog::start(log_dir, &name, &cfg, &command_line())?;
            let (model, store) = load_model(&cfg, &checkpoint)?;
            let img = read_image(&image)?;
            let map = tiled_predict(&model, &store, &img, cfg.tile, mode)?;
            write_gray(&out, map.height(), map.width(), &map.to_u8())?;
            log.line(&format!("wrote {} ({}x{})", out.display(), map.height(), map.width()))?;
        }
        Command::Gradcheck { scope, seed, trials, out } => {
            let scope: Scope = scope.parse()?;
            let cfg = RunConfig {
                seed,
                ..RunConfig::default()
            };
            let log = RunLog::start(&out, "gradcheck.log", &cfg, &command_line())?;
            let check = GradCheck {
                seed,
                ..GradCheck::default()
            };
            let suite = run_scope(scope, trials, &check)?;
            let mut failed = 0;
            for e in &suite {
                let status = if e.passed { "ok" } else { "FAIL" };
                let mut line = format!("{status:<4} {:<22} trials {:>3} max rel err {:.3e}", e.name, e.trials, e.max_rel_err);
                if !e.uncovered.is_empty() {
                    line.push_str(&format!(" never probed: {}", e.uncovered.join(", ")));
                }
                println!("{line}");
                log.line(&line)?;
                failed += usize::from(!e.passed);
            }
            if failed > 0 {
                return Err(Error::Contract(format!("{failed} of {} gradient checks failed", suite.len())));
            }
        }
        Command::Synth {
            count,
            size,
            seed,
            texture,
            out,
        } => {
            if size < 32 {
                return Err(Error::Config("synth size must be at least 32".into()));
            }
            let cfg = RunConfig {
                seed,
                synth_count: count,
                synth_size: size,
                synth_texture: texture,
                ..RunConfig::default()
            };
            let log = RunLog::start(&out, "synth.log", &cfg, &command_line())?;
            let samples = synth_dataset(count, size, seed, texture)?;
            write_dataset(&out, &samples)?;
            log.line(&format!("wrote {} samples", samples.len()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads {n}: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
