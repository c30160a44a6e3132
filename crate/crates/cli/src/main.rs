use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use cmc_core::config::{override_keys, RunConfig, DATA_ROOT_ENV};
use cmc_core::mixing::Transport;
use cmc_core::pipeline;
use cmc_core::training::RunOptions;
use cmc_core::volume::Split;

#[derive(Parser)]
#[command(name = "cmc", version, about = "Contrastive mixup classification for volumetric scans")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config file (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `training.epochs=5`; repeatable, applied in order.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for training and evaluation draws; for synth-data, the phantom seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Data-parallel worker count (training.workers).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Test-time augmentation views per scan, counting the plain eval view (eval.tta_views).
    #[arg(long, global = true)]
    tta: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    InMemory,
    Wire,
}

#[derive(Args)]
struct DataArg {
    /// Dataset root; defaults to data.root, then the environment variable.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    #[arg(long, default_value = "val")]
    split: Split,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset with labels.csv and a split manifest.
    SynthData {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a model; writes best.ckpt, last.ckpt and metrics.csv.
    Train {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Continue from last.ckpt in the output directory.
        #[arg(long)]
        resume: bool,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
        /// Stop after this epoch, leaving a resumable checkpoint.
        #[arg(long, value_name = "EPOCH")]
        stop_after_epoch: Option<usize>,
        #[arg(long, value_enum, default_value = "in-memory")]
        transport: TransportArg,
    },
    /// Evaluate one checkpoint; writes eval_report.json and roc.csv.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Per-scan class probabilities for every scan directory under --input.
    Predict {
        /// Repeat to average an ensemble.
        #[arg(long = "checkpoint", value_name = "PATH", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
    /// Class activation overlays for scans of a split.
    Cam {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Maximum number of scans to render.
        #[arg(long, default_value_t = 8)]
        limit: usize,
    },
    /// Evaluate the average prediction of several checkpoints.
    EnsembleEval {
        #[arg(long = "checkpoint", value_name = "PATH", required = true)]
        checkpoints: Vec<PathBuf>,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn override_help() -> String {
    let mut s = String::from("Config override keys (--set KEY=VALUE), with defaults:\n");
    for (k, v) in override_keys() {
        s.push_str(&format!("  {k} = {v}\n"));
    }
    s.push_str(&format!("\nThe dataset root defaults to ${DATA_ROOT_ENV} when data.root is unset."));
    s
}

fn load_config(common: &Common, synth: bool) -> cmc_core::Result<RunConfig> {
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("{}={seed}", if synth { "phantom.generator.seed" } else { "training.seed" }));
    }
    if let Some(w) = common.workers {
        overrides.push(format!("training.workers={w}"));
    }
    if let Some(t) = common.tta {
        overrides.push(format!("eval.tta_views={t}"));
    }
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn root(cfg: &RunConfig, data: &Option<PathBuf>) -> cmc_core::Result<PathBuf> {
    data.clone().map_or_else(|| cfg.data_root(), Ok)
}

fn run(cli: Cli) -> cmc_core::Result<String> {
    let cfg = load_config(&cli.common, matches!(cli.command, Command::SynthData { .. }))?;
    let report_line = |r: &pipeline::StampedReport, out: &Path| {
        format!("macro F1 {:.4} on {} scans; report in {}", r.report.macro_f1, r.report.samples, out.display())
    };
    Ok(match cli.command {
        Command::SynthData { out, force } => {
            let s = pipeline::cmd_synth_data(&cfg, &out, force)?;
            format!("wrote {} scans ({} train, {} val) to {}", s.scans, s.train, s.val, out.display())
        }
        Command::Train { data, out, resume, force, stop_after_epoch, transport } => {
            let transport = match transport {
                TransportArg::InMemory => Transport::InMemory,
                TransportArg::Wire => Transport::Wire,
            };
            let opts = RunOptions { resume, stop_after_epoch, transport };
            let o = pipeline::cmd_train(&cfg, &root(&cfg, &data)?, &out, opts, force)?;
            let best = o.history.iter().find(|m| m.epoch == o.best_epoch).map_or(f64::NAN, |m| m.val_macro_f1);
            format!("best epoch {} (val macro F1 {best:.4}); checkpoints in {}", o.best_epoch, out.display())
        }
        Command::Eval { checkpoint, data, out } => {
            let r = pipeline::cmd_eval(&cfg, &checkpoint, &root(&cfg, &data.data)?, data.split, &out)?;
            report_line(&r, &out)
        }
        Command::EnsembleEval { checkpoints, data, out } => {
            let r = pipeline::cmd_ensemble_eval(&cfg, &checkpoints, &root(&cfg, &data.data)?, data.split, &out)?;
            report_line(&r, &out)
        }
        Command::Predict { checkpoints, input, out } => {
            let rows = pipeline::cmd_predict(&cfg, &checkpoints, &input, &out)?;
            format!("wrote {} predictions to {}", rows.len(), out.display())
        }
        Command::Cam { checkpoint, data, out, limit } => {
            let files = pipeline::cmd_cam(&cfg, &checkpoint, &root(&cfg, &data.data)?, data.split, &out, limit)?;
            format!("wrote {} overlay images to {}", files.len(), out.display())
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let help = override_help();
    let mut command = Cli::command();
    let names: Vec<String> = command.get_subcommands().map(|c| c.get_name().to_string()).collect();
    for name in names {
        let help = help.clone();
        command = command.mut_subcommand(name, move |c| c.after_help(help));
    }
    let cli = match Cli::from_arg_matches(&command.get_matches()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
