use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use viewinv_core::data::synth_generate;
use viewinv_core::verify::run_all;

use viewinv_cli::config::RunConfig;
use viewinv_cli::report::build_report;
use viewinv_cli::run::{prepare, run_baseline, run_eval, run_finetune, run_pretrain, write_json, RunDir};
use viewinv_cli::sweep::{run_sweep, SweepSpec};
use viewinv_cli::CliError;

#[derive(Parser)]
#[command(name = "viewinv", version, about = "View-invariant contrastive learning on multi-view image sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run config (JSON). Omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory; created if missing.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic multi-view dataset as PNGs plus a manifest.
    SynthGen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive pretraining on the training split.
    Pretrain {
        #[command(flatten)]
        args: RunArgs,
        /// Continue from this pretraining checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Save a checkpoint every this many epochs (0: only at the end).
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
    },
    /// Fine-tune a classifier on the labeled training images.
    Finetune {
        #[command(flatten)]
        args: RunArgs,
        /// Pretraining checkpoint; defaults to the run's own.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Cross-entropy training of the same architecture from scratch.
    TrainBaseline {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Evaluate a classifier checkpoint on the test split.
    Eval {
        #[command(flatten)]
        args: RunArgs,
        /// finetune or baseline; selects checkpoints/<model>.ckpt.
        #[arg(long, default_value = "finetune")]
        model: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Grids, ablations, label-fraction curves and k-fold runs.
    Sweep {
        #[command(flatten)]
        args: RunArgs,
        /// key=v1,v2,... (repeatable; cartesian product). Short keys:
        /// gamma, beta, tau, alpha, epochs, final_dim, intermediate_dim.
        #[arg(long)]
        grid: Vec<String>,
        #[arg(long)]
        ablate_loss: bool,
        #[arg(long)]
        ablate_aug: bool,
        /// Label fractions; runs both models per fraction.
        #[arg(long, value_delimiter = ',')]
        label_fractions: Vec<f64>,
        /// Shorthand for --grid epochs=...
        #[arg(long, value_delimiter = ',')]
        epochs: Vec<usize>,
        /// Shorthand for --grid final_dim=...
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// k-fold cross-validation instead of a grid.
        #[arg(long)]
        cv: Option<usize>,
        /// Also train the cross-entropy baseline in every cell.
        #[arg(long)]
        baseline: bool,
    },
    /// Oracle and gradient checks; exit 0 iff all pass.
    Verify {
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// CSV tables and PNG charts from a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn list<T: ToString>(key: &str, v: &[T]) -> Option<String> {
    (!v.is_empty()).then(|| format!("{key}={}", v.iter().map(T::to_string).collect::<Vec<_>>().join(",")))
}

fn open(args: &RunArgs) -> Result<(RunConfig, RunDir), CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let run = RunDir::open(&args.run, &cfg)?;
    Ok((cfg, run))
}

fn default_checkpoint(run: &RunDir, given: Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    let p = given.unwrap_or_else(|| run.checkpoint(name));
    if !p.exists() {
        return Err(CliError::Runtime(format!("checkpoint {} not found", p.display())));
    }
    Ok(p)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SynthGen { config, out } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let ds = synth_generate(&cfg.data.synth, cfg.data.synth_seed, Some(&out))?;
            println!("wrote {} images to {}", ds.len(), out.display());
        }
        Command::Pretrain { args, resume, checkpoint_every } => {
            let (cfg, run) = open(&args)?;
            let data = prepare(&cfg)?;
            let ck = run_pretrain(&cfg, &run, &data, resume.as_deref(), checkpoint_every)?;
            println!("pretraining checkpoint: {}", ck.display());
        }
        Command::Finetune { args, checkpoint } => {
            let (cfg, run) = open(&args)?;
            let pre = default_checkpoint(&run, checkpoint, "pretrain")?;
            let data = prepare(&cfg)?;
            let ck = run_finetune(&cfg, &run, &data, &pre)?;
            println!("classifier checkpoint: {}", ck.display());
        }
        Command::TrainBaseline { args } => {
            let (cfg, run) = open(&args)?;
            let data = prepare(&cfg)?;
            let ck = run_baseline(&cfg, &run, &data)?;
            println!("classifier checkpoint: {}", ck.display());
        }
        Command::Eval { args, model, checkpoint } => {
            let (cfg, run) = open(&args)?;
            let ck = default_checkpoint(&run, checkpoint, &model)?;
            let data = prepare(&cfg)?;
            let r = run_eval(&run, &data, &model, &ck)?;
            println!("{model}: accuracy {:.4} over {} test images", r.overall_accuracy, r.n_test);
            for v in &r.per_view {
                println!("  {:>4}  n={:<4} acc={}", v.view, v.n, v.accuracy.map_or("-".into(), |a| format!("{a:.4}")));
            }
        }
        Command::Sweep { args, mut grid, ablate_loss, ablate_aug, label_fractions, epochs, dims, seeds, cv, baseline } => {
            let cfg = RunConfig::load(args.config.as_deref())?;
            grid.extend(list("epochs", &epochs));
            grid.extend(list("final_dim", &dims));
            let spec = SweepSpec { grids: grid, ablate_loss, ablate_aug, label_fractions, seeds, cv, with_baseline: baseline };
            run_sweep(&cfg, &args.run, &spec)?;
            println!("sweep results in {}", args.run.join("reports").display());
        }
        Command::Verify { out } => {
            let report = run_all()?;
            std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
            write_json(&out.join("verify_report.json"), &report)?;
            for c in &report.checks {
                println!("{} {:<40} worst {:.3e} (threshold {:.0e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.worst_error, c.threshold);
            }
            if !report.passed {
                return Err(CliError::Runtime("verification failed".into()));
            }
        }
        Command::Report { run } => {
            if !Path::new(&run).exists() {
                return Err(CliError::Runtime(format!("run directory {} not found", run.display())));
            }
            for f in build_report(&run)? {
                println!("reports/{f}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("viewinv: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
