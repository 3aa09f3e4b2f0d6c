use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowsim::commands::{
    cmd_diagnose, cmd_gradcheck, cmd_train, cmd_train_from_manifest, CommandError,
};
use flowsim::gradcheck::GradcheckOptions;

/// Factor `--inject-fault` applies to the analytic rate gradient.
const FAULT_SCALE: f64 = 1.001;

#[derive(Parser)]
#[command(name = "flowsim", version, about = "Federated MCR² training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file, or regenerate a run from its manifest.
    Train(TrainArgs),
    /// Recompute similarity and spectra artifacts from a checkpoint.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `diagnose/` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "50")]
        configs: NonZeroUsize,
        /// Perturb the analytic rate gradient; the check must then fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn dispatch(command: Command) -> Result<(), CommandError> {
    match command {
        Command::Train(args) => {
            let outcome = match (args.config, args.manifest) {
                (Some(config), _) => cmd_train(&config)?,
                (None, Some(manifest)) => cmd_train_from_manifest(&manifest)?,
                (None, None) => unreachable!("clap requires one of --config or --manifest"),
            };
            println!("{}", outcome.run_dir.display());
        }
        Command::Diagnose {
            checkpoint,
            config,
            out,
        } => {
            let summary = cmd_diagnose(&checkpoint, &config, out.as_deref())?;
            println!(
                "inter-class |cos| {:.4}, intra-class |cos| {:.4}, min rank ratio {:.3}",
                summary.orthogonality.inter, summary.orthogonality.intra, summary.min_rank_ratio
            );
        }
        Command::Gradcheck {
            seed,
            configs,
            inject_fault,
        } => {
            let opts = GradcheckOptions {
                seed,
                configs: configs.get(),
                rate_fault: inject_fault.then_some(FAULT_SCALE),
                ..GradcheckOptions::default()
            };
            let report = cmd_gradcheck(&opts)?;
            println!(
                "max relative error {:e} over {} configurations",
                report.max_error,
                report.cases.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flowsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
