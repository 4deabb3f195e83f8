//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use reverie_cli::pipeline::{self, Ablation, ProviderKind, RunManifest, RunOptions};
use reverie_cli::report;

#[derive(Parser)]
#[command(
    name = "reverie",
    about = "Desk-scale engine that turns imagined demonstration videos into optimized actuator trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Oracle,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblateArg {
    #[value(name = "no-init")]
    NoInit,
    #[value(name = "no-contact")]
    NoContact,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on a task file.
    Run {
        /// Task file (TOML).
        #[arg(long)]
        task: PathBuf,
        /// Provider backend.
        #[arg(long, value_enum, default_value = "oracle")]
        provider: ProviderArg,
        /// Seed for every stochastic stage.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reuse cached stage artifacts from the output directory.
        #[arg(long)]
        resume: bool,
        /// Cap on concurrent rollout evaluations.
        #[arg(long)]
        jobs: Option<usize>,
        /// Ablation variant.
        #[arg(long, value_enum)]
        ablate: Option<AblateArg>,
        /// Oracle noise level (0 disables corruption).
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        /// Output directory for stage artifacts and the manifest.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Summarize one or more completed runs.
    Report {
        /// Manifest file(s); two or more produce a comparison table.
        #[arg(long, required = true, num_args = 1..)]
        manifest: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            task,
            provider,
            seed,
            resume,
            jobs,
            ablate,
            noise,
            out,
        } => {
            let options = RunOptions {
                task_path: task,
                provider: match provider {
                    ProviderArg::Oracle => ProviderKind::Oracle,
                    ProviderArg::Remote => ProviderKind::Remote,
                },
                seed,
                resume,
                jobs,
                ablate: ablate.map(|a| match a {
                    AblateArg::NoInit => Ablation::NoInit,
                    AblateArg::NoContact => Ablation::NoContact,
                }),
                noise,
                out_dir: out.clone(),
            };
            match pipeline::run(&options) {
                Ok(manifest) => match report::write_report(&manifest, &out) {
                    Ok(text) => {
                        print!("{text}");
                        ExitCode::SUCCESS
                    }
                    Err(e) => {
                        eprintln!("report failed: {e}");
                        ExitCode::from(e.exit_code() as u8)
                    }
                },
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Report { manifest } => {
            let mut loaded = Vec::new();
            for path in &manifest {
                match RunManifest::load(path) {
                    Ok(m) => loaded.push(m),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(e.exit_code() as u8);
                    }
                }
            }
            if loaded.len() == 1 {
                print!("{}", report::summary(&loaded[0]));
            } else {
                print!("{}", report::comparison(&loaded));
            }
            ExitCode::SUCCESS
        }
    }
}
