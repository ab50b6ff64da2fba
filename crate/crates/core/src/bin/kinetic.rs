use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kinetic::cli::{self, Experiment, ExperimentConfig, Overrides, RunManifest};

#[derive(Parser)]
#[command(name = "kinetic", version, about = "Kinetic-to-hydrodynamic experiments on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Flat `key = value` config; omitted keys take the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random test fields (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated, strictly decreasing Knudsen numbers.
    #[arg(long, value_name = "LIST")]
    epsilon_override: Option<String>,
    /// Sweep entries run concurrently on up to this many threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Spectrum of the linearized operator and its kernel.
    Spectrum(RunArgs),
    /// ε-uniform decay of the linear semigroup.
    LinearDecay(RunArgs),
    /// Decay and conservation for small nonlinear data.
    NonlinearDecay(RunArgs),
    /// h⁰ + h¹ against the direct solution under dt refinement.
    SplitConsistency(RunArgs),
    /// Kinetic moments against incompressible Navier–Stokes–Fourier.
    HydroLimit(RunArgs),
    /// Dissipation rates of the B operator on random and shell fields.
    DissipativityScan(RunArgs),
    /// Print the default config of an experiment.
    Config { experiment: String },
    /// Combine manifests into report.md and checks.csv.
    Report {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn experiment_run(experiment: Experiment, args: RunArgs) -> kinetic::Result<RunManifest> {
    let mut cfg = match &args.config {
        Some(p) => cli::load_config(p, experiment)?,
        None => ExperimentConfig::defaults(experiment),
    };
    let overrides = Overrides {
        output_dir: args.out,
        seed: args.seed,
        epsilon: args.epsilon_override.as_deref().map(cli::parse_epsilon_list).transpose()?,
        threads: Some(args.threads),
    };
    overrides.apply(&mut cfg)?;
    cli::run(&cfg, args.threads)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match cli.command {
        Command::Spectrum(a) => (Experiment::Spectrum, a),
        Command::LinearDecay(a) => (Experiment::LinearDecay, a),
        Command::NonlinearDecay(a) => (Experiment::NonlinearDecay, a),
        Command::SplitConsistency(a) => (Experiment::SplitConsistency, a),
        Command::HydroLimit(a) => (Experiment::HydroLimit, a),
        Command::DissipativityScan(a) => (Experiment::DissipativityScan, a),
        Command::Config { experiment } => {
            return match Experiment::parse(&experiment) {
                Some(e) => {
                    print!("{}", ExperimentConfig::defaults(e).to_text());
                    ExitCode::SUCCESS
                }
                None => {
                    eprintln!("unknown experiment `{experiment}`");
                    ExitCode::from(2)
                }
            };
        }
        Command::Report { manifests, out } => {
            let loaded: kinetic::Result<Vec<RunManifest>> = manifests.iter().map(|p| RunManifest::load(p)).collect();
            return match loaded.and_then(|m| cli::emit_report(&m, &out)) {
                Ok(r) => {
                    for f in &r.failing {
                        eprintln!("FAIL {f}");
                    }
                    ExitCode::from(r.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
    };
    match experiment_run(experiment, args) {
        Ok(m) => {
            for c in &m.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if let Some(f) = &m.failure {
                eprintln!("run failed: {f}");
            }
            ExitCode::from(m.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
