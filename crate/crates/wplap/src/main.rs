//! Binary entry point: flag parsing and exit-code plumbing. All behavior
//! lives in the library's `config` and `driver` modules.

use std::path::PathBuf;
use std::process::exit;

use clap::{Parser, Subcommand};

use wplap::config::{parse_config, CommandKind, ExperimentConfig};
use wplap::driver;

#[derive(Parser)]
#[command(
    name = "wplap",
    version,
    about = "Weighted p-Laplacian eigenproblem toolkit: weight admissibility, \
             principal eigenpairs, antimaximum scans, shooting, and inequality suites"
)]
struct Cli {
    /// Flat key=value or JSON config file; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for report.json and CSV/SVG series.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Seed for every randomized family in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Solver tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Admissibility verdict and embedding constant for the configured weights.
    CheckWeights {
        /// Sample-grid size for the pointwise bound checks.
        #[arg(long)]
        grid_size: Option<usize>,
    },
    /// Principal eigenpair by Rayleigh-quotient minimization.
    Eigen {
        /// Element count of the radial mesh.
        #[arg(long)]
        mesh_elements: Option<usize>,
    },
    /// Lambda sweep of the perturbed problem with antimaximum windows.
    AmpScan {
        /// Grid points across the window.
        #[arg(long)]
        steps: Option<usize>,
        /// Window as multiples of lambda1, written lo:hi.
        #[arg(long)]
        window: Option<String>,
    },
    /// p = N = 2 radial shooting with tail diagnostics.
    Shoot {
        /// RK4 step count for the radial IVP.
        #[arg(long)]
        ivp_steps: Option<usize>,
    },
    /// Inequality suites over seeded trial bumps.
    VerifyInequalities {
        /// Trials per inequality.
        #[arg(long)]
        trial_samples: Option<usize>,
    },
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("window must be written lo:hi")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("window lo: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("window hi: {e}"))?;
    Ok((lo, hi))
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            parse_config(&text).map_err(|e| e.to_string())?
        }
        None => ExperimentConfig::default(),
    };
    let kind = match &cli.command {
        CliCommand::CheckWeights { grid_size } => {
            if let Some(g) = grid_size {
                config.grid_size = *g;
            }
            CommandKind::CheckWeights
        }
        CliCommand::Eigen { mesh_elements } => {
            if let Some(m) = mesh_elements {
                config.mesh_elements = *m;
            }
            CommandKind::Eigen
        }
        CliCommand::AmpScan { steps, window } => {
            if let Some(s) = steps {
                config.steps = *s;
            }
            if let Some(w) = window {
                config.window = parse_window(w)?;
            }
            CommandKind::AmpScan
        }
        CliCommand::Shoot { ivp_steps } => {
            if let Some(s) = ivp_steps {
                config.ivp_steps = *s;
            }
            CommandKind::Shoot
        }
        CliCommand::VerifyInequalities { trial_samples } => {
            if let Some(s) = trial_samples {
                config.trial_samples = *s;
            }
            CommandKind::VerifyInequalities
        }
    };
    if let Some(named) = config.command {
        if named != kind {
            return Err(format!(
                "config file names command {named}, but the CLI asked for {kind}"
            ));
        }
    }
    config.command = Some(kind);
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(tol) = cli.tol {
        config.tol = tol;
    }
    Ok(config)
}

fn main() {
    let cli = Cli::parse();
    let config = match build_config(&cli) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            exit(1);
        }
    };
    match driver::run(&config) {
        Ok(summary) => {
            println!("wrote {}", summary.report_path.display());
            if summary.exit_code == 2 {
                eprintln!("numerical nonconvergence; inspect the report for details");
            }
            exit(summary.exit_code);
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit(1);
        }
    }
}
