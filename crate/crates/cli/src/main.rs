//! Command-line harness around the DG energy minimisation experiments:
//! single runs, alpha sweeps across mesh resolutions, gradient verification
//! and the refinement study of the discrete energy.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use dgvar_core::experiments::{csv_string, limsup_study, run_scenario, Scenario};
use dgvar_core::{
    fd_check, DGFunction, DiscreteEnergyConfig, Mesh, Rect,
};

#[derive(Parser)]
#[command(name = "dgvar", about = "DG energy minimisation experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the first (alpha, resolution) cell of a scenario.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the full (alpha x resolution) grid and write the CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Verify the analytic gradient against finite differences on a small
    /// mesh with the scenario's density and penalty.
    CheckGrad {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
    },
    /// Refinement study: discrete energy of the interpolated benchmark
    /// deformation against the continuous energy.
    Limsup {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 4)]
        levels: usize,
    },
}

fn load_scenario(path: &PathBuf) -> Result<Scenario, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    Scenario::from_json(&text).map_err(|e| e.to_string())
}

fn print_rows(record: &dgvar_core::RunRecord) {
    println!("{}", csv_string(record).trim_end());
}

fn random_field(mesh: &Arc<Mesh>, n: usize) -> DGFunction {
    // Fixed linear-congruential sequence keeps the check reproducible
    // without pulling a dependency into the binary.
    let mut state: u64 = 0x2545F4914F6CDD1D;
    let mut u = DGFunction::zeros(mesh.clone(), 1, n);
    for c in u.coeffs.iter_mut() {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        *c = (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
    }
    u
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run { config } => {
            let mut scenario = load_scenario(&config)?;
            scenario.alphas.truncate(1);
            scenario.resolutions.truncate(1);
            let record = run_scenario(&scenario).map_err(|e| e.to_string())?;
            print_rows(&record);
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config } => {
            let scenario = load_scenario(&config)?;
            let record = run_scenario(&scenario).map_err(|e| e.to_string())?;
            print_rows(&record);
            if let Some(dir) = &scenario.output_dir {
                println!("csv written to {dir}/results.csv");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckGrad { config, step } => {
            let scenario = load_scenario(&config)?;
            let mesh = Arc::new(
                Mesh::build_structured_rect(2, 2, Rect::unit_square())
                    .map_err(|e| e.to_string())?,
            );
            let cfg: DiscreteEnergyConfig = scenario
                .config_for(*scenario.alphas.first().unwrap_or(&20.0))
                .map_err(|e| e.to_string())?;
            let u = random_field(&mesh, 2);
            let err = fd_check(&u, &cfg, step).map_err(|e| e.to_string())?;
            let ok = err <= 1e-5;
            println!(
                "gradient check: max relative error {err:.3e} ({})",
                if ok { "PASS" } else { "FAIL" }
            );
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Limsup { config, levels } => {
            let scenario = load_scenario(&config)?;
            let alpha = *scenario.alphas.first().unwrap_or(&20.0);
            let rows = limsup_study(levels, alpha).map_err(|e| e.to_string())?;
            println!("n_triangles,discrete_energy,gap");
            let mut monotone = true;
            for w in rows.windows(2) {
                monotone &= w[1].gap < w[0].gap;
            }
            for row in &rows {
                println!("{},{},{}", row.n_triangles, row.discrete_energy, row.gap);
            }
            println!(
                "gap decreases monotonically: {}",
                if monotone { "yes" } else { "no" }
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
