use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use thermofocus::cli::{self, CommonArgs};

#[derive(Parser)]
#[command(
    name = "thermofocus",
    about = "Phased-array hyperthermia planning: SAR focusing, bioheat solves, \
             and temperature-shift corrected targeting",
    version
)]
struct Cli {
    /// Cap the worker thread count (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Force the refinement search mode.
    #[arg(long, value_parser = ["2d", "3d"])]
    mode: Option<String>,
}

impl ScenarioArgs {
    fn common(&self) -> CommonArgs {
        CommonArgs {
            scenario: self.scenario.clone(),
            seed: self.seed,
            mode: self.mode.as_deref().map(|m| m == "3d"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full planning pipeline and write the report directory.
    Plan {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory for the report and maps.
        #[arg(long)]
        out: PathBuf,
        /// Validate the scenario without solving anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Solve the bioheat equation for a SAR map exported earlier.
    Solve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// SAR CSV (grid layout must match the scenario).
        #[arg(long)]
        sar: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize antenna excitations for SAR focusing on the target.
    SarOpt {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Optimization target (only `gtv`).
        #[arg(long, default_value = "gtv")]
        target: String,
        /// Weights JSON path; SAR and |E|^2 CSVs land next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the Gaussian model to an exported |E|^2 map.
    Fit {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// |E|^2 CSV produced by `sar-opt` or `plan`.
        #[arg(long)]
        e2: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-solve a finished plan under perfusion perturbations.
    Sweep {
        /// plan.json produced by `plan`.
        #[arg(long)]
        plan: PathBuf,
        /// Comma-separated case ids (a, b, c).
        #[arg(long, default_value = "a,b,c")]
        cases: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export scenario artifacts (phantom grid or antenna fields).
    Export {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// What to export: `phantom` or `fields`.
        #[arg(long)]
        what: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // Ignore the error if a pool already exists (e.g. repeated in-process
        // invocations under tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Plan {
            scenario,
            out,
            dry_run,
        } => cli::cmd_plan(&scenario.common(), out, *dry_run),
        Command::Solve { scenario, sar, out } => cli::cmd_solve(&scenario.common(), sar, out),
        Command::SarOpt {
            scenario,
            target,
            out,
        } => cli::cmd_sar_opt(&scenario.common(), target, out),
        Command::Fit { scenario, e2, out } => cli::cmd_fit(&scenario.common(), e2, out),
        Command::Sweep { plan, cases, out } => cli::cmd_sweep(plan, cases, out.as_deref()),
        Command::Export { scenario, what, out } => cli::cmd_export(&scenario.common(), what, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
