//! Scenario runner: executes simulation configs and writes the plot-ready
//! CSV artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sunivr::scenario::{
    apply_tolerance, load_config, run_scenario, run_suite, SuiteOutcome,
};

#[derive(Parser)]
#[command(
    name = "sunivr",
    about = "Semiclassical, exact and classical propagation of n-mode bosonic models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for the trajectory ensemble (default: all cores).
    /// Output files are bit-identical for any worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the integrator relative tolerance (absolute becomes tol/100)
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Root directory for scenario outputs
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single scenario config; artifacts land in <out>/<config stem>/
    Run { config: PathBuf },
    /// Run every *.cfg in a directory (sorted by name)
    Suite { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("error: could not configure {workers} workers: {e}");
            return ExitCode::from(1);
        }
    }
    match cli.command {
        Command::Run { config } => {
            let stem = config
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "scenario".to_string());
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            if let Some(tol) = cli.tol {
                apply_tolerance(&mut cfg, tol);
            }
            let out_dir = cli.out.join(&stem);
            match run_scenario(&cfg, &out_dir) {
                Ok(report) => {
                    println!(
                        "{stem}: {} trajectories ({} filtered, {} singular), \
                         max |sc-exact| = {:.4e}, {:.1} s -> {}",
                        report.total_trajectories,
                        report.filtered,
                        report.singular,
                        report.max_dev_semiclassical,
                        report.wall_seconds,
                        out_dir.display()
                    );
                    if report.accept_passed() {
                        ExitCode::SUCCESS
                    } else {
                        for v in &report.accept_violations {
                            eprintln!("accept: {v}");
                        }
                        ExitCode::from(2)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Suite { dir } => {
            let mut configs: Vec<PathBuf> = match std::fs::read_dir(&dir) {
                Ok(entries) => entries
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
                    .collect(),
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", dir.display());
                    return ExitCode::from(1);
                }
            };
            configs.sort();
            let results = match run_suite(&configs, &cli.out, cli.tol) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let mut worst = ExitCode::SUCCESS;
            for (name, outcome) in &results {
                match outcome {
                    SuiteOutcome::Completed(r) if r.accept_passed() => {
                        println!(
                            "{name}: ok (max |sc-exact| = {:.4e}, {:.1} s)",
                            r.max_dev_semiclassical, r.wall_seconds
                        );
                    }
                    SuiteOutcome::Completed(r) => {
                        println!("{name}: accept FAILED");
                        for v in &r.accept_violations {
                            eprintln!("  {v}");
                        }
                        worst = ExitCode::from(2);
                    }
                    SuiteOutcome::Failed(msg) => {
                        println!("{name}: error");
                        eprintln!("  {msg}");
                        worst = ExitCode::from(1);
                    }
                }
            }
            worst
        }
    }
}
