use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use passopt::oracle;
use passopt::scenario::{self, presets, Grid, RunOptions, EXIT_ERROR};

/// Distributed convex optimization over delayed networks.
#[derive(Parser)]
#[command(name = "passopt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario (preset name or TOML file).
    Run {
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate every cell of a parameter grid, e.g. `--grid "eta=0.5,1;seed=0..4"`.
    Sweep {
        scenario: String,
        #[arg(long, default_value = "")]
        grid: String,
        #[command(flatten)]
        common: Common,
    },
    /// Solve the centralized problem and print optimum, multipliers and integrator equilibrium.
    Oracle {
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
    /// Bundled scenarios.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// Names and descriptions.
    List,
    /// Print a preset's TOML.
    Show { name: String },
}

#[derive(Args)]
struct Common {
    /// Output directory for telemetry.csv and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the integration step.
    #[arg(long)]
    h: Option<f64>,
    /// Suppress the human-readable report.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            out_dir: self.out.clone(),
            seed: self.seed,
            h: self.h,
            quiet: self.quiet,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<i32> {
    match cmd {
        Command::Run { scenario, common } => {
            let s = scenario::load(&scenario)?;
            let out = scenario::run_scenario(&s, &common.options())?;
            let sum = &out.summary;
            if !common.quiet {
                let status = if sum.diverged {
                    format!("diverged at t = {:.3}", sum.divergence_time.unwrap_or(f64::NAN))
                } else if sum.converged {
                    "converged".to_string()
                } else {
                    "finished without converging".to_string()
                };
                println!("{}: {status}", sum.scenario);
                println!("  z*            = {:?}", sum.oracle.z_star);
                println!("  gap           = {:.3e}", sum.terminal.optimality_gap);
                println!("  consensus err = {:.3e}", sum.terminal.consensus_error);
                if !sum.oracle.lambda_star.is_empty() {
                    println!("  kkt           = {:.3e}", sum.terminal.kkt.max_component());
                }
                for c in &sum.dissipation {
                    println!(
                        "  {:<10} {} (max excess {:.2e}, tol {:.2e})",
                        c.name,
                        if c.passed { "pass" } else { "FAIL" },
                        c.max_violation,
                        c.tol
                    );
                }
                for a in &sum.artifacts {
                    println!("  wrote {a}");
                }
            }
            Ok(sum.exit_code)
        }
        Command::Sweep { scenario, grid, common } => {
            let s = scenario::load(&scenario)?;
            let grid = Grid::parse(&grid)?;
            let report = scenario::sweep(&s, &grid, &common.options())?;
            if !common.quiet {
                print!("{}", report.table());
            }
            Ok(if report.failed > 0 { EXIT_ERROR } else { 0 })
        }
        Command::Oracle { scenario, common } => {
            let s = scenario::load(&scenario)?.with_overrides(common.seed, common.h);
            let built = s.build()?;
            let sol = oracle::solve(&built.problem, &built.graph, built.config.alpha)?;
            let json = serde_json::to_string_pretty(&sol)?;
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
                std::fs::write(dir.join("oracle.json"), &json)?;
            }
            if !common.quiet {
                println!("{json}");
            }
            Ok(0)
        }
        Command::Presets { action } => {
            match action {
                PresetAction::List => {
                    for (name, desc) in presets::list() {
                        println!("{name:<34} {desc}");
                    }
                }
                PresetAction::Show { name } => {
                    let src = presets::source(&name).with_context(|| format!("no preset named '{name}'"))?;
                    print!("{src}");
                }
            }
            Ok(0)
        }
    }
}
