//! homog-lab: command-line front end for the homogenization laboratory.
//!
//! Usage: homog-lab <command> --config <path> [--out <dir>] [--workers N]
//! [--seed S]. The subcommand must agree with the `command` key inside the
//! config file; a mismatch is a schema error.
//!
//! Exit status: 0 all gated checks pass, 1 a gated check failed, 2 config or
//! schema problem, 3 solver failure.

use clap::{Args, Parser, Subcommand};
use homog_lab::config::{load_config, CommandKind};
use homog_lab::effective::ALL_EFFECTIVE_CHECKS;
use homog_lab::operators::{ALL_ASSUMPTIONS, ALL_FAMILIES};
use homog_lab::vcalc::ALL_INEQUALITIES;
use homog_lab::{pipeline, Error};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "homog-lab", version, about = "Periodic homogenization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory (overrides output.directory in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads. Not part of the config hash: any value must
    /// reproduce byte-identical reports.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Override the seed in the config (affects the experiment id).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Audit the V-function inequalities by random sampling.
    Vtest(RunArgs),
    /// Verify structural assumptions of an operator by random sampling.
    CheckOperator(RunArgs),
    /// Solve the periodic corrector (and optionally flux corrector) problem.
    Cell(RunArgs),
    /// Tabulate the homogenized operator and check its structure.
    Effective(RunArgs),
    /// Solve one oscillating Dirichlet problem.
    Bvp(RunArgs),
    /// Measure the two-scale expansion error rate across an epsilon ladder.
    TwoScale(RunArgs),
    /// Run an epsilon-uniform regularity measurement.
    Regularity(RunArgs),
    /// List built-in operator families, coefficient kinds, and check ids.
    ListBuiltins {
        /// Emit JSON instead of the human-readable listing.
        #[arg(long)]
        machine: bool,
    },
}

const COEFFICIENT_KINDS: [(&str, &str); 4] = [
    ("constant", "spatially constant scalar coefficient"),
    ("laminate", "piecewise-constant in one coordinate, 1-periodic"),
    ("checkerboard", "two-value checkerboard on a periodic grid"),
    ("trig-polynomial", "clamped trigonometric polynomial"),
];

fn list_builtins(machine: bool) {
    if machine {
        let v = serde_json::json!({
            "families": ALL_FAMILIES.iter().map(|f| serde_json::json!({
                "name": f.name(), "description": f.description(),
            })).collect::<Vec<_>>(),
            "coefficients": COEFFICIENT_KINDS.iter().map(|(n, d)| serde_json::json!({
                "name": n, "description": d,
            })).collect::<Vec<_>>(),
            "inequalities": ALL_INEQUALITIES.iter().map(|i| serde_json::json!({
                "name": i.name(), "description": i.description(),
            })).collect::<Vec<_>>(),
            "assumptions": ALL_ASSUMPTIONS.iter().map(|a| serde_json::json!({
                "name": a.name(), "description": a.description(),
            })).collect::<Vec<_>>(),
            "effective-checks": ALL_EFFECTIVE_CHECKS.iter().map(|c| serde_json::json!({
                "name": c.name(),
            })).collect::<Vec<_>>(),
        });
        println!("{}", serde_json::to_string_pretty(&v).unwrap());
        return;
    }
    println!("operator families ({}):", ALL_FAMILIES.len());
    for f in ALL_FAMILIES {
        println!("  {:<18} {}", f.name(), f.description());
    }
    println!("coefficient kinds ({}):", COEFFICIENT_KINDS.len());
    for (n, d) in COEFFICIENT_KINDS {
        println!("  {n:<18} {d}");
    }
    println!("inequality audits ({}):", ALL_INEQUALITIES.len());
    for i in ALL_INEQUALITIES {
        println!("  {:<18} {}", i.name(), i.description());
    }
    println!("operator assumptions ({}):", ALL_ASSUMPTIONS.len());
    for a in ALL_ASSUMPTIONS {
        println!("  {:<18} {}", a.name(), a.description());
    }
    println!("effective structure checks ({}):", ALL_EFFECTIVE_CHECKS.len());
    for c in ALL_EFFECTIVE_CHECKS {
        println!("  {}", c.name());
    }
}

fn run_command(expected: CommandKind, args: &RunArgs) -> ExitCode {
    let mut cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.command != expected {
        eprintln!(
            "error: config declares command '{}' but the '{}' subcommand was invoked",
            cfg.command.name(),
            expected.name()
        );
        return ExitCode::from(2);
    }
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let id = cfg.experiment_id();
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.directory.clone())
        .unwrap_or_else(|| PathBuf::from(format!("homog-lab-out/{}-{}", expected.name(), &id[..12])));
    match pipeline::run(&cfg, &out, args.workers) {
        Ok(manifest) => {
            for c in &manifest.checks {
                let tag = if c.pass { "PASS" } else { "FAIL" };
                let kind = if c.gated { "gated" } else { "exploratory" };
                println!("[{tag}] ({kind}) {}: {}", c.name, c.detail);
            }
            println!(
                "experiment {} -> {} ({} artifacts, {:.2}s)",
                &manifest.experiment_id[..12],
                out.display(),
                manifest.artifacts.len(),
                manifest.wall_time_s
            );
            if manifest.all_gated_pass {
                ExitCode::SUCCESS
            } else {
                println!("verdict: FAIL (a gated check failed)");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) | Error::Io(_) => ExitCode::from(2),
                Error::SolverFailure(..) | Error::ExpansionFailure(_) => ExitCode::from(3),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Vtest(a) => run_command(CommandKind::Vtest, a),
        Command::CheckOperator(a) => run_command(CommandKind::CheckOperator, a),
        Command::Cell(a) => run_command(CommandKind::Cell, a),
        Command::Effective(a) => run_command(CommandKind::Effective, a),
        Command::Bvp(a) => run_command(CommandKind::Bvp, a),
        Command::TwoScale(a) => run_command(CommandKind::TwoScale, a),
        Command::Regularity(a) => run_command(CommandKind::Regularity, a),
        Command::ListBuiltins { machine } => {
            list_builtins(*machine);
            ExitCode::SUCCESS
        }
    }
}
