//! Experiment runner: train ensembles from spec files, sweep parameter
//! grids, emit report tables, and run the independent-oracle suite.
//!
//! Exit codes: 0 success, 2 malformed spec, 3 numeric abort during training,
//! 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dice_core::experiment::{
    self, expand_grid, load_run, parse_grid_axis, run_experiment, write_reports, ExperimentError,
    ExperimentSpec, Preset,
};

/// Environment variable naming the default output root.
const OUT_ROOT_ENV: &str = "DICE_LAB_OUT";

#[derive(Parser)]
#[command(name = "dice-lab", version, about = "Deep-ensemble diversity training laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one experiment spec (one run directory per seed).
    Train(TrainArgs),
    /// Expand a parameter grid over a spec and train every point.
    Sweep(SweepArgs),
    /// Aggregate run directories into CSV tables and plot data.
    Report(ReportArgs),
    /// Run the independent-oracle verification suite.
    Oracle(OracleArgs),
    /// Re-execute a run directory and verify byte-identical outputs.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Output root (default: $DICE_LAB_OUT, then ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the spec's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the spec's preset.
    #[arg(long)]
    preset: Option<String>,
    /// Also score the OOD task with the discriminator-scaled confidence.
    #[arg(long)]
    dice_w_scoring: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid axis `path=v1,v2,...`; repeat for a cross product
    /// (e.g. --grid train.delta=0.0,0.1,0.2 --grid train.members=2,4).
    #[arg(long)]
    grid: Vec<String>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    dice_w_scoring: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories to aggregate.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Where to write report.csv / tradeoff.csv / dynamics.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Seeds for the trained-estimator fidelity check.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 2, 3, 4, 5])]
    cmi_seeds: Vec<u64>,
    /// Skip the slow trained-estimator check.
    #[arg(long)]
    quick: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Run directory containing spec.resolved.toml.
    run: PathBuf,
}

fn out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn parse_preset(name: &str) -> Result<Preset, String> {
    match name {
        "desk" => Ok(Preset::Desk),
        "paper10" => Ok(Preset::Paper10),
        "paper100" => Ok(Preset::Paper100),
        other => Err(format!("unknown preset `{other}` (desk | paper10 | paper100)")),
    }
}

fn load_spec(
    path: &Path,
    seed: Option<u64>,
    preset: Option<&str>,
    dice_w: bool,
) -> Result<ExperimentSpec, ExperimentError> {
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(s) = seed {
        spec.seeds = vec![s];
    }
    if let Some(p) = preset {
        spec.preset = parse_preset(p).map_err(ExperimentError::BadSpec)?;
    }
    if dice_w {
        spec.report.dice_w_scoring = true;
    }
    spec.validate()?;
    Ok(spec)
}

fn exit_for(err: &ExperimentError) -> ExitCode {
    match err {
        ExperimentError::BadSpec(_) => ExitCode::from(2),
        ExperimentError::Train(_) => ExitCode::from(3),
        ExperimentError::Io(_) => ExitCode::from(1),
    }
}

fn cmd_train(args: TrainArgs) -> ExitCode {
    let spec = match load_spec(&args.spec, args.seed, args.preset.as_deref(), args.dice_w_scoring)
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };
    let root = out_root(args.out);
    match run_experiment(&spec, &root) {
        Ok(summaries) => {
            for s in &summaries {
                println!(
                    "{}-s{}: acc {:.4} ind {:.4} ratio-error {} nll {:.4}",
                    s.name,
                    s.seed,
                    s.final_val.ensemble_accuracy,
                    s.final_val.mean_individual_accuracy,
                    if s.final_val.ratio_error.is_finite() {
                        format!("{:.3}", s.final_val.ratio_error)
                    } else {
                        "inf".into()
                    },
                    s.final_val.uncertainty.nll,
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}

fn cmd_sweep(args: SweepArgs) -> ExitCode {
    let spec = match load_spec(&args.spec, None, args.preset.as_deref(), args.dice_w_scoring) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };
    let axes: Result<Vec<_>, String> = args.grid.iter().map(|g| parse_grid_axis(g)).collect();
    let axes = match axes {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let points = match expand_grid(&spec, &axes) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let root = out_root(args.out);
    println!("sweep: {} grid points x {} seeds", points.len(), spec.seeds.len());
    let mut failures = 0usize;
    let mut all = Vec::new();
    for point in &points {
        // partial-failure isolation: one failing point does not stop the sweep
        match run_experiment(point, &root) {
            Ok(summaries) => all.extend(summaries),
            Err(e) => {
                eprintln!("point {} failed: {e}", point.name);
                failures += 1;
            }
        }
    }
    let summary = serde_json::json!({
        "points": points.len(),
        "seeds": spec.seeds,
        "failures": failures,
        "runs": all,
    });
    let path = root.join(format!("{}-sweep.json", spec.name));
    if let Err(e) = std::fs::write(&path, serde_json::to_string_pretty(&summary).unwrap()) {
        eprintln!("error writing sweep summary: {e}");
        return ExitCode::from(1);
    }
    println!("sweep summary: {}", path.display());
    if failures > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_report(args: ReportArgs) -> ExitCode {
    let mut runs = Vec::new();
    for dir in &args.runs {
        match load_run(dir) {
            Ok(r) => runs.push(r),
            Err(e) => {
                eprintln!("error loading {}: {e}", dir.display());
                return ExitCode::from(2);
            }
        }
    }
    let out = args.out.unwrap_or_else(|| PathBuf::from("report"));
    match write_reports(&runs, &out) {
        Ok(()) => {
            println!("wrote {}", out.join("report.csv").display());
            println!("wrote {}", out.join("tradeoff.csv").display());
            println!("wrote {}", out.join("dynamics.csv").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_oracle(args: OracleArgs) -> ExitCode {
    let mut failed = false;
    let seeds: &[u64] = if args.quick { &[] } else { &args.cmi_seeds };
    for (name, result) in dice_core::checks::oracle_suite(seeds) {
        match result {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(msg) => {
                println!("[FAIL] {name}: {msg}");
                failed = true;
            }
        }
    }
    if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_replay(args: ReplayArgs) -> ExitCode {
    match experiment::replay_check(&args.run) {
        Ok(diffs) if diffs.is_empty() => {
            println!("replay of {} is byte-identical", args.run.display());
            ExitCode::SUCCESS
        }
        Ok(diffs) => {
            eprintln!("replay differs in: {}", diffs.join(", "));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Report(args) => cmd_report(args),
        Cmd::Oracle(args) => cmd_oracle(args),
        Cmd::Replay(args) => cmd_replay(args),
    }
}
