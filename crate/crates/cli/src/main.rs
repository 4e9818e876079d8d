//! `corsma`: single runs, parameter sweeps and self-tests.
//!
//! Exit status is 0 on success, 1 when a run is infeasible or a self-test
//! check fails, and 2 on invalid input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use corsma::diagnostics::{selftest, SelftestOptions};
use corsma::experiment::{append_manifest, run_sweep, worker_count, RowKind, RunConfig, SweepSpec, TableWriter, WORKERS_ENV};
use corsma::pipeline::RunRecord;
use corsma::{Scheme, SolutionStatus};

#[derive(Debug, Parser)]
#[command(name = "corsma", version, about = "Coordinated RSMA ISAC optimizer for multi-UAV networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize one scenario and write the result record and deployment path.
    Run(RunArgs),
    /// Run a parameter sweep and append its rows to a CSV table.
    Sweep(SweepArgs),
    /// Check gradients, the sensing SNR oracle and model invariants.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML file with `[scenario]` and `[options]` tables; defaults apply
    /// when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set p_max_dbm=20` or
    /// `--set options.channel_mode=rayleigh`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Number of consecutive seeds, starting at `options.seed`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Multiple-access scheme (corsma, sdma, noma, oma).
    #[arg(long)]
    scheme: Option<Scheme>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// TOML sweep specification.
    #[arg(long)]
    sweep: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Seeds per point, replacing the value in the sweep file.
    #[arg(long)]
    seeds: Option<usize>,
    /// Restrict the sweep to one scheme.
    #[arg(long)]
    scheme: Option<Scheme>,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Flip the sign of the sensing gradient; the gradient check must fail.
    #[arg(long)]
    inject_fault: bool,
}

enum Failure {
    Invalid(String),
    Failed(String),
}

impl From<corsma::Error> for Failure {
    fn from(e: corsma::Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let config = match &a.config {
        Some(path) => RunConfig::load(path, &a.overrides)?,
        None => RunConfig::from_overrides(&a.overrides)?,
    };
    let scenario = config.scenario.build().map_err(corsma::Error::from)?;
    let mut options = config.options;
    if let Some(s) = a.scheme {
        options.scheme = s;
    }
    options.validate()?;
    if a.seeds == 0 {
        return Err(Failure::Invalid("--seeds must be at least 1".into()));
    }
    std::fs::create_dir_all(&a.out_dir).map_err(corsma::Error::from)?;

    let mut infeasible = Vec::new();
    for seed in options.seed..options.seed + a.seeds {
        let opts = corsma::RunOptions { seed, ..options };
        let solution = corsma::run(&scenario, &opts)?;
        let stem = format!("run-{}-seed{seed}", opts.scheme);
        let record = RunRecord::new(&scenario, &opts, solution);
        let json = a.out_dir.join(format!("{stem}.json"));
        let path_csv = a.out_dir.join(format!("{stem}-path.csv"));
        record.write_json(&json)?;
        record.write_path_csv(&path_csv)?;
        append_manifest(&a.out_dir, &file_name(&json), &scenario, None)?;
        append_manifest(&a.out_dir, &file_name(&path_csv), &scenario, None)?;

        let sol = &record.solution;
        println!(
            "{} seed {seed}: status {:?}, WSR {:.6e} b/s, common ratio {:.4}, sensing SNR {:.4}, {} outer iterations -> {}",
            opts.scheme,
            sol.status,
            sol.wsr(),
            sol.common_ratio(),
            sol.report.sensing_snr,
            sol.outer_iterations(),
            json.display()
        );
        if sol.status == SolutionStatus::Infeasible {
            infeasible.push(format!("seed {seed} (max violation {:.3e})", sol.violations.max()));
        }
    }
    if infeasible.is_empty() {
        Ok(())
    } else {
        Err(Failure::Failed(format!("infeasible: {}", infeasible.join(", "))))
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let mut spec = SweepSpec::load(&a.sweep, &a.overrides)?;
    if let Some(n) = a.seeds {
        spec.seeds = n;
    }
    if let Some(s) = a.scheme {
        spec.schemes = vec![s];
    }
    spec.validate()?;
    let stem = a.sweep.file_stem().map_or_else(|| "sweep".into(), |s| s.to_string_lossy().into_owned());
    let name = format!("{stem}.csv");
    let mut table = TableWriter::open(&a.out_dir, &name, &spec.base_scenario()?, Some(&spec))?;
    let workers = worker_count();
    let total = spec.points().len();
    eprintln!("{total} points on {workers} workers (set {WORKERS_ENV} to change)");

    let mut written = Ok(());
    let mut done = 0;
    let result = run_sweep(&spec, workers, |row| {
        done += 1;
        log::info!("{done}/{total}: {} = {} {} seed {:?}: {:?}", row.parameter, row.value, row.scheme, row.seed, row.status);
        if written.is_ok() {
            written = table.write(row);
        }
    })?;
    written?;
    for row in &result.summary {
        table.write(row)?;
    }

    println!("{:>10} {:>8} {:>14} {:>12} {:>12} {:>9}", spec.parameter.name(), "scheme", "mean WSR", "C/WSR", "sensing SNR", "feasible");
    for row in result.summary.iter().filter(|r| r.kind == RowKind::Summary) {
        println!(
            "{:>10} {:>8} {:>14.6e} {:>12.4} {:>12.4} {:>5}/{:<3}",
            row.value, row.scheme, row.wsr, row.common_ratio, row.sensing_snr, row.n_feasible, row.n
        );
    }
    println!("-> {}", a.out_dir.join(name).display());
    Ok(())
}

fn cmd_selftest(a: SelftestArgs) -> Result<(), Failure> {
    let report = selftest(&SelftestOptions { seed: a.seed, inject_fault: a.inject_fault, ..Default::default() });
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Failed(format!("{} self-test checks failed", report.failures().count())))
    }
}
