use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use clap::{Parser, Subcommand};

use popdelay_core::analysis::{compare_runs, RunReport};
use popdelay_core::experiment::{ExperimentConfig, ResolvedExperiment, RhoSpec};
use popdelay_core::output::{write_atomic, write_run};
use popdelay_core::revision::{max_valid_rho, RhoBound, AUTO_RHO_RESOLUTION, AUTO_RHO_SAFETY};
use popdelay_core::{run_experiment, Error, Game};

/// Samples used by `check-game` for the contractivity test.
const CONTRACTIVITY_SAMPLES: usize = 10_000;

/// Clipped mass above this is reported as a warning.
const CLIP_ALARM: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "popdelay", version, about = "Delayed Smith dynamics with revision-rate tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory (overrides the config's output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Record every k-th step (overrides the config's stride).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    stride: Option<u64>,

    /// Print only errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write trajectory, update log, report and metadata.
    Simulate { config: PathBuf },
    /// Check contractivity of the configured game and calibrate rho.
    CheckGame { config: PathBuf },
    /// Run several experiments concurrently and rank them.
    Compare {
        #[arg(required = true, num_args = 2..)]
        configs: Vec<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Check,
    Config(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check => 1,
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn from_run(e: Error) -> Self {
        match e {
            Error::NonFinite { t, last_good } => Failure::Numeric(format!(
                "non-finite state at t = {t}; last good time t = {last_good}"
            )),
            Error::Io(e) => Failure::Config(format!("output: {e}")),
            other => Failure::Numeric(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config } => simulate(&cli, config),
        Command::CheckGame { config } => check_game(&cli, config),
        Command::Compare { configs } => compare(&cli, configs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Check => {}
                Failure::Config(msg) => eprintln!("config error: {msg}"),
                Failure::Numeric(msg) => eprintln!("numerical failure: {msg}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn load(cli: &Cli, path: &Path) -> Result<ResolvedExperiment, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_json_str(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if let Some(s) = cli.stride {
        cfg.stride = Some(s as usize);
    }
    if cfg.label.is_none() {
        cfg.label = Some(stem(path));
    }
    cfg.resolve()
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned())
}

fn output_dir(cli: &Cli, exp: &ResolvedExperiment, path: &Path) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| exp.config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(stem(path)))
}

fn simulate(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let exp = load(cli, path)?;
    let dir = output_dir(cli, &exp, path);
    if !cli.quiet {
        println!("# popdelay simulate {}", path.display());
        print!("{}", exp.consts.to_text_block());
        println!("h = {}\nstride = {}\nhorizon = {}", exp.h, exp.stride, exp.config.horizon);
    }
    let outcome = run_experiment(&exp).map_err(Failure::from_run)?;
    write_run(&dir, &outcome, &exp.config, &exp.consts).map_err(Failure::from_run)?;
    if outcome.report.clipped_mass > CLIP_ALARM {
        eprintln!(
            "warning: clipped {:.3e} of mass to keep the state non-negative",
            outcome.report.clipped_mass
        );
    }
    if !cli.quiet {
        println!("# report");
        print!("{}", outcome.report.to_text_block());
        println!("output = {}", dir.display());
    }
    Ok(())
}

fn check_game(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let exp = load(cli, path)?;
    let game: &Game = &exp.game;
    let report = game.verify_contractive(CONTRACTIVITY_SAMPLES);
    let bound = max_valid_rho(game, AUTO_RHO_RESOLUTION)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let rho_ok = match exp.config.rho {
        RhoSpec::Auto(_) => true,
        RhoSpec::Value(r) => bound.admits(r),
    };
    if !cli.quiet {
        println!("# contractivity");
        println!("contractive = {}", report.contractive);
        println!("worst_value = {:.6e}", report.worst_value);
        println!("sampled_worst = {:.6e}", report.sampled_worst);
        if let Some(w) = report.exact_worst {
            println!("exact_worst = {w:.6e}");
        }
        println!("B_DF = {:.9}", game.bound_df());
        println!("# rho calibration");
        match bound {
            RhoBound::Finite(b) => {
                println!("rho_max = {b:.9}");
                println!("rho_auto = {:.9}", b * AUTO_RHO_SAFETY);
            }
            RhoBound::Any => println!("rho_max = any ϱ valid"),
        }
        println!("rho = {:.9}", exp.params.rho);
        println!("rho_valid = {rho_ok}");
    }
    if let Some(w) = &report.witness {
        println!("witness_x = {}", join(&w.x));
        println!("witness_tangent = {}", join(&w.tangent));
    }
    if report.contractive && rho_ok {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|e| format!("{e:.9}")).collect::<Vec<_>>().join(",")
}

fn compare(cli: &Cli, paths: &[PathBuf]) -> Result<(), Failure> {
    let exps = paths
        .iter()
        .map(|p| load(cli, p))
        .collect::<Result<Vec<_>, _>>()?;
    let root = cli.out.clone().unwrap_or_else(|| PathBuf::from("out").join("compare"));
    let results: Vec<Result<RunReport, Failure>> = thread::scope(|scope| {
        let handles: Vec<_> = exps
            .iter()
            .zip(paths)
            .enumerate()
            .map(|(idx, (exp, path))| {
                let dir = root.join(format!("{:02}-{}", idx + 1, stem(path)));
                scope.spawn(move || {
                    let outcome = run_experiment(exp).map_err(Failure::from_run)?;
                    write_run(&dir, &outcome, &exp.config, &exp.consts).map_err(Failure::from_run)?;
                    Ok(outcome.report)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Failure::Numeric("run panicked".into()))))
            .collect()
    });

    let mut reports = Vec::new();
    let mut first_failure = None;
    for (path, r) in paths.iter().zip(results) {
        match r {
            Ok(rep) => reports.push(rep),
            Err(f) => {
                eprintln!("FAILED {}: {f:?}", path.display());
                first_failure.get_or_insert(f);
            }
        }
    }
    let table = compare_runs(&reports);
    fs::create_dir_all(&root).map_err(|e| Failure::Config(format!("output: {e}")))?;
    let mut csv = table.to_csv();
    if first_failure.is_some() {
        csv.push_str("# partial: some runs failed\n");
    }
    write_atomic(&root.join("comparison.csv"), csv.as_bytes()).map_err(Failure::from_run)?;
    if !cli.quiet {
        print!("{}", table.to_text());
        println!("output = {}", root.display());
    }
    match first_failure {
        Some(f) => Err(f),
        None => Ok(()),
    }
}
