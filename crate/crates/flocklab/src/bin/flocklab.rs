//! Command-line front end: expands a configuration (file or preset), runs
//! one of the five analysis modes or the built-in verification suite, and
//! reports artifacts and headline numbers.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flocklab::config::{parse_config, SimConfig, PRESET_NAMES};
use flocklab::runner::{self, RunMode};
use flocklab::{accept, Error};

#[derive(Parser)]
#[command(
    name = "flocklab",
    version,
    about = "Simulate and verify nonlinear velocity-alignment dynamics",
    after_help = concat!(
        "Presets: two-body-p2, two-body-p3, subcritical-1d, supercritical-1d,\n",
        "         heavy-tail-flock, p25-algebraic, large-kappa-euler, meanfield-sweep\n",
    )
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate a scenario and write its trajectory series.
    Simulate(RunArgs),
    /// Check conservation laws and decay envelopes along a run.
    Diagnose(RunArgs),
    /// Bin a run into cells and test the hydrodynamic identities.
    Reconstruct(RunArgs),
    /// Classify one-dimensional data and certify collision/coupling bounds.
    Threshold(RunArgs),
    /// Sweep particle counts against a fixed reference flow.
    Meanfield(RunArgs),
    /// Run the built-in verification suite (fourteen numbered checks).
    Verify(RunArgs),
}

impl Cmd {
    fn split(self) -> (Option<RunMode>, RunArgs) {
        match self {
            Cmd::Simulate(a) => (Some(RunMode::Simulate), a),
            Cmd::Diagnose(a) => (Some(RunMode::Diagnose), a),
            Cmd::Reconstruct(a) => (Some(RunMode::Reconstruct), a),
            Cmd::Threshold(a) => (Some(RunMode::Threshold), a),
            Cmd::Meanfield(a) => (Some(RunMode::Meanfield), a),
            Cmd::Verify(a) => (None, a),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file (may name a preset to extend).
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in scenario to run as-is.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,

    /// Override the configured seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Validate and print what would run, writing nothing.
    #[arg(long)]
    dry_run: bool,

    /// Worker threads (default: one per core).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = cli.cmd.split();
    let result = match mode {
        Some(mode) => run_mode(mode, args),
        None => verify(args),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        match e {
            // Bad input: mirrors the usage exit code of the argument parser.
            Error::Argument(_) | Error::Unsupported(_) | Error::Config(_) | Error::Json(_) => {
                ExitCode::from(2)
            }
            Error::Io(_) | Error::BlowUp { .. } => ExitCode::FAILURE,
        }
    })
}

fn load_config(args: &RunArgs) -> flocklab::Result<SimConfig> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), None) => parse_config(&std::fs::read_to_string(path)?)?,
        (None, Some(name)) => SimConfig::from_preset(name)?,
        (None, None) => {
            return Err(Error::Argument(format!(
                "nothing to run: pass --config PATH or --preset NAME (presets: {})",
                PRESET_NAMES.join(", ")
            )))
        }
        (Some(_), Some(_)) => unreachable!("the argument parser rejects this combination"),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.to_string_lossy().into_owned();
    }
    config.validate()?;
    Ok(config)
}

fn run_mode(mode: RunMode, args: RunArgs) -> flocklab::Result<ExitCode> {
    let config = load_config(&args)?;
    if args.dry_run {
        print!("{}", runner::dry_run_text(&config));
        return Ok(ExitCode::SUCCESS);
    }
    let summary = runner::run_with_threads(&config, mode, args.threads)?;
    for line in &summary.lines {
        println!("{line}");
    }
    println!(
        "wrote {} to {}",
        summary.artifacts.join(", "),
        summary.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn verify(args: RunArgs) -> flocklab::Result<ExitCode> {
    if args.config.is_some() || args.preset.is_some() || args.seed.is_some() {
        eprintln!("note: the verification suite is fixed; --config, --preset, and --seed are ignored");
    }
    if args.dry_run {
        for id in 1..=accept::criterion_count() {
            println!("criterion {id:02} {}", accept::criterion_name(id));
        }
        return Ok(ExitCode::SUCCESS);
    }

    let outcomes = match args.threads {
        None => accept::run_all(),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Argument(format!("cannot build a {t}-thread pool: {e}")))?;
            pool.install(accept::run_all)
        }
    };

    let mut lines = Vec::with_capacity(outcomes.len());
    let mut failed = 0usize;
    for outcome in &outcomes {
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        lines.push(format!(
            "[{tag}] criterion {:02} {} — {}",
            outcome.id, outcome.name, outcome.detail
        ));
        if !outcome.passed {
            failed += 1;
        }
    }
    for line in &lines {
        println!("{line}");
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("verify.txt"), lines.join("\n") + "\n")?;
    }
    if failed == 0 {
        println!("all {} criteria passed", outcomes.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{failed} of {} criteria failed", outcomes.len());
        Ok(ExitCode::FAILURE)
    }
}
