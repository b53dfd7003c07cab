use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use fluidlogic::formula::parse;
use fluidlogic::harness::{self, check, ExperimentConfig, ExperimentName};
use fluidlogic::modal::{Evaluator, OperatorConfig};
use fluidlogic::training::load_checkpoint;
use fluidlogic::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Parser)]
#[command(name = "fluidlogic", version, about = "Modal logic over neural SDE sample paths")]
struct Cli {
    /// Worker threads (defaults to RAYON_NUM_THREADS or the core count).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics, plot data and checkpoints.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Repeat with seeds `seed, seed + 1, ...`, one subdirectory each.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Evaluate one formula at one or more worlds and print the intervals.
    Eval {
        config: PathBuf,
        #[arg(long)]
        formula: String,
        /// Comma-separated coordinates, or a CSV file with one world per row.
        #[arg(long)]
        world: String,
        /// Network weights written by `run`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the property suite: gap, collapse, limits, concentration, gradients.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parse a formula and print its syntax tree.
    Parse { formula: String },
    /// Print the shipped configuration of an experiment.
    Init {
        #[arg(value_parser = ["swarm", "lorenz", "deontic", "custom"])]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Lib(Error),
    Acceptance(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn run(config: &Path, out: Option<PathBuf>, seeds: u64) -> Result<(), Failure> {
    let base = ExperimentConfig::load(config)?;
    let root = out
        .or_else(|| base.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(base.name.as_str()));
    for i in 0..seeds.max(1) {
        let cfg = ExperimentConfig { seed: base.seed + i, ..base.clone() };
        let dir = if seeds > 1 { root.join(format!("seed-{}", cfg.seed)) } else { root.clone() };
        let start = Instant::now();
        let output = harness::run(&cfg)?;
        let wall = start.elapsed().as_secs_f64();
        write(&dir.join("metrics.json"), &output.metrics.to_json())?;
        let timing = serde_json::json!({
            "experiment": cfg.name.as_str(),
            "seed": cfg.seed,
            "wall_seconds": wall,
        });
        write(&dir.join("timing.json"), &format!("{timing:#}\n"))?;
        for a in &output.artifacts {
            write(&dir.join(&a.name), &a.contents)?;
        }
        println!("{} seed {} -> {} ({wall:.1} s)", cfg.name.as_str(), cfg.seed, dir.display());
        for r in &output.metrics.records {
            let metrics: Vec<String> = r.metrics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
            let flags: Vec<String> = r.flags.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!("  {}: {}", r.variant, metrics.into_iter().chain(flags).collect::<Vec<_>>().join(" "));
        }
    }
    Ok(())
}

fn parse_row(line: &str) -> Result<Vec<f64>, Failure> {
    line.split(',')
        .map(|t| {
            t.trim().parse::<f64>().map_err(|_| Error::Config(format!("`{}` is not a number", t.trim())).into())
        })
        .collect()
}

fn worlds(arg: &str) -> Result<Vec<Vec<f64>>, Failure> {
    let path = Path::new(arg);
    if !path.is_file() {
        return Ok(vec![parse_row(arg)?]);
    }
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        // A non-numeric first line is a header.
        match parse_row(line) {
            Ok(r) => rows.push(r),
            Err(e) if rows.is_empty() && line.chars().any(char::is_alphabetic) => drop(e),
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

fn eval(config: &Path, formula: &str, world: &str, checkpoint: Option<PathBuf>, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let mut setup = harness::setup(&cfg)?;
    if let Some(ckpt) = checkpoint {
        load_checkpoint(&mut setup.library, &fs::read_to_string(ckpt)?)?;
    }
    let f = parse(formula).map_err(Error::from)?;
    let op = OperatorConfig { n_mc: cfg.eval_n_mc, ..cfg.operator.clone() };
    let ev = Evaluator::new(&setup.library, &setup.atoms, &op, &setup.ctx);
    println!("world,lower,upper");
    for w in worlds(world)? {
        let t = ev.eval(&f, &w, seed.unwrap_or(cfg.seed))?;
        let coords: Vec<String> = w.iter().map(f64::to_string).collect();
        println!("\"{}\",{},{}", coords.join(","), t.lower, t.upper);
    }
    Ok(())
}

fn run_check(seed: u64) -> Result<(), Failure> {
    let results = check::run_checks(seed)?;
    for r in &results {
        println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Acceptance(format!("failed: {}", failed.join(", "))))
    }
}

fn init(name: &str, out: Option<PathBuf>) -> Result<(), Failure> {
    let name = match name {
        "swarm" => ExperimentName::Swarm,
        "lorenz" => ExperimentName::Lorenz,
        "deontic" => ExperimentName::Deontic,
        _ => ExperimentName::Custom,
    };
    let text = ExperimentConfig::preset(name).to_json();
    match out {
        Some(path) => write(&path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Run { config, out, seeds } => run(&config, out, seeds),
        Command::Eval { config, formula, world, checkpoint, seed } => eval(&config, &formula, &world, checkpoint, seed),
        Command::Check { seed } => run_check(seed),
        Command::Parse { formula } => {
            let f = parse(&formula).map_err(Error::from)?;
            println!("{f}");
            println!("{f:#?}");
            Ok(())
        }
        Command::Init { name, out } => init(&name, out),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Acceptance(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ACCEPTANCE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { EXIT_NUMERIC } else { EXIT_CONFIG })
        }
    }
}
