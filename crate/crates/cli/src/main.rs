mod config;
mod experiments;

use clap::{Parser, Subcommand};
use config::{resolve, split_flags, RunConfig, EXPERIMENTS};
use experiments::{run_experiment, Outcome};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_CHECK: u8 = 4;

const RUN_HELP: &str = "\
Flags (any order, `--key value` or `--key=value`):
  --config FILE        TOML run config
  --seed N             master seed
  --threads N          worker threads (wall time only; results never change)
  --check              exit 4 unless every acceptance threshold holds
  --snapshot-every N   recording interval in steps
  --out DIR            output directory (default: $SWARMLAB_OUT/<experiment>, else ./swarmlab-out/<experiment>)
  --section.key=value  override any config entry, e.g. --dds.n=50000
  --key value          shorthand for the experiment's own section, e.g. --shots 1000";

#[derive(Parser)]
#[command(name = "swarmlab", version, about = "Run sample-swarm experiments and export plot-ready data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment, named positionally or by the config file.
    #[command(after_help = RUN_HELP)]
    Run {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "EXPERIMENT] [FLAGS")]
        args: Vec<String>,
    },
    /// List experiment names.
    ListExperiments,
    /// Resolve a config (plus overrides) and print it without running.
    ValidateConfig {
        file: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<swarmlab::Error> for Failure {
    fn from(e: swarmlab::Error) -> Self {
        use swarmlab::Error::*;
        match e {
            Config(_) | Unstable { .. } | Lattice(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn io(e: impl std::fmt::Display, what: &Path) -> Failure {
    Failure::Runtime(format!("{}: {e}", what.display()))
}

struct Invocation {
    config: RunConfig,
    threads: Option<usize>,
    check: bool,
}

fn parse_run(args: &[String]) -> Result<Invocation, Failure> {
    let (experiment, rest) = match args.first() {
        Some(a) if !a.starts_with("--") => (Some(a.as_str()), &args[1..]),
        _ => (None, args),
    };
    let mut file = None;
    let mut threads = None;
    let mut check = false;
    let mut overrides = Vec::new();
    for (k, v) in split_flags(rest)? {
        match k.as_str() {
            "config" => file = Some(v),
            "threads" => threads = Some(v.parse().map_err(|_| Failure::Config(format!("bad --threads `{v}`")))?),
            "check" => check = v.parse().map_err(|_| Failure::Config(format!("bad --check `{v}`")))?,
            _ => overrides.push((k, v)),
        }
    }
    let text = match &file {
        Some(f) => Some(std::fs::read_to_string(f).map_err(|e| Failure::Config(format!("{f}: {e}")))?),
        None => None,
    };
    let mut config = resolve(text.as_deref(), experiment, &overrides)?;
    if check && config.experiment == "cortege-decoherence" && config.decoherence.trend_seeds == 0 {
        config.decoherence.trend_seeds = 5;
    }
    Ok(Invocation { config, threads, check })
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    if let Some(p) = &cfg.output {
        return p.clone();
    }
    let base = std::env::var_os("SWARMLAB_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("swarmlab-out"));
    base.join(&cfg.experiment)
}

fn write_csv(path: &Path, t: &experiments::Table) -> Result<(), Failure> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(|e| io(e, path))?;
    w.write_record(&t.header).map_err(|e| io(e, path))?;
    for r in &t.rows {
        w.write_record(r).map_err(|e| io(e, path))?;
    }
    w.flush().map_err(|e| io(e, path))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), Failure> {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| io(e, path))
}

fn write_artifacts(inv: &Invocation, dir: &Path, out: &Outcome) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    let mut names = Vec::new();
    for t in &out.tables {
        write_csv(&dir.join(t.name), t)?;
        names.push(t.name);
    }
    write_json(&dir.join("summary.json"), &out.summary)?;
    names.push("summary.json");
    let checks: Vec<_> =
        out.checks.iter().map(|c| json!({ "name": c.name, "value": c.value, "limit": c.limit, "pass": c.pass })).collect();
    let cfg = &inv.config;
    let resolved: toml::Value = toml::from_str(&cfg.canonical()).expect("canonical config parses");
    let manifest = json!({
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config_hash": format!("sha256:{}", cfg.hash()),
        "config": resolved,
        "versions": { "swarmlab": swarmlab::VERSION, "swarmlab-cli": env!("CARGO_PKG_VERSION") },
        "artifacts": names,
        "checks": checks,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

fn run(args: &[String]) -> Result<u8, Failure> {
    let inv = parse_run(args)?;
    if let Some(n) = inv.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Config(e.to_string()))?;
    }
    let out = run_experiment(&inv.config)?;
    let dir = output_dir(&inv.config);
    write_artifacts(&inv, &dir, &out)?;
    println!("{}", serde_json::to_string_pretty(&out.summary).expect("json"));
    for c in &out.checks {
        eprintln!("{} {}: {} (want {})", if c.pass { "ok  " } else { "FAIL" }, c.name, experiments::short(c.value), c.limit);
    }
    eprintln!("artifacts in {}", dir.display());
    Ok(if inv.check && out.checks.iter().any(|c| !c.pass) { EXIT_CHECK } else { 0 })
}

fn validate(file: &Path, overrides: &[String]) -> Result<u8, Failure> {
    let text = std::fs::read_to_string(file).map_err(|e| Failure::Config(format!("{}: {e}", file.display())))?;
    let cfg = resolve(Some(&text), None, &split_flags(overrides)?)?;
    print!("# sha256:{}\n{}", cfg.hash(), cfg.canonical());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { args } => run(&args),
        Command::ListExperiments => {
            for (name, _, about) in EXPERIMENTS {
                println!("{name:<22}{about}");
            }
            Ok(0)
        }
        Command::ValidateConfig { file, overrides } => validate(&file, &overrides),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let (Failure::Config(m) | Failure::Runtime(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
