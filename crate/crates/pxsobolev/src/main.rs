use clap::{Parser, Subcommand};
use pxsobolev::fields::FieldSpec;
use pxsobolev::scenario::{bundled_scenario, run_scenario, ScenarioConfig, Stage, BUNDLED_SCENARIOS};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pxsobolev",
    about = "Variable-exponent Sobolev numerics: norms, best constants, bubble expansions and a mountain-pass solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario config (a path, or the name of a bundled scenario).
    Run {
        /// Path to a TOML scenario config, or a bundled scenario name.
        #[arg(long)]
        config: String,
        /// Output directory for artifacts.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker thread cap.
        #[arg(long)]
        jobs: Option<usize>,
        /// Seed override for randomized sweeps.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List built-in fields, scenarios and pipeline operations.
    List {
        /// Emit a machine-readable JSON catalog.
        #[arg(long)]
        machine: bool,
    },
    /// Parse and validate a scenario config without running it.
    Validate {
        #[arg(long)]
        config: String,
    },
}

fn load_config(spec: &str) -> Result<ScenarioConfig, String> {
    let text = if let Some(t) = bundled_scenario(spec) {
        t.to_string()
    } else {
        std::fs::read_to_string(spec).map_err(|e| format!("cannot read {spec}: {e}"))?
    };
    ScenarioConfig::parse(&text).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            seed,
        } => {
            if let Some(n) = jobs {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            };
            let seed = seed.unwrap_or(cfg.seed);
            match run_scenario(&cfg, &out, seed) {
                Ok(summary) => {
                    for line in &summary.stages {
                        println!("{line}");
                    }
                    println!("artifacts written to {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::List { machine } => {
            let scenarios: Vec<&str> = BUNDLED_SCENARIOS.iter().map(|(n, _)| *n).collect();
            if machine {
                let catalog = serde_json::json!({
                    "fields": FieldSpec::all_ids(),
                    "scenarios": scenarios,
                    "operations": Stage::all_ops(),
                });
                println!("{}", serde_json::to_string_pretty(&catalog).unwrap());
            } else {
                println!("fields:");
                for id in FieldSpec::all_ids() {
                    println!("  {id}");
                }
                println!("scenarios:");
                for s in &scenarios {
                    println!("  {s}");
                }
                println!("operations:");
                for op in Stage::all_ops() {
                    println!("  {op}");
                }
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load_config(&config) {
            Ok(cfg) => match cfg.validate() {
                Ok(()) => {
                    println!("ok: {}", cfg.name);
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("invalid config:\n{e}");
                    ExitCode::FAILURE
                }
            },
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
