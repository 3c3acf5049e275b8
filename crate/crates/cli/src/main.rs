use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use preprod_core::clock::SystemClock;
use preprod_core::prompts::PromptLibrary;
use preprod_core::provider::{providers_from_env, Providers, ScriptedProvider};
use preprod_core::scenario::{reference_program, run_scenario, Scenario, ScenarioReport};
use preprod_core::{CoreConfig, Engine, EngineParts, ScriptedProgram};

#[derive(Parser)]
#[command(name = "preprod", version, about = "Multi-agent animation pre-production engine")]
struct Cli {
    /// Engine configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve sessions over HTTP with a server-sent event stream.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory holding session folders.
        #[arg(long, default_value = "sessions")]
        root: PathBuf,
        /// Scripted program to answer provider calls. Without it, live
        /// providers come from PREPROD_TEXT_* / PREPROD_IMAGE_*; without
        /// those, the built-in reference program is used.
        #[arg(long)]
        scripted: Option<PathBuf>,
        /// Directory of prompt overrides.
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Replay scripted scenarios.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Run one scenario file and print its report.
    Run {
        file: PathBuf,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory for session files (a temporary one by default).
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Run every `*.json` scenario in a directory.
    RunAll { dir: PathBuf },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let config = match &cli.config {
        Some(p) => CoreConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => CoreConfig::default(),
    };
    match cli.command {
        Command::DefaultConfig => {
            print!("{}", CoreConfig::default().to_toml());
            Ok(true)
        }
        Command::Serve {
            addr,
            root,
            scripted,
            prompts,
        } => serve(config, addr, &root, scripted.as_deref(), prompts.as_deref()),
        Command::Scenario { command } => match command {
            ScenarioCommand::Run { file, report, root } => {
                let r = run_file(&file, config, root.as_deref())?;
                print_report(&r);
                if let Some(out) = report {
                    std::fs::write(&out, serde_json::to_string_pretty(&r)?)
                        .with_context(|| format!("writing {}", out.display()))?;
                }
                Ok(r.passed)
            }
            ScenarioCommand::RunAll { dir } => {
                let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                    .with_context(|| format!("reading {}", dir.display()))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "json"))
                    .collect();
                files.sort();
                if files.is_empty() {
                    bail!("no scenario files in {}", dir.display());
                }
                let mut all = true;
                for f in &files {
                    let r = run_file(f, config.clone(), None)?;
                    print_report(&r);
                    all &= r.passed;
                }
                Ok(all)
            }
        },
    }
}

fn run_file(file: &Path, config: CoreConfig, root: Option<&Path>) -> Result<ScenarioReport> {
    let scenario = Scenario::load(file).with_context(|| format!("loading {}", file.display()))?;
    let tmp = tempfile::tempdir()?;
    Ok(run_scenario(&scenario, config, root.unwrap_or(tmp.path()))?.report)
}

fn print_report(r: &ScenarioReport) {
    let verdict = if r.passed { "PASS" } else { "FAIL" };
    let stages: Vec<&str> = r.stages.iter().map(|s| s.name()).collect();
    println!(
        "{verdict} {} — {} actions, {} events, stages {}",
        r.name,
        r.actions_run,
        r.event_count,
        stages.join(">")
    );
    for c in r.checks.iter().filter(|c| !c.passed) {
        println!("  failed {}: {}", c.name, c.detail);
    }
    if let Some(d) = &r.first_divergence {
        let at = d.event_seq.map(|s| format!(" (event {s})")).unwrap_or_default();
        println!("  first divergence in {}{at}: expected {}, got {}", d.check, d.expected, d.actual);
    }
    for w in &r.warnings {
        println!("  warning: {w}");
    }
}

fn serve(config: CoreConfig, addr: SocketAddr, root: &Path, scripted: Option<&Path>, prompts: Option<&Path>) -> Result<bool> {
    let prompts = match prompts {
        Some(dir) => PromptLibrary::load_dir(dir)?,
        None => PromptLibrary::builtin(),
    };
    let scripted_program = |program: ScriptedProgram| Providers::scripted(Arc::new(ScriptedProvider::new(program)));
    let providers = match scripted {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            scripted_program(serde_json::from_str(&text).context("parsing scripted program")?)
        }
        None => providers_from_env().unwrap_or_else(|| {
            eprintln!("no live providers configured; answering from the reference program");
            scripted_program(reference_program())
        }),
    };
    std::fs::create_dir_all(root)?;
    let engine = Arc::new(Engine::new(
        EngineParts::new(config, providers, prompts, Arc::new(SystemClock)),
        root,
    ));
    tokio::runtime::Runtime::new()?.block_on(preprod_server::serve(engine, addr))?;
    Ok(true)
}
