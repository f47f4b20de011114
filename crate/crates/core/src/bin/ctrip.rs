use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;

use ctrip::pipeline::{self, Pipeline, PipelineError, RunConfig};
use ctrip::refinement::ConfigId;

#[derive(Parser)]
#[command(
    name = "ctrip",
    version,
    about = "Culture-noun prompt refinement and evaluation pipeline"
)]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(short = 'r', long, global = true)]
    run_config: Option<PathBuf>,
    /// Overrides `paths.out_dir`.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand nouns × templates into base prompts.
    Expand,
    /// Fetch raw information for each noun.
    Retrieve,
    /// Produce final prompts for the chosen configurations.
    Refine {
        /// Repeatable; all four when omitted.
        #[arg(long = "config")]
        configs: Vec<ConfigId>,
    },
    /// Generate images for every final prompt.
    Generate,
    /// Build the survey pages from the image manifest.
    BuildSurvey,
    /// Serve the survey API.
    Serve {
        #[arg(long)]
        bind: Option<SocketAddr>,
    },
    /// Count caption frequencies of the selected nouns.
    Analyze {
        #[arg(long)]
        captions: Option<PathBuf>,
    },
    /// Aggregate survey responses and score images with the judge.
    Aggregate,
    /// Write the report tables.
    Report,
    /// Run every stage offline on a small selection.
    DryRun,
}

fn print<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn check(stage: &'static str, failed: usize) -> Result<(), PipelineError> {
    if failed == 0 {
        Ok(())
    } else {
        Err(PipelineError::Incomplete { stage, failed })
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.run_config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let mut c = RunConfig::default();
            c.resolve_paths(&std::env::current_dir()?);
            c
        }
    };
    if let Some(out) = &cli.out {
        cfg.paths.out_dir = std::path::absolute(out)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::DryRun = cli.command {
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("dry-run"));
        return print(&pipeline::dry_run(&out)?);
    }
    let p = Pipeline::new(load_config(&cli)?)?;
    match cli.command {
        Command::Expand => print(&serde_json::json!({ "base_prompts": p.expand()? })),
        Command::Retrieve => {
            let s = p.retrieve()?;
            print(&s)?;
            Ok(check("retrieve", s.failed)?)
        }
        Command::Refine { configs } => {
            let configs = if configs.is_empty() {
                ConfigId::ALL.to_vec()
            } else {
                configs
            };
            let s = p.refine(&configs)?;
            print(&s)?;
            Ok(check("refine", s.failed)?)
        }
        Command::Generate => {
            let r = p.generate()?;
            print(&serde_json::json!({
                "generated": r.generated,
                "skipped": r.skipped,
                "failed": r.failed,
            }))?;
            Ok(check("generate", r.failed)?)
        }
        Command::BuildSurvey => print(&serde_json::json!({ "pages": p.build_survey()?.len() })),
        Command::Serve { bind } => {
            let addr = bind.unwrap_or(p.config().survey.bind);
            let svc = Arc::new(p.survey_service()?);
            let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
            rt.block_on(ctrip::survey::serve(svc, addr))
                .with_context(|| format!("serving on {addr}"))
        }
        Command::Analyze { captions } => {
            let f = p.analyze(captions.as_deref())?;
            print(&serde_json::json!({ "nouns": f.len() }))
        }
        Command::Aggregate => {
            let s = p.aggregate()?;
            print(&s)?;
            Ok(check("aggregate", s.judge_failed)?)
        }
        Command::Report => print(&p.report()?),
        Command::DryRun => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let pe = e.downcast_ref::<PipelineError>();
            let code = if pe.is_some_and(PipelineError::is_transport) {
                2
            } else {
                1
            };
            let line = serde_json::json!({
                "error": pe.map_or("internal", PipelineError::kind),
                "message": format!("{e:#}"),
                "exit_code": code,
            });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
