//! `atlas`: ingest -> summarize -> train-aspect -> distill -> layout -> eval -> serve.

mod commands;
mod config;
mod pipeline;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use atlas_core::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};

use commands::{distill, eval, ingest, layout, serve, summarize, synth, train_aspect};

#[derive(Debug, Parser)]
#[command(name = "atlas", version, about = "Build, evaluate and serve multifaceted embedding atlases")]
struct Cli {
    /// TOML file with per-command defaults under `[command-name]` tables.
    #[arg(long, global = true, env = "ATLAS_CONFIG")]
    config: Option<PathBuf>,

    /// Log filter, e.g. `info` or `atlas_core=debug`.
    #[arg(long, global = true, env = "ATLAS_LOG", default_value = "warn")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the bundled synthetic corpus, its ground-truth assessments and cue phrases.
    Synth(synth::Args),
    /// Validate a line-delimited corpus and start a new atlas from it.
    Ingest(ingest::Args),
    /// Produce per-aspect summaries for every document; resumable.
    Summarize(summarize::Args),
    /// Train one aspect's contrastive encoder on summary pairs.
    TrainAspect(train_aspect::Args),
    /// Distill all aspect encoders into one unified model and embed the atlas.
    Distill(distill::Args),
    /// Fit a t-SNE layout under aspect weights and render it.
    Layout(layout::Args),
    /// Run an evaluation suite and write its report.
    Eval(eval::Args),
    /// Serve the HTTP API.
    Serve(serve::Args),
}

/// Exit code for a failure: 2 validation, 3 backend, 4 internal.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<atlas_core::Error>() {
            // a missing input path is the caller's mistake
            if let atlas_core::Error::Io { source, .. } = e {
                if source.kind() == std::io::ErrorKind::NotFound {
                    return 2;
                }
            }
            return match e.kind() {
                ErrorKind::Validation | ErrorKind::NotFound => 2,
                ErrorKind::Capability | ErrorKind::Backend => 3,
                ErrorKind::Internal => 4,
            };
        }
        if let Some(e) = cause.downcast_ref::<atlas_server::ServerError>() {
            return match e {
                atlas_server::ServerError::Config(_) => 2,
                atlas_server::ServerError::Atlas(inner) if inner.kind() != ErrorKind::Internal => 2,
                _ => 4,
            };
        }
        if cause.downcast_ref::<config::ConfigFileError>().is_some() {
            return 2;
        }
    }
    4
}

fn error_code_name(code: u8) -> &'static str {
    match code {
        2 => "validation",
        3 => "backend",
        _ => "internal",
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Ingest(a) => ingest::run(a),
        Command::Summarize(a) => summarize::run(a),
        Command::TrainAspect(a) => train_aspect::run(a),
        Command::Distill(a) => distill::run(a),
        Command::Layout(a) => layout::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Serve(a) => serve::run(a),
    }
}

fn main() -> ExitCode {
    let argv: Vec<_> = std::env::args_os().collect();
    let argv = match config::with_file_defaults(&Cli::command(), argv) {
        Ok(a) => a,
        Err(e) => {
            let err = anyhow::Error::new(e);
            report(&err, 2);
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            report(&err, code);
            ExitCode::from(code)
        }
    }
}

/// One JSON object on stderr describing the failure.
fn report(err: &anyhow::Error, code: u8) {
    let causes: Vec<String> = err.chain().skip(1).map(|c| c.to_string()).collect();
    let body = serde_json::json!({
        "error": {
            "code": error_code_name(code),
            "exit_code": code,
            "message": err.to_string(),
            "causes": causes,
        }
    });
    eprintln!("{body}");
}
