use std::path::PathBuf;

use anyhow::Result;
use atvc_cli::commands::{cmd_eval, cmd_gen, cmd_serve, cmd_train1, cmd_train2};
use atvc_cli::RunConfig;
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "atvc",
    version,
    about = "Text-driven scene re-creation with accountable answers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes, queries, re-creations and annotations.
    Gen(Common),
    /// Train the image tokenizer.
    Train1(Common),
    /// Train the transformer on tokenized pairs.
    Train2(Common),
    /// Score a responder against the dataset.
    Eval(Common),
    /// Run the HTTP chat service.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Keep every turn on the session's original image.
        #[arg(long)]
        single_turn: bool,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.apply_seed(seed);
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Gen(c) => print_json(&cmd_gen(&load(&c)?)?),
        Command::Train1(c) => {
            let cfg = load(&c)?;
            print_json(&tokio::task::spawn_blocking(move || cmd_train1(&cfg)).await??)
        }
        Command::Train2(c) => {
            let cfg = load(&c)?;
            print_json(&tokio::task::spawn_blocking(move || cmd_train2(&cfg)).await??)
        }
        Command::Eval(c) => {
            let cfg = load(&c)?;
            let out = tokio::task::spawn_blocking(move || cmd_eval(&cfg)).await??;
            println!("{}", out.report.render_table());
            println!("exact answers {}/{}", out.exact_answers, out.report.total);
            Ok(())
        }
        Command::Serve { common, single_turn } => {
            let mut cfg = load(&common)?;
            cfg.serve.single_turn |= single_turn;
            cmd_serve(&cfg).await
        }
    }
}
