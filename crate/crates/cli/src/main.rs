//! `sketchembed`: ingest sketches, train, generate, embed, and evaluate.

mod cmd;
mod config;
mod data;
mod failure;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::resolve;
use crate::failure::{CmdResult, Failure};

#[derive(Parser)]
#[command(name = "sketchembed", version, about = "Sketch-imitation image embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert drawings into canonical sketch JSONL, stats and PGM renders
    Ingest(cmd::ingest::IngestArgs),
    /// Train a sketch model (or the pixel-VAE baseline)
    Train(cmd::train::TrainArgs),
    /// Encode images and decode sketches from them
    Generate(cmd::generate::GenerateArgs),
    /// Write encoder embeddings as JSONL
    Embed(cmd::embed::EmbedArgs),
    /// N-way K-shot evaluation of embeddings
    Fewshot(cmd::fewshot::FewshotArgs),
    /// Emergent-property probes on embeddings
    Probe(cmd::probe::ProbeArgs),
    /// Compare analytic gradients with finite differences
    Gradcheck(cmd::gradcheck::GradcheckArgs),
}

fn run() -> CmdResult {
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let (_, sub) = matches.subcommand().expect("a subcommand is required");
    macro_rules! layered {
        ($args:expr, $run:path) => {{
            let file = $args.config.clone();
            $run(resolve($args, sub, file.as_deref()).map_err(Failure::from)?)
        }};
    }
    match cli.command {
        Command::Ingest(a) => layered!(a, cmd::ingest::run),
        Command::Train(a) => layered!(a, cmd::train::run),
        Command::Generate(a) => layered!(a, cmd::generate::run),
        Command::Embed(a) => layered!(a, cmd::embed::run),
        Command::Fewshot(a) => layered!(a, cmd::fewshot::run),
        Command::Probe(a) => layered!(a, cmd::probe::run),
        Command::Gradcheck(a) => layered!(a, cmd::gradcheck::run),
    }
}

fn main() {
    if let Err(f) = run() {
        eprintln!("error: {:#}", f.err);
        std::process::exit(f.code);
    }
}
