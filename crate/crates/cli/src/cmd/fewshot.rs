use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use sketchembed::fewshot::{run_eval, FewshotConfig, DEFAULT_EPOCHS, DEFAULT_LR, REPORT_CSV_HEADER};

use crate::config::{sidecar_path, write_effective};
use crate::data::read_embedding_file;
use crate::failure::CmdResult;

#[derive(Args, Serialize, Deserialize, Debug, Clone)]
pub struct FewshotArgs {
    /// Flat key = value file or an effective-config JSON; flags override it
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Ways
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Shots
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Queries per class
    #[arg(long, default_value_t = 5)]
    pub q: usize,
    #[arg(long, default_value_t = 500)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = DEFAULT_LR)]
    pub lr: f64,
    /// CSV report to write
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: FewshotArgs) -> CmdResult {
    let path = args.embeddings.clone().context("--embeddings is required")?;
    let pool = read_embedding_file(&path)?;
    let cfg = FewshotConfig { n: args.n, k: args.k, q: args.q, episodes: args.episodes, seed: args.seed, epochs: args.epochs, lr: args.lr };
    let report = run_eval(&pool, &cfg)?;
    println!("{}-way {}-shot, {} episodes, seed {}: {report}", report.n, report.k, report.episodes, report.seed);
    if let Some(out) = &args.out {
        write_effective(&sidecar_path(out), &args)?;
        std::fs::write(out, format!("{REPORT_CSV_HEADER}\n{}\n", report.csv_row())).with_context(|| format!("cannot write {}", out.display()))?;
    }
    Ok(())
}
