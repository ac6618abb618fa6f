use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use sketchembed::fewshot::{write_embeddings, EmbeddingRecord};
use sketchembed::rng::stream;

use crate::config::{sidecar_path, write_effective};
use crate::data::{load_checkpoint, load_inputs};
use crate::failure::CmdResult;

/// Records without a class label get this one.
pub const UNLABELED: &str = "unlabeled";

#[derive(Args, Serialize, Deserialize, Debug, Clone)]
pub struct EmbedArgs {
    /// Flat key = value file or an effective-config JSON; flags override it
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Sketch JSONL, an ingest directory, a PGM, or a directory of PGMs
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Embeddings JSONL to write
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sample z instead of using the encoder mean
    #[arg(long)]
    pub sample_z: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: EmbedArgs) -> CmdResult {
    let ckpt = args.ckpt.clone().context("--ckpt is required")?;
    let input = args.input.clone().context("--input is required")?;
    let out = args.out.clone().context("--out is required")?;
    let (model, meta, _) = load_checkpoint(&ckpt)?;
    let cfg = model.cfg().clone();
    let items = load_inputs(&input, cfg.h, cfg.w, meta.pad_frac)?;

    let mut records = Vec::with_capacity(items.len());
    for (i, item) in items.into_iter().enumerate() {
        let mut rng = stream(args.seed, "embed", i as u64);
        let code = model.encode(std::slice::from_ref(&item.image), &mut rng, !args.sample_z)?.remove(0);
        let z = if args.sample_z { code.z } else { code.mu };
        records.push(EmbeddingRecord { id: item.id, class: item.class.unwrap_or_else(|| UNLABELED.to_string()), z, factors: item.factors });
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_effective(&sidecar_path(&out), &args)?;
    let mut w = BufWriter::new(File::create(&out).with_context(|| format!("cannot create {}", out.display()))?);
    write_embeddings(&mut w, &records)?;
    w.flush()?;
    println!("wrote {} embeddings of dimension {} to {}", records.len(), cfg.latent_dim, out.display());
    Ok(())
}
