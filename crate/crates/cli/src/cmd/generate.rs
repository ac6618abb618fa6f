use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{ArgAction, Args};
use serde::{Deserialize, Serialize};
use sketchembed::rng::stream;
use sketchembed::Sketch;

use crate::config::write_effective;
use crate::data::{create_dir, load_checkpoint, load_inputs, render_or_blank, write_pgm, write_sketches};
use crate::failure::CmdResult;

#[derive(Args, Serialize, Deserialize, Debug, Clone)]
pub struct GenerateArgs {
    /// Flat key = value file or an effective-config JSON; flags override it
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Sketch JSONL, an ingest directory, a PGM, or a directory of PGMs
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Longest generation (default: the model's T_max)
    #[arg(long)]
    pub t_max: Option<usize>,
    /// Sample z instead of using the encoder mean
    #[arg(long)]
    pub sample_z: bool,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub renders: bool,
    /// Generate for at most this many inputs
    #[arg(long)]
    pub limit: Option<usize>,
}

pub fn run(args: GenerateArgs) -> CmdResult {
    let ckpt = args.ckpt.clone().context("--ckpt is required")?;
    let input = args.input.clone().context("--input is required")?;
    let out_dir = args.out.clone().context("--out is required")?;
    if !(args.temperature > 0.0) {
        return Err(anyhow!("--temperature must be positive").into());
    }
    let (model, meta, _) = load_checkpoint(&ckpt)?;
    let sketch_model = model.sketch()?;
    let cfg = model.cfg().clone();
    let mut items = load_inputs(&input, cfg.h, cfg.w, meta.pad_frac)?;
    if let Some(n) = args.limit {
        items.truncate(n);
    }
    let t_max = args.t_max.unwrap_or(cfg.t_max);

    let mut generated = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        // one stream per input keeps results independent of batch composition
        let mut rng = stream(args.seed, "generate", i as u64);
        let code = model.encode(std::slice::from_ref(&item.image), &mut rng, !args.sample_z)?.remove(0);
        let s = sketch_model.generate(&code.z, &mut rng, args.temperature, t_max)?;
        generated.push(Sketch { source_id: format!("gen-{}", item.id), class_id: item.class.clone(), ..s });
    }

    create_dir(&out_dir)?;
    write_effective(&out_dir.join("config.json"), &args)?;
    write_sketches(&out_dir.join("generated.jsonl"), &generated)?;
    if args.renders {
        let dir = out_dir.join("renders");
        create_dir(&dir)?;
        for (i, s) in generated.iter().enumerate() {
            write_pgm(&dir.join(format!("{i:05}.pgm")), &render_or_blank(s, cfg.h, cfg.w, meta.pad_frac))?;
        }
    }
    println!("generated {} sketches into {}", generated.len(), out_dir.display());
    Ok(())
}
