use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::Args;
use serde::{Deserialize, Serialize};
use sketchembed::ingest::{render_input_image, DEFAULT_PAD_FRAC};
use sketchembed::mdn::AlphaSchedule;
use sketchembed::net::model::ModelConfig;
use sketchembed::net::train::{batch_indices, train_step, TrainConfig, CSV_HEADER};
use sketchembed::net::vae::vae_step;
use sketchembed::{Error, PixelImage, Sketch};

use crate::config::write_effective;
use crate::data::{create_dir, read_sketches, save_checkpoint, Model, ModelKind, ModelMeta};
use crate::failure::{CmdResult, Failure};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train.csv";

#[derive(Args, Serialize, Deserialize, Debug, Clone)]
pub struct TrainArgs {
    /// Flat key = value file or an effective-config JSON; flags override it
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Sketch JSONL, or an ingest output directory
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for the checkpoint, CSV log and effective config
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelKind::Sketch)]
    pub model: ModelKind,
    /// Train only on these classes (default: all)
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
    #[arg(long, default_value_t = 10_000)]
    pub steps: u64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.85)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 15_000)]
    pub lr_decay_interval: u64,
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    /// Pixel-loss weight added per interval
    #[arg(long, default_value_t = 0.05)]
    pub alpha_step: f64,
    #[arg(long, default_value_t = 10_000)]
    pub alpha_interval: u64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2.0)]
    pub blur_sigma: f64,
    /// Add the (1 − I) log(1 − I') term to the pixel loss
    #[arg(long)]
    pub full_bce: bool,
    #[arg(long, default_value_t = 0.0)]
    pub kl_weight: f64,
    #[arg(long, default_value_t = 28)]
    pub h: usize,
    #[arg(long, default_value_t = 28)]
    pub w: usize,
    #[arg(long, default_value_t = 32)]
    pub latent_dim: usize,
    /// Mixture components
    #[arg(long, default_value_t = 5)]
    pub components: usize,
    #[arg(long, default_value_t = 32)]
    pub t_max: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 32, 64])]
    pub filters: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_PAD_FRAC)]
    pub pad_frac: f64,
    /// Steps between checkpoint writes
    #[arg(long, default_value_t = 1000)]
    pub ckpt_interval: u64,
}

impl TrainArgs {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                h: self.h,
                w: self.w,
                latent_dim: self.latent_dim,
                components: self.components,
                t_max: self.t_max,
                hidden: self.hidden,
                filters: self.filters.clone(),
            },
            batch_size: self.batch_size,
            steps: self.steps,
            lr: self.lr,
            lr_decay: self.lr_decay,
            lr_decay_interval: self.lr_decay_interval,
            clip: self.clip,
            alpha: AlphaSchedule { step_size: self.alpha_step, interval: self.alpha_interval, alpha_max: self.alpha_max },
            seed: self.seed,
            blur_sigma: self.blur_sigma,
            full_bce: self.full_bce,
            kl_weight: self.kl_weight,
        }
    }
}

pub fn run(args: TrainArgs) -> CmdResult {
    let out_dir = args.out.clone().context("--out is required")?;
    let data_path = args.data.clone().context("--data is required")?;
    let cfg = args.train_config();
    cfg.validate()?;
    if !(0.0..=1.0).contains(&args.alpha_max) {
        return Err(anyhow!("--alpha-max must lie in [0, 1]").into());
    }
    if args.ckpt_interval == 0 {
        return Err(anyhow!("--ckpt-interval must be positive").into());
    }
    let mut sketches = read_sketches(&data_path)?;
    if !args.classes.is_empty() {
        sketches.retain(|s| s.class_id.as_ref().is_some_and(|c| args.classes.contains(c)));
    }
    if sketches.is_empty() {
        return Err(anyhow!("no training sketches in {}", data_path.display()).into());
    }
    let data: Vec<(PixelImage, Sketch)> = sketches
        .into_iter()
        .map(|s| Ok((render_input_image(&s, args.h, args.w, args.pad_frac)?, s)))
        .collect::<sketchembed::Result<_>>()?;

    create_dir(&out_dir)?;
    write_effective(&out_dir.join("config.json"), &args)?;
    let meta = ModelMeta { kind: args.model, train: cfg.clone(), pad_frac: args.pad_frac };
    let mut model = Model::new(&meta)?;
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    let mut log = BufWriter::new(File::create(out_dir.join(LOG_FILE))?);
    writeln!(log, "{CSV_HEADER}")?;

    let mut last = None;
    for step in 0..cfg.steps {
        let idx = batch_indices(cfg.seed, step, data.len(), cfg.batch_size);
        let result = match &mut model {
            Model::Sketch(m) => {
                let batch: Vec<(PixelImage, Sketch)> = idx.iter().map(|&i| data[i].clone()).collect();
                train_step(m, &batch, step, &cfg)
            }
            Model::Vae(m) => {
                let batch: Vec<PixelImage> = idx.iter().map(|&i| data[i].0.clone()).collect();
                vae_step(m, &batch, step, &cfg)
            }
        };
        let metrics = match result {
            Ok(m) => m,
            Err(Error::NonFinite(msg)) => {
                // the failing step never reached the optimiser, so the model is the last good one
                log.flush()?;
                save_checkpoint(&ckpt, &meta, step, &model)?;
                return Err(Failure::diverged(anyhow!("training diverged: {msg}; last good checkpoint (step {step}) kept at {}", ckpt.display())));
            }
            Err(e) => return Err(e.into()),
        };
        writeln!(log, "{}", metrics.csv_row())?;
        if (step + 1) % args.ckpt_interval == 0 && step + 1 < cfg.steps {
            log.flush()?;
            save_checkpoint(&ckpt, &meta, step + 1, &model)?;
        }
        last = Some(metrics);
    }
    log.flush()?;
    save_checkpoint(&ckpt, &meta, cfg.steps, &model)?;
    if let Some(m) = last {
        println!("step {} l_total {:.6} (l_pen {:.6}, l_stroke {:.6}, l_pixel {:.6})", m.step, m.l_total, m.l_pen, m.l_stroke, m.l_pixel);
    }
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}
