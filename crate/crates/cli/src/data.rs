//! Loading inputs and models, and writing artifacts.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sketchembed::fewshot::{read_embeddings, EmbeddingRecord};
use sketchembed::ingest::render_input_image;
use sketchembed::net::checkpoint::Checkpoint;
use sketchembed::net::model::{LatentCode, ModelConfig, SketchModel};
use sketchembed::net::train::TrainConfig;
use sketchembed::net::vae::VaeModel;
use sketchembed::rng::Rng;
use sketchembed::stroke::{read_jsonl, write_jsonl};
use sketchembed::{PixelImage, Sketch};

pub const SKETCHES_FILE: &str = "sketches.jsonl";

/// Sketches from a JSONL file or from `dir/sketches.jsonl`.
pub fn read_sketches(path: &Path) -> Result<Vec<Sketch>> {
    let file = if path.is_dir() { path.join(SKETCHES_FILE) } else { path.to_path_buf() };
    let f = File::open(&file).with_context(|| format!("cannot open {}", file.display()))?;
    read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", file.display()))
}

pub fn write_sketches(path: &Path, sketches: &[Sketch]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    write_jsonl(&mut w, sketches)?;
    w.flush()?;
    Ok(())
}

pub fn read_embedding_file(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let f = File::open(path).with_context(|| format!("cannot open embeddings file {}", path.display()))?;
    read_embeddings(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

/// One encoder input with its bookkeeping.
pub struct InputItem {
    pub id: String,
    pub class: Option<String>,
    pub factors: Option<BTreeMap<String, f64>>,
    pub image: PixelImage,
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    files.sort();
    Ok(files)
}

fn read_pgm(path: &Path) -> Result<PixelImage> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    PixelImage::read_pgm(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

/// Images to encode: sketches (JSONL file, or a directory holding
/// `sketches.jsonl`) rendered at the model's size, a single PGM, or a
/// directory of PGMs.
pub fn load_inputs(path: &Path, h: usize, w: usize, pad_frac: f64) -> Result<Vec<InputItem>> {
    let from_pgm = |p: &Path| -> Result<InputItem> {
        let image = read_pgm(p)?;
        if (image.h, image.w) != (h, w) {
            bail!("{} is {}x{}, the model expects {h}x{w}", p.display(), image.h, image.w);
        }
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(InputItem { id, class: None, factors: None, image })
    };
    if path.is_dir() && !path.join(SKETCHES_FILE).exists() {
        return pgm_files(path)?.iter().map(|p| from_pgm(p)).collect();
    }
    if path.extension().is_some_and(|x| x == "pgm") {
        return Ok(vec![from_pgm(path)?]);
    }
    read_sketches(path)?
        .into_iter()
        .map(|s| {
            let image = render_input_image(&s, h, w, pad_frac).with_context(|| format!("rendering sketch '{}'", s.source_id))?;
            Ok(InputItem { id: s.source_id, class: s.class_id, factors: s.factors, image })
        })
        .collect()
}

pub fn write_pgm(path: &Path, img: &PixelImage) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_pgm(&mut bytes)?;
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

/// Renders a sketch the way encoder inputs are rendered; degenerate
/// generations become blank canvases.
pub fn render_or_blank(s: &Sketch, h: usize, w: usize, pad_frac: f64) -> PixelImage {
    render_input_image(s, h, w, pad_frac).unwrap_or_else(|_| PixelImage::zeros(h, w))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sketch,
    Vae,
}

/// What a checkpoint needs beyond its tensors to be used again.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub train: TrainConfig,
    pub pad_frac: f64,
}

pub enum Model {
    Sketch(SketchModel),
    Vae(VaeModel),
}

impl Model {
    pub fn new(meta: &ModelMeta) -> Result<Model> {
        let cfg = meta.train.model.clone();
        Ok(match meta.kind {
            ModelKind::Sketch => Model::Sketch(SketchModel::new(cfg, meta.train.seed)?),
            ModelKind::Vae => Model::Vae(VaeModel::new(cfg, meta.train.seed)?),
        })
    }

    pub fn cfg(&self) -> &ModelConfig {
        match self {
            Model::Sketch(m) => &m.cfg,
            Model::Vae(m) => &m.cfg,
        }
    }

    pub fn params(&self) -> &sketchembed::net::ParamStore {
        match self {
            Model::Sketch(m) => &m.params,
            Model::Vae(m) => &m.params,
        }
    }

    pub fn encode(&self, images: &[PixelImage], rng: &mut Rng, deterministic: bool) -> Result<Vec<LatentCode>> {
        Ok(match self {
            Model::Sketch(m) => m.encode(images, rng, deterministic)?,
            Model::Vae(m) => m.encode(images, rng, deterministic)?,
        })
    }

    pub fn sketch(&self) -> Result<&SketchModel> {
        match self {
            Model::Sketch(m) => Ok(m),
            Model::Vae(_) => bail!("this operation needs a sketch-model checkpoint, not a VAE"),
        }
    }
}

pub fn save_checkpoint(path: &Path, meta: &ModelMeta, step: u64, model: &Model) -> Result<()> {
    let ck = Checkpoint::from_store(serde_json::to_value(meta)?, step, model.params());
    let mut bytes = Vec::new();
    ck.write(&mut bytes)?;
    // write then rename so an interrupted run never leaves a torn file
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot move checkpoint into {}", path.display()))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, ModelMeta, u64)> {
    let ck = Checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    let meta: ModelMeta = serde_json::from_value(ck.config.clone()).with_context(|| format!("{}: bad model metadata", path.display()))?;
    let mut model = Model::new(&meta)?;
    let store = match &mut model {
        Model::Sketch(m) => &mut m.params,
        Model::Vae(m) => &mut m.params,
    };
    ck.restore_into(store).with_context(|| format!("restoring {}", path.display()))?;
    Ok((model, meta, ck.step))
}
