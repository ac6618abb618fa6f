use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sketchembed::fewshot::EmbeddingRecord;
use sketchembed::ingest::DEFAULT_PAD_FRAC;
use sketchembed::probes::{
    arrangement_separability, concept_arithmetic, interpolate_grid, latent_recovery, pca_project, recognizability, ClassifierConfig,
    ProbeReport, Render,
};
use sketchembed::rng::stream;
use sketchembed::Sketch;

use crate::config::{sidecar_path, write_effective};
use crate::data::{create_dir, load_checkpoint, read_embedding_file, read_sketches, render_or_blank, write_pgm, write_sketches};
use crate::failure::CmdResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    /// Linear and non-linear readouts of the recorded angle factor
    Angle,
    /// Readouts of the recorded distance factor
    Distance,
    /// Readouts of the recorded size factor
    Size,
    /// Cross-validated linear separability of classes
    Separability,
    /// Two-dimensional PCA projection (CSV: id, class, u, v)
    Pca,
    /// Classifier accuracy on ground-truth versus generated renders
    Recognizability,
    /// Decode z(a) − z(b) + z(c)
    Arithmetic,
    /// Decode a bilinear grid between four corner embeddings
    Interpolate,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone)]
pub struct ProbeArgs {
    /// Flat key = value file or an effective-config JSON; flags override it
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub probe: Option<ProbeKind>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Report file (JSON lines or CSV), or an output directory for decoding probes
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sketch checkpoint for decoding probes
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Embedding ids: a,b,c for arithmetic; four corners (TL,TR,BL,BR) for interpolate
    #[arg(long, value_delimiter = ',')]
    pub ids: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Ground-truth sketches for the recognizability classifier
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    /// Generated sketches to classify
    #[arg(long)]
    pub generated: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub classifier_steps: usize,
    #[arg(long, default_value_t = 28)]
    pub h: usize,
    #[arg(long, default_value_t = 28)]
    pub w: usize,
    #[arg(long, default_value_t = DEFAULT_PAD_FRAC)]
    pub pad_frac: f64,
}

fn emit(out: Option<&Path>, lines: &[String]) -> anyhow::Result<()> {
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    print!("{text}");
    if let Some(p) = out {
        fs::write(p, text).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

fn embeddings(args: &ProbeArgs) -> anyhow::Result<Vec<EmbeddingRecord>> {
    read_embedding_file(args.embeddings.as_deref().context("--embeddings is required")?)
}

fn lookup<'a>(pool: &'a [EmbeddingRecord], id: &str) -> anyhow::Result<&'a [f64]> {
    pool.iter().find(|r| r.id == id).map(|r| r.z.as_slice()).ok_or_else(|| anyhow!("no embedding with id '{id}'"))
}

fn factor_probe(args: &ProbeArgs, factor: &str) -> anyhow::Result<()> {
    let pool = embeddings(args)?;
    let (z, t): (Vec<Vec<f64>>, Vec<f64>) =
        pool.iter().filter_map(|r| r.factors.as_ref().and_then(|f| f.get(factor)).map(|&v| (r.z.clone(), v))).unzip();
    if z.is_empty() {
        bail!("no embeddings carry the '{factor}' factor");
    }
    let reports = latent_recovery(&z, &t, factor, args.seed)?;
    let lines = reports.iter().map(serde_json::to_string).collect::<Result<Vec<_>, _>>()?;
    emit(args.out.as_deref(), &lines)
}

fn renders(sketches: &[Sketch], args: &ProbeArgs) -> Vec<Render> {
    sketches
        .iter()
        .filter_map(|s| {
            s.class_id.as_ref().map(|c| Render { id: s.source_id.clone(), class: c.clone(), image: render_or_blank(s, args.h, args.w, args.pad_frac) })
        })
        .collect()
}

fn decode_to(dir: &Path, name: &str, args: &ProbeArgs, zs: &[(String, Vec<f64>)]) -> anyhow::Result<()> {
    let ckpt = args.ckpt.as_deref().context("--ckpt is required for decoding probes")?;
    let (model, meta, _) = load_checkpoint(ckpt)?;
    let sm = model.sketch()?;
    let cfg = model.cfg();
    create_dir(dir)?;
    let mut out = Vec::new();
    for (i, (id, z)) in zs.iter().enumerate() {
        let mut rng = stream(args.seed, &format!("probe/{name}"), i as u64);
        let s = sm.generate(z, &mut rng, args.temperature, cfg.t_max)?;
        write_pgm(&dir.join(format!("{id}.pgm")), &render_or_blank(&s, cfg.h, cfg.w, meta.pad_frac))?;
        out.push(Sketch { source_id: id.clone(), ..s });
    }
    write_sketches(&dir.join(format!("{name}.jsonl")), &out)
}

pub fn run(args: ProbeArgs) -> CmdResult {
    let kind = args.probe.context("--probe is required")?;
    if let Some(out) = &args.out {
        let side = if matches!(kind, ProbeKind::Arithmetic | ProbeKind::Interpolate) { out.join("config.json") } else { sidecar_path(out) };
        if let Some(dir) = side.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        write_effective(&side, &args)?;
    }
    match kind {
        ProbeKind::Angle => factor_probe(&args, "angle")?,
        ProbeKind::Distance => factor_probe(&args, "distance")?,
        ProbeKind::Size => factor_probe(&args, "size")?,
        ProbeKind::Separability => {
            let pool = embeddings(&args)?;
            let z: Vec<Vec<f64>> = pool.iter().map(|r| r.z.clone()).collect();
            let labels: Vec<String> = pool.iter().map(|r| r.class.clone()).collect();
            let acc = arrangement_separability(&z, &labels, args.seed)?;
            let report = ProbeReport {
                probe: "arrangement_separability".into(),
                factor_kind: None,
                model_kind: None,
                n_train: None,
                r2: None,
                mse: None,
                accuracy: Some(acc),
                seed: args.seed,
            };
            emit(args.out.as_deref(), &[serde_json::to_string(&report)?])?;
        }
        ProbeKind::Pca => {
            let pool = embeddings(&args)?;
            let z: Vec<Vec<f64>> = pool.iter().map(|r| r.z.clone()).collect();
            let pca = pca_project(&z, 2)?;
            if let Some(out) = &args.out {
                let mut f = fs::File::create(out).with_context(|| format!("cannot create {}", out.display()))?;
                writeln!(f, "id,class,u,v")?;
                for (r, c) in pool.iter().zip(&pca.coords) {
                    writeln!(f, "{},{},{},{}", r.id, r.class, c[0], c[1])?;
                }
            }
            println!("{}", json!({"probe": "pca", "explained_ratio": pca.explained_ratio, "seed": args.seed}));
        }
        ProbeKind::Recognizability => {
            let train = read_sketches(args.train_data.as_deref().context("--train-data is required")?)?;
            let generated = read_sketches(args.generated.as_deref().context("--generated is required")?)?;
            let cfg = ClassifierConfig { steps: args.classifier_steps, seed: args.seed, ..ClassifierConfig::default() };
            let (r, _) = recognizability(&renders(&train, &args), &renders(&generated, &args), &cfg)?;
            let line = json!({
                "probe": "recognizability",
                "classes": r.classes,
                "heldout_accuracy": r.heldout_acc,
                "generated_accuracy": r.gen_acc,
                "chance": 1.0 / r.classes.len() as f64,
                "seed": args.seed,
            });
            emit(args.out.as_deref(), &[line.to_string()])?;
        }
        ProbeKind::Arithmetic => {
            let pool = embeddings(&args)?;
            let [a, b, c] = args.ids.as_slice() else { return Err(anyhow!("--ids needs exactly three ids (a,b,c)").into()) };
            let z = concept_arithmetic(lookup(&pool, a)?, lookup(&pool, b)?, lookup(&pool, c)?)?;
            let dir = args.out.clone().context("--out is required")?;
            decode_to(&dir, "arithmetic", &args, &[(format!("{a}-{b}+{c}"), z)])?;
            println!("decoded {a} - {b} + {c} into {}", dir.display());
        }
        ProbeKind::Interpolate => {
            let pool = embeddings(&args)?;
            let [tl, tr, bl, br] = args.ids.as_slice() else { return Err(anyhow!("--ids needs exactly four corner ids").into()) };
            let corners = [lookup(&pool, tl)?.to_vec(), lookup(&pool, tr)?.to_vec(), lookup(&pool, bl)?.to_vec(), lookup(&pool, br)?.to_vec()];
            let grid = interpolate_grid(&corners, args.steps)?;
            let zs: Vec<(String, Vec<f64>)> =
                grid.into_iter().enumerate().flat_map(|(i, row)| row.into_iter().enumerate().map(move |(j, z)| (format!("r{i}_c{j}"), z))).collect();
            let dir = args.out.clone().context("--out is required")?;
            decode_to(&dir, "interpolation", &args, &zs)?;
            println!("decoded a {0}x{0} grid into {1}", args.steps, dir.display());
        }
    }
    Ok(())
}
