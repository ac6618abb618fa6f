use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{ArgAction, Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sketchembed::ingest::{
    filter_strokes, gen_shape_corpus, normalize_offsets, offset_stats, parse_point_list_line, parse_quickdraw_line, polylines_to_sketch,
    rdp_simplify, render_input_image, sample_svg_paths, CorpusConfig, Polyline, DEFAULT_MIN_DISP_FRAC, DEFAULT_MIN_LEN_FRAC,
    DEFAULT_PAD_FRAC, DEFAULT_SAMPLES_PER_CURVE, RDP_EPSILON_CHARACTERS, RDP_EPSILON_SVG,
};
use sketchembed::stroke::validate;
use sketchembed::{Error, Sketch};

use crate::config::write_effective;
use crate::data::{create_dir, write_pgm, write_sketches, SKETCHES_FILE};
use crate::failure::CmdResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// Quickdraw NDJSON (`drawing`, `word`, `key_id`)
    Quickdraw,
    /// Point-list JSONL (`id`, `class`, `polylines`); filtered and RDP-simplified
    Points,
    /// An SVG file or a directory tree of them; filtered and RDP-simplified
    Svg,
    /// Canonical sketch JSONL
    Jsonl,
    /// Procedural shape corpus
    Synthetic,
}

pub fn default_classes() -> Vec<String> {
    CorpusConfig::default().classes
}

#[derive(Args, Serialize, Deserialize, Debug, Clone)]
pub struct IngestArgs {
    /// Flat key = value file or an effective-config JSON; flags override it
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Synthetic)]
    pub format: Format,
    /// Input file (or SVG directory); unused for synthetic
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// RDP tolerance for points (default 2) and svg (default 5) input
    #[arg(long)]
    pub rdp_epsilon: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES_PER_CURVE)]
    pub samples_per_curve: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_LEN_FRAC)]
    pub min_len_frac: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_DISP_FRAC)]
    pub min_disp_frac: f64,
    /// Divide offsets by their pooled standard deviation
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub normalize: bool,
    /// Write one PGM render per sketch
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub renders: bool,
    #[arg(long, default_value_t = 28)]
    pub h: usize,
    #[arg(long, default_value_t = 28)]
    pub w: usize,
    #[arg(long, default_value_t = DEFAULT_PAD_FRAC)]
    pub pad_frac: f64,
    /// Synthetic classes
    #[arg(long, value_delimiter = ',', default_values_t = default_classes())]
    pub classes: Vec<String>,
    #[arg(long, default_value_t = 64)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.02)]
    pub jitter: f64,
}

/// Sketches plus the number of records rejected for having nothing drawable.
struct Ingested {
    sketches: Vec<Sketch>,
    rejects: usize,
}

fn is_reject(e: &Error) -> bool {
    matches!(e, Error::EmptySketch | Error::NoStrokesRemain)
}

fn simplify(lines: &[Polyline], args: &IngestArgs, eps: f64) -> sketchembed::Result<Vec<Polyline>> {
    let kept = filter_strokes(lines, args.min_len_frac, args.min_disp_frac)?;
    kept.iter().map(|l| if l.points.len() < 2 { Ok(l.clone()) } else { rdp_simplify(l, eps) }).collect()
}

fn read_lines(path: &Path, args: &IngestArgs) -> anyhow::Result<Ingested> {
    let f = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Ingested { sketches: Vec::new(), rejects: 0 };
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.with_context(|| format!("{}:{}", path.display(), n + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match args.format {
            Format::Quickdraw => parse_quickdraw_line(&line),
            Format::Points => parse_point_list_line(&line).and_then(|(id, class, lines)| {
                let lines = simplify(&lines, args, args.rdp_epsilon.unwrap_or(RDP_EPSILON_CHARACTERS))?;
                polylines_to_sketch(id, class, &lines)
            }),
            _ => serde_json::from_str::<Sketch>(&line).map_err(Error::from).and_then(|s| {
                let v = validate(&s);
                if v.is_empty() {
                    Ok(s)
                } else {
                    Err(Error::InvalidInput(format!("invalid sketch '{}': {v:?}", s.source_id)))
                }
            }),
        };
        match parsed {
            Ok(s) => out.sketches.push(s),
            Err(e) if is_reject(&e) => {
                eprintln!("warning: {}:{}: skipped: {e}", path.display(), n + 1);
                out.rejects += 1;
            }
            Err(e) => return Err(anyhow!("{}:{}: {e}", path.display(), n + 1)),
        }
    }
    Ok(out)
}

fn svg_files(root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if root.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).with_context(|| format!("cannot read directory {}", dir.display()))? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "svg") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn read_svgs(root: &Path, args: &IngestArgs) -> anyhow::Result<Ingested> {
    if !root.exists() {
        bail!("cannot open {}: no such file or directory", root.display());
    }
    let mut out = Ingested { sketches: Vec::new(), rejects: 0 };
    for file in svg_files(root)? {
        let text = fs::read_to_string(&file).with_context(|| format!("cannot read {}", file.display()))?;
        let rel = file.strip_prefix(root).unwrap_or(&file).with_extension("");
        let id = rel.to_string_lossy().replace('\\', "/");
        let class = rel.parent().and_then(|p| p.components().next()).map(|c| c.as_os_str().to_string_lossy().into_owned());
        let sketch = sample_svg_paths(&text, args.samples_per_curve)
            .and_then(|lines| simplify(&lines, args, args.rdp_epsilon.unwrap_or(RDP_EPSILON_SVG)))
            .and_then(|lines| polylines_to_sketch(id, class, &lines));
        match sketch {
            Ok(s) => out.sketches.push(s),
            Err(e) if is_reject(&e) => {
                eprintln!("warning: {}: skipped: {e}", file.display());
                out.rejects += 1;
            }
            Err(e) => return Err(anyhow!("{}: {e}", file.display())),
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct IngestStats {
    records: usize,
    rejects: usize,
    /// Pooled offset standard deviation before normalisation.
    offset_std: f64,
    strokes: u64,
    normalized: bool,
}

pub fn run(args: IngestArgs) -> CmdResult {
    let out_dir = args.out.clone().context("--out is required")?;
    let input = || args.input.clone().with_context(|| format!("--input is required for {:?} input", args.format));
    let ingested = match args.format {
        Format::Synthetic => {
            let cfg = CorpusConfig {
                classes: args.classes.clone(),
                per_class: args.per_class,
                h: args.h,
                w: args.w,
                pad_frac: args.pad_frac,
                jitter: args.jitter,
            };
            Ingested { sketches: gen_shape_corpus(&cfg, args.seed)?.into_iter().map(|(_, s)| s).collect(), rejects: 0 }
        }
        Format::Svg => read_svgs(&input()?, &args)?,
        _ => read_lines(&input()?, &args)?,
    };
    if ingested.sketches.is_empty() {
        return Err(anyhow!("no sketches were read").into());
    }
    let stats = offset_stats(&ingested.sketches)?;
    let sketches = if args.normalize { normalize_offsets(&ingested.sketches)?.0 } else { ingested.sketches };

    create_dir(&out_dir)?;
    write_effective(&out_dir.join("config.json"), &args)?;
    write_sketches(&out_dir.join(SKETCHES_FILE), &sketches)?;
    let summary = IngestStats {
        records: sketches.len(),
        rejects: ingested.rejects,
        offset_std: stats.offset_std,
        strokes: stats.count,
        normalized: args.normalize,
    };
    fs::write(out_dir.join("stats.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    if args.renders {
        let dir = out_dir.join("renders");
        create_dir(&dir)?;
        for (i, s) in sketches.iter().enumerate() {
            let img = render_input_image(s, args.h, args.w, args.pad_frac).with_context(|| format!("rendering '{}'", s.source_id))?;
            write_pgm(&dir.join(format!("{i:05}.pgm")), &img)?;
        }
    }
    println!("wrote {} sketches ({} rejected) to {}", sketches.len(), ingested.rejects, out_dir.display());
    Ok(())
}
