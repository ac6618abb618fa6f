//! Dataset ingestion: external formats to canonical stroke-5 sketches,
//! simplification, filtering, normalisation, splits and input images.

mod corpus;
mod quickdraw;
mod rdp;
mod svg;

pub use corpus::{gen_shape_corpus, CorpusConfig, SHAPE_CLASSES};
pub use quickdraw::{parse_quickdraw_line, parse_point_list_line};
pub use rdp::rdp_simplify;
pub use svg::sample_svg_paths;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PixelImage;
use crate::raster::{rasterize, scale_params};
use crate::rng;
use crate::stroke::{to_absolute, PenState, Sketch, Stroke5};

/// RDP tolerance used for character-style point data.
pub const RDP_EPSILON_CHARACTERS: f64 = 2.0;
/// RDP tolerance used for sampled SVG paths.
pub const RDP_EPSILON_SVG: f64 = 5.0;
pub const DEFAULT_SAMPLES_PER_CURVE: usize = 32;
pub const DEFAULT_MIN_LEN_FRAC: f64 = 0.02;
pub const DEFAULT_MIN_DISP_FRAC: f64 = 0.01;
pub const DEFAULT_PAD_FRAC: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polyline {
    pub points: Vec<(f64, f64)>,
}

impl Polyline {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        Polyline { points }
    }

    pub fn path_length(&self) -> f64 {
        self.points.windows(2).map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt()).sum()
    }

    pub fn displacement(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt(),
            _ => 0.0,
        }
    }
}

/// Converts absolute pen strokes into stroke-5 offsets. The first offset is
/// measured from the canvas origin; the last point of every stroke lifts
/// the pen, and the very last point ends the sketch.
pub fn polylines_to_sketch(id: impl Into<String>, class: Option<String>, lines: &[Polyline]) -> Result<Sketch> {
    let total: usize = lines.iter().map(|l| l.points.len()).sum();
    if total == 0 {
        return Err(Error::EmptySketch);
    }
    let mut strokes = Vec::with_capacity(total);
    let (mut px, mut py) = (0.0, 0.0);
    let non_empty: Vec<&Polyline> = lines.iter().filter(|l| !l.points.is_empty()).collect();
    for (k, line) in non_empty.iter().enumerate() {
        for (i, &(x, y)) in line.points.iter().enumerate() {
            if !(x.is_finite() && y.is_finite()) {
                return Err(Error::NonFinite(format!("point {i} of stroke {k}")));
            }
            let pen = if i + 1 < line.points.len() {
                PenState::Down
            } else if k + 1 < non_empty.len() {
                PenState::Up
            } else {
                PenState::End
            };
            strokes.push(Stroke5::new(x - px, y - py, pen));
            (px, py) = (x, y);
        }
    }
    Ok(Sketch::new(id, class, strokes))
}

/// Drops strokes that are short or barely move, relative to the largest
/// bounding-box side of the whole drawing.
pub fn filter_strokes(lines: &[Polyline], min_len_frac: f64, min_disp_frac: f64) -> Result<Vec<Polyline>> {
    let all = lines.iter().flat_map(|l| l.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let scale = if x0.is_finite() { (x1 - x0).max(y1 - y0) } else { 0.0 };
    let kept: Vec<Polyline> = lines
        .iter()
        .filter(|l| l.path_length() >= min_len_frac * scale && l.displacement() >= min_disp_frac * scale)
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::NoStrokesRemain);
    }
    Ok(kept)
}

/// Pooled offset statistics. `count` is the number of strokes pooled
/// (each contributes its dx and dy).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub offset_std: f64,
    pub count: u64,
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn live_strokes(s: &Sketch) -> &[Stroke5] {
    &s.strokes[..s.effective_len()]
}

pub fn offset_stats(sketches: &[Sketch]) -> Result<DatasetStats> {
    let values = || sketches.iter().flat_map(|s| live_strokes(s).iter().flat_map(|st| [st.dx, st.dy]));
    let n = values().count();
    if n == 0 {
        return Err(Error::EmptySketch);
    }
    let mean = compensated_sum(values()) / n as f64;
    let var = compensated_sum(values().map(|v| (v - mean).powi(2))) / n as f64;
    let offset_std = var.sqrt();
    if !(offset_std > 0.0) {
        return Err(Error::InvalidInput("all stroke offsets are zero".into()));
    }
    Ok(DatasetStats { offset_std, count: (n / 2) as u64 })
}

fn rescale(sketches: &[Sketch], factor: f64) -> Vec<Sketch> {
    sketches
        .iter()
        .map(|s| {
            let mut out = s.clone();
            for st in &mut out.strokes {
                st.dx *= factor;
                st.dy *= factor;
            }
            out
        })
        .collect()
}

/// Divides every offset by the pooled standard deviation of all offsets.
pub fn normalize_offsets(sketches: &[Sketch]) -> Result<(Vec<Sketch>, DatasetStats)> {
    let stats = offset_stats(sketches)?;
    Ok((rescale(sketches, 1.0 / stats.offset_std), stats))
}

/// Applies previously computed statistics (e.g. training-set statistics to held-out data).
pub fn apply_stats(sketches: &[Sketch], stats: &DatasetStats) -> Vec<Sketch> {
    rescale(sketches, 1.0 / stats.offset_std)
}

pub fn denormalize_offsets(sketches: &[Sketch], stats: &DatasetStats) -> Vec<Sketch> {
    rescale(sketches, stats.offset_std)
}

/// Renders a sketch as an encoder input: scaled and centred into the
/// canvas interior left after padding each side by `round(pad_frac · size)`.
pub fn render_input_image(sketch: &Sketch, h: usize, w: usize, pad_frac: f64) -> Result<PixelImage> {
    if h < 4 || w < 4 || !(0.0..0.5).contains(&pad_frac) {
        return Err(Error::InvalidInput(format!("bad canvas {h}x{w} with pad fraction {pad_frac}")));
    }
    let live = live_strokes(sketch);
    if live.is_empty() {
        return Err(Error::EmptySketch);
    }
    let pad_h = (pad_frac * h as f64).round() as usize;
    let pad_w = (pad_frac * w as f64).round() as usize;
    let pts = to_absolute(live);
    // The full canvas centre coincides with the interior centre, so the
    // interior-fitted scale can be applied on the full canvas directly.
    let ss = scale_params(&pts, h - 2 * pad_h, w - 2 * pad_w)?;
    Ok(rasterize(&pts, &ss, h, w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_classes: Vec<String>,
    pub holdout_classes: Vec<String>,
    pub seed: u64,
}

/// Seeded shuffle of the class list; the first `n_holdout` are held out.
pub fn make_split(classes: &[String], n_holdout: usize, seed: u64) -> Result<SplitSpec> {
    if n_holdout == 0 || n_holdout >= classes.len() {
        return Err(Error::InvalidInput(format!("n_holdout {} out of range for {} classes", n_holdout, classes.len())));
    }
    let mut shuffled = classes.to_vec();
    shuffled.shuffle(&mut rng::stream(seed, "split", 0));
    let train_classes = shuffled.split_off(n_holdout);
    Ok(SplitSpec { train_classes, holdout_classes: shuffled, seed })
}
