//! Procedural sketch corpus: simple jittered shapes and two-shape scenes
//! with recorded latent factors.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{polylines_to_sketch, render_input_image, Polyline};
use crate::error::{Error, Result};
use crate::image::PixelImage;
use crate::rng::{self, normal, Rng};
use crate::stroke::Sketch;

pub const SHAPE_CLASSES: &[&str] = &[
    "circle",
    "square",
    "triangle",
    "zigzag",
    "line",
    "snowman",
    "boxstack",
    "star",
    "cross",
    "spiral",
    "wave",
    "diamond",
    "house",
    "scene_angle",
    "scene_distance",
    "scene_size",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub classes: Vec<String>,
    pub per_class: usize,
    pub h: usize,
    pub w: usize,
    pub pad_frac: f64,
    /// Vertex noise as a fraction of shape size.
    pub jitter: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            classes: vec!["circle".into(), "square".into(), "triangle".into(), "zigzag".into(), "line".into()],
            per_class: 64,
            h: 28,
            w: 28,
            pad_frac: super::DEFAULT_PAD_FRAC,
            jitter: 0.02,
        }
    }
}

/// Generates `per_class` examples of every class, each paired with its
/// rendered input image. Example `i` of class `c` depends only on
/// `(seed, c, i)`.
pub fn gen_shape_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Vec<(PixelImage, Sketch)>> {
    for c in &cfg.classes {
        if !SHAPE_CLASSES.contains(&c.as_str()) {
            return Err(Error::UnknownClass(c.clone()));
        }
    }
    let mut out = Vec::with_capacity(cfg.classes.len() * cfg.per_class);
    for class in &cfg.classes {
        for i in 0..cfg.per_class {
            let mut r = rng::stream(seed, &format!("corpus/{class}"), i as u64);
            let (lines, factors) = draw_class(class, cfg.jitter, &mut r);
            let mut sketch = polylines_to_sketch(format!("{class}-{i:05}"), Some(class.clone()), &lines)?;
            sketch.factors = factors;
            let img = render_input_image(&sketch, cfg.h, cfg.w, cfg.pad_frac)?;
            out.push((img, sketch));
        }
    }
    Ok(out)
}

struct Pen<'a> {
    rng: &'a mut Rng,
    jitter: f64,
    /// rotation applied to all points
    angle: f64,
}

impl Pen<'_> {
    fn point(&mut self, x: f64, y: f64, size: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (rx, ry) = (c * x - s * y, s * x + c * y);
        (rx + self.jitter * size * normal(self.rng), ry + self.jitter * size * normal(self.rng))
    }

    fn polygon(&mut self, cx: f64, cy: f64, radius: (f64, f64), sides: usize, phase: f64) -> Polyline {
        let mut pts: Vec<(f64, f64)> = (0..sides)
            .map(|k| {
                let a = phase + TAU * k as f64 / sides as f64;
                self.point(cx + radius.0 * a.cos(), cy + radius.1 * a.sin(), radius.0.max(radius.1))
            })
            .collect();
        pts.push(pts[0]);
        Polyline::new(pts)
    }

    fn path(&mut self, pts: &[(f64, f64)], size: f64) -> Polyline {
        Polyline::new(pts.iter().map(|&(x, y)| self.point(x, y, size)).collect())
    }
}

/// Shapes are drawn around the origin at roughly unit size.
fn draw_class(class: &str, jitter: f64, rng: &mut Rng) -> (Vec<Polyline>, Option<BTreeMap<String, f64>>) {
    let size = rng.random_range(0.9..1.1);
    let aspect = rng.random_range(0.85..1.15);
    let tilt = rng.random_range(-0.2..0.2);
    let mut pen = Pen { rng, jitter, angle: tilt };
    let r = (size * aspect, size / aspect);
    let lines = match class {
        "circle" => {
            let sides = pen.rng.random_range(12..=16);
            let phase = pen.rng.random_range(0.0..TAU);
            vec![pen.polygon(0.0, 0.0, r, sides, phase)]
        }
        "square" => vec![pen.polygon(0.0, 0.0, r, 4, PI / 4.0)],
        "triangle" => vec![pen.polygon(0.0, 0.0, r, 3, -PI / 2.0)],
        "diamond" => {
            pen.angle = 0.0;
            vec![pen.polygon(0.0, 0.0, (r.0 * 0.7, r.1 * 1.2), 4, 0.0)]
        }
        "star" => {
            let pts: Vec<(f64, f64)> = (0..=10)
                .map(|k| {
                    let a = -PI / 2.0 + PI * k as f64 / 5.0;
                    let rad = if k % 2 == 0 { size } else { 0.45 * size };
                    (rad * a.cos(), rad * a.sin())
                })
                .collect();
            vec![pen.path(&pts, size)]
        }
        "zigzag" => {
            let teeth = pen.rng.random_range(4..=6);
            let pts: Vec<(f64, f64)> = (0..=teeth)
                .map(|k| (-size + 2.0 * size * k as f64 / teeth as f64, if k % 2 == 0 { -0.4 * size } else { 0.4 * size }))
                .collect();
            vec![pen.path(&pts, size)]
        }
        "line" => {
            let pts: Vec<(f64, f64)> = (0..=2).map(|k| (-size + size * k as f64, 0.0)).collect();
            vec![pen.path(&pts, size)]
        }
        "wave" => {
            let pts: Vec<(f64, f64)> =
                (0..=12).map(|k| (-size + 2.0 * size * k as f64 / 12.0, 0.35 * size * (TAU * k as f64 / 6.0).sin())).collect();
            vec![pen.path(&pts, size)]
        }
        "spiral" => {
            let pts: Vec<(f64, f64)> = (0..=18)
                .map(|k| {
                    let a = TAU * 2.0 * k as f64 / 18.0;
                    let rad = size * (0.1 + 0.9 * k as f64 / 18.0);
                    (rad * a.cos(), rad * a.sin())
                })
                .collect();
            vec![pen.path(&pts, size)]
        }
        "cross" => vec![pen.path(&[(-size, 0.0), (size, 0.0)], size), pen.path(&[(0.0, -size), (0.0, size)], size)],
        "house" => vec![pen.path(
            &[(-0.7 * size, 1.0 * size), (-0.7 * size, 0.0), (0.0, -0.9 * size), (0.7 * size, 0.0), (0.7 * size, 1.0 * size), (-0.7 * size, 1.0 * size)],
            size,
        )],
        "snowman" => {
            let three = pen.rng.random_bool(0.5);
            let radii: &[f64] = if three { &[0.55, 0.4, 0.28] } else { &[0.6, 0.4] };
            let mut y = 0.0;
            let mut out = Vec::new();
            for (k, &rad) in radii.iter().enumerate() {
                if k > 0 {
                    y -= radii[k - 1] + rad;
                }
                let rr = rad * size;
                out.push(pen.polygon(0.0, y * size, (rr, rr), 8, PI / 2.0));
            }
            out
        }
        "boxstack" => {
            let n = pen.rng.random_range(2..=3);
            (0..n)
                .map(|k| {
                    let half = 0.4 * size;
                    let cy = -(k as f64) * 2.0 * half;
                    pen.polygon(0.0, cy, (half * 2f64.sqrt(), half * 2f64.sqrt()), 4, PI / 4.0)
                })
                .collect()
        }
        "scene_angle" | "scene_distance" | "scene_size" => {
            return scene(class, &mut pen, size);
        }
        _ => unreachable!("class names are checked by the caller"),
    };
    (lines, None)
}

/// Square at the origin with a circle satellite; one factor varies.
fn scene(class: &str, pen: &mut Pen<'_>, size: f64) -> (Vec<Polyline>, Option<BTreeMap<String, f64>>) {
    pen.angle = 0.0;
    let mut angle = PI / 4.0;
    let mut distance = 2.0 * size;
    let mut sat = 0.5 * size;
    let kind = match class {
        "scene_angle" => {
            angle = pen.rng.random_range(0.0..TAU);
            "angle"
        }
        "scene_distance" => {
            distance = pen.rng.random_range(1.4..3.5) * size;
            "distance"
        }
        _ => {
            sat = pen.rng.random_range(0.2..0.9) * size;
            "size"
        }
    };
    let half = 0.5 * size;
    let square = pen.polygon(0.0, 0.0, (half * 2f64.sqrt(), half * 2f64.sqrt()), 4, PI / 4.0);
    let (cx, cy) = (distance * angle.cos(), distance * angle.sin());
    let circle = pen.polygon(cx, cy, (sat, sat), 12, 0.0);
    let value = match kind {
        "angle" => angle,
        "distance" => distance,
        _ => sat,
    };
    (vec![square, circle], Some(BTreeMap::from([(kind.to_string(), value)])))
}
