//! Stroke-5 sketch representation.
//!
//! A sketch is a sequence of pen movements `(dx, dy, s1, s2, s3)`: a
//! canvas offset from the previous point plus a one-hot pen state
//! (down, up, end). Canvas x grows to the right and y grows downward.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoder input at the first timestep.
pub const START_TOKEN: Stroke5 = Stroke5 { dx: 0.0, dy: 0.0, s1: 1.0, s2: 0.0, s3: 0.0 };
/// Filler appended after the end of a sketch.
pub const PAD_TOKEN: Stroke5 = Stroke5 { dx: 0.0, dy: 0.0, s1: 0.0, s2: 0.0, s3: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenState {
    Down,
    Up,
    End,
}

impl PenState {
    pub fn index(self) -> usize {
        match self {
            PenState::Down => 0,
            PenState::Up => 1,
            PenState::End => 2,
        }
    }

    pub fn from_index(i: usize) -> PenState {
        match i {
            0 => PenState::Down,
            1 => PenState::Up,
            _ => PenState::End,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 5]", into = "[f64; 5]")]
pub struct Stroke5 {
    pub dx: f64,
    pub dy: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl Stroke5 {
    pub fn new(dx: f64, dy: f64, pen: PenState) -> Self {
        let mut s = [0.0; 3];
        s[pen.index()] = 1.0;
        Stroke5 { dx, dy, s1: s[0], s2: s[1], s3: s[2] }
    }

    pub fn pen_states(&self) -> [f64; 3] {
        [self.s1, self.s2, self.s3]
    }

    /// The pen state if the flags are exactly one-hot.
    pub fn pen(&self) -> Option<PenState> {
        match self.pen_states() {
            [a, b, c] if a == 1.0 && b == 0.0 && c == 0.0 => Some(PenState::Down),
            [a, b, c] if a == 0.0 && b == 1.0 && c == 0.0 => Some(PenState::Up),
            [a, b, c] if a == 0.0 && b == 0.0 && c == 1.0 => Some(PenState::End),
            _ => None,
        }
    }

    pub fn is_end(&self) -> bool {
        self.s3 == 1.0
    }
}

impl From<[f64; 5]> for Stroke5 {
    fn from(a: [f64; 5]) -> Self {
        Stroke5 { dx: a[0], dy: a[1], s1: a[2], s2: a[3], s3: a[4] }
    }
}

impl From<Stroke5> for [f64; 5] {
    fn from(s: Stroke5) -> Self {
        [s.dx, s.dy, s.s1, s.s2, s.s3]
    }
}

/// A drawing plus its bookkeeping. `factors` holds ground-truth latent
/// variables for generated scenes (angle, distance, size) and is omitted
/// from JSON when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sketch {
    #[serde(rename = "id")]
    pub source_id: String,
    #[serde(rename = "class")]
    pub class_id: Option<String>,
    pub strokes: Vec<Stroke5>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<BTreeMap<String, f64>>,
}

impl Sketch {
    pub fn new(source_id: impl Into<String>, class_id: Option<String>, strokes: Vec<Stroke5>) -> Self {
        Sketch { source_id: source_id.into(), class_id, strokes, factors: None }
    }

    /// Number of strokes up to and including the first end token.
    pub fn effective_len(&self) -> usize {
        self.strokes.iter().position(Stroke5::is_end).map_or(self.strokes.len(), |i| i + 1)
    }

    /// Pads with [`PAD_TOKEN`] up to `t_max` strokes.
    pub fn padded(&self, t_max: usize) -> Result<Sketch> {
        if self.strokes.len() > t_max {
            return Err(Error::InvalidInput(format!(
                "sketch '{}' has {} strokes, more than T_max = {}",
                self.source_id,
                self.strokes.len(),
                t_max
            )));
        }
        let mut out = self.clone();
        out.strokes.resize(t_max, PAD_TOKEN);
        Ok(out)
    }

    /// Keeps at most `t_max` strokes, marking the last kept one as the end.
    pub fn truncated(&self, t_max: usize) -> Sketch {
        let mut out = self.clone();
        let n = self.effective_len();
        out.strokes.truncate(n);
        if out.strokes.len() > t_max {
            out.strokes.truncate(t_max);
            if let Some(last) = out.strokes.last_mut() {
                *last = Stroke5::new(last.dx, last.dy, PenState::End);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsPoint {
    pub x: f64,
    pub y: f64,
    /// Pen-down flag of the stroke that led here; gates the segment ending at this point.
    pub s1_prev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    PenStateNotOneHot,
    NonFiniteOffset,
    StrokeAfterEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ViolationKind::PenStateNotOneHot => "pen state is not one-hot",
            ViolationKind::NonFiniteOffset => "offset is not finite",
            ViolationKind::StrokeAfterEnd => "non-padding stroke after end of sketch",
        };
        write!(f, "stroke {}: {}", self.index, what)
    }
}

/// Collects every invariant violation; an empty list means the sketch is valid.
pub fn validate(sketch: &Sketch) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ended = false;
    for (index, s) in sketch.strokes.iter().enumerate() {
        if !(s.dx.is_finite() && s.dy.is_finite()) {
            out.push(Violation { index, kind: ViolationKind::NonFiniteOffset });
        }
        if s.pen().is_none() {
            out.push(Violation { index, kind: ViolationKind::PenStateNotOneHot });
        }
        if ended && *s != PAD_TOKEN {
            out.push(Violation { index, kind: ViolationKind::StrokeAfterEnd });
        }
        ended |= s.is_end();
    }
    out
}

/// Prefix sums of the offsets: point `t` is the sum of offsets `0..=t`.
pub fn to_absolute(strokes: &[Stroke5]) -> Vec<AbsPoint> {
    let mut x = 0.0;
    let mut y = 0.0;
    let mut prev_s1 = 0.0;
    strokes
        .iter()
        .map(|s| {
            x += s.dx;
            y += s.dy;
            let p = AbsPoint { x, y, s1_prev: prev_s1 };
            prev_s1 = s.s1;
            p
        })
        .collect()
}

pub fn bounds(points: &[AbsPoint]) -> Result<BBox> {
    let first = points.first().ok_or(Error::EmptySketch)?;
    let init = BBox { x_min: first.x, x_max: first.x, y_min: first.y, y_max: first.y };
    Ok(points.iter().fold(init, |b, p| BBox {
        x_min: b.x_min.min(p.x),
        x_max: b.x_max.max(p.x),
        y_min: b.y_min.min(p.y),
        y_max: b.y_max.max(p.y),
    }))
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Sketch>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sketch: Sketch = serde_json::from_str(&line).map_err(|e| Error::Parse {
            offset: e.column().saturating_sub(1),
            message: format!("line {}: {}", lineno + 1, e),
        })?;
        out.push(sketch);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut writer: W, sketches: &[Sketch]) -> Result<()> {
    for s in sketches {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sk(strokes: Vec<Stroke5>) -> Sketch {
        Sketch::new("t", None, strokes)
    }

    #[test]
    fn well_formed_sketch_validates() {
        let s = sk(vec![
            Stroke5::new(1.0, 0.0, PenState::Down),
            Stroke5::new(0.0, 1.0, PenState::Up),
            Stroke5::new(-1.0, 0.0, PenState::End),
        ]);
        assert!(validate(&s).is_empty());
    }

    #[test]
    fn two_pen_flags_is_a_violation() {
        let mut bad = Stroke5::new(1.0, 0.0, PenState::Down);
        bad.s2 = 1.0;
        let s = sk(vec![Stroke5::new(0.0, 0.0, PenState::Down), bad, Stroke5::new(0.0, 0.0, PenState::End)]);
        assert_eq!(validate(&s), vec![Violation { index: 1, kind: ViolationKind::PenStateNotOneHot }]);
    }

    #[test]
    fn stroke_after_end_is_a_violation() {
        let s = sk(vec![
            Stroke5::new(1.0, 0.0, PenState::End),
            PAD_TOKEN,
            Stroke5::new(1.0, 0.0, PenState::End),
        ]);
        assert_eq!(validate(&s), vec![Violation { index: 2, kind: ViolationKind::StrokeAfterEnd }]);
    }

    #[test]
    fn non_finite_offset_is_a_violation() {
        let s = sk(vec![Stroke5::new(f64::NAN, 0.0, PenState::End)]);
        assert_eq!(validate(&s)[0].kind, ViolationKind::NonFiniteOffset);
    }

    #[test]
    fn absolute_positions() {
        let one = to_absolute(&[Stroke5::new(1.0, 2.0, PenState::End)]);
        assert_eq!((one[0].x, one[0].y), (1.0, 2.0));

        let cancel = to_absolute(&[Stroke5::new(1.0, 0.0, PenState::Down), Stroke5::new(-1.0, 0.0, PenState::End)]);
        assert_eq!((cancel[1].x, cancel[1].y), (0.0, 0.0));

        let pts = to_absolute(&[
            Stroke5::new(1.0, 1.0, PenState::Down),
            Stroke5::new(2.0, 3.0, PenState::Up),
            Stroke5::new(0.0, -1.0, PenState::End),
        ]);
        let xy: Vec<_> = pts.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(xy, vec![(1.0, 1.0), (3.0, 4.0), (3.0, 3.0)]);
        let gates: Vec<_> = pts.iter().map(|p| p.s1_prev).collect();
        assert_eq!(gates, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn bounds_cases() {
        let p = |x, y| AbsPoint { x, y, s1_prev: 1.0 };
        let b = bounds(&[p(0.0, 0.0), p(2.0, 3.0)]).unwrap();
        assert_eq!((b.x_min, b.x_max, b.y_min, b.y_max), (0.0, 2.0, 0.0, 3.0));
        let d = bounds(&[p(5.0, 5.0)]).unwrap();
        assert_eq!((d.x_min, d.x_max, d.y_min, d.y_max), (5.0, 5.0, 5.0, 5.0));
        assert!(matches!(bounds(&[]), Err(Error::EmptySketch)));
    }

    #[test]
    fn bounds_matches_brute_force_scan() {
        use rand::Rng;
        let mut rng = crate::rng::stream(3, "bounds", 0);
        let pts: Vec<AbsPoint> = (0..100)
            .map(|_| AbsPoint { x: rng.random_range(-50.0..50.0), y: rng.random_range(-50.0..50.0), s1_prev: 1.0 })
            .collect();
        let b = bounds(&pts).unwrap();
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for p in &pts {
            if p.x < x_min {
                x_min = p.x;
            }
            if p.x > x_max {
                x_max = p.x;
            }
            if p.y < y_min {
                y_min = p.y;
            }
            if p.y > y_max {
                y_max = p.y;
            }
        }
        assert_eq!(b, BBox { x_min, x_max, y_min, y_max });
    }

    #[test]
    fn jsonl_round_trip_shape() {
        let mut s = sk(vec![Stroke5::new(0.5, -1.25, PenState::End)]);
        s.class_id = Some("circle".into());
        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&s)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "{\"id\":\"t\",\"class\":\"circle\",\"strokes\":[[0.5,-1.25,0.0,0.0,1.0]]}\n");
        assert_eq!(read_jsonl(&buf[..]).unwrap(), vec![s]);
    }

    fn arb_sketch() -> impl Strategy<Value = Sketch> {
        prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0usize..2), 1..20).prop_map(|v| {
            let n = v.len();
            let strokes = v
                .into_iter()
                .enumerate()
                .map(|(i, (dx, dy, p))| {
                    let pen = if i + 1 == n { PenState::End } else { PenState::from_index(p) };
                    Stroke5::new(dx, dy, pen)
                })
                .collect();
            sk(strokes)
        })
    }

    proptest! {
        #[test]
        fn translation_of_first_offset_shifts_all_points(s in arb_sketch(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let base = to_absolute(&s.strokes);
            let mut moved = s.strokes.clone();
            moved[0].dx += a;
            moved[0].dy += b;
            for (p, q) in base.iter().zip(to_absolute(&moved)) {
                prop_assert!((q.x - p.x - a).abs() < 1e-9 && (q.y - p.y - b).abs() < 1e-9);
            }
        }

        #[test]
        fn reverse_cancelling_sequence_ends_at_origin(s in arb_sketch()) {
            let mut strokes = s.strokes.clone();
            for st in s.strokes.iter().rev() {
                strokes.push(Stroke5::new(-st.dx, -st.dy, PenState::Down));
            }
            let last = *to_absolute(&strokes).last().unwrap();
            prop_assert!(last.x.abs() < 1e-9 && last.y.abs() < 1e-9);
        }

        #[test]
        fn padding_keeps_sketch_valid(s in arb_sketch(), extra in 0usize..10) {
            let t_max = s.strokes.len() + extra;
            prop_assert!(validate(&s.padded(t_max).unwrap()).is_empty());
        }
    }
}
