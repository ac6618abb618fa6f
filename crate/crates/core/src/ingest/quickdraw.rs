use serde::Deserialize;
use serde_json::Value;

use super::{polylines_to_sketch, Polyline};
use crate::error::{Error, Result};
use crate::stroke::Sketch;

fn json_error(e: serde_json::Error) -> Error {
    // single-line records: the column is the byte position
    Error::Parse { offset: e.column().saturating_sub(1), message: e.to_string() }
}

fn as_f64_list(v: &Value, what: &str) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| Error::Parse { offset: 0, message: format!("{what} is not an array") })?;
    arr.iter()
        .map(|x| x.as_f64().ok_or_else(|| Error::Parse { offset: 0, message: format!("non-numeric value in {what}") }))
        .collect()
}

/// Parses one Quickdraw NDJSON record (`"drawing": [[xs, ys(, ts)], ...]`,
/// `"word"`, optional `"key_id"`).
pub fn parse_quickdraw_line(line: &str) -> Result<Sketch> {
    let record: Value = serde_json::from_str(line).map_err(json_error)?;
    let drawing = record
        .get("drawing")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Parse { offset: 0, message: "missing \"drawing\" array".into() })?;
    let mut lines = Vec::with_capacity(drawing.len());
    for (k, stroke) in drawing.iter().enumerate() {
        let parts = stroke
            .as_array()
            .filter(|p| p.len() >= 2)
            .ok_or_else(|| Error::Parse { offset: 0, message: format!("stroke {k} is not [xs, ys]") })?;
        let xs = as_f64_list(&parts[0], "xs")?;
        let ys = as_f64_list(&parts[1], "ys")?;
        if xs.len() != ys.len() {
            return Err(Error::Parse { offset: 0, message: format!("stroke {k} has {} xs but {} ys", xs.len(), ys.len()) });
        }
        lines.push(Polyline::new(xs.into_iter().zip(ys).collect()));
    }
    if lines.iter().all(|l| l.points.is_empty()) {
        return Err(Error::EmptySketch);
    }
    let class = record.get("word").and_then(Value::as_str).map(str::to_owned);
    let id = match record.get("key_id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => String::new(),
    };
    polylines_to_sketch(id, class, &lines)
}

#[derive(Deserialize)]
struct PointListRecord {
    id: String,
    #[serde(default)]
    class: Option<String>,
    polylines: Vec<Vec<[f64; 2]>>,
}

/// Parses one point-list record: `{"id", "class", "polylines": [[[x, y], ...], ...]}`.
pub fn parse_point_list_line(line: &str) -> Result<(String, Option<String>, Vec<Polyline>)> {
    let rec: PointListRecord = serde_json::from_str(line).map_err(json_error)?;
    let lines: Vec<Polyline> =
        rec.polylines.into_iter().map(|pts| Polyline::new(pts.into_iter().map(|[x, y]| (x, y)).collect())).collect();
    if lines.iter().all(|l| l.points.is_empty()) {
        return Err(Error::EmptySketch);
    }
    Ok((rec.id, rec.class, lines))
}
