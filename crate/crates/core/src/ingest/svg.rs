//! Minimal SVG path reader: extracts `d` attributes of `<path>` elements
//! and samples them into polylines. Supports M/L/H/V/C/Q/Z in absolute and
//! relative form; anything else (notably arcs) is rejected.

use super::Polyline;
use crate::error::{Error, Result};

fn path_data(svg: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut rest = 0;
    while let Some(found) = svg[rest..].find("<path") {
        let start = rest + found;
        let end = svg[start..].find('>').map_or(svg.len(), |e| start + e);
        let tag = &svg[start..end];
        let mut search = 0;
        while let Some(pos) = tag[search..].find("d=") {
            let at = search + pos;
            // require an attribute boundary so `id=` is not mistaken for `d=`
            let boundary = at == 0 || tag.as_bytes()[at - 1].is_ascii_whitespace();
            let quote = tag.as_bytes().get(at + 2).copied();
            if boundary && matches!(quote, Some(b'"') | Some(b'\'')) {
                let q = quote.unwrap() as char;
                let body_start = at + 3;
                if let Some(len) = tag[body_start..].find(q) {
                    out.push((start + body_start, &tag[body_start..body_start + len]));
                }
                break;
            }
            search = at + 2;
        }
        rest = end;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Token {
    Cmd(char),
    Num(f64),
}

fn tokenize(d: &str, base: usize) -> Result<Vec<Token>> {
    let bytes = d.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() || c == ',' {
            i += 1;
        } else if c.is_ascii_alphabetic() && c != 'e' && c != 'E' {
            out.push(Token::Cmd(c));
            i += 1;
        } else if c == '-' || c == '+' || c == '.' || c.is_ascii_digit() {
            let start = i;
            let mut seen_dot = false;
            let mut seen_exp = false;
            if c == '-' || c == '+' {
                i += 1;
            }
            while i < bytes.len() {
                let ch = bytes[i] as char;
                if ch.is_ascii_digit() {
                    i += 1;
                } else if ch == '.' && !seen_dot && !seen_exp {
                    seen_dot = true;
                    i += 1;
                } else if (ch == 'e' || ch == 'E') && !seen_exp {
                    seen_exp = true;
                    i += 1;
                    if i < bytes.len() && (bytes[i] == b'-' || bytes[i] == b'+') {
                        i += 1;
                    }
                } else {
                    break;
                }
            }
            let text = &d[start..i];
            let v = text.parse::<f64>().map_err(|_| Error::Parse { offset: base + start, message: format!("bad number '{text}'") })?;
            out.push(Token::Num(v));
        } else {
            return Err(Error::Parse { offset: base + i, message: format!("unexpected character '{c}' in path data") });
        }
    }
    Ok(out)
}

fn cubic(p0: (f64, f64), p1: (f64, f64), p2: (f64, f64), p3: (f64, f64), t: f64) -> (f64, f64) {
    let u = 1.0 - t;
    let (a, b, c, d) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
    (a * p0.0 + b * p1.0 + c * p2.0 + d * p3.0, a * p0.1 + b * p1.1 + c * p2.1 + d * p3.1)
}

fn quadratic(p0: (f64, f64), p1: (f64, f64), p2: (f64, f64), t: f64) -> (f64, f64) {
    let u = 1.0 - t;
    let (a, b, c) = (u * u, 2.0 * u * t, t * t);
    (a * p0.0 + b * p1.0 + c * p2.0, a * p0.1 + b * p1.1 + c * p2.1)
}

fn parse_path(tokens: &[Token], samples: usize, offset: usize, out: &mut Vec<Polyline>) -> Result<()> {
    let mut i = 0;
    let mut cur = (0.0, 0.0);
    let mut start = (0.0, 0.0);
    let mut line: Vec<(f64, f64)> = Vec::new();
    let mut cmd: Option<char> = None;
    let flush = |line: &mut Vec<(f64, f64)>, out: &mut Vec<Polyline>| {
        if line.len() >= 2 {
            out.push(Polyline::new(std::mem::take(line)));
        } else {
            line.clear();
        }
    };
    let take = |i: &mut usize, n: usize| -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            match tokens.get(*i) {
                Some(Token::Num(x)) => v.push(*x),
                _ => return Err(Error::Parse { offset, message: "missing path coordinate".into() }),
            }
            *i += 1;
        }
        Ok(v)
    };
    while i < tokens.len() {
        let c = match tokens[i] {
            Token::Cmd(c) => {
                i += 1;
                c
            }
            Token::Num(_) => match cmd {
                // implicit repetition; extra pairs after a moveto are linetos
                Some('M') => 'L',
                Some('m') => 'l',
                Some(c) => c,
                None => return Err(Error::Parse { offset, message: "path data must start with a command".into() }),
            },
        };
        let rel = c.is_ascii_lowercase();
        let abs = |x: f64, y: f64, cur: (f64, f64)| if rel { (cur.0 + x, cur.1 + y) } else { (x, y) };
        match c.to_ascii_uppercase() {
            'M' => {
                let v = take(&mut i, 2)?;
                flush(&mut line, out);
                cur = abs(v[0], v[1], cur);
                start = cur;
                line.push(cur);
            }
            'L' => {
                let v = take(&mut i, 2)?;
                cur = abs(v[0], v[1], cur);
                line.push(cur);
            }
            'H' => {
                let v = take(&mut i, 1)?;
                cur = (if rel { cur.0 + v[0] } else { v[0] }, cur.1);
                line.push(cur);
            }
            'V' => {
                let v = take(&mut i, 1)?;
                cur = (cur.0, if rel { cur.1 + v[0] } else { v[0] });
                line.push(cur);
            }
            'C' => {
                let v = take(&mut i, 6)?;
                let (p1, p2, p3) = (abs(v[0], v[1], cur), abs(v[2], v[3], cur), abs(v[4], v[5], cur));
                if line.is_empty() {
                    line.push(cur);
                }
                for k in 1..=samples {
                    line.push(cubic(cur, p1, p2, p3, k as f64 / samples as f64));
                }
                cur = p3;
            }
            'Q' => {
                let v = take(&mut i, 4)?;
                let (p1, p2) = (abs(v[0], v[1], cur), abs(v[2], v[3], cur));
                if line.is_empty() {
                    line.push(cur);
                }
                for k in 1..=samples {
                    line.push(quadratic(cur, p1, p2, k as f64 / samples as f64));
                }
                cur = p2;
            }
            'Z' => {
                if line.last() != Some(&start) && !line.is_empty() {
                    line.push(start);
                }
                cur = start;
                flush(&mut line, out);
                line.push(cur);
            }
            other => return Err(Error::UnsupportedCommand(other)),
        }
        // a `line.push(cur)` after Z leaves a lone point that the next M discards
        if c.eq_ignore_ascii_case(&'Z') {
            cmd = None;
        } else {
            cmd = Some(c);
        }
    }
    flush(&mut line, out);
    Ok(())
}

/// Samples every subpath of every `<path>` element, in document order.
/// Bezier segments are sampled at `samples_per_curve` uniform parameter steps.
pub fn sample_svg_paths(svg_text: &str, samples_per_curve: usize) -> Result<Vec<Polyline>> {
    let samples = samples_per_curve.max(1);
    let mut out = Vec::new();
    for (offset, d) in path_data(svg_text) {
        let tokens = tokenize(d, offset)?;
        parse_path(&tokens, samples, offset, &mut out)?;
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no drawable paths in SVG".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn svg(d: &str) -> String {
        format!(r#"<svg xmlns="http://www.w3.org/2000/svg"><path id="p1" fill="none" d="{d}"/></svg>"#)
    }

    #[test]
    fn straight_line() {
        let lines = sample_svg_paths(&svg("M 0 0 L 10 0"), 8).unwrap();
        assert_eq!(lines, vec![Polyline::new(vec![(0.0, 0.0), (10.0, 0.0)])]);
    }

    #[test]
    fn relative_commands_accumulate() {
        let lines = sample_svg_paths(&svg("m1,1 l2,0 0,2 h-2 v-2"), 8).unwrap();
        assert_eq!(lines[0].points, vec![(1.0, 1.0), (3.0, 1.0), (3.0, 3.0), (1.0, 3.0), (1.0, 1.0)]);
    }

    #[test]
    fn bezier_endpoints_are_samples() {
        let lines = sample_svg_paths(&svg("M1 2 C 3 8, 9 -4, 12 5 Q 14 9 20 0"), 16).unwrap();
        let pts = &lines[0].points;
        assert_eq!(pts.len(), 1 + 16 + 16);
        assert_eq!(pts[0], (1.0, 2.0));
        assert!((pts[16].0 - 12.0).abs() < 1e-12 && (pts[16].1 - 5.0).abs() < 1e-12);
        assert!((pts[32].0 - 20.0).abs() < 1e-12 && pts[32].1.abs() < 1e-12);
    }

    #[test]
    fn quarter_circle_arc_length() {
        let r = 10.0;
        let k = 0.552_284_749_830_793_4 * r;
        let d = format!("M {r} 0 C {r} {k} {k} {r} 0 {r}");
        let lines = sample_svg_paths(&svg(&d), 64).unwrap();
        let true_len = std::f64::consts::PI * r / 2.0;
        assert!((lines[0].path_length() - true_len).abs() / true_len < 0.01);
    }

    #[test]
    fn subpaths_and_order() {
        let text = format!("{}{}", svg("M0 0 L1 0 M5 5 L6 6"), svg("M9 9 L8 8"));
        let lines = sample_svg_paths(&text, 4).unwrap();
        let starts: Vec<_> = lines.iter().map(|l| l.points[0]).collect();
        assert_eq!(starts, vec![(0.0, 0.0), (5.0, 5.0), (9.0, 9.0)]);
    }

    #[test]
    fn unsupported_and_empty() {
        assert!(matches!(sample_svg_paths(&svg("M0 0 A 5 5 0 0 1 10 0"), 4), Err(Error::UnsupportedCommand('A'))));
        assert!(sample_svg_paths("<svg></svg>", 4).is_err());
        assert!(sample_svg_paths(&svg("M0 0 L 1 x"), 4).is_err());
    }

    #[test]
    fn compact_number_forms() {
        let toks = tokenize("M.5.5-1e1,2", 0).unwrap();
        assert_eq!(toks, vec![Token::Cmd('M'), Token::Num(0.5), Token::Num(0.5), Token::Num(-10.0), Token::Num(2.0)]);
    }
}
