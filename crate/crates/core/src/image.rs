//! Grayscale intensity images and binary PGM (P5) I/O.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Row-major `h × w` grid of intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelImage {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl PixelImage {
    pub fn zeros(h: usize, w: usize) -> Self {
        PixelImage { h, w, data: vec![0.0; h * w] }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::ShapeMismatch(format!("{} values for a {h}x{w} image", data.len())));
        }
        Ok(PixelImage { h, w, data })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.w + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.w + col] = v;
    }

    pub fn flip_horizontal(&self) -> PixelImage {
        let mut out = self.clone();
        for r in 0..self.h {
            for c in 0..self.w {
                out.set(r, self.w - 1 - c, self.get(r, c));
            }
        }
        out
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.w, self.h)?;
        let bytes: Vec<u8> = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_pgm<R: Read>(mut r: R) -> Result<PixelImage> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut pos = 0;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < buf.len() && (buf[pos].is_ascii_whitespace() || buf[pos] == b'#') {
                if buf[pos] == b'#' {
                    while pos < buf.len() && buf[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Parse { offset: pos, message: "truncated PGM header".into() });
            }
            tokens.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
        }
        if tokens[0] != "P5" {
            return Err(Error::Parse { offset: 0, message: format!("expected P5 magic, found '{}'", tokens[0]) });
        }
        let num = |i: usize| {
            tokens[i].parse::<usize>().map_err(|_| Error::Parse { offset: 0, message: format!("bad header field '{}'", tokens[i]) })
        };
        let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::Parse { offset: 0, message: format!("unsupported maxval {maxval}") });
        }
        // single whitespace byte separates header from raster
        pos += 1;
        let raster = buf.get(pos..pos + w * h).ok_or(Error::Parse { offset: buf.len(), message: "truncated PGM raster".into() })?;
        let data = raster.iter().map(|&b| b as f64 / maxval as f64).collect();
        PixelImage::from_vec(h, w, data)
    }
}
