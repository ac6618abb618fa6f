//! Differentiable stroke rasterizer, Gaussian blur and the pixel loss.
//!
//! Pixel `(row i, col j)` sits at canvas position `(x = j, y = i)`. Sketch
//! coordinates are mapped onto the canvas with a [`ScaleShift`] derived
//! from the ground-truth drawing, which centres it and fits its larger
//! extent to the canvas.

use crate::error::{Error, Result};
use crate::image::PixelImage;
use crate::stroke::{bounds, to_absolute, AbsPoint, Sketch};

/// Distance added to segments drawn with the pen lifted.
pub const PEN_UP_PENALTY: f64 = 1e6;
/// Lower clamp applied to predicted intensities before taking logs.
pub const LOG_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleShift {
    pub lambda: f64,
    pub x_shift: f64,
    pub y_shift: f64,
}

impl ScaleShift {
    /// Maps a sketch-space point onto the `h × w` canvas.
    #[inline]
    pub fn apply(&self, x: f64, y: f64, h: usize, w: usize) -> (f64, f64) {
        (self.lambda * x - self.x_shift + w as f64 / 2.0, self.lambda * y - self.y_shift + h as f64 / 2.0)
    }
}

/// Scale and centring shift computed from ground-truth points.
///
/// A collapsed extent contributes an infinite ratio, so a vertical or
/// horizontal line is scaled by its other dimension; a single dot gets
/// `lambda = 1`.
pub fn scale_params(gt_points: &[AbsPoint], h: usize, w: usize) -> Result<ScaleShift> {
    let b = bounds(gt_points)?;
    let ratio = |extent: f64, size: usize| if extent > 0.0 { size as f64 / extent } else { f64::INFINITY };
    let mut lambda = ratio(b.width(), w).min(ratio(b.height(), h));
    if !lambda.is_finite() {
        lambda = 1.0;
    }
    Ok(ScaleShift {
        lambda,
        x_shift: (b.x_max + b.x_min) / 2.0 * lambda,
        y_shift: (b.y_max + b.y_min) / 2.0 * lambda,
    })
}

/// Euclidean distance from `p` to the closed segment `ab`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    segment_projection(p, a, b).0
}

/// Returns `(distance, t)` where `a + t (b - a)` is the closest point.
#[inline]
fn segment_projection(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (ex, ey) = (b.0 - a.0, b.1 - a.1);
    let len2 = ex * ex + ey * ey;
    let t = if len2 > 0.0 { (((p.0 - a.0) * ex + (p.1 - a.1) * ey) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (a.0 + t * ex, a.1 + t * ey);
    (((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt(), t)
}

#[inline]
pub fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Segments in canvas space: `(a, b, penalty)`.
struct CanvasSegments(Vec<((f64, f64), (f64, f64), f64)>);

impl CanvasSegments {
    fn new(points: &[AbsPoint], ss: &ScaleShift, h: usize, w: usize) -> Self {
        let mapped: Vec<(f64, f64)> = points.iter().map(|p| ss.apply(p.x, p.y, h, w)).collect();
        CanvasSegments(
            (1..points.len())
                .map(|t| {
                    let penalty = if points[t].s1_prev >= 0.5 { 0.0 } else { PEN_UP_PENALTY };
                    (mapped[t - 1], mapped[t], penalty)
                })
                .collect(),
        )
    }

    /// Smallest penalised distance at a pixel and the winning segment.
    #[inline]
    fn nearest(&self, px: (f64, f64)) -> Option<(f64, usize, f64)> {
        let mut best: Option<(f64, usize, f64)> = None;
        for (k, &(a, b, pen)) in self.0.iter().enumerate() {
            let (d, t) = segment_projection(px, a, b);
            let d = d + pen;
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, k, t));
            }
        }
        best
    }
}

/// Per-pixel intensity `σ(2 − 5 · min_t(dist_t + penalty_t))`.
pub fn rasterize(points: &[AbsPoint], ss: &ScaleShift, h: usize, w: usize) -> PixelImage {
    let segs = CanvasSegments::new(points, ss, h, w);
    let mut img = PixelImage::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            if let Some((d, _, _)) = segs.nearest((j as f64, i as f64)) {
                img.set(i, j, sigmoid(2.0 - 5.0 * d));
            }
        }
    }
    img
}

/// Index of the nearest segment for every pixel (`usize::MAX` when there is none).
pub fn argmin_map(points: &[AbsPoint], ss: &ScaleShift, h: usize, w: usize) -> Vec<usize> {
    let segs = CanvasSegments::new(points, ss, h, w);
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            out.push(segs.nearest((j as f64, i as f64)).map_or(usize::MAX, |(_, k, _)| k));
        }
    }
    out
}

/// Rasterizes a sketch scaled by its own bounds.
pub fn rasterize_sketch(sketch: &Sketch, h: usize, w: usize) -> Result<PixelImage> {
    let pts = to_absolute(&sketch.strokes);
    let ss = scale_params(&pts, h, w)?;
    Ok(rasterize(&pts, &ss, h, w))
}

pub fn kernel_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Normalised 1-D Gaussian taps for offsets `-r..=r`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = kernel_radius(sigma) as i64;
    let taps: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / total).collect()
}

/// Half-sample symmetric reflection of `i` into `0..n`.
#[inline]
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

fn convolve_rows(img: &PixelImage, kernel: &[f64], adjoint: bool) -> PixelImage {
    let r = (kernel.len() / 2) as i64;
    let mut out = PixelImage::zeros(img.h, img.w);
    for i in 0..img.h {
        let row = &img.data[i * img.w..(i + 1) * img.w];
        let dst = &mut out.data[i * img.w..(i + 1) * img.w];
        for j in 0..img.w {
            for (k, &wt) in kernel.iter().enumerate() {
                let src = reflect(j as i64 + k as i64 - r, img.w);
                if adjoint {
                    dst[src] += wt * row[j];
                } else {
                    dst[j] += wt * row[src];
                }
            }
        }
    }
    out
}

fn convolve_cols(img: &PixelImage, kernel: &[f64], adjoint: bool) -> PixelImage {
    let r = (kernel.len() / 2) as i64;
    let mut out = PixelImage::zeros(img.h, img.w);
    for i in 0..img.h {
        for (k, &wt) in kernel.iter().enumerate() {
            let src = reflect(i as i64 + k as i64 - r, img.h);
            for j in 0..img.w {
                if adjoint {
                    out.data[src * img.w + j] += wt * img.data[i * img.w + j];
                } else {
                    out.data[i * img.w + j] += wt * img.data[src * img.w + j];
                }
            }
        }
    }
    out
}

/// Separable Gaussian blur, radius `ceil(3σ)`, reflected borders.
pub fn gaussian_blur(img: &PixelImage, sigma: f64) -> PixelImage {
    let k = gaussian_kernel(sigma);
    let mut out = convolve_cols(&convolve_rows(img, &k, false), &k, false);
    for v in &mut out.data {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// Transpose of the (unclamped) blur operator, used to pull gradients back.
pub fn gaussian_blur_adjoint(grad: &PixelImage, sigma: f64) -> PixelImage {
    let k = gaussian_kernel(sigma);
    convolve_rows(&convolve_cols(grad, &k, true), &k, true)
}

fn check_dims(a: &PixelImage, b: &PixelImage) -> Result<()> {
    if (a.h, a.w) != (b.h, b.w) {
        return Err(Error::ShapeMismatch(format!("{}x{} vs {}x{}", a.h, a.w, b.h, b.w)));
    }
    Ok(())
}

/// `−mean(I · log I')` with `I'` clamped to `[1e-7, 1]`. With `full_bce`
/// the complementary `−(1 − I) log(1 − I')` term is added.
pub fn pixel_loss_with(i_gt: &PixelImage, i_pred: &PixelImage, full_bce: bool) -> Result<f64> {
    check_dims(i_gt, i_pred)?;
    let n = i_gt.data.len() as f64;
    let total: f64 = i_gt
        .data
        .iter()
        .zip(&i_pred.data)
        .map(|(&t, &p)| {
            let p = p.clamp(LOG_CLAMP, 1.0);
            let mut v = -t * p.ln();
            if full_bce {
                v -= (1.0 - t) * (1.0 - p).max(LOG_CLAMP).ln();
            }
            v
        })
        .sum();
    Ok(total / n)
}

pub fn pixel_loss(i_gt: &PixelImage, i_pred: &PixelImage) -> Result<f64> {
    pixel_loss_with(i_gt, i_pred, false)
}

/// Pixel loss and its gradient with respect to each predicted offset.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrad {
    pub loss: f64,
    pub d_dx: Vec<f64>,
    pub d_dy: Vec<f64>,
}

/// Absolute points of a predicted sequence whose pen states may be soft.
pub fn predicted_points(offsets: &[(f64, f64)], pen_down: &[f64]) -> Vec<AbsPoint> {
    let (mut x, mut y) = (0.0, 0.0);
    offsets
        .iter()
        .enumerate()
        .map(|(t, &(dx, dy))| {
            x += dx;
            y += dy;
            AbsPoint { x, y, s1_prev: if t == 0 { 0.0 } else { pen_down[t - 1] } }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct PixelLossSpec {
    pub h: usize,
    pub w: usize,
    pub sigma: f64,
    pub full_bce: bool,
}

/// Forward `blur ∘ rasterize ∘ loss` against a ground-truth image and the
/// analytic gradient with respect to predicted offsets.
///
/// `pen_down[t]` is the (possibly soft) pen-down value of predicted stroke
/// `t`; it only gates visibility and receives no gradient. Through the
/// minimum only the winning segment of each pixel gets gradient.
pub fn pixel_loss_grad_against(
    target: &PixelImage,
    offsets: &[(f64, f64)],
    pen_down: &[f64],
    ss: &ScaleShift,
    spec: PixelLossSpec,
) -> Result<RasterGrad> {
    let PixelLossSpec { h, w, sigma, full_bce } = spec;
    let n = offsets.len();
    if pen_down.len() != n {
        return Err(Error::ShapeMismatch(format!("{} offsets but {} pen states", n, pen_down.len())));
    }
    let points = predicted_points(offsets, pen_down);
    let segs = CanvasSegments::new(&points, ss, h, w);

    let mut raw = PixelImage::zeros(h, w);
    let mut nearest = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let hit = segs.nearest((j as f64, i as f64));
            if let Some((d, _, _)) = hit {
                raw.set(i, j, sigmoid(2.0 - 5.0 * d));
            }
            nearest.push(hit);
        }
    }
    let pred = gaussian_blur(&raw, sigma);
    check_dims(target, &pred)?;
    let loss = pixel_loss_with(target, &pred, full_bce)?;

    let npix = (h * w) as f64;
    let mut g_pred = PixelImage::zeros(h, w);
    for (k, g) in g_pred.data.iter_mut().enumerate() {
        let (t, p) = (target.data[k], pred.data[k]);
        // the blur output is clamped to [0, 1]; the clamp is inactive in practice
        if p > LOG_CLAMP {
            *g -= t / (p * npix);
        }
        if full_bce && 1.0 - p > LOG_CLAMP {
            *g += (1.0 - t) / ((1.0 - p) * npix);
        }
    }
    let g_raw = gaussian_blur_adjoint(&g_pred, sigma);

    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let Some((d, seg, t)) = nearest[k] else { continue };
            let p = raw.data[k];
            let g_d = -5.0 * g_raw.data[k] * p * (1.0 - p);
            let (a, b, pen) = segs.0[seg];
            let dist = d - pen;
            if g_d == 0.0 || dist <= 0.0 {
                continue;
            }
            let (px, py) = (j as f64, i as f64);
            let (qx, qy) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
            let (ux, uy) = ((px - qx) / dist, (py - qy) / dist);
            // ∂dist/∂a = −(1−t)·u, ∂dist/∂b = −t·u (t is locally constant when clamped)
            let (wa, wb) = (1.0 - t, t);
            gx[seg] -= g_d * wa * ux;
            gy[seg] -= g_d * wa * uy;
            gx[seg + 1] -= g_d * wb * ux;
            gy[seg + 1] -= g_d * wb * uy;
        }
    }

    // canvas → sketch space, then points → offsets by reverse prefix sums
    let mut d_dx = vec![0.0; n];
    let mut d_dy = vec![0.0; n];
    let (mut ax, mut ay) = (0.0, 0.0);
    for t in (0..n).rev() {
        ax += gx[t] * ss.lambda;
        ay += gy[t] * ss.lambda;
        d_dx[t] = ax;
        d_dy[t] = ay;
    }
    Ok(RasterGrad { loss, d_dx, d_dy })
}

/// Blurred ground-truth target for the pixel loss.
pub fn target_image(gt: &Sketch, ss: &ScaleShift, h: usize, w: usize, sigma: f64) -> PixelImage {
    gaussian_blur(&rasterize(&to_absolute(&gt.strokes), ss, h, w), sigma)
}

/// Pixel loss gradient for a prediction against a ground-truth sketch.
#[allow(clippy::too_many_arguments)]
pub fn pixel_loss_grad(
    gt: &Sketch,
    pred_offsets: &[(f64, f64)],
    pred_pen_down: &[f64],
    ss: &ScaleShift,
    h: usize,
    w: usize,
    sigma: f64,
) -> Result<RasterGrad> {
    let target = target_image(gt, ss, h, w, sigma);
    pixel_loss_grad_against(&target, pred_offsets, pred_pen_down, ss, PixelLossSpec { h, w, sigma, full_bce: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stroke::{PenState, Stroke5};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn pt(x: f64, y: f64, s1_prev: f64) -> AbsPoint {
        AbsPoint { x, y, s1_prev }
    }

    #[test]
    fn scale_params_examples() {
        let ss = scale_params(&[pt(-1.0, -1.0, 0.0), pt(1.0, 1.0, 1.0)], 28, 28).unwrap();
        assert_eq!(ss, ScaleShift { lambda: 14.0, x_shift: 0.0, y_shift: 0.0 });
        let ss = scale_params(&[pt(0.0, 0.0, 0.0), pt(2.0, 1.0, 1.0)], 28, 28).unwrap();
        assert_eq!(ss, ScaleShift { lambda: 14.0, x_shift: 14.0, y_shift: 7.0 });
        let ss = scale_params(&[pt(-3.0, -0.5, 0.0), pt(3.0, 0.5, 1.0)], 20, 40).unwrap();
        assert_eq!((ss.x_shift, ss.y_shift), (0.0, 0.0));
    }

    #[test]
    fn degenerate_extents() {
        let vertical = scale_params(&[pt(1.0, 0.0, 0.0), pt(1.0, 4.0, 1.0)], 28, 28).unwrap();
        assert_eq!(vertical.lambda, 7.0);
        let dot = scale_params(&[pt(2.0, 3.0, 0.0)], 28, 28).unwrap();
        assert_eq!(dot, ScaleShift { lambda: 1.0, x_shift: 2.0, y_shift: 3.0 });
        assert!(scale_params(&[], 28, 28).is_err());
    }

    #[test]
    fn distance_cases() {
        assert_eq!(point_segment_distance((0.0, 1.0), (-1.0, 0.0), (1.0, 0.0)), 1.0);
        assert_eq!(point_segment_distance((2.0, 0.0), (-1.0, 0.0), (1.0, 0.0)), 1.0);
        assert_eq!(point_segment_distance((3.0, 4.0), (0.0, 0.0), (0.0, 0.0)), 5.0);
    }

    #[test]
    fn distance_matches_dense_sampling() {
        let mut rng = crate::rng::stream(11, "segdist", 0);
        for _ in 0..1000 {
            let mut r = || (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let (p, a, b) = (r(), r(), r());
            let n = 10_000;
            let brute = (0..=n)
                .map(|k| {
                    let s = k as f64 / n as f64;
                    let q = (a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1));
                    ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((point_segment_distance(p, a, b) - brute).abs() < 1e-3);
        }
    }

    #[test]
    fn intensity_on_segment_and_far_away() {
        // horizontal segment along canvas row 8
        let ss = ScaleShift { lambda: 1.0, x_shift: 0.0, y_shift: 0.0 };
        let pts = [pt(-4.0, 0.0, 0.0), pt(4.0, 0.0, 1.0)];
        let img = rasterize(&pts, &ss, 32, 16);
        assert_relative_eq!(img.get(16, 8), 1.0 / (1.0 + (-2.0f64).exp()), epsilon = 1e-12);
        assert_relative_eq!(img.get(26, 8), 1.0 / (1.0 + 48.0f64.exp()), max_relative = 1e-9);
        assert!(img.get(26, 8) < 1.5e-21);

        let hidden = rasterize(&[pt(-4.0, 0.0, 0.0), pt(4.0, 0.0, 0.0)], &ss, 32, 16);
        assert!(hidden.data.iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn blur_basics() {
        let flat = PixelImage::from_vec(9, 9, vec![0.3; 81]).unwrap();
        assert!(gaussian_blur(&flat, 2.0).data.iter().all(|v| (v - 0.3).abs() < 1e-12));

        let mut imp = PixelImage::zeros(21, 21);
        imp.set(10, 10, 1.0);
        let blurred = gaussian_blur(&imp, 2.0);
        let taps: Vec<f64> = (-6..=6).map(|i: i32| (-(i * i) as f64 / 8.0).exp()).collect();
        let c = 1.0 / taps.iter().sum::<f64>();
        assert_relative_eq!(blurred.get(10, 10), c * c, max_relative = 1e-12);

        let mut rng = crate::rng::stream(2, "blur", 0);
        let img = PixelImage::from_vec(7, 12, (0..84).map(|_| rng.random::<f64>()).collect()).unwrap();
        let a = gaussian_blur(&img.flip_horizontal(), 2.0);
        let b = gaussian_blur(&img, 2.0).flip_horizontal();
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn blur_adjoint_is_transpose() {
        let mut rng = crate::rng::stream(4, "adj", 0);
        let (h, w) = (5, 8);
        let x = PixelImage::from_vec(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y = PixelImage::from_vec(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap();
        let ax = gaussian_blur(&x, 2.0);
        let aty = gaussian_blur_adjoint(&y, 2.0);
        let lhs: f64 = ax.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&aty.data).map(|(a, b)| a * b).sum();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn pixel_loss_examples() {
        let ones = PixelImage::from_vec(2, 2, vec![1.0; 4]).unwrap();
        let e = PixelImage::from_vec(2, 2, vec![(-1.0f64).exp(); 4]).unwrap();
        let zeros = PixelImage::zeros(2, 2);
        assert_eq!(pixel_loss(&ones, &ones).unwrap(), 0.0);
        assert_relative_eq!(pixel_loss(&ones, &e).unwrap(), 1.0, max_relative = 1e-12);
        assert_eq!(pixel_loss(&zeros, &e).unwrap(), 0.0);
        assert!(pixel_loss(&ones, &PixelImage::zeros(3, 2)).is_err());
        // full BCE adds the complementary term
        assert_relative_eq!(
            pixel_loss_with(&zeros, &e, true).unwrap(),
            -(1.0 - (-1.0f64).exp()).ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn all_pen_up_prediction_has_zero_gradient() {
        let gt = Sketch::new(
            "g",
            None,
            vec![
                Stroke5::new(0.0, 0.0, PenState::Down),
                Stroke5::new(1.0, 0.5, PenState::Down),
                Stroke5::new(0.5, 1.0, PenState::End),
            ],
        );
        let ss = scale_params(&to_absolute(&gt.strokes), 16, 16).unwrap();
        let offsets = [(0.1, 0.2), (0.7, 0.3), (0.2, 0.9)];
        let g = pixel_loss_grad(&gt, &offsets, &[0.2, 0.1, 0.0], &ss, 16, 16, 2.0).unwrap();
        assert!(g.d_dx.iter().chain(&g.d_dy).all(|&v| v == 0.0));
        assert!(g.loss > 0.0);
    }
}
