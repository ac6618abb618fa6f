//! Mixture-density stroke head: parameter transform, losses, sampling and
//! the pixel-loss weighting curriculum.
//!
//! A raw head output of width `6M + 3` is laid out as
//! `[π logits | μx | μy | log σx | log σy | ρ pre-tanh | pen logits]`,
//! each block `M` wide except the trailing 3 pen logits.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal, Rng};
use crate::stroke::Stroke5;

/// Probability floor for pen cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct MdnParams {
    pub pi: Vec<f64>,
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub sigma_y: Vec<f64>,
    pub rho: Vec<f64>,
    pub pen: [f64; 3],
}

impl MdnParams {
    pub fn components(&self) -> usize {
        self.pi.len()
    }
}

pub fn raw_width(m: usize) -> usize {
    6 * m + 3
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn mdn_split(raw: &[f64], m: usize) -> Result<MdnParams> {
    if raw.len() != raw_width(m) {
        return Err(Error::ShapeMismatch(format!("MDN output has {} values, expected {}", raw.len(), raw_width(m))));
    }
    let block = |k: usize| &raw[k * m..(k + 1) * m];
    let pen = softmax(&raw[6 * m..]);
    Ok(MdnParams {
        pi: softmax(block(0)),
        mu_x: block(1).to_vec(),
        mu_y: block(2).to_vec(),
        sigma_x: block(3).iter().map(|v| v.exp()).collect(),
        sigma_y: block(4).iter().map(|v| v.exp()).collect(),
        rho: block(5).iter().map(|v| v.tanh()).collect(),
        pen: [pen[0], pen[1], pen[2]],
    })
}

pub fn log_bivariate_density(dx: f64, dy: f64, mu_x: f64, mu_y: f64, sigma_x: f64, sigma_y: f64, rho: f64) -> f64 {
    let zx = (dx - mu_x) / sigma_x;
    let zy = (dy - mu_y) / sigma_y;
    let one_m_r2 = 1.0 - rho * rho;
    let q = (zx * zx + zy * zy - 2.0 * rho * zx * zy) / one_m_r2;
    -(2.0 * std::f64::consts::PI).ln() - sigma_x.ln() - sigma_y.ln() - 0.5 * one_m_r2.ln() - 0.5 * q
}

pub fn bivariate_density(dx: f64, dy: f64, mu_x: f64, mu_y: f64, sigma_x: f64, sigma_y: f64, rho: f64) -> f64 {
    log_bivariate_density(dx, dy, mu_x, mu_y, sigma_x, sigma_y, rho).exp()
}

/// `log Σ_j π_j N(Δ | μ_j, Σ_j)` via log-sum-exp.
pub fn mixture_log_density(p: &MdnParams, dx: f64, dy: f64) -> f64 {
    let terms: Vec<f64> = (0..p.components())
        .map(|j| p.pi[j].ln() + log_bivariate_density(dx, dy, p.mu_x[j], p.mu_y[j], p.sigma_x[j], p.sigma_y[j], p.rho[j]))
        .collect();
    log_sum_exp(&terms)
}

/// Offset NLL over the steps up to and including the first end token,
/// normalised by the full sequence length.
pub fn stroke_nll(params: &[MdnParams], targets: &[Stroke5]) -> Result<f64> {
    if params.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!("{} parameter steps for {} targets", params.len(), targets.len())));
    }
    if params.is_empty() {
        return Err(Error::EmptySketch);
    }
    let valid = targets.iter().position(Stroke5::is_end).map_or(targets.len(), |i| i + 1);
    let mut total = 0.0;
    for (p, s) in params.iter().zip(targets).take(valid) {
        if !(s.dx.is_finite() && s.dy.is_finite()) {
            return Err(Error::NonFinite("stroke target".into()));
        }
        total -= mixture_log_density(p, s.dx, s.dy);
    }
    Ok(total / params.len() as f64)
}

/// Pen-state cross-entropy averaged over every step, padding included.
pub fn pen_loss(pen_probs: &[[f64; 3]], targets: &[[f64; 3]]) -> f64 {
    let total: f64 = pen_probs
        .iter()
        .zip(targets)
        .map(|(q, s)| -(0..3).map(|m| s[m] * q[m].max(PROB_CLAMP).ln()).sum::<f64>())
        .sum();
    total / pen_probs.len().max(1) as f64
}

/// Draws an index from a discrete distribution.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Mixture weights sharpened or flattened by a sampling temperature.
pub fn tempered_pi(pi: &[f64], temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = pi.iter().map(|p| p.max(f64::MIN_POSITIVE).ln() / temperature).collect();
    softmax(&logits)
}

/// Reparameterised draw `μ + L ε` from component `j`, with `L` the
/// lower-triangular factor of the component covariance.
pub fn offset_from_noise(p: &MdnParams, j: usize, eps: (f64, f64), sigma_scale: f64) -> (f64, f64) {
    let (sx, sy, r) = (p.sigma_x[j] * sigma_scale, p.sigma_y[j] * sigma_scale, p.rho[j]);
    (p.mu_x[j] + sx * eps.0, p.mu_y[j] + r * sy * eps.0 + sy * (1.0 - r * r).sqrt() * eps.1)
}

/// Samples a component from `π` (tempered), then an offset from it.
pub fn sample_offsets(p: &MdnParams, temperature: f64, rng: &mut Rng) -> (f64, f64) {
    let j = sample_categorical(&tempered_pi(&p.pi, temperature), rng);
    let eps = (normal(rng), normal(rng));
    offset_from_noise(p, j, eps, temperature.sqrt())
}

/// `L_pen + (1 − α) L_stroke + α L_pixel`.
pub fn total_loss(l_pen: f64, l_stroke: f64, l_pixel: f64, alpha: f64) -> f64 {
    l_pen + (1.0 - alpha) * l_stroke + alpha * l_pixel
}

/// Piecewise-constant pixel-loss weight: `min(α_max, step_size · ⌊step / interval⌋)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub step_size: f64,
    pub interval: u64,
    pub alpha_max: f64,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule { step_size: 0.05, interval: 10_000, alpha_max: 0.5 }
    }
}

pub fn alpha_at(step: u64, sched: &AlphaSchedule) -> f64 {
    let raw = sched.step_size * (step / sched.interval.max(1)) as f64;
    raw.min(sched.alpha_max)
}

/// `KL(N(μ, σ²) ‖ N(0, 1))` summed over dimensions.
pub fn kl_to_standard_normal(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter().zip(sigma).map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln())).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stroke::{PenState, PAD_TOKEN};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn single(m: usize, mu: (f64, f64), sigma: (f64, f64), rho: f64) -> MdnParams {
        MdnParams {
            pi: vec![1.0 / m as f64; m],
            mu_x: vec![mu.0; m],
            mu_y: vec![mu.1; m],
            sigma_x: vec![sigma.0; m],
            sigma_y: vec![sigma.1; m],
            rho: vec![rho; m],
            pen: [1.0 / 3.0; 3],
        }
    }

    #[test]
    fn split_of_zeros() {
        let p = mdn_split(&[0.0; 15], 2).unwrap();
        assert_eq!(p.pi, vec![0.5, 0.5]);
        assert_eq!(p.sigma_x, vec![1.0, 1.0]);
        assert_eq!(p.rho, vec![0.0, 0.0]);
        for v in p.pen {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert!(mdn_split(&[0.0; 14], 2).is_err());
    }

    #[test]
    fn pi_is_shift_invariant() {
        let mut raw: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = mdn_split(&raw, 2).unwrap();
        raw[0] += 3.0;
        raw[1] += 3.0;
        let b = mdn_split(&raw, 2).unwrap();
        for (x, y) in a.pi.iter().zip(&b.pi) {
            assert_relative_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn random_split_satisfies_invariants() {
        let mut rng = crate::rng::stream(5, "split", 0);
        for _ in 0..1000 {
            let raw: Vec<f64> = (0..raw_width(30)).map(|_| 4.0 * normal(&mut rng)).collect();
            let p = mdn_split(&raw, 30).unwrap();
            assert!((p.pi.iter().sum::<f64>() - 1.0).abs() < 1e-6 && p.pi.iter().all(|&v| v >= 0.0));
            assert!((p.pen.iter().sum::<f64>() - 1.0).abs() < 1e-6 && p.pen.iter().all(|&v| v >= 0.0));
            assert!(p.sigma_x.iter().chain(&p.sigma_y).all(|&s| s > 0.0));
            assert!(p.rho.iter().all(|r| r.abs() < 1.0));
        }
    }

    #[test]
    fn density_at_mean_and_factorisation() {
        assert_relative_eq!(bivariate_density(0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0), 0.159_154_943_091_895_35, max_relative = 1e-12);
        let n1 = |x: f64, m: f64, s: f64| (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        let v = bivariate_density(0.3, -1.2, 0.1, 0.4, 0.7, 1.9, 0.0);
        assert_relative_eq!(v, n1(0.3, 0.1, 0.7) * n1(-1.2, 0.4, 1.9), max_relative = 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        let mut rng = crate::rng::stream(9, "integrate", 0);
        for _ in 0..5 {
            let sx = rng.random_range(0.3..2.0);
            let sy = rng.random_range(0.3..2.0);
            let rho = rng.random_range(-0.9..0.9);
            let (mx, my) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            // midpoint rule over [−8σ, 8σ]²
            let n = 800;
            let (hx, hy) = (16.0 * sx / n as f64, 16.0 * sy / n as f64);
            let mut total = 0.0;
            for a in 0..n {
                let x = mx - 8.0 * sx + (a as f64 + 0.5) * hx;
                for b in 0..n {
                    let y = my - 8.0 * sy + (b as f64 + 0.5) * hy;
                    total += bivariate_density(x, y, mx, my, sx, sy, rho);
                }
            }
            assert!((total * hx * hy - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn nll_examples() {
        let p = single(1, (0.0, 0.0), (1.0, 1.0), 0.0);
        let target = [Stroke5::new(0.0, 0.0, PenState::End)];
        assert_relative_eq!(stroke_nll(&[p], &target).unwrap(), (2.0 * std::f64::consts::PI).ln(), max_relative = 1e-12);

        // duplicated component with halved weights
        let base = MdnParams { pi: vec![0.3, 0.7], mu_x: vec![0.0, 1.0], mu_y: vec![0.5, -1.0], sigma_x: vec![1.0, 0.5], sigma_y: vec![0.8, 1.2], rho: vec![0.1, -0.4], pen: [1.0 / 3.0; 3] };
        let mut dup = base.clone();
        dup.pi = vec![0.15, 0.7, 0.15];
        for v in [&mut dup.mu_x, &mut dup.mu_y, &mut dup.sigma_x, &mut dup.sigma_y, &mut dup.rho] {
            let first = v[0];
            v.push(first);
        }
        let t = [Stroke5::new(0.4, 0.2, PenState::End)];
        assert_relative_eq!(stroke_nll(&[base], &t).unwrap(), stroke_nll(&[dup], &t).unwrap(), max_relative = 1e-12);

        let p = single(2, (0.5, 0.5), (1.0, 1.0), 0.3);
        let mut last = f64::NEG_INFINITY;
        for k in 0..10 {
            let d = 0.5 + k as f64 * 0.4;
            let v = stroke_nll(std::slice::from_ref(&p), &[Stroke5::new(d, d, PenState::End)]).unwrap();
            assert!(v > last);
            last = v;
        }
        assert!(stroke_nll(&[p.clone()], &[Stroke5::new(f64::NAN, 0.0, PenState::End)]).is_err());
    }

    #[test]
    fn nll_masks_padding_but_divides_by_full_length() {
        let p = single(1, (0.0, 0.0), (1.0, 1.0), 0.0);
        let targets = [Stroke5::new(0.0, 0.0, PenState::End), PAD_TOKEN, PAD_TOKEN, PAD_TOKEN];
        let v = stroke_nll(&vec![p; 4], &targets).unwrap();
        assert_relative_eq!(v, (2.0 * std::f64::consts::PI).ln() / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn pen_loss_examples() {
        let t = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(pen_loss(&t, &t), 0.0);
        assert_relative_eq!(pen_loss(&[[1.0 / 3.0; 3]; 2], &t), 3.0f64.ln(), max_relative = 1e-12);
        let bad = [[1e-9, 0.5, 0.5]];
        assert_relative_eq!(pen_loss(&bad, &[[1.0, 0.0, 0.0]]), 16.118_095_650_958_32, max_relative = 1e-9);
    }

    #[test]
    fn degenerate_sigma_returns_mean() {
        let p = MdnParams { pi: vec![0.5, 0.5], mu_x: vec![1.0, -2.0], mu_y: vec![3.0, 4.0], sigma_x: vec![1e-12; 2], sigma_y: vec![1e-12; 2], rho: vec![0.3; 2], pen: [1.0, 0.0, 0.0] };
        let mut rng = crate::rng::stream(1, "s", 0);
        for _ in 0..50 {
            let (x, y) = sample_offsets(&p, 1.0, &mut rng);
            assert!(((x - 1.0).abs() < 1e-9 && (y - 3.0).abs() < 1e-9) || ((x + 2.0).abs() < 1e-9 && (y - 4.0).abs() < 1e-9));
        }
    }

    #[test]
    fn sampled_correlation_and_component_frequencies() {
        let mut rng = crate::rng::stream(3, "mc", 0);
        let p = single(1, (0.0, 0.0), (1.0, 2.0), 0.8);
        let n = 100_000;
        let draws: Vec<(f64, f64)> = (0..n).map(|_| sample_offsets(&p, 1.0, &mut rng)).collect();
        let mx = draws.iter().map(|d| d.0).sum::<f64>() / n as f64;
        let my = draws.iter().map(|d| d.1).sum::<f64>() / n as f64;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for &(x, y) in &draws {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx).powi(2);
            syy += (y - my).powi(2);
        }
        assert!((sxy / (sxx * syy).sqrt() - 0.8).abs() < 0.02);

        let pi = vec![0.1, 0.2, 0.3, 0.4];
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_categorical(&pi, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(&pi) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.02);
        }
    }

    #[test]
    fn loss_weighting() {
        assert_eq!(total_loss(1.0, 2.0, 4.0, 0.0), 3.0);
        assert_eq!(total_loss(1.0, 2.0, 4.0, 1.0), 5.0);
        assert_eq!(total_loss(1.0, 2.0, 4.0, 0.5), 4.0);
    }

    #[test]
    fn alpha_schedule_values() {
        let s = AlphaSchedule::default();
        assert_eq!(alpha_at(0, &s), 0.0);
        assert_eq!(alpha_at(9_999, &s), 0.0);
        assert_eq!(alpha_at(10_000, &s), 0.05);
        assert_eq!(alpha_at(1_000_000_000, &s), 0.5);
        assert_eq!(alpha_at(1_000_000_000, &AlphaSchedule { alpha_max: 0.75, ..s }), 0.75);
    }

    #[test]
    fn kl_closed_form() {
        assert_eq!(kl_to_standard_normal(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        assert_eq!(kl_to_standard_normal(&[1.0], &[1.0]), 0.5);
    }

    proptest! {
        #[test]
        fn split_is_on_the_simplex(raw in prop::collection::vec(-50.0f64..50.0, 33)) {
            let p = mdn_split(&raw, 5).unwrap();
            prop_assert!((p.pi.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!((p.pen.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn alpha_monotone_and_bounded(a in 0u64..1_000_000, b in 0u64..1_000_000, cap in 0.0f64..1.0) {
            let s = AlphaSchedule { alpha_max: cap, ..AlphaSchedule::default() };
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(alpha_at(lo, &s) <= alpha_at(hi, &s));
            prop_assert!(alpha_at(hi, &s) <= cap && alpha_at(lo, &s) >= 0.0);
        }

        #[test]
        fn total_loss_is_affine(p in -5.0f64..5.0, s in -5.0f64..5.0, x in -5.0f64..5.0, a in 0.0f64..1.0) {
            let v = total_loss(p, s, x, a);
            prop_assert!((total_loss(p + 1.0, s, x, a) - v - 1.0).abs() < 1e-12);
            prop_assert!((total_loss(p, s + 1.0, x, a) - v - (1.0 - a)).abs() < 1e-12);
            prop_assert!((total_loss(p, s, x + 1.0, a) - v - a).abs() < 1e-12);
        }
    }
}
