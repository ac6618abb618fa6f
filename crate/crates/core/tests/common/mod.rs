//! Reference implementations written independently of the library.

#![allow(dead_code)]

use sketchembed::mdn::{bivariate_density, MdnParams};
use sketchembed::stroke::Stroke5;

fn perp_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    // clamped projection, written out independently
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let c1 = vx * wx + vy * wy;
    if c1 <= 0.0 {
        return (wx * wx + wy * wy).sqrt();
    }
    let c2 = vx * vx + vy * vy;
    if c2 <= c1 {
        return ((p.0 - b.0).powi(2) + (p.1 - b.1).powi(2)).sqrt();
    }
    let t = c1 / c2;
    ((p.0 - a.0 - t * vx).powi(2) + (p.1 - a.1 - t * vy).powi(2)).sqrt()
}

pub fn rdp_recursive(pts: &[(f64, f64)], eps: f64) -> Vec<(f64, f64)> {
    let last = pts.len() - 1;
    let mut idx = 0;
    let mut dmax = -1.0;
    for (i, &p) in pts.iter().enumerate().take(last).skip(1) {
        let d = perp_dist(p, pts[0], pts[last]);
        if d > dmax {
            dmax = d;
            idx = i;
        }
    }
    if dmax > eps {
        let mut left = rdp_recursive(&pts[..=idx], eps);
        let right = rdp_recursive(&pts[idx..], eps);
        left.pop();
        left.extend(right);
        left
    } else {
        vec![pts[0], pts[last]]
    }
}

pub fn brute_nll(params: &[MdnParams], targets: &[Stroke5]) -> f64 {
    let end = targets.iter().position(|s| s.s3 == 1.0).map_or(targets.len(), |i| i + 1);
    let mut total = 0.0;
    for (p, s) in params.iter().zip(targets).take(end) {
        let mut dens = 0.0;
        for j in 0..p.pi.len() {
            dens += p.pi[j] * bivariate_density(s.dx, s.dy, p.mu_x[j], p.mu_y[j], p.sigma_x[j], p.sigma_y[j], p.rho[j]);
        }
        total -= dens.ln();
    }
    total / targets.len() as f64
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| a[i][i]).collect();
    let vecs = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (vals, vecs)
}
