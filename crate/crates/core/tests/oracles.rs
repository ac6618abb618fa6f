//! Cross-checks against independent reference implementations.

mod common;

use common::{brute_nll, jacobi_eigen, rdp_recursive, solve};
use proptest::prelude::*;
use rand::Rng;
use sketchembed::ingest::{rdp_simplify, Polyline};
use sketchembed::mdn::{mdn_split, raw_width, stroke_nll, MdnParams};
use sketchembed::probes::{linear_readout, pca_project, ridge_fit, RIDGE};
use sketchembed::rng::{normal, stream};
use sketchembed::stroke::{PenState, Stroke5};

#[test]
fn rdp_matches_recursive_reference() {
    let mut rng = stream(11, "oracle/rdp", 0);
    for _ in 0..100 {
        let pts: Vec<(f64, f64)> = (0..10).map(|_| (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0))).collect();
        let eps = rng.random_range(0.0..8.0);
        let ours = rdp_simplify(&Polyline::new(pts.clone()), eps).unwrap();
        assert_eq!(ours.points, rdp_recursive(&pts, eps), "eps {eps}");
    }
}

proptest! {
    #[test]
    fn stroke_nll_matches_direct_mixture_sum(
        m in 1usize..=5,
        t in 1usize..8,
        seed in 0u64..10_000,
    ) {
        let mut rng = stream(seed, "oracle/nll", m as u64);
        let params: Vec<MdnParams> = (0..t)
            .map(|_| {
                let raw: Vec<f64> = (0..raw_width(m)).map(|_| rng.random_range(-1.0..1.0)).collect();
                mdn_split(&raw, m).unwrap()
            })
            .collect();
        let mut targets: Vec<Stroke5> = (0..t)
            .map(|_| Stroke5::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), PenState::Down))
            .collect();
        targets[t - 1] = Stroke5::new(targets[t - 1].dx, targets[t - 1].dy, PenState::End);
        let ours = stroke_nll(&params, &targets).unwrap();
        let oracle = brute_nll(&params, &targets);
        prop_assert!(((ours - oracle) / oracle.abs().max(1e-300)).abs() < 1e-9, "{} vs {}", ours, oracle);
    }
}

#[test]
fn ridge_matches_normal_equations() {
    let mut rng = stream(12, "oracle/ridge", 0);
    let (n, d) = (150, 5);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| normal(&mut rng)).collect()).collect();
    let y: Vec<f64> = x.iter().map(|e| e[0] - 2.0 * e[3] + 0.5 + 0.3 * normal(&mut rng)).collect();
    let refs: Vec<&Vec<f64>> = x.iter().collect();
    let ours = ridge_fit(&refs, &y, RIDGE).unwrap();
    let aug: Vec<Vec<f64>> = x.iter().map(|e| e.iter().copied().chain([1.0]).collect()).collect();
    let gram: Vec<Vec<f64>> = (0..=d).map(|i| (0..=d).map(|j| aug.iter().map(|r| r[i] * r[j]).sum()).collect()).collect();
    let rhs: Vec<f64> = (0..=d).map(|i| aug.iter().zip(&y).map(|(r, t)| r[i] * t).sum()).collect();
    let oracle = solve(gram, rhs);
    for (a, b) in ours.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-6, "{ours:?} vs {oracle:?}");
    }
}

#[test]
fn training_r2_tends_to_exceed_heldout_r2() {
    let mut violations = 0;
    for seed in 0..20u64 {
        let mut rng = stream(seed, "oracle/r2", 0);
        // d = 20 with n_train = 100 makes the expected optimism gap about 2.5 sd
        let x: Vec<Vec<f64>> = (0..300).map(|_| (0..20).map(|_| normal(&mut rng)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|e| e[1] + normal(&mut rng)).collect();
        let fit = linear_readout(&x, &y, 100, seed).unwrap();
        // reconstruct the training set from the same seeded split
        let mut train_pred = Vec::new();
        let mut train_y = Vec::new();
        let mut order: Vec<usize> = (0..300).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut stream(seed, "probe/split", 100));
        for &i in &order[..100] {
            train_pred.push(fit.coef[20] + x[i].iter().zip(&fit.coef).map(|(a, b)| a * b).sum::<f64>());
            train_y.push(y[i]);
        }
        let (train_r2, _) = sketchembed::probes::r2_mse(&train_pred, &train_y).unwrap();
        if train_r2 < fit.result.r2 {
            violations += 1;
        }
    }
    assert!(violations <= 2, "{violations} seeds had held-out R² above training R²");
}

#[test]
fn pca_matches_covariance_eigenvectors() {
    let mut rng = stream(13, "oracle/pca", 0);
    let d = 6;
    let scales = [3.0, 2.0, 1.5, 1.0, 0.5, 0.2];
    let data: Vec<Vec<f64>> = (0..200).map(|_| (0..d).map(|j| scales[j] * normal(&mut rng) + j as f64).collect()).collect();
    let pca = pca_project(&data, 2).unwrap();
    let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / 200.0).collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| data.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / 199.0).collect())
        .collect();
    let (vals, vecs) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let total: f64 = vals.iter().sum();
    for (k, &e) in order.iter().take(2).enumerate() {
        let mut axis = vecs[e].clone();
        let lead = axis.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        for (a, b) in pca.components[k].iter().zip(&axis) {
            assert!((a - b).abs() < 1e-6, "component {k}: {:?} vs {axis:?}", pca.components[k]);
        }
        assert!((pca.explained_ratio[k] - vals[e] / total).abs() < 1e-6);
        for (row, coords) in data.iter().zip(&pca.coords) {
            let proj: f64 = row.iter().zip(&mean).zip(&axis).map(|((x, m), a)| (x - m) * a).sum();
            assert!((coords[k] - proj).abs() < 1e-6);
        }
    }
}
