//! Emergent-property measurements on embeddings: factor readouts,
//! arrangement separability, latent arithmetic and interpolation, PCA, and
//! recognizability of generated sketches.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fewshot::fit_linear;
use crate::image::PixelImage;
use crate::net::model::{images_tensor, ModelConfig};
use crate::net::optim::apply_adam;
use crate::net::params::ParamStore;
use crate::net::tape::{Tape, Tensor};
use crate::rng::{normal, stream};

pub const RIDGE: f64 = 1e-6;
pub const READOUT_SIZES: [usize; 2] = [100, 1000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKind {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutResult {
    pub model_kind: ReadoutKind,
    pub n_train: usize,
    pub n_test: usize,
    pub r2: f64,
    pub mse: f64,
}

/// One line of a probe report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor_kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_kind: Option<ReadoutKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub seed: u64,
}

/// Seeded train/test split: the first `n_train` of a shuffled order train.
fn split(n: usize, n_train: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidInput(format!("need more than {n_train} examples for a readout, have {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, "probe/split", n_train as u64));
    let test = order.split_off(n_train);
    Ok((order, test))
}

fn check_inputs(embeds: &[Vec<f64>], targets: &[f64]) -> Result<usize> {
    if embeds.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!("{} embeddings for {} targets", embeds.len(), targets.len())));
    }
    let d = embeds.first().map(Vec::len).ok_or_else(|| Error::InvalidInput("no embeddings".into()))?;
    if embeds.iter().any(|e| e.len() != d) {
        return Err(Error::ShapeMismatch("embeddings differ in dimension".into()));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("readout target".into()));
    }
    let first = targets[0];
    if targets.iter().all(|&t| t == first) {
        return Err(Error::InvalidInput("targets are constant; R² is undefined".into()));
    }
    Ok(d)
}

/// `R² = 1 − SS_res / SS_tot` and mean squared error.
pub fn r2_mse(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidInput("held-out targets are constant; R² is undefined".into()));
    }
    Ok((1.0 - ss_res / ss_tot, ss_res / n))
}

/// Ridge fit with an appended bias column; coefficients are `[w; b]`.
pub fn ridge_fit(x: &[&Vec<f64>], y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let (n, d) = (x.len(), x[0].len());
    let a = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[i][j] } else { 1.0 });
    let yv = DVector::from_column_slice(y);
    let gram = a.transpose() * &a + DMatrix::identity(d + 1, d + 1) * lambda;
    let rhs = a.transpose() * yv;
    let chol = gram.cholesky().ok_or_else(|| Error::InvalidInput("normal equations are not positive definite".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

pub struct LinearFit {
    pub result: ReadoutResult,
    pub coef: Vec<f64>,
}

pub fn linear_readout(embeds: &[Vec<f64>], targets: &[f64], n_train: usize, seed: u64) -> Result<LinearFit> {
    let d = check_inputs(embeds, targets)?;
    let (train, test) = split(embeds.len(), n_train, seed)?;
    let x: Vec<&Vec<f64>> = train.iter().map(|&i| &embeds[i]).collect();
    let y: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
    let coef = ridge_fit(&x, &y, RIDGE)?;
    let predict = |e: &[f64]| coef[d] + e.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
    let pred: Vec<f64> = test.iter().map(|&i| predict(&embeds[i])).collect();
    let truth: Vec<f64> = test.iter().map(|&i| targets[i]).collect();
    let (r2, mse) = r2_mse(&pred, &truth)?;
    Ok(LinearFit { result: ReadoutResult { model_kind: ReadoutKind::Linear, n_train, n_test: test.len(), r2, mse }, coef })
}

pub const MLP_HIDDEN: usize = 64;
pub const MLP_STEPS: usize = 1000;
pub const MLP_LR: f64 = 1e-2;

/// One-hidden-layer tanh regressor trained full-batch with Adam on
/// standardised inputs and targets.
pub fn nonlinear_readout(embeds: &[Vec<f64>], targets: &[f64], n_train: usize, seed: u64) -> Result<ReadoutResult> {
    let d = check_inputs(embeds, targets)?;
    let (train, test) = split(embeds.len(), n_train, seed)?;
    let mean: Vec<f64> = (0..d).map(|j| train.iter().map(|&i| embeds[i][j]).sum::<f64>() / train.len() as f64).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let v = train.iter().map(|&i| (embeds[i][j] - mean[j]).powi(2)).sum::<f64>() / train.len() as f64;
            if v > 0.0 { v.sqrt() } else { 1.0 }
        })
        .collect();
    let ym = train.iter().map(|&i| targets[i]).sum::<f64>() / train.len() as f64;
    let ys = (train.iter().map(|&i| (targets[i] - ym).powi(2)).sum::<f64>() / train.len() as f64).sqrt().max(f64::MIN_POSITIVE);
    let features = |idx: &[usize]| {
        let data = idx.iter().flat_map(|&i| (0..d).map(|j| (embeds[i][j] - mean[j]) / std[j]).collect::<Vec<_>>()).collect();
        Tensor::matrix(idx.len(), d, data)
    };
    let xtr = features(&train);
    let ytr = Tensor::matrix(train.len(), 1, train.iter().map(|&i| (targets[i] - ym) / ys).collect());

    let mut store = ParamStore::new();
    let mut rng = stream(seed, "probe/mlp", 0);
    let w1 = (0..d * MLP_HIDDEN).map(|_| normal(&mut rng) / (d as f64).sqrt()).collect();
    store.add("w1", Tensor::matrix(d, MLP_HIDDEN, w1), true);
    store.add("b1", Tensor::zeros(vec![MLP_HIDDEN]), true);
    let w2 = (0..MLP_HIDDEN).map(|_| normal(&mut rng) / (MLP_HIDDEN as f64).sqrt()).collect();
    store.add("w2", Tensor::matrix(MLP_HIDDEN, 1, w2), true);
    store.add("b2", Tensor::zeros(vec![1]), true);
    let forward = |tape: &mut Tape, store: &ParamStore, x: &Tensor, train: bool| {
        let p = store.bind(tape, train);
        let xv = tape.constant(x.clone());
        let h = tape.matmul(xv, p.var("w1"));
        let h = tape.add_row(h, p.var("b1"));
        let h = tape.tanh(h);
        let o = tape.matmul(h, p.var("w2"));
        (tape.add_row(o, p.var("b2")), p)
    };
    for _ in 0..MLP_STEPS {
        let mut tape = Tape::new();
        let (out, p) = forward(&mut tape, &store, &xtr, true);
        let yv = tape.constant(ytr.clone());
        let diff = tape.sub(out, yv);
        let sq = tape.mul(diff, diff);
        let loss = tape.mean(sq);
        let g = tape.backward(loss)?;
        let grads: Vec<Option<Vec<f64>>> = p.vars.iter().map(|&v| g.get(v).map(<[f64]>::to_vec)).collect();
        apply_adam(&mut store, &grads, MLP_LR);
    }
    let mut tape = Tape::new();
    let (out, _) = forward(&mut tape, &store, &features(&test), false);
    let pred: Vec<f64> = tape.value(out).data.iter().map(|v| v * ys + ym).collect();
    let truth: Vec<f64> = test.iter().map(|&i| targets[i]).collect();
    let (r2, mse) = r2_mse(&pred, &truth)?;
    Ok(ReadoutResult { model_kind: ReadoutKind::Nonlinear, n_train, n_test: test.len(), r2, mse })
}

/// Linear and non-linear readouts at every size in [`READOUT_SIZES`].
pub fn latent_recovery(embeds: &[Vec<f64>], targets: &[f64], factor_kind: &str, seed: u64) -> Result<Vec<ProbeReport>> {
    let mut out = Vec::new();
    for n_train in READOUT_SIZES {
        let lin = linear_readout(embeds, targets, n_train, seed)?.result;
        let nl = nonlinear_readout(embeds, targets, n_train, seed)?;
        for r in [lin, nl] {
            out.push(ProbeReport {
                probe: "latent_recovery".into(),
                factor_kind: Some(factor_kind.to_string()),
                model_kind: Some(r.model_kind),
                n_train: Some(r.n_train),
                r2: Some(r.r2),
                mse: Some(r.mse),
                accuracy: None,
                seed,
            });
        }
    }
    Ok(out)
}

pub const MIN_PER_ARRANGEMENT: usize = 10;
pub const FOLDS: usize = 5;

/// Five-fold cross-validated accuracy of the few-shot linear head trained
/// on standardised embeddings (standardised with training-fold statistics).
pub fn arrangement_separability(embeds: &[Vec<f64>], labels: &[String], seed: u64) -> Result<f64> {
    if embeds.len() != labels.len() || embeds.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} embeddings for {} labels", embeds.len(), labels.len())));
    }
    let mut classes: Vec<&String> = labels.iter().collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InvalidInput("need at least two arrangement classes".into()));
    }
    for c in &classes {
        let n = labels.iter().filter(|l| l == c).count();
        if n < MIN_PER_ARRANGEMENT {
            return Err(Error::InvalidInput(format!("arrangement '{c}' has {n} examples, need {MIN_PER_ARRANGEMENT}")));
        }
    }
    let y: Vec<usize> = labels.iter().map(|l| classes.binary_search(&l).expect("label present")).collect();
    let d = embeds[0].len();
    let mut order: Vec<usize> = (0..embeds.len()).collect();
    order.shuffle(&mut stream(seed, "probe/folds", 0));
    let mut correct = 0;
    for f in 0..FOLDS {
        let test: Vec<usize> = order.iter().enumerate().filter(|(pos, _)| pos % FOLDS == f).map(|(_, &i)| i).collect();
        let train: Vec<usize> = order.iter().enumerate().filter(|(pos, _)| pos % FOLDS != f).map(|(_, &i)| i).collect();
        let mean: Vec<f64> = (0..d).map(|j| train.iter().map(|&i| embeds[i][j]).sum::<f64>() / train.len() as f64).collect();
        let std: Vec<f64> = (0..d)
            .map(|j| {
                let v = train.iter().map(|&i| (embeds[i][j] - mean[j]).powi(2)).sum::<f64>() / train.len() as f64;
                if v > 0.0 { v.sqrt() } else { 1.0 }
            })
            .collect();
        let norm = |i: usize| (0..d).map(|j| (embeds[i][j] - mean[j]) / std[j]).collect::<Vec<f64>>();
        let support: Vec<(Vec<f64>, usize)> = train.iter().map(|&i| (norm(i), y[i])).collect();
        let head = fit_linear(&support, classes.len(), crate::fewshot::DEFAULT_EPOCHS, crate::fewshot::DEFAULT_LR)?;
        for &i in &test {
            if head.predict(&norm(i))? == y[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / embeds.len() as f64)
}

/// `a − b + c`.
pub fn concept_arithmetic(a: &[f64], b: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.len() != c.len() {
        return Err(Error::ShapeMismatch(format!("latent sizes {}, {}, {}", a.len(), b.len(), c.len())));
    }
    Ok(a.iter().zip(b).zip(c).map(|((x, y), z)| x - y + z).collect())
}

/// Bilinear grid over corners `[top-left, top-right, bottom-left,
/// bottom-right]`; `grid[i][j]` sits at `u = j / (steps − 1)`,
/// `v = i / (steps − 1)`.
pub fn interpolate_grid(corners: &[Vec<f64>; 4], steps: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    if steps < 2 {
        return Err(Error::InvalidInput("interpolation needs at least 2 steps".into()));
    }
    let d = corners[0].len();
    if corners.iter().any(|c| c.len() != d) {
        return Err(Error::ShapeMismatch("corner latents differ in size".into()));
    }
    let last = (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| {
            let v = i as f64 / last;
            (0..steps)
                .map(|j| {
                    let u = j as f64 / last;
                    let w = [(1.0 - u) * (1.0 - v), u * (1.0 - v), (1.0 - u) * v, u * v];
                    (0..d).map(|k| (0..4).map(|c| w[c] * corners[c][k]).sum()).collect()
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal axes, largest variance first.
    pub components: Vec<Vec<f64>>,
    pub explained_ratio: Vec<f64>,
    /// One row per input.
    pub coords: Vec<Vec<f64>>,
}

/// Projection onto the top `dims` principal axes of the centred data. Each
/// axis is signed so that its largest-magnitude loading is positive.
pub fn pca_project(embeds: &[Vec<f64>], dims: usize) -> Result<Pca> {
    let n = embeds.len();
    if dims == 0 || n < dims + 1 {
        return Err(Error::InvalidInput(format!("PCA to {dims} dimensions needs at least {} examples, have {n}", dims + 1)));
    }
    let d = embeds[0].len();
    if embeds.iter().any(|e| e.len() != d) || d < dims {
        return Err(Error::ShapeMismatch(format!("cannot project {d}-dimensional embeddings to {dims}")));
    }
    let mean: Vec<f64> = (0..d).map(|j| embeds.iter().map(|e| e[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| embeds[i][j] - mean[j]);
    let svd = x.clone().svd(false, true);
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let s_max = svd.singular_values[order[0]];
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * s_max.max(f64::MIN_POSITIVE)).count();
    if s_max == 0.0 || rank < dims {
        return Err(Error::InvalidInput(format!("data has rank {rank}, below the requested {dims} dimensions")));
    }
    let mut components = Vec::with_capacity(dims);
    let mut explained_ratio = Vec::with_capacity(dims);
    for &k in order.iter().take(dims) {
        let mut axis: Vec<f64> = vt.row(k).iter().copied().collect();
        let lead = axis.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(axis);
        explained_ratio.push(svd.singular_values[k].powi(2) / total);
    }
    let coords = (0..n).map(|i| components.iter().map(|c| (0..d).map(|j| x[(i, j)] * c[j]).sum()).collect()).collect();
    Ok(Pca { mean, components, explained_ratio, coords })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { steps: 300, batch_size: 32, lr: 3e-3, holdout_frac: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recognizability {
    pub classes: Vec<String>,
    /// Accuracy on held-out ground-truth renders.
    pub heldout_acc: f64,
    /// Accuracy on generated renders.
    pub gen_acc: f64,
}

/// A labelled render with a unique id.
#[derive(Debug, Clone, PartialEq)]
pub struct Render {
    pub id: String,
    pub class: String,
    pub image: PixelImage,
}

/// Small conv classifier over renders.
pub struct Classifier {
    pub cfg: ModelConfig,
    pub classes: Vec<String>,
    pub params: ParamStore,
}

impl Classifier {
    pub fn new(h: usize, w: usize, classes: Vec<String>, seed: u64) -> Result<Self> {
        let cfg = ModelConfig { h, w, latent_dim: 1, components: 1, t_max: 1, hidden: 1, filters: vec![8, 16, 16, 16] };
        cfg.validate()?;
        let mut params = ParamStore::new();
        crate::net::model::init_encoder(&mut params, &cfg, seed);
        let (f, c) = (cfg.feature_len(), classes.len());
        let mut rng = stream(seed, "init", params.len() as u64);
        let w0 = (0..f * c).map(|_| normal(&mut rng) / (f as f64).sqrt()).collect();
        params.add("cls.w", Tensor::matrix(f, c, w0), true);
        params.add("cls.b", Tensor::zeros(vec![c]), true);
        Ok(Classifier { cfg, classes, params })
    }

    fn logits(&self, tape: &mut Tape, images: &[PixelImage], train: bool) -> Result<(crate::net::tape::Var, crate::net::params::Bound)> {
        let p = self.params.bind(tape, train);
        let x = tape.constant(images_tensor(images, &self.cfg)?);
        let mut h = x;
        for i in 0..self.cfg.filters.len() {
            h = tape.conv2d(h, p.var(&format!("enc.conv{i}.w")), p.var(&format!("enc.conv{i}.b")), 1);
            h = tape.channel_affine(h, p.var(&format!("enc.norm{i}.scale")), p.var(&format!("enc.norm{i}.shift")));
            h = tape.relu(h);
            h = tape.max_pool2(h);
        }
        let flat = tape.reshape(h, vec![images.len(), self.cfg.feature_len()]);
        let o = tape.matmul(flat, p.var("cls.w"));
        Ok((tape.add_row(o, p.var("cls.b")), p))
    }

    pub fn train(&mut self, data: &[(PixelImage, usize)], cfg: &ClassifierConfig) -> Result<()> {
        for step in 0..cfg.steps {
            let idx = crate::net::train::batch_indices(cfg.seed, step as u64, data.len(), cfg.batch_size);
            let images: Vec<PixelImage> = idx.iter().map(|&i| data[i].0.clone()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| data[i].1).collect();
            let mut tape = Tape::new();
            let (logits, p) = self.logits(&mut tape, &images, true)?;
            let lsm = tape.log_softmax(logits);
            let picked = tape.gather_cols(lsm, &labels);
            let loss = tape.mean(picked);
            let loss = tape.scale(loss, -1.0);
            let g = tape.backward(loss)?;
            let grads: Vec<Option<Vec<f64>>> = p.vars.iter().map(|&v| g.get(v).map(<[f64]>::to_vec)).collect();
            apply_adam(&mut self.params, &grads, cfg.lr);
        }
        Ok(())
    }

    /// Predicted class indices; ties go to the lowest index.
    pub fn predict(&self, images: &[PixelImage]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let mut tape = Tape::new();
            let (logits, _) = self.logits(&mut tape, chunk, false)?;
            let c = self.classes.len();
            for row in tape.value(logits).data.chunks(c) {
                let mut best = 0;
                for (k, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = k;
                    }
                }
                out.push(best);
            }
        }
        Ok(out)
    }

    pub fn accuracy(&self, renders: &[Render]) -> Result<f64> {
        if renders.is_empty() {
            return Err(Error::InvalidInput("no renders to classify".into()));
        }
        let labels = renders
            .iter()
            .map(|r| self.classes.iter().position(|c| *c == r.class).ok_or_else(|| Error::UnknownClass(r.class.clone())))
            .collect::<Result<Vec<_>>>()?;
        let images: Vec<PixelImage> = renders.iter().map(|r| r.image.clone()).collect();
        let pred = self.predict(&images)?;
        Ok(pred.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / renders.len() as f64)
    }
}

/// Trains on ground-truth renders (minus a seeded held-out fraction) and
/// reports accuracy on the held-out part and on generated renders.
pub fn recognizability(train_renders: &[Render], gen_renders: &[Render], cfg: &ClassifierConfig) -> Result<(Recognizability, Classifier)> {
    let first = train_renders.first().ok_or_else(|| Error::InvalidInput("no training renders".into()))?;
    let mut classes: Vec<String> = train_renders.iter().map(|r| r.class.clone()).collect();
    classes.sort();
    classes.dedup();
    let mut gen_classes: Vec<String> = gen_renders.iter().map(|r| r.class.clone()).collect();
    gen_classes.sort();
    gen_classes.dedup();
    if let Some(extra) = gen_classes.iter().find(|c| !classes.contains(c)) {
        return Err(Error::InvalidInput(format!(
            "class count mismatch: generated class '{extra}' is not among the {} training classes",
            classes.len()
        )));
    }
    let mut ids: Vec<&str> = train_renders.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("training render ids must be unique".into()));
    }
    let mut order: Vec<usize> = (0..train_renders.len()).collect();
    order.shuffle(&mut stream(cfg.seed, "probe/recog-split", 0));
    let n_hold = ((train_renders.len() as f64) * cfg.holdout_frac).round() as usize;
    let (hold, fit) = order.split_at(n_hold.min(train_renders.len() - 1));
    let mut clf = Classifier::new(first.image.h, first.image.w, classes.clone(), cfg.seed)?;
    let data: Vec<(PixelImage, usize)> =
        fit.iter().map(|&i| (train_renders[i].image.clone(), classes.binary_search(&train_renders[i].class).expect("known"))).collect();
    clf.train(&data, cfg)?;
    let held: Vec<Render> = hold.iter().map(|&i| train_renders[i].clone()).collect();
    let heldout_acc = if held.is_empty() { f64::NAN } else { clf.accuracy(&held)? };
    let gen_acc = clf.accuracy(gen_renders)?;
    Ok((Recognizability { classes, heldout_acc, gen_acc }, clf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use rand::Rng as _;

    fn gauss(rng: &mut Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| normal(rng)).collect()).collect()
    }

    #[test]
    fn exact_linear_targets() {
        let mut rng = stream(1, "t", 0);
        let x = gauss(&mut rng, 300, 6);
        let w = [0.5, -1.0, 2.0, 0.0, 0.3, 1.5];
        let y: Vec<f64> = x.iter().map(|e| 0.7 + e.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).collect();
        let fit = linear_readout(&x, &y, 100, 0).unwrap();
        assert!((fit.result.r2 - 1.0).abs() < 1e-9, "{:?}", fit.result);
        assert_eq!(fit.result.n_test, 200);
        let x = gauss(&mut rng, 1200, 6);
        let y: Vec<f64> = x.iter().map(|e| 0.7 + e.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).collect();
        let nl = nonlinear_readout(&x, &y, 1000, 0).unwrap();
        assert!(nl.r2 >= 0.99, "{nl:?}");
    }

    #[test]
    fn noise_targets_do_not_generalise() {
        let mut rng = stream(2, "t", 0);
        let x = gauss(&mut rng, 600, 5);
        let y: Vec<f64> = (0..600).map(|_| normal(&mut rng)).collect();
        let fit = linear_readout(&x, &y, 100, 0).unwrap();
        assert_eq!(fit.result.n_test, 500);
        assert!(fit.result.r2 <= 0.05, "{:?}", fit.result);
    }

    #[test]
    fn constant_targets_are_rejected() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert!(linear_readout(&x, &[4.0; 3], 2, 0).is_err());
    }

    #[test]
    fn quadratic_needs_the_nonlinear_readout() {
        let mut rng = stream(3, "t", 0);
        let x: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let y: Vec<f64> = x.iter().map(|e| e[0] * e[0]).collect();
        let lin = linear_readout(&x, &y, 200, 0).unwrap().result;
        let nl = nonlinear_readout(&x, &y, 200, 0).unwrap();
        assert!(lin.r2 < 0.5, "{lin:?}");
        assert!(nl.r2 >= 0.9, "{nl:?}");
        assert_eq!(nl, nonlinear_readout(&x, &y, 200, 0).unwrap());
    }

    #[test]
    fn separability_of_one_hot_and_shuffled() {
        let labels: Vec<String> = (0..60).map(|i| format!("a{}", i % 3)).collect();
        let one_hot: Vec<Vec<f64>> = (0..60).map(|i| (0..3).map(|c| if i % 3 == c { 1.0 } else { 0.0 }).collect()).collect();
        assert_eq!(arrangement_separability(&one_hot, &labels, 0).unwrap(), 1.0);
        let mut rng = stream(4, "t", 0);
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut rng);
        let noise = gauss(&mut rng, 60, 3);
        let acc = arrangement_separability(&noise, &shuffled, 0).unwrap();
        // chance 1/3, binomial sd over 60 examples
        let sd = (1.0 / 3.0 * 2.0 / 3.0 / 60.0f64).sqrt();
        assert!((acc - 1.0 / 3.0).abs() < 3.0 * sd, "{acc}");
        assert_eq!(acc, arrangement_separability(&noise, &shuffled, 0).unwrap());
        assert!(arrangement_separability(&one_hot[..20], &labels[..20], 0).is_err());
    }

    #[test]
    fn arithmetic_identities() {
        let mut rng = stream(5, "t", 0);
        let v = gauss(&mut rng, 3, 7);
        assert_eq!(concept_arithmetic(&v[0], &v[0], &v[0]).unwrap(), v[0]);
        let a = concept_arithmetic(&v[0], &v[1], &v[2]).unwrap();
        let b = concept_arithmetic(&v[2], &v[1], &v[0]).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(concept_arithmetic(&v[0], &v[1][..3], &v[2]).is_err());
    }

    #[test]
    fn interpolation_identities() {
        let mut rng = stream(6, "t", 0);
        let c = gauss(&mut rng, 4, 5);
        let corners = [c[0].clone(), c[1].clone(), c[2].clone(), c[3].clone()];
        let g = interpolate_grid(&corners, 5).unwrap();
        assert_eq!(g[0][0], c[0]);
        assert_eq!(g[0][4], c[1]);
        assert_eq!(g[4][0], c[2]);
        assert_eq!(g[4][4], c[3]);
        for k in 0..5 {
            let mean = (c[0][k] + c[1][k] + c[2][k] + c[3][k]) / 4.0;
            assert!((g[2][2][k] - mean).abs() < 1e-12);
            let lin = c[0][k] + 0.25 * (c[1][k] - c[0][k]);
            assert!((g[0][1][k] - lin).abs() < 1e-12);
        }
        assert!(interpolate_grid(&corners, 1).is_err());
    }

    #[test]
    fn pca_plane_and_isotropic() {
        let mut rng = stream(7, "t", 0);
        let basis = gauss(&mut rng, 2, 10);
        let plane: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                let (a, b) = (normal(&mut rng), normal(&mut rng));
                (0..10).map(|j| 3.0 + a * basis[0][j] + b * basis[1][j]).collect()
            })
            .collect();
        let p = pca_project(&plane, 2).unwrap();
        assert!((p.explained_ratio.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.explained_ratio[0] >= p.explained_ratio[1]);
        for axis in &p.components {
            let lead = axis.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(lead > 0.0);
        }
        let iso = gauss(&mut rng, 4000, 8);
        let q = pca_project(&iso, 2).unwrap();
        let total: f64 = q.explained_ratio.iter().sum();
        assert!((total - 0.25).abs() < 0.03, "{total}");
        let line: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(pca_project(&line, 2).is_err());
    }

    fn stripes(class: usize, id: usize) -> Render {
        let mut img = PixelImage::zeros(16, 16);
        for i in 0..16 {
            for j in 0..16 {
                let on = match class {
                    0 => i % 4 < 2,
                    1 => j % 4 < 2,
                    _ => (i + j) % 4 < 2,
                };
                if on {
                    img.set(i, j, 0.6 + 0.02 * (id % 10) as f64);
                }
            }
        }
        Render { id: format!("{class}-{id}"), class: format!("k{class}"), image: img }
    }

    #[test]
    fn recognizability_of_copies_and_blanks() {
        let train: Vec<Render> = (0..60).map(|i| stripes(i % 3, i)).collect();
        let cfg = ClassifierConfig { steps: 60, batch_size: 16, ..ClassifierConfig::default() };
        let (r, clf) = recognizability(&train, &train[..3], &cfg).unwrap();
        assert!(r.heldout_acc > 0.9, "{r:?}");
        // generated = the held-out ground truth itself
        let mut order: Vec<usize> = (0..60).collect();
        order.shuffle(&mut stream(cfg.seed, "probe/recog-split", 0));
        let held: Vec<Render> = order[..12].iter().map(|&i| train[i].clone()).collect();
        assert_eq!(clf.accuracy(&held).unwrap(), r.heldout_acc);
        let blanks: Vec<Render> = (0..30).map(|i| Render { id: format!("b{i}"), class: format!("k{}", i % 3), image: PixelImage::zeros(16, 16) }).collect();
        let blank_acc = clf.accuracy(&blanks).unwrap();
        assert!((blank_acc - 1.0 / 3.0).abs() < 1e-12, "{blank_acc}");
        let unknown = vec![Render { id: "u".into(), class: "zz".into(), image: PixelImage::zeros(16, 16) }];
        assert!(recognizability(&train, &unknown, &cfg).is_err());
    }
}
