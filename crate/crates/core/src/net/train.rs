//! Joint pen/stroke/pixel training of the sketch model.

use std::io::Write;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PixelImage;
use crate::mdn::{alpha_at, sample_categorical, AlphaSchedule};
use crate::net::model::{encoder_forward, images_tensor, split_head, stroke_loss, pen_loss, teacher_inputs, ModelConfig, SketchModel, Targets};
use crate::net::optim::{apply_adam, clip_grads, decayed_lr};
use crate::net::params::Bound;
use crate::net::tape::{Tape, Tensor, Var};
use crate::raster::{pixel_loss_grad_against, scale_params, target_image, PixelLossSpec};
use crate::rng::{normal, stream, Rng};
use crate::stroke::{to_absolute, Sketch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_interval: u64,
    pub clip: f64,
    pub alpha: AlphaSchedule,
    pub seed: u64,
    pub blur_sigma: f64,
    pub full_bce: bool,
    pub kl_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            batch_size: 32,
            steps: 10_000,
            lr: 1e-3,
            lr_decay: 0.85,
            lr_decay_interval: 15_000,
            clip: 1.0,
            alpha: AlphaSchedule::default(),
            seed: 0,
            blur_sigma: 2.0,
            full_bce: false,
            kl_weight: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let ok = self.batch_size > 0
            && self.lr > 0.0
            && self.lr_decay > 0.0
            && self.lr_decay_interval > 0
            && self.clip > 0.0
            && self.blur_sigma >= 0.0
            && self.kl_weight >= 0.0
            && self.alpha.interval > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("training hyperparameters must be positive".into()))
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        decayed_lr(self.lr, self.lr_decay, self.lr_decay_interval, step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub alpha: f64,
    pub l_pen: f64,
    pub l_stroke: f64,
    pub l_pixel: f64,
    pub l_total: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

pub const CSV_HEADER: &str = "step,alpha,l_pen,l_stroke,l_pixel,l_total,grad_norm,lr";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, self.alpha, self.l_pen, self.l_stroke, self.l_pixel, self.l_total, self.grad_norm, self.lr
        )
    }
}

/// Truncates to `t_max` and pads with end tokens.
pub fn prepare_target(s: &Sketch, t_max: usize) -> Sketch {
    s.truncated(t_max).padded(t_max).expect("truncated sketch fits")
}

pub struct LossVars {
    pub l_pen: Var,
    pub l_stroke: Var,
    pub l_pixel: Option<Var>,
    pub kl: Var,
}

/// Records the full forward pass for a batch of prepared targets.
///
/// `eps` is the `[B, D]` latent noise. When `pixel` is given, a prediction
/// is sampled from the mixture and the pixel loss enters the tape through
/// an external node carrying its analytic gradient.
pub fn sketch_losses(
    model: &SketchModel,
    tape: &mut Tape,
    p: &Bound,
    images: &[PixelImage],
    targets: &[Sketch],
    eps: Tensor,
    pixel: Option<(&mut Rng, PixelLossSpec)>,
) -> Result<LossVars> {
    let cfg = &model.cfg;
    let (b, m, t_max) = (targets.len(), cfg.components, cfg.t_max);
    let x = tape.constant(images_tensor(images, cfg)?);
    let (mu, ls) = encoder_forward(tape, p, cfg, x);
    let sigma = tape.exp(ls);
    let e = tape.constant(eps);
    let noise = tape.mul(sigma, e);
    let z = tape.add(mu, noise);
    let raw = model.decoder_forward(tape, p, z, &teacher_inputs(targets, t_max));
    let hv = split_head(tape, raw, m);
    let tg = Targets::new(targets, m, t_max);
    let l_stroke = stroke_loss(tape, &hv, &tg);
    let l_pen = pen_loss(tape, &hv, &tg);

    // KL(N(μ, σ²) ‖ N(0, I)) averaged over the batch
    let mu2 = tape.mul(mu, mu);
    let s2 = tape.mul(sigma, sigma);
    let kl = tape.add(mu2, s2);
    let two_ls = tape.scale(ls, -2.0);
    let kl = tape.add(kl, two_ls);
    let kl = tape.add_scalar(kl, -1.0);
    let kl = tape.sum(kl);
    let kl = tape.scale(kl, 0.5 / b as f64);

    let l_pixel = match pixel {
        None => None,
        Some((rng, spec)) => Some(pixel_term(tape, &hv, targets, rng, spec)?),
    };
    Ok(LossVars { l_pen, l_stroke, l_pixel, kl })
}

fn pixel_term(tape: &mut Tape, hv: &crate::net::model::HeadVars, targets: &[Sketch], rng: &mut Rng, spec: PixelLossSpec) -> Result<Var> {
    let b = targets.len();
    let n = tape.value(hv.mu_x).dims2().0;
    let t_max = n / b;
    let pi: Vec<f64> = tape.value(hv.log_pi).data.iter().map(|v| v.exp()).collect();
    let m = pi.len() / n;
    let mut comp = Vec::with_capacity(n);
    let (mut e1, mut e2) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for row in 0..n {
        comp.push(sample_categorical(&pi[row * m..(row + 1) * m], rng));
        e1.push(normal(rng));
        e2.push(normal(rng));
    }
    let mx = tape.gather_cols(hv.mu_x, &comp);
    let my = tape.gather_cols(hv.mu_y, &comp);
    let lsx = tape.gather_cols(hv.log_sigma_x, &comp);
    let sx = tape.exp(lsx);
    let lsy = tape.gather_cols(hv.log_sigma_y, &comp);
    let sy = tape.exp(lsy);
    let r = tape.gather_cols(hv.rho, &comp);
    let e1v = tape.constant(Tensor::matrix(n, 1, e1));
    let e2v = tape.constant(Tensor::matrix(n, 1, e2));
    let dx = tape.mul(sx, e1v);
    let dx = tape.add(mx, dx);
    // dy = μy + σy (ρ ε1 + √(1 − ρ²) ε2)
    let r2 = tape.mul(r, r);
    let r2 = tape.scale(r2, -1.0);
    let omr = tape.add_scalar(r2, 1.0);
    let root = tape.unary(omr, crate::net::tape::Unary::Sqrt);
    let a = tape.mul(r, e1v);
    let c = tape.mul(root, e2v);
    let mix = tape.add(a, c);
    let dy = tape.mul(sy, mix);
    let dy = tape.add(my, dy);

    let pen = tape.value(hv.pen_logits).data.clone();
    let pen_down: Vec<f64> = pen.chunks(3).map(|l| crate::mdn::softmax(l)[0]).collect();
    let (dxv, dyv) = (tape.value(dx).data.clone(), tape.value(dy).data.clone());
    let mut gdx = vec![0.0; n];
    let mut gdy = vec![0.0; n];
    let mut total = 0.0;
    for (k, gt) in targets.iter().enumerate() {
        let rows = (0..t_max).map(|t| t * b + k);
        let offsets: Vec<(f64, f64)> = rows.clone().map(|r| (dxv[r], dyv[r])).collect();
        let pd: Vec<f64> = rows.clone().map(|r| pen_down[r]).collect();
        let ss = scale_params(&to_absolute(&gt.strokes), spec.h, spec.w)?;
        let target = target_image(gt, &ss, spec.h, spec.w, spec.sigma);
        let g = pixel_loss_grad_against(&target, &offsets, &pd, &ss, spec)?;
        total += g.loss;
        for (t, r) in rows.enumerate() {
            gdx[r] = g.d_dx[t] / b as f64;
            gdy[r] = g.d_dy[t] / b as f64;
        }
    }
    Ok(tape.external(total / b as f64, vec![(dx, Tensor::matrix(n, 1, gdx)), (dy, Tensor::matrix(n, 1, gdy))]))
}

/// One optimisation step on a batch of `(image, sketch)` pairs.
pub fn train_step(model: &mut SketchModel, batch: &[(PixelImage, Sketch)], step: u64, cfg: &TrainConfig) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty training batch".into()));
    }
    let mcfg = &model.cfg;
    let images: Vec<PixelImage> = batch.iter().map(|(i, _)| i.clone()).collect();
    let targets: Vec<Sketch> = batch.iter().map(|(_, s)| prepare_target(s, mcfg.t_max)).collect();
    let mut rng = stream(cfg.seed, "train", step);
    let d = mcfg.latent_dim;
    let eps = Tensor::matrix(batch.len(), d, (0..batch.len() * d).map(|_| normal(&mut rng)).collect());
    let spec = PixelLossSpec { h: mcfg.h, w: mcfg.w, sigma: cfg.blur_sigma, full_bce: cfg.full_bce };

    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, true);
    let lv = sketch_losses(model, &mut tape, &p, &images, &targets, eps, Some((&mut rng, spec)))?;
    let alpha = alpha_at(step, &cfg.alpha);
    let l_pixel = lv.l_pixel.expect("pixel term requested");
    let ws = tape.scale(lv.l_stroke, 1.0 - alpha);
    let wp = tape.scale(l_pixel, alpha);
    let total = tape.add(lv.l_pen, ws);
    let total = tape.add(total, wp);
    let wk = tape.scale(lv.kl, cfg.kl_weight);
    let total = tape.add(total, wk);

    let value = |v: Var| tape.value(v).item();
    let lr = cfg.lr_at(step);
    let mut metrics = StepMetrics {
        step,
        alpha,
        l_pen: value(lv.l_pen),
        l_stroke: value(lv.l_stroke),
        l_pixel: value(l_pixel),
        l_total: value(total),
        grad_norm: 0.0,
        lr,
    };
    if ![metrics.l_pen, metrics.l_stroke, metrics.l_pixel, metrics.l_total].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("loss at step {step}: {metrics:?}")));
    }

    let grads = tape.backward(total)?;
    let mut per_param: Vec<Option<Vec<f64>>> = p.vars.iter().map(|&v| grads.get(v).map(<[f64]>::to_vec)).collect();
    let mut sq = 0.0;
    for g in per_param.iter().flatten() {
        sq += g.iter().map(|x| x * x).sum::<f64>();
    }
    metrics.grad_norm = sq.sqrt();
    if !metrics.grad_norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient at step {step}: {metrics:?}")));
    }
    for g in per_param.iter_mut().flatten() {
        clip_grads(g, cfg.clip);
    }
    apply_adam(&mut model.params, &per_param, lr);
    Ok(metrics)
}

/// Seed-determined batch of example indices for a step.
pub fn batch_indices(seed: u64, step: u64, n: usize, batch_size: usize) -> Vec<usize> {
    let mut rng = stream(seed, "batch", step);
    if batch_size <= n {
        index::sample(&mut rng, n, batch_size).into_vec()
    } else {
        use rand::Rng as _;
        (0..batch_size).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Runs steps `start..cfg.steps`, writing one CSV row per step when a log
/// is given.
pub fn train(
    model: &mut SketchModel,
    data: &[(PixelImage, Sketch)],
    cfg: &TrainConfig,
    start: u64,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<StepMetrics>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training corpus".into()));
    }
    if let Some(w) = log.as_mut() {
        writeln!(w, "{CSV_HEADER}")?;
    }
    let mut out = Vec::new();
    for step in start..cfg.steps {
        let batch: Vec<(PixelImage, Sketch)> = batch_indices(cfg.seed, step, data.len(), cfg.batch_size).into_iter().map(|i| data[i].clone()).collect();
        let m = train_step(model, &batch, step, cfg)?;
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", m.csv_row())?;
        }
        out.push(m);
    }
    Ok(out)
}
