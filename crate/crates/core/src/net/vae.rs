//! Pixel-reconstruction VAE baseline sharing the sketch model's encoder.

use std::io::Write;

use crate::error::{Error, Result};
use crate::image::PixelImage;
use crate::net::model::{encoder_forward, images_tensor, init_encoder, reparameterize, LatentCode, ModelConfig};
use crate::net::optim::{apply_adam, clip_grads};
use crate::net::params::ParamStore;
use crate::net::tape::{Tape, Tensor, Var};
use crate::net::train::{batch_indices, StepMetrics, TrainConfig, CSV_HEADER};
use crate::rng::{normal, stream, Rng};

pub struct VaeModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl VaeModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        init_encoder(&mut store, &cfg, seed);
        let (d, h, px) = (cfg.latent_dim, cfg.hidden, cfg.h * cfg.w);
        let init = |store: &mut ParamStore, name: &str, shape: Vec<usize>, fan_in: usize| {
            let mut rng = stream(seed, "init", store.len() as u64);
            let n: usize = shape.iter().product();
            let std = (1.0 / fan_in as f64).sqrt();
            store.add(name, Tensor::new(shape, (0..n).map(|_| std * normal(&mut rng)).collect()), true);
        };
        init(&mut store, "vae.hidden.w", vec![d, h], d);
        store.add("vae.hidden.b", Tensor::zeros(vec![h]), true);
        init(&mut store, "vae.out.w", vec![h, px], h);
        store.add("vae.out.b", Tensor::zeros(vec![px]), true);
        Ok(VaeModel { cfg, params: store })
    }

    fn decoder(&self, tape: &mut Tape, p: &crate::net::params::Bound, z: Var) -> Var {
        let h = tape.matmul(z, p.var("vae.hidden.w"));
        let h = tape.add_row(h, p.var("vae.hidden.b"));
        let h = tape.relu(h);
        let o = tape.matmul(h, p.var("vae.out.w"));
        tape.add_row(o, p.var("vae.out.b"))
    }

    pub fn encode(&self, images: &[PixelImage], rng: &mut Rng, deterministic: bool) -> Result<Vec<LatentCode>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(images_tensor(images, &self.cfg)?);
        let (mu, ls) = encoder_forward(&mut tape, &p, &self.cfg, x);
        let d = self.cfg.latent_dim;
        let (mu, ls) = (tape.value(mu).data.clone(), tape.value(ls).data.clone());
        Ok(mu
            .chunks(d)
            .zip(ls.chunks(d))
            .map(|(m, l)| {
                let sigma: Vec<f64> = l.iter().map(|v| v.exp()).collect();
                let z = if deterministic { m.to_vec() } else { m.iter().zip(&sigma).map(|(a, s)| a + s * normal(rng)).collect() };
                LatentCode { mu: m.to_vec(), sigma, z }
            })
            .collect())
    }

    /// Pixel probabilities decoded from a latent.
    pub fn reconstruct(&self, z: &[f64]) -> Result<PixelImage> {
        if z.len() != self.cfg.latent_dim {
            return Err(Error::ShapeMismatch(format!("latent has {} values, model expects {}", z.len(), self.cfg.latent_dim)));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let zv = tape.constant(Tensor::matrix(1, z.len(), z.to_vec()));
        let logits = self.decoder(&mut tape, &p, zv);
        let probs = tape.sigmoid(logits);
        PixelImage::from_vec(self.cfg.h, self.cfg.w, tape.value(probs).data.clone())
    }
}

/// One step of per-image summed BCE plus KL, both averaged over the batch.
///
/// Reported metrics reuse the training log columns: the reconstruction
/// term is `l_pixel`, `l_pen` and `l_stroke` are zero, and `l_total`
/// includes the KL term.
pub fn vae_step(model: &mut VaeModel, images: &[PixelImage], step: u64, cfg: &TrainConfig) -> Result<StepMetrics> {
    if images.is_empty() {
        return Err(Error::InvalidInput("empty training batch".into()));
    }
    let b = images.len();
    let d = model.cfg.latent_dim;
    let mut rng = stream(cfg.seed, "vae", step);
    let eps = Tensor::matrix(b, d, (0..b * d).map(|_| normal(&mut rng)).collect());
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, true);
    let x = images_tensor(images, &model.cfg)?;
    let target = Tensor::matrix(b, model.cfg.h * model.cfg.w, x.data.clone());
    let xv = tape.constant(x);
    let (mu, ls) = encoder_forward(&mut tape, &p, &model.cfg, xv);
    let z = reparameterize(&mut tape, mu, ls, eps);
    let logits = model.decoder(&mut tape, &p, z);
    // BCE with logits: softplus(x) − t·x
    let sp = tape.unary(logits, crate::net::tape::Unary::Softplus);
    let t = tape.constant(target);
    let tx = tape.mul(t, logits);
    let bce = tape.sub(sp, tx);
    let bce = tape.sum(bce);
    let recon = tape.scale(bce, 1.0 / b as f64);
    let sigma = tape.exp(ls);
    let mu2 = tape.mul(mu, mu);
    let s2 = tape.mul(sigma, sigma);
    let kl = tape.add(mu2, s2);
    let m2 = tape.scale(ls, -2.0);
    let kl = tape.add(kl, m2);
    let kl = tape.add_scalar(kl, -1.0);
    let kl = tape.sum(kl);
    let kl = tape.scale(kl, 0.5 / b as f64);
    let total = tape.add(recon, kl);

    let lr = cfg.lr_at(step);
    let l_total = tape.value(total).item();
    let l_pixel = tape.value(recon).item();
    if !l_total.is_finite() {
        return Err(Error::NonFinite(format!("VAE loss at step {step}: recon {l_pixel}, total {l_total}")));
    }
    let grads = tape.backward(total)?;
    let mut per: Vec<Option<Vec<f64>>> = p.vars.iter().map(|&v| grads.get(v).map(<[f64]>::to_vec)).collect();
    let grad_norm = per.iter().flatten().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite(format!("VAE gradient at step {step}")));
    }
    for g in per.iter_mut().flatten() {
        clip_grads(g, cfg.clip);
    }
    apply_adam(&mut model.params, &per, lr);
    Ok(StepMetrics { step, alpha: 0.0, l_pen: 0.0, l_stroke: 0.0, l_pixel, l_total, grad_norm, lr })
}

pub fn train_vae(
    model: &mut VaeModel,
    images: &[PixelImage],
    cfg: &TrainConfig,
    start: u64,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<StepMetrics>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidInput("empty training corpus".into()));
    }
    if let Some(w) = log.as_mut() {
        writeln!(w, "{CSV_HEADER}")?;
    }
    let mut out = Vec::new();
    for step in start..cfg.steps {
        let batch: Vec<PixelImage> = batch_indices(cfg.seed, step, images.len(), cfg.batch_size).into_iter().map(|i| images[i].clone()).collect();
        let m = vae_step(model, &batch, step, cfg)?;
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", m.csv_row())?;
        }
        out.push(m);
    }
    Ok(out)
}
