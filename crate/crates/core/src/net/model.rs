//! Conv4-style encoder, LSTM decoder with mixture-density head, and the
//! stroke/pen losses recorded on the tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PixelImage;
use crate::mdn::{self, mdn_split, raw_width, MdnParams};
use crate::net::params::{Bound, ParamStore};
use crate::net::tape::{matmul_acc, Tape, Tensor, Var};
use crate::rng::{normal, stream, Rng};
use crate::stroke::{PenState, Sketch, Stroke5, START_TOKEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub h: usize,
    pub w: usize,
    pub latent_dim: usize,
    pub components: usize,
    pub t_max: usize,
    pub hidden: usize,
    pub filters: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { h: 28, w: 28, latent_dim: 32, components: 5, t_max: 32, hidden: 128, filters: vec![16, 32, 32, 64] }
    }
}

impl ModelConfig {
    /// Desk-scale dimensions: small enough to train 3k steps on one core in minutes.
    pub fn toy() -> ModelConfig {
        ModelConfig { h: 28, w: 28, latent_dim: 16, components: 3, t_max: 32, hidden: 64, filters: vec![8, 16, 16, 16] }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.h, self.w, self.latent_dim, self.components, self.t_max, self.hidden];
        if positive.contains(&0) || self.filters.is_empty() || self.filters.contains(&0) {
            return Err(Error::InvalidInput("model dimensions must be positive".into()));
        }
        let (fh, fw) = self.feature_hw();
        if fh == 0 || fw == 0 {
            return Err(Error::InvalidInput(format!(
                "{}x{} canvas is too small for {} pooling stages",
                self.h,
                self.w,
                self.filters.len()
            )));
        }
        Ok(())
    }

    /// Spatial size after the conv stack.
    pub fn feature_hw(&self) -> (usize, usize) {
        self.filters.iter().fold((self.h, self.w), |(h, w), _| (h / 2, w / 2))
    }

    pub fn feature_len(&self) -> usize {
        let (h, w) = self.feature_hw();
        h * w * self.filters.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub z: Vec<f64>,
}

/// Registers the encoder tensors under `enc.*`.
pub fn init_encoder(store: &mut ParamStore, cfg: &ModelConfig, seed: u64) {
    let mut c_in = 1;
    for (i, &f) in cfg.filters.iter().enumerate() {
        let fan_in = c_in * 9;
        store.add(&format!("enc.conv{i}.w"), gaussian(vec![f, c_in, 3, 3], (2.0 / fan_in as f64).sqrt(), seed, store.len()), true);
        store.add(&format!("enc.conv{i}.b"), Tensor::zeros(vec![f]), true);
        store.add(&format!("enc.norm{i}.scale"), Tensor::new(vec![f], vec![1.0; f]), false);
        store.add(&format!("enc.norm{i}.shift"), Tensor::zeros(vec![f]), false);
        c_in = f;
    }
    let (fl, d) = (cfg.feature_len(), cfg.latent_dim);
    let std = (1.0 / fl as f64).sqrt();
    store.add("enc.mu.w", gaussian(vec![fl, d], std, seed, store.len()), true);
    store.add("enc.mu.b", Tensor::zeros(vec![d]), true);
    store.add("enc.logsigma.w", gaussian(vec![fl, d], 0.1 * std, seed, store.len()), true);
    store.add("enc.logsigma.b", Tensor::new(vec![d], vec![-2.0; d]), true);
}

fn gaussian(shape: Vec<usize>, std: f64, seed: u64, idx: usize) -> Tensor {
    let mut rng = stream(seed, "init", idx as u64);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| std * normal(&mut rng)).collect())
}

pub fn images_tensor(images: &[PixelImage], cfg: &ModelConfig) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::InvalidInput("empty image batch".into()));
    }
    let mut data = Vec::with_capacity(images.len() * cfg.h * cfg.w);
    for img in images {
        if (img.h, img.w) != (cfg.h, cfg.w) {
            return Err(Error::ShapeMismatch(format!("image is {}x{}, model expects {}x{}", img.h, img.w, cfg.h, cfg.w)));
        }
        data.extend_from_slice(&img.data);
    }
    Ok(Tensor::new(vec![images.len(), 1, cfg.h, cfg.w], data))
}

/// Conv stack and latent heads; returns `(μ, log σ)`, each `[B, D]`.
pub fn encoder_forward(tape: &mut Tape, p: &Bound, cfg: &ModelConfig, images: Var) -> (Var, Var) {
    let mut x = images;
    for i in 0..cfg.filters.len() {
        x = tape.conv2d(x, p.var(&format!("enc.conv{i}.w")), p.var(&format!("enc.conv{i}.b")), 1);
        x = tape.channel_affine(x, p.var(&format!("enc.norm{i}.scale")), p.var(&format!("enc.norm{i}.shift")));
        x = tape.relu(x);
        x = tape.max_pool2(x);
    }
    let b = tape.value(x).shape[0];
    let flat = tape.reshape(x, vec![b, cfg.feature_len()]);
    let mu = tape.matmul(flat, p.var("enc.mu.w"));
    let mu = tape.add_row(mu, p.var("enc.mu.b"));
    let ls = tape.matmul(flat, p.var("enc.logsigma.w"));
    let ls = tape.add_row(ls, p.var("enc.logsigma.b"));
    (mu, ls)
}

/// `z = μ + σ ⊙ ε` with `ε` held as a constant.
pub fn reparameterize(tape: &mut Tape, mu: Var, log_sigma: Var, eps: Tensor) -> Var {
    let sigma = tape.exp(log_sigma);
    let e = tape.constant(eps);
    let noise = tape.mul(sigma, e);
    tape.add(mu, noise)
}

/// Decoder inputs for teacher forcing: `START, s_0, …, s_{T−2}`, one
/// `[B, 5]` tensor per step.
pub fn teacher_inputs(targets: &[Sketch], t_max: usize) -> Vec<Tensor> {
    (0..t_max)
        .map(|t| {
            let data = targets
                .iter()
                .flat_map(|s| <[f64; 5]>::from(if t == 0 { START_TOKEN } else { s.strokes[t - 1] }))
                .collect();
            Tensor::matrix(targets.len(), 5, data)
        })
        .collect()
}

pub struct SketchModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

/// Step-major loss targets for a padded batch.
pub struct Targets {
    pub dx: Tensor,
    pub dy: Tensor,
    pub pen: Tensor,
    pub mask: Tensor,
}

impl Targets {
    /// `targets` must already be padded to `t_max`. Rows are ordered
    /// `t · B + b`.
    pub fn new(targets: &[Sketch], m: usize, t_max: usize) -> Targets {
        let b = targets.len();
        let n = t_max * b;
        let (mut dx, mut dy, mut pen, mut mask) = (Vec::with_capacity(n * m), Vec::with_capacity(n * m), Vec::with_capacity(n * 3), Vec::with_capacity(n));
        let valid: Vec<usize> = targets.iter().map(|s| s.strokes.iter().position(Stroke5::is_end).map_or(t_max, |i| i + 1)).collect();
        for t in 0..t_max {
            for (k, s) in targets.iter().enumerate() {
                let st = s.strokes[t];
                dx.extend(std::iter::repeat_n(st.dx, m));
                dy.extend(std::iter::repeat_n(st.dy, m));
                pen.extend_from_slice(&st.pen_states());
                mask.push(if t < valid[k] { 1.0 } else { 0.0 });
            }
        }
        Targets {
            dx: Tensor::matrix(n, m, dx),
            dy: Tensor::matrix(n, m, dy),
            pen: Tensor::matrix(n, 3, pen),
            mask: Tensor::matrix(n, 1, mask),
        }
    }
}

/// Views of a raw head output `[N, 6M + 3]` on the tape.
pub struct HeadVars {
    pub log_pi: Var,
    pub mu_x: Var,
    pub mu_y: Var,
    pub log_sigma_x: Var,
    pub log_sigma_y: Var,
    pub rho: Var,
    pub pen_logits: Var,
}

pub fn split_head(tape: &mut Tape, raw: Var, m: usize) -> HeadVars {
    let logits = tape.slice_cols(raw, 0, m);
    HeadVars {
        log_pi: tape.log_softmax(logits),
        mu_x: tape.slice_cols(raw, m, m),
        mu_y: tape.slice_cols(raw, 2 * m, m),
        log_sigma_x: tape.slice_cols(raw, 3 * m, m),
        log_sigma_y: tape.slice_cols(raw, 4 * m, m),
        rho: {
            let r = tape.slice_cols(raw, 5 * m, m);
            tape.tanh(r)
        },
        pen_logits: tape.slice_cols(raw, 6 * m, 3),
    }
}

/// Masked mixture NLL summed over valid steps and divided by `T · B`.
pub fn stroke_loss(tape: &mut Tape, hv: &HeadVars, tg: &Targets) -> Var {
    let n = tg.mask.len() as f64;
    let dx = tape.constant(tg.dx.clone());
    let dy = tape.constant(tg.dy.clone());
    let ex = tape.scale(hv.log_sigma_x, -1.0);
    let inv_sx = tape.exp(ex);
    let ey = tape.scale(hv.log_sigma_y, -1.0);
    let inv_sy = tape.exp(ey);
    let ddx = tape.sub(dx, hv.mu_x);
    let zx = tape.mul(ddx, inv_sx);
    let ddy = tape.sub(dy, hv.mu_y);
    let zy = tape.mul(ddy, inv_sy);
    let r2 = tape.unary(hv.rho, crate::net::tape::Unary::Square);
    let neg_r2 = tape.scale(r2, -1.0);
    let one_minus_r2 = tape.add_scalar(neg_r2, 1.0);
    let zx2 = tape.unary(zx, crate::net::tape::Unary::Square);
    let zy2 = tape.unary(zy, crate::net::tape::Unary::Square);
    let rz = tape.mul(hv.rho, zx);
    let rzz = tape.mul(rz, zy);
    let cross = tape.scale(rzz, -2.0);
    let q = tape.add(zx2, zy2);
    let q = tape.add(q, cross);
    let inv = tape.unary(one_minus_r2, crate::net::tape::Unary::Recip);
    let quad = tape.mul(q, inv);
    let quad = tape.scale(quad, -0.5);
    let log_omr = tape.log(one_minus_r2);
    let half_log_omr = tape.scale(log_omr, 0.5);
    let det = tape.add(hv.log_sigma_x, hv.log_sigma_y);
    let det = tape.add(det, half_log_omr);
    let log_n = tape.sub(quad, det);
    let log_n = tape.add_scalar(log_n, -(2.0 * std::f64::consts::PI).ln());
    let comp = tape.add(hv.log_pi, log_n);
    let lse = tape.log_sum_exp(comp);
    let mask = tape.constant(tg.mask.clone());
    let masked = tape.mul(lse, mask);
    let total = tape.sum(masked);
    tape.scale(total, -1.0 / n)
}

/// Pen cross-entropy averaged over every step.
pub fn pen_loss(tape: &mut Tape, hv: &HeadVars, tg: &Targets) -> Var {
    let n = tg.mask.len() as f64;
    let lsm = tape.log_softmax(hv.pen_logits);
    let t = tape.constant(tg.pen.clone());
    let prod = tape.mul(lsm, t);
    let total = tape.sum(prod);
    tape.scale(total, -1.0 / n)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain-value LSTM cell; gate blocks are `[i | f | g | o]`.
fn lstm_cell(gates: &[f64], h: &mut [f64], c: &mut [f64]) {
    let n = h.len();
    for k in 0..n {
        let i = sigmoid(gates[k]);
        let f = sigmoid(gates[n + k]);
        let g = gates[2 * n + k].tanh();
        let o = sigmoid(gates[3 * n + k]);
        c[k] = f * c[k] + i * g;
        h[k] = o * c[k].tanh();
    }
}

fn row_affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (k, n) = w.dims2();
    let mut out = b.data.clone();
    matmul_acc(x, &w.data, &mut out, 1, k, n);
    out
}

impl SketchModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        init_encoder(&mut store, &cfg, seed);
        let (d, h, w) = (cfg.latent_dim, cfg.hidden, raw_width(cfg.components));
        let fan = (1.0 / (d + 5 + h) as f64).sqrt();
        let init = |store: &mut ParamStore, name: &str, shape: Vec<usize>, std: f64| {
            let idx = store.len();
            store.add(name, gaussian(shape, std, seed, idx), true);
        };
        init(&mut store, "dec.init.w", vec![d, 2 * h], (1.0 / d as f64).sqrt());
        store.add("dec.init.b", Tensor::zeros(vec![2 * h]), true);
        init(&mut store, "dec.wz", vec![d, 4 * h], fan);
        init(&mut store, "dec.wy", vec![5, 4 * h], fan);
        init(&mut store, "dec.wh", vec![h, 4 * h], fan);
        let mut bias = vec![0.0; 4 * h];
        bias[h..2 * h].fill(1.0);
        store.add("dec.b", Tensor::new(vec![4 * h], bias), true);
        init(&mut store, "dec.out.w", vec![h, w], (1.0 / h as f64).sqrt());
        store.add("dec.out.b", Tensor::zeros(vec![w]), true);
        Ok(SketchModel { cfg, params: store })
    }

    /// Initial `(h, c)` from `z`, each `[B, H]`.
    pub fn decoder_state(&self, tape: &mut Tape, p: &Bound, z: Var) -> (Var, Var) {
        let hc = tape.matmul(z, p.var("dec.init.w"));
        let hc = tape.add_row(hc, p.var("dec.init.b"));
        let hc = tape.tanh(hc);
        let h = self.cfg.hidden;
        (tape.slice_cols(hc, 0, h), tape.slice_cols(hc, h, h))
    }

    /// Teacher-forced decoder; returns the raw head output `[T · B, 6M + 3]`.
    pub fn decoder_forward(&self, tape: &mut Tape, p: &Bound, z: Var, inputs: &[Tensor]) -> Var {
        let hd = self.cfg.hidden;
        let (mut h, mut c) = self.decoder_state(tape, p, z);
        let zp = tape.matmul(z, p.var("dec.wz"));
        let zp = tape.add_row(zp, p.var("dec.b"));
        let mut hs = Vec::with_capacity(inputs.len());
        for x in inputs {
            let xv = tape.constant(x.clone());
            let xg = tape.matmul(xv, p.var("dec.wy"));
            let hg = tape.matmul(h, p.var("dec.wh"));
            let gates = tape.add(zp, xg);
            let gates = tape.add(gates, hg);
            let i = tape.slice_cols(gates, 0, hd);
            let i = tape.sigmoid(i);
            let f = tape.slice_cols(gates, hd, hd);
            let f = tape.sigmoid(f);
            let g = tape.slice_cols(gates, 2 * hd, hd);
            let g = tape.tanh(g);
            let o = tape.slice_cols(gates, 3 * hd, hd);
            let o = tape.sigmoid(o);
            let fc = tape.mul(f, c);
            let ig = tape.mul(i, g);
            c = tape.add(fc, ig);
            let tc = tape.tanh(c);
            h = tape.mul(o, tc);
            hs.push(h);
        }
        let stacked = tape.concat_rows(&hs);
        let raw = tape.matmul(stacked, p.var("dec.out.w"));
        tape.add_row(raw, p.var("dec.out.b"))
    }

    /// Latent codes for a batch. With `deterministic`, `z = μ` and the rng
    /// is not touched.
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
                let z = if deterministic {
                    m.to_vec()
                } else {
                    m.iter().zip(&sigma).map(|(mv, s)| mv + s * normal(rng)).collect()
                };
                LatentCode { mu: m.to_vec(), sigma, z }
            })
            .collect())
    }

    /// Per-example mixture parameters for every step of padded targets.
    pub fn decode_teacher_forced(&self, z: &[Vec<f64>], targets: &[Sketch]) -> Result<Vec<Vec<MdnParams>>> {
        let t_max = self.cfg.t_max;
        let d = self.cfg.latent_dim;
        if z.len() != targets.len() || z.is_empty() {
            return Err(Error::ShapeMismatch(format!("{} latents for {} targets", z.len(), targets.len())));
        }
        let padded: Vec<Sketch> = targets.iter().map(|s| s.padded(t_max)).collect::<Result<_>>()?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let zdata: Vec<f64> = z.iter().flat_map(|v| v.iter().copied()).collect();
        if zdata.len() != z.len() * d {
            return Err(Error::ShapeMismatch(format!("latent width must be {d}")));
        }
        let zv = tape.constant(Tensor::matrix(z.len(), d, zdata));
        let raw = self.decoder_forward(&mut tape, &p, zv, &teacher_inputs(&padded, t_max));
        let width = raw_width(self.cfg.components);
        let rows = &tape.value(raw).data;
        let b = z.len();
        (0..b)
            .map(|k| (0..t_max).map(|t| mdn_split(&rows[(t * b + k) * width..(t * b + k + 1) * width], self.cfg.components)).collect())
            .collect()
    }

    /// Autoregressive sampling from `START` until an end token or `t_max`.
    /// The temperature scales variances and sharpens both `π` and the pen
    /// distribution.
    pub fn generate(&self, z: &[f64], rng: &mut Rng, temperature: f64, t_max: usize) -> Result<Sketch> {
        let cfg = &self.cfg;
        if z.len() != cfg.latent_dim {
            return Err(Error::ShapeMismatch(format!("latent has {} values, model expects {}", z.len(), cfg.latent_dim)));
        }
        let p = &self.params;
        let hd = cfg.hidden;
        let hc: Vec<f64> = row_affine(z, p.get("dec.init.w"), p.get("dec.init.b")).iter().map(|v| v.tanh()).collect();
        let (mut h, mut c) = (hc[..hd].to_vec(), hc[hd..].to_vec());
        let zp = row_affine(z, p.get("dec.wz"), p.get("dec.b"));
        let (wy, wh) = (p.get("dec.wy"), p.get("dec.wh"));
        let mut x = START_TOKEN;
        let mut strokes = Vec::new();
        for _ in 0..t_max {
            let mut gates = zp.clone();
            matmul_acc(&<[f64; 5]>::from(x), &wy.data, &mut gates, 1, 5, 4 * hd);
            matmul_acc(&h, &wh.data, &mut gates, 1, hd, 4 * hd);
            lstm_cell(&gates, &mut h, &mut c);
            let raw = row_affine(&h, p.get("dec.out.w"), p.get("dec.out.b"));
            let mp = mdn_split(&raw, cfg.components)?;
            let (dx, dy) = mdn::sample_offsets(&mp, temperature, rng);
            let pen = PenState::from_index(mdn::sample_categorical(&mdn::tempered_pi(&mp.pen, temperature), rng));
            x = Stroke5::new(dx, dy, pen);
            strokes.push(x);
            if pen == PenState::End {
                break;
            }
        }
        Ok(Sketch::new("generated", None, strokes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stroke::validate;

    fn toy() -> ModelConfig {
        ModelConfig { h: 16, w: 16, latent_dim: 8, components: 2, t_max: 6, hidden: 10, filters: vec![4, 4, 4, 4] }
    }

    fn sketch(n: usize, k: f64) -> Sketch {
        let mut strokes: Vec<Stroke5> = (0..n).map(|i| Stroke5::new(k * (i as f64).cos(), k * (i as f64 * 0.7).sin(), PenState::Down)).collect();
        strokes[n - 1] = Stroke5::new(0.3, -0.2, PenState::End);
        Sketch::new("s", None, strokes)
    }

    fn image(seed: u64) -> PixelImage {
        let mut rng = stream(seed, "img", 0);
        PixelImage::from_vec(16, 16, (0..256).map(|_| normal(&mut rng).abs().min(1.0)).collect()).unwrap()
    }

    #[test]
    fn deterministic_encoding_is_the_mean() {
        let m = SketchModel::new(toy(), 1).unwrap();
        let mut rng = stream(0, "t", 0);
        let code = &m.encode(&[image(1)], &mut rng, true).unwrap()[0];
        assert_eq!(code.z, code.mu);
        let mut r1 = stream(5, "t", 0);
        let mut r2 = stream(5, "t", 0);
        assert_eq!(m.encode(&[image(1)], &mut r1, false).unwrap(), m.encode(&[image(1)], &mut r2, false).unwrap());
    }

    #[test]
    fn collapsed_sigma_gives_the_mean() {
        let mut m = SketchModel::new(toy(), 1).unwrap();
        m.params.get_mut("enc.logsigma.b").data.fill(f64::NEG_INFINITY);
        m.params.get_mut("enc.logsigma.w").data.fill(0.0);
        let mut rng = stream(0, "t", 0);
        let code = &m.encode(&[image(2)], &mut rng, false).unwrap()[0];
        assert_eq!(code.z, code.mu);
    }

    #[test]
    fn wrong_image_size_is_rejected() {
        let m = SketchModel::new(toy(), 1).unwrap();
        let mut rng = stream(0, "t", 0);
        assert!(m.encode(&[PixelImage::zeros(28, 28)], &mut rng, true).is_err());
    }

    #[test]
    fn decoder_shapes_and_batch_independence() {
        let m = SketchModel::new(toy(), 3).unwrap();
        let mut rng = stream(0, "t", 0);
        let z: Vec<Vec<f64>> = (0..3).map(|_| (0..8).map(|_| normal(&mut rng)).collect()).collect();
        let s = vec![sketch(4, 1.0), sketch(6, 0.5), sketch(2, 2.0)];
        let out = m.decode_teacher_forced(&z, &s).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|o| o.len() == 6 && o[0].components() == 2));
        let rev = m.decode_teacher_forced(&[z[2].clone(), z[1].clone(), z[0].clone()], &[s[2].clone(), s[1].clone(), s[0].clone()]).unwrap();
        assert_eq!(rev[0], out[2]);
        assert_eq!(rev[2], out[0]);
    }

    #[test]
    fn zero_weights_split_zeros() {
        let mut m = SketchModel::new(toy(), 3).unwrap();
        m.params.get_mut("dec.out.w").data.fill(0.0);
        m.params.get_mut("dec.out.b").data.fill(0.0);
        let out = m.decode_teacher_forced(&[vec![0.3; 8]], &[sketch(3, 1.0)]).unwrap();
        let expected = mdn_split(&[0.0; 15], 2).unwrap();
        assert!(out[0].iter().all(|p| *p == expected));
        assert_eq!(expected.pi, vec![0.5, 0.5]);
        assert_eq!(expected.sigma_x, vec![1.0, 1.0]);
        assert_eq!(expected.rho, vec![0.0, 0.0]);
    }

    #[test]
    fn tape_losses_match_reference_losses() {
        let m = SketchModel::new(toy(), 4).unwrap();
        let mut rng = stream(1, "t", 0);
        let z: Vec<Vec<f64>> = (0..2).map(|_| (0..8).map(|_| normal(&mut rng)).collect()).collect();
        let s: Vec<Sketch> = vec![sketch(4, 1.0).padded(6).unwrap(), sketch(6, 0.5).padded(6).unwrap()];
        let params = m.decode_teacher_forced(&z, &s).unwrap();
        let mut ref_stroke = 0.0;
        let mut ref_pen = 0.0;
        for (p, t) in params.iter().zip(&s) {
            ref_stroke += mdn::stroke_nll(p, &t.strokes).unwrap() / 2.0;
            let probs: Vec<[f64; 3]> = p.iter().map(|q| q.pen).collect();
            let targets: Vec<[f64; 3]> = t.strokes.iter().map(Stroke5::pen_states).collect();
            ref_pen += mdn::pen_loss(&probs, &targets) / 2.0;
        }
        let mut tape = Tape::new();
        let b = m.params.bind(&mut tape, true);
        let zv = tape.constant(Tensor::matrix(2, 8, z.concat()));
        let raw = m.decoder_forward(&mut tape, &b, zv, &teacher_inputs(&s, 6));
        let hv = split_head(&mut tape, raw, 2);
        let tg = Targets::new(&s, 2, 6);
        let ls = stroke_loss(&mut tape, &hv, &tg);
        let lp = pen_loss(&mut tape, &hv, &tg);
        assert!((tape.value(ls).item() - ref_stroke).abs() < 1e-10 * ref_stroke.abs().max(1.0));
        assert!((tape.value(lp).item() - ref_pen).abs() < 1e-10);
    }

    #[test]
    fn generation_is_valid_and_reproducible() {
        let m = SketchModel::new(toy(), 5).unwrap();
        let z = vec![0.1; 8];
        let a = m.generate(&z, &mut stream(9, "g", 0), 1.0, 6).unwrap();
        let b = m.generate(&z, &mut stream(9, "g", 0), 1.0, 6).unwrap();
        assert_eq!(a, b);
        assert!(validate(&a).is_empty());
        assert!(!a.strokes.is_empty() && a.strokes.len() <= 6);
        assert_eq!(m.generate(&z, &mut stream(9, "g", 1), 1.0, 1).unwrap().strokes.len(), 1);
    }

    #[test]
    fn biased_end_head_stops_immediately() {
        let mut m = SketchModel::new(toy(), 5).unwrap();
        let b = &mut m.params.get_mut("dec.out.b").data;
        let n = b.len();
        b[n - 1] = 100.0;
        for i in 0..5 {
            let s = m.generate(&[0.2; 8], &mut stream(1, "g", i), 1.0, 6).unwrap();
            assert_eq!(s.strokes.len(), 1);
            assert!(s.strokes[0].is_end());
        }
    }

    #[test]
    fn generation_matches_teacher_forced_head() {
        // feeding the sampled strokes back as targets reproduces the same mixture parameters
        let m = SketchModel::new(toy(), 6).unwrap();
        let z = vec![-0.4; 8];
        let mut rng = stream(2, "g", 0);
        let s = m.generate(&z, &mut rng, 1.0, 6).unwrap();
        let tf = m.decode_teacher_forced(&[z.clone()], &[s.clone()]).unwrap();
        // replay sampling with identical draws
        let mut rng = stream(2, "g", 0);
        for (t, st) in s.strokes.iter().enumerate() {
            let (dx, dy) = mdn::sample_offsets(&tf[0][t], 1.0, &mut rng);
            let pen = mdn::sample_categorical(&tf[0][t].pen, &mut rng);
            assert!((dx - st.dx).abs() < 1e-12 && (dy - st.dy).abs() < 1e-12);
            assert_eq!(PenState::from_index(pen), st.pen().unwrap());
        }
    }
}
