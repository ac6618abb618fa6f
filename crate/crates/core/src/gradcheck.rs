//! Finite-difference verification of the analytic raster gradient, every
//! tape operation, and the end-to-end sketch model loss.

use rand::Rng as _;

use crate::error::Result;
use crate::net::model::{ModelConfig, SketchModel};
use crate::net::tape::{Tape, Tensor, Unary, Var};
use crate::net::train::{prepare_target, sketch_losses};
use crate::image::PixelImage;
use crate::raster::{
    argmin_map, gaussian_blur, pixel_loss_grad_against, predicted_points, rasterize, scale_params, target_image, PixelLossSpec, ScaleShift,
    LOG_CLAMP,
};
use crate::rng::{normal, stream, Rng};
use crate::stroke::{to_absolute, PenState, Sketch, Stroke5};

/// Gradient elements smaller than this on both sides are not compared.
pub const NEGLIGIBLE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub compared: usize,
    /// Both sides below [`NEGLIGIBLE`].
    pub negligible: usize,
    /// Excluded at a non-differentiable point.
    pub excluded: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol && self.compared > 0
    }

    fn new(name: &str, tol: f64) -> Self {
        CheckResult { name: name.to_string(), instances: 0, compared: 0, negligible: 0, excluded: 0, max_rel_err: 0.0, tol }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let scale = analytic.abs().max(numeric.abs());
        if scale < NEGLIGIBLE {
            self.negligible += 1;
            return;
        }
        self.compared += 1;
        let e = (analytic - numeric).abs() / scale;
        if e > self.max_rel_err || e.is_nan() {
            self.max_rel_err = if e.is_nan() { f64::INFINITY } else { e };
        }
    }
}

fn random_sketch(rng: &mut Rng, t: usize) -> Sketch {
    let strokes = (0..t)
        .map(|i| {
            let pen = if i + 1 == t {
                PenState::End
            } else if rng.random_bool(0.2) {
                PenState::Up
            } else {
                PenState::Down
            };
            Stroke5::new(normal(rng), normal(rng), pen)
        })
        .collect();
    Sketch::new("gradcheck", None, strokes)
}

/// True when some target-weighted pixel of the blurred prediction moves
/// across the log clamp between the given offset sets.
fn crosses_clamp(target: &PixelImage, sets: &[&Vec<(f64, f64)>], pen: &[f64], ss: &ScaleShift, spec: PixelLossSpec) -> bool {
    let imgs: Vec<PixelImage> =
        sets.iter().map(|o| gaussian_blur(&rasterize(&predicted_points(o, pen), ss, spec.h, spec.w), spec.sigma)).collect();
    (0..target.data.len()).any(|k| {
        let below = imgs.iter().filter(|im| im.data[k] <= LOG_CLAMP).count();
        target.data[k] > 0.0 && below > 0 && below < imgs.len()
    })
}

/// True when a pen-down winning segment passes over a pixel centre between
/// the given offset sets, where the distance has a cone-shaped kink.
fn crosses_pixel_centre(sets: &[&Vec<(f64, f64)>], pen: &[f64], ss: &ScaleShift, map: &[usize], spec: PixelLossSpec) -> bool {
    let canvas: Vec<Vec<(f64, f64)>> =
        sets.iter().map(|o| predicted_points(o, pen).iter().map(|p| ss.apply(p.x, p.y, spec.h, spec.w)).collect()).collect();
    map.iter().enumerate().any(|(idx, &k)| {
        if k == usize::MAX || pen[k] < 0.5 {
            return false;
        }
        let (px, py) = ((idx % spec.w) as f64, (idx / spec.w) as f64);
        let sides: Vec<f64> = canvas
            .iter()
            .map(|c| {
                let (a, b) = (c[k], c[k + 1]);
                ((b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0)).signum()
            })
            .collect();
        sides.iter().any(|&v| v != sides[0])
    })
}

/// Analytic pixel-loss gradient against five-point central differences on
/// random sketches (T ≤ 12, 16×16). A coordinate is excluded when a
/// perturbation within the stencil changes which segment is nearest to some pixel, i.e. it
/// sits at an argmin tie, moves a pixel across the log clamp, or drags a
/// segment over a pixel centre; the loss is not differentiable there.
pub fn raster_check(seed: u64, instances: usize, step: f64, tol: f64) -> Result<CheckResult> {
    let (h, w) = (16, 16);
    let spec = PixelLossSpec { h, w, sigma: 1.0, full_bce: false };
    let mut res = CheckResult::new("raster pixel-loss gradient", tol);
    for k in 0..instances {
        let mut rng = stream(seed, "gradcheck/raster", k as u64);
        let t = rng.random_range(3..=12);
        let gt = random_sketch(&mut rng, t);
        let pred = random_sketch(&mut rng, t);
        let ss = scale_params(&to_absolute(&gt.strokes), h, w)?;
        let target = target_image(&gt, &ss, h, w, spec.sigma);
        let offsets: Vec<(f64, f64)> = pred.strokes.iter().map(|s| (s.dx, s.dy)).collect();
        let pen: Vec<f64> = pred.strokes.iter().map(|s| s.s1).collect();
        let grad = pixel_loss_grad_against(&target, &offsets, &pen, &ss, spec)?;
        let base_map = argmin_map(&predicted_points(&offsets, &pen), &ss, h, w);
        let loss = |o: &[(f64, f64)]| pixel_loss_grad_against(&target, o, &pen, &ss, spec).map(|g| g.loss);
        for i in 0..t {
            for axis in 0..2 {
                let shifted = |delta: f64| {
                    let mut o = offsets.clone();
                    if axis == 0 {
                        o[i].0 += delta;
                    } else {
                        o[i].1 += delta;
                    }
                    o
                };
                let stencil = [shifted(2.0 * step), shifted(step), shifted(-step), shifted(-2.0 * step)];
                let tie = stencil.iter().any(|o| argmin_map(&predicted_points(o, &pen), &ss, h, w) != base_map);
                let sets = [&stencil[0], &stencil[1], &offsets, &stencil[2], &stencil[3]];
                if tie || crosses_clamp(&target, &sets, &pen, &ss, spec) || crosses_pixel_centre(&sets, &pen, &ss, &base_map, spec) {
                    res.excluded += 1;
                    continue;
                }
                let f: Vec<f64> = stencil.iter().map(|o| loss(o)).collect::<Result<_>>()?;
                let numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * step);
                let analytic = if axis == 0 { grad.d_dx[i] } else { grad.d_dy[i] };
                res.record(analytic, numeric);
            }
        }
        res.instances += 1;
    }
    Ok(res)
}

type Builder = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Central differences for every input element of a scalar tape function.
pub fn fd_tape(res: &mut CheckResult, inputs: &[Tensor], build: &Builder, step: f64) -> Result<()> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let root = build(&mut tape, &vars);
    let grads = tape.backward(root)?;
    let eval = |ins: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = ins.iter().map(|x| t.param(x.clone())).collect();
        let r = build(&mut t, &vs);
        t.value(r).item()
    };
    let mut work = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zero(&tape, vars[k]);
        for e in 0..input.len() {
            let orig = work[k].data[e];
            work[k].data[e] = orig + step;
            let fp = eval(&work);
            work[k].data[e] = orig - step;
            let fm = eval(&work);
            work[k].data[e] = orig;
            res.record(analytic[e], (fp - fm) / (2.0 * step));
        }
    }
    res.instances += 1;
    Ok(())
}

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal(rng)).collect())
}

/// Random values bounded away from zero by `gap`.
fn away_from_zero(rng: &mut Rng, shape: &[usize], gap: f64) -> Tensor {
    let mut t = randn(rng, shape);
    for v in &mut t.data {
        *v += v.signum() * gap;
    }
    t
}

/// Weighted sum with fixed random weights, so every output element gets a
/// distinct upstream gradient.
fn weigh(tape: &mut Tape, v: Var, rng_seed: u64) -> Var {
    let mut rng = stream(rng_seed, "gradcheck/weights", 0);
    let shape = tape.value(v).shape.clone();
    let w = tape.constant(randn(&mut rng, &shape));
    let p = tape.mul(v, w);
    tape.sum(p)
}

struct OpCase {
    name: &'static str,
    make: fn(&mut Rng) -> Vec<Tensor>,
    build: fn(&mut Tape, &[Var]) -> Var,
}

fn op_cases() -> Vec<OpCase> {
    fn dims(rng: &mut Rng) -> (usize, usize) {
        (rng.random_range(1..=4), rng.random_range(1..=5))
    }
    fn unary_case(name: &'static str, build: fn(&mut Tape, &[Var]) -> Var) -> OpCase {
        OpCase {
            name,
            make: |r| {
                let (m, n) = dims(r);
                vec![randn(r, &[m, n])]
            },
            build,
        }
    }
    fn positive_case(name: &'static str, build: fn(&mut Tape, &[Var]) -> Var) -> OpCase {
        OpCase {
            name,
            make: |r| {
                let (m, n) = dims(r);
                let mut t = randn(r, &[m, n]);
                t.data.iter_mut().for_each(|v| *v = v.abs() + 0.3);
                vec![t]
            },
            build,
        }
    }
    vec![
        OpCase {
            name: "matmul",
            make: |r| {
                let (m, k) = dims(r);
                let n = r.random_range(1..=4);
                vec![randn(r, &[m, k]), randn(r, &[k, n])]
            },
            build: |t, v| {
                let y = t.matmul(v[0], v[1]);
                weigh(t, y, 1)
            },
        },
        OpCase {
            name: "add/sub/mul",
            make: |r| {
                let (m, n) = dims(r);
                vec![randn(r, &[m, n]), randn(r, &[m, n])]
            },
            build: |t, v| {
                let a = t.add(v[0], v[1]);
                let s = t.sub(v[0], v[1]);
                let y = t.mul(a, s);
                let y = t.mul(y, v[1]);
                weigh(t, y, 2)
            },
        },
        OpCase {
            name: "add_row/scale/add_scalar",
            make: |r| {
                let (m, n) = dims(r);
                vec![randn(r, &[m, n]), randn(r, &[n])]
            },
            build: |t, v| {
                let y = t.add_row(v[0], v[1]);
                let y = t.scale(y, -1.3);
                let y = t.add_scalar(y, 0.7);
                let y = t.mul(y, y);
                weigh(t, y, 3)
            },
        },
        unary_case("tanh", |t, v| {
            let y = t.tanh(v[0]);
            weigh(t, y, 4)
        }),
        unary_case("sigmoid", |t, v| {
            let y = t.sigmoid(v[0]);
            weigh(t, y, 5)
        }),
        unary_case("exp", |t, v| {
            let y = t.exp(v[0]);
            weigh(t, y, 6)
        }),
        unary_case("square", |t, v| {
            let y = t.unary(v[0], Unary::Square);
            weigh(t, y, 7)
        }),
        unary_case("softplus", |t, v| {
            let y = t.unary(v[0], Unary::Softplus);
            weigh(t, y, 8)
        }),
        OpCase {
            name: "relu",
            make: |r| {
                let (m, n) = dims(r);
                vec![away_from_zero(r, &[m, n], 0.05)]
            },
            build: |t, v| {
                let y = t.relu(v[0]);
                weigh(t, y, 9)
            },
        },
        positive_case("log", |t, v| {
            let y = t.log(v[0]);
            weigh(t, y, 10)
        }),
        positive_case("sqrt", |t, v| {
            let y = t.unary(v[0], Unary::Sqrt);
            weigh(t, y, 11)
        }),
        positive_case("recip", |t, v| {
            let y = t.unary(v[0], Unary::Recip);
            weigh(t, y, 12)
        }),
        unary_case("softmax", |t, v| {
            let y = t.softmax(v[0]);
            weigh(t, y, 13)
        }),
        unary_case("log_softmax", |t, v| {
            let y = t.log_softmax(v[0]);
            weigh(t, y, 14)
        }),
        unary_case("log_sum_exp", |t, v| {
            let y = t.log_sum_exp(v[0]);
            weigh(t, y, 15)
        }),
        OpCase {
            name: "slice/concat/broadcast/gather",
            make: |r| {
                let m = r.random_range(1..=4);
                vec![randn(r, &[m, 4]), randn(r, &[m, 2]), randn(r, &[2, 5])]
            },
            build: |t, v| {
                let s = t.slice_cols(v[0], 1, 3);
                let c = t.concat_cols(&[s, v[1]]);
                let rows = t.concat_rows(&[c, v[2]]);
                let m = t.value(rows).shape[0];
                let idx: Vec<usize> = (0..m).map(|i| (3 * i + 1) % 5).collect();
                let g = t.gather_cols(rows, &idx);
                let b = t.broadcast_cols(g, 3);
                let rs = t.reshape(b, vec![1, 3 * m]);
                weigh(t, rs, 16)
            },
        },
        unary_case("sum/mean", |t, v| {
            let y = t.mul(v[0], v[0]);
            let s = t.sum(y);
            let m = t.mean(v[0]);
            let p = t.mul(s, m);
            t.add(p, s)
        }),
        OpCase {
            name: "conv2d",
            make: |r| {
                let (b, c, o) = (r.random_range(1..=2), r.random_range(1..=2), r.random_range(1..=3));
                let hw = r.random_range(3..=5);
                vec![randn(r, &[b, c, hw, hw]), randn(r, &[o, c, 3, 3]), randn(r, &[o])]
            },
            build: |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], 1);
                weigh(t, y, 17)
            },
        },
        OpCase {
            name: "max_pool2",
            make: |r| {
                let (c, hw) = (r.random_range(1..=2), 2 * r.random_range(1..=3));
                // a random permutation of well-separated values avoids ties
                let n = c * hw * hw;
                let mut vals: Vec<f64> = (0..n).map(|i| 0.1 * i as f64).collect();
                use rand::seq::SliceRandom;
                vals.shuffle(r);
                vec![Tensor::new(vec![1, c, hw, hw], vals)]
            },
            build: |t, v| {
                let y = t.max_pool2(v[0]);
                weigh(t, y, 18)
            },
        },
        OpCase {
            name: "channel_affine",
            make: |r| {
                let c = r.random_range(1..=3);
                vec![randn(r, &[2, c, 2, 3]), randn(r, &[c]), randn(r, &[c])]
            },
            build: |t, v| {
                let y = t.channel_affine(v[0], v[1], v[2]);
                weigh(t, y, 19)
            },
        },
        OpCase {
            name: "lstm cell",
            make: |r| {
                let (b, h) = (r.random_range(1..=3), r.random_range(1..=3));
                vec![randn(r, &[b, 4 * h]), randn(r, &[b, h]), randn(r, &[h, 4 * h])]
            },
            build: |t, v| {
                let h = t.value(v[1]).shape[1];
                let hg = t.matmul(v[1], v[2]);
                let gates = t.add(v[0], hg);
                let i = t.slice_cols(gates, 0, h);
                let i = t.sigmoid(i);
                let f = t.slice_cols(gates, h, h);
                let f = t.sigmoid(f);
                let g = t.slice_cols(gates, 2 * h, h);
                let g = t.tanh(g);
                let o = t.slice_cols(gates, 3 * h, h);
                let o = t.sigmoid(o);
                let fc = t.mul(f, v[1]);
                let ig = t.mul(i, g);
                let c = t.add(fc, ig);
                let tc = t.tanh(c);
                let hn = t.mul(o, tc);
                let both = t.concat_cols(&[hn, c]);
                weigh(t, both, 20)
            },
        },
        OpCase {
            name: "external",
            make: |r| vec![randn(r, &[2, 3])],
            build: |t, v| {
                let x = t.value(v[0]).data.clone();
                let value = x.iter().map(|a| a.sin()).sum();
                let grad = Tensor::new(vec![2, 3], x.iter().map(|a| a.cos()).collect());
                let e = t.external(value, vec![(v[0], grad)]);
                let s = t.tanh(v[0]);
                let s = weigh(t, s, 21);
                let e = t.mul(e, s);
                t.scale(e, 0.5)
            },
        },
    ]
}

/// One result per operation kind, each over `instances` random inputs.
pub fn op_checks(seed: u64, instances: usize, step: f64, tol: f64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for case in op_cases() {
        let mut res = CheckResult::new(&format!("op {}", case.name), tol);
        for k in 0..instances {
            let mut rng = stream(seed, &format!("gradcheck/op/{}", case.name), k as u64);
            let inputs = (case.make)(&mut rng);
            fd_tape(&mut res, &inputs, &case.build, step)?;
        }
        out.push(res);
    }
    Ok(out)
}

/// `L_stroke + L_pen` through encoder and decoder of a tiny model
/// (D=8, M=2, T=6, 16×16) against central differences on every parameter.
pub fn end_to_end_check(seed: u64, step: f64, tol: f64) -> Result<CheckResult> {
    let cfg = ModelConfig { h: 16, w: 16, latent_dim: 8, components: 2, t_max: 6, hidden: 6, filters: vec![3, 3, 3, 3] };
    let model = SketchModel::new(cfg.clone(), seed)?;
    let mut rng = stream(seed, "gradcheck/e2e", 0);
    let b = 2;
    let images: Vec<_> = (0..b)
        .map(|_| PixelImage::from_vec(16, 16, (0..256).map(|_| rng.random::<f64>()).collect()).expect("16x16"))
        .collect();
    let targets: Vec<Sketch> = (0..b).map(|_| prepare_target(&random_sketch(&mut rng, 5), cfg.t_max)).collect();
    let eps = Tensor::matrix(b, cfg.latent_dim, (0..b * cfg.latent_dim).map(|_| normal(&mut rng)).collect());

    let loss_of = |m: &SketchModel| -> Result<(Tape, Var, crate::net::params::Bound)> {
        let mut tape = Tape::new();
        let p = m.params.bind(&mut tape, true);
        let lv = sketch_losses(m, &mut tape, &p, &images, &targets, eps.clone(), None)?;
        let total = tape.add(lv.l_pen, lv.l_stroke);
        Ok((tape, total, p))
    };
    let (tape, total, p) = loss_of(&model)?;
    let grads = tape.backward(total)?;
    let mut res = CheckResult::new("end-to-end stroke+pen loss", tol);
    let mut probe = SketchModel { cfg: cfg.clone(), params: model.params.clone() };
    for (i, &v) in p.vars.iter().enumerate() {
        if !model.params.is_trainable(i) {
            continue;
        }
        let analytic = grads.get_or_zero(&tape, v);
        for e in 0..analytic.len() {
            let orig = model.params.tensors()[i].data[e];
            probe.params.tensors_mut()[i].data[e] = orig + step;
            let (t1, r1, _) = loss_of(&probe)?;
            probe.params.tensors_mut()[i].data[e] = orig - step;
            let (t2, r2, _) = loss_of(&probe)?;
            probe.params.tensors_mut()[i].data[e] = orig;
            res.record(analytic[e], (t1.value(r1).item() - t2.value(r2).item()) / (2.0 * step));
        }
    }
    res.instances = 1;
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_gradient_matches_finite_differences() {
        let r = raster_check(1, 20, 1e-3, 1e-3).unwrap();
        assert_eq!(r.instances, 20);
        assert!(r.passed(), "{r:?}");
        assert!(r.compared > 50, "{r:?}");
    }

    #[test]
    fn every_op_matches_finite_differences() {
        for r in op_checks(2, 20, 1e-5, 1e-4).unwrap() {
            assert!(r.passed(), "{r:?}");
            assert_eq!(r.instances, 20);
        }
    }

    #[test]
    fn end_to_end_matches_finite_differences() {
        let r = end_to_end_check(3, 1e-5, 1e-3).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
