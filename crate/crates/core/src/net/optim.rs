//! Adam, gradient value clipping and the step-decay learning rate.

use crate::net::params::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// One bias-corrected Adam update in place. `t` is the 1-based step count.
pub fn adam_step(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, t: u64) {
    assert!(t >= 1, "Adam step count starts at 1");
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

/// Elementwise clamp to `[−c, c]`.
pub fn clip_grads(grads: &mut [f64], c: f64) {
    assert!(c > 0.0, "clip value must be positive");
    for g in grads {
        *g = g.clamp(-c, c);
    }
}

pub fn decayed_lr(lr: f64, decay: f64, interval: u64, step: u64) -> f64 {
    lr * decay.powi((step / interval.max(1)) as i32)
}

/// Applies Adam to every trainable tensor of the store. `grads` is aligned
/// with the store's tensors; `None` means no gradient reached it.
pub fn apply_adam(store: &mut ParamStore, grads: &[Option<Vec<f64>>], lr: f64) {
    store.adam_t += 1;
    let t = store.adam_t;
    for (i, g) in grads.iter().enumerate() {
        if !store.is_trainable(i) {
            continue;
        }
        let zeros;
        let g = match g {
            Some(g) => g.as_slice(),
            None => {
                zeros = vec![0.0; store.tensors()[i].len()];
                &zeros
            }
        };
        let mut m = std::mem::take(&mut store.adam_m[i]);
        let mut v = std::mem::take(&mut store.adam_v[i]);
        adam_step(&mut store.tensors_mut()[i].data, g, &mut m, &mut v, lr, t);
        store.adam_m[i] = m;
        store.adam_v[i] = v;
    }
}
