use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Array, Grads, NumError, ParamStore};

/// AdamW hyper-parameters. Defaults: betas (0.9, 0.999), eps 1e-8, no decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First/second moment estimates for every parameter the optimizer has touched.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptState {
    pub m: BTreeMap<String, Array>,
    pub v: BTreeMap<String, Array>,
    pub step: u64,
}

/// One decoupled-weight-decay Adam step.
///
/// Decay is applied as `p ← p·(1 − lr·wd)` independently of the gradient.
/// Parameters without a gradient entry or marked frozen are left untouched.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &Grads,
    state: &mut OptState,
    cfg: &AdamW,
    lr: f64,
) -> Result<(), NumError> {
    for (name, g) in grads.iter() {
        let p = params.param(name).ok_or_else(|| NumError::UnknownParam(name.clone()))?;
        if p.value.shape() != g.shape() {
            return Err(NumError::ShapeMismatch {
                context: format!("adamw gradient for `{name}`"),
                expected: p.value.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
    }
    if !grads.is_finite() {
        return Err(NumError::NonFinite("adamw gradients".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, param) in params.iter_mut() {
        if !param.trainable {
            continue;
        }
        let Some(g) = grads.get(name) else { continue };
        let shape = param.value.shape().to_vec();
        let m = state.m.entry(name.clone()).or_insert_with(|| Array::zeros(shape.clone()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Array::zeros(shape.clone()));
        if m.shape() != shape.as_slice() || v.shape() != shape.as_slice() {
            return Err(NumError::ShapeMismatch {
                context: format!("optimizer moments for `{name}`"),
                expected: shape,
                got: m.shape().to_vec(),
            });
        }
        let decay = 1.0 - lr * cfg.weight_decay;
        let (md, vd) = (m.data_mut(), v.data_mut());
        for (i, p) in param.value.data_mut().iter_mut().enumerate() {
            let gi = g.data()[i];
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            *p = *p * decay - lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    if params.iter().any(|(_, p)| !p.value.is_finite()) {
        return Err(NumError::NonFinite("adamw update".into()));
    }
    Ok(())
}

/// Linear warm-up from 0 to `peak` over `warmup` steps, then linear decay to 0 at `total`.
pub fn lr_at_step(step: u64, warmup: u64, total: u64, peak: f64) -> Result<f64, NumError> {
    if warmup >= total {
        return Err(NumError::InvalidSchedule(format!("warmup {warmup} must be below total {total}")));
    }
    if step > total {
        return Err(NumError::InvalidSchedule(format!("step {step} beyond total {total}")));
    }
    if step < warmup {
        Ok(peak * step as f64 / warmup as f64)
    } else {
        Ok(peak * (total - step) as f64 / (total - warmup) as f64)
    }
}

/// Max-subtracted softmax; masked entries (mask `false`) get probability 0.
pub fn stable_softmax(logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>, NumError> {
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(NumError::ShapeMismatch {
                context: "softmax mask".into(),
                expected: vec![logits.len()],
                got: vec![m.len()],
            });
        }
    }
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let mx = (0..logits.len()).filter(|&i| keep(i)).map(|i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return Err(NumError::AllMasked);
    }
    if !mx.is_finite() {
        return Err(NumError::NonFinite("softmax logits".into()));
    }
    let mut out: Vec<f64> = (0..logits.len()).map(|i| if keep(i) { (logits[i] - mx).exp() } else { 0.0 }).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    Ok(out)
}
