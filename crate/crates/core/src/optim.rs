//! LARS, learning-rate and EMA schedules, and the plain momentum SGD used by
//! the evaluation heads.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Network, ParamRole};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub trust_coefficient: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.3,
            batch_size: 256,
            weight_decay: 1.5e-6,
            momentum: 0.9,
            trust_coefficient: 1e-3,
            eps: 1e-9,
            warmup_steps: 0,
            total_steps: 1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.base_lr, self.weight_decay, self.momentum, self.trust_coefficient, self.eps];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("optimizer coefficients must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("optimizer batch_size must be at least 1".into()));
        }
        if self.total_steps == 0 || self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "need total_steps >= 1 and warmup_steps < total_steps (got {} and {})",
                self.total_steps, self.warmup_steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmaConfig {
    pub tau_base: f64,
    pub total_steps: u64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self { tau_base: 0.996, total_steps: 1 }
    }
}

impl EmaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_base) {
            return Err(Error::Config(format!("tau_base {} outside [0, 1]", self.tau_base)));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("ema total_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Linear scaling rule: `base_lr * batch / 256`.
pub fn scaled_lr(cfg: &OptimConfig) -> f64 {
    cfg.base_lr * cfg.batch_size as f64 / 256.0
}

/// Linear warmup then cosine decay to zero, no restarts.
pub fn cosine_lr(step: u64, cfg: &OptimConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::StepOutOfRange { step, total: cfg.total_steps });
    }
    let peak = scaled_lr(cfg);
    if step < cfg.warmup_steps {
        return Ok(peak * step as f64 / cfg.warmup_steps as f64);
    }
    let span = (cfg.total_steps - cfg.warmup_steps) as f64;
    let progress = (step - cfg.warmup_steps) as f64 / span;
    if progress >= 1.0 {
        return Ok(0.0);
    }
    Ok(peak * 0.5 * (1.0 + (PI * progress).cos()))
}

/// Target momentum ramped from `tau_base` at step 0 to 1 at the last step.
/// Steps past the end are clamped.
pub fn ema_tau(step: u64, cfg: &EmaConfig) -> f64 {
    let step = step.min(cfg.total_steps);
    if step == cfg.total_steps {
        return 1.0;
    }
    let c = (PI * step as f64 / cfg.total_steps as f64).cos();
    cfg.tau_base + (1.0 - cfg.tau_base) * 0.5 * (1.0 - c)
}

/// Momentum buffers keyed by parameter name, plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimState<T = f32> {
    pub buffers: BTreeMap<String, Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new() -> Self {
        Self { buffers: BTreeMap::new(), step: 0 }
    }
}

/// One trainable tensor, its gradient and its role.
pub struct ParamSlot<'a, T> {
    pub name: String,
    pub role: ParamRole,
    pub param: &'a mut Tensor<T>,
    pub grad: &'a Tensor<T>,
}

/// Pair a network's parameters with gradients from [`Network::backward`],
/// naming each `"{prefix}.{layer}.{kind}"`.
pub fn slots<'a, T: Scalar>(
    prefix: &str,
    net: &'a mut Network<T>,
    grads: &'a crate::nn::Gradients<T>,
) -> Result<Vec<ParamSlot<'a, T>>> {
    let params = net.params_mut();
    if params.len() != grads.tensors.len() {
        return Err(Error::ShapeMismatch(format!("{} parameters but {} gradients", params.len(), grads.tensors.len())));
    }
    Ok(params
        .into_iter()
        .zip(&grads.tensors)
        .map(|(p, g)| ParamSlot { name: format!("{prefix}.{}", p.name), role: p.role, param: p.tensor, grad: g })
        .collect())
}

fn norm_f64<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

fn check_slot<T: Scalar>(slot: &ParamSlot<'_, T>, state: &OptimState<T>) -> Result<()> {
    if slot.param.shape() != slot.grad.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{}: parameter {:?} vs gradient {:?}",
            slot.name,
            slot.param.shape(),
            slot.grad.shape()
        )));
    }
    if let Some(b) = state.buffers.get(&slot.name) {
        if b.shape() != slot.param.shape() {
            return Err(Error::ShapeMismatch(format!("{}: momentum buffer {:?}", slot.name, b.shape())));
        }
    }
    Ok(())
}

/// One LARS update. Biases and normalization parameters skip both weight
/// decay and trust-ratio scaling. Tensors are visited in name order.
pub fn lars_step<T: Scalar>(
    mut slots: Vec<ParamSlot<'_, T>>,
    state: &mut OptimState<T>,
    cfg: &OptimConfig,
    lr: f64,
) -> Result<()> {
    slots.sort_by(|a, b| a.name.cmp(&b.name));
    for slot in &slots {
        check_slot(slot, state)?;
    }
    for slot in slots {
        let excluded = slot.role.is_bias() || slot.role.is_norm_param();
        let decay = T::from_f64(cfg.weight_decay);
        let adjusted: Vec<T> = if excluded {
            slot.grad.data().to_vec()
        } else {
            slot.grad.data().iter().zip(slot.param.data()).map(|(&g, &w)| g + decay * w).collect()
        };
        let local_lr = if excluded {
            1.0
        } else {
            let wn = norm_f64(slot.param.data());
            let gn = norm_f64(&adjusted);
            if wn > 0.0 && gn > 0.0 {
                cfg.trust_coefficient * wn / (gn + cfg.eps)
            } else {
                1.0
            }
        };
        let buf = state.buffers.entry(slot.name.clone()).or_insert_with(|| Tensor::zeros(slot.param.shape()));
        let mom = T::from_f64(cfg.momentum);
        let scale = T::from_f64(lr * local_lr);
        for ((m, w), g) in buf.data_mut().iter_mut().zip(slot.param.data_mut()).zip(adjusted) {
            *m = mom * *m + g;
            *w = *w - scale * *m;
        }
    }
    state.step += 1;
    Ok(())
}

/// Heavy-ball SGD with L2 decay on every tensor: `m = mu*m + g + wd*w`,
/// `w -= lr*m`.
pub fn sgd_step<T: Scalar>(
    mut slots: Vec<ParamSlot<'_, T>>,
    state: &mut OptimState<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    slots.sort_by(|a, b| a.name.cmp(&b.name));
    for slot in &slots {
        check_slot(slot, state)?;
    }
    let (lr, mom, wd) = (T::from_f64(lr), T::from_f64(momentum), T::from_f64(weight_decay));
    for slot in slots {
        let buf = state.buffers.entry(slot.name.clone()).or_insert_with(|| Tensor::zeros(slot.param.shape()));
        for ((m, w), &g) in buf.data_mut().iter_mut().zip(slot.param.data_mut()).zip(slot.grad.data()) {
            *m = mom * *m + g + wd * *w;
            *w = *w - lr * *m;
        }
    }
    state.step += 1;
    Ok(())
}

/// `target = tau*target + (1-tau)*online` over every stored tensor,
/// running statistics included.
pub fn ema_update<T: Scalar>(target: &mut Network<T>, online: &Network<T>, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::OutOfRange(format!("tau {tau} outside [0, 1]")));
    }
    if target.spec() != online.spec() {
        return Err(Error::ShapeMismatch("target and online layouts differ".into()));
    }
    for ((_, t), (_, o)) in target.tensors_mut().into_iter().zip(online.tensors()) {
        ema_tensor(t, o, tau)?;
    }
    Ok(())
}

pub fn ema_tensor<T: Scalar>(target: &mut Tensor<T>, online: &Tensor<T>, tau: f64) -> Result<()> {
    if target.shape() != online.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", target.shape(), online.shape())));
    }
    let keep = 1.0 - tau;
    for (x, &o) in target.data_mut().iter_mut().zip(online.data()) {
        *x = T::from_f64(tau * x.as_f64() + keep * o.as_f64());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(batch: usize, warmup: u64, total: u64) -> OptimConfig {
        OptimConfig { batch_size: batch, warmup_steps: warmup, total_steps: total, ..Default::default() }
    }

    #[test]
    fn linear_scaling() {
        assert_eq!(scaled_lr(&cfg(2048, 0, 1)), 2.4);
        assert_eq!(scaled_lr(&cfg(256, 0, 1)), 0.3);
        assert_eq!(scaled_lr(&cfg(128, 0, 1)), 0.15);
    }

    #[test]
    fn cosine_endpoints() {
        let c = cfg(256, 10, 110);
        assert_eq!(cosine_lr(10, &c).unwrap(), 0.3);
        assert_eq!(cosine_lr(110, &c).unwrap(), 0.0);
        assert_eq!(cosine_lr(0, &c).unwrap(), 0.0);
        assert!(matches!(cosine_lr(111, &c), Err(Error::StepOutOfRange { step: 111, total: 110 })));
        let c = cfg(256, 0, 100);
        assert!((cosine_lr(50, &c).unwrap() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn validate_rejects_bad_warmup() {
        assert!(cfg(256, 5, 5).validate().is_err());
        assert!(cfg(256, 0, 0).validate().is_err());
        assert!(cfg(256, 4, 5).validate().is_ok());
        assert!(EmaConfig { tau_base: 1.2, total_steps: 3 }.validate().is_err());
    }

    #[test]
    fn lars_scalar() {
        let mut w = Tensor::from_vec(&[1, 1], vec![1.0f64]).unwrap();
        let g = Tensor::from_vec(&[1, 1], vec![0.5f64]).unwrap();
        let c = OptimConfig { weight_decay: 0.0, momentum: 0.0, trust_coefficient: 1e-3, ..Default::default() };
        let mut st = OptimState::new();
        let slot = ParamSlot { name: "w".into(), role: ParamRole::Weight, param: &mut w, grad: &g };
        lars_step(vec![slot], &mut st, &c, 1.0).unwrap();
        assert!((w.data()[0] - 0.999).abs() < 1e-9);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut w = Tensor::from_vec(&[3], vec![1.0f32, -2.0, 0.5]).unwrap();
        let before = w.clone();
        let g = Tensor::zeros(&[3]);
        let c = OptimConfig { weight_decay: 0.0, ..Default::default() };
        let mut st = OptimState::new();
        lars_step(
            vec![ParamSlot { name: "a".into(), role: ParamRole::Weight, param: &mut w, grad: &g }],
            &mut st,
            &c,
            0.3,
        )
        .unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn bias_ignores_decay() {
        let run = |wd: f64| {
            let mut b = Tensor::from_vec(&[2], vec![0.3f32, -0.7]).unwrap();
            let g = Tensor::from_vec(&[2], vec![0.1f32, 0.2]).unwrap();
            let c = OptimConfig { weight_decay: wd, ..Default::default() };
            let mut st = OptimState::new();
            for _ in 0..5 {
                let slot = ParamSlot { name: "b".into(), role: ParamRole::Bias, param: &mut b, grad: &g };
                lars_step(vec![slot], &mut st, &c, 0.1).unwrap();
            }
            b
        };
        assert_eq!(run(0.0), run(1.5e-6));
    }

    #[test]
    fn shape_mismatch() {
        let mut w = Tensor::<f32>::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut st = OptimState::new();
        let slot = ParamSlot { name: "w".into(), role: ParamRole::Weight, param: &mut w, grad: &g };
        assert!(lars_step(vec![slot], &mut st, &OptimConfig::default(), 0.1).is_err());
    }

    #[test]
    fn tau_schedule() {
        let c = EmaConfig { tau_base: 0.996, total_steps: 1000 };
        assert_eq!(ema_tau(0, &c), 0.996);
        assert_eq!(ema_tau(1000, &c), 1.0);
        let mut prev = 0.0;
        for s in 0..=1000 {
            let t = ema_tau(s, &c);
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn ema_extremes_and_closed_form() {
        let theta = Tensor::from_vec(&[3], vec![1.0f64, -2.0, 4.0]).unwrap();
        let xi0 = Tensor::from_vec(&[3], vec![0.5f64, 0.0, -1.0]).unwrap();
        let mut xi = xi0.clone();
        ema_tensor(&mut xi, &theta, 1.0).unwrap();
        assert_eq!(xi, xi0);
        ema_tensor(&mut xi, &theta, 0.0).unwrap();
        assert_eq!(xi, theta);
        let mut xi = xi0.clone();
        for _ in 0..10 {
            ema_tensor(&mut xi, &theta, 0.9).unwrap();
        }
        let decay = 0.9f64.powi(10);
        for i in 0..3 {
            let want = theta.data()[i] + decay * (xi0.data()[i] - theta.data()[i]);
            assert!((xi.data()[i] - want).abs() <= 1e-6 * want.abs().max(1e-12));
        }
    }
}
