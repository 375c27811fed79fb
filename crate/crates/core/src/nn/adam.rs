//! Adam optimiser over a parameter tree.

use std::collections::BTreeMap;

use super::{Gradients, ModelParams, NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, keyed like the parameters.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update. Only parameters that have a gradient are
/// touched, so buffers such as BN running statistics are left alone.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    if !grads.is_finite() {
        return Err(NnError::NonFinite("gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads.iter() {
        let p = params.get_mut(name)?;
        if p.shape() != g.shape() {
            return Err(NnError::ParamShape {
                name: name.clone(),
                expected: p.shape().to_vec(),
                found: g.shape().to_vec(),
            });
        }
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let mhat = *mv / c1;
            let vhat = *vv / c2;
            *pv -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut p = ModelParams::new(0);
        p.register("w", Tensor::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap()).unwrap();
        let mut g = Gradients::new();
        g.accumulate("w", Tensor::new(vec![3], vec![0.5, -2.0, 0.0]).unwrap()).unwrap();
        let mut st = AdamState::new();
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((w[1] - (1.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = ModelParams::new(0);
        p.register("x", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap()).unwrap();
        let mut st = AdamState::new();
        let cfg = AdamConfig { lr: 0.05, ..Default::default() };
        for _ in 0..2000 {
            let x = p.get("x").unwrap().data().to_vec();
            let mut g = Gradients::new();
            g.accumulate("x", Tensor::new(vec![2], x.iter().map(|v| 2.0 * v).collect()).unwrap())
                .unwrap();
            adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        }
        assert!(p.get("x").unwrap().data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn untouched_without_gradient() {
        let mut p = ModelParams::new(0);
        p.register("a", Tensor::full(&[2], 1.0)).unwrap();
        p.register("bn.running_mean", Tensor::full(&[2], 5.0)).unwrap();
        let mut g = Gradients::new();
        g.accumulate("a", Tensor::full(&[2], 1.0)).unwrap();
        adam_step(&mut p, &g, &mut AdamState::new(), &AdamConfig::default()).unwrap();
        assert_eq!(p.get("bn.running_mean").unwrap().data(), &[5.0, 5.0]);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = ModelParams::new(0);
        p.register("a", Tensor::full(&[1], 1.0)).unwrap();
        let mut g = Gradients::new();
        g.accumulate("a", Tensor::full(&[1], f64::NAN)).unwrap();
        assert!(adam_step(&mut p, &g, &mut AdamState::new(), &AdamConfig::default()).is_err());
    }
}
