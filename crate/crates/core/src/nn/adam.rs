use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};
use super::tensor::Real;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// One bias-corrected Adam step on a flat parameter slice; `t` is the
/// 1-based step index.
pub fn adam_update<T: Real>(
    cfg: &AdamConfig,
    t: u64,
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
) {
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let c1 = T::of(1.0 - cfg.beta1.powi(t as i32));
    let c2 = T::of(1.0 - cfg.beta2.powi(t as i32));
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        param[i] = param[i] - lr * mh / (vh.sqrt() + eps);
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    m_w: Vec<T>,
    v_w: Vec<T>,
    m_b: Vec<T>,
    v_b: Vec<T>,
}

/// Moment accumulators for every parameter layer of one network.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    t: u64,
    moments: Vec<Option<Moments<T>>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(net: &Network<T>, config: AdamConfig) -> Self {
        let moments = net
            .layers()
            .iter()
            .map(|l| {
                l.kind.params().map(|(w, b)| Moments {
                    m_w: vec![T::zero(); w.len()],
                    v_w: vec![T::zero(); w.len()],
                    m_b: vec![T::zero(); b.len()],
                    v_b: vec![T::zero(); b.len()],
                })
            })
            .collect();
        Self {
            config,
            t: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update. Layers that are frozen or carry no gradient are
    /// left untouched.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<(), NnError> {
        if grads.layers.len() != net.len() || self.moments.len() != net.len() {
            return Err(NnError::Shape(format!(
                "gradients for {} layers, optimizer for {}, network has {}",
                grads.layers.len(),
                self.moments.len(),
                net.len()
            )));
        }
        self.t += 1;
        for (i, g) in grads.layers.iter().enumerate() {
            let Some(g) = g else { continue };
            let layer = net.layer_mut(i);
            if !layer.trainable {
                continue;
            }
            let (Some((w, b)), Some(mo)) = (layer.kind.params_mut(), self.moments[i].as_mut())
            else {
                return Err(NnError::Shape(format!(
                    "gradient supplied for parameter-free layer {i}"
                )));
            };
            if g.weight.len() != w.len() || g.bias.len() != b.len() {
                return Err(NnError::Shape(format!(
                    "gradient shape mismatch at layer {i}"
                )));
            }
            adam_update(&self.config, self.t, w, &g.weight, &mut mo.m_w, &mut mo.v_w);
            adam_update(&self.config, self.t, b, &g.bias, &mut mo.m_b, &mut mo.v_b);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Graph, LayerKind, Mode, Tensor};
    use crate::rng::seeded;

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = AdamConfig::default();
        let mut p = [1.0f64, -2.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        for t in 1..=5 {
            adam_update(&cfg, t, &mut p, &[0.0, 0.0], &mut m, &mut v);
        }
        assert_eq!(p, [1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_steps_by_lr() {
        let cfg = AdamConfig::default();
        for g in [3.0f64, -0.02] {
            let mut p = [0.0f64];
            let (mut m, mut v) = ([0.0], [0.0]);
            let mut prev = 0.0;
            for t in 1..=2000 {
                adam_update(&cfg, t, &mut p, &[g], &mut m, &mut v);
                let step = p[0] - prev;
                prev = p[0];
                // bias correction keeps every step at ≈ −lr·sign(g)
                assert!(
                    (step + cfg.lr * g.signum()).abs() < 1e-6,
                    "t={t} step={step}"
                );
            }
        }
    }

    #[test]
    fn step_counter_and_frozen_layers() {
        let mut rng = seeded(3);
        let mut net = crate::nn::Network::<f64>::new();
        net.push("a", LayerKind::Dense(Dense::kaiming(2, 2, &mut rng)))
            .push("b", LayerKind::Dense(Dense::kaiming(2, 2, &mut rng)));
        let mut grads = {
            let mut g = Graph::new(&net);
            let y = g
                .forward(
                    &Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap(),
                    0,
                    Mode::Train,
                    &mut rng,
                )
                .unwrap();
            g.backward(&y).unwrap()
        };
        net.set_trainable(0..1, false);
        let frozen = net.layer(0).clone();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        for k in 1..=3 {
            adam.step(&mut net, &grads).unwrap();
            assert_eq!(adam.step_count(), k);
        }
        assert_eq!(*net.layer(0), frozen);
        grads.layers.pop();
        assert!(adam.step(&mut net, &grads).is_err());
    }
}
