//! Parameter-free layers and the softmax / cross-entropy pair.

use rand::{Rng, RngCore};

use super::tensor::{Real, Tensor};
use super::NnError;

/// Natural-log floor applied to scores inside the loss.
pub const LOG_FLOOR: f64 = 1e-12;

pub fn relu<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given its output: passes where the output is positive.
pub fn relu_backward<T: Real>(output: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let mut g = grad.clone();
    for (gv, &o) in g.data_mut().iter_mut().zip(output.data()) {
        if o <= T::zero() {
            *gv = T::zero();
        }
    }
    g
}

/// 2×2 stride-2 max pooling on `[B, C, H, W]`.
///
/// Returns the pooled tensor and, for every output cell, the flat index of
/// the winning input cell. Ties go to the first cell in row-major order.
pub fn maxpool2<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>), NnError> {
    let [b, c, h, w] = *input.shape() else {
        return Err(NnError::Shape(format!(
            "maxpool expects [B, C, H, W], got {:?}",
            input.shape()
        )));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::Shape(format!(
            "maxpool needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![b, c, oh, ow]);
    let mut arg = vec![0u32; b * c * oh * ow];
    let x = input.data();
    let mut o = 0;
    for plane in 0..b * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let cells = [
                    base + 2 * i * w + 2 * j,
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ];
                let mut best = cells[0];
                for &k in &cells[1..] {
                    if x[k] > x[best] {
                        best = k;
                    }
                }
                out.data_mut()[o] = x[best];
                arg[o] = best as u32;
                o += 1;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2_backward<T: Real>(
    in_shape: &[usize],
    argmax: &[u32],
    grad: &Tensor<T>,
) -> Tensor<T> {
    let mut g = Tensor::zeros(in_shape.to_vec());
    for (&k, &gv) in argmax.iter().zip(grad.data()) {
        let cell = &mut g.data_mut()[k as usize];
        *cell = *cell + gv;
    }
    g
}

/// Train-time behaviour toggle for stochastic layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout with drop probability `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rho: f64,
}

impl Dropout {
    pub fn new(rho: f64) -> Result<Self, NnError> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(NnError::Shape(format!("dropout rate {rho} outside [0, 1]")));
        }
        Ok(Self { rho })
    }

    /// `ρ = 1` zeroes everything in training; allowed but worth flagging.
    pub fn is_saturated(&self) -> bool {
        self.rho >= 1.0
    }

    /// Returns the output and the multiplicative mask (absent when the layer
    /// acts as the identity).
    pub fn forward<T: Real>(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> (Tensor<T>, Option<Vec<T>>) {
        if mode == Mode::Eval || self.rho == 0.0 {
            return (input.clone(), None);
        }
        let mask: Vec<T> = if self.is_saturated() {
            log::warn!("dropout with rho = 1 zeroes every unit");
            vec![T::zero(); input.len()]
        } else {
            let keep = T::of(1.0 / (1.0 - self.rho));
            (0..input.len())
                .map(|_| {
                    if rng.random::<f64>() < self.rho {
                        T::zero()
                    } else {
                        keep
                    }
                })
                .collect()
        };
        let mut out = input.clone();
        for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
            *v = *v * m;
        }
        (out, Some(mask))
    }
}

/// Max-shifted softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mx = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - mx).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `−Σ z·ln(score)` with the log clamped at `ln(1e-12)`.
pub fn cross_entropy<T: Real>(scores: &[T], one_hot: &[T]) -> T {
    let floor = T::of(LOG_FLOOR);
    scores
        .iter()
        .zip(one_hot)
        .map(|(&p, &z)| -z * p.max(floor).ln())
        .sum()
}

/// Mean cross-entropy over a `[B, K]` logit batch and its gradient with
/// respect to the logits, `(p − z)/B`.
pub fn softmax_cross_entropy_batch<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>), NnError> {
    let [b, k] = *logits.shape() else {
        return Err(NnError::Shape(format!(
            "logits must be [B, K], got {:?}",
            logits.shape()
        )));
    };
    if labels.len() != b || b == 0 {
        return Err(NnError::Shape(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    let inv_b = T::of(1.0 / b as f64);
    let mut grad = Tensor::zeros(vec![b, k]);
    let mut total = T::zero();
    let mut z = vec![T::zero(); k];
    for (i, &lab) in labels.iter().enumerate() {
        if lab >= k {
            return Err(NnError::Shape(format!(
                "label {lab} out of range for {k} classes"
            )));
        }
        let p = softmax(logits.item(i));
        z.fill(T::zero());
        z[lab] = T::one();
        total = total + cross_entropy(&p, &z);
        for (j, g) in grad.data_mut()[i * k..(i + 1) * k].iter_mut().enumerate() {
            *g = (p[j] - z[j]) * inv_b;
        }
    }
    Ok((total * inv_b, grad))
}
