use std::ops::Range;

use rand::RngCore;

use super::conv::Conv2d;
use super::dense::Dense;
use super::ops::{self, Dropout, Mode};
use super::tensor::{Real, Tensor};
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind<T> {
    Conv(Conv2d<T>),
    Relu,
    MaxPool2,
    Flatten,
    Dropout(Dropout),
    Dense(Dense<T>),
}

impl<T: Real> LayerKind<T> {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv(_) | LayerKind::Dense(_))
    }

    /// `(weight, bias)` for parameterized layers.
    pub fn params(&self) -> Option<(&[T], &[T])> {
        match self {
            LayerKind::Conv(c) => Some((&c.weight, &c.bias)),
            LayerKind::Dense(d) => Some((&d.weight, &d.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Vec<T>, &mut Vec<T>)> {
        match self {
            LayerKind::Conv(c) => Some((&mut c.weight, &mut c.bias)),
            LayerKind::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub name: String,
    pub kind: LayerKind<T>,
    pub trainable: bool,
}

/// Per-layer trainable flags, indexed like the network's layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask(pub Vec<bool>);

impl FreezeMask {
    pub fn is_trainable(&self, layer: usize) -> bool {
        self.0.get(layer).copied().unwrap_or(false)
    }
}

/// Sequential network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
}

enum Cache<T> {
    Conv {
        cols: Vec<T>,
        in_shape: Vec<usize>,
    },
    Relu {
        out: Tensor<T>,
    },
    Pool {
        argmax: Vec<u32>,
        in_shape: Vec<usize>,
    },
    Flatten {
        in_shape: Vec<usize>,
    },
    Dropout {
        mask: Option<Vec<T>>,
    },
    Dense {
        input: Tensor<T>,
    },
}

impl<T: Real> Network<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, kind: LayerKind<T>) -> &mut Self {
        self.layers.push(Layer {
            name: name.into(),
            trainable: kind.has_params(),
            kind,
        });
        self
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Layer<T> {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Layer<T> {
        &mut self.layers[i]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn freeze_mask(&self) -> FreezeMask {
        FreezeMask(
            self.layers
                .iter()
                .map(|l| l.trainable && l.kind.has_params())
                .collect(),
        )
    }

    pub fn set_freeze_mask(&mut self, mask: &FreezeMask) -> Result<(), NnError> {
        if mask.0.len() != self.layers.len() {
            return Err(NnError::Shape(format!(
                "freeze mask has {} entries for {} layers",
                mask.0.len(),
                self.layers.len()
            )));
        }
        for (l, &t) in self.layers.iter_mut().zip(&mask.0) {
            l.trainable = t && l.kind.has_params();
        }
        Ok(())
    }

    /// Marks every parameter layer in `range` frozen (or trainable).
    pub fn set_trainable(&mut self, range: Range<usize>, trainable: bool) {
        for l in &mut self.layers[range] {
            l.trainable = trainable && l.kind.has_params();
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.kind.params())
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Same network in another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                name: l.name.clone(),
                trainable: l.trainable,
                kind: match &l.kind {
                    LayerKind::Conv(c) => LayerKind::Conv(Conv2d {
                        in_channels: c.in_channels,
                        out_channels: c.out_channels,
                        kernel: c.kernel,
                        weight: conv(&c.weight),
                        bias: conv(&c.bias),
                    }),
                    LayerKind::Dense(d) => LayerKind::Dense(Dense {
                        inputs: d.inputs,
                        outputs: d.outputs,
                        weight: conv(&d.weight),
                        bias: conv(&d.bias),
                    }),
                    LayerKind::Relu => LayerKind::Relu,
                    LayerKind::MaxPool2 => LayerKind::MaxPool2,
                    LayerKind::Flatten => LayerKind::Flatten,
                    LayerKind::Dropout(d) => LayerKind::Dropout(*d),
                },
            })
            .collect();
        Network { layers }
    }

    /// Clone with every bias set to zero.
    pub fn without_biases(&self) -> Self {
        let mut n = self.clone();
        for l in &mut n.layers {
            if let Some((_, b)) = l.kind.params_mut() {
                b.iter_mut().for_each(|v| *v = T::zero());
            }
        }
        n
    }

    /// Deterministic inference through `range` (dropout inactive).
    pub fn infer(&self, input: &Tensor<T>, range: Range<usize>) -> Result<Tensor<T>, NnError> {
        let mut rng = crate::rng::seeded(0);
        let (out, _) = self.forward_impl(input, range, Mode::Eval, &mut rng, false)?;
        Ok(out)
    }

    fn forward_impl(
        &self,
        input: &Tensor<T>,
        range: Range<usize>,
        mode: Mode,
        rng: &mut dyn RngCore,
        record: bool,
    ) -> Result<(Tensor<T>, Vec<Cache<T>>), NnError> {
        if range.start > range.end || range.end > self.layers.len() {
            return Err(NnError::LayerRange {
                start: range.start,
                end: range.end,
                len: self.layers.len(),
            });
        }
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(if record { range.len() } else { 0 });
        for layer in &self.layers[range] {
            let (y, cache) = match &layer.kind {
                LayerKind::Conv(c) => {
                    let (y, cols) = c.forward(&x, record)?;
                    let in_shape = x.shape().to_vec();
                    (y, cols.map(|cols| Cache::Conv { cols, in_shape }))
                }
                LayerKind::Relu => {
                    let y = ops::relu(&x);
                    let cache = record.then(|| Cache::Relu { out: y.clone() });
                    (y, cache)
                }
                LayerKind::MaxPool2 => {
                    let (y, argmax) = ops::maxpool2(&x)?;
                    let in_shape = x.shape().to_vec();
                    (y, record.then_some(Cache::Pool { argmax, in_shape }))
                }
                LayerKind::Flatten => {
                    let in_shape = x.shape().to_vec();
                    let b = x.batch();
                    let l = x.item_len();
                    (
                        x.reshape(vec![b, l])?,
                        record.then_some(Cache::Flatten { in_shape }),
                    )
                }
                LayerKind::Dropout(d) => {
                    let (y, mask) = d.forward(&x, mode, rng);
                    (y, record.then_some(Cache::Dropout { mask }))
                }
                LayerKind::Dense(d) => {
                    let y = d.forward(&x)?;
                    (y, record.then_some(Cache::Dense { input: x }))
                }
            };
            if let Some(c) = cache {
                caches.push(c);
            }
            x = y;
        }
        Ok((x, caches))
    }
}

impl<T: Real> Default for Network<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameter gradients, one slot per layer. Frozen and parameter-free layers
/// hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Option<ParamGrad<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, layer: usize) -> Option<&ParamGrad<T>> {
        self.layers.get(layer).and_then(|g| g.as_ref())
    }
}

/// Records one forward pass and differentiates through it.
pub struct Graph<'a, T> {
    net: &'a Network<T>,
    start: usize,
    caches: Option<Vec<Cache<T>>>,
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new(net: &'a Network<T>) -> Self {
        Self {
            net,
            start: 0,
            caches: None,
        }
    }

    /// Forward from layer `start` to the output, recording caches. A later
    /// call replaces the earlier recording.
    pub fn forward(
        &mut self,
        input: &Tensor<T>,
        start: usize,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Tensor<T>, NnError> {
        let (y, caches) = self
            .net
            .forward_impl(input, start..self.net.len(), mode, rng, true)?;
        self.start = start;
        self.caches = Some(caches);
        Ok(y)
    }

    /// Backpropagates `grad_output` (gradient of the loss with respect to
    /// the network output).
    pub fn backward(&self, grad_output: &Tensor<T>) -> Result<Gradients<T>, NnError> {
        let caches = self.caches.as_ref().ok_or(NnError::BackwardBeforeForward)?;
        let layers = self.net.layers();
        let mut grads: Vec<Option<ParamGrad<T>>> = vec![None; layers.len()];
        // the input gradient of layer i is needed only if a trainable layer sits below it
        let mut lowest_trainable = None;
        for i in (self.start..layers.len()).rev() {
            if layers[i].trainable && layers[i].kind.has_params() {
                lowest_trainable = Some(i);
            }
        }
        let Some(lowest) = lowest_trainable else {
            return Ok(Gradients { layers: grads });
        };
        let mut g = grad_output.clone();
        for i in (lowest..layers.len()).rev() {
            let layer = &layers[i];
            let need_in = i > lowest;
            let cache = &caches[i - self.start];
            match (&layer.kind, cache) {
                (LayerKind::Conv(c), Cache::Conv { cols, in_shape }) => {
                    let mut pg = ParamGrad {
                        weight: vec![T::zero(); c.weight.len()],
                        bias: vec![T::zero(); c.bias.len()],
                    };
                    let gi =
                        c.backward(cols, in_shape, &g, &mut pg.weight, &mut pg.bias, need_in)?;
                    if layer.trainable {
                        grads[i] = Some(pg);
                    }
                    if let Some(gi) = gi {
                        g = gi;
                    }
                }
                (LayerKind::Dense(d), Cache::Dense { input }) => {
                    let mut pg = ParamGrad {
                        weight: vec![T::zero(); d.weight.len()],
                        bias: vec![T::zero(); d.bias.len()],
                    };
                    let gi = d.backward(input, &g, &mut pg.weight, &mut pg.bias, need_in)?;
                    if layer.trainable {
                        grads[i] = Some(pg);
                    }
                    if let Some(gi) = gi {
                        g = gi;
                    }
                }
                (LayerKind::Relu, Cache::Relu { out }) => g = ops::relu_backward(out, &g),
                (LayerKind::MaxPool2, Cache::Pool { argmax, in_shape }) => {
                    g = ops::maxpool2_backward(in_shape, argmax, &g);
                }
                (LayerKind::Flatten, Cache::Flatten { in_shape }) => {
                    g = g.reshape(in_shape.clone())?
                }
                (LayerKind::Dropout(_), Cache::Dropout { mask }) => {
                    if let Some(mask) = mask {
                        for (gv, &m) in g.data_mut().iter_mut().zip(mask) {
                            *gv = *gv * m;
                        }
                    }
                }
                _ => unreachable!("cache recorded for a different layer kind"),
            }
        }
        Ok(Gradients { layers: grads })
    }
}
