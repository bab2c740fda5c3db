//! Covariance-matrix CNN: architecture, offline training, pilot-based
//! fine-tuning of the dense head, and score-ratio detection.

pub mod checkpoint;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{to_feature_tensor, FeatureTensor, SampleCovariance};
use crate::nn::{
    softmax, softmax_cross_entropy_batch, AdamConfig, AdamState, Conv2d, Dense, Dropout,
    FreezeMask, Graph, LayerKind, Mode, Network, Tensor,
};
use crate::rng::seeded;
use crate::sim::Bit;

pub const CONV_CHANNELS: usize = 32;
pub const KERNEL: usize = 3;
pub const HIDDEN: usize = 128;
pub const CLASSES: usize = 2;
pub const D1_RATE: f64 = 0.5;
pub const D2_RATE: f64 = 0.25;

/// Layer names, in network order.
pub const LAYER_NAMES: [&str; 11] = [
    "C1", "C1.relu", "C2", "C2.relu", "S1", "C3", "D1", "F1", "F1.relu", "D2", "F2",
];

/// Shape bookkeeping for an `M`-antenna model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmnetArchitecture {
    pub antennas: usize,
}

impl CmnetArchitecture {
    pub fn new(antennas: usize) -> Result<Self> {
        if antennas < 4 || !antennas.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "cmnet needs an even antenna count of at least 4, got {antennas}"
            )));
        }
        Ok(Self { antennas })
    }

    /// Length of the flattened pooled feature map, `32·(M/2)²`.
    pub fn flatten_len(&self) -> usize {
        let half = self.antennas / 2;
        CONV_CHANNELS * half * half
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [2, self.antennas, self.antennas]
    }

    /// Network with zero parameters and the canonical layer order.
    pub fn zeros(&self) -> Network<f32> {
        self.assemble(
            Conv2d::zeros(2, CONV_CHANNELS, KERNEL),
            Conv2d::zeros(CONV_CHANNELS, CONV_CHANNELS, KERNEL),
            Dense::zeros(self.flatten_len(), HIDDEN),
            Dense::zeros(HIDDEN, CLASSES),
        )
    }

    pub fn random(&self, rng: &mut dyn RngCore) -> Network<f32> {
        let c1 = Conv2d::kaiming(2, CONV_CHANNELS, KERNEL, rng);
        let c2 = Conv2d::kaiming(CONV_CHANNELS, CONV_CHANNELS, KERNEL, rng);
        let f1 = Dense::kaiming(self.flatten_len(), HIDDEN, rng);
        let f2 = Dense::kaiming(HIDDEN, CLASSES, rng);
        self.assemble(c1, c2, f1, f2)
    }

    fn assemble(
        &self,
        c1: Conv2d<f32>,
        c2: Conv2d<f32>,
        f1: Dense<f32>,
        f2: Dense<f32>,
    ) -> Network<f32> {
        let mut n = Network::new();
        n.push("C1", LayerKind::Conv(c1))
            .push("C1.relu", LayerKind::Relu)
            .push("C2", LayerKind::Conv(c2))
            .push("C2.relu", LayerKind::Relu)
            .push("S1", LayerKind::MaxPool2)
            .push("C3", LayerKind::Flatten)
            .push("D1", LayerKind::Dropout(Dropout { rho: D1_RATE }))
            .push("F1", LayerKind::Dense(f1))
            .push("F1.relu", LayerKind::Relu)
            .push("D2", LayerKind::Dropout(Dropout { rho: D2_RATE }))
            .push("F2", LayerKind::Dense(f2));
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Fresh,
    Pretrained,
    Transferred,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Fresh => "fresh",
            Stage::Pretrained => "pretrained",
            Stage::Transferred => "transferred",
        }
    }
}

/// Where a model's parameters came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    /// Seed of the initial weights.
    pub seed: u64,
    /// Identifiers of the datasets trained on, oldest first.
    pub datasets: Vec<String>,
    /// Mean loss over the last training epoch.
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

/// Covariance features with tag-bit labels.
#[derive(Debug, Clone)]
pub struct LabeledCovarianceSet {
    pub domain: Domain,
    pub id: String,
    pub features: Vec<FeatureTensor>,
    pub labels: Vec<Bit>,
}

impl LabeledCovarianceSet {
    pub fn new(domain: Domain, id: impl Into<String>) -> Self {
        Self {
            domain,
            id: id.into(),
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, feature: FeatureTensor, label: Bit) {
        self.features.push(feature);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Fraction of examples labelled 1.
    pub fn ones_fraction(&self) -> f64 {
        self.labels.iter().filter(|&&b| b == 1).count() as f64 / self.len().max(1) as f64
    }
}

/// Output index of a bit under the one-hot convention (index 0 is H1).
pub fn class_index(bit: Bit) -> usize {
    if bit == 1 {
        0
    } else {
        1
    }
}

/// Minibatch schedule for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// First layer updated during fine-tuning; everything before it is frozen.
    #[serde(default = "default_boundary")]
    pub freeze_boundary: String,
}

fn default_boundary() -> String {
    "F1".into()
}

/// `TrainConfig` with every field optional, for layering a TOML document
/// over stage defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub freeze_boundary: Option<String>,
}

impl TrainConfig {
    pub fn offline_default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            lr: 1e-3,
            seed: 1,
            freeze_boundary: default_boundary(),
        }
    }

    pub fn transfer_default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr: 1e-4,
            seed: 2,
            freeze_boundary: default_boundary(),
        }
    }

    pub fn apply(mut self, o: &TrainOverrides) -> Self {
        if let Some(v) = o.epochs {
            self.epochs = v;
        }
        if let Some(v) = o.batch_size {
            self.batch_size = v;
        }
        if let Some(v) = o.lr {
            self.lr = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.freeze_boundary {
            self.freeze_boundary = v.clone();
        }
        self
    }

    /// Parses a TOML document layered over `base`.
    pub fn from_toml(text: &str, base: Self) -> Result<Self> {
        let o: TrainOverrides = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg = base.apply(&o);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !LAYER_NAMES.contains(&self.freeze_boundary.as_str()) {
            return Err(Error::invalid(format!(
                "unknown freeze boundary layer {:?}",
                self.freeze_boundary
            )));
        }
        Ok(())
    }
}

/// Per-epoch mean training losses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// A detector decision with the score ratio behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bit: Bit,
    /// `score(H1) / score(H0)`.
    pub ratio: f64,
}

impl Detection {
    /// Decision rule on a score pair: 1 iff the ratio exceeds 1.
    pub fn from_scores(scores: [f64; 2]) -> Self {
        let ratio = scores[0] / scores[1];
        Self {
            bit: (ratio > 1.0) as Bit,
            ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmnetModel {
    arch: CmnetArchitecture,
    net: Network<f32>,
    stage: Stage,
    provenance: Provenance,
    /// Fixed scalar applied to every feature entry before the first layer.
    input_gain: f64,
}

impl CmnetModel {
    /// Fresh model with Kaiming-initialised weights drawn from `seed`.
    pub fn build(antennas: usize, seed: u64) -> Result<Self> {
        let arch = CmnetArchitecture::new(antennas)?;
        let net = arch.random(&mut seeded(seed));
        Ok(Self {
            arch,
            net,
            stage: Stage::Fresh,
            provenance: Provenance {
                seed,
                ..Provenance::default()
            },
            input_gain: 1.0,
        })
    }

    pub(crate) fn from_parts(
        arch: CmnetArchitecture,
        net: Network<f32>,
        stage: Stage,
        provenance: Provenance,
        input_gain: f64,
    ) -> Self {
        Self {
            arch,
            net,
            stage,
            provenance,
            input_gain,
        }
    }

    pub fn input_gain(&self) -> f64 {
        self.input_gain
    }

    /// Sets the constant input gain of a fresh model. A scalar gain keeps
    /// the trunk positively homogeneous in the covariance.
    pub fn with_input_gain(mut self, gain: f64) -> Result<Self> {
        if self.stage != Stage::Fresh {
            return Err(Error::WrongStage {
                expected: Stage::Fresh.label(),
                actual: self.stage.label(),
            });
        }
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::invalid(format!(
                "input gain must be positive and finite, got {gain}"
            )));
        }
        self.input_gain = gain;
        Ok(self)
    }

    pub fn architecture(&self) -> CmnetArchitecture {
        self.arch
    }

    pub fn antennas(&self) -> usize {
        self.arch.antennas
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<f32> {
        &mut self.net
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn freeze_mask(&self) -> FreezeMask {
        self.net.freeze_mask()
    }

    fn check_feature(&self, f: &FeatureTensor) -> Result<()> {
        if f.antennas() != self.arch.antennas {
            return Err(Error::DimensionMismatch {
                expected: format!("{m}x{m}x2 feature", m = self.arch.antennas),
                actual: format!("{m}x{m}x2", m = f.antennas()),
            });
        }
        Ok(())
    }

    fn batch_tensor(&self, features: &[&FeatureTensor]) -> Result<Tensor<f32>> {
        let mut data =
            Vec::with_capacity(features.len() * 2 * self.arch.antennas * self.arch.antennas);
        for f in features {
            self.check_feature(f)?;
            data.extend(f.as_slice().iter().map(|&v| (v * self.input_gain) as f32));
        }
        let [c, h, w] = self.arch.input_shape();
        Ok(Tensor::new(vec![features.len(), c, h, w], data)?)
    }

    /// Per-example `[score(H1), score(H0)]` in evaluation mode.
    pub fn forward_batch(&self, features: &[&FeatureTensor]) -> Result<Vec<[f64; 2]>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let logits = self
            .net
            .infer(&self.batch_tensor(features)?, 0..self.net.len())?;
        Ok(logit_scores(&logits))
    }

    pub fn forward(&self, feature: &FeatureTensor) -> Result<[f64; 2]> {
        Ok(self.forward_batch(&[feature])?[0])
    }

    pub fn detect(&self, r: &SampleCovariance) -> Result<Detection> {
        Ok(Detection::from_scores(self.forward(&to_feature_tensor(r))?))
    }

    pub fn detect_batch(&self, features: &[&FeatureTensor]) -> Result<Vec<Detection>> {
        Ok(self
            .forward_batch(features)?
            .into_iter()
            .map(Detection::from_scores)
            .collect())
    }

    /// Mean cross-entropy of the evaluation-mode model on `data`.
    pub fn loss(&self, data: &LabeledCovarianceSet) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let refs: Vec<&FeatureTensor> = data.features.iter().collect();
        let mut total = 0.0;
        for (chunk, labels) in refs.chunks(256).zip(data.labels.chunks(256)) {
            let logits = self
                .net
                .infer(&self.batch_tensor(chunk)?, 0..self.net.len())?;
            let idx: Vec<usize> = labels.iter().map(|&b| class_index(b)).collect();
            let (l, _) = softmax_cross_entropy_batch(&logits, &idx)?;
            total += l as f64 * chunk.len() as f64;
        }
        Ok(total / data.len() as f64)
    }

    /// Fraction of `data` classified correctly.
    pub fn accuracy(&self, data: &LabeledCovarianceSet) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let refs: Vec<&FeatureTensor> = data.features.iter().collect();
        let mut right = 0usize;
        for (chunk, labels) in refs.chunks(256).zip(data.labels.chunks(256)) {
            for (d, &b) in self.detect_batch(chunk)?.iter().zip(labels) {
                right += (d.bit == b) as usize;
            }
        }
        Ok(right as f64 / data.len() as f64)
    }

    /// Offline stage: full-network minibatch Adam on a source-domain set.
    pub fn train_offline(
        &mut self,
        data: &LabeledCovarianceSet,
        cfg: &TrainConfig,
    ) -> Result<TrainReport> {
        if self.stage != Stage::Fresh {
            return Err(Error::WrongStage {
                expected: Stage::Fresh.label(),
                actual: self.stage.label(),
            });
        }
        if data.domain != Domain::Source {
            return Err(Error::invalid(
                "offline training expects a source-domain set",
            ));
        }
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        cfg.validate()?;
        let len = self.net.len();
        self.net.set_trainable(0..len, true);
        let inputs = self.batch_tensor(&data.features.iter().collect::<Vec<_>>())?;
        let report = train_from(&mut self.net, 0, &inputs, &data.labels, cfg)?;
        self.stage = Stage::Pretrained;
        self.provenance.datasets.push(data.id.clone());
        self.provenance.final_loss = report.final_loss();
        Ok(report)
    }

    /// Transfer stage: freezes every layer before `cfg.freeze_boundary` and
    /// fine-tunes the rest on target-domain pilots.
    ///
    /// The frozen prefix is deterministic, so its output is computed once per
    /// example and training runs on the cached features only.
    pub fn transfer_finetune(
        &mut self,
        pilots: &LabeledCovarianceSet,
        cfg: &TrainConfig,
    ) -> Result<TrainReport> {
        if self.stage == Stage::Fresh {
            return Err(Error::WrongStage {
                expected: "pretrained or transferred",
                actual: self.stage.label(),
            });
        }
        if pilots.domain != Domain::Target {
            return Err(Error::invalid("transfer expects a target-domain set"));
        }
        if pilots.is_empty() {
            return Err(Error::EmptyDataset);
        }
        cfg.validate()?;
        let boundary = self
            .net
            .layer_index(&cfg.freeze_boundary)
            .ok_or_else(|| Error::invalid(format!("unknown layer {}", cfg.freeze_boundary)))?;
        let len = self.net.len();
        self.net.set_trainable(0..boundary, false);
        self.net.set_trainable(boundary..len, true);
        let cache_end = self
            .net
            .layers()
            .iter()
            .position(|l| matches!(l.kind, LayerKind::Dropout(_)))
            .unwrap_or(len)
            .min(boundary);
        let inputs = self.batch_tensor(&pilots.features.iter().collect::<Vec<_>>())?;
        let mut cached = Vec::with_capacity(inputs.batch());
        let mut shape = Vec::new();
        for start in (0..inputs.batch()).step_by(256) {
            let end = (start + 256).min(inputs.batch());
            let items: Vec<&[f32]> = (start..end).map(|i| inputs.item(i)).collect();
            let chunk = Tensor::stack(&inputs.shape()[1..], &items)?;
            let out = self.net.infer(&chunk, 0..cache_end)?;
            shape = out.shape()[1..].to_vec();
            cached.extend_from_slice(out.data());
        }
        let mut full_shape = vec![inputs.batch()];
        full_shape.extend(shape);
        let trunk = Tensor::new(full_shape, cached)?;
        let report = train_from(&mut self.net, cache_end, &trunk, &pilots.labels, cfg)?;
        self.stage = Stage::Transferred;
        self.provenance.datasets.push(pilots.id.clone());
        self.provenance.final_loss = report.final_loss();
        Ok(report)
    }

    /// Same model with its stage label overridden.
    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }
}

fn logit_scores(logits: &Tensor<f32>) -> Vec<[f64; 2]> {
    (0..logits.batch())
        .map(|i| {
            let l = logits.item(i);
            let p = softmax(&[l[0] as f64, l[1] as f64]);
            [p[0], p[1]]
        })
        .collect()
}

/// Minibatch Adam from layer `start`, feeding `inputs` (the activations
/// entering that layer).
fn train_from(
    net: &mut Network<f32>,
    start: usize,
    inputs: &Tensor<f32>,
    labels: &[Bit],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let n = inputs.batch();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} labels"),
            actual: format!("{}", labels.len()),
        });
    }
    let mut rng = seeded(cfg.seed);
    let mut adam = AdamState::new(net, AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();
    let item_shape = inputs.shape()[1..].to_vec();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<&[f32]> = batch.iter().map(|&i| inputs.item(i)).collect();
            let x = Tensor::stack(&item_shape, &items)?;
            let idx: Vec<usize> = batch.iter().map(|&i| class_index(labels[i])).collect();
            let grads = {
                let mut g = Graph::new(net);
                let logits = g.forward(&x, start, Mode::Train, &mut rng)?;
                let (loss, dlogits) = softmax_cross_entropy_batch(&logits, &idx)?;
                total += loss as f64 * batch.len() as f64;
                g.backward(&dlogits)?
            };
            adam.step(net, &grads)?;
        }
        let mean = total / n as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        report.epoch_losses.push(mean);
    }
    Ok(report)
}
