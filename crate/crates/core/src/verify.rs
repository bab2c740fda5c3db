//! Numerical checks of the network implementation.

use rand::seq::index::sample;
use rand::Rng;

use crate::cmnet::{class_index, CmnetModel, Domain, LabeledCovarianceSet, TrainConfig};
use crate::detectors::{energy_statistic, EnergyDetector};
use crate::error::{Error, Result};
use crate::features::{block_feature, FeatureTensor};
use crate::linalg::CMatrix;
use crate::nn::{
    maxpool2, relu, softmax_cross_entropy_batch, Graph, LayerKind, Mode, Network, Tensor,
};
use crate::rng::{seeded, stream};
use crate::sim::{complex_normal, draw_channel, generate_block, Bit, SimParams, SourceKind};

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub antennas: usize,
    pub batch: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Entries probed per tensor; `None` probes all of them.
    pub samples_per_tensor: Option<usize>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            antennas: 8,
            batch: 4,
            seed: 0,
            step: 1e-4,
            tolerance: 1e-3,
            samples_per_tensor: Some(256),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub layer: String,
    pub param: &'static str,
    pub len: usize,
    pub checked: usize,
    /// Probes whose ±step perturbation switched a ReLU or pooling decision;
    /// these were replaced by other entries.
    pub kinks_skipped: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn random_batch(cfg: &GradcheckConfig) -> Result<(Tensor<f64>, Vec<usize>)> {
    let p = SimParams::new(cfg.antennas, 16, 4.0, -10.0, SourceKind::QPSK);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..cfg.batch {
        let mut rng = stream(cfg.seed, &[1, i as u64]);
        let bit = (i % 2 == 0) as Bit;
        let ch = draw_channel(&mut rng, &p)?;
        let f = block_feature(&generate_block(&mut rng, &ch, &p, bit)?.x)?;
        data.extend_from_slice(f.as_slice());
        labels.push(class_index(bit));
    }
    let m = cfg.antennas;
    Ok((Tensor::new(vec![cfg.batch, 2, m, m], data)?, labels))
}

/// Mean training-mode loss; dropout masks come from `seeded(mask_seed)` so
/// that every evaluation sees the same masks.
fn loss_at(net: &Network<f64>, x: &Tensor<f64>, labels: &[usize], mask_seed: u64) -> Result<f64> {
    let mut g = Graph::new(net);
    let logits = g.forward(x, 0, Mode::Train, &mut seeded(mask_seed))?;
    Ok(softmax_cross_entropy_batch(&logits, labels)?.0)
}

/// ReLU signs and max-pool winners of a training-mode pass.
fn activation_pattern(net: &Network<f64>, x: &Tensor<f64>, mask_seed: u64) -> Result<Vec<u32>> {
    let mut rng = seeded(mask_seed);
    let mut x = x.clone();
    let mut pattern = Vec::new();
    for layer in net.layers() {
        x = match &layer.kind {
            LayerKind::Conv(c) => c.forward(&x, false)?.0,
            LayerKind::Relu => {
                pattern.extend(x.data().iter().map(|&v| (v > 0.0) as u32));
                relu(&x)
            }
            LayerKind::MaxPool2 => {
                let (y, arg) = maxpool2(&x)?;
                pattern.extend(arg);
                y
            }
            LayerKind::Flatten => {
                let (b, l) = (x.batch(), x.item_len());
                x.reshape(vec![b, l])?
            }
            LayerKind::Dropout(d) => d.forward(&x, Mode::Train, &mut rng).0,
            LayerKind::Dense(d) => d.forward(&x)?,
        };
    }
    Ok(pattern)
}

/// Analytic gradients of a double-precision CMNet against central
/// finite differences, for every parameter tensor.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let model = CmnetModel::build(cfg.antennas, cfg.seed)?;
    let mut net: Network<f64> = model.network().cast();
    let len = net.len();
    net.set_trainable(0..len, true);
    let (x, labels) = random_batch(cfg)?;
    let mask_seed = cfg.seed ^ 0x5eed;

    let grads = {
        let mut g = Graph::new(&net);
        let logits = g.forward(&x, 0, Mode::Train, &mut seeded(mask_seed))?;
        let (_, dl) = softmax_cross_entropy_batch(&logits, &labels)?;
        g.backward(&dl)?
    };

    let base_pattern = activation_pattern(&net, &x, mask_seed)?;
    let mut pick = seeded(cfg.seed ^ 0x91c4);
    let mut tensors = Vec::new();
    for li in 0..len {
        if !net.layer(li).kind.has_params() {
            continue;
        }
        let pg = grads
            .get(li)
            .ok_or_else(|| Error::invalid(format!("no gradient for layer {}", net.layer(li).name)))?
            .clone();
        for (which, analytic) in [("weight", &pg.weight), ("bias", &pg.bias)] {
            let n = analytic.len();
            // random probe order; stop once `want` kink-free entries are checked
            let want = cfg.samples_per_tensor.unwrap_or(n).min(n);
            let order = sample(&mut pick, n, n).into_vec();
            let mut worst = 0.0f64;
            let (mut checked, mut kinks) = (0, 0);
            for &i in &order {
                if checked == want {
                    break;
                }
                let orig = param(&mut net, li, which)[i];
                param(&mut net, li, which)[i] = orig + cfg.step;
                let up = loss_at(&net, &x, &labels, mask_seed)?;
                let up_kink = activation_pattern(&net, &x, mask_seed)? != base_pattern;
                param(&mut net, li, which)[i] = orig - cfg.step;
                let down = loss_at(&net, &x, &labels, mask_seed)?;
                let down_kink = activation_pattern(&net, &x, mask_seed)? != base_pattern;
                param(&mut net, li, which)[i] = orig;
                if up_kink || down_kink {
                    kinks += 1;
                    continue;
                }
                let numeric = (up - down) / (2.0 * cfg.step);
                worst = worst.max(relative_error(analytic[i], numeric));
                checked += 1;
            }
            tensors.push(TensorCheck {
                layer: net.layer(li).name.clone(),
                param: which,
                len: n,
                checked,
                kinks_skipped: kinks,
                max_rel_error: worst,
                passed: worst <= cfg.tolerance && checked > 0,
            });
        }
    }
    Ok(GradcheckReport { tensors })
}

fn param<'a>(net: &'a mut Network<f64>, layer: usize, which: &str) -> &'a mut Vec<f64> {
    let (w, b) = net
        .layer_mut(layer)
        .kind
        .params_mut()
        .expect("parameter layer");
    if which == "weight" {
        w
    } else {
        b
    }
}

/// Largest `|f(s·I) − s·f(I)|`, relative to `max|s·f(I)|`, over the scales,
/// for the bias-free clone of the convolutional trunk (layers up to F1).
pub fn homogeneity_error(model: &CmnetModel, scales: &[f64]) -> Result<f64> {
    let net: Network<f64> = model.network().cast::<f64>().without_biases();
    let end = net
        .layer_index("F1")
        .ok_or_else(|| Error::invalid("network has no F1 layer"))?;
    let m = model.antennas();
    let input = |s: f64| {
        Tensor::new(
            vec![1, 2, m, m],
            FeatureTensor::scaled_identity(m, s).as_slice().to_vec(),
        )
    };
    let base = net.infer(&input(1.0)?, 0..end)?;
    let mut worst = 0.0f64;
    for &s in scales {
        let out = net.infer(&input(s)?, 0..end)?;
        let peak = base
            .data()
            .iter()
            .fold(0.0f64, |a, &v| a.max((s * v).abs()))
            .max(f64::MIN_POSITIVE);
        let err = out
            .data()
            .iter()
            .zip(base.data())
            .fold(0.0f64, |a, (&o, &b)| a.max((o - s * b).abs()));
        worst = worst.max(err / peak);
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct AsymptoticConfig {
    pub antennas: usize,
    pub samples: usize,
    /// Per-entry variance under H1.
    pub sigma1_sq: f64,
    /// Per-entry variance under H0.
    pub sigma0_sq: f64,
    pub train_examples: usize,
    pub train: TrainConfig,
    pub trials: usize,
    pub seed: u64,
}

impl Default for AsymptoticConfig {
    fn default() -> Self {
        Self {
            antennas: 8,
            samples: 500,
            sigma1_sq: 1.25,
            sigma0_sq: 1.0,
            train_examples: 6000,
            train: TrainConfig {
                epochs: 8,
                ..TrainConfig::offline_default()
            },
            trials: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AsymptoticReport {
    /// Per-entry variance at which the model's score ratio crosses 1.
    pub implied_sigma_sq: f64,
    /// Matching threshold on the total block energy.
    pub energy_threshold: f64,
    pub agreement: f64,
    pub cmnet_ber: f64,
    pub energy_ber: f64,
    pub final_train_loss: Option<f64>,
}

fn diagonal_block<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize, var: f64) -> CMatrix {
    CMatrix::from_fn(m, n, |_, _| complex_normal(rng, var))
}

fn ratio_at(model: &CmnetModel, s: f64) -> Result<f64> {
    let [s1, s0] = model.forward(&FeatureTensor::scaled_identity(model.antennas(), s))?;
    Ok(s1 / s0)
}

/// Trains CMNet on i.i.d. blocks with covariance `σ1² I` versus `σ0² I` and
/// compares its decisions against energy thresholding at the variance where
/// the trained score ratio crosses 1.
pub fn asymptotic_equivalence(cfg: &AsymptoticConfig) -> Result<AsymptoticReport> {
    if !(cfg.sigma1_sq > cfg.sigma0_sq && cfg.sigma0_sq > 0.0) {
        return Err(Error::invalid("expected σ1² > σ0² > 0"));
    }
    let (m, n) = (cfg.antennas, cfg.samples);
    let var = |bit: Bit| {
        if bit == 1 {
            cfg.sigma1_sq
        } else {
            cfg.sigma0_sq
        }
    };
    let mut set = LabeledCovarianceSet::new(
        Domain::Source,
        format!(
            "diagonal:M={m}:N={n}:s1={}:s0={}:count={}",
            cfg.sigma1_sq, cfg.sigma0_sq, cfg.train_examples
        ),
    );
    for k in 0..cfg.train_examples {
        let bit = (k % 2 == 0) as Bit;
        let x = diagonal_block(&mut stream(cfg.seed, &[0, k as u64]), m, n, var(bit));
        set.push(block_feature(&x)?, bit);
    }
    let mut model = CmnetModel::build(m, cfg.seed)?;
    let report = model.train_offline(&set, &cfg.train)?;

    // ratio(s) is expected to rise through 1 between the two variances
    let (mut lo, mut hi) = (cfg.sigma0_sq, cfg.sigma1_sq);
    let width = hi - lo;
    for _ in 0..8 {
        if ratio_at(&model, lo)? <= 1.0 {
            break;
        }
        lo -= width;
    }
    for _ in 0..8 {
        if ratio_at(&model, hi)? > 1.0 {
            break;
        }
        hi += width;
    }
    if ratio_at(&model, lo)? > 1.0 || ratio_at(&model, hi)? <= 1.0 || lo <= 0.0 {
        return Err(Error::invalid(
            "trained model has no score crossing between the hypotheses",
        ));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ratio_at(&model, mid)? > 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let implied = 0.5 * (lo + hi);
    let gamma = implied * (m * n) as f64;
    let ed = EnergyDetector::new(gamma, true)?;

    let mut agree = 0usize;
    let mut cm_err = 0usize;
    let mut ed_err = 0usize;
    for t in 0..cfg.trials {
        let bit = (t % 2 == 0) as Bit;
        let x = diagonal_block(&mut stream(cfg.seed, &[1, t as u64]), m, n, var(bit));
        let c = model.detect_batch(&[&block_feature(&x)?])?[0].bit;
        let e = ed.decide_energy(energy_statistic(&x));
        agree += (c == e) as usize;
        cm_err += (c != bit) as usize;
        ed_err += (e != bit) as usize;
    }
    let t = cfg.trials as f64;
    Ok(AsymptoticReport {
        implied_sigma_sq: implied,
        energy_threshold: gamma,
        agreement: agree as f64 / t,
        cmnet_ber: cm_err as f64 / t,
        energy_ber: ed_err as f64 / t,
        final_train_loss: report.final_loss(),
    })
}
