//! Monte Carlo BER sweeps.
//!
//! A sweep point is split into work items of `transfer_every` frames that
//! share one channel draw. Item `(j, q)` derives every random quantity from
//! streams addressed by `(seed, j, q, ...)`, so the result is the same for
//! any worker count.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{build_offline_dataset, build_online_dataset, PILOT_AUGMENT_VAR};
use super::output::{BerPoint, DetectorKind, SweepVar};
use super::pathloss::{zeta_from_distance, PathLossParams};
use crate::cmnet::checkpoint::load_checkpoint;
use crate::cmnet::{CmnetModel, Provenance, TrainConfig, TrainOverrides};
use crate::detectors::{
    calibrate_ed_threshold, Detector, GaussianLrtDetector, ModulatedLrtDetector,
};
use crate::error::{Error, Result};
use crate::features::block_feature;
use crate::rng::stream;
use crate::sim::{draw_channel, generate_frame, linear_to_db, SimParams, SourceKind};

// stream coordinate tags
const TAG_CHANNEL: u64 = 0;
const TAG_CALIBRATION: u64 = 1;
const TAG_TRANSFER: u64 = 2;
const TAG_FRAME: u64 = 16;
const TAG_PRETRAIN: u64 = 0xC0FFEE;

/// Offline stage run inside a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainPlan {
    /// Source-domain examples per (M, N).
    #[serde(default = "default_offline_count")]
    pub count: usize,
    /// Offline SNR grid; defaults to the SNRs of the sweep points sharing
    /// (M, N).
    #[serde(default)]
    pub snr_db: Option<Vec<f64>>,
    #[serde(default)]
    pub train: TrainOverrides,
}

fn default_offline_count() -> usize {
    10_000
}

impl Default for PretrainPlan {
    fn default() -> Self {
        Self {
            count: default_offline_count(),
            snr_db: None,
            train: TrainOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmnetPlan {
    /// Pretrained model file; takes precedence over `pretrain`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub pretrain: Option<PretrainPlan>,
    #[serde(default)]
    pub transfer: TrainOverrides,
    #[serde(default = "default_online_count")]
    pub online_count: usize,
    #[serde(default = "default_augment")]
    pub augment_var: f64,
}

fn default_online_count() -> usize {
    2000
}

fn default_augment() -> f64 {
    PILOT_AUGMENT_VAR
}

impl Default for CmnetPlan {
    fn default() -> Self {
        Self {
            checkpoint: None,
            pretrain: None,
            transfer: TrainOverrides::default(),
            online_count: default_online_count(),
            augment_var: default_augment(),
        }
    }
}

impl CmnetPlan {
    pub fn transfer_config(&self) -> TrainConfig {
        TrainConfig::transfer_default().apply(&self.transfer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sweep: SweepVar,
    pub grid: Vec<f64>,
    /// Operating point that the sweep variable overrides.
    pub base: SimParams,
    pub detectors: Vec<DetectorKind>,
    /// Decoded data symbols per grid point.
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Source samples per frame, `N·T`.
    #[serde(default = "default_frame_samples")]
    pub frame_samples: usize,
    #[serde(default = "default_pilots")]
    pub pilots: usize,
    /// Frames sharing one channel draw and one fine-tuned model.
    #[serde(default = "default_one")]
    pub transfer_every: usize,
    #[serde(default = "default_calibration")]
    pub ed_calibration_trials: usize,
    #[serde(default)]
    pub path_loss: PathLossParams,
    #[serde(default)]
    pub cmnet: CmnetPlan,
}

fn default_frame_samples() -> usize {
    5000
}

fn default_pilots() -> usize {
    10
}

fn default_one() -> usize {
    1
}

fn default_calibration() -> usize {
    1000
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::invalid("sweep grid is empty"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.detectors.is_empty() {
            return Err(Error::invalid("no detectors selected"));
        }
        if self.transfer_every == 0 {
            return Err(Error::invalid("transfer_every must be at least 1"));
        }
        if self.detectors.contains(&DetectorKind::LrtModulated)
            && self.base.source == SourceKind::Gaussian
        {
            return Err(Error::invalid("the modulated LRT needs a PSK source"));
        }
        self.path_loss.validate()?;
        for &v in &self.grid {
            let p = self.point_params(v)?;
            let t = self.frame_symbols(&p);
            if t <= self.pilots {
                return Err(Error::invalid(format!(
                    "frame of {t} symbols leaves no data after {} pilots",
                    self.pilots
                )));
            }
        }
        Ok(())
    }

    /// Operating point at grid value `v`.
    pub fn point_params(&self, v: f64) -> Result<SimParams> {
        let mut p = self.base.clone();
        let count = |v: f64, what: &str| -> Result<usize> {
            if v < 1.0 || v.fract() != 0.0 {
                return Err(Error::invalid(format!(
                    "{what} grid value {v} is not a positive integer"
                )));
            }
            Ok(v as usize)
        };
        match self.sweep {
            SweepVar::SnrDb => p.snr_db = v,
            SweepVar::Samples => p.samples_per_symbol = count(v, "samples")?,
            SweepVar::Antennas => p.antennas = count(v, "antenna")?,
            SweepVar::ZetaDb => p.zeta_db = v,
            SweepVar::DistanceM => {
                p.zeta_db = linear_to_db(zeta_from_distance(&self.path_loss, v)?)
            }
        }
        p.validate()?;
        Ok(p)
    }

    /// Symbols per frame `T = frame_samples / N`.
    pub fn frame_symbols(&self, p: &SimParams) -> usize {
        self.frame_samples / p.samples_per_symbol
    }
}

/// Pretrained model used at one (M, N).
#[derive(Debug, Clone)]
pub struct PretrainRecord {
    pub antennas: usize,
    pub samples_per_symbol: usize,
    pub provenance: Provenance,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<BerPoint>,
    pub pretrained: Vec<PretrainRecord>,
}

/// Pretrained models keyed by (M, N).
pub type ModelBank = BTreeMap<(usize, usize), CmnetModel>;

/// Loads or trains the models a CMNet sweep needs.
/// Reciprocal of the mean per-antenna received power over the training grid,
/// so covariance entries reach the first layer at order one.
pub fn input_gain_for(grid: &[SimParams]) -> f64 {
    let power: f64 = grid
        .iter()
        .map(|p| p.source_power() + p.sigma_u2)
        .sum::<f64>()
        / grid.len().max(1) as f64;
    if power > 0.0 && power.is_finite() {
        1.0 / power
    } else {
        1.0
    }
}

pub fn prepare_models(cfg: &ExperimentConfig) -> Result<ModelBank> {
    let mut bank = ModelBank::new();
    if !cfg.detectors.contains(&DetectorKind::Cmnet) {
        return Ok(bank);
    }
    let mut groups: BTreeMap<(usize, usize), Vec<SimParams>> = BTreeMap::new();
    for &v in &cfg.grid {
        let p = cfg.point_params(v)?;
        groups
            .entry((p.antennas, p.samples_per_symbol))
            .or_default()
            .push(p);
    }
    if let Some(path) = &cfg.cmnet.checkpoint {
        let model = load_checkpoint(path)?;
        for &(m, n) in groups.keys() {
            if model.antennas() != m {
                return Err(Error::DimensionMismatch {
                    expected: format!("model for M={m}"),
                    actual: format!(
                        "checkpoint {} is for M={}",
                        path.display(),
                        model.antennas()
                    ),
                });
            }
            bank.insert((m, n), model.clone());
        }
        return Ok(bank);
    }
    let plan = cfg
        .cmnet
        .pretrain
        .as_ref()
        .ok_or(Error::MissingCheckpoint)?;
    let train = TrainConfig::offline_default().apply(&plan.train);
    for ((m, n), points) in groups {
        let grid: Vec<SimParams> = match &plan.snr_db {
            Some(snrs) => snrs
                .iter()
                .map(|&s| SimParams {
                    snr_db: s,
                    ..points[0].clone()
                })
                .collect(),
            None => points,
        };
        let mut rng = stream(cfg.seed, &[TAG_PRETRAIN, m as u64, n as u64]);
        let data_seed: u64 = rng.random();
        let model_seed: u64 = rng.random();
        let data = build_offline_dataset(data_seed, &grid, plan.count)?;
        let gain = input_gain_for(&grid);
        let mut model = CmnetModel::build(m, model_seed)?.with_input_gain(gain)?;
        let report = model.train_offline(
            &data,
            &TrainConfig {
                seed: train.seed ^ model_seed,
                ..train.clone()
            },
        )?;
        log::info!(
            "pretrained M={m} N={n} on {} examples, input gain {gain:.3e}, final loss {:.4}",
            data.len(),
            report.final_loss().unwrap_or(f64::NAN)
        );
        bank.insert((m, n), model);
    }
    Ok(bank)
}

struct WorkItem {
    point: usize,
    group: u64,
    /// Data symbols to decode in each frame of the group.
    frames: Vec<usize>,
}

fn plan_items(cfg: &ExperimentConfig, params: &[SimParams]) -> Vec<WorkItem> {
    let mut items = Vec::new();
    for (j, p) in params.iter().enumerate() {
        let per_frame = (cfg.frame_symbols(p) - cfg.pilots) as u64;
        let mut remaining = cfg.trials;
        let mut group = 0u64;
        while remaining > 0 {
            let mut frames = Vec::with_capacity(cfg.transfer_every);
            while frames.len() < cfg.transfer_every && remaining > 0 {
                let d = remaining.min(per_frame);
                frames.push(d as usize);
                remaining -= d;
            }
            items.push(WorkItem {
                point: j,
                group,
                frames,
            });
            group += 1;
        }
    }
    items
}

fn run_item(
    cfg: &ExperimentConfig,
    p: &SimParams,
    item: &WorkItem,
    model: Option<&CmnetModel>,
) -> Result<Vec<u64>> {
    let (j, q) = (item.point as u64, item.group);
    let ch = draw_channel(&mut stream(cfg.seed, &[j, q, TAG_CHANNEL]), p)?;
    let mut errors = vec![0u64; cfg.detectors.len()];

    let gaussian = cfg
        .detectors
        .contains(&DetectorKind::LrtGaussian)
        .then(|| GaussianLrtDetector::from_channel(&ch, p))
        .transpose()?;
    let modulated = cfg
        .detectors
        .contains(&DetectorKind::LrtModulated)
        .then(|| ModulatedLrtDetector::from_channel(&ch, p))
        .transpose()?;
    let energy = cfg
        .detectors
        .contains(&DetectorKind::Energy)
        .then(|| {
            calibrate_ed_threshold(
                &ch,
                p,
                cfg.ed_calibration_trials,
                &mut stream(cfg.seed, &[j, q, TAG_CALIBRATION]),
            )
        })
        .transpose()?;
    let mut tuned: Option<CmnetModel> = None;

    for (i, &data_symbols) in item.frames.iter().enumerate() {
        let mut rng = stream(cfg.seed, &[j, q, TAG_FRAME + i as u64]);
        let frame = generate_frame(
            &mut rng,
            &ch,
            p,
            cfg.pilots + data_symbols,
            cfg.pilots,
            None,
        )?;
        if let (Some(base), None) = (model, &tuned) {
            // fine-tune on this group's first frame; only its pilots enter the target set
            let online = build_online_dataset(
                &mut rng,
                &frame,
                cfg.cmnet.online_count,
                cfg.cmnet.augment_var,
            )?;
            let mut m = base.clone();
            let mut tcfg = cfg.cmnet.transfer_config();
            tcfg.seed ^= stream(cfg.seed, &[j, q, TAG_TRANSFER]).random::<u64>();
            m.transfer_finetune(&online, &tcfg)?;
            tuned = Some(m);
        }
        let cm_bits = match &tuned {
            Some(m) => {
                let feats = frame
                    .data()
                    .iter()
                    .map(|b| block_feature(&b.x))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<_> = feats.iter().collect();
                Some(m.detect_batch(&refs)?)
            }
            None => None,
        };
        for (s, block) in frame.data().iter().enumerate() {
            for (k, det) in cfg.detectors.iter().enumerate() {
                let bit = match det {
                    DetectorKind::LrtGaussian => gaussian.as_ref().unwrap().decide(&block.x),
                    DetectorKind::LrtModulated => modulated.as_ref().unwrap().decide(&block.x),
                    DetectorKind::Energy => energy.as_ref().unwrap().decide(&block.x),
                    DetectorKind::Cmnet => cm_bits.as_ref().unwrap()[s].bit,
                };
                errors[k] += (bit != block.label) as u64;
            }
        }
    }
    Ok(errors)
}

/// Runs the sweep on a pool of `workers` threads using pretrained `models`.
pub fn run_ber_sweep_with(
    cfg: &ExperimentConfig,
    models: &ModelBank,
    workers: usize,
) -> Result<SweepResult> {
    cfg.validate()?;
    let params = cfg
        .grid
        .iter()
        .map(|&v| cfg.point_params(v))
        .collect::<Result<Vec<_>>>()?;
    let wants_cmnet = cfg.detectors.contains(&DetectorKind::Cmnet);
    let point_models: Vec<Option<&CmnetModel>> = params
        .iter()
        .map(|p| {
            if !wants_cmnet {
                return Ok(None);
            }
            let m = models
                .get(&(p.antennas, p.samples_per_symbol))
                .ok_or(Error::MissingCheckpoint)?;
            if m.antennas() != p.antennas {
                return Err(Error::DimensionMismatch {
                    expected: format!("model for M={}", p.antennas),
                    actual: format!("M={}", m.antennas()),
                });
            }
            Ok(Some(m))
        })
        .collect::<Result<_>>()?;
    let items = plan_items(cfg, &params);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Vec<u64>> = pool.install(|| {
        items
            .par_iter()
            .map(|it| run_item(cfg, &params[it.point], it, point_models[it.point]))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut totals = vec![vec![0u64; cfg.detectors.len()]; params.len()];
    for (it, errs) in items.iter().zip(&results) {
        for (t, e) in totals[it.point].iter_mut().zip(errs) {
            *t += e;
        }
    }
    let mut points = Vec::new();
    for (j, &v) in cfg.grid.iter().enumerate() {
        for (k, &det) in cfg.detectors.iter().enumerate() {
            points.push(BerPoint {
                detector: det,
                sweep_var: cfg.sweep,
                sweep_value: v,
                trials: cfg.trials,
                errors: totals[j][k],
            });
        }
    }
    let pretrained = models
        .iter()
        .map(|(&(m, n), model)| PretrainRecord {
            antennas: m,
            samples_per_symbol: n,
            provenance: model.provenance().clone(),
            final_loss: model.provenance().final_loss,
        })
        .collect();
    Ok(SweepResult { points, pretrained })
}

/// Prepares models (checkpoint or inline pretraining) and runs the sweep.
pub fn run_ber_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<SweepResult> {
    cfg.validate()?;
    let models = prepare_models(cfg)?;
    run_ber_sweep_with(cfg, &models, workers)
}

/// Decodes the data symbols of a single frame at grid value `value`.
pub fn run_single_frame(
    cfg: &ExperimentConfig,
    value: f64,
    models: &ModelBank,
) -> Result<Vec<BerPoint>> {
    let mut one = cfg.clone();
    one.grid = vec![value];
    let p = one.point_params(value)?;
    one.trials = one.frame_symbols(&p).saturating_sub(one.pilots) as u64;
    one.transfer_every = 1;
    Ok(run_ber_sweep_with(&one, models, 1)?.points)
}
