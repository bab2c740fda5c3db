//! Named experiment families.

use super::output::{DetectorKind, SweepVar};
use super::pathloss::PathLossParams;
use super::sweep::{CmnetPlan, ExperimentConfig, PretrainPlan};
use crate::cmnet::TrainOverrides;
use crate::error::{Error, Result};
use crate::sim::{SimParams, SourceKind};

pub const PRESET_NAMES: [&str; 6] = ["fig7a", "fig7b", "fig8a", "fig8b", "fig9a", "fig9b"];

/// Desk-scale data symbols per grid point.
pub const DEFAULT_TRIALS: u64 = 100_000;

/// Fine-tuning schedule used by every preset.
pub fn preset_transfer() -> TrainOverrides {
    TrainOverrides {
        epochs: Some(2),
        lr: Some(1e-3),
        ..TrainOverrides::default()
    }
}

fn cmnet_plan() -> CmnetPlan {
    CmnetPlan {
        pretrain: Some(PretrainPlan::default()),
        transfer: preset_transfer(),
        ..CmnetPlan::default()
    }
}

fn config(
    sweep: SweepVar,
    grid: Vec<f64>,
    base: SimParams,
    detectors: Vec<DetectorKind>,
) -> ExperimentConfig {
    ExperimentConfig {
        sweep,
        grid,
        base,
        detectors,
        trials: DEFAULT_TRIALS,
        seed: 0,
        output: None,
        frame_samples: 5000,
        pilots: 10,
        transfer_every: 1,
        ed_calibration_trials: 1000,
        path_loss: PathLossParams::default(),
        cmnet: cmnet_plan(),
    }
}

fn qpsk_detectors() -> Vec<DetectorKind> {
    vec![
        DetectorKind::Cmnet,
        DetectorKind::Energy,
        DetectorKind::LrtModulated,
    ]
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let qpsk = |m, n, snr, zeta| SimParams::new(m, n, snr, zeta, SourceKind::QPSK);
    let snr_grid: Vec<f64> = (-1..=5).map(|k| 2.0 * k as f64).collect();
    let cfg = match name {
        "fig7a" => config(
            SweepVar::SnrDb,
            snr_grid,
            qpsk(8, 20, 0.0, -20.0),
            qpsk_detectors(),
        ),
        "fig7b" => config(
            SweepVar::SnrDb,
            snr_grid,
            SimParams::new(8, 20, 0.0, -20.0, SourceKind::Gaussian),
            vec![
                DetectorKind::Cmnet,
                DetectorKind::Energy,
                DetectorKind::LrtGaussian,
            ],
        ),
        "fig8a" => config(
            SweepVar::Samples,
            vec![5.0, 10.0, 20.0, 40.0],
            qpsk(8, 20, 6.0, -20.0),
            qpsk_detectors(),
        ),
        "fig8b" => config(
            SweepVar::Antennas,
            vec![6.0, 8.0, 10.0, 12.0],
            qpsk(8, 25, 5.0, -20.0),
            qpsk_detectors(),
        ),
        "fig9a" => config(
            SweepVar::ZetaDb,
            vec![-20.0, -15.0, -10.0, -5.0],
            qpsk(8, 10, 2.0, -20.0),
            qpsk_detectors(),
        ),
        "fig9b" => config(
            SweepVar::DistanceM,
            vec![1.0, 1.5, 2.0, 2.5, 3.0],
            qpsk(8, 20, 28.0, -20.0),
            qpsk_detectors(),
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_validate() {
        for name in PRESET_NAMES {
            let c = preset(name).unwrap();
            assert_eq!(c.trials, DEFAULT_TRIALS);
            assert_eq!(c.cmnet.transfer_config().epochs, 2);
        }
        assert!(preset("fig10").is_err());
    }

    #[test]
    fn fig7a_settings() {
        let c = preset("fig7a").unwrap();
        assert_eq!(c.grid, vec![-2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(
            (c.base.antennas, c.base.samples_per_symbol, c.base.zeta_db),
            (8, 20, -20.0)
        );
        assert_eq!(c.frame_symbols(&c.base), 250);
    }
}
