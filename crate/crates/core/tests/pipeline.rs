use ambc_core::bench::{
    build_offline_dataset, prepare_models, run_ber_sweep, run_ber_sweep_with, CmnetPlan,
    DetectorKind, ExperimentConfig, PathLossParams, PretrainPlan, SweepVar,
};
use ambc_core::cmnet::checkpoint::{load_checkpoint, save_checkpoint};
use ambc_core::cmnet::{
    CmnetModel, Domain, LabeledCovarianceSet, Stage, TrainConfig, TrainOverrides,
};
use ambc_core::error::Error;
use ambc_core::features::block_feature;
use ambc_core::linalg::CMatrix;
use ambc_core::rng::stream;
use ambc_core::sim::{complex_normal, SimParams, SourceKind};

fn diagonal_set(count: usize) -> LabeledCovarianceSet {
    let mut set = LabeledCovarianceSet::new(Domain::Source, "diag");
    for k in 0..count {
        let bit = (k % 2 == 0) as u8;
        let var = if bit == 1 { 2.0 } else { 1.0 };
        let mut rng = stream(5, &[k as u64]);
        let x = CMatrix::from_fn(4, 64, |_, _| complex_normal(&mut rng, var));
        set.push(block_feature(&x).unwrap(), bit);
    }
    set
}

#[test]
fn trained_model_fits_its_training_set() {
    let set = diagonal_set(200);
    let mut model = CmnetModel::build(4, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 32,
        ..TrainConfig::offline_default()
    };
    let report = model.train_offline(&set, &cfg).unwrap();
    let loss = model.loss(&set).unwrap();
    assert!(
        loss < 0.05,
        "loss {loss}, epochs {:?}",
        report.epoch_losses.last()
    );
    assert!(model.accuracy(&set).unwrap() >= 0.99);
    assert_eq!(model.stage(), Stage::Pretrained);
    assert!(model.provenance().datasets.contains(&"diag".to_string()));
}

#[test]
fn stage_order_is_enforced() {
    let set = diagonal_set(20);
    let mut target = LabeledCovarianceSet::new(Domain::Target, "t");
    target.push(set.features[0].clone(), 1);
    let mut fresh = CmnetModel::build(4, 0).unwrap();
    assert!(matches!(
        fresh.transfer_finetune(&target, &TrainConfig::transfer_default()),
        Err(Error::WrongStage { .. })
    ));
    fresh
        .train_offline(
            &set,
            &TrainConfig {
                epochs: 1,
                ..TrainConfig::offline_default()
            },
        )
        .unwrap();
    let before = fresh.forward(&set.features[3]).unwrap();
    let mut zero = fresh.clone();
    zero.transfer_finetune(
        &target,
        &TrainConfig {
            epochs: 0,
            ..TrainConfig::transfer_default()
        },
    )
    .unwrap();
    assert_eq!(zero.forward(&set.features[3]).unwrap(), before);
    assert_eq!(zero.stage(), Stage::Transferred);
}

fn small_cmnet_sweep() -> ExperimentConfig {
    ExperimentConfig {
        sweep: SweepVar::SnrDb,
        grid: vec![4.0, 10.0],
        base: SimParams::new(4, 20, 0.0, -10.0, SourceKind::QPSK),
        detectors: vec![
            DetectorKind::Cmnet,
            DetectorKind::Energy,
            DetectorKind::LrtModulated,
        ],
        trials: 480,
        seed: 11,
        output: None,
        frame_samples: 5000,
        pilots: 10,
        transfer_every: 1,
        ed_calibration_trials: 1000,
        path_loss: PathLossParams::default(),
        cmnet: CmnetPlan {
            pretrain: Some(PretrainPlan {
                count: 400,
                snr_db: None,
                train: TrainOverrides {
                    epochs: Some(1),
                    ..TrainOverrides::default()
                },
            }),
            transfer: TrainOverrides {
                epochs: Some(2),
                lr: Some(1e-3),
                ..TrainOverrides::default()
            },
            online_count: 200,
            ..CmnetPlan::default()
        },
    }
}

#[test]
fn cmnet_sweep_runs_and_checkpoints_reload() {
    let cfg = small_cmnet_sweep();
    let models = prepare_models(&cfg).unwrap();
    let direct = run_ber_sweep_with(&cfg, &models, 1).unwrap();
    assert_eq!(direct.points.len(), 6);
    assert!(direct.pretrained[0].provenance.datasets[0].starts_with("offline:"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(models.values().next().unwrap(), &path).unwrap();
    assert_eq!(
        &load_checkpoint(&path).unwrap(),
        models.values().next().unwrap()
    );
    let mut from_file = cfg.clone();
    from_file.cmnet.checkpoint = Some(path.clone());
    let again = run_ber_sweep(&from_file, 2).unwrap();
    assert_eq!(again.points, direct.points);

    let mut wrong = cfg.clone();
    wrong.base.antennas = 6;
    wrong.cmnet.checkpoint = Some(path);
    assert!(matches!(
        run_ber_sweep(&wrong, 1),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn offline_grid_mixes_points() {
    let grid: Vec<SimParams> = [0.0, 5.0, 10.0]
        .iter()
        .map(|&s| SimParams::new(4, 8, s, -10.0, SourceKind::QPSK))
        .collect();
    let set = build_offline_dataset(3, &grid, 12).unwrap();
    assert!(set.id.contains("snr_db=[0,5,10]"));
    assert_eq!(set.len(), 12);
    let mut mixed = grid.clone();
    mixed[1].antennas = 6;
    assert!(build_offline_dataset(3, &mixed, 12).is_err());
}
