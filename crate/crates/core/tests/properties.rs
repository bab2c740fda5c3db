use ambc_core::bench::{build_online_dataset, csv_string, BerPoint, DetectorKind, SweepVar};
use ambc_core::cmnet::checkpoint::{from_bytes, to_bytes};
use ambc_core::cmnet::{CmnetModel, Detection, Domain, LabeledCovarianceSet, TrainConfig};
use ambc_core::features::{sample_covariance, to_feature_tensor, FeatureTensor};
use ambc_core::nn::{softmax, Tensor};
use ambc_core::rng::{seeded, stream};
use ambc_core::sim::{draw_channel, generate_frame, SimParams, SourceKind};
use proptest::prelude::*;

fn params(m: usize, n: usize, snr: f64, zeta: f64) -> SimParams {
    SimParams::new(m, n, snr, zeta, SourceKind::QPSK)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let p = softmax(&[a, b]);
        prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn score_ratio_rule(p1 in 0.0f64..1.0) {
        let d = Detection::from_scores([p1, 1.0 - p1]);
        prop_assert_eq!(d.bit, (p1 / (1.0 - p1) > 1.0) as u8);
    }

    #[test]
    fn effective_channel_is_cached_sum(seed in any::<u64>(), m in 1usize..6, zeta in -30.0f64..0.0) {
        let ch = draw_channel(&mut seeded(seed), &params(m, 4, 0.0, zeta)).unwrap();
        for i in 0..m {
            prop_assert!((ch.w[i] - (ch.h[i] + ch.alpha * ch.f * ch.g[i])).norm() == 0.0);
        }
        prop_assert!((ch.alpha.norm_sqr() - 10f64.powf(zeta / 10.0)).abs() < 1e-15);
    }

    #[test]
    fn covariance_is_hermitian_psd(seed in any::<u64>(), m in 1usize..6, n in 1usize..30) {
        let p = params(m, n, 5.0, -10.0);
        let mut rng = seeded(seed);
        let ch = draw_channel(&mut rng, &p).unwrap();
        let f = generate_frame(&mut rng, &ch, &p, 3, 1, None).unwrap();
        let r = sample_covariance(&f.blocks[0].x).unwrap();
        prop_assert!(r.matrix().max_hermitian_defect() <= 1e-12);
        // v^H R v >= 0 on random probes
        for k in 0..4 {
            let mut g = stream(seed, &[k]);
            let v: Vec<_> = (0..m).map(|_| ambc_core::sim::complex_normal(&mut g, 1.0)).collect();
            prop_assert!(ambc_core::linalg::quadratic_form(r.matrix(), &v) >= -1e-10);
        }
    }

    #[test]
    fn frames_are_deterministic(seed in any::<u64>()) {
        let p = params(3, 5, 2.0, -10.0);
        let make = || {
            let mut rng = seeded(seed);
            let ch = draw_channel(&mut rng, &p).unwrap();
            generate_frame(&mut rng, &ch, &p, 12, 4, None).unwrap()
        };
        let (a, b) = (make(), make());
        prop_assert_eq!(a.pilot_labels(), vec![1, 0, 1, 0]);
        for (x, y) in a.blocks.iter().zip(&b.blocks) {
            prop_assert_eq!(&x.x, &y.x);
            prop_assert_eq!(x.label, y.label);
        }
    }

    #[test]
    fn ci95_is_normal_binomial(trials in 1u64..1_000_000, frac in 0.0f64..1.0) {
        let errors = (frac * trials as f64) as u64;
        let p = BerPoint { detector: DetectorKind::Energy, sweep_var: SweepVar::SnrDb, sweep_value: 0.0, trials, errors };
        let ber = errors as f64 / trials as f64;
        prop_assert!((0.0..=1.0).contains(&p.ber()));
        prop_assert_eq!(p.ci95(), 1.96 * (ber * (1.0 - ber) / trials as f64).sqrt());
    }

    #[test]
    fn csv_round_trip(values in proptest::collection::vec((-20.0f64..20.0, 1u64..10_000, 0.0f64..1.0), 1..12)) {
        let points: Vec<BerPoint> = values
            .iter()
            .enumerate()
            .map(|(i, &(v, t, f))| BerPoint {
                detector: DetectorKind::ALL[i % 4],
                sweep_var: SweepVar::ZetaDb,
                sweep_value: v,
                trials: t,
                errors: (f * t as f64) as u64,
            })
            .collect();
        let text = csv_string(&points).unwrap();
        prop_assert_eq!(text.lines().count(), points.len() + 1);
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut last: Option<(String, f64)> = None;
        for rec in r.records() {
            let rec = rec.unwrap();
            let key = (rec[0].to_string(), rec[2].parse::<f64>().unwrap());
            let trials: u64 = rec[3].parse().unwrap();
            let errors: u64 = rec[4].parse().unwrap();
            prop_assert!(points.iter().any(|p| p.detector.id() == key.0 && p.sweep_value == key.1 && p.trials == trials && p.errors == errors));
            if let Some(prev) = &last {
                prop_assert!(prev.0 < key.0 || (prev.0 == key.0 && prev.1 <= key.1));
            }
            last = Some(key);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), half in 2usize..6) {
        let m = CmnetModel::build(2 * half, seed).unwrap();
        let back = from_bytes(&to_bytes(&m)).unwrap();
        prop_assert_eq!(back.network(), m.network());
        prop_assert_eq!(back.stage(), m.stage());
        prop_assert_eq!(back.provenance(), m.provenance());
        prop_assert_eq!(back.freeze_mask(), m.freeze_mask());
    }

    #[test]
    fn eval_scores_sum_to_one(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let m = CmnetModel::build(8, seed).unwrap();
        let f = FeatureTensor::scaled_identity(8, scale);
        let s = m.forward(&f).unwrap();
        prop_assert!((s[0] + s[1] - 1.0).abs() < 1e-6);
        prop_assert_eq!(s, m.forward(&f).unwrap());
    }

    #[test]
    fn transfer_keeps_trunk_bits(seed in any::<u64>()) {
        let p = params(4, 10, 6.0, -10.0);
        let mut rng = seeded(seed);
        let ch = draw_channel(&mut rng, &p).unwrap();
        let frame = generate_frame(&mut rng, &ch, &p, 20, 10, None).unwrap();
        let online = build_online_dataset(&mut rng, &frame, 40, 1e-3).unwrap();
        let pre = CmnetModel::build(4, seed).unwrap().with_stage(ambc_core::cmnet::Stage::Pretrained);
        let mut post = pre.clone();
        post.transfer_finetune(&online, &TrainConfig { epochs: 2, ..TrainConfig::transfer_default() }).unwrap();
        let f1 = pre.network().layer_index("F1").unwrap();
        for i in 0..f1 {
            prop_assert_eq!(&pre.network().layer(i).kind, &post.network().layer(i).kind);
        }
        prop_assert_ne!(&pre.network().layer(f1).kind, &post.network().layer(f1).kind);
    }

    /// The online set is a function of the pilots alone.
    #[test]
    fn online_set_ignores_data_blocks(seed in any::<u64>()) {
        let p = params(4, 10, 3.0, -10.0);
        let mut rng = seeded(seed);
        let ch = draw_channel(&mut rng, &p).unwrap();
        let frame = generate_frame(&mut rng, &ch, &p, 25, 10, None).unwrap();
        let mut scrambled = frame.clone();
        for b in scrambled.blocks.iter_mut().skip(10) {
            b.x = b.x.scale(-3.0);
            b.label ^= 1;
        }
        let a = build_online_dataset(&mut seeded(1), &frame, 50, 1e-3).unwrap();
        let b = build_online_dataset(&mut seeded(1), &scrambled, 50, 1e-3).unwrap();
        prop_assert_eq!(a.features, b.features);
        prop_assert_eq!(a.labels, b.labels);
        prop_assert_eq!(a.domain, Domain::Target);
    }
}

#[test]
fn feature_tensor_layout() {
    let t: Tensor<f64> = Tensor::new(
        vec![1, 2, 4, 4],
        FeatureTensor::scaled_identity(4, 3.0).as_slice().to_vec(),
    )
    .unwrap();
    assert_eq!(t.data().iter().filter(|&&v| v == 3.0).count(), 4);
    let empty = LabeledCovarianceSet::new(Domain::Source, "empty");
    assert!(CmnetModel::build(4, 0).unwrap().loss(&empty).is_err());
    let r = sample_covariance(&ambc_core::linalg::CMatrix::identity(4)).unwrap();
    assert_eq!(to_feature_tensor(&r).antennas(), 4);
}
