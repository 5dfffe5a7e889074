use std::collections::BTreeSet;

use super::*;
use crate::predictor::{Inference, PredictorConfig, PredictorModel};
use crate::rng::rng_from;
use crate::scene::{generate_dataset, GeneratorConfig};
use rand::Rng;

fn constant_pred(k: usize, f: usize, offsets: &[f64], probs: &[f64]) -> MixturePrediction {
    // Mode j runs parallel to gt at lateral distance offsets[j].
    MixturePrediction {
        modes: (0..k).map(|j| (1..=f).map(|t| (t as f64, offsets[j])).collect()).collect(),
        sigmas: (0..k).map(|_| vec![(1.0, 1.0); f]).collect(),
        mode_probs: probs.to_vec(),
    }
}

fn straight_gt(f: usize) -> Vec<(f64, f64)> {
    (1..=f).map(|t| (t as f64, 0.0)).collect()
}

#[test]
fn exact_mode_scores_zero() {
    let f = 12;
    let gt = straight_gt(f);
    let pred = MixturePrediction {
        modes: vec![gt.clone()],
        sigmas: vec![vec![(1.0, 1.0); f]],
        mode_probs: vec![1.0],
    };
    for kind in [
        MetricKind::MinAde { k: 1 },
        MetricKind::MinFde { k: 1 },
        MetricKind::MissRate { k: 1, threshold_m: 2.0 },
    ] {
        assert_eq!(evaluate(&pred, &gt, kind).unwrap().value, 0.0);
    }
    // Single exact mode with unit sigmas: NLL = F * ln(2*pi) (2 dims/step).
    let nll = evaluate(&pred, &gt, MetricKind::Nll).unwrap().value;
    let expect = f as f64 * (2.0 * std::f64::consts::PI).ln();
    assert!((nll - expect).abs() < 1e-9, "{nll} vs {expect}");
    assert!((expect - 22.053).abs() < 5e-3);
}

#[test]
fn top_k_selection_is_by_probability_then_index() {
    let f = 12;
    let gt = straight_gt(f);
    // Two modes at constant offsets 1.0 m and 3.0 m; higher probability on
    // the 3.0 m mode.
    let pred = constant_pred(2, f, &[1.0, 3.0], &[0.4, 0.6]);
    let at2 = evaluate(&pred, &gt, MetricKind::MinAde { k: 2 }).unwrap().value;
    assert!((at2 - 1.0).abs() < 1e-12);
    let at1 = evaluate(&pred, &gt, MetricKind::MinAde { k: 1 }).unwrap().value;
    assert!((at1 - 3.0).abs() < 1e-12);

    // Tie on probability: lower mode index wins.
    let tied = constant_pred(2, f, &[2.5, 0.5], &[0.5, 0.5]);
    let v = evaluate(&tied, &gt, MetricKind::MinFde { k: 1 }).unwrap().value;
    assert!((v - 2.5).abs() < 1e-12);
}

#[test]
fn minade_non_increasing_in_k() {
    let mut rng = rng_from(&[3]);
    for _ in 0..20 {
        let k = 6;
        let f = 5;
        let pred = MixturePrediction {
            modes: (0..k)
                .map(|_| (0..f).map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))).collect())
                .collect(),
            sigmas: (0..k).map(|_| vec![(1.0, 1.0); f]).collect(),
            mode_probs: {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
                let z: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / z).collect()
            },
        };
        let gt: Vec<(f64, f64)> = (0..f).map(|_| (rng.gen_range(-5.0..5.0), 0.0)).collect();
        let mut prev = f64::INFINITY;
        for kk in 1..=k {
            let v = evaluate(&pred, &gt, MetricKind::MinAde { k: kk }).unwrap().value;
            assert!(v <= prev + 1e-12, "minADE@{kk} = {v} > minADE@{} = {prev}", kk - 1);
            prev = v;
        }
    }
}

#[test]
fn missrate_threshold_extremes() {
    let f = 8;
    let gt = straight_gt(f);
    let pred = constant_pred(3, f, &[0.7, 2.0, 9.0], &[0.2, 0.5, 0.3]);
    let inf = evaluate(&pred, &gt, MetricKind::MissRate { k: 3, threshold_m: f64::MAX }).unwrap();
    assert_eq!(inf.value, 0.0);
    let tight = evaluate(&pred, &gt, MetricKind::MissRate { k: 3, threshold_m: 1e-12 }).unwrap();
    assert_eq!(tight.value, 1.0);
}

/// NLL via logsumexp must match the naive probability-space computation
/// when the probabilities are representable.
#[test]
fn nll_matches_probability_space_oracle() {
    let mut rng = rng_from(&[17]);
    for trial in 0..25 {
        let k = 4;
        let f = 6;
        let pred = MixturePrediction {
            modes: (0..k)
                .map(|_| (0..f).map(|_| (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect())
                .collect(),
            sigmas: (0..k)
                .map(|_| (0..f).map(|_| (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0))).collect())
                .collect(),
            mode_probs: {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
                let z: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / z).collect()
            },
        };
        let gt: Vec<(f64, f64)> =
            (0..f).map(|_| (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect();

        // Oracle: plain products of densities, no log-space tricks.
        let mut prob = 0.0;
        for kk in 0..k {
            let mut dens = pred.mode_probs[kk];
            for (t, &(gx, gy)) in gt.iter().enumerate() {
                let (mx, my) = pred.modes[kk][t];
                let (sx, sy) = pred.sigmas[kk][t];
                for (g, m, s) in [(gx, mx, sx), (gy, my, sy)] {
                    let z = (g - m) / s;
                    dens *= (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
                }
            }
            prob += dens;
        }
        let oracle = -prob.ln();
        let fast = evaluate(&pred, &gt, MetricKind::Nll).unwrap().value;
        let rel = (fast - oracle).abs() / oracle.abs().max(1.0);
        assert!(rel < 1e-8, "trial {trial}: {fast} vs {oracle}");
    }
}

#[test]
fn length_mismatch_is_invalid() {
    let pred = constant_pred(2, 8, &[1.0, 2.0], &[0.5, 0.5]);
    let gt = straight_gt(5);
    assert!(matches!(
        evaluate(&pred, &gt, MetricKind::Nll),
        Err(crate::Error::InvalidArgument(_))
    ));
    let toobig = evaluate(&pred, &straight_gt(8), MetricKind::MinAde { k: 9 });
    assert!(toobig.is_err());
}

#[test]
fn metric_names_round_trip() {
    for (name, kind) in [
        ("nll", MetricKind::Nll),
        ("minade@6", MetricKind::MinAde { k: 6 }),
        ("minfde@1", MetricKind::MinFde { k: 1 }),
        ("missrate@5:2.5", MetricKind::MissRate { k: 5, threshold_m: 2.5 }),
    ] {
        let parsed = MetricKind::parse(name).unwrap();
        assert_eq!(parsed, kind);
        assert_eq!(parsed.id(), name);
        metric_by_name(name).unwrap();
    }
    assert_eq!(
        MetricKind::parse("missrate@5").unwrap(),
        MetricKind::MissRate { k: 5, threshold_m: 2.0 }
    );
    assert!(MetricKind::parse("fancy@3").is_err());
    assert!(MetricKind::parse("minade@0").unwrap().validate().is_err());
}

#[test]
fn coalition_evaluator_matches_value_function_bitwise() {
    let gen = GeneratorConfig {
        scenes_leader_follower: 2,
        scenes_independent: 1,
        scenes_spurious: 2,
        scenes_mixed: 2,
        ..GeneratorConfig::default()
    };
    let scenes = generate_dataset(&gen, 88).unwrap();
    let cfg = PredictorConfig { d_model: 8, n_heads: 2, d_z: 4, k_modes: 3, seed: 1, ..PredictorConfig::default() };
    let model = PredictorModel::new(cfg).unwrap();
    let kinds = [MetricKind::Nll, MetricKind::MinAde { k: 3 }];

    for scene in scenes.iter().filter(|s| s.n_surrounding() >= 2) {
        let eval = CoalitionEvaluator::new(&model, scene, &kinds, Inference::Deterministic).unwrap();
        let ids = eval.ids();
        for mask in 0..=eval.full_mask() {
            let keep: BTreeSet<u64> = ids
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &id)| id)
                .collect();
            let direct_nll = value_function(&model, scene, &keep, MetricKind::Nll).unwrap();
            let direct_ade =
                value_function(&model, scene, &keep, MetricKind::MinAde { k: 3 }).unwrap();
            let cached = eval.values(mask).unwrap();
            assert_eq!(cached[0], direct_nll);
            assert_eq!(cached[1], direct_ade);
        }
        // Each coalition decoded exactly once.
        assert_eq!(eval.evals(), (eval.full_mask() as usize) + 1);
        let before = eval.evals();
        eval.values(0).unwrap();
        assert_eq!(eval.evals(), before);
    }
}
