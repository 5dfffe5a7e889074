// Scratch calibration probe; run with --ignored. Not part of the suite.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use trajshap_core::analysis::{insertion_test, InsertionOrder};
use trajshap_core::attribution::{attribute_scene, gap_report, super_agents, ExactShapley};
use trajshap_core::metrics::MetricKind;
use trajshap_core::predictor::{train, Inference, OptimizerConfig, PredictorConfig, PredictorModel};
use trajshap_core::scene::{GeneratorConfig, GeneratorKind, Split};

fn gen_cfg(split: Split, scale: f64) -> GeneratorConfig {
    GeneratorConfig {
        scenes_leader_follower: (120.0 * scale) as usize,
        scenes_independent: (60.0 * scale) as usize,
        scenes_spurious: (50.0 * scale) as usize,
        scenes_mixed: (60.0 * scale) as usize,
        split,
        spur_corr: if split == Split::Train { 1.0 } else { 0.0 },
        ..GeneratorConfig::default()
    }
}

#[test]
#[ignore]
fn calibrate() {
    let t0 = Instant::now();
    let train_scenes = trajshap_core::scene::generate_dataset(&gen_cfg(Split::Train, 1.0), 1000).unwrap();
    let val_scenes = trajshap_core::scene::generate_dataset(&gen_cfg(Split::Validation, 0.4), 2000).unwrap();
    println!("gen: {} train, {} val, {:?}", train_scenes.len(), val_scenes.len(), t0.elapsed());

    let pcfg = PredictorConfig { seed: 11, d_model: 24, d_z: 12, ..PredictorConfig::default() };
    let mut model = PredictorModel::new(pcfg).unwrap();
    let opt = OptimizerConfig { epochs: 160, batch_size: 32, lr: 3e-3, ..OptimizerConfig::default() };
    let t1 = Instant::now();
    let report = train(&mut model, &train_scenes, &val_scenes, &opt).unwrap();
    println!("train: {:?}", t1.elapsed());
    for e in report.epochs.iter().step_by(5) {
        println!("  epoch {:2} train_nll {:8.3} val_nll {:8.3}", e.epoch, e.train_nll, e.val_nll);
    }
    println!("  final val_nll {:8.3}", report.final_val_nll().unwrap());

    // Shapley on a validation subset.
    let subset: Vec<_> = val_scenes
        .iter()
        .filter(|s| s.n_surrounding() >= 1)
        .step_by(2)
        .take(64)
        .cloned()
        .collect();
    let exact = ExactShapley::default();
    let t2 = Instant::now();
    let mut attrs = BTreeMap::new();
    let mut leader_neg = 0;
    let mut leader_tot = 0;
    let mut distractor_pos = 0;
    let mut distractor_tot = 0;
    let mut bystander_neg = 0;
    let mut bystander_tot = 0;
    for scene in &subset {
        let r = attribute_scene(&model, scene, &[MetricKind::Nll], &exact, Inference::Deterministic, "c", 0)
            .unwrap()
            .remove(0);
        for agent in &scene.surrounding {
            let phi = r.phi[&agent.agent_id];
            let is_leader = agent.causal_label == trajshap_core::scene::CausalLabel::Causal;
            let is_distractor = matches!(
                scene.generator_kind,
                GeneratorKind::SpuriousDistractor | GeneratorKind::Mixed
            ) && agent.causal_label == trajshap_core::scene::CausalLabel::NonCausal
                && agent.history.last().unwrap().y.abs() < 11.5;
            if is_leader {
                leader_tot += 1;
                if phi < 0.0 {
                    leader_neg += 1;
                }
            } else if is_distractor {
                distractor_tot += 1;
                if phi > 0.0 {
                    distractor_pos += 1;
                }
            } else {
                bystander_tot += 1;
                if phi < 0.0 {
                    bystander_neg += 1;
                }
            }
        }
        attrs.insert(scene.scene_id, r);
    }
    println!("shapley on {} scenes: {:?}", subset.len(), t2.elapsed());
    println!("  leader phi<0: {leader_neg}/{leader_tot}");
    println!("  distractor phi>0 (val): {distractor_pos}/{distractor_tot}");
    println!("  bystander phi<0: {bystander_neg}/{bystander_tot}");

    let super_sets: BTreeMap<u64, _> =
        attrs.iter().map(|(&sid, a)| (sid, super_agents(a).unwrap())).collect();
    for metric in [MetricKind::Nll, MetricKind::MinAde { k: 6 }] {
        let gaps = gap_report(&model, &subset, metric, &super_sets, Inference::Deterministic).unwrap();
        println!(
            "  {}: m_all {:.4} m_super {:.4} m_none {:.4} | d_super_all {:+.4} d_no_all {:+.4}",
            metric.id(),
            gaps.m_all,
            gaps.m_super,
            gaps.m_none,
            gaps.delta_super_all,
            gaps.delta_no_all
        );
    }

    let curve = insertion_test(
        &model,
        &subset,
        &attrs,
        MetricKind::Nll,
        InsertionOrder::MostHelpfulFirst,
        Split::Validation,
        Inference::Deterministic,
    )
    .unwrap();
    println!("  insertion (val): {:?}", curve.values.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    println!("  dip depth: {:.4}", curve.dip_depth());

    // Train-split insertion for the Fig-4-style contrast.
    let train_subset: Vec<_> = train_scenes
        .iter()
        .filter(|s| s.n_surrounding() >= 1)
        .step_by(5)
        .take(64)
        .cloned()
        .collect();
    let mut train_attrs = BTreeMap::new();
    for scene in &train_subset {
        let r = attribute_scene(&model, scene, &[MetricKind::Nll], &exact, Inference::Deterministic, "c", 0)
            .unwrap()
            .remove(0);
        train_attrs.insert(scene.scene_id, r);
    }
    let mut t_leader_neg = 0;
    let mut t_leader_tot = 0;
    let mut t_distractor_neg = 0;
    let mut t_distractor_tot = 0;
    for scene in &train_subset {
        let r = &train_attrs[&scene.scene_id];
        for agent in &scene.surrounding {
            let phi = r.phi[&agent.agent_id];
            let is_leader = agent.causal_label == trajshap_core::scene::CausalLabel::Causal;
            let is_distractor = matches!(
                scene.generator_kind,
                GeneratorKind::SpuriousDistractor | GeneratorKind::Mixed
            ) && agent.causal_label == trajshap_core::scene::CausalLabel::NonCausal
                && agent.history.last().unwrap().y.abs() < 11.5;
            if is_leader {
                t_leader_tot += 1;
                if phi < 0.0 {
                    t_leader_neg += 1;
                }
            } else if is_distractor {
                t_distractor_tot += 1;
                if phi < 0.0 {
                    t_distractor_neg += 1;
                }
            }
        }
    }
    println!("  train split: leader phi<0 {t_leader_neg}/{t_leader_tot}, distractor phi<0 {t_distractor_neg}/{t_distractor_tot}");
    let train_curve = insertion_test(
        &model,
        &train_subset,
        &train_attrs,
        MetricKind::Nll,
        InsertionOrder::MostHelpfulFirst,
        Split::Train,
        Inference::Deterministic,
    )
    .unwrap();
    println!("  insertion (train): {:?}", train_curve.values.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    println!("  train dip depth: {:.4}", train_curve.dip_depth());
    println!("total {:?}", t0.elapsed());
}

#[test]
#[ignore]
fn calibrate_cib() {
    use trajshap_core::robustness::{abs_delta, PerturbationSpec};
    let t0 = Instant::now();
    let train_scenes = trajshap_core::scene::generate_dataset(&gen_cfg(Split::Train, 1.0), 1000).unwrap();
    let val_scenes = trajshap_core::scene::generate_dataset(&gen_cfg(Split::Validation, 0.4), 2000).unwrap();
    let opt = OptimizerConfig { epochs: 160, batch_size: 32, lr: 3e-3, ..OptimizerConfig::default() };

    let mut base = PredictorModel::new(PredictorConfig { seed: 11, d_model: 24, d_z: 12, ..PredictorConfig::default() }).unwrap();
    let base_report = train(&mut base, &train_scenes, &val_scenes, &opt).unwrap();
    println!("baseline val_nll {:.3} ({:?})", base_report.final_val_nll().unwrap(), t0.elapsed());

    let mut best: Option<(f64, f64, PredictorModel)> = None;
    for beta in [0.01, 0.1, 1.0, 10.0, 100.0] {
        let cfg = PredictorConfig {
            seed: 11,
            d_model: 24,
            d_z: 12,
            use_cib: true,
            beta,
            ..PredictorConfig::default()
        };
        let mut m = PredictorModel::new(cfg).unwrap();
        let r = train(&mut m, &train_scenes, &val_scenes, &opt).unwrap();
        let vnll = r.final_val_nll().unwrap();
        let kl = r.final_train_kl().unwrap();
        println!("beta {beta:7.2}: val_nll {vnll:8.3} train_kl {kl:9.4}");
        if best.as_ref().map_or(true, |(b, _, _)| vnll < *b) {
            best = Some((vnll, beta, m));
        }
    }
    let (best_nll, best_beta, cib) = best.unwrap();
    println!("best beta {best_beta} val_nll {best_nll:.3}");

    // Super-gap comparison on minADE.
    let subset: Vec<_> = val_scenes.iter().filter(|s| s.n_surrounding() >= 1).step_by(2).take(64).cloned().collect();
    let exact = ExactShapley::default();
    for (name, model) in [("base", &base), ("cib", &cib)] {
        let mut attrs = BTreeMap::new();
        let mut distractor_pos = 0;
        let mut distractor_tot = 0;
        for scene in &subset {
            let r = attribute_scene(model, scene, &[MetricKind::Nll], &exact, Inference::Deterministic, "c", 0)
                .unwrap()
                .remove(0);
            for agent in &scene.surrounding {
                let is_distr = matches!(scene.generator_kind, GeneratorKind::SpuriousDistractor | GeneratorKind::Mixed)
                    && agent.causal_label == trajshap_core::scene::CausalLabel::NonCausal
                    && agent.history.last().unwrap().y.abs() < 11.5;
                if is_distr {
                    distractor_tot += 1;
                    if r.phi[&agent.agent_id] > 0.0 {
                        distractor_pos += 1;
                    }
                }
            }
            attrs.insert(scene.scene_id, r);
        }
        let super_sets: BTreeMap<u64, _> =
            attrs.iter().map(|(&sid, a)| (sid, super_agents(a).unwrap())).collect();
        let g_nll = gap_report(model, &subset, MetricKind::Nll, &super_sets, Inference::Deterministic).unwrap();
        let g_ade = gap_report(model, &subset, MetricKind::MinAde { k: 6 }, &super_sets, Inference::Deterministic).unwrap();
        let g_ade1 = gap_report(model, &subset, MetricKind::MinAde { k: 1 }, &super_sets, Inference::Deterministic).unwrap();
        println!(
            "{name}: nll d_super {:+.4} d_no {:+.4} | ade6 d_super {:+.4} | ade1 d_super {:+.4} | distr_pos {}/{}",
            g_nll.delta_super_all, g_nll.delta_no_all, g_ade.delta_super_all, g_ade1.delta_super_all,
            distractor_pos, distractor_tot
        );
    }

    // Robustness: noise and removal.
    for (name, model) in [("base", &base), ("cib", &cib)] {
        let dt = 0.5;
        for sigma in [0.1, 0.2, 0.4] {
            let rep = abs_delta(model, &subset, PerturbationSpec::noise(sigma, 77), MetricKind::MinAde { k: 6 }, dt, Inference::Deterministic).unwrap();
            println!("{name}: noise {sigma}: abs_delta {:.4} ({:.2}%)", rep.abs_delta, rep.percent_abs_delta);
        }
        for kind in ["remove_causal", "remove_non_causal"] {
            let rep = abs_delta(model, &subset, PerturbationSpec::parse(kind, 0).unwrap(), MetricKind::MinAde { k: 6 }, dt, Inference::Deterministic).unwrap();
            println!("{name}: {kind}: abs_delta {:.4} ({:.2}%)", rep.abs_delta, rep.percent_abs_delta);
        }
    }
    println!("total {:?}", t0.elapsed());
}

#[test]
#[ignore]
fn calibrate_agreement() {
    use trajshap_core::analysis::{
        agreement, causal_alignment, chi2_vs_baseline, extreme_mass, labels_from_scenes,
        AgreementMode, LabelFilter,
    };
    let t0 = Instant::now();
    // Leader-follower + bystanders only: the idealized agreement study.
    let cfg_of = |split: Split, lf: usize, ind: usize| GeneratorConfig {
        scenes_leader_follower: lf,
        scenes_independent: ind,
        scenes_spurious: 0,
        scenes_mixed: 0,
        split,
        spur_corr: if split == Split::Train { 1.0 } else { 0.0 },
        ..GeneratorConfig::default()
    };
    let train_scenes = trajshap_core::scene::generate_dataset(&cfg_of(Split::Train, 160, 80), 3000).unwrap();
    let val_scenes = trajshap_core::scene::generate_dataset(&cfg_of(Split::Validation, 60, 30), 4000).unwrap();
    let subset: Vec<_> = val_scenes.iter().filter(|s| s.n_surrounding() >= 1).take(60).cloned().collect();
    let opt = OptimizerConfig { epochs: 160, batch_size: 32, lr: 3e-3, ..OptimizerConfig::default() };
    let exact = ExactShapley::default();

    // Five independently trained baselines -> inter-model runs.
    let mut inter_runs = Vec::new();
    for seed in 0..5u64 {
        let mut m = PredictorModel::new(PredictorConfig { seed: 100 + seed, d_model: 24, d_z: 12, ..PredictorConfig::default() }).unwrap();
        let r = train(&mut m, &train_scenes, &val_scenes, &opt).unwrap();
        println!("base seed {seed}: val_nll {:.3}", r.final_val_nll().unwrap());
        let attrs: BTreeMap<u64, _> = subset
            .iter()
            .map(|s| {
                (s.scene_id, attribute_scene(&m, s, &[MetricKind::Nll], &exact, Inference::Deterministic, "c", 0).unwrap().remove(0))
            })
            .collect();
        inter_runs.push(attrs);
    }

    // One CIB model, five inference seeds -> intra-model runs.
    let mut cib = PredictorModel::new(PredictorConfig {
        seed: 500, d_model: 24, d_z: 12, use_cib: true, beta: 0.01, ..PredictorConfig::default()
    }).unwrap();
    let r = train(&mut cib, &train_scenes, &val_scenes, &opt).unwrap();
    println!("cib: val_nll {:.3} kl {:.3}", r.final_val_nll().unwrap(), r.final_train_kl().unwrap());
    let mut intra_runs = Vec::new();
    for iseed in 0..5u64 {
        let attrs: BTreeMap<u64, _> = subset
            .iter()
            .map(|s| {
                (s.scene_id, attribute_scene(&cib, s, &[MetricKind::Nll], &exact, Inference::Stochastic(1000 + iseed), "c", iseed).unwrap().remove(0))
            })
            .collect();
        intra_runs.push(attrs);
    }

    let labels = labels_from_scenes(&subset);
    let inter_all = agreement(&inter_runs, AgreementMode::InterModel, LabelFilter::All, &labels).unwrap();
    let intra_all = agreement(&intra_runs, AgreementMode::IntraModel, LabelFilter::All, &labels).unwrap();
    println!("inter counts {:?} extreme {:.3}", inter_all.counts, extreme_mass(&inter_all));
    println!("intra counts {:?} extreme {:.3}", intra_all.counts, extreme_mass(&intra_all));

    let (causal, noncausal) = causal_alignment(&inter_runs, &subset, AgreementMode::InterModel).unwrap();
    println!("causal counts {:?} (total {})", causal.counts, causal.total_agents);
    println!("noncausal counts {:?} (total {}) baseline {:?}", noncausal.counts, noncausal.total_agents,
        noncausal.baseline.iter().map(|b| (b * 10.0).round() / 10.0).collect::<Vec<_>>());
    let chi_nc = chi2_vs_baseline(&noncausal, 0.01).unwrap();
    println!("noncausal chi2 {:.2} df {} p {:.4} rejected {}", chi_nc.statistic, chi_nc.df, chi_nc.p_value, chi_nc.rejected);
    let chi_c = chi2_vs_baseline(&causal, 0.01).unwrap();
    let max_bin = causal.counts.iter().enumerate().max_by_key(|(_, &c)| c).unwrap().0;
    println!("causal chi2 {:.2} p {:.6} rejected {} max_bin {}", chi_c.statistic, chi_c.p_value, chi_c.rejected, max_bin);
    println!("causal mean_phi r=5/5 bin: {:.3}", causal.mean_phi_per_bin[5]);
    println!("total {:?}", t0.elapsed());
}
