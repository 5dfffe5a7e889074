use std::collections::{BTreeMap, BTreeSet};

use super::*;
use crate::metrics::MetricKind;
use crate::predictor::{Inference, PredictorConfig, PredictorModel};
use crate::scene::{generate_dataset, GeneratorConfig, Scene};
use crate::tensor::Tensor;

fn model(seed: u64) -> PredictorModel {
    let cfg = PredictorConfig {
        d_model: 8,
        n_heads: 2,
        d_z: 4,
        k_modes: 3,
        seed,
        ..PredictorConfig::default()
    };
    PredictorModel::new(cfg).unwrap()
}

fn scenes() -> Vec<Scene> {
    let gen = GeneratorConfig {
        scenes_leader_follower: 3,
        scenes_independent: 2,
        scenes_spurious: 2,
        scenes_mixed: 2,
        ..GeneratorConfig::default()
    };
    generate_dataset(&gen, 55).unwrap()
}

/// Zeroing the attention output projection makes the decoder blind to
/// agents; used by the dummy-axiom checks.
pub(crate) fn zero_attention(mut m: PredictorModel) -> PredictorModel {
    let shape = m.params()["attn.out"].shape().to_vec();
    m.set_param("attn.out", Tensor::zeros(shape).unwrap()).unwrap();
    let shape = m.params()["attn.out_b"].shape().to_vec();
    m.set_param("attn.out_b", Tensor::zeros(shape).unwrap()).unwrap();
    m
}

#[test]
fn efficiency_and_symmetry_on_model_backed_values() {
    let model = model(2);
    let exact = ExactShapley::default();
    for scene in scenes().iter().filter(|s| s.n_surrounding() >= 2) {
        // Duplicate the first agent to create symmetric players.
        let mut scene = scene.clone();
        let mut dup = scene.surrounding[0].clone();
        dup.agent_id = 500;
        scene.surrounding.push(dup);

        let results = attribute_scene(
            &model,
            &scene,
            &[MetricKind::Nll, MetricKind::MinAde { k: 3 }],
            &exact,
            Inference::Deterministic,
            "test",
            0,
        )
        .unwrap();
        for r in &results {
            assert!(r.efficiency_gap() < 1e-9, "efficiency gap {}", r.efficiency_gap());
            let a = r.phi[&scene.surrounding[0].agent_id];
            let b = r.phi[&500];
            assert!((a - b).abs() < 1e-9, "symmetry violated: {a} vs {b}");
        }
    }
}

#[test]
fn dummy_axiom_on_agent_blind_model() {
    let blind = zero_attention(model(3));
    let exact = ExactShapley::default();
    for scene in scenes().iter().filter(|s| s.n_surrounding() >= 1) {
        let results = attribute_scene(
            &blind,
            scene,
            &[MetricKind::Nll],
            &exact,
            Inference::Deterministic,
            "test",
            0,
        )
        .unwrap();
        for (&id, &phi) in &results[0].phi {
            assert!(phi.abs() <= 1e-9, "agent {id} got {phi} from a blind model");
        }
        assert!(results[0].efficiency_gap() <= 1e-12);
    }
}

#[test]
fn caching_does_not_change_results() {
    let model = model(5);
    let scene = scenes().into_iter().find(|s| s.n_surrounding() >= 3).unwrap();
    let kinds = [MetricKind::Nll];

    let cached = crate::metrics::CoalitionEvaluator::new(&model, &scene, &kinds, Inference::Deterministic).unwrap();
    let mut uncached =
        crate::metrics::CoalitionEvaluator::new(&model, &scene, &kinds, Inference::Deterministic).unwrap();
    uncached.set_caching(false);

    struct Lens<'e, 'm>(&'e crate::metrics::CoalitionEvaluator<'m>);
    impl CoalitionValue for Lens<'_, '_> {
        fn n(&self) -> usize {
            self.0.n()
        }
        fn value(&mut self, mask: u32) -> Result<f64> {
            self.0.value(mask, 0)
        }
    }

    let exact = ExactShapley::default();
    let a = exact.attribute(&mut Lens(&cached)).unwrap();
    let b = exact.attribute(&mut Lens(&uncached)).unwrap();
    assert_eq!(a.phi, b.phi, "cache must be bitwise transparent");
    assert!(uncached.evals() > cached.evals());
}

#[test]
fn super_agent_boundary_and_metric_guard() {
    let mk = |phi: &[(u64, f64)]| AttributionResult {
        scene_id: 1,
        metric: MetricKind::Nll,
        estimator: EstimatorTag::Exact,
        phi: phi.iter().copied().collect(),
        stderr: phi.iter().map(|&(id, _)| (id, 0.0)).collect(),
        v_empty: 0.0,
        v_full: 0.0,
        model_checksum: "x".into(),
        seed: 0,
    };

    // Zero is excluded: the membership rule is strictly negative.
    let s = super_agents(&mk(&[(1, -0.2), (2, 0.0), (3, 0.1)])).unwrap();
    assert_eq!(s.members.iter().copied().collect::<Vec<_>>(), vec![1]);

    let s = super_agents(&mk(&[(1, 0.4), (2, 0.0)])).unwrap();
    assert!(s.members.is_empty());

    let mut wrong = mk(&[(1, -0.2)]);
    wrong.metric = MetricKind::MinAde { k: 3 };
    assert!(super_agents(&wrong).is_err());
}

#[test]
fn gap_report_identities() {
    let model = model(7);
    let all: Vec<Scene> = scenes().into_iter().filter(|s| s.n_surrounding() >= 1).collect();

    // Super = All for every scene -> delta_super_all = 0 exactly.
    let super_all: BTreeMap<u64, SuperAgentSet> = all
        .iter()
        .map(|s| (s.scene_id, SuperAgentSet { scene_id: s.scene_id, members: s.surrounding_id_set() }))
        .collect();
    let report = gap_report(&model, &all, MetricKind::Nll, &super_all, Inference::Deterministic).unwrap();
    assert_eq!(report.delta_super_all, 0.0);
    assert!((report.delta_no_all - (report.m_none - report.m_all)).abs() < 1e-12);

    // Super = empty -> m_super equals m_none bitwise.
    let super_none: BTreeMap<u64, SuperAgentSet> = all
        .iter()
        .map(|s| (s.scene_id, SuperAgentSet { scene_id: s.scene_id, members: BTreeSet::new() }))
        .collect();
    let report = gap_report(&model, &all, MetricKind::Nll, &super_none, Inference::Deterministic).unwrap();
    assert_eq!(report.m_super, report.m_none);

    // Missing scene entry is an error.
    let mut missing = super_none.clone();
    missing.remove(&all[0].scene_id);
    assert!(gap_report(&model, &all, MetricKind::Nll, &missing, Inference::Deterministic).is_err());
}

#[test]
fn attribution_jsonl_round_trip() {
    let model = model(9);
    let estimator = ApproShapley { permutations: 20, seed: 5, antithetic: true };
    let mut results = Vec::new();
    for scene in scenes().iter().take(4) {
        results.extend(
            attribute_scene(
                &model,
                scene,
                &[MetricKind::Nll],
                &estimator,
                Inference::Deterministic,
                "abc123",
                5,
            )
            .unwrap(),
        );
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("attr.jsonl");
    write_attributions_jsonl(&path, &results).unwrap();
    let back = read_attributions_jsonl(&path).unwrap();
    assert_eq!(results, back);
}
