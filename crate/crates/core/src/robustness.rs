//! Noise- and removal-based perturbation suites with the Abs(delta)
//! sensitivity metric: mean per-scene absolute change of a metric under a
//! perturbation of the input scene.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricKind};
use crate::predictor::{Inference, PredictorModel};
use crate::rng::rng_from;
use crate::scene::{AgentTrack, CausalLabel, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PerturbationKind {
    /// i.i.d. N(0, sigma^2) on the (x, y) history of every surrounding
    /// agent, per timestep; velocities recomputed by backward differences.
    GaussianNoise { sigma_m: f64 },
    /// Drop all agents labeled Causal.
    RemoveCausal,
    /// Drop all agents labeled NonCausal.
    RemoveNonCausal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub seed: u64,
    /// Also perturb the target history (off by default; the suites focus
    /// on surrounding-agent handling).
    #[serde(default)]
    pub include_target: bool,
}

impl PerturbationSpec {
    pub fn noise(sigma_m: f64, seed: u64) -> Self {
        PerturbationSpec { kind: PerturbationKind::GaussianNoise { sigma_m }, seed, include_target: false }
    }

    pub fn validate(&self) -> Result<()> {
        if let PerturbationKind::GaussianNoise { sigma_m } = self.kind {
            if !(sigma_m > 0.0) {
                return Err(Error::config(format!("noise sigma must be positive, got {sigma_m}")));
            }
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        match self.kind {
            PerturbationKind::GaussianNoise { sigma_m } => format!("noise:{sigma_m}"),
            PerturbationKind::RemoveCausal => "remove_causal".to_string(),
            PerturbationKind::RemoveNonCausal => "remove_non_causal".to_string(),
        }
    }

    /// Parses `noise:<sigma>`, `remove_causal`, `remove_non_causal`.
    pub fn parse(name: &str, seed: u64) -> Result<Self> {
        let kind = match name {
            "remove_causal" => PerturbationKind::RemoveCausal,
            "remove_non_causal" => PerturbationKind::RemoveNonCausal,
            other => match other.strip_prefix("noise:") {
                Some(sigma) => PerturbationKind::GaussianNoise {
                    sigma_m: sigma
                        .parse()
                        .map_err(|_| Error::config(format!("bad noise sigma {sigma:?}")))?,
                },
                None => return Err(Error::config(format!("unknown perturbation {name:?}"))),
            },
        };
        let spec = PerturbationSpec { kind, seed, include_target: false };
        spec.validate()?;
        Ok(spec)
    }
}

/// One perturbation strategy; `dt` is needed by the noise kind to keep
/// velocities consistent with the backward-difference convention.
pub trait Perturbation: Send + Sync {
    fn spec(&self) -> PerturbationSpec;
    fn apply(&self, scene: &Scene) -> Result<Scene>;
}

pub fn perturbation_for(spec: PerturbationSpec, dt: f64) -> Result<Box<dyn Perturbation>> {
    spec.validate()?;
    if !(dt > 0.0) {
        return Err(Error::config("dt must be positive"));
    }
    Ok(match spec.kind {
        PerturbationKind::GaussianNoise { sigma_m } => {
            Box::new(NoisePerturbation { spec, sigma_m, dt })
        }
        PerturbationKind::RemoveCausal => Box::new(RemoveByLabel { spec, drop: CausalLabel::Causal }),
        PerturbationKind::RemoveNonCausal => {
            Box::new(RemoveByLabel { spec, drop: CausalLabel::NonCausal })
        }
    })
}

/// Applies a perturbation spec to one scene; deterministic given the spec
/// seed.
pub fn perturb(scene: &Scene, spec: PerturbationSpec, dt: f64) -> Result<Scene> {
    perturbation_for(spec, dt)?.apply(scene)
}

struct NoisePerturbation {
    spec: PerturbationSpec,
    sigma_m: f64,
    dt: f64,
}

impl NoisePerturbation {
    fn jitter_track(&self, scene_id: u64, track: &mut AgentTrack) {
        let mut rng = rng_from(&[self.spec.seed, 0x4015E, scene_id, track.agent_id]);
        let normal = Normal::new(0.0, self.sigma_m).expect("positive sigma");
        for state in &mut track.history {
            state.x += normal.sample(&mut rng);
            state.y += normal.sample(&mut rng);
        }
        // Keep kinematics self-consistent: v[k] = (p[k] - p[k-1]) / dt,
        // v[0] copied from v[1].
        let h = track.history.len();
        for k in (1..h).rev() {
            let (px, py) = (track.history[k - 1].x, track.history[k - 1].y);
            let s = &mut track.history[k];
            s.vx = (s.x - px) / self.dt;
            s.vy = (s.y - py) / self.dt;
        }
        if h >= 2 {
            track.history[0].vx = track.history[1].vx;
            track.history[0].vy = track.history[1].vy;
        }
    }
}

impl Perturbation for NoisePerturbation {
    fn spec(&self) -> PerturbationSpec {
        self.spec
    }

    fn apply(&self, scene: &Scene) -> Result<Scene> {
        let mut out = scene.clone();
        for track in &mut out.surrounding {
            self.jitter_track(scene.scene_id, track);
        }
        if self.spec.include_target {
            self.jitter_track(scene.scene_id, &mut out.target);
        }
        Ok(out)
    }
}

struct RemoveByLabel {
    spec: PerturbationSpec,
    drop: CausalLabel,
}

impl Perturbation for RemoveByLabel {
    fn spec(&self) -> PerturbationSpec {
        self.spec
    }

    fn apply(&self, scene: &Scene) -> Result<Scene> {
        if let Some(agent) = scene
            .surrounding
            .iter()
            .find(|a| a.causal_label == CausalLabel::Unlabeled)
        {
            return Err(Error::invalid(format!(
                "label-based removal on scene {} with unlabeled agent {}",
                scene.scene_id, agent.agent_id
            )));
        }
        let mut out = scene.clone();
        out.surrounding.retain(|a| a.causal_label != self.drop);
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub spec: PerturbationSpec,
    pub metric: MetricKind,
    /// Mean per-scene |m(perturbed) - m(original)|.
    pub abs_delta: f64,
    /// 100 * abs_delta / |mean unperturbed metric|.
    pub percent_abs_delta: f64,
    pub unperturbed_mean: f64,
    pub n_scenes: usize,
}

/// Abs(delta) over a scene set. Per-scene contributions are accumulated in
/// scene_id order, so the result is independent of input ordering and of
/// worker count.
pub fn abs_delta(
    model: &PredictorModel,
    scenes: &[Scene],
    spec: PerturbationSpec,
    metric: MetricKind,
    dt: f64,
    inference: Inference,
) -> Result<RobustnessReport> {
    if scenes.is_empty() {
        return Err(Error::invalid("abs_delta over an empty scene list"));
    }
    let perturbation = perturbation_for(spec, dt)?;
    let mut per_scene: Vec<(u64, f64, f64)> = scenes
        .par_iter()
        .map(|scene| -> Result<(u64, f64, f64)> {
            let gt = scene.target_future_flat();
            let gt: Vec<(f64, f64)> = gt.chunks_exact(2).map(|c| (c[0], c[1])).collect();
            let original = model.predict(scene, &scene.surrounding_id_set(), inference)?;
            let m_orig = evaluate(&original, &gt, metric)?.value;
            let perturbed_scene = perturbation.apply(scene)?;
            let perturbed = model.predict(
                &perturbed_scene,
                &perturbed_scene.surrounding_id_set(),
                inference,
            )?;
            let m_pert = evaluate(&perturbed, &gt, metric)?.value;
            Ok((scene.scene_id, (m_pert - m_orig).abs(), m_orig))
        })
        .collect::<Result<_>>()?;
    per_scene.sort_by_key(|&(sid, _, _)| sid);

    let n = per_scene.len() as f64;
    let abs: f64 = per_scene.iter().map(|&(_, d, _)| d).sum::<f64>() / n;
    let unperturbed_mean: f64 = per_scene.iter().map(|&(_, _, m)| m).sum::<f64>() / n;
    Ok(RobustnessReport {
        spec,
        metric,
        abs_delta: abs,
        percent_abs_delta: 100.0 * abs / unperturbed_mean.abs().max(f64::MIN_POSITIVE),
        unperturbed_mean,
        n_scenes: per_scene.len(),
    })
}
