//! Scene data model and the synthetic scenario generators.
//!
//! Scenes are target-centric: the target agent sits at the origin with
//! heading zero at its last history step. Velocities follow a backward
//! difference convention, `v[k] = (p[k] - p[k-1]) / dt` with `v[0] = v[1]`,
//! which the noise perturbations rely on to stay self-consistent.

mod generate;
mod jsonl;

pub use generate::{
    generate_dataset, generator_by_name, kind_generators, plan_dataset, realize, AgentBehavior,
    AgentPlan, Blueprint, GeneratorConfig, KindGenerator, Split,
};
pub use jsonl::{read_scenes_jsonl, scene_to_json_line, write_scenes_jsonl};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type AgentId = u64;

/// Kinematic state of one agent at one timestep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub w: f64,
    pub l: f64,
    pub theta: f64,
}

impl AgentState {
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    fn validate(&self) -> Result<()> {
        let fields = [self.x, self.y, self.vx, self.vy, self.w, self.l, self.theta];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite agent state"));
        }
        if self.w <= 0.0 || self.l <= 0.0 {
            return Err(Error::invalid(format!("non-positive extent w={} l={}", self.w, self.l)));
        }
        if !(-std::f64::consts::PI..std::f64::consts::PI).contains(&self.theta) {
            return Err(Error::invalid(format!("heading {} outside [-pi, pi)", self.theta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Target,
    Surrounding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CausalLabel {
    Causal,
    NonCausal,
    Unlabeled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorKind {
    LeaderFollower,
    Independent,
    SpuriousDistractor,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: AgentId,
    pub role: Role,
    pub history: Vec<AgentState>,
    /// Ground-truth future; always present for the target, usually empty
    /// for surrounding agents.
    pub future: Vec<AgentState>,
    pub causal_label: CausalLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub target: AgentTrack,
    pub surrounding: Vec<AgentTrack>,
    pub generator_kind: GeneratorKind,
    pub rng_seed: u64,
}

impl Scene {
    pub fn n_surrounding(&self) -> usize {
        self.surrounding.len()
    }

    pub fn surrounding_ids(&self) -> Vec<AgentId> {
        self.surrounding.iter().map(|a| a.agent_id).collect()
    }

    pub fn surrounding_id_set(&self) -> BTreeSet<AgentId> {
        self.surrounding.iter().map(|a| a.agent_id).collect()
    }

    pub fn history_len(&self) -> usize {
        self.target.history.len()
    }

    pub fn future_len(&self) -> usize {
        self.target.future.len()
    }

    /// Ground-truth future positions of the target, flattened to
    /// [x1, y1, x2, y2, ...].
    pub fn target_future_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.target.future.len() * 2);
        for s in &self.target.future {
            out.push(s.x);
            out.push(s.y);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.target.role != Role::Target {
            return Err(Error::invalid("scene target track must have Target role"));
        }
        if self.target.future.is_empty() {
            return Err(Error::invalid("target must carry a ground-truth future"));
        }
        let h = self.target.history.len();
        if h == 0 {
            return Err(Error::invalid("empty target history"));
        }
        let mut ids = BTreeSet::new();
        ids.insert(self.target.agent_id);
        for a in &self.surrounding {
            if a.role != Role::Surrounding {
                return Err(Error::invalid(format!("agent {} must have Surrounding role", a.agent_id)));
            }
            if a.history.len() != h {
                return Err(Error::invalid(format!(
                    "agent {} history length {} != {}",
                    a.agent_id,
                    a.history.len(),
                    h
                )));
            }
            if !ids.insert(a.agent_id) {
                return Err(Error::invalid(format!("duplicate agent_id {}", a.agent_id)));
            }
        }
        for track in std::iter::once(&self.target).chain(self.surrounding.iter()) {
            for s in track.history.iter().chain(track.future.iter()) {
                s.validate()?;
            }
        }
        Ok(())
    }
}

/// Keeps exactly the surrounding agents in `keep` (order preserved); the
/// target is never maskable. The input scene is untouched.
pub fn mask_scene(scene: &Scene, keep: &BTreeSet<AgentId>) -> Result<Scene> {
    let known = scene.surrounding_id_set();
    if let Some(bad) = keep.iter().find(|id| !known.contains(id)) {
        return Err(Error::invalid(format!(
            "keep set contains unknown agent_id {bad} (scene {} has {:?})",
            scene.scene_id,
            known.iter().collect::<Vec<_>>()
        )));
    }
    Ok(Scene {
        scene_id: scene.scene_id,
        target: scene.target.clone(),
        surrounding: scene
            .surrounding
            .iter()
            .filter(|a| keep.contains(&a.agent_id))
            .cloned()
            .collect(),
        generator_kind: scene.generator_kind,
        rng_seed: scene.rng_seed,
    })
}

/// Wraps an angle into [-pi, pi).
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let two_pi = 2.0 * PI;
    let mut t = (theta + PI) % two_pi;
    if t < 0.0 {
        t += two_pi;
    }
    let w = t - PI;
    // % can land exactly on the open upper bound.
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Rigid transform of a state into the frame anchored at (`ax`, `ay`) with
/// heading `atheta`.
pub(crate) fn to_frame(s: &AgentState, ax: f64, ay: f64, atheta: f64) -> AgentState {
    let (sin, cos) = (-atheta).sin_cos();
    let dx = s.x - ax;
    let dy = s.y - ay;
    AgentState {
        x: cos * dx - sin * dy,
        y: sin * dx + cos * dy,
        vx: cos * s.vx - sin * s.vy,
        vy: sin * s.vx + cos * s.vy,
        w: s.w,
        l: s.l,
        theta: wrap_angle(s.theta - atheta),
    }
}
