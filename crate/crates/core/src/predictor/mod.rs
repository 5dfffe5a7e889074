//! Encoder-interactor-decoder trajectory predictor with a K-mode Gaussian
//! mixture head and agent-subset masking at the inference interface.

mod checkpoint;
mod net;
mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};
pub use train::{train, EpochStats, OptimizerConfig, TrainingReport};

pub(crate) use net::{cib_apply as cib_apply_public, CibDraw};

#[cfg(test)]
use crate::tensor::Var;

/// Binds a parameter map as graph constants (used by the standalone CIB op).
pub(crate) fn bind_for_cib(g: &mut Graph, params: &BTreeMap<String, Tensor>) -> net::Bound {
    net::bind(g, params, false)
}

/// Full per-scene training loss from pre-bound parameter vars; test hook for
/// end-to-end gradient checks.
#[cfg(test)]
pub(crate) fn scene_loss_for_test(
    g: &mut Graph,
    vars: &BTreeMap<String, Var>,
    cfg: &PredictorConfig,
    scene: &Scene,
    draw: CibDraw,
) -> crate::error::Result<Var> {
    let bound = net::Bound::from_map(vars.clone());
    train::scene_loss(g, &bound, cfg, scene, draw, 1.0).map(|(loss, _, _)| loss)
}

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KvReader;
use crate::scene::{AgentId, Scene};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub d_model: usize,
    pub k_modes: usize,
    pub h: usize,
    pub f: usize,
    pub dt: f64,
    pub n_heads: usize,
    pub use_cib: bool,
    /// KL weight; ignored when `use_cib` is false.
    pub beta: f64,
    pub d_z: usize,
    pub sigma_min: f64,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            d_model: 16,
            k_modes: 6,
            h: 10,
            f: 12,
            dt: 0.5,
            n_heads: 2,
            use_cib: false,
            beta: 0.0,
            d_z: 8,
            sigma_min: 0.1,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_modes == 0 {
            return Err(Error::config("k_modes must be at least 1"));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.beta < 0.0 {
            return Err(Error::config("beta must be non-negative"));
        }
        if self.d_z == 0 || self.d_z > self.d_model {
            return Err(Error::config("d_z must be in [1, d_model]"));
        }
        if !(self.sigma_min > 0.0) {
            return Err(Error::config("sigma_min must be positive"));
        }
        if self.h == 0 || self.f == 0 || !(self.dt > 0.0) {
            return Err(Error::config("h, f and dt must be positive"));
        }
        Ok(())
    }

    pub fn from_kv(kv: &mut KvReader, prefix: &str) -> Result<Self> {
        let d = PredictorConfig::default();
        let k = |name: &str| format!("{prefix}{name}");
        let cfg = PredictorConfig {
            d_model: kv.usize_or(&k("d_model"), d.d_model)?,
            k_modes: kv.usize_or(&k("k_modes"), d.k_modes)?,
            h: kv.usize_or(&k("h"), d.h)?,
            f: kv.usize_or(&k("f"), d.f)?,
            dt: kv.f64_or(&k("dt"), d.dt)?,
            n_heads: kv.usize_or(&k("n_heads"), d.n_heads)?,
            use_cib: kv.bool_or(&k("use_cib"), d.use_cib)?,
            beta: kv.f64_or(&k("beta"), d.beta)?,
            d_z: kv.usize_or(&k("d_z"), d.d_z)?,
            sigma_min: kv.f64_or(&k("sigma_min"), d.sigma_min)?,
            seed: kv.u64_or(&k("seed"), d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// K mode trajectories with per-step diagonal Gaussian uncertainty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixturePrediction {
    /// K trajectories of F (x, y) means, meters.
    pub modes: Vec<Vec<(f64, f64)>>,
    /// K trajectories of F (sigma_x, sigma_y), meters.
    pub sigmas: Vec<Vec<(f64, f64)>>,
    /// K mode probabilities, summing to one.
    pub mode_probs: Vec<f64>,
}

impl MixturePrediction {
    pub fn k(&self) -> usize {
        self.modes.len()
    }

    pub fn horizon(&self) -> usize {
        self.modes.first().map_or(0, |m| m.len())
    }

    pub fn validate(&self, sigma_min: f64) -> Result<()> {
        if self.modes.len() != self.sigmas.len() || self.modes.len() != self.mode_probs.len() {
            return Err(Error::invalid("mixture component counts disagree"));
        }
        let total: f64 = self.mode_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.mode_probs.iter().any(|&p| p < 0.0) {
            return Err(Error::invalid(format!("mode probabilities sum to {total}")));
        }
        for traj in &self.sigmas {
            for &(sx, sy) in traj {
                if sx < sigma_min || sy < sigma_min {
                    return Err(Error::invalid(format!(
                        "sigma below floor {sigma_min}: ({sx}, {sy})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Inference-time stochasticity. Deterministic mode uses the CIB posterior
/// mean; stochastic mode draws the latent with noise keyed by
/// `(seed, agent_id)`. Models without a CIB ignore the distinction.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Inference {
    Deterministic,
    Stochastic(u64),
}

impl Inference {
    pub(crate) fn draw(&self, use_cib: bool) -> CibDraw {
        match (use_cib, self) {
            (false, _) | (true, Inference::Deterministic) => CibDraw::Mean,
            (true, Inference::Stochastic(seed)) => CibDraw::Keyed(*seed),
        }
    }
}

/// Parameterized predictor; parameter names and shapes are fully determined
/// by the config.
#[derive(Clone, Debug)]
pub struct PredictorModel {
    config: PredictorConfig,
    params: BTreeMap<String, Tensor>,
}

impl PredictorModel {
    pub fn new(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let params = net::init_params(&config);
        Ok(PredictorModel { config, params })
    }

    pub(crate) fn from_parts(config: PredictorConfig, params: BTreeMap<String, Tensor>) -> Self {
        PredictorModel { config, params }
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    /// Replaces one parameter tensor; the shape must match the existing one.
    pub fn set_param(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let current = self
            .params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        if current.shape() != tensor.shape() {
            return Err(Error::Shape {
                op: "set_param",
                left: current.shape().to_vec(),
                right: tensor.shape().to_vec(),
            });
        }
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    fn check_scene(&self, scene: &Scene) -> Result<()> {
        if scene.history_len() != self.config.h {
            return Err(Error::invalid(format!(
                "scene history length {} != model h {}",
                scene.history_len(),
                self.config.h
            )));
        }
        Ok(())
    }

    /// Embedding of the target history; independent of surrounding agents.
    pub fn encode_target(&self, scene: &Scene) -> Result<Tensor> {
        self.check_scene(scene)?;
        let mut g = Graph::new();
        let b = net::bind(&mut g, &self.params, false);
        let e = net::encode_target_var(&mut g, &b, &scene.target)?;
        Ok(g.value(e).clone())
    }

    /// Per-agent embeddings of the kept surrounding agents (scene order,
    /// shared encoder weights, before any CIB compression).
    pub fn encode_surrounding(
        &self,
        scene: &Scene,
        keep: &BTreeSet<AgentId>,
    ) -> Result<Vec<(AgentId, Tensor)>> {
        self.check_scene(scene)?;
        let kept = net::kept_tracks(&scene.surrounding, keep)?;
        if kept.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let b = net::bind(&mut g, &self.params, false);
        let rows = net::encode_agents_var(&mut g, &b, &kept)?.expect("non-empty");
        let value = g.value(rows);
        let d = self.config.d_model;
        Ok(kept
            .iter()
            .enumerate()
            .map(|(i, track)| {
                let row = value.data()[i * d..(i + 1) * d].to_vec();
                (track.agent_id, Tensor::new(vec![1, d], row).expect("row"))
            })
            .collect())
    }

    /// Full prediction for a coalition of surrounding agents.
    pub fn predict(
        &self,
        scene: &Scene,
        keep: &BTreeSet<AgentId>,
        inference: Inference,
    ) -> Result<MixturePrediction> {
        let emb = self.embed_scene(scene, keep, inference)?;
        emb.predict_for(&emb.id_set())
    }

    /// Runs the encoders (and CIB, when enabled) once for the kept agents;
    /// the returned embeddings answer per-coalition predictions cheaply.
    /// Valid because the per-agent pipeline is independent of which other
    /// agents are present.
    pub fn embed_scene(
        &self,
        scene: &Scene,
        keep: &BTreeSet<AgentId>,
        inference: Inference,
    ) -> Result<SceneEmbeddings<'_>> {
        self.check_scene(scene)?;
        let kept = net::kept_tracks(&scene.surrounding, keep)?;
        let mut g = Graph::new();
        let b = net::bind(&mut g, &self.params, false);
        let target_var = net::encode_target_var(&mut g, &b, &scene.target)?;
        let ids: Vec<AgentId> = kept.iter().map(|t| t.agent_id).collect();
        let rows_var = net::encode_agents_var(&mut g, &b, &kept)?;
        let rows_var = match (rows_var, self.config.use_cib) {
            (Some(rows), true) => {
                let cib = net::cib_apply(
                    &mut g,
                    &b,
                    &self.config,
                    target_var,
                    rows,
                    &ids,
                    inference.draw(true),
                )?;
                Some(cib.compressed)
            }
            (rows, _) => rows,
        };
        let d = self.config.d_model;
        let rows = match rows_var {
            None => Vec::new(),
            Some(v) => {
                let value = g.value(v);
                ids.iter()
                    .enumerate()
                    .map(|(i, &id)| {
                        let row = value.data()[i * d..(i + 1) * d].to_vec();
                        (id, Tensor::new(vec![1, d], row).expect("row"))
                    })
                    .collect()
            }
        };
        Ok(SceneEmbeddings {
            model: self,
            anchor_vel: net::anchor_velocity(&scene.target),
            target_embedding: g.value(target_var).clone(),
            rows,
        })
    }
}

/// Cached target and per-agent embeddings for one scene; predictions over
/// any subset of the embedded agents re-run only the interactor + decoder.
pub struct SceneEmbeddings<'m> {
    model: &'m PredictorModel,
    anchor_vel: (f64, f64),
    target_embedding: Tensor,
    rows: Vec<(AgentId, Tensor)>,
}

impl SceneEmbeddings<'_> {
    pub fn ids(&self) -> Vec<AgentId> {
        self.rows.iter().map(|(id, _)| *id).collect()
    }

    pub fn id_set(&self) -> BTreeSet<AgentId> {
        self.rows.iter().map(|(id, _)| *id).collect()
    }

    pub fn n_agents(&self) -> usize {
        self.rows.len()
    }

    /// Prediction using only the agents in `keep` (a subset of the embedded
    /// agents).
    pub fn predict_for(&self, keep: &BTreeSet<AgentId>) -> Result<MixturePrediction> {
        for id in keep {
            if !self.rows.iter().any(|(rid, _)| rid == id) {
                return Err(Error::invalid(format!("agent {id} not embedded")));
            }
        }
        let selected: Vec<&Tensor> =
            self.rows.iter().filter(|(id, _)| keep.contains(id)).map(|(_, t)| t).collect();
        self.decode(&selected)
    }

    /// Prediction for a coalition given as a bitmask over the embedded agent
    /// order (bit i = i-th embedded agent).
    pub fn predict_mask(&self, mask: u32) -> Result<MixturePrediction> {
        if mask != 0 && (mask >> self.rows.len()) != 0 {
            return Err(Error::invalid(format!(
                "mask {mask:#b} wider than {} agents",
                self.rows.len()
            )));
        }
        let selected: Vec<&Tensor> = self
            .rows
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, (_, t))| t)
            .collect();
        self.decode(&selected)
    }

    fn decode(&self, rows: &[&Tensor]) -> Result<MixturePrediction> {
        let cfg = &self.model.config;
        let mut g = Graph::new();
        let b = net::bind(&mut g, &self.model.params, false);
        let target = g.input(self.target_embedding.clone());
        let agents = if rows.is_empty() {
            None
        } else {
            let mat = crate::tensor::Tensor::new(
                vec![rows.len(), cfg.d_model],
                rows.iter().flat_map(|t| t.data().iter().copied()).collect(),
            )?;
            Some(g.input(mat))
        };
        let dec = net::interact_decode(&mut g, &b, cfg, target, agents, self.anchor_vel)?;
        let pred = net::extract_prediction(&g, &dec, cfg.f);
        pred.validate(cfg.sigma_min)?;
        Ok(pred)
    }
}

#[cfg(test)]
mod tests;
