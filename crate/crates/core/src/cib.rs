//! Conditional information bottleneck over surrounding-agent embeddings.
//!
//! Each agent embedding is compressed through a per-agent diagonal Gaussian
//! posterior q(t | x_agent, x_target) scored against a conditional prior
//! r(t | x_target) that is learned from the target embedding alone. Agent
//! information that is redundant given the target's own history can
//! collapse onto the prior at zero KL cost; everything else pays beta
//! nats per use.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{PredictorConfig, PredictorModel};
use crate::scene::AgentId;
use crate::tensor::{Graph, Tensor};

/// Latent materialization mode.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CibMode {
    /// Reparameterized draw; noise keyed by `(seed, agent_id)`.
    Sample(u64),
    /// Posterior mean; deterministic.
    Mean,
}

/// The CIB parameter subset of a predictor, with its dimensions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CibParams {
    pub d_model: usize,
    pub d_z: usize,
    params: BTreeMap<String, Tensor>,
}

impl CibParams {
    pub(crate) fn new(d_model: usize, d_z: usize, params: BTreeMap<String, Tensor>) -> Self {
        CibParams { d_model, d_z, params }
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }
}

impl PredictorModel {
    /// The CIB parameter block, when the model carries one.
    pub fn cib_params(&self) -> Option<CibParams> {
        if !self.config().use_cib {
            return None;
        }
        let subset: BTreeMap<String, Tensor> = self
            .params()
            .iter()
            .filter(|(name, _)| name.starts_with("cib."))
            .map(|(name, tensor)| (name.clone(), tensor.clone()))
            .collect();
        Some(CibParams::new(self.config().d_model, self.config().d_z, subset))
    }
}

/// Result of one bottleneck pass.
#[derive(Clone, Debug)]
pub struct CibOutput {
    /// One compressed embedding per agent, (1, d_model).
    pub compressed: Vec<Tensor>,
    /// Per-agent KL(q || r) in nats.
    pub kl_per_agent: Vec<f64>,
    /// Sum of the per-agent terms.
    pub total_kl: f64,
}

/// Per-agent Gaussian parameters, exposed for diagnostics and oracles.
#[derive(Clone, Debug)]
pub struct CibPosterior {
    pub mu_q: Vec<f64>,
    pub log_sigma_q: Vec<f64>,
    pub mu_r: Vec<f64>,
    pub log_sigma_r: Vec<f64>,
}

/// Runs the bottleneck outside any model forward: agent embeddings in,
/// compressed embeddings and KL terms out. The empty list is a valid input
/// with `total_kl` 0.
pub fn cib_forward(
    agents: &[(AgentId, Tensor)],
    target: &Tensor,
    params: &CibParams,
    mode: CibMode,
) -> Result<CibOutput> {
    let (out, _) = cib_forward_detailed(agents, target, params, mode)?;
    Ok(out)
}

/// As [`cib_forward`], additionally returning the per-agent posterior/prior
/// parameters (used by the Monte-Carlo KL oracle).
pub fn cib_forward_detailed(
    agents: &[(AgentId, Tensor)],
    target: &Tensor,
    params: &CibParams,
    mode: CibMode,
) -> Result<(CibOutput, Vec<CibPosterior>)> {
    if agents.is_empty() {
        return Ok((CibOutput { compressed: Vec::new(), kl_per_agent: Vec::new(), total_kl: 0.0 }, Vec::new()));
    }
    let d = params.d_model;
    let dz = params.d_z;
    let cfg = PredictorConfig {
        d_model: d,
        d_z: dz,
        use_cib: true,
        ..PredictorConfig::default()
    };

    let mut g = Graph::new();
    g.set_trap(false);
    let bound = crate::predictor::bind_for_cib(&mut g, &params.params);
    let target_var = g.input(as_row(target, d)?);
    let rows = Tensor::new(
        vec![agents.len(), d],
        agents
            .iter()
            .map(|(_, t)| as_row(t, d))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect(),
    )?;
    let rows_var = g.input(rows);
    let ids: Vec<AgentId> = agents.iter().map(|(id, _)| *id).collect();
    let draw = match mode {
        CibMode::Mean => crate::predictor::CibDraw::Mean,
        CibMode::Sample(seed) => crate::predictor::CibDraw::Keyed(seed),
    };
    let vars = crate::predictor::cib_apply_public(&mut g, &bound, &cfg, target_var, rows_var, &ids, draw)?;

    let compressed_mat = g.value(vars.compressed);
    let kl_rows = g.value(vars.kl_rows);
    let mut compressed = Vec::with_capacity(agents.len());
    let mut kl_per_agent = Vec::with_capacity(agents.len());
    for (i, _) in agents.iter().enumerate() {
        let row = compressed_mat.data()[i * d..(i + 1) * d].to_vec();
        let kl = kl_rows.data()[i];
        if !kl.is_finite() || row.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite CIB output for agent index {i}")));
        }
        compressed.push(Tensor::new(vec![1, d], row)?);
        // Closed-form KL is non-negative; clamp float dust.
        kl_per_agent.push(kl.max(0.0));
    }
    let total_kl = kl_per_agent.iter().sum();

    let take_rows = |v: crate::tensor::Var, cols: usize| -> Vec<Vec<f64>> {
        let t = g.value(v);
        (0..agents.len()).map(|i| t.data()[i * cols..(i + 1) * cols].to_vec()).collect()
    };
    let prior_mu = g.value(vars.mu_r).data().to_vec();
    let prior_ls = g.value(vars.ls_r).data().to_vec();
    let posteriors = take_rows(vars.mu_q, dz)
        .into_iter()
        .zip(take_rows(vars.ls_q, dz))
        .map(|(mu_q, log_sigma_q)| CibPosterior {
            mu_q,
            log_sigma_q,
            mu_r: prior_mu.clone(),
            log_sigma_r: prior_ls.clone(),
        })
        .collect();

    Ok((CibOutput { compressed, kl_per_agent, total_kl }, posteriors))
}

fn as_row(t: &Tensor, d: usize) -> Result<Tensor> {
    if t.numel() != d {
        return Err(Error::Shape { op: "cib_forward", left: t.shape().to_vec(), right: vec![1, d] });
    }
    Tensor::new(vec![1, d], t.data().to_vec())
}

/// The beta-weighted KL penalty added to the prediction NLL by the trainer.
pub fn cib_loss_term(output: &CibOutput, beta: f64) -> Result<Tensor> {
    if beta < 0.0 {
        return Err(Error::invalid("beta must be non-negative"));
    }
    Ok(Tensor::scalar(beta * output.total_kl))
}

/// Closed-form KL between diagonal Gaussians, for oracles and direct use.
pub fn gaussian_kl_diag(mu_q: &[f64], log_sigma_q: &[f64], mu_r: &[f64], log_sigma_r: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..mu_q.len() {
        let lsq = log_sigma_q[i];
        let lsr = log_sigma_r[i];
        let var_q = (2.0 * lsq).exp();
        let var_r = (2.0 * lsr).exp();
        let dmu = mu_q[i] - mu_r[i];
        acc += lsr - lsq + 0.5 * (var_q + dmu * dmu) / var_r - 0.5;
    }
    acc
}
