//! Forward-graph builders shared by training, inference and the coalition
//! evaluator. Every code path goes through the same builder functions, so a
//! prediction computed during training, through [`predict`], or from cached
//! embeddings is the same sequence of float ops.
//!
//! [`predict`]: super::predict

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{MixturePrediction, PredictorConfig};
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scene::{AgentId, AgentTrack};
use crate::tensor::{Graph, Tensor, Var};

// Input feature scaling; positions and speeds live in tens of meters (per
// second), extents in meters.
const POS_SCALE: f64 = 0.1;
const VEL_SCALE: f64 = 0.1;
const EXT_W_SCALE: f64 = 0.5;
const EXT_L_SCALE: f64 = 0.2;
const THETA_SCALE: f64 = std::f64::consts::FRAC_1_PI;

/// How the CIB latent is materialized.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CibDraw {
    /// Posterior mean; deterministic, used for metric evaluation.
    Mean,
    /// Reparameterized sample with noise keyed by `(base, agent_id)`, so
    /// the draw is independent of list order.
    Keyed(u64),
}

pub(crate) fn feature_dim(cfg: &PredictorConfig) -> usize {
    7 * cfg.h
}

/// Parameter names and shapes are a pure function of the config; checkpoint
/// compatibility checks compare against this listing.
pub(crate) fn param_specs(cfg: &PredictorConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let dz = cfg.d_z;
    let dh = d / cfg.n_heads;
    let input = feature_dim(cfg);
    let dec_out = cfg.k_modes * (4 * cfg.f + 1);
    let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
    for enc in ["target_enc", "agent_enc"] {
        specs.push((format!("{enc}.w1"), vec![input, d]));
        specs.push((format!("{enc}.b1"), vec![1, d]));
        specs.push((format!("{enc}.w2"), vec![d, d]));
        specs.push((format!("{enc}.b2"), vec![1, d]));
    }
    for head in 0..cfg.n_heads {
        specs.push((format!("attn.q{head}"), vec![d, dh]));
        specs.push((format!("attn.k{head}"), vec![d, dh]));
        specs.push((format!("attn.v{head}"), vec![d, dh]));
    }
    specs.push(("attn.out".into(), vec![d, d]));
    specs.push(("attn.out_b".into(), vec![1, d]));
    specs.push(("ff.w1".into(), vec![d, d]));
    specs.push(("ff.b1".into(), vec![1, d]));
    specs.push(("ff.w2".into(), vec![d, d]));
    specs.push(("ff.b2".into(), vec![1, d]));
    specs.push(("dec.w".into(), vec![d, dec_out]));
    specs.push(("dec.b".into(), vec![1, dec_out]));
    if cfg.use_cib {
        specs.push(("cib.post.we".into(), vec![d, d]));
        specs.push(("cib.post.wt".into(), vec![d, d]));
        specs.push(("cib.post.b1".into(), vec![1, d]));
        specs.push(("cib.post.mu_w".into(), vec![d, dz]));
        specs.push(("cib.post.mu_b".into(), vec![1, dz]));
        specs.push(("cib.post.ls_w".into(), vec![d, dz]));
        specs.push(("cib.post.ls_b".into(), vec![1, dz]));
        specs.push(("cib.prior.w1".into(), vec![d, d]));
        specs.push(("cib.prior.b1".into(), vec![1, d]));
        specs.push(("cib.prior.mu_w".into(), vec![d, dz]));
        specs.push(("cib.prior.mu_b".into(), vec![1, dz]));
        specs.push(("cib.prior.ls_w".into(), vec![d, dz]));
        specs.push(("cib.prior.ls_b".into(), vec![1, dz]));
        specs.push(("cib.read.w".into(), vec![dz, d]));
        specs.push(("cib.read.b".into(), vec![1, d]));
    }
    specs
}

pub(crate) fn init_params(cfg: &PredictorConfig) -> BTreeMap<String, Tensor> {
    let mut params = BTreeMap::new();
    for (idx, (name, shape)) in param_specs(cfg).iter().enumerate() {
        let numel: usize = shape.iter().product();
        let is_bias = shape[0] == 1 && shape.len() == 2 && name.contains(".b")
            || name.ends_with("_b")
            || name.ends_with(".b1")
            || name.ends_with(".b2");
        let data = if is_bias {
            let fill = if name == "cib.post.ls_b" { (0.05f64).ln() } else { 0.0 };
            vec![fill; numel]
        } else {
            let fan_in = shape[0] as f64;
            let fan_out = shape[1] as f64;
            let limit = (6.0 / (fan_in + fan_out)).sqrt();
            let mut rng = rng_from(&[cfg.seed, 0x1217, idx as u64]);
            (0..numel).map(|_| rng.gen_range(-limit..limit)).collect()
        };
        params.insert(name.clone(), Tensor::new(shape.clone(), data).expect("spec shape"));
    }
    params
}

/// Parameters bound into a graph, either as constants (inference) or as
/// gradient leaves (training).
pub(crate) struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub(crate) fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub(crate) fn names(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    #[cfg(test)]
    pub(crate) fn from_map(vars: BTreeMap<String, Var>) -> Self {
        Bound { vars }
    }
}

pub(crate) fn bind(g: &mut Graph, params: &BTreeMap<String, Tensor>, trainable: bool) -> Bound {
    let vars = params
        .iter()
        .map(|(name, tensor)| {
            let v = if trainable { g.param(tensor.clone()) } else { g.input(tensor.clone()) };
            (name.clone(), v)
        })
        .collect();
    Bound { vars }
}

/// Flattened, scaled history features of one track: 7 values per step.
pub(crate) fn track_features(track: &AgentTrack) -> Vec<f64> {
    let mut out = Vec::with_capacity(track.history.len() * 7);
    for s in &track.history {
        out.push(s.x * POS_SCALE);
        out.push(s.y * POS_SCALE);
        out.push(s.vx * VEL_SCALE);
        out.push(s.vy * VEL_SCALE);
        out.push(s.w * EXT_W_SCALE);
        out.push(s.l * EXT_L_SCALE);
        out.push(s.theta * THETA_SCALE);
    }
    out
}

fn feature_matrix(tracks: &[&AgentTrack]) -> Result<Tensor> {
    let rows = tracks.len();
    let cols = tracks[0].history.len() * 7;
    let mut data = Vec::with_capacity(rows * cols);
    for t in tracks {
        data.extend(track_features(t));
    }
    Tensor::new(vec![rows, cols], data)
}

/// Two-layer MLP with tanh hidden activation and linear output, applied
/// row-wise.
fn mlp(g: &mut Graph, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = g.matmul(x, b.var(&format!("{prefix}.w1")))?;
    let h = g.add(h, b.var(&format!("{prefix}.b1")))?;
    let h = g.tanh(h);
    let o = g.matmul(h, b.var(&format!("{prefix}.w2")))?;
    g.add(o, b.var(&format!("{prefix}.b2")))
}

/// Target embedding (1, d) from the target history only.
pub(crate) fn encode_target_var(
    g: &mut Graph,
    b: &Bound,
    target: &AgentTrack,
) -> Result<Var> {
    let x = g.input(feature_matrix(&[target])?);
    mlp(g, b, "target_enc", x)
}

/// Per-agent embeddings (n, d); the shared-weight encoder is row-wise, so
/// each row depends only on that agent's own track.
pub(crate) fn encode_agents_var(
    g: &mut Graph,
    b: &Bound,
    agents: &[&AgentTrack],
) -> Result<Option<Var>> {
    if agents.is_empty() {
        return Ok(None);
    }
    let x = g.input(feature_matrix(agents)?);
    Ok(Some(mlp(g, b, "agent_enc", x)?))
}

pub(crate) struct CibVars {
    pub compressed: Var,
    /// (n, 1) per-agent KL in nats.
    pub kl_rows: Var,
    pub total_kl: Var,
    /// Posterior and prior Gaussian parameters ((n, dz) and (1, dz)).
    pub mu_q: Var,
    pub ls_q: Var,
    pub mu_r: Var,
    pub ls_r: Var,
}

/// Conditional-bottleneck pass over agent embeddings: per-agent diagonal
/// Gaussian posterior q(t | x_agent, x_target) against a conditional prior
/// r(t | x_target), closed-form KL, and a readout of the latent back to
/// model width.
pub(crate) fn cib_apply(
    g: &mut Graph,
    b: &Bound,
    cfg: &PredictorConfig,
    target: Var,
    agents: Var,
    agent_ids: &[AgentId],
    draw: CibDraw,
) -> Result<CibVars> {
    let n = g.value(agents).shape()[0];
    debug_assert_eq!(n, agent_ids.len());

    // Broadcast the target embedding to one row per agent.
    let ones = g.input(Tensor::new(vec![n, 1], vec![1.0; n])?);
    let target_rows = g.matmul(ones, target)?;

    // Posterior head: h = tanh(E . We + T . Wt + b)
    let he = g.matmul(agents, b.var("cib.post.we"))?;
    let ht = g.matmul(target_rows, b.var("cib.post.wt"))?;
    let h = g.add(he, ht)?;
    let h = g.add(h, b.var("cib.post.b1"))?;
    let h = g.tanh(h);
    let mu_q = {
        let m = g.matmul(h, b.var("cib.post.mu_w"))?;
        g.add(m, b.var("cib.post.mu_b"))?
    };
    let ls_q = {
        let m = g.matmul(h, b.var("cib.post.ls_w"))?;
        g.add(m, b.var("cib.post.ls_b"))?
    };

    // Conditional prior from the target embedding alone (1, dz).
    let hp = g.matmul(target, b.var("cib.prior.w1"))?;
    let hp = g.add(hp, b.var("cib.prior.b1"))?;
    let hp = g.tanh(hp);
    let mu_r = {
        let m = g.matmul(hp, b.var("cib.prior.mu_w"))?;
        g.add(m, b.var("cib.prior.mu_b"))?
    };
    let ls_r = {
        let m = g.matmul(hp, b.var("cib.prior.ls_w"))?;
        g.add(m, b.var("cib.prior.ls_b"))?
    };

    // KL(q || r) per dimension:
    //   (ls_r - ls_q) + 0.5 (var_q + (mu_q - mu_r)^2) / var_r - 0.5
    let neg_dl = g.sub(ls_q, ls_r)?;
    let dl = g.neg(neg_dl);
    let dmu = g.sub(mu_q, mu_r)?;
    let dmu2 = g.mul(dmu, dmu)?;
    let two_lsq = g.affine(ls_q, 2.0, 0.0);
    let var_q = g.exp(two_lsq);
    let neg_two_lsr = g.affine(ls_r, -2.0, 0.0);
    let inv_var_r = g.exp(neg_two_lsr);
    let quad = g.add(var_q, dmu2)?;
    let quad = g.mul(quad, inv_var_r)?;
    let quad = g.affine(quad, 0.5, 0.0);
    let kl_dim = g.add(dl, quad)?;
    let kl_dim = g.affine(kl_dim, 1.0, -0.5);
    let ones_dz = g.input(Tensor::new(vec![cfg.d_z, 1], vec![1.0; cfg.d_z])?);
    let kl_rows = g.matmul(kl_dim, ones_dz)?;
    let total_kl = g.reduce_sum(kl_rows);

    // Latent: posterior mean, or a reparameterized sample keyed by agent id.
    let t = match draw {
        CibDraw::Mean => mu_q,
        CibDraw::Keyed(base) => {
            let mut eps = Vec::with_capacity(n * cfg.d_z);
            for &id in agent_ids {
                let mut rng = rng_from(&[base, 0xC1B, id]);
                for _ in 0..cfg.d_z {
                    eps.push(rng.sample::<f64, _>(StandardNormal));
                }
            }
            let eps = g.input(Tensor::new(vec![n, cfg.d_z], eps)?);
            let sigma_q = g.exp(ls_q);
            let noise = g.mul(sigma_q, eps)?;
            g.add(mu_q, noise)?
        }
    };

    let read = g.matmul(t, b.var("cib.read.w"))?;
    let read = g.add(read, b.var("cib.read.b"))?;
    let compressed = g.tanh(read);

    Ok(CibVars { compressed, kl_rows, total_kl, mu_q, ls_q, mu_r, ls_r })
}

pub(crate) struct DecodeVars {
    /// Per-mode future means, each (2F) flat [x1, y1, x2, y2, ...].
    pub mu: Vec<Var>,
    /// Per-mode standard deviations, each (2F), floored at sigma_min.
    pub sigma: Vec<Var>,
    /// Mode logits (K).
    pub logits: Var,
}

/// Target-query cross-attention over agent embeddings, feed-forward fusion,
/// then the mixture decoder. With no agents the attention block is skipped
/// and the target embedding passes straight into the feed-forward stage.
pub(crate) fn interact_decode(
    g: &mut Graph,
    b: &Bound,
    cfg: &PredictorConfig,
    target: Var,
    agents: Option<Var>,
    anchor_vel: (f64, f64),
) -> Result<DecodeVars> {
    let d = cfg.d_model;
    let dh = d / cfg.n_heads;

    let fused = match agents {
        None => target,
        Some(rows) => {
            let n = g.value(rows).shape()[0];
            let mut head_ctx = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let q = g.matmul(target, b.var(&format!("attn.q{head}")))?;
                let k = g.matmul(rows, b.var(&format!("attn.k{head}")))?;
                let v = g.matmul(rows, b.var(&format!("attn.v{head}")))?;
                let kt = g.transpose(k)?;
                let scores = g.matmul(q, kt)?;
                let scores = g.affine(scores, 1.0 / (dh as f64).sqrt(), 0.0);
                let scores = g.reshape(scores, vec![n])?;
                let alpha = g.softmax(scores)?;
                let alpha = g.reshape(alpha, vec![1, n])?;
                let ctx = g.matmul(alpha, v)?;
                head_ctx.push(g.reshape(ctx, vec![dh])?);
            }
            let ctx = g.concat0(&head_ctx)?;
            let ctx = g.reshape(ctx, vec![1, d])?;
            let ctx = g.matmul(ctx, b.var("attn.out"))?;
            let ctx = g.add(ctx, b.var("attn.out_b"))?;
            g.add(target, ctx)?
        }
    };

    // Residual feed-forward.
    let ff = {
        let h = g.matmul(fused, b.var("ff.w1"))?;
        let h = g.add(h, b.var("ff.b1"))?;
        let h = g.tanh(h);
        let o = g.matmul(h, b.var("ff.w2"))?;
        g.add(o, b.var("ff.b2"))?
    };
    let hidden = g.add(fused, ff)?;

    let out = g.matmul(hidden, b.var("dec.w"))?;
    let out = g.add(out, b.var("dec.b"))?;
    let per_mode = 4 * cfg.f + 1;
    let out = g.reshape(out, vec![cfg.k_modes * per_mode])?;

    // Means are offsets from a constant-velocity rollout of the target's
    // anchor velocity, so an untrained decoder already predicts "keep going".
    let mut cv = Vec::with_capacity(2 * cfg.f);
    for k in 1..=cfg.f {
        cv.push(anchor_vel.0 * cfg.dt * k as f64);
        cv.push(anchor_vel.1 * cfg.dt * k as f64);
    }
    let cv = g.input(Tensor::vector(cv)?);

    let mut mu = Vec::with_capacity(cfg.k_modes);
    let mut sigma = Vec::with_capacity(cfg.k_modes);
    let mut logit_parts = Vec::with_capacity(cfg.k_modes);
    for k in 0..cfg.k_modes {
        let base = k * per_mode;
        let mu_raw = g.slice(out, base, 2 * cfg.f)?;
        mu.push(g.add(mu_raw, cv)?);
        let s_raw = g.slice(out, base + 2 * cfg.f, 2 * cfg.f)?;
        let s = g.exp(s_raw);
        sigma.push(g.affine(s, 1.0, cfg.sigma_min));
        logit_parts.push(g.slice(out, base + 4 * cfg.f, 1)?);
    }
    let logits = g.concat0(&logit_parts)?;
    Ok(DecodeVars { mu, sigma, logits })
}

/// Mixture NLL of the ground-truth future under the decoded mixture:
/// -logsumexp_k(log pi_k + sum_t log N(gt_t; mu_kt, sigma_kt)).
pub(crate) fn mixture_nll(
    g: &mut Graph,
    dec: &DecodeVars,
    gt_flat: &[f64],
) -> Result<Var> {
    let lse = g.logsumexp(dec.logits)?;
    let log_pi = g.sub(dec.logits, lse)?;
    let gt = g.input(Tensor::vector(gt_flat.to_vec())?);
    let mut joint = Vec::with_capacity(dec.mu.len());
    for k in 0..dec.mu.len() {
        let lp = g.gaussian_log_pdf(gt, dec.mu[k], dec.sigma[k])?;
        joint.push(g.reshape(lp, vec![1])?);
    }
    let joint = g.concat0(&joint)?;
    let mix = g.add(log_pi, joint)?;
    let ll = g.logsumexp(mix)?;
    Ok(g.neg(ll))
}

pub(crate) fn extract_prediction(g: &Graph, dec: &DecodeVars, f: usize) -> MixturePrediction {
    let probs = {
        let logits = g.value(dec.logits).data();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    };
    let unflatten = |v: &Tensor| -> Vec<(f64, f64)> {
        v.data().chunks_exact(2).map(|c| (c[0], c[1])).collect()
    };
    let modes: Vec<Vec<(f64, f64)>> = dec.mu.iter().map(|&m| unflatten(g.value(m))).collect();
    let sigmas: Vec<Vec<(f64, f64)>> = dec.sigma.iter().map(|&s| unflatten(g.value(s))).collect();
    debug_assert!(modes.iter().all(|m| m.len() == f));
    MixturePrediction { modes, sigmas, mode_probs: probs }
}

pub(crate) fn anchor_velocity(target: &AgentTrack) -> (f64, f64) {
    let s = target.history.last().expect("non-empty history");
    (s.vx, s.vy)
}

/// Whether an error from a missing keep-id should name the offending id.
pub(crate) fn kept_tracks<'s>(
    surrounding: &'s [AgentTrack],
    keep: &std::collections::BTreeSet<AgentId>,
) -> Result<Vec<&'s AgentTrack>> {
    let known: std::collections::BTreeSet<AgentId> =
        surrounding.iter().map(|a| a.agent_id).collect();
    if let Some(bad) = keep.iter().find(|id| !known.contains(id)) {
        return Err(Error::invalid(format!("unknown agent_id {bad} in keep set")));
    }
    Ok(surrounding.iter().filter(|a| keep.contains(&a.agent_id)).collect())
}
