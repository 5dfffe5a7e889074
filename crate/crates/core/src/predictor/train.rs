//! Minibatch Adam training of the mixture NLL (plus the beta-weighted CIB
//! KL when enabled). Fully deterministic given the model seed and the data.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::net::{self, CibDraw};
use super::PredictorModel;
use crate::error::{Error, Result};
use crate::kv::KvReader;
use crate::rng::{mix, rng_from};
use crate::scene::Scene;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Probability that a training scene is replaced by a random coalition
    /// of its agents (size uniform in 0..=n). Keeps masked and empty
    /// coalitions in-distribution, which the attribution value function
    /// evaluates constantly.
    pub mask_dropout: f64,
    /// Final learning-rate multiplier; the rate decays exponentially from
    /// `lr` to `lr * lr_decay` over the epochs. 1.0 keeps it constant.
    pub lr_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            epochs: 50,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            mask_dropout: 0.5,
            lr_decay: 0.1,
        }
    }
}

impl OptimizerConfig {
    pub fn from_kv(kv: &mut KvReader, prefix: &str) -> Result<Self> {
        let d = OptimizerConfig::default();
        let k = |name: &str| format!("{prefix}{name}");
        let cfg = OptimizerConfig {
            lr: kv.f64_or(&k("lr"), d.lr)?,
            epochs: kv.usize_or(&k("epochs"), d.epochs)?,
            batch_size: kv.usize_or(&k("batch_size"), d.batch_size)?,
            beta1: kv.f64_or(&k("adam_beta1"), d.beta1)?,
            beta2: kv.f64_or(&k("adam_beta2"), d.beta2)?,
            eps: kv.f64_or(&k("adam_eps"), d.eps)?,
            mask_dropout: kv.f64_or(&k("mask_dropout"), d.mask_dropout)?,
            lr_decay: kv.f64_or(&k("lr_decay"), d.lr_decay)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::config("lr must be positive and batch_size non-zero"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam betas must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.mask_dropout) {
            return Err(Error::config("mask_dropout must be in [0, 1]"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("lr_decay must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nll: f64,
    pub train_kl: f64,
    pub val_nll: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingReport {
    pub epochs: Vec<EpochStats>,
    pub steps: usize,
}

impl TrainingReport {
    pub fn final_val_nll(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_nll)
    }

    pub fn final_train_kl(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_kl)
    }
}

struct Adam {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: usize,
}

impl Adam {
    fn new(params: &BTreeMap<String, Tensor>) -> Self {
        let zeros =
            |p: &BTreeMap<String, Tensor>| p.iter().map(|(k, t)| (k.clone(), Tensor::zeros_like(t))).collect();
        Adam { m: zeros(params), v: zeros(params), t: 0 }
    }

    fn step(
        &mut self,
        cfg: &OptimizerConfig,
        lr: f64,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Option<Tensor>>,
    ) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (name, param) in params.iter_mut() {
            let m = self.m.get_mut(name).expect("moment");
            let v = self.v.get_mut(name).expect("moment");
            let zero = Tensor::zeros_like(param);
            let grad = grads.get(name).and_then(|g| g.as_ref()).unwrap_or(&zero);
            for i in 0..param.numel() {
                let gi = grad.data()[i];
                let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
                let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
                param.data_mut()[i] -= update;
            }
        }
    }
}

/// Per-scene loss graph: mixture NLL plus beta * total KL when the model
/// carries a CIB. Returns (loss, nll, kl) vars. `beta_scale` ramps the KL
/// weight during warmup.
pub(crate) fn scene_loss(
    g: &mut Graph,
    bound: &net::Bound,
    model_cfg: &super::PredictorConfig,
    scene: &Scene,
    draw: CibDraw,
    beta_scale: f64,
) -> Result<(crate::tensor::Var, crate::tensor::Var, crate::tensor::Var)> {
    let target = net::encode_target_var(g, bound, &scene.target)?;
    let tracks: Vec<&crate::scene::AgentTrack> = scene.surrounding.iter().collect();
    let ids: Vec<u64> = tracks.iter().map(|t| t.agent_id).collect();
    let rows = net::encode_agents_var(g, bound, &tracks)?;
    let (rows, kl) = match (rows, model_cfg.use_cib) {
        (Some(r), true) => {
            let cib = net::cib_apply(g, bound, model_cfg, target, r, &ids, draw)?;
            (Some(cib.compressed), cib.total_kl)
        }
        (r, _) => (r, g.scalar(0.0)),
    };
    let dec = net::interact_decode(g, bound, model_cfg, target, rows, net::anchor_velocity(&scene.target))?;
    let nll = net::mixture_nll(g, &dec, &scene.target_future_flat())?;
    let loss = if model_cfg.use_cib && model_cfg.beta > 0.0 {
        let weighted = g.affine(kl, model_cfg.beta * beta_scale, 0.0);
        g.add(nll, weighted)?
    } else {
        nll
    };
    Ok((loss, nll, kl))
}

/// Mean validation NLL in deterministic (posterior-mean) evaluation mode.
fn mean_val_nll(model: &PredictorModel, scenes: &[Scene]) -> Result<f64> {
    if scenes.is_empty() {
        return Ok(f64::NAN);
    }
    let mut acc = 0.0;
    for scene in scenes {
        let mut g = Graph::new();
        g.set_trap(false);
        let bound = net::bind(&mut g, model.params(), false);
        let (_, nll, _) = scene_loss(&mut g, &bound, model.config(), scene, CibDraw::Mean, 1.0)?;
        acc += g.value(nll).item()?;
    }
    Ok(acc / scenes.len() as f64)
}

/// Trains in place. Deterministic given `(model.config.seed, scene order)`:
/// epoch shuffles, CIB noise and Adam state all derive from the seed.
pub fn train(
    model: &mut PredictorModel,
    train_scenes: &[Scene],
    val_scenes: &[Scene],
    opt: &OptimizerConfig,
) -> Result<TrainingReport> {
    opt.validate()?;
    if train_scenes.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    for scene in train_scenes.iter().chain(val_scenes) {
        if scene.history_len() != model.config().h || scene.future_len() != model.config().f {
            return Err(Error::invalid(format!(
                "scene {} horizon mismatch with model config",
                scene.scene_id
            )));
        }
    }

    let seed = model.config().seed;
    let mut adam = Adam::new(model.params());
    let mut report = TrainingReport::default();
    let mut global_step = 0usize;

    for epoch in 0..opt.epochs {
        // KL warmup: beta ramps linearly over the first half of training,
        // letting the agent channel form before compression pressure.
        let warmup = (opt.epochs / 2).max(1);
        let beta_scale = ((epoch + 1) as f64 / warmup as f64).min(1.0);
        let lr = if opt.epochs > 1 {
            opt.lr * opt.lr_decay.powf(epoch as f64 / (opt.epochs - 1) as f64)
        } else {
            opt.lr
        };
        let mut order: Vec<usize> = (0..train_scenes.len()).collect();
        order.shuffle(&mut rng_from(&[seed, 0x5467FF1E, epoch as u64]));

        let mut epoch_nll = 0.0;
        let mut epoch_kl = 0.0;
        for batch in order.chunks(opt.batch_size) {
            let mut g = Graph::new();
            g.set_trap(false);
            let bound = net::bind(&mut g, model.params(), true);
            let mut losses = Vec::with_capacity(batch.len());
            for &idx in batch {
                let scene = &train_scenes[idx];
                let masked;
                let scene = if opt.mask_dropout > 0.0 {
                    let mut rng =
                        rng_from(&[seed, 0xD809, epoch as u64, scene.scene_id]);
                    if rng.gen_bool(opt.mask_dropout) && scene.n_surrounding() > 0 {
                        let ids = scene.surrounding_ids();
                        let k = rng.gen_range(0..=ids.len());
                        let mut pool = ids.clone();
                        pool.shuffle(&mut rng);
                        let keep = pool.into_iter().take(k).collect();
                        masked = crate::scene::mask_scene(scene, &keep)?;
                        &masked
                    } else {
                        scene
                    }
                } else {
                    scene
                };
                let draw = if model.config().use_cib {
                    CibDraw::Keyed(mix(&[seed, 0x7E11, global_step as u64, scene.scene_id]))
                } else {
                    CibDraw::Mean
                };
                let (loss, nll, kl) =
                    scene_loss(&mut g, &bound, model.config(), scene, draw, beta_scale)?;
                epoch_nll += g.value(nll).item()?;
                epoch_kl += g.value(kl).item()?;
                losses.push(g.reshape(loss, vec![1])?);
            }
            let stacked = g.concat0(&losses)?;
            let batch_loss = g.reduce_mean(stacked);
            let loss_value = g.value(batch_loss).item()?;
            if !loss_value.is_finite() {
                return Err(Error::Training {
                    step: global_step,
                    message: format!("non-finite loss {loss_value}"),
                });
            }
            let mut grads = g.backward(batch_loss)?;
            let by_name: BTreeMap<String, Option<Tensor>> =
                bound.names().map(|(name, var)| (name.clone(), grads.take(*var))).collect();
            adam.step(opt, lr, model.params_mut(), &by_name);
            global_step += 1;
        }

        let val_nll = mean_val_nll(model, val_scenes)?;
        report.epochs.push(EpochStats {
            epoch,
            train_nll: epoch_nll / train_scenes.len() as f64,
            train_kl: epoch_kl / train_scenes.len() as f64,
            val_nll,
        });
    }
    report.steps = global_step;
    Ok(report)
}
