//! Trajectory evaluation metrics and the value-function adapter used by
//! attribution. Each metric is a strategy behind the [`Metric`] trait,
//! constructed from a [`MetricKind`] or parsed from a config name like
//! `minade@6`, `missrate@6:2.0` or `nll`. All metrics are lower-is-better.

mod coalition;

pub use coalition::CoalitionEvaluator;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{Inference, MixturePrediction, PredictorModel};
use crate::scene::{AgentId, Scene};
use crate::tensor::logsumexp_slice;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MetricKind {
    /// Minimum over the top-K' modes of the mean pointwise Euclidean error.
    MinAde { k: usize },
    /// Same, at the final step only.
    MinFde { k: usize },
    /// 1 when no top-K' mode ends within `threshold_m` of the ground truth.
    MissRate { k: usize, threshold_m: f64 },
    /// Mixture negative log-likelihood over all modes.
    Nll,
}

impl MetricKind {
    pub fn id(&self) -> String {
        match self {
            MetricKind::MinAde { k } => format!("minade@{k}"),
            MetricKind::MinFde { k } => format!("minfde@{k}"),
            MetricKind::MissRate { k, threshold_m } => format!("missrate@{k}:{threshold_m}"),
            MetricKind::Nll => "nll".to_string(),
        }
    }

    /// Parses `minade@K`, `minfde@K`, `missrate@K[:threshold]`, `nll`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::config(format!("unknown metric {text:?}"));
        if text == "nll" {
            return Ok(MetricKind::Nll);
        }
        let (name, rest) = text.split_once('@').ok_or_else(bad)?;
        match name {
            "minade" => Ok(MetricKind::MinAde { k: rest.parse().map_err(|_| bad())? }),
            "minfde" => Ok(MetricKind::MinFde { k: rest.parse().map_err(|_| bad())? }),
            "missrate" => {
                let (k, threshold) = match rest.split_once(':') {
                    Some((k, t)) => (
                        k.parse().map_err(|_| bad())?,
                        t.parse().map_err(|_| bad())?,
                    ),
                    None => (rest.parse().map_err(|_| bad())?, 2.0),
                };
                Ok(MetricKind::MissRate { k, threshold_m: threshold })
            }
            _ => Err(bad()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MetricKind::MinAde { k } | MetricKind::MinFde { k } if k == 0 => {
                Err(Error::config("metric K' must be at least 1"))
            }
            MetricKind::MissRate { k, threshold_m } => {
                if k == 0 {
                    Err(Error::config("metric K' must be at least 1"))
                } else if !(threshold_m > 0.0) {
                    Err(Error::config("miss threshold must be positive"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
    pub lower_is_better: bool,
}

/// One evaluation strategy.
pub trait Metric: Send + Sync {
    fn kind(&self) -> MetricKind;
    fn score(&self, pred: &MixturePrediction, gt: &[(f64, f64)]) -> Result<f64>;
}

/// Instantiates the strategy for a metric kind.
pub fn metric_for(kind: MetricKind) -> Result<Box<dyn Metric>> {
    kind.validate()?;
    Ok(match kind {
        MetricKind::MinAde { k } => Box::new(MinAdeMetric { k }),
        MetricKind::MinFde { k } => Box::new(MinFdeMetric { k }),
        MetricKind::MissRate { k, threshold_m } => Box::new(MissRateMetric { k, threshold_m }),
        MetricKind::Nll => Box::new(NllMetric),
    })
}

/// Parses a metric name and instantiates it.
pub fn metric_by_name(name: &str) -> Result<Box<dyn Metric>> {
    metric_for(MetricKind::parse(name)?)
}

/// Scores a prediction against the ground-truth future.
pub fn evaluate(pred: &MixturePrediction, gt: &[(f64, f64)], kind: MetricKind) -> Result<MetricValue> {
    let value = metric_for(kind)?.score(pred, gt)?;
    Ok(MetricValue { kind, value, lower_is_better: true })
}

/// The attribution value function v(S) = m(f(S)): metric value of the
/// prediction when only coalition `keep` of surrounding agents is visible.
/// Deterministic (posterior-mean) evaluation mode.
pub fn value_function(
    model: &PredictorModel,
    scene: &Scene,
    keep: &BTreeSet<AgentId>,
    kind: MetricKind,
) -> Result<f64> {
    let pred = model.predict(scene, keep, Inference::Deterministic)?;
    Ok(evaluate(&pred, &gt_of(scene), kind)?.value)
}

pub(crate) fn gt_of(scene: &Scene) -> Vec<(f64, f64)> {
    scene.target.future.iter().map(|s| (s.x, s.y)).collect()
}

fn check_lengths(pred: &MixturePrediction, gt: &[(f64, f64)]) -> Result<()> {
    if pred.horizon() != gt.len() || gt.is_empty() {
        return Err(Error::invalid(format!(
            "ground truth length {} does not match prediction horizon {}",
            gt.len(),
            pred.horizon()
        )));
    }
    Ok(())
}

/// Indices of the top-k modes by probability, ties broken by mode index.
fn top_k_indices(pred: &MixturePrediction, k: usize) -> Result<Vec<usize>> {
    if k > pred.k() {
        return Err(Error::invalid(format!(
            "metric K'={k} exceeds the prediction's {} modes",
            pred.k()
        )));
    }
    let mut order: Vec<usize> = (0..pred.k()).collect();
    order.sort_by(|&a, &b| {
        pred.mode_probs[b]
            .partial_cmp(&pred.mode_probs[a])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

struct MinAdeMetric {
    k: usize,
}

impl Metric for MinAdeMetric {
    fn kind(&self) -> MetricKind {
        MetricKind::MinAde { k: self.k }
    }

    fn score(&self, pred: &MixturePrediction, gt: &[(f64, f64)]) -> Result<f64> {
        check_lengths(pred, gt)?;
        let mut best = f64::INFINITY;
        for idx in top_k_indices(pred, self.k)? {
            let ade: f64 = pred.modes[idx]
                .iter()
                .zip(gt)
                .map(|(&m, &g)| euclid(m, g))
                .sum::<f64>()
                / gt.len() as f64;
            best = best.min(ade);
        }
        Ok(best)
    }
}

struct MinFdeMetric {
    k: usize,
}

impl Metric for MinFdeMetric {
    fn kind(&self) -> MetricKind {
        MetricKind::MinFde { k: self.k }
    }

    fn score(&self, pred: &MixturePrediction, gt: &[(f64, f64)]) -> Result<f64> {
        check_lengths(pred, gt)?;
        let last = gt.len() - 1;
        let mut best = f64::INFINITY;
        for idx in top_k_indices(pred, self.k)? {
            best = best.min(euclid(pred.modes[idx][last], gt[last]));
        }
        Ok(best)
    }
}

struct MissRateMetric {
    k: usize,
    threshold_m: f64,
}

impl Metric for MissRateMetric {
    fn kind(&self) -> MetricKind {
        MetricKind::MissRate { k: self.k, threshold_m: self.threshold_m }
    }

    fn score(&self, pred: &MixturePrediction, gt: &[(f64, f64)]) -> Result<f64> {
        check_lengths(pred, gt)?;
        let last = gt.len() - 1;
        let hit = top_k_indices(pred, self.k)?
            .into_iter()
            .any(|idx| euclid(pred.modes[idx][last], gt[last]) <= self.threshold_m);
        Ok(if hit { 0.0 } else { 1.0 })
    }
}

struct NllMetric;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl Metric for NllMetric {
    fn kind(&self) -> MetricKind {
        MetricKind::Nll
    }

    fn score(&self, pred: &MixturePrediction, gt: &[(f64, f64)]) -> Result<f64> {
        check_lengths(pred, gt)?;
        let joints: Vec<f64> = (0..pred.k())
            .map(|k| {
                let mut lp = pred.mode_probs[k].ln();
                for (t, &(gx, gy)) in gt.iter().enumerate() {
                    let (mx, my) = pred.modes[k][t];
                    let (sx, sy) = pred.sigmas[k][t];
                    for (g, m, s) in [(gx, mx, sx), (gy, my, sy)] {
                        let z = (g - m) / s;
                        lp += -0.5 * LN_2PI - s.ln() - 0.5 * z * z;
                    }
                }
                lp
            })
            .collect();
        Ok(-logsumexp_slice(&joints))
    }
}

#[cfg(test)]
mod tests;
