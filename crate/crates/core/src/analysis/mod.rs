//! Faithfulness and agreement analyses on top of precomputed attributions:
//! insertion/deletion curves, intra-/inter-model agreement histograms with
//! a binomial random baseline, and attribution-vs-causal-label comparison.

mod agreement;

pub use agreement::{
    agreement, causal_alignment, chi2_vs_baseline, extreme_mass, labels_from_scenes,
    write_agreement_csv, AgreementHistogram, AgreementMode, Chi2Result, LabelFilter,
};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::AttributionResult;
use crate::error::{Error, Result};
use crate::metrics::{CoalitionEvaluator, MetricKind};
use crate::predictor::{Inference, PredictorModel};
use crate::scene::{AgentId, Scene, Split};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InsertionOrder {
    MostHelpfulFirst,
    LeastHelpfulFirst,
}

impl InsertionOrder {
    pub fn as_str(&self) -> &'static str {
        match self {
            InsertionOrder::MostHelpfulFirst => "most_helpful_first",
            InsertionOrder::LeastHelpfulFirst => "least_helpful_first",
        }
    }
}

/// Mean metric value as agents are inserted in attribution order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InsertionCurve {
    pub metric: MetricKind,
    pub fractions: Vec<f64>,
    pub values: Vec<f64>,
    pub order: InsertionOrder,
    pub split: String,
    pub n_scenes: usize,
}

impl InsertionCurve {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.len() != self.values.len() {
            return Err(Error::invalid("fraction/value length mismatch"));
        }
        if self.fractions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("fractions must be strictly increasing"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite curve value"));
        }
        Ok(())
    }

    /// Depth of the U: min(endpoints) - min(curve).
    pub fn dip_depth(&self) -> f64 {
        let first = *self.values.first().expect("non-empty curve");
        let last = *self.values.last().expect("non-empty curve");
        let min = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        first.min(last) - min
    }
}

/// The 11-point fraction grid {0.0, 0.1, ..., 1.0}.
pub fn default_fractions() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Agent ids of one scene ordered by attribution score; most helpful first
/// means ascending phi (metrics are lower-is-better). Ties break by
/// agent id.
fn ordered_ids(attr: &AttributionResult, order: InsertionOrder) -> Vec<AgentId> {
    let mut ids: Vec<(AgentId, f64)> = attr.phi.iter().map(|(&id, &phi)| (id, phi)).collect();
    ids.sort_by(|a, b| {
        let cmp = a.1.partial_cmp(&b.1).expect("finite phi").then(a.0.cmp(&b.0));
        match order {
            InsertionOrder::MostHelpfulFirst => cmp,
            InsertionOrder::LeastHelpfulFirst => {
                b.1.partial_cmp(&a.1).expect("finite phi").then(a.0.cmp(&b.0))
            }
        }
    });
    ids.into_iter().map(|(id, _)| id).collect()
}

fn check_coverage(
    scenes: &[Scene],
    attributions: &BTreeMap<u64, AttributionResult>,
) -> Result<()> {
    let missing: Vec<u64> = scenes
        .iter()
        .filter(|s| !attributions.contains_key(&s.scene_id))
        .map(|s| s.scene_id)
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "missing attributions for scene_ids {missing:?}"
        )));
    }
    Ok(())
}

/// Per-scene metric values at each insertion fraction; one coalition
/// evaluator (and its cache) per scene, shared across fractions.
fn scene_curve(
    model: &PredictorModel,
    scene: &Scene,
    attr: &AttributionResult,
    metric: MetricKind,
    order: InsertionOrder,
    fractions: &[f64],
    inference: Inference,
    keep_range: impl Fn(f64, usize) -> std::ops::Range<usize>,
) -> Result<Vec<f64>> {
    let eval = CoalitionEvaluator::new(model, scene, &[metric], inference)?;
    let ordered = ordered_ids(attr, order);
    if ordered.len() != eval.n() {
        return Err(Error::invalid(format!(
            "attribution of scene {} covers {} agents, scene has {}",
            scene.scene_id,
            ordered.len(),
            eval.n()
        )));
    }
    let mut out = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let keep = ordered[keep_range(f, ordered.len())].iter().copied().collect();
        out.push(eval.value(eval.mask_of(&keep)?, 0)?);
    }
    Ok(out)
}

fn mean_curve(
    model: &PredictorModel,
    scenes: &[Scene],
    attributions: &BTreeMap<u64, AttributionResult>,
    metric: MetricKind,
    order: InsertionOrder,
    split: Split,
    inference: Inference,
    keep_range: impl Fn(f64, usize) -> std::ops::Range<usize> + Sync,
) -> Result<InsertionCurve> {
    check_coverage(scenes, attributions)?;
    if scenes.is_empty() {
        return Err(Error::invalid("insertion test over an empty scene list"));
    }
    let fractions = default_fractions();
    let per_scene: Vec<Vec<f64>> = scenes
        .par_iter()
        .map(|scene| {
            scene_curve(
                model,
                scene,
                &attributions[&scene.scene_id],
                metric,
                order,
                &fractions,
                inference,
                &keep_range,
            )
        })
        .collect::<Result<_>>()?;
    let n = scenes.len() as f64;
    let values: Vec<f64> = (0..fractions.len())
        .map(|i| per_scene.iter().map(|c| c[i]).sum::<f64>() / n)
        .collect();
    let curve = InsertionCurve {
        metric,
        fractions,
        values,
        order,
        split: split.as_str().to_string(),
        n_scenes: scenes.len(),
    };
    curve.validate()?;
    Ok(curve)
}

/// Insertion test: at fraction f, keep the first ceil(f*n) agents in
/// attribution order and average the metric over scenes. Fraction 0 is the
/// no-agent condition, fraction 1 the full scene, so the endpoints coincide
/// with the gap report's m_none / m_all.
pub fn insertion_test(
    model: &PredictorModel,
    scenes: &[Scene],
    attributions: &BTreeMap<u64, AttributionResult>,
    metric: MetricKind,
    order: InsertionOrder,
    split: Split,
    inference: Inference,
) -> Result<InsertionCurve> {
    mean_curve(model, scenes, attributions, metric, order, split, inference, |f, n| {
        0..((f * n as f64).ceil().min(n as f64) as usize)
    })
}

/// Deletion test: at fraction f, remove the first floor(f*n) agents in the
/// given order. With floor rounding, deletion at f equals insertion at
/// 1 - f with the opposite order, value for value.
pub fn deletion_test(
    model: &PredictorModel,
    scenes: &[Scene],
    attributions: &BTreeMap<u64, AttributionResult>,
    metric: MetricKind,
    order: InsertionOrder,
    split: Split,
    inference: Inference,
) -> Result<InsertionCurve> {
    mean_curve(model, scenes, attributions, metric, order, split, inference, |f, n| {
        ((f * n as f64).floor() as usize).min(n)..n
    })
}

/// CSV with `#`-prefixed metadata lines, then `fraction,value` rows.
pub fn write_insertion_csv(
    path: &std::path::Path,
    curves: &[InsertionCurve],
    metadata: &[String],
) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in metadata {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "metric,order,split,n_scenes,fraction,value")?;
    for c in curves {
        for (f, v) in c.fractions.iter().zip(&c.values) {
            writeln!(
                w,
                "{},{},{},{},{},{:.17e}",
                c.metric.id(),
                c.order.as_str(),
                c.split,
                c.n_scenes,
                f,
                v
            )?;
        }
    }
    w.flush()?;
    Ok(())
}
