//! Per-agent Shapley attribution, Super-Agent extraction and the
//! All/Super/None gap report.

mod estimators;

pub use estimators::{
    estimator_from_config, ApproShapley, CoalitionValue, EstimatorTag, ExactShapley,
    ShapleyEstimator, ShapleyOutcome,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonio::to_string_g17;
use crate::metrics::{CoalitionEvaluator, MetricKind};
use crate::predictor::{Inference, PredictorModel};
use crate::scene::{AgentId, Scene};

/// Shapley values of one scene for one metric, with run metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub scene_id: u64,
    pub metric: MetricKind,
    pub estimator: EstimatorTag,
    pub phi: BTreeMap<AgentId, f64>,
    /// Per-agent standard error of the estimate; zero for the exact
    /// estimator.
    pub stderr: BTreeMap<AgentId, f64>,
    pub v_empty: f64,
    pub v_full: f64,
    pub model_checksum: String,
    pub seed: u64,
}

impl AttributionResult {
    /// Efficiency residual |sum(phi) - (v_full - v_empty)|.
    pub fn efficiency_gap(&self) -> f64 {
        let sum: f64 = self.phi.values().sum();
        (sum - (self.v_full - self.v_empty)).abs()
    }
}

/// Agents whose NLL attribution is strictly negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperAgentSet {
    pub scene_id: u64,
    pub members: BTreeSet<AgentId>,
}

/// Dataset-aggregated All / Super / None comparison for one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub metric: MetricKind,
    pub m_all: f64,
    pub m_super: f64,
    pub m_none: f64,
    pub delta_super_all: f64,
    pub delta_no_all: f64,
    pub n_scenes: usize,
}

/// Adapter presenting one metric of a [`CoalitionEvaluator`] as a Shapley
/// value function.
struct MetricLens<'e, 'm> {
    eval: &'e CoalitionEvaluator<'m>,
    metric_idx: usize,
}

impl CoalitionValue for MetricLens<'_, '_> {
    fn n(&self) -> usize {
        self.eval.n()
    }
    fn value(&mut self, mask: u32) -> Result<f64> {
        self.eval.value(mask, self.metric_idx)
    }
}

/// Attribution of one scene for every requested metric. Coalition
/// predictions are shared across metrics through the evaluator cache.
pub fn attribute_scene(
    model: &PredictorModel,
    scene: &Scene,
    kinds: &[MetricKind],
    estimator: &dyn ShapleyEstimator,
    inference: Inference,
    model_checksum: &str,
    seed: u64,
) -> Result<Vec<AttributionResult>> {
    let eval = CoalitionEvaluator::new(model, scene, kinds, inference)?;
    let ids = eval.ids();
    let mut out = Vec::with_capacity(kinds.len());
    for (metric_idx, &metric) in kinds.iter().enumerate() {
        let mut lens = MetricLens { eval: &eval, metric_idx };
        let outcome = estimator.attribute(&mut lens)?;
        out.push(AttributionResult {
            scene_id: scene.scene_id,
            metric,
            estimator: estimator.tag(),
            phi: ids.iter().copied().zip(outcome.phi.iter().copied()).collect(),
            stderr: ids.iter().copied().zip(outcome.stderr.iter().copied()).collect(),
            v_empty: outcome.v_empty,
            v_full: outcome.v_full,
            model_checksum: model_checksum.to_string(),
            seed,
        });
    }
    Ok(out)
}

/// Super-Agent extraction: strictly negative NLL attribution.
pub fn super_agents(attr: &AttributionResult) -> Result<SuperAgentSet> {
    if attr.metric != MetricKind::Nll {
        return Err(Error::invalid(format!(
            "super agents are defined on the NLL metric, got {}",
            attr.metric.id()
        )));
    }
    Ok(SuperAgentSet {
        scene_id: attr.scene_id,
        members: attr
            .phi
            .iter()
            .filter(|(_, &phi)| phi < 0.0)
            .map(|(&id, _)| id)
            .collect(),
    })
}

/// Dataset means of the value function under keep = All / Super / None.
/// Super sets must come from NLL attributions of the same model; the
/// reported metric may differ.
pub fn gap_report(
    model: &PredictorModel,
    scenes: &[Scene],
    metric: MetricKind,
    super_sets: &BTreeMap<u64, SuperAgentSet>,
    inference: Inference,
) -> Result<GapReport> {
    if scenes.is_empty() {
        return Err(Error::invalid("gap report over an empty scene list"));
    }
    let mut m_all = 0.0;
    let mut m_super = 0.0;
    let mut m_none = 0.0;
    for scene in scenes {
        let sset = super_sets.get(&scene.scene_id).ok_or_else(|| {
            Error::invalid(format!("missing super set for scene {}", scene.scene_id))
        })?;
        let known = scene.surrounding_id_set();
        if !sset.members.is_subset(&known) {
            return Err(Error::invalid(format!(
                "super set of scene {} references unknown agents",
                scene.scene_id
            )));
        }
        let eval = CoalitionEvaluator::new(model, scene, &[metric], inference)?;
        m_all += eval.value(eval.full_mask(), 0)?;
        m_super += eval.value(eval.mask_of(&sset.members)?, 0)?;
        m_none += eval.value(0, 0)?;
    }
    let n = scenes.len() as f64;
    let (m_all, m_super, m_none) = (m_all / n, m_super / n, m_none / n);
    Ok(GapReport {
        metric,
        m_all,
        m_super,
        m_none,
        delta_super_all: m_super - m_all,
        delta_no_all: m_none - m_all,
        n_scenes: scenes.len(),
    })
}

pub fn write_attributions_jsonl(path: &Path, results: &[AttributionResult]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in results {
        writeln!(w, "{}", to_string_g17(r)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_attributions_jsonl(path: &Path) -> Result<Vec<AttributionResult>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: AttributionResult = serde_json::from_str(&line)
            .map_err(|e| Error::Serde(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
