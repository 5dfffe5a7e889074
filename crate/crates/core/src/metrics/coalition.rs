//! Cached per-scene value function over agent coalitions.
//!
//! Encoder and CIB work run once per scene; each coalition re-runs only the
//! interactor + decoder. Values are memoized per coalition mask, so exact
//! Shapley touches each of the 2^n coalitions exactly once and the
//! insertion/gap analyses reuse the same numbers bitwise.

use std::cell::RefCell;
use std::collections::BTreeMap;

use super::{gt_of, metric_for, Metric, MetricKind};
use crate::error::{Error, Result};
use crate::predictor::{Inference, PredictorModel, SceneEmbeddings};
use crate::scene::{AgentId, Scene};

pub struct CoalitionEvaluator<'m> {
    emb: SceneEmbeddings<'m>,
    gt: Vec<(f64, f64)>,
    metrics: Vec<Box<dyn Metric>>,
    cache: RefCell<BTreeMap<u32, Vec<f64>>>,
    caching: bool,
    evals: RefCell<usize>,
    scene_id: u64,
}

impl<'m> CoalitionEvaluator<'m> {
    /// Embeds the full scene once; `kinds` fixes the metric vector returned
    /// by [`values`](Self::values). Evaluation is deterministic for a fixed
    /// `inference` mode.
    pub fn new(
        model: &'m PredictorModel,
        scene: &Scene,
        kinds: &[MetricKind],
        inference: Inference,
    ) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::invalid("at least one metric kind required"));
        }
        let metrics = kinds.iter().map(|&k| metric_for(k)).collect::<Result<Vec<_>>>()?;
        let emb = model.embed_scene(scene, &scene.surrounding_id_set(), inference)?;
        Ok(CoalitionEvaluator {
            emb,
            gt: gt_of(scene),
            metrics,
            cache: RefCell::new(BTreeMap::new()),
            caching: true,
            evals: RefCell::new(0),
            scene_id: scene.scene_id,
        })
    }

    pub fn scene_id(&self) -> u64 {
        self.scene_id
    }

    pub fn n(&self) -> usize {
        self.emb.n_agents()
    }

    /// Embedded agent ids; bit i of a coalition mask refers to `ids()[i]`.
    pub fn ids(&self) -> Vec<AgentId> {
        self.emb.ids()
    }

    pub fn full_mask(&self) -> u32 {
        if self.n() == 32 {
            u32::MAX
        } else {
            (1u32 << self.n()) - 1
        }
    }

    pub fn mask_of(&self, keep: &std::collections::BTreeSet<AgentId>) -> Result<u32> {
        let ids = self.ids();
        let mut mask = 0u32;
        for id in keep {
            let idx = ids
                .iter()
                .position(|x| x == id)
                .ok_or_else(|| Error::invalid(format!("agent {id} not embedded")))?;
            mask |= 1 << idx;
        }
        Ok(mask)
    }

    /// Number of decoder runs so far (cache misses).
    pub fn evals(&self) -> usize {
        *self.evals.borrow()
    }

    /// Disables memoization (every call re-runs the decoder).
    pub fn set_caching(&mut self, on: bool) {
        self.caching = on;
    }

    /// Metric values for one coalition, in the order of the constructor's
    /// `kinds`.
    pub fn values(&self, mask: u32) -> Result<Vec<f64>> {
        if self.caching {
            if let Some(hit) = self.cache.borrow().get(&mask) {
                return Ok(hit.clone());
            }
        }
        let pred = self.emb.predict_mask(mask)?;
        *self.evals.borrow_mut() += 1;
        let values = self
            .metrics
            .iter()
            .map(|m| m.score(&pred, &self.gt))
            .collect::<Result<Vec<f64>>>()?;
        if self.caching {
            self.cache.borrow_mut().insert(mask, values.clone());
        }
        Ok(values)
    }

    /// Single-metric convenience accessor.
    pub fn value(&self, mask: u32, metric_idx: usize) -> Result<f64> {
        let values = self.values(mask)?;
        values
            .get(metric_idx)
            .copied()
            .ok_or_else(|| Error::invalid(format!("metric index {metric_idx} out of range")))
    }
}
