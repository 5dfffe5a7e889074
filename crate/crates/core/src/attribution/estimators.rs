//! Shapley estimation strategies over an abstract coalition value function.
//!
//! Both estimators see coalitions as bitmasks over agent indices; callers
//! map indices to agent ids. The value source is abstract so tests can
//! drive the estimators with hand-written value tables.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Value function v(S) over coalitions encoded as index bitmasks.
pub trait CoalitionValue {
    fn n(&self) -> usize;
    fn value(&mut self, mask: u32) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EstimatorTag {
    Exact,
    Appro { permutations: usize },
}

impl EstimatorTag {
    pub fn id(&self) -> String {
        match self {
            EstimatorTag::Exact => "exact".to_string(),
            EstimatorTag::Appro { permutations } => format!("appro:{permutations}"),
        }
    }
}

/// Per-index attribution output.
#[derive(Clone, Debug)]
pub struct ShapleyOutcome {
    pub phi: Vec<f64>,
    pub stderr: Vec<f64>,
    pub v_empty: f64,
    pub v_full: f64,
}

pub trait ShapleyEstimator: Send + Sync {
    fn tag(&self) -> EstimatorTag;
    fn attribute(&self, vf: &mut dyn CoalitionValue) -> Result<ShapleyOutcome>;
}

/// Builds an estimator from its config name: `exact` or `appro`.
pub fn estimator_from_config(
    name: &str,
    permutations: usize,
    seed: u64,
    n_exact_max: usize,
) -> Result<Box<dyn ShapleyEstimator>> {
    match name {
        "exact" => Ok(Box::new(ExactShapley { n_max: n_exact_max })),
        "appro" => Ok(Box::new(ApproShapley { permutations, seed, antithetic: true })),
        other => Err(Error::config(format!(
            "unknown estimator {other:?} (known: exact, appro)"
        ))),
    }
}

/// Compensated running sum; keeps the axiom checks comfortably inside
/// 1e-9 even at n = 12.
#[derive(Default, Clone, Copy)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Full enumeration of all 2^n coalitions with the combinatorial weights
/// |S|! (n-|S|-1)! / n!.
pub struct ExactShapley {
    pub n_max: usize,
}

impl Default for ExactShapley {
    fn default() -> Self {
        ExactShapley { n_max: 12 }
    }
}

impl ShapleyEstimator for ExactShapley {
    fn tag(&self) -> EstimatorTag {
        EstimatorTag::Exact
    }

    fn attribute(&self, vf: &mut dyn CoalitionValue) -> Result<ShapleyOutcome> {
        let n = vf.n();
        if n > self.n_max {
            return Err(Error::invalid(format!(
                "exact Shapley over {n} agents needs 2^{n} coalition evaluations \
                 (limit {}); use the `appro` estimator (ApproShapley) instead",
                self.n_max
            )));
        }
        let v_empty = vf.value(0)?;
        if n == 0 {
            return Ok(ShapleyOutcome { phi: vec![], stderr: vec![], v_empty, v_full: v_empty });
        }
        let full: u32 = (1u32 << n) - 1;
        let v_full = vf.value(full)?;

        // weight[s] = s! (n-1-s)! / n!
        let mut factorial = vec![1.0f64; n + 1];
        for i in 1..=n {
            factorial[i] = factorial[i - 1] * i as f64;
        }
        let weight: Vec<f64> =
            (0..n).map(|s| factorial[s] * factorial[n - 1 - s] / factorial[n]).collect();

        let mut phi = vec![Neumaier::default(); n];
        for mask in 0..=full {
            let s = mask.count_ones() as usize;
            for i in 0..n {
                let bit = 1u32 << i;
                if mask & bit != 0 {
                    continue;
                }
                let with_i = vf.value(mask | bit)?;
                let without = vf.value(mask)?;
                phi[i].add(weight[s] * (with_i - without));
            }
        }
        Ok(ShapleyOutcome {
            phi: phi.iter().map(Neumaier::total).collect(),
            stderr: vec![0.0; n],
            v_empty,
            v_full,
        })
    }
}

/// Monte-Carlo estimator averaging marginal contributions along sampled
/// agent permutations. Permutations are drawn uniformly; consecutive draws
/// are antithetic pairs (a permutation followed by its reverse) to cut
/// variance. Deterministic given the seed.
pub struct ApproShapley {
    pub permutations: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl ShapleyEstimator for ApproShapley {
    fn tag(&self) -> EstimatorTag {
        EstimatorTag::Appro { permutations: self.permutations }
    }

    fn attribute(&self, vf: &mut dyn CoalitionValue) -> Result<ShapleyOutcome> {
        if self.permutations == 0 {
            return Err(Error::invalid("appro estimator needs at least one permutation"));
        }
        let n = vf.n();
        let v_empty = vf.value(0)?;
        if n == 0 {
            return Ok(ShapleyOutcome { phi: vec![], stderr: vec![], v_empty, v_full: v_empty });
        }
        let full: u32 = (1u32 << n) - 1;
        let v_full = vf.value(full)?;

        let mut rng = rng_from(&[self.seed, 0xA990]);
        let mut sums = vec![Neumaier::default(); n];
        let mut sq_sums = vec![Neumaier::default(); n];
        let mut perm: Vec<usize> = (0..n).collect();
        for draw in 0..self.permutations {
            if self.antithetic && draw % 2 == 1 {
                perm.reverse();
            } else {
                perm = (0..n).collect();
                perm.shuffle(&mut rng);
            }
            let mut mask = 0u32;
            let mut prev = v_empty;
            for &idx in &perm {
                mask |= 1 << idx;
                let v = vf.value(mask)?;
                let marginal = v - prev;
                sums[idx].add(marginal);
                sq_sums[idx].add(marginal * marginal);
                prev = v;
            }
        }

        let m = self.permutations as f64;
        let phi: Vec<f64> = sums.iter().map(|s| s.total() / m).collect();
        let stderr: Vec<f64> = (0..n)
            .map(|i| {
                if self.permutations < 2 {
                    return 0.0;
                }
                let var = (sq_sums[i].total() - m * phi[i] * phi[i]) / (m - 1.0);
                (var.max(0.0) / m).sqrt()
            })
            .collect();
        Ok(ShapleyOutcome { phi, stderr, v_empty, v_full })
    }
}

#[cfg(test)]
pub(crate) struct TableValue {
    pub n: usize,
    pub table: std::collections::BTreeMap<u32, f64>,
}

#[cfg(test)]
impl CoalitionValue for TableValue {
    fn n(&self) -> usize {
        self.n
    }
    fn value(&mut self, mask: u32) -> Result<f64> {
        self.table
            .get(&mask)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no table entry for mask {mask:#b}")))
    }
}
