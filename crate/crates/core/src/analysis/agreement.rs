//! Agreement rate r_i: the fraction of N attribution runs that score an
//! agent as helpful (negative NLL attribution), histogrammed over the N+1
//! possible values and compared against a Binomial(N, 1/2) baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::attribution::AttributionResult;
use crate::error::{Error, Result};
use crate::scene::{AgentId, CausalLabel, Scene};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgreementMode {
    /// One trained model, attributions across inference seeds.
    IntraModel,
    /// Independently trained models, deterministic evaluation.
    InterModel,
}

impl AgreementMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgreementMode::IntraModel => "intra_model",
            AgreementMode::InterModel => "inter_model",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelFilter {
    All,
    Causal,
    NonCausal,
}

impl LabelFilter {
    pub fn as_str(&self) -> &'static str {
        match self {
            LabelFilter::All => "all",
            LabelFilter::Causal => "causal",
            LabelFilter::NonCausal => "non_causal",
        }
    }

    fn matches(&self, label: CausalLabel) -> bool {
        match self {
            LabelFilter::All => true,
            LabelFilter::Causal => label == CausalLabel::Causal,
            LabelFilter::NonCausal => label == CausalLabel::NonCausal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementHistogram {
    pub n_runs: usize,
    /// counts[b] = number of agents with exactly b negative attributions.
    pub counts: Vec<usize>,
    /// Mean attribution over all (agent, run) pairs whose agent lands in
    /// the bin; NaN for empty bins.
    pub mean_phi_per_bin: Vec<f64>,
    /// Expected counts under Binomial(n_runs, 1/2).
    pub baseline: Vec<f64>,
    pub mode: AgreementMode,
    pub label_filter: LabelFilter,
    pub total_agents: usize,
}

/// (scene_id, agent_id) -> causal label, straight from scene data.
pub fn labels_from_scenes(scenes: &[Scene]) -> BTreeMap<(u64, AgentId), CausalLabel> {
    let mut map = BTreeMap::new();
    for scene in scenes {
        for agent in &scene.surrounding {
            map.insert((scene.scene_id, agent.agent_id), agent.causal_label);
        }
    }
    map
}

fn binomial_pmf_half(n: usize) -> Vec<f64> {
    // C(n, k) / 2^n; n is small (a handful of runs).
    let mut row = vec![1.0f64];
    for _ in 0..n {
        let mut next = vec![1.0];
        for w in row.windows(2) {
            next.push(w[0] + w[1]);
        }
        next.push(1.0);
        row = next;
    }
    let scale = 2f64.powi(n as i32);
    row.into_iter().map(|c| c / scale).collect()
}

/// Builds the agreement histogram over N runs of NLL attributions.
/// All runs must cover exactly the same (scene, agent) pairs.
pub fn agreement(
    runs: &[BTreeMap<u64, AttributionResult>],
    mode: AgreementMode,
    label_filter: LabelFilter,
    labels: &BTreeMap<(u64, AgentId), CausalLabel>,
) -> Result<AgreementHistogram> {
    let n_runs = runs.len();
    if n_runs < 2 {
        return Err(Error::invalid("agreement needs at least two runs"));
    }
    let keys = |run: &BTreeMap<u64, AttributionResult>| -> Vec<(u64, AgentId)> {
        run.iter()
            .flat_map(|(&sid, attr)| attr.phi.keys().map(move |&aid| (sid, aid)))
            .collect()
    };
    let reference = keys(&runs[0]);
    for (j, run) in runs.iter().enumerate().skip(1) {
        if keys(run) != reference {
            return Err(Error::invalid(format!(
                "run {j} covers different (scene, agent) pairs than run 0"
            )));
        }
    }

    let mut counts = vec![0usize; n_runs + 1];
    let mut phi_sums = vec![0.0f64; n_runs + 1];
    let mut phi_counts = vec![0usize; n_runs + 1];
    let mut total = 0usize;
    for &(sid, aid) in &reference {
        if label_filter != LabelFilter::All {
            let label = labels.get(&(sid, aid)).copied().unwrap_or(CausalLabel::Unlabeled);
            if !label_filter.matches(label) {
                continue;
            }
        }
        let phis: Vec<f64> = runs.iter().map(|run| run[&sid].phi[&aid]).collect();
        let negatives = phis.iter().filter(|&&p| p < 0.0).count();
        counts[negatives] += 1;
        total += 1;
        for &p in &phis {
            phi_sums[negatives] += p;
            phi_counts[negatives] += 1;
        }
    }

    let pmf = binomial_pmf_half(n_runs);
    let baseline: Vec<f64> = pmf.iter().map(|p| p * total as f64).collect();
    let mean_phi_per_bin = phi_sums
        .iter()
        .zip(&phi_counts)
        .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect();
    Ok(AgreementHistogram {
        n_runs,
        counts,
        mean_phi_per_bin,
        baseline,
        mode,
        label_filter,
        total_agents: total,
    })
}

/// Agreement split by generator causal labels: (Causal, NonCausal).
pub fn causal_alignment(
    runs: &[BTreeMap<u64, AttributionResult>],
    scenes: &[Scene],
    mode: AgreementMode,
) -> Result<(AgreementHistogram, AgreementHistogram)> {
    let labels = labels_from_scenes(scenes);
    Ok((
        agreement(runs, mode, LabelFilter::Causal, &labels)?,
        agreement(runs, mode, LabelFilter::NonCausal, &labels)?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi2Result {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub alpha: f64,
    pub rejected: bool,
    pub pooled_bins: usize,
}

/// Pearson chi-squared test of the observed histogram against its binomial
/// baseline, pooling tail bins until every expected count is at least 5.
pub fn chi2_vs_baseline(hist: &AgreementHistogram, alpha: f64) -> Result<Chi2Result> {
    if hist.total_agents == 0 {
        return Err(Error::invalid("chi-squared test over an empty histogram"));
    }
    let mut obs: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let mut exp = hist.baseline.clone();

    // Pool from the left edge inward, then from the right edge inward.
    let pool = |obs: &mut Vec<f64>, exp: &mut Vec<f64>| {
        while exp.len() > 1 && exp[0] < 5.0 {
            let (o, e) = (obs.remove(0), exp.remove(0));
            obs[0] += o;
            exp[0] += e;
        }
        while exp.len() > 1 && *exp.last().expect("non-empty") < 5.0 {
            let (o, e) = (obs.pop().expect("non-empty"), exp.pop().expect("non-empty"));
            *obs.last_mut().expect("non-empty") += o;
            *exp.last_mut().expect("non-empty") += e;
        }
    };
    pool(&mut obs, &mut exp);

    if exp.len() < 2 {
        return Ok(Chi2Result {
            statistic: 0.0,
            df: 0,
            p_value: 1.0,
            alpha,
            rejected: false,
            pooled_bins: exp.len(),
        });
    }
    let statistic: f64 = obs
        .iter()
        .zip(&exp)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    let df = exp.len() - 1;
    let dist = ChiSquared::new(df as f64)
        .map_err(|e| Error::numeric(format!("chi-squared df {df}: {e}")))?;
    let p_value = 1.0 - dist.cdf(statistic);
    Ok(Chi2Result { statistic, df, p_value, alpha, rejected: p_value < alpha, pooled_bins: exp.len() })
}

/// Fraction of agents in the two extreme bins r = 0 and r = 1.
pub fn extreme_mass(hist: &AgreementHistogram) -> f64 {
    if hist.total_agents == 0 {
        return 0.0;
    }
    (hist.counts[0] + hist.counts[hist.n_runs]) as f64 / hist.total_agents as f64
}

/// CSV with `#`-prefixed metadata, one row per bin.
pub fn write_agreement_csv(
    path: &std::path::Path,
    hists: &[AgreementHistogram],
    metadata: &[String],
) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in metadata {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "mode,label_filter,n_runs,total_agents,bin,rate,count,baseline,mean_phi")?;
    for h in hists {
        for bin in 0..=h.n_runs {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{:.17e},{:.17e}",
                h.mode.as_str(),
                h.label_filter.as_str(),
                h.n_runs,
                h.total_agents,
                bin,
                bin as f64 / h.n_runs as f64,
                h.counts[bin],
                h.baseline[bin],
                h.mean_phi_per_bin[bin]
            )?;
        }
    }
    w.flush()?;
    Ok(())
}
