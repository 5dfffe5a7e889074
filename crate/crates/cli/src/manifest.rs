//! Experiment manifests: one flat key-value file binding a full
//! reproducible run. Unknown keys are rejected; every key has a default,
//! so a minimal manifest only overrides what it cares about. The manifest
//! checksum (SHA-256 of the raw bytes) names the output directory.

use sha2::{Digest, Sha256};

use trajshap_core::error::{Error, Result};
use trajshap_core::kv::KvReader;
use trajshap_core::metrics::MetricKind;
use trajshap_core::predictor::{OptimizerConfig, PredictorConfig};
use trajshap_core::scene::{GeneratorConfig, Split};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Base,
    Cib,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Cib => "cib",
        }
    }

    pub fn all() -> [Variant; 2] {
        [Variant::Base, Variant::Cib]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CibBeta {
    /// Take the best beta from the sweep stage artifact.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug)]
pub struct ExperimentManifest {
    raw: String,
    checksum: String,

    pub data_seed: u64,
    pub val_fraction: f64,
    pub spur_corr_train: f64,
    pub spur_corr_val: f64,
    gen_base: GeneratorConfig,

    pub d_model: usize,
    pub k_modes: usize,
    pub n_heads: usize,
    pub d_z: usize,
    pub sigma_min: f64,

    pub opt: OptimizerConfig,
    pub training_seeds: Vec<u64>,
    pub inference_seeds: Vec<u64>,
    pub beta_grid: Vec<f64>,
    pub cib_beta: CibBeta,

    pub metrics: Vec<MetricKind>,
    pub insert_metric: MetricKind,

    pub estimator: String,
    pub attr_permutations: usize,
    pub attr_seed: u64,
    pub attr_n_exact_max: usize,
    /// Cap on scenes attributed per split; 0 means every scene.
    pub attr_max_scenes: usize,

    pub noise_sigmas: Vec<f64>,
    pub robust_metric: MetricKind,
    pub robust_seed: u64,

    /// Which variant the intra-model (inference-seed) runs use.
    pub agreement_variant: Variant,
}

impl ExperimentManifest {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self> {
        let mut kv = KvReader::parse(raw)?;

        let format_version = kv.u64_or("format_version", FORMAT_VERSION)?;
        if format_version != FORMAT_VERSION {
            return Err(Error::config(format!(
                "manifest format_version {format_version} unsupported (expected {FORMAT_VERSION})"
            )));
        }

        let data_seed = kv.u64_or("data_seed", 1000)?;
        let val_fraction = kv.f64_or("val_fraction", 0.4)?;
        let spur_corr_train = kv.f64_or("gen_spur_corr_train", 1.0)?;
        let spur_corr_val = kv.f64_or("gen_spur_corr_val", 0.0)?;
        let gen_base = GeneratorConfig::from_kv(&mut kv, "gen_")?;

        let d_model = kv.usize_or("pred_d_model", 24)?;
        let k_modes = kv.usize_or("pred_k_modes", 6)?;
        let n_heads = kv.usize_or("pred_n_heads", 2)?;
        let d_z = kv.usize_or("pred_d_z", d_model / 2)?;
        let sigma_min = kv.f64_or("pred_sigma_min", 0.1)?;

        let opt = OptimizerConfig::from_kv(&mut kv, "train_")?;
        let training_seeds = kv.u64_list_or("training_seeds", &[0, 1, 2, 3, 4])?;
        let inference_seeds = kv.u64_list_or("inference_seeds", &[0, 1, 2, 3, 4])?;
        let beta_grid = kv.f64_list_or("beta_grid", &[0.01, 0.1, 1.0, 10.0, 100.0])?;
        let cib_beta = match kv.str_or("cib_beta", "auto").as_str() {
            "auto" => CibBeta::Auto,
            other => CibBeta::Fixed(other.parse().map_err(|_| {
                Error::config(format!("cib_beta must be `auto` or a number, got {other:?}"))
            })?),
        };

        let metric_names = kv.str_list_or("metrics", &["nll", "minade@6", "minade@1", "minfde@6", "missrate@6:2.0"]);
        let metrics = metric_names
            .iter()
            .map(|n| MetricKind::parse(n))
            .collect::<Result<Vec<_>>>()?;
        let insert_metric = MetricKind::parse(&kv.str_or("insert_metric", "nll"))?;

        let estimator = kv.str_or("estimator", "exact");
        let attr_permutations = kv.usize_or("attr_permutations", 2000)?;
        let attr_seed = kv.u64_or("attr_seed", 7)?;
        let attr_n_exact_max = kv.usize_or("attr_n_exact_max", 12)?;
        let attr_max_scenes = kv.usize_or("attr_max_scenes", 0)?;

        let noise_sigmas = kv.f64_list_or("noise_sigmas", &[0.1, 0.2, 0.4])?;
        let robust_metric = MetricKind::parse(&kv.str_or("robust_metric", "minade@6"))?;
        let robust_seed = kv.u64_or("robust_seed", 77)?;

        let agreement_variant = match kv.str_or("agreement_variant", "cib").as_str() {
            "cib" => Variant::Cib,
            "base" => Variant::Base,
            other => return Err(Error::config(format!("unknown agreement_variant {other:?}"))),
        };

        kv.finish()?;

        let manifest = ExperimentManifest {
            raw: raw.to_string(),
            checksum: hex_digest(raw.as_bytes()),
            data_seed,
            val_fraction,
            spur_corr_train,
            spur_corr_val,
            gen_base,
            d_model,
            k_modes,
            n_heads,
            d_z,
            sigma_min,
            opt,
            training_seeds,
            inference_seeds,
            beta_grid,
            cib_beta,
            metrics,
            insert_metric,
            estimator,
            attr_permutations,
            attr_seed,
            attr_n_exact_max,
            attr_max_scenes,
            noise_sigmas,
            robust_metric,
            robust_seed,
            agreement_variant,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for &s in &self.training_seeds {
            if !seen.insert(s) {
                return Err(Error::config(format!("duplicate training seed {s}")));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for &s in &self.inference_seeds {
            if !seen.insert(s) {
                return Err(Error::config(format!("duplicate inference seed {s}")));
            }
        }
        if self.training_seeds.is_empty() {
            return Err(Error::config("training_seeds must be non-empty"));
        }
        if self.beta_grid.is_empty() && self.cib_beta == CibBeta::Auto {
            return Err(Error::config("beta_grid must be non-empty when cib_beta is auto"));
        }
        if !(0.0..=1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must be in [0, 1]"));
        }
        for &c in &[self.spur_corr_train, self.spur_corr_val] {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::config("spurious correlation knobs must be in [0, 1]"));
            }
        }
        if self.metrics.is_empty() {
            return Err(Error::config("metrics must be non-empty"));
        }
        if !self.metrics.contains(&MetricKind::Nll) {
            return Err(Error::config("metrics must include nll (super agents are NLL-defined)"));
        }
        for m in &self.metrics {
            m.validate()?;
            let k = match *m {
                MetricKind::MinAde { k } | MetricKind::MinFde { k } | MetricKind::MissRate { k, .. } => k,
                MetricKind::Nll => 1,
            };
            if k > self.k_modes {
                return Err(Error::config(format!(
                    "metric {} needs K' <= {} modes",
                    m.id(),
                    self.k_modes
                )));
            }
        }
        // Probe that the predictor config assembles.
        self.predictor_config(Variant::Base, 0, 0.0)?;
        Ok(())
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    /// Directory name: first 12 hex digits of the manifest checksum.
    pub fn run_dir_name(&self) -> String {
        self.checksum[..12].to_string()
    }

    fn scaled(&self, count: usize) -> usize {
        (count as f64 * self.val_fraction).ceil() as usize
    }

    pub fn gen_config(&self, split: Split) -> GeneratorConfig {
        let mut cfg = self.gen_base.clone();
        cfg.split = split;
        match split {
            Split::Train => cfg.spur_corr = self.spur_corr_train,
            Split::Validation => {
                cfg.spur_corr = self.spur_corr_val;
                cfg.scenes_leader_follower = self.scaled(cfg.scenes_leader_follower);
                cfg.scenes_independent = self.scaled(cfg.scenes_independent);
                cfg.scenes_spurious = self.scaled(cfg.scenes_spurious);
                cfg.scenes_mixed = self.scaled(cfg.scenes_mixed);
            }
        }
        cfg
    }

    pub fn dataset_seed(&self, split: Split) -> u64 {
        match split {
            Split::Train => self.data_seed,
            Split::Validation => self.data_seed.wrapping_add(0x5A17),
        }
    }

    pub fn predictor_config(&self, variant: Variant, seed: u64, beta: f64) -> Result<PredictorConfig> {
        let cfg = PredictorConfig {
            d_model: self.d_model,
            k_modes: self.k_modes,
            h: self.gen_base.h,
            f: self.gen_base.f,
            dt: self.gen_base.dt,
            n_heads: self.n_heads,
            use_cib: variant == Variant::Cib,
            beta: if variant == Variant::Cib { beta } else { 0.0 },
            d_z: self.d_z,
            sigma_min: self.sigma_min,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
