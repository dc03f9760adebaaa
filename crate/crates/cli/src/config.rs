//! Run configuration: TOML with dotted section keys (`lattice.L`,
//! `sampling.ns`, ...). Unknown keys are rejected before any compute.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use pbit_nqs::model::Architecture;
use pbit_nqs::sr::Profile;
use pbit_nqs::trainer::TrainingConfig;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub lattice: LatticeSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub quantization: QuantizationSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub oracle: OracleSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    #[serde(rename = "L")]
    pub len: Option<usize>,
    #[serde(rename = "J")]
    pub j: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Option<String>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub ns: Option<usize>,
    pub nc: Option<usize>,
    pub burn_in: Option<usize>,
    pub sweeps_per_sample: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub iterations: Option<usize>,
    pub record_wall_clock: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub profile: Option<String>,
    pub eta_max: Option<f64>,
    pub eta_min: Option<f64>,
    pub lambda0: Option<f64>,
    pub lambda_decay: Option<f64>,
    pub lambda_min: Option<f64>,
    pub cg_tol: Option<f64>,
    pub cg_max_iter: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub samples: Option<usize>,
    pub bins: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizationSection {
    pub enabled: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    #[serde(rename = "P")]
    pub parts: Option<usize>,
    pub tau: Option<Vec<usize>>,
    pub samples: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default)]
    pub cases: Vec<OracleCase>,
    pub marginals: Option<MarginalFixture>,
}

/// One ED case: a periodic `L`x`L` square lattice or an open chain of `N` sites.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCase {
    pub id: String,
    #[serde(rename = "L")]
    pub len: Option<usize>,
    #[serde(rename = "N")]
    pub chain: Option<usize>,
    #[serde(rename = "J", default = "one")]
    pub j: f64,
    pub gamma: f64,
}

/// Random small model whose brute-force marginals are written as a fixture.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalFixture {
    pub arch: String,
    #[serde(rename = "L")]
    pub len: usize,
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    pub scale: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn require<T: Copy>(v: Option<T>, key: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("missing required key {key}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn seed(&self) -> u64 {
        self.run.seed.unwrap_or(0)
    }

    pub fn architecture(&self) -> Result<Architecture, CliError> {
        let name = self.model.arch.as_deref().unwrap_or("rbm");
        name.parse().map_err(|e| CliError::Config(format!("model.arch: {e}")))
    }

    /// The training configuration with all defaults applied and validated.
    pub fn training(&self) -> Result<TrainingConfig, CliError> {
        let len = require(self.lattice.len, "lattice.L")?;
        let gamma = require(self.lattice.gamma, "lattice.gamma")?;
        let arch = self.architecture()?;
        let k1 = self.model.k1.unwrap_or(1.0);
        let k2 = match arch {
            Architecture::Frbm => 0.0,
            Architecture::Dbm => self.model.k2.unwrap_or(1.0),
        };
        let mut cfg = TrainingConfig::new(len, arch, k1, k2, gamma);
        if let Some(n) = self.training.iterations {
            cfg = cfg.with_iterations(n);
        }
        if let Some(p) = &self.optimizer.profile {
            let profile: Profile = p.parse().map_err(|e| CliError::Config(format!("optimizer.profile: {e}")))?;
            cfg = cfg.with_profile(profile);
        }
        let o = &self.optimizer;
        let s = &mut cfg.schedule;
        s.eta_max = o.eta_max.unwrap_or(s.eta_max);
        s.eta_min = o.eta_min.unwrap_or(s.eta_min);
        s.lambda0 = o.lambda0.unwrap_or(s.lambda0);
        s.lambda_decay = o.lambda_decay.unwrap_or(s.lambda_decay);
        s.lambda_min = o.lambda_min.unwrap_or(s.lambda_min);
        s.cg_tol = o.cg_tol.unwrap_or(s.cg_tol);
        s.cg_max_iter = o.cg_max_iter.unwrap_or(s.cg_max_iter);

        cfg.j = self.lattice.j.unwrap_or(1.0);
        cfg.seed = self.seed();
        cfg.n_samples = self.sampling.ns.unwrap_or(cfg.n_samples);
        cfg.n_clamped = self.sampling.nc.unwrap_or(cfg.n_clamped);
        cfg.burn_in = self.sampling.burn_in.unwrap_or(cfg.burn_in);
        cfg.sweeps_per_sample = self.sampling.sweeps_per_sample.unwrap_or(cfg.sweeps_per_sample);
        cfg.n_eval = self.evaluation.samples.unwrap_or(cfg.n_eval);
        cfg.bins = self.evaluation.bins.unwrap_or(cfg.bins);
        cfg.quantize = self.quantization.enabled.unwrap_or(false);
        cfg.record_wall_clock = self.training.record_wall_clock.unwrap_or(false);
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        // Builds the network once so bad radii surface as config errors.
        cfg.network().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn partition_count(&self) -> Result<usize, CliError> {
        let p = require(self.partition.parts, "partition.P")?;
        if p == 0 {
            return Err(CliError::Config("partition.P must be positive".into()));
        }
        Ok(p)
    }

    pub fn taus(&self) -> Result<Vec<usize>, CliError> {
        let taus = self.partition.tau.clone().unwrap_or_else(|| vec![1, 2, 5, 10]);
        if taus.is_empty() || taus.contains(&0) {
            return Err(CliError::Config("partition.tau must be a non-empty list of positive integers".into()));
        }
        Ok(taus)
    }
}
