//! Outer optimisation loop, final evaluation and error analysis.
//!
//! Each iteration draws `N_s` visible samples from a persistent free-running
//! chain, evaluates local energies (analytic for FRBMs, dual sampling for
//! DBMs) and applies one SR step. The optimised objective is the energy per
//! spin, which keeps the learning-rate scale independent of lattice size.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{local_energy_dbm, local_energy_rbm, LocalEnergyRecord, Tfim};
use crate::fixed_point::{quantize, FixedPointFormat};
use crate::model::{init_params, Architecture, ModelParameters, Network};
use crate::sampler::{chromatic_sweep, collect_samples, ChainState, Machine, SampleBatch};
use crate::sr::{sr_step, Profile, SrBatch, SrSchedule};
use crate::streams::{StreamDomain, StreamFactory};

/// Relative error band of chemical accuracy.
pub const CHEMICAL_ACCURACY: f64 = 1.6e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub len: usize,
    pub arch: Architecture,
    pub k1: f64,
    pub k2: f64,
    pub j: f64,
    pub gamma: f64,
    pub n_iter: usize,
    pub n_samples: usize,
    pub n_clamped: usize,
    pub n_eval: usize,
    pub profile: Profile,
    pub schedule: SrSchedule,
    pub seed: u64,
    /// Sample from s{6}{3}-quantized parameters; estimators stay full precision.
    pub quantize: bool,
    /// Sweeps discarded before each iteration's samples.
    pub burn_in: usize,
    pub sweeps_per_sample: usize,
    pub bins: usize,
    /// Record wall-clock milliseconds in the metrics (breaks byte-identical
    /// reruns, so off by default).
    pub record_wall_clock: bool,
}

impl TrainingConfig {
    pub fn new(len: usize, arch: Architecture, k1: f64, k2: f64, gamma: f64) -> Self {
        let n_iter = 1000;
        Self {
            len,
            arch,
            k1,
            k2,
            j: 1.0,
            gamma,
            n_iter,
            n_samples: 10_000,
            n_clamped: 1_000,
            n_eval: 1_000_000,
            profile: Profile::Algorithmic,
            schedule: SrSchedule::profile(Profile::Algorithmic, n_iter),
            seed: 0,
            quantize: false,
            burn_in: 100,
            sweeps_per_sample: 1,
            bins: 50,
            record_wall_clock: false,
        }
    }

    /// Sets the iteration count and rebuilds the profile schedule.
    pub fn with_iterations(mut self, n_iter: usize) -> Self {
        self.n_iter = n_iter;
        self.schedule = SrSchedule::profile(self.profile, n_iter);
        self
    }

    pub fn with_profile(mut self, profile: Profile) -> Self {
        self.profile = profile;
        self.schedule = SrSchedule::profile(profile, self.n_iter);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("training.iterations", self.n_iter),
            ("sampling.ns", self.n_samples),
            ("evaluation.samples", self.n_eval),
            ("sampling.sweeps_per_sample", self.sweeps_per_sample),
            ("evaluation.bins", self.bins),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{key} must be positive")));
        }
        if self.arch == Architecture::Dbm && self.n_clamped < 2 {
            return Err(Error::InvalidArgument("sampling.nc must be at least 2".into()));
        }
        if self.n_samples < self.bins || self.n_eval < self.bins {
            return Err(Error::InvalidArgument(format!(
                "sample counts must be at least the number of blocking bins ({})",
                self.bins
            )));
        }
        if !(self.j.is_finite() && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument("hamiltonian parameters must be finite".into()));
        }
        let s = &self.schedule;
        let ok = s.eta_max > 0.0
            && s.eta_min > 0.0
            && s.eta_min <= s.eta_max
            && s.lambda0 > 0.0
            && s.lambda_min > 0.0
            && s.lambda_min <= s.lambda0
            && s.lambda_decay > 0.0
            && s.cg_tol > 0.0
            && s.cg_max_iter > 0;
        if !ok {
            return Err(Error::InvalidArgument("inconsistent optimizer schedule".into()));
        }
        Ok(())
    }

    pub fn network(&self) -> Result<Network> {
        match self.arch {
            Architecture::Frbm => Network::frbm(self.len, self.k1),
            Architecture::Dbm => Network::dbm(self.len, self.k1, self.k2),
        }
    }

    pub fn hamiltonian(&self) -> Result<Tfim> {
        Tfim::square(self.len, self.j, self.gamma)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iter: usize,
    pub energy_per_spin: f64,
    pub std_err: f64,
    pub lr: f64,
    pub lambda: f64,
    pub cg_iters: usize,
    /// True when CG stopped before reaching its tolerance.
    pub cg_flag: bool,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "iter,energy_per_spin,std_err,lr,lambda,cg_iters,cg_flag,wall_ms";

pub fn write_metrics_csv<W: Write>(metrics: &[IterationMetrics], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.iter,
            m.energy_per_spin,
            m.std_err,
            m.lr,
            m.lambda,
            m.cg_iters,
            m.cg_flag as u8,
            m.wall_ms
        )?;
    }
    Ok(())
}

/// Standard error from `bins` equal blocks (remainder truncated):
/// `std(bin means) / sqrt(bins)`.
pub fn blocking_se(samples: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidArgument("blocking needs at least 2 bins".into()));
    }
    if samples.len() < bins {
        return Err(Error::TooFewSamples {
            needed: bins,
            got: samples.len(),
        });
    }
    let per_bin = samples.len() / bins;
    let means: Vec<f64> = samples[..per_bin * bins]
        .chunks_exact(per_bin)
        .map(|c| c.iter().sum::<f64>() / per_bin as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / bins as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (bins - 1) as f64;
    Ok((var / bins as f64).sqrt())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `|E - E_ref| / |E_ref|`.
pub fn relative_error(e: f64, e_ref: f64) -> Result<f64> {
    if e_ref == 0.0 {
        return Err(Error::InvalidArgument("reference energy is zero".into()));
    }
    Ok(((e - e_ref) / e_ref).abs())
}

pub fn chemical_accuracy_check(e: f64, e_ref: f64) -> Result<bool> {
    Ok(relative_error(e, e_ref)? <= CHEMICAL_ACCURACY)
}

/// Evaluates local energies of a batch of samples.
///
/// `inner` holds one clamped chain per sample slot (DBM only); each slot's
/// auxiliary spins are warm-started from the outer chain's state.
fn batch_local_energies(
    net: &Network,
    ham: &Tfim,
    params: &ModelParameters,
    sampling: &Machine,
    fields: &Machine,
    batch: &SampleBatch,
    inner: &mut [ChainState],
    n_c: usize,
) -> Result<Vec<LocalEnergyRecord>> {
    match net.arch() {
        Architecture::Frbm => (0..batch.len())
            .into_par_iter()
            .map(|s| local_energy_rbm(net, params, ham, batch.visible(s)))
            .collect(),
        Architecture::Dbm => inner[..batch.len()]
            .par_iter_mut()
            .enumerate()
            .map(|(s, chain)| {
                chain.spins.copy_from_slice(batch.state(s));
                local_energy_dbm(net, ham, sampling, fields, chain, n_c)
            })
            .collect(),
    }
}

fn sampling_params(params: &ModelParameters, quantized: bool) -> ModelParameters {
    if quantized {
        quantize(params, FixedPointFormat::S6_3)
    } else {
        params.clone()
    }
}

/// Stateful training loop; `step` runs one iteration.
pub struct Trainer {
    config: TrainingConfig,
    net: Network,
    ham: Tfim,
    params: ModelParameters,
    outer: ChainState,
    inner: Vec<ChainState>,
    metrics: Vec<IterationMetrics>,
}

impl Trainer {
    pub fn new(config: TrainingConfig) -> Result<Self> {
        let net = config.network()?;
        let params = init_params(&net, config.seed);
        Self::with_params(config, params)
    }

    /// Starts from given parameters instead of the seeded initialisation.
    pub fn with_params(config: TrainingConfig, params: ModelParameters) -> Result<Self> {
        config.validate()?;
        let net = config.network()?;
        let ham = config.hamiltonian()?;
        if params.len() != net.num_params() {
            return Err(Error::SizeMismatch {
                what: "initial parameters",
                expected: net.num_params(),
                got: params.len(),
            });
        }
        let nodes = net.num_nodes();
        let outer = ChainState::random(
            nodes,
            StreamFactory::new(config.seed, StreamDomain::OuterChain).next_stream(),
        );
        let inner = if net.arch() == Architecture::Dbm {
            StreamFactory::new(config.seed, StreamDomain::InnerChains)
                .streams(config.n_samples)
                .into_iter()
                .map(|rng| ChainState::from_spins(vec![1; nodes], rng))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            config,
            net,
            ham,
            params,
            outer,
            inner,
            metrics: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn params(&self) -> &ModelParameters {
        &self.params
    }

    pub fn metrics(&self) -> &[IterationMetrics] {
        &self.metrics
    }

    pub fn iteration(&self) -> usize {
        self.metrics.len()
    }

    /// One sample-estimate-update iteration.
    pub fn step(&mut self) -> Result<&IterationMetrics> {
        let t = self.metrics.len();
        let start = Instant::now();
        let cfg = &self.config;
        let n_sites = self.net.num_visible() as f64;

        let sampled = sampling_params(&self.params, cfg.quantize);
        let sampling = Machine::new(&self.net, &sampled)?;
        let fields = Machine::new(&self.net, &self.params)?;
        let batch = collect_samples(
            &mut self.outer,
            &sampling,
            cfg.n_samples,
            cfg.burn_in,
            cfg.sweeps_per_sample,
        );
        let mut records = batch_local_energies(
            &self.net,
            &self.ham,
            &self.params,
            &sampling,
            &fields,
            &batch,
            &mut self.inner,
            cfg.n_clamped,
        )
        .map_err(|e| abort(t, e))?;

        for r in records.iter_mut() {
            r.e_loc /= n_sites;
        }
        let per_spin: Vec<f64> = records.iter().map(|r| r.e_loc).collect();
        let energy = mean(&per_spin);
        if !energy.is_finite() {
            return Err(Error::NumericalAbort {
                iter: t,
                reason: "non-finite local energy".into(),
            });
        }
        let std_err = blocking_se(&per_spin, cfg.bins)?;

        let sr_batch = SrBatch::new(&records)?;
        let update = sr_step(&sr_batch, &cfg.schedule, t).map_err(|e| abort(t, e))?;
        self.params.apply_delta(&update.delta)?;
        if !self.params.is_finite() {
            return Err(Error::NumericalAbort {
                iter: t,
                reason: "non-finite parameters after update".into(),
            });
        }

        let wall_ms = if cfg.record_wall_clock {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        self.metrics.push(IterationMetrics {
            iter: t,
            energy_per_spin: energy,
            std_err,
            lr: update.lr,
            lambda: update.lambda,
            cg_iters: update.cg.iterations,
            cg_flag: !update.cg.converged,
            wall_ms,
        });
        Ok(self.metrics.last().expect("just pushed"))
    }

    /// Runs the remaining iterations up to `n_iter`.
    pub fn run(&mut self) -> Result<()> {
        while self.metrics.len() < self.config.n_iter {
            self.step()?;
        }
        Ok(())
    }

    pub fn into_parts(self) -> (ModelParameters, Vec<IterationMetrics>) {
        (self.params, self.metrics)
    }
}

fn abort(iter: usize, e: Error) -> Error {
    match e {
        Error::CollapsedEstimator { site, value } => Error::NumericalAbort {
            iter,
            reason: format!("collapsed estimator at site {site} (p_flip = {value})"),
        },
        Error::IllConditioned(k) => Error::NumericalAbort {
            iter,
            reason: format!("non-finite value in CG iteration {k}"),
        },
        other => other,
    }
}

/// Trains from the seeded initialisation for `config.n_iter` iterations.
pub fn train(config: &TrainingConfig) -> Result<(ModelParameters, Vec<IterationMetrics>)> {
    let mut trainer = Trainer::new(config.clone())?;
    trainer.run()?;
    Ok(trainer.into_parts())
}

/// Frozen-parameter energy estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub energy_per_spin: f64,
    pub std_err: f64,
    pub n_samples: usize,
    /// Per-sample local energies per spin, in sampling order.
    pub samples: Vec<f64>,
}

/// Settings of a final evaluation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub n_samples: usize,
    pub n_clamped: usize,
    pub burn_in: usize,
    pub sweeps_per_sample: usize,
    pub bins: usize,
    pub seed: u64,
    pub quantize: bool,
}

impl EvalSettings {
    pub fn from_config(cfg: &TrainingConfig) -> Self {
        Self {
            n_samples: cfg.n_eval,
            n_clamped: cfg.n_clamped,
            burn_in: cfg.burn_in,
            sweeps_per_sample: cfg.sweeps_per_sample,
            bins: cfg.bins,
            seed: cfg.seed,
            quantize: cfg.quantize,
        }
    }
}

/// Streams `n_samples` configurations from a fresh evaluation chain and
/// returns the mean local energy per spin with its blocking error.
pub fn evaluate(
    net: &Network,
    params: &ModelParameters,
    ham: &Tfim,
    settings: &EvalSettings,
) -> Result<Evaluation> {
    let sampled = sampling_params(params, settings.quantize);
    let sampling = Machine::new(net, &sampled)?;
    let fields = Machine::new(net, params)?;
    let nodes = net.num_nodes();
    let nv = net.num_visible();
    let mut outer = ChainState::random(
        nodes,
        StreamFactory::new(settings.seed, StreamDomain::EvalOuter).next_stream(),
    );
    let mut inner = ChainState::from_spins(
        vec![1; nodes],
        StreamFactory::new(settings.seed, StreamDomain::EvalInner).next_stream(),
    );
    for _ in 0..settings.burn_in {
        chromatic_sweep(&mut outer, &sampling);
    }
    let spacing = settings.sweeps_per_sample.max(1);
    let mut samples = Vec::with_capacity(settings.n_samples);
    for s in 0..settings.n_samples {
        for _ in 0..spacing {
            chromatic_sweep(&mut outer, &sampling);
        }
        let rec = match net.arch() {
            Architecture::Frbm => local_energy_rbm(net, params, ham, &outer.spins[..nv]),
            Architecture::Dbm => {
                inner.spins.copy_from_slice(&outer.spins);
                local_energy_dbm(net, ham, &sampling, &fields, &mut inner, settings.n_clamped)
            }
        }
        .map_err(|e| abort(s, e))?;
        samples.push(rec.e_loc / nv as f64);
    }
    let energy_per_spin = mean(&samples);
    if !energy_per_spin.is_finite() {
        return Err(Error::NumericalAbort {
            iter: 0,
            reason: "non-finite evaluation energy".into(),
        });
    }
    Ok(Evaluation {
        energy_per_spin,
        std_err: blocking_se(&samples, settings.bins)?,
        n_samples: settings.n_samples,
        samples,
    })
}
