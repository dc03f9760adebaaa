//! Stochastic reconfiguration.
//!
//! From per-sample local energies `e_s` and log-derivatives `O_sk`:
//! `g_k = 2 (<e O_k> - <e><O_k>)`, `S_kl = <dO_k dO_l>` with centered
//! `dO = O - <O>`, and the update `delta = -eta (S + lambda I)^-1 g`.
//! The regularised system is solved by conjugate gradients with a
//! matrix-free product, so `S` is never formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::LocalEnergyRecord;

/// Centered samples of one SR step.
#[derive(Debug, Clone)]
pub struct SrBatch {
    num_params: usize,
    weights: Vec<f64>,
    energies: Vec<f64>,
    centered: Vec<f64>,
    o_mean: Vec<f64>,
    energy_mean: f64,
}

impl SrBatch {
    /// Equal-weight Monte Carlo batch.
    pub fn new(records: &[LocalEnergyRecord]) -> Result<Self> {
        let n = records.len();
        Self::weighted(records, &vec![1.0; n])
    }

    /// Batch with non-negative sample weights (normalised internally), e.g.
    /// exact Born probabilities over an enumerated configuration space.
    pub fn weighted(records: &[LocalEnergyRecord], weights: &[f64]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        if weights.len() != records.len() {
            return Err(Error::SizeMismatch {
                what: "sample weights",
                expected: records.len(),
                got: weights.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument("sample weights must be non-negative with positive sum".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let num_params = records[0].o.len();
        let mut o_mean = vec![0.0; num_params];
        let mut energy_mean = 0.0;
        for (r, &w) in records.iter().zip(&weights) {
            if r.o.len() != num_params {
                return Err(Error::SizeMismatch {
                    what: "log-derivative vector",
                    expected: num_params,
                    got: r.o.len(),
                });
            }
            energy_mean += w * r.e_loc;
            for (m, o) in o_mean.iter_mut().zip(&r.o) {
                *m += w * o;
            }
        }
        let mut centered = Vec::with_capacity(records.len() * num_params);
        for r in records {
            centered.extend(r.o.iter().zip(&o_mean).map(|(o, m)| o - m));
        }
        Ok(Self {
            num_params,
            weights,
            energies: records.iter().map(|r| r.e_loc).collect(),
            centered,
            o_mean,
            energy_mean,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.energies.len()
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn energy_mean(&self) -> f64 {
        self.energy_mean
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn o_mean(&self) -> &[f64] {
        &self.o_mean
    }

    fn row(&self, s: usize) -> &[f64] {
        &self.centered[s * self.num_params..(s + 1) * self.num_params]
    }

    /// `g_k = 2 <(e - <e>) dO_k>`.
    pub fn gradient(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.num_params];
        for s in 0..self.num_samples() {
            let c = 2.0 * self.weights[s] * (self.energies[s] - self.energy_mean);
            for (gk, o) in g.iter_mut().zip(self.row(s)) {
                *gk += c * o;
            }
        }
        g
    }

    /// `(S + lambda I) x`.
    pub fn fisher_matvec(&self, x: &[f64], lambda: f64, out: &mut [f64]) {
        out.iter_mut().zip(x).for_each(|(y, xi)| *y = lambda * xi);
        for s in 0..self.num_samples() {
            let row = self.row(s);
            let t: f64 = row.iter().zip(x).map(|(o, xi)| o * xi).sum();
            let c = self.weights[s] * t;
            for (y, o) in out.iter_mut().zip(row) {
                *y += c * o;
            }
        }
    }
}

/// Result of a conjugate-gradient solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual `|b - A x| / |b|`.
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain conjugate gradients for symmetric positive-definite `A`, started
/// from zero and stopped at relative residual `tol` or `max_iter` steps.
pub fn cg_solve<F>(mut matvec: F, b: &[f64], tol: f64, max_iter: usize) -> Result<CgOutcome>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if !b_norm.is_finite() {
        return Err(Error::IllConditioned(0));
    }
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    while iterations < max_iter {
        if rr.sqrt() / b_norm <= tol {
            break;
        }
        matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        let alpha = rr / pap;
        if !alpha.is_finite() {
            return Err(Error::IllConditioned(iterations));
        }
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::IllConditioned(iterations));
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iterations += 1;
    }
    let residual = rr.sqrt() / b_norm;
    Ok(CgOutcome {
        x,
        iterations,
        residual,
        converged: residual <= tol,
    })
}

/// `eta_min + (eta_max - eta_min) (1 + cos(pi t / n_iter)) / 2`.
pub fn cosine_lr(t: usize, n_iter: usize, eta_max: f64, eta_min: f64) -> f64 {
    let phase = if n_iter == 0 {
        0.0
    } else {
        std::f64::consts::PI * t as f64 / n_iter as f64
    };
    eta_min + 0.5 * (eta_max - eta_min) * (1.0 + phase.cos())
}

/// `max(lambda_min, lambda0 * decay^t)`.
pub fn lambda_schedule(t: usize, lambda0: f64, decay: f64, lambda_min: f64) -> f64 {
    (lambda0 * decay.powf(t as f64)).max(lambda_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-precision runs.
    Algorithmic,
    /// Runs on the quantized sampler.
    Hardware,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "algorithmic" => Ok(Self::Algorithmic),
            "hardware" => Ok(Self::Hardware),
            other => Err(Error::InvalidArgument(format!("unknown optimizer profile '{other}'"))),
        }
    }
}

/// Learning-rate, damping and solver settings of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrSchedule {
    pub n_iter: usize,
    pub eta_max: f64,
    pub eta_min: f64,
    pub lambda0: f64,
    pub lambda_decay: f64,
    pub lambda_min: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl SrSchedule {
    pub fn profile(profile: Profile, n_iter: usize) -> Self {
        let (eta_max, eta_min) = match profile {
            Profile::Algorithmic => (0.1, 1e-5),
            Profile::Hardware => (0.05, 0.01),
        };
        Self {
            n_iter,
            eta_max,
            eta_min,
            lambda0: 0.1,
            lambda_decay: 0.9,
            lambda_min: 1e-4,
            cg_tol: 1e-4,
            cg_max_iter: 500,
        }
    }

    pub fn lr(&self, t: usize) -> f64 {
        cosine_lr(t, self.n_iter, self.eta_max, self.eta_min)
    }

    pub fn lambda(&self, t: usize) -> f64 {
        lambda_schedule(t, self.lambda0, self.lambda_decay, self.lambda_min)
    }
}

/// One SR update.
#[derive(Debug, Clone, PartialEq)]
pub struct SrUpdate {
    pub delta: Vec<f64>,
    pub lr: f64,
    pub lambda: f64,
    pub cg: CgOutcome,
}

/// Solves `(S + lambda I) x = g` and returns `-eta x`.
pub fn sr_update(batch: &SrBatch, lr: f64, lambda: f64, cg_tol: f64, cg_max_iter: usize) -> Result<SrUpdate> {
    let g = batch.gradient();
    let cg = cg_solve(|x, y| batch.fisher_matvec(x, lambda, y), &g, cg_tol, cg_max_iter)?;
    let delta = cg.x.iter().map(|x| -lr * x).collect();
    Ok(SrUpdate {
        delta,
        lr,
        lambda,
        cg,
    })
}

/// SR update at iteration `t` of `schedule`.
pub fn sr_step(batch: &SrBatch, schedule: &SrSchedule, t: usize) -> Result<SrUpdate> {
    sr_update(batch, schedule.lr(t), schedule.lambda(t), schedule.cg_tol, schedule.cg_max_iter)
}
