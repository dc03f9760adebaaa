//! Local energy and log-derivative estimators of the TFIM.
//!
//! `H = -J sum_<ij> s^z_i s^z_j - Gamma sum_i s^x_i`. For a sample `S`,
//! `E_loc(S) = diag(S) - Gamma sum_i Psi(S_i) / Psi(S)` where `S_i` is `S`
//! with spin `i` flipped. FRBM ratios are analytic; DBM ratios come from
//! clamped sampling of the auxiliary layers (dual sampling).

use crate::error::{Error, Result};
use crate::lattice::build_tfim_bonds;
use crate::model::{ln_2cosh, Architecture, ModelParameters, Network, Spin};
use crate::sampler::{clamped_sweep, ChainState, Machine};

/// Exponents are clipped to this magnitude before `exp`.
pub const EXP_CLIP: f64 = 500.0;

/// Periodic square-lattice TFIM.
#[derive(Debug, Clone, PartialEq)]
pub struct Tfim {
    num_sites: usize,
    bonds: Vec<(usize, usize)>,
    pub j: f64,
    pub gamma: f64,
}

impl Tfim {
    pub fn square(len: usize, j: f64, gamma: f64) -> Result<Self> {
        Ok(Self {
            num_sites: len * len,
            bonds: build_tfim_bonds(len)?,
            j,
            gamma,
        })
    }

    /// Arbitrary bond list, mainly for small oracle systems.
    pub fn from_bonds(num_sites: usize, bonds: Vec<(usize, usize)>, j: f64, gamma: f64) -> Result<Self> {
        if let Some(&(a, b)) = bonds.iter().find(|&&(a, b)| a >= num_sites || b >= num_sites) {
            return Err(Error::InvalidGraph(format!(
                "bond ({a}, {b}) outside {num_sites} sites"
            )));
        }
        Ok(Self {
            num_sites,
            bonds,
            j,
            gamma,
        })
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn bonds(&self) -> &[(usize, usize)] {
        &self.bonds
    }

    /// `-J sum_<ij> s_i s_j`.
    pub fn diagonal(&self, s: &[Spin]) -> f64 {
        let sum: i64 = self
            .bonds
            .iter()
            .map(|&(a, b)| (s[a] * s[b]) as i64)
            .sum();
        -self.j * sum as f64
    }

    /// Local energy for given amplitude ratios `Psi(S_i)/Psi(S)`.
    pub fn local_energy(&self, s: &[Spin], ratios: &[f64]) -> f64 {
        self.diagonal(s) - self.gamma * ratios.iter().sum::<f64>()
    }
}

/// Local energy and log-derivatives `O_k = d ln Psi / d theta_k` of one sample,
/// laid out like `ModelParameters::values`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEnergyRecord {
    pub e_loc: f64,
    pub o: Vec<f64>,
}

fn check_visible(net: &Network, ham: &Tfim, s: &[Spin]) -> Result<()> {
    if ham.num_sites() != net.num_visible() {
        return Err(Error::SizeMismatch {
            what: "Hamiltonian sites vs visible units",
            expected: net.num_visible(),
            got: ham.num_sites(),
        });
    }
    if s.len() != net.num_visible() {
        return Err(Error::SizeMismatch {
            what: "visible spins",
            expected: net.num_visible(),
            got: s.len(),
        });
    }
    Ok(())
}

/// `ln Psi(S_i) - ln Psi(S)` of an FRBM given the hidden pre-activations
/// `theta` of `S`.
pub fn rbm_log_ratio(
    net: &Network,
    params: &ModelParameters,
    s: &[Spin],
    theta: &[f64],
    site: usize,
) -> f64 {
    let nv = net.num_visible();
    let w = params.weights();
    let si = s[site] as f64;
    let hidden: f64 = net
        .incident(site)
        .map(|(j, e)| {
            let t = theta[j - nv];
            ln_2cosh(t - 2.0 * w[e] * si) - ln_2cosh(t)
        })
        .sum();
    0.5 * (-2.0 * params.a()[site] * si + hidden)
}

/// Exact-marginal FRBM local energy and log-derivatives.
pub fn local_energy_rbm(
    net: &Network,
    params: &ModelParameters,
    ham: &Tfim,
    s: &[Spin],
) -> Result<LocalEnergyRecord> {
    if net.arch() != Architecture::Frbm {
        return Err(Error::ArchMismatch("FRBM"));
    }
    check_visible(net, ham, s)?;
    let nv = net.num_visible();
    let theta = params.hidden_fields(net, s);
    let off: f64 = (0..nv)
        .map(|i| rbm_log_ratio(net, params, s, &theta, i).exp())
        .sum();
    let e_loc = ham.diagonal(s) - ham.gamma * off;

    let nodes = net.num_nodes();
    let mut o = vec![0.0; params.len()];
    let tanh: Vec<f64> = theta.iter().map(|t| t.tanh()).collect();
    for i in 0..nv {
        o[i] = 0.5 * s[i] as f64;
    }
    for (j, t) in tanh.iter().enumerate() {
        o[nv + j] = 0.5 * t;
    }
    for (e, &(u, v)) in net.edges().iter().enumerate() {
        let (i, j) = if u < nv { (u, v) } else { (v, u) };
        o[nodes + e] = 0.5 * s[i] as f64 * tanh[j - nv];
    }
    Ok(LocalEnergyRecord { e_loc, o })
}

/// Per-site flip statistics and auxiliary moments from clamped sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSampleStats {
    /// Sample mean of `exp(-2 I_i s_i)` per visible site.
    pub p_flip: Vec<f64>,
    /// Sample mean of `exp(-4 I_i s_i)` per visible site.
    pub p_flip_sq: Vec<f64>,
    /// Log-derivative estimates, laid out like `ModelParameters::values`.
    pub o: Vec<f64>,
    pub n_samples: usize,
    /// Exponent evaluations that hit `EXP_CLIP`.
    pub clipped: usize,
}

fn clipped_exp(x: f64, clipped: &mut usize) -> f64 {
    if x.abs() > EXP_CLIP {
        *clipped += 1;
        x.clamp(-EXP_CLIP, EXP_CLIP).exp()
    } else {
        x.exp()
    }
}

/// Runs `n_c` clamped sweeps of `chain` (visible layer already set to the
/// sample) on `sampling`, evaluating the flip weights with the fields of
/// `fields`. Passing different machines emulates a low-precision sampler
/// with full-precision estimators.
pub fn accumulate_dual_stats(
    net: &Network,
    sampling: &Machine,
    fields: &Machine,
    chain: &mut ChainState,
    n_c: usize,
) -> Result<DualSampleStats> {
    if n_c < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: n_c,
        });
    }
    let nv = net.num_visible();
    let nodes = net.num_nodes();
    let edges = net.edges();
    let aux_edges: Vec<usize> = (0..edges.len())
        .filter(|&e| edges[e].0 >= nv && edges[e].1 >= nv)
        .collect();

    let mut p = vec![0.0; nv];
    let mut p_sq = vec![0.0; nv];
    let mut node_sum = vec![0i64; nodes];
    let mut edge_sum = vec![0i64; edges.len()];
    let mut clipped = 0usize;

    for _ in 0..n_c {
        clamped_sweep(chain, sampling);
        let s = &chain.spins;
        for i in 0..nv {
            let x = -2.0 * fields.field(i, s) * s[i] as f64;
            p[i] += clipped_exp(x, &mut clipped);
            p_sq[i] += clipped_exp(2.0 * x, &mut clipped);
        }
        for n in nv..nodes {
            node_sum[n] += s[n] as i64;
        }
        for &e in &aux_edges {
            let (u, v) = edges[e];
            edge_sum[e] += (s[u] * s[v]) as i64;
        }
    }

    let inv = 1.0 / n_c as f64;
    p.iter_mut().for_each(|x| *x *= inv);
    p_sq.iter_mut().for_each(|x| *x *= inv);

    let s = &chain.spins;
    let mut o = vec![0.0; nodes + edges.len()];
    for i in 0..nv {
        o[i] = 0.5 * s[i] as f64;
    }
    for n in nv..nodes {
        o[n] = 0.5 * node_sum[n] as f64 * inv;
    }
    for (e, &(u, v)) in edges.iter().enumerate() {
        o[nodes + e] = 0.5
            * if u < nv && v < nv {
                (s[u] * s[v]) as f64
            } else if u < nv {
                s[u] as f64 * node_sum[v] as f64 * inv
            } else if v < nv {
                s[v] as f64 * node_sum[u] as f64 * inv
            } else {
                edge_sum[e] as f64 * inv
            };
    }
    Ok(DualSampleStats {
        p_flip: p,
        p_flip_sq: p_sq,
        o,
        n_samples: n_c,
        clipped,
    })
}

/// Bias-corrected `sqrt(p)` from the mean `p` and mean square `p_sq` of
/// `n_c` samples: `sqrt(p) + Var(p_hat) / (8 p^(3/2))` with
/// `Var(p_hat) = (p_sq - p^2) / n_c`.
pub fn taylor_corrected_amplitude(p: f64, p_sq: f64, n_c: usize) -> Result<f64> {
    if n_c < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: n_c,
        });
    }
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::CollapsedEstimator { site: 0, value: p });
    }
    let var = ((p_sq - p * p) / n_c as f64).max(0.0);
    Ok(p.sqrt() + var / (8.0 * p.powf(1.5)))
}

/// Amplitude ratios `Psi(S_i)/Psi(S)` from dual-sampling statistics.
pub fn dual_ratios(stats: &DualSampleStats) -> Result<Vec<f64>> {
    stats
        .p_flip
        .iter()
        .zip(&stats.p_flip_sq)
        .enumerate()
        .map(|(site, (&p, &p_sq))| {
            taylor_corrected_amplitude(p, p_sq, stats.n_samples).map_err(|e| match e {
                Error::CollapsedEstimator { value, .. } => {
                    Error::CollapsedEstimator { site, value }
                }
                other => other,
            })
        })
        .collect()
}

/// Sampled DBM local energy and log-derivatives for the visible
/// configuration currently held by `chain`.
pub fn local_energy_dbm(
    net: &Network,
    ham: &Tfim,
    sampling: &Machine,
    fields: &Machine,
    chain: &mut ChainState,
    n_c: usize,
) -> Result<LocalEnergyRecord> {
    let nv = net.num_visible();
    check_visible(net, ham, &chain.spins[..nv])?;
    let stats = accumulate_dual_stats(net, sampling, fields, chain, n_c)?;
    let ratios = dual_ratios(&stats)?;
    Ok(LocalEnergyRecord {
        e_loc: ham.local_energy(&chain.spins[..nv], &ratios),
        o: stats.o,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_psi_rbm, uniform_params};
    use crate::streams::Prng;
    use rand::SeedableRng;

    #[test]
    fn diagonal_examples() {
        let ham = Tfim::square(3, 1.0, 0.0).unwrap();
        assert_eq!(ham.bonds().len(), 18);
        assert_eq!(ham.diagonal(&[1; 9]), -18.0);
        let neel = [1, -1, 1, -1, 1, -1, 1, -1, 1];
        // Odd L frustrates the checkerboard along the seam.
        let expected: f64 = -ham
            .bonds()
            .iter()
            .map(|&(a, b)| (neel[a] * neel[b]) as f64)
            .sum::<f64>();
        assert_eq!(ham.diagonal(&neel), expected);
        let ham4 = Tfim::square(4, 2.0, 0.0).unwrap();
        let checker: Vec<Spin> = (0..16).map(|i| if (i / 4 + i % 4) % 2 == 0 { 1 } else { -1 }).collect();
        assert_eq!(ham4.diagonal(&checker), 64.0);
    }

    #[test]
    fn zero_network_local_energy() {
        // Uniform amplitude: every ratio is 1.
        let net = Network::frbm(3, 1.0).unwrap();
        let p = ModelParameters::zeros(&net);
        let ham = Tfim::square(3, 1.0, 0.7).unwrap();
        let s = [1; 9];
        let rec = local_energy_rbm(&net, &p, &ham, &s).unwrap();
        assert!((rec.e_loc - (-18.0 - 0.7 * 9.0)).abs() < 1e-12);
    }

    #[test]
    fn rbm_ratio_matches_log_psi_difference() {
        let net = Network::frbm(3, 1.0).unwrap();
        let p = uniform_params(&net, 0.8, 3);
        let s: Vec<Spin> = vec![1, 1, -1, 1, -1, -1, 1, -1, 1];
        let theta = p.hidden_fields(&net, &s);
        let base = log_psi_rbm(&net, &p, &s).unwrap();
        for i in 0..9 {
            let mut f = s.clone();
            f[i] = -f[i];
            let exact = log_psi_rbm(&net, &p, &f).unwrap() - base;
            assert!((rbm_log_ratio(&net, &p, &s, &theta, i) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn rbm_log_derivatives_match_finite_differences() {
        let net = Network::frbm(3, 1.0).unwrap();
        let p = uniform_params(&net, 0.5, 4);
        let ham = Tfim::square(3, 1.0, 1.0).unwrap();
        let s: Vec<Spin> = vec![-1, 1, -1, 1, 1, -1, 1, 1, -1];
        let rec = local_energy_rbm(&net, &p, &ham, &s).unwrap();
        let h = 1e-6;
        for k in (0..p.len()).step_by(7) {
            let mut up = p.clone();
            up.values[k] += h;
            let mut dn = p.clone();
            dn.values[k] -= h;
            let fd = (log_psi_rbm(&net, &up, &s).unwrap() - log_psi_rbm(&net, &dn, &s).unwrap()) / (2.0 * h);
            assert!((fd - rec.o[k]).abs() < 1e-8, "k={k}");
        }
    }

    #[test]
    fn taylor_examples() {
        let v = taylor_corrected_amplitude(0.25, 0.0625, 100).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let v = taylor_corrected_amplitude(0.25, 0.1125, 100).unwrap();
        assert!((v - 0.5005).abs() < 1e-12);
        assert!(matches!(
            taylor_corrected_amplitude(0.0, 0.0, 100),
            Err(Error::CollapsedEstimator { .. })
        ));
        assert!(matches!(
            taylor_corrected_amplitude(0.5, 0.5, 1),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn decoupled_visible_flip_weight() {
        // A visible unit with only a bias has a deterministic flip weight.
        let net = Network::custom(Architecture::Dbm, [1, 1, 1], vec![(1, 2)]).unwrap();
        let mut p = ModelParameters::zeros(&net);
        p.biases_mut()[0] = 0.3;
        let m = Machine::new(&net, &p).unwrap();
        let mut chain = ChainState::from_spins(vec![1, 1, 1], Prng::seed_from_u64(1));
        let st = accumulate_dual_stats(&net, &m, &m, &mut chain, 10).unwrap();
        assert!((st.p_flip[0] - (-0.6f64).exp()).abs() < 1e-14);
        assert!((st.p_flip_sq[0] - (-1.2f64).exp()).abs() < 1e-14);
        assert_eq!(st.clipped, 0);
    }

    #[test]
    fn clipping_is_counted() {
        let net = Network::custom(Architecture::Dbm, [1, 1, 0], vec![(0, 1)]).unwrap();
        let mut p = ModelParameters::zeros(&net);
        p.biases_mut()[0] = -400.0;
        let m = Machine::new(&net, &p).unwrap();
        let mut chain = ChainState::from_spins(vec![-1, 1], Prng::seed_from_u64(2));
        let st = accumulate_dual_stats(&net, &m, &m, &mut chain, 4).unwrap();
        assert!(st.p_flip.iter().all(|x| x.is_finite()));
        assert_eq!(st.clipped, 8);
    }

    #[test]
    fn dual_local_energy_approaches_exact_rbm_value() {
        // An FRBM graph sampled through the dual route must agree with the
        // analytic marginal.
        let frbm = Network::frbm(3, 1.0).unwrap();
        let dbm_view = Network::custom(Architecture::Dbm, [9, 9, 0], frbm.edges().to_vec()).unwrap();
        let p = uniform_params(&frbm, 0.4, 5);
        let pd = ModelParameters::from_values(&dbm_view, p.values.clone()).unwrap();
        let ham = Tfim::square(3, 1.0, 2.0).unwrap();
        let s: Vec<Spin> = vec![1, -1, 1, 1, 1, -1, -1, 1, 1];
        let exact = local_energy_rbm(&frbm, &p, &ham, &s).unwrap();
        let m = Machine::new(&dbm_view, &pd).unwrap();
        let mut state = s.clone();
        state.extend([1; 9]);
        let mut chain = ChainState::from_spins(state, Prng::seed_from_u64(6));
        let rec = local_energy_dbm(&dbm_view, &ham, &m, &m, &mut chain, 200_000).unwrap();
        assert!((rec.e_loc - exact.e_loc).abs() < 0.02, "{} vs {}", rec.e_loc, exact.e_loc);
        for k in 0..exact.o.len() {
            assert!((rec.o[k] - exact.o[k]).abs() < 0.01, "k={k}");
        }
    }
}
