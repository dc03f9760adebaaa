//! Exact references for small systems.
//!
//! Ground energies come from Lanczos iteration on the implicit `2^N`
//! Hamiltonian. Boltzmann-machine marginals are exhaustive sums over the
//! auxiliary layers with their own energy code, so nothing here depends on
//! the model's closed-form amplitudes.
//!
//! Basis states are enumerated little-endian: bit `i` of the index is site
//! `i`, with a set bit meaning spin `+1`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::estimator::Tfim;
use crate::model::{ModelParameters, Network, Spin};

/// Largest number of sites handled by exact diagonalisation.
pub const MAX_ED_SITES: usize = 20;
/// Largest number of auxiliary units summed over exhaustively.
pub const MAX_AUX_UNITS: usize = 20;
/// Largest visible layer enumerated for exact expectations.
pub const MAX_VISIBLE_UNITS: usize = 16;
/// Dense eigensolves are limited to this many sites.
pub const MAX_DENSE_SITES: usize = 10;

const LANCZOS_TOL: f64 = 1e-12;
const LANCZOS_MAX_ITER: usize = 400;

/// Spin of site `i` in basis state `x`.
#[inline]
pub fn spin_of(x: usize, i: usize) -> Spin {
    if (x >> i) & 1 == 1 {
        1
    } else {
        -1
    }
}

/// Spins of basis state `x` over `n` sites.
pub fn spins_of(x: usize, n: usize) -> Vec<Spin> {
    (0..n).map(|i| spin_of(x, i)).collect()
}

/// Basis index of a spin configuration.
pub fn index_of(s: &[Spin]) -> usize {
    s.iter()
        .enumerate()
        .fold(0, |acc, (i, &v)| if v > 0 { acc | 1 << i } else { acc })
}

/// TFIM on an `L x L` torus; `L = 1` is a single spin without bonds.
pub fn oracle_tfim(len: usize, j: f64, gamma: f64) -> Result<Tfim> {
    match len {
        0 => Err(Error::InvalidLattice("L must be positive".into())),
        1 => Tfim::from_bonds(1, Vec::new(), j, gamma),
        _ => Tfim::square(len, j, gamma),
    }
}

fn check_ed_size(ham: &Tfim) -> Result<()> {
    let n = ham.num_sites();
    if n == 0 || n > MAX_ED_SITES {
        return Err(Error::SizeLimit(format!(
            "exact diagonalisation needs 1..={MAX_ED_SITES} sites, got {n}"
        )));
    }
    Ok(())
}

fn diagonal_table(ham: &Tfim) -> Vec<f64> {
    let n = ham.num_sites();
    (0..1usize << n)
        .map(|x| {
            let sum: i64 = ham
                .bonds()
                .iter()
                .map(|&(a, b)| (spin_of(x, a) * spin_of(x, b)) as i64)
                .sum();
            -ham.j * sum as f64
        })
        .collect()
}

fn apply_h(n: usize, gamma: f64, diag: &[f64], x: &[f64], y: &mut [f64]) {
    for (s, out) in y.iter_mut().enumerate() {
        let mut acc = diag[s] * x[s];
        for i in 0..n {
            acc -= gamma * x[s ^ (1 << i)];
        }
        *out = acc;
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn lowest_tridiagonal(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |r, c| {
        if r == c {
            alpha[r]
        } else if r + 1 == c {
            beta[r]
        } else if c + 1 == r {
            beta[c]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let (k, &e) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    (e, eig.eigenvectors.column(k).iter().copied().collect())
}

/// Ground-state energy and (optionally) vector from exact diagonalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct EdResult {
    pub energy: f64,
    pub iterations: usize,
    pub ground_state: Option<Vec<f64>>,
}

impl EdResult {
    /// True if all components share one sign up to `tol` times the largest
    /// magnitude.
    pub fn is_single_signed(&self, tol: f64) -> bool {
        let Some(v) = &self.ground_state else {
            return false;
        };
        let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let pos = v.iter().all(|x| *x >= -tol * max);
        let neg = v.iter().all(|x| *x <= tol * max);
        pos || neg
    }
}

/// Lanczos ground state of `ham`, started from the uniform superposition.
/// Iteration stops when the lowest Ritz value changes by less than `1e-12`
/// (relative) between steps or the Krylov space is exhausted.
pub fn ed_ground_state(ham: &Tfim, with_vector: bool) -> Result<EdResult> {
    check_ed_size(ham)?;
    let n = ham.num_sites();
    let dim = 1usize << n;
    let diag = diagonal_table(ham);
    let start = vec![1.0 / (dim as f64).sqrt(); dim];

    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut prev = vec![0.0; dim];
    let mut cur = start.clone();
    let mut w = vec![0.0; dim];
    let mut last = f64::INFINITY;
    let mut energy = f64::INFINITY;
    let mut coeffs = Vec::new();
    let max_iter = LANCZOS_MAX_ITER.min(dim);
    for it in 0..max_iter {
        apply_h(n, ham.gamma, &diag, &cur, &mut w);
        let a: f64 = w.iter().zip(&cur).map(|(x, y)| x * y).sum();
        let b_prev = beta.last().copied().unwrap_or(0.0);
        for k in 0..dim {
            w[k] -= a * cur[k] + b_prev * prev[k];
        }
        alpha.push(a);
        let (e, c) = lowest_tridiagonal(&alpha, &beta);
        energy = e;
        coeffs = c;
        let b = norm(&w);
        let converged = (e - last).abs() <= LANCZOS_TOL * e.abs().max(1.0);
        if !e.is_finite() {
            return Err(Error::NumericalAbort {
                iter: it,
                reason: "non-finite Ritz value".into(),
            });
        }
        if converged || b <= 1e-12 || it + 1 == max_iter {
            break;
        }
        last = e;
        beta.push(b);
        std::mem::swap(&mut prev, &mut cur);
        for k in 0..dim {
            cur[k] = w[k] / b;
        }
    }
    let iterations = alpha.len();

    let ground_state = with_vector.then(|| {
        // Replay the recurrence, accumulating the Ritz vector.
        let mut psi = vec![0.0; dim];
        let mut prev = vec![0.0; dim];
        let mut cur = start.clone();
        let mut w = vec![0.0; dim];
        for (j, &c) in coeffs.iter().enumerate() {
            for k in 0..dim {
                psi[k] += c * cur[k];
            }
            if j + 1 == coeffs.len() {
                break;
            }
            apply_h(n, ham.gamma, &diag, &cur, &mut w);
            let b_prev = if j == 0 { 0.0 } else { beta[j - 1] };
            for k in 0..dim {
                w[k] -= alpha[j] * cur[k] + b_prev * prev[k];
            }
            std::mem::swap(&mut prev, &mut cur);
            for k in 0..dim {
                cur[k] = w[k] / beta[j];
            }
        }
        let nrm = norm(&psi);
        psi.iter_mut().for_each(|x| *x /= nrm);
        psi
    });

    Ok(EdResult {
        energy,
        iterations,
        ground_state,
    })
}

pub fn ed_ground_energy(ham: &Tfim) -> Result<f64> {
    Ok(ed_ground_state(ham, false)?.energy)
}

/// Lowest eigenvalue of the explicitly assembled Hamiltonian; a
/// cross-check for the iterative solver on tiny systems.
pub fn dense_ground_energy(ham: &Tfim) -> Result<f64> {
    let n = ham.num_sites();
    if n == 0 || n > MAX_DENSE_SITES {
        return Err(Error::SizeLimit(format!(
            "dense eigensolve needs 1..={MAX_DENSE_SITES} sites, got {n}"
        )));
    }
    let dim = 1usize << n;
    let diag = diagonal_table(ham);
    let mut h = DMatrix::zeros(dim, dim);
    for s in 0..dim {
        h[(s, s)] = diag[s];
        for i in 0..n {
            h[(s, s ^ (1 << i))] -= ham.gamma;
        }
    }
    Ok(SymmetricEigen::new(h).eigenvalues.min())
}

/// `-sum_n b_n s_n - sum_e W_e s_u s_v`, written out independently of the
/// model code.
fn joint_energy(params: &ModelParameters, edges: &[(usize, usize)], s: &[Spin]) -> f64 {
    let b = &params.values[..s.len()];
    let w = &params.values[s.len()..];
    let mut e = 0.0;
    for (bn, &sn) in b.iter().zip(s) {
        e -= bn * sn as f64;
    }
    for (we, &(u, v)) in w.iter().zip(edges) {
        e -= we * (s[u] * s[v]) as f64;
    }
    e
}

fn check_params(net: &Network, params: &ModelParameters) -> Result<()> {
    if params.len() != net.num_params() || params.num_nodes() != net.num_nodes() {
        return Err(Error::SizeMismatch {
            what: "parameters vs network",
            expected: net.num_params(),
            got: params.len(),
        });
    }
    Ok(())
}

/// `ln sum_{h,d} exp(-E(v, h, d))`, by Gray-code enumeration of the
/// auxiliary units with a running log-sum-exp.
pub fn log_brute_marginal(net: &Network, params: &ModelParameters, v: &[Spin]) -> Result<f64> {
    check_params(net, params)?;
    let nv = net.num_visible();
    let n_aux = net.num_nodes() - nv;
    if n_aux > MAX_AUX_UNITS {
        return Err(Error::SizeLimit(format!(
            "brute-force marginal over {n_aux} auxiliary units (limit {MAX_AUX_UNITS})"
        )));
    }
    if v.len() != nv {
        return Err(Error::SizeMismatch {
            what: "visible spins",
            expected: nv,
            got: v.len(),
        });
    }
    let edges = net.edges();
    let nodes = net.num_nodes();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nodes];
    for (&(a, b), &w) in edges.iter().zip(&params.values[nodes..]) {
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    let mut s: Vec<Spin> = v.to_vec();
    s.extend(std::iter::repeat_n(-1, n_aux));
    let mut energy = joint_energy(params, edges, &s);
    let mut max = -energy;
    let mut sum = 1.0;
    for k in 1u64..(1u64 << n_aux) {
        let node = nv + k.trailing_zeros() as usize;
        let field = adj[node]
            .iter()
            .fold(params.values[node], |acc, &(nb, w)| acc + w * s[nb] as f64);
        energy += 2.0 * s[node] as f64 * field;
        s[node] = -s[node];
        let x = -energy;
        if x > max {
            sum = sum * (max - x).exp() + 1.0;
            max = x;
        } else {
            sum += (x - max).exp();
        }
    }
    Ok(max + sum.ln())
}

/// Unnormalised `p(v) = sum_{h,d} exp(-E(v, h, d))`.
pub fn brute_marginal(net: &Network, params: &ModelParameters, v: &[Spin]) -> Result<f64> {
    Ok(log_brute_marginal(net, params, v)?.exp())
}

/// `sqrt(p(v^(i)) / p(v))` from exhaustive sums.
pub fn exact_ratio(net: &Network, params: &ModelParameters, v: &[Spin], site: usize) -> Result<f64> {
    let mut f = v.to_vec();
    f[site] = -f[site];
    let num = log_brute_marginal(net, params, &f)?;
    let den = log_brute_marginal(net, params, v)?;
    Ok((0.5 * (num - den)).exp())
}

/// Exact Born distribution `P(v)` over every visible configuration.
#[derive(Debug, Clone)]
pub struct ExactDistribution {
    num_visible: usize,
    log_marginal: Vec<f64>,
    probs: Vec<f64>,
}

impl ExactDistribution {
    pub fn new(net: &Network, params: &ModelParameters) -> Result<Self> {
        let nv = net.num_visible();
        if nv > MAX_VISIBLE_UNITS {
            return Err(Error::SizeLimit(format!(
                "exact expectation over {nv} visible units (limit {MAX_VISIBLE_UNITS})"
            )));
        }
        let log_marginal = (0..1usize << nv)
            .map(|x| log_brute_marginal(net, params, &spins_of(x, nv)))
            .collect::<Result<Vec<_>>>()?;
        let max = log_marginal.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
        let weights: Vec<f64> = log_marginal.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = weights.iter().sum();
        let probs = weights.into_iter().map(|w| w / z).collect();
        Ok(Self {
            num_visible: nv,
            log_marginal,
            probs,
        })
    }

    pub fn num_visible(&self) -> usize {
        self.num_visible
    }

    /// Normalised probabilities indexed by basis state.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `sqrt(P(x with site i flipped) / P(x))`.
    pub fn ratio(&self, x: usize, site: usize) -> f64 {
        (0.5 * (self.log_marginal[x ^ (1 << site)] - self.log_marginal[x])).exp()
    }

    /// Exact local energy of every basis state.
    pub fn local_energies(&self, ham: &Tfim) -> Result<Vec<f64>> {
        if ham.num_sites() != self.num_visible {
            return Err(Error::SizeMismatch {
                what: "Hamiltonian sites vs visible units",
                expected: self.num_visible,
                got: ham.num_sites(),
            });
        }
        Ok((0..self.probs.len())
            .map(|x| {
                let s = spins_of(x, self.num_visible);
                let off: f64 = (0..self.num_visible).map(|i| self.ratio(x, i)).sum();
                ham.diagonal(&s) - ham.gamma * off
            })
            .collect())
    }

    /// `sum_v P(v) E_loc(v)`.
    pub fn energy(&self, ham: &Tfim) -> Result<f64> {
        Ok(self
            .local_energies(ham)?
            .iter()
            .zip(&self.probs)
            .map(|(e, p)| e * p)
            .sum())
    }

    /// Total-variation distance to an empirical histogram over basis states.
    pub fn tv_distance(&self, counts: &[u64]) -> f64 {
        let total: u64 = counts.iter().sum();
        0.5 * self
            .probs
            .iter()
            .zip(counts)
            .map(|(p, &c)| (p - c as f64 / total as f64).abs())
            .sum::<f64>()
    }
}

/// Variational energy `<Psi|H|Psi> / <Psi|Psi>` by exhaustive summation.
pub fn exact_variational_energy(net: &Network, params: &ModelParameters, ham: &Tfim) -> Result<f64> {
    ExactDistribution::new(net, params)?.energy(ham)
}

/// Exact Boltzmann distribution `exp(-E)/Z` over all nodes of a small
/// network, indexed like `index_of` over the full state.
pub fn exact_joint_distribution(net: &Network, params: &ModelParameters) -> Result<Vec<f64>> {
    check_params(net, params)?;
    let n = net.num_nodes();
    if n > MAX_AUX_UNITS {
        return Err(Error::SizeLimit(format!("joint enumeration of {n} nodes (limit {MAX_AUX_UNITS})")));
    }
    let neg_e: Vec<f64> = (0..1usize << n)
        .map(|x| -joint_energy(params, net.edges(), &spins_of(x, n)))
        .collect();
    let max = neg_e.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    let w: Vec<f64> = neg_e.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_psi_rbm, uniform_params, Architecture};

    fn dbm_444() -> Network {
        let mut edges = Vec::new();
        for v in 0..4 {
            for h in 4..8 {
                edges.push((v, h));
            }
        }
        for h in 4..8 {
            for d in 8..12 {
                edges.push((h, d));
            }
        }
        Network::custom(Architecture::Dbm, [4, 4, 4], edges).unwrap()
    }

    #[test]
    fn single_spin() {
        let ham = oracle_tfim(1, 1.0, 3.044).unwrap();
        assert!((ed_ground_energy(&ham).unwrap() + 3.044).abs() < 1e-12);
    }

    #[test]
    fn classical_limit() {
        let ham = oracle_tfim(3, 1.0, 0.0).unwrap();
        assert!((ed_ground_energy(&ham).unwrap() + 18.0).abs() < 1e-10);
    }

    #[test]
    fn two_spin_chain_matches_closed_form() {
        // H = -s1 s2 - (x1 + x2): lowest eigenvalue -sqrt(1 + 4).
        let ham = Tfim::from_bonds(2, vec![(0, 1)], 1.0, 1.0).unwrap();
        let lanczos = ed_ground_energy(&ham).unwrap();
        let dense = dense_ground_energy(&ham).unwrap();
        assert!((lanczos + 5f64.sqrt()).abs() < 1e-12);
        assert!((dense + 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn lanczos_matches_dense_on_3x3_subsystem() {
        // 3x3 is 9 sites: within the dense budget.
        for gamma in [0.5, 2.0, 3.044] {
            let ham = oracle_tfim(3, 1.0, gamma).unwrap();
            let a = ed_ground_energy(&ham).unwrap();
            let b = dense_ground_energy(&ham).unwrap();
            assert!(((a - b) / b).abs() < 1e-10, "gamma={gamma}");
        }
    }

    #[test]
    fn ground_vector_is_single_signed() {
        let ham = oracle_tfim(3, 1.0, 3.044).unwrap();
        let r = ed_ground_state(&ham, true).unwrap();
        assert!(r.is_single_signed(1e-12));
        let psi = r.ground_state.unwrap();
        let mut hpsi = vec![0.0; psi.len()];
        apply_h(9, 3.044, &diagonal_table(&ham), &psi, &mut hpsi);
        let resid: f64 = hpsi
            .iter()
            .zip(&psi)
            .map(|(h, p)| (h - r.energy * p).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(resid < 1e-5, "residual {resid}");
    }

    #[test]
    fn size_limits() {
        let big = Tfim::from_bonds(21, vec![], 1.0, 1.0).unwrap();
        assert!(matches!(ed_ground_energy(&big), Err(Error::SizeLimit(_))));
        assert!(matches!(oracle_tfim(2, 1.0, 1.0), Err(Error::DegenerateLattice(2))));
        let net = Network::dbm(5, 1.0, 1.0).unwrap();
        let p = ModelParameters::zeros(&net);
        assert!(matches!(
            log_brute_marginal(&net, &p, &[1; 25]),
            Err(Error::SizeLimit(_))
        ));
    }

    #[test]
    fn zero_parameters_give_flat_marginal() {
        let net = dbm_444();
        let p = ModelParameters::zeros(&net);
        for x in 0..16 {
            let m = brute_marginal(&net, &p, &spins_of(x, 4)).unwrap();
            assert!((m - 256.0).abs() < 1e-9);
            assert!((exact_ratio(&net, &p, &spins_of(x, 4), 2).unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn single_hidden_unit_closed_form() {
        let net = Network::custom(Architecture::Frbm, [2, 1, 0], vec![(0, 2), (1, 2)]).unwrap();
        let p = ModelParameters::from_values(&net, vec![0.1, -0.2, 0.3, 0.7, -0.4]).unwrap();
        let v = [1, -1];
        let field: f64 = 0.3 + 0.7 - (-0.4);
        let expected = (0.1f64 + 0.2).exp() * 2.0 * field.cosh();
        assert!((brute_marginal(&net, &p, &v).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn bias_only_ratio() {
        let net = dbm_444();
        let mut p = ModelParameters::zeros(&net);
        p.biases_mut()[..4].copy_from_slice(&[0.3, -0.5, 0.9, 0.1]);
        let v = [1, -1, -1, 1];
        for i in 0..4 {
            let r = exact_ratio(&net, &p, &v, i).unwrap();
            let expected = (-p.a()[i] * v[i] as f64).exp();
            assert!((r - expected).abs() < 1e-13);
        }
    }

    #[test]
    fn rbm_marginal_matches_log_psi() {
        let net = Network::frbm(3, 1.0).unwrap();
        let p = uniform_params(&net, 0.7, 21);
        let mut offset = None;
        for x in [0usize, 5, 77, 300, 511] {
            let v = spins_of(x, 9);
            let diff = log_brute_marginal(&net, &p, &v).unwrap() - 2.0 * log_psi_rbm(&net, &p, &v).unwrap();
            let c = *offset.get_or_insert(diff);
            assert!((diff - c).abs() < 1e-10);
        }
    }

    #[test]
    fn dbm_ratio_from_independent_sums() {
        let net = dbm_444();
        let p = uniform_params(&net, 1.0, 22);
        let v = [1, 1, -1, 1];
        // Direct summation over the full 2^12 joint table.
        let joint = exact_joint_distribution(&net, &p).unwrap();
        let mut pv = [0.0; 16];
        for (x, q) in joint.iter().enumerate() {
            pv[x & 15] += q;
        }
        let xv = index_of(&v);
        for i in 0..4 {
            let expected = (pv[xv ^ (1 << i)] / pv[xv]).sqrt();
            let r = exact_ratio(&net, &p, &v, i).unwrap();
            assert!(((r - expected) / expected).abs() < 1e-12);
        }
    }

    #[test]
    fn variational_bound_and_classical_limit() {
        let ham = oracle_tfim(3, 1.0, 3.044).unwrap();
        let e0 = ed_ground_energy(&ham).unwrap();
        let net = Network::frbm(3, 1.0).unwrap();
        for seed in 0..4 {
            let p = uniform_params(&net, 0.5, seed);
            let e = exact_variational_energy(&net, &p, &ham).unwrap();
            assert!(e >= e0 - 1e-9);
            let classical = oracle_tfim(3, 1.0, 0.0).unwrap();
            let dist = ExactDistribution::new(&net, &p).unwrap();
            let direct: f64 = dist
                .probs()
                .iter()
                .enumerate()
                .map(|(x, q)| q * classical.diagonal(&spins_of(x, 9)))
                .sum();
            assert!((dist.energy(&classical).unwrap() - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn single_spin_rbm_reaches_ground_state() {
        // With no hidden coupling the amplitude is exp(a s / 2); a = 0 gives
        // the uniform state, the exact ground state of -Gamma x.
        let net = Network::custom(Architecture::Frbm, [1, 1, 0], vec![(0, 1)]).unwrap();
        let p = ModelParameters::zeros(&net);
        let ham = oracle_tfim(1, 1.0, 3.044).unwrap();
        let e = exact_variational_energy(&net, &p, &ham).unwrap();
        assert!((e - ed_ground_energy(&ham).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rayleigh_quotient_agrees_with_local_energy_mean() {
        // <Psi|H|Psi>/<Psi|Psi> from an explicit amplitude vector.
        let ham = oracle_tfim(3, 1.0, 3.044).unwrap();
        let net = Network::frbm(3, 1.0).unwrap();
        let p = uniform_params(&net, 0.4, 31);
        let dist = ExactDistribution::new(&net, &p).unwrap();
        let psi: Vec<f64> = dist.probs().iter().map(|q| q.sqrt()).collect();
        let mut hpsi = vec![0.0; psi.len()];
        apply_h(9, ham.gamma, &diagonal_table(&ham), &psi, &mut hpsi);
        let rq: f64 = psi.iter().zip(&hpsi).map(|(a, b)| a * b).sum();
        let e = dist.energy(&ham).unwrap();
        assert!(((e - rq) / rq).abs() < 1e-10);
    }

    #[test]
    fn index_round_trip() {
        for x in 0..512 {
            assert_eq!(index_of(&spins_of(x, 9)), x);
        }
    }
}
