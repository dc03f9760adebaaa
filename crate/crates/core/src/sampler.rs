//! Software p-bit computer.
//!
//! A p-bit outputs `sgn(tanh(beta I) - r)` with `r` uniform on `[-1, 1)`,
//! i.e. `+1` with probability `(1 + tanh(beta I)) / 2`. A sweep visits the
//! color classes of a proper coloring in order and updates every node of a
//! class from the current state; since nodes in one class never interact,
//! the class update equals a simultaneous hardware update and the chain
//! targets `exp(-beta E) / Z`.
//!
//! Randomness: each node update consumes exactly one draw from the chain's
//! own stream, in ascending node order within a class.

use std::io::Write;

use rand::Rng;

use crate::error::Result;
use crate::lattice::Coloring;
use crate::model::{ModelParameters, Network, Spin};
use crate::streams::{uniform_pm1, Prng, StreamDomain, StreamFactory};

/// Couplings of one parameter snapshot laid out for fast field evaluation.
#[derive(Debug, Clone)]
pub struct Machine {
    beta: f64,
    num_visible: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    biases: Vec<f64>,
    classes: Vec<Vec<usize>>,
    aux_classes: Vec<Vec<usize>>,
}

impl Machine {
    /// Uses the network's greedy coloring.
    pub fn new(net: &Network, params: &ModelParameters) -> Result<Self> {
        Self::with_coloring(net, params, net.coloring())
    }

    /// Fails if `coloring` is not proper for the network graph.
    pub fn with_coloring(
        net: &Network,
        params: &ModelParameters,
        coloring: &Coloring,
    ) -> Result<Self> {
        coloring.verify(net.graph())?;
        if params.len() != net.num_params() {
            return Err(crate::error::Error::SizeMismatch {
                what: "parameters vs network",
                expected: net.num_params(),
                got: params.len(),
            });
        }
        let (offsets, adj_node, adj_edge) = net.csr();
        let w = params.weights();
        let weights = adj_edge.iter().map(|&e| w[e]).collect();
        let classes = coloring.classes();
        let nv = net.num_visible();
        let aux_classes = classes
            .iter()
            .map(|c| c.iter().copied().filter(|&n| n >= nv).collect::<Vec<_>>())
            .filter(|c| !c.is_empty())
            .collect();
        Ok(Self {
            beta: 1.0,
            num_visible: nv,
            offsets: offsets.to_vec(),
            neighbors: adj_node.to_vec(),
            weights,
            biases: params.biases().to_vec(),
            classes,
            aux_classes,
        })
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn num_nodes(&self) -> usize {
        self.biases.len()
    }

    pub fn num_visible(&self) -> usize {
        self.num_visible
    }

    pub fn classes(&self) -> &[Vec<usize>] {
        &self.classes
    }

    /// Local field `I_n = sum_j W_nj s_j + b_n`.
    #[inline]
    pub fn field(&self, node: usize, spins: &[Spin]) -> f64 {
        let range = self.offsets[node]..self.offsets[node + 1];
        let mut acc = self.biases[node];
        for (&nb, &w) in self.neighbors[range.clone()].iter().zip(&self.weights[range]) {
            acc += w * spins[nb] as f64;
        }
        acc
    }

    /// Sets node `n` from its field using the pre-drawn variate `r`.
    #[inline]
    pub fn update_node(&self, spins: &mut [Spin], node: usize, r: f64) {
        let activation = (self.beta * self.field(node, spins)).tanh();
        spins[node] = if activation > r { 1 } else { -1 };
    }

    fn sweep_classes(&self, classes: &[Vec<usize>], chain: &mut ChainState) {
        for class in classes {
            for &node in class {
                let r = uniform_pm1(&mut chain.rng);
                self.update_node(&mut chain.spins, node, r);
            }
        }
        chain.sweep_count += 1;
    }
}

/// One p-bit update; consumes exactly one uniform draw.
#[inline]
pub fn pbit_update<R: Rng + ?Sized>(field: f64, beta: f64, rng: &mut R) -> Spin {
    if (beta * field).tanh() > uniform_pm1(rng) {
        1
    } else {
        -1
    }
}

/// Spins of every node plus the chain's private generator.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub spins: Vec<Spin>,
    pub rng: Prng,
    pub sweep_count: u64,
}

impl ChainState {
    /// Uniformly random initial spins drawn from `rng`.
    pub fn random(num_nodes: usize, mut rng: Prng) -> Self {
        let spins = (0..num_nodes)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        Self {
            spins,
            rng,
            sweep_count: 0,
        }
    }

    pub fn from_spins(spins: Vec<Spin>, rng: Prng) -> Self {
        Self {
            spins,
            rng,
            sweep_count: 0,
        }
    }

    pub fn visible(&self, num_visible: usize) -> &[Spin] {
        &self.spins[..num_visible]
    }
}

/// One full Gibbs sweep over all color classes.
pub fn chromatic_sweep(chain: &mut ChainState, machine: &Machine) {
    machine.sweep_classes(&machine.classes, chain);
}

/// Sweep over hidden and deep nodes only; the visible layer stays pinned.
pub fn clamped_sweep(chain: &mut ChainState, machine: &Machine) {
    machine.sweep_classes(&machine.aux_classes, chain);
}

/// Full-network states recorded from a free-running chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    num_visible: usize,
    states: Vec<Vec<Spin>>,
}

impl SampleBatch {
    pub fn new(num_visible: usize, states: Vec<Vec<Spin>>) -> Self {
        Self { num_visible, states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn num_visible(&self) -> usize {
        self.num_visible
    }

    pub fn visible(&self, s: usize) -> &[Spin] {
        &self.states[s][..self.num_visible]
    }

    /// Full state, auxiliary layers included.
    pub fn state(&self, s: usize) -> &[Spin] {
        &self.states[s]
    }

    pub fn visible_iter(&self) -> impl Iterator<Item = &[Spin]> {
        self.states.iter().map(|s| &s[..self.num_visible])
    }

    /// One visible configuration per line as `+1`/`-1` integers.
    pub fn write_visible<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for v in self.visible_iter() {
            let line: Vec<String> = v.iter().map(|s| s.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Continues `chain`: `burn_in` sweeps, then one record every
/// `sweeps_per_sample` sweeps.
pub fn collect_samples(
    chain: &mut ChainState,
    machine: &Machine,
    n_samples: usize,
    burn_in: usize,
    sweeps_per_sample: usize,
) -> SampleBatch {
    for _ in 0..burn_in {
        chromatic_sweep(chain, machine);
    }
    let spacing = sweeps_per_sample.max(1);
    let states = (0..n_samples)
        .map(|_| {
            for _ in 0..spacing {
                chromatic_sweep(chain, machine);
            }
            chain.spins.clone()
        })
        .collect();
    SampleBatch::new(machine.num_visible(), states)
}

/// Fresh chain seeded from the outer-chain stream of `seed`.
pub fn new_outer_chain(num_nodes: usize, seed: u64) -> ChainState {
    ChainState::random(
        num_nodes,
        StreamFactory::new(seed, StreamDomain::OuterChain).next_stream(),
    )
}

/// Samples `n_samples` configurations from a new free-running chain.
pub fn sample_visible(
    machine: &Machine,
    n_samples: usize,
    burn_in: usize,
    sweeps_per_sample: usize,
    seed: u64,
) -> SampleBatch {
    let mut chain = new_outer_chain(machine.num_nodes(), seed);
    collect_samples(&mut chain, machine, n_samples, burn_in, sweeps_per_sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed_point::{quantize, FixedPointFormat};
    use crate::model::{uniform_params, Architecture};
    use rand::SeedableRng;

    fn two_node_ferromagnet() -> (Network, ModelParameters) {
        let net = Network::custom(Architecture::Frbm, [1, 1, 0], vec![(0, 1)]).unwrap();
        let mut p = ModelParameters::zeros(&net);
        p.weights_mut()[0] = 1.0;
        (net, p)
    }

    #[test]
    fn pbit_zero_field_is_fair() {
        let mut rng = Prng::seed_from_u64(1);
        let n = 100_000;
        let ups = (0..n).filter(|_| pbit_update(0.0, 1.0, &mut rng) == 1).count();
        assert!((ups as f64 / n as f64 - 0.5).abs() <= 0.005);
    }

    #[test]
    fn pbit_saturates() {
        let mut rng = Prng::seed_from_u64(2);
        assert!((0..100_000).all(|_| pbit_update(20.0, 1.0, &mut rng) == 1));
        assert!((0..100_000).all(|_| pbit_update(10.0, 2.0, &mut rng) == 1));
    }

    #[test]
    fn pbit_matches_logistic_probability() {
        let mut rng = Prng::seed_from_u64(3);
        let n = 100_000;
        let p = (1.0 + 0.5f64.tanh()) / 2.0;
        assert!((p - 0.7310585786300049).abs() < 1e-15);
        let ups = (0..n).filter(|_| pbit_update(0.5, 1.0, &mut rng) == 1).count();
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((ups as f64 / n as f64 - p).abs() <= 3.0 * sigma);
    }

    #[test]
    fn pbit_consumes_one_draw() {
        let mut a = Prng::seed_from_u64(4);
        let mut b = a.clone();
        pbit_update(0.3, 1.0, &mut a);
        let _ = uniform_pm1(&mut b);
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn ferromagnet_alignment_probability() {
        let (net, p) = two_node_ferromagnet();
        let m = Machine::new(&net, &p).unwrap();
        let mut chain = ChainState::random(2, Prng::seed_from_u64(5));
        let sweeps = 1_000_000;
        let mut aligned = 0usize;
        for _ in 0..sweeps {
            chromatic_sweep(&mut chain, &m);
            if chain.spins[0] == chain.spins[1] {
                aligned += 1;
            }
        }
        let e = 1.0f64.exp();
        let exact = e / (e + 1.0 / e);
        assert!((exact - 0.8807970779778823).abs() < 1e-12);
        // TV distance of the 4-state table reduces to the aligned mass error.
        assert!((aligned as f64 / sweeps as f64 - exact).abs() <= 0.01);
    }

    #[test]
    fn zero_parameters_are_uniform() {
        let net = Network::custom(Architecture::Dbm, [1, 1, 1], vec![(0, 1), (1, 2)]).unwrap();
        let p = ModelParameters::zeros(&net);
        let m = Machine::new(&net, &p).unwrap();
        let mut chain = ChainState::random(3, Prng::seed_from_u64(6));
        let sweeps = 80_000;
        let mut counts = [0f64; 8];
        for _ in 0..sweeps {
            chromatic_sweep(&mut chain, &m);
            let idx = chain
                .spins
                .iter()
                .enumerate()
                .fold(0, |acc, (i, &s)| acc | (((s + 1) / 2) as usize) << i);
            counts[idx] += 1.0;
        }
        let expected = sweeps as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // 7 degrees of freedom, 99.9th percentile 24.3.
        assert!(chi2 < 24.3, "chi2 = {chi2}");
    }

    #[test]
    fn strong_fields_freeze_to_sign() {
        let net = Network::custom(Architecture::Frbm, [2, 1, 0], vec![(0, 2), (1, 2)]).unwrap();
        let mut p = ModelParameters::zeros(&net);
        p.biases_mut().copy_from_slice(&[5.0, -5.0, 0.0]);
        p.weights_mut().copy_from_slice(&[0.5, 0.25]);
        let m = Machine::new(&net, &p).unwrap().with_beta(1e3);
        let mut chain = ChainState::random(3, Prng::seed_from_u64(7));
        for _ in 0..10 {
            chromatic_sweep(&mut chain, &m);
        }
        assert_eq!(chain.spins, vec![1, -1, 1]);
        for node in 0..3 {
            let f = m.field(node, &chain.spins);
            assert_eq!(chain.spins[node], if f > 0.0 { 1 } else { -1 });
        }
    }

    #[test]
    fn improper_coloring_rejected() {
        let net = Network::frbm(3, 1.0).unwrap();
        let p = ModelParameters::zeros(&net);
        let bad = Coloring::from_colors(vec![0; 18]);
        assert!(Machine::with_coloring(&net, &p, &bad).is_err());
    }

    #[test]
    fn clamped_sweep_keeps_visible() {
        let net = Network::dbm(3, 1.0, 1.0).unwrap();
        let p = uniform_params(&net, 1.0, 8);
        let m = Machine::new(&net, &p).unwrap();
        let mut chain = ChainState::random(27, Prng::seed_from_u64(9));
        let v: Vec<Spin> = chain.spins[..9].to_vec();
        for _ in 0..50 {
            clamped_sweep(&mut chain, &m);
            assert_eq!(&chain.spins[..9], &v[..]);
        }
    }

    #[test]
    fn clamped_hidden_follow_conditional() {
        let net = Network::frbm(3, 1.0).unwrap();
        let p = uniform_params(&net, 0.6, 10);
        let m = Machine::new(&net, &p).unwrap();
        let v: Vec<Spin> = vec![1, -1, -1, 1, 1, -1, 1, 1, -1];
        let mut state = v.clone();
        state.extend([1; 9]);
        let mut chain = ChainState::from_spins(state, Prng::seed_from_u64(11));
        let reps = 100_000;
        let mut ups = [0usize; 9];
        for _ in 0..reps {
            clamped_sweep(&mut chain, &m);
            for j in 0..9 {
                if chain.spins[9 + j] == 1 {
                    ups[j] += 1;
                }
            }
        }
        for (j, theta) in p.hidden_fields(&net, &v).into_iter().enumerate() {
            let prob = 1.0 / (1.0 + (-2.0 * theta).exp());
            let sigma = (prob * (1.0 - prob) / reps as f64).sqrt();
            assert!((ups[j] as f64 / reps as f64 - prob).abs() <= 3.0 * sigma, "j={j}");
        }
    }

    #[test]
    fn deep_spins_follow_bias_when_decoupled() {
        let net = Network::dbm(3, 1.0, 1.0).unwrap();
        let mut p = uniform_params(&net, 0.5, 12);
        let n_vh = Network::frbm(3, 1.0).unwrap().num_edges();
        p.weights_mut()[n_vh..].iter_mut().for_each(|w| *w = 0.0);
        let m = Machine::new(&net, &p).unwrap();
        let mut chain = ChainState::random(27, Prng::seed_from_u64(13));
        let reps = 50_000;
        let mut ups = [0usize; 9];
        for _ in 0..reps {
            clamped_sweep(&mut chain, &m);
            for l in 0..9 {
                ups[l] += (chain.spins[18 + l] == 1) as usize;
            }
        }
        for l in 0..9 {
            let prob = 1.0 / (1.0 + (-2.0 * p.c()[l]).exp());
            let sigma = (prob * (1.0 - prob) / reps as f64).sqrt();
            assert!((ups[l] as f64 / reps as f64 - prob).abs() <= 4.0 * sigma);
        }
    }

    #[test]
    fn intra_class_order_is_irrelevant() {
        let net = Network::dbm(3, 1.0, 1.0).unwrap();
        let p = uniform_params(&net, 1.5, 14);
        let m = Machine::new(&net, &p).unwrap();
        let mut rng = Prng::seed_from_u64(15);
        let start = ChainState::random(27, Prng::seed_from_u64(16)).spins;
        let draws: Vec<f64> = (0..27).map(|_| uniform_pm1(&mut rng)).collect();
        let mut forward = start.clone();
        let mut backward = start;
        for class in m.classes() {
            for &n in class {
                m.update_node(&mut forward, n, draws[n]);
            }
            for &n in class.iter().rev() {
                m.update_node(&mut backward, n, draws[n]);
            }
        }
        assert_eq!(forward, backward);
    }

    #[test]
    fn sampling_is_reproducible() {
        let net = Network::frbm(3, 1.0).unwrap();
        let p = uniform_params(&net, 0.5, 17);
        let m = Machine::new(&net, &p).unwrap();
        let a = sample_visible(&m, 200, 10, 2, 99);
        let b = sample_visible(&m, 200, 10, 2, 99);
        let c = sample_visible(&m, 200, 10, 2, 100);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut buf = Vec::new();
        a.write_visible(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 200);
        assert_eq!(text.lines().next().unwrap().split(' ').count(), 9);
    }

    #[test]
    fn grid_parameters_sample_identically_when_quantized() {
        let net = Network::frbm(3, 1.0).unwrap();
        let mut p = uniform_params(&net, 2.0, 18);
        let fmt = FixedPointFormat::S6_3;
        p = quantize(&p, fmt);
        let q = quantize(&p, fmt);
        let a = sample_visible(&Machine::new(&net, &p).unwrap(), 500, 5, 1, 3);
        let b = sample_visible(&Machine::new(&net, &q).unwrap(), 500, 5, 1, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_model_visible_marginal_is_uniform() {
        let net = Network::frbm(3, 1.0).unwrap();
        let m = Machine::new(&net, &ModelParameters::zeros(&net)).unwrap();
        let batch = sample_visible(&m, 20_000, 0, 1, 5);
        for i in 0..9 {
            let mean: f64 = batch.visible_iter().map(|v| v[i] as f64).sum::<f64>() / 20_000.0;
            assert!(mean.abs() < 4.0 / (20_000f64).sqrt());
        }
    }
}
