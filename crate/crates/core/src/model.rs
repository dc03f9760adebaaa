//! Boltzmann-machine ansätze: network topology, parameter storage, energies
//! and the analytic RBM log-amplitude.
//!
//! Node layout is `[visible | hidden | deep]`. Parameters are stored as one
//! flat vector, biases of every node followed by one weight per graph edge,
//! which is also the coordinate system used by the optimizer.

use std::path::Path;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{greedy_color, interlayer_pairs, Coloring, Layer, SparseGraph};
use crate::streams::{Prng, StreamDomain, StreamFactory};

/// Spin value, always `-1` or `+1`.
pub type Spin = i8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Visible and hidden layers with local couplings.
    Frbm,
    /// Visible, hidden and deep layers.
    Dbm,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Frbm => "frbm",
            Architecture::Dbm => "dbm",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbm" | "frbm" => Ok(Architecture::Frbm),
            "dbm" => Ok(Architecture::Dbm),
            other => Err(Error::InvalidArgument(format!(
                "unknown architecture '{other}' (expected rbm, frbm or dbm)"
            ))),
        }
    }
}

/// Topology of a Boltzmann machine plus the lookup tables the samplers need.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    lattice_len: usize,
    k1: f64,
    k2: f64,
    layer_sizes: [usize; 3],
    graph: SparseGraph,
    coloring: Coloring,
    // CSR adjacency carrying edge ids.
    offsets: Vec<usize>,
    adj_node: Vec<usize>,
    adj_edge: Vec<usize>,
}

impl Network {
    /// Visible/hidden network on an `L x L` torus with coupling radius `k`.
    pub fn frbm(len: usize, k: f64) -> Result<Self> {
        let n = len * len;
        let edges = interlayer_pairs(len, k)?
            .into_iter()
            .map(|(v, h)| (v, n + h))
            .collect();
        Self::assemble(Architecture::Frbm, len, k, 0.0, [n, n, 0], edges)
    }

    /// Three-layer network: visible-hidden radius `k1`, hidden-deep radius `k2`.
    pub fn dbm(len: usize, k1: f64, k2: f64) -> Result<Self> {
        let n = len * len;
        let mut edges: Vec<_> = interlayer_pairs(len, k1)?
            .into_iter()
            .map(|(v, h)| (v, n + h))
            .collect();
        edges.extend(
            interlayer_pairs(len, k2)?
                .into_iter()
                .map(|(h, d)| (n + h, 2 * n + d)),
        );
        Self::assemble(Architecture::Dbm, len, k1, k2, [n, n, n], edges)
    }

    /// Arbitrary topology over `[visible | hidden | deep]` nodes.
    ///
    /// FRBM networks must be bipartite between visible and hidden units so the
    /// hidden layer can be traced out analytically; DBM networks may carry any
    /// edges, the dual-sampling estimator only needs local fields.
    pub fn custom(
        arch: Architecture,
        layer_sizes: [usize; 3],
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if arch == Architecture::Frbm {
            if layer_sizes[2] != 0 {
                return Err(Error::InvalidGraph("FRBM networks have no deep layer".into()));
            }
            let nv = layer_sizes[0];
            if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| (u < nv) == (v < nv)) {
                return Err(Error::InvalidGraph(format!(
                    "FRBM edge ({u}, {v}) does not join a visible and a hidden unit"
                )));
            }
        }
        Self::assemble(arch, 0, 0.0, 0.0, layer_sizes, edges)
    }

    /// Rebuilds the lattice network a parameter set was created for.
    pub fn for_params(params: &ModelParameters) -> Result<Self> {
        if params.lattice_len == 0 {
            return Err(Error::InvalidArgument(
                "parameters were not built on a lattice network".into(),
            ));
        }
        match params.arch {
            Architecture::Frbm => Self::frbm(params.lattice_len, params.k1),
            Architecture::Dbm => Self::dbm(params.lattice_len, params.k1, params.k2),
        }
    }

    fn assemble(
        arch: Architecture,
        lattice_len: usize,
        k1: f64,
        k2: f64,
        layer_sizes: [usize; 3],
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let [nv, nh, nd] = layer_sizes;
        let mut layers = vec![Layer::Visible; nv];
        layers.extend(std::iter::repeat_n(Layer::Hidden, nh));
        layers.extend(std::iter::repeat_n(Layer::Deep, nd));
        let graph = SparseGraph::from_edges(layers, edges)?;
        let coloring = greedy_color(&graph);

        let n = graph.node_count();
        let mut incident: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (e, &(u, v)) in graph.edges().iter().enumerate() {
            incident[u].push((v, e));
            incident[v].push((u, e));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut adj_node = Vec::with_capacity(2 * graph.edge_count());
        let mut adj_edge = Vec::with_capacity(2 * graph.edge_count());
        offsets.push(0);
        for mut list in incident {
            list.sort_unstable();
            for (nb, e) in list {
                adj_node.push(nb);
                adj_edge.push(e);
            }
            offsets.push(adj_node.len());
        }
        Ok(Self {
            arch,
            lattice_len,
            k1,
            k2,
            layer_sizes,
            graph,
            coloring,
            offsets,
            adj_node,
            adj_edge,
        })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    /// Linear lattice size, or 0 for custom topologies.
    pub fn lattice_len(&self) -> usize {
        self.lattice_len
    }

    pub fn radii(&self) -> (f64, f64) {
        (self.k1, self.k2)
    }

    pub fn layer_sizes(&self) -> [usize; 3] {
        self.layer_sizes
    }

    pub fn num_visible(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.node_count()
    }

    pub fn num_edges(&self) -> usize {
        self.graph.edge_count()
    }

    pub fn num_params(&self) -> usize {
        self.num_nodes() + self.num_edges()
    }

    pub fn graph(&self) -> &SparseGraph {
        &self.graph
    }

    pub fn coloring(&self) -> &Coloring {
        &self.coloring
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        self.graph.edges()
    }

    /// `(neighbor, edge id)` pairs of `node`, sorted by neighbor.
    pub fn incident(&self, node: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let range = self.offsets[node]..self.offsets[node + 1];
        self.adj_node[range.clone()]
            .iter()
            .copied()
            .zip(self.adj_edge[range].iter().copied())
    }

    pub(crate) fn csr(&self) -> (&[usize], &[usize], &[usize]) {
        (&self.offsets, &self.adj_node, &self.adj_edge)
    }

    pub fn is_visible(&self, node: usize) -> bool {
        node < self.layer_sizes[0]
    }
}

/// Biases and weights of a Boltzmann machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub arch: Architecture,
    /// Linear lattice size, 0 for custom topologies.
    pub lattice_len: usize,
    pub k1: f64,
    pub k2: f64,
    pub seed: u64,
    pub layer_sizes: [usize; 3],
    pub num_edges: usize,
    /// Node biases followed by edge weights.
    pub values: Vec<f64>,
}

impl ModelParameters {
    pub fn zeros(net: &Network) -> Self {
        Self {
            arch: net.arch,
            lattice_len: net.lattice_len,
            k1: net.k1,
            k2: net.k2,
            seed: 0,
            layer_sizes: net.layer_sizes,
            num_edges: net.num_edges(),
            values: vec![0.0; net.num_params()],
        }
    }

    /// Wraps a flat parameter vector laid out for `net`.
    pub fn from_values(net: &Network, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(net);
        if values.len() != p.values.len() {
            return Err(Error::SizeMismatch {
                what: "parameter vector",
                expected: p.values.len(),
                got: values.len(),
            });
        }
        p.values = values;
        Ok(p)
    }

    pub fn num_nodes(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn biases(&self) -> &[f64] {
        &self.values[..self.num_nodes()]
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        let n = self.num_nodes();
        &mut self.values[..n]
    }

    pub fn weights(&self) -> &[f64] {
        &self.values[self.num_nodes()..]
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        let n = self.num_nodes();
        &mut self.values[n..]
    }

    /// Visible biases.
    pub fn a(&self) -> &[f64] {
        &self.values[..self.layer_sizes[0]]
    }

    /// Hidden biases.
    pub fn b(&self) -> &[f64] {
        let [nv, nh, _] = self.layer_sizes;
        &self.values[nv..nv + nh]
    }

    /// Deep biases (empty for FRBM).
    pub fn c(&self) -> &[f64] {
        let [nv, nh, nd] = self.layer_sizes;
        &self.values[nv + nh..nv + nh + nd]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `theta += delta`.
    pub fn apply_delta(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.values.len() {
            return Err(Error::SizeMismatch {
                what: "parameter delta",
                expected: self.values.len(),
                got: delta.len(),
            });
        }
        for (v, d) in self.values.iter_mut().zip(delta) {
            *v += d;
        }
        Ok(())
    }

    /// Multiplies every parameter by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let mut p = self.clone();
        p.values.iter_mut().for_each(|v| *v *= alpha);
        p
    }

    fn check_net(&self, net: &Network) -> Result<()> {
        if self.layer_sizes != net.layer_sizes || self.num_edges != net.num_edges() {
            return Err(Error::SizeMismatch {
                what: "parameters vs network",
                expected: net.num_params(),
                got: self.values.len(),
            });
        }
        Ok(())
    }

    /// Joint energy `-sum b_n s_n - sum_e W_e s_u s_v` over all nodes.
    pub fn energy(&self, net: &Network, spins: &[Spin]) -> Result<f64> {
        self.check_net(net)?;
        if spins.len() != net.num_nodes() {
            return Err(Error::SizeMismatch {
                what: "spin configuration",
                expected: net.num_nodes(),
                got: spins.len(),
            });
        }
        let bias: f64 = self
            .biases()
            .iter()
            .zip(spins)
            .map(|(b, &s)| b * s as f64)
            .sum();
        let coupling: f64 = net
            .edges()
            .iter()
            .zip(self.weights())
            .map(|(&(u, v), w)| w * (spins[u] * spins[v]) as f64)
            .sum();
        Ok(-bias - coupling)
    }

    /// Input `I_n = sum_j W_nj s_j + b_n` of node `n`.
    pub fn local_field(&self, net: &Network, node: usize, spins: &[Spin]) -> f64 {
        let w = self.weights();
        net.incident(node)
            .fold(self.biases()[node], |acc, (nb, e)| acc + w[e] * spins[nb] as f64)
    }

    /// Pre-activations `b_j + sum_i W_ij s_i` of every hidden unit.
    pub fn hidden_fields(&self, net: &Network, visible: &[Spin]) -> Vec<f64> {
        let [nv, nh, _] = self.layer_sizes;
        let w = self.weights();
        (nv..nv + nh)
            .map(|j| {
                net.incident(j).fold(self.biases()[j], |acc, (i, e)| {
                    debug_assert!(i < nv);
                    acc + w[e] * visible[i] as f64
                })
            })
            .collect()
    }
}

/// `ln(2 cosh x)` without overflow.
pub fn ln_2cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p()
}

fn check_sizes(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::SizeMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// FRBM joint energy of visible spins `s` and hidden spins `h`.
pub fn frbm_energy(
    net: &Network,
    params: &ModelParameters,
    s: &[Spin],
    h: &[Spin],
) -> Result<f64> {
    if net.arch() != Architecture::Frbm {
        return Err(Error::ArchMismatch("FRBM"));
    }
    let [nv, nh, _] = net.layer_sizes();
    check_sizes("visible spins", nv, s.len())?;
    check_sizes("hidden spins", nh, h.len())?;
    let spins: Vec<Spin> = s.iter().chain(h).copied().collect();
    params.energy(net, &spins)
}

/// DBM joint energy of visible, hidden and deep spins.
pub fn dbm_energy(
    net: &Network,
    params: &ModelParameters,
    s: &[Spin],
    h: &[Spin],
    d: &[Spin],
) -> Result<f64> {
    if net.arch() != Architecture::Dbm {
        return Err(Error::ArchMismatch("DBM"));
    }
    let [nv, nh, nd] = net.layer_sizes();
    check_sizes("visible spins", nv, s.len())?;
    check_sizes("hidden spins", nh, h.len())?;
    check_sizes("deep spins", nd, d.len())?;
    let spins: Vec<Spin> = s.iter().chain(h).chain(d).copied().collect();
    params.energy(net, &spins)
}

/// `ln Psi(S)` of an FRBM with the hidden layer traced out, up to an
/// `S`-independent constant:
/// `1/2 [sum_i a_i s_i + sum_j ln 2cosh(b_j + sum_i W_ij s_i)]`.
pub fn log_psi_rbm(net: &Network, params: &ModelParameters, visible: &[Spin]) -> Result<f64> {
    if net.arch() != Architecture::Frbm {
        return Err(Error::ArchMismatch("FRBM"));
    }
    check_sizes("visible spins", net.num_visible(), visible.len())?;
    let vis: f64 = params
        .a()
        .iter()
        .zip(visible)
        .map(|(a, &s)| a * s as f64)
        .sum();
    let hid: f64 = params
        .hidden_fields(net, visible)
        .into_iter()
        .map(ln_2cosh)
        .sum();
    Ok(0.5 * (vis + hid))
}

/// I.i.d. `N(0, 0.01^2)` biases and weights, reproducible per seed.
pub fn init_params(net: &Network, seed: u64) -> ModelParameters {
    let mut rng: Prng = StreamFactory::new(seed, StreamDomain::Init).next_stream();
    init_params_with(net, seed, &mut rng)
}

pub(crate) fn init_params_with<R: rand::Rng>(
    net: &Network,
    seed: u64,
    rng: &mut R,
) -> ModelParameters {
    let normal = Normal::new(0.0, 0.01).expect("valid normal");
    let mut p = ModelParameters::zeros(net);
    p.seed = seed;
    p.values.iter_mut().for_each(|v| *v = normal.sample(rng));
    p
}

/// Seeded generator for ad-hoc random parameter sets (tests, oracles).
pub fn uniform_params(net: &Network, scale: f64, seed: u64) -> ModelParameters {
    use rand::Rng;
    let mut rng = Prng::seed_from_u64(seed);
    let mut p = ModelParameters::zeros(net);
    p.seed = seed;
    p.values
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-scale..=scale));
    p
}

/// Number of variational parameters: one bias per node plus one weight per
/// masked coupling.
pub fn param_count(arch: Architecture, len: usize, k1: f64, k2: f64) -> Result<usize> {
    let n = len * len;
    let vh = interlayer_pairs(len, k1)?.len();
    Ok(match arch {
        Architecture::Frbm => 2 * n + vh,
        Architecture::Dbm => 3 * n + vh + interlayer_pairs(len, k2)?.len(),
    })
}

const CHECKPOINT_FORMAT: &str = "pbit-nqs-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    params: ModelParameters,
}

impl ModelParameters {
    pub fn to_checkpoint_string(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            params: self.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_checkpoint_str(s: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format '{}'", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
        }
        let p = file.params;
        let nodes: usize = p.layer_sizes.iter().sum();
        if p.values.len() != nodes + p.num_edges {
            return Err(Error::Checkpoint("parameter array length mismatch".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_str(&std::fs::read_to_string(path)?)
    }
}
