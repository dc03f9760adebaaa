//! Multi-device sampling simulator.
//!
//! The network graph is split into `P` balanced parts by recursive bisection
//! (greedy graph growing followed by Fiduccia-Mattheyses refinement). Each
//! part runs chromatic sweeps over its own nodes against a private copy of
//! the full state; spins owned by other parts are shadow copies refreshed
//! only at exchange events. With `tau` sweeps between exchanges the shadows
//! are up to `tau` sweeps stale.

use std::collections::VecDeque;
use std::io::Write;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::estimator::{local_energy_rbm, Tfim};
use crate::lattice::SparseGraph;
use crate::model::{Architecture, ModelParameters, Network, Spin};
use crate::sampler::{ChainState, Machine};
use crate::streams::{uniform_pm1, StreamDomain, StreamFactory};
use crate::trainer::{blocking_se, mean};

/// Allowed deviation of a part size from `n / P`.
pub const BALANCE_TOLERANCE: f64 = 0.10;

/// Assignment of graph nodes to parts with cut accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    part_of: Vec<usize>,
    num_parts: usize,
    cut_edges: Vec<usize>,
    boundary_nodes: Vec<Vec<usize>>,
    num_edges: usize,
}

impl Partition {
    /// Builds cut and boundary sets for an explicit assignment.
    pub fn from_assignment(graph: &SparseGraph, part_of: Vec<usize>, num_parts: usize) -> Result<Self> {
        if part_of.len() != graph.node_count() {
            return Err(Error::SizeMismatch {
                what: "partition assignment",
                expected: graph.node_count(),
                got: part_of.len(),
            });
        }
        if let Some(&p) = part_of.iter().find(|&&p| p >= num_parts) {
            return Err(Error::InvalidArgument(format!("part id {p} out of range")));
        }
        let cut_edges: Vec<usize> = graph
            .edges()
            .iter()
            .enumerate()
            .filter(|(_, &(u, v))| part_of[u] != part_of[v])
            .map(|(e, _)| e)
            .collect();
        let mut boundary_nodes = vec![Vec::new(); num_parts];
        for n in 0..graph.node_count() {
            if graph.neighbors(n).iter().any(|&m| part_of[m] != part_of[n]) {
                boundary_nodes[part_of[n]].push(n);
            }
        }
        Ok(Self {
            part_of,
            num_parts,
            cut_edges,
            boundary_nodes,
            num_edges: graph.edge_count(),
        })
    }

    pub fn num_parts(&self) -> usize {
        self.num_parts
    }

    pub fn part_of(&self, node: usize) -> usize {
        self.part_of[node]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.part_of
    }

    pub fn cut_edges(&self) -> &[usize] {
        &self.cut_edges
    }

    pub fn boundary_nodes(&self, part: usize) -> &[usize] {
        &self.boundary_nodes[part]
    }

    pub fn cut_fraction(&self) -> f64 {
        if self.num_edges == 0 {
            0.0
        } else {
            self.cut_edges.len() as f64 / self.num_edges as f64
        }
    }

    pub fn part_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_parts];
        for &p in &self.part_of {
            sizes[p] += 1;
        }
        sizes
    }

    /// Spin states sent per full exchange, one bit per boundary node.
    pub fn exchange_bits(&self) -> usize {
        self.boundary_nodes.iter().map(Vec::len).sum()
    }

    /// One `node_id partition_id` line per node.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (n, p) in self.part_of.iter().enumerate() {
            writeln!(out, "{n} {p}")?;
        }
        Ok(())
    }
}

fn bfs_farthest(graph: &SparseGraph, in_set: &[bool], start: usize) -> usize {
    let mut dist = vec![usize::MAX; graph.node_count()];
    let mut queue = VecDeque::from([start]);
    dist[start] = 0;
    let mut last = start;
    while let Some(n) = queue.pop_front() {
        last = n;
        for &m in graph.neighbors(n) {
            if in_set[m] && dist[m] == usize::MAX {
                dist[m] = dist[n] + 1;
                queue.push_back(m);
            }
        }
    }
    last
}

/// Splits `nodes` into a part of `target` nodes and the rest, minimising the
/// number of edges between them.
fn bisect(graph: &SparseGraph, nodes: &[usize], target: usize, start_hint: usize) -> (Vec<usize>, Vec<usize>) {
    let n_total = graph.node_count();
    let mut in_set = vec![false; n_total];
    nodes.iter().for_each(|&n| in_set[n] = true);
    // side[n]: true = part A. Only meaningful inside the subset.
    let mut side = vec![false; n_total];

    // Greedy growing from a pseudo-peripheral node; disconnected leftovers
    // are seeded from the next unassigned node.
    let start = bfs_farthest(graph, &in_set, bfs_farthest(graph, &in_set, start_hint));
    let mut gain = vec![0i64; n_total];
    for &n in nodes {
        gain[n] = -(graph.neighbors(n).iter().filter(|&&m| in_set[m]).count() as i64);
    }
    let mut frontier: Vec<usize> = Vec::new();
    let mut in_frontier = vec![false; n_total];
    let mut size_a = 0;
    let add = |n: usize,
                   side: &mut Vec<bool>,
                   gain: &mut Vec<i64>,
                   frontier: &mut Vec<usize>,
                   in_frontier: &mut Vec<bool>| {
        side[n] = true;
        for &m in graph.neighbors(n) {
            if in_set[m] && !side[m] {
                gain[m] += 2;
                if !in_frontier[m] {
                    in_frontier[m] = true;
                    frontier.push(m);
                }
            }
        }
    };
    add(start, &mut side, &mut gain, &mut frontier, &mut in_frontier);
    size_a += 1;
    let mut next_seed = 0;
    while size_a < target {
        frontier.retain(|&m| !side[m]);
        let pick = if frontier.is_empty() {
            while side[nodes[next_seed]] {
                next_seed += 1;
            }
            nodes[next_seed]
        } else {
            let (idx, _) = frontier
                .iter()
                .enumerate()
                .max_by_key(|&(i, &m)| (gain[m], std::cmp::Reverse(i)))
                .expect("non-empty");
            frontier.swap_remove(idx)
        };
        add(pick, &mut side, &mut gain, &mut frontier, &mut in_frontier);
        size_a += 1;
    }

    fm_refine(graph, nodes, &in_set, &mut side, target);
    let a = nodes.iter().copied().filter(|&n| side[n]).collect();
    let b = nodes.iter().copied().filter(|&n| !side[n]).collect();
    (a, b)
}

/// Fiduccia-Mattheyses passes: tentatively move every node once in best-gain
/// order within the balance window, keep the best prefix.
fn fm_refine(graph: &SparseGraph, nodes: &[usize], in_set: &[bool], side: &mut [bool], target: usize) {
    let slack = ((target as f64) * BALANCE_TOLERANCE * 0.3).floor() as usize;
    let lo = target.saturating_sub(slack);
    let hi = target + slack;
    let ext_minus_int = |n: usize, side: &[bool]| -> i64 {
        graph
            .neighbors(n)
            .iter()
            .filter(|&&m| in_set[m])
            .map(|&m| if side[m] != side[n] { 1 } else { -1 })
            .sum()
    };
    for _pass in 0..8 {
        let mut gain: Vec<i64> = vec![0; side.len()];
        for &n in nodes {
            gain[n] = ext_minus_int(n, side);
        }
        let mut size_a = nodes.iter().filter(|&&n| side[n]).count();
        let mut locked = vec![false; side.len()];
        let mut moves = Vec::new();
        let mut cum = 0i64;
        let mut best = 0i64;
        let mut best_len = 0;
        loop {
            let candidate = nodes
                .iter()
                .copied()
                .filter(|&n| !locked[n])
                .filter(|&n| {
                    let new_a = if side[n] { size_a - 1 } else { size_a + 1 };
                    (lo..=hi).contains(&new_a)
                })
                .max_by_key(|&n| (gain[n], std::cmp::Reverse(n)));
            let Some(n) = candidate else { break };
            cum += gain[n];
            locked[n] = true;
            side[n] = !side[n];
            size_a = if side[n] { size_a + 1 } else { size_a - 1 };
            gain[n] = -gain[n];
            for &m in graph.neighbors(n) {
                if in_set[m] {
                    gain[m] += if side[m] == side[n] { -2 } else { 2 };
                }
            }
            moves.push(n);
            if cum > best {
                best = cum;
                best_len = moves.len();
            }
        }
        for &n in &moves[best_len..] {
            side[n] = !side[n];
        }
        if best == 0 {
            break;
        }
    }
}

/// Balanced `P`-way partition by recursive bisection. `seed` selects the
/// growth start nodes.
pub fn partition_graph(graph: &SparseGraph, num_parts: usize, seed: u64) -> Result<Partition> {
    let n = graph.node_count();
    if num_parts == 0 || num_parts > n {
        return Err(Error::InfeasiblePartition(format!(
            "cannot split {n} nodes into {num_parts} parts"
        )));
    }
    let mut rng = StreamFactory::new(seed, StreamDomain::Partition).next_stream();
    let mut part_of = vec![0; n];
    let mut stack = vec![((0..n).collect::<Vec<_>>(), 0usize, num_parts)];
    while let Some((nodes, first, parts)) = stack.pop() {
        if parts == 1 {
            nodes.iter().for_each(|&v| part_of[v] = first);
            continue;
        }
        let left = parts / 2;
        let target = (nodes.len() * left + parts / 2) / parts;
        let mut hints = nodes.clone();
        hints.shuffle(&mut rng);
        let (a, b) = bisect(graph, &nodes, target, hints[0]);
        stack.push((b, first + left, parts - left));
        stack.push((a, first, left));
    }
    let partition = Partition::from_assignment(graph, part_of, num_parts)?;
    let ideal = n as f64 / num_parts as f64;
    for (p, &size) in partition.part_sizes().iter().enumerate() {
        if (size as f64 - ideal).abs() > BALANCE_TOLERANCE * ideal + 1.0 {
            return Err(Error::InfeasiblePartition(format!(
                "part {p} has {size} nodes, ideal {ideal:.1}"
            )));
        }
    }
    Ok(partition)
}

/// When partitions refresh their shadow copies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeMode {
    /// Exchange after every `tau` full sweeps (`tau >= 1`).
    Stale { tau: usize },
    /// Exchange after every color class; equivalent to exact chromatic Gibbs.
    PhaseSynchronous,
}

/// Per-partition chains with shadow copies of foreign spins.
#[derive(Debug, Clone)]
pub struct PartitionedSampler<'a> {
    machine: &'a Machine,
    partition: &'a Partition,
    mode: ExchangeMode,
    local: Vec<ChainState>,
    /// Nodes of each color class, split by owning part.
    class_nodes: Vec<Vec<Vec<usize>>>,
    all_boundary: Vec<usize>,
    sweeps: u64,
    exchanges: u64,
}

impl<'a> PartitionedSampler<'a> {
    /// Partition 0 draws from the same stream as a single free-running chain
    /// with this seed, so `P = 1` reproduces it exactly.
    pub fn new(machine: &'a Machine, partition: &'a Partition, seed: u64, mode: ExchangeMode) -> Result<Self> {
        if partition.assignment().len() != machine.num_nodes() {
            return Err(Error::SizeMismatch {
                what: "partition vs machine nodes",
                expected: machine.num_nodes(),
                got: partition.assignment().len(),
            });
        }
        if let ExchangeMode::Stale { tau: 0 } = mode {
            return Err(Error::InvalidArgument("staleness tau must be at least 1".into()));
        }
        let first = ChainState::random(
            machine.num_nodes(),
            StreamFactory::new(seed, StreamDomain::OuterChain).next_stream(),
        );
        let mut others = StreamFactory::new(seed, StreamDomain::PartitionChains);
        let mut local = vec![first.clone()];
        for _ in 1..partition.num_parts() {
            local.push(ChainState::from_spins(first.spins.clone(), others.next_stream()));
        }
        let class_nodes = machine
            .classes()
            .iter()
            .map(|class| {
                let mut split = vec![Vec::new(); partition.num_parts()];
                for &n in class {
                    split[partition.part_of(n)].push(n);
                }
                split
            })
            .collect();
        let mut all_boundary: Vec<usize> = (0..partition.num_parts())
            .flat_map(|p| partition.boundary_nodes(p).iter().copied())
            .collect();
        all_boundary.sort_unstable();
        Ok(Self {
            machine,
            partition,
            mode,
            local,
            class_nodes,
            all_boundary,
            sweeps: 0,
            exchanges: 0,
        })
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    pub fn exchanges(&self) -> u64 {
        self.exchanges
    }

    fn exchange(&mut self, nodes: impl Iterator<Item = usize> + Clone) {
        for n in nodes {
            let owner = self.partition.part_of(n);
            let s = self.local[owner].spins[n];
            for (p, chain) in self.local.iter_mut().enumerate() {
                if p != owner {
                    chain.spins[n] = s;
                }
            }
        }
        self.exchanges += 1;
    }

    /// One full sweep on every partition, exchanging as the mode requires.
    pub fn sweep(&mut self) {
        let machine = self.machine;
        for c in 0..self.class_nodes.len() {
            for (p, chain) in self.local.iter_mut().enumerate() {
                for &n in &self.class_nodes[c][p] {
                    let r = uniform_pm1(&mut chain.rng);
                    machine.update_node(&mut chain.spins, n, r);
                }
            }
            if self.mode == ExchangeMode::PhaseSynchronous && self.partition.num_parts() > 1 {
                let boundary: Vec<usize> = self.class_nodes[c]
                    .iter()
                    .flatten()
                    .copied()
                    .filter(|n| self.all_boundary.binary_search(n).is_ok())
                    .collect();
                self.exchange(boundary.into_iter());
            }
        }
        for chain in self.local.iter_mut() {
            chain.sweep_count += 1;
        }
        self.sweeps += 1;
        if let ExchangeMode::Stale { tau } = self.mode {
            if self.sweeps % tau as u64 == 0 && self.partition.num_parts() > 1 {
                let boundary = std::mem::take(&mut self.all_boundary);
                self.exchange(boundary.iter().copied());
                self.all_boundary = boundary;
            }
        }
    }

    /// `tau` local sweeps followed by one boundary exchange.
    pub fn stale_sweep(&mut self) {
        let tau = match self.mode {
            ExchangeMode::Stale { tau } => tau,
            ExchangeMode::PhaseSynchronous => 1,
        };
        for _ in 0..tau {
            self.sweep();
        }
    }

    /// Current state assembled from each node's owning partition.
    pub fn global_state(&self) -> Vec<Spin> {
        (0..self.machine.num_nodes())
            .map(|n| self.local[self.partition.part_of(n)].spins[n])
            .collect()
    }

    /// Partition `p`'s private view, including shadow copies.
    pub fn local_view(&self, p: usize) -> &[Spin] {
        &self.local[p].spins
    }
}

/// One row of a staleness scan.
#[derive(Debug, Clone, PartialEq)]
pub struct StalenessRow {
    pub tau: usize,
    /// Mean per-spin energy difference to the phase-synchronous run.
    pub deviation: f64,
    pub stderr: f64,
}

/// Settings shared by all runs of a scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSettings {
    pub n_samples: usize,
    pub burn_in: usize,
    pub bins: usize,
    pub seed: u64,
}

/// Per-spin local energies along a partitioned FRBM run.
pub fn partitioned_energy_series(
    net: &Network,
    params: &ModelParameters,
    ham: &Tfim,
    partition: &Partition,
    mode: ExchangeMode,
    settings: &ScanSettings,
) -> Result<Vec<f64>> {
    if net.arch() != Architecture::Frbm {
        return Err(Error::ArchMismatch("FRBM"));
    }
    let machine = Machine::new(net, params)?;
    let mut sampler = PartitionedSampler::new(&machine, partition, settings.seed, mode)?;
    for _ in 0..settings.burn_in {
        sampler.sweep();
    }
    let nv = net.num_visible();
    (0..settings.n_samples)
        .map(|_| {
            sampler.sweep();
            let s = sampler.global_state();
            Ok(local_energy_rbm(net, params, ham, &s[..nv])?.e_loc / nv as f64)
        })
        .collect()
}

/// Energy deviation of stale exchange versus phase-synchronous exchange on
/// the same partition and seed (common random numbers), for each `tau`.
pub fn staleness_bias_scan(
    net: &Network,
    params: &ModelParameters,
    ham: &Tfim,
    partition: &Partition,
    taus: &[usize],
    settings: &ScanSettings,
) -> Result<Vec<StalenessRow>> {
    let reference = partitioned_energy_series(
        net,
        params,
        ham,
        partition,
        ExchangeMode::PhaseSynchronous,
        settings,
    )?;
    taus.iter()
        .map(|&tau| {
            let series = partitioned_energy_series(
                net,
                params,
                ham,
                partition,
                ExchangeMode::Stale { tau },
                settings,
            )?;
            let diff: Vec<f64> = series.iter().zip(&reference).map(|(a, b)| a - b).collect();
            Ok(StalenessRow {
                tau,
                deviation: mean(&diff),
                stderr: blocking_se(&diff, settings.bins)?,
            })
        })
        .collect()
}

pub fn write_scan_csv<W: Write>(rows: &[StalenessRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "tau,deviation,stderr")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.tau, r.deviation, r.stderr)?;
    }
    Ok(())
}
