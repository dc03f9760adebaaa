//! Periodic square-lattice geometry.
//!
//! Every layer of a network (visible, hidden, deep) carries the same `L x L`
//! toroidal geometry, so a node is identified by its layer and a site index
//! `row * L + col`. Interlayer couplings are restricted to pairs whose
//! periodic Euclidean distance is at most a radius `k`; the physical
//! Hamiltonian uses the unique nearest-neighbour bonds of the visible layer.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};

/// Linear size of a periodic `L x L` lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeSpec {
    len: usize,
}

impl LatticeSpec {
    pub fn new(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidLattice(format!("L must be >= 2, got {len}")));
        }
        Ok(Self { len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn sites(&self) -> usize {
        self.len * self.len
    }

    /// Always true: open boundaries are not supported.
    pub fn periodic(&self) -> bool {
        true
    }

    pub fn coord(&self, site: usize) -> SiteCoord {
        SiteCoord {
            row: site / self.len,
            col: site % self.len,
        }
    }

    pub fn site(&self, coord: SiteCoord) -> usize {
        coord.row * self.len + coord.col
    }
}

/// Row/column position of a site on the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiteCoord {
    pub row: usize,
    pub col: usize,
}

impl SiteCoord {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

fn wrapped_offset(a: usize, b: usize, len: usize) -> usize {
    let d = a.abs_diff(b) % len;
    d.min(len - d)
}

/// Squared minimum-image distance, exact in integer arithmetic.
pub fn torus_distance_sq(p: SiteCoord, q: SiteCoord, len: usize) -> usize {
    let dr = wrapped_offset(p.row, q.row, len);
    let dc = wrapped_offset(p.col, q.col, len);
    dr * dr + dc * dc
}

/// Euclidean distance between two sites, minimised over periodic images.
pub fn torus_distance(p: SiteCoord, q: SiteCoord, len: usize) -> f64 {
    (torus_distance_sq(p, q, len) as f64).sqrt()
}

/// Largest integer squared distance admitted by radius `k`.
///
/// Squared lattice distances are integers, so `d <= k` is equivalent to
/// `d^2 <= floor(k^2)`. The small slack absorbs radii such as `sqrt(2)` that
/// arrive with a rounding error below the true value.
pub fn radius_sq_threshold(k: f64) -> usize {
    (k * k + 1e-9).floor() as usize
}

/// Layer a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Visible,
    Hidden,
    Deep,
}

/// Undirected graph with sorted adjacency lists and a canonical edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    node_layer: Vec<Layer>,
    adjacency: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

impl SparseGraph {
    /// Builds a graph; rejects self-loops, duplicates and out-of-range endpoints.
    ///
    /// Edge order is preserved, which fixes the parameter layout of any
    /// weights stored against this graph.
    pub fn from_edges(node_layer: Vec<Layer>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = node_layer.len();
        let mut seen = BTreeSet::new();
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at node {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({u}, {v})")));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            node_layer,
            adjacency,
            edges,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_layer.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn layer(&self, node: usize) -> Layer {
        self.node_layer[node]
    }

    pub fn node_layers(&self) -> &[Layer] {
        &self.node_layer
    }

    /// Writes the edge list as zero-indexed `i j` lines.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for &(u, v) in &self.edges {
            writeln!(out, "{u} {v}")?;
        }
        Ok(())
    }

    pub fn edge_list_string(&self) -> String {
        let mut s = String::with_capacity(self.edges.len() * 8);
        for &(u, v) in &self.edges {
            let _ = writeln!(s, "{u} {v}");
        }
        s
    }
}

fn check_radius(len: usize, k: f64) -> Result<()> {
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::InvalidArgument(format!("radius must be >= 0, got {k}")));
    }
    if 2.0 * k >= len as f64 {
        return Err(Error::RadiusTooLarge { radius: k, len });
    }
    Ok(())
}

/// Interlayer couplings of one `L x L` layer onto another within radius `k`.
///
/// Returned pairs are `(site_a, site_b)` in row-major order of `site_a`, then
/// `site_b`.
pub fn interlayer_pairs(len: usize, k: f64) -> Result<Vec<(usize, usize)>> {
    let lattice = LatticeSpec::new(len)?;
    check_radius(len, k)?;
    let threshold = radius_sq_threshold(k);
    let n = lattice.sites();
    let mut pairs = Vec::new();
    for a in 0..n {
        let pa = lattice.coord(a);
        for b in 0..n {
            if torus_distance_sq(pa, lattice.coord(b), len) <= threshold {
                pairs.push((a, b));
            }
        }
    }
    Ok(pairs)
}

/// Two-layer mask graph: nodes `0..N` form layer A (labelled visible) and
/// `N..2N` layer B (labelled hidden).
pub fn build_interlayer_mask(len: usize, k: f64) -> Result<SparseGraph> {
    let n = len * len;
    let edges = interlayer_pairs(len, k)?
        .into_iter()
        .map(|(a, b)| (a, n + b))
        .collect();
    let mut layers = vec![Layer::Visible; n];
    layers.extend(std::iter::repeat_n(Layer::Hidden, n));
    SparseGraph::from_edges(layers, edges)
}

/// Unique nearest-neighbour bonds of the periodic lattice, `2 L^2` of them.
pub fn build_tfim_bonds(len: usize) -> Result<Vec<(usize, usize)>> {
    let lattice = LatticeSpec::new(len)?;
    if len < 3 {
        return Err(Error::DegenerateLattice(len));
    }
    let mut bonds = Vec::with_capacity(2 * lattice.sites());
    for site in 0..lattice.sites() {
        let c = lattice.coord(site);
        let right = lattice.site(SiteCoord::new(c.row, (c.col + 1) % len));
        let down = lattice.site(SiteCoord::new((c.row + 1) % len, c.col));
        bonds.push((site.min(right), site.max(right)));
        bonds.push((site.min(down), site.max(down)));
    }
    Ok(bonds)
}

/// Proper vertex coloring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    color_of: Vec<usize>,
    num_colors: usize,
}

impl Coloring {
    pub fn from_colors(color_of: Vec<usize>) -> Self {
        let num_colors = color_of.iter().max().map_or(0, |&c| c + 1);
        Self {
            color_of,
            num_colors,
        }
    }

    pub fn color_of(&self, node: usize) -> usize {
        self.color_of[node]
    }

    pub fn colors(&self) -> &[usize] {
        &self.color_of
    }

    pub fn num_colors(&self) -> usize {
        self.num_colors
    }

    /// Nodes of each color, ascending within a class.
    pub fn classes(&self) -> Vec<Vec<usize>> {
        let mut classes = vec![Vec::new(); self.num_colors];
        for (node, &c) in self.color_of.iter().enumerate() {
            classes[c].push(node);
        }
        classes
    }

    /// Scans every edge; returns the first conflict found.
    pub fn verify(&self, graph: &SparseGraph) -> Result<()> {
        if self.color_of.len() != graph.node_count() {
            return Err(Error::SizeMismatch {
                what: "coloring",
                expected: graph.node_count(),
                got: self.color_of.len(),
            });
        }
        for &(u, v) in graph.edges() {
            if self.color_of[u] == self.color_of[v] {
                return Err(Error::ImproperColoring(u, v, self.color_of[u]));
            }
        }
        Ok(())
    }
}

/// First-fit coloring in node-index order.
pub fn greedy_color(graph: &SparseGraph) -> Coloring {
    let n = graph.node_count();
    let mut color_of = vec![usize::MAX; n];
    let mut taken = Vec::new();
    for node in 0..n {
        taken.clear();
        taken.resize(graph.degree(node) + 1, false);
        for &nb in graph.neighbors(node) {
            let c = color_of[nb];
            if c < taken.len() {
                taken[c] = true;
            }
        }
        color_of[node] = taken.iter().position(|&t| !t).unwrap_or(taken.len());
    }
    Coloring::from_colors(color_of)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        let l = 10;
        assert_eq!(torus_distance(SiteCoord::new(0, 0), SiteCoord::new(0, 0), l), 0.0);
        assert_eq!(torus_distance(SiteCoord::new(0, 0), SiteCoord::new(9, 0), l), 1.0);
        // Brute force over the nine periodic images.
        let mut best = f64::INFINITY;
        for dr in [-1i64, 0, 1] {
            for dc in [-1i64, 0, 1] {
                let x = 5.0 + 10.0 * dr as f64;
                let y = 5.0 + 10.0 * dc as f64;
                best = best.min((x * x + y * y).sqrt());
            }
        }
        let d = torus_distance(SiteCoord::new(0, 0), SiteCoord::new(5, 5), l);
        assert!((d - best).abs() < 1e-15);
        assert!((d - 7.0710678118654755).abs() < 1e-12);
    }

    #[test]
    fn mask_degrees_match_neighbour_table() {
        for (k, expected) in [(1.0, 5), (2.0, 13), (3.0, 29)] {
            let g = build_interlayer_mask(10, k).unwrap();
            for node in 0..g.node_count() {
                assert_eq!(g.degree(node), expected, "k={k} node={node}");
            }
            assert_eq!(g.edge_count(), 100 * expected);
        }
    }

    #[test]
    fn mask_rejects_wrapping_radius() {
        assert!(matches!(
            build_interlayer_mask(10, 5.0),
            Err(Error::RadiusTooLarge { .. })
        ));
        assert!(matches!(
            build_interlayer_mask(4, 2.0),
            Err(Error::RadiusTooLarge { .. })
        ));
        assert!(build_interlayer_mask(4, 1.0).is_ok());
        assert!(build_interlayer_mask(10, -1.0).is_err());
    }

    #[test]
    fn mask_counts_match_infinite_lattice() {
        for len in 3..9usize {
            for k in [0.0, 1.0, 1.5, 2.0, 2.9, 3.5] {
                if 2.0 * k >= len as f64 {
                    continue;
                }
                let kk = k as i64 + 1;
                let mut infinite = 0;
                for dx in -kk..=kk {
                    for dy in -kk..=kk {
                        if ((dx * dx + dy * dy) as f64) <= k * k {
                            infinite += 1;
                        }
                    }
                }
                let g = build_interlayer_mask(len, k).unwrap();
                assert!((0..g.node_count()).all(|n| g.degree(n) == infinite));
            }
        }
    }

    #[test]
    fn sqrt_two_radius_includes_diagonals() {
        let g = build_interlayer_mask(10, std::f64::consts::SQRT_2).unwrap();
        assert_eq!(g.degree(0), 9);
    }

    #[test]
    fn tfim_bonds() {
        assert_eq!(build_tfim_bonds(3).unwrap().len(), 18);
        let bonds = build_tfim_bonds(10).unwrap();
        assert_eq!(bonds.len(), 200);
        let unique: BTreeSet<_> = bonds.iter().copied().collect();
        assert_eq!(unique.len(), 200);
        let mut count = [0usize; 100];
        for &(a, b) in &bonds {
            assert!(a < b);
            count[a] += 1;
            count[b] += 1;
        }
        assert!(count.iter().all(|&c| c == 4));
        assert!(matches!(build_tfim_bonds(2), Err(Error::DegenerateLattice(2))));
        assert!(matches!(build_tfim_bonds(1), Err(Error::InvalidLattice(_))));
    }

    #[test]
    fn coloring_examples() {
        let g = build_interlayer_mask(4, 1.0).unwrap();
        let c = greedy_color(&g);
        assert_eq!(c.num_colors(), 2);
        c.verify(&g).unwrap();

        let tri = SparseGraph::from_edges(vec![Layer::Visible; 3], vec![(0, 1), (1, 2), (0, 2)])
            .unwrap();
        let c = greedy_color(&tri);
        assert_eq!(c.num_colors(), 3);
        c.verify(&tri).unwrap();

        let bad = Coloring::from_colors(vec![0, 0, 1]);
        assert!(matches!(bad.verify(&tri), Err(Error::ImproperColoring(0, 1, 0))));
    }

    #[test]
    fn graph_validation() {
        let layers = vec![Layer::Visible; 3];
        assert!(SparseGraph::from_edges(layers.clone(), vec![(0, 0)]).is_err());
        assert!(SparseGraph::from_edges(layers.clone(), vec![(0, 1), (1, 0)]).is_err());
        assert!(SparseGraph::from_edges(layers.clone(), vec![(0, 3)]).is_err());
        let g = SparseGraph::from_edges(layers, vec![(2, 0), (0, 1)]).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.edge_list_string(), "2 0\n0 1\n");
    }
}
