// SPDX-License-Identifier: Apache-2.0

//! Directed-hypergraph model of a netlist.
//!
//! A net is a tuple `(driver, sinks)`. The hypergraph keeps nets in a
//! canonical order (sorted by driver, then by sink list) and sinks sorted
//! ascending, so two inputs that differ only in net order or sink order build
//! identical values. Every downstream reduction inherits that order.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NetId(pub usize);

impl CellId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl NetId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub type_tag: String,
    pub width: f64,
    pub height: f64,
    pub orient: u8,
}

impl CellRecord {
    pub fn new(type_tag: impl Into<String>, width: f64, height: f64, orient: u8) -> Self {
        Self {
            type_tag: type_tag.into(),
            width,
            height,
            orient,
        }
    }
}

impl Default for CellRecord {
    fn default() -> Self {
        Self::new("CELL", 1.0, 1.0, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NetRecord {
    pub driver: CellId,
    pub sinks: Vec<CellId>,
}

impl NetRecord {
    pub fn new(driver: usize, sinks: impl IntoIterator<Item = usize>) -> Self {
        Self {
            driver: CellId(driver),
            sinks: sinks.into_iter().map(CellId).collect(),
        }
    }

    /// Number of cells on the net, driver included.
    pub fn size(&self) -> usize {
        self.sinks.len() + 1
    }

    /// Driver followed by the sinks.
    pub fn members(&self) -> impl Iterator<Item = CellId> + '_ {
        std::iter::once(self.driver).chain(self.sinks.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Driver,
    Sink,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("net {net} references unknown cell {cell} (design has {n_cells} cells)")]
    DanglingCellRef {
        net: usize,
        cell: usize,
        n_cells: usize,
    },
    #[error("net {net}: driver {cell} also appears among its sinks")]
    DriverInSinks { net: usize, cell: usize },
    #[error("net {net}: sink {cell} listed more than once")]
    DuplicateSink { net: usize, cell: usize },
    #[error("cell {cell}: {reason}")]
    InvalidCell { cell: usize, reason: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedHypergraph {
    cells: Vec<CellRecord>,
    nets: Vec<NetRecord>,
    inc_offsets: Vec<usize>,
    inc_entries: Vec<(NetId, Role)>,
}

impl DirectedHypergraph {
    /// Builds the canonical hypergraph. Nets are reordered canonically; use
    /// [`DirectedHypergraph::build_indexed`] to recover where each net came from.
    pub fn build(cells: Vec<CellRecord>, nets: Vec<NetRecord>) -> Result<Self, BuildError> {
        Self::build_indexed(cells, nets).map(|(g, _)| g)
    }

    /// Like [`build`](Self::build), also returning `source[i]`: the position in
    /// the input list of canonical net `i`.
    pub fn build_indexed(
        cells: Vec<CellRecord>,
        nets: Vec<NetRecord>,
    ) -> Result<(Self, Vec<usize>), BuildError> {
        let n = cells.len();
        for (i, c) in cells.iter().enumerate() {
            if !(c.width.is_finite() && c.width >= 0.0) {
                return Err(BuildError::InvalidCell {
                    cell: i,
                    reason: "width must be finite and >= 0",
                });
            }
            if !(c.height.is_finite() && c.height >= 0.0) {
                return Err(BuildError::InvalidCell {
                    cell: i,
                    reason: "height must be finite and >= 0",
                });
            }
            if c.orient >= 8 {
                return Err(BuildError::InvalidCell {
                    cell: i,
                    reason: "orient must be in 0..8",
                });
            }
        }

        let mut keyed = Vec::with_capacity(nets.len());
        for (j, mut net) in nets.into_iter().enumerate() {
            for c in net.members() {
                if c.0 >= n {
                    return Err(BuildError::DanglingCellRef {
                        net: j,
                        cell: c.0,
                        n_cells: n,
                    });
                }
            }
            net.sinks.sort_unstable();
            if let Some(w) = net.sinks.windows(2).find(|w| w[0] == w[1]) {
                return Err(BuildError::DuplicateSink {
                    net: j,
                    cell: w[0].0,
                });
            }
            if net.sinks.binary_search(&net.driver).is_ok() {
                return Err(BuildError::DriverInSinks {
                    net: j,
                    cell: net.driver.0,
                });
            }
            keyed.push((net, j));
        }
        // Stable on equal nets, which are indistinguishable anyway.
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        let (nets, source): (Vec<_>, Vec<_>) = keyed.into_iter().unzip();

        let mut counts = vec![0usize; n];
        for net in &nets {
            for c in net.members() {
                counts[c.0] += 1;
            }
        }
        let mut inc_offsets = Vec::with_capacity(n + 1);
        inc_offsets.push(0);
        for &c in &counts {
            inc_offsets.push(inc_offsets.last().unwrap() + c);
        }
        let mut fill = inc_offsets[..n].to_vec();
        let mut inc_entries = vec![(NetId(0), Role::Driver); inc_offsets[n]];
        // Nets are visited in ascending id, so every per-cell list ends up sorted.
        for (j, net) in nets.iter().enumerate() {
            inc_entries[fill[net.driver.0]] = (NetId(j), Role::Driver);
            fill[net.driver.0] += 1;
            for s in &net.sinks {
                inc_entries[fill[s.0]] = (NetId(j), Role::Sink);
                fill[s.0] += 1;
            }
        }

        Ok((
            Self {
                cells,
                nets,
                inc_offsets,
                inc_entries,
            },
            source,
        ))
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_nets(&self) -> usize {
        self.nets.len()
    }

    pub fn cells(&self) -> &[CellRecord] {
        &self.cells
    }

    pub fn cell(&self, v: CellId) -> &CellRecord {
        &self.cells[v.0]
    }

    pub fn nets(&self) -> &[NetRecord] {
        &self.nets
    }

    pub fn net(&self, e: NetId) -> &NetRecord {
        &self.nets[e.0]
    }

    /// The incident-net-set `N(v)`, sorted by net id, with the role `v` plays.
    pub fn incident_nets(&self, v: CellId) -> &[(NetId, Role)] {
        &self.inc_entries[self.inc_offsets[v.0]..self.inc_offsets[v.0 + 1]]
    }

    pub fn cell_degree(&self, v: CellId) -> usize {
        self.inc_offsets[v.0 + 1] - self.inc_offsets[v.0]
    }

    /// Net ids of `N(v)` without roles.
    pub fn incident_net_ids(&self, v: CellId) -> Vec<NetId> {
        self.incident_nets(v).iter().map(|&(e, _)| e).collect()
    }

    /// Type-A neighbors of `e` are `N(driver)`; type-B neighbors are one set
    /// `N(s)` per sink `s`, in sink order. `e` itself belongs to each set.
    pub fn type_ab_neighbors(&self, e: NetId) -> (Vec<NetId>, Vec<Vec<NetId>>) {
        let net = self.net(e);
        let type_a = self.incident_net_ids(net.driver);
        let type_b = net
            .sinks
            .iter()
            .map(|&s| self.incident_net_ids(s))
            .collect();
        (type_a, type_b)
    }

    /// All `(cell, net, role)` incidences ordered by cell then net.
    pub fn incidence_pairs(&self) -> impl Iterator<Item = (CellId, NetId, Role)> + '_ {
        (0..self.n_cells()).flat_map(move |v| {
            self.incident_nets(CellId(v))
                .iter()
                .map(move |&(e, r)| (CellId(v), e, r))
        })
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats::of(self)
    }

    /// Directed graph with an edge `driver -> sink` for every net membership.
    /// Parallel edges from different nets collapse into one.
    pub fn star_graph(&self) -> DirectedGraph {
        let edges = self
            .nets
            .iter()
            .flat_map(|net| net.sinks.iter().map(move |s| (net.driver.0, s.0)));
        DirectedGraph::from_edges(self.n_cells(), edges)
    }

    /// Undirected cell–net incidence graph: nodes `0..n_cells` are cells,
    /// `n_cells..n_cells+n_nets` are nets.
    pub fn bipartite_graph(&self) -> BipartiteGraph {
        let nc = self.n_cells();
        let edges = self
            .nets
            .iter()
            .enumerate()
            .flat_map(|(j, net)| net.members().map(move |c| (c.0, nc + j)));
        BipartiteGraph {
            graph: UndirectedGraph::from_edges(nc + self.n_nets(), edges),
            n_cells: nc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub n_cells: usize,
    pub n_nets: usize,
    /// Largest incident-net-set size.
    pub max_cell_degree: usize,
    /// Largest net size, driver included.
    pub max_net_size: usize,
    /// `cell_degree_hist[d]` = number of cells with `|N(v)| = d`.
    pub cell_degree_hist: Vec<usize>,
    /// `net_size_hist[s]` = number of nets with `|S|+1 = s`.
    pub net_size_hist: Vec<usize>,
}

impl GraphStats {
    pub fn of(g: &DirectedHypergraph) -> Self {
        let degrees: Vec<usize> = (0..g.n_cells()).map(|v| g.cell_degree(CellId(v))).collect();
        let sizes: Vec<usize> = g.nets().iter().map(NetRecord::size).collect();
        let hist = |xs: &[usize]| {
            let mut h = vec![0usize; xs.iter().max().map_or(0, |m| m + 1)];
            for &x in xs {
                h[x] += 1;
            }
            h
        };
        Self {
            n_cells: g.n_cells(),
            n_nets: g.n_nets(),
            max_cell_degree: degrees.iter().copied().max().unwrap_or(0),
            max_net_size: sizes.iter().copied().max().unwrap_or(0),
            cell_degree_hist: hist(&degrees),
            net_size_hist: hist(&sizes),
        }
    }

    pub fn mean_net_size(&self) -> f64 {
        if self.n_nets == 0 {
            return 0.0;
        }
        let total: usize = self
            .net_size_hist
            .iter()
            .enumerate()
            .map(|(s, c)| s * c)
            .sum();
        total as f64 / self.n_nets as f64
    }
}

/// Compressed adjacency: `targets[offsets[u]..offsets[u+1]]`, sorted, no duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Adjacency {
    fn from_pairs(n: usize, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        let mut offsets = vec![0usize; n + 1];
        for &(u, _) in &pairs {
            offsets[u + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Self {
            offsets,
            targets: pairs.into_iter().map(|(_, w)| w).collect(),
        }
    }

    #[inline]
    fn neighbors(&self, u: usize) -> &[usize] {
        &self.targets[self.offsets[u]..self.offsets[u + 1]]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    out: Adjacency,
    inc: Adjacency,
}

impl DirectedGraph {
    /// Self-loops and duplicate edges are dropped.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let fwd: Vec<_> = edges.into_iter().filter(|(u, w)| u != w).collect();
        let rev = fwd.iter().map(|&(u, w)| (w, u)).collect();
        Self {
            n,
            out: Adjacency::from_pairs(n, fwd),
            inc: Adjacency::from_pairs(n, rev),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.out.targets.len()
    }

    pub fn successors(&self, u: usize) -> &[usize] {
        self.out.neighbors(u)
    }

    pub fn predecessors(&self, u: usize) -> &[usize] {
        self.inc.neighbors(u)
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |u| self.successors(u).iter().map(move |&w| (u, w)))
    }

    /// Degree in the undirected view: number of distinct neighbors.
    pub fn undirected_degree(&self, u: usize) -> usize {
        let (a, b) = (self.successors(u), self.predecessors(u));
        let (mut i, mut j, mut d) = (0, 0, 0);
        while i < a.len() || j < b.len() {
            d += 1;
            match (a.get(i), b.get(j)) {
                (Some(x), Some(y)) if x == y => {
                    i += 1;
                    j += 1;
                }
                (Some(x), Some(y)) if x < y => i += 1,
                (Some(_), None) => i += 1,
                _ => j += 1,
            }
        }
        d
    }

    pub fn to_undirected(&self) -> UndirectedGraph {
        UndirectedGraph::from_edges(self.n, self.edges())
    }

    /// Hop-bounded neighborhood of `root`, see [`RingMode`].
    pub fn k_ring(&self, root: usize, k: usize, mode: RingMode) -> Subgraph {
        let mut dist = vec![u32::MAX; self.n];
        let mut order = vec![root];
        dist[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            if dist[u] as usize >= k {
                continue;
            }
            let mut visit = |w: usize| {
                if dist[w] == u32::MAX {
                    dist[w] = dist[u] + 1;
                    order.push(w);
                    queue.push_back(w);
                }
            };
            match mode {
                RingMode::Out => self.successors(u).iter().for_each(|&w| visit(w)),
                RingMode::In => self.predecessors(u).iter().for_each(|&w| visit(w)),
                RingMode::Undirected => {
                    self.successors(u).iter().for_each(|&w| visit(w));
                    self.predecessors(u).iter().for_each(|&w| visit(w));
                }
            }
        }
        order.sort_unstable();
        let mut edges = Vec::new();
        for (li, &u) in order.iter().enumerate() {
            for &w in self.successors(u) {
                if dist[w] != u32::MAX {
                    let lw = order
                        .binary_search(&w)
                        .expect("visited node is in the ring");
                    edges.push((li, lw));
                }
            }
        }
        let distances = order.iter().map(|&v| dist[v]).collect();
        Subgraph {
            nodes: order,
            dist: distances,
            edges,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingMode {
    /// Nodes reachable from the root within `k` hops.
    Out,
    /// Nodes that reach the root within `k` hops.
    In,
    Undirected,
}

/// Induced subgraph around a root. `nodes` are original ids in ascending
/// order; `dist[i]` is the hop distance of `nodes[i]` from the root along the
/// extraction direction; `edges` are local-index pairs of the induced
/// directed edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub nodes: Vec<usize>,
    pub dist: Vec<u32>,
    pub edges: Vec<(usize, usize)>,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn local_index(&self, v: usize) -> Option<usize> {
        self.nodes.binary_search(&v).ok()
    }

    /// Edges of the undirected view: `(a, b)` with `a < b`, deduplicated.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = self
            .edges
            .iter()
            .filter(|(a, b)| a != b)
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    n: usize,
    adj: Adjacency,
}

impl UndirectedGraph {
    /// Self-loops and duplicate edges are dropped.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut pairs = Vec::new();
        for (u, w) in edges {
            if u != w {
                pairs.push((u, w));
                pairs.push((w, u));
            }
        }
        Self {
            n,
            adj: Adjacency::from_pairs(n, pairs),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.adj.targets.len() / 2
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        self.adj.neighbors(u)
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors(u).len()
    }

    /// Each edge once, as `(u, w)` with `u < w`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&w| w > u)
                .map(move |&w| (u, w))
        })
    }

    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &w in self.neighbors(u) {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Cell,
    Net,
}

/// Cell–net incidence graph with node kinds retained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    pub graph: UndirectedGraph,
    pub n_cells: usize,
}

impl BipartiteGraph {
    pub fn kind(&self, node: usize) -> NodeKind {
        if node < self.n_cells {
            NodeKind::Cell
        } else {
            NodeKind::Net
        }
    }
}
