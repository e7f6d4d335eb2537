// SPDX-License-Identifier: Apache-2.0

//! Balanced k-way partitioning of cells and the virtual-node hierarchy built
//! on top of it.
//!
//! The partitioner is multilevel: heavy-edge matching coarsens the clique
//! expansion, recursive region-growing bisection seeds the coarsest level, and
//! greedy boundary refinement runs on the way back up.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hypergraph::DirectedHypergraph;

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_TARGET_PART_SIZE: usize = 1000;
const MAX_FM_PASSES: usize = 10;
const BISECTION_TRIES: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("cannot split {n} cells into {k} non-empty parts")]
    InfeasibleBalance { n: usize, k: usize },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("partition file covers {found} cells, netlist has {expected}")]
    CellCount { found: usize, expected: usize },
    #[error("part {0} is empty")]
    EmptyPart(usize),
}

/// Undirected graph with edge and vertex weights, adjacency in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    xadj: Vec<usize>,
    adj: Vec<usize>,
    ewgt: Vec<f64>,
    vwgt: Vec<usize>,
}

impl WeightedGraph {
    /// Parallel edges are merged by summing weights; self-loops are dropped.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        Self::with_vertex_weights(vec![1; n], edges)
    }

    fn with_vertex_weights(
        vwgt: Vec<usize>,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let n = vwgt.len();
        let mut half: Vec<(usize, usize, f64)> = Vec::new();
        for (u, v, w) in edges {
            assert!(u < n && v < n, "edge endpoint out of range");
            if u != v {
                half.push((u, v, w));
                half.push((v, u, w));
            }
        }
        half.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut xadj = vec![0; n + 1];
        let mut adj = Vec::with_capacity(half.len());
        let mut ewgt: Vec<f64> = Vec::with_capacity(half.len());
        let mut last = (usize::MAX, usize::MAX);
        for (u, v, w) in half {
            if (u, v) == last {
                *ewgt.last_mut().unwrap() += w;
                continue;
            }
            last = (u, v);
            xadj[u + 1] += 1;
            adj.push(v);
            ewgt.push(w);
        }
        for i in 0..n {
            xadj[i + 1] += xadj[i];
        }
        Self {
            xadj,
            adj,
            ewgt,
            vwgt,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.vwgt.len()
    }

    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.xadj[u]..self.xadj[u + 1];
        self.adj[r.clone()]
            .iter()
            .copied()
            .zip(self.ewgt[r].iter().copied())
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .filter(move |&(v, _)| u < v)
                .map(move |(v, w)| (u, v, w))
        })
    }

    pub fn total_edge_weight(&self) -> f64 {
        self.edges().map(|(_, _, w)| w).sum()
    }

    pub fn cut(&self, part_of: &[usize]) -> f64 {
        self.edges()
            .filter(|&(u, v, _)| part_of[u] != part_of[v])
            .map(|(_, _, w)| w)
            .sum()
    }
}

/// Clique expansion: every pair of cells sharing a net of size `s >= 2` gets
/// weight `1 / (s - 1)` from that net.
pub fn expand_weights(g: &DirectedHypergraph) -> WeightedGraph {
    let mut edges = Vec::new();
    for net in g.nets() {
        let s = net.size();
        if s < 2 {
            continue;
        }
        let w = 1.0 / (s - 1) as f64;
        let members: Vec<usize> = net.members().map(|c| c.index()).collect();
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                edges.push((a, b, w));
            }
        }
    }
    WeightedGraph::from_edges(g.n_cells(), edges)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub part_of: Vec<usize>,
    pub k: usize,
    pub epsilon: f64,
    pub cut: f64,
}

pub fn balance_cap(n: usize, k: usize, epsilon: f64) -> usize {
    ((1.0 + epsilon) * n as f64 / k as f64).ceil() as usize
}

impl Partition {
    /// Wraps an explicit assignment, checking that every part is used.
    pub fn from_assignment(
        graph: &WeightedGraph,
        part_of: Vec<usize>,
        epsilon: f64,
    ) -> Result<Self, PartitionError> {
        if part_of.len() != graph.n_nodes() {
            return Err(PartitionError::CellCount {
                found: part_of.len(),
                expected: graph.n_nodes(),
            });
        }
        let k = part_of.iter().max().map_or(1, |m| m + 1);
        let sizes = sizes_of(&part_of, k);
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(PartitionError::EmptyPart(i));
        }
        let cut = graph.cut(&part_of);
        Ok(Self {
            part_of,
            k,
            epsilon,
            cut,
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        sizes_of(&self.part_of, self.k)
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (v, &p) in self.part_of.iter().enumerate() {
            m[p].push(v);
        }
        m
    }

    pub fn cap(&self) -> usize {
        balance_cap(self.part_of.len(), self.k, self.epsilon)
    }

    pub fn is_balanced(&self) -> bool {
        let cap = self.cap();
        self.sizes().iter().all(|&s| s >= 1 && s <= cap)
    }
}

fn sizes_of(part_of: &[usize], k: usize) -> Vec<usize> {
    let mut s = vec![0; k];
    part_of.iter().for_each(|&p| s[p] += 1);
    s
}

/// Cut and largest part after each refinement pass on one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTrace {
    pub n_nodes: usize,
    pub cuts: Vec<f64>,
    pub max_part: Vec<usize>,
}

pub fn choose_k(n_cells: usize, target_part_size: usize) -> usize {
    assert!(target_part_size >= 1);
    ((n_cells as f64 / target_part_size as f64).round() as usize).max(1)
}

pub fn partition(
    graph: &WeightedGraph,
    k: usize,
    epsilon: f64,
    seed: u64,
) -> Result<Partition, PartitionError> {
    partition_traced(graph, k, epsilon, seed).map(|(p, _)| p)
}

/// As [`partition`], also returning one trace per level, coarsest first.
pub fn partition_traced(
    graph: &WeightedGraph,
    k: usize,
    epsilon: f64,
    seed: u64,
) -> Result<(Partition, Vec<LevelTrace>), PartitionError> {
    let n = graph.n_nodes();
    if k == 0 || k > n {
        return Err(PartitionError::InfeasibleBalance { n, k });
    }
    if k == 1 {
        let p = Partition {
            part_of: vec![0; n],
            k,
            epsilon,
            cut: 0.0,
        };
        return Ok((p, Vec::new()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = balance_cap(n, k, epsilon);

    let coarsen_to = (30 * k).max(200);
    let max_vwgt = ((1.5 * n as f64 / coarsen_to as f64).ceil() as usize).max(1);
    let mut levels = vec![graph.clone()];
    let mut maps: Vec<Vec<usize>> = Vec::new();
    while levels.last().unwrap().n_nodes() > coarsen_to {
        let g = levels.last().unwrap();
        let (coarse, cmap) = coarsen(g, max_vwgt, &mut rng);
        if coarse.n_nodes() as f64 > 0.95 * g.n_nodes() as f64 {
            break;
        }
        levels.push(coarse);
        maps.push(cmap);
    }

    let coarsest = levels.last().unwrap();
    let all: Vec<usize> = (0..coarsest.n_nodes()).collect();
    let mut part = vec![0; coarsest.n_nodes()];
    recursive_bisect(coarsest, &all, k, 0, &mut part, &mut rng);

    let mut traces = Vec::new();
    for lvl in (0..levels.len()).rev() {
        if lvl + 1 < levels.len() {
            let cmap = &maps[lvl];
            part = cmap.iter().map(|&c| part[c]).collect();
        }
        let g = &levels[lvl];
        let mut state = KwayState::new(g, part, k);
        state.rebalance(g, cap);
        let mut trace = LevelTrace {
            n_nodes: g.n_nodes(),
            cuts: vec![state.cut],
            max_part: vec![state.max_part()],
        };
        for _ in 0..MAX_FM_PASSES {
            let moved = state.refine_pass(g, cap);
            trace.cuts.push(state.cut);
            trace.max_part.push(state.max_part());
            if !moved {
                break;
            }
        }
        traces.push(trace);
        part = state.part;
    }
    let cut = graph.cut(&part);
    Ok((
        Partition {
            part_of: part,
            k,
            epsilon,
            cut,
        },
        traces,
    ))
}

fn coarsen(
    g: &WeightedGraph,
    max_vwgt: usize,
    rng: &mut ChaCha8Rng,
) -> (WeightedGraph, Vec<usize>) {
    let n = g.n_nodes();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut mate = vec![usize::MAX; n];
    for &v in &order {
        if mate[v] != usize::MAX {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (u, w) in g.neighbors(v) {
            if mate[u] != usize::MAX || g.vwgt[u] + g.vwgt[v] > max_vwgt {
                continue;
            }
            // Neighbors are sorted, so a strict comparison keeps the lowest id.
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((u, w));
            }
        }
        let u = best.map_or(v, |(u, _)| u);
        mate[v] = u;
        mate[u] = v;
    }
    let mut cmap = vec![usize::MAX; n];
    let mut vwgt = Vec::new();
    for v in 0..n {
        if cmap[v] == usize::MAX {
            cmap[v] = vwgt.len();
            cmap[mate[v]] = vwgt.len();
            vwgt.push(if mate[v] == v {
                g.vwgt[v]
            } else {
                g.vwgt[v] + g.vwgt[mate[v]]
            });
        }
    }
    let edges = g.edges().map(|(u, v, w)| (cmap[u], cmap[v], w));
    (WeightedGraph::with_vertex_weights(vwgt, edges), cmap)
}

fn recursive_bisect(
    g: &WeightedGraph,
    nodes: &[usize],
    k: usize,
    first_part: usize,
    part: &mut [usize],
    rng: &mut ChaCha8Rng,
) {
    if k == 1 {
        nodes.iter().for_each(|&v| part[v] = first_part);
        return;
    }
    let k0 = k / 2;
    let (a, b) = bisect(g, nodes, k0, k - k0, rng);
    recursive_bisect(g, &a, k0, first_part, part, rng);
    recursive_bisect(g, &b, k - k0, first_part + k0, part, rng);
}

/// Greedy graph growing: several seeds, keep the split with the lowest cut.
/// Side A receives about `k0 / (k0 + k1)` of the weight and at least `k0`
/// vertices; side B keeps at least `k1`.
fn bisect(
    g: &WeightedGraph,
    nodes: &[usize],
    k0: usize,
    k1: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let total: usize = nodes.iter().map(|&v| g.vwgt[v]).sum();
    let target = total as f64 * k0 as f64 / (k0 + k1) as f64;
    let mut local = vec![usize::MAX; g.n_nodes()];
    for (i, &v) in nodes.iter().enumerate() {
        local[v] = i;
    }
    let mut best: Option<(f64, Vec<bool>)> = None;
    for _ in 0..BISECTION_TRIES {
        let seed = nodes[rand::Rng::random_range(rng, 0..nodes.len())];
        let side = grow_region(g, nodes, &local, seed, target, k0, nodes.len() - k1);
        let cut: f64 = nodes
            .iter()
            .flat_map(|&v| g.neighbors(v).map(move |(u, w)| (v, u, w)))
            .filter(|&(v, u, _)| {
                local[u] != usize::MAX && v < u && side[local[v]] != side[local[u]]
            })
            .map(|(_, _, w)| w)
            .sum();
        if best.as_ref().is_none_or(|(c, _)| cut < *c) {
            best = Some((cut, side));
        }
    }
    let side = best.unwrap().1;
    let a = nodes
        .iter()
        .zip(&side)
        .filter(|(_, &s)| s)
        .map(|(&v, _)| v)
        .collect();
    let b = nodes
        .iter()
        .zip(&side)
        .filter(|(_, &s)| !s)
        .map(|(&v, _)| v)
        .collect();
    (a, b)
}

#[derive(Clone, Copy, PartialEq)]
struct Key(f64, Reverse<usize>);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn grow_region(
    g: &WeightedGraph,
    nodes: &[usize],
    local: &[usize],
    seed: usize,
    target: f64,
    min_count: usize,
    max_count: usize,
) -> Vec<bool> {
    let mut inside = vec![false; nodes.len()];
    // gain = weight into the region minus weight to the rest of the subset
    let mut gain = vec![0.0; nodes.len()];
    for (i, &v) in nodes.iter().enumerate() {
        gain[i] = -g
            .neighbors(v)
            .filter(|&(u, _)| local[u] != usize::MAX)
            .map(|(_, w)| w)
            .sum::<f64>();
    }
    let mut heap = BinaryHeap::new();
    let (mut weight, mut count) = (0usize, 0usize);
    let mut next_unvisited = 0;
    let mut pending = Some(local[seed]);
    loop {
        if count >= max_count || (count >= min_count && weight as f64 >= target) {
            break;
        }
        let pick = match pending.take() {
            Some(i) => i,
            None => loop {
                match heap.pop() {
                    Some(Key(gk, Reverse(i))) => {
                        if inside[i] || gk != gain[i] {
                            continue;
                        }
                        break i;
                    }
                    None => {
                        while inside[next_unvisited] {
                            next_unvisited += 1;
                        }
                        break next_unvisited;
                    }
                }
            },
        };
        let v = nodes[pick];
        if count >= min_count && (weight + g.vwgt[v]) as f64 - target > target - weight as f64 {
            break;
        }
        inside[pick] = true;
        weight += g.vwgt[v];
        count += 1;
        for (u, w) in g.neighbors(v) {
            let j = local[u];
            if j == usize::MAX || inside[j] {
                continue;
            }
            gain[j] += 2.0 * w;
            heap.push(Key(gain[j], Reverse(j)));
        }
    }
    inside
}

struct KwayState {
    part: Vec<usize>,
    pweight: Vec<usize>,
    pcount: Vec<usize>,
    cut: f64,
}

impl KwayState {
    fn new(g: &WeightedGraph, part: Vec<usize>, k: usize) -> Self {
        let mut pweight = vec![0; k];
        let mut pcount = vec![0; k];
        for (v, &p) in part.iter().enumerate() {
            pweight[p] += g.vwgt[v];
            pcount[p] += 1;
        }
        let cut = g.cut(&part);
        Self {
            part,
            pweight,
            pcount,
            cut,
        }
    }

    fn max_part(&self) -> usize {
        *self.pweight.iter().max().unwrap()
    }

    fn connectivity(&self, g: &WeightedGraph, v: usize) -> Vec<(usize, f64)> {
        let mut conn: Vec<(usize, f64)> = Vec::new();
        for (u, w) in g.neighbors(v) {
            let p = self.part[u];
            match conn.iter_mut().find(|(q, _)| *q == p) {
                Some(c) => c.1 += w,
                None => conn.push((p, w)),
            }
        }
        conn
    }

    /// Best admissible move of `v`: (gain, target). Lowest part id wins ties.
    fn best_move(
        &self,
        g: &WeightedGraph,
        v: usize,
        cap: usize,
        any_part: bool,
    ) -> Option<(f64, usize)> {
        let a = self.part[v];
        if self.pcount[a] <= 1 {
            return None;
        }
        let conn = self.connectivity(g, v);
        let own = conn.iter().find(|(p, _)| *p == a).map_or(0.0, |c| c.1);
        let admissible = |b: usize| b != a && self.pweight[b] + g.vwgt[v] <= cap;
        let mut best: Option<(f64, usize)> = None;
        let mut consider = |b: usize, to: f64| {
            let gain = to - own;
            if admissible(b) && best.is_none_or(|(bg, bb)| gain > bg || (gain == bg && b < bb)) {
                best = Some((gain, b));
            }
        };
        if any_part {
            for b in 0..self.pweight.len() {
                consider(b, conn.iter().find(|(p, _)| *p == b).map_or(0.0, |c| c.1));
            }
        } else {
            for &(b, w) in &conn {
                consider(b, w);
            }
        }
        best
    }

    fn apply(&mut self, g: &WeightedGraph, v: usize, b: usize, gain: f64) {
        let a = self.part[v];
        self.pweight[a] -= g.vwgt[v];
        self.pcount[a] -= 1;
        self.pweight[b] += g.vwgt[v];
        self.pcount[b] += 1;
        self.part[v] = b;
        self.cut -= gain;
    }

    /// Moves vertices out of overweight parts, cheapest first, until every
    /// part fits or no admissible move remains.
    fn rebalance(&mut self, g: &WeightedGraph, cap: usize) {
        loop {
            let Some(a) = (0..self.pweight.len()).find(|&p| self.pweight[p] > cap) else {
                return;
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for v in (0..g.n_nodes()).filter(|&v| self.part[v] == a) {
                if let Some((gain, b)) = self.best_move(g, v, cap, true) {
                    if best.is_none_or(|(bg, _, _)| gain > bg) {
                        best = Some((gain, v, b));
                    }
                }
            }
            match best {
                Some((gain, v, b)) => self.apply(g, v, b, gain),
                None => return,
            }
        }
    }

    /// One pass of positive-gain boundary moves, highest gain first, each
    /// vertex moved at most once. Returns whether anything moved.
    fn refine_pass(&mut self, g: &WeightedGraph, cap: usize) -> bool {
        let n = g.n_nodes();
        let mut locked = vec![false; n];
        let mut heap = BinaryHeap::new();
        for v in 0..n {
            if let Some((gain, _)) = self.best_move(g, v, cap, false) {
                if gain > 0.0 {
                    heap.push(Key(gain, Reverse(v)));
                }
            }
        }
        let mut moved = false;
        while let Some(Key(gk, Reverse(v))) = heap.pop() {
            if locked[v] {
                continue;
            }
            let Some((gain, b)) = self.best_move(g, v, cap, false) else {
                continue;
            };
            if gain != gk {
                if gain > 0.0 {
                    heap.push(Key(gain, Reverse(v)));
                }
                continue;
            }
            self.apply(g, v, b, gain);
            locked[v] = true;
            moved = true;
            for (u, _) in g.neighbors(v) {
                if locked[u] {
                    continue;
                }
                if let Some((gu, _)) = self.best_move(g, u, cap, false) {
                    if gu > 0.0 {
                        heap.push(Key(gu, Reverse(u)));
                    }
                }
            }
        }
        if moved {
            self.cut = g.cut(&self.part);
        }
        moved
    }
}

/// First-level virtual nodes (one per part) and an optional super node
/// joined to all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct VnHierarchy {
    pub part_of: Vec<usize>,
    pub members: Vec<Vec<usize>>,
    pub has_super: bool,
}

impl VnHierarchy {
    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn cell_edges(&self) -> usize {
        self.part_of.len()
    }

    pub fn super_edges(&self) -> usize {
        if self.has_super {
            self.k()
        } else {
            0
        }
    }

    pub fn added_edges(&self) -> usize {
        self.cell_edges() + self.super_edges()
    }

    /// Single virtual node over every cell.
    pub fn single(n_cells: usize) -> Self {
        Self {
            part_of: vec![0; n_cells],
            members: vec![(0..n_cells).collect()],
            has_super: false,
        }
    }
}

/// The super node is omitted when there is only one part.
pub fn build_vn_hierarchy(part: &Partition) -> VnHierarchy {
    VnHierarchy {
        part_of: part.part_of.clone(),
        members: part.members(),
        has_super: part.k > 1,
    }
}

pub fn write_partition(part_of: &[usize]) -> String {
    let mut s = String::new();
    for (v, p) in part_of.iter().enumerate() {
        writeln!(s, "{v} {p}").unwrap();
    }
    s
}

/// Reads `<cell-id> <part>` lines; every cell must appear exactly once.
pub fn read_partition(text: &str, n_cells: usize) -> Result<Vec<usize>, PartitionError> {
    let mut part_of = vec![usize::MAX; n_cells];
    let mut seen = 0;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let syntax = |msg: String| PartitionError::Syntax { line, msg };
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(syntax(format!(
                "expected `<cell-id> <part>`, found `{body}`"
            )));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| syntax(format!("bad {what} `{s}`")))
        };
        let (cell, p) = (parse(fields[0], "cell id")?, parse(fields[1], "part")?);
        if cell >= n_cells {
            return Err(syntax(format!("cell {cell} out of range")));
        }
        if part_of[cell] != usize::MAX {
            return Err(syntax(format!("cell {cell} listed twice")));
        }
        part_of[cell] = p;
        seen += 1;
    }
    if seen != n_cells {
        return Err(PartitionError::CellCount {
            found: seen,
            expected: n_cells,
        });
    }
    Ok(part_of)
}
