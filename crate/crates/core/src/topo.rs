// SPDX-License-Identifier: Apache-2.0

//! Extended persistence of hop-distance filtrations on star-graph
//! neighborhoods, persistence images, and neighborhood degree histograms.
//!
//! Diagram coordinates are integers. `ext1` points use the extended
//! convention `(ascending birth, descending death)`, so `birth >= death`.

use crate::hypergraph::{DirectedGraph, RingMode, Subgraph};
use crate::matrix::Matrix;

/// Undirected graph with an integer value per vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexFiltration {
    pub f: Vec<u32>,
    /// `(a, b)` with `a < b`, no duplicates.
    pub edges: Vec<(usize, usize)>,
}

impl VertexFiltration {
    pub fn new(f: Vec<u32>, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut e: Vec<_> = edges
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        e.sort_unstable();
        e.dedup();
        assert!(
            e.iter().all(|&(_, b)| b < f.len()),
            "edge endpoint out of range"
        );
        Self { f, edges: e }
    }

    /// Hop distance to the root on the undirected view of `sub`.
    pub fn from_subgraph(sub: &Subgraph) -> Self {
        Self::new(sub.dist.clone(), sub.undirected_edges())
    }

    pub fn n_vertices(&self) -> usize {
        self.f.len()
    }

    pub fn shifted(&self, c: u32) -> Self {
        Self {
            f: self.f.iter().map(|&x| x + c).collect(),
            edges: self.edges.clone(),
        }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.f.len()];
        for (i, &(a, b)) in self.edges.iter().enumerate() {
            adj[a].push((b, i));
            adj[b].push((a, i));
        }
        adj
    }

    pub fn component_count(&self) -> usize {
        let mut uf = UnionFind::new(self.f.len());
        self.edges.iter().filter(|&&(a, b)| uf.union(a, b)).count();
        (0..self.f.len()).filter(|&v| uf.find(v) == v).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtendedDiagram {
    pub ord0: Vec<(u32, u32)>,
    pub ext0: Vec<(u32, u32)>,
    pub ext1: Vec<(u32, u32)>,
}

impl ExtendedDiagram {
    /// Sorts every channel so that equal multisets compare equal.
    pub fn canonical(mut self) -> Self {
        self.ord0.sort_unstable();
        self.ext0.sort_unstable();
        self.ext1.sort_unstable();
        self
    }

    pub fn is_empty(&self) -> bool {
        self.ord0.is_empty() && self.ext0.is_empty() && self.ext1.is_empty()
    }

    pub fn union(&self, other: &Self) -> Self {
        let cat = |a: &Vec<(u32, u32)>, b: &Vec<(u32, u32)>| a.iter().chain(b).copied().collect();
        Self {
            ord0: cat(&self.ord0, &other.ord0),
            ext0: cat(&self.ext0, &other.ext0),
            ext1: cat(&self.ext1, &other.ext1),
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Links the root of `child` under the root of `keep`; false if already joined.
    fn link(&mut self, keep: usize, child: usize) -> bool {
        let (a, b) = (self.find(keep), self.find(child));
        if a == b {
            return false;
        }
        self.parent[b] = a;
        true
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        self.link(a, b)
    }
}

fn xor_into(dst: &mut [u64], src: &[u64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d ^= s);
}

fn highest_bit(v: &[u64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .rev()
        .find(|(_, w)| **w != 0)
        .map(|(i, w)| i * 64 + 63 - w.leading_zeros() as usize)
}

/// Union-find sweeps plus a reduction over the cycle space.
///
/// The ascending sweep builds a spanning forest `T`; its non-tree edges,
/// numbered in ascending order, are coordinates for the cycle space, and the
/// latest edge of any cycle is its highest coordinate. The descending sweep
/// builds a second forest; each of its non-tree edges closes a cycle inside
/// the current superlevel set, which is reduced against earlier ones and
/// killed at its highest remaining coordinate.
pub fn extended_persistence_uf(filt: &VertexFiltration) -> ExtendedDiagram {
    let n = filt.n_vertices();
    let f = &filt.f;
    let adj = filt.adjacency();
    let mut asc: Vec<usize> = (0..n).collect();
    asc.sort_by_key(|&v| (f[v], v));
    let mut rank = vec![0usize; n];
    for (r, &v) in asc.iter().enumerate() {
        rank[v] = r;
    }

    let mut out = ExtendedDiagram::default();

    // Ascending sweep. Each root remembers the oldest vertex of its component.
    let mut uf = UnionFind::new(n);
    let oldest: Vec<usize> = (0..n).collect();
    let mut cycle_coord = vec![usize::MAX; filt.edges.len()];
    let mut coord_birth = Vec::new();
    for &v in &asc {
        for &(u, e) in &adj[v] {
            if rank[u] > rank[v] {
                continue;
            }
            let (ru, rv) = (uf.find(u), uf.find(v));
            if ru == rv {
                cycle_coord[e] = coord_birth.len();
                coord_birth.push(f[v]);
                continue;
            }
            let (keep, die) = if rank[oldest[ru]] < rank[oldest[rv]] {
                (ru, rv)
            } else {
                (rv, ru)
            };
            let birth = f[oldest[die]];
            if birth != f[v] {
                out.ord0.push((birth, f[v]));
            }
            uf.link(keep, die);
        }
    }
    let mut comp_max = vec![0u32; n];
    for v in 0..n {
        let r = uf.find(v);
        comp_max[r] = comp_max[r].max(f[v]);
    }
    for v in 0..n {
        if uf.find(v) == v {
            out.ext0.push((f[oldest[v]], comp_max[v]));
        }
    }

    // Descending sweep: forest T' and the edges that close cycles in it.
    let mut uf = UnionFind::new(n);
    let mut tree_adj = vec![Vec::new(); n];
    let mut closing = Vec::new();
    for &v in asc.iter().rev() {
        for &(u, e) in &adj[v] {
            if rank[u] < rank[v] {
                continue;
            }
            if uf.union(u, v) {
                tree_adj[u].push((v, e));
                tree_adj[v].push((u, e));
            } else {
                closing.push((e, f[v]));
            }
        }
    }
    if closing.is_empty() {
        return out;
    }

    // Root the forest so that tree paths can be walked.
    let mut parent = vec![(usize::MAX, usize::MAX); n];
    let mut depth = vec![0u32; n];
    let mut seen = vec![false; n];
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(x) = stack.pop() {
            for &(y, e) in &tree_adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    parent[y] = (x, e);
                    depth[y] = depth[x] + 1;
                    stack.push(y);
                }
            }
        }
    }

    let words = coord_birth.len().div_ceil(64);
    let mut pivots: Vec<Option<Vec<u64>>> = vec![None; coord_birth.len()];
    for (e, death) in closing {
        let mut vec = vec![0u64; words];
        let mut flip = |edge: usize| {
            let c = cycle_coord[edge];
            if c != usize::MAX {
                vec[c / 64] ^= 1 << (c % 64);
            }
        };
        flip(e);
        let (mut a, mut b) = filt.edges[e];
        while a != b {
            if depth[a] < depth[b] {
                std::mem::swap(&mut a, &mut b);
            }
            let (p, pe) = parent[a];
            flip(pe);
            a = p;
        }
        loop {
            let top = highest_bit(&vec).expect("descending cycles are independent");
            match &pivots[top] {
                Some(col) => xor_into(&mut vec, col),
                None => {
                    out.ext1.push((coord_birth[top], death));
                    pivots[top] = Some(vec);
                    break;
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy)]
enum Simplex {
    Apex,
    Vertex(usize),
    Edge(usize),
    ConeVertex(usize),
    ConeEdge(usize),
}

/// Extended persistence from a coned complex and a plain Z/2 column
/// reduction. Slow; intended as a reference.
///
/// Order: the cone apex, then the sublevel filtration (vertices of a level
/// before edges of that level, each by index), then the cones over the
/// superlevel sets in descending order.
pub fn extended_persistence_oracle(filt: &VertexFiltration) -> ExtendedDiagram {
    let n = filt.n_vertices();
    let f = &filt.f;
    let m = filt.edges.len();
    let edge_max = |e: usize| f[filt.edges[e].0].max(f[filt.edges[e].1]);
    let edge_min = |e: usize| f[filt.edges[e].0].min(f[filt.edges[e].1]);
    let mut levels: Vec<u32> = f.clone();
    levels.sort_unstable();
    levels.dedup();

    let mut order = vec![Simplex::Apex];
    for &a in &levels {
        order.extend((0..n).filter(|&v| f[v] == a).map(Simplex::Vertex));
        order.extend((0..m).filter(|&e| edge_max(e) == a).map(Simplex::Edge));
    }
    for &b in levels.iter().rev() {
        order.extend((0..n).filter(|&v| f[v] == b).map(Simplex::ConeVertex));
        order.extend((0..m).filter(|&e| edge_min(e) == b).map(Simplex::ConeEdge));
    }

    let total = order.len();
    let mut pos_vertex = vec![0; n];
    let mut pos_edge = vec![0; m];
    let mut pos_cone_vertex = vec![0; n];
    for (i, s) in order.iter().enumerate() {
        match *s {
            Simplex::Vertex(v) => pos_vertex[v] = i,
            Simplex::Edge(e) => pos_edge[e] = i,
            Simplex::ConeVertex(v) => pos_cone_vertex[v] = i,
            _ => {}
        }
    }
    let words = total.div_ceil(64);
    let set = |col: &mut Vec<u64>, i: usize| col[i / 64] ^= 1 << (i % 64);
    let mut low_owner: Vec<Option<usize>> = vec![None; total];
    let mut columns: Vec<Vec<u64>> = Vec::with_capacity(total);
    let mut out = ExtendedDiagram::default();
    for (j, s) in order.iter().enumerate() {
        let mut col = vec![0u64; words];
        match *s {
            Simplex::Apex | Simplex::Vertex(_) => {}
            Simplex::Edge(e) => {
                set(&mut col, pos_vertex[filt.edges[e].0]);
                set(&mut col, pos_vertex[filt.edges[e].1]);
            }
            Simplex::ConeVertex(v) => {
                set(&mut col, 0);
                set(&mut col, pos_vertex[v]);
            }
            Simplex::ConeEdge(e) => {
                let (a, b) = filt.edges[e];
                set(&mut col, pos_edge[e]);
                set(&mut col, pos_cone_vertex[a]);
                set(&mut col, pos_cone_vertex[b]);
            }
        }
        while let Some(low) = highest_bit(&col) {
            let Some(k) = low_owner[low] else { break };
            xor_into(&mut col, &columns[k]);
        }
        if let Some(low) = highest_bit(&col) {
            low_owner[low] = Some(j);
            match (order[low], *s) {
                (Simplex::Vertex(v), Simplex::Edge(e)) => {
                    if f[v] != edge_max(e) {
                        out.ord0.push((f[v], edge_max(e)));
                    }
                }
                (Simplex::Vertex(v), Simplex::ConeVertex(w)) => out.ext0.push((f[v], f[w])),
                (Simplex::Edge(p), Simplex::ConeEdge(e)) => {
                    out.ext1.push((edge_max(p), edge_min(e)))
                }
                _ => {}
            }
        }
        columns.push(col);
    }
    out
}

/// Persistence-image grid over births in `[0, k]` and persistence in
/// `[0, 2k]`, `resolution` cells per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistenceImageParams {
    pub resolution: usize,
    /// Gaussian width; `None` means one birth-axis cell width.
    pub sigma: Option<f64>,
    pub k: u32,
}

impl PersistenceImageParams {
    pub fn new(k: u32) -> Self {
        Self {
            resolution: 8,
            sigma: None,
            k,
        }
    }

    pub fn len(&self) -> usize {
        3 * self.resolution * self.resolution
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell_widths(&self) -> (f64, f64) {
        let k = self.k.max(1) as f64;
        (k / self.resolution as f64, 2.0 * k / self.resolution as f64)
    }

    pub fn effective_sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.cell_widths().0)
    }
}

/// Mass of `N(mu, sigma^2)` on `[lo, hi]`.
fn gauss_mass(lo: f64, hi: f64, mu: f64, sigma: f64) -> f64 {
    let s = sigma * std::f64::consts::SQRT_2;
    0.5 * (libm::erf((hi - mu) / s) - libm::erf((lo - mu) / s))
}

/// Adds one point `(x = birth, y = |persistence|)` to an `R x R` channel.
fn splat(channel: &mut [f64], x: f64, y: f64, p: &PersistenceImageParams) {
    let w = y;
    if w == 0.0 {
        return;
    }
    let r = p.resolution;
    let (cw, ch) = p.cell_widths();
    let sigma = p.effective_sigma();
    let mx: Vec<f64> = (0..r)
        .map(|i| gauss_mass(i as f64 * cw, (i + 1) as f64 * cw, x, sigma))
        .collect();
    for j in 0..r {
        let my = gauss_mass(j as f64 * ch, (j + 1) as f64 * ch, y, sigma);
        for i in 0..r {
            channel[j * r + i] += w * my * mx[i];
        }
    }
}

/// Three `R x R` channels `ord0 | ext0 | ext1`, each row-major with rows
/// indexing persistence and columns indexing birth.
pub fn persistence_image(d: &ExtendedDiagram, p: &PersistenceImageParams) -> Vec<f64> {
    assert!(
        p.resolution >= 1 && p.effective_sigma() > 0.0,
        "invalid image parameters"
    );
    let r2 = p.resolution * p.resolution;
    let mut out = vec![0.0; 3 * r2];
    for (c, pts) in [&d.ord0, &d.ext0, &d.ext1].into_iter().enumerate() {
        let channel = &mut out[c * r2..(c + 1) * r2];
        for &(b, e) in pts {
            splat(channel, b as f64, (e as f64 - b as f64).abs(), p);
        }
    }
    out
}

/// Diagrams of the out-flow (reachable from `v`) and in-flow (reaching `v`)
/// `k`-hop neighborhoods, in that order.
pub fn node_diagrams(
    star: &DirectedGraph,
    v: usize,
    k: usize,
) -> (ExtendedDiagram, ExtendedDiagram) {
    let pd =
        |mode| extended_persistence_uf(&VertexFiltration::from_subgraph(&star.k_ring(v, k, mode)));
    (pd(RingMode::Out), pd(RingMode::In))
}

/// `6 R^2` values: image of the out-flow diagram, then the in-flow one.
pub fn node_pd_features(star: &DirectedGraph, v: usize, p: &PersistenceImageParams) -> Vec<f64> {
    let (out_pd, in_pd) = node_diagrams(star, v, p.k as usize);
    let mut x = persistence_image(&out_pd, p);
    x.extend(persistence_image(&in_pd, p));
    x
}

pub fn pd_feature_matrix(star: &DirectedGraph, p: &PersistenceImageParams) -> Matrix {
    let width = 2 * p.len();
    let mut m = Matrix::zeros(star.n_nodes(), width);
    for v in 0..star.n_nodes() {
        m.row_mut(v).copy_from_slice(&node_pd_features(star, v, p));
    }
    m
}

/// Degree bins: 0, 1, 2, 3, 4, 5, 6-10, 11-20, >20.
pub const DEGREE_BINS: usize = 9;

fn degree_bin(d: usize) -> usize {
    match d {
        0..=5 => d,
        6..=10 => 6,
        11..=20 => 7,
        _ => 8,
    }
}

/// Normalized histogram of undirected degrees over the undirected `k`-hop
/// neighborhood of `v`, including `v`.
pub fn degree_distribution(star: &DirectedGraph, v: usize, k: usize) -> [f64; DEGREE_BINS] {
    let ring = star.k_ring(v, k, RingMode::Undirected);
    let mut h = [0.0; DEGREE_BINS];
    for &u in &ring.nodes {
        h[degree_bin(star.undirected_degree(u))] += 1.0;
    }
    let total = ring.nodes.len() as f64;
    h.iter_mut().for_each(|x| *x /= total);
    h
}

pub fn degree_distribution_matrix(star: &DirectedGraph, k: usize) -> Matrix {
    let mut m = Matrix::zeros(star.n_nodes(), DEGREE_BINS);
    for v in 0..star.n_nodes() {
        m.row_mut(v)
            .copy_from_slice(&degree_distribution(star, v, k));
    }
    m
}
