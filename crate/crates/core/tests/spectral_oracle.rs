// SPDX-License-Identifier: Apache-2.0

use dehnn::hypergraph::UndirectedGraph;
use dehnn::netlist::{generate_synthetic, parse_netlist, SynthParams};
use dehnn::spectral::{lap_pe, laplacian, smallest_eigenvectors};
use dehnn::{CellRecord, DirectedHypergraph, NetRecord};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEVEN_CELL: &str = "\
NETLIST seven_cell
CELL 0 type=NAND2 width=2 height=1 orient=0
CELL 1 type=INV width=1 height=1 orient=0
CELL 2 type=NOR2 width=2 height=1 orient=2
CELL 3 type=INV width=1 height=1 orient=0
CELL 4 type=DFF width=4 height=1 orient=4
CELL 5 type=INV width=1 height=1 orient=0
CELL 6 type=BUF width=1.5 height=1 orient=1
NET 1 driver=0 sinks=2,3
NET 2 driver=1 sinks=2,4,6
NET 3 driver=3 sinks=5
NET 4 driver=4 sinks=5
NET 5 driver=2 sinks=4,6
";

fn random_graph(rng: &mut ChaCha8Rng) -> UndirectedGraph {
    let n = rng.random_range(15..=500);
    let m = rng.random_range(n / 2..=3 * n);
    let edges: Vec<(usize, usize)> = (0..m)
        .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
        .filter(|(a, b)| a != b)
        .collect();
    UndirectedGraph::from_edges(n, edges)
}

/// Largest principal-angle sine between two column spans, via the
/// Frobenius norm of the projection residual (an upper bound).
fn subspace_sine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let resid = a - b * (b.transpose() * a);
    resid.norm()
}

#[test]
fn matches_dense_oracle_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let s = 10;
    for trial in 0..25 {
        let g = random_graph(&mut rng);
        let n = g.n_nodes();
        for normalized in [true, false] {
            let l = laplacian(&g, normalized);
            let dense = l.to_dense();
            let oracle = nalgebra::SymmetricEigen::new(DMatrix::from_row_slice(n, n, dense.data()));
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&i, &j| oracle.eigenvalues[i].total_cmp(&oracle.eigenvalues[j]));
            let r = smallest_eigenvectors(&l, s, 1e-8, trial).unwrap();
            let scale = if normalized {
                1.0
            } else {
                dense.data().iter().fold(1.0f64, |m, x| m.max(x.abs()))
            };
            for i in 0..s {
                let want = oracle.eigenvalues[idx[i]];
                assert!(
                    (r.values[i] - want).abs() <= 1e-8 * scale,
                    "trial {trial} i {i}: {} vs {want}",
                    r.values[i]
                );
            }
            // Compare spans up to the last spectral gap inside the first s.
            let gap_end = (1..=s)
                .rev()
                .find(|&t| oracle.eigenvalues[idx[t]] - oracle.eigenvalues[idx[t - 1]] > 1e-6)
                .unwrap_or(0);
            if gap_end == 0 {
                continue;
            }
            let ours = DMatrix::from_fn(n, gap_end, |i, j| r.vectors[(i, j)]);
            let theirs = DMatrix::from_fn(n, gap_end, |i, j| oracle.eigenvectors[(i, idx[j])]);
            let sine = subspace_sine(&ours, &theirs);
            assert!(sine <= 1e-6, "trial {trial}: subspace sine {sine}");
            let gram = ours.transpose() * &ours - DMatrix::identity(gap_end, gap_end);
            assert!(gram.amax() <= 1e-8);
            for j in 0..s {
                let v = r.vectors.col(j);
                let mut lv = vec![0.0; n];
                l.matvec(&v, &mut lv);
                let res: f64 = lv
                    .iter()
                    .zip(&v)
                    .map(|(a, b)| (a - r.values[j] * b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(res <= 1e-8 * scale, "trial {trial}: residual {res}");
            }
        }
    }
}

#[test]
fn disconnected_kernel_dimension() {
    // Five paths of length 3 plus isolated vertices.
    let mut edges = Vec::new();
    for c in 0..5 {
        edges.push((3 * c, 3 * c + 1));
        edges.push((3 * c + 1, 3 * c + 2));
    }
    let g = UndirectedGraph::from_edges(18, edges);
    let r = smallest_eigenvectors(&laplacian(&g, false), 9, 1e-8, 7).unwrap();
    assert!(
        r.values[..8].iter().all(|v| v.abs() <= 1e-8),
        "{:?}",
        r.values
    );
    assert!(r.values[8] > 0.5);
}

#[test]
fn seven_cell_pe_shapes() {
    let n = parse_netlist(SEVEN_CELL).unwrap();
    let (cells, nets) = lap_pe(&n.graph, 3, 0).unwrap();
    assert_eq!(cells.shape(), (7, 3));
    assert_eq!(nets.shape(), (5, 3));
    let (c0, n0) = lap_pe(&n.graph, 0, 0).unwrap();
    assert_eq!((c0.cols(), n0.cols()), (0, 0));
}

#[test]
fn pe_invariant_under_relabeling() {
    let d = generate_synthetic(&SynthParams {
        n_cells: 300,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let g = &d.netlist.graph;
    let (cells, nets) = lap_pe(g, 6, 1).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut perm: Vec<usize> = (0..g.n_cells()).collect();
    perm.shuffle(&mut rng);
    let mut new_cells = vec![CellRecord::default(); g.n_cells()];
    for (old, &new) in perm.iter().enumerate() {
        new_cells[new] = g.cells()[old].clone();
    }
    let mut new_nets: Vec<NetRecord> = g
        .nets()
        .iter()
        .map(|e| {
            NetRecord::new(
                perm[e.driver.index()],
                e.sinks.iter().map(|s| perm[s.index()]),
            )
        })
        .collect();
    new_nets.shuffle(&mut rng);
    let (h, source) = DirectedHypergraph::build_indexed(new_cells, new_nets.clone()).unwrap();
    let (cells2, nets2) = lap_pe(&h, 6, 99).unwrap();

    for old in 0..g.n_cells() {
        for c in 0..6 {
            assert!(
                (cells[(old, c)] - cells2[(perm[old], c)]).abs() < 1e-6,
                "cell {old} col {c}"
            );
        }
    }
    // Map relabeled nets back to the original canonical nets by content.
    for (j, _) in h.nets().iter().enumerate() {
        let rec = &new_nets[source[j]];
        let inv = |x: usize| perm.iter().position(|&p| p == x).unwrap();
        let driver = inv(rec.driver.index());
        let mut sinks: Vec<usize> = rec.sinks.iter().map(|s| inv(s.index())).collect();
        sinks.sort_unstable();
        let orig = g
            .nets()
            .iter()
            .position(|e| {
                let mut es: Vec<usize> = e.sinks.iter().map(|s| s.index()).collect();
                es.sort_unstable();
                e.driver.index() == driver && es == sinks
            })
            .unwrap();
        for c in 0..6 {
            assert!((nets[(orig, c)] - nets2[(j, c)]).abs() < 1e-6);
        }
    }
}
