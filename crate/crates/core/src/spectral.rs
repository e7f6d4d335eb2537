// SPDX-License-Identifier: Apache-2.0

//! Sparse Laplacians and their low end of the spectrum, used as positional
//! encodings on the cell-net bipartite graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hypergraph::{DirectedHypergraph, UndirectedGraph};
use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("eigensolver did not converge within {0} matrix-vector products")]
    NoConvergence(usize),
    #[error("asked for {s} eigenpairs of a {n}-node operator")]
    TooManyPairs { s: usize, n: usize },
}

/// Symmetric matrix in CSR form with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSym {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// `D - A`, or `I - D^{-1/2} A D^{-1/2}` when `normalized`. An isolated
/// vertex gets a unit diagonal in the normalized case.
pub fn laplacian(g: &UndirectedGraph, normalized: bool) -> SparseSym {
    let n = g.n_nodes();
    let deg: Vec<f64> = (0..n).map(|u| g.degree(u) as f64).collect();
    let mut indptr = vec![0];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for u in 0..n {
        let mut row: Vec<(usize, f64)> = g
            .neighbors(u)
            .iter()
            .map(|&w| {
                (
                    w,
                    if normalized {
                        -1.0 / (deg[u] * deg[w]).sqrt()
                    } else {
                        -1.0
                    },
                )
            })
            .collect();
        let diag = if normalized { 1.0 } else { deg[u] };
        row.push((u, diag));
        row.sort_by_key(|e| e.0);
        for (j, v) in row {
            indices.push(j);
            values.push(v);
        }
        indptr.push(indices.len());
    }
    SparseSym {
        n,
        indptr,
        indices,
        values,
    }
}

/// Ascending eigenvalues and the matching unit eigenvectors as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigResult {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Eigen-decomposition of a symmetric tridiagonal matrix by implicit QL.
/// `d` holds the diagonal, `e[i]` couples `i` and `i + 1`. Returns ascending
/// eigenvalues and the requested rows of the eigenvector matrix; rotations
/// act on rows independently, so asking for one row costs O(n^2).
fn tridiagonal_eigen(d: &[f64], e: &[f64], rows: &[usize]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = d.len();
    let mut d = d.to_vec();
    let mut e: Vec<f64> = e
        .iter()
        .copied()
        .chain(std::iter::once(0.0))
        .take(n)
        .collect();
    let mut z: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| (0..n).map(|c| if c == r { 1.0 } else { 0.0 }).collect())
        .collect();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 200, "tridiagonal QL failed to converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in z.iter_mut() {
                    let t = row[i + 1];
                    row[i + 1] = s * row[i] + c * t;
                    row[i] = c * row[i] - s * t;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let vals = order.iter().map(|&i| d[i]).collect();
    let vecs = z
        .iter()
        .map(|row| order.iter().map(|&i| row[i]).collect())
        .collect();
    (vals, vecs)
}

/// Flips `v` so that its largest-magnitude entry is positive; among entries
/// within a relative 1e-9 of the maximum, the earliest decides.
pub fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(x) = v.iter().find(|x| x.abs() >= max * (1.0 - 1e-9)) {
        if *x < 0.0 {
            v.iter_mut().for_each(|y| *y = -*y);
        }
    }
}

struct Run {
    converged: Vec<(f64, Vec<f64>)>,
    restart: Option<Vec<f64>>,
    matvecs: usize,
}

/// Orthogonalizes `w` against `basis` twice.
fn reorthogonalize(w: &mut [f64], basis: &[&[f64]]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(w, b);
            axpy(-c, b, w);
        }
    }
}

/// One Lanczos run on the complement of `locked`, stopping once the `want`
/// lowest Ritz pairs have converged or the Krylov space is exhausted.
fn lanczos_run(
    l: &SparseSym,
    locked: &[Vec<f64>],
    start: Vec<f64>,
    want: usize,
    max_m: usize,
    tol: f64,
) -> Run {
    let n = l.n();
    let locked_refs: Vec<&[f64]> = locked.iter().map(|v| v.as_slice()).collect();
    let mut v = start;
    reorthogonalize(&mut v, &locked_refs);
    let nv = norm(&v);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let (mut alpha, mut beta): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    let mut matvecs = 0;
    if nv == 0.0 {
        return Run {
            converged: Vec::new(),
            restart: None,
            matvecs,
        };
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut w = vec![0.0; n];
    let (ritz, n_conv) = loop {
        l.matvec(&v, &mut w);
        matvecs += 1;
        let a = dot(&v, &w);
        axpy(-a, &v, &mut w);
        if let (Some(b), Some(prev)) = (beta.last(), basis.last()) {
            axpy(-*b, prev, &mut w);
        }
        basis.push(std::mem::take(&mut v));
        alpha.push(a);
        {
            let refs: Vec<&[f64]> = locked_refs
                .iter()
                .copied()
                .chain(basis.iter().map(|b| b.as_slice()))
                .collect();
            reorthogonalize(&mut w, &refs);
        }
        let b = norm(&w);
        let m = basis.len();
        let exhausted = b <= 1e-12 || m >= max_m;
        if exhausted || m % 5 == 0 || m >= want.max(1) * 2 && m % 2 == 0 {
            let (vals, last) = tridiagonal_eigen(&alpha, &beta, &[m - 1]);
            let n_conv = if b <= 1e-12 {
                m
            } else {
                (0..m)
                    .take_while(|&i| (b * last[0][i]).abs() <= tol)
                    .count()
            };
            if n_conv >= want || exhausted {
                let all: Vec<usize> = (0..m).collect();
                let (_, z) = tridiagonal_eigen(&alpha, &beta, &all);
                break ((vals, z), n_conv);
            }
        }
        beta.push(b);
        v = w.iter().map(|x| x / b).collect();
    };
    let m = basis.len();
    let ritz_vector = |i: usize| {
        let mut x = vec![0.0; n];
        for (j, bj) in basis.iter().enumerate() {
            axpy(ritz.1[j][i], bj, &mut x);
        }
        let nx = norm(&x);
        x.iter_mut().for_each(|y| *y /= nx);
        x
    };
    let converged = (0..n_conv.min(m))
        .map(|i| (ritz.0[i], ritz_vector(i)))
        .collect();
    let restart = if n_conv < want && m > n_conv {
        let mut r = vec![0.0; n];
        for i in n_conv..(want.max(1) + 2).min(m) {
            axpy(1.0, &ritz_vector(i), &mut r);
        }
        Some(r)
    } else {
        None
    };
    Run {
        converged,
        restart,
        matvecs,
    }
}

fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// The `s` smallest eigenpairs of `l` by restarted Lanczos with full
/// reorthogonalization and locking. Converged vectors are deflated and the
/// search repeats on their complement until it finds nothing below the
/// current `s`-th value, so repeated eigenvalues are recovered.
pub fn smallest_eigenvectors(
    l: &SparseSym,
    s: usize,
    tol: f64,
    seed: u64,
) -> Result<EigResult, SpectralError> {
    let n = l.n();
    if s >= n {
        return Err(SpectralError::TooManyPairs { s, n });
    }
    if s == 0 {
        return Ok(EigResult {
            values: Vec::new(),
            vectors: Matrix::zeros(n, 0),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv_tol = tol * 1e-2;
    let budget = (50 * n).max(20_000);
    let mut used = 0;
    let mut locked: Vec<Vec<f64>> = Vec::new();
    let mut locked_vals: Vec<f64> = Vec::new();
    let mut start = random_vector(n, &mut rng);
    loop {
        let remaining = n - locked.len();
        if remaining == 0 {
            break;
        }
        let verifying = locked.len() >= s;
        let want = if verifying { 1 } else { s - locked.len() };
        let max_m = remaining.min((20 * want).max(300));
        let run = lanczos_run(l, &locked, start, want, max_m, conv_tol);
        used += run.matvecs;
        if verifying {
            let mut sorted = locked_vals.clone();
            sorted.sort_by(f64::total_cmp);
            match run.converged.into_iter().next() {
                Some((val, vec)) if val < sorted[s - 1] - tol => {
                    locked_vals.push(val);
                    locked.push(vec);
                }
                Some(_) => break,
                None if run.restart.is_none() => break,
                None => {}
            }
        } else {
            for (val, vec) in run.converged.into_iter().take(want) {
                locked_vals.push(val);
                locked.push(vec);
            }
        }
        if used > budget {
            return Err(SpectralError::NoConvergence(budget));
        }
        start = match run.restart {
            Some(r) if norm(&r) > 0.0 => r,
            _ => random_vector(n, &mut rng),
        };
    }

    let mut order: Vec<usize> = (0..locked.len()).collect();
    order.sort_by(|&a, &b| locked_vals[a].total_cmp(&locked_vals[b]).then(a.cmp(&b)));
    let mut vectors = Matrix::zeros(n, s);
    let mut values = Vec::with_capacity(s);
    let mut lx = vec![0.0; n];
    for (c, &i) in order.iter().take(s).enumerate() {
        let mut v = locked[i].clone();
        fix_sign(&mut v);
        l.matvec(&v, &mut lx);
        values.push(dot(&v, &lx));
        for (r, x) in v.iter().enumerate() {
            vectors[(r, c)] = *x;
        }
    }
    Ok(EigResult { values, vectors })
}

/// Positional encodings from the normalized Laplacian of the cell-net
/// bipartite graph: the `s` eigenvectors after the trivial one, split into
/// cell rows and net rows.
pub fn lap_pe(
    g: &DirectedHypergraph,
    s: usize,
    seed: u64,
) -> Result<(Matrix, Matrix), SpectralError> {
    let (nc, ne) = (g.n_cells(), g.n_nets());
    if s == 0 {
        return Ok((Matrix::zeros(nc, 0), Matrix::zeros(ne, 0)));
    }
    let bip = g.bipartite_graph();
    let l = laplacian(&bip.graph, true);
    let eig = smallest_eigenvectors(&l, s + 1, 1e-8, seed)?;
    let mut cells = Matrix::zeros(nc, s);
    let mut nets = Matrix::zeros(ne, s);
    for r in 0..nc + ne {
        for c in 0..s {
            let x = eig.vectors[(r, c + 1)];
            if r < nc {
                cells[(r, c)] = x;
            } else {
                nets[(r - nc, c)] = x;
            }
        }
    }
    Ok((cells, nets))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(l: &SparseSym, v: &[f64], lambda: f64) -> f64 {
        let mut y = vec![0.0; v.len()];
        l.matvec(v, &mut y);
        axpy(-lambda, v, &mut y);
        norm(&y)
    }

    #[test]
    fn tridiagonal_known_spectrum() {
        // Path P3 Laplacian is already tridiagonal.
        let (vals, vecs) = tridiagonal_eigen(&[1.0, 2.0, 1.0], &[-1.0, -1.0], &[0, 1, 2]);
        for (a, b) in vals.iter().zip([0.0, 1.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((vecs[0][0].abs() - 1.0 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn p3_unnormalized() {
        let g = UndirectedGraph::from_edges(3, [(0, 1), (1, 2)]);
        let l = laplacian(&g, false);
        for i in 0..3 {
            assert_eq!(l.row(i).map(|(_, v)| v).sum::<f64>(), 0.0);
        }
        let r = smallest_eigenvectors(&l, 2, 1e-8, 0).unwrap();
        assert!(
            r.values[0].abs() < 1e-8 && (r.values[1] - 1.0).abs() < 1e-8,
            "{:?}",
            r.values
        );
        for c in 0..2 {
            let v = r.vectors.col(c);
            assert!(residual(&l, &v, r.values[c]) <= 1e-8);
        }
        // The 1-eigenvector is (1, 0, -1)/sqrt2 up to sign; ties go to index 0.
        assert!(r.vectors[(0, 1)] > 0.0);
    }

    #[test]
    fn single_edge_normalized() {
        let g = UndirectedGraph::from_edges(2, [(0, 1)]);
        let l = laplacian(&g, true);
        let r = smallest_eigenvectors(&l, 1, 1e-8, 0).unwrap();
        assert!(r.values[0].abs() < 1e-10);
        assert_eq!(l.to_dense()[(0, 1)], -1.0);
    }

    #[test]
    fn isolated_rows_normalized() {
        let g = UndirectedGraph::from_edges(3, [(0, 1)]);
        let l = laplacian(&g, true);
        assert_eq!(l.row(2).collect::<Vec<_>>(), vec![(2, 1.0)]);
    }

    #[test]
    fn repeated_zero_eigenvalue() {
        // Four components: three edges and one triangle.
        let g = UndirectedGraph::from_edges(9, [(0, 1), (2, 3), (4, 5), (6, 7), (7, 8), (6, 8)]);
        let l = laplacian(&g, true);
        let r = smallest_eigenvectors(&l, 5, 1e-8, 1).unwrap();
        assert!(
            r.values[..4].iter().all(|v| v.abs() <= 1e-8),
            "{:?}",
            r.values
        );
        assert!((r.values[4] - 1.5).abs() <= 1e-8, "{:?}", r.values);
    }

    #[test]
    fn too_many_pairs() {
        let g = UndirectedGraph::from_edges(3, [(0, 1)]);
        assert_eq!(
            smallest_eigenvectors(&laplacian(&g, true), 3, 1e-8, 0),
            Err(SpectralError::TooManyPairs { s: 3, n: 3 })
        );
    }
}
