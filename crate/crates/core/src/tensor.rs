// SPDX-License-Identifier: Apache-2.0

//! Dense reverse-mode autodiff over [`Matrix`] values, MLP blocks, Adam, and
//! the parameter checkpoint format.
//!
//! A [`Tape`] records every op in creation order, which is already a
//! topological order, so backward is a single reverse sweep.
//!
//! Reductions that gather an unordered multiset (`segment_sum`, `mean_rows`)
//! add each output entry's contributions in ascending value order. The result
//! therefore depends only on the multiset, not on where the rows sit.

use std::io::{Read, Write};
use std::rc::Rc;

use rand::Rng;
use thiserror::Error;

use crate::matrix::Matrix;
use crate::netlist::matrix_io::{
    check_magic, read_exact_or_truncated, read_f64s, read_u32, read_u64, write_f64s,
};
use crate::netlist::FormatError;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("backward needs a 1x1 loss, got {0:?}")]
    BackwardOnNonScalar((usize, usize)),
    #[error("{op}: index {index} out of range for {len} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("loss mask selects no rows")]
    EmptyMask,
}

type Result<T> = std::result::Result<T, TensorError>;

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Sum that depends only on the multiset of `buf`.
fn multiset_sum(buf: &mut [f64]) -> f64 {
    match buf.len() {
        0 => 0.0,
        1 => buf[0],
        2 => buf[0] + buf[1],
        _ => {
            buf.sort_unstable_by(f64::total_cmp);
            buf.iter().sum()
        }
    }
}

/// Rows grouped by target: `sources(t)` lists, in ascending order, the rows
/// mapped to target `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
    sources: Vec<usize>,
    targets: Vec<usize>,
}

impl Segments {
    /// Panics if a target is out of range.
    pub fn new(targets: &[usize], n_targets: usize) -> Self {
        let mut offsets = vec![0; n_targets + 1];
        for &t in targets {
            assert!(t < n_targets, "segment target {t} out of range {n_targets}");
            offsets[t + 1] += 1;
        }
        for t in 0..n_targets {
            offsets[t + 1] += offsets[t];
        }
        let mut fill = offsets.clone();
        let mut sources = vec![0; targets.len()];
        for (i, &t) in targets.iter().enumerate() {
            sources[fill[t]] = i;
            fill[t] += 1;
        }
        Self {
            offsets,
            sources,
            targets: targets.to_vec(),
        }
    }

    pub fn n_targets(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_sources(&self) -> usize {
        self.targets.len()
    }

    pub fn sources(&self, t: usize) -> &[usize] {
        &self.sources[self.offsets[t]..self.offsets[t + 1]]
    }

    pub fn count(&self, t: usize) -> usize {
        self.offsets[t + 1] - self.offsets[t]
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Concat(Vec<Var>),
    Gather(Var, Rc<Vec<usize>>),
    SegmentSum(Var, Rc<Segments>),
    ScaleRows(Var, Rc<Vec<f64>>),
    MeanRows(Var),
    /// Gradient with respect to the input, already scaled.
    Loss(Var, Matrix),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients from one backward sweep, indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Matrix>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: x.shape(),
                right: y.shape(),
            });
        }
        let v = x.matmul(y);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// `x + 1 * bias` for a `1 x c` bias.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: xv.shape(),
                right: bv.shape(),
            });
        }
        let mut v = xv.clone();
        for i in 0..v.rows() {
            v.row_mut(i)
                .iter_mut()
                .zip(bv.row(0))
                .for_each(|(a, b)| *a += b);
        }
        Ok(self.push(v, Op::AddRow(x, bias)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).map(|a| a * s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a > 0.0 { a } else { 0.0 });
        self.push(v, Op::Relu(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        for &p in parts {
            let m = self.value(p);
            if m.rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape(),
                    right: m.shape(),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut c = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                v.row_mut(i)[c..c + src.len()].copy_from_slice(src);
                c += src.len();
            }
        }
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &Rc<Vec<usize>>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(TensorError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                len: xv.rows(),
            });
        }
        let v = xv.select_rows(idx);
        Ok(self.push(v, Op::Gather(x, idx.clone())))
    }

    /// Row `t` of the output is the sum of the source rows mapped to `t`.
    pub fn segment_sum(&mut self, x: Var, seg: &Rc<Segments>) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != seg.n_sources() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                left: xv.shape(),
                right: (seg.n_sources(), seg.n_targets()),
            });
        }
        let c = xv.cols();
        let mut v = Matrix::zeros(seg.n_targets(), c);
        let mut buf = Vec::new();
        for t in 0..seg.n_targets() {
            let src = seg.sources(t);
            for j in 0..c {
                buf.clear();
                buf.extend(src.iter().map(|&s| xv[(s, j)]));
                v[(t, j)] = multiset_sum(&mut buf);
            }
        }
        Ok(self.push(v, Op::SegmentSum(x, seg.clone())))
    }

    pub fn scale_rows(&mut self, x: Var, factors: &Rc<Vec<f64>>) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != factors.len() {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                left: xv.shape(),
                right: (factors.len(), 1),
            });
        }
        let mut v = xv.clone();
        for (i, &f) in factors.iter().enumerate() {
            v.row_mut(i).iter_mut().for_each(|a| *a *= f);
        }
        Ok(self.push(v, Op::ScaleRows(x, factors.clone())))
    }

    /// `1 x c` column means. An empty input gives zeros.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        let mut v = Matrix::zeros(1, c);
        let mut buf = Vec::with_capacity(n);
        for j in 0..c {
            buf.clear();
            buf.extend((0..n).map(|i| xv[(i, j)]));
            v[(0, j)] = if n == 0 {
                0.0
            } else {
                multiset_sum(&mut buf) / n as f64
            };
        }
        self.push(v, Op::MeanRows(x))
    }

    /// Mean squared error over the rows in `mask`.
    pub fn mse_loss(&mut self, pred: Var, target: &Matrix, mask: &[usize]) -> Result<Var> {
        let p = self.value(pred);
        same_shape("mse_loss", p, target)?;
        if mask.is_empty() {
            return Err(TensorError::EmptyMask);
        }
        if let Some(&bad) = mask.iter().find(|&&i| i >= p.rows()) {
            return Err(TensorError::IndexOutOfRange {
                op: "mse_loss",
                index: bad,
                len: p.rows(),
            });
        }
        let count = (mask.len() * p.cols()) as f64;
        let mut grad = Matrix::zeros(p.rows(), p.cols());
        let mut total = 0.0;
        for &i in mask {
            for j in 0..p.cols() {
                let d = p[(i, j)] - target[(i, j)];
                total += d * d;
                grad[(i, j)] = 2.0 * d / count;
            }
        }
        Ok(self.push(Matrix::filled(1, 1, total / count), Op::Loss(pred, grad)))
    }

    /// Mean cross-entropy of row-wise softmax over the rows in `mask`.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if labels.len() != z.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_xent",
                left: z.shape(),
                right: (labels.len(), 1),
            });
        }
        if mask.is_empty() {
            return Err(TensorError::EmptyMask);
        }
        let count = mask.len() as f64;
        let mut grad = Matrix::zeros(z.rows(), z.cols());
        let mut total = 0.0;
        for &i in mask {
            if i >= z.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "softmax_xent",
                    index: i,
                    len: z.rows(),
                });
            }
            let y = labels[i];
            if y >= z.cols() {
                return Err(TensorError::IndexOutOfRange {
                    op: "softmax_xent",
                    index: y,
                    len: z.cols(),
                });
            }
            let row = z.row(i);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|a| (a - mx).exp()).sum::<f64>().ln();
            total += lse - row[y];
            for j in 0..z.cols() {
                let p = (row[j] - lse).exp();
                grad[(i, j)] = (p - if j == y { 1.0 } else { 0.0 }) / count;
            }
        }
        Ok(self.push(Matrix::filled(1, 1, total / count), Op::Loss(logits, grad)))
    }

    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(TensorError::BackwardOnNonScalar(shape));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let acc = |grads: &mut Vec<Option<Matrix>>, v: Var, g: Matrix| match &mut grads[v.0] {
            Some(x) => x.add_assign(&g),
            slot => *slot = Some(g),
        };
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(x, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        gb.row_mut(0)
                            .iter_mut()
                            .zip(g.row(r))
                            .for_each(|(a, b)| *a += b);
                    }
                    acc(&mut grads, *x, g.clone());
                    acc(&mut grads, *bias, gb);
                }
                Op::Scale(x, s) => acc(&mut grads, *x, g.map(|a| a * s)),
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut gx = g.clone();
                    gx.data_mut().iter_mut().zip(xv.data()).for_each(|(d, &a)| {
                        if a <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut grads, *x, gx);
                }
                Op::Concat(parts) => {
                    let mut c = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let mut gp = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c..c + w]);
                        }
                        c += w;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::Gather(x, idx) => {
                    let mut gx = Matrix::zeros(self.value(*x).rows(), g.cols());
                    for (o, &src) in idx.iter().enumerate() {
                        gx.row_mut(src)
                            .iter_mut()
                            .zip(g.row(o))
                            .for_each(|(a, b)| *a += b);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SegmentSum(x, seg) => acc(&mut grads, *x, g.select_rows(seg.targets())),
                Op::ScaleRows(x, f) => {
                    let mut gx = g.clone();
                    for (r, &s) in f.iter().enumerate() {
                        gx.row_mut(r).iter_mut().for_each(|a| *a *= s);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::MeanRows(x) => {
                    let n = self.value(*x).rows();
                    let mut gx = Matrix::zeros(n, g.cols());
                    for r in 0..n {
                        gx.row_mut(r)
                            .iter_mut()
                            .zip(g.row(0))
                            .for_each(|(a, b)| *a = b / n as f64);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Loss(x, dl) => {
                    let s = g[(0, 0)];
                    acc(&mut grads, *x, dl.map(|a| a * s));
                }
            }
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named parameter matrices in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter `{name}`");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Leaf variables for every parameter, indexed like the store.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|m| tape.leaf(m.clone())).collect()
    }

    /// Gradient per parameter; unreachable parameters get zeros.
    pub fn collect_grads(&self, grads: &Grads, vars: &[Var]) -> Vec<Matrix> {
        self.values
            .iter()
            .zip(vars)
            .map(|(m, &v)| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()))
            })
            .collect()
    }

    /// Replaces every value from `blocks`, which must match names and shapes.
    pub fn load(&mut self, blocks: Vec<(String, Matrix)>) -> std::result::Result<(), FormatError> {
        if blocks.len() != self.values.len() {
            return Err(FormatError::Malformed(format!(
                "checkpoint has {} blocks, model expects {}",
                blocks.len(),
                self.values.len()
            )));
        }
        for (i, (name, m)) in blocks.into_iter().enumerate() {
            if name != self.names[i] || m.shape() != self.values[i].shape() {
                return Err(FormatError::Malformed(format!(
                    "block {i}: found `{name}` {:?}, expected `{}` {:?}",
                    m.shape(),
                    self.names[i],
                    self.values[i].shape()
                )));
            }
            self.values[i] = m;
        }
        Ok(())
    }
}

/// Uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect(),
    )
}

/// Affine layers with ReLU between them; the last layer is affine only.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    widths: Vec<usize>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`, at least two entries.
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let wt = store.add(format!("{name}.{i}.w"), init_uniform(w[0], w[1], w[0], rng));
                let b = store.add(format!("{name}.{i}.b"), init_uniform(1, w[1], w[0], rng));
                (wt, b)
            })
            .collect();
        Self {
            layers,
            widths: widths.to_vec(),
        }
    }

    pub fn in_width(&self) -> usize {
        self.widths[0]
    }

    pub fn out_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul(h, vars[w.0])?;
            h = tape.add_row(h, vars[b.0])?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Matrix> = store
            .values()
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in store.values_mut().iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for (((w, mi), vi), &gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Largest relative error between analytic and central-difference gradients,
/// one entry per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.1).fold(0.0, f64::max)
    }
}

/// Gradient entries below this magnitude are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares backward gradients of `f` against central differences with step
/// `h` for every scalar in `store`.
pub fn grad_check(
    store: &ParamStore,
    h: f64,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let loss = f(&mut tape, &vars)?;
    let analytic = store.collect_grads(&tape.backward(loss)?, &vars);
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = s.bind(&mut t);
        let l = f(&mut t, &v)?;
        Ok(t.value(l)[(0, 0)])
    };
    let mut probe = store.clone();
    let mut blocks = Vec::new();
    for k in 0..store.len() {
        let mut worst = 0.0f64;
        for e in 0..store.values()[k].len() {
            let orig = store.values()[k].data()[e];
            probe.values_mut()[k].data_mut()[e] = orig + h;
            let up = eval(&probe)?;
            probe.values_mut()[k].data_mut()[e] = orig - h;
            let down = eval(&probe)?;
            probe.values_mut()[k].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k].data()[e];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max(err);
        }
        blocks.push((store.names()[k].clone(), worst));
    }
    Ok(GradCheckReport { blocks })
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"DEHM";
const CHECKPOINT_VERSION: u32 = 1;

/// Magic `DEHM`, `u32` version, `u64`-prefixed UTF-8 config text, `u64` block
/// count, then per block a `u64`-prefixed name, `u64` rows, `u64` cols and
/// little-endian `f64` data.
pub fn write_checkpoint(
    w: &mut impl Write,
    config: &str,
    store: &ParamStore,
) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(config.len() as u64).to_le_bytes())?;
    w.write_all(config.as_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (name, m) in store.names().iter().zip(store.values()) {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows() as u64).to_le_bytes())?;
        w.write_all(&(m.cols() as u64).to_le_bytes())?;
        write_f64s(w, m.data())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub blocks: Vec<(String, Matrix)>,
}

fn read_string(r: &mut impl Read) -> std::result::Result<String, FormatError> {
    let len = read_u64(r)? as usize;
    if len > 1 << 30 {
        return Err(FormatError::Malformed(format!("string length {len}")));
    }
    let mut b = vec![0u8; len];
    read_exact_or_truncated(r, &mut b)?;
    String::from_utf8(b).map_err(|_| FormatError::Malformed("string is not UTF-8".into()))
}

pub fn read_checkpoint(r: &mut impl Read) -> std::result::Result<Checkpoint, FormatError> {
    check_magic(r, CHECKPOINT_MAGIC)?;
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::VersionMismatch(version));
    }
    let config = read_string(r)?;
    let n = read_u64(r)? as usize;
    let mut blocks = Vec::new();
    for _ in 0..n {
        let name = read_string(r)?;
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| FormatError::Malformed("shape overflows".into()))?;
        blocks.push((name, Matrix::from_vec(rows, cols, read_f64s(r, len)?)));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(FormatError::Malformed(
            "trailing bytes after checkpoint".into(),
        ));
    }
    Ok(Checkpoint { config, blocks })
}
