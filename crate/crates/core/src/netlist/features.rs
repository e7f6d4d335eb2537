// SPDX-License-Identifier: Apache-2.0

//! Input feature tables with self-describing column blocks.

use crate::hypergraph::{CellId, DirectedHypergraph};
use crate::matrix::Matrix;

/// A named, contiguous run of columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub cell: Matrix,
    pub net: Matrix,
    pub cell_blocks: Vec<Block>,
    pub net_blocks: Vec<Block>,
}

fn push_block(m: &mut Matrix, blocks: &mut Vec<Block>, name: &str, extra: &Matrix) {
    assert_eq!(
        m.rows(),
        extra.rows(),
        "feature block `{name}` has wrong row count"
    );
    blocks.push(Block {
        name: name.to_string(),
        start: m.cols(),
        width: extra.cols(),
    });
    *m = m.hcat(extra);
}

impl FeatureTable {
    pub fn append_cell_block(&mut self, name: &str, block: &Matrix) {
        push_block(&mut self.cell, &mut self.cell_blocks, name, block);
    }

    pub fn append_net_block(&mut self, name: &str, block: &Matrix) {
        push_block(&mut self.net, &mut self.net_blocks, name, block);
    }

    pub fn cell_block(&self, name: &str) -> Option<&Block> {
        self.cell_blocks.iter().find(|b| b.name == name)
    }

    pub fn net_block(&self, name: &str) -> Option<&Block> {
        self.net_blocks.iter().find(|b| b.name == name)
    }

    /// Copy without the named cell blocks.
    pub fn without_cell_blocks(&self, names: &[&str]) -> FeatureTable {
        let mut out = FeatureTable {
            cell: Matrix::zeros(self.cell.rows(), 0),
            net: self.net.clone(),
            cell_blocks: Vec::new(),
            net_blocks: self.net_blocks.clone(),
        };
        for b in &self.cell_blocks {
            if names.contains(&b.name.as_str()) {
                continue;
            }
            let mut sub = Matrix::zeros(self.cell.rows(), b.width);
            for i in 0..self.cell.rows() {
                sub.row_mut(i)
                    .copy_from_slice(&self.cell.row(i)[b.start..b.start + b.width]);
            }
            out.append_cell_block(&b.name, &sub);
        }
        out
    }

    /// Sidecar header: one `<kind> <name> <start> <width>` line per block.
    pub fn header(&self) -> String {
        let mut s = String::new();
        for (kind, blocks) in [("cell", &self.cell_blocks), ("net", &self.net_blocks)] {
            for b in blocks {
                s.push_str(&format!("{kind} {} {} {}\n", b.name, b.start, b.width));
            }
        }
        s
    }
}

/// Min-max normalization to `[0, 1]`; a constant column maps to 0.5.
fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect()
}

/// Cell columns: `width, height, orient(8 one-hot), degree`. Net column:
/// `degree` = sinks + 1.
pub fn base_features(g: &DirectedHypergraph) -> FeatureTable {
    let n = g.n_cells();
    let widths: Vec<f64> = g.cells().iter().map(|c| c.width).collect();
    let heights: Vec<f64> = g.cells().iter().map(|c| c.height).collect();
    let (w, h) = (min_max(&widths), min_max(&heights));

    let mut size = Matrix::zeros(n, 2);
    let mut orient = Matrix::zeros(n, 8);
    let mut degree = Matrix::zeros(n, 1);
    for (i, c) in g.cells().iter().enumerate() {
        size[(i, 0)] = w[i];
        size[(i, 1)] = h[i];
        orient[(i, c.orient as usize)] = 1.0;
        degree[(i, 0)] = g.cell_degree(CellId(i)) as f64;
    }
    let net_degree: Vec<f64> = g.nets().iter().map(|e| e.size() as f64).collect();

    let mut t = FeatureTable {
        cell: Matrix::zeros(n, 0),
        net: Matrix::zeros(g.n_nets(), 0),
        cell_blocks: Vec::new(),
        net_blocks: Vec::new(),
    };
    t.append_cell_block("size", &size);
    t.append_cell_block("orient", &orient);
    t.append_cell_block("degree", &degree);
    t.append_net_block("degree", &Matrix::column(&net_degree));
    t
}
