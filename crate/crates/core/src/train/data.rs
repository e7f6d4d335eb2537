// SPDX-License-Identifier: Apache-2.0

//! Input features, designs on disk, and per-variant model inputs.

use std::path::{Path, PathBuf};

use crate::hypergraph::DirectedHypergraph;
use crate::matrix::Matrix;
use crate::model::{ModelGraph, Task, Variant, VnMode};
use crate::netlist::{
    base_features, parse_netlist, parse_targets, read_feature_matrix, write_feature_matrix, Block,
    FeatureTable, Netlist, SynthDesign, TargetTable,
};
use crate::partition::{
    build_vn_hierarchy, choose_k, expand_weights, partition, read_partition, Partition,
    VnHierarchy, DEFAULT_EPSILON,
};
use crate::spectral::lap_pe;
use crate::topo::{degree_distribution_matrix, pd_feature_matrix, PersistenceImageParams};

use super::config::{NetTargetKind, RunConfig};
use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureOptions {
    pub pd: bool,
    pub lappe: bool,
    pub deg_dist: bool,
    pub k_hops: usize,
    pub image_res: usize,
    pub pe_dim: usize,
    pub seed: u64,
}

impl FeatureOptions {
    pub fn from_run(c: &RunConfig) -> Self {
        Self {
            pd: c.pd,
            lappe: c.lappe,
            deg_dist: c.deg_dist,
            k_hops: c.k_hops,
            image_res: c.image_res,
            pe_dim: c.pe_dim,
            seed: c.seed,
        }
    }
}

/// Base columns plus, as toggled, `degdist`, `lappe` (cells and nets) and
/// `pd` blocks.
pub fn compute_features(
    g: &DirectedHypergraph,
    o: &FeatureOptions,
) -> Result<FeatureTable, TrainError> {
    let mut t = base_features(g);
    let star = g.star_graph();
    if o.deg_dist {
        t.append_cell_block("degdist", &degree_distribution_matrix(&star, o.k_hops));
    }
    if o.lappe {
        // Small designs get zero-padded encodings.
        let nodes = g.n_cells() + g.n_nets();
        let s = o.pe_dim.min(nodes.saturating_sub(2));
        let (c, n) = lap_pe(g, s, o.seed)?;
        let pad = |m: &Matrix| m.hcat(&Matrix::zeros(m.rows(), o.pe_dim - s));
        t.append_cell_block("lappe", &pad(&c));
        t.append_net_block("lappe", &pad(&n));
    }
    if o.pd {
        let p = PersistenceImageParams {
            resolution: o.image_res,
            sigma: None,
            k: o.k_hops as u32,
        };
        t.append_cell_block("pd", &pd_feature_matrix(&star, &p));
    }
    Ok(t)
}

/// Per-column mean and deviation fitted over the rows of several matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScaler {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl ColumnScaler {
    pub fn fit(ms: &[&Matrix]) -> Self {
        let c = ms.first().map_or(0, |m| m.cols());
        let n: usize = ms.iter().map(|m| m.rows()).sum();
        let (mut mean, mut sd) = (vec![0.0; c], vec![0.0; c]);
        if n == 0 {
            return Self { mean, sd };
        }
        for j in 0..c {
            let mu = ms
                .iter()
                .flat_map(|m| (0..m.rows()).map(move |i| m[(i, j)]))
                .sum::<f64>()
                / n as f64;
            let var = ms
                .iter()
                .flat_map(|m| (0..m.rows()).map(move |i| (m[(i, j)] - mu).powi(2)))
                .sum::<f64>()
                / n as f64;
            (mean[j], sd[j]) = (mu, var.sqrt());
        }
        Self { mean, sd }
    }

    /// Z-scores `m`; columns that were constant during fitting become zero.
    pub fn apply(&self, m: &Matrix) -> Matrix {
        assert_eq!(m.cols(), self.mean.len(), "scaler width mismatch");
        let mut out = m.clone();
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let sd = self.sd[j];
                out[(i, j)] = if sd > 1e-12 {
                    (m[(i, j)] - self.mean[j]) / sd
                } else {
                    0.0
                };
            }
        }
        out
    }
}

/// Z-scores every column of one matrix; constant columns become zero.
pub fn standardize_columns(m: &Matrix) -> Matrix {
    ColumnScaler::fit(&[m]).apply(m)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes cell features to `path`, net features to `path.nets` and the block
/// header to `path.header`.
pub fn write_feature_files(t: &FeatureTable, path: &Path) -> Result<(), TrainError> {
    write_feature_matrix(&t.cell, path)?;
    write_feature_matrix(&t.net, sidecar(path, ".nets"))?;
    std::fs::write(sidecar(path, ".header"), t.header())?;
    Ok(())
}

pub fn read_feature_files(path: &Path) -> Result<FeatureTable, TrainError> {
    let cell = read_feature_matrix(path)?;
    let net = read_feature_matrix(sidecar(path, ".nets"))?;
    let header = std::fs::read_to_string(sidecar(path, ".header"))?;
    let (mut cell_blocks, mut net_blocks) = (Vec::new(), Vec::new());
    for (ln, line) in header
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let bad = || TrainError::FeatureMismatch(format!("header line {}: `{line}`", ln + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let start: usize = f[2].parse().map_err(|_| bad())?;
        let width: usize = f[3].parse().map_err(|_| bad())?;
        let block = Block {
            name: f[1].to_string(),
            start,
            width,
        };
        match f[0] {
            "cell" => cell_blocks.push(block),
            "net" => net_blocks.push(block),
            _ => return Err(bad()),
        }
    }
    for (blocks, cols, kind) in [
        (&cell_blocks, cell.cols(), "cell"),
        (&net_blocks, net.cols(), "net"),
    ] {
        let mut at = 0;
        for b in blocks.iter() {
            if b.start != at {
                return Err(TrainError::FeatureMismatch(format!(
                    "{kind} block `{}` starts at {}, expected {at}",
                    b.name, b.start
                )));
            }
            at += b.width;
        }
        if at != cols {
            return Err(TrainError::FeatureMismatch(format!(
                "{kind} header covers {at} columns, matrix has {cols}"
            )));
        }
    }
    Ok(FeatureTable {
        cell,
        net,
        cell_blocks,
        net_blocks,
    })
}

/// Everything a run needs about one design, independent of the variant.
#[derive(Debug, Clone)]
pub struct Design {
    pub name: String,
    pub netlist: Netlist,
    pub targets: TargetTable,
    pub features: FeatureTable,
    pub partition: Partition,
}

pub fn partition_design(
    g: &DirectedHypergraph,
    target_size: usize,
    seed: u64,
) -> Result<Partition, TrainError> {
    let wg = expand_weights(g);
    Ok(partition(
        &wg,
        choose_k(g.n_cells(), target_size).min(g.n_cells().max(1)),
        DEFAULT_EPSILON,
        seed,
    )?)
}

impl Design {
    pub fn new(
        netlist: Netlist,
        targets: TargetTable,
        features: FeatureTable,
        partition: Partition,
    ) -> Result<Self, TrainError> {
        let g = &netlist.graph;
        if features.cell.rows() != g.n_cells() || features.net.rows() != g.n_nets() {
            return Err(TrainError::FeatureMismatch(format!(
                "features have {}/{} rows, design has {} cells and {} nets",
                features.cell.rows(),
                features.net.rows(),
                g.n_cells(),
                g.n_nets()
            )));
        }
        Ok(Self {
            name: netlist.name.clone(),
            netlist,
            targets,
            features,
            partition,
        })
    }

    pub fn from_synth(
        s: SynthDesign,
        opts: &FeatureOptions,
        partition_size: usize,
    ) -> Result<Self, TrainError> {
        let features = compute_features(&s.netlist.graph, opts)?;
        let part = partition_design(&s.netlist.graph, partition_size, opts.seed)?;
        Self::new(s.netlist, s.targets, features, part)
    }

    /// Loads `netlist` and `targets`; features and partition are read when
    /// given and computed otherwise.
    pub fn load(
        netlist: &Path,
        targets: &Path,
        features: Option<&Path>,
        partition_file: Option<&Path>,
        opts: &FeatureOptions,
        partition_size: usize,
    ) -> Result<Self, TrainError> {
        let nl = parse_netlist(&std::fs::read_to_string(netlist)?)?;
        let tt = parse_targets(&std::fs::read_to_string(targets)?, &nl)?;
        let ft = match features {
            Some(p) => read_feature_files(p)?,
            None => compute_features(&nl.graph, opts)?,
        };
        let part = match partition_file {
            Some(p) => {
                let part_of = read_partition(&std::fs::read_to_string(p)?, nl.graph.n_cells())?;
                Partition::from_assignment(&expand_weights(&nl.graph), part_of, DEFAULT_EPSILON)?
            }
            None => partition_design(&nl.graph, partition_size, opts.seed)?,
        };
        Self::new(nl, tt, ft, part)
    }
}

/// Regression values or class labels, one per output row; only `labelled`
/// rows carry a target.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetColumn {
    Values(Vec<f64>),
    Classes(Vec<usize>),
}

/// A design lowered to model inputs for one variant and task.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub name: String,
    pub graph: ModelGraph,
    pub cell_x: Matrix,
    pub net_x: Matrix,
    pub target: TargetColumn,
    pub labelled: Vec<usize>,
}

pub fn target_column(
    design: &Design,
    task: Task,
    net_target: NetTargetKind,
) -> (TargetColumn, Vec<usize>) {
    let t = &design.targets;
    match task {
        Task::NetRegression => {
            let labelled = (0..t.net.len()).filter(|&i| t.net[i].is_some()).collect();
            let vals = t
                .net
                .iter()
                .map(|x| {
                    x.map_or(0.0, |x| match net_target {
                        NetTargetKind::Demand => x.demand,
                        NetTargetKind::Wirelength => x.hpwl_log2,
                    })
                })
                .collect();
            (TargetColumn::Values(vals), labelled)
        }
        Task::NodeRegression => {
            let labelled = (0..t.cell.len()).filter(|&i| t.cell[i].is_some()).collect();
            (
                TargetColumn::Values(
                    t.cell
                        .iter()
                        .map(|x| x.map_or(0.0, |x| x.congestion))
                        .collect(),
                ),
                labelled,
            )
        }
        Task::NodeClassification => {
            let labelled = (0..t.cell.len()).filter(|&i| t.cell[i].is_some()).collect();
            let classes = t
                .cell
                .iter()
                .map(|x| x.map_or(0, |x| usize::from(x.congested)))
                .collect();
            (TargetColumn::Classes(classes), labelled)
        }
    }
}

pub fn prepare(
    design: &Design,
    variant: Variant,
    task: Task,
    net_target: NetTargetKind,
) -> Result<Prepared, TrainError> {
    let has_pd = design.features.cell_block("pd").is_some();
    let features = if variant.uses_pd() {
        if !has_pd {
            return Err(TrainError::FeatureMismatch(format!(
                "variant {variant} needs the `pd` feature block"
            )));
        }
        design.features.clone()
    } else {
        design.features.without_cell_blocks(&["pd"])
    };
    let g = &design.netlist.graph;
    let hierarchy = match variant.vn_mode() {
        VnMode::None => None,
        VnMode::Single => Some(VnHierarchy::single(g.n_cells())),
        VnMode::Hierarchical => Some(build_vn_hierarchy(&design.partition)),
    };
    let (target, labelled) = target_column(design, task, net_target);
    Ok(Prepared {
        name: design.name.clone(),
        graph: ModelGraph::new(g, hierarchy.as_ref()),
        cell_x: features.cell,
        net_x: features.net,
        target,
        labelled,
    })
}

/// Prepares every design, then z-scores all features with statistics of the
/// training designs: the only design, or every design but the last two.
pub fn prepare_designs(
    designs: &[Design],
    variant: Variant,
    task: Task,
    net_target: NetTargetKind,
) -> Result<Vec<Prepared>, TrainError> {
    let mut prepared: Vec<Prepared> = designs
        .iter()
        .map(|d| prepare(d, variant, task, net_target))
        .collect::<Result<_, _>>()?;
    if prepared.is_empty() {
        return Ok(prepared);
    }
    let n_train = prepared.len().saturating_sub(2).max(1);
    for p in &prepared[1..] {
        if (p.cell_x.cols(), p.net_x.cols())
            != (prepared[0].cell_x.cols(), prepared[0].net_x.cols())
        {
            return Err(TrainError::FeatureMismatch(format!(
                "design `{}` has different feature widths",
                p.name
            )));
        }
    }
    let train = &prepared[..n_train];
    let cells = ColumnScaler::fit(&train.iter().map(|p| &p.cell_x).collect::<Vec<_>>());
    let nets = ColumnScaler::fit(&train.iter().map(|p| &p.net_x).collect::<Vec<_>>());
    for p in &mut prepared {
        p.cell_x = cells.apply(&p.cell_x);
        p.net_x = nets.apply(&p.net_x);
    }
    Ok(prepared)
}
