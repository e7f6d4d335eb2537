// SPDX-License-Identifier: Apache-2.0

//! The directed hypergraph layer stack and its ablation variants.
//!
//! Cells hold `m(v)`, nets hold `M(σ)`. A node update sums `MLP1(M(σ))` over
//! the nets incident to a cell. A directed net update feeds the driver state
//! and the sum of `MLP2(m(v'))` over its sinks to `MLP3`. Every update adds
//! its input state back as a residual. Virtual nodes, when enabled, summarize
//! each part and a super node summarizes the parts.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::hypergraph::DirectedHypergraph;
use crate::matrix::Matrix;
use crate::partition::VnHierarchy;
use crate::tensor::{Mlp, ParamStore, Segments, Tape, TensorError, Var};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("variant {variant} {reason}")]
    VariantMismatch {
        variant: Variant,
        reason: &'static str,
    },
    #[error("{kind} features: expected {expected_rows}x{expected_cols}, found {rows}x{cols}")]
    FeatureShape {
        kind: &'static str,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("invalid model config: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Ehnn,
    Base,
    BasePd,
    BasePdSvn,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VnMode {
    None,
    Single,
    Hierarchical,
}

impl Variant {
    /// In ablation order, weakest first.
    pub const ALL: [Variant; 5] = [
        Variant::Ehnn,
        Variant::Base,
        Variant::BasePd,
        Variant::BasePdSvn,
        Variant::Full,
    ];

    pub fn directed(self) -> bool {
        self != Variant::Ehnn
    }

    pub fn uses_pd(self) -> bool {
        matches!(self, Variant::BasePd | Variant::BasePdSvn | Variant::Full)
    }

    pub fn vn_mode(self) -> VnMode {
        match self {
            Variant::BasePdSvn => VnMode::Single,
            Variant::Full => VnMode::Hierarchical,
            _ => VnMode::None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ehnn => "EHNN",
            Variant::Base => "BASE",
            Variant::BasePd => "BASE_PD",
            Variant::BasePdSvn => "BASE_PD_SVN",
            Variant::Full => "FULL",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    NetRegression,
    NodeRegression,
    NodeClassification,
}

impl Task {
    pub const ALL: [Task; 3] = [
        Task::NetRegression,
        Task::NodeRegression,
        Task::NodeClassification,
    ];

    pub fn on_nets(self) -> bool {
        self == Task::NetRegression
    }

    pub fn out_width(self) -> usize {
        match self {
            Task::NodeClassification => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::NetRegression => "NET_REGRESSION",
            Task::NodeRegression => "NODE_REGRESSION",
            Task::NodeClassification => "NODE_CLASSIFICATION",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub variant: Variant,
    pub task: Task,
    /// Affine layers per MLP block.
    pub mlp_depth: usize,
    pub cell_in: usize,
    pub net_in: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, task: Task, cell_in: usize, net_in: usize) -> Self {
        Self {
            layers: 3,
            hidden: 64,
            variant,
            task,
            mlp_depth: 2,
            cell_in,
            net_in,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.mlp_depth == 0 {
            return Err(ModelError::Config(
                "layers, hidden and mlp_depth must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// `key = value` lines, stored next to checkpoints.
    pub fn to_text(&self) -> String {
        format!(
            "layers = {}\nhidden = {}\nvariant = {}\ntask = {}\nmlp_depth = {}\ncell_in = {}\nnet_in = {}\n",
            self.layers, self.hidden, self.variant, self.task, self.mlp_depth, self.cell_in, self.net_in
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::new(Variant::Full, Task::NetRegression, 0, 0);
        let bad = |m: String| ModelError::Config(m);
        let mut seen = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, found `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = || v.parse::<usize>().map_err(|e| bad(format!("{k}: {e}")));
            match k {
                "layers" => cfg.layers = num()?,
                "hidden" => cfg.hidden = num()?,
                "mlp_depth" => cfg.mlp_depth = num()?,
                "cell_in" => cfg.cell_in = num()?,
                "net_in" => cfg.net_in = num()?,
                "variant" => cfg.variant = v.parse().map_err(bad)?,
                "task" => cfg.task = v.parse().map_err(bad)?,
                _ => return Err(bad(format!("unknown key `{k}`"))),
            }
            seen.push(k.to_string());
        }
        for key in [
            "layers",
            "hidden",
            "variant",
            "task",
            "mlp_depth",
            "cell_in",
            "net_in",
        ] {
            if !seen.iter().any(|s| s == key) {
                return Err(bad(format!("missing key `{key}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Index structures the layers gather and scatter through, built once per
/// design.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub n_cells: usize,
    pub n_nets: usize,
    inc_cell: Rc<Vec<usize>>,
    inc_net: Rc<Vec<usize>>,
    by_cell: Rc<Segments>,
    by_net: Rc<Segments>,
    driver: Rc<Vec<usize>>,
    sink_cell: Rc<Vec<usize>>,
    sinks_by_net: Rc<Segments>,
    vn: Option<VnIndex>,
}

#[derive(Debug, Clone)]
struct VnIndex {
    k: usize,
    part_of: Rc<Vec<usize>>,
    by_part: Rc<Segments>,
    inv_size: Rc<Vec<f64>>,
    super_of: Rc<Vec<usize>>,
}

impl ModelGraph {
    pub fn new(g: &DirectedHypergraph, vn: Option<&VnHierarchy>) -> Self {
        let (n_cells, n_nets) = (g.n_cells(), g.n_nets());
        let (mut inc_cell, mut inc_net) = (Vec::new(), Vec::new());
        for (c, e, _) in g.incidence_pairs() {
            inc_cell.push(c.0);
            inc_net.push(e.0);
        }
        let by_cell = Segments::new(&inc_cell, n_cells);
        let by_net = Segments::new(&inc_net, n_nets);
        let driver = g.nets().iter().map(|n| n.driver.0).collect();
        let (mut sink_cell, mut sink_net) = (Vec::new(), Vec::new());
        for (j, net) in g.nets().iter().enumerate() {
            for s in &net.sinks {
                sink_cell.push(s.0);
                sink_net.push(j);
            }
        }
        let sinks_by_net = Segments::new(&sink_net, n_nets);
        let vn = vn.map(|h| {
            assert_eq!(
                h.part_of.len(),
                n_cells,
                "hierarchy covers a different cell count"
            );
            let k = h.k();
            let by_part = Segments::new(&h.part_of, k);
            let inv_size = (0..k)
                .map(|p| 1.0 / by_part.count(p).max(1) as f64)
                .collect();
            VnIndex {
                k,
                part_of: Rc::new(h.part_of.clone()),
                by_part: Rc::new(by_part),
                inv_size: Rc::new(inv_size),
                super_of: Rc::new(vec![0; k]),
            }
        });
        Self {
            n_cells,
            n_nets,
            inc_cell: Rc::new(inc_cell),
            inc_net: Rc::new(inc_net),
            by_cell: Rc::new(by_cell),
            by_net: Rc::new(by_net),
            driver: Rc::new(driver),
            sink_cell: Rc::new(sink_cell),
            sinks_by_net: Rc::new(sinks_by_net),
            vn,
        }
    }

    pub fn n_parts(&self) -> Option<usize> {
        self.vn.as_ref().map(|v| v.k)
    }
}

/// Per-layer states; `vn1` and `vn0` are absent when the variant has no
/// virtual nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerState {
    pub node: Var,
    pub net: Var,
    pub vn1: Option<Var>,
    pub vn0: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerParams {
    mlp1: Mlp,
    mlp2: Mlp,
    mlp3: Mlp,
    down: Option<Mlp>,
    up1: Option<Mlp>,
    up0: Option<Mlp>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    enc_cell: Mlp,
    enc_net: Mlp,
    layers: Vec<LayerParams>,
    head: Mlp,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// One row per net for net tasks, one per cell otherwise.
    pub output: Var,
    /// `states[0]` is the encoded input; `states[l]` follows layer `l`.
    pub states: Vec<LayerState>,
}

impl Model {
    /// Registers every parameter block in `store`.
    pub fn new(config: ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let widths = |input: usize| {
            let mut w = vec![input];
            w.extend(std::iter::repeat_n(d, config.mlp_depth));
            w
        };
        let enc_cell = Mlp::new(store, "enc.cell", &[config.cell_in, d], rng);
        let enc_net = Mlp::new(store, "enc.net", &[config.net_in, d], rng);
        let mode = config.variant.vn_mode();
        let layers = (0..config.layers)
            .map(|l| {
                let name = |b: &str| format!("layer{l}.{b}");
                let mlp3_in = if config.variant.directed() { 2 * d } else { d };
                let (down, up1, up0) = match mode {
                    VnMode::None => (None, None, None),
                    VnMode::Single => (
                        Some(Mlp::new(store, &name("down"), &widths(d), rng)),
                        Some(Mlp::new(store, &name("up1"), &widths(2 * d), rng)),
                        None,
                    ),
                    VnMode::Hierarchical => (
                        Some(Mlp::new(store, &name("down"), &widths(d), rng)),
                        Some(Mlp::new(store, &name("up1"), &widths(3 * d), rng)),
                        Some(Mlp::new(store, &name("up0"), &widths(2 * d), rng)),
                    ),
                };
                LayerParams {
                    mlp1: Mlp::new(store, &name("mlp1"), &widths(d), rng),
                    mlp2: Mlp::new(store, &name("mlp2"), &widths(d), rng),
                    mlp3: Mlp::new(store, &name("mlp3"), &widths(mlp3_in), rng),
                    down,
                    up1,
                    up0,
                }
            })
            .collect();
        let head = Mlp::new(store, "head", &[d, config.task.out_width()], rng);
        Ok(Self {
            config,
            enc_cell,
            enc_net,
            layers,
            head,
        })
    }

    fn check_graph(&self, graph: &ModelGraph) -> Result<()> {
        let variant = self.config.variant;
        match (variant.vn_mode(), &graph.vn) {
            (VnMode::None, _) => Ok(()),
            (_, None) => Err(ModelError::VariantMismatch {
                variant,
                reason: "needs a virtual-node hierarchy",
            }),
            (VnMode::Single, Some(v)) if v.k != 1 => Err(ModelError::VariantMismatch {
                variant,
                reason: "uses exactly one virtual node",
            }),
            _ => Ok(()),
        }
    }

    /// Sum of `MLP1` over incident nets, plus the residual and, when virtual
    /// nodes are active, `MLP_down` of the cell's part node.
    pub fn node_update(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        layer: usize,
        graph: &ModelGraph,
        s: &LayerState,
    ) -> Result<Var> {
        let p = &self.layers[layer];
        let msg = p.mlp1.forward(tape, vars, s.net)?;
        let per_pair = tape.gather_rows(msg, &graph.inc_net)?;
        let summed = tape.segment_sum(per_pair, &graph.by_cell)?;
        let mut out = tape.add(summed, s.node)?;
        if let (Some(down), Some(vn1), Some(vn)) = (&p.down, s.vn1, &graph.vn) {
            let from_part = down.forward(tape, vars, vn1)?;
            let per_cell = tape.gather_rows(from_part, &vn.part_of)?;
            out = tape.add(out, per_cell)?;
        }
        Ok(out)
    }

    /// Directed: `MLP3(m(driver) ⊕ Σ_sinks MLP2(m))`. Undirected: `MLP3(Σ_members
    /// MLP2(m))`. Both add the residual.
    pub fn net_update(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        layer: usize,
        graph: &ModelGraph,
        s: &LayerState,
    ) -> Result<Var> {
        let p = &self.layers[layer];
        let msg = p.mlp2.forward(tape, vars, s.node)?;
        let input = if self.config.variant.directed() {
            let drv = tape.gather_rows(s.node, &graph.driver)?;
            let per_sink = tape.gather_rows(msg, &graph.sink_cell)?;
            let sinks = tape.segment_sum(per_sink, &graph.sinks_by_net)?;
            tape.concat_cols(&[drv, sinks])?
        } else {
            let per_pair = tape.gather_rows(msg, &graph.inc_cell)?;
            tape.segment_sum(per_pair, &graph.by_net)?
        };
        let upd = p.mlp3.forward(tape, vars, input)?;
        Ok(tape.add(upd, s.net)?)
    }

    /// `vn1 = MLP_up1(mean_part(m) ⊕ vn1 ⊕ vn0)` and `vn0 = MLP_up0(mean(vn1) ⊕
    /// vn0)`. With a single virtual node the super-node terms are dropped.
    pub fn vn_update(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        layer: usize,
        graph: &ModelGraph,
        s: &LayerState,
    ) -> Result<(Var, Option<Var>)> {
        let variant = self.config.variant;
        let p = &self.layers[layer];
        let (Some(up1), Some(vn), Some(vn1_prev)) = (&p.up1, &graph.vn, s.vn1) else {
            return Err(ModelError::VariantMismatch {
                variant,
                reason: "has no virtual nodes",
            });
        };
        let sums = tape.segment_sum(s.node, &vn.by_part)?;
        let means = tape.scale_rows(sums, &vn.inv_size)?;
        match (&p.up0, s.vn0) {
            (Some(up0), Some(vn0_prev)) => {
                let vn0_rows = tape.gather_rows(vn0_prev, &vn.super_of)?;
                let input = tape.concat_cols(&[means, vn1_prev, vn0_rows])?;
                let vn1 = up1.forward(tape, vars, input)?;
                let pooled = tape.mean_rows(vn1);
                let input0 = tape.concat_cols(&[pooled, vn0_prev])?;
                let vn0 = up0.forward(tape, vars, input0)?;
                Ok((vn1, Some(vn0)))
            }
            _ => {
                let input = tape.concat_cols(&[means, vn1_prev])?;
                Ok((up1.forward(tape, vars, input)?, None))
            }
        }
    }

    /// Runs every layer. Parameters come from `vars`, bound from the store the
    /// model was built with.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        graph: &ModelGraph,
        cell_x: &Matrix,
        net_x: &Matrix,
    ) -> Result<ForwardOutput> {
        self.check_graph(graph)?;
        let cfg = &self.config;
        check_shape("cell", cell_x, graph.n_cells, cfg.cell_in)?;
        check_shape("net", net_x, graph.n_nets, cfg.net_in)?;
        let cx = tape.leaf(cell_x.clone());
        let nx = tape.leaf(net_x.clone());
        let node = self.enc_cell.forward(tape, vars, cx)?;
        let net = self.enc_net.forward(tape, vars, nx)?;
        let d = cfg.hidden;
        let (vn1, vn0) = match (cfg.variant.vn_mode(), &graph.vn) {
            (VnMode::None, _) | (_, None) => (None, None),
            (VnMode::Single, Some(v)) => (Some(tape.leaf(Matrix::zeros(v.k, d))), None),
            (VnMode::Hierarchical, Some(v)) => (
                Some(tape.leaf(Matrix::zeros(v.k, d))),
                Some(tape.leaf(Matrix::zeros(1, d))),
            ),
        };
        let mut state = LayerState {
            node,
            net,
            vn1,
            vn0,
        };
        let mut states = vec![state];
        let with_vn = cfg.variant.vn_mode() != VnMode::None;
        for l in 0..cfg.layers {
            if cfg.task.on_nets() {
                state.node = self.node_update(tape, vars, l, graph, &state)?;
                if with_vn {
                    (state.vn1, state.vn0) = self.vn_step(tape, vars, l, graph, &state)?;
                }
                state.net = self.net_update(tape, vars, l, graph, &state)?;
            } else {
                state.net = self.net_update(tape, vars, l, graph, &state)?;
                if with_vn {
                    (state.vn1, state.vn0) = self.vn_step(tape, vars, l, graph, &state)?;
                }
                state.node = self.node_update(tape, vars, l, graph, &state)?;
            }
            states.push(state);
        }
        let last = if cfg.task.on_nets() {
            state.net
        } else {
            state.node
        };
        let output = self.head.forward(tape, vars, last)?;
        Ok(ForwardOutput { output, states })
    }

    fn vn_step(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        l: usize,
        graph: &ModelGraph,
        s: &LayerState,
    ) -> Result<(Option<Var>, Option<Var>)> {
        let (a, b) = self.vn_update(tape, vars, l, graph, s)?;
        Ok((Some(a), b))
    }
}

fn check_shape(kind: &'static str, x: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if x.shape() != (rows, cols) {
        return Err(ModelError::FeatureShape {
            kind,
            expected_rows: rows,
            expected_cols: cols,
            rows: x.rows(),
            cols: x.cols(),
        });
    }
    Ok(())
}

/// Regression targets are an `n x 1` column; class labels are `0` or `1`.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Matrix),
    Classes(Vec<usize>),
}

/// Masked mean squared error or masked mean cross-entropy.
pub fn loss(tape: &mut Tape, output: Var, targets: &Targets, mask: &[usize]) -> Result<Var> {
    Ok(match targets {
        Targets::Regression(y) => tape.mse_loss(output, y, mask)?,
        Targets::Classes(labels) => tape.softmax_xent(output, labels, mask)?,
    })
}
