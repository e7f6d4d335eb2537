// SPDX-License-Identifier: Apache-2.0

//! Per-net and per-cell prediction targets.
//!
//! ```text
//! NET_TARGET <net-id> hpwl=<float> demand=<float>
//! CELL_TARGET <cell-id> congestion=<float>
//! ```
//!
//! Wirelength is stored as `log2(hpwl)`; regression metrics are computed in
//! that space. A cell is congested when its ratio is at least
//! [`CONGESTION_THRESHOLD`].

use std::fmt::Write as _;

use thiserror::Error;

use super::{keyed, parse_float, parse_num, strip_comment, tokenize, Netlist, ParseError};

pub const CONGESTION_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum TargetError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("line {line}: unknown {kind} id {id}")]
    UnknownId {
        line: usize,
        kind: &'static str,
        id: u64,
    },
    #[error("line {line}: wirelength must be positive, found {value}")]
    NonPositiveWirelength { line: usize, value: f64 },
    #[error("line {line}: {what} must be non-negative, found {value}")]
    Negative {
        line: usize,
        what: &'static str,
        value: f64,
    },
    #[error("line {line}: duplicate target for {kind} {id}")]
    Duplicate {
        line: usize,
        kind: &'static str,
        id: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetTarget {
    /// Raw wirelength as read from the file, kept for lossless rewriting.
    pub hpwl: f64,
    pub hpwl_log2: f64,
    pub demand: f64,
}

impl NetTarget {
    pub fn new(hpwl: f64, demand: f64) -> Self {
        Self {
            hpwl,
            hpwl_log2: hpwl.log2(),
            demand,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTarget {
    pub congestion: f64,
    pub congested: bool,
}

impl CellTarget {
    pub fn new(congestion: f64) -> Self {
        Self {
            congestion,
            congested: congestion >= CONGESTION_THRESHOLD,
        }
    }
}

/// Targets indexed by canonical net / cell index; `None` where the file has
/// no entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetTable {
    pub net: Vec<Option<NetTarget>>,
    pub cell: Vec<Option<CellTarget>>,
}

impl TargetTable {
    pub fn empty(n_cells: usize, n_nets: usize) -> Self {
        Self {
            net: vec![None; n_nets],
            cell: vec![None; n_cells],
        }
    }
}

pub fn parse_targets(text: &str, netlist: &Netlist) -> Result<TargetTable, TargetError> {
    let g = &netlist.graph;
    let labels = netlist.label_index();
    let mut table = TargetTable::empty(g.n_cells(), g.n_nets());
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let toks = tokenize(strip_comment(raw));
        let Some(head) = toks.first() else { continue };
        let arity = |n: usize| {
            if toks.len() == n {
                Ok(())
            } else {
                Err(ParseError::Syntax {
                    line,
                    col: head.col,
                    msg: format!("`{}` takes {} fields", head.text, n - 1),
                })
            }
        };
        match head.text {
            "NET_TARGET" => {
                arity(4)?;
                let id: u64 = parse_num(toks[1].text, line, toks[1].col, "net id")?;
                let hpwl = parse_float(keyed(&toks[2], "hpwl", line)?, line, toks[2].col, "hpwl")?;
                let demand = parse_float(
                    keyed(&toks[3], "demand", line)?,
                    line,
                    toks[3].col,
                    "demand",
                )?;
                let idx = *labels.get(&id).ok_or(TargetError::UnknownId {
                    line,
                    kind: "net",
                    id,
                })?;
                if hpwl <= 0.0 {
                    return Err(TargetError::NonPositiveWirelength { line, value: hpwl });
                }
                if demand < 0.0 {
                    return Err(TargetError::Negative {
                        line,
                        what: "demand",
                        value: demand,
                    });
                }
                if table.net[idx].is_some() {
                    return Err(TargetError::Duplicate {
                        line,
                        kind: "net",
                        id,
                    });
                }
                table.net[idx] = Some(NetTarget::new(hpwl, demand));
            }
            "CELL_TARGET" => {
                arity(3)?;
                let id: u64 = parse_num(toks[1].text, line, toks[1].col, "cell id")?;
                let ratio = parse_float(
                    keyed(&toks[2], "congestion", line)?,
                    line,
                    toks[2].col,
                    "congestion",
                )?;
                if id as usize >= g.n_cells() {
                    return Err(TargetError::UnknownId {
                        line,
                        kind: "cell",
                        id,
                    });
                }
                if ratio < 0.0 {
                    return Err(TargetError::Negative {
                        line,
                        what: "congestion",
                        value: ratio,
                    });
                }
                if table.cell[id as usize].is_some() {
                    return Err(TargetError::Duplicate {
                        line,
                        kind: "cell",
                        id,
                    });
                }
                table.cell[id as usize] = Some(CellTarget::new(ratio));
            }
            other => {
                return Err(ParseError::Syntax {
                    line,
                    col: head.col,
                    msg: format!("unknown record `{other}`"),
                }
                .into())
            }
        }
    }
    Ok(table)
}

pub fn write_targets(table: &TargetTable, netlist: &Netlist) -> String {
    let mut s = String::new();
    for (t, label) in table.net.iter().zip(&netlist.net_labels) {
        if let Some(t) = t {
            writeln!(s, "NET_TARGET {label} hpwl={} demand={}", t.hpwl, t.demand).unwrap();
        }
    }
    for (i, t) in table.cell.iter().enumerate() {
        if let Some(t) = t {
            writeln!(s, "CELL_TARGET {i} congestion={}", t.congestion).unwrap();
        }
    }
    s
}
