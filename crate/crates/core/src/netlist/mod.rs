// SPDX-License-Identifier: Apache-2.0

//! Netlist and target file formats, input feature assembly, and the
//! synthetic design generator.
//!
//! Netlist grammar (UTF-8, LF, `#` starts a comment):
//!
//! ```text
//! NETLIST <name>
//! CELL <id> type=<str> width=<float> height=<float> orient=<0..7>
//! NET <id> driver=<cell-id> sinks=<comma-separated cell-ids, possibly empty>
//! ```
//!
//! Cell ids must cover `0..n` exactly once. Net ids are free-form labels;
//! nets are stored in canonical order and the labels are kept alongside.

mod features;
pub(crate) mod matrix_io;
mod synth;
mod targets;

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::hypergraph::{BuildError, CellRecord, DirectedHypergraph, NetRecord};

pub use features::{base_features, Block, FeatureTable};
pub use matrix_io::{read_feature_matrix, write_feature_matrix, FormatError};
pub use synth::{generate_synthetic, SynthDesign, SynthError, SynthParams};
pub use targets::{
    parse_targets, write_targets, CellTarget, NetTarget, TargetError, TargetTable,
    CONGESTION_THRESHOLD,
};

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error(transparent)]
    Build(#[from] BuildError),
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        col,
        msg: msg.into(),
    }
}

/// A parsed design: the canonical hypergraph plus the file-level net labels
/// (`net_labels[i]` is the id net `i` carried in the file).
#[derive(Debug, Clone, PartialEq)]
pub struct Netlist {
    pub name: String,
    pub graph: DirectedHypergraph,
    pub net_labels: Vec<u64>,
}

impl Netlist {
    /// Wraps a hypergraph, labelling nets by their canonical index.
    pub fn from_graph(name: impl Into<String>, graph: DirectedHypergraph) -> Self {
        let net_labels = (0..graph.n_nets() as u64).collect();
        Self {
            name: name.into(),
            graph,
            net_labels,
        }
    }

    pub fn label_index(&self) -> HashMap<u64, usize> {
        self.net_labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i))
            .collect()
    }
}

/// A whitespace-separated token with its 1-based starting column.
pub(crate) struct Token<'a> {
    pub(crate) text: &'a str,
    pub(crate) col: usize,
}

pub(crate) fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &line[s..i],
                    col: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &line[s..],
            col: s + 1,
        });
    }
    out
}

/// Strips a trailing `#` comment.
pub(crate) fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(a, _)| a)
}

pub(crate) fn keyed<'a>(tok: &Token<'a>, key: &str, line: usize) -> Result<&'a str, ParseError> {
    tok.text
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| {
            syntax(
                line,
                tok.col,
                format!("expected `{key}=...`, found `{}`", tok.text),
            )
        })
}

pub(crate) fn parse_num<T: std::str::FromStr>(
    text: &str,
    line: usize,
    col: usize,
    what: &str,
) -> Result<T, ParseError> {
    text.parse()
        .map_err(|_| syntax(line, col, format!("invalid {what} `{text}`")))
}

pub(crate) fn parse_float(
    text: &str,
    line: usize,
    col: usize,
    what: &str,
) -> Result<f64, ParseError> {
    let v: f64 = parse_num(text, line, col, what)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(syntax(line, col, format!("{what} must be finite")))
    }
}

fn expect_arity(toks: &[Token<'_>], n: usize, line: usize) -> Result<(), ParseError> {
    if toks.len() == n {
        Ok(())
    } else {
        let col = toks
            .get(n)
            .map_or(toks.last().map_or(1, |t| t.col), |t| t.col);
        Err(syntax(
            line,
            col,
            format!(
                "`{}` takes {} fields, found {}",
                toks[0].text,
                n - 1,
                toks.len() - 1
            ),
        ))
    }
}

pub fn parse_netlist(text: &str) -> Result<Netlist, ParseError> {
    let mut name = None;
    let mut cells: Vec<(usize, usize, CellRecord)> = Vec::new();
    let mut nets: Vec<NetRecord> = Vec::new();
    let mut labels: Vec<u64> = Vec::new();
    let mut seen_labels = HashSet::new();

    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let toks = tokenize(strip_comment(raw));
        let Some(head) = toks.first() else { continue };
        match head.text {
            "NETLIST" => {
                if name.is_some() {
                    return Err(syntax(line, head.col, "duplicate NETLIST header"));
                }
                expect_arity(&toks, 2, line)?;
                name = Some(toks[1].text.to_string());
            }
            _ if name.is_none() => {
                return Err(syntax(
                    line,
                    head.col,
                    "expected `NETLIST <name>` header first",
                ));
            }
            "CELL" => {
                expect_arity(&toks, 6, line)?;
                let id: usize = parse_num(toks[1].text, line, toks[1].col, "cell id")?;
                let type_tag = keyed(&toks[2], "type", line)?;
                if type_tag.is_empty() {
                    return Err(syntax(line, toks[2].col, "empty cell type"));
                }
                let width =
                    parse_float(keyed(&toks[3], "width", line)?, line, toks[3].col, "width")?;
                let height = parse_float(
                    keyed(&toks[4], "height", line)?,
                    line,
                    toks[4].col,
                    "height",
                )?;
                let orient: u8 = parse_num(
                    keyed(&toks[5], "orient", line)?,
                    line,
                    toks[5].col,
                    "orient",
                )?;
                if orient >= 8 {
                    return Err(syntax(line, toks[5].col, "orient must be in 0..8"));
                }
                if width < 0.0 || height < 0.0 {
                    return Err(syntax(
                        line,
                        toks[3].col,
                        "cell dimensions must be non-negative",
                    ));
                }
                cells.push((id, line, CellRecord::new(type_tag, width, height, orient)));
            }
            "NET" => {
                expect_arity(&toks, 4, line)?;
                let label: u64 = parse_num(toks[1].text, line, toks[1].col, "net id")?;
                if !seen_labels.insert(label) {
                    return Err(syntax(
                        line,
                        toks[1].col,
                        format!("duplicate net id {label}"),
                    ));
                }
                let driver = parse_num(
                    keyed(&toks[2], "driver", line)?,
                    line,
                    toks[2].col,
                    "driver id",
                )?;
                let sink_text = keyed(&toks[3], "sinks", line)?;
                let mut sinks = Vec::new();
                if !sink_text.is_empty() {
                    for s in sink_text.split(',') {
                        sinks.push(parse_num(s, line, toks[3].col, "sink id")?);
                    }
                }
                nets.push(NetRecord::new(driver, sinks));
                labels.push(label);
            }
            other => return Err(syntax(line, head.col, format!("unknown record `{other}`"))),
        }
    }

    let name = name.ok_or_else(|| syntax(1, 1, "missing `NETLIST <name>` header"))?;
    cells.sort_by_key(|c| c.0);
    for (expect, (id, line, _)) in cells.iter().enumerate() {
        if *id != expect {
            let msg = if *id < expect {
                "duplicate cell id"
            } else {
                "cell ids must be dense from 0"
            };
            return Err(syntax(*line, 1, format!("{msg} ({id})")));
        }
    }
    let cells = cells.into_iter().map(|c| c.2).collect();
    let (graph, source) = DirectedHypergraph::build_indexed(cells, nets)?;
    let net_labels = source.into_iter().map(|j| labels[j]).collect();
    Ok(Netlist {
        name,
        graph,
        net_labels,
    })
}

/// Serializes in canonical order: cells by id, nets by canonical index.
pub fn write_netlist(n: &Netlist) -> String {
    let mut s = String::new();
    writeln!(s, "NETLIST {}", n.name).unwrap();
    for (i, c) in n.graph.cells().iter().enumerate() {
        writeln!(
            s,
            "CELL {i} type={} width={} height={} orient={}",
            c.type_tag, c.width, c.height, c.orient
        )
        .unwrap();
    }
    for (net, label) in n.graph.nets().iter().zip(&n.net_labels) {
        let sinks: Vec<String> = net.sinks.iter().map(|c| c.0.to_string()).collect();
        writeln!(
            s,
            "NET {label} driver={} sinks={}",
            net.driver.0,
            sinks.join(",")
        )
        .unwrap();
    }
    s
}
