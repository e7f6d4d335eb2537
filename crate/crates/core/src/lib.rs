// SPDX-License-Identifier: Apache-2.0

//! Directed-hypergraph neural networks for circuit netlists.
//!
//! The crate covers the whole pipeline: netlist ingestion
//! ([`netlist`]), structural and positional features ([`topo`],
//! [`spectral`]), the virtual-node hierarchy over a balanced partition
//! ([`partition`]), a small reverse-mode autodiff engine ([`tensor`]), the
//! model family ([`model`]) and experiment orchestration ([`train`]).

pub mod hypergraph;
pub mod matrix;
pub mod model;
pub mod netlist;
pub mod partition;
pub mod spectral;
pub mod tensor;
pub mod topo;
pub mod train;

pub use hypergraph::{CellId, CellRecord, DirectedHypergraph, NetId, NetRecord, Role};
pub use matrix::Matrix;
