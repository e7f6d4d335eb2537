// SPDX-License-Identifier: Apache-2.0

// Helpers shared by the model property tests and the acceptance runner.
#![allow(dead_code)]

use std::fmt::Write as _;

use dehnn::model::{Model, ModelConfig, ModelGraph, Task, Variant, VnMode};
use dehnn::netlist::{parse_netlist, Netlist};
use dehnn::partition::VnHierarchy;
use dehnn::tensor::{ParamStore, Tape};
use dehnn::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A design described by identity: cell `i` and net label `j` keep their
/// features wherever they end up in a file.
#[derive(Debug, Clone)]
pub struct Instance {
    pub n_cells: usize,
    /// `(driver, sinks)` per net label.
    pub nets: Vec<(usize, Vec<usize>)>,
    pub cell_x: Matrix,
    pub net_x: Matrix,
    pub part_of: Vec<usize>,
    pub k: usize,
}

pub const CELL_IN: usize = 5;
pub const NET_IN: usize = 3;

fn random_matrix(r: usize, c: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(
        r,
        c,
        (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

pub fn random_instance(rng: &mut impl Rng, max_cells: usize) -> Instance {
    let n_cells = rng.random_range(4..=max_cells);
    let n_nets = rng.random_range(2..=n_cells + n_cells / 2);
    let nets = (0..n_nets)
        .map(|_| {
            let size = rng.random_range(1..=5.min(n_cells));
            let mut ids: Vec<usize> = (0..n_cells).collect();
            ids.shuffle(rng);
            (ids[0], ids[1..size].to_vec())
        })
        .collect();
    let k = rng.random_range(1..=4.min(n_cells));
    let mut part_of: Vec<usize> = (0..n_cells).map(|i| i % k).collect();
    part_of.shuffle(rng);
    Instance {
        n_cells,
        nets,
        cell_x: random_matrix(n_cells, CELL_IN, rng),
        net_x: random_matrix(n_nets, NET_IN, rng),
        part_of,
        k,
    }
}

/// A file view of an instance: `relabel[i]` is the id cell `i` gets in the
/// file, nets appear in `net_order`, and sink lists are shuffled by `rng`.
pub fn write_file(
    inst: &Instance,
    relabel: &[usize],
    net_order: &[usize],
    rng: &mut impl Rng,
) -> String {
    let mut s = String::from("NETLIST inst\n");
    let mut cell_lines: Vec<usize> = (0..inst.n_cells).collect();
    cell_lines.shuffle(rng);
    for &i in &cell_lines {
        writeln!(s, "CELL {} type=C width=1 height=1 orient=0", relabel[i]).unwrap();
    }
    for &j in net_order {
        let (d, sinks) = &inst.nets[j];
        let mut sinks: Vec<usize> = sinks.iter().map(|&c| relabel[c]).collect();
        sinks.shuffle(rng);
        let list: Vec<String> = sinks.iter().map(|c| c.to_string()).collect();
        writeln!(s, "NET {j} driver={} sinks={}", relabel[*d], list.join(",")).unwrap();
    }
    s
}

pub struct Run {
    /// Output rows keyed by identity: cell `i` or net label `j`.
    pub output: Matrix,
    /// Final net embeddings keyed by net label.
    pub net_embedding: Matrix,
}

pub fn model_config(variant: Variant, task: Task) -> ModelConfig {
    ModelConfig {
        layers: 2,
        hidden: 8,
        variant,
        task,
        mlp_depth: 2,
        cell_in: CELL_IN,
        net_in: NET_IN,
    }
}

/// Parses `text`, where cell `i` of `inst` is called `relabel[i]`, runs the
/// model, and returns rows aligned back to identity.
pub fn run_file(
    inst: &Instance,
    text: &str,
    relabel: &[usize],
    cfg: &ModelConfig,
    param_seed: u64,
) -> Run {
    let nl: Netlist = parse_netlist(text).expect("generated file parses");
    let g = &nl.graph;
    let n = inst.n_cells;
    let mut inverse = vec![0; n];
    for (i, &r) in relabel.iter().enumerate() {
        inverse[r] = i;
    }
    let mut cell_x = Matrix::zeros(n, CELL_IN);
    for r in 0..n {
        cell_x
            .row_mut(r)
            .copy_from_slice(inst.cell_x.row(inverse[r]));
    }
    let mut net_x = Matrix::zeros(g.n_nets(), NET_IN);
    for (i, &label) in nl.net_labels.iter().enumerate() {
        net_x
            .row_mut(i)
            .copy_from_slice(inst.net_x.row(label as usize));
    }
    let part_of: Vec<usize> = (0..n).map(|r| inst.part_of[inverse[r]]).collect();
    let hierarchy = match cfg.variant.vn_mode() {
        VnMode::None => None,
        VnMode::Single => Some(VnHierarchy::single(n)),
        VnMode::Hierarchical => {
            let members = (0..inst.k)
                .map(|p| (0..n).filter(|&r| part_of[r] == p).collect())
                .collect();
            Some(VnHierarchy {
                part_of,
                members,
                has_super: inst.k > 1,
            })
        }
    };
    let graph = ModelGraph::new(g, hierarchy.as_ref());
    let mut store = ParamStore::new();
    let model = Model::new(
        cfg.clone(),
        &mut store,
        &mut ChaCha8Rng::seed_from_u64(param_seed),
    )
    .unwrap();
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let out = model
        .forward(&mut tape, &vars, &graph, &cell_x, &net_x)
        .unwrap();
    let raw = tape.value(out.output);
    let emb = tape.value(out.states.last().unwrap().net);
    let mut net_embedding = Matrix::zeros(inst.nets.len(), cfg.hidden);
    for (i, &label) in nl.net_labels.iter().enumerate() {
        net_embedding
            .row_mut(label as usize)
            .copy_from_slice(emb.row(i));
    }
    let output = if cfg.task.on_nets() {
        let mut o = Matrix::zeros(inst.nets.len(), raw.cols());
        for (i, &label) in nl.net_labels.iter().enumerate() {
            o.row_mut(label as usize).copy_from_slice(raw.row(i));
        }
        o
    } else {
        let mut o = Matrix::zeros(n, raw.cols());
        for i in 0..n {
            o.row_mut(i).copy_from_slice(raw.row(relabel[i]));
        }
        o
    };
    Run {
        output,
        net_embedding,
    }
}

/// Runs one instance in file order and under three shuffles (net and sink
/// order, then cell relabeling on top) and reports whether every aligned
/// output is bitwise equal to the reference.
pub fn permutation_trial(seed: u64, variant: Variant, task: Task) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = random_instance(&mut rng, 50);
    let cfg = model_config(variant, task);
    let identity: Vec<usize> = (0..inst.n_cells).collect();
    let in_order: Vec<usize> = (0..inst.nets.len()).collect();
    let reference = run_file(
        &inst,
        &write_file(&inst, &identity, &in_order, &mut rng),
        &identity,
        &cfg,
        seed,
    );
    for shuffle in 0..3 {
        let mut order = in_order.clone();
        order.shuffle(&mut rng);
        let mut relabel = identity.clone();
        if shuffle == 2 {
            relabel.shuffle(&mut rng);
        }
        let text = write_file(&inst, &relabel, &order, &mut rng);
        let run = run_file(&inst, &text, &relabel, &cfg, seed);
        if !run.output.bitwise_eq(&reference.output)
            || !run.net_embedding.bitwise_eq(&reference.net_embedding)
        {
            return false;
        }
    }
    true
}

/// Relative L2 change of one net's final embedding when its driver is swapped
/// with one of its sinks, under `variant`.
pub fn direction_trial(seed: u64, variant: Variant) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inst = random_instance(&mut rng, 30);
    // Guarantee a net with at least one sink.
    let j = rng.random_range(0..inst.nets.len());
    if inst.nets[j].1.is_empty() {
        let d = inst.nets[j].0;
        inst.nets[j].1.push((d + 1) % inst.n_cells);
    }
    let cfg = model_config(variant, Task::NetRegression);
    let identity: Vec<usize> = (0..inst.n_cells).collect();
    let order: Vec<usize> = (0..inst.nets.len()).collect();
    let before = run_file(
        &inst,
        &write_file(&inst, &identity, &order, &mut rng),
        &identity,
        &cfg,
        seed,
    );
    let s = rng.random_range(0..inst.nets[j].1.len());
    let (d, sinks) = &mut inst.nets[j];
    std::mem::swap(d, &mut sinks[s]);
    let after = run_file(
        &inst,
        &write_file(&inst, &identity, &order, &mut rng),
        &identity,
        &cfg,
        seed,
    );
    let (a, b) = (before.net_embedding.row(j), after.net_embedding.row(j));
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(f64::MIN_POSITIVE)
}
