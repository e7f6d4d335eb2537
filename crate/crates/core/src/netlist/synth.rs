// SPDX-License-Identifier: Apache-2.0

//! Synthetic netlists with planted targets.
//!
//! Cells are laid out on an index line split into regions. Each cell drives at
//! most one net; sinks are drawn mostly from a forward index window with
//! preferential attachment on fan-in, occasionally from anywhere in the
//! driver's region. Net sizes follow a shifted power law whose shift is solved
//! so the mean net size matches `mean_net_degree`.
//!
//! Planted net demand is a sum of structural covariates of the net and its
//! driver:
//!
//! ```text
//! demand = alpha  * ln(1 + |net|)
//!        + beta   * ln(1 + |H2(driver)|)      nets within two hops of the driver
//!        + gamma  * ln(1 + cycles(driver))    cycle rank of the driver's out-flow k-ring
//!        + driver_coef * width(driver)        min-max normalized width
//!        + region_coef * util(region(driver))
//!        + noise
//! ```
//!
//! Region utilization is drawn around the design-level `utilization` and is
//! visible only statistically: a cell is tall with that probability. Log2
//! wirelength is another affine map of the same covariates. Cell congestion is
//! the sum of incident net demands over a capacity set at the 85th percentile
//! of those sums, scaled so that percentile sits at the congestion threshold.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::hypergraph::{CellId, CellRecord, DirectedHypergraph, NetRecord, RingMode};

use super::targets::{CellTarget, NetTarget, TargetTable, CONGESTION_THRESHOLD};
use super::Netlist;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_cells: usize,
    pub seed: u64,
    pub mean_net_degree: f64,
    pub degree_tail_exponent: f64,
    pub max_net_size: usize,
    /// Forward index window sinks are drawn from.
    pub window: usize,
    /// Probability that a sink is drawn from anywhere in the driver's region.
    pub far_sink_prob: f64,
    pub drive_prob: f64,
    pub region_size: usize,
    pub utilization: f64,
    pub region_spread: f64,
    pub k_hops: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub driver_coef: f64,
    pub region_coef: f64,
    pub noise_std: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_cells: 2000,
            seed: 0,
            mean_net_degree: 3.5,
            degree_tail_exponent: 2.5,
            max_net_size: 64,
            window: 24,
            far_sink_prob: 0.08,
            drive_prob: 0.9,
            region_size: 500,
            utilization: 0.5,
            region_spread: 0.25,
            k_hops: 6,
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.5,
            driver_coef: 1.0,
            region_coef: 1.5,
            noise_std: 0.1,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic parameters: {0}")]
    InvalidParams(String),
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidParams(m.to_string()));
        if self.n_cells < 2 {
            return bad("n_cells must be at least 2");
        }
        if !(self.mean_net_degree > 1.0) {
            return bad("mean_net_degree must exceed 1");
        }
        if self.max_net_size < 2 || (self.max_net_size as f64) <= self.mean_net_degree {
            return bad("max_net_size must exceed mean_net_degree");
        }
        if !(self.degree_tail_exponent > 0.0) {
            return bad("degree_tail_exponent must be positive");
        }
        if self.window == 0 || self.region_size == 0 {
            return bad("window and region_size must be positive");
        }
        for (name, p) in [
            ("far_sink_prob", self.far_sink_prob),
            ("drive_prob", self.drive_prob),
            ("utilization", self.utilization),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must be in [0, 1]"));
            }
        }
        if !(self.noise_std >= 0.0 && self.region_spread >= 0.0) {
            return bad("noise_std and region_spread must be non-negative");
        }
        Ok(())
    }
}

/// A generated design plus the latent quantities behind its targets.
#[derive(Debug, Clone)]
pub struct SynthDesign {
    pub netlist: Netlist,
    pub targets: TargetTable,
    pub region_of: Vec<usize>,
    pub region_util: Vec<f64>,
    /// Noise-free demand per canonical net.
    pub clean_demand: Vec<f64>,
}

/// `P(s) ∝ (s + shift)^-tau` over sink counts `1..=max_sinks`.
fn sink_count_pmf(tau: f64, shift: f64, max_sinks: usize) -> Vec<f64> {
    let w: Vec<f64> = (1..=max_sinks)
        .map(|s| (s as f64 + shift).powf(-tau))
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn pmf_mean(pmf: &[f64]) -> f64 {
    pmf.iter()
        .enumerate()
        .map(|(i, p)| (i + 1) as f64 * p)
        .sum()
}

/// Solves for the shift that puts the mean sink count at `target`.
fn solve_shift(tau: f64, max_sinks: usize, target: f64) -> f64 {
    let (mut lo, mut hi) = (-0.999, 1.0e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pmf_mean(&sink_count_pmf(tau, mid, max_sinks)) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn sample_index(rng: &mut impl Rng, cdf: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * cdf.last().copied().unwrap_or(0.0);
    cdf.partition_point(|&c| c <= u)
        .min(cdf.len().saturating_sub(1))
}

/// Number of distinct nets within two hops of `v`: nets on any cell that shares
/// a net with `v`.
pub(crate) fn two_hop_nets(g: &DirectedHypergraph, v: CellId, scratch: &mut Vec<bool>) -> usize {
    scratch.clear();
    scratch.resize(g.n_nets(), false);
    let mut count = 0;
    for &(e, _) in g.incident_nets(v) {
        for u in g.net(e).members() {
            for &(f, _) in g.incident_nets(u) {
                if !scratch[f.0] {
                    scratch[f.0] = true;
                    count += 1;
                }
            }
        }
    }
    count
}

/// Cycle rank `|E| - |V| + 1` of the undirected view of `v`'s out-flow k-ring.
pub(crate) fn out_ring_cycle_rank(
    star: &crate::hypergraph::DirectedGraph,
    v: usize,
    k: usize,
) -> usize {
    let ring = star.k_ring(v, k, RingMode::Out);
    let e = ring.undirected_edges().len();
    (e + 1).saturating_sub(ring.len())
}

pub fn generate_synthetic(p: &SynthParams) -> Result<SynthDesign, SynthError> {
    p.validate()?;
    let n = p.n_cells;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let n_regions = n.div_ceil(p.region_size);
    let region_of: Vec<usize> = (0..n).map(|i| i / p.region_size).collect();
    let region_util: Vec<f64> = (0..n_regions)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (p.utilization + p.region_spread * z).clamp(0.02, 0.98)
        })
        .collect();

    let cells: Vec<CellRecord> = (0..n)
        .map(|i| {
            let width = rng.random_range(1..=4) as f64;
            let tall = rng.random::<f64>() < region_util[region_of[i]];
            let height = if tall { 2.0 } else { 1.0 };
            let orient = rng.random_range(0..8u8);
            CellRecord::new(
                format!("W{}H{}", width as u32, height as u32),
                width,
                height,
                orient,
            )
        })
        .collect();

    let max_sinks = p.max_net_size - 1;
    let shift = solve_shift(p.degree_tail_exponent, max_sinks, p.mean_net_degree - 1.0);
    let mut size_cdf = sink_count_pmf(p.degree_tail_exponent, shift, max_sinks);
    for i in 1..size_cdf.len() {
        size_cdf[i] += size_cdf[i - 1];
    }

    let mut fanin = vec![0usize; n];
    let mut nets = Vec::new();
    let mut chosen = HashSet::new();
    let mut cdf = Vec::new();
    for drv in 0..n - 1 {
        if rng.random::<f64>() >= p.drive_prob {
            continue;
        }
        let want = sample_index(&mut rng, &size_cdf) + 1;
        let hi = (drv + p.window.max(2 * want)).min(n - 1);
        let reg = region_of[drv];
        let (rlo, rhi) = (reg * p.region_size, ((reg + 1) * p.region_size).min(n));
        let available = (hi - drv).max(rhi - rlo - 1);
        let want = want.min(available);

        cdf.clear();
        let mut acc = 0.0;
        for &f in &fanin[drv + 1..=hi] {
            acc += 1.0 + f as f64;
            cdf.push(acc);
        }
        chosen.clear();
        let mut attempts = 0;
        while chosen.len() < want && attempts < 50 * want + 100 {
            attempts += 1;
            let c = if rng.random::<f64>() < p.far_sink_prob || cdf.is_empty() {
                rng.random_range(rlo..rhi)
            } else {
                drv + 1 + sample_index(&mut rng, &cdf)
            };
            if c != drv {
                chosen.insert(c);
            }
        }
        if chosen.is_empty() {
            continue;
        }
        let mut sinks: Vec<usize> = chosen.iter().copied().collect();
        sinks.sort_unstable();
        for &s in &sinks {
            fanin[s] += 1;
        }
        nets.push(NetRecord::new(drv, sinks));
    }

    let graph = DirectedHypergraph::build(cells, nets).expect("generator emits valid nets");

    let star = graph.star_graph();
    let widths: Vec<f64> = graph.cells().iter().map(|c| c.width).collect();
    let (wmin, wmax) = widths
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &w| {
            (a.min(w), b.max(w))
        });
    let norm_width = |w: f64| {
        if wmax > wmin {
            (w - wmin) / (wmax - wmin)
        } else {
            0.5
        }
    };

    let mut scratch = Vec::new();
    let mut h2 = vec![usize::MAX; n];
    let mut cyc = vec![usize::MAX; n];
    let mut covariates = Vec::with_capacity(graph.n_nets());
    for net in graph.nets() {
        let d = net.driver.0;
        if h2[d] == usize::MAX {
            h2[d] = two_hop_nets(&graph, net.driver, &mut scratch);
            cyc[d] = out_ring_cycle_rank(&star, d, p.k_hops);
        }
        covariates.push([
            (1.0 + net.size() as f64).ln(),
            (1.0 + h2[d] as f64).ln(),
            (1.0 + cyc[d] as f64).ln(),
            norm_width(widths[d]),
            region_util[region_of[d]],
        ]);
    }

    // Noise comes from its own stream so the graph does not depend on noise_std.
    let mut noise_rng = ChaCha8Rng::seed_from_u64(p.seed);
    noise_rng.set_stream(1);
    let demand_coef = [p.alpha, p.beta, p.gamma, p.driver_coef, p.region_coef];
    let hpwl_coef = [1.5, 0.5, 0.25, 0.5, 0.75];
    let mut clean_demand = Vec::with_capacity(covariates.len());
    let mut net_targets = Vec::with_capacity(covariates.len());
    for x in &covariates {
        let clean: f64 = x.iter().zip(&demand_coef).map(|(a, b)| a * b).sum();
        let z1: f64 = StandardNormal.sample(&mut noise_rng);
        let z2: f64 = StandardNormal.sample(&mut noise_rng);
        let demand = (clean + p.noise_std * z1).max(0.0);
        let log2_wl: f64 =
            2.0 + x.iter().zip(&hpwl_coef).map(|(a, b)| a * b).sum::<f64>() + p.noise_std * z2;
        clean_demand.push(clean);
        net_targets.push(Some(NetTarget::new(log2_wl.exp2(), demand)));
    }

    let load: Vec<f64> = (0..n)
        .map(|v| {
            graph
                .incident_nets(CellId(v))
                .iter()
                .map(|&(e, _)| net_targets[e.0].unwrap().demand)
                .sum()
        })
        .collect();
    let mut sorted = load.clone();
    sorted.sort_by(f64::total_cmp);
    let q85 = sorted[((n as f64 * 0.85) as usize).min(n - 1)];
    let capacity = if q85 > 0.0 {
        q85 / CONGESTION_THRESHOLD
    } else {
        1.0
    };
    let cell_targets = load
        .iter()
        .map(|&l| Some(CellTarget::new(l / capacity)))
        .collect();

    Ok(SynthDesign {
        netlist: Netlist::from_graph(format!("synth_{}_{}", n, p.seed), graph),
        targets: TargetTable {
            net: net_targets,
            cell: cell_targets,
        },
        region_of,
        region_util,
        clean_demand,
    })
}
