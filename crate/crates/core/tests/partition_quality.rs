// SPDX-License-Identifier: Apache-2.0

use dehnn::netlist::{generate_synthetic, SynthParams};
use dehnn::partition::{balance_cap, expand_weights, partition};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn clique_expansion_total_weight() {
    let d = generate_synthetic(&SynthParams {
        n_cells: 800,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let g = &d.netlist.graph;
    let expected: f64 = g
        .nets()
        .iter()
        .filter(|n| n.size() >= 2)
        .map(|n| n.size() as f64 / 2.0)
        .sum();
    let w = expand_weights(g).total_edge_weight();
    assert!((w - expected).abs() < 1e-8 * expected, "{w} vs {expected}");
}

#[test]
fn beats_random_balanced_assignments() {
    let d = generate_synthetic(&SynthParams {
        n_cells: 2000,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let w = expand_weights(&d.netlist.graph);
    let (n, k) = (2000, 8);
    let p = partition(&w, k, 0.05, 0).unwrap();
    assert!(
        p.sizes()
            .iter()
            .all(|&s| s >= 1 && s <= balance_cap(n, k, 0.05)),
        "{:?}",
        p.sizes()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut cuts: Vec<f64> = (0..20)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut part = vec![0; n];
            for (i, &v) in order.iter().enumerate() {
                part[v] = i % k;
            }
            w.cut(&part)
        })
        .collect();
    cuts.sort_by(f64::total_cmp);
    let median = (cuts[9] + cuts[10]) / 2.0;
    assert!(p.cut <= median, "cut {} vs random median {median}", p.cut);
    eprintln!("cut {:.1} vs random median {median:.1}", p.cut);
}
