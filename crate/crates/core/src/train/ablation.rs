// SPDX-License-Identifier: Apache-2.0

//! All five variants over a list of seeds, summarized per metric.

use std::fmt::Write as _;

use crate::model::Variant;

use super::metrics::{mean_std, Metrics, MetricsRecord};
use super::{run, Design, RunConfig, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    /// Test metrics per seed, in `seeds` order.
    pub per_seed: Vec<Metrics>,
}

impl AblationRow {
    pub fn values(&self, metric: &str) -> Vec<f64> {
        self.per_seed
            .iter()
            .map(|m| {
                m.named()
                    .into_iter()
                    .find(|(n, _)| *n == metric)
                    .map_or(f64::NAN, |(_, v)| v)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    /// In ablation order, weakest first.
    pub rows: Vec<AblationRow>,
}

fn lower_is_better(metric: &str) -> bool {
    matches!(metric, "rmse" | "mae")
}

impl AblationReport {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn metric_names(&self) -> Vec<&'static str> {
        self.rows
            .first()
            .and_then(|r| r.per_seed.first())
            .map(|m| m.named().into_iter().map(|(n, _)| n).collect())
            .unwrap_or_default()
    }

    /// One row per variant and metric: mean, sample std, the improvement over
    /// the previous variant in percent, then each seed's value.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("variant\tmetric\tmean\tstd\timprovement_pct");
        if let Some(r) = self.rows.first() {
            for seed in &r.seeds {
                write!(s, "\tseed_{seed}").unwrap();
            }
        }
        s.push('\n');
        for metric in self.metric_names() {
            let mut prev: Option<f64> = None;
            for r in &self.rows {
                let vals = r.values(metric);
                let (mean, sd) = mean_std(&vals);
                let imp = prev.map(|p| {
                    let gain = if lower_is_better(metric) {
                        p - mean
                    } else {
                        mean - p
                    };
                    100.0 * gain / p.abs()
                });
                write!(s, "{}\t{metric}\t{mean}\t{sd}\t", r.variant).unwrap();
                match imp {
                    Some(x) => write!(s, "{x}").unwrap(),
                    None => s.push('-'),
                }
                for v in vals {
                    write!(s, "\t{v}").unwrap();
                }
                s.push('\n');
                prev = Some(mean);
            }
        }
        s
    }
}

/// Runs every variant for every seed in `cfg.seeds`. Variants sharing a seed
/// share folds, splits and initialization seed.
pub fn ablation_suite(
    designs: &[Design],
    cfg: &RunConfig,
) -> Result<(AblationReport, Vec<MetricsRecord>), TrainError> {
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for variant in Variant::ALL {
        let mut per_seed = Vec::new();
        for &seed in &cfg.seeds {
            let out = run(designs, cfg, variant, seed)?;
            records.extend(out.records().cloned());
            per_seed.push(out.test);
        }
        rows.push(AblationRow {
            variant,
            seeds: cfg.seeds.clone(),
            per_seed,
        });
    }
    Ok((AblationReport { rows }, records))
}
