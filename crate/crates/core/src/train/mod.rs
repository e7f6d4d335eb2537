// SPDX-License-Identifier: Apache-2.0

//! Experiment orchestration: folds and design splits, full-graph training with
//! early stopping, evaluation, and the variant ablation.
//!
//! Training is transductive. Every step runs the model over a whole design and
//! masks the loss to the training rows. Regression targets are z-scored with
//! training-row statistics and mapped back before any metric is computed.

mod ablation;
mod config;
mod data;
mod metrics;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::matrix::Matrix;
use crate::model::{loss, Model, ModelConfig, ModelError, Targets, Task, Variant};
use crate::netlist::{FormatError, ParseError, SynthError, TargetError};
use crate::partition::PartitionError;
use crate::spectral::SpectralError;
use crate::tensor::{grad_check, Adam, GradCheckReport, ParamStore, Tape, TensorError};

pub use ablation::{ablation_suite, AblationReport, AblationRow};
pub use config::{NetTargetKind, RunConfig};
pub use data::{
    compute_features, partition_design, prepare, prepare_designs, read_feature_files,
    standardize_columns, target_column, write_feature_files, ColumnScaler, Design, FeatureOptions,
    Prepared, TargetColumn,
};
pub use metrics::{
    classification_metrics, mean_std, pearson, regression_metrics, Metrics, MetricsRecord,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least 4 labelled targets, found {0}")]
    TooFewTargets(usize),
    #[error("need at least 3 designs for a cross-design split, found {0}")]
    TooFewDesigns(usize),
    #[error("evaluation mask selects no rows")]
    EmptyMask,
    #[error("config: {0}")]
    Config(String),
    #[error("features do not match: {0}")]
    FeatureMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

type Result<T> = std::result::Result<T, TrainError>;

pub const N_FOLDS: usize = 4;

/// Seeded shuffle of `0..n` cut into four contiguous quarters.
pub fn make_folds(n: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n < N_FOLDS {
        return Err(TrainError::TooFewTargets(n));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..N_FOLDS)
        .map(|f| idx[f * n / N_FOLDS..(f + 1) * n / N_FOLDS].to_vec())
        .collect())
}

/// `(train, val, test)` for fold `f`: test is quarter `f`, val a seeded 10% of
/// the rest. Each list is sorted.
pub fn fold_split(
    folds: &[Vec<usize>],
    f: usize,
    seed: u64,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut test = folds[f].clone();
    let mut rest: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(g, _)| g != f)
        .flat_map(|(_, q)| q.clone())
        .collect();
    rest.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + f as u64);
    rest.shuffle(&mut rng);
    let n_val = ((rest.len() as f64 * 0.1).round() as usize).clamp(1, rest.len() - 1);
    let mut val = rest[..n_val].to_vec();
    let mut train = rest[n_val..].to_vec();
    for v in [&mut train, &mut val, &mut test] {
        v.sort_unstable();
    }
    (train, val, test)
}

/// The last design is the test design, the one before it validation, and the
/// rest train.
pub fn cross_design_split<T>(designs: &[T]) -> Result<(&[T], &T, &T)> {
    let n = designs.len();
    if n < 3 {
        return Err(TrainError::TooFewDesigns(n));
    }
    Ok((&designs[..n - 2], &designs[n - 2], &designs[n - 1]))
}

/// Rows of one prepared design.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowSet {
    pub design: usize,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub fold: usize,
    pub train: Vec<RowSet>,
    pub val: Vec<RowSet>,
    pub test: Vec<RowSet>,
}

/// Four folds over the labelled rows of design 0.
pub fn single_design_splits(p: &Prepared, seed: u64) -> Result<Vec<Split>> {
    let folds = make_folds(p.labelled.len(), seed)?;
    Ok((0..N_FOLDS)
        .map(|f| {
            let (tr, va, te) = fold_split(&folds, f, seed);
            let rows = |v: Vec<usize>| {
                vec![RowSet {
                    design: 0,
                    rows: v.into_iter().map(|i| p.labelled[i]).collect(),
                }]
            };
            Split {
                fold: f,
                train: rows(tr),
                val: rows(va),
                test: rows(te),
            }
        })
        .collect())
}

/// Train on every design but the last two; labelled rows only.
pub fn cross_split(prepared: &[Prepared]) -> Result<Split> {
    let (train, val, test) = cross_design_split(prepared)?;
    let all = |d: usize, p: &Prepared| RowSet {
        design: d,
        rows: p.labelled.clone(),
    };
    let n = prepared.len();
    Ok(Split {
        fold: 0,
        train: train.iter().enumerate().map(|(d, p)| all(d, p)).collect(),
        val: vec![all(n - 2, val)],
        test: vec![all(n - 1, test)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub seed: u64,
    pub timing: bool,
}

impl TrainSettings {
    pub fn from_run(c: &RunConfig, seed: u64) -> Self {
        Self {
            epochs: c.epochs,
            patience: c.patience,
            lr: c.lr,
            seed,
            timing: c.timing,
        }
    }
}

/// One test-set prediction, in target units (classes as 0.0 / 1.0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub design: usize,
    pub row: usize,
    pub truth: f64,
    pub pred: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub config: ModelConfig,
    /// Parameters from the epoch with the lowest validation loss.
    pub store: ParamStore,
    pub records: Vec<MetricsRecord>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_losses: Vec<f64>,
    pub test: Metrics,
    pub predictions: Vec<Prediction>,
    /// Training-row mean and deviation used to z-score regression targets.
    pub scaler: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
struct Scaler {
    mean: f64,
    sd: f64,
}

fn fit_scaler(designs: &[Prepared], sets: &[RowSet]) -> Option<Scaler> {
    let vals: Vec<f64> = sets
        .iter()
        .flat_map(|s| match &designs[s.design].target {
            TargetColumn::Values(v) => s.rows.iter().map(|&r| v[r]).collect(),
            TargetColumn::Classes(_) => Vec::new(),
        })
        .collect();
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Some(Scaler {
        mean,
        sd: if sd > 1e-12 { sd } else { 1.0 },
    })
}

fn scaled_targets(p: &Prepared, scaler: Option<Scaler>) -> Targets {
    match (&p.target, scaler) {
        (TargetColumn::Values(v), Some(s)) => Targets::Regression(Matrix::column(
            &v.iter().map(|y| (y - s.mean) / s.sd).collect::<Vec<_>>(),
        )),
        (TargetColumn::Values(v), None) => Targets::Regression(Matrix::column(v)),
        (TargetColumn::Classes(c), _) => Targets::Classes(c.clone()),
    }
}

/// Pairs of `(truth, pred)` in target units plus the summed per-row loss in
/// model space.
fn collect(
    p: &Prepared,
    design: usize,
    rows: &[usize],
    out: &Matrix,
    scaler: Option<Scaler>,
    sink: &mut Vec<Prediction>,
) -> f64 {
    let mut loss_sum = 0.0;
    for &r in rows {
        match &p.target {
            TargetColumn::Values(v) => {
                let s = scaler.unwrap_or(Scaler { mean: 0.0, sd: 1.0 });
                let z = out[(r, 0)];
                let zt = (v[r] - s.mean) / s.sd;
                loss_sum += (z - zt) * (z - zt);
                sink.push(Prediction {
                    design,
                    row: r,
                    truth: v[r],
                    pred: z * s.sd + s.mean,
                });
            }
            TargetColumn::Classes(c) => {
                let (a, b) = (out[(r, 0)], out[(r, 1)]);
                let m = a.max(b);
                let lse = m + ((a - m).exp() + (b - m).exp()).ln();
                loss_sum += lse - if c[r] == 1 { b } else { a };
                let pred = if b > a { 1.0 } else { 0.0 };
                sink.push(Prediction {
                    design,
                    row: r,
                    truth: c[r] as f64,
                    pred,
                });
            }
        }
    }
    loss_sum
}

fn metrics_of(task: Task, preds: &[Prediction]) -> Result<Metrics> {
    let truth: Vec<f64> = preds.iter().map(|p| p.truth).collect();
    let pred: Vec<f64> = preds.iter().map(|p| p.pred).collect();
    if task == Task::NodeClassification {
        let c = |v: &[f64]| v.iter().map(|&x| x as usize).collect::<Vec<_>>();
        classification_metrics(&c(&pred), &c(&truth))
    } else {
        regression_metrics(&pred, &truth)
    }
}

fn forward_values(model: &Model, store: &ParamStore, p: &Prepared) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let out = model.forward(&mut tape, &vars, &p.graph, &p.cell_x, &p.net_x)?;
    Ok(tape.value(out.output).clone())
}

/// Evaluates `sets` with the current parameters: `(mean loss, predictions)`.
fn evaluate_sets(
    model: &Model,
    store: &ParamStore,
    designs: &[Prepared],
    sets: &[RowSet],
    scaler: Option<Scaler>,
) -> Result<(f64, Vec<Prediction>)> {
    let mut preds = Vec::new();
    let mut loss_sum = 0.0;
    for s in sets {
        let out = forward_values(model, store, &designs[s.design])?;
        loss_sum += collect(
            &designs[s.design],
            s.design,
            &s.rows,
            &out,
            scaler,
            &mut preds,
        );
    }
    if preds.is_empty() {
        return Err(TrainError::EmptyMask);
    }
    Ok((loss_sum / preds.len() as f64, preds))
}

/// Trains one model on `split` with Adam, early stopping on validation loss,
/// and reports test metrics with the best-validation parameters restored.
pub fn train(
    designs: &[Prepared],
    split: &Split,
    config: ModelConfig,
    settings: &TrainSettings,
) -> Result<TrainResult> {
    let clock = Instant::now();
    let seconds = || settings.timing.then(|| clock.elapsed().as_secs_f64());
    let task = config.task;
    let mut store = ParamStore::new();
    let model = Model::new(
        config.clone(),
        &mut store,
        &mut ChaCha8Rng::seed_from_u64(settings.seed),
    )?;
    let mut adam = Adam::new(&store, settings.lr);
    let scaler = fit_scaler(designs, &split.train);
    let targets: Vec<Targets> = designs.iter().map(|p| scaled_targets(p, scaler)).collect();
    let tag = config.variant.name().to_string();
    let record = |split_name: &str,
                  epoch: usize,
                  loss: Option<f64>,
                  metrics: Metrics,
                  seconds: Option<f64>| MetricsRecord {
        variant: tag.clone(),
        seed: settings.seed,
        split: split_name.to_string(),
        fold: split.fold,
        epoch,
        loss,
        metrics,
        seconds,
    };

    let mut records = Vec::new();
    let mut train_losses = Vec::new();
    let mut best = (f64::INFINITY, 0usize, store.clone());
    let mut since_best = 0;
    let mut epochs_run = 0;
    for epoch in 1..=settings.epochs {
        epochs_run = epoch;
        let mut preds = Vec::new();
        let mut weighted = 0.0;
        let mut count = 0;
        for s in &split.train {
            let p = &designs[s.design];
            let mut tape = Tape::new();
            let vars = store.bind(&mut tape);
            let out = model.forward(&mut tape, &vars, &p.graph, &p.cell_x, &p.net_x)?;
            let l = loss(&mut tape, out.output, &targets[s.design], &s.rows)?;
            weighted += tape.value(l)[(0, 0)] * s.rows.len() as f64;
            count += s.rows.len();
            collect(
                p,
                s.design,
                &s.rows,
                tape.value(out.output),
                scaler,
                &mut preds,
            );
            let grads = tape.backward(l).map_err(ModelError::from)?;
            let g = store.collect_grads(&grads, &vars);
            adam.step(&mut store, &g);
        }
        let train_loss = weighted / count.max(1) as f64;
        train_losses.push(train_loss);
        records.push(record(
            "train",
            epoch,
            Some(train_loss),
            metrics_of(task, &preds)?,
            seconds(),
        ));

        let (val_loss, val_preds) = evaluate_sets(&model, &store, designs, &split.val, scaler)?;
        records.push(record(
            "val",
            epoch,
            Some(val_loss),
            metrics_of(task, &val_preds)?,
            seconds(),
        ));
        if val_loss < best.0 {
            best = (val_loss, epoch, store.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= settings.patience {
            break;
        }
    }

    let (_, best_epoch, best_store) = best;
    let (test_loss, predictions) =
        evaluate_sets(&model, &best_store, designs, &split.test, scaler)?;
    let test = metrics_of(task, &predictions)?;
    records.push(record("test", best_epoch, Some(test_loss), test, seconds()));
    Ok(TrainResult {
        config,
        store: best_store,
        records,
        best_epoch,
        epochs_run,
        train_losses,
        test,
        predictions,
        scaler: scaler.map(|s| (s.mean, s.sd)),
    })
}

/// Runs a stored model over `sets`: metrics and predictions in target units.
pub fn evaluate_with(
    designs: &[Prepared],
    sets: &[RowSet],
    config: &ModelConfig,
    store: &ParamStore,
    scaler: Option<(f64, f64)>,
) -> Result<(Metrics, Vec<Prediction>)> {
    let mut shadow = ParamStore::new();
    let model = Model::new(
        config.clone(),
        &mut shadow,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    if shadow.names() != store.names() {
        return Err(TrainError::FeatureMismatch(
            "checkpoint blocks do not match the model layout".into(),
        ));
    }
    for (a, b) in shadow.values().iter().zip(store.values()) {
        if a.shape() != b.shape() {
            return Err(TrainError::FeatureMismatch(
                "checkpoint block shapes do not match the model".into(),
            ));
        }
    }
    let scaler = scaler.map(|(mean, sd)| Scaler { mean, sd });
    let (_, preds) = evaluate_sets(&model, store, designs, sets, scaler)?;
    Ok((metrics_of(config.task, &preds)?, preds))
}

/// Model config plus the run facts needed to re-evaluate a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub seed: u64,
    pub fold: usize,
    pub scaler: Option<(f64, f64)>,
}

impl CheckpointMeta {
    pub fn to_text(&self) -> String {
        let mut s = self.model.to_text();
        s.push_str(&format!("seed = {}\nfold = {}\n", self.seed, self.fold));
        if let Some((m, sd)) = self.scaler {
            s.push_str(&format!("target_mean = {m:?}\ntarget_sd = {sd:?}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut model_lines = String::new();
        let (mut seed, mut fold, mut mean, mut sd) = (None, None, None, None);
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else {
                model_lines.push_str(line);
                model_lines.push('\n');
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            let bad =
                |e: &dyn std::fmt::Display| TrainError::Config(format!("checkpoint {k}: {e}"));
            match k {
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| bad(&e))?),
                "fold" => fold = Some(v.parse::<usize>().map_err(|e| bad(&e))?),
                "target_mean" => mean = Some(v.parse::<f64>().map_err(|e| bad(&e))?),
                "target_sd" => sd = Some(v.parse::<f64>().map_err(|e| bad(&e))?),
                _ => {
                    model_lines.push_str(line);
                    model_lines.push('\n');
                }
            }
        }
        let missing = |k: &str| TrainError::Config(format!("checkpoint lacks `{k}`"));
        Ok(Self {
            model: ModelConfig::from_text(&model_lines)?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            fold: fold.ok_or_else(|| missing("fold"))?,
            scaler: mean.zip(sd),
        })
    }
}

impl TrainResult {
    pub fn meta(&self, seed: u64, fold: usize) -> CheckpointMeta {
        CheckpointMeta {
            model: self.config.clone(),
            seed,
            fold,
            scaler: self.scaler,
        }
    }
}

/// Finite-difference check of the full model and loss on one design, over
/// every labelled row.
pub fn gradcheck_design(
    design: &Design,
    config: &ModelConfig,
    seed: u64,
    h: f64,
) -> Result<GradCheckReport> {
    let p = prepare_designs(
        std::slice::from_ref(design),
        config.variant,
        config.task,
        NetTargetKind::Demand,
    )?
    .remove(0);
    let mut cfg = config.clone();
    (cfg.cell_in, cfg.net_in) = (p.cell_x.cols(), p.net_x.cols());
    let mut store = ParamStore::new();
    let model = Model::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let targets = scaled_targets(
        &p,
        fit_scaler(
            std::slice::from_ref(&p),
            &[RowSet {
                design: 0,
                rows: p.labelled.clone(),
            }],
        ),
    );
    let report = grad_check(&store, h, |tape, vars| {
        let out = model
            .forward(tape, vars, &p.graph, &p.cell_x, &p.net_x)
            .map_err(tensor_error)?;
        loss(tape, out.output, &targets, &p.labelled).map_err(tensor_error)
    });
    Ok(report.map_err(ModelError::from)?)
}

fn tensor_error(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        // Shapes are fixed by `prepare`, so only tensor errors can surface.
        other => unreachable!("{other}"),
    }
}

/// Mean of each metric; Pearson averages the folds where it is defined.
pub fn average_metrics(ms: &[Metrics]) -> Metrics {
    let mean = |f: &dyn Fn(&Metrics) -> Option<f64>| {
        let v: Vec<f64> = ms.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    match ms.first() {
        Some(Metrics::Classification { .. }) => Metrics::Classification {
            precision: mean(&|m| match m {
                Metrics::Classification { precision, .. } => Some(*precision),
                _ => None,
            })
            .unwrap_or(0.0),
            recall: mean(&|m| match m {
                Metrics::Classification { recall, .. } => Some(*recall),
                _ => None,
            })
            .unwrap_or(0.0),
            f1: mean(&|m| match m {
                Metrics::Classification { f1, .. } => Some(*f1),
                _ => None,
            })
            .unwrap_or(0.0),
        },
        _ => Metrics::Regression {
            rmse: mean(&|m| match m {
                Metrics::Regression { rmse, .. } => Some(*rmse),
                _ => None,
            })
            .unwrap_or(f64::NAN),
            mae: mean(&|m| match m {
                Metrics::Regression { mae, .. } => Some(*mae),
                _ => None,
            })
            .unwrap_or(f64::NAN),
            pearson: mean(&|m| match m {
                Metrics::Regression { pearson, .. } => *pearson,
                _ => None,
            }),
        },
    }
}

/// All folds (single design) or the cross-design split for one variant and
/// seed.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub variant: Variant,
    pub seed: u64,
    pub folds: Vec<TrainResult>,
    /// Test metrics averaged over folds.
    pub test: Metrics,
}

impl RunOutput {
    pub fn records(&self) -> impl Iterator<Item = &MetricsRecord> {
        self.folds.iter().flat_map(|f| f.records.iter())
    }
}

/// One design runs four-fold cross-validation; three or more run the
/// cross-design split.
pub fn run(designs: &[Design], cfg: &RunConfig, variant: Variant, seed: u64) -> Result<RunOutput> {
    let prepared = prepare_designs(designs, variant, cfg.task, cfg.net_target)?;
    let splits = match prepared.len() {
        1 => single_design_splits(&prepared[0], seed)?,
        _ => vec![cross_split(&prepared)?],
    };
    let model_cfg = cfg.model_config(variant, prepared[0].cell_x.cols(), prepared[0].net_x.cols());
    let settings = TrainSettings::from_run(cfg, seed);
    let folds = splits
        .iter()
        .map(|s| train(&prepared, s, model_cfg.clone(), &settings))
        .collect::<Result<Vec<_>>>()?;
    let test = average_metrics(&folds.iter().map(|f| f.test).collect::<Vec<_>>());
    Ok(RunOutput {
        variant,
        seed,
        folds,
        test,
    })
}
