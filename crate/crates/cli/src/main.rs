// SPDX-License-Identifier: Apache-2.0

//! `dehnn`: generate designs, compute features, partition, train, evaluate,
//! run the variant ablation and check gradients.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dehnn::model::{ModelConfig, Task, Variant};
use dehnn::netlist::{
    generate_synthetic, parse_netlist, write_netlist, write_targets, SynthParams,
};
use dehnn::partition::{choose_k, expand_weights, partition, write_partition, DEFAULT_EPSILON};
use dehnn::tensor::{read_checkpoint, write_checkpoint, ParamStore, GRAD_CHECK_FLOOR};
use dehnn::train::{
    ablation_suite, classification_metrics, compute_features, fold_split, gradcheck_design,
    make_folds, regression_metrics, run, write_feature_files, CheckpointMeta, Design,
    FeatureOptions, Metrics, MetricsRecord, RowSet, RunConfig, RunOutput, N_FOLDS,
};

#[derive(Parser)]
#[command(
    name = "dehnn",
    version,
    about = "Directed hypergraph neural networks for circuit netlists"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic netlist and its planted targets.
    Generate(GenerateArgs),
    /// Compute input features for a netlist.
    Features(FeaturesArgs),
    /// Balanced k-way partition of a netlist's cells.
    Partition(PartitionArgs),
    /// Train per a run config; writes metrics, summary and checkpoints.
    Train(ConfigArgs),
    /// Evaluate a checkpoint, or recompute metrics from a predictions file.
    Eval(EvalArgs),
    /// Every variant over every configured seed.
    Ablate(ConfigArgs),
    /// Finite-difference gradient check of the full model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output stem: writes `<out>.netlist` and `<out>.targets`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    cells: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    utilization: Option<f64>,
    /// Design name; defaults to the output file stem.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    netlist: PathBuf,
    /// Writes `<out>` (cells), `<out>.nets` and `<out>.header`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pd: bool,
    #[arg(long)]
    lappe: bool,
    #[arg(long)]
    deg_dist: bool,
    #[arg(long, default_value_t = 6)]
    k_hops: usize,
    #[arg(long, default_value_t = 8)]
    image_res: usize,
    #[arg(long, default_value_t = 10)]
    pe_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long)]
    netlist: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of parts; derived from `--target-size` when absent.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    target_size: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Run config naming the design(s) to evaluate on.
    #[arg(long, requires = "checkpoint")]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Predictions TSV written by `train`.
    #[arg(long, conflicts_with_all = ["config", "checkpoint"])]
    predictions: Option<PathBuf>,
    /// Task of the predictions file.
    #[arg(long, default_value = "NET_REGRESSION")]
    task: String,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Netlist and targets stem; a 10-cell synthetic design when absent.
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let mut p = SynthParams {
        n_cells: a.cells,
        seed: a.seed,
        ..Default::default()
    };
    if let Some(x) = a.noise_std {
        p.noise_std = x;
    }
    if let Some(x) = a.utilization {
        p.utilization = x;
    }
    let mut d = generate_synthetic(&p)?;
    d.netlist.name = a.name.clone().unwrap_or_else(|| {
        a.out
            .file_name()
            .map_or("design".into(), |s| s.to_string_lossy().into_owned())
    });
    fs::write(with_ext(&a.out, "netlist"), write_netlist(&d.netlist))?;
    fs::write(
        with_ext(&a.out, "targets"),
        write_targets(&d.targets, &d.netlist),
    )?;
    let g = &d.netlist.graph;
    println!(
        "{}: {} cells, {} nets",
        d.netlist.name,
        g.n_cells(),
        g.n_nets()
    );
    Ok(())
}

fn read_netlist(path: &Path) -> Result<dehnn::netlist::Netlist> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_netlist(&text).with_context(|| format!("parsing {}", path.display()))
}

fn features(a: &FeaturesArgs) -> Result<()> {
    let nl = read_netlist(&a.netlist)?;
    let opts = FeatureOptions {
        pd: a.pd,
        lappe: a.lappe,
        deg_dist: a.deg_dist,
        k_hops: a.k_hops,
        image_res: a.image_res,
        pe_dim: a.pe_dim,
        seed: a.seed,
    };
    let t = compute_features(&nl.graph, &opts)?;
    write_feature_files(&t, &a.out)?;
    print!("{}", t.header());
    Ok(())
}

fn partition_cmd(a: &PartitionArgs) -> Result<()> {
    let nl = read_netlist(&a.netlist)?;
    let g = &nl.graph;
    let k =
        a.k.unwrap_or_else(|| choose_k(g.n_cells(), a.target_size.max(1)));
    let p = partition(&expand_weights(g), k, a.epsilon, a.seed)?;
    fs::write(&a.out, write_partition(&p.part_of))?;
    println!(
        "k = {}\ncut = {}\nsizes = {:?}\nbalanced = {}",
        p.k,
        p.cut,
        p.sizes(),
        p.is_balanced()
    );
    Ok(())
}

fn load_designs(cfg: &RunConfig) -> Result<Vec<Design>> {
    cfg.check_paths()?;
    let opts = FeatureOptions::from_run(cfg);
    if !cfg.designs.is_empty() {
        return cfg
            .designs
            .iter()
            .map(|d| {
                Ok(Design::load(
                    d,
                    &d.with_extension("targets"),
                    None,
                    None,
                    &opts,
                    cfg.partition_size,
                )?)
            })
            .collect();
    }
    let (Some(nl), Some(tg)) = (&cfg.netlist, &cfg.targets) else {
        bail!("config needs `netlist` and `targets`, or `designs`");
    };
    Ok(vec![Design::load(
        nl,
        tg,
        cfg.features.as_deref(),
        cfg.partition.as_deref(),
        &opts,
        cfg.partition_size,
    )?])
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().context("config needs `out`")?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn ndjson<'a>(records: impl Iterator<Item = &'a MetricsRecord>) -> String {
    records.map(|r| r.to_json() + "\n").collect()
}

fn metric_row(label: &str, m: &Metrics) -> String {
    let mut s = label.to_string();
    for (_, v) in m.named() {
        write!(s, "\t{v}").unwrap();
    }
    s.push('\n');
    s
}

fn summary_tsv(out: &RunOutput) -> String {
    let names: Vec<&str> = out.test.named().into_iter().map(|(n, _)| n).collect();
    let mut s = format!("fold\t{}\n", names.join("\t"));
    for f in &out.folds {
        s += &metric_row(&f.records.last().map_or(0, |r| r.fold).to_string(), &f.test);
    }
    s += &metric_row("mean", &out.test);
    s
}

fn train_cmd(a: &ConfigArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let designs = load_designs(&cfg)?;
    let dir = out_dir(&cfg)?;
    let out = run(&designs, &cfg, cfg.variant, cfg.seed)?;
    fs::write(dir.join("metrics.ndjson"), ndjson(out.records()))?;
    fs::write(dir.join("summary.tsv"), summary_tsv(&out))?;
    let mut preds = String::from("fold\tdesign\trow\ttruth\tpred\n");
    for (f, r) in out.folds.iter().enumerate() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &r.meta(cfg.seed, f).to_text(), &r.store)?;
        fs::write(dir.join(format!("fold{f}.ckpt")), buf)?;
        for p in &r.predictions {
            writeln!(
                preds,
                "{f}\t{}\t{}\t{:?}\t{:?}",
                designs[p.design].name, p.row, p.truth, p.pred
            )
            .unwrap();
        }
    }
    fs::write(dir.join("predictions.tsv"), preds)?;
    print!("{}", summary_tsv(&out));
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    if let Some(p) = &a.predictions {
        let task: Task = a.task.parse().map_err(anyhow::Error::msg)?;
        let text = fs::read_to_string(p)?;
        let (mut truth, mut pred) = (Vec::new(), Vec::new());
        for (i, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                bail!("{}:{}: expected 5 columns", p.display(), i + 1);
            }
            truth.push(f[3].parse::<f64>()?);
            pred.push(f[4].parse::<f64>()?);
        }
        let m = if task == Task::NodeClassification {
            let c = |v: &[f64]| v.iter().map(|&x| x as usize).collect::<Vec<_>>();
            classification_metrics(&c(&pred), &c(&truth))?
        } else {
            regression_metrics(&pred, &truth)?
        };
        print!("{}", metric_row("all", &m));
        return Ok(());
    }
    let (Some(cfg_path), Some(ckpt)) = (&a.config, &a.checkpoint) else {
        bail!("eval needs --config and --checkpoint, or --predictions");
    };
    let cfg = RunConfig::load(cfg_path)?;
    let designs = load_designs(&cfg)?;
    let c = read_checkpoint(&mut fs::read(ckpt)?.as_slice())?;
    let meta = CheckpointMeta::from_text(&c.config)?;
    let mut store = ParamStore::new();
    for (name, m) in c.blocks {
        store.add(name, m);
    }
    let prepared = dehnn::train::prepare_designs(
        &designs,
        meta.model.variant,
        meta.model.task,
        cfg.net_target,
    )?;
    let test = if prepared.len() == 1 {
        let p = &prepared[0];
        let folds = make_folds(p.labelled.len(), meta.seed)?;
        if meta.fold >= N_FOLDS {
            bail!("checkpoint fold {} out of range", meta.fold);
        }
        let (_, _, te) = fold_split(&folds, meta.fold, meta.seed);
        vec![RowSet {
            design: 0,
            rows: te.into_iter().map(|i| p.labelled[i]).collect(),
        }]
    } else {
        dehnn::train::cross_split(&prepared)?.test
    };
    let (m, _) = dehnn::train::evaluate_with(&prepared, &test, &meta.model, &store, meta.scaler)?;
    let rec = MetricsRecord {
        variant: meta.model.variant.to_string(),
        seed: meta.seed,
        split: "test".into(),
        fold: meta.fold,
        epoch: 0,
        loss: None,
        metrics: m,
        seconds: None,
    };
    println!("{}", rec.to_json());
    Ok(())
}

fn ablate_cmd(a: &ConfigArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let designs = load_designs(&cfg)?;
    let dir = out_dir(&cfg)?;
    let (report, records) = ablation_suite(&designs, &cfg)?;
    fs::write(dir.join("metrics.ndjson"), ndjson(records.iter()))?;
    fs::write(dir.join("ablation.tsv"), report.to_tsv())?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<bool> {
    let opts = FeatureOptions {
        pd: true,
        lappe: true,
        deg_dist: true,
        k_hops: 3,
        image_res: 2,
        pe_dim: 4,
        seed: a.seed,
    };
    let design = match &a.design {
        Some(stem) => Design::load(
            &with_ext(stem, "netlist"),
            &with_ext(stem, "targets"),
            None,
            None,
            &opts,
            5,
        )?,
        None => {
            let s = generate_synthetic(&SynthParams {
                n_cells: 10,
                seed: a.seed,
                window: 4,
                ..Default::default()
            })?;
            Design::from_synth(s, &opts, 5)?
        }
    };
    let mut ok = true;
    println!("variant\ttask\tmax_rel_error");
    for variant in Variant::ALL {
        for task in Task::ALL {
            let cfg = ModelConfig {
                layers: a.layers,
                hidden: a.hidden,
                variant,
                task,
                mlp_depth: 2,
                cell_in: 0,
                net_in: 0,
            };
            let r = gradcheck_design(&design, &cfg, a.seed, a.step)?;
            let e = r.max_error();
            ok &= e <= a.tolerance;
            println!("{variant}\t{task}\t{e:e}");
        }
    }
    println!(
        "floor = {GRAD_CHECK_FLOOR:e}, tolerance = {:e}: {}",
        a.tolerance,
        if ok { "pass" } else { "FAIL" }
    );
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Generate(a) => generate(a).map(|_| true),
        Command::Features(a) => features(a).map(|_| true),
        Command::Partition(a) => partition_cmd(a).map(|_| true),
        Command::Train(a) => train_cmd(a).map(|_| true),
        Command::Eval(a) => eval_cmd(a).map(|_| true),
        Command::Ablate(a) => ablate_cmd(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    };
    match r {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
