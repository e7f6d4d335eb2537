// SPDX-License-Identifier: Apache-2.0

//! Run configuration: UTF-8 `key = value` lines, `#` comments, unknown keys
//! rejected. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use crate::model::{ModelConfig, Task, Variant};
use crate::partition::DEFAULT_TARGET_PART_SIZE;

use super::TrainError;

/// Which net quantity a net-regression run predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetTargetKind {
    Demand,
    /// `log2` of half-perimeter wirelength.
    Wirelength,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub variant: Variant,
    pub net_target: NetTargetKind,
    pub seed: u64,
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub layers: usize,
    pub hidden: usize,
    pub mlp_depth: usize,
    pub pd: bool,
    pub lappe: bool,
    pub deg_dist: bool,
    pub k_hops: usize,
    pub image_res: usize,
    pub pe_dim: usize,
    pub partition_size: usize,
    /// Seeds for `ablate`; `seed` alone otherwise.
    pub seeds: Vec<u64>,
    /// Record wall-clock seconds in metric records. Off by default so metric
    /// streams are reproducible byte for byte.
    pub timing: bool,
    pub netlist: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub partition: Option<PathBuf>,
    /// Netlists for cross-design runs, in split order; each `x.netlist` pairs
    /// with `x.targets`.
    pub designs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::NetRegression,
            variant: Variant::Full,
            net_target: NetTargetKind::Demand,
            seed: 0,
            epochs: 300,
            patience: 30,
            lr: 1e-3,
            layers: 3,
            hidden: 64,
            mlp_depth: 2,
            pd: true,
            lappe: true,
            deg_dist: true,
            k_hops: 6,
            image_res: 8,
            pe_dim: 10,
            partition_size: DEFAULT_TARGET_PART_SIZE,
            seeds: vec![0, 1, 2, 3, 4],
            timing: false,
            netlist: None,
            targets: None,
            features: None,
            partition: None,
            designs: Vec::new(),
            out: None,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("{key}: expected a boolean, found `{v}`")),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| format!("{key}: {e}"))
}

impl RunConfig {
    /// Parses config text. Relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, TrainError> {
        let mut c = RunConfig::default();
        let path = |v: &str| base.join(v);
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: String| TrainError::Config(format!("line {}: {m}", ln + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, found `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let r: Result<(), String> = (|| {
                match k {
                    "task" => c.task = v.parse()?,
                    "variant" => c.variant = v.parse()?,
                    "net_target" => {
                        c.net_target = match v {
                            "demand" => NetTargetKind::Demand,
                            "wirelength" => NetTargetKind::Wirelength,
                            _ => {
                                return Err(format!(
                                    "net_target: expected demand or wirelength, found `{v}`"
                                ))
                            }
                        }
                    }
                    "seed" => c.seed = parse_num(k, v)?,
                    "epochs" => c.epochs = parse_num(k, v)?,
                    "patience" => c.patience = parse_num(k, v)?,
                    "lr" => c.lr = parse_num(k, v)?,
                    "layers" => c.layers = parse_num(k, v)?,
                    "hidden" => c.hidden = parse_num(k, v)?,
                    "mlp_depth" => c.mlp_depth = parse_num(k, v)?,
                    "pd" => c.pd = parse_bool(k, v)?,
                    "lappe" => c.lappe = parse_bool(k, v)?,
                    "deg_dist" => c.deg_dist = parse_bool(k, v)?,
                    "k_hops" => c.k_hops = parse_num(k, v)?,
                    "image_res" => c.image_res = parse_num(k, v)?,
                    "pe_dim" => c.pe_dim = parse_num(k, v)?,
                    "partition_size" => c.partition_size = parse_num(k, v)?,
                    "seeds" => {
                        c.seeds = v
                            .split(',')
                            .map(|s| parse_num(k, s.trim()))
                            .collect::<Result<_, _>>()?
                    }
                    "timing" => c.timing = parse_bool(k, v)?,
                    "netlist" => c.netlist = Some(path(v)),
                    "targets" => c.targets = Some(path(v)),
                    "features" => c.features = Some(path(v)),
                    "partition" => c.partition = Some(path(v)),
                    "designs" => c.designs = v.split(',').map(|s| path(s.trim())).collect(),
                    "out" => c.out = Some(path(v)),
                    _ => return Err(format!("unknown key `{k}`")),
                }
                Ok(())
            })();
            r.map_err(at)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.variant.uses_pd() && !self.pd {
            return bad("this variant needs persistence features; set pd = true");
        }
        if self.layers == 0 || self.hidden == 0 || self.mlp_depth == 0 {
            return bad("layers, hidden and mlp_depth must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.k_hops == 0 || self.image_res == 0 || self.partition_size == 0 {
            return bad("k_hops, image_res and partition_size must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed");
        }
        Ok(())
    }

    /// Every configured input path must exist.
    pub fn check_paths(&self) -> Result<(), TrainError> {
        let inputs = [
            &self.netlist,
            &self.targets,
            &self.features,
            &self.partition,
        ];
        for p in inputs.into_iter().flatten().chain(&self.designs) {
            if !p.exists() {
                return Err(TrainError::Config(format!(
                    "{} does not exist",
                    p.display()
                )));
            }
        }
        for d in &self.designs {
            let t = d.with_extension("targets");
            if !t.exists() {
                return Err(TrainError::Config(format!(
                    "{} does not exist",
                    t.display()
                )));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, variant: Variant, cell_in: usize, net_in: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            hidden: self.hidden,
            variant,
            task: self.task,
            mlp_depth: self.mlp_depth,
            cell_in,
            net_in,
        }
    }
}
