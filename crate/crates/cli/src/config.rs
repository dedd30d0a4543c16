//! Flat `key = value` experiment files.
//!
//! One assignment per line, `#` starts a comment, nested settings use dotted
//! keys (`task.shift = 3.25`). Lists are comma separated. Every key is
//! optional; omitted keys keep their defaults. [`ExperimentSpec::to_text`]
//! writes the complete key set back out in the same format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pda_core::data::GaussianPdaSpec;
use pda_core::trainer::{Alignment, IdxTaskConfig, TaskConfig, TrainConfig, Variant};

use crate::CliError;

/// Everything one config file describes: the training config plus the
/// settings that only the command line front end uses.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub train: TrainConfig,
    /// Seeds for ablation, sweep and class-sensitivity runs.
    pub seeds: Vec<u64>,
    /// Save a checkpoint every this many epochs; 0 disables checkpoints.
    pub checkpoint_every: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2],
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TaskKind {
    Gaussian,
    Idx,
}

/// Mutable staging area; the task kind is only resolved in [`Draft::finish`]
/// so keys of both task kinds may appear in any order.
struct Draft {
    spec: ExperimentSpec,
    kind: TaskKind,
    gaussian: GaussianPdaSpec,
    idx: [Option<PathBuf>; 4],
    target_classes: Option<usize>,
}

pub const KEYS: &[&str] = &[
    "task.kind",
    "task.num_source_classes",
    "task.num_target_classes",
    "task.dim",
    "task.shift",
    "task.n_per_class",
    "task.separation",
    "task.noise",
    "task.nuisance",
    "task.spread_jitter",
    "task.source_images",
    "task.source_labels",
    "task.target_images",
    "task.target_labels",
    "task.target_classes",
    "variant",
    "alignment",
    "beta",
    "gamma",
    "nu",
    "lr",
    "adam.beta1",
    "adam.beta2",
    "adam.eps",
    "batch_size",
    "pretrain_epochs",
    "main_epochs",
    "num_aux_heads",
    "seed",
    "bandwidth",
    "feature_widths",
    "head_hidden",
    "standardize",
    "early_stop",
    "w_tol",
    "loss_tol",
    "seeds",
    "checkpoint_every",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Draft {
    fn new(spec: ExperimentSpec) -> Self {
        let mut draft = Draft {
            kind: TaskKind::Gaussian,
            gaussian: GaussianPdaSpec::default(),
            idx: [None, None, None, None],
            target_classes: None,
            spec,
        };
        match &draft.spec.train.task {
            TaskConfig::Gaussian(g) => draft.gaussian = g.clone(),
            TaskConfig::Idx(i) => {
                draft.kind = TaskKind::Idx;
                draft.idx = [
                    Some(i.source_images.clone()),
                    Some(i.source_labels.clone()),
                    Some(i.target_images.clone()),
                    Some(i.target_labels.clone()),
                ];
                draft.target_classes = Some(i.target_classes);
            }
        }
        draft
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.spec.train;
        let g = &mut self.gaussian;
        match key {
            "task.kind" => {
                self.kind = match value {
                    "gaussian" => TaskKind::Gaussian,
                    "idx" => TaskKind::Idx,
                    _ => return Err(CliError::Usage(format!("unknown task.kind `{value}`"))),
                }
            }
            "task.num_source_classes" => g.num_source_classes = parse(key, value)?,
            "task.num_target_classes" => g.num_target_classes = parse(key, value)?,
            "task.dim" => g.dim = parse(key, value)?,
            "task.shift" => g.shift = parse(key, value)?,
            "task.n_per_class" => g.n_per_class = parse(key, value)?,
            "task.separation" => g.separation = parse(key, value)?,
            "task.noise" => g.noise = parse(key, value)?,
            "task.nuisance" => g.nuisance = parse(key, value)?,
            "task.spread_jitter" => g.spread_jitter = parse(key, value)?,
            "task.source_images" => self.idx[0] = Some(PathBuf::from(value)),
            "task.source_labels" => self.idx[1] = Some(PathBuf::from(value)),
            "task.target_images" => self.idx[2] = Some(PathBuf::from(value)),
            "task.target_labels" => self.idx[3] = Some(PathBuf::from(value)),
            "task.target_classes" => self.target_classes = Some(parse(key, value)?),
            "variant" => {
                t.variant = Variant::parse(value)
                    .ok_or_else(|| CliError::Usage(format!("unknown variant `{value}`")))?
            }
            "alignment" => {
                t.alignment = Alignment::parse(value)
                    .ok_or_else(|| CliError::Usage(format!("unknown alignment `{value}`")))?
            }
            "beta" => t.beta = parse(key, value)?,
            "gamma" => t.gamma = parse(key, value)?,
            "nu" => t.nu = parse(key, value)?,
            "lr" => t.adam.lr = parse(key, value)?,
            "adam.beta1" => t.adam.beta1 = parse(key, value)?,
            "adam.beta2" => t.adam.beta2 = parse(key, value)?,
            "adam.eps" => t.adam.eps = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "pretrain_epochs" => t.pretrain_epochs = parse(key, value)?,
            "main_epochs" => t.main_epochs = parse(key, value)?,
            "num_aux_heads" => t.num_aux_heads = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "bandwidth" => t.bandwidth = parse(key, value)?,
            "feature_widths" => t.feature_widths = parse_list(key, value)?,
            "head_hidden" => t.head_hidden = parse_list(key, value)?,
            "standardize" => t.standardize = parse(key, value)?,
            "early_stop" => t.early_stop = parse(key, value)?,
            "w_tol" => t.w_tol = parse(key, value)?,
            "loss_tol" => t.loss_tol = parse(key, value)?,
            "seeds" => self.spec.seeds = parse_list(key, value)?,
            "checkpoint_every" => self.spec.checkpoint_every = parse(key, value)?,
            _ => return Err(CliError::Usage(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn finish(mut self) -> Result<ExperimentSpec, CliError> {
        self.spec.train.task = match self.kind {
            TaskKind::Gaussian => TaskConfig::Gaussian(self.gaussian),
            TaskKind::Idx => {
                let [Some(si), Some(sl), Some(ti), Some(tl)] = self.idx else {
                    return Err(CliError::Usage(
                        "task.kind = idx needs task.source_images, task.source_labels, \
                         task.target_images and task.target_labels"
                            .into(),
                    ));
                };
                TaskConfig::Idx(IdxTaskConfig {
                    source_images: si,
                    source_labels: sl,
                    target_images: ti,
                    target_labels: tl,
                    target_classes: self.target_classes.unwrap_or(5),
                })
            }
        };
        self.spec
            .train
            .validate()
            .map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        Ok(self.spec)
    }
}

/// Splits `key=value`, trimming both sides.
pub fn split_assignment(text: &str) -> Result<(&str, &str), CliError> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("expected KEY=VALUE, got `{text}`")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(CliError::Usage(format!("empty key in `{text}`")));
    }
    Ok((k, v.trim()))
}

impl ExperimentSpec {
    /// Parses config text, then applies `overrides` in order.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut draft = Draft::new(ExperimentSpec::default());
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_assignment(line)?;
            draft
                .set(k, v)
                .map_err(|e| CliError::Usage(format!("line {}: {}", n + 1, e.message())))?;
        }
        for (k, v) in overrides {
            draft
                .set(k, v)
                .map_err(|e| CliError::Usage(format!("--set {k}: {}", e.message())))?;
        }
        draft.finish()
    }

    /// Reads a config file. A `.json` file is taken to be a run summary and
    /// its echoed config text is used.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let text = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            v.get("config_text")
                .and_then(|t| t.as_str())
                .ok_or_else(|| CliError::Usage(format!("{}: no config_text field", path.display())))?
                .to_string()
        } else {
            text
        };
        ExperimentSpec::parse(&text, overrides)
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        match &t.task {
            TaskConfig::Gaussian(g) => {
                put("task.kind", "gaussian".into());
                put("task.num_source_classes", g.num_source_classes.to_string());
                put("task.num_target_classes", g.num_target_classes.to_string());
                put("task.dim", g.dim.to_string());
                put("task.shift", g.shift.to_string());
                put("task.n_per_class", g.n_per_class.to_string());
                put("task.separation", g.separation.to_string());
                put("task.noise", g.noise.to_string());
                put("task.nuisance", g.nuisance.to_string());
                put("task.spread_jitter", g.spread_jitter.to_string());
            }
            TaskConfig::Idx(i) => {
                put("task.kind", "idx".into());
                put("task.source_images", i.source_images.display().to_string());
                put("task.source_labels", i.source_labels.display().to_string());
                put("task.target_images", i.target_images.display().to_string());
                put("task.target_labels", i.target_labels.display().to_string());
                put("task.target_classes", i.target_classes.to_string());
            }
        }
        put("variant", t.variant.name().into());
        put("alignment", t.alignment.name().into());
        put("beta", t.beta.to_string());
        put("gamma", t.gamma.to_string());
        put("nu", t.nu.to_string());
        put("lr", t.adam.lr.to_string());
        put("adam.beta1", t.adam.beta1.to_string());
        put("adam.beta2", t.adam.beta2.to_string());
        put("adam.eps", t.adam.eps.to_string());
        put("batch_size", t.batch_size.to_string());
        put("pretrain_epochs", t.pretrain_epochs.to_string());
        put("main_epochs", t.main_epochs.to_string());
        put("num_aux_heads", t.num_aux_heads.to_string());
        put("seed", t.seed.to_string());
        put("bandwidth", t.bandwidth.to_string());
        put("feature_widths", join(&t.feature_widths));
        put("head_hidden", join(&t.head_hidden));
        put("standardize", t.standardize.to_string());
        put("early_stop", t.early_stop.to_string());
        put("w_tol", t.w_tol.to_string());
        put("loss_tol", t.loss_tol.to_string());
        put("seeds", join(&self.seeds));
        put("checkpoint_every", self.checkpoint_every.to_string());
        out
    }
}
