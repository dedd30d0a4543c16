//! The four verbs. Each writes its artifacts to `<out>/<run-id>/`, where the
//! run id is a short SHA-256 of the command and the echoed config.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::Utc;
use log::info;
use sha2::{Digest, Sha256};

use pda_core::trainer::{self, ExperimentResult, TaskConfig, TrainConfig, Variant};

use crate::config::ExperimentSpec;
use crate::output::{self, Manifest, RunRow, SensitivityRow, SummaryFile};
use crate::CliError;

/// Arguments shared by every verb.
#[derive(Clone, Debug)]
pub struct Common {
    pub config: PathBuf,
    pub overrides: Vec<(String, String)>,
    pub seeds: Option<Vec<u64>>,
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Beta,
    Gamma,
    Nu,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::Gamma => "gamma",
            SweepParam::Nu => "nu",
        }
    }

    fn apply(self, config: &mut TrainConfig, value: f64) {
        match self {
            SweepParam::Beta => config.beta = value,
            SweepParam::Gamma => config.gamma = value,
            SweepParam::Nu => config.nu = value,
        }
    }
}

pub struct RunReport {
    pub dir: PathBuf,
    pub run_id: String,
    pub result: ExperimentResult,
}

pub struct ClassSensitivityReport {
    pub dir: PathBuf,
    pub rejected: Vec<usize>,
    pub num_source_classes: usize,
}

pub fn run_id(command: &str, config_text: &str, extra: &str) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(config_text.as_bytes());
    h.update([0]);
    h.update(extra.as_bytes());
    hex::encode(&h.finalize()[..6])
}

struct Session {
    spec: ExperimentSpec,
    text: String,
    run_id: String,
    dir: PathBuf,
    started: String,
    command: &'static str,
}

impl Session {
    fn open(command: &'static str, args: &Common, extra: &str) -> Result<Self, CliError> {
        let mut spec = ExperimentSpec::load(&args.config, &args.overrides)?;
        if let Some(seeds) = &args.seeds {
            spec.seeds = seeds.clone();
        }
        let text = spec.to_text();
        let run_id = run_id(command, &text, extra);
        let dir = args.out.join(&run_id);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).map_err(CliError::Runtime)?;
        fs::write(dir.join("config.txt"), &text)?;
        info!("{command}: writing to {}", dir.display());
        Ok(Session {
            spec,
            text,
            run_id,
            dir,
            started: Utc::now().to_rfc3339(),
            command,
        })
    }

    fn finish(&self, runs: usize, epoch_wall_time_ms: Vec<f64>) -> Result<(), CliError> {
        let manifest = Manifest {
            run_id: &self.run_id,
            command: self.command,
            output_dir: self.dir.display().to_string(),
            started: self.started.clone(),
            finished: Utc::now().to_rfc3339(),
            config_text: &self.text,
            runs,
            epoch_wall_time_ms,
        };
        output::write_json(&self.dir.join("manifest.json"), &manifest)?;
        Ok(())
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        fs::write(self.dir.join(name), contents)?;
        Ok(())
    }
}

fn num_heads(config: &TrainConfig) -> usize {
    2 + config.num_aux_heads
}

fn run_all(configs: &[TrainConfig]) -> Result<Vec<ExperimentResult>, CliError> {
    info!("running {} experiments", configs.len());
    trainer::run_many(configs)
        .into_iter()
        .zip(configs)
        .map(|(r, c)| r.with_context(|| format!("run with seed {}", c.seed)).map_err(CliError::Runtime))
        .collect()
}

fn require_seeds(spec: &ExperimentSpec) -> Result<(), CliError> {
    if spec.seeds.is_empty() {
        return Err(CliError::Usage("seed list is empty".into()));
    }
    Ok(())
}

/// One experiment: `metrics.csv`, `summary.json`, `manifest.json`,
/// `config.txt`, and `checkpoints/` when `checkpoint_every > 0`.
pub fn cmd_run(args: &Common) -> Result<RunReport, CliError> {
    let s = Session::open("run", args, "")?;
    let config = &s.spec.train;
    let task = config.build_task()?;
    let every = s.spec.checkpoint_every;
    let ckpt_dir = s.dir.join("checkpoints");
    if every > 0 {
        fs::create_dir_all(&ckpt_dir)?;
    }
    let (result, bank) = trainer::run_on_task(config, &task, |record, bank| {
        info!(
            "epoch {} {:?}: acc {:?} total {:.4}",
            record.epoch, record.phase, record.accuracies, record.losses.total
        );
        if every > 0 && (record.epoch + 1) % every == 0 {
            bank.save(&ckpt_dir.join(format!("epoch-{:04}.json", record.epoch)))?;
        }
        Ok(())
    })?;
    if every > 0 {
        bank.save(&ckpt_dir.join("final.json"))?;
    }

    s.write("metrics.csv", &output::metrics_csv(&result.records, num_heads(config), task.num_classes()))?;
    output::write_json(
        &s.dir.join("summary.json"),
        &SummaryFile {
            run_id: &s.run_id,
            config_text: &s.text,
            summary: &result.summary,
        },
    )?;
    s.finish(1, result.records.iter().map(|r| r.wall_time_ms).collect())?;
    info!("reported accuracy {:.4}", result.summary.reported_accuracy);
    Ok(RunReport {
        dir: s.dir.clone(),
        run_id: s.run_id.clone(),
        result,
    })
}

/// Variants full, v1, v2, v3 over every seed; `ablation.csv`.
pub fn cmd_ablation(args: &Common) -> Result<PathBuf, CliError> {
    let s = Session::open("ablation", args, "")?;
    require_seeds(&s.spec)?;
    let mut configs = Vec::new();
    for variant in Variant::ALL {
        for &seed in &s.spec.seeds {
            configs.push(TrainConfig {
                variant,
                seed,
                ..s.spec.train.clone()
            });
        }
    }
    let results = run_all(&configs)?;
    let rows: Vec<RunRow<'_>> = configs
        .iter()
        .zip(&results)
        .map(|(c, r)| RunRow {
            label: c.variant.name().into(),
            seed: c.seed,
            summary: &r.summary,
            last: r.records.last(),
        })
        .collect();
    let labels: Vec<String> = Variant::ALL.iter().map(|v| v.name().to_string()).collect();
    s.write("ablation.csv", &output::ablation_csv(&rows, num_heads(&s.spec.train), &labels))?;
    s.finish(configs.len(), Vec::new())?;
    Ok(s.dir.clone())
}

/// One run per value and seed; `sweep.csv`.
pub fn cmd_sweep(args: &Common, param: SweepParam, values: &[f64]) -> Result<PathBuf, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage(format!("no values given for the {} sweep", param.name())));
    }
    let extra = format!("{}={:?}", param.name(), values);
    let s = Session::open("sweep", args, &extra)?;
    require_seeds(&s.spec)?;
    let mut configs = Vec::new();
    for &value in values {
        for &seed in &s.spec.seeds {
            let mut c = TrainConfig {
                seed,
                ..s.spec.train.clone()
            };
            param.apply(&mut c, value);
            c.validate()
                .map_err(|e| CliError::Usage(format!("{} = {value}: {e}", param.name())))?;
            configs.push((value, c));
        }
    }
    let plain: Vec<TrainConfig> = configs.iter().map(|(_, c)| c.clone()).collect();
    let results = run_all(&plain)?;
    let rows: Vec<(f64, RunRow<'_>)> = configs
        .iter()
        .zip(&results)
        .map(|((v, c), r)| {
            (
                *v,
                RunRow {
                    label: String::new(),
                    seed: c.seed,
                    summary: &r.summary,
                    last: r.records.last(),
                },
            )
        })
        .collect();
    s.write("sweep.csv", &output::sweep_csv(param.name(), &rows, values, num_heads(&s.spec.train)))?;
    s.finish(plain.len(), Vec::new())?;
    Ok(s.dir.clone())
}

/// Regenerates the synthetic task for every valid target class count and
/// records invalid counts as rejected rows; `class_sensitivity.csv`.
pub fn cmd_class_sensitivity(args: &Common, counts: &[usize]) -> Result<ClassSensitivityReport, CliError> {
    if counts.is_empty() {
        return Err(CliError::Usage("no target class counts given".into()));
    }
    let extra = format!("{counts:?}");
    let s = Session::open("class-sensitivity", args, &extra)?;
    require_seeds(&s.spec)?;
    let TaskConfig::Gaussian(base) = &s.spec.train.task else {
        return Err(CliError::Usage("class-sensitivity needs task.kind = gaussian".into()));
    };
    let num_source = base.num_source_classes;
    let (valid, rejected): (Vec<usize>, Vec<usize>) = counts.iter().partition(|&&c| (1..num_source).contains(&c));

    let mut configs = Vec::new();
    for &count in &valid {
        for &seed in &s.spec.seeds {
            let mut task = base.clone();
            task.num_target_classes = count;
            configs.push((
                count,
                TrainConfig {
                    task: TaskConfig::Gaussian(task),
                    seed,
                    ..s.spec.train.clone()
                },
            ));
        }
    }
    let plain: Vec<TrainConfig> = configs.iter().map(|(_, c)| c.clone()).collect();
    let results = run_all(&plain)?;
    let mut rows: Vec<SensitivityRow<'_>> = configs
        .iter()
        .zip(&results)
        .map(|((count, c), r)| SensitivityRow::Run {
            count: *count,
            seed: c.seed,
            summary: &r.summary,
        })
        .collect();
    rows.extend(rejected.iter().map(|&count| SensitivityRow::Rejected {
        count,
        note: format!("target classes must be 1..{} for {num_source} source classes", num_source - 1),
    }));
    s.write(
        "class_sensitivity.csv",
        &output::class_sensitivity_csv(&rows, counts, num_heads(&s.spec.train)),
    )?;
    s.finish(plain.len(), Vec::new())?;
    Ok(ClassSensitivityReport {
        dir: s.dir.clone(),
        rejected,
        num_source_classes: num_source,
    })
}

/// Reads `summary.json` from a run directory.
pub fn read_summary(dir: &Path) -> Result<serde_json::Value, CliError> {
    let text = fs::read_to_string(dir.join("summary.json"))?;
    Ok(serde_json::from_str(&text)?)
}
