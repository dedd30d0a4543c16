//! Training schedule, ablation and alignment variants, and evaluation.
//!
//! Each mini-batch runs three separate optimizer steps in this order:
//!
//! 1. weighted source cross-entropy w.r.t. `F` and `C1`;
//! 2. `γ ·` alignment discrepancy w.r.t. `F`;
//! 3. pseudo-label the target batch with `C1` at threshold `ν`, then target
//!    cross-entropy `+ β ·` consistency w.r.t. `F`, `C2` and the auxiliary heads.
//!
//! The soft class weights are recomputed over the whole target set after the
//! last batch of every main epoch.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Domain, GaussianPdaSpec, PdaTask, TrainView};
use crate::discrepancy::{self, KernelParams, SoftWeightVector};
use crate::error::{Error, Result};
use crate::losses::{self, LossBreakdown};
use crate::nets::{forward_head, BankSpec, ClassifierBank, LEAKY_SLOPE};
use crate::optim::{AdamConfig, AdamState};
use crate::pseudo_label::{self, PseudoLabelSplit};
use crate::tensor::{argmax_rows, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Every loss term.
    Full,
    /// No target cross-entropy and no consistency.
    V1,
    /// No consistency.
    V2,
    /// No alignment.
    V3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::V1, Variant::V2, Variant::V3];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Soft-weighted MMD with the learned class weights.
    Swmmd,
    /// Prior-ratio weighted MMD from hard pseudo-labels.
    Wmmd,
    /// Unweighted MMD.
    Mmd,
    None,
}

impl Alignment {
    pub const ALL: [Alignment; 4] = [Alignment::Swmmd, Alignment::Wmmd, Alignment::Mmd, Alignment::None];

    pub fn name(self) -> &'static str {
        match self {
            Alignment::Swmmd => "swmmd",
            Alignment::Wmmd => "wmmd",
            Alignment::Mmd => "mmd",
            Alignment::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Alignment::ALL.into_iter().find(|a| a.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdxTaskConfig {
    pub source_images: PathBuf,
    pub source_labels: PathBuf,
    pub target_images: PathBuf,
    pub target_labels: PathBuf,
    /// The target keeps classes `0..target_classes`.
    pub target_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskConfig {
    Gaussian(GaussianPdaSpec),
    Idx(IdxTaskConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TaskConfig,
    pub variant: Variant,
    pub alignment: Alignment,
    pub beta: f64,
    pub gamma: f64,
    pub nu: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub main_epochs: usize,
    pub num_aux_heads: usize,
    pub seed: u64,
    pub bandwidth: f64,
    /// Feature extractor widths after the input layer.
    pub feature_widths: Vec<usize>,
    /// Hidden widths of each classifier head.
    pub head_hidden: Vec<usize>,
    pub standardize: bool,
    /// Stop once the epoch-over-epoch L1 change of `w` and the absolute
    /// change of the mean total loss both drop below their tolerances.
    pub early_stop: bool,
    pub w_tol: f64,
    pub loss_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TaskConfig::Gaussian(GaussianPdaSpec::default()),
            variant: Variant::Full,
            alignment: Alignment::Swmmd,
            beta: losses::DEFAULT_BETA,
            gamma: losses::DEFAULT_GAMMA,
            nu: pseudo_label::DEFAULT_NU,
            adam: AdamConfig::default(),
            batch_size: 32,
            pretrain_epochs: 10,
            main_epochs: 40,
            num_aux_heads: 1,
            seed: 0,
            bandwidth: 1.0,
            feature_widths: vec![64, 32],
            head_hidden: vec![16],
            standardize: true,
            early_stop: false,
            w_tol: 1e-4,
            loss_tol: 1e-4,
        }
    }
}

/// splitmix64 finalizer, used to derive independent sub-seeds.
fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::contract(msg));
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return bad(format!("beta={} and gamma={} must be non-negative", self.beta, self.gamma));
        }
        if !(0.0..=1.0).contains(&self.nu) {
            return bad(format!("nu={} must be in [0,1]", self.nu));
        }
        if !(self.adam.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.adam.lr));
        }
        if !((0.0..1.0).contains(&self.adam.beta1) && (0.0..1.0).contains(&self.adam.beta2)) {
            return bad("Adam betas must lie in [0,1)".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.num_aux_heads == 0 {
            return bad("num_aux_heads must be at least 1".into());
        }
        if self.feature_widths.is_empty() {
            return bad("feature_widths must name at least one layer".into());
        }
        KernelParams::new(self.bandwidth)?;
        if let TaskConfig::Gaussian(spec) = &self.task {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn uses_target_ce(&self) -> bool {
        self.variant != Variant::V1
    }

    pub fn uses_consistency(&self) -> bool {
        self.variant == Variant::Full
    }

    pub fn effective_alignment(&self) -> Alignment {
        if self.variant == Variant::V3 {
            Alignment::None
        } else {
            self.alignment
        }
    }

    /// Head whose accuracy a run reports: `C2`, or `C1` when the variant
    /// never trains `C2`.
    pub fn reported_head(&self) -> usize {
        if self.uses_target_ce() || self.uses_consistency() {
            1
        } else {
            0
        }
    }

    pub fn task_seed(&self) -> u64 {
        mix_seed(self.seed, 1)
    }

    pub fn init_seed(&self) -> u64 {
        mix_seed(self.seed, 2)
    }

    fn batch_seed(&self, domain: Domain) -> u64 {
        match domain {
            Domain::Source => mix_seed(self.seed, 3),
            Domain::Target => mix_seed(self.seed, 4),
        }
    }

    /// Builds the task described by the config, standardized if configured.
    pub fn build_task(&self) -> Result<PdaTask> {
        let task = match &self.task {
            TaskConfig::Gaussian(spec) => data::make_gaussian_pda(spec, self.task_seed())?,
            TaskConfig::Idx(idx) => {
                let source = data::load_idx_digits(&idx.source_images, &idx.source_labels, None, Domain::Source)?;
                let keep: BTreeSet<usize> = (0..idx.target_classes).collect();
                let target = data::load_idx_digits(&idx.target_images, &idx.target_labels, Some(&keep), Domain::Target)?;
                PdaTask::new(source, target)?
            }
        };
        Ok(if self.standardize { task.standardized() } else { task })
    }

    pub fn bank_spec(&self, input_dim: usize, num_classes: usize) -> BankSpec {
        BankSpec {
            input_dim,
            feature_widths: self.feature_widths.clone(),
            head_hidden: self.head_hidden.clone(),
            num_classes,
            num_heads: 2 + self.num_aux_heads,
            slope: LEAKY_SLOPE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Main,
}

/// What one epoch of training observed, without any target labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Batch means of each term.
    pub losses: LossBreakdown,
    pub degenerate_batches: usize,
    pub batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Target accuracy of every head, `C1` first.
    pub accuracies: Vec<f64>,
    pub losses: LossBreakdown,
    pub w: Vec<f64>,
    /// Pseudo-labels `C1` assigns over the whole target set at epoch end.
    pub n_tl: usize,
    pub pseudo_histogram: Vec<usize>,
    /// Fraction of those pseudo-labels that are correct; `None` if there are none.
    pub pseudo_precision: Option<f64>,
    pub degenerate_batches: usize,
    pub wall_time_ms: f64,
}

/// Optimizer state and bookkeeping for one run.
pub struct Trainer<'a> {
    config: &'a TrainConfig,
    view: TrainView<'a>,
    bank: ClassifierBank,
    feature_opt: AdamState,
    head_opts: Vec<AdamState>,
    w: SoftWeightVector,
    kernel: KernelParams,
    epochs_done: usize,
}

#[derive(Default)]
struct Accum {
    wce: f64,
    ce_t: f64,
    con: f64,
    swd: f64,
    batches: usize,
    degenerate: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a TrainConfig, view: TrainView<'a>) -> Result<Self> {
        config.validate()?;
        let bank = ClassifierBank::new(
            config.bank_spec(view.source_x.cols(), view.num_classes),
            config.init_seed(),
        )?;
        Trainer::with_bank(config, view, bank)
    }

    /// Resumes from an existing bank with fresh optimizer state and uniform weights.
    pub fn with_bank(config: &'a TrainConfig, view: TrainView<'a>, bank: ClassifierBank) -> Result<Self> {
        config.validate()?;
        if bank.spec().input_dim != view.source_x.cols() || bank.spec().num_classes != view.num_classes {
            return Err(Error::contract("bank does not match the task dimensions"));
        }
        let feature_opt = AdamState::new(config.adam, bank.features.params());
        let head_opts = bank
            .heads
            .iter()
            .map(|h| AdamState::new(config.adam, h.params()))
            .collect();
        Ok(Trainer {
            config,
            view,
            feature_opt,
            head_opts,
            w: SoftWeightVector::uniform(view.num_classes),
            kernel: KernelParams::new(config.bandwidth)?,
            bank,
            epochs_done: 0,
        })
    }

    pub fn bank(&self) -> &ClassifierBank {
        &self.bank
    }

    pub fn into_bank(self) -> ClassifierBank {
        self.bank
    }

    pub fn weights(&self) -> &SoftWeightVector {
        &self.w
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    fn epoch_batches(&self) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        let epoch = self.epochs_done as u64;
        let bs = self.config.batch_size;
        let src = data::batches(self.view.source_x.rows(), bs, self.config.batch_seed(Domain::Source), epoch)?;
        let tgt = data::batches(self.view.target_x.rows(), bs, self.config.batch_seed(Domain::Target), epoch)?;
        Ok(src
            .into_iter()
            .enumerate()
            .map(|(k, s)| (s, tgt[k % tgt.len()].clone()))
            .collect())
    }

    /// One pass over the source minimizing the weighted source loss w.r.t.
    /// `F` and `C1` with the class weights left at their current value.
    pub fn pretrain_epoch(&mut self) -> Result<EpochStats> {
        let mut acc = Accum::default();
        for (src, _) in self.epoch_batches()? {
            acc.wce += self.source_step(&src)?;
            acc.batches += 1;
        }
        self.epochs_done += 1;
        Ok(self.finish(acc))
    }

    /// Runs every configured pretraining epoch.
    pub fn pretrain(&mut self) -> Result<Vec<EpochStats>> {
        (0..self.config.pretrain_epochs).map(|_| self.pretrain_epoch()).collect()
    }

    /// One main epoch followed by the class-weight update.
    pub fn train_epoch(&mut self) -> Result<EpochStats> {
        let mut acc = Accum::default();
        let alignment = self.config.effective_alignment();
        for (src, tgt) in self.epoch_batches()? {
            acc.wce += self.source_step(&src)?;
            if alignment != Alignment::None {
                match self.alignment_step(alignment, &src, &tgt) {
                    Ok(d) => acc.swd += d,
                    Err(Error::DegenerateWeights(z)) => {
                        warn!("epoch {}: alignment skipped, weight mass {z:e}", self.epochs_done);
                        acc.degenerate += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            let xt = self.view.target_x.select_rows(&tgt)?;
            let split = self.pseudo_label(&xt)?;
            if self.config.uses_target_ce() || self.config.uses_consistency() {
                let (ce_t, con) = self.target_step(&xt, &split)?;
                acc.ce_t += ce_t;
                acc.con += con;
            }
            acc.batches += 1;
        }
        self.w = discrepancy::update_soft_weights(&self.target_source_probs()?)?;
        self.epochs_done += 1;
        Ok(self.finish(acc))
    }

    fn finish(&self, acc: Accum) -> EpochStats {
        let n = acc.batches.max(1) as f64;
        let aligned = (acc.batches - acc.degenerate).max(1) as f64;
        EpochStats {
            losses: LossBreakdown::from_parts(
                acc.wce / n,
                acc.ce_t / n,
                acc.con / n,
                acc.swd / aligned,
                self.config.beta,
                self.config.gamma,
            ),
            degenerate_batches: acc.degenerate,
            batches: acc.batches,
        }
    }

    fn source_step(&mut self, rows: &[usize]) -> Result<f64> {
        let xs = self.view.source_x.select_rows(rows)?;
        let ys: Vec<usize> = rows.iter().map(|&i| self.view.source_y[i]).collect();
        let tape = Tape::new();
        let f = self.bank.features.bind(&tape);
        let c1 = self.bank.heads[0].bind(&tape);
        let feats = f.forward(tape.constant(xs))?;
        let (_, probs) = forward_head(&c1, feats)?;
        let loss = losses::weighted_source_ce(probs, &ys, self.w.as_slice())?;
        tape.backward(loss)?;
        let value = loss.item()?;
        self.feature_opt.step(self.bank.features.params_mut(), &f.grads()?)?;
        self.head_opts[0].step(self.bank.heads[0].params_mut(), &c1.grads()?)?;
        Ok(value)
    }

    /// Returns the unscaled discrepancy; the step itself minimizes `γ·D`.
    fn alignment_step(&mut self, alignment: Alignment, src: &[usize], tgt: &[usize]) -> Result<f64> {
        let xs = self.view.source_x.select_rows(src)?;
        let xt = self.view.target_x.select_rows(tgt)?;
        let ys: Vec<usize> = src.iter().map(|&i| self.view.source_y[i]).collect();
        let hard_pseudo = if alignment == Alignment::Wmmd {
            let feats = self.bank.forward_features(&xt)?;
            argmax_rows(&self.bank.head_probs(0, &feats)?)
        } else {
            Vec::new()
        };

        let tape = Tape::new();
        let f = self.bank.features.bind(&tape);
        let fs = f.forward(tape.constant(xs))?;
        let ft = f.forward(tape.constant(xt))?;
        let kernel = self.kernel;
        let d = match alignment {
            Alignment::Swmmd => discrepancy::swmmd(fs, &ys, ft, self.w.as_slice(), kernel)?,
            Alignment::Mmd => discrepancy::mmd(fs, ft, kernel)?,
            Alignment::Wmmd => {
                discrepancy::wmmd(fs, &ys, ft, &hard_pseudo, self.view.num_classes, kernel)?
            }
            Alignment::None => unreachable!("caller skips alignment"),
        };
        let value = d.item()?;
        if self.config.gamma > 0.0 {
            let loss = d.scale(self.config.gamma);
            tape.backward(loss)?;
            self.feature_opt.step(self.bank.features.params_mut(), &f.grads()?)?;
        }
        Ok(value)
    }

    fn pseudo_label(&self, xt: &Tensor) -> Result<PseudoLabelSplit> {
        let feats = self.bank.forward_features(xt)?;
        pseudo_label::assign(&self.bank.head_probs(0, &feats)?, self.config.nu)
    }

    /// Target cross-entropy on the pseudo-labeled rows plus `β·` consistency
    /// on all rows. `C2` sees both terms, auxiliary heads only consistency.
    fn target_step(&mut self, xt: &Tensor, split: &PseudoLabelSplit) -> Result<(f64, f64)> {
        let use_ce = self.config.uses_target_ce();
        let use_con = self.config.uses_consistency();
        let tape = Tape::new();
        let f = self.bank.features.bind(&tape);
        let c2 = self.bank.heads[1].bind(&tape);
        let aux: Vec<_> = if use_con {
            self.bank.heads[2..].iter().map(|h| h.bind(&tape)).collect()
        } else {
            Vec::new()
        };
        let ft = f.forward(tape.constant(xt.clone()))?;
        let (_, p2) = forward_head(&c2, ft)?;

        let ce_t = if use_ce {
            losses::target_ce(p2.gather_rows(&split.labeled)?, &split.pseudo_labels)?
        } else {
            tape.constant(Tensor::scalar(0.0))
        };
        let con = if use_con {
            let mut probs = vec![p2];
            for head in &aux {
                probs.push(forward_head(head, ft)?.1);
            }
            if probs.len() == 2 {
                losses::consistency(probs[0], probs[1])?
            } else {
                losses::multi_consistency(&probs)?
            }
        } else {
            tape.constant(Tensor::scalar(0.0))
        };
        let values = (ce_t.item()?, con.item()?);
        let loss = ce_t.add(con.scale(self.config.beta))?;
        if !loss.is_tracked() || (split.labeled.is_empty() && self.config.beta == 0.0) {
            return Ok(values);
        }
        tape.backward(loss)?;
        self.feature_opt.step(self.bank.features.params_mut(), &f.grads()?)?;
        self.head_opts[1].step(self.bank.heads[1].params_mut(), &c2.grads()?)?;
        for (k, head) in aux.iter().enumerate() {
            let h = k + 2;
            self.head_opts[h].step(self.bank.heads[h].params_mut(), &head.grads()?)?;
        }
        Ok(values)
    }

    /// `C1` probabilities over the whole target set.
    pub fn target_source_probs(&self) -> Result<Tensor> {
        let feats = self.bank.forward_features(self.view.target_x)?;
        self.bank.head_probs(0, &feats)
    }

    /// Pseudo-labels `C1` would assign to the whole target set right now.
    pub fn full_target_split(&self) -> Result<PseudoLabelSplit> {
        pseudo_label::assign(&self.target_source_probs()?, self.config.nu)
    }
}

/// Target accuracy of every head against the held-out labels.
pub fn evaluate(bank: &ClassifierBank, task: &PdaTask) -> Result<Vec<f64>> {
    let labels = task.held_out_labels();
    let feats = bank.forward_features(task.target().samples())?;
    (0..bank.num_heads())
        .map(|h| {
            let pred = argmax_rows(&bank.head_probs(h, &feats)?);
            Ok(accuracy(&pred, labels))
        })
        .collect()
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Accuracy of head `h` on the labeled source domain.
pub fn source_accuracy(bank: &ClassifierBank, view: &TrainView<'_>, h: usize) -> Result<f64> {
    let feats = bank.forward_features(view.source_x)?;
    let pred = argmax_rows(&bank.head_probs(h, &feats)?);
    Ok(accuracy(&pred, view.source_y))
}

/// Fraction of pseudo-labels that match the held-out target labels.
pub fn pseudo_label_precision(split: &PseudoLabelSplit, task: &PdaTask) -> Option<f64> {
    if split.labeled.is_empty() {
        return None;
    }
    let labels = task.held_out_labels();
    let hits = split
        .labeled
        .iter()
        .zip(&split.pseudo_labels)
        .filter(|(&i, &y)| labels[i] == y)
        .count();
    Some(hits as f64 / split.labeled.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_accuracies: Vec<f64>,
    /// Index of the head behind `reported_accuracy` (see [`TrainConfig::reported_head`]).
    pub reported_head: usize,
    pub reported_accuracy: f64,
    pub final_w: Vec<f64>,
    pub shared_classes: Vec<usize>,
    pub outlier_classes: Vec<usize>,
    pub final_n_tl: usize,
    pub final_pseudo_histogram: Vec<usize>,
    pub final_pseudo_precision: Option<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub config: TrainConfig,
}

impl Summary {
    pub fn mean_w(&self, classes: &[usize]) -> f64 {
        classes.iter().map(|&c| self.final_w[c]).sum::<f64>() / classes.len().max(1) as f64
    }

    /// Number of pseudo-labels that land in classes absent from the target.
    pub fn outlier_pseudo_labels(&self) -> usize {
        self.outlier_classes
            .iter()
            .map(|&c| self.final_pseudo_histogram[c])
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub records: Vec<MetricsRecord>,
    pub summary: Summary,
}

/// Full schedule on a prepared task; `on_epoch` sees every record and the
/// bank right after that epoch.
pub fn run_on_task<F>(config: &TrainConfig, task: &PdaTask, mut on_epoch: F) -> Result<(ExperimentResult, ClassifierBank)>
where
    F: FnMut(&MetricsRecord, &ClassifierBank) -> Result<()>,
{
    let mut trainer = Trainer::new(config, task.view())?;
    let mut records = Vec::new();
    let mut stopped_early = false;
    let mut last_split = PseudoLabelSplit::default();

    let schedule = std::iter::repeat(Phase::Pretrain)
        .take(config.pretrain_epochs)
        .chain(std::iter::repeat(Phase::Main).take(config.main_epochs));
    for phase in schedule {
        let started = Instant::now();
        let w_before = trainer.weights().clone();
        let stats = match phase {
            Phase::Pretrain => trainer.pretrain_epoch()?,
            Phase::Main => trainer.train_epoch()?,
        };
        let split = trainer.full_target_split()?;
        let record = MetricsRecord {
            epoch: trainer.epochs_done() - 1,
            phase,
            accuracies: evaluate(trainer.bank(), task)?,
            losses: stats.losses,
            w: trainer.weights().as_slice().to_vec(),
            n_tl: split.num_labeled(),
            pseudo_histogram: split.label_distribution(task.num_classes()),
            pseudo_precision: pseudo_label_precision(&split, task),
            degenerate_batches: stats.degenerate_batches,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        on_epoch(&record, trainer.bank())?;
        let converged = phase == Phase::Main
            && config.early_stop
            && trainer.weights().l1_distance(&w_before) < config.w_tol
            && records
                .last()
                .is_some_and(|prev: &MetricsRecord| {
                    prev.phase == Phase::Main && (prev.losses.total - record.losses.total).abs() < config.loss_tol
                });
        records.push(record);
        last_split = split;
        if converged {
            stopped_early = true;
            break;
        }
    }

    if records.is_empty() {
        last_split = trainer.full_target_split()?;
    }
    let final_accuracies = evaluate(trainer.bank(), task)?;
    let reported_head = config.reported_head();
    let summary = Summary {
        reported_accuracy: final_accuracies[reported_head],
        final_accuracies,
        reported_head,
        final_w: trainer.weights().as_slice().to_vec(),
        shared_classes: task.shared_classes().to_vec(),
        outlier_classes: task.outlier_classes(),
        final_n_tl: last_split.num_labeled(),
        final_pseudo_histogram: last_split.label_distribution(task.num_classes()),
        final_pseudo_precision: pseudo_label_precision(&last_split, task),
        epochs_run: records.len(),
        stopped_early,
        config: config.clone(),
    };
    Ok((ExperimentResult { records, summary }, trainer.into_bank()))
}

/// Builds the task and runs the full schedule.
pub fn run_experiment(config: &TrainConfig) -> Result<ExperimentResult> {
    let task = config.build_task()?;
    Ok(run_on_task(config, &task, |_, _| Ok(()))?.0)
}

/// Independent runs in parallel; results keep the input order.
pub fn run_many(configs: &[TrainConfig]) -> Vec<Result<ExperimentResult>> {
    configs.par_iter().map(run_experiment).collect()
}
