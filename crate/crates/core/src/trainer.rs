//! The two-phase training loop: cross-entropy warm-up while candidate
//! histograms accumulate, then the robust phase optimizing
//! `L_pll + alpha * L_nl + beta * L_reg`. Also the per-epoch diagnostics.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{stream_rng, AugmentSpec, Dataset, Split, View, DOMAIN_SHUFFLE};
use crate::error::{NpnError, Result};
use crate::label_space::{
    argmax, build_candidate_set, build_complementary_set, CandidateSet, HistogramStore,
    LabelVector,
};
use crate::losses::{
    ce_loss, combined_loss, nl_loss, pll_hard_loss, pll_soft_loss, reg_loss, LossWeights,
    Probabilities,
};
use crate::model::{sgd_step, LrSchedule, MlpNetwork, OptimizerState};

/// Columns of the per-epoch metrics CSV, in order.
pub const METRICS_HEADER: &str =
    "epoch,phase,lr,loss_total,loss_pll,loss_nl,loss_reg,test_acc,hit_rate,disamb_precision";

const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisambiguationMode {
    Hard,
    Soft,
}

impl fmt::Display for DisambiguationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DisambiguationMode::Hard => "hard",
            DisambiguationMode::Soft => "soft",
        })
    }
}

/// `Standard` trains with plain cross-entropy on the given labels in every
/// epoch and serves as the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Npn,
    Standard,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Npn => "npn",
            Method::Standard => "standard",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub mode: DisambiguationMode,
    pub method: Method,
    /// When false the partial-label term is replaced by unit-weight
    /// cross-entropy on the given label (ablation).
    pub pll: bool,
    pub hidden: Vec<usize>,
    pub momentum: f64,
    pub warmup_lr: f64,
    pub robust_lr: f64,
    pub augment: AugmentSpec,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_epochs: 60,
            warmup_epochs: 15,
            batch_size: 64,
            alpha: 1.0,
            beta: 2.0,
            mode: DisambiguationMode::Hard,
            method: Method::Npn,
            pll: true,
            hidden: vec![128, 128],
            momentum: 0.9,
            warmup_lr: 0.05,
            robust_lr: 0.05,
            augment: AugmentSpec::default(),
            seed: 0,
            checkpoint_every: 10,
            metrics_path: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    /// The 300/100/128/0.005 schedule used for image-scale runs.
    pub fn image_scale() -> Self {
        TrainConfig {
            total_epochs: 300,
            warmup_epochs: 100,
            batch_size: 128,
            warmup_lr: 0.005,
            robust_lr: 0.005,
            ..TrainConfig::default()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            warmup_epochs: self.warmup_epochs,
            total_epochs: self.total_epochs,
            warmup_lr: self.warmup_lr,
            robust_base_lr: self.robust_lr,
        }
    }

    /// Every violated constraint, so they can be reported together.
    pub fn problems(&self) -> Vec<NpnError> {
        let mut out = Vec::new();
        if self.total_epochs == 0 {
            out.push(NpnError::param("total_epochs", "must be >= 1"));
        }
        if self.warmup_epochs > self.total_epochs {
            out.push(NpnError::param("warmup_epochs", "must not exceed total_epochs"));
        }
        if self.batch_size == 0 {
            out.push(NpnError::param("batch_size", "must be >= 1"));
        }
        if let Err(e) = self.weights().validate() {
            out.push(e);
        }
        if self.hidden.contains(&0) {
            out.push(NpnError::param("hidden", "layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(NpnError::param("momentum", "must lie in [0, 1)"));
        }
        for (name, lr) in [("warmup_lr", self.warmup_lr), ("robust_lr", self.robust_lr)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                out.push(NpnError::param(name, "must be finite and >= 0"));
            }
        }
        if let Err(e) = self.augment.validate() {
            out.push(e);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn layer_dims(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(classes);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Robust,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Warmup => "warmup",
            Phase::Robust => "robust",
        })
    }
}

/// Loss values of one mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchLoss {
    pub size: usize,
    pub total: f64,
    pub pll: Option<f64>,
    pub nl: Option<f64>,
    pub reg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_pll: Option<f64>,
    pub loss_nl: Option<f64>,
    pub loss_reg: Option<f64>,
    /// Percentages.
    pub test_acc: f64,
    pub hit_rate: f64,
    pub disamb_precision: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.phase,
            self.lr,
            self.loss_total,
            opt(self.loss_pll),
            opt(self.loss_nl),
            opt(self.loss_reg),
            self.test_acc,
            self.hit_rate,
            self.disamb_precision
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct EpochReport {
    pub metrics: EpochMetrics,
    pub batches: Vec<BatchLoss>,
    /// Candidate sets built this epoch, indexed by sample.
    pub candidates: Vec<CandidateSet>,
}

/// Top-1 accuracy in percent against the true labels.
pub fn evaluate(net: &MlpNetwork, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(NpnError::param("dataset", "cannot evaluate on zero samples"));
    }
    if ds.dim() != net.input_dim() {
        return Err(NpnError::dim("evaluation input width", net.input_dim(), ds.dim()));
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let logits = net.predict(ds.batch(chunk).view())?;
        for (row, &i) in logits.rows().into_iter().zip(chunk) {
            let pred = argmax(row.as_slice().expect("standard layout"));
            correct += (pred == ds.true_labels[i] as usize) as usize;
        }
    }
    Ok(100.0 * correct as f64 / ds.len() as f64)
}

/// `(candidate hit rate, disambiguation precision)` in percent.
pub fn diagnostics(
    histograms: &HistogramStore,
    candidates: &[CandidateSet],
    true_labels: &[u16],
) -> Result<(f64, f64)> {
    let n = true_labels.len();
    if n == 0 {
        return Err(NpnError::param("samples", "diagnostics need at least one sample"));
    }
    if histograms.len() != n {
        return Err(NpnError::dim("diagnostic histograms", n, histograms.len()));
    }
    if candidates.len() != n {
        return Err(NpnError::dim("diagnostic candidates", n, candidates.len()));
    }
    let hits = candidates
        .iter()
        .zip(true_labels)
        .filter(|(c, &t)| c.contains(t as usize))
        .count();
    Ok((hit_rate_of(hits, n), precision(histograms, true_labels)?))
}

fn hit_rate_of(hits: usize, n: usize) -> f64 {
    100.0 * hits as f64 / n as f64
}

fn precision(histograms: &HistogramStore, true_labels: &[u16]) -> Result<f64> {
    let mut correct = 0usize;
    for (i, &t) in true_labels.iter().enumerate() {
        correct += (histograms.disambiguate(i)?.hard_label == t as usize) as usize;
    }
    Ok(100.0 * correct as f64 / true_labels.len() as f64)
}

fn check_finite(value: f64, what: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(NpnError::NonFinite(what))
    }
}

/// Network, optimizer and histogram state of one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    net: MlpNetwork,
    opt: OptimizerState,
    histograms: HistogramStore,
    /// 0-based index of the next epoch.
    epoch: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, train: &Dataset) -> Result<Self> {
        let dims = cfg.layer_dims(train.dim(), train.classes);
        let net = MlpNetwork::new(&dims, cfg.seed)?;
        Self::with_network(cfg, net, train)
    }

    pub fn with_network(cfg: TrainConfig, net: MlpNetwork, train: &Dataset) -> Result<Self> {
        cfg.validate()?;
        check_train_set(train)?;
        if net.input_dim() != train.dim() {
            return Err(NpnError::dim("network input width", train.dim(), net.input_dim()));
        }
        if net.classes() != train.classes {
            return Err(NpnError::dim("network classes", train.classes, net.classes()));
        }
        let opt = OptimizerState::new(&net, cfg.momentum)?;
        let histograms = HistogramStore::from_labels(&train.noisy_labels, train.classes)?;
        Ok(Trainer {
            cfg,
            net,
            opt,
            histograms,
            epoch: 0,
        })
    }

    /// Continues a run from a checkpoint. `cfg` must describe the same run.
    pub fn from_checkpoint(cfg: TrainConfig, ck: Checkpoint, train: &Dataset) -> Result<Self> {
        cfg.validate()?;
        check_train_set(train)?;
        if ck.histograms.len() != train.len() {
            return Err(NpnError::dim("checkpoint histograms", train.len(), ck.histograms.len()));
        }
        if ck.seed != cfg.seed {
            return Err(NpnError::param("seed", "checkpoint was written by a run with another seed"));
        }
        let epoch = ck.next_epoch as usize;
        if epoch > cfg.total_epochs {
            return Err(NpnError::param("total_epochs", "checkpoint is past the end of the run"));
        }
        Ok(Trainer {
            cfg,
            net: ck.net,
            opt: ck.optimizer,
            histograms: ck.histograms,
            epoch,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn network(&self) -> &MlpNetwork {
        &self.net
    }

    pub fn histograms(&self) -> &HistogramStore {
        &self.histograms
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.opt
    }

    pub fn next_epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.cfg.total_epochs
    }

    pub fn checkpoint(&self, train: &Dataset) -> Checkpoint {
        Checkpoint {
            net: self.net.clone(),
            optimizer: self.opt.clone(),
            histograms: self.histograms.clone(),
            seed: self.cfg.seed,
            next_epoch: self.epoch as u64,
            config: Some(self.cfg.clone()),
            labels: Some((train.noisy_labels.clone(), train.true_labels.clone())),
        }
    }

    fn phase(&self) -> Phase {
        if self.epoch < self.cfg.warmup_epochs {
            Phase::Warmup
        } else {
            Phase::Robust
        }
    }

    fn batches(&self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream_rng(self.cfg.seed, &[DOMAIN_SHUFFLE, self.epoch as u64]);
        order.shuffle(&mut rng);
        order
            .chunks(self.cfg.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// Runs the next epoch in whichever phase it belongs to.
    pub fn run_epoch(&mut self, train: &Dataset, test: &Dataset) -> Result<EpochReport> {
        if self.is_finished() {
            return Err(NpnError::InvalidState("all epochs have already run".into()));
        }
        match (self.phase(), self.cfg.method) {
            (Phase::Robust, Method::Npn) => self.robust_epoch(train, test),
            _ => self.ce_epoch(train, test),
        }
    }

    /// One warm-up epoch: cross-entropy step, then candidates from the
    /// updated model's raw-view prediction.
    pub fn warmup_epoch(&mut self, train: &Dataset, test: &Dataset) -> Result<EpochReport> {
        if self.phase() != Phase::Warmup {
            return Err(NpnError::InvalidState(format!(
                "epoch {} is past the warm-up phase",
                self.epoch + 1
            )));
        }
        self.ce_epoch(train, test)
    }

    fn ce_epoch(&mut self, train: &Dataset, test: &Dataset) -> Result<EpochReport> {
        check_datasets(&self.net, train, test)?;
        let phase = self.phase();
        let lr = self.cfg.schedule().lr_at(self.epoch)?;
        let n = train.len();
        let mut candidates: Vec<Option<CandidateSet>> = vec![None; n];
        let mut batches = Vec::new();
        for idx in self.batches(n) {
            let x = train.augmented_batch(&idx, &self.cfg.augment, View::Weak, self.cfg.seed, self.epoch);
            let cache = self.net.forward(x.view())?;
            let probs = Probabilities::from_logits(cache.logits().view());
            let labels: Vec<usize> = idx.iter().map(|&i| train.noisy_labels[i] as usize).collect();
            let ce = ce_loss(&probs, &labels)?;
            check_finite(ce.value, "cross-entropy loss")?;
            let grads = self.net.backward(&cache, ce.grad_logits.view())?;
            sgd_step(&mut self.net, &grads, &mut self.opt, lr)?;

            for (i, cand) in idx.iter().zip(self.build_candidates(train, &idx)?) {
                self.histograms.accumulate(*i, &cand)?;
                candidates[*i] = Some(cand);
            }
            batches.push(BatchLoss {
                size: idx.len(),
                total: ce.value,
                pll: None,
                nl: None,
                reg: None,
            });
        }
        self.finish_epoch(phase, lr, train, test, candidates, batches)
    }

    /// One robust epoch: per batch, candidates and complements from the raw
    /// view, histogram update and disambiguation, then a single step on the
    /// combined objective over stacked weak and strong views.
    pub fn robust_epoch(&mut self, train: &Dataset, test: &Dataset) -> Result<EpochReport> {
        if self.phase() != Phase::Robust || self.is_finished() {
            return Err(NpnError::InvalidState(format!(
                "epoch {} is not in the robust phase",
                self.epoch + 1
            )));
        }
        check_datasets(&self.net, train, test)?;
        let lr = self.cfg.schedule().lr_at(self.epoch)?;
        let weights = self.cfg.weights();
        let n = train.len();
        let mut candidates: Vec<Option<CandidateSet>> = vec![None; n];
        let mut batches = Vec::new();
        for idx in self.batches(n) {
            let b = idx.len();
            let cands = self.build_candidates(train, &idx)?;
            let mut comps = Vec::with_capacity(b);
            let mut disamb = Vec::with_capacity(b);
            for (&i, cand) in idx.iter().zip(&cands) {
                comps.push(build_complementary_set(cand));
                self.histograms.accumulate(i, cand)?;
                disamb.push(self.histograms.disambiguate(i)?);
            }
            for (&i, cand) in idx.iter().zip(cands) {
                candidates[i] = Some(cand);
            }

            let weak = train.augmented_batch(&idx, &self.cfg.augment, View::Weak, self.cfg.seed, self.epoch);
            let strong =
                train.augmented_batch(&idx, &self.cfg.augment, View::Strong, self.cfg.seed, self.epoch);
            let stacked = concatenate(Axis(0), &[weak.view(), strong.view()])
                .expect("views share width");
            let cache = self.net.forward(stacked.view())?;
            let probs = Probabilities::from_logits(cache.logits().view());
            let weak_probs = probs.slice_rows(0, b);
            let strong_probs = probs.slice_rows(b, 2 * b);

            let pll = if self.cfg.pll {
                match self.cfg.mode {
                    DisambiguationMode::Hard => pll_hard_loss(&weak_probs, &disamb)?,
                    DisambiguationMode::Soft => pll_soft_loss(&weak_probs, &disamb)?,
                }
            } else {
                let given: Vec<usize> = idx.iter().map(|&i| train.noisy_labels[i] as usize).collect();
                ce_loss(&weak_probs, &given)?
            };
            let nl = nl_loss(&weak_probs, &comps)?;
            let pseudo = weak_probs.argmax_rows();
            let reg = reg_loss(&strong_probs, &pseudo)?;
            let total = combined_loss(
                &pll.embed(2 * b, 0)?,
                &nl.embed(2 * b, 0)?,
                &reg.embed(2 * b, b)?,
                weights,
            )?;
            check_finite(total.value, "combined loss")?;

            let grads = self.net.backward(&cache, total.grad_logits.view())?;
            sgd_step(&mut self.net, &grads, &mut self.opt, lr)?;
            batches.push(BatchLoss {
                size: b,
                total: total.value,
                pll: Some(pll.value),
                nl: Some(nl.value),
                reg: Some(reg.value),
            });
        }
        self.finish_epoch(Phase::Robust, lr, train, test, candidates, batches)
    }

    fn build_candidates(&self, train: &Dataset, idx: &[usize]) -> Result<Vec<CandidateSet>> {
        let logits = self.net.predict(train.batch(idx).view())?;
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(NpnError::NonFinite("model output"));
        }
        let probs = Probabilities::from_logits(logits.view());
        idx.iter()
            .enumerate()
            .map(|(r, &i)| {
                let given = LabelVector::one_hot(train.noisy_labels[i] as usize, train.classes)?;
                build_candidate_set(&given, probs.row(r).as_slice().expect("standard layout"))
            })
            .collect()
    }

    fn finish_epoch(
        &mut self,
        phase: Phase,
        lr: f64,
        train: &Dataset,
        test: &Dataset,
        candidates: Vec<Option<CandidateSet>>,
        batches: Vec<BatchLoss>,
    ) -> Result<EpochReport> {
        let candidates: Vec<CandidateSet> = candidates
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| NpnError::InvalidState("a sample was not visited this epoch".into()))?;
        let (hit_rate, disamb_precision) =
            diagnostics(&self.histograms, &candidates, &train.true_labels)?;
        let test_acc = evaluate(&self.net, test)?;

        let n = train.len() as f64;
        let mean = |f: &dyn Fn(&BatchLoss) -> Option<f64>| -> Option<f64> {
            batches
                .iter()
                .map(|b| f(b).map(|v| v * b.size as f64))
                .sum::<Option<f64>>()
                .map(|s| s / n)
        };
        let loss_total = mean(&|b| Some(b.total)).unwrap_or(0.0);
        check_finite(loss_total, "epoch loss")?;
        self.epoch += 1;
        Ok(EpochReport {
            metrics: EpochMetrics {
                epoch: self.epoch,
                phase,
                lr,
                loss_total,
                loss_pll: mean(&|b| b.pll),
                loss_nl: mean(&|b| b.nl),
                loss_reg: mean(&|b| b.reg),
                test_acc,
                hit_rate,
                disamb_precision,
            },
            batches,
            candidates,
        })
    }
}

fn check_train_set(train: &Dataset) -> Result<()> {
    if train.split != Split::Train {
        return Err(NpnError::param("train", "expected the train split"));
    }
    if train.is_empty() {
        return Err(NpnError::param("train", "training set is empty"));
    }
    Ok(())
}

fn check_datasets(net: &MlpNetwork, train: &Dataset, test: &Dataset) -> Result<()> {
    if train.dim() != net.input_dim() {
        return Err(NpnError::dim("train input width", net.input_dim(), train.dim()));
    }
    if test.dim() != net.input_dim() {
        return Err(NpnError::dim("test input width", net.input_dim(), test.dim()));
    }
    if train.classes != net.classes() || test.classes != net.classes() {
        return Err(NpnError::dim("dataset classes", net.classes(), test.classes));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub config: TrainConfig,
    pub epochs: usize,
    /// Mean test accuracy over the final ten epochs (fewer if the run is shorter).
    pub last10_mean_acc: f64,
    pub best_acc: f64,
    pub final_acc: f64,
    pub wall_clock_secs: f64,
}

impl TrainSummary {
    pub fn from_metrics(config: TrainConfig, metrics: &[EpochMetrics], wall_clock_secs: f64) -> Self {
        let tail = &metrics[metrics.len().saturating_sub(10)..];
        let last10_mean_acc = if tail.is_empty() {
            0.0
        } else {
            tail.iter().map(|m| m.test_acc).sum::<f64>() / tail.len() as f64
        };
        TrainSummary {
            config,
            epochs: metrics.len(),
            last10_mean_acc,
            best_acc: metrics.iter().map(|m| m.test_acc).fold(0.0, f64::max),
            final_acc: metrics.last().map_or(0.0, |m| m.test_acc),
            wall_clock_secs,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: MlpNetwork,
    pub histograms: HistogramStore,
    pub metrics: Vec<EpochMetrics>,
    pub summary: TrainSummary,
}

fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("checkpoint-{epoch:04}.npnc"))
}

pub const FINAL_CHECKPOINT: &str = "checkpoint-final.npnc";
pub const FAILED_CHECKPOINT: &str = "checkpoint-failed.npnc";

/// Runs every epoch of `cfg`, streaming metrics and checkpoints to the
/// configured paths. On failure a checkpoint of the last good state is
/// written before the error is returned.
pub fn train(cfg: &TrainConfig, train_set: &Dataset, test_set: &Dataset) -> Result<TrainOutcome> {
    let trainer = Trainer::new(cfg.clone(), train_set)?;
    run(trainer, train_set, test_set, Vec::new())
}

/// Finishes a run from an existing trainer. `previous` holds metrics of
/// epochs already completed.
pub fn run(
    mut trainer: Trainer,
    train_set: &Dataset,
    test_set: &Dataset,
    previous: Vec<EpochMetrics>,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    let cfg = trainer.cfg.clone();
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| NpnError::io(dir, e))?;
    }
    let mut metrics_out = match &cfg.metrics_path {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).map_err(|e| NpnError::io(path, e))?);
            write!(w, "{}", metrics_csv(&previous)).map_err(|e| NpnError::io(path, e))?;
            Some((path, w))
        }
        None => None,
    };

    let mut metrics = previous;
    while !trainer.is_finished() {
        let snapshot = trainer.checkpoint(train_set);
        let report = match trainer.run_epoch(train_set, test_set) {
            Ok(r) => r,
            Err(e) => {
                if let Some(dir) = &cfg.checkpoint_dir {
                    // Best effort: the original error is what gets reported.
                    let _ = snapshot.save(&dir.join(FAILED_CHECKPOINT));
                }
                return Err(e);
            }
        };
        if let Some((path, w)) = &mut metrics_out {
            writeln!(w, "{}", report.metrics.csv_row())
                .and_then(|_| w.flush())
                .map_err(|e| NpnError::io(path.as_path(), e))?;
        }
        metrics.push(report.metrics);
        let done = trainer.next_epoch();
        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_every > 0 && done.is_multiple_of(cfg.checkpoint_every) {
                trainer.checkpoint(train_set).save(&checkpoint_path(dir, done))?;
            }
        }
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        trainer.checkpoint(train_set).save(&dir.join(FINAL_CHECKPOINT))?;
    }

    let summary =
        TrainSummary::from_metrics(cfg, &metrics, started.elapsed().as_secs_f64());
    Ok(TrainOutcome {
        net: trainer.net,
        histograms: trainer.histograms,
        metrics,
        summary,
    })
}
