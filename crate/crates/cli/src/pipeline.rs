//! The cross-validation pipeline shared by the subcommands: load and label
//! a cohort, split, then per fold fit preprocessing on the training part,
//! train, calibrate on validation and evaluate on test.

use aicare_core::analytics::{calibrate, calibrated_probability, confusion_metrics, CalibrationArtifact, MetricReport};
use aicare_core::data::{
    aggregate_same_day, assign_mortality_labels, assign_preterm_labels, fit_preprocessor, load_cohort,
    load_cohort_dir, oversample_minority, prune_sparse_features, split_stratified_kfold, Fold, LabeledCohort,
    STATIC_FILE, VISITS_FILE,
};
use aicare_core::model::{init_model, labeled_logits, train, Checkpoint, CheckpointMeta, EpochLog};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Task};

/// Loads, optionally aggregates and prunes, and labels the configured
/// cohort. Fails when the resulting schema does not match the configured
/// feature dimensions.
pub fn load_labeled(cfg: &RunConfig) -> Result<LabeledCohort> {
    let mut cohort = match &cfg.schema {
        Some(schema) => load_cohort(&cfg.data_dir.join(VISITS_FILE), &cfg.data_dir.join(STATIC_FILE), schema),
        None => load_cohort_dir(&cfg.data_dir),
    }
    .with_context(|| format!("loading cohort from {}", cfg.data_dir.display()))?;
    if cfg.aggregate_same_day {
        let dups = cohort.same_day_duplicates().len();
        if dups > 0 {
            log::info!("aggregating {dups} same-day visit groups");
            cohort = aggregate_same_day(&cohort);
        }
    }
    if let Some(rate) = cfg.max_missing_rate {
        let (pruned, removed) = prune_sparse_features(&cohort, rate)?;
        if !removed.is_empty() {
            log::info!("pruned sparse features: {}", removed.join(", "));
        }
        cohort = pruned;
    }
    let labeled = match cfg.task {
        Task::Mortality => assign_mortality_labels(&cohort, cfg.horizon_days)?,
        Task::Preterm => assign_preterm_labels(&cohort, cfg.preterm_week, cfg.window_days)?,
    };
    let (s, d) = labeled.schema.counts();
    if (s, d) != (cfg.static_feature_dim, cfg.dynamic_feature_dim) {
        bail!(
            "cohort has {d} dynamic and {s} static features, config expects {} and {}",
            cfg.dynamic_feature_dim,
            cfg.static_feature_dim
        );
    }
    Ok(labeled)
}

pub fn folds(cfg: &RunConfig, cohort: &LabeledCohort) -> Result<Vec<Fold>> {
    Ok(split_stratified_kfold(cohort, cfg.folds, cfg.seed)?)
}

pub struct FoldRun {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Test-part metrics at the checkpoint's threshold.
    pub test: MetricReport,
}

/// Trains fold `fold.index` with seed `seed + index` for initialization,
/// shuffling and oversampling.
pub fn train_fold(
    cfg: &RunConfig,
    cohort: &LabeledCohort,
    fold: &Fold,
    with_calibration: bool,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<FoldRun> {
    let i = fold.index;
    let seed = cfg.fold_seed(i);
    let pre = fit_preprocessor(cohort, &fold.train, Some(i))?;
    let mut train_split = pre.apply_split(cohort, &fold.train)?;
    if cfg.oversample {
        train_split = oversample_minority(&train_split, seed)?;
    }
    let val_split = pre.apply_split(cohort, &fold.val)?;
    let init = init_model(&cohort.schema, &cfg.hyper(i))?;
    let model = train(init, &train_split, &val_split, on_epoch)?;
    let meta = CheckpointMeta { fold: Some(i), seed, task: cfg.task.as_str().into() };
    let mut checkpoint = Checkpoint::new(cohort.schema.clone(), pre, model.params, meta);
    if with_calibration {
        checkpoint.calibration = Some(calibrate_checkpoint(&checkpoint, cohort, &fold.val, cfg.beta)?);
    }
    let test = evaluate_checkpoint(&checkpoint, cohort, &fold.test, cfg.beta)?;
    Ok(FoldRun { checkpoint, log: model.log, test })
}

fn split_logits(ckpt: &Checkpoint, cohort: &LabeledCohort, ids: &[String]) -> Result<(Vec<f64>, Vec<u8>)> {
    if cohort.schema.hash() != ckpt.schema_hash {
        bail!("schema mismatch: checkpoint {}, cohort {}", ckpt.schema_hash, cohort.schema.hash());
    }
    let tensors = ckpt.preprocessor.apply_split(cohort, ids)?;
    Ok(labeled_logits(&ckpt.params, &tensors)?)
}

/// Temperature and threshold fitted on the labeled visits of `ids`.
pub fn calibrate_checkpoint(ckpt: &Checkpoint, cohort: &LabeledCohort, ids: &[String], beta: f64) -> Result<CalibrationArtifact> {
    let (logits, labels) = split_logits(ckpt, cohort, ids)?;
    Ok(calibrate(&logits, &labels, beta)?)
}

/// Metrics over the labeled visits of `ids`, using calibrated
/// probabilities and threshold when present and 0.5 otherwise.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, cohort: &LabeledCohort, ids: &[String], beta: f64) -> Result<MetricReport> {
    let (logits, labels) = split_logits(ckpt, cohort, ids)?;
    let (t, threshold) = ckpt.calibration.as_ref().map_or((1.0, 0.5), |c| (c.temperature, c.threshold));
    let scores: Vec<f64> = logits.iter().map(|&z| calibrated_probability(z, t)).collect();
    Ok(confusion_metrics(&scores, &labels, threshold, beta)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
    pub temperature: Option<f64>,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValSummary {
    pub folds: Vec<FoldSummary>,
    pub auroc_mean: Option<f64>,
    pub auroc_sd: Option<f64>,
    pub auprc_mean: Option<f64>,
    pub auprc_sd: Option<f64>,
}

/// Mean and sample standard deviation; `None` when any value is missing.
fn mean_sd(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let Some(v) = values.iter().copied().collect::<Option<Vec<f64>>>().filter(|v| !v.is_empty()) else {
        return (None, None);
    };
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), sd)
}

pub fn summarize(folds: Vec<FoldSummary>) -> CrossValSummary {
    let (auroc_mean, auroc_sd) = mean_sd(&folds.iter().map(|f| f.auroc).collect::<Vec<_>>());
    let (auprc_mean, auprc_sd) = mean_sd(&folds.iter().map(|f| f.auprc).collect::<Vec<_>>());
    CrossValSummary { folds, auroc_mean, auroc_sd, auprc_mean, auprc_sd }
}

impl FoldRun {
    pub fn summary(&self) -> FoldSummary {
        let training = self.checkpoint.params.training.as_ref();
        FoldSummary {
            fold: self.checkpoint.meta.fold.unwrap_or(0),
            auroc: self.test.auroc,
            auprc: self.test.auprc,
            best_epoch: training.map(|t| t.best_epoch),
            epochs_run: training.map(|t| t.epochs_run),
            temperature: self.checkpoint.calibration.as_ref().map(|c| c.temperature),
            threshold: self.test.threshold,
        }
    }
}
