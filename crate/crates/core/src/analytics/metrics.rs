use serde::{Deserialize, Serialize};

use super::AnalyticsError;

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), AnalyticsError> {
    if scores.len() != labels.len() {
        return Err(AnalyticsError::Length {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(AnalyticsError::NonFinite);
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(AnalyticsError::Invalid("labels must be 0 or 1".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score, ties by ascending index.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Area under the ROC curve as the Mann-Whitney statistic with average
/// ranks, so tied pairs count one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64, AnalyticsError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(AnalyticsError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based average rank of the tie block
        let avg = (i + j) as f64 / 2.0 + 1.0;
        let block_pos = idx[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += avg * block_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: sum over distinct score thresholds of the recall
/// increment times the precision at that threshold. Tied scores enter
/// together.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64, AnalyticsError> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(AnalyticsError::NoPositives);
    }
    let idx = descending(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut block_tp = 0;
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] == 1 {
                block_tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        tp += block_tp;
        if block_tp > 0 {
            ap += (block_tp as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
        i = j;
    }
    Ok(ap)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn at_threshold(scores: &[f64], labels: &[u8], threshold: f64) -> Self {
        let mut c = Counts::default();
        for (s, l) in scores.iter().zip(labels) {
            match (*s >= threshold, *l == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    /// `(1+b^2) tp / ((1+b^2) tp + b^2 fn + fp)`; undefined only when there
    /// is nothing to score (no positives and no predicted positives).
    pub fn f_beta(&self, beta: f64) -> Option<f64> {
        let b2 = beta * beta;
        let num = (1.0 + b2) * self.tp as f64;
        let den = num + b2 * self.fn_ as f64 + self.fp as f64;
        (den > 0.0).then(|| num / den)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Threshold-dependent rates plus the ranking metrics. Rates with a zero
/// denominator are `None` (serialized as `null`), never 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: u64,
    pub threshold: f64,
    pub beta: f64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f_beta: Option<f64>,
    pub counts: Counts,
}

pub fn confusion_metrics(scores: &[f64], labels: &[u8], threshold: f64, beta: f64) -> Result<MetricReport, AnalyticsError> {
    check_inputs(scores, labels)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(AnalyticsError::Invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    let counts = Counts::at_threshold(scores, labels, threshold);
    Ok(MetricReport {
        n: counts.total(),
        threshold,
        beta,
        auroc: auroc(scores, labels).ok(),
        auprc: auprc(scores, labels).ok(),
        accuracy: counts.accuracy(),
        precision: counts.precision(),
        recall: counts.recall(),
        specificity: counts.specificity(),
        f_beta: counts.f_beta(beta),
        counts,
    })
}
