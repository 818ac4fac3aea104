use serde::{Deserialize, Serialize};

use super::metrics::{confusion_metrics, Counts, MetricReport};
use super::AnalyticsError;
use crate::numeric::sigmoid_scalar;

pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 10.0;
const GRID: usize = 200;
const T_TOL: f64 = 1e-4;

/// Post-hoc calibration selected on a validation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub temperature: f64,
    pub threshold: f64,
    pub beta: f64,
    /// Validation metrics of the calibrated probabilities at `threshold`.
    pub validation: MetricReport,
}

impl CalibrationArtifact {
    pub fn probability(&self, logit: f64) -> f64 {
        calibrated_probability(logit, self.temperature)
    }
}

pub fn calibrated_probability(logit: f64, temperature: f64) -> f64 {
    sigmoid_scalar(logit / temperature)
}

/// Mean binary cross-entropy of `sigmoid(logit / t)`, computed stably from
/// logits.
pub fn bce_at_temperature(logits: &[f64], labels: &[u8], t: f64) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let z = z / t;
            z.max(0.0) - z * f64::from(y) + (-z.abs()).exp().ln_1p()
        })
        .sum();
    total / logits.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub bce_identity: f64,
    pub bce_fitted: f64,
    pub warning: Option<String>,
}

/// The temperature in `[0.05, 10]` minimizing validation BCE: a 200-point
/// log-spaced grid, then golden-section refinement around the best point.
/// Falls back to `T = 1` whenever that is no worse.
pub fn fit_temperature(logits: &[f64], labels: &[u8]) -> Result<TemperatureFit, AnalyticsError> {
    if logits.len() != labels.len() {
        return Err(AnalyticsError::Length {
            scores: logits.len(),
            labels: labels.len(),
        });
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(AnalyticsError::NonFinite);
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(AnalyticsError::SingleClass);
    }
    let bce_identity = bce_at_temperature(logits, labels, 1.0);
    if logits.iter().all(|&z| z == logits[0]) {
        let warning = "all validation logits are equal; temperature left at 1".to_string();
        log::warn!("{warning}");
        return Ok(TemperatureFit {
            temperature: 1.0,
            bce_identity,
            bce_fitted: bce_identity,
            warning: Some(warning),
        });
    }

    let loss = |t: f64| bce_at_temperature(logits, labels, t);
    let (lo_ln, hi_ln) = (T_MIN.ln(), T_MAX.ln());
    let grid: Vec<f64> = (0..GRID)
        .map(|i| (lo_ln + (hi_ln - lo_ln) * i as f64 / (GRID - 1) as f64).exp().clamp(T_MIN, T_MAX))
        .collect();
    let losses: Vec<f64> = grid.iter().map(|&t| loss(t)).collect();
    let best = (0..GRID).fold(0, |b, i| if losses[i] < losses[b] { i } else { b });

    // golden-section on the bracket around the best grid point
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(GRID - 1)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (loss(c), loss(d));
    while b - a > T_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = loss(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = loss(d);
        }
    }
    let mut t = (a + b) / 2.0;
    let mut fitted = loss(t);
    if losses[best] < fitted {
        t = grid[best];
        fitted = losses[best];
    }
    if fitted > bce_identity {
        t = 1.0;
        fitted = bce_identity;
    }
    Ok(TemperatureFit {
        temperature: t,
        bce_identity,
        bce_fitted: fitted,
        warning: None,
    })
}

/// The 200 candidate thresholds, evenly spaced from 0.01 to 0.99.
pub fn threshold_grid() -> Vec<f64> {
    (0..GRID).map(|i| 0.01 + 0.98 * i as f64 / (GRID - 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub index: usize,
    pub f_beta: f64,
    pub counts: Counts,
}

/// The grid threshold maximizing F-beta (prediction is `p >= threshold`).
/// Ties go to the lowest threshold; an undefined F-beta scores 0.
pub fn select_threshold(probs: &[f64], labels: &[u8], beta: f64) -> Result<ThresholdChoice, AnalyticsError> {
    if probs.len() != labels.len() {
        return Err(AnalyticsError::Length {
            scores: probs.len(),
            labels: labels.len(),
        });
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(AnalyticsError::Invalid(format!("beta must be positive, got {beta}")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(AnalyticsError::SingleClass);
    }
    let grid = threshold_grid();
    let mut best: Option<ThresholdChoice> = None;
    for (index, &threshold) in grid.iter().enumerate() {
        let counts = Counts::at_threshold(probs, labels, threshold);
        let f = counts.f_beta(beta).unwrap_or(0.0);
        if best.as_ref().is_none_or(|b| f > b.f_beta) {
            best = Some(ThresholdChoice {
                threshold,
                index,
                f_beta: f,
                counts,
            });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Temperature on validation logits, then the F-beta threshold on the
/// calibrated probabilities, with the validation report at that threshold.
pub fn calibrate(logits: &[f64], labels: &[u8], beta: f64) -> Result<CalibrationArtifact, AnalyticsError> {
    let fit = fit_temperature(logits, labels)?;
    let probs: Vec<f64> = logits.iter().map(|&z| calibrated_probability(z, fit.temperature)).collect();
    let choice = select_threshold(&probs, labels, beta)?;
    Ok(CalibrationArtifact {
        temperature: fit.temperature,
        threshold: choice.threshold,
        beta,
        validation: confusion_metrics(&probs, labels, choice.threshold, beta)?,
    })
}
