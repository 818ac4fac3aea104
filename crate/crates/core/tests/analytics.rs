use aicare_core::analytics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair_count_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Every distinct score as a cut-off, `s >= cut` predicted positive.
fn sweep_auprc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut cuts = scores.to_vec();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for c in cuts {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **s >= c && **l == 1).count() as f64;
        let predicted = scores.iter().filter(|s| **s >= c).count() as f64;
        let recall = tp / pos;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..=1000);
    let coarse = rng.random_bool(0.5);
    let rate = rng.random_range(0.05..0.95);
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(rate))).collect();
    labels[0] = 1;
    labels[1] = 0;
    let scores = (0..n)
        .map(|i| {
            let shift = if labels[i] == 1 { 0.3 } else { 0.0 };
            let s: f64 = rng.random::<f64>() + shift;
            // coarse scores force many ties
            if coarse { (s * 10.0).round() / 10.0 } else { s }
        })
        .collect();
    (scores, labels)
}

#[test]
fn ranking_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (s, y) = random_instance(&mut rng);
        assert!((auroc(&s, &y).unwrap() - pair_count_auroc(&s, &y)).abs() <= 1e-9);
        assert!((auprc(&s, &y).unwrap() - sweep_auprc(&s, &y)).abs() <= 1e-9);
    }
}

#[test]
fn metric_reference_values() {
    assert_eq!(auroc(&[0.8, 0.7, 0.6, 0.2], &[1, 0, 1, 0]).unwrap(), 0.75);
    assert_eq!(auroc(&[0.4; 5], &[1, 0, 1, 0, 0]).unwrap(), 0.5);
    assert_eq!(auprc(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
    let s = [0.9, 0.6, 0.4, 0.3];
    let y = [1, 0, 1, 0];
    assert!((auprc(&s, &y).unwrap() - sweep_auprc(&s, &y)).abs() < 1e-15);
    assert!((auprc(&s, &y).unwrap() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(AnalyticsError::SingleClass)));
    assert!(matches!(auprc(&[0.1, 0.2], &[0, 0]), Err(AnalyticsError::NoPositives)));
}

#[test]
fn random_scores_give_prevalence_auprc() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y: Vec<u8> = (0..20_000).map(|_| u8::from(rng.random_bool(0.2))).collect();
    let s: Vec<f64> = (0..y.len()).map(|_| rng.random()).collect();
    let prevalence = y.iter().filter(|&&l| l == 1).count() as f64 / y.len() as f64;
    assert!((auprc(&s, &y).unwrap() - prevalence).abs() < 0.05);
}

#[test]
fn confusion_fixture() {
    let s = [0.9, 0.8, 0.7, 0.6, 0.4, 0.3, 0.2];
    let y = [1, 1, 0, 0, 1, 0, 0];
    // threshold 0.65: predicted positive 0.9, 0.8, 0.7
    let r = confusion_metrics(&s, &y, 0.65, 1.0).unwrap();
    assert_eq!((r.counts.tp, r.counts.fp, r.counts.tn, r.counts.fn_), (2, 1, 3, 1));
    assert_eq!(r.precision, Some(2.0 / 3.0));
    assert_eq!(r.recall, Some(2.0 / 3.0));
    assert_eq!(r.specificity, Some(0.75));
    assert_eq!(r.accuracy, Some(5.0 / 7.0));
    assert_eq!(r.counts.total(), 7);

    let none = confusion_metrics(&s, &y, 0.95, 1.0).unwrap();
    assert_eq!(none.recall, Some(0.0));
    assert_eq!(none.specificity, Some(1.0));
    assert_eq!(none.precision, None);
    let json = serde_json::to_value(&none).unwrap();
    assert!(json["precision"].is_null());
    assert_eq!(json["counts"]["fn"], 3);
}

/// Calibrated source: `x ~ N(0, 1.5)`, `y ~ Bernoulli(sigmoid(x))`; the
/// returned logits are `scale * x`.
fn scaled_logits(scale: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, 1.5).unwrap();
    let mut logits = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.sample(normal);
        labels.push(u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-x).exp())));
        logits.push(scale * x);
    }
    (logits, labels)
}

fn grid_oracle(logits: &[f64], labels: &[u8]) -> f64 {
    let mut best = (f64::INFINITY, 1.0);
    for i in 0..=20_000 {
        let t = T_MIN + (T_MAX - T_MIN) * i as f64 / 20_000.0;
        let l = bce_at_temperature(logits, labels, t);
        if l < best.0 {
            best = (l, t);
        }
    }
    best.1
}

#[test]
fn temperature_recovers_known_scale() {
    let (z, y) = scaled_logits(3.0, 10_000, 11);
    let fit = fit_temperature(&z, &y).unwrap();
    assert!((fit.temperature - 3.0).abs() < 0.15, "T = {}", fit.temperature);
    assert!((fit.temperature - grid_oracle(&z, &y)).abs() < 1e-3);

    let (z, y) = scaled_logits(1.0, 10_000, 12);
    let fit = fit_temperature(&z, &y).unwrap();
    assert!((fit.temperature - 1.0).abs() < 0.05, "T = {}", fit.temperature);
}

#[test]
fn temperature_errors_and_degenerate_input() {
    assert!(matches!(fit_temperature(&[1.0, 2.0], &[1, 1]), Err(AnalyticsError::SingleClass)));
    assert!(fit_temperature(&[1.0], &[1, 0]).is_err());
    let fit = fit_temperature(&[0.3; 4], &[1, 0, 1, 0]).unwrap();
    assert_eq!(fit.temperature, 1.0);
    assert!(fit.warning.is_some());
}

#[test]
fn calibrate_composes_temperature_and_threshold() {
    let (z, y) = scaled_logits(2.0, 2_000, 13);
    let art = calibrate(&z, &y, 1.0).unwrap();
    let fit = fit_temperature(&z, &y).unwrap();
    assert_eq!(art.temperature, fit.temperature);
    let probs: Vec<f64> = z.iter().map(|&l| calibrated_probability(l, fit.temperature)).collect();
    assert_eq!(art.threshold, select_threshold(&probs, &y, 1.0).unwrap().threshold);
    assert_eq!(art.validation, confusion_metrics(&probs, &y, art.threshold, 1.0).unwrap());
    assert_eq!(art.probability(0.7), calibrated_probability(0.7, art.temperature));
}

fn exhaustive_threshold(probs: &[f64], labels: &[u8], beta: f64) -> f64 {
    let grid: Vec<f64> = (0..200).map(|i| 0.01 + 0.98 * i as f64 / 199.0).collect();
    let b2 = beta * beta;
    let score = |t: f64| {
        let tp = probs.iter().zip(labels).filter(|(p, l)| **p >= t && **l == 1).count() as f64;
        let fp = probs.iter().zip(labels).filter(|(p, l)| **p >= t && **l == 0).count() as f64;
        let fneg = probs.iter().zip(labels).filter(|(p, l)| **p < t && **l == 1).count() as f64;
        let denom = (1.0 + b2) * tp + b2 * fneg + fp;
        if denom == 0.0 { 0.0 } else { (1.0 + b2) * tp / denom }
    };
    let scores: Vec<f64> = grid.iter().map(|&t| score(t)).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    grid[scores.iter().position(|&s| s == max).unwrap()]
}

#[test]
fn threshold_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let n = rng.random_range(2..300);
        let mut y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        y[0] = 1;
        y[1] = 0;
        let p: Vec<f64> = y
            .iter()
            .map(|&l| (rng.random::<f64>() * 0.8 + 0.2 * f64::from(l)).clamp(0.0, 1.0))
            .collect();
        let beta = [0.5, 1.0, 2.0][case % 3];
        let got = select_threshold(&p, &y, beta).unwrap();
        assert_eq!(got.threshold, exhaustive_threshold(&p, &y, beta));
        assert_eq!(got.threshold, threshold_grid()[got.index]);
    }
}

#[test]
fn threshold_tie_goes_low() {
    let p = [0.3, 0.3, 0.7, 0.7];
    let y = [0, 0, 1, 1];
    let got = select_threshold(&p, &y, 1.0).unwrap();
    assert_eq!(got.f_beta, 1.0);
    // first grid point above 0.3
    let first = threshold_grid().into_iter().find(|&t| t > 0.3).unwrap();
    assert_eq!(got.threshold, first);
}

#[test]
fn larger_beta_never_raises_threshold() {
    let p = [0.05, 0.12, 0.2, 0.25, 0.33, 0.4, 0.45, 0.52, 0.6, 0.66, 0.71, 0.8, 0.85, 0.9, 0.15, 0.35, 0.55, 0.28, 0.48, 0.62];
    let y = [0, 0, 1, 0, 0, 1, 0, 1, 0, 1, 1, 1, 0, 1, 0, 1, 0, 0, 1, 1];
    let mut prev = f64::INFINITY;
    for beta in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 32.0] {
        let t = select_threshold(&p, &y, beta).unwrap().threshold;
        assert_eq!(t, exhaustive_threshold(&p, &y, beta));
        assert!(t <= prev, "beta {beta}: {t} > {prev}");
        prev = t;
    }
}

fn logits_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..200).prop_flat_map(|n| {
        (prop::collection::vec(-8.0f64..8.0, n), prop::collection::vec(0u8..=1, n)).prop_filter(
            "both classes",
            |(_, y)| y.contains(&0) && y.contains(&1),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn calibration_keeps_ranking_and_never_hurts_bce((z, y) in logits_and_labels()) {
        let fit = fit_temperature(&z, &y).unwrap();
        prop_assert!(fit.temperature >= T_MIN && fit.temperature <= T_MAX, "{:?}", fit);
        prop_assert!(fit.bce_fitted <= bce_at_temperature(&z, &y, 1.0));
        let p: Vec<f64> = z.iter().map(|&v| calibrated_probability(v, fit.temperature)).collect();
        prop_assert!((auroc(&p, &y).unwrap() - auroc(&z, &y).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn report_rates_recompute_from_counts((z, y) in logits_and_labels(), t in 0.01f64..0.99) {
        let p: Vec<f64> = z.iter().map(|&v| calibrated_probability(v, 1.0)).collect();
        let r = confusion_metrics(&p, &y, t, 1.0).unwrap();
        let c = r.counts;
        prop_assert_eq!(c.total() as usize, y.len());
        prop_assert_eq!(r.accuracy, Some((c.tp + c.tn) as f64 / c.total() as f64));
        if c.tp + c.fp > 0 {
            prop_assert_eq!(r.precision, Some(c.tp as f64 / (c.tp + c.fp) as f64));
        }
        prop_assert_eq!(r.recall, Some(c.tp as f64 / (c.tp + c.fn_) as f64));
        prop_assert_eq!(r.specificity, Some(c.tn as f64 / (c.tn + c.fp) as f64));
    }

    #[test]
    fn threshold_is_grid_argmax((z, y) in logits_and_labels()) {
        let p: Vec<f64> = z.iter().map(|&v| calibrated_probability(v, 1.0)).collect();
        let got = select_threshold(&p, &y, 1.0).unwrap();
        for t in threshold_grid() {
            let f = Counts::at_threshold(&p, &y, t).f_beta(1.0).unwrap_or(0.0);
            prop_assert!(got.f_beta >= f);
        }
    }
}
