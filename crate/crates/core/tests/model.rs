use std::time::Instant;

use aicare_core::analytics::*;
use aicare_core::data::*;
use aicare_core::model::*;
use aicare_core::numeric::{finite_difference_check, Tensor};
use proptest::prelude::*;

fn tiny_hyper() -> ModelHyper {
    ModelHyper {
        hidden_dim: 4,
        n_heads: 2,
        lambda_dec: 0.5,
        ..ModelHyper::xy(2, 1)
    }
}

fn tiny_schema() -> FeatureSchema {
    FeatureSchema::new(vec![
        Feature::static_("Age", "years", false),
        Feature::dynamic("Albumin", "g/L"),
        Feature::dynamic("Creatinine", "umol/L"),
    ])
    .unwrap()
}

/// Patient with already-normalized values; `filled` mirrors `values`.
fn patient(id: &str, times: &[f64], values: &[[f64; 2]], stat: f64, labels: &[Option<u8>]) -> PatientTensor {
    let flat: Vec<f64> = values.iter().flatten().copied().collect();
    PatientTensor {
        patient_id: id.into(),
        times: times.to_vec(),
        n_dynamic: 2,
        filled: flat.clone(),
        observed: vec![true; flat.len()],
        values: flat,
        static_values: vec![stat],
        static_filled: vec![stat],
        static_observed: vec![true],
        labels: labels.to_vec(),
        duplicate: false,
    }
}

fn tiny_params(seed: u64) -> ModelParams {
    let h = ModelHyper { seed, ..tiny_hyper() };
    init_model(&tiny_schema(), &h).unwrap()
}

fn tiny_patients() -> Vec<PatientTensor> {
    vec![
        patient("A", &[0.0, 30.0, 400.0], &[[0.3, -1.2], [0.8, 0.1], [-0.5, 1.7]], 0.4, &[Some(0), None, Some(1)]),
        patient("B", &[0.0, 7.0, 90.0], &[[-1.0, 0.6], [1.1, -0.3], [0.2, 0.9]], -1.3, &[Some(1), Some(0), Some(1)]),
    ]
}

#[test]
fn tiny_model_gradient_matches_finite_differences() {
    let started = Instant::now();
    let params = tiny_params(42);
    let patients = tiny_patients();
    let h = params.hyper.clone();
    let report = finite_difference_check(&weight_tensors(&params), 1e-5, |tape, vars| {
        batch_loss_on_tape(tape, vars, &h, &patients)
    })
    .unwrap();
    assert_eq!(report.coordinates, params.weights.n_parameters());
    assert!(report.max_relative_error < 1e-4, "{report:?}");
    assert!(started.elapsed().as_secs_f64() < 10.0);
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// `a [n, k] * w [k, m]` with `w` row-major.
fn matmul(a: &[Vec<f64>], w: &[f64], m: usize) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| (0..m).map(|j| row.iter().enumerate().map(|(i, x)| x * w[i * m + j]).sum()).collect())
        .collect()
}

/// Straight-line re-implementation of the network equations, one scalar at
/// a time.
fn scalar_logits(p: &ModelParams, pt: &PatientTensor) -> Vec<f64> {
    let h = p.hyper.hidden_dim;
    let (d, s, nh) = (p.hyper.dynamic_dim, p.hyper.static_dim, p.hyper.n_heads);
    let dh = h / nh;
    let w = &p.weights;
    let (wx, uzr, uh, b) = (w.gru_wx.data(), w.gru_uzr.data(), w.gru_uh.data(), w.gru_b.data());
    let mut state = vec![vec![0.0; h]; d];
    let mut out = Vec::new();
    for t in 0..pt.n_visits() {
        let gap = if t == 0 { 0.0 } else { ((pt.times[t] - pt.times[t - 1]) / 30.0).ln_1p() };
        for c in 0..d {
            let x = [pt.values[t * d + c], gap];
            let hp = state[c].clone();
            let gx = |k: usize| wx[(c * 3 * h + k) * 2] * x[0] + wx[(c * 3 * h + k) * 2 + 1] * x[1] + b[c * 3 * h + k];
            let gh = |k: usize| (0..h).map(|j| uzr[(c * 2 * h + k) * h + j] * hp[j]).sum::<f64>();
            let z: Vec<f64> = (0..h).map(|k| sigmoid(gx(k) + gh(k))).collect();
            let r: Vec<f64> = (0..h).map(|k| sigmoid(gx(h + k) + gh(h + k))).collect();
            for k in 0..h {
                let rec: f64 = (0..h).map(|j| uh[(c * h + k) * h + j] * r[j] * hp[j]).sum();
                let cand = (gx(2 * h + k) + rec).tanh();
                state[c][k] = hp[k] + z[k] * (cand - hp[k]);
            }
        }
        let mut rows = state.clone();
        for j in 0..s {
            rows.push(
                (0..h)
                    .map(|k| (pt.static_values[j] * w.static_w.data()[j * h + k] + w.static_b.data()[j * h + k]).tanh())
                    .collect(),
            );
        }
        let n = rows.len();
        let q = matmul(&rows, w.attn_wq.data(), h);
        let kk = matmul(&rows, w.attn_wk.data(), h);
        let v = matmul(&rows, w.attn_wv.data(), h);
        let mut concat = vec![vec![0.0; h]; n];
        for head in 0..nh {
            let cols = head * dh..(head + 1) * dh;
            for a in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|bb| cols.clone().map(|c| q[a][c] * kk[bb][c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let att = softmax(&scores);
                for c in cols.clone() {
                    concat[a][c] = (0..n).map(|bb| att[bb] * v[bb][c]).sum();
                }
            }
        }
        let mixed = matmul(&concat, w.attn_wo.data(), h);
        let ctx: Vec<Vec<f64>> = (0..n).map(|a| (0..h).map(|c| rows[a][c] + mixed[a][c]).collect()).collect();
        let pooled: Vec<f64> = (0..h).map(|c| ctx.iter().map(|r| r[c]).sum::<f64>() / n as f64).collect();
        let query = &matmul(&[pooled], w.term_wq.data(), h)[0];
        let keys = matmul(&ctx, w.term_wk.data(), h);
        let alpha = softmax(
            &keys.iter().map(|k| k.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / (h as f64).sqrt()).collect::<Vec<_>>(),
        );
        let summary: Vec<f64> = (0..h).map(|c| (0..n).map(|a| alpha[a] * rows[a][c]).sum()).collect();
        out.push(summary.iter().zip(w.out_w.data()).map(|(a, b)| a * b).sum::<f64>() + w.out_b.data()[0]);
    }
    out
}

#[test]
fn forward_matches_scalar_oracle() {
    for seed in [1, 42, 99] {
        let params = tiny_params(seed);
        for p in tiny_patients() {
            let got = forward_logits(&params, &p).unwrap();
            let want = scalar_logits(&params, &p);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }
}

#[test]
fn zero_weights_give_even_odds() {
    let h = ModelHyper {
        dynamic_dim: 1,
        static_dim: 0,
        ..tiny_hyper()
    };
    let schema = FeatureSchema::new(vec![Feature::dynamic("Albumin", "g/L")]).unwrap();
    let shaped = init_model(&schema, &h).unwrap();
    let zeros = shaped.weights.to_vec().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let model = ModelParams {
        hyper: h,
        weights: Weights::from_vec(zeros).unwrap(),
        training: None,
    };
    let p = PatientTensor {
        patient_id: "Z".into(),
        times: vec![0.0],
        n_dynamic: 1,
        values: vec![1.7],
        filled: vec![1.7],
        observed: vec![true],
        static_values: vec![],
        static_filled: vec![],
        static_observed: vec![],
        labels: vec![Some(1)],
        duplicate: false,
    };
    let out = forward(&model, &p, 1).unwrap();
    assert_eq!(out.logits, vec![0.0]);
    assert_eq!(out.probabilities, vec![0.5]);
    assert_eq!(out.importances, vec![vec![1.0]]);
}

#[test]
fn prefix_bounds_are_checked() {
    let params = tiny_params(3);
    let p = &tiny_patients()[0];
    assert!(matches!(forward(&params, p, 0), Err(ModelError::Shape(_))));
    assert!(matches!(forward(&params, p, 4), Err(ModelError::Shape(_))));
    let mut wide = p.clone();
    wide.static_values.push(0.0);
    assert!(matches!(forward(&params, &wide, 1), Err(ModelError::Shape(_))));
}

#[test]
fn hyper_validation() {
    let bad = ModelHyper {
        hidden_dim: 6,
        n_heads: 4,
        ..tiny_hyper()
    };
    assert!(matches!(init_model(&tiny_schema(), &bad), Err(ModelError::Hyper(_))));
    let wrong_width = ModelHyper {
        dynamic_dim: 3,
        ..tiny_hyper()
    };
    assert!(init_model(&tiny_schema(), &wrong_width).is_err());
}

#[test]
fn xy_parameter_shapes() {
    let schema = xy_schema();
    let (s, d) = schema.counts();
    assert_eq!((s, d), (7, 33));
    let h = ModelHyper::xy(d, s);
    assert_eq!((h.hidden_dim, h.lr, h.batch_size, h.max_epochs, h.patience, h.seed), (128, 1e-3, 32, 30, 10, 42));
    let p = init_model(&schema, &h).unwrap();
    let shapes: Vec<Vec<usize>> = p.weights.tensors().iter().map(|t| t.shape().to_vec()).collect();
    assert_eq!(
        shapes,
        vec![
            vec![33, 384, 2],
            vec![33, 256, 128],
            vec![33, 128, 128],
            vec![33, 384],
            vec![7, 128],
            vec![7, 128],
            vec![128, 128],
            vec![128, 128],
            vec![128, 128],
            vec![128, 128],
            vec![128, 128],
            vec![128, 128],
            vec![128, 1],
            vec![1],
        ]
    );
    let hd = 128;
    let per_channel = 3 * hd * 2 + 2 * hd * hd + hd * hd + 3 * hd;
    assert_eq!(p.weights.n_parameters(), 33 * per_channel + 7 * 2 * hd + 6 * hd * hd + hd + 1);
}

#[test]
fn init_is_deterministic() {
    let a = tiny_params(42);
    let b = tiny_params(42);
    assert_eq!(a.hash(), b.hash());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_ne!(a.hash(), tiny_params(43).hash());
}

#[test]
fn loss_reference_cases() {
    let heads_same = vec![vec![vec![1.0, 2.0, 0.0], vec![2.0, 4.0, 0.0]]];
    let heads_orth = vec![vec![vec![1.0, 0.0], vec![0.0, 3.0]]];
    let out = |logits: Vec<f64>, heads: Vec<Vec<Vec<f64>>>| PerVisitOutputs {
        probabilities: logits.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect(),
        importances: vec![vec![1.0]; logits.len()],
        logits,
        head_outputs: heads,
    };
    let confident = loss(&out(vec![40.0], heads_orth.clone()), &[Some(1)], 0.0).unwrap();
    assert!(confident < 1e-15);
    let identical = loss(&out(vec![40.0], heads_same), &[Some(1)], 0.2).unwrap();
    assert!((identical - 0.2).abs() < 1e-12);
    let orthogonal = loss(&out(vec![40.0], heads_orth.clone()), &[Some(1)], 0.2).unwrap();
    assert!(orthogonal < 1e-15);
    let even = loss(&out(vec![0.0, 5.0], vec![]), &[Some(0), None], 0.0).unwrap();
    assert!((even - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(matches!(loss(&out(vec![0.0], vec![]), &[None], 0.0), Err(ModelError::NoLabels)));
}

#[test]
fn value_loss_matches_tape_loss() {
    let params = tiny_params(8);
    let p = tiny_patients().remove(0);
    let out = forward(&params, &p, p.n_visits()).unwrap();
    let direct = loss(&out, &p.labels, params.hyper.lambda_dec).unwrap();
    let mut tape = aicare_core::numeric::Tape::new();
    let vars: Vec<_> = weight_tensors(&params).into_iter().map(|t| tape.leaf(t)).collect();
    let root = batch_loss_on_tape(&mut tape, &vars, &params.hyper, std::slice::from_ref(&p)).unwrap();
    assert!((tape.value(root).data()[0] - direct).abs() < 1e-12);
}

fn swap_channels(params: &ModelParams) -> ModelParams {
    let mut w = params.weights.to_vec();
    for t in w.iter_mut().take(4) {
        let block = t.len() / t.shape()[0];
        let mut data = t.data().to_vec();
        let (a, b) = data.split_at_mut(block);
        a.swap_with_slice(&mut b[..block]);
        *t = Tensor::new(t.shape().to_vec(), data).unwrap();
    }
    ModelParams {
        weights: Weights::from_vec(w).unwrap(),
        ..params.clone()
    }
}

#[test]
fn channel_permutation_permutes_importance() {
    let params = tiny_params(21);
    let swapped = swap_channels(&params);
    for p in tiny_patients() {
        let mut q = p.clone();
        for t in 0..q.n_visits() {
            q.values.swap(2 * t, 2 * t + 1);
        }
        let a = forward(&params, &p, p.n_visits()).unwrap();
        let b = forward(&swapped, &q, q.n_visits()).unwrap();
        for t in 0..p.n_visits() {
            assert!((a.logits[t] - b.logits[t]).abs() < 1e-12);
            let (ia, ib) = (&a.importances[t], &b.importances[t]);
            assert!((ia[0] - ib[1]).abs() < 1e-12 && (ia[1] - ib[0]).abs() < 1e-12 && (ia[2] - ib[2]).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_init_is_channel_symmetric() {
    let params = tiny_params(5);
    let zeros: Vec<Tensor> = params.weights.to_vec().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let model = ModelParams {
        weights: Weights::from_vec(zeros).unwrap(),
        ..params
    };
    let out = forward(&model, &tiny_patients()[0], 3).unwrap();
    for imp in &out.importances {
        assert!(imp.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }
}

fn arb_patient() -> impl Strategy<Value = PatientTensor> {
    (1usize..6).prop_flat_map(|n| {
        (
            prop::collection::vec(1.0f64..200.0, n),
            prop::collection::vec(-3.0f64..3.0, 2 * n),
            -2.0f64..2.0,
            prop::collection::vec(prop::option::of(0u8..=1), n),
        )
            .prop_map(move |(gaps, vals, stat, labels)| {
                let times: Vec<f64> = gaps.iter().scan(0.0, |t, g| {
                    let now = *t;
                    *t += g.round();
                    Some(now)
                }).collect();
                let values: Vec<[f64; 2]> = vals.chunks(2).map(|c| [c[0], c[1]]).collect();
                patient("P", &times, &values, stat, &labels)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn importances_form_a_simplex(p in arb_patient(), seed in 0u64..1000) {
        let out = forward(&tiny_params(seed), &p, p.n_visits()).unwrap();
        for imp in &out.importances {
            prop_assert_eq!(imp.len(), 3);
            prop_assert!(imp.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((imp.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
        prop_assert!(out.probabilities.iter().all(|&q| q > 0.0 && q < 1.0));
    }

    #[test]
    fn later_visits_never_change_earlier_outputs(p in arb_patient(), cut in 0usize..5, noise in -5.0f64..5.0) {
        let params = tiny_params(17);
        let n = p.n_visits();
        let cut = cut.min(n - 1);
        let mut q = p.clone();
        for v in &mut q.values[(cut + 1) * 2..] {
            *v += noise;
        }
        for t in &mut q.times[cut + 1..] {
            *t += 11.0;
        }
        let a = forward(&params, &p, n).unwrap();
        let b = forward(&params, &q, n).unwrap();
        for t in 0..=cut {
            prop_assert_eq!(a.logits[t], b.logits[t]);
            prop_assert_eq!(&a.importances[t], &b.importances[t]);
        }
    }

    #[test]
    fn trajectory_equals_per_prefix_forward(p in arb_patient()) {
        let params = tiny_params(23);
        let a = predict_trajectory(&params, &p, None).unwrap();
        prop_assert_eq!(a.visits.len(), p.n_visits());
        for (t, v) in a.visits.iter().enumerate() {
            let alone = forward(&params, &p.prefix(t + 1), t + 1).unwrap();
            prop_assert_eq!(v.logit, alone.logits[t]);
            prop_assert_eq!(&v.importance, &alone.importances[t]);
            prop_assert_eq!(v.calibrated, None);
        }
    }
}

fn assessment_with(importance: Vec<f64>) -> RiskAssessment {
    let n = importance.len();
    RiskAssessment {
        patient_id: "R".into(),
        temperature: None,
        threshold: None,
        visits: vec![VisitAssessment {
            index: 0,
            time: 0.0,
            logit: 0.0,
            probability: 0.5,
            calibrated: None,
            importance,
            values: (0..n).map(|i| i as f64 + 0.5).collect(),
            observed: (0..n).map(|i| i != 1).collect(),
            label: None,
        }],
    }
}

#[test]
fn ranking_reference_cases() {
    let schema = tiny_schema();
    let ranked = rank_features(&assessment_with(vec![0.5, 0.3, 0.2]), &schema, 0, 2).unwrap();
    let names: Vec<&str> = ranked.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["Albumin", "Creatinine"]);
    assert_eq!(ranked[1].unit, "umol/L");
    assert!(ranked[1].imputed && !ranked[0].imputed);
    assert_eq!(ranked[0].value, 0.5);

    let tied = rank_features(&assessment_with(vec![0.25, 0.25, 0.5]), &schema, 0, 3).unwrap();
    let names: Vec<&str> = tied.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["Age", "Albumin", "Creatinine"]);

    assert!(rank_features(&assessment_with(vec![1.0, 0.0, 0.0]), &schema, 0, 0).is_err());
    assert!(rank_features(&assessment_with(vec![1.0, 0.0, 0.0]), &schema, 1, 1).is_err());
}

#[test]
fn ranked_percentages_sum_to_hundred() {
    let params = tiny_params(4);
    let p = tiny_patients().remove(1);
    let a = predict_trajectory(&params, &p, None).unwrap();
    for t in 0..p.n_visits() {
        let ranked = rank_features(&a, &tiny_schema(), t, 3).unwrap();
        let pct: f64 = ranked.iter().map(|r| (r.importance * 100.0 * 100.0).round() / 100.0).sum();
        assert!((pct - 100.0).abs() <= 0.01 + 1e-9);
        assert!(ranked.windows(2).all(|w| w[0].importance >= w[1].importance));
    }
}

#[test]
fn identity_calibration_changes_nothing() {
    let params = tiny_params(6);
    let p = tiny_patients().remove(0);
    let report = confusion_metrics(&[0.2, 0.8], &[0, 1], 0.5, 1.0).unwrap();
    let cal = CalibrationArtifact {
        temperature: 1.0,
        threshold: 0.5,
        beta: 1.0,
        validation: report,
    };
    let a = predict_trajectory(&params, &p, Some(&cal)).unwrap();
    for v in &a.visits {
        assert_eq!(v.calibrated, Some(v.probability));
    }
    assert_eq!(a.threshold, Some(0.5));
}

/// A small labeled synthetic cohort and its first fold.
fn small_cohort() -> (LabeledCohort, Fold) {
    let spec = SyntheticSpec {
        n_patients: 60,
        n_dynamic: 4,
        n_static: 2,
        min_visits: 3,
        max_visits: 8,
        planted: vec![0, 1],
        weights: vec![1.0, 1.0],
        threshold: 1.2,
        seed: 9,
        ..SyntheticSpec::default()
    };
    let labeled = assign_mortality_labels(&generate_synthetic_cohort(&spec).unwrap(), 365.0).unwrap();
    let fold = split_stratified_kfold(&labeled, 3, 9).unwrap().remove(0);
    (labeled, fold)
}

fn small_checkpoint(cohort: &LabeledCohort, fold: &Fold) -> Checkpoint {
    let pre = fit_preprocessor(cohort, &fold.train, Some(0)).unwrap();
    let (s, d) = cohort.schema.counts();
    let hyper = ModelHyper {
        hidden_dim: 8,
        n_heads: 2,
        max_epochs: 2,
        ..ModelHyper::xy(d, s)
    };
    let params = init_model(&cohort.schema, &hyper).unwrap();
    Checkpoint::new(cohort.schema.clone(), pre, params, CheckpointMeta::default())
}

#[test]
fn training_is_deterministic_and_bounded() {
    let (cohort, fold) = small_cohort();
    let ckpt = small_checkpoint(&cohort, &fold);
    let train_split = oversample_minority(&ckpt.preprocessor.apply_split(&cohort, &fold.train).unwrap(), 1).unwrap();
    let val = ckpt.preprocessor.apply_split(&cohort, &fold.val).unwrap();
    let run = || {
        let mut seen = Vec::new();
        let m = train(ckpt.params.clone(), &train_split, &val, |e| seen.push(e.epoch)).unwrap();
        (m, seen)
    };
    let (a, seen) = run();
    let (b, _) = run();
    assert_eq!(a.params.hash(), b.params.hash());
    assert_eq!(a.log, b.log);
    assert_eq!(seen, vec![1, 2]);
    let meta = a.params.training.clone().unwrap();
    assert!(meta.epochs_run <= 2);
    let best = a.log.iter().map(|e| e.val_auprc).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(meta.best_val_auprc, best);
}

#[test]
fn plain_bce_training_reduces_loss_on_separable_toy() {
    let hyper = ModelHyper {
        hidden_dim: 4,
        n_heads: 1,
        lambda_dec: 0.0,
        lr: 0.01,
        batch_size: 8,
        max_epochs: 25,
        patience: 25,
        ..tiny_hyper()
    };
    let params = init_model(&tiny_schema(), &hyper).unwrap();
    let toy: Vec<PatientTensor> = (0..16)
        .map(|i| {
            let y = (i % 2) as u8;
            let v = if y == 1 { 1.5 } else { -1.5 };
            let jitter = i as f64 * 0.01;
            patient(&format!("T{i}"), &[0.0, 30.0], &[[v + jitter, 0.1], [v, -0.1]], 0.0, &[Some(y), Some(y)])
        })
        .collect();
    let m = train(params, &toy, &toy, |_| {}).unwrap();
    let first = m.log.first().unwrap().train_loss;
    let last = m.log.last().unwrap().train_loss;
    assert!(last < first * 0.5, "{first} -> {last}");
    assert_eq!(m.params.training.unwrap().best_val_auprc, 1.0);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (cohort, fold) = small_cohort();
    let mut ckpt = small_checkpoint(&cohort, &fold);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    assert_eq!(loaded.model_hash(), ckpt.model_hash());

    let hash = ckpt.model_hash();
    ckpt.calibration = Some(CalibrationArtifact {
        temperature: 1.7,
        threshold: 0.3,
        beta: 1.0,
        validation: confusion_metrics(&[0.2, 0.8], &[0, 1], 0.3, 1.0).unwrap(),
    });
    assert_eq!(ckpt.model_hash(), hash);
    ckpt.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);

    let mut tampered = ckpt.clone();
    tampered.magic = "NOPE".into();
    tampered.save(&path).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(ModelError::Checkpoint(_))));
    let mut tampered = ckpt.clone();
    tampered.schema_hash = "0".repeat(64);
    tampered.save(&path).unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn prepare_refuses_foreign_schema() {
    let (cohort, fold) = small_cohort();
    let ckpt = small_checkpoint(&cohort, &fold);
    let id = cohort.records[0].record.patient_id.clone();
    assert_eq!(ckpt.prepare(&cohort, &id).unwrap().patient_id, id);
    assert!(ckpt.prepare(&cohort, "nobody").is_err());
    let mut other = cohort.clone();
    other.schema = FeatureSchema::new(
        other.schema.features().iter().cloned().map(|mut f| {
            f.unit = format!("{} x", f.unit);
            f
        }).collect(),
    )
    .unwrap();
    assert!(matches!(ckpt.prepare(&other, &id), Err(ModelError::SchemaMismatch { .. })));
}

/// Independent recount of the triples a full census should produce.
fn census(ckpt: &Checkpoint, cohort: &LabeledCohort, ids: &[String], channel: usize) -> usize {
    let mut count = 0;
    for r in cohort.records.iter().filter(|r| ids.contains(&r.record.patient_id)) {
        let dynamic = channel < ckpt.schema.n_dynamic();
        for (t, label) in r.labels.iter().enumerate() {
            let observed = if dynamic {
                r.record.visits[t].values[channel].is_some()
            } else {
                r.record.static_values[channel - ckpt.schema.n_dynamic()].is_some()
            };
            if label.is_some() && observed {
                count += 1;
            }
        }
    }
    count
}

#[test]
fn population_full_census_and_sampling() {
    let (cohort, fold) = small_cohort();
    let ckpt = small_checkpoint(&cohort, &fold);
    let all: Vec<String> = cohort.records.iter().map(|r| r.record.patient_id.clone()).collect();
    for feature in ["Albumin", "Height"] {
        let channel = ckpt.schema.channel_index(feature).unwrap();
        let full = population_aggregate(&ckpt, &cohort, feature, cohort.records.len(), 1).unwrap();
        assert_eq!(full.sample_size, cohort.records.len());
        assert_eq!(full.triples.len(), census(&ckpt, &cohort, &all, channel));
    }

    let a = population_aggregate(&ckpt, &cohort, "Albumin", 10, 77).unwrap();
    let b = population_aggregate(&ckpt, &cohort, "Albumin", 10, 77).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.patients.len(), 10);
    assert!(a.patients.windows(2).all(|w| w[0] < w[1]));
    let channel = ckpt.schema.channel_index("Albumin").unwrap();
    assert_eq!(a.triples.len(), census(&ckpt, &cohort, &a.patients, channel));
    assert!(a.triples.iter().all(|t| a.patients.contains(&t.patient_id) && t.value.is_finite()));
    assert!(a.triples.iter().all(|t| (0.0..=1.0).contains(&t.importance) && t.risk > 0.0 && t.risk < 1.0));

    let bigger = population_aggregate(&ckpt, &cohort, "Albumin", 1000, 77).unwrap();
    assert_eq!(bigger.sample_size, cohort.records.len());

    assert!(population_aggregate(&ckpt, &cohort, "Cystatin C", 10, 1).is_err());

    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("value,importance,risk\n"));
    assert_eq!(text.lines().count(), a.triples.len() + 1);
}
