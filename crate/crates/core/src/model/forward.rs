//! The network, evaluated causally over one patient's visits.
//!
//! Per visit `t`:
//!
//! ```text
//! h_d(t)  = GRU_d([x_d(t), ln(1 + gap_t / 30)], h_d(t-1))   dynamic channel d
//! e_s     = tanh(x_s * w_s + b_s)                            static channel s
//! C       = rows [h_1 .. h_D, e_1 .. e_S]                    [N, H]
//! O_j     = softmax(C Wq_j (C Wk_j)^T / sqrt(H/heads)) C Wv_j
//! Ctx     = C + [O_1 .. O_heads] Wo
//! q       = mean_rows(Ctx) Tq                                health context
//! alpha   = softmax(q (Ctx Tk)^T / sqrt(H))                  importance, [N]
//! logit   = (alpha C) w_out + b_out                          each channel scores its own state
//! ```

use super::params::{ModelHyper, ModelParams, Weights, CHANNEL_INPUT};
use super::ModelError;
use crate::data::PatientTensor;
use crate::numeric::{gru_cell_step, GruWeights, NumericError, Tape, Tensor, Var};

/// Weight nodes on a tape, in `WEIGHT_NAMES` order.
pub(crate) struct WeightVars {
    pub all: Vec<Var>,
    gru: GruWeights,
    static_w: Var,
    static_b: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    tq: Var,
    tk: Var,
    out_w: Var,
    out_b: Var,
}

impl WeightVars {
    /// Registers weights as leaves (`trainable`) or constants.
    pub fn register(tape: &mut Tape, w: &Weights, trainable: bool) -> Self {
        let all: Vec<Var> = w
            .tensors()
            .into_iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Self::from_vars(all)
    }

    pub fn from_vars(all: Vec<Var>) -> Self {
        let v = |i: usize| all[i];
        Self {
            gru: GruWeights {
                wx: v(0),
                uzr: v(1),
                uh: v(2),
                bias: v(3),
            },
            static_w: v(4),
            static_b: v(5),
            wq: v(6),
            wk: v(7),
            wv: v(8),
            wo: v(9),
            tq: v(10),
            tk: v(11),
            out_w: v(12),
            out_b: v(13),
            all,
        }
    }
}

pub(crate) struct Graph {
    pub logits: Vec<Var>,
    pub importances: Vec<Var>,
    /// Per visit, per head, `[N, H/heads]`.
    pub heads: Vec<Vec<Var>>,
}

fn check_patient(h: &ModelHyper, p: &PatientTensor, prefix_len: usize) -> Result<(), ModelError> {
    let t = p.n_visits();
    if p.n_dynamic != h.dynamic_dim
        || p.values.len() != t * h.dynamic_dim
        || p.static_values.len() != h.static_dim
    {
        return Err(ModelError::Shape(format!(
            "patient `{}` has {} dynamic / {} static features, model expects {} / {}",
            p.patient_id,
            p.n_dynamic,
            p.static_values.len(),
            h.dynamic_dim,
            h.static_dim
        )));
    }
    if prefix_len == 0 || prefix_len > t {
        return Err(ModelError::Shape(format!(
            "prefix length {prefix_len} outside 1..={t} for patient `{}`",
            p.patient_id
        )));
    }
    Ok(())
}

/// Log-scaled gap to the previous visit in months of 30 days; 0 for the
/// first visit.
pub fn time_gap_feature(times: &[f64], t: usize) -> f64 {
    if t == 0 {
        0.0
    } else {
        ((times[t] - times[t - 1]).max(0.0) / 30.0).ln_1p()
    }
}

pub(crate) fn build_graph(
    tape: &mut Tape,
    w: &WeightVars,
    h: &ModelHyper,
    p: &PatientTensor,
    prefix_len: usize,
    keep_heads: bool,
) -> Result<Graph, ModelError> {
    check_patient(h, p, prefix_len)?;
    let (d, s, hd, nh) = (h.dynamic_dim, h.static_dim, h.hidden_dim, h.n_heads);
    let dh = h.head_dim();
    let head_scale = 1.0 / (dh as f64).sqrt();
    let term_scale = 1.0 / (hd as f64).sqrt();

    let static_emb = if s > 0 {
        let sv = tape.constant(Tensor::vector(p.static_values.clone())?);
        let scaled = tape.scale_rows(w.static_w, sv)?;
        let pre = tape.add(scaled, w.static_b)?;
        Some(tape.tanh(pre)?)
    } else {
        None
    };

    let mut state = tape.constant(Tensor::zeros(&[d, hd]));
    let mut graph = Graph {
        logits: Vec::with_capacity(prefix_len),
        importances: Vec::with_capacity(prefix_len),
        heads: Vec::new(),
    };
    for t in 0..prefix_len {
        let gap = time_gap_feature(&p.times, t);
        let mut x = Vec::with_capacity(d * CHANNEL_INPUT);
        for f in 0..d {
            x.push(p.values[t * d + f]);
            x.push(gap);
        }
        let x = tape.constant(Tensor::matrix(d, CHANNEL_INPUT, x)?);
        state = gru_cell_step(tape, x, state, &w.gru)?;

        let c = match static_emb {
            Some(e) => tape.concat_rows(&[state, e])?,
            None => state,
        };
        let q = tape.matmul(c, w.wq)?;
        let k = tape.matmul(c, w.wk)?;
        let v = tape.matmul(c, w.wv)?;
        let mut outs = Vec::with_capacity(nh);
        for j in 0..nh {
            let (lo, hi) = (j * dh, (j + 1) * dh);
            let (qj, kj, vj) = if nh == 1 {
                (q, k, v)
            } else {
                (tape.slice_cols(q, lo, hi)?, tape.slice_cols(k, lo, hi)?, tape.slice_cols(v, lo, hi)?)
            };
            let kt = tape.transpose(kj)?;
            let scores = tape.matmul(qj, kt)?;
            let scores = tape.scale(scores, head_scale)?;
            let attn = tape.softmax_rows(scores)?;
            outs.push(tape.matmul(attn, vj)?);
        }
        let mixed = if nh == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        let mixed = tape.matmul(mixed, w.wo)?;
        let ctx = tape.add(c, mixed)?;

        let pooled = tape.mean_rows(ctx)?;
        let pooled = tape.reshape(pooled, &[1, hd])?;
        let query = tape.matmul(pooled, w.tq)?;
        let keys = tape.matmul(ctx, w.tk)?;
        let keys_t = tape.transpose(keys)?;
        let scores = tape.matmul(query, keys_t)?;
        let scores = tape.scale(scores, term_scale)?;
        let alpha = tape.softmax_rows(scores)?;
        let summary = tape.matmul(alpha, c)?;
        let logit = tape.matmul(summary, w.out_w)?;
        let logit = tape.reshape(logit, &[1])?;
        let logit = tape.add(logit, w.out_b)?;

        graph.logits.push(logit);
        graph.importances.push(alpha);
        if keep_heads {
            graph.heads.push(outs);
        }
    }
    Ok(graph)
}

/// Forward outputs for visits `0..prefix_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerVisitOutputs {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Per visit, one weight per channel (dynamic features, then static).
    pub importances: Vec<Vec<f64>>,
    /// Per visit, per head, the flattened head output.
    pub head_outputs: Vec<Vec<Vec<f64>>>,
}

pub fn forward(params: &ModelParams, patient: &PatientTensor, prefix_len: usize) -> Result<PerVisitOutputs, ModelError> {
    let mut tape = Tape::new();
    let w = WeightVars::register(&mut tape, &params.weights, false);
    let g = build_graph(&mut tape, &w, &params.hyper, patient, prefix_len, true)?;
    let logits: Vec<f64> = g.logits.iter().map(|v| tape.value(*v).data()[0]).collect();
    Ok(PerVisitOutputs {
        probabilities: logits.iter().map(|&z| crate::numeric::sigmoid_scalar(z)).collect(),
        logits,
        importances: g.importances.iter().map(|v| tape.value(*v).data().to_vec()).collect(),
        head_outputs: g
            .heads
            .iter()
            .map(|hs| hs.iter().map(|v| tape.value(*v).data().to_vec()).collect())
            .collect(),
    })
}

/// Logits only, skipping everything the loss does not need.
pub fn forward_logits(params: &ModelParams, patient: &PatientTensor) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new();
    let w = WeightVars::register(&mut tape, &params.weights, false);
    let g = build_graph(&mut tape, &w, &params.hyper, patient, patient.n_visits(), false)?;
    Ok(g.logits.iter().map(|v| tape.value(*v).data()[0]).collect())
}

/// Mean squared cosine similarity over distinct head pairs of one visit;
/// 0 with a single head.
pub(crate) fn decorrelation_node(tape: &mut Tape, heads: &[Var]) -> Result<Option<Var>, NumericError> {
    let n = heads.len();
    if n < 2 {
        return Ok(None);
    }
    let mut total: Option<Var> = None;
    for a in 0..n {
        for b in a + 1..n {
            let c = tape.cosine_squared(heads[a], heads[b])?;
            total = Some(match total {
                Some(t) => tape.add(t, c)?,
                None => c,
            });
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(Some(tape.scale(total.expect("at least one pair"), 1.0 / pairs)?))
}

/// Loss contribution of one patient inside a batch: its BCE sum divided by
/// the batch's labeled-visit count plus `lambda_dec` times its summed
/// per-visit decorrelation divided by the batch's visit count. Summing over
/// the batch gives the mean-BCE plus mean-decorrelation objective.
pub(crate) fn patient_loss(
    tape: &mut Tape,
    w: &WeightVars,
    h: &ModelHyper,
    p: &PatientTensor,
    batch_labeled: usize,
    batch_visits: usize,
) -> Result<Var, ModelError> {
    let n = p.n_visits();
    let g = build_graph(tape, w, h, p, n, h.lambda_dec > 0.0 && h.n_heads > 1)?;
    let (mut targets, mut weights) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for l in &p.labels {
        targets.push(l.map_or(0.0, f64::from));
        weights.push(if l.is_some() { 1.0 / batch_labeled as f64 } else { 0.0 });
    }
    let logits = tape.concat_rows(&g.logits)?;
    let mut loss = tape.bce_with_logits(logits, &targets, &weights)?;
    if !g.heads.is_empty() {
        let scale = h.lambda_dec / batch_visits as f64;
        for heads in &g.heads {
            if let Some(dec) = decorrelation_node(tape, heads)? {
                let dec = tape.scale(dec, scale)?;
                loss = tape.add(loss, dec)?;
            }
        }
    }
    Ok(loss)
}

/// Full objective for a set of per-visit outputs: mean BCE over labeled
/// visits plus `lambda_dec` times the mean over visits of the head-pair
/// squared cosine similarity.
pub fn loss(outputs: &PerVisitOutputs, labels: &[Option<u8>], lambda_dec: f64) -> Result<f64, ModelError> {
    if labels.len() != outputs.logits.len() {
        return Err(ModelError::Shape(format!(
            "{} labels for {} visits",
            labels.len(),
            outputs.logits.len()
        )));
    }
    let labeled: Vec<(f64, f64)> = outputs
        .logits
        .iter()
        .zip(labels)
        .filter_map(|(&z, l)| l.map(|y| (z, f64::from(y))))
        .collect();
    if labeled.is_empty() {
        return Err(ModelError::NoLabels);
    }
    let bce = labeled
        .iter()
        .map(|&(z, y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
        .sum::<f64>()
        / labeled.len() as f64;
    let mut dec = 0.0;
    for heads in &outputs.head_outputs {
        let n = heads.len();
        if n < 2 {
            continue;
        }
        let mut s = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                s += cosine_squared(&heads[a], &heads[b]);
            }
        }
        dec += s / (n * (n - 1) / 2) as f64;
    }
    dec /= outputs.head_outputs.len().max(1) as f64;
    Ok(bce + lambda_dec * dec)
}

fn cosine_squared(a: &[f64], b: &[f64]) -> f64 {
    let eps = crate::numeric::COSINE_EPS;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    dot * dot / ((na + eps) * (nb + eps))
}
