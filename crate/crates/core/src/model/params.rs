use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;
use crate::data::{hex, FeatureSchema};
use crate::numeric::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHyper {
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub lambda_dec: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub dynamic_dim: usize,
    pub static_dim: usize,
}

impl ModelHyper {
    /// Peritoneal dialysis settings: hidden 128, lr 1e-3, batch 32,
    /// 30 epochs, patience 10.
    pub fn xy(dynamic_dim: usize, static_dim: usize) -> Self {
        Self {
            hidden_dim: 128,
            n_heads: 4,
            lambda_dec: 1e-3,
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 30,
            patience: 10,
            seed: 42,
            dynamic_dim,
            static_dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Hyper(m));
        if self.hidden_dim == 0 || self.n_heads == 0 {
            return bad("hidden_dim and n_heads must be positive".into());
        }
        if self.hidden_dim % self.n_heads != 0 {
            return bad(format!(
                "hidden_dim {} is not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            ));
        }
        if self.dynamic_dim == 0 {
            return bad("need at least one dynamic feature".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lambda_dec >= 0.0 && self.lambda_dec.is_finite()) {
            return bad("lr must be positive and lambda_dec non-negative".into());
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.dynamic_dim + self.static_dim
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }
}

/// Per-channel input width: normalized value and log time gap.
pub const CHANNEL_INPUT: usize = 2;

/// All learnable weights. Matrices multiply row vectors from the right
/// (`x W`), except the GRU blocks which are applied per channel as `W x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    /// `[D, 3H, 2]`
    pub gru_wx: Tensor,
    /// `[D, 2H, H]`
    pub gru_uzr: Tensor,
    /// `[D, H, H]`
    pub gru_uh: Tensor,
    /// `[D, 3H]`
    pub gru_b: Tensor,
    /// `[S, H]`, one embedding direction per static feature.
    pub static_w: Tensor,
    /// `[S, H]`
    pub static_b: Tensor,
    /// `[H, H]` each.
    pub attn_wq: Tensor,
    pub attn_wk: Tensor,
    pub attn_wv: Tensor,
    pub attn_wo: Tensor,
    pub term_wq: Tensor,
    pub term_wk: Tensor,
    /// `[H, 1]`
    pub out_w: Tensor,
    /// `[1]`
    pub out_b: Tensor,
}

pub const WEIGHT_NAMES: [&str; 14] = [
    "gru_wx", "gru_uzr", "gru_uh", "gru_b", "static_w", "static_b", "attn_wq", "attn_wk", "attn_wv", "attn_wo",
    "term_wq", "term_wk", "out_w", "out_b",
];

impl Weights {
    pub fn tensors(&self) -> [&Tensor; 14] {
        [
            &self.gru_wx,
            &self.gru_uzr,
            &self.gru_uh,
            &self.gru_b,
            &self.static_w,
            &self.static_b,
            &self.attn_wq,
            &self.attn_wk,
            &self.attn_wv,
            &self.attn_wo,
            &self.term_wq,
            &self.term_wk,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub fn to_vec(&self) -> Vec<Tensor> {
        self.tensors().into_iter().cloned().collect()
    }

    pub fn from_vec(mut v: Vec<Tensor>) -> Result<Self, ModelError> {
        if v.len() != 14 {
            return Err(ModelError::Shape(format!("expected 14 weight tensors, got {}", v.len())));
        }
        let mut it = v.drain(..);
        let mut next = || it.next().expect("length checked");
        Ok(Self {
            gru_wx: next(),
            gru_uzr: next(),
            gru_uh: next(),
            gru_b: next(),
            static_w: next(),
            static_b: next(),
            attn_wq: next(),
            attn_wk: next(),
            attn_wv: next(),
            attn_wo: next(),
            term_wq: next(),
            term_wk: next(),
            out_w: next(),
            out_b: next(),
        })
    }

    /// Expected shapes and fan-in for initialization.
    pub fn layout(h: &ModelHyper) -> [(Vec<usize>, usize); 14] {
        let (d, s, hd) = (h.dynamic_dim, h.static_dim, h.hidden_dim);
        [
            (vec![d, 3 * hd, CHANNEL_INPUT], CHANNEL_INPUT),
            (vec![d, 2 * hd, hd], hd),
            (vec![d, hd, hd], hd),
            (vec![d, 3 * hd], hd),
            (vec![s, hd], hd),
            (vec![s, hd], hd),
            (vec![hd, hd], hd),
            (vec![hd, hd], hd),
            (vec![hd, hd], hd),
            (vec![hd, hd], hd),
            (vec![hd, hd], hd),
            (vec![hd, hd], hd),
            (vec![hd, 1], 1),
            (vec![1], hd),
        ]
    }

    pub fn check_shapes(&self, h: &ModelHyper) -> Result<(), ModelError> {
        for ((name, t), (shape, _)) in WEIGHT_NAMES.iter().zip(self.tensors()).zip(Self::layout(h)) {
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Shape(format!(
                    "`{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_auprc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub hyper: ModelHyper,
    pub weights: Weights,
    pub training: Option<TrainingMeta>,
}

impl ModelParams {
    pub fn check(&self) -> Result<(), ModelError> {
        self.hyper.validate()?;
        self.weights.check_shapes(&self.hyper)
    }

    /// Content hash over hyperparameters and weights (bit patterns).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.hyper).expect("hyper serializes"));
        for t in self.weights.tensors() {
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

/// `gru_b`, `static_b` and `out_b`.
const BIASES: [usize; 3] = [3, 5, 13];

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights from a ChaCha8
/// stream seeded with `hyper.seed`; biases start at zero so no channel
/// begins with a constant offset.
pub fn init_model(schema: &FeatureSchema, hyper: &ModelHyper) -> Result<ModelParams, ModelError> {
    hyper.validate()?;
    if schema.counts() != (hyper.static_dim, hyper.dynamic_dim) {
        return Err(ModelError::Hyper(format!(
            "schema has (static, dynamic) = {:?}, hyper expects ({}, {})",
            schema.counts(),
            hyper.static_dim,
            hyper.dynamic_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let tensors = Weights::layout(hyper)
        .into_iter()
        .enumerate()
        .map(|(i, (shape, fan_in))| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = if BIASES.contains(&i) {
                vec![0.0; n]
            } else {
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            };
            Tensor::new(shape, data).map_err(ModelError::from)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ModelParams {
        hyper: hyper.clone(),
        weights: Weights::from_vec(tensors)?,
        training: None,
    })
}
