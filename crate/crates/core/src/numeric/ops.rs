use super::tape::{sigmoid_scalar, softmax_slice_into, Tape, Var};
use super::tensor::Tensor;
use super::NumericError;

/// Elementwise logistic function. Saturates to exactly 0 or 1 for large
/// magnitudes; never produces NaN for finite input.
pub fn sigmoid(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Softmax along `axis`, computed with max-subtraction.
pub fn softmax(v: &Tensor, axis: usize) -> Result<Tensor, NumericError> {
    let shape = v.shape();
    if axis >= shape.len() {
        return Err(NumericError::InvalidArgument(format!(
            "axis {axis} out of range for rank {}",
            shape.len()
        )));
    }
    let n = shape[axis];
    if n == 0 {
        return Err(NumericError::EmptyAxis);
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let src = v.data();
    let mut out = vec![0.0; src.len()];
    let mut lane = Vec::with_capacity(n);
    let mut soft = Vec::with_capacity(n);
    for o in 0..outer {
        for i in 0..inner {
            lane.clear();
            soft.clear();
            lane.extend((0..n).map(|k| src[(o * n + k) * inner + i]));
            softmax_slice_into(&lane, &mut soft);
            for (k, s) in soft.iter().enumerate() {
                out[(o * n + k) * inner + i] = *s;
            }
        }
    }
    Ok(Tensor::from_parts(shape.to_vec(), out))
}

/// Weights of `B` independent GRU cells evaluated side by side.
///
/// Row blocks of `wx`, `uzr` and `bias` are ordered update gate, reset gate,
/// candidate.
#[derive(Clone, Copy, Debug)]
pub struct GruWeights {
    /// `[B, 3H, I]` input weights.
    pub wx: Var,
    /// `[B, 2H, H]` recurrent weights for the update and reset gates.
    pub uzr: Var,
    /// `[B, H, H]` recurrent weights for the candidate state.
    pub uh: Var,
    /// `[B, 3H]` biases.
    pub bias: Var,
}

/// One GRU step for `B` channels at once (`x: [B, I]`, `h: [B, H]`).
///
/// ```text
/// z  = sigmoid(Wz x + Uz h + bz)
/// r  = sigmoid(Wr x + Ur h + br)
/// h~ = tanh(Wh x + Uh (r * h) + bh)
/// h' = (1 - z) * h + z * h~
/// ```
///
/// The reset gate is applied to the previous state before the candidate's
/// recurrent product.
pub fn gru_cell_step(
    tape: &mut Tape,
    x: Var,
    h: Var,
    w: &GruWeights,
) -> Result<Var, NumericError> {
    let (b, hidden) = match tape.value(h).shape() {
        [b, hd] => (*b, *hd),
        other => return Err(shape_err(other, &[0, 0])),
    };
    let input = match tape.value(x).shape() {
        [bx, i] if *bx == b => *i,
        other => return Err(shape_err(other, &[b, 0])),
    };
    let expect = [
        (w.wx, vec![b, 3 * hidden, input]),
        (w.uzr, vec![b, 2 * hidden, hidden]),
        (w.uh, vec![b, hidden, hidden]),
        (w.bias, vec![b, 3 * hidden]),
    ];
    for (var, shape) in &expect {
        if tape.value(*var).shape() != shape.as_slice() {
            return Err(shape_err(tape.value(*var).shape(), shape));
        }
    }

    let gx = tape.batched_matvec(w.wx, x)?;
    let gx = tape.add(gx, w.bias)?;
    let gh = tape.batched_matvec(w.uzr, h)?;
    let gx_zr = tape.slice_cols(gx, 0, 2 * hidden)?;
    let pre_zr = tape.add(gx_zr, gh)?;
    let zr = tape.sigmoid(pre_zr)?;
    let z = tape.slice_cols(zr, 0, hidden)?;
    let r = tape.slice_cols(zr, hidden, 2 * hidden)?;
    let rh = tape.mul(r, h)?;
    let uh_rh = tape.batched_matvec(w.uh, rh)?;
    let gx_h = tape.slice_cols(gx, 2 * hidden, 3 * hidden)?;
    let pre_cand = tape.add(gx_h, uh_rh)?;
    let cand = tape.tanh(pre_cand)?;
    let delta = tape.sub(cand, h)?;
    let step = tape.mul(z, delta)?;
    tape.add(h, step)
}

fn shape_err(got: &[usize], want: &[usize]) -> NumericError {
    NumericError::ShapeMismatch {
        op: "gru_cell_step",
        left: got.to_vec(),
        right: want.to_vec(),
    }
}
