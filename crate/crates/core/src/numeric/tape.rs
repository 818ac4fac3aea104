//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node whose parents already live on the tape,
//! so node order is a topological order. [`Tape::backward`] walks it in
//! reverse, visiting each node once.

use super::tensor::Tensor;
use super::NumericError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    ScaleRows(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    BatchedMatVec(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    Sum(Var),
    MeanRows(Var),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
    CosineSquared(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Stabiliser added to squared norms in [`Tape::cosine_squared`].
pub const COSINE_EPS: f64 = 1e-12;

/// Recording of a computation. Single owner; build one per independent
/// evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every leaf on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros when the root does not depend on it.
    pub fn get(&self, var: Var) -> Result<Tensor, NumericError> {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Ok(Tensor::zeros(&shape)),
        }
    }

    /// Raw gradient buffer, `None` when the root does not depend on `var`.
    /// Entries may be non-finite if the pass overflowed.
    pub fn raw(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_finite(op: &str, data: &[f64]) -> Result<(), NumericError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericError::NonFinite {
            context: format!("tape op {op}"),
        })
    }
}

fn mismatch(op: &'static str, left: &Tensor, right: &Tensor) -> NumericError {
    NumericError::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize), NumericError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        [c] => Ok((1, *c)),
        other => Err(NumericError::ShapeMismatch {
            op,
            left: other.to_vec(),
            right: vec![],
        }),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn checked(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        parents: &[Var],
    ) -> Result<Var, NumericError> {
        check_finite(name, &data)?;
        Ok(self.push(Tensor::from_parts(shape, data), op, parents))
    }

    /// Differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// Non-differentiable input (data).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, &[])
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        self.checked(name, shape, data, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a * scale`.
    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var, NumericError> {
        let t = self.value(a);
        let data = t.data().iter().map(|v| v * scale).collect();
        let shape = t.shape().to_vec();
        self.checked("scale", shape, data, Op::Affine(a, scale), &[a])
    }

    /// Adds a length-`C` bias to every row of an `[R, C]` matrix.
    pub fn add_row_bias(&mut self, m: Var, bias: Var) -> Result<Var, NumericError> {
        let (tm, tb) = (self.value(m), self.value(bias));
        let (_, cols) = dims2("add_row_bias", tm)?;
        if tb.len() != cols {
            return Err(mismatch("add_row_bias", tm, tb));
        }
        let data = tm
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(tb.data()).map(|(x, b)| x + b))
            .collect();
        let shape = tm.shape().to_vec();
        self.checked("add_row_bias", shape, data, Op::AddRowBias(m, bias), &[m, bias])
    }

    /// Multiplies row `r` of an `[R, C]` matrix by `v[r]`.
    pub fn scale_rows(&mut self, m: Var, v: Var) -> Result<Var, NumericError> {
        let (tm, tv) = (self.value(m), self.value(v));
        let (rows, cols) = dims2("scale_rows", tm)?;
        if tv.len() != rows {
            return Err(mismatch("scale_rows", tm, tv));
        }
        let data = tm
            .data()
            .chunks(cols)
            .zip(tv.data())
            .flat_map(|(row, s)| row.iter().map(move |x| x * s))
            .collect();
        let shape = tm.shape().to_vec();
        self.checked("scale_rows", shape, data, Op::ScaleRows(m, v), &[m, v])
    }

    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = match ta.shape() {
            [m, k] => (*m, *k),
            _ => return Err(mismatch("matmul", ta, tb)),
        };
        let n = match tb.shape() {
            [kb, n] if *kb == k => *n,
            _ => return Err(mismatch("matmul", ta, tb)),
        };
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for (o, &bv) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += aip * bv;
                }
            }
        }
        self.checked("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericError> {
        let ta = self.value(a);
        let (r, c) = match ta.shape() {
            [r, c] => (*r, *c),
            _ => return Err(mismatch("transpose", ta, ta)),
        };
        let d = ta.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.checked("transpose", vec![c, r], out, Op::Transpose(a), &[a])
    }

    /// Independent matrix-vector products: `w: [B, M, N]`, `x: [B, N]`
    /// gives `[B, M]` with `out[b] = w[b] x[b]`.
    pub fn batched_matvec(&mut self, w: Var, x: Var) -> Result<Var, NumericError> {
        let (tw, tx) = (self.value(w), self.value(x));
        let (b, m, n) = match (tw.shape(), tx.shape()) {
            ([b, m, n], [bx, nx]) if b == bx && n == nx => (*b, *m, *n),
            _ => return Err(mismatch("batched_matvec", tw, tx)),
        };
        let (wd, xd) = (tw.data(), tx.data());
        let mut out = vec![0.0; b * m];
        for bi in 0..b {
            let xv = &xd[bi * n..(bi + 1) * n];
            for mi in 0..m {
                let wrow = &wd[(bi * m + mi) * n..(bi * m + mi + 1) * n];
                out[bi * m + mi] = wrow.iter().zip(xv).map(|(p, q)| p * q).sum();
            }
        }
        self.checked("batched_matvec", vec![b, m], out, Op::BatchedMatVec(w, x), &[w, x])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericError> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| sigmoid_scalar(x)).collect();
        let shape = t.shape().to_vec();
        self.checked("sigmoid", shape, data, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericError> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x.tanh()).collect();
        let shape = t.shape().to_vec();
        self.checked("tanh", shape, data, Op::Tanh(a), &[a])
    }

    /// Softmax over the last axis of a rank-1 or rank-2 tensor.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumericError> {
        let t = self.value(a);
        let (_, cols) = dims2("softmax_rows", t)?;
        if cols == 0 {
            return Err(NumericError::EmptyAxis);
        }
        let mut data = Vec::with_capacity(t.len());
        for row in t.data().chunks(cols) {
            softmax_slice_into(row, &mut data);
        }
        let shape = t.shape().to_vec();
        self.checked("softmax_rows", shape, data, Op::SoftmaxRows(a), &[a])
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, NumericError> {
        let s = self.value(a).sum();
        self.checked("sum", vec![1], vec![s], Op::Sum(a), &[a])
    }

    /// Column means of an `[R, C]` matrix, as `[C]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NumericError> {
        let t = self.value(a);
        let (rows, cols) = dims2("mean_rows", t)?;
        if rows == 0 {
            return Err(NumericError::EmptyAxis);
        }
        let mut out = vec![0.0; cols];
        for row in t.data().chunks(cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= rows as f64);
        self.checked("mean_rows", vec![cols], out, Op::MeanRows(a), &[a])
    }

    /// Columns `start..end` of an `[R, C]` matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericError> {
        let t = self.value(a);
        let (rows, cols) = match t.shape() {
            [r, c] => (*r, *c),
            _ => return Err(mismatch("slice_cols", t, t)),
        };
        if start >= end || end > cols {
            return Err(NumericError::InvalidArgument(format!(
                "slice_cols {start}..{end} out of range for {cols} columns"
            )));
        }
        let data = t
            .data()
            .chunks(cols)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        self.checked(
            "slice_cols",
            vec![rows, end - start],
            data,
            Op::SliceCols(a, start),
            &[a],
        )
    }

    /// Stacks `[R_i, C]` matrices vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let first = parts.first().ok_or(NumericError::EmptyAxis)?;
        let cols = dims2("concat_rows", self.value(*first))?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            let (r, c) = dims2("concat_rows", t)?;
            if c != cols {
                return Err(mismatch("concat_rows", self.value(*first), t));
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        self.checked(
            "concat_rows",
            vec![rows, cols],
            data,
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    /// Joins `[R, C_i]` matrices horizontally.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let first = parts.first().ok_or(NumericError::EmptyAxis)?;
        let rows = dims2("concat_cols", self.value(*first))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let t = self.value(*p);
            let (r, c) = dims2("concat_cols", t)?;
            if r != rows {
                return Err(mismatch("concat_cols", self.value(*first), t));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        self.checked(
            "concat_cols",
            vec![rows, total],
            data,
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericError> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    /// Weighted binary cross-entropy summed over entries:
    /// `sum_i w_i * [max(z_i,0) - z_i*y_i + ln(1 + e^{-|z_i|})]`.
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        targets: &[f64],
        weights: &[f64],
    ) -> Result<Var, NumericError> {
        let t = self.value(logits);
        if t.len() != targets.len() || t.len() != weights.len() {
            return Err(NumericError::InvalidArgument(format!(
                "bce_with_logits: {} logits, {} targets, {} weights",
                t.len(),
                targets.len(),
                weights.len()
            )));
        }
        let total: f64 = t
            .data()
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&z, &y), &w)| w * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()))
            .sum();
        self.checked(
            "bce_with_logits",
            vec![1],
            vec![total],
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            &[logits],
        )
    }

    /// Squared cosine similarity of two equally sized tensors (flattened),
    /// `(a.b)^2 / ((|a|^2 + eps)(|b|^2 + eps))` with `eps = COSINE_EPS`.
    pub fn cosine_squared(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(mismatch("cosine_squared", ta, tb));
        }
        let (s, p, q) = cosine_parts(ta.data(), tb.data());
        let v = s * s / (p * q);
        self.checked("cosine_squared", vec![1], vec![v], Op::CosineSquared(a, b), &[a, b])
    }

    /// Reverse pass from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, NumericError> {
        if self.value(root).len() != 1 {
            return Err(NumericError::InvalidArgument(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let (lower, _) = grads.split_at_mut(i);
            self.propagate(node, &g, lower);
        }

        let shapes = self.nodes[..n].iter().map(|nd| nd.value.shape().to_vec()).collect();
        for (i, slot) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[i].op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &[f64], lower: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let out = node.value.data();

        // Returns the accumulator for `v`, allocating zeros on first use.
        fn acc(lower: &mut [Option<Vec<f64>>], len: usize, v: Var) -> &mut [f64] {
            lower[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let len = |v: Var| self.nodes[v.0].value.len();

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        acc(lower, len(v), v).iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc(lower, len(*a), *a).iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
                }
                if wants(*b) {
                    acc(lower, len(*b), *b).iter_mut().zip(g).for_each(|(x, gi)| *x -= gi);
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(*a), val(*b));
                if wants(*a) {
                    let ga = acc(lower, da.len(), *a);
                    for i in 0..g.len() {
                        ga[i] += g[i] * db[i];
                    }
                }
                if wants(*b) {
                    let gb = acc(lower, db.len(), *b);
                    for i in 0..g.len() {
                        gb[i] += g[i] * da[i];
                    }
                }
            }
            Op::AddRowBias(m, bias) => {
                let cols = val(*bias).len();
                if wants(*m) {
                    acc(lower, len(*m), *m).iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
                }
                if wants(*bias) {
                    let gb = acc(lower, cols, *bias);
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(x, gi)| *x += gi);
                    }
                }
            }
            Op::ScaleRows(m, v) => {
                let (dm, dv) = (val(*m), val(*v));
                let cols = dm.len() / dv.len().max(1);
                if wants(*m) {
                    let gm = acc(lower, dm.len(), *m);
                    for (r, s) in dv.iter().enumerate() {
                        for c in 0..cols {
                            gm[r * cols + c] += g[r * cols + c] * s;
                        }
                    }
                }
                if wants(*v) {
                    let gv = acc(lower, dv.len(), *v);
                    for (r, x) in gv.iter_mut().enumerate() {
                        *x += (0..cols).map(|c| g[r * cols + c] * dm[r * cols + c]).sum::<f64>();
                    }
                }
            }
            Op::Affine(a, s) => {
                acc(lower, len(*a), *a).iter_mut().zip(g).for_each(|(x, gi)| *x += gi * s);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let (ad, bd) = (ta.data(), tb.data());
                if wants(*a) {
                    let ga = acc(lower, m * k, *a);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if wants(*b) {
                    let gb = acc(lower, k * n, *b);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (x, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *x += aip * gv;
                            }
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let sh = self.nodes[a.0].value.shape();
                let (r, c) = (sh[0], sh[1]);
                let ga = acc(lower, r * c, *a);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::BatchedMatVec(w, x) => {
                let sh = self.nodes[w.0].value.shape();
                let (b, m, n) = (sh[0], sh[1], sh[2]);
                let (wd, xd) = (val(*w), val(*x));
                if wants(*w) {
                    let gw = acc(lower, b * m * n, *w);
                    for bi in 0..b {
                        let xv = &xd[bi * n..(bi + 1) * n];
                        for mi in 0..m {
                            let gm = g[bi * m + mi];
                            if gm == 0.0 {
                                continue;
                            }
                            let row = &mut gw[(bi * m + mi) * n..(bi * m + mi + 1) * n];
                            row.iter_mut().zip(xv).for_each(|(o, xv)| *o += gm * xv);
                        }
                    }
                }
                if wants(*x) {
                    let gx = acc(lower, b * n, *x);
                    for bi in 0..b {
                        for mi in 0..m {
                            let gm = g[bi * m + mi];
                            let wrow = &wd[(bi * m + mi) * n..(bi * m + mi + 1) * n];
                            gx[bi * n..(bi + 1) * n]
                                .iter_mut()
                                .zip(wrow)
                                .for_each(|(o, wv)| *o += gm * wv);
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let ga = acc(lower, out.len(), *a);
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }
            Op::Tanh(a) => {
                let ga = acc(lower, out.len(), *a);
                for i in 0..g.len() {
                    ga[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }
            Op::SoftmaxRows(a) => {
                let cols = *node.value.shape().last().unwrap_or(&1);
                let ga = acc(lower, out.len(), *a);
                for ((grow, yrow), garow) in g
                    .chunks(cols)
                    .zip(out.chunks(cols))
                    .zip(ga.chunks_mut(cols))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                    for j in 0..cols {
                        garow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }
            Op::Sum(a) => {
                acc(lower, len(*a), *a).iter_mut().for_each(|x| *x += g[0]);
            }
            Op::MeanRows(a) => {
                let cols = out.len();
                let total = len(*a);
                let rows = (total / cols.max(1)) as f64;
                let ga = acc(lower, total, *a);
                for row in ga.chunks_mut(cols) {
                    row.iter_mut().zip(g).for_each(|(x, gi)| *x += gi / rows);
                }
            }
            Op::SliceCols(a, start) => {
                let sh = self.nodes[a.0].value.shape();
                let cols = sh[1];
                let width = node.value.shape()[1];
                let ga = acc(lower, len(*a), *a);
                for (r, grow) in g.chunks(width).enumerate() {
                    for (j, gv) in grow.iter().enumerate() {
                        ga[r * cols + start + j] += gv;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let l = len(*p);
                    if wants(*p) {
                        acc(lower, l, *p)
                            .iter_mut()
                            .zip(&g[offset..offset + l])
                            .for_each(|(x, gi)| *x += gi);
                    }
                    offset += l;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let l = len(*p);
                    let rows = node.value.shape()[0];
                    let w = l / rows.max(1);
                    if wants(*p) {
                        let gp = acc(lower, l, *p);
                        for r in 0..rows {
                            for j in 0..w {
                                gp[r * w + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Reshape(a) => {
                acc(lower, len(*a), *a).iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
            }
            Op::BceWithLogits {
                logits,
                targets,
                weights,
            } => {
                let z = val(*logits);
                let gz = acc(lower, z.len(), *logits);
                for i in 0..z.len() {
                    gz[i] += g[0] * weights[i] * (sigmoid_scalar(z[i]) - targets[i]);
                }
            }
            Op::CosineSquared(a, b) => {
                let (da, db) = (val(*a), val(*b));
                let (s, p, q) = cosine_parts(da, db);
                let coef = 2.0 * s / (p * q) * g[0];
                if wants(*a) {
                    let ga = acc(lower, da.len(), *a);
                    for i in 0..da.len() {
                        ga[i] += coef * (db[i] - s / p * da[i]);
                    }
                }
                if wants(*b) {
                    let gb = acc(lower, db.len(), *b);
                    for i in 0..db.len() {
                        gb[i] += coef * (da[i] - s / q * db[i]);
                    }
                }
            }
        }
    }
}

/// `(a.b, |a|^2 + eps, |b|^2 + eps)`.
fn cosine_parts(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let s = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let p = a.iter().map(|x| x * x).sum::<f64>() + COSINE_EPS;
    let q = b.iter().map(|x| x * x).sum::<f64>() + COSINE_EPS;
    (s, p, q)
}

pub(crate) fn softmax_slice_into(row: &[f64], out: &mut Vec<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut total = 0.0;
    for &v in row {
        let e = (v - max).exp();
        total += e;
        out.push(e);
    }
    out[start..].iter_mut().for_each(|e| *e /= total);
}
