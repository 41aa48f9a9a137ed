//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every learnable computation in the model is expressed through these
//! primitives. A tape owns all intermediate values; `backward` replays the
//! recorded ops in reverse and accumulates adjoints. One tape per forward
//! pass, single-threaded; distinct tapes share nothing.

use std::rc::Rc;

use crate::error::{GlslError, Result};
use crate::tensor::Tensor;

pub type VarId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(VarId, VarId),
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    Concat { axis: usize, a: VarId, b: VarId },
    Slice { input: VarId, axis: usize, start: usize, len: usize },
    Transpose(VarId),
    Reshape(VarId),
    SumAll(VarId),
    MeanAll(VarId),
    SumRows(VarId),
    MeanRows(VarId),
    SumCols(VarId),
    MeanCols(VarId),
    RepeatRows { input: VarId, n: usize },
    RepeatCols { input: VarId, m: usize },
    Exp(VarId),
    Log(VarId),
    Tanh(VarId),
    Sigmoid(VarId),
    LeakyRelu(VarId, f64),
    ClampMin(VarId, f64),
    Softmax(VarId),
    // the mask is kept for replay/debugging; the adjoint never needs it
    // because masked entries carry exactly zero output
    MaskedSoftmaxRows {
        input: VarId,
        #[allow(dead_code)]
        mask: Rc<Vec<bool>>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<VarId> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            Concat { a, b, .. } => vec![*a, *b],
            Scale(a, _)
            | Slice { input: a, .. }
            | Transpose(a)
            | Reshape(a)
            | SumAll(a)
            | MeanAll(a)
            | SumRows(a)
            | MeanRows(a)
            | SumCols(a)
            | MeanCols(a)
            | RepeatRows { input: a, .. }
            | RepeatCols { input: a, .. }
            | Exp(a)
            | Log(a)
            | Tanh(a)
            | Sigmoid(a)
            | LeakyRelu(a, _)
            | ClampMin(a, _)
            | Softmax(a)
            | MaskedSoftmaxRows { input: a, .. } => vec![*a],
        }
    }
}

#[derive(Default)]
pub struct Tape {
    ops: Vec<Op>,
    vals: Vec<Tensor>,
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(GlslError::BadShape {
            op,
            shape: s.to_vec(),
            msg: "expected a 2-D tensor".into(),
        }),
    }
}

fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.rows(), a.cols());
    let m = b.cols();
    let mut out = vec![0.0; n * m];
    let ad = a.data();
    let bd = b.data();
    for i in 0..n {
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

fn transpose_raw(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.at(i, j);
        }
    }
    Tensor::from_parts(vec![c, r], out)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.vals[id]
    }

    fn push(&mut self, op: Op, val: Tensor) -> VarId {
        let id = self.ops.len();
        self.ops.push(op);
        self.vals.push(val);
        id
    }

    pub fn leaf(&mut self, t: Tensor) -> VarId {
        self.push(Op::Leaf, t)
    }

    pub fn scalar(&mut self, v: f64) -> VarId {
        self.leaf(Tensor::scalar(v))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (_, ka) = dims2(&self.vals[a], "matmul")?;
        let (kb, _) = dims2(&self.vals[b], "matmul")?;
        if ka != kb {
            return Err(GlslError::ShapeMismatch {
                op: "matmul",
                lhs: self.vals[a].shape().to_vec(),
                rhs: self.vals[b].shape().to_vec(),
            });
        }
        let out = matmul_raw(&self.vals[a], &self.vals[b]);
        Ok(self.push(Op::MatMul(a, b), out))
    }

    fn elementwise2(
        &mut self,
        op_name: &'static str,
        a: VarId,
        b: VarId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<VarId> {
        if self.vals[a].shape() != self.vals[b].shape() {
            return Err(GlslError::ShapeMismatch {
                op: op_name,
                lhs: self.vals[a].shape().to_vec(),
                rhs: self.vals[b].shape().to_vec(),
            });
        }
        let data = self.vals[a]
            .data()
            .iter()
            .zip(self.vals[b].data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::from_parts(self.vals[a].shape().to_vec(), data);
        Ok(self.push(op, out))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.elementwise2("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.elementwise2("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.elementwise2("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let data = self.vals[a].data().iter().map(|x| x * c).collect();
        let out = Tensor::from_parts(self.vals[a].shape().to_vec(), data);
        self.push(Op::Scale(a, c), out)
    }

    /// Concatenate along `axis` (0 or 1). 1-D tensors concat along axis 0.
    pub fn concat(&mut self, axis: usize, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (&self.vals[a], &self.vals[b]);
        let out = match (ta.shape(), tb.shape()) {
            ([n], [m]) if axis == 0 => {
                let mut d = Vec::with_capacity(n + m);
                d.extend_from_slice(ta.data());
                d.extend_from_slice(tb.data());
                Tensor::from_parts(vec![n + m], d)
            }
            ([r1, c1], [r2, c2]) if axis == 0 && c1 == c2 => {
                let mut d = Vec::with_capacity((r1 + r2) * c1);
                d.extend_from_slice(ta.data());
                d.extend_from_slice(tb.data());
                Tensor::from_parts(vec![r1 + r2, *c1], d)
            }
            ([r1, c1], [r2, c2]) if axis == 1 && r1 == r2 => {
                let mut d = Vec::with_capacity(r1 * (c1 + c2));
                for i in 0..*r1 {
                    d.extend_from_slice(&ta.data()[i * c1..(i + 1) * c1]);
                    d.extend_from_slice(&tb.data()[i * c2..(i + 1) * c2]);
                }
                Tensor::from_parts(vec![*r1, c1 + c2], d)
            }
            _ => {
                return Err(GlslError::ShapeMismatch {
                    op: "concat",
                    lhs: ta.shape().to_vec(),
                    rhs: tb.shape().to_vec(),
                })
            }
        };
        Ok(self.push(Op::Concat { axis, a, b }, out))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, input: VarId, axis: usize, start: usize, len: usize) -> Result<VarId> {
        let t = &self.vals[input];
        let out = match t.shape() {
            [n] if axis == 0 && start + len <= *n => {
                Tensor::from_parts(vec![len], t.data()[start..start + len].to_vec())
            }
            [_, c] if axis == 0 && start + len <= t.rows() => Tensor::from_parts(
                vec![len, *c],
                t.data()[start * c..(start + len) * c].to_vec(),
            ),
            [r, c] if axis == 1 && start + len <= *c => {
                let mut d = Vec::with_capacity(r * len);
                for i in 0..*r {
                    d.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
                }
                Tensor::from_parts(vec![*r, len], d)
            }
            s => {
                return Err(GlslError::BadShape {
                    op: "slice",
                    shape: s.to_vec(),
                    msg: format!("axis {} start {} len {} out of range", axis, start, len),
                })
            }
        };
        Ok(self.push(Op::Slice { input, axis, start, len }, out))
    }

    pub fn transpose(&mut self, input: VarId) -> Result<VarId> {
        dims2(&self.vals[input], "transpose")?;
        let out = transpose_raw(&self.vals[input]);
        Ok(self.push(Op::Transpose(input), out))
    }

    pub fn reshape(&mut self, input: VarId, shape: Vec<usize>) -> Result<VarId> {
        let t = &self.vals[input];
        if shape.iter().product::<usize>() != t.numel() {
            return Err(GlslError::BadShape {
                op: "reshape",
                shape,
                msg: format!("does not match {} elements", t.numel()),
            });
        }
        let out = Tensor::from_parts(shape, t.data().to_vec());
        Ok(self.push(Op::Reshape(input), out))
    }

    pub fn sum_all(&mut self, input: VarId) -> VarId {
        let s: f64 = self.vals[input].data().iter().sum();
        self.push(Op::SumAll(input), Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, input: VarId) -> VarId {
        let t = &self.vals[input];
        let s: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Op::MeanAll(input), Tensor::scalar(s))
    }

    fn reduce_rows(&mut self, input: VarId, mean: bool) -> Result<VarId> {
        let (r, c) = dims2(&self.vals[input], "sum_rows")?;
        let t = &self.vals[input];
        let denom = if mean { c as f64 } else { 1.0 };
        let data: Vec<f64> = (0..r)
            .map(|i| t.data()[i * c..(i + 1) * c].iter().sum::<f64>() / denom)
            .collect();
        let out = Tensor::from_parts(vec![r, 1], data);
        let op = if mean { Op::MeanRows(input) } else { Op::SumRows(input) };
        Ok(self.push(op, out))
    }

    /// Row sums of a 2-D tensor: n×m -> n×1.
    pub fn sum_rows(&mut self, input: VarId) -> Result<VarId> {
        self.reduce_rows(input, false)
    }

    /// Row means of a 2-D tensor: n×m -> n×1.
    pub fn mean_rows(&mut self, input: VarId) -> Result<VarId> {
        self.reduce_rows(input, true)
    }

    fn reduce_cols(&mut self, input: VarId, mean: bool) -> Result<VarId> {
        let (r, c) = dims2(&self.vals[input], "sum_cols")?;
        let t = &self.vals[input];
        let denom = if mean { r as f64 } else { 1.0 };
        let mut data = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                data[j] += t.at(i, j);
            }
        }
        for v in &mut data {
            *v /= denom;
        }
        let out = Tensor::from_parts(vec![1, c], data);
        let op = if mean { Op::MeanCols(input) } else { Op::SumCols(input) };
        Ok(self.push(op, out))
    }

    /// Column sums of a 2-D tensor: n×m -> 1×m.
    pub fn sum_cols(&mut self, input: VarId) -> Result<VarId> {
        self.reduce_cols(input, false)
    }

    /// Column means of a 2-D tensor: n×m -> 1×m.
    pub fn mean_cols(&mut self, input: VarId) -> Result<VarId> {
        self.reduce_cols(input, true)
    }

    /// Explicit expand: tile a 1×m row (or [m] vector) into n×m.
    pub fn repeat_rows(&mut self, input: VarId, n: usize) -> Result<VarId> {
        let t = &self.vals[input];
        let m = match t.shape() {
            [m] => *m,
            [1, m] => *m,
            s => {
                return Err(GlslError::BadShape {
                    op: "repeat_rows",
                    shape: s.to_vec(),
                    msg: "expected a row vector".into(),
                })
            }
        };
        let mut data = Vec::with_capacity(n * m);
        for _ in 0..n {
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_parts(vec![n, m], data);
        Ok(self.push(Op::RepeatRows { input, n }, out))
    }

    /// Explicit expand: tile an n×1 column into n×m.
    pub fn repeat_cols(&mut self, input: VarId, m: usize) -> Result<VarId> {
        let t = &self.vals[input];
        let n = match t.shape() {
            [r, 1] => *r,
            s => {
                return Err(GlslError::BadShape {
                    op: "repeat_cols",
                    shape: s.to_vec(),
                    msg: "expected a column vector".into(),
                })
            }
        };
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            let v = t.data()[i];
            data.extend(std::iter::repeat(v).take(m));
        }
        let out = Tensor::from_parts(vec![n, m], data);
        Ok(self.push(Op::RepeatCols { input, m }, out))
    }

    fn unary(&mut self, input: VarId, f: impl Fn(f64) -> f64, op: Op) -> VarId {
        let data = self.vals[input].data().iter().map(|x| f(*x)).collect();
        let out = Tensor::from_parts(self.vals[input].shape().to_vec(), data);
        self.push(op, out)
    }

    pub fn exp(&mut self, input: VarId) -> VarId {
        self.unary(input, f64::exp, Op::Exp(input))
    }

    pub fn log(&mut self, input: VarId) -> Result<VarId> {
        if let Some(v) = self.vals[input].data().iter().find(|v| **v <= 0.0) {
            return Err(GlslError::LogDomain { value: *v });
        }
        Ok(self.unary(input, f64::ln, Op::Log(input)))
    }

    pub fn tanh(&mut self, input: VarId) -> VarId {
        self.unary(input, f64::tanh, Op::Tanh(input))
    }

    pub fn sigmoid(&mut self, input: VarId) -> VarId {
        self.unary(input, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(input))
    }

    pub fn leaky_relu(&mut self, input: VarId, slope: f64) -> VarId {
        self.unary(
            input,
            |x| if x >= 0.0 { x } else { slope * x },
            Op::LeakyRelu(input, slope),
        )
    }

    /// Floor every entry at `c`. Gradient passes through unclamped entries
    /// and is zero where the floor engaged (subgradient at the kink).
    pub fn clamp_min(&mut self, input: VarId, c: f64) -> VarId {
        self.unary(input, |x| x.max(c), Op::ClampMin(input, c))
    }

    /// Softmax over the last axis (each row of a 2-D tensor, or the whole
    /// 1-D vector). Max-subtracted for stability.
    pub fn softmax(&mut self, input: VarId) -> VarId {
        let t = &self.vals[input];
        let c = t.cols();
        let r = t.numel() / c;
        let mut data = vec![0.0; t.numel()];
        for i in 0..r {
            let row = &t.data()[i * c..(i + 1) * c];
            let mx = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                data[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                data[i * c + j] /= sum;
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(Op::Softmax(input), out)
    }

    /// Row-wise softmax restricted to `mask`-true entries; masked-out entries
    /// are exactly zero in the output. Errors if a row has no active entry
    /// (an isolated node without a self-loop).
    pub fn masked_softmax_rows(&mut self, input: VarId, mask: Rc<Vec<bool>>) -> Result<VarId> {
        let (r, c) = dims2(&self.vals[input], "masked_softmax_rows")?;
        if mask.len() != r * c {
            return Err(GlslError::BadShape {
                op: "masked_softmax_rows",
                shape: vec![r, c],
                msg: format!("mask has {} entries", mask.len()),
            });
        }
        let t = &self.vals[input];
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..c {
                if mask[i * c + j] {
                    mx = mx.max(t.at(i, j));
                }
            }
            if mx == f64::NEG_INFINITY {
                return Err(GlslError::BadShape {
                    op: "masked_softmax_rows",
                    shape: vec![r, c],
                    msg: format!("row {} has no active entries (isolated node)", i),
                });
            }
            let mut sum = 0.0;
            for j in 0..c {
                if mask[i * c + j] {
                    let e = (t.at(i, j) - mx).exp();
                    data[i * c + j] = e;
                    sum += e;
                }
            }
            for j in 0..c {
                data[i * c + j] /= sum;
            }
        }
        let out = Tensor::from_parts(vec![r, c], data);
        Ok(self.push(Op::MaskedSoftmaxRows { input, mask }, out))
    }

    /// Reverse pass from a scalar loss. Returns one gradient slot per tape
    /// variable; slots not reached by the loss stay `None`.
    pub fn backward(&self, loss: VarId) -> Result<Vec<Option<Tensor>>> {
        if self.ops.is_empty() {
            return Err(GlslError::Config("backward on an empty tape".into()));
        }
        if !self.vals[loss].is_scalar() {
            return Err(GlslError::NonScalarLoss {
                shape: self.vals[loss].shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.ops.len()];
        grads[loss] = Some(Tensor::scalar(1.0));

        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(grads)
    }

    fn add_grad(grads: &mut [Option<Tensor>], id: VarId, shape: &[usize], add: impl Fn(&mut [f64])) {
        let slot = grads[id].get_or_insert_with(|| Tensor::zeros(shape.to_vec()));
        add(slot.data_mut());
    }

    fn accumulate(&self, id: VarId, g: &Tensor, grads: &mut [Option<Tensor>]) {
        use Op::*;
        match &self.ops[id] {
            Leaf => {}
            MatMul(a, b) => {
                let bt = transpose_raw(&self.vals[*b]);
                let da = matmul_raw(g, &bt);
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for (x, y) in d.iter_mut().zip(da.data()) {
                        *x += y;
                    }
                });
                let at = transpose_raw(&self.vals[*a]);
                let db = matmul_raw(&at, g);
                Self::add_grad(grads, *b, self.vals[*b].shape(), |d| {
                    for (x, y) in d.iter_mut().zip(db.data()) {
                        *x += y;
                    }
                });
            }
            Add(a, b) => {
                for id_in in [*a, *b] {
                    Self::add_grad(grads, id_in, self.vals[id_in].shape(), |d| {
                        for (x, y) in d.iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    });
                }
            }
            Sub(a, b) => {
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for (x, y) in d.iter_mut().zip(g.data()) {
                        *x += y;
                    }
                });
                Self::add_grad(grads, *b, self.vals[*b].shape(), |d| {
                    for (x, y) in d.iter_mut().zip(g.data()) {
                        *x -= y;
                    }
                });
            }
            Mul(a, b) => {
                let (va, vb) = (self.vals[*a].data(), self.vals[*b].data());
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += g.data()[i] * vb[i];
                    }
                });
                Self::add_grad(grads, *b, self.vals[*b].shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += g.data()[i] * va[i];
                    }
                });
            }
            Scale(a, c) => {
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for (x, y) in d.iter_mut().zip(g.data()) {
                        *x += c * y;
                    }
                });
            }
            Concat { axis, a, b } => {
                let ta = &self.vals[*a];
                let tb = &self.vals[*b];
                match axis {
                    0 => {
                        let na = ta.numel();
                        Self::add_grad(grads, *a, ta.shape(), |d| {
                            for i in 0..na {
                                d[i] += g.data()[i];
                            }
                        });
                        Self::add_grad(grads, *b, tb.shape(), |d| {
                            for i in 0..tb.numel() {
                                d[i] += g.data()[na + i];
                            }
                        });
                    }
                    _ => {
                        let (r, ca) = (ta.rows(), ta.cols());
                        let cb = tb.cols();
                        let ct = ca + cb;
                        Self::add_grad(grads, *a, ta.shape(), |d| {
                            for i in 0..r {
                                for j in 0..ca {
                                    d[i * ca + j] += g.data()[i * ct + j];
                                }
                            }
                        });
                        Self::add_grad(grads, *b, tb.shape(), |d| {
                            for i in 0..r {
                                for j in 0..cb {
                                    d[i * cb + j] += g.data()[i * ct + ca + j];
                                }
                            }
                        });
                    }
                }
            }
            Slice { input, axis, start, len } => {
                let t = &self.vals[*input];
                match (t.shape().len(), axis) {
                    (1, _) | (2, 0) => {
                        let c = if t.shape().len() == 2 { t.cols() } else { 1 };
                        Self::add_grad(grads, *input, t.shape(), |d| {
                            for i in 0..len * c {
                                d[start * c + i] += g.data()[i];
                            }
                        });
                    }
                    _ => {
                        let (r, c) = (t.rows(), t.cols());
                        Self::add_grad(grads, *input, t.shape(), |d| {
                            for i in 0..r {
                                for j in 0..*len {
                                    d[i * c + start + j] += g.data()[i * len + j];
                                }
                            }
                        });
                    }
                }
            }
            Transpose(a) => {
                let gt = transpose_raw(g);
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for (x, y) in d.iter_mut().zip(gt.data()) {
                        *x += y;
                    }
                });
            }
            Reshape(a) => {
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for (x, y) in d.iter_mut().zip(g.data()) {
                        *x += y;
                    }
                });
            }
            SumAll(a) | MeanAll(a) => {
                let n = self.vals[*a].numel() as f64;
                let gv = g.item()
                    * if matches!(self.ops[id], MeanAll(_)) {
                        1.0 / n
                    } else {
                        1.0
                    };
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for x in d.iter_mut() {
                        *x += gv;
                    }
                });
            }
            SumRows(a) | MeanRows(a) => {
                let (r, c) = (self.vals[*a].rows(), self.vals[*a].cols());
                let denom = if matches!(self.ops[id], MeanRows(_)) {
                    c as f64
                } else {
                    1.0
                };
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for i in 0..r {
                        let gv = g.data()[i] / denom;
                        for j in 0..c {
                            d[i * c + j] += gv;
                        }
                    }
                });
            }
            SumCols(a) | MeanCols(a) => {
                let (r, c) = (self.vals[*a].rows(), self.vals[*a].cols());
                let denom = if matches!(self.ops[id], MeanCols(_)) {
                    r as f64
                } else {
                    1.0
                };
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g.data()[j] / denom;
                        }
                    }
                });
            }
            RepeatRows { input, n } => {
                let m = self.vals[*input].numel();
                Self::add_grad(grads, *input, self.vals[*input].shape(), |d| {
                    for i in 0..*n {
                        for j in 0..m {
                            d[j] += g.data()[i * m + j];
                        }
                    }
                });
            }
            RepeatCols { input, m } => {
                let n = self.vals[*input].numel();
                Self::add_grad(grads, *input, self.vals[*input].shape(), |d| {
                    for i in 0..n {
                        for j in 0..*m {
                            d[i] += g.data()[i * m + j];
                        }
                    }
                });
            }
            Exp(a) => {
                let out = self.vals[id].data();
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += g.data()[i] * out[i];
                    }
                });
            }
            Log(a) => {
                let x = self.vals[*a].data();
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += g.data()[i] / x[i];
                    }
                });
            }
            Tanh(a) => {
                let out = self.vals[id].data();
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += g.data()[i] * (1.0 - out[i] * out[i]);
                    }
                });
            }
            Sigmoid(a) => {
                let out = self.vals[id].data();
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += g.data()[i] * out[i] * (1.0 - out[i]);
                    }
                });
            }
            LeakyRelu(a, slope) => {
                let x = self.vals[*a].data();
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += g.data()[i] * if x[i] >= 0.0 { 1.0 } else { *slope };
                    }
                });
            }
            ClampMin(a, c) => {
                let x = self.vals[*a].data();
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for i in 0..d.len() {
                        if x[i] > *c {
                            d[i] += g.data()[i];
                        }
                    }
                });
            }
            Softmax(a) | MaskedSoftmaxRows { input: a, .. } => {
                // d e_j = alpha_j * (g_j - sum_k g_k alpha_k), per row.
                // Masked-out entries have alpha_j = 0 and receive no gradient.
                let out = &self.vals[id];
                let c = out.cols();
                let r = out.numel() / c;
                Self::add_grad(grads, *a, self.vals[*a].shape(), |d| {
                    for i in 0..r {
                        let orow = &out.data()[i * c..(i + 1) * c];
                        let grow = &g.data()[i * c..(i + 1) * c];
                        let dot: f64 = orow.iter().zip(grow).map(|(o, gv)| o * gv).sum();
                        for j in 0..c {
                            d[i * c + j] += orow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
        }
    }

    /// Topological sanity: every op's inputs precede it.
    pub fn check_topological(&self) -> bool {
        self.ops
            .iter()
            .enumerate()
            .all(|(id, op)| op.inputs().iter().all(|i| *i < id))
    }
}

/// Max relative error between analytic gradients and central finite
/// differences of a scalar-valued function at `point`.
///
/// The relative error is |analytic - numeric| / max(1, |numeric|), maximized
/// over every coordinate of every input tensor. Non-finite differences yield
/// an infinite error rather than a panic.
pub fn grad_check<F>(f: F, point: &[Tensor], step: f64) -> f64
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId>,
{
    let run = |tensors: &[Tensor]| -> (Tape, Vec<VarId>, VarId) {
        let mut tape = Tape::new();
        let ids: Vec<VarId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &ids).expect("grad_check: function failed at the point");
        (tape, ids, out)
    };

    let (tape, ids, out) = run(point);
    assert!(tape.value(out).is_scalar(), "grad_check needs a scalar function");
    let grads = tape.backward(out).expect("grad_check: backward failed");

    let mut max_err: f64 = 0.0;
    let mut perturbed: Vec<Tensor> = point.to_vec();
    for (pi, t) in point.iter().enumerate() {
        let analytic = grads[ids[pi]].clone().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
        for k in 0..t.numel() {
            let orig = t.data()[k];
            perturbed[pi].data_mut()[k] = orig + step;
            let (tp, _, op) = run(&perturbed);
            let fp = tp.value(op).item();
            perturbed[pi].data_mut()[k] = orig - step;
            let (tm, _, om) = run(&perturbed);
            let fm = tm.value(om).item();
            perturbed[pi].data_mut()[k] = orig;

            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.data()[k];
            let err = if numeric.is_finite() && a.is_finite() {
                (a - numeric).abs() / numeric.abs().max(1.0)
            } else {
                f64::INFINITY
            };
            max_err = max_err.max(err);
        }
    }
    max_err
}
