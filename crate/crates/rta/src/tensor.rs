//! Minimal dense f64 matrices with reverse-mode autodiff on a tape.
//!
//! Everything trainable in this crate (the decoder LM, the aggregators,
//! FISM/SASRec, the adapters) builds its forward pass on [`Tape`] and reads
//! gradients back after [`Tape::backward`]. Shapes are strictly 2-D; a vector
//! is a `[1, n]` matrix and a token sequence is `[T, d]`.

use rand::Rng;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Array {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        Array { rows, cols, data }
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Self {
        Array { rows, cols, data: vec![v; rows * cols] }
    }

    /// Gaussian init, `std` standard deviation.
    pub fn randn<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            // Box-Muller; two uniforms per draw keeps the stream simple.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            data.push((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * std);
        }
        Array { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Array) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

/// C = A * B.
pub fn matmul(a: &Array, b: &Array) -> Array {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut c = Array::zeros(a.rows, b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let crow = &mut c.data[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            for j in 0..n {
                crow[j] += aik * brow[j];
            }
        }
    }
    c
}

/// C = A * B^T. Inner loop runs over contiguous rows of both operands.
pub fn matmul_nt(a: &Array, b: &Array) -> Array {
    assert_eq!(a.cols, b.cols, "matmul_nt shape mismatch");
    let mut c = Array::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            let brow = b.row(j);
            let mut s = 0.0;
            for k in 0..a.cols {
                s += arow[k] * brow[k];
            }
            *c.at_mut(i, j) = s;
        }
    }
    c
}

/// C = A^T * B, accumulated by outer products of matching rows.
pub fn matmul_tn(a: &Array, b: &Array) -> Array {
    assert_eq!(a.rows, b.rows, "matmul_tn shape mismatch");
    let mut c = Array::zeros(a.cols, b.cols);
    let n = b.cols;
    for p in 0..a.rows {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &api) in arow.iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let crow = &mut c.data[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += api * brow[j];
            }
        }
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)

enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    MatMulNt(TensorId, TensorId),
    Add(TensorId, TensorId),
    /// matrix + broadcast row vector
    AddRow(TensorId, TensorId),
    Mul(TensorId, TensorId),
    /// value = a * mul + add (elementwise affine by scalars)
    Affine(TensorId, f64),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Gelu(TensorId),
    /// row-wise softmax; `causal` masks columns j > i before normalizing
    SoftmaxRows(TensorId, bool),
    LayerNorm(TensorId, TensorId, TensorId),
    /// gather rows of `a` by index
    Gather(TensorId, Vec<usize>),
    Slice(TensorId, usize, usize, usize, usize),
    ConcatRows(TensorId, TensorId),
    ConcatCols(TensorId, TensorId),
    SumAll(TensorId),
    /// mean over rows of -log softmax(row)[target]
    CrossEntropy(TensorId, Vec<usize>),
}

struct Node {
    value: Array,
    op: Op,
}

/// Dynamic computation graph; build forward, then call [`Tape::backward`].
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, value: Array, op: Op) -> TensorId {
        self.nodes.push(Node { value, op });
        TensorId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array) -> TensorId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: TensorId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> Option<&Array> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, id: TensorId) -> Array {
        let shape = (self.nodes[id.0].value.rows, self.nodes[id.0].value.cols);
        self.grads[id.0].take().unwrap_or_else(|| Array::zeros(shape.0, shape.1))
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        let v = self.value(id);
        assert_eq!((v.rows, v.cols), (1, 1), "not a scalar");
        v.data[0]
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = matmul_nt(self.value(a), self.value(b));
        self.push(v, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols));
        let mut v = va.clone();
        v.add_assign(vb);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> TensorId {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.rows, 1);
        assert_eq!(va.cols, vr.cols);
        let mut v = va.clone();
        for r in 0..v.rows {
            for c in 0..v.cols {
                *v.at_mut(r, c) += vr.data[c];
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols));
        let mut v = va.clone();
        for (x, y) in v.data.iter_mut().zip(&vb.data) {
            *x *= *y;
        }
        self.push(v, Op::Mul(a, b))
    }

    pub fn affine(&mut self, a: TensorId, mul: f64, add: f64) -> TensorId {
        let mut v = self.value(a).clone();
        for x in v.data.iter_mut() {
            *x = *x * mul + add;
        }
        self.push(v, Op::Affine(a, mul))
    }

    pub fn scale(&mut self, a: TensorId, s: f64) -> TensorId {
        self.affine(a, s, 0.0)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let mut v = self.value(a).clone();
        for x in v.data.iter_mut() {
            *x = 1.0 / (1.0 + (-*x).exp());
        }
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let mut v = self.value(a).clone();
        for x in v.data.iter_mut() {
            *x = x.tanh();
        }
        self.push(v, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let mut v = self.value(a).clone();
        for x in v.data.iter_mut() {
            let t = (GELU_C * (*x + 0.044715 * x.powi(3))).tanh();
            *x = 0.5 * *x * (1.0 + t);
        }
        self.push(v, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: TensorId, causal: bool) -> TensorId {
        let va = self.value(a);
        let mut v = Array::zeros(va.rows, va.cols);
        for r in 0..va.rows {
            let limit = if causal { (r + 1).min(va.cols) } else { va.cols };
            let row = va.row(r);
            let m = row[..limit].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..limit {
                let e = (row[c] - m).exp();
                *v.at_mut(r, c) = e;
                z += e;
            }
            for c in 0..limit {
                *v.at_mut(r, c) /= z;
            }
        }
        self.push(v, Op::SoftmaxRows(a, causal))
    }

    /// Row-wise layer norm with learned gain/bias (both `[1, cols]`).
    pub fn layer_norm(&mut self, a: TensorId, gain: TensorId, bias: TensorId) -> TensorId {
        let (va, vg, vb) = (self.value(a), self.value(gain), self.value(bias));
        assert_eq!(vg.cols, va.cols);
        assert_eq!(vb.cols, va.cols);
        let mut v = Array::zeros(va.rows, va.cols);
        let n = va.cols as f64;
        for r in 0..va.rows {
            let row = va.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for c in 0..va.cols {
                *v.at_mut(r, c) = (row[c] - mean) * inv * vg.data[c] + vb.data[c];
            }
        }
        self.push(v, Op::LayerNorm(a, gain, bias))
    }

    pub fn gather(&mut self, a: TensorId, rows: &[usize]) -> TensorId {
        let va = self.value(a);
        let mut v = Array::zeros(rows.len(), va.cols);
        for (i, &r) in rows.iter().enumerate() {
            v.data[i * va.cols..(i + 1) * va.cols].copy_from_slice(va.row(r));
        }
        self.push(v, Op::Gather(a, rows.to_vec()))
    }

    pub fn slice(
        &mut self,
        a: TensorId,
        row_start: usize,
        rows: usize,
        col_start: usize,
        cols: usize,
    ) -> TensorId {
        let va = self.value(a);
        assert!(row_start + rows <= va.rows && col_start + cols <= va.cols);
        let mut v = Array::zeros(rows, cols);
        for r in 0..rows {
            let src = &va.row(row_start + r)[col_start..col_start + cols];
            v.data[r * cols..(r + 1) * cols].copy_from_slice(src);
        }
        self.push(v, Op::Slice(a, row_start, rows, col_start, cols))
    }

    pub fn row_at(&mut self, a: TensorId, r: usize) -> TensorId {
        let cols = self.value(a).cols;
        self.slice(a, r, 1, 0, cols)
    }

    pub fn concat_rows(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols, vb.cols);
        let mut data = va.data.clone();
        data.extend_from_slice(&vb.data);
        let v = Array::from_vec(va.rows + vb.rows, va.cols, data);
        self.push(v, Op::ConcatRows(a, b))
    }

    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rows, vb.rows);
        let mut v = Array::zeros(va.rows, va.cols + vb.cols);
        for r in 0..va.rows {
            v.data[r * v.cols..r * v.cols + va.cols].copy_from_slice(va.row(r));
            v.data[r * v.cols + va.cols..(r + 1) * v.cols].copy_from_slice(vb.row(r));
        }
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s = self.value(a).data.iter().sum();
        self.push(Array::from_vec(1, 1, vec![s]), Op::SumAll(a))
    }

    /// Mean over rows of the negative log softmax probability of `targets`.
    pub fn cross_entropy(&mut self, logits: TensorId, targets: &[usize]) -> TensorId {
        let v = self.value(logits);
        assert_eq!(v.rows, targets.len());
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = v.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            loss += m + z.ln() - row[t];
        }
        loss /= targets.len() as f64;
        self.push(Array::from_vec(1, 1, vec![loss]), Op::CrossEntropy(logits, targets.to_vec()))
    }

    /// Reverse pass seeding d(loss)/d(loss) = 1.
    pub fn backward(&mut self, loss: TensorId) {
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        let v = &self.nodes[loss.0].value;
        assert_eq!((v.rows, v.cols), (1, 1), "backward target must be scalar");
        self.grads[loss.0] = Some(Array::from_vec(1, 1, vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let g = match self.grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            // split borrows: grads of inputs live at smaller indices
            let (node_val, op) = {
                let n = &self.nodes[idx];
                (n.value.clone(), &self.nodes[idx].op)
            };
            match op {
                Op::Leaf => {
                    self.grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = matmul_nt(&g, &self.nodes[b.0].value);
                    let gb = matmul_tn(&self.nodes[a.0].value, &g);
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::MatMulNt(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = matmul(&g, &self.nodes[b.0].value);
                    let gb = matmul_tn(&g, &self.nodes[a.0].value);
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g);
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    let mut gr = Array::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            gr.data[c] += g.at(r, c);
                        }
                    }
                    self.accumulate(a, g);
                    self.accumulate(row, gr);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let mut ga = g.clone();
                    for (x, y) in ga.data.iter_mut().zip(&self.nodes[b.0].value.data) {
                        *x *= *y;
                    }
                    let mut gb = g;
                    for (x, y) in gb.data.iter_mut().zip(&self.nodes[a.0].value.data) {
                        *x *= *y;
                    }
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::Affine(a, mul) => {
                    let (a, mul) = (*a, *mul);
                    let mut ga = g;
                    for x in ga.data.iter_mut() {
                        *x *= mul;
                    }
                    self.accumulate(a, ga);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let mut ga = g;
                    for (x, s) in ga.data.iter_mut().zip(&node_val.data) {
                        *x *= s * (1.0 - s);
                    }
                    self.accumulate(a, ga);
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let mut ga = g;
                    for (x, t) in ga.data.iter_mut().zip(&node_val.data) {
                        *x *= 1.0 - t * t;
                    }
                    self.accumulate(a, ga);
                }
                Op::Gelu(a) => {
                    let a = *a;
                    let mut ga = g;
                    for (x, &inp) in ga.data.iter_mut().zip(&self.nodes[a.0].value.data) {
                        let u = GELU_C * (inp + 0.044715 * inp.powi(3));
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * inp * inp);
                        *x *= 0.5 * (1.0 + t) + 0.5 * inp * (1.0 - t * t) * du;
                    }
                    self.accumulate(a, ga);
                }
                Op::SoftmaxRows(a, causal) => {
                    let (a, causal) = (*a, *causal);
                    let s = &node_val;
                    let mut ga = Array::zeros(s.rows, s.cols);
                    for r in 0..s.rows {
                        let limit = if causal { (r + 1).min(s.cols) } else { s.cols };
                        let mut dot = 0.0;
                        for c in 0..limit {
                            dot += g.at(r, c) * s.at(r, c);
                        }
                        for c in 0..limit {
                            *ga.at_mut(r, c) = s.at(r, c) * (g.at(r, c) - dot);
                        }
                    }
                    self.accumulate(a, ga);
                }
                Op::LayerNorm(a, gain, bias) => {
                    let (a, gain, bias) = (*a, *gain, *bias);
                    let va = &self.nodes[a.0].value;
                    let vg = &self.nodes[gain.0].value;
                    let n = va.cols as f64;
                    let mut ga = Array::zeros(va.rows, va.cols);
                    let mut gg = Array::zeros(1, va.cols);
                    let mut gb = Array::zeros(1, va.cols);
                    for r in 0..va.rows {
                        let row = va.row(r);
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        // dy = g * gain; dx via standard layernorm backward
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xhat = 0.0;
                        let mut xhat = vec![0.0; va.cols];
                        let mut dy = vec![0.0; va.cols];
                        for c in 0..va.cols {
                            xhat[c] = (row[c] - mean) * inv;
                            dy[c] = g.at(r, c) * vg.data[c];
                            sum_dy += dy[c];
                            sum_dy_xhat += dy[c] * xhat[c];
                            gg.data[c] += g.at(r, c) * xhat[c];
                            gb.data[c] += g.at(r, c);
                        }
                        for c in 0..va.cols {
                            *ga.at_mut(r, c) =
                                inv * (dy[c] - sum_dy / n - xhat[c] * sum_dy_xhat / n);
                        }
                    }
                    self.accumulate(a, ga);
                    self.accumulate(gain, gg);
                    self.accumulate(bias, gb);
                }
                Op::Gather(a, rows) => {
                    let a = *a;
                    let rows = rows.clone();
                    let va_shape = {
                        let v = &self.nodes[a.0].value;
                        (v.rows, v.cols)
                    };
                    let mut ga = Array::zeros(va_shape.0, va_shape.1);
                    for (i, &r) in rows.iter().enumerate() {
                        for c in 0..va_shape.1 {
                            *ga.at_mut(r, c) += g.at(i, c);
                        }
                    }
                    self.accumulate(a, ga);
                }
                Op::Slice(a, rs, nr, cs, nc) => {
                    let (a, rs, nr, cs, nc) = (*a, *rs, *nr, *cs, *nc);
                    let va_shape = {
                        let v = &self.nodes[a.0].value;
                        (v.rows, v.cols)
                    };
                    let mut ga = Array::zeros(va_shape.0, va_shape.1);
                    for r in 0..nr {
                        for c in 0..nc {
                            *ga.at_mut(rs + r, cs + c) = g.at(r, c);
                        }
                    }
                    self.accumulate(a, ga);
                }
                Op::ConcatRows(a, b) => {
                    let (a, b) = (*a, *b);
                    let ra = self.nodes[a.0].value.rows;
                    let cols = g.cols;
                    let ga = Array::from_vec(ra, cols, g.data[..ra * cols].to_vec());
                    let gb =
                        Array::from_vec(g.rows - ra, cols, g.data[ra * cols..].to_vec());
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let ca = self.nodes[a.0].value.cols;
                    let mut ga = Array::zeros(g.rows, ca);
                    let mut gb = Array::zeros(g.rows, g.cols - ca);
                    for r in 0..g.rows {
                        ga.data[r * ca..(r + 1) * ca].copy_from_slice(&g.row(r)[..ca]);
                        gb.data[r * gb.cols..(r + 1) * gb.cols]
                            .copy_from_slice(&g.row(r)[ca..]);
                    }
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::SumAll(a) => {
                    let a = *a;
                    let shape = {
                        let v = &self.nodes[a.0].value;
                        (v.rows, v.cols)
                    };
                    self.accumulate(a, Array::full(shape.0, shape.1, g.data[0]));
                }
                Op::CrossEntropy(a, targets) => {
                    let a = *a;
                    let targets = targets.clone();
                    let v = &self.nodes[a.0].value;
                    let scale = g.data[0] / targets.len() as f64;
                    let mut ga = Array::zeros(v.rows, v.cols);
                    for (r, &t) in targets.iter().enumerate() {
                        let row = v.row(r);
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
                        for c in 0..v.cols {
                            let p = (row[c] - m).exp() / z;
                            *ga.at_mut(r, c) =
                                scale * (p - if c == t { 1.0 } else { 0.0 });
                        }
                    }
                    self.accumulate(a, ga);
                }
            }
        }
    }

    fn accumulate(&mut self, id: TensorId, g: Array) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

const LN_EPS: f64 = 1e-5;

/// Adam with optional L2 weight decay folded into the gradient.
pub struct Adam {
    m: Vec<Array>,
    v: Vec<Array>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Adam {
    pub fn new(params: &[Array], lr: f64, weight_decay: f64) -> Self {
        Adam {
            m: params.iter().map(|p| Array::zeros(p.rows, p.cols)).collect(),
            v: params.iter().map(|p| Array::zeros(p.rows, p.cols)).collect(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [Array], grads: &[Array]) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.data.len() {
                let gi = g.data[i] + self.weight_decay * p.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Central finite-difference gradient of `f` w.r.t. `params[pi]`, one entry at
/// a time. Test helper for the gradient suites.
pub fn finite_diff<F>(params: &mut [Array], pi: usize, eps: f64, mut f: F) -> Array
where
    F: FnMut(&[Array]) -> f64,
{
    let (rows, cols) = (params[pi].rows, params[pi].cols);
    let mut g = Array::zeros(rows, cols);
    for i in 0..rows * cols {
        let orig = params[pi].data[i];
        params[pi].data[i] = orig + eps;
        let up = f(params);
        params[pi].data[i] = orig - eps;
        let down = f(params);
        params[pi].data[i] = orig;
        g.data[i] = (up - down) / (2.0 * eps);
    }
    g
}

/// Max relative error between analytic and finite-difference gradients.
pub fn max_rel_err(analytic: &Array, numeric: &Array) -> f64 {
    analytic
        .data
        .iter()
        .zip(&numeric.data)
        .map(|(a, n)| {
            let denom = a.abs().max(n.abs()).max(1e-4);
            (a - n).abs() / denom
        })
        .fold(0.0, f64::max)
}
