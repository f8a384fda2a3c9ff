//! The gradient tape: forward values, the operation graph, and reverse-mode
//! backpropagation.

use thiserror::Error;

/// Index of a tensor on its tape.
pub type TensorId = usize;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar loss, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
}

fn shape_err(msg: impl Into<String>) -> TensorError {
    TensorError::ShapeMismatch(msg.into())
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// c = a x b
    MatMul(TensorId, TensorId),
    /// c = a x b^T
    MatMulBT(TensorId, TensorId),
    Add(TensorId, TensorId),
    Scale(TensorId, f64),
    /// [r x c] + broadcast [1 x c]
    AddRowBroadcast(TensorId, TensorId),
    SoftmaxRows(TensorId),
    LayerNorm {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    },
    Relu(TensorId),
    Sigmoid(TensorId),
    /// [r x c] -> [1 x c] column means
    MeanRows(TensorId),
    ConcatCols(Vec<TensorId>),
    SliceCols {
        a: TensorId,
        start: usize,
        len: usize,
    },
    /// zero out one row
    MaskRow(TensorId, usize),
    /// binary cross-entropy of a single score against a fixed label
    BceScalar {
        score: TensorId,
        label: f64,
    },
    /// sum over rows of KL(softmax(orig_row) || softmax(rec_row))
    KlRows {
        orig: TensorId,
        rec: TensorId,
    },
    /// mean of scalar inputs
    MeanScalars(Vec<TensorId>),
}

struct Node {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

const CLAMP: f64 = 1e-12;

/// One forward computation and its gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<f64>, op: Op) -> TensorId {
        debug_assert_eq!(values.len(), rows * cols);
        let grad = vec![0.0; values.len()];
        self.nodes.push(Node {
            rows,
            cols,
            values,
            grad,
            op,
        });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> TensorId {
        assert_eq!(values.len(), rows * cols, "leaf value length");
        self.push(rows, cols, values, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> TensorId {
        self.push(1, 1, vec![value], Op::Leaf)
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = &self.nodes[id];
        (n.rows, n.cols)
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id].values
    }

    pub fn grad(&self, id: TensorId) -> &[f64] {
        &self.nodes[id].grad
    }

    pub fn value_scalar(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id].values.len(), 1);
        self.nodes[id].values[0]
    }

    /// Overwrite a leaf's values in place (used by finite-difference checks).
    pub fn set_leaf_values(&mut self, id: TensorId, values: Vec<f64>) {
        assert_eq!(self.nodes[id].values.len(), values.len());
        self.nodes[id].values = values;
    }

    // -- forward ops --------------------------------------------------------

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(shape_err(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        {
            let av = &self.nodes[a].values;
            let bv = &self.nodes[b].values;
            for i in 0..m {
                for p in 0..k {
                    let x = av[i * k + p];
                    if x != 0.0 {
                        let brow = &bv[p * n..(p + 1) * n];
                        let orow = &mut out[i * n..(i + 1) * n];
                        for (o, &bb) in orow.iter_mut().zip(brow) {
                            *o += x * bb;
                        }
                    }
                }
            }
        }
        Ok(self.push(m, n, out, Op::MatMul(a, b)))
    }

    /// a x b^T, with b given row-major as [n x k].
    pub fn matmul_bt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(shape_err(format!("matmul_bt {m}x{k} by ({n}x{k2})^T")));
        }
        let mut out = vec![0.0; m * n];
        {
            let av = &self.nodes[a].values;
            let bv = &self.nodes[b].values;
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += av[i * k + p] * bv[j * k + p];
                    }
                    out[i * n + j] = acc;
                }
            }
        }
        Ok(self.push(m, n, out, Op::MatMulBT(a, b)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "add {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(r, c, out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> TensorId {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.nodes[a].values.iter().map(|x| x * factor).collect();
        self.push(r, c, out, Op::Scale(a, factor))
    }

    /// rows of `a` plus the single row of `b`.
    pub fn add_row_broadcast(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(b);
        if br != 1 || bc != c {
            return Err(shape_err(format!(
                "broadcast add {r}x{c} with {br}x{bc}"
            )));
        }
        let mut out = self.nodes[a].values.clone();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += self.nodes[b].values[j];
            }
        }
        Ok(self.push(r, c, out, Op::AddRowBroadcast(a, b)))
    }

    /// Row-wise softmax with max-subtraction stabilization.
    pub fn softmax_rows(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[a].values[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in &mut out[i * c..(i + 1) * c] {
                *o /= sum;
            }
        }
        self.push(r, c, out, Op::SoftmaxRows(a))
    }

    /// Layer normalization over the last dimension, then affine gain/bias.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId, TensorError> {
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return Err(shape_err("layer_norm gain/bias must be 1 x cols"));
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[x].values[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                let xhat = (row[j] - mean) * inv;
                out[i * c + j] =
                    self.nodes[gain].values[j] * xhat + self.nodes[bias].values[j];
            }
        }
        Ok(self.push(r, c, out, Op::LayerNorm { x, gain, bias, eps }))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.nodes[a].values.iter().map(|&x| x.max(0.0)).collect();
        self.push(r, c, out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.nodes[a]
            .values
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.push(r, c, out, Op::Sigmoid(a))
    }

    /// Column means over rows: [r x c] -> [1 x c].
    pub fn mean_rows(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += self.nodes[a].values[i * c + j];
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        self.push(1, c, out, Op::MeanRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        let (r, _) = self.shape(parts[0]);
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != r {
                return Err(shape_err("concat_cols row mismatch"));
            }
            total += pc;
        }
        let mut out = vec![0.0; r * total];
        let mut offset = 0;
        for &p in parts {
            let (_, pc) = self.shape(p);
            for i in 0..r {
                out[i * total + offset..i * total + offset + pc]
                    .copy_from_slice(&self.nodes[p].values[i * pc..(i + 1) * pc]);
            }
            offset += pc;
        }
        Ok(self.push(r, total, out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(
        &mut self,
        a: TensorId,
        start: usize,
        len: usize,
    ) -> Result<TensorId, TensorError> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(TensorError::IndexOutOfRange(format!(
                "slice_cols {start}+{len} of {c}"
            )));
        }
        let mut out = vec![0.0; r * len];
        for i in 0..r {
            out[i * len..(i + 1) * len]
                .copy_from_slice(&self.nodes[a].values[i * c + start..i * c + start + len]);
        }
        Ok(self.push(r, len, out, Op::SliceCols { a, start, len }))
    }

    /// Copy of `a` with row `row` zeroed.
    pub fn mask_row(&mut self, a: TensorId, row: usize) -> Result<TensorId, TensorError> {
        let (r, c) = self.shape(a);
        if row >= r {
            return Err(TensorError::IndexOutOfRange(format!("mask row {row} of {r}")));
        }
        let mut out = self.nodes[a].values.clone();
        out[row * c..(row + 1) * c].fill(0.0);
        Ok(self.push(r, c, out, Op::MaskRow(a, row)))
    }

    /// Binary cross-entropy of one probability against a fixed 0/1 label,
    /// with the score clamped away from 0 and 1 before the logs.
    pub fn bce_scalar(&mut self, score: TensorId, label: f64) -> Result<TensorId, TensorError> {
        if self.shape(score) != (1, 1) {
            return Err(shape_err("bce_scalar expects a 1x1 score"));
        }
        let s = self.nodes[score].values[0].clamp(CLAMP, 1.0 - CLAMP);
        let loss = -(label * s.ln() + (1.0 - label) * (1.0 - s).ln());
        Ok(self.push(1, 1, vec![loss], Op::BceScalar { score, label }))
    }

    /// Sum over rows of KL(softmax(orig_row) || softmax(rec_row)), with both
    /// distributions floored at 1e-12 inside the logs.
    pub fn kl_rows(&mut self, orig: TensorId, rec: TensorId) -> Result<TensorId, TensorError> {
        if self.shape(orig) != self.shape(rec) {
            return Err(shape_err("kl_rows shape mismatch"));
        }
        let (r, c) = self.shape(orig);
        let mut total = 0.0;
        for i in 0..r {
            let p = softmax_slice(&self.nodes[orig].values[i * c..(i + 1) * c]);
            let q = softmax_slice(&self.nodes[rec].values[i * c..(i + 1) * c]);
            for j in 0..c {
                let pj = p[j].max(CLAMP);
                let qj = q[j].max(CLAMP);
                total += p[j] * (pj.ln() - qj.ln());
            }
        }
        Ok(self.push(1, 1, vec![total], Op::KlRows { orig, rec }))
    }

    /// Mean of scalar tensors.
    pub fn mean_scalars(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(shape_err("mean_scalars of empty set"));
        }
        let mut total = 0.0;
        for &p in parts {
            if self.shape(p) != (1, 1) {
                return Err(shape_err("mean_scalars expects scalars"));
            }
            total += self.nodes[p].values[0];
        }
        let mean = total / parts.len() as f64;
        Ok(self.push(1, 1, vec![mean], Op::MeanScalars(parts.to_vec())))
    }

    // -- backward -----------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Populates `grad` for every
    /// tensor the loss depends on; all previous gradients on the tape are
    /// cleared first, so repeated calls are idempotent.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(TensorError::NonScalarLoss(r, c));
        }
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
        self.nodes[loss].grad[0] = 1.0;
        for id in (0..=loss).rev() {
            self.backprop_node(id);
        }
        Ok(())
    }

    fn backprop_node(&mut self, id: TensorId) {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(a);
                let (_, n) = self.shape(b);
                let g = self.nodes[id].grad.clone();
                // dA = G B^T
                {
                    let bv = &self.nodes[b].values.clone();
                    let ga = &mut self.nodes[a].grad;
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bv[p * n + j];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                }
                // dB = A^T G
                {
                    let av = self.nodes[a].values.clone();
                    let gb = &mut self.nodes[b].grad;
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av[i * k + p] * g[i * n + j];
                            }
                            gb[p * n + j] += acc;
                        }
                    }
                }
            }
            Op::MatMulBT(a, b) => {
                // C = A B^T with A [m x k], B [n x k], C [m x n]
                let (m, k) = self.shape(a);
                let (n, _) = self.shape(b);
                let g = self.nodes[id].grad.clone();
                {
                    // dA = G B
                    let bv = self.nodes[b].values.clone();
                    let ga = &mut self.nodes[a].grad;
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bv[j * k + p];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                }
                {
                    // dB = G^T A
                    let av = self.nodes[a].values.clone();
                    let gb = &mut self.nodes[b].grad;
                    for j in 0..n {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += g[i * n + j] * av[i * k + p];
                            }
                            gb[j * k + p] += acc;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                let g = self.nodes[id].grad.clone();
                add_into(&mut self.nodes[a].grad, &g);
                add_into(&mut self.nodes[b].grad, &g);
            }
            Op::Scale(a, factor) => {
                let g = self.nodes[id].grad.clone();
                for (ga, gi) in self.nodes[a].grad.iter_mut().zip(&g) {
                    *ga += factor * gi;
                }
            }
            Op::AddRowBroadcast(a, b) => {
                let (r, c) = self.shape(a);
                let g = self.nodes[id].grad.clone();
                add_into(&mut self.nodes[a].grad, &g);
                let gb = &mut self.nodes[b].grad;
                for i in 0..r {
                    for j in 0..c {
                        gb[j] += g[i * c + j];
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = self.shape(a);
                let g = self.nodes[id].grad.clone();
                let y = self.nodes[id].values.clone();
                let ga = &mut self.nodes[a].grad;
                for i in 0..r {
                    let dot: f64 = (0..c).map(|j| y[i * c + j] * g[i * c + j]).sum();
                    for j in 0..c {
                        ga[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (r, c) = self.shape(x);
                let g = self.nodes[id].grad.clone();
                let xv = self.nodes[x].values.clone();
                let gainv = self.nodes[gain].values.clone();
                for i in 0..r {
                    let row = &xv[i * c..(i + 1) * c];
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                    let dy = &g[i * c..(i + 1) * c];
                    // affine grads
                    for j in 0..c {
                        self.nodes[gain].grad[j] += dy[j] * xhat[j];
                        self.nodes[bias].grad[j] += dy[j];
                    }
                    // input grad
                    let dxhat: Vec<f64> = (0..c).map(|j| dy[j] * gainv[j]).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / c as f64;
                    let mean_dxhat_xhat =
                        (0..c).map(|j| dxhat[j] * xhat[j]).sum::<f64>() / c as f64;
                    for j in 0..c {
                        self.nodes[x].grad[i * c + j] +=
                            inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
            }
            Op::Relu(a) => {
                let g = self.nodes[id].grad.clone();
                let xv = self.nodes[a].values.clone();
                for j in 0..g.len() {
                    if xv[j] > 0.0 {
                        self.nodes[a].grad[j] += g[j];
                    }
                }
            }
            Op::Sigmoid(a) => {
                let g = self.nodes[id].grad.clone();
                let y = self.nodes[id].values.clone();
                for j in 0..g.len() {
                    self.nodes[a].grad[j] += g[j] * y[j] * (1.0 - y[j]);
                }
            }
            Op::MeanRows(a) => {
                let (r, c) = self.shape(a);
                let g = self.nodes[id].grad.clone();
                let scale = 1.0 / r as f64;
                for i in 0..r {
                    for j in 0..c {
                        self.nodes[a].grad[i * c + j] += g[j] * scale;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = self.shape(id);
                let g = self.nodes[id].grad.clone();
                let mut offset = 0;
                for &p in &parts {
                    let (_, pc) = self.shape(p);
                    for i in 0..r {
                        for j in 0..pc {
                            self.nodes[p].grad[i * pc + j] += g[i * total + offset + j];
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceCols { a, start, len } => {
                let (r, c) = self.shape(a);
                let g = self.nodes[id].grad.clone();
                for i in 0..r {
                    for j in 0..len {
                        self.nodes[a].grad[i * c + start + j] += g[i * len + j];
                    }
                }
            }
            Op::MaskRow(a, row) => {
                let (r, c) = self.shape(a);
                let g = self.nodes[id].grad.clone();
                for i in 0..r {
                    if i == row {
                        continue;
                    }
                    for j in 0..c {
                        self.nodes[a].grad[i * c + j] += g[i * c + j];
                    }
                }
            }
            Op::BceScalar { score, label } => {
                let g = self.nodes[id].grad[0];
                let s = self.nodes[score].values[0];
                if s > CLAMP && s < 1.0 - CLAMP {
                    let ds = -(label / s) + (1.0 - label) / (1.0 - s);
                    self.nodes[score].grad[0] += g * ds;
                }
            }
            Op::KlRows { orig, rec } => {
                let (r, c) = self.shape(orig);
                let g = self.nodes[id].grad[0];
                let ov = self.nodes[orig].values.clone();
                let rv = self.nodes[rec].values.clone();
                for i in 0..r {
                    let p = softmax_slice(&ov[i * c..(i + 1) * c]);
                    let q = softmax_slice(&rv[i * c..(i + 1) * c]);
                    let lr: Vec<f64> = (0..c)
                        .map(|j| p[j].max(CLAMP).ln() - q[j].max(CLAMP).ln())
                        .collect();
                    let kl: f64 = (0..c).map(|j| p[j] * lr[j]).sum();
                    for j in 0..c {
                        // d/d orig_j: p_j * (log-ratio_j - KL)
                        self.nodes[orig].grad[i * c + j] += g * p[j] * (lr[j] - kl);
                        // d/d rec_j: q_j - p_j
                        self.nodes[rec].grad[i * c + j] += g * (q[j] - p[j]);
                    }
                }
            }
            Op::MeanScalars(parts) => {
                let g = self.nodes[id].grad[0] / parts.len() as f64;
                for &p in &parts {
                    self.nodes[p].grad[0] += g;
                }
            }
        }
    }
}

fn softmax_slice(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
