//! Reverse-mode automatic differentiation on a tape of recorded operations.
//!
//! A [`Tape`] owns every intermediate tensor of one forward pass. Operations
//! append nodes (inputs always precede outputs, so the node order is a
//! topological order), and [`Tape::backward`] walks the tape once in reverse,
//! accumulating gradients into every node. A tensor feeding several consumers
//! receives the sum of all their contributions.
//!
//! Tapes are confined to one training step on one logical worker; values may
//! be shared read-only once written.

use crate::tensor::{Tensor, TensorError};

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-feature batch statistics produced by a train-mode batch normalization,
/// used by the caller to update running statistics.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance of the batch.
    pub var: Vec<f64>,
    pub batch: usize,
}

enum Step {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    BiasRow(NodeId, NodeId),
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    AvgPool1d {
        x: NodeId,
        k: usize,
    },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Abs(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Ln(NodeId),
    ClampMin {
        x: NodeId,
        min: f64,
    },
    Sum(NodeId),
    Mean(NodeId),
    SumRows(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceStep {
        x: NodeId,
        t: usize,
    },
    Transpose12(NodeId),
    Reshape(NodeId),
    BatchNormTrain {
        x: NodeId,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: NodeId,
        inv_std: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    step: Step,
}

/// Recording tape. All operations validate shapes and name both offenders on
/// mismatch.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, step: Step) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.grads.push(vec![0.0; value.numel()]);
        self.nodes.push(Node { value, step });
        id
    }

    fn check(&self, op: &'static str, id: NodeId) -> Result<(), TensorError> {
        if id.0 >= self.nodes.len() {
            return Err(TensorError::UnknownNode { op, index: id.0 });
        }
        Ok(())
    }

    /// Adds an input tensor. Leaves accumulate gradients like any other node;
    /// whether anyone reads them is up to the caller.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Step::Leaf)
    }

    /// Alias for [`Tape::leaf`] used for values that are data, not parameters.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by the last [`Tape::backward`] call.
    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn grad_tensor(&self, id: NodeId) -> Tensor {
        Tensor::new(
            self.nodes[id.0].value.shape().to_vec(),
            self.grads[id.0].clone(),
        )
        .expect("grad buffer matches value shape")
    }

    fn same_shape(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<Vec<usize>, TensorError> {
        self.check(op, a)?;
        self.check(op, b)?;
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let shape = self.same_shape("add", a, b)?;
        let data = zip_map(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), |x, y| x + y);
        Ok(self.push(Tensor::new(shape, data)?, Step::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let shape = self.same_shape("sub", a, b)?;
        let data = zip_map(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), |x, y| x - y);
        Ok(self.push(Tensor::new(shape, data)?, Step::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let shape = self.same_shape("mul", a, b)?;
        let data = zip_map(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), |x, y| x * y);
        Ok(self.push(Tensor::new(shape, data)?, Step::Mul(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId, TensorError> {
        self.check("scale", x)?;
        let v = &self.nodes[x.0].value;
        let data = v.data().iter().map(|&t| c * t).collect();
        Ok(self.push(Tensor::new(v.shape().to_vec(), data)?, Step::Scale(x, c)))
    }

    /// `[B, I] x [I, O] -> [B, O]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.check("matmul", a)?;
        self.check("matmul", b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0) {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (rows, inner, cols) = (va.dim(0), va.dim(1), vb.dim(1));
        let mut out = vec![0.0; rows * cols];
        let (xa, xb) = (va.data(), vb.data());
        for r in 0..rows {
            let out_row = &mut out[r * cols..(r + 1) * cols];
            for i in 0..inner {
                let av = xa[r * inner + i];
                if av == 0.0 {
                    continue;
                }
                let b_row = &xb[i * cols..(i + 1) * cols];
                for (o, bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![rows, cols], out)?, Step::MatMul(a, b)))
    }

    /// Adds a `[F]` bias vector to every row of a `[B, F]` tensor.
    pub fn bias_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        self.check("bias_row", x)?;
        self.check("bias_row", bias)?;
        let (vx, vb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if vx.rank() != 2 || vb.rank() != 1 || vx.dim(1) != vb.dim(0) {
            return Err(TensorError::ShapeMismatch {
                op: "bias_row",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let cols = vx.dim(1);
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + vb.data()[i % cols])
            .collect();
        Ok(self.push(Tensor::new(vx.shape().to_vec(), data)?, Step::BiasRow(x, bias)))
    }

    /// 1-D convolution: `x [B, Cin, L]`, `w [Cout, Cin, K]`, `bias [Cout]`,
    /// symmetric zero padding.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        self.check("conv1d", x)?;
        self.check("conv1d", w)?;
        self.check("conv1d", bias)?;
        let (vx, vw, vb) = (
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[bias.0].value,
        );
        if vx.rank() != 3 || vw.rank() != 3 || vx.dim(1) != vw.dim(1) {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: vx.shape().to_vec(),
                rhs: vw.shape().to_vec(),
            });
        }
        if vb.rank() != 1 || vb.dim(0) != vw.dim(0) {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: vw.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::BadShape {
                op: "conv1d",
                expected: "stride >= 1".into(),
                shape: vec![stride],
            });
        }
        let (batch, cin, len) = (vx.dim(0), vx.dim(1), vx.dim(2));
        let (cout, kernel) = (vw.dim(0), vw.dim(2));
        if len + 2 * pad < kernel {
            return Err(TensorError::BadShape {
                op: "conv1d",
                expected: format!("input length + 2*pad >= kernel {kernel}"),
                shape: vx.shape().to_vec(),
            });
        }
        let out_len = (len + 2 * pad - kernel) / stride + 1;
        let mut out = vec![0.0; batch * cout * out_len];
        let (dx, dw, db) = (vx.data(), vw.data(), vb.data());
        for b in 0..batch {
            for co in 0..cout {
                let out_row = &mut out[(b * cout + co) * out_len..(b * cout + co + 1) * out_len];
                out_row.fill(db[co]);
                for ci in 0..cin {
                    let x_row = &dx[(b * cin + ci) * len..(b * cin + ci + 1) * len];
                    for k in 0..kernel {
                        let wv = dw[(co * cin + ci) * kernel + k];
                        if wv == 0.0 {
                            continue;
                        }
                        let (t_lo, t_hi) = conv_t_range(len, kernel, stride, pad, k, out_len);
                        for t in t_lo..t_hi {
                            out_row[t] += wv * x_row[t * stride + k - pad];
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![batch, cout, out_len], out)?,
            Step::Conv1d {
                x,
                w,
                b: bias,
                stride,
                pad,
            },
        ))
    }

    /// Non-overlapping average pooling over the last axis of `[B, C, L]`;
    /// `L` must be divisible by `k`.
    pub fn avgpool1d(&mut self, x: NodeId, k: usize) -> Result<NodeId, TensorError> {
        self.check("avgpool1d", x)?;
        let vx = &self.nodes[x.0].value;
        if vx.rank() != 3 || k == 0 || vx.dim(2) % k != 0 {
            return Err(TensorError::BadShape {
                op: "avgpool1d",
                expected: format!("rank-3 input with last axis divisible by {k}"),
                shape: vx.shape().to_vec(),
            });
        }
        let (batch, ch, len) = (vx.dim(0), vx.dim(1), vx.dim(2));
        let out_len = len / k;
        let mut out = vec![0.0; batch * ch * out_len];
        let dx = vx.data();
        let inv = 1.0 / k as f64;
        for row in 0..batch * ch {
            let x_row = &dx[row * len..(row + 1) * len];
            let out_row = &mut out[row * out_len..(row + 1) * out_len];
            for (t, o) in out_row.iter_mut().enumerate() {
                *o = x_row[t * k..(t + 1) * k].iter().sum::<f64>() * inv;
            }
        }
        Ok(self.push(
            Tensor::new(vec![batch, ch, out_len], out)?,
            Step::AvgPool1d { x, k },
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        // written so a NaN input stays NaN instead of being swallowed
        self.unary("relu", x, |v| if v < 0.0 { 0.0 } else { v }, Step::Relu)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.unary("tanh", x, f64::tanh, Step::Tanh)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.unary("sigmoid", x, |v| 1.0 / (1.0 + (-v).exp()), Step::Sigmoid)
    }

    /// Subgradient 0 at the kink.
    pub fn abs(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.unary("abs", x, f64::abs, Step::Abs)
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.unary("square", x, |v| v * v, Step::Square)
    }

    /// Subgradient 0 at exactly zero, so a zero distance propagates no
    /// gradient instead of an infinity.
    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.unary("sqrt", x, f64::sqrt, Step::Sqrt)
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.unary("ln", x, f64::ln, Step::Ln)
    }

    pub fn clamp_min(&mut self, x: NodeId, min: f64) -> Result<NodeId, TensorError> {
        // NaN-preserving, so a poisoned prediction aborts training instead of
        // being clamped into a plausible value
        self.unary(
            "clamp_min",
            x,
            move |v| if v < min { min } else { v },
            move |id| Step::ClampMin { x: id, min },
        )
    }

    fn unary(
        &mut self,
        op: &'static str,
        x: NodeId,
        f: impl Fn(f64) -> f64,
        step: impl FnOnce(NodeId) -> Step,
    ) -> Result<NodeId, TensorError> {
        self.check(op, x)?;
        let v = &self.nodes[x.0].value;
        let data = v.data().iter().map(|&t| f(t)).collect();
        Ok(self.push(Tensor::new(v.shape().to_vec(), data)?, step(x)))
    }

    /// Sum of all elements, `[1]`.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.check("sum", x)?;
        let total = self.nodes[x.0].value.data().iter().sum();
        Ok(self.push(Tensor::scalar(total), Step::Sum(x)))
    }

    /// Mean of all elements, `[1]`.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.check("mean", x)?;
        let v = &self.nodes[x.0].value;
        if v.numel() == 0 {
            return Err(TensorError::BadShape {
                op: "mean",
                expected: "non-empty tensor".into(),
                shape: v.shape().to_vec(),
            });
        }
        let total: f64 = v.data().iter().sum();
        let mean = total / v.numel() as f64;
        Ok(self.push(Tensor::scalar(mean), Step::Mean(x)))
    }

    /// Row sums of a `[B, F]` tensor, `[B]`.
    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.check("sum_rows", x)?;
        let v = &self.nodes[x.0].value;
        if v.rank() != 2 {
            return Err(TensorError::BadShape {
                op: "sum_rows",
                expected: "rank-2 tensor".into(),
                shape: v.shape().to_vec(),
            });
        }
        let (rows, cols) = (v.dim(0), v.dim(1));
        let data = (0..rows)
            .map(|r| v.data()[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        Ok(self.push(Tensor::new(vec![rows], data)?, Step::SumRows(x)))
    }

    /// Concatenates two `[B, F1]` and `[B, F2]` tensors into `[B, F1 + F2]`.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.check("concat_cols", a)?;
        self.check("concat_cols", b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.rank() != 2 || vb.rank() != 2 || va.dim(0) != vb.dim(0) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (rows, ca, cb) = (va.dim(0), va.dim(1), vb.dim(1));
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(&va.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&vb.data()[r * cb..(r + 1) * cb]);
        }
        Ok(self.push(
            Tensor::new(vec![rows, ca + cb], data)?,
            Step::ConcatCols(a, b),
        ))
    }

    /// Extracts time step `t` from a `[B, L, C]` tensor as `[B, C]`.
    pub fn slice_step(&mut self, x: NodeId, t: usize) -> Result<NodeId, TensorError> {
        self.check("slice_step", x)?;
        let v = &self.nodes[x.0].value;
        if v.rank() != 3 || t >= v.dim(1) {
            return Err(TensorError::BadShape {
                op: "slice_step",
                expected: format!("rank-3 tensor with second axis > {t}"),
                shape: v.shape().to_vec(),
            });
        }
        let (batch, len, ch) = (v.dim(0), v.dim(1), v.dim(2));
        let mut data = Vec::with_capacity(batch * ch);
        for b in 0..batch {
            let start = (b * len + t) * ch;
            data.extend_from_slice(&v.data()[start..start + ch]);
        }
        Ok(self.push(Tensor::new(vec![batch, ch], data)?, Step::SliceStep { x, t }))
    }

    /// Swaps the last two axes of a `[B, L, C]` tensor into `[B, C, L]`.
    pub fn transpose_12(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.check("transpose_12", x)?;
        let v = &self.nodes[x.0].value;
        if v.rank() != 3 {
            return Err(TensorError::BadShape {
                op: "transpose_12",
                expected: "rank-3 tensor".into(),
                shape: v.shape().to_vec(),
            });
        }
        let (batch, len, ch) = (v.dim(0), v.dim(1), v.dim(2));
        let src = v.data();
        let mut data = vec![0.0; src.len()];
        for b in 0..batch {
            for l in 0..len {
                for c in 0..ch {
                    data[(b * ch + c) * len + l] = src[(b * len + l) * ch + c];
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![batch, ch, len], data)?,
            Step::Transpose12(x),
        ))
    }

    /// Reinterprets the row-major data under a new shape of equal size.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        self.check("reshape", x)?;
        let v = &self.nodes[x.0].value;
        if shape.iter().product::<usize>() != v.numel() {
            return Err(TensorError::BadShape {
                op: "reshape",
                expected: format!("shape with {} elements", v.numel()),
                shape,
            });
        }
        let data = v.data().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Step::Reshape(x)))
    }

    /// Train-mode batch normalization over `[B, F]` without an affine
    /// transform: normalizes each feature by the batch statistics and reports
    /// them so the caller can update running statistics. Needs `B >= 2`.
    pub fn batchnorm_train(
        &mut self,
        x: NodeId,
        eps: f64,
    ) -> Result<(NodeId, BatchStats), TensorError> {
        self.check("batchnorm_train", x)?;
        let v = &self.nodes[x.0].value;
        if v.rank() != 2 || v.dim(0) < 2 {
            return Err(TensorError::BadShape {
                op: "batchnorm_train",
                expected: "rank-2 tensor with at least 2 rows".into(),
                shape: v.shape().to_vec(),
            });
        }
        let (batch, feat) = (v.dim(0), v.dim(1));
        let src = v.data();
        let mut mean = vec![0.0; feat];
        for row in src.chunks_exact(feat) {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= batch as f64;
        }
        let mut var = vec![0.0; feat];
        for row in src.chunks_exact(feat) {
            for ((s, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = x - m;
                *s += d * d;
            }
        }
        for s in var.iter_mut() {
            *s /= batch as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|&s| 1.0 / (s + eps).sqrt()).collect();
        let data: Vec<f64> = src
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - mean[i % feat]) * inv_std[i % feat])
            .collect();
        let id = self.push(
            Tensor::new(vec![batch, feat], data)?,
            Step::BatchNormTrain {
                x,
                inv_std,
            },
        );
        Ok((id, BatchStats { mean, var, batch }))
    }

    /// Eval-mode batch normalization using frozen running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: NodeId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        self.check("batchnorm_eval", x)?;
        let v = &self.nodes[x.0].value;
        if v.rank() != 2 || v.dim(1) != running_mean.len() || running_mean.len() != running_var.len()
        {
            return Err(TensorError::BadShape {
                op: "batchnorm_eval",
                expected: format!("rank-2 tensor with {} features", running_mean.len()),
                shape: v.shape().to_vec(),
            });
        }
        let feat = v.dim(1);
        let inv_std: Vec<f64> = running_var.iter().map(|&s| 1.0 / (s + eps).sqrt()).collect();
        let data: Vec<f64> = v
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - running_mean[i % feat]) * inv_std[i % feat])
            .collect();
        let id = self.push(
            Tensor::new(v.shape().to_vec(), data)?,
            Step::BatchNormEval { x, inv_std },
        );
        Ok(id)
    }

    /// Backpropagates from a scalar node, accumulating gradients into every
    /// node of the tape. Visits each node exactly once.
    pub fn backward(&mut self, root: NodeId) {
        assert_eq!(
            self.nodes[root.0].value.numel(),
            1,
            "backward starts from a scalar node"
        );
        for g in self.grads.iter_mut() {
            g.fill(0.0);
        }
        self.grads[root.0][0] = 1.0;

        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=root.0).rev() {
            let g = std::mem::take(&mut grads[i]);
            let node = &nodes[i];
            match &node.step {
                Step::Leaf => {}
                Step::Add(a, b) => {
                    axpy(&mut grads[a.0], &g, 1.0);
                    axpy(&mut grads[b.0], &g, 1.0);
                }
                Step::Sub(a, b) => {
                    axpy(&mut grads[a.0], &g, 1.0);
                    axpy(&mut grads[b.0], &g, -1.0);
                }
                Step::Mul(a, b) => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    for (k, &gk) in g.iter().enumerate() {
                        grads[a.0][k] += gk * vb[k];
                        grads[b.0][k] += gk * va[k];
                    }
                }
                Step::Scale(x, c) => {
                    axpy(&mut grads[x.0], &g, *c);
                }
                Step::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (rows, inner, cols) = (va.dim(0), va.dim(1), vb.dim(1));
                    let (da, db) = (va.data(), vb.data());
                    for r in 0..rows {
                        let g_row = &g[r * cols..(r + 1) * cols];
                        for i2 in 0..inner {
                            let b_row = &db[i2 * cols..(i2 + 1) * cols];
                            let mut acc = 0.0;
                            for (gv, bv) in g_row.iter().zip(b_row) {
                                acc += gv * bv;
                            }
                            grads[a.0][r * inner + i2] += acc;
                        }
                    }
                    for r in 0..rows {
                        let g_row = &g[r * cols..(r + 1) * cols];
                        for i2 in 0..inner {
                            let av = da[r * inner + i2];
                            if av == 0.0 {
                                continue;
                            }
                            let gb_row = &mut grads[b.0][i2 * cols..(i2 + 1) * cols];
                            for (o, gv) in gb_row.iter_mut().zip(g_row) {
                                *o += av * gv;
                            }
                        }
                    }
                }
                Step::BiasRow(x, bias) => {
                    let cols = nodes[bias.0].value.numel();
                    axpy(&mut grads[x.0], &g, 1.0);
                    for (k, &gk) in g.iter().enumerate() {
                        grads[bias.0][k % cols] += gk;
                    }
                }
                Step::Conv1d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let (vx, vw) = (&nodes[x.0].value, &nodes[w.0].value);
                    let (batch, cin, len) = (vx.dim(0), vx.dim(1), vx.dim(2));
                    let (cout, kernel) = (vw.dim(0), vw.dim(2));
                    let out_len = node.value.dim(2);
                    let (dx, dw) = (vx.data(), vw.data());
                    for bi in 0..batch {
                        for co in 0..cout {
                            let g_row = &g[(bi * cout + co) * out_len..(bi * cout + co + 1) * out_len];
                            grads[b.0][co] += g_row.iter().sum::<f64>();
                            for ci in 0..cin {
                                let x_row = &dx[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                                for k in 0..kernel {
                                    let (t_lo, t_hi) =
                                        conv_t_range(len, kernel, *stride, *pad, k, out_len);
                                    let wv = dw[(co * cin + ci) * kernel + k];
                                    let mut wgrad = 0.0;
                                    {
                                        let gx_row = &mut grads[x.0]
                                            [(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                                        for t in t_lo..t_hi {
                                            let xi = t * stride + k - pad;
                                            gx_row[xi] += g_row[t] * wv;
                                            wgrad += g_row[t] * x_row[xi];
                                        }
                                    }
                                    grads[w.0][(co * cin + ci) * kernel + k] += wgrad;
                                }
                            }
                        }
                    }
                }
                Step::AvgPool1d { x, k } => {
                    let len = nodes[x.0].value.dim(2);
                    let out_len = len / k;
                    let inv = 1.0 / *k as f64;
                    let gx = &mut grads[x.0];
                    for (row, g_row) in g.chunks_exact(out_len).enumerate() {
                        let gx_row = &mut gx[row * len..(row + 1) * len];
                        for (t, &gv) in g_row.iter().enumerate() {
                            for slot in &mut gx_row[t * k..(t + 1) * k] {
                                *slot += gv * inv;
                            }
                        }
                    }
                }
                Step::Relu(x) => {
                    let vx = nodes[x.0].value.data();
                    for (k, &gk) in g.iter().enumerate() {
                        if vx[k] > 0.0 {
                            grads[x.0][k] += gk;
                        }
                    }
                }
                Step::Tanh(x) => {
                    let y = node.value.data();
                    for (k, &gk) in g.iter().enumerate() {
                        grads[x.0][k] += gk * (1.0 - y[k] * y[k]);
                    }
                }
                Step::Sigmoid(x) => {
                    let y = node.value.data();
                    for (k, &gk) in g.iter().enumerate() {
                        grads[x.0][k] += gk * y[k] * (1.0 - y[k]);
                    }
                }
                Step::Abs(x) => {
                    let vx = nodes[x.0].value.data();
                    for (k, &gk) in g.iter().enumerate() {
                        grads[x.0][k] += gk * sign_or_zero(vx[k]);
                    }
                }
                Step::Square(x) => {
                    let vx = nodes[x.0].value.data();
                    for (k, &gk) in g.iter().enumerate() {
                        grads[x.0][k] += 2.0 * vx[k] * gk;
                    }
                }
                Step::Sqrt(x) => {
                    let y = node.value.data();
                    for (k, &gk) in g.iter().enumerate() {
                        if y[k] != 0.0 {
                            grads[x.0][k] += gk / (2.0 * y[k]);
                        }
                    }
                }
                Step::Ln(x) => {
                    let vx = nodes[x.0].value.data();
                    for (k, &gk) in g.iter().enumerate() {
                        grads[x.0][k] += gk / vx[k];
                    }
                }
                Step::ClampMin { x, min } => {
                    let vx = nodes[x.0].value.data();
                    for (k, &gk) in g.iter().enumerate() {
                        if vx[k] > *min {
                            grads[x.0][k] += gk;
                        }
                    }
                }
                Step::Sum(x) => {
                    axpy_scalar(&mut grads[x.0], g[0]);
                }
                Step::Mean(x) => {
                    let n = nodes[x.0].value.numel() as f64;
                    axpy_scalar(&mut grads[x.0], g[0] / n);
                }
                Step::SumRows(x) => {
                    let cols = nodes[x.0].value.dim(1);
                    for (r, &gr) in g.iter().enumerate() {
                        for slot in &mut grads[x.0][r * cols..(r + 1) * cols] {
                            *slot += gr;
                        }
                    }
                }
                Step::ConcatCols(a, b) => {
                    let (ca, cb) = (nodes[a.0].value.dim(1), nodes[b.0].value.dim(1));
                    let rows = nodes[a.0].value.dim(0);
                    for r in 0..rows {
                        let g_row = &g[r * (ca + cb)..(r + 1) * (ca + cb)];
                        for (k, &gv) in g_row[..ca].iter().enumerate() {
                            grads[a.0][r * ca + k] += gv;
                        }
                        for (k, &gv) in g_row[ca..].iter().enumerate() {
                            grads[b.0][r * cb + k] += gv;
                        }
                    }
                }
                Step::SliceStep { x, t } => {
                    let (len, ch) = (nodes[x.0].value.dim(1), nodes[x.0].value.dim(2));
                    for (b, g_row) in g.chunks_exact(ch).enumerate() {
                        let start = (b * len + t) * ch;
                        for (k, &gv) in g_row.iter().enumerate() {
                            grads[x.0][start + k] += gv;
                        }
                    }
                }
                Step::Transpose12(x) => {
                    let (batch, len, ch) = (
                        nodes[x.0].value.dim(0),
                        nodes[x.0].value.dim(1),
                        nodes[x.0].value.dim(2),
                    );
                    for b in 0..batch {
                        for l in 0..len {
                            for c in 0..ch {
                                grads[x.0][(b * len + l) * ch + c] += g[(b * ch + c) * len + l];
                            }
                        }
                    }
                }
                Step::Reshape(x) => {
                    axpy(&mut grads[x.0], &g, 1.0);
                }
                Step::BatchNormTrain { x, inv_std } => {
                    let y = node.value.data();
                    let (batch, feat) = (node.value.dim(0), node.value.dim(1));
                    let bn = batch as f64;
                    let mut g_mean = vec![0.0; feat];
                    let mut gy_mean = vec![0.0; feat];
                    for (k, &gk) in g.iter().enumerate() {
                        g_mean[k % feat] += gk;
                        gy_mean[k % feat] += gk * y[k];
                    }
                    for f in 0..feat {
                        g_mean[f] /= bn;
                        gy_mean[f] /= bn;
                    }
                    for (k, &gk) in g.iter().enumerate() {
                        let f = k % feat;
                        grads[x.0][k] += inv_std[f] * (gk - g_mean[f] - y[k] * gy_mean[f]);
                    }
                }
                Step::BatchNormEval { x, inv_std } => {
                    let feat = inv_std.len();
                    for (k, &gk) in g.iter().enumerate() {
                        grads[x.0][k] += gk * inv_std[k % feat];
                    }
                }
            }
            grads[i] = g;
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn axpy_scalar(dst: &mut [f64], v: f64) {
    for d in dst.iter_mut() {
        *d += v;
    }
}

fn sign_or_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Output positions `t` for which `t*stride + k - pad` indexes into the input.
fn conv_t_range(
    len: usize,
    _kernel: usize,
    stride: usize,
    pad: usize,
    k: usize,
    out_len: usize,
) -> (usize, usize) {
    let t_lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let t_hi = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (t_lo.min(t_hi), t_hi)
}

/// Maximum mixed relative/absolute disagreement between the analytic gradient
/// and central finite differences `(f(x+h) - f(x-h)) / 2h`, taken over the
/// checked entries: `|diff| / max(1e-8, |analytic| + |numeric|)`.
///
/// `entries_per_input` caps how many (evenly spaced) entries of each input are
/// perturbed; `None` checks all of them.
pub fn grad_check_multi<F>(
    mut f: F,
    inputs: &[Tensor],
    h: f64,
    entries_per_input: Option<usize>,
) -> Result<f64, TensorError>
where
    F: FnMut(&mut Tape, &[NodeId]) -> Result<NodeId, TensorError>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &ids)?;
    tape.backward(out);
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| tape.grad(id).to_vec()).collect();

    let eval = |f: &mut F, inputs: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &ids)?;
        Ok(tape.value(out).item())
    };

    let mut worst: f64 = 0.0;
    let mut perturbed = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let numel = input.numel();
        let picked: Vec<usize> = match entries_per_input {
            Some(cap) if cap < numel => {
                let stride = numel as f64 / cap as f64;
                (0..cap).map(|j| (j as f64 * stride) as usize).collect()
            }
            _ => (0..numel).collect(),
        };
        for k in picked {
            let orig = perturbed[i].data()[k];
            perturbed[i].data_mut()[k] = orig + h;
            let up = eval(&mut f, &perturbed)?;
            perturbed[i].data_mut()[k] = orig - h;
            let down = eval(&mut f, &perturbed)?;
            perturbed[i].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let ana = analytic[i][k];
            let err = (numeric - ana).abs() / (1e-8f64).max(ana.abs() + numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Gradient check for a scalar function of a single tensor.
pub fn grad_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64, TensorError>
where
    F: FnMut(&mut Tape, NodeId) -> Result<NodeId, TensorError>,
{
    grad_check_multi(|tape, ids| f(tape, ids[0]), std::slice::from_ref(x), h, None)
}

impl Tape {
    /// Hash of which smooth piece every kink operation (relu, abs, clamp,
    /// sqrt-at-zero) is on. Two evaluations with equal fingerprints saw the
    /// same piecewise region, so central differences across them are valid.
    pub fn kink_fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |bit: bool| {
            hash ^= u64::from(bit) + 0x9e37_79b9;
            hash = hash.wrapping_mul(0x100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.step {
                Step::Relu(x) | Step::Abs(x) => {
                    for &v in self.nodes[x.0].value.data() {
                        mix(v > 0.0);
                        mix(v < 0.0);
                    }
                }
                Step::ClampMin { x, min } => {
                    for &v in self.nodes[x.0].value.data() {
                        mix(v > *min);
                    }
                }
                Step::Sqrt(x) => {
                    for &v in self.nodes[x.0].value.data() {
                        mix(v > 0.0);
                    }
                }
                _ => {}
            }
        }
        hash
    }
}

/// Outcome of a guarded gradient check.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    /// Worst disagreement over the checked entries (same measure as
    /// [`grad_check_multi`]).
    pub worst: f64,
    pub checked: usize,
    /// Entries abandoned because every tried step size crossed a kink.
    pub skipped_kinks: usize,
    /// Entries where both gradients vanished below the absolute floor.
    pub vanished: usize,
}

/// Gradient check for piecewise-smooth composites (relu networks).
///
/// Kinks are excluded by perturbation: when the `+h`/`-h` evaluations land on
/// different smooth pieces (detected via [`Tape::kink_fingerprint`]), the step
/// shrinks by 8x, a few times, until both sides agree; entries that stay on a
/// kink are skipped and counted. An entry whose first kink-free estimate still
/// disagrees keeps shrinking the step and reports its best-converged estimate
/// (a wrong backward rule cannot be hidden this way: the analytic side is
/// fixed and the estimates converge to the true derivative). Entries where
/// analytic and numeric gradients both vanish below `zero_atol` are counted
/// as agreeing: a gradient exactly nullified by batch normalization cannot be
/// resolved by finite differences.
pub fn grad_check_guarded<F>(
    mut f: F,
    inputs: &[Tensor],
    h: f64,
    entries_per_input: Option<usize>,
    zero_atol: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&mut Tape, &[NodeId]) -> Result<NodeId, TensorError>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &ids)?;
    tape.backward(out);
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| tape.grad(id).to_vec()).collect();

    let eval = |f: &mut F, inputs: &[Tensor]| -> Result<(f64, u64), TensorError> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &ids)?;
        Ok((tape.value(out).item(), tape.kink_fingerprint()))
    };

    const CONVERGED: f64 = 1e-5;
    let mut report = GradCheckReport {
        worst: 0.0,
        checked: 0,
        skipped_kinks: 0,
        vanished: 0,
    };
    let mut perturbed = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let numel = input.numel();
        let picked: Vec<usize> = match entries_per_input {
            Some(cap) if cap < numel => {
                let stride = numel as f64 / cap as f64;
                (0..cap).map(|j| (j as f64 * stride) as usize).collect()
            }
            _ => (0..numel).collect(),
        };
        for k in picked {
            let orig = perturbed[i].data()[k];
            let ana = analytic[i][k];
            let mut best: Option<f64> = None;
            let mut agreed_zero = false;
            let mut step = h;
            for _ in 0..4 {
                perturbed[i].data_mut()[k] = orig + step;
                let (up, fp_up) = eval(&mut f, &perturbed)?;
                perturbed[i].data_mut()[k] = orig - step;
                let (down, fp_down) = eval(&mut f, &perturbed)?;
                perturbed[i].data_mut()[k] = orig;
                let this_step = step;
                step /= 8.0;
                if fp_up != fp_down {
                    continue;
                }
                let numeric = (up - down) / (2.0 * this_step);
                if ana.abs() < zero_atol && numeric.abs() < zero_atol {
                    agreed_zero = true;
                    break;
                }
                let err = (numeric - ana).abs() / (1e-8f64).max(ana.abs() + numeric.abs());
                best = Some(best.map_or(err, |b: f64| b.min(err)));
                if err < CONVERGED {
                    break;
                }
            }
            if agreed_zero {
                report.vanished += 1;
            } else if let Some(err) = best {
                report.worst = report.worst.max(err);
                report.checked += 1;
            } else {
                report.skipped_kinks += 1;
            }
        }
    }
    Ok(report)
}
