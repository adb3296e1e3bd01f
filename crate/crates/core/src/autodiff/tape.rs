use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

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
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRowBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu {
        input: Var,
        /// `tanh` terms kept for the backward pass; empty without grad.
        tanh: Vec<f64>,
    },
    SoftmaxRows(Var),
    SoftmaxCols(Var),
    LayerNormRows {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
        width: usize,
    },
    Sum(Var),
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols {
        input: Var,
        start: usize,
    },
    SliceRows {
        input: Var,
        start: usize,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        lengths: Vec<usize>,
        heads: usize,
        /// Softmax rows per (sequence, head), concatenated.
        probs: Vec<f64>,
        /// Dropout multipliers matching `probs`; empty when dropout is off.
        mask: Vec<f64>,
    },
}

struct Node<'a> {
    rows: usize,
    cols: usize,
    value: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run recording of a forward computation.
///
/// Values of frozen tensors are borrowed rather than copied, so a tape is
/// tied to the lifetime of the weights it reads. Nodes are appended in
/// evaluation order, which makes the node list topologically sorted.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    rng: ChaCha8Rng,
}

/// Gradients of a scalar with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a leaf, `None` if it does not require grad or is unreachable.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `var` into `tensor`'s gradient slot.
    ///
    /// Leaves unreachable from the loss contribute zeros so every trainable
    /// tensor ends up with a populated slot.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor) {
        match self.get(var) {
            Some(g) => tensor.accumulate_grad(g),
            None => tensor.accumulate_grad(&vec![0.0; tensor.len()]),
        }
    }
}

impl<'a> Tape<'a> {
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Seed for an independent child stream.
    pub fn split_seed(&mut self) -> u64 {
        self.rng.gen()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Cow<'a, [f64]>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'a> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "scalar() on non-scalar node");
        n.value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::matrix(n.rows, n.cols, n.value.to_vec()).expect("node shape is consistent")
    }

    /// Leaf borrowing `tensor`; differentiable iff the tensor requires grad.
    pub fn leaf(&mut self, tensor: &'a Tensor) -> Var {
        let (r, c) = tensor.dims();
        self.push(r, c, Cow::Borrowed(tensor.data()), Op::Leaf, tensor.requires_grad())
    }

    /// Differentiable leaf regardless of the tensor's own flag.
    pub fn param(&mut self, tensor: &'a Tensor) -> Var {
        let (r, c) = tensor.dims();
        self.push(r, c, Cow::Borrowed(tensor.data()), Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, tensor: &'a Tensor) -> Var {
        let (r, c) = tensor.dims();
        self.push(r, c, Cow::Borrowed(tensor.data()), Op::Leaf, false)
    }

    pub fn constant_owned(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(rows * cols, data.len());
        self.push(rows, cols, Cow::Owned(data), Op::Leaf, false)
    }

    pub fn param_owned(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(rows * cols, data.len());
        self.push(rows, cols, Cow::Owned(data), Op::Leaf, true)
    }

    fn shape_vec(&self, v: Var) -> Vec<usize> {
        let (r, c) = self.dims(v);
        vec![r, c]
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            left: self.shape_vec(a),
            right: self.shape_vec(b),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.dims(a);
        let (q2, r) = self.dims(b);
        if q != q2 {
            return Err(self.dim_err("matmul", a, b));
        }
        let out = kernels::matmul_new(self.value(a), self.value(b), p, q, r);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(p, r, Cow::Owned(out), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = vec![0.0; r * c];
        kernels::transpose(self.value(a), &mut out, r, c);
        let rg = self.requires_grad(a);
        self.push(c, r, Cow::Owned(out), Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(self.dim_err("add", a, b));
        }
        let (r, c) = self.dims(a);
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(r, c, Cow::Owned(out), Op::Add(a, b), rg))
    }

    /// Adds a bias with `cols` entries to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.value(bias).len() != c {
            return Err(self.dim_err("add_row_broadcast", a, bias));
        }
        let b = self.value(bias);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(c) {
            row.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        let rg = self.requires_grad(a) || self.requires_grad(bias);
        Ok(self.push(r, c, Cow::Owned(out), Op::AddRowBroadcast(a, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(self.dim_err("mul", a, b));
        }
        let (r, c) = self.dims(a);
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(r, c, Cow::Owned(out), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.dims(a);
        let out: Vec<f64> = self.value(a).iter().map(|x| x * s).collect();
        let rg = self.requires_grad(a);
        self.push(r, c, Cow::Owned(out), Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out: Vec<f64> = self.value(a).iter().map(|x| x.max(0.0)).collect();
        let rg = self.requires_grad(a);
        self.push(r, c, Cow::Owned(out), Op::Relu(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let rg = self.requires_grad(a);
        let x = self.value(a);
        let (out, tanh) = if rg {
            let tanh: Vec<f64> = x.iter().map(|&v| kernels::gelu_tanh(v)).collect();
            let out = x.iter().zip(&tanh).map(|(&v, &t)| kernels::gelu_with(v, t)).collect();
            (out, tanh)
        } else {
            let out = x.iter().map(|&v| kernels::gelu_with(v, kernels::gelu_tanh(v))).collect();
            (out, Vec::new())
        };
        self.push(r, c, Cow::Owned(out), Op::Gelu { input: a, tanh }, rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(c) {
            kernels::softmax_in_place(row);
        }
        let rg = self.requires_grad(a);
        self.push(r, c, Cow::Owned(out), Op::SoftmaxRows(a), rg)
    }

    /// Column-wise softmax with max subtraction.
    pub fn softmax_columns(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let src = self.value(a);
        let mut out = vec![0.0; r * c];
        let mut col = vec![0.0; r];
        for j in 0..c {
            for i in 0..r {
                col[i] = src[i * c + j];
            }
            kernels::softmax_in_place(&mut col);
            for i in 0..r {
                out[i * c + j] = col[i];
            }
        }
        let rg = self.requires_grad(a);
        self.push(r, c, Cow::Owned(out), Op::SoftmaxCols(a), rg)
    }

    /// Normalizes every row to zero mean and unit variance, then applies
    /// `gain` and `bias` (each with `cols` entries).
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(gain).len() != c {
            return Err(self.dim_err("layer_norm(gain)", x, gain));
        }
        if self.value(bias).len() != c {
            return Err(self.dim_err("layer_norm(bias)", x, bias));
        }
        if eps <= 0.0 {
            return Err(Error::Parameter(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let src = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let mut normalized = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let n = (row[j] - mean) * is;
                normalized[i * c + j] = n;
                out[i * c + j] = n * g[j] + b[j];
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(gain) || self.requires_grad(bias);
        Ok(self.push(
            r,
            c,
            Cow::Owned(out),
            Op::LayerNormRows {
                input: x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Inverted dropout driven by the tape's RNG.
    ///
    /// With `training == false` or `p == 0` the input handle is returned
    /// unchanged, so evaluation graphs are bit-identical to dropout-free ones.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout probability must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let (r, c) = self.dims(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if self.rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let rg = self.requires_grad(x);
        Ok(self.push(r, c, Cow::Owned(out), Op::Dropout { input: x, mask }, rg))
    }

    /// `-log softmax(logits)[target]` over all entries of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let len = self.value(logits).len();
        self.cross_entropy_impl(logits, &[target], len)
    }

    /// Mean cross-entropy over the rows of `logits`, one target per row.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if r != targets.len() || r == 0 {
            return Err(Error::Dimension {
                op: "cross_entropy_rows",
                left: vec![r, c],
                right: vec![targets.len()],
            });
        }
        self.cross_entropy_impl(logits, targets, c)
    }

    fn cross_entropy_impl(&mut self, logits: Var, targets: &[usize], width: usize) -> Result<Var> {
        if let Some(&bad) = targets.iter().find(|&&t| t >= width) {
            return Err(Error::Index {
                what: "cross_entropy logits",
                index: bad,
                bound: width,
            });
        }
        let mut probs = self.value(logits).to_vec();
        let mut total = 0.0;
        for (row, &t) in probs.chunks_exact_mut(width).zip(targets) {
            let lse = kernels::log_sum_exp(row);
            total += (lse - row[t]).max(0.0);
            row.iter_mut().for_each(|p| *p = (*p - lse).exp());
        }
        let loss = total / targets.len() as f64;
        let rg = self.requires_grad(logits);
        Ok(self.push(
            1,
            1,
            Cow::Owned(vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                width,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.requires_grad(a);
        self.push(1, 1, Cow::Owned(vec![s]), Op::Sum(a), rg)
    }

    /// Average over rows, giving `1 x cols`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = vec![0.0; c];
        for row in self.value(a).chunks_exact(c) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        let inv = 1.0 / r as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.requires_grad(a);
        self.push(1, c, Cow::Owned(out), Op::MeanRows(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = match parts.first() {
            Some(&p) => self.dims(p).1,
            None => return Err(Error::Parameter("concat_rows of nothing".into())),
        };
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.dims(p);
            if pc != c {
                return Err(self.dim_err("concat_rows", parts[0], p));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(rows, c, Cow::Owned(out), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = match parts.first() {
            Some(&p) => self.dims(p).0,
            None => return Err(Error::Parameter("concat_cols of nothing".into())),
        };
        for &p in parts {
            if self.dims(p).0 != r {
                return Err(self.dim_err("concat_cols", parts[0], p));
            }
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = vec![0.0; r * total];
        let mut offset = 0;
        for &p in parts {
            let pc = self.dims(p).1;
            let src = self.value(p);
            for i in 0..r {
                out[i * total + offset..i * total + offset + pc].copy_from_slice(&src[i * pc..(i + 1) * pc]);
            }
            offset += pc;
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(r, total, Cow::Owned(out), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > c {
            return Err(Error::Index {
                what: "slice_cols",
                index: start + len,
                bound: c,
            });
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.requires_grad(a);
        Ok(self.push(r, len, Cow::Owned(out), Op::SliceCols { input: a, start }, rg))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > r {
            return Err(Error::Index {
                what: "slice_rows",
                index: start + len,
                bound: r,
            });
        }
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        let rg = self.requires_grad(a);
        Ok(self.push(len, c, Cow::Owned(out), Op::SliceRows { input: a, start }, rg))
    }

    /// Rows of `table` selected by `ids`, in order.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table);
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::Index {
                    what: "gather_rows table",
                    index: id,
                    bound: r,
                });
            }
            out.extend_from_slice(&src[id * c..(id + 1) * c]);
        }
        let rg = self.requires_grad(table);
        Ok(self.push(
            ids.len(),
            c,
            Cow::Owned(out),
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Scaled dot-product self-attention with `heads` heads over stacked
    /// sequences of the given lengths; positions attend only within their
    /// own sequence. `q`, `k`, `v` are `sum(lengths) x e`. Dropout applies
    /// to the attention weights.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        lengths: &[usize],
        heads: usize,
        dropout_p: f64,
        training: bool,
    ) -> Result<Var> {
        let (rows, e) = self.dims(q);
        if self.dims(k) != (rows, e) || self.dims(v) != (rows, e) {
            return Err(self.dim_err("attention", q, if self.dims(k) != (rows, e) { k } else { v }));
        }
        if heads == 0 || e % heads != 0 {
            return Err(Error::Parameter(format!("{heads} heads do not divide width {e}")));
        }
        if lengths.iter().sum::<usize>() != rows {
            return Err(Error::Parameter(format!(
                "sequence lengths sum to {} but inputs have {rows} rows",
                lengths.iter().sum::<usize>()
            )));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::Parameter(format!(
                "dropout probability must be in [0, 1), got {dropout_p}"
            )));
        }
        let d = e / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let prob_len: usize = lengths.iter().map(|t| t * t).sum::<usize>() * heads;
        let mut probs = Vec::with_capacity(prob_len);
        let mut out = vec![0.0; rows * e];
        let (qv, kv) = (self.value(q), self.value(k));
        let mut offset = 0;
        for &t in lengths {
            for h in 0..heads {
                let col = h * d;
                for i in 0..t {
                    let qi = &qv[(offset + i) * e + col..(offset + i) * e + col + d];
                    let start = probs.len();
                    for j in 0..t {
                        let kj = &kv[(offset + j) * e + col..(offset + j) * e + col + d];
                        probs.push(scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>());
                    }
                    kernels::softmax_in_place(&mut probs[start..]);
                }
            }
            offset += t;
        }
        let mask: Vec<f64> = if training && dropout_p > 0.0 {
            let keep = 1.0 / (1.0 - dropout_p);
            (0..prob_len)
                .map(|_| if self.rng.gen::<f64>() < dropout_p { 0.0 } else { keep })
                .collect()
        } else {
            Vec::new()
        };
        let (vv, mut block) = (self.value(v), 0);
        offset = 0;
        for &t in lengths {
            for h in 0..heads {
                let col = h * d;
                for i in 0..t {
                    let out_row = &mut out[(offset + i) * e + col..(offset + i) * e + col + d];
                    for j in 0..t {
                        let idx = block + i * t + j;
                        let w = if mask.is_empty() { probs[idx] } else { probs[idx] * mask[idx] };
                        let vj = &vv[(offset + j) * e + col..(offset + j) * e + col + d];
                        out_row.iter_mut().zip(vj).for_each(|(o, x)| *o += w * x);
                    }
                }
                block += t * t;
            }
            offset += t;
        }
        let rg = self.requires_grad(q) || self.requires_grad(k) || self.requires_grad(v);
        Ok(self.push(
            rows,
            e,
            Cow::Owned(out),
            Op::Attention {
                q,
                k,
                v,
                lengths: lengths.to_vec(),
                heads,
                probs,
                mask,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (r, c) = self.dims(loss);
        if r * c != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got {r}x{c}")));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.requires_grad(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<'a>, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (p, q) = self.dims(*a);
                let r = self.dims(*b).1;
                if self.wants(*a) {
                    let g = slot(grads, *a, p * q);
                    kernels::matmul_nt_acc(up, self.value(*b), g, p, r, q);
                }
                if self.wants(*b) {
                    let g = slot(grads, *b, q * r);
                    kernels::matmul_tn_acc(self.value(*a), up, g, p, q, r);
                }
            }
            Op::Transpose(a) => {
                let g = slot(grads, *a, rows * cols);
                // node is rows x cols, input is cols x rows
                for i in 0..rows {
                    for j in 0..cols {
                        g[j * rows + i] += up[i * cols + j];
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        add_into(slot(grads, *v, up.len()), up);
                    }
                }
            }
            Op::AddRowBroadcast(a, bias) => {
                if self.wants(*a) {
                    add_into(slot(grads, *a, up.len()), up);
                }
                if self.wants(*bias) {
                    let g = slot(grads, *bias, cols);
                    for row in up.chunks_exact(cols) {
                        add_into(g, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b);
                    let g = slot(grads, *a, up.len());
                    for i in 0..up.len() {
                        g[i] += up[i] * bv[i];
                    }
                }
                if self.wants(*b) {
                    let av = self.value(*a);
                    let g = slot(grads, *b, up.len());
                    for i in 0..up.len() {
                        g[i] += up[i] * av[i];
                    }
                }
            }
            Op::Scale(a, s) => {
                let g = slot(grads, *a, up.len());
                g.iter_mut().zip(up).for_each(|(g, u)| *g += u * s);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let g = slot(grads, *a, up.len());
                for i in 0..up.len() {
                    if x[i] > 0.0 {
                        g[i] += up[i];
                    }
                }
            }
            Op::Gelu { input, tanh } => {
                let x = self.value(*input);
                let g = slot(grads, *input, up.len());
                for i in 0..up.len() {
                    g[i] += up[i] * kernels::gelu_grad_with(x[i], tanh[i]);
                }
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let g = slot(grads, *a, up.len());
                for i in 0..rows {
                    let yr = &y[i * cols..(i + 1) * cols];
                    let ur = &up[i * cols..(i + 1) * cols];
                    let dot: f64 = yr.iter().zip(ur).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        g[i * cols + j] += yr[j] * (ur[j] - dot);
                    }
                }
            }
            Op::SoftmaxCols(a) => {
                let y = &node.value;
                let g = slot(grads, *a, up.len());
                for j in 0..cols {
                    let dot: f64 = (0..rows).map(|i| y[i * cols + j] * up[i * cols + j]).sum();
                    for i in 0..rows {
                        let k = i * cols + j;
                        g[k] += y[k] * (up[k] - dot);
                    }
                }
            }
            Op::LayerNormRows {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let gv = self.value(*gain);
                if self.wants(*input) {
                    let g = slot(grads, *input, up.len());
                    let inv_c = 1.0 / cols as f64;
                    for i in 0..rows {
                        let n = &normalized[i * cols..(i + 1) * cols];
                        let u = &up[i * cols..(i + 1) * cols];
                        let mut mean_gy = 0.0;
                        let mut mean_gyn = 0.0;
                        for j in 0..cols {
                            let gy = u[j] * gv[j];
                            mean_gy += gy;
                            mean_gyn += gy * n[j];
                        }
                        mean_gy *= inv_c;
                        mean_gyn *= inv_c;
                        for j in 0..cols {
                            let gy = u[j] * gv[j];
                            g[i * cols + j] += inv_std[i] * (gy - mean_gy - n[j] * mean_gyn);
                        }
                    }
                }
                if self.wants(*gain) {
                    let g = slot(grads, *gain, cols);
                    for i in 0..rows {
                        for j in 0..cols {
                            g[j] += up[i * cols + j] * normalized[i * cols + j];
                        }
                    }
                }
                if self.wants(*bias) {
                    let g = slot(grads, *bias, cols);
                    for row in up.chunks_exact(cols) {
                        add_into(g, row);
                    }
                }
            }
            Op::Dropout { input, mask } => {
                let g = slot(grads, *input, up.len());
                for i in 0..up.len() {
                    g[i] += up[i] * mask[i];
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                width,
            } => {
                let g = slot(grads, *logits, probs.len());
                let u = up[0] / targets.len() as f64;
                for (r, &t) in targets.iter().enumerate() {
                    let base = r * width;
                    for i in 0..*width {
                        g[base + i] += u * probs[base + i];
                    }
                    g[base + t] -= u;
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let g = slot(grads, *a, n);
                g.iter_mut().for_each(|g| *g += up[0]);
            }
            Op::MeanRows(a) => {
                let (r, c) = self.dims(*a);
                let inv = 1.0 / r as f64;
                let g = slot(grads, *a, r * c);
                for row in g.chunks_exact_mut(c) {
                    row.iter_mut().zip(up).for_each(|(g, u)| *g += u * inv);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.wants(p) {
                        add_into(slot(grads, p, n), &up[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.dims(p).1;
                    if self.wants(p) {
                        let g = slot(grads, p, rows * pc);
                        for i in 0..rows {
                            add_into(
                                &mut g[i * pc..(i + 1) * pc],
                                &up[i * cols + offset..i * cols + offset + pc],
                            );
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceCols { input, start } => {
                let ic = self.dims(*input).1;
                let g = slot(grads, *input, rows * ic);
                for i in 0..rows {
                    add_into(
                        &mut g[i * ic + start..i * ic + start + cols],
                        &up[i * cols..(i + 1) * cols],
                    );
                }
            }
            Op::SliceRows { input, start } => {
                let n = self.value(*input).len();
                let g = slot(grads, *input, n);
                add_into(&mut g[start * cols..(start + rows) * cols], up);
            }
            Op::Attention {
                q,
                k,
                v,
                lengths,
                heads,
                probs,
                mask,
            } => {
                let e = cols;
                let d = e / heads;
                let scale = 1.0 / (d as f64).sqrt();
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut dq = vec![0.0; rows * e];
                let mut dk = vec![0.0; rows * e];
                let mut dv = vec![0.0; rows * e];
                let mut dp = Vec::new();
                let (mut offset, mut block) = (0, 0);
                for &t in lengths {
                    for h in 0..*heads {
                        let col = h * d;
                        let row = |i: usize| (offset + i) * e + col..(offset + i) * e + col + d;
                        dp.clear();
                        dp.resize(t * t, 0.0);
                        for i in 0..t {
                            let gi = &up[row(i)];
                            for j in 0..t {
                                let idx = block + i * t + j;
                                let m = if mask.is_empty() { 1.0 } else { mask[idx] };
                                let w = probs[idx] * m;
                                let vj = &vv[row(j)];
                                dp[i * t + j] = m * gi.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                                if w != 0.0 {
                                    dv[row(j)].iter_mut().zip(gi).for_each(|(o, g)| *o += w * g);
                                }
                            }
                        }
                        for i in 0..t {
                            let p_row = &probs[block + i * t..block + (i + 1) * t];
                            let dp_row = &dp[i * t..(i + 1) * t];
                            let inner: f64 = p_row.iter().zip(dp_row).map(|(a, b)| a * b).sum();
                            for j in 0..t {
                                let ds = scale * p_row[j] * (dp_row[j] - inner);
                                if ds == 0.0 {
                                    continue;
                                }
                                let (ri, rj) = (row(i), row(j));
                                for c in 0..d {
                                    dq[ri.start + c] += ds * kv[rj.start + c];
                                    dk[rj.start + c] += ds * qv[ri.start + c];
                                }
                            }
                        }
                        block += t * t;
                    }
                    offset += t;
                }
                for (var, g) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if self.wants(var) {
                        add_into(slot(grads, var, rows * e), &g);
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                let (tr, tc) = self.dims(*table);
                let g = slot(grads, *table, tr * tc);
                for (k, &id) in ids.iter().enumerate() {
                    add_into(&mut g[id * tc..(id + 1) * tc], &up[k * tc..(k + 1) * tc]);
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
