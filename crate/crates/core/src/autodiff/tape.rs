use super::gemm::{gemm, MatView};
use super::params::ParamId;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layer-norm epsilon. Kept tiny so normalized rows have unit variance to
/// within 1e-8 for any row variance above 1e-2.
pub const LAYER_NORM_EPS: f64 = 1e-10;

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    GatherElems(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "subtract",
            Op::Mul(..) => "multiply",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::GatherRows(..) => "gather_rows",
            Op::GatherElems(..) => "gather_elems",
            Op::ConcatRows(..) => "concat_rows",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::Attention { .. } => "attention",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order for one reverse pass.
///
/// Forward values are computed eagerly. [`Tape::backward`] may run once;
/// afterwards the tape must be [`reset`](Tape::reset) before reuse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by one reverse pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Parameter leaves that received a gradient, in recording order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.get(v).map(|g| (id, g)))
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (y, dy)
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

    /// Drops all recorded nodes so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        let name = op.name();
        value.check_finite(name)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf { param: None }, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Records a parameter leaf so its gradient can be routed back to the store.
    pub fn param(&mut self, id: ParamId, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf { param: Some(id) }, requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let va = self.value(a);
        let out = Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| x * s).collect())?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Adds a length-`cols` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let c = vx.cols();
        if vb.len() != c {
            return Err(Error::shape(
                "add_row",
                format!("bias of {} values for rows of {c}", vb.len()),
            ));
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            for (o, b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        self.push(out, Op::AddRow(x, bias), rg)
    }

    fn as_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.value(v);
        if t.shape().len() != 2 {
            return Err(Error::shape(op, format!("expected a matrix, got {:?}", t.shape())));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.as_matrix("matmul", a)?;
        let (k2, n) = self.as_matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner extents differ: {m}x{k} · {k2}x{n}"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            self.value(a).data(),
            MatView::dense(m, k),
            self.value(b).data(),
            MatView::dense(k, n),
            0.0,
            &mut out,
            MatView::dense(m, n),
        );
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.as_matrix("transpose", a)?;
        let va = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = va[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Reshape(a), rg)
    }

    /// Selects rows (possibly repeated) of the matrix view of `a`.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("row {bad} out of {r}")));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(&va.data()[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[a]);
        self.push(
            Tensor::new(vec![rows.len(), c], out)?,
            Op::GatherRows(a, rows.to_vec()),
            rg,
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..end).collect();
        self.gather_rows(a, &idx)
    }

    /// Flat element gather: `out[i] = a[index[i]]`, reshaped to `shape`.
    pub fn gather_elems(&mut self, a: Var, index: &[usize], shape: &[usize]) -> Result<Var> {
        let va = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= va.len()) {
            return Err(Error::shape(
                "gather_elems",
                format!("element {bad} out of {}", va.len()),
            ));
        }
        let out = Tensor::new(shape.to_vec(), index.iter().map(|&i| va.data()[i]).collect())?;
        let rg = self.rg(&[a]);
        self.push(out, Op::GatherElems(a, index.to_vec()), rg)
    }

    /// Stacks matrices with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_rows", "no inputs"));
        };
        let c = self.value(first).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let vp = self.value(p);
            if vp.cols() != c {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column extents {c} and {}", vp.cols()),
                ));
            }
            rows += vp.rows();
            out.extend_from_slice(vp.data());
        }
        let rg = self.rg(parts);
        self.push(
            Tensor::new(vec![rows, c], out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = va.data().iter().sum::<f64>() / va.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let c = va.cols();
        if c == 0 {
            return Err(Error::shape("softmax", "empty last axis"));
        }
        let mut out = va.data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let out = Tensor::new(va.shape().to_vec(), out)?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Layer normalization over the last axis with learnable scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let vx = self.value(x);
        let c = vx.cols();
        if c == 0 {
            return Err(Error::shape("layer_norm", "last axis extent must be at least 1"));
        }
        let (vg, vb) = (self.value(gamma), self.value(beta));
        if vg.len() != c || vb.len() != c {
            return Err(Error::shape(
                "layer_norm",
                format!("scale/shift of {}/{} values for rows of {c}", vg.len(), vb.len()),
            ));
        }
        let rows = vx.rows();
        let mut out = vec![0.0; vx.len()];
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for (row, o) in vx.data().chunks(c).zip(out.chunks_mut(c)) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..c {
                o[j] = (row[j] - mean) * rstd * vg.data()[j] + vb.data()[j];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean: means,
                rstd: rstds,
            },
            rg,
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let out = Tensor::new(
            va.shape().to_vec(),
            va.data().iter().map(|&x| gelu_parts(x).0).collect(),
        )?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q`, `k`, `v` are `[batch * seq, dim]`; sequences are independent and
    /// heads split `dim` into contiguous `dim / heads` column blocks.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    ) -> Result<Var> {
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        let (rows, dim) = self.as_matrix("attention", q)?;
        if rows != batch * seq || heads == 0 || dim % heads != 0 {
            return Err(Error::shape(
                "attention",
                format!("{rows}x{dim} input for batch {batch}, seq {seq}, heads {heads}"),
            ));
        }
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (vq, vk, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; rows * dim];
        for b in 0..batch {
            for h in 0..heads {
                let head = view(b, h, seq, dim, dh);
                let p_off = (b * heads + h) * seq * seq;
                let pv = MatView {
                    offset: p_off,
                    ..MatView::dense(seq, seq)
                };
                gemm(vq, head, vk, head.t(), 0.0, &mut probs, pv);
                for row in probs[p_off..p_off + seq * seq].chunks_mut(seq) {
                    row.iter_mut().for_each(|x| *x *= scale);
                    softmax_in_place(row);
                }
                gemm(&probs, pv, vv, head, 0.0, &mut out, head);
            }
        }
        let out = Tensor::new(vec![rows, dim], out)?;
        let rg = self.rg(&[q, k, v]);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            },
            rg,
        )
    }

    /// Reverse pass from a scalar `loss`. The tape is consumed: a second call
    /// without [`reset`](Tape::reset) fails.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Backward("tape already consumed; reset before reuse".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(id) } if n.requires_grad => Some((id, Var(i))),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for j in 0..g.len() {
                        ga[j] += g[j] * vb[j];
                    }
                });
                acc(*b, &mut |gb| {
                    for j in 0..g.len() {
                        gb[j] += g[j] * va[j];
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += s * x)),
            Op::AddRow(x, bias) => {
                acc(*x, &mut |gx| add_into(gx, g));
                let c = self.value(*bias).len();
                acc(*bias, &mut |gb| {
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                let gv = MatView::dense(m, n);
                acc(*a, &mut |ga| {
                    gemm(g, gv, vb.data(), MatView::dense(k, n).t(), 1.0, ga, MatView::dense(m, k))
                });
                acc(*b, &mut |gb| {
                    gemm(va.data(), MatView::dense(m, k).t(), g, gv, 1.0, gb, MatView::dense(k, n))
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::GatherRows(a, rows) => {
                let c = self.value(*a).cols();
                acc(*a, &mut |ga| {
                    for (r, &src) in rows.iter().enumerate() {
                        add_into(&mut ga[src * c..(src + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::GatherElems(a, index) => acc(*a, &mut |ga| {
                for (j, &src) in index.iter().enumerate() {
                    ga[src] += g[j];
                }
            }),
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    acc(*p, &mut |gp| add_into(gp, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                acc(*a, &mut |ga| {
                    for ((gr, yr), gar) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gar[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let vx = self.value(*x).data();
                let vg = self.value(*gamma).data();
                let c = vg.len();
                let xhat = |r: usize, j: usize| (vx[r * c + j] - mean[r]) * rstd[r];
                acc(*gamma, &mut |gg| {
                    for (r, gr) in g.chunks(c).enumerate() {
                        for j in 0..c {
                            gg[j] += gr[j] * xhat(r, j);
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for gr in g.chunks(c) {
                        add_into(gb, gr);
                    }
                });
                acc(*x, &mut |gx| {
                    let mut dxhat = vec![0.0; c];
                    for (r, gr) in g.chunks(c).enumerate() {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            dxhat[j] = gr[j] * vg[j];
                            m1 += dxhat[j];
                            m2 += dxhat[j] * xhat(r, j);
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            gx[r * c + j] += rstd[r] * (dxhat[j] - m1 - xhat(r, j) * m2);
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let va = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for j in 0..g.len() {
                        ga[j] += g[j] * gelu_parts(va[j]).1;
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            } => {
                let (batch, seq, heads) = (*batch, *seq, *heads);
                let dim = node.value.cols();
                let dh = dim / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (vq, vk, vv) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                // dS for every (batch, head), reused by the q and k gradients.
                let mut ds = vec![0.0; probs.len()];
                for b in 0..batch {
                    for h in 0..heads {
                        let head = view(b, h, seq, dim, dh);
                        let p_off = (b * heads + h) * seq * seq;
                        let pv = MatView {
                            offset: p_off,
                            ..MatView::dense(seq, seq)
                        };
                        // dP = dO · Vᵀ
                        gemm(g, head, vv, head.t(), 0.0, &mut ds, pv);
                        let p = &probs[p_off..p_off + seq * seq];
                        for (dr, pr) in ds[p_off..p_off + seq * seq].chunks_mut(seq).zip(p.chunks(seq)) {
                            let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                            for j in 0..seq {
                                dr[j] = pr[j] * (dr[j] - dot) * scale;
                            }
                        }
                    }
                }
                acc(*v, &mut |gv| {
                    for b in 0..batch {
                        for h in 0..heads {
                            let head = view(b, h, seq, dim, dh);
                            let pv = MatView {
                                offset: (b * heads + h) * seq * seq,
                                ..MatView::dense(seq, seq)
                            };
                            gemm(probs, pv.t(), g, head, 1.0, gv, head);
                        }
                    }
                });
                acc(*q, &mut |gq| {
                    for b in 0..batch {
                        for h in 0..heads {
                            let head = view(b, h, seq, dim, dh);
                            let pv = MatView {
                                offset: (b * heads + h) * seq * seq,
                                ..MatView::dense(seq, seq)
                            };
                            gemm(&ds, pv, vk, head, 1.0, gq, head);
                        }
                    }
                });
                acc(*k, &mut |gk| {
                    for b in 0..batch {
                        for h in 0..heads {
                            let head = view(b, h, seq, dim, dh);
                            let pv = MatView {
                                offset: (b * heads + h) * seq * seq,
                                ..MatView::dense(seq, seq)
                            };
                            gemm(&ds, pv.t(), vq, head, 1.0, gk, head);
                        }
                    }
                });
            }
        }
    }
}

fn view(b: usize, h: usize, seq: usize, dim: usize, dh: usize) -> MatView {
    MatView {
        offset: b * seq * dim + h * dh,
        rows: seq,
        cols: dh,
        row_stride: dim,
        col_stride: 1,
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(o, x)| *o += x);
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul_is_noop() {
        let mut tape = Tape::new();
        let eye = tape
            .constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }))
            .unwrap();
        let a = tape.constant(Tensor::from_fn(&[3, 5], |i| i as f64 * 0.7 - 3.0)).unwrap();
        let out = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(out), tape.value(a));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[3])).unwrap();
        let s = tape.softmax(a).unwrap();
        for &x in tape.value(s).data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_shape_error_names_extents() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[4, 2])).unwrap();
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("2x3") && err.contains("4x2"), "{err}");
    }

    #[test]
    fn linear_sum_gradient_is_input() {
        let mut tape = Tape::new();
        let x = t(&[4], &[1.5, -2.0, 0.25, 8.0]);
        let w = tape.leaf(t(&[4], &[0.3, 0.1, -0.7, 2.0]), true).unwrap();
        let xv = tape.constant(x.clone()).unwrap();
        let p = tape.mul(w, xv).unwrap();
        let loss = tape.sum(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), x.data());
        assert!(grads.get(xv).is_none());
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[2], &[3.0, -1.0]), true).unwrap();
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[6.0, -2.0]);
    }

    #[test]
    fn backward_requires_scalar_and_single_use() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[2], &[1.0, 2.0]), true).unwrap();
        assert!(matches!(tape.backward(w), Err(Error::Backward(_))));
        let loss = tape.sum(w).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Backward(_))));
        tape.reset();
        assert!(tape.is_empty());
    }

    #[test]
    fn non_finite_output_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1], &[f64::MAX])).unwrap();
        assert!(matches!(tape.scale(a, 10.0), Err(Error::NonFinite { op: "scale" })));
    }

    #[test]
    fn layer_norm_zero_variance_row_is_finite() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 4], 3.0)).unwrap();
        let g = tape.constant(Tensor::ones(&[4])).unwrap();
        let b = tape.constant(Tensor::zeros(&[4])).unwrap();
        let y = tape.layer_norm(x, g, b).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
    }
}
