use super::Tensor;
use crate::error::{Error, Result};

/// Logit added to masked entries before normalisation.
const MASK_LOGIT: f64 = -1e30;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv1d {
        x: Var,
        kernels: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Gather {
        table: Var,
        idx: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RelativeLogits {
        q: Var,
        table: Var,
        clip: usize,
    },
    MaxPoolRows {
        x: Var,
        argmax: Vec<usize>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of the forward computation.
///
/// Nodes are stored in execution order, which is also a topological order;
/// [`Tape::backward`] walks them in exact reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Usage(format!(
            "{op} expects a matrix, got shape {:?}",
            t.shape()
        ))),
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf => value.requires_grad,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients are accumulated into it iff `requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn param(&mut self, t: &Tensor) -> Var {
        let mut t = t.clone();
        t.requires_grad = true;
        t.grad = None;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims("matmul", ta)?;
        let (k2, n) = matrix_dims("matmul", tb)?;
        if k != k2 {
            return Err(dim_err("matmul", ta, tb));
        }
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims("matmul_nt", ta)?;
        let (n, k2) = matrix_dims("matmul_nt", tb)?;
        if k != k2 {
            return Err(dim_err("matmul_nt", ta, tb));
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ar, &bd[j * k..(j + 1) * k]);
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMulNt(a, b), &[a, b]))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a length-`c` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let c = tx.cols();
        if tb.numel() != c {
            return Err(dim_err("add_row", tx, tb));
        }
        let bd = tb.data();
        let data = tx
            .data()
            .chunks(c)
            .flat_map(|r| r.iter().zip(bd).map(|(v, b)| v + b))
            .collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(x, b), &[x, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * s).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(x, s), &[x])
    }

    /// Elementwise product with a constant of the same size (dropout, masks).
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        let tx = self.value(x);
        if c.len() != tx.numel() {
            return Err(Error::Dimension {
                op: "mul_const",
                lhs: tx.shape().to_vec(),
                rhs: vec![c.len()],
            });
        }
        let data = tx.data().iter().zip(&c).map(|(v, m)| v * m).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::MulConst(x, c), &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Relu(x), &[x])
    }

    /// Row-wise softmax over the last axis. `mask[i] == false` removes an
    /// entry; masked outputs are exactly zero.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(x);
        if let Some(m) = mask {
            if m.len() != tx.numel() {
                return Err(Error::Dimension {
                    op: "softmax_rows",
                    lhs: tx.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let c = tx.cols();
        let mut out = tx.data().to_vec();
        for (r, row) in out.chunks_mut(c).enumerate() {
            let keep = |j: usize| mask.is_none_or(|m| m[r * c + j]);
            if !(0..c).any(keep) {
                return Err(Error::Data(format!("softmax row {r} is fully masked")));
            }
            for (j, v) in row.iter_mut().enumerate() {
                if !keep(j) {
                    *v += MASK_LOGIT;
                }
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for (j, v) in row.iter_mut().enumerate() {
                *v = if keep(j) { *v / sum } else { 0.0 };
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(t, Op::Softmax(x), &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.cols();
        if tg.numel() != d {
            return Err(dim_err("layer_norm", tx, tg));
        }
        if tb.numel() != d {
            return Err(dim_err("layer_norm", tx, tb));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Same-padded cross-correlation along time.
    /// `x: T×D`, `kernels: C×kw×D` with odd `kw`; output `T×C`.
    pub fn conv1d(&mut self, x: Var, kernels: Var) -> Result<Var> {
        let (tx, tk) = (self.value(x), self.value(kernels));
        let (t_len, d) = matrix_dims("conv1d", tx)?;
        let (c, kw, kd) = match *tk.shape() {
            [c, kw, kd] => (c, kw, kd),
            _ => return Err(dim_err("conv1d", tx, tk)),
        };
        if kd != d {
            return Err(dim_err("conv1d", tx, tk));
        }
        if kw % 2 == 0 {
            return Err(Error::Config(format!("conv1d kernel width must be odd, got {kw}")));
        }
        let half = kw / 2;
        let (xd, kd) = (tx.data(), tk.data());
        let mut out = vec![0.0; t_len * c];
        for t in 0..t_len {
            for o in 0..kw {
                let Some(src) = (t + o).checked_sub(half).filter(|&s| s < t_len) else {
                    continue;
                };
                let xr = &xd[src * d..(src + 1) * d];
                for ch in 0..c {
                    let kr = &kd[(ch * kw + o) * d..(ch * kw + o + 1) * d];
                    out[t * c + ch] += dot(xr, kr);
                }
            }
        }
        let t = Tensor::new(vec![t_len, c], out)?;
        Ok(self.push(t, Op::Conv1d { x, kernels }, &[x, kernels]))
    }

    /// Mean negative log-likelihood of `labels` under row-softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (b, k) = matrix_dims("cross_entropy", tl)?;
        if labels.len() != b {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for r in 0..b {
            let row = tl.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..k {
                probs[r * k + j] = (row[j] - lse).exp();
            }
            loss += lse - row[labels[r]];
        }
        let t = Tensor::scalar(loss / b as f64);
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Row lookup: output row `r` is `table[idx[r]]`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = matrix_dims("gather_rows", tt)?;
        if idx.is_empty() {
            return Err(Error::Usage("gather_rows with no indices".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
            return Err(Error::Lookup(format!("row {bad} out of range for table of {v} rows")));
        }
        let data = idx.iter().flat_map(|&i| tt.row(i).iter().copied()).collect();
        let t = Tensor::new(vec![idx.len(), d], data)?;
        Ok(self.push(
            t,
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
            &[table],
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = matrix_dims("slice_cols", tx)?;
        if len == 0 || start + len > c {
            return Err(Error::Usage(format!(
                "column slice {start}..{} out of range for {c} columns",
                start + len
            )));
        }
        let data = (0..r)
            .flat_map(|i| tx.row(i)[start..start + len].iter().copied())
            .collect();
        let t = Tensor::new(vec![r, len], data)?;
        Ok(self.push(t, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Usage("concat_cols of nothing".into()))?;
        let (r, _) = matrix_dims("concat_cols", self.value(first))?;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = matrix_dims("concat_cols", self.value(p))?;
            if pr != r {
                return Err(dim_err("concat_cols", self.value(first), self.value(p)));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let t = Tensor::new(vec![r, total], data)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Usage("concat_rows of nothing".into()))?;
        let (_, c) = matrix_dims("concat_rows", self.value(first))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = matrix_dims("concat_rows", self.value(p))?;
            if pc != c {
                return Err(dim_err("concat_rows", self.value(first), self.value(p)));
            }
            data.extend_from_slice(self.value(p).data());
            rows += pr;
        }
        let t = Tensor::new(vec![rows, c], data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Key-side relative term: `out[i][j] = q_i · table[clamp(j - i, -clip, clip) + clip]`.
    pub fn relative_logits(&mut self, q: Var, table: Var, clip: usize) -> Result<Var> {
        let (tq, ta) = (self.value(q), self.value(table));
        let (t_len, dh) = matrix_dims("relative_logits", tq)?;
        let (rows, da) = matrix_dims("relative_logits", ta)?;
        if da != dh || rows != 2 * clip + 1 {
            return Err(dim_err("relative_logits", tq, ta));
        }
        let mut out = vec![0.0; t_len * t_len];
        for i in 0..t_len {
            for j in 0..t_len {
                let r = relative_bucket(i, j, clip);
                out[i * t_len + j] = dot(tq.row(i), ta.row(r));
            }
        }
        let t = Tensor::new(vec![t_len, t_len], out)?;
        Ok(self.push(t, Op::RelativeLogits { q, table, clip }, &[q, table]))
    }

    /// Column-wise max over the unmasked rows of `x: T×C`; output `1×C`.
    pub fn max_pool_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(x);
        let (t_len, c) = matrix_dims("max_pool_rows", tx)?;
        let keep = |i: usize| mask.is_none_or(|m| m[i]);
        if let Some(m) = mask {
            if m.len() != t_len {
                return Err(Error::Dimension {
                    op: "max_pool_rows",
                    lhs: tx.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        if !(0..t_len).any(keep) {
            return Err(Error::Data("max pool over fully masked sequence".into()));
        }
        let mut argmax = vec![0; c];
        let mut out = vec![f64::NEG_INFINITY; c];
        for i in (0..t_len).filter(|&i| keep(i)) {
            for ch in 0..c {
                let v = tx.at(i, ch);
                if v > out[ch] {
                    out[ch] = v;
                    argmax[ch] = i;
                }
            }
        }
        let t = Tensor::new(vec![1, c], out)?;
        Ok(self.push(t, Op::MaxPoolRows { x, argmax }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across
    /// calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let node = &self.nodes[id];
            let acc = |v: Var, delta: Vec<f64>, grads: &mut Vec<Option<Vec<f64>>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
                    slot => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let nn = tb.shape()[1];
                    let mut ga = vec![0.0; m * k];
                    let mut gb = vec![0.0; k * nn];
                    for i in 0..m {
                        let gr = &g[i * nn..(i + 1) * nn];
                        for p in 0..k {
                            let br = &tb.data()[p * nn..(p + 1) * nn];
                            ga[i * k + p] = dot(gr, br);
                            let av = ta.data()[i * k + p];
                            if av != 0.0 {
                                for (gbv, gv) in gb[p * nn..(p + 1) * nn].iter_mut().zip(gr) {
                                    *gbv += av * gv;
                                }
                            }
                        }
                    }
                    acc(*a, ga, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Op::MatMulNt(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let nn = tb.shape()[0];
                    let mut ga = vec![0.0; m * k];
                    let mut gb = vec![0.0; nn * k];
                    for i in 0..m {
                        for j in 0..nn {
                            let gv = g[i * nn + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                ga[i * k + p] += gv * tb.data()[j * k + p];
                                gb[j * k + p] += gv * ta.data()[i * k + p];
                            }
                        }
                    }
                    acc(*a, ga, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = g.iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                    let gb = g.iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                    acc(*a, ga, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Op::AddRow(x, b) => {
                    let c = self.value(*b).numel();
                    let mut gb = vec![0.0; c];
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    acc(*b, gb, &mut grads);
                    acc(*x, g, &mut grads);
                }
                Op::Scale(x, s) => {
                    let gx = g.iter().map(|v| v * s).collect();
                    acc(*x, gx, &mut grads);
                }
                Op::MulConst(x, c) => {
                    let gx = g.iter().zip(c).map(|(g, m)| g * m).collect();
                    acc(*x, gx, &mut grads);
                }
                Op::Relu(x) => {
                    let tx = self.value(*x);
                    let gx = g
                        .iter()
                        .zip(tx.data())
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    acc(*x, gx, &mut grads);
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let c = node.value.cols();
                    let mut gx = vec![0.0; y.len()];
                    for r in 0..y.len() / c {
                        let (yr, gr) = (&y[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                        let s = dot(yr, gr);
                        for j in 0..c {
                            gx[r * c + j] = yr[j] * (gr[j] - s);
                        }
                    }
                    acc(*x, gx, &mut grads);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let tg = self.value(*gain);
                    let d = tg.numel();
                    let rows = xhat.len() / d;
                    let mut gg = vec![0.0; d];
                    let mut gbias = vec![0.0; d];
                    let mut gx = vec![0.0; xhat.len()];
                    for r in 0..rows {
                        let (hr, gr) = (&xhat[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                        let mut sum_gh = 0.0;
                        let mut sum_gh_h = 0.0;
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                            gbias[j] += gr[j];
                            let gh = gr[j] * tg.data()[j];
                            sum_gh += gh;
                            sum_gh_h += gh * hr[j];
                        }
                        let scale = inv_std[r] / d as f64;
                        for j in 0..d {
                            let gh = gr[j] * tg.data()[j];
                            gx[r * d + j] = scale * (d as f64 * gh - sum_gh - hr[j] * sum_gh_h);
                        }
                    }
                    acc(*x, gx, &mut grads);
                    acc(*gain, gg, &mut grads);
                    acc(*bias, gbias, &mut grads);
                }
                Op::Conv1d { x, kernels } => {
                    let (tx, tk) = (self.value(*x), self.value(*kernels));
                    let (t_len, d) = (tx.shape()[0], tx.shape()[1]);
                    let (c, kw) = (tk.shape()[0], tk.shape()[1]);
                    let half = kw / 2;
                    let mut gx = vec![0.0; tx.numel()];
                    let mut gk = vec![0.0; tk.numel()];
                    for t in 0..t_len {
                        for o in 0..kw {
                            let Some(src) = (t + o).checked_sub(half).filter(|&s| s < t_len) else {
                                continue;
                            };
                            for ch in 0..c {
                                let gv = g[t * c + ch];
                                if gv == 0.0 {
                                    continue;
                                }
                                let kb = (ch * kw + o) * d;
                                for p in 0..d {
                                    gx[src * d + p] += gv * tk.data()[kb + p];
                                    gk[kb + p] += gv * tx.data()[src * d + p];
                                }
                            }
                        }
                    }
                    acc(*x, gx, &mut grads);
                    acc(*kernels, gk, &mut grads);
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let b = labels.len();
                    let k = probs.len() / b;
                    let mut gl = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        gl[r * k + l] -= 1.0;
                    }
                    let s = g[0] / b as f64;
                    gl.iter_mut().for_each(|v| *v *= s);
                    acc(*logits, gl, &mut grads);
                }
                Op::Gather { table, idx } => {
                    let tt = self.value(*table);
                    let d = tt.cols();
                    let mut gt = vec![0.0; tt.numel()];
                    for (r, &i) in idx.iter().enumerate() {
                        for p in 0..d {
                            gt[i * d + p] += g[r * d + p];
                        }
                    }
                    acc(*table, gt, &mut grads);
                }
                Op::SliceCols { x, start } => {
                    let tx = self.value(*x);
                    let c = tx.cols();
                    let len = node.value.cols();
                    let mut gx = vec![0.0; tx.numel()];
                    for (r, gr) in g.chunks(len).enumerate() {
                        gx[r * c + start..r * c + start + len].copy_from_slice(gr);
                    }
                    acc(*x, gx, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let gp = g
                            .chunks(total)
                            .flat_map(|row| row[off..off + pc].iter().copied())
                            .collect();
                        acc(p, gp, &mut grads);
                        off += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        acc(p, g[off..off + n].to_vec(), &mut grads);
                        off += n;
                    }
                }
                Op::RelativeLogits { q, table, clip } => {
                    let (tq, ta) = (self.value(*q), self.value(*table));
                    let (t_len, dh) = (tq.shape()[0], tq.shape()[1]);
                    let mut gq = vec![0.0; tq.numel()];
                    let mut ga = vec![0.0; ta.numel()];
                    for i in 0..t_len {
                        for j in 0..t_len {
                            let gv = g[i * t_len + j];
                            if gv == 0.0 {
                                continue;
                            }
                            let r = relative_bucket(i, j, *clip);
                            for p in 0..dh {
                                gq[i * dh + p] += gv * ta.data()[r * dh + p];
                                ga[r * dh + p] += gv * tq.data()[i * dh + p];
                            }
                        }
                    }
                    acc(*q, gq, &mut grads);
                    acc(*table, ga, &mut grads);
                }
                Op::MaxPoolRows { x, argmax } => {
                    let tx = self.value(*x);
                    let c = tx.cols();
                    let mut gx = vec![0.0; tx.numel()];
                    for (ch, &i) in argmax.iter().enumerate() {
                        gx[i * c + ch] += g[ch];
                    }
                    acc(*x, gx, &mut grads);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).numel();
                    acc(*x, vec![g[0]; n], &mut grads);
                }
            }
        }

        for (id, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[id];
            if matches!(node.op, Op::Leaf) && node.value.requires_grad {
                match &mut node.value.grad {
                    Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, d)| *e += d),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

/// Row of the relative table used for query `i`, key `j`.
pub(crate) fn relative_bucket(i: usize, j: usize, clip: usize) -> usize {
    let offset = (j as i64 - i as i64).clamp(-(clip as i64), clip as i64);
    (offset + clip as i64) as usize
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}
