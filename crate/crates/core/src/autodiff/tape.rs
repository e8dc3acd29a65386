//! Reverse-mode tape. Every primitive records its inputs and any cached
//! forward state; `backward` replays the records in exact reverse order.

use rand::Rng;

use super::{AttentionMask, AutodiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Centered window, zeros outside the sequence. Requires an odd kernel.
    SameZero,
    /// Window ending at the current position; never reads the future.
    Causal,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Relu(Var),
    Reshape(Var),
    Concat(Var, Var),
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Var,
        offset: usize,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    LayerNorm {
        input: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<f64>,
        scale: f64,
    },
    SplitHeads {
        input: Var,
        heads: usize,
    },
    MergeHeads {
        input: Var,
        heads: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        pad: usize,
        probs: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn shape_err(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Shape(msg.into())
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize), AutodiffError> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(shape_err(format!("{what}: expected rank 3, got {s:?}"))),
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(AutodiffError::Numerical(format!(
                "non-finite value produced by {op:?}"
            )));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(format!(
                "add: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(format!(
                "mul: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let out = self.value(a).clone().reshaped(shape)?;
        self.push(out, Op::Reshape(a), &[a])
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        let (xs, ys) = (x.shape(), y.shape());
        if xs.is_empty() || xs.len() != ys.len() || xs[..xs.len() - 1] != ys[..ys.len() - 1] {
            return Err(shape_err(format!("concat: {xs:?} vs {ys:?}")));
        }
        let (da, db) = (x.last_dim(), y.last_dim());
        let rows = x.len() / da.max(1);
        let mut data = Vec::with_capacity(x.len() + y.len());
        for r in 0..rows {
            data.extend_from_slice(&x.data()[r * da..(r + 1) * da]);
            data.extend_from_slice(&y.data()[r * db..(r + 1) * db]);
        }
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = da + db;
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::Concat(a, b), &[a, b])
    }

    /// `input[batch, time, ch_in] * kernel[k, ch_in, ch_out] + bias[ch_out]`.
    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        padding: Padding,
    ) -> Result<Var, AutodiffError> {
        let x = self.value(input);
        let w = self.value(kernel);
        let bv = self.value(bias);
        let (b, t, cin) = dims3(x, "conv1d input")?;
        let (k, kcin, cout) = dims3(w, "conv1d kernel")?;
        if kcin != cin || bv.shape() != [cout] {
            return Err(shape_err(format!(
                "conv1d: input {:?}, kernel {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                bv.shape()
            )));
        }
        let offset = match padding {
            Padding::SameZero if k % 2 == 0 => {
                return Err(shape_err(format!(
                    "conv1d: same padding needs an odd kernel, got {k}"
                )))
            }
            Padding::SameZero => k / 2,
            Padding::Causal => k - 1,
        };
        let (xd, wd, bd) = (x.data(), w.data(), bv.data());
        let mut out = vec![0.0; b * t * cout];
        for bi in 0..b {
            for ti in 0..t {
                let orow = &mut out[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
                orow.copy_from_slice(bd);
                for j in 0..k {
                    let s = ti + j;
                    if s < offset || s - offset >= t {
                        continue;
                    }
                    let s = s - offset;
                    let xrow = &xd[(bi * t + s) * cin..(bi * t + s + 1) * cin];
                    for (i, &xv) in xrow.iter().enumerate() {
                        if xv != 0.0 {
                            axpy(
                                xv,
                                &wd[(j * cin + i) * cout..(j * cin + i + 1) * cout],
                                orow,
                            );
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![b, t, cout], out)?;
        self.push(
            out,
            Op::Conv1d {
                input,
                kernel,
                bias,
                offset,
            },
            &[input, kernel, bias],
        )
    }

    /// Affine map over the last axis.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, AutodiffError> {
        let x = self.value(input);
        let w = self.value(weight);
        let bv = self.value(bias);
        let (din, dout) = match w.shape() {
            [i, o] => (*i, *o),
            s => return Err(shape_err(format!("dense weight must be rank 2, got {s:?}"))),
        };
        if x.shape().is_empty() || x.last_dim() != din || bv.shape() != [dout] {
            return Err(shape_err(format!(
                "dense: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                bv.shape()
            )));
        }
        let rows = x.len() / din.max(1);
        let (xd, wd, bd) = (x.data(), w.data(), bv.data());
        let mut out = vec![0.0; rows * dout];
        for r in 0..rows {
            let orow = &mut out[r * dout..(r + 1) * dout];
            orow.copy_from_slice(bd);
            for (i, &xv) in xd[r * din..(r + 1) * din].iter().enumerate() {
                if xv != 0.0 {
                    axpy(xv, &wd[i * dout..(i + 1) * dout], orow);
                }
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let out = Tensor::new(shape, out)?;
        self.push(
            out,
            Op::Dense {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        )
    }

    /// Standardize over the last axis, then scale by `gain` and add `shift`.
    pub fn layer_norm(
        &mut self,
        input: Var,
        gain: Var,
        shift: Var,
        eps: f64,
    ) -> Result<Var, AutodiffError> {
        let x = self.value(input);
        let d = x.last_dim();
        let (g, s) = (self.value(gain), self.value(shift));
        if x.shape().is_empty() || d == 0 || g.shape() != [d] || s.shape() != [d] {
            return Err(shape_err(format!(
                "layer_norm: input {:?}, gain {:?}, shift {:?}",
                x.shape(),
                g.shape(),
                s.shape()
            )));
        }
        let rows = x.len() / d;
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = g.data()[c] * h + s.data()[c];
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.push(
            out,
            Op::LayerNorm {
                input,
                gain,
                shift,
                xhat,
                rstd,
            },
            &[input, gain, shift],
        )
    }

    /// `softmax(Q Kᵀ / sqrt(d) + penalty) V` with masked positions excluded.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<Var, AutodiffError> {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let (b, tq, d) = dims3(qt, "attention Q")?;
        let (kb, tk, kd) = dims3(kt, "attention K")?;
        let (vb, vtk, dv) = dims3(vt, "attention V")?;
        if kb != b || vb != b || kd != d || vtk != tk {
            return Err(shape_err(format!(
                "attention: Q {:?}, K {:?}, V {:?}",
                qt.shape(),
                kt.shape(),
                vt.shape()
            )));
        }
        if let Some(m) = mask {
            m.check(b, tq, tk)?;
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut probs = vec![0.0; b * tq * tk];
        let mut out = vec![0.0; b * tq * dv];
        for bi in 0..b {
            for i in 0..tq {
                let qrow = &qt.data()[(bi * tq + i) * d..(bi * tq + i + 1) * d];
                let prow = &mut probs[(bi * tq + i) * tk..(bi * tq + i + 1) * tk];
                let mut max = f64::NEG_INFINITY;
                for j in 0..tk {
                    if mask.is_some_and(|m| !m.allowed(bi, b, i, j)) {
                        prow[j] = f64::NEG_INFINITY;
                        continue;
                    }
                    let krow = &kt.data()[(bi * tk + j) * d..(bi * tk + j + 1) * d];
                    prow[j] = dot(qrow, krow) * scale;
                    max = max.max(prow[j]);
                }
                if max == f64::NEG_INFINITY {
                    return Err(AutodiffError::Mask(format!(
                        "query row {i} of batch {bi} is fully masked"
                    )));
                }
                let mut total = 0.0;
                for p in prow.iter_mut() {
                    *p = if *p == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (*p - max).exp()
                    };
                    total += *p;
                }
                let orow = &mut out[(bi * tq + i) * dv..(bi * tq + i + 1) * dv];
                for (j, p) in prow.iter_mut().enumerate() {
                    *p /= total;
                    if *p != 0.0 {
                        axpy(
                            *p,
                            &vt.data()[(bi * tk + j) * dv..(bi * tk + j + 1) * dv],
                            orow,
                        );
                    }
                }
            }
        }
        let out = Tensor::new(vec![b, tq, dv], out)?;
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                probs,
                scale,
            },
            &[q, k, v],
        )
    }

    /// Attention weights recorded by an `attention` node, shaped `[b, tq, tk]`.
    pub fn attention_weights(&self, var: Var) -> Option<&[f64]> {
        match &self.nodes[var.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// `[b, t, heads*dh] -> [b*heads, t, dh]`.
    pub fn split_heads(&mut self, input: Var, heads: usize) -> Result<Var, AutodiffError> {
        let x = self.value(input);
        let (b, t, dm) = dims3(x, "split_heads")?;
        if heads == 0 || dm % heads != 0 {
            return Err(AutodiffError::Config(format!(
                "width {dm} not divisible by {heads} heads"
            )));
        }
        let dh = dm / heads;
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let src = (bi * t + ti) * dm + h * dh;
                    let dst = ((bi * heads + h) * t + ti) * dh;
                    out[dst..dst + dh].copy_from_slice(&x.data()[src..src + dh]);
                }
            }
        }
        let out = Tensor::new(vec![b * heads, t, dh], out)?;
        self.push(out, Op::SplitHeads { input, heads }, &[input])
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, input: Var, heads: usize) -> Result<Var, AutodiffError> {
        let x = self.value(input);
        let (bh, t, dh) = dims3(x, "merge_heads")?;
        if heads == 0 || bh % heads != 0 {
            return Err(shape_err(format!(
                "merge_heads: batch {bh} not divisible by {heads}"
            )));
        }
        let b = bh / heads;
        let dm = dh * heads;
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let src = ((bi * heads + h) * t + ti) * dh;
                    let dst = (bi * t + ti) * dm + h * dh;
                    out[dst..dst + dh].copy_from_slice(&x.data()[src..src + dh]);
                }
            }
        }
        let out = Tensor::new(vec![b, t, dm], out)?;
        self.push(out, Op::MergeHeads { input, heads }, &[input])
    }

    /// Row lookup: `table[V, d]` indexed by `ids` laid out as `ids_shape`.
    pub fn gather(
        &mut self,
        table: Var,
        ids: &[usize],
        ids_shape: &[usize],
    ) -> Result<Var, AutodiffError> {
        let tb = self.value(table);
        let (rows, d) = match tb.shape() {
            [r, d] => (*r, *d),
            s => return Err(shape_err(format!("gather table must be rank 2, got {s:?}"))),
        };
        if ids_shape.iter().product::<usize>() != ids.len() {
            return Err(shape_err("gather: ids do not match ids_shape"));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(shape_err(format!(
                "gather: id {bad} out of range for {rows} rows"
            )));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tb.data()[i * d..(i + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let out = Tensor::new(shape, out)?;
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)`.
    pub fn dropout<R: Rng>(
        &mut self,
        input: Var,
        rate: f64,
        rng: &mut R,
    ) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::Config(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        let x = self.value(input);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, Op::Dropout { input, mask }, &[input])
    }

    /// Mean negative log-softmax over the rows of `logits[n, classes]` whose
    /// target is not `pad`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        pad: usize,
    ) -> Result<Var, AutodiffError> {
        let l = self.value(logits);
        let (n, c) = match l.shape() {
            [n, c] => (*n, *c),
            s => {
                return Err(shape_err(format!(
                    "cross entropy logits must be rank 2, got {s:?}"
                )))
            }
        };
        if targets.len() != n || n == 0 {
            return Err(shape_err(format!(
                "cross entropy: {n} rows, {} targets",
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= c) {
            return Err(shape_err(format!(
                "cross entropy: target {bad} out of range for {c} classes"
            )));
        }
        let count = targets.iter().filter(|&&t| t != pad).count();
        if count == 0 {
            return Err(AutodiffError::Loss("every target is padding".into()));
        }
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for r in 0..n {
            let row = &l.data()[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let prow = &mut probs[r * c..(r + 1) * c];
            let mut z = 0.0;
            for (p, v) in prow.iter_mut().zip(row) {
                *p = (v - max).exp();
                z += *p;
            }
            for p in prow.iter_mut() {
                *p /= z;
            }
            if targets[r] != pad {
                total += z.ln() + max - row[targets[r]];
            }
        }
        let loss = Tensor::scalar(total / count as f64);
        self.push(
            loss,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                pad,
                probs,
                count,
            },
            &[logits],
        )
    }

    /// Propagates d(loss)/d(node) back to every node that requires grad.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar loss, got {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].requires_grad {
                self.backprop(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.map(|d| Tensor::new(n.value.shape().to_vec(), d).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], var: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[var.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn backprop(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[id].value;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(s) = self.slot(grads, v) {
                        axpy(1.0, g, s);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gv), y) in s.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for ((d, gv), x) in s.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gv), xv) in s.iter_mut().zip(g).zip(x) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    axpy(1.0, g, s);
                }
            }
            Op::Concat(a, b) => {
                let da = self.value(*a).last_dim();
                let db = self.value(*b).last_dim();
                let rows = out.len() / (da + db).max(1);
                if let Some(s) = self.slot(grads, *a) {
                    for r in 0..rows {
                        axpy(
                            1.0,
                            &g[r * (da + db)..r * (da + db) + da],
                            &mut s[r * da..(r + 1) * da],
                        );
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for r in 0..rows {
                        axpy(
                            1.0,
                            &g[r * (da + db) + da..(r + 1) * (da + db)],
                            &mut s[r * db..(r + 1) * db],
                        );
                    }
                }
            }
            Op::Conv1d {
                input,
                kernel,
                bias,
                offset,
            } => self.conv1d_backward(g, *input, *kernel, *bias, *offset, grads),
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (din, dout) = (w.shape()[0], w.shape()[1]);
                let rows = x.len() / din.max(1);
                if let Some(s) = self.slot(grads, *bias) {
                    for r in 0..rows {
                        axpy(1.0, &g[r * dout..(r + 1) * dout], s);
                    }
                }
                if let Some(s) = self.slot(grads, *weight) {
                    for r in 0..rows {
                        let grow = &g[r * dout..(r + 1) * dout];
                        for (i, &xv) in x.data()[r * din..(r + 1) * din].iter().enumerate() {
                            if xv != 0.0 {
                                axpy(xv, grow, &mut s[i * dout..(i + 1) * dout]);
                            }
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *input) {
                    for r in 0..rows {
                        let grow = &g[r * dout..(r + 1) * dout];
                        for i in 0..din {
                            s[r * din + i] += dot(grow, &w.data()[i * dout..(i + 1) * dout]);
                        }
                    }
                }
            }
            Op::LayerNorm {
                input,
                gain,
                shift,
                xhat,
                rstd,
            } => {
                let d = out.last_dim();
                let rows = out.len() / d;
                let gn = self.value(*gain).data();
                if let Some(s) = self.slot(grads, *shift) {
                    for r in 0..rows {
                        axpy(1.0, &g[r * d..(r + 1) * d], s);
                    }
                }
                if let Some(s) = self.slot(grads, *gain) {
                    for r in 0..rows {
                        for c in 0..d {
                            s[c] += g[r * d + c] * xhat[r * d + c];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *input) {
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let h = &xhat[r * d..(r + 1) * d];
                        for c in 0..d {
                            dxhat[c] = g[r * d + c] * gn[c];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dh = dot(&dxhat, h) / d as f64;
                        for c in 0..d {
                            s[r * d + c] += rstd[r] * (dxhat[c] - mean_d - h[c] * mean_dh);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                probs,
                scale,
            } => self.attention_backward(g, *q, *k, *v, probs, *scale, grads),
            Op::SplitHeads { input, heads } => {
                let (bh, t, dh) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                let b = bh / heads;
                let dm = dh * heads;
                if let Some(s) = self.slot(grads, *input) {
                    for bi in 0..b {
                        for ti in 0..t {
                            for h in 0..*heads {
                                let src = ((bi * heads + h) * t + ti) * dh;
                                let dst = (bi * t + ti) * dm + h * dh;
                                axpy(1.0, &g[src..src + dh], &mut s[dst..dst + dh]);
                            }
                        }
                    }
                }
            }
            Op::MergeHeads { input, heads } => {
                let (b, t, dm) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                let dh = dm / heads;
                if let Some(s) = self.slot(grads, *input) {
                    for bi in 0..b {
                        for ti in 0..t {
                            for h in 0..*heads {
                                let dst = ((bi * heads + h) * t + ti) * dh;
                                let src = (bi * t + ti) * dm + h * dh;
                                axpy(1.0, &g[src..src + dh], &mut s[dst..dst + dh]);
                            }
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let d = out.last_dim();
                if let Some(s) = self.slot(grads, *table) {
                    for (r, &i) in ids.iter().enumerate() {
                        axpy(1.0, &g[r * d..(r + 1) * d], &mut s[i * d..(i + 1) * d]);
                    }
                }
            }
            Op::Dropout { input, mask } => {
                if let Some(s) = self.slot(grads, *input) {
                    for ((d, gv), m) in s.iter_mut().zip(g).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                pad,
                probs,
                count,
            } => {
                let c = self.value(*logits).last_dim();
                let scale = g[0] / *count as f64;
                if let Some(s) = self.slot(grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *pad {
                            continue;
                        }
                        let prow = &probs[r * c..(r + 1) * c];
                        axpy(scale, prow, &mut s[r * c..(r + 1) * c]);
                        s[r * c + t] -= scale;
                    }
                }
            }
        }
    }

    fn conv1d_backward(
        &self,
        g: &[f64],
        input: Var,
        kernel: Var,
        bias: Var,
        offset: usize,
        grads: &mut [Option<Vec<f64>>],
    ) {
        let x = self.value(input);
        let w = self.value(kernel);
        let (b, t, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (k, cout) = (w.shape()[0], w.shape()[2]);
        if let Some(s) = self.slot(grads, bias) {
            for r in 0..b * t {
                axpy(1.0, &g[r * cout..(r + 1) * cout], s);
            }
        }
        if let Some(s) = self.slot(grads, kernel) {
            for bi in 0..b {
                for ti in 0..t {
                    let grow = &g[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
                    for j in 0..k {
                        let pos = ti + j;
                        if pos < offset || pos - offset >= t {
                            continue;
                        }
                        let src = bi * t + pos - offset;
                        for (i, &xv) in x.data()[src * cin..(src + 1) * cin].iter().enumerate() {
                            if xv != 0.0 {
                                axpy(
                                    xv,
                                    grow,
                                    &mut s[(j * cin + i) * cout..(j * cin + i + 1) * cout],
                                );
                            }
                        }
                    }
                }
            }
        }
        if let Some(s) = self.slot(grads, input) {
            for bi in 0..b {
                for ti in 0..t {
                    let grow = &g[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
                    for j in 0..k {
                        let pos = ti + j;
                        if pos < offset || pos - offset >= t {
                            continue;
                        }
                        let dst = bi * t + pos - offset;
                        for i in 0..cin {
                            s[dst * cin + i] += dot(
                                grow,
                                &w.data()[(j * cin + i) * cout..(j * cin + i + 1) * cout],
                            );
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        q: Var,
        k: Var,
        v: Var,
        probs: &[f64],
        scale: f64,
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let (b, tq, d) = (qt.shape()[0], qt.shape()[1], qt.shape()[2]);
        let (tk, dv) = (kt.shape()[1], vt.shape()[2]);
        let mut dq = vec![0.0; qt.len()];
        let mut dk = vec![0.0; kt.len()];
        let mut dvv = vec![0.0; vt.len()];
        let mut dscore = vec![0.0; tk];
        for bi in 0..b {
            for i in 0..tq {
                let grow = &g[(bi * tq + i) * dv..(bi * tq + i + 1) * dv];
                let prow = &probs[(bi * tq + i) * tk..(bi * tq + i + 1) * tk];
                let mut weighted = 0.0;
                for j in 0..tk {
                    if prow[j] == 0.0 {
                        dscore[j] = 0.0;
                        continue;
                    }
                    let vrow = (bi * tk + j) * dv;
                    let dp = dot(grow, &vt.data()[vrow..vrow + dv]);
                    axpy(prow[j], grow, &mut dvv[vrow..vrow + dv]);
                    dscore[j] = dp;
                    weighted += prow[j] * dp;
                }
                let qrow = (bi * tq + i) * d;
                for j in 0..tk {
                    if prow[j] == 0.0 {
                        continue;
                    }
                    let ds = prow[j] * (dscore[j] - weighted) * scale;
                    let krow = (bi * tk + j) * d;
                    axpy(ds, &kt.data()[krow..krow + d], &mut dq[qrow..qrow + d]);
                    axpy(ds, &qt.data()[qrow..qrow + d], &mut dk[krow..krow + d]);
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dvv)] {
            if let Some(s) = self.slot(grads, var) {
                axpy(1.0, &buf, s);
            }
        }
    }
}
