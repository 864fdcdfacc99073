use super::params::{Grads, ParamId, ParamStore};
use super::{matmul_acc, AutodiffError, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    GatherParam(ParamId, Vec<usize>),
    Gather(NodeId, Vec<usize>),
    ScatterAddRows(NodeId, Vec<usize>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Concat(Vec<NodeId>),
    SumAll(NodeId),
    SumRows(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    NormRows(NodeId),
    AddScalar(NodeId),
    Scale(NodeId, T),
    Recip(NodeId),
    Bce(NodeId, Vec<T>),
    BceLogits(NodeId, Vec<T>),
}

/// Probabilities are clamped to this band before the log in [`Tape::bce`].
pub const BCE_EPS: f64 = 1e-7;

/// Records operations over values and parameters for one backward pass.
pub struct Tape<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    values: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    done: bool,
}

fn shape_err<T>(op: &'static str, shapes: &[(usize, usize)]) -> Result<T> {
    let s: Vec<String> = shapes.iter().map(|(r, c)| format!("{r}x{c}")).collect();
    Err(AutodiffError::Shape { op, shapes: s.join(", ") })
}

impl<'s, T: Scalar> Tape<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Tape { store, values: Vec::new(), ops: Vec::new(), done: false }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        NodeId(self.values.len() - 1)
    }

    pub fn value(&self, n: NodeId) -> &Tensor<T> {
        &self.values[n.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// The whole parameter tensor.
    pub fn param(&mut self, p: ParamId) -> NodeId {
        let v = self.store.get(p).clone();
        self.push(v, Op::Param(p))
    }

    /// Rows `idx` of a parameter table; gradients land only on those rows.
    pub fn gather_param(&mut self, p: ParamId, idx: &[usize]) -> Result<NodeId> {
        let table = self.store.get(p);
        let out = gather_rows(table, idx, "gather_param")?;
        Ok(self.push(out, Op::GatherParam(p, idx.to_vec())))
    }

    pub fn gather(&mut self, src: NodeId, idx: &[usize]) -> Result<NodeId> {
        let out = gather_rows(&self.values[src.0], idx, "gather")?;
        Ok(self.push(out, Op::Gather(src, idx.to_vec())))
    }

    /// `out[idx[i]] += src[i]` into `rows` zero rows.
    pub fn scatter_add_rows(&mut self, src: NodeId, idx: &[usize], rows: usize) -> Result<NodeId> {
        let s = &self.values[src.0];
        if idx.len() != s.rows {
            return shape_err("scatter_add_rows", &[s.shape(), (idx.len(), 1)]);
        }
        let mut out = Tensor::zeros(rows, s.cols);
        for (i, &r) in idx.iter().enumerate() {
            if r >= rows {
                return Err(AutodiffError::Index { op: "scatter_add_rows", index: r, rows });
            }
            for (o, &v) in out.row_mut(r).iter_mut().zip(s.row(i)) {
                *o = *o + v;
            }
        }
        Ok(self.push(out, Op::ScatterAddRows(src, idx.to_vec())))
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.shape() != vb.shape() {
            return shape_err(op, &[va.shape(), vb.shape()]);
        }
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor { rows: va.rows, cols: va.cols, data })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.cols != vb.rows {
            return shape_err("matmul", &[va.shape(), vb.shape()]);
        }
        let mut out = Tensor::zeros(va.rows, vb.cols);
        matmul_acc(&va.data, &vb.data, &mut out.data, va.rows, va.cols, vb.cols);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds a `1 x n` bias to every row of an `m x n` input.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[bias.0]);
        if vb.rows != 1 || vb.cols != va.cols {
            return shape_err("add_bias", &[va.shape(), vb.shape()]);
        }
        let mut out = va.clone();
        for r in 0..out.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&vb.data) {
                *o = *o + b;
            }
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    /// Concatenation along the column axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(first) = parts.first() else {
            return shape_err("concat", &[]);
        };
        let rows = self.values[first.0].rows;
        if parts.iter().any(|p| self.values[p.0].rows != rows) {
            let shapes: Vec<_> = parts.iter().map(|p| self.values[p.0].shape()).collect();
            return shape_err("concat", &shapes);
        }
        let cols: usize = parts.iter().map(|p| self.values[p.0].cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let v = &self.values[p.0];
                out.row_mut(r)[c0..c0 + v.cols].copy_from_slice(v.row(r));
                c0 += v.cols;
            }
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.values[a.0].data.iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Row sums, `m x n -> m x 1`.
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let v = &self.values[a.0];
        let data = (0..v.rows).map(|r| v.row(r).iter().copied().sum()).collect();
        let out = Tensor { rows: v.rows, cols: 1, data };
        self.push(out, Op::SumRows(a))
    }

    fn map(&mut self, a: NodeId, f: impl Fn(T) -> T) -> Tensor<T> {
        let v = &self.values[a.0];
        Tensor { rows: v.rows, cols: v.cols, data: v.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, |x| T::one() / (T::one() + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, |x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a))
    }

    /// Euclidean norm of each row, `m x n -> m x 1`. The gradient at a zero
    /// row is taken as zero.
    pub fn norm_rows(&mut self, a: NodeId) -> NodeId {
        let v = &self.values[a.0];
        let data = (0..v.rows).map(|r| v.row(r).iter().map(|&x| x * x).sum::<T>().sqrt()).collect();
        let out = Tensor { rows: v.rows, cols: 1, data };
        self.push(out, Op::NormRows(a))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: T) -> NodeId {
        let v = self.map(a, |x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let v = self.map(a, |x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, |x| T::one() / x);
        self.push(v, Op::Recip(a))
    }

    /// Mean binary cross-entropy of an `m x 1` prediction column against
    /// `targets`, with predictions clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(&mut self, pred: NodeId, targets: &[T]) -> Result<NodeId> {
        let p = &self.values[pred.0];
        if p.cols != 1 || p.rows != targets.len() || targets.is_empty() {
            return shape_err("bce", &[p.shape(), (targets.len(), 1)]);
        }
        let (lo, hi) = (T::of(BCE_EPS), T::of(1.0 - BCE_EPS));
        let n = T::of(targets.len() as f64);
        let loss = p
            .data
            .iter()
            .zip(targets)
            .map(|(&x, &t)| {
                let x = x.max(lo).min(hi);
                -(t * x.ln() + (T::one() - t) * (T::one() - x).ln())
            })
            .sum::<T>()
            / n;
        Ok(self.push(Tensor::scalar(loss), Op::Bce(pred, targets.to_vec())))
    }

    /// Mean binary cross-entropy of an `m x 1` logit column, i.e. `bce` of
    /// `sigmoid(logits)` without saturating for large logits.
    pub fn bce_logits(&mut self, logits: NodeId, targets: &[T]) -> Result<NodeId> {
        let z = &self.values[logits.0];
        if z.cols != 1 || z.rows != targets.len() || targets.is_empty() {
            return shape_err("bce_logits", &[z.shape(), (targets.len(), 1)]);
        }
        let n = T::of(targets.len() as f64);
        // max(z, 0) - t z + ln(1 + e^{-|z|})
        let loss = z
            .data
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(T::zero()) - t * z + (T::one() + (-z.abs()).exp()).ln())
            .sum::<T>()
            / n;
        Ok(self.push(Tensor::scalar(loss), Op::BceLogits(logits, targets.to_vec())))
    }

    /// Reverse pass from a `1 x 1` loss. A tape can be differentiated once.
    pub fn backward(&mut self, loss: NodeId) -> Result<Grads<T>> {
        if self.done {
            return Err(AutodiffError::BackwardTwice);
        }
        let shape = self.values[loss.0].shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalar(shape.0, shape.1));
        }
        self.done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.values.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Grads::new(self.store.len());
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let values = &self.values;
            let mut acc = |n: NodeId, f: &mut dyn FnMut(&mut [T])| {
                let len = values[n.0].data.len();
                let slot = grads[n.0].get_or_insert_with(|| vec![T::zero(); len]);
                f(slot);
            };
            match &self.ops[i] {
                Op::Input => {}
                Op::Param(p) => {
                    if self.store.trainable(*p) {
                        let slot = out.slot(*p, self.store.get(*p).shape());
                        for (s, &x) in slot.data.iter_mut().zip(&g) {
                            *s = *s + x;
                        }
                        slot.touched.iter_mut().for_each(|t| *t = true);
                    }
                }
                Op::GatherParam(p, idx) => {
                    if self.store.trainable(*p) {
                        let cols = self.store.get(*p).cols;
                        let slot = out.slot(*p, self.store.get(*p).shape());
                        for (k, &r) in idx.iter().enumerate() {
                            slot.touched[r] = true;
                            for c in 0..cols {
                                slot.data[r * cols + c] = slot.data[r * cols + c] + g[k * cols + c];
                            }
                        }
                    }
                }
                Op::Gather(src, idx) => {
                    let cols = values[src.0].cols;
                    acc(*src, &mut |s| {
                        for (k, &r) in idx.iter().enumerate() {
                            for c in 0..cols {
                                s[r * cols + c] = s[r * cols + c] + g[k * cols + c];
                            }
                        }
                    });
                }
                Op::ScatterAddRows(src, idx) => {
                    let cols = values[src.0].cols;
                    acc(*src, &mut |s| {
                        for (k, &r) in idx.iter().enumerate() {
                            for c in 0..cols {
                                s[k * cols + c] = s[k * cols + c] + g[r * cols + c];
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |s| add_into(s, &g));
                    acc(*b, &mut |s| add_into(s, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |s| add_into(s, &g));
                    acc(*b, &mut |s| s.iter_mut().zip(&g).for_each(|(s, &x)| *s = *s - x));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&values[a.0].data, &values[b.0].data);
                    acc(*a, &mut |s| s.iter_mut().zip(g.iter().zip(vb)).for_each(|(s, (&x, &y))| *s = *s + x * y));
                    acc(*b, &mut |s| s.iter_mut().zip(g.iter().zip(va)).for_each(|(s, (&x, &y))| *s = *s + x * y));
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&values[a.0], &values[b.0]);
                    let (m, k, n) = (va.rows, va.cols, vb.cols);
                    // dA = G · Bᵀ, dB = Aᵀ · G
                    acc(*a, &mut |s| {
                        for i in 0..m {
                            for p in 0..k {
                                let mut sum = T::zero();
                                for j in 0..n {
                                    sum = sum + g[i * n + j] * vb.data[p * n + j];
                                }
                                s[i * k + p] = s[i * k + p] + sum;
                            }
                        }
                    });
                    acc(*b, &mut |s| {
                        for i in 0..m {
                            for p in 0..k {
                                let av = va.data[i * k + p];
                                if av == T::zero() {
                                    continue;
                                }
                                for j in 0..n {
                                    s[p * n + j] = s[p * n + j] + av * g[i * n + j];
                                }
                            }
                        }
                    });
                }
                Op::AddBias(a, bias) => {
                    let cols = values[a.0].cols;
                    acc(*a, &mut |s| add_into(s, &g));
                    acc(*bias, &mut |s| {
                        for (k, &x) in g.iter().enumerate() {
                            s[k % cols] = s[k % cols] + x;
                        }
                    });
                }
                Op::Concat(parts) => {
                    let total = values[i].cols;
                    let rows = values[i].rows;
                    let mut c0 = 0;
                    for p in parts {
                        let w = values[p.0].cols;
                        acc(*p, &mut |s| {
                            for r in 0..rows {
                                for c in 0..w {
                                    s[r * w + c] = s[r * w + c] + g[r * total + c0 + c];
                                }
                            }
                        });
                        c0 += w;
                    }
                }
                Op::SumAll(a) => acc(*a, &mut |s| s.iter_mut().for_each(|s| *s = *s + g[0])),
                Op::SumRows(a) => {
                    let cols = values[a.0].cols;
                    acc(*a, &mut |s| s.iter_mut().enumerate().for_each(|(k, s)| *s = *s + g[k / cols]));
                }
                Op::Sigmoid(a) => {
                    let y = &values[i].data;
                    acc(*a, &mut |s| {
                        s.iter_mut().zip(g.iter().zip(y)).for_each(|(s, (&x, &y))| *s = *s + x * y * (T::one() - y))
                    });
                }
                Op::Relu(a) => {
                    let x = &values[a.0].data;
                    acc(*a, &mut |s| {
                        s.iter_mut().zip(g.iter().zip(x)).for_each(|(s, (&gv, &xv))| {
                            if xv > T::zero() {
                                *s = *s + gv;
                            }
                        })
                    });
                }
                Op::NormRows(a) => {
                    let x = &values[a.0];
                    let norms = &values[i].data;
                    let cols = x.cols;
                    acc(*a, &mut |s| {
                        for (k, s) in s.iter_mut().enumerate() {
                            let nrm = norms[k / cols];
                            if nrm > T::zero() {
                                *s = *s + g[k / cols] * x.data[k] / nrm;
                            }
                        }
                    });
                }
                Op::AddScalar(a) => acc(*a, &mut |s| add_into(s, &g)),
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(*a, &mut |s| s.iter_mut().zip(&g).for_each(|(s, &x)| *s = *s + c * x));
                }
                Op::Recip(a) => {
                    let y = &values[i].data;
                    acc(*a, &mut |s| s.iter_mut().zip(g.iter().zip(y)).for_each(|(s, (&x, &y))| *s = *s - x * y * y));
                }
                Op::BceLogits(z, targets) => {
                    let zs = &values[z.0].data;
                    let n = T::of(targets.len() as f64);
                    acc(*z, &mut |s| {
                        for (k, s) in s.iter_mut().enumerate() {
                            let p = T::one() / (T::one() + (-zs[k]).exp());
                            *s = *s + g[0] * (p - targets[k]) / n;
                        }
                    });
                }
                Op::Bce(pred, targets) => {
                    let p = &values[pred.0].data;
                    let (lo, hi) = (T::of(BCE_EPS), T::of(1.0 - BCE_EPS));
                    let n = T::of(targets.len() as f64);
                    acc(*pred, &mut |s| {
                        for (k, s) in s.iter_mut().enumerate() {
                            let x = p[k];
                            // the clamp is flat outside the band
                            if x < lo || x > hi {
                                continue;
                            }
                            let t = targets[k];
                            *s = *s + g[0] * (-(t / x) + (T::one() - t) / (T::one() - x)) / n;
                        }
                    });
                }
            }
        }
        Ok(out)
    }
}

fn add_into<T: Scalar>(s: &mut [T], g: &[T]) {
    s.iter_mut().zip(g).for_each(|(s, &x)| *s = *s + x);
}

fn gather_rows<T: Scalar>(table: &Tensor<T>, idx: &[usize], op: &'static str) -> Result<Tensor<T>> {
    let mut out = Tensor::zeros(idx.len(), table.cols);
    for (k, &r) in idx.iter().enumerate() {
        if r >= table.rows {
            return Err(AutodiffError::Index { op, index: r, rows: table.rows });
        }
        out.row_mut(k).copy_from_slice(table.row(r));
    }
    Ok(out)
}
