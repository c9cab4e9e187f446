use super::kernels::{gemm, gemm_at, gemm_bt, sigmoid, split_axis};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation that produced a node, with its parents.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Add(Var, Var),
    /// Elementwise sum of equally shaped operands.
    AddN(Vec<Var>),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + bias` where `bias.shape` is a suffix of `a.shape`.
    AddBroadcast(Var, Var),
    Scale(Var, f64),
    Shift(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Prelu { x: Var, alpha: Var },
    Clamp { x: Var, lo: f64, hi: f64 },
    Matmul(Var, Var),
    Bmm { a: Var, b: Var, transpose_b: bool },
    Softmax(Var),
    Sum { x: Var, axis: usize },
    Mean { x: Var, axis: usize },
    Max { x: Var, axis: usize, argmax: Vec<usize> },
    SumAll(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Gather { table: Var, rows: Vec<usize> },
    PairwiseHadamard(Var, Var),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Define-by-run computation tape.
///
/// Leaves created with [`Graph::variable`] collect gradients. Everything else is
/// derived and only receives transient gradients during [`Graph::backward`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::dim(op, format!("incompatible shapes {a:?} and {b:?}"))
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape.to_vec();
    out.remove(axis);
    if out.is_empty() {
        out.push(1);
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that accumulates gradients.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if a backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    // ---------------------------------------------------------------- binary

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = if ta.shape() == tb.shape() || tb.len() == 1 {
            ta.shape().to_vec()
        } else if ta.len() == 1 {
            tb.shape().to_vec()
        } else {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        };
        let n: usize = shape.iter().product();
        let pick = |t: &Tensor, i: usize| if t.len() == 1 { t.data()[0] } else { t.data()[i] };
        let data = (0..n).map(|i| f(pick(ta, i), pick(tb, i))).collect();
        Tensor::new(shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.derived(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.derived(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.derived(out, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise sum of equally shaped tensors. Each element's terms are
    /// added in ascending order, so the result is independent of operand order.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("add_n", "no inputs"))?;
        let shape = self.value(*first).shape().to_vec();
        for v in parts {
            if self.value(*v).shape() != shape.as_slice() {
                return Err(shape_err("add_n", &shape, self.value(*v).shape()));
            }
        }
        let n: usize = shape.iter().product();
        let mut terms = Vec::with_capacity(parts.len());
        let data = (0..n)
            .map(|i| {
                terms.clear();
                terms.extend(parts.iter().map(|v| self.value(*v).data()[i]));
                terms.sort_by(f64::total_cmp);
                terms.iter().sum()
            })
            .collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.derived(out, Op::AddN(parts.to_vec()), parts))
    }

    /// Adds `bias` to every trailing block of `a`; `bias.shape` must be a
    /// suffix of `a.shape` (row bias, positional table, ...).
    pub fn add_broadcast(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err("add_broadcast", sa, sb));
        }
        let block = tb.len();
        let mut out = ta.clone();
        for chunk in out.data_mut().chunks_mut(block) {
            for (o, b) in chunk.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        Ok(self.derived(out, Op::AddBroadcast(a, bias), &[a, bias]))
    }

    // ----------------------------------------------------------------- unary

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.derived(out, Op::Scale(x, c), &[x])
    }

    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.derived(out, Op::Shift(x, c), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.derived(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.derived(out, Op::Tanh(x), &[x])
    }

    /// `exp`, saturating at `exp(700)` so overflow never yields infinities.
    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.min(700.0).exp());
        self.derived(out, Op::Exp(x), &[x])
    }

    /// Natural log; rejects non-positive inputs.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if let Some(bad) = t.data().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Numeric(format!("log of non-positive value {bad}")));
        }
        let out = t.map(f64::ln);
        Ok(self.derived(out, Op::Log(x), &[x]))
    }

    /// Parametric ReLU: `x` where positive, `alpha * x` otherwise, with a
    /// learnable one-element `alpha`.
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let a = self.value(alpha);
        if a.len() != 1 {
            return Err(Error::dim("prelu", format!("alpha must be scalar, got {:?}", a.shape())));
        }
        let a = a.item();
        let out = self.value(x).map(|v| if v > 0.0 { v } else { a * v });
        Ok(self.derived(out, Op::Prelu { x, alpha }, &[x, alpha]))
    }

    /// Clamps to `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.derived(out, Op::Clamp { x, lo, hi }, &[x])
    }

    // ---------------------------------------------------------------- linalg

    /// `a[..., k] · b[k, n] -> [..., n]`; leading axes of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = ta.len() / k;
        let mut data = vec![0.0; m * n];
        gemm(ta.data(), tb.data(), &mut data, m, k, n);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(shape, data)?;
        Ok(self.derived(out, Op::Matmul(a, b), &[a, b]))
    }

    /// Batched matmul over the leading axis: `a[B,m,k] · b[B,k,n]`, or
    /// `a[B,m,k] · b[B,n,k]ᵀ` when `transpose_b`.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(shape_err("bmm", sa, sb));
        }
        let mut data = vec![0.0; batch * m * n];
        for i in 0..batch {
            let ab = &ta.data()[i * m * k..(i + 1) * m * k];
            let bb = &tb.data()[i * k * n..(i + 1) * k * n];
            let ob = &mut data[i * m * n..(i + 1) * m * n];
            if transpose_b {
                gemm_bt(ab, bb, ob, m, k, n);
            } else {
                gemm(ab, bb, ob, m, k, n);
            }
        }
        let out = Tensor::new(vec![batch, m, n], data)?;
        Ok(self.derived(out, Op::Bmm { a, b, transpose_b }, &[a, b]))
    }

    /// Softmax over the last axis with per-row max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = *t.shape().last().unwrap();
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.derived(out, Op::Softmax(x), &[x])
    }

    // ------------------------------------------------------------ reductions

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        let rank = self.value(x).rank();
        if axis >= rank {
            return Err(Error::dim(op, format!("axis {axis} out of range for rank {rank}")));
        }
        Ok(())
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum", x, axis)?;
        let out = self.reduce_axis(x, axis, 1.0);
        Ok(self.derived(out, Op::Sum { x, axis }, &[x]))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean", x, axis)?;
        let extent = self.value(x).shape()[axis] as f64;
        let out = self.reduce_axis(x, axis, 1.0 / extent);
        Ok(self.derived(out, Op::Mean { x, axis }, &[x]))
    }

    fn reduce_axis(&self, x: Var, axis: usize, factor: f64) -> Tensor {
        let t = self.value(x);
        let (outer, extent, inner) = split_axis(t.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                let src = &t.data()[(o * extent + a) * inner..(o * extent + a + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        data.iter_mut().for_each(|d| *d *= factor);
        Tensor::new(reduced_shape(t.shape(), axis), data).expect("reduced shape")
    }

    /// Max over `axis`. Backward routes the gradient to the first maximal
    /// position only.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("max", x, axis)?;
        let t = self.value(x);
        let (outer, extent, inner) = split_axis(t.shape(), axis);
        let mut data = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                for i in 0..inner {
                    let v = t.data()[(o * extent + a) * inner + i];
                    let slot = o * inner + i;
                    if v > data[slot] {
                        data[slot] = v;
                        argmax[slot] = a;
                    }
                }
            }
        }
        let out = Tensor::new(reduced_shape(t.shape(), axis), data)?;
        Ok(self.derived(out, Op::Max { x, axis, argmax }, &[x]))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.derived(Tensor::scalar(total), Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    // ------------------------------------------------------------- structure

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.derived(out, Op::Reshape(x), &[x]))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.derived(out, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let t = self.value(x);
        let (outer, extent, inner) = split_axis(t.shape(), axis);
        if len == 0 || start + len > extent {
            return Err(Error::dim(
                "slice",
                format!("range {start}..{} out of extent {extent}", start + len),
            ));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(shape, data)?;
        Ok(self.derived(out, Op::Slice { x, axis, start }, &[x]))
    }

    /// Row lookup: `table[V, D]` indexed by `rows` gives `[rows.len(), D]`.
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 || rows.is_empty() {
            return Err(Error::dim("gather", format!("table shape {:?}", t.shape())));
        }
        let (vocab, width) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if r >= vocab {
                return Err(Error::Input(format!("row {r} out of range for {vocab} rows")));
            }
            data.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
        }
        let out = Tensor::new(vec![rows.len(), width], data)?;
        Ok(self.derived(out, Op::Gather { table, rows: rows.to_vec() }, &[table]))
    }

    /// All channel pairs: `a[B,D,H] , b[B,D,M] -> [B,D,H*M]` with
    /// `out[.., i*M + j] = a[.., i] * b[.., j]`.
    pub fn pairwise_hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[..2] != sb[..2] {
            return Err(shape_err("pairwise_hadamard", sa, sb));
        }
        let (rows, h, m) = (sa[0] * sa[1], sa[2], sb[2]);
        let mut data = Vec::with_capacity(rows * h * m);
        for r in 0..rows {
            let ar = &ta.data()[r * h..(r + 1) * h];
            let br = &tb.data()[r * m..(r + 1) * m];
            for &x in ar {
                data.extend(br.iter().map(|y| x * y));
            }
        }
        let out = Tensor::new(vec![sa[0], sa[1], h * m], data)?;
        Ok(self.derived(out, Op::PairwiseHadamard(a, b), &[a, b]))
    }

    // -------------------------------------------------------------- backward

    /// Reverse-mode sweep from a one-element `loss`.
    ///
    /// Gradients of intermediate nodes are transient; leaf gradients are added
    /// to whatever the leaf already holds, so calling this twice without
    /// [`Graph::zero_grad`] doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(upstream);
                continue;
            }
            self.propagate(idx, &upstream, &mut grads);
        }

        for (idx, g) in grads.into_iter().enumerate() {
            let (Some(g), node) = (g, &mut self.nodes[idx]) else {
                continue;
            };
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        let mut send = |v: Var, g: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, unbroadcast(up.clone(), val(a)));
                send(*b, unbroadcast(up.clone(), val(b)));
            }
            Op::AddN(parts) => {
                for v in parts {
                    send(*v, up.clone());
                }
            }
            Op::Sub(a, b) => {
                send(*a, unbroadcast(up.clone(), val(a)));
                send(*b, unbroadcast(up.map(|g| -g), val(b)));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let pick = |t: &Tensor, i: usize| if t.len() == 1 { t.data()[0] } else { t.data()[i] };
                let ga: Vec<f64> = (0..up.len()).map(|i| up.data()[i] * pick(tb, i)).collect();
                let gb: Vec<f64> = (0..up.len()).map(|i| up.data()[i] * pick(ta, i)).collect();
                let shape = up.shape().to_vec();
                send(*a, unbroadcast(Tensor::new(shape.clone(), ga).unwrap(), ta));
                send(*b, unbroadcast(Tensor::new(shape, gb).unwrap(), tb));
            }
            Op::AddBroadcast(a, bias) => {
                send(*a, up.clone());
                let tb = val(bias);
                let mut gb = Tensor::zeros(tb.shape());
                for chunk in up.data().chunks(tb.len()) {
                    for (g, u) in gb.data_mut().iter_mut().zip(chunk) {
                        *g += u;
                    }
                }
                send(*bias, gb);
            }
            Op::Scale(x, c) => send(*x, up.map(|g| g * c)),
            Op::Shift(x, _) => send(*x, up.clone()),
            Op::Sigmoid(x) => send(*x, zip_map(up, out, |g, y| g * y * (1.0 - y))),
            Op::Tanh(x) => send(*x, zip_map(up, out, |g, y| g * (1.0 - y * y))),
            Op::Exp(x) => send(*x, zip_map(up, out, |g, y| g * y)),
            Op::Log(x) => send(*x, zip_map(up, val(x), |g, v| g / v)),
            Op::Prelu { x, alpha } => {
                let a = val(alpha).item();
                let tx = val(x);
                send(*x, zip_map(up, tx, |g, v| if v > 0.0 { g } else { a * g }));
                let ga: f64 = up
                    .data()
                    .iter()
                    .zip(tx.data())
                    .filter(|(_, v)| **v <= 0.0)
                    .map(|(g, v)| g * v)
                    .sum();
                send(*alpha, Tensor::new(val(alpha).shape().to_vec(), vec![ga]).unwrap());
            }
            Op::Clamp { x, lo, hi } => send(
                *x,
                zip_map(up, val(x), |g, v| if v >= *lo && v <= *hi { g } else { 0.0 }),
            ),
            Op::Matmul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (k, n) = (tb.shape()[0], tb.shape()[1]);
                let m = ta.len() / k;
                let mut ga = Tensor::zeros(ta.shape());
                gemm_bt(up.data(), tb.data(), ga.data_mut(), m, n, k);
                let mut gb = Tensor::zeros(tb.shape());
                gemm_at(ta.data(), up.data(), gb.data_mut(), m, k, n);
                send(*a, ga);
                send(*b, gb);
            }
            Op::Bmm { a, b, transpose_b } => {
                let (ta, tb) = (val(a), val(b));
                let (batch, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = up.shape()[2];
                let mut ga = Tensor::zeros(ta.shape());
                let mut gb = Tensor::zeros(tb.shape());
                for i in 0..batch {
                    let ab = &ta.data()[i * m * k..(i + 1) * m * k];
                    let bb = &tb.data()[i * k * n..(i + 1) * k * n];
                    let ub = &up.data()[i * m * n..(i + 1) * m * n];
                    let gab = &mut ga.data_mut()[i * m * k..(i + 1) * m * k];
                    if *transpose_b {
                        // c = a·bᵀ with b[n×k]: da = dc·b, db = dcᵀ·a
                        gemm(ub, bb, gab, m, n, k);
                        gemm_at(ub, ab, &mut gb.data_mut()[i * k * n..(i + 1) * k * n], m, n, k);
                    } else {
                        gemm_bt(ub, bb, gab, m, n, k);
                        gemm_at(ab, ub, &mut gb.data_mut()[i * k * n..(i + 1) * k * n], m, k, n);
                    }
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::Softmax(x) => {
                let n = *out.shape().last().unwrap();
                let mut g = Tensor::zeros(out.shape());
                for ((gr, yr), ur) in g
                    .data_mut()
                    .chunks_mut(n)
                    .zip(out.data().chunks(n))
                    .zip(up.data().chunks(n))
                {
                    let dot: f64 = yr.iter().zip(ur).map(|(y, u)| y * u).sum();
                    for ((gi, y), u) in gr.iter_mut().zip(yr).zip(ur) {
                        *gi = y * (u - dot);
                    }
                }
                send(*x, g);
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let tx = val(x);
                let (outer, extent, inner) = split_axis(tx.shape(), *axis);
                let factor = if matches!(node.op, Op::Mean { .. }) {
                    1.0 / extent as f64
                } else {
                    1.0
                };
                let mut g = Tensor::zeros(tx.shape());
                for o in 0..outer {
                    for a in 0..extent {
                        for i in 0..inner {
                            g.data_mut()[(o * extent + a) * inner + i] =
                                up.data()[o * inner + i] * factor;
                        }
                    }
                }
                send(*x, g);
            }
            Op::Max { x, axis, argmax } => {
                let tx = val(x);
                let (outer, extent, inner) = split_axis(tx.shape(), *axis);
                let mut g = Tensor::zeros(tx.shape());
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        g.data_mut()[(o * extent + argmax[slot]) * inner + i] += up.data()[slot];
                    }
                }
                send(*x, g);
            }
            Op::SumAll(x) => {
                let u = up.item();
                send(*x, Tensor::full(val(x).shape(), u));
            }
            Op::Reshape(x) => send(*x, up.reshaped(val(x).shape()).unwrap()),
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let tp = val(p);
                    let extent = tp.shape()[*axis];
                    let mut g = Vec::with_capacity(tp.len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        g.extend_from_slice(&up.data()[base..base + extent * inner]);
                    }
                    offset += extent;
                    send(*p, Tensor::new(tp.shape().to_vec(), g).unwrap());
                }
            }
            Op::Slice { x, axis, start } => {
                let tx = val(x);
                let (outer, extent, inner) = split_axis(tx.shape(), *axis);
                let len = out.shape()[*axis];
                let mut g = Tensor::zeros(tx.shape());
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let src = o * len * inner;
                    g.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&up.data()[src..src + len * inner]);
                }
                send(*x, g);
            }
            Op::Gather { table, rows } => {
                let tt = val(table);
                let width = tt.shape()[1];
                let mut g = Tensor::zeros(tt.shape());
                for (k, &r) in rows.iter().enumerate() {
                    for (d, u) in g.data_mut()[r * width..(r + 1) * width]
                        .iter_mut()
                        .zip(&up.data()[k * width..(k + 1) * width])
                    {
                        *d += u;
                    }
                }
                send(*table, g);
            }
            Op::PairwiseHadamard(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let h = ta.shape()[2];
                let m = tb.shape()[2];
                let rows = ta.len() / h;
                let mut ga = Tensor::zeros(ta.shape());
                let mut gb = Tensor::zeros(tb.shape());
                for r in 0..rows {
                    let ar = &ta.data()[r * h..(r + 1) * h];
                    let br = &tb.data()[r * m..(r + 1) * m];
                    let ur = &up.data()[r * h * m..(r + 1) * h * m];
                    for i in 0..h {
                        let ui = &ur[i * m..(i + 1) * m];
                        ga.data_mut()[r * h + i] += ui.iter().zip(br).map(|(u, y)| u * y).sum::<f64>();
                        for (gbj, u) in gb.data_mut()[r * m..(r + 1) * m].iter_mut().zip(ui) {
                            *gbj += u * ar[i];
                        }
                    }
                }
                send(*a, ga);
                send(*b, gb);
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

/// Sums a full-shape gradient down to a one-element operand when that operand
/// was broadcast.
fn unbroadcast(g: Tensor, target: &Tensor) -> Tensor {
    if g.shape() == target.shape() {
        g
    } else {
        Tensor::new(target.shape().to_vec(), vec![g.data().iter().sum()]).unwrap()
    }
}
