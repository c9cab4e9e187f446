//! Re-evaluates a recorded tape in double-double arithmetic.
//!
//! Used by the gradient checker: central differences of an `f64` forward pass
//! carry roughly `ulp(f) / 2ε` of rounding noise, which swamps gradient
//! entries below about `1e-6`. Replaying the same operations with ~106-bit
//! significands pushes that floor below anything the checks can see.

use super::dd::Dd;
use super::kernels::split_axis;
use super::{Graph, Op, Var};
use crate::error::{Error, Result};

fn dd(x: f64) -> Dd {
    Dd::from(x)
}

fn sigmoid(x: Dd) -> Dd {
    let one = dd(1.0);
    if x.hi() >= 0.0 {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

fn tanh(x: Dd) -> Dd {
    let t = (x.abs() * -2.0).exp();
    let magnitude = (dd(1.0) - t) / (dd(1.0) + t);
    if x.hi() < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

fn gemm(a: &[Dd], b: &[Dd], out: &mut [Dd], m: usize, k: usize, n: usize, transpose_b: bool) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = dd(0.0);
            for p in 0..k {
                let bv = if transpose_b { b[j * k + p] } else { b[p * n + j] };
                acc += a[i * k + p] * bv;
            }
            out[i * n + j] = acc;
        }
    }
}

/// A tape frozen at one input point, ready for repeated high-precision
/// evaluation with some leaves replaced.
pub(crate) struct Replay<'g> {
    graph: &'g Graph,
    output: Var,
    base: Vec<Vec<Dd>>,
}

impl<'g> Replay<'g> {
    pub(crate) fn new(graph: &'g Graph, output: Var) -> Result<Self> {
        let mut replay = Replay {
            graph,
            output,
            base: Vec::with_capacity(output.index() + 1),
        };
        for idx in 0..=output.index() {
            let value = replay.eval_node(idx, &|v| &replay.base[v.index()])?;
            replay.base.push(value);
        }
        Ok(replay)
    }

    /// Output value at the recorded point.
    #[cfg(test)]
    pub(crate) fn value(&self) -> Dd {
        self.base[self.output.index()][0]
    }

    /// Nodes whose value depends on `leaf`, in tape order.
    pub(crate) fn downstream(&self, leaf: Var) -> Vec<usize> {
        let mut dirty = vec![false; self.output.index() + 1];
        dirty[leaf.index()] = true;
        let mut order = Vec::new();
        for idx in leaf.index() + 1..=self.output.index() {
            let hit = parents(self.graph.op(Var(idx))).iter().any(|p| dirty[p.index()]);
            if hit {
                dirty[idx] = true;
                order.push(idx);
            }
        }
        order
    }

    /// Output value with entry `i` of `leaf` shifted by `delta`, recomputing
    /// only the nodes listed in `downstream`.
    pub(crate) fn perturbed(&self, leaf: Var, i: usize, delta: f64, downstream: &[usize]) -> Result<Dd> {
        let mut overlay: Vec<Option<Vec<Dd>>> = vec![None; self.output.index() + 1];
        let mut shifted = self.base[leaf.index()].clone();
        shifted[i] += delta;
        overlay[leaf.index()] = Some(shifted);
        for &idx in downstream {
            let value = {
                let get = |v: Var| overlay[v.index()].as_ref().unwrap_or(&self.base[v.index()]);
                self.eval_node(idx, &get)?
            };
            overlay[idx] = Some(value);
        }
        let out = overlay[self.output.index()].as_ref().unwrap_or(&self.base[self.output.index()]);
        Ok(out[0])
    }

    fn eval_node<'a>(&'a self, idx: usize, get: &dyn Fn(Var) -> &'a Vec<Dd>) -> Result<Vec<Dd>> {
        let g = self.graph;
        let shape = |v: Var| g.shape(v);
        let out_len = g.value(Var(idx)).len();
        let binary = |a: Var, b: Var, f: fn(Dd, Dd) -> Dd| {
            let (xa, xb) = (get(a), get(b));
            (0..out_len)
                .map(|i| {
                    let x = if xa.len() == 1 { xa[0] } else { xa[i] };
                    let y = if xb.len() == 1 { xb[0] } else { xb[i] };
                    f(x, y)
                })
                .collect::<Vec<_>>()
        };
        let map = |x: Var, f: &dyn Fn(Dd) -> Dd| get(x).iter().map(|v| f(*v)).collect::<Vec<_>>();

        let value = match g.op(Var(idx)) {
            Op::Leaf => g.value(Var(idx)).data().iter().map(|v| dd(*v)).collect(),
            Op::Add(a, b) => binary(*a, *b, |x, y| x + y),
            Op::Sub(a, b) => binary(*a, *b, |x, y| x - y),
            Op::Mul(a, b) => binary(*a, *b, |x, y| x * y),
            Op::AddN(parts) => (0..out_len)
                .map(|i| parts.iter().fold(dd(0.0), |acc, p| acc + get(*p)[i]))
                .collect(),
            Op::AddBroadcast(a, bias) => {
                let b = get(*bias);
                get(*a).iter().enumerate().map(|(i, v)| *v + b[i % b.len()]).collect()
            }
            Op::Scale(x, c) => map(*x, &|v| v * *c),
            Op::Shift(x, c) => map(*x, &|v| v + *c),
            Op::Sigmoid(x) => map(*x, &sigmoid),
            Op::Tanh(x) => map(*x, &tanh),
            Op::Exp(x) => map(*x, &|v| if v.hi() > 700.0 { dd(700.0).exp() } else { v.exp() }),
            Op::Log(x) => {
                if let Some(bad) = get(*x).iter().find(|v| !(v.hi() > 0.0)) {
                    return Err(Error::Numeric(format!("log of non-positive value {}", bad.hi())));
                }
                map(*x, &|v| v.ln())
            }
            Op::Prelu { x, alpha } => {
                let a = get(*alpha)[0];
                map(*x, &|v| if v.hi() > 0.0 { v } else { a * v })
            }
            Op::Clamp { x, lo, hi } => map(*x, &|v| {
                if v < dd(*lo) {
                    dd(*lo)
                } else if v > dd(*hi) {
                    dd(*hi)
                } else {
                    v
                }
            }),
            Op::Matmul(a, b) => {
                let sb = shape(*b);
                let (k, n) = (sb[0], sb[1]);
                let mut out = vec![dd(0.0); out_len];
                gemm(get(*a), get(*b), &mut out, out_len / n, k, n, false);
                out
            }
            Op::Bmm { a, b, transpose_b } => {
                let sa = shape(*a);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = out_len / (batch * m);
                let (xa, xb) = (get(*a), get(*b));
                let mut out = vec![dd(0.0); out_len];
                for i in 0..batch {
                    gemm(
                        &xa[i * m * k..(i + 1) * m * k],
                        &xb[i * k * n..(i + 1) * k * n],
                        &mut out[i * m * n..(i + 1) * m * n],
                        m,
                        k,
                        n,
                        *transpose_b,
                    );
                }
                out
            }
            Op::Softmax(x) => {
                let n = *shape(*x).last().unwrap();
                let mut out = get(*x).clone();
                for row in out.chunks_mut(n) {
                    let max = row.iter().copied().fold(row[0], |m, v| if v > m { v } else { m });
                    let mut total = dd(0.0);
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        total += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= total;
                    }
                }
                out
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let (outer, extent, inner) = split_axis(shape(*x), *axis);
                let src = get(*x);
                let mut out = vec![dd(0.0); outer * inner];
                for o in 0..outer {
                    for a in 0..extent {
                        for i in 0..inner {
                            out[o * inner + i] += src[(o * extent + a) * inner + i];
                        }
                    }
                }
                if matches!(g.op(Var(idx)), Op::Mean { .. }) {
                    out.iter_mut().for_each(|v| *v /= extent as f64);
                }
                out
            }
            Op::Max { x, axis, .. } => {
                let (outer, extent, inner) = split_axis(shape(*x), *axis);
                let src = get(*x);
                let mut out = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let col = (0..extent).map(|a| src[(o * extent + a) * inner + i]);
                        out.push(col.reduce(|m, v| if v > m { v } else { m }).unwrap());
                    }
                }
                out
            }
            Op::SumAll(x) => vec![get(*x).iter().fold(dd(0.0), |acc, v| acc + *v)],
            Op::Reshape(x) => get(*x).clone(),
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(g.shape(Var(idx)), *axis);
                let mut out = Vec::with_capacity(out_len);
                for o in 0..outer {
                    for p in parts {
                        let block = shape(*p)[*axis] * inner;
                        out.extend_from_slice(&get(*p)[o * block..(o + 1) * block]);
                    }
                }
                out
            }
            Op::Slice { x, axis, start } => {
                let (outer, extent, inner) = split_axis(shape(*x), *axis);
                let len = g.shape(Var(idx))[*axis];
                let src = get(*x);
                let mut out = Vec::with_capacity(out_len);
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    out.extend_from_slice(&src[base..base + len * inner]);
                }
                out
            }
            Op::Gather { table, rows } => {
                let width = shape(*table)[1];
                let src = get(*table);
                rows.iter().flat_map(|r| src[r * width..(r + 1) * width].iter().copied()).collect()
            }
            Op::PairwiseHadamard(a, b) => {
                let (h, m) = (shape(*a)[2], shape(*b)[2]);
                let (xa, xb) = (get(*a), get(*b));
                let rows = xa.len() / h;
                let mut out = Vec::with_capacity(out_len);
                for r in 0..rows {
                    for x in &xa[r * h..(r + 1) * h] {
                        out.extend(xb[r * m..(r + 1) * m].iter().map(|y| *x * *y));
                    }
                }
                out
            }
        };
        Ok(value)
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddBroadcast(a, b)
        | Op::Matmul(a, b)
        | Op::PairwiseHadamard(a, b)
        | Op::Bmm { a, b, .. }
        | Op::Prelu { x: a, alpha: b } => vec![*a, *b],
        Op::AddN(parts) | Op::Concat { parts, .. } => parts.clone(),
        Op::Scale(x, _)
        | Op::Shift(x, _)
        | Op::Sigmoid(x)
        | Op::Tanh(x)
        | Op::Exp(x)
        | Op::Log(x)
        | Op::Clamp { x, .. }
        | Op::Softmax(x)
        | Op::Sum { x, .. }
        | Op::Mean { x, .. }
        | Op::Max { x, .. }
        | Op::SumAll(x)
        | Op::Reshape(x)
        | Op::Slice { x, .. }
        | Op::Gather { table: x, .. } => vec![*x],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn replay_matches_the_f64_forward() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 3], vec![0.3, -1.2, 2.0, 0.7, -0.1, 1.5]).unwrap());
        let w = g.constant(Tensor::new(vec![3, 2], vec![0.5, -0.4, 0.9, 0.2, -0.3, 0.8]).unwrap());
        let h = g.matmul(x, w).unwrap();
        let s = g.softmax(h);
        let t = g.tanh(s);
        let e = g.exp(t);
        let l = g.log(e).unwrap();
        let m = g.max_axis(l, 1).unwrap();
        let out = g.sum_all(m);
        let replay = Replay::new(&g, out).unwrap();
        assert!((replay.value().hi() - g.value(out).item()).abs() < 1e-14);
    }

    #[test]
    fn perturbation_only_touches_dependents() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(&[1.0, 2.0]));
        let b = g.constant(Tensor::vector(&[3.0, 4.0]));
        let ab = g.mul(a, b).unwrap();
        let out = g.sum_all(ab);
        let replay = Replay::new(&g, out).unwrap();
        let down = replay.downstream(a);
        assert_eq!(down, vec![ab.index(), out.index()]);
        let v = replay.perturbed(a, 1, 0.5, &down).unwrap();
        assert_eq!(v.hi(), 3.0 + 2.5 * 4.0);
    }
}
