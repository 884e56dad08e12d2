//! Wengert tape: records primitive operations during the forward pass and
//! replays them in reverse to accumulate gradients.
//!
//! Broadcasting is scalar-with-array only; every other operand pair must
//! conform exactly. Row broadcasts are expressed with an explicit
//! ones-column matmul at the call site, which keeps each adjoint a few
//! lines of auditable code.

use std::collections::HashMap;

use super::array::{sigmoid, Array, Element};
use crate::error::{Error, Result};

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

impl ValueId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    Shift { x: usize },
    Tanh { x: usize },
    Sigmoid { x: usize },
    Ln { x: usize },
    Clamp { x: usize, lo: f64, hi: f64 },
    Square { x: usize },
    Softmax { x: usize, axis: usize },
    Concat { parts: Vec<usize>, axis: usize },
    WeightedSum { weights: usize, items: usize },
    Sum { x: usize },
    SumAxis { x: usize, axis: usize },
    Transpose { x: usize },
    Reshape { x: usize },
}

struct Node<F: Element> {
    value: Array<F>,
    op: Op,
}

/// Gradients of a scalar loss with respect to the tape's leaf parameters.
pub struct Gradients<F: Element> {
    entries: HashMap<usize, Array<F>>,
}

impl<F: Element> Gradients<F> {
    pub fn get(&self, id: ValueId) -> Option<&Array<F>> {
        self.entries.get(&id.0)
    }

    pub fn take(&mut self, id: ValueId) -> Option<Array<F>> {
        self.entries.remove(&id.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Split a shape around `axis` into (outer, len, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn matmul_raw<F: Element>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    out
}

fn transpose_raw<F: Element>(a: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub struct Tape<F: Element> {
    nodes: Vec<Node<F>>,
    params: Vec<ValueId>,
}

impl<F: Element> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Element> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Array<F>, op: Op) -> ValueId {
        debug_assert!(value.all_finite(), "non-finite value produced by {:?}", op);
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    /// Leaf that receives no gradient entry in the result map.
    pub fn constant(&mut self, value: Array<F>) -> ValueId {
        self.push(value, Op::Leaf)
    }

    /// Leaf parameter; `backward` reports a gradient for every one of these.
    pub fn param(&mut self, value: Array<F>) -> ValueId {
        let id = self.push(value, Op::Leaf);
        self.params.push(id);
        id
    }

    pub fn value(&self, id: ValueId) -> &Array<F> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: ValueId) -> F {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value.data()[0]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    // ── Primitive forward ops ────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (m, k) = self.value(a).expect_matrix("matmul")?;
        let (k2, n) = self.value(b).expect_matrix("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape_string(),
                rhs: self.value(b).shape_string(),
            });
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Array::from_vec(vec![m, n], data), Op::MatMul { a: a.0, b: b.0 }))
    }

    fn elementwise_pair(
        &self,
        op: &'static str,
        a: ValueId,
        b: ValueId,
    ) -> Result<(bool, bool, Vec<usize>)> {
        let va = self.value(a);
        let vb = self.value(b);
        if va.shape() == vb.shape() {
            Ok((false, false, va.shape().to_vec()))
        } else if va.is_scalar() {
            Ok((true, false, vb.shape().to_vec()))
        } else if vb.is_scalar() {
            Ok((false, true, va.shape().to_vec()))
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: va.shape_string(),
                rhs: vb.shape_string(),
            })
        }
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (a_scalar, b_scalar, shape) = self.elementwise_pair("add", a, b)?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let data: Vec<F> = if a_scalar {
            vb.iter().map(|&y| va[0] + y).collect()
        } else if b_scalar {
            va.iter().map(|&x| x + vb[0]).collect()
        } else {
            va.iter().zip(vb).map(|(&x, &y)| x + y).collect()
        };
        Ok(self.push(Array::from_vec(shape, data), Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (a_scalar, b_scalar, shape) = self.elementwise_pair("sub", a, b)?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let data: Vec<F> = if a_scalar {
            vb.iter().map(|&y| va[0] - y).collect()
        } else if b_scalar {
            va.iter().map(|&x| x - vb[0]).collect()
        } else {
            va.iter().zip(vb).map(|(&x, &y)| x - y).collect()
        };
        Ok(self.push(Array::from_vec(shape, data), Op::Sub { a: a.0, b: b.0 }))
    }

    /// Elementwise product, with scalar-with-array broadcast.
    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (a_scalar, b_scalar, shape) = self.elementwise_pair("mul", a, b)?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let data: Vec<F> = if a_scalar {
            vb.iter().map(|&y| va[0] * y).collect()
        } else if b_scalar {
            va.iter().map(|&x| x * vb[0]).collect()
        } else {
            va.iter().zip(vb).map(|(&x, &y)| x * y).collect()
        };
        Ok(self.push(Array::from_vec(shape, data), Op::Mul { a: a.0, b: b.0 }))
    }

    /// Multiply by a host-side constant.
    pub fn scale(&mut self, x: ValueId, c: f64) -> ValueId {
        let cf = F::from_f64(c);
        let v = self.value(x).map(|e| e * cf);
        self.push(v, Op::Scale { x: x.0, c })
    }

    /// Add a host-side constant.
    pub fn shift(&mut self, x: ValueId, c: f64) -> ValueId {
        let cf = F::from_f64(c);
        let v = self.value(x).map(|e| e + cf);
        self.push(v, Op::Shift { x: x.0 })
    }

    pub fn tanh(&mut self, x: ValueId) -> ValueId {
        let v = self.value(x).map(|e| e.tanh());
        self.push(v, Op::Tanh { x: x.0 })
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid { x: x.0 })
    }

    pub fn ln(&mut self, x: ValueId) -> ValueId {
        let v = self.value(x).map(|e| e.ln());
        self.push(v, Op::Ln { x: x.0 })
    }

    pub fn clamp(&mut self, x: ValueId, lo: f64, hi: f64) -> ValueId {
        let (flo, fhi) = (F::from_f64(lo), F::from_f64(hi));
        let v = self.value(x).map(|e| {
            if e < flo {
                flo
            } else if e > fhi {
                fhi
            } else {
                e
            }
        });
        self.push(v, Op::Clamp { x: x.0, lo, hi })
    }

    pub fn square(&mut self, x: ValueId) -> ValueId {
        let v = self.value(x).map(|e| e * e);
        self.push(v, Op::Square { x: x.0 })
    }

    /// Softmax along one axis, computed with max-subtraction.
    pub fn softmax(&mut self, x: ValueId, axis: usize) -> Result<ValueId> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::AxisOutOfBounds {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut data = vec![F::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let mut max = src[idx(0)];
                for l in 1..len {
                    if src[idx(l)] > max {
                        max = src[idx(l)];
                    }
                }
                let mut total = F::zero();
                for l in 0..len {
                    let e = (src[idx(l)] - max).exp();
                    data[idx(l)] = e;
                    total = total + e;
                }
                for l in 0..len {
                    data[idx(l)] = data[idx(l)] / total;
                }
            }
        }
        Ok(self.push(Array::from_vec(shape, data), Op::Softmax { x: x.0, axis }))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[ValueId], axis: usize) -> Result<ValueId> {
        assert!(!parts.is_empty(), "concat of zero parts");
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::AxisOutOfBounds {
                op: "concat",
                axis,
                rank: first.len(),
            });
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let conforms = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !conforms {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: format!("{:?}", first),
                    rhs: self.value(p).shape_string(),
                });
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = vec![F::zero(); shape.iter().product()];
        let mut offset = 0;
        for &p in parts {
            let plen = self.value(p).shape()[axis];
            let src = self.value(p).data();
            for o in 0..outer {
                let dst_base = (o * axis_total + offset) * inner;
                let src_base = o * plen * inner;
                data[dst_base..dst_base + plen * inner]
                    .copy_from_slice(&src[src_base..src_base + plen * inner]);
            }
            offset += plen;
        }
        Ok(self.push(
            Array::from_vec(shape, data),
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
        ))
    }

    /// `out[j] = Σ_i w[i]·items[i][j]` for a weight vector and a row matrix.
    pub fn weighted_sum(&mut self, weights: ValueId, items: ValueId) -> Result<ValueId> {
        let wlen = match self.value(weights).shape() {
            [k] => *k,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "weighted_sum",
                    lhs: self.value(weights).shape_string(),
                    rhs: "a rank-1 weight vector".to_string(),
                })
            }
        };
        let (k, n) = self.value(items).expect_matrix("weighted_sum")?;
        if wlen != k {
            return Err(Error::ShapeMismatch {
                op: "weighted_sum",
                lhs: self.value(weights).shape_string(),
                rhs: self.value(items).shape_string(),
            });
        }
        let w = self.value(weights).data();
        let it = self.value(items).data();
        let mut data = vec![F::zero(); n];
        for i in 0..k {
            let row = &it[i * n..(i + 1) * n];
            for j in 0..n {
                data[j] = data[j] + w[i] * row[j];
            }
        }
        Ok(self.push(
            Array::from_vec(vec![n], data),
            Op::WeightedSum {
                weights: weights.0,
                items: items.0,
            },
        ))
    }

    /// Sum of all elements, producing a scalar.
    pub fn sum(&mut self, x: ValueId) -> ValueId {
        let mut total = F::zero();
        for &v in self.value(x).data() {
            total = total + v;
        }
        self.push(Array::scalar(total), Op::Sum { x: x.0 })
    }

    /// Sum-reduce one axis away.
    pub fn sum_axis(&mut self, x: ValueId, axis: usize) -> Result<ValueId> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::AxisOutOfBounds {
                op: "sum_axis",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let mut data = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    data[o * inner + i] = data[o * inner + i] + src[(o * len + l) * inner + i];
                }
            }
        }
        Ok(self.push(Array::from_vec(out_shape, data), Op::SumAxis { x: x.0, axis }))
    }

    pub fn transpose(&mut self, x: ValueId) -> Result<ValueId> {
        let (r, c) = self.value(x).expect_matrix("transpose")?;
        let data = transpose_raw(self.value(x).data(), r, c);
        Ok(self.push(Array::from_vec(vec![c, r], data), Op::Transpose { x: x.0 }))
    }

    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: v.shape_string(),
                rhs: format!("{:?}", shape),
            });
        }
        let data = v.data().to_vec();
        Ok(self.push(Array::from_vec(shape, data), Op::Reshape { x: x.0 }))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns gradients for every leaf
    /// registered with [`Tape::param`]; untouched parameters get zeros.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<F>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape_string(),
            });
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);

        for idx in (0..=loss.0).rev() {
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue; // leaf grads stay in place for collection below
            }
            // Every consumer of node `idx` sits later on the tape, so its
            // contributions are already accumulated; safe to move out.
            let Some(dout) = grads[idx].take() else { continue };
            self.backward_op(idx, &dout, &mut grads);
        }

        let mut entries = HashMap::new();
        for &pid in &self.params {
            let arr = match grads[pid.0].take() {
                Some(g) => Array::from_vec(self.nodes[pid.0].value.shape().to_vec(), g),
                None => Array::zeros(self.nodes[pid.0].value.shape().to_vec()),
            };
            entries.insert(pid.0, arr);
        }
        Ok(Gradients { entries })
    }

    fn accum(&self, grads: &mut [Option<Vec<F>>], target: usize, contrib: &[F]) {
        match &mut grads[target] {
            Some(existing) => {
                for (e, &c) in existing.iter_mut().zip(contrib) {
                    *e = *e + c;
                }
            }
            None => grads[target] = Some(contrib.to_vec()),
        }
    }

    /// Accumulate into a possibly-scalar operand: scalars absorb the sum of
    /// the broadcast contribution.
    fn accum_broadcast(&self, grads: &mut [Option<Vec<F>>], target: usize, contrib: &[F]) {
        if self.nodes[target].value.is_scalar() && contrib.len() > 1 {
            let mut total = F::zero();
            for &c in contrib {
                total = total + c;
            }
            self.accum(grads, target, &[total]);
        } else {
            self.accum(grads, target, contrib);
        }
    }

    fn backward_op(&self, idx: usize, dout: &[F], grads: &mut [Option<Vec<F>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => unreachable!("leaf handled by caller"),

            Op::MatMul { a, b } => {
                let (m, k) = (self.nodes[*a].value.shape()[0], self.nodes[*a].value.shape()[1]);
                let n = self.nodes[*b].value.shape()[1];
                // dA = dOut·Bᵀ
                let bt = transpose_raw(self.nodes[*b].value.data(), k, n);
                let da = matmul_raw(dout, &bt, m, n, k);
                self.accum(grads, *a, &da);
                // dB = Aᵀ·dOut
                let at = transpose_raw(self.nodes[*a].value.data(), m, k);
                let db = matmul_raw(&at, dout, k, m, n);
                self.accum(grads, *b, &db);
            }

            Op::Add { a, b } => {
                self.accum_broadcast(grads, *a, dout);
                self.accum_broadcast(grads, *b, dout);
            }

            Op::Sub { a, b } => {
                self.accum_broadcast(grads, *a, dout);
                let neg: Vec<F> = dout.iter().map(|&d| -d).collect();
                self.accum_broadcast(grads, *b, &neg);
            }

            Op::Mul { a, b } => {
                let va = self.nodes[*a].value.data();
                let vb = self.nodes[*b].value.data();
                let pick = |s: &[F], i: usize| if s.len() == 1 { s[0] } else { s[i] };
                let da: Vec<F> = dout
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| d * pick(vb, i))
                    .collect();
                self.accum_broadcast(grads, *a, &da);
                let db: Vec<F> = dout
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| d * pick(va, i))
                    .collect();
                self.accum_broadcast(grads, *b, &db);
            }

            Op::Scale { x, c } => {
                let cf = F::from_f64(*c);
                let dx: Vec<F> = dout.iter().map(|&d| d * cf).collect();
                self.accum(grads, *x, &dx);
            }

            Op::Shift { x } => {
                self.accum(grads, *x, dout);
            }

            Op::Tanh { x } => {
                let out = self.nodes[idx].value.data();
                let dx: Vec<F> = dout
                    .iter()
                    .zip(out)
                    .map(|(&d, &o)| d * (F::one() - o * o))
                    .collect();
                self.accum(grads, *x, &dx);
            }

            Op::Sigmoid { x } => {
                let out = self.nodes[idx].value.data();
                let dx: Vec<F> = dout
                    .iter()
                    .zip(out)
                    .map(|(&d, &o)| d * o * (F::one() - o))
                    .collect();
                self.accum(grads, *x, &dx);
            }

            Op::Ln { x } => {
                let vx = self.nodes[*x].value.data();
                let dx: Vec<F> = dout.iter().zip(vx).map(|(&d, &v)| d / v).collect();
                self.accum(grads, *x, &dx);
            }

            Op::Clamp { x, lo, hi } => {
                let (flo, fhi) = (F::from_f64(*lo), F::from_f64(*hi));
                let vx = self.nodes[*x].value.data();
                let dx: Vec<F> = dout
                    .iter()
                    .zip(vx)
                    .map(|(&d, &v)| if v < flo || v > fhi { F::zero() } else { d })
                    .collect();
                self.accum(grads, *x, &dx);
            }

            Op::Square { x } => {
                let vx = self.nodes[*x].value.data();
                let two = F::from_f64(2.0);
                let dx: Vec<F> = dout.iter().zip(vx).map(|(&d, &v)| two * v * d).collect();
                self.accum(grads, *x, &dx);
            }

            Op::Softmax { x, axis } => {
                let out = self.nodes[idx].value.data();
                let shape = self.nodes[idx].value.shape();
                let (outer, len, inner) = axis_split(shape, *axis);
                let mut dx = vec![F::zero(); out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx_of = |l: usize| (o * len + l) * inner + i;
                        let mut dot = F::zero();
                        for l in 0..len {
                            dot = dot + dout[idx_of(l)] * out[idx_of(l)];
                        }
                        for l in 0..len {
                            let p = idx_of(l);
                            dx[p] = out[p] * (dout[p] - dot);
                        }
                    }
                }
                self.accum(grads, *x, &dx);
            }

            Op::Concat { parts, axis } => {
                let shape = self.nodes[idx].value.shape();
                let (outer, total, inner) = axis_split(shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let plen = self.nodes[p].value.shape()[*axis];
                    let mut dp = vec![F::zero(); self.nodes[p].value.len()];
                    for o in 0..outer {
                        let src_base = (o * total + offset) * inner;
                        let dst_base = o * plen * inner;
                        dp[dst_base..dst_base + plen * inner]
                            .copy_from_slice(&dout[src_base..src_base + plen * inner]);
                    }
                    self.accum(grads, p, &dp);
                    offset += plen;
                }
            }

            Op::WeightedSum { weights, items } => {
                let w = self.nodes[*weights].value.data();
                let it = self.nodes[*items].value.data();
                let k = w.len();
                let n = dout.len();
                let mut dw = vec![F::zero(); k];
                let mut dit = vec![F::zero(); k * n];
                for i in 0..k {
                    let row = &it[i * n..(i + 1) * n];
                    let mut acc = F::zero();
                    for j in 0..n {
                        acc = acc + dout[j] * row[j];
                        dit[i * n + j] = w[i] * dout[j];
                    }
                    dw[i] = acc;
                }
                self.accum(grads, *weights, &dw);
                self.accum(grads, *items, &dit);
            }

            Op::Sum { x } => {
                let n = self.nodes[*x].value.len();
                let dx = vec![dout[0]; n];
                self.accum(grads, *x, &dx);
            }

            Op::SumAxis { x, axis } => {
                let shape = self.nodes[*x].value.shape();
                let (outer, len, inner) = axis_split(shape, *axis);
                let mut dx = vec![F::zero(); self.nodes[*x].value.len()];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            dx[(o * len + l) * inner + i] = dout[o * inner + i];
                        }
                    }
                }
                self.accum(grads, *x, &dx);
            }

            Op::Transpose { x } => {
                let (r, c) = {
                    let s = self.nodes[*x].value.shape();
                    (s[0], s[1])
                };
                // dout has shape (c, r); transpose back.
                let dx = transpose_raw(dout, c, r);
                self.accum(grads, *x, &dx);
            }

            Op::Reshape { x } => {
                self.accum(grads, *x, dout);
            }
        }
    }
}
