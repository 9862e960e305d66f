//! Matrix-level reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse creation order. Shape mismatches between
//! operands are programming errors and panic.

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(0);

/// Handle to a node of one particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// Query/key row ranges of one attention item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    TileRows(Var),
    Reshape(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: Vec<Segment>,
        offsets: Vec<usize>,
        probs: Vec<f64>,
    },
    StraightThrough(Var),
    StopGrad,
    SqDistConst {
        x: Var,
        target: Tensor,
        weight: f64,
    },
    MatchedSqErr {
        pred: Var,
        target: Tensor,
        pairs: Vec<(usize, usize, f64)>,
    },
    Combine(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn node(&self, v: Var) -> &Node {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.idx]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    /// A differentiable input (parameter or latent).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Alias of [`Tape::leaf`]; constants simply never receive a use for
    /// their gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.cols(),
            bv.rows(),
            "matmul {:?} · {:?}",
            av.shape(),
            bv.shape()
        );
        let mut out = Tensor::zeros(av.rows(), bv.cols());
        gemm(
            1.0,
            av.data(),
            av.rows(),
            av.cols(),
            false,
            bv.data(),
            bv.rows(),
            bv.cols(),
            false,
            0.0,
            out.data_mut(),
        );
        self.push(out, Op::MatMul(a, b))
    }

    /// Adds the `1 × c` row `b` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        assert_eq!((1, xv.cols()), bv.shape(), "bias shape");
        let mut out = xv.clone();
        let c = xv.cols();
        for row in out.data_mut().chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(x, b))
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shapes");
        let mut out = av.clone();
        out.add_assign(bv);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "sub shapes");
        let mut out = av.clone();
        for (o, b) in out.data_mut().iter_mut().zip(bv.data()) {
            *o -= b;
        }
        self.push(out, Op::Sub(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o *= s;
        }
        self.push(out, Op::Scale(x, s))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o = gelu(*o);
        }
        self.push(out, Op::Gelu(x))
    }

    /// Stacks `times` copies of `x` vertically.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Var {
        let xv = self.value(x);
        let data = xv.data().repeat(times);
        let out = Tensor::new(xv.rows() * times, xv.cols(), data).expect("tile shape");
        self.push(out, Op::TileRows(x))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let out = self
            .value(x)
            .clone()
            .reshaped(rows, cols)
            .expect("reshape size");
        self.push(out, Op::Reshape(x))
    }

    /// Multi-head scaled dot-product attention, evaluated independently per
    /// segment: queries of a segment attend to that segment's keys only.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: Vec<Segment>,
    ) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let w = qv.cols();
        assert!(
            heads > 0 && w % heads == 0,
            "width {w} not divisible by {heads} heads"
        );
        assert_eq!(kv.cols(), w);
        assert_eq!(vv.shape(), kv.shape());
        let dh = w / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut offsets = Vec::with_capacity(segments.len());
        let mut total = 0;
        for s in &segments {
            assert!(
                s.q_start + s.q_len <= qv.rows() && s.k_start + s.k_len <= kv.rows(),
                "segment out of range"
            );
            assert!(s.k_len > 0, "segment without keys");
            offsets.push(total);
            total += heads * s.q_len * s.k_len;
        }
        let mut probs = vec![0.0; total];
        let mut out = Tensor::zeros(qv.rows(), w);
        for (s, &off) in segments.iter().zip(&offsets) {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..s.q_len {
                    let qrow = &qv.row(s.q_start + i)[cols.clone()];
                    let p = &mut probs[off + (h * s.q_len + i) * s.k_len..][..s.k_len];
                    let mut max = f64::NEG_INFINITY;
                    for (j, pj) in p.iter_mut().enumerate() {
                        let krow = &kv.row(s.k_start + j)[cols.clone()];
                        *pj = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                        max = max.max(*pj);
                    }
                    let mut sum = 0.0;
                    for pj in p.iter_mut() {
                        *pj = (*pj - max).exp();
                        sum += *pj;
                    }
                    for pj in p.iter_mut() {
                        *pj /= sum;
                    }
                    let orow = &mut out.row_mut(s.q_start + i)[cols.clone()];
                    for (j, pj) in p.iter().enumerate() {
                        let vrow = &vv.row(s.k_start + j)[cols.clone()];
                        for (o, x) in orow.iter_mut().zip(vrow) {
                            *o += pj * x;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments,
                offsets,
                probs,
            },
        )
    }

    /// Forward value `value`, gradient passed to `x` unchanged.
    pub fn straight_through(&mut self, x: Var, value: Tensor) -> Var {
        assert_eq!(
            self.value(x).shape(),
            value.shape(),
            "straight-through shape"
        );
        self.push(value, Op::StraightThrough(x))
    }

    /// Same value as `x`, never propagates a gradient.
    pub fn stop_grad(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::StopGrad)
    }

    /// Scalar `weight · ‖x − target‖²` over all entries.
    pub fn sq_dist_const(&mut self, x: Var, target: Tensor, weight: f64) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape(), "target shape");
        let s: f64 = xv
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.push(
            Tensor::scalar(weight * s),
            Op::SqDistConst { x, target, weight },
        )
    }

    /// Scalar `Σ w · ‖pred[i] − target[j]‖²` over the listed `(i, j, w)` row
    /// pairs.
    pub fn matched_sq_err(
        &mut self,
        pred: Var,
        target: Tensor,
        pairs: Vec<(usize, usize, f64)>,
    ) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.cols(), target.cols(), "matched rows differ in width");
        let mut s = 0.0;
        for &(i, j, w) in &pairs {
            let d: f64 = pv
                .row(i)
                .iter()
                .zip(target.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            s += w * d;
        }
        self.push(
            Tensor::scalar(s),
            Op::MatchedSqErr {
                pred,
                target,
                pairs,
            },
        )
    }

    /// Linear combination of scalar nodes.
    pub fn combine(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let mut s = 0.0;
        for &(v, c) in &terms {
            let t = self.value(v);
            assert_eq!(t.shape(), (1, 1), "combine expects scalars");
            s += c * t.data()[0];
        }
        self.push(Tensor::scalar(s), Op::Combine(terms))
    }

    /// Reverse accumulation from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id || loss.idx >= self.nodes.len() {
            return Err(Error::invalid("loss is not on this tape"));
        }
        if self.nodes[loss.idx].value.shape() != (1, 1) {
            return Err(Error::invalid(format!(
                "loss must be a scalar, found shape {:?}",
                self.nodes[loss.idx].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = Tensor::zeros(av.rows(), av.cols());
                gemm(
                    1.0,
                    g.data(),
                    g.rows(),
                    g.cols(),
                    false,
                    bv.data(),
                    bv.rows(),
                    bv.cols(),
                    true,
                    0.0,
                    da.data_mut(),
                );
                let mut db = Tensor::zeros(bv.rows(), bv.cols());
                gemm(
                    1.0,
                    av.data(),
                    av.rows(),
                    av.cols(),
                    true,
                    g.data(),
                    g.rows(),
                    g.cols(),
                    false,
                    0.0,
                    db.data_mut(),
                );
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::AddBias(x, b) => {
                let mut db = Tensor::zeros(1, g.cols());
                for row in g.data().chunks(g.cols()) {
                    for (d, v) in db.data_mut().iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(grads, *x, g.clone());
                accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                let mut neg = g.clone();
                neg.data_mut().iter_mut().for_each(|v| *v = -*v);
                accumulate(grads, *b, neg);
            }
            Op::Scale(x, s) => {
                let mut d = g.clone();
                d.data_mut().iter_mut().for_each(|v| *v *= s);
                accumulate(grads, *x, d);
            }
            Op::Gelu(x) => {
                let mut d = g.clone();
                for (dv, xv) in d.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *dv *= gelu_grad(*xv);
                }
                accumulate(grads, *x, d);
            }
            Op::TileRows(x) => {
                let xv = self.value(*x);
                let mut d = Tensor::zeros(xv.rows(), xv.cols());
                for block in g.data().chunks(xv.len().max(1)) {
                    for (dv, v) in d.data_mut().iter_mut().zip(block) {
                        *dv += v;
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::Reshape(x) => {
                let (r, c) = self.value(*x).shape();
                accumulate(grads, *x, g.clone().reshaped(r, c).expect("reshape back"));
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments,
                offsets,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let w = qv.cols();
                let dh = w / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Tensor::zeros(qv.rows(), w);
                let mut dk = Tensor::zeros(kv.rows(), w);
                let mut dv = Tensor::zeros(vv.rows(), w);
                let mut ds = Vec::new();
                for (s, &off) in segments.iter().zip(offsets) {
                    for h in 0..*heads {
                        let cols = h * dh..(h + 1) * dh;
                        for i in 0..s.q_len {
                            let p = &probs[off + (h * s.q_len + i) * s.k_len..][..s.k_len];
                            let go = &g.row(s.q_start + i)[cols.clone()];
                            ds.clear();
                            let mut dot = 0.0;
                            for (j, pj) in p.iter().enumerate() {
                                let vrow = &vv.row(s.k_start + j)[cols.clone()];
                                let da: f64 = go.iter().zip(vrow).map(|(a, b)| a * b).sum();
                                dot += pj * da;
                                ds.push(da);
                                let dvrow = &mut dv.row_mut(s.k_start + j)[cols.clone()];
                                for (d, o) in dvrow.iter_mut().zip(go) {
                                    *d += pj * o;
                                }
                            }
                            let qrow = &qv.row(s.q_start + i)[cols.clone()];
                            for (j, pj) in p.iter().enumerate() {
                                let dsj = pj * (ds[j] - dot) * scale;
                                if dsj == 0.0 {
                                    continue;
                                }
                                let krow = &kv.row(s.k_start + j)[cols.clone()];
                                let dqrow = &mut dq.row_mut(s.q_start + i)[cols.clone()];
                                for (d, kx) in dqrow.iter_mut().zip(krow) {
                                    *d += dsj * kx;
                                }
                                let dkrow = &mut dk.row_mut(s.k_start + j)[cols.clone()];
                                for (d, qx) in dkrow.iter_mut().zip(qrow) {
                                    *d += dsj * qx;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *q, dq);
                accumulate(grads, *k, dk);
                accumulate(grads, *v, dv);
            }
            Op::StraightThrough(x) => accumulate(grads, *x, g.clone()),
            Op::SqDistConst { x, target, weight } => {
                let xv = self.value(*x);
                let c = 2.0 * weight * g.data()[0];
                let data = xv
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, b)| c * (a - b))
                    .collect();
                accumulate(
                    grads,
                    *x,
                    Tensor::new(xv.rows(), xv.cols(), data).expect("shape"),
                );
            }
            Op::MatchedSqErr {
                pred,
                target,
                pairs,
            } => {
                let pv = self.value(*pred);
                let mut d = Tensor::zeros(pv.rows(), pv.cols());
                for &(i, j, w) in pairs {
                    let c = 2.0 * w * g.data()[0];
                    let (prow, trow) = (pv.row(i), target.row(j));
                    for ((dv, a), b) in d.row_mut(i).iter_mut().zip(prow).zip(trow) {
                        *dv += c * (a - b);
                    }
                }
                accumulate(grads, *pred, d);
            }
            Op::Combine(terms) => {
                for &(v, c) in terms {
                    accumulate(grads, v, Tensor::scalar(c * g.data()[0]));
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut grads[v.idx] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, `None` when no path reaches it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        assert_eq!(v.tape, self.tape, "variable belongs to another tape");
        self.grads.get(v.idx).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zeros when no path reaches it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn half_squared_norm_of_linear_map() {
        // L = ½‖W x‖² with x a row vector: dL/dW = xᵀ (xW).
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![1.0, 2.0]]));
        let w = tape.leaf(t(&[vec![1.0, 0.5, -1.0], vec![0.0, 2.0, 3.0]]));
        let y = tape.matmul(x, w);
        let loss = tape.sq_dist_const(y, Tensor::zeros(1, 3), 0.5);
        let g = tape.backward(loss).unwrap();
        let yv = [1.0, 4.5, 5.0];
        let expected = [yv[0], yv[1], yv[2], 2.0 * yv[0], 2.0 * yv[1], 2.0 * yv[2]];
        assert_eq!(g.get(w).unwrap().data(), &expected);
        assert_eq!(tape.value(loss).data()[0], 0.5 * (1.0 + 4.5 * 4.5 + 25.0));
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(3.0));
        let c = tape.constant(Tensor::scalar(2.0));
        let loss = tape.combine(vec![(c, 1.0)]);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(&tape, w).data(), &[0.0]);
    }

    #[test]
    fn stop_grad_blocks_and_straight_through_passes() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(&[vec![1.0, 2.0]]));
        let sg = tape.stop_grad(z);
        let loss = tape.sq_dist_const(sg, Tensor::zeros(1, 2), 1.0);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(z).is_none());

        let mut tape = Tape::new();
        let z = tape.leaf(t(&[vec![1.0, 2.0]]));
        let q = tape.straight_through(z, t(&[vec![0.0, 3.0]]));
        let loss = tape.sq_dist_const(q, Tensor::zeros(1, 2), 1.0);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(z).unwrap().data(), g.get(q).unwrap().data());
        assert_eq!(g.get(z).unwrap().data(), &[0.0, 6.0]);
    }

    #[test]
    fn backward_errors() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.leaf(Tensor::scalar(1.0));
        b.leaf(Tensor::scalar(1.0));
        assert!(b.backward(x).is_err());
        let m = a.leaf(Tensor::zeros(2, 2));
        assert!(a.backward(m).is_err());
    }

    #[test]
    fn attention_single_key_copies_value() {
        let mut tape = Tape::new();
        let q = tape.leaf(t(&[vec![1.0, 2.0, 3.0, 4.0]]));
        let k = tape.leaf(t(&[vec![0.5, 0.5, 0.5, 0.5]]));
        let v = tape.leaf(t(&[vec![7.0, 8.0, 9.0, 10.0]]));
        let seg = vec![Segment {
            q_start: 0,
            q_len: 1,
            k_start: 0,
            k_len: 1,
        }];
        let o = tape.attention(q, k, v, 2, seg);
        assert_eq!(tape.value(o).data(), &[7.0, 8.0, 9.0, 10.0]);
    }
}
