//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends a node holding its forward value and enough saved state
//! to apply its local gradient rule. `backward` walks the tape from the loss
//! towards the leaves; since nodes are only ever appended after their inputs,
//! plain reverse index order is a reverse topological order.

use std::sync::Arc;

use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{dim_err, Error, Result};

/// Lower clamp applied before taking logarithms in losses.
pub const LOG_FLOOR: f32 = 1e-12;

/// Shared index list (edge endpoints, segment ids) reused across ops.
pub type Index = Arc<[usize]>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    LeakyRelu(f32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregate {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f32),
    Act(Var, Activation),
    GatherRows(Var, Index),
    SegmentAggregate { input: Var, segments: Index, counts: Vec<usize>, mode: Aggregate },
    ScaleRows(Var, Var),
    SegmentSoftmax { input: Var, segments: Index },
    Sum(Var),
    CrossEntropy { pred: Var, target: Vec<f32> },
    Log(Var),
    Exp(Var),
    Clamp(Var, f32, f32),
    Minimum(Var, Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Single-threaded; cheap to drop and rebuild per batch.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
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

    /// Adds a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Adds a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).matrix_dims()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 {
            return Err(dim_err!("matmul needs matrices, got {:?} x {:?}", av.shape(), bv.shape()));
        }
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let (k2, n) = (bv.shape()[0], bv.shape()[1]);
        if k != k2 {
            return Err(dim_err!("matmul inner dims {} vs {}", k, k2));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(dim_err!(
                "{} shape mismatch {:?} vs {:?}",
                what,
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f32, f32) -> f32) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "minimum")?;
        self.zip_with(a, b, Op::Minimum(a, b), f32::min)
    }

    fn row_op(&mut self, a: Var, row: Var, mul: bool) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if self.value(row).len() != n {
            return Err(dim_err!("row operand has {} values, matrix has {} columns", self.value(row).len(), n));
        }
        let (av, rv) = (self.value(a), self.value(row).data());
        let mut data = av.data().to_vec();
        for i in 0..m {
            for (x, &r) in data[i * n..(i + 1) * n].iter_mut().zip(rv) {
                if mul {
                    *x *= r;
                } else {
                    *x += r;
                }
            }
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, row]);
        let op = if mul { Op::MulRow(a, row) } else { Op::AddRow(a, row) };
        Ok(self.push(t, op, rg))
    }

    /// Adds a length-`n` row vector to every row of an `[m,n]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.row_op(a, bias, false)
    }

    /// Multiplies every row of an `[m,n]` matrix elementwise by a length-`n` vector.
    pub fn mul_row(&mut self, a: Var, scale: Var) -> Result<Var> {
        self.row_op(a, scale, true)
    }

    /// `a * scale + shift`.
    pub fn affine(&mut self, a: Var, scale: f32, shift: f32) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x * scale + shift).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Affine(a, scale), rg))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Result<Var> {
        self.affine(a, s, 0.0)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| activate(kind, x)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Act(a, kind), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    /// Natural log with inputs clamped below at [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x.max(LOG_FLOOR).ln()).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Log(a), rg))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x.exp()).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Exp(a), rg))
    }

    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x.clamp(lo, hi)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Clamp(a, lo, hi), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Picks rows of `a` (rank 1 or 2) by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, index: &Index) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let av = self.value(a);
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index.iter() {
            if i >= m {
                return Err(Error::Index(format!("row {} of {}", i, m)));
            }
            data.extend_from_slice(&av.data()[i * n..(i + 1) * n]);
        }
        let shape = if av.shape().len() == 1 { vec![index.len()] } else { vec![index.len(), n] };
        let t = Tensor::new(shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::GatherRows(a, index.clone()), rg))
    }

    /// Per-segment row sum or mean. Empty segments produce zero rows.
    pub fn segment_aggregate(
        &mut self,
        values: Var,
        segments: &Index,
        n_segments: usize,
        mode: Aggregate,
    ) -> Result<Var> {
        let (e, d) = self.dims(values)?;
        if segments.len() != e {
            return Err(dim_err!("{} segment ids for {} rows", segments.len(), e));
        }
        let mut counts = vec![0usize; n_segments];
        for &s in segments.iter() {
            if s >= n_segments {
                return Err(Error::Index(format!("segment {} of {}", s, n_segments)));
            }
            counts[s] += 1;
        }
        let vv = self.value(values).data();
        let mut out = vec![0.0f32; n_segments * d];
        for (r, &s) in segments.iter().enumerate() {
            let src = &vv[r * d..(r + 1) * d];
            for (o, &x) in out[s * d..(s + 1) * d].iter_mut().zip(src) {
                *o += x;
            }
        }
        if mode == Aggregate::Mean {
            for (s, &c) in counts.iter().enumerate() {
                if c > 0 {
                    let inv = 1.0 / c as f32;
                    out[s * d..(s + 1) * d].iter_mut().for_each(|x| *x *= inv);
                }
            }
        }
        let shape = if self.value(values).shape().len() == 1 { vec![n_segments] } else { vec![n_segments, d] };
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(&[values]);
        Ok(self.push(
            t,
            Op::SegmentAggregate { input: values, segments: segments.clone(), counts, mode },
            rg,
        ))
    }

    /// Scales row `r` of `a: [E,d]` by `w[r]`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (e, d) = self.dims(a)?;
        if self.value(w).len() != e {
            return Err(dim_err!("{} row weights for {} rows", self.value(w).len(), e));
        }
        let (av, wv) = (self.value(a), self.value(w).data());
        let mut data = av.data().to_vec();
        for (r, &s) in wv.iter().enumerate() {
            data[r * d..(r + 1) * d].iter_mut().for_each(|x| *x *= s);
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, w]);
        Ok(self.push(t, Op::ScaleRows(a, w), rg))
    }

    /// Softmax of a flat vector within each segment (max-shifted).
    pub fn segment_softmax(&mut self, a: Var, segments: &Index, n_segments: usize) -> Result<Var> {
        let av = self.value(a);
        if segments.len() != av.len() {
            return Err(dim_err!("{} segment ids for {} values", segments.len(), av.len()));
        }
        let mut max = vec![f32::NEG_INFINITY; n_segments];
        for (&x, &s) in av.data().iter().zip(segments.iter()) {
            if s >= n_segments {
                return Err(Error::Index(format!("segment {} of {}", s, n_segments)));
            }
            max[s] = max[s].max(x);
        }
        let mut data: Vec<f32> = av.data().iter().zip(segments.iter()).map(|(&x, &s)| (x - max[s]).exp()).collect();
        let mut sums = vec![0.0f32; n_segments];
        for (&y, &s) in data.iter().zip(segments.iter()) {
            sums[s] += y;
        }
        for (y, &s) in data.iter_mut().zip(segments.iter()) {
            *y /= sums[s];
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::SegmentSoftmax { input: a, segments: segments.clone() }, rg))
    }

    /// Softmax over all entries of `a`.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(dim_err!("softmax of empty input"));
        }
        let seg: Index = vec![0usize; n].into();
        self.segment_softmax(a, &seg, 1)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len().max(1);
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f32)
    }

    /// `-sum(target * log(max(pred, floor)))` for a single distribution pair.
    pub fn cross_entropy(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let n = self.value(pred).len();
        if target.len() != n {
            return Err(dim_err!("cross-entropy over {} vs {} entries", n, target.len()));
        }
        check_distribution(self.value(pred).data(), "prediction")?;
        check_distribution(target.data(), "target")?;
        Ok(self.cross_entropy_unchecked(pred, target.data().to_vec()))
    }

    /// Summed cross-entropy over independent segments of a flat prediction.
    /// A segment whose target is all zero is masked out of the loss.
    pub fn cross_entropy_segments(
        &mut self,
        pred: Var,
        target: &[f32],
        segments: &Index,
        n_segments: usize,
    ) -> Result<Var> {
        let pv = self.value(pred).data();
        if target.len() != pv.len() || segments.len() != pv.len() {
            return Err(dim_err!("cross-entropy segment layout mismatch"));
        }
        let mut psum = vec![0.0f64; n_segments];
        let mut tsum = vec![0.0f64; n_segments];
        for ((&p, &t), &s) in pv.iter().zip(target).zip(segments.iter()) {
            if s >= n_segments {
                return Err(Error::Index(format!("segment {} of {}", s, n_segments)));
            }
            if p < 0.0 || t < 0.0 {
                return Err(Error::Contract("negative probability".into()));
            }
            psum[s] += p as f64;
            tsum[s] += t as f64;
        }
        for s in 0..n_segments {
            if tsum[s] != 0.0 && ((tsum[s] - 1.0).abs() > 1e-5 || (psum[s] - 1.0).abs() > 1e-5) {
                return Err(Error::Contract(format!("segment {} is not a distribution", s)));
            }
        }
        Ok(self.cross_entropy_unchecked(pred, target.to_vec()))
    }

    fn cross_entropy_unchecked(&mut self, pred: Var, target: Vec<f32>) -> Var {
        let pv = self.value(pred).data();
        let loss: f32 = -pv
            .iter()
            .zip(&target)
            .filter(|(_, &t)| t != 0.0)
            .map(|(&p, &t)| t * p.max(LOG_FLOOR).ln())
            .sum::<f32>();
        let rg = self.rg(&[pred]);
        self.push(Tensor::scalar(loss), Op::CrossEntropy { pred, target }, rg)
    }

    /// Populates gradients of the scalar `loss` with respect to every node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient from the last `backward`; zeros for nodes the loss does not reach.
    pub fn grad(&self, v: Var) -> Tensor {
        let shape = self.value(v).shape().to_vec();
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    fn backprop_node(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.requires_grad(*a) {
                    let ga = self.acc(grads, *a);
                    gemm_nt_acc(g, bv.data(), ga, m, n, k);
                }
                if self.requires_grad(*b) {
                    let gb = self.acc(grads, *b);
                    gemm_tn_acc(av.data(), g, gb, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0f32), (*b, 1.0)] {
                    if self.requires_grad(v) {
                        self.acc(grads, v).iter_mut().zip(g).for_each(|(x, &y)| *x += sign * y);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0f32), (*b, -1.0)] {
                    if self.requires_grad(v) {
                        self.acc(grads, v).iter_mut().zip(g).for_each(|(x, &y)| *x += sign * y);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let bv = self.value(*b).data();
                    let ga = self.acc(grads, *a);
                    for ((x, &gy), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gy * o;
                    }
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).data();
                    let gb = self.acc(grads, *b);
                    for ((x, &gy), &o) in gb.iter_mut().zip(g).zip(av) {
                        *x += gy * o;
                    }
                }
            }
            Op::AddRow(a, row) => {
                let n = self.value(*row).len();
                if self.requires_grad(*a) {
                    self.acc(grads, *a).iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if self.requires_grad(*row) {
                    let gr = self.acc(grads, *row);
                    for chunk in g.chunks(n) {
                        gr.iter_mut().zip(chunk).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::MulRow(a, row) => {
                let n = self.value(*row).len();
                let rv = self.value(*row).data();
                if self.requires_grad(*a) {
                    let ga = self.acc(grads, *a);
                    for (gchunk, achunk) in g.chunks(n).zip(ga.chunks_mut(n)) {
                        for ((x, &gy), &r) in achunk.iter_mut().zip(gchunk).zip(rv) {
                            *x += gy * r;
                        }
                    }
                }
                if self.requires_grad(*row) {
                    let av = self.value(*a).data();
                    let gr = self.acc(grads, *row);
                    for (gchunk, achunk) in g.chunks(n).zip(av.chunks(n)) {
                        for ((x, &gy), &v) in gr.iter_mut().zip(gchunk).zip(achunk) {
                            *x += gy * v;
                        }
                    }
                }
            }
            Op::Affine(a, s) => {
                self.acc(grads, *a).iter_mut().zip(g).for_each(|(x, &y)| *x += s * y);
            }
            Op::Act(a, kind) => {
                let av = self.value(*a).data();
                let ga = self.acc(grads, *a);
                for (((x, &gy), &inp), &o) in ga.iter_mut().zip(g).zip(av).zip(out) {
                    *x += gy * activation_grad(*kind, inp, o);
                }
            }
            Op::Log(a) => {
                let av = self.value(*a).data();
                let ga = self.acc(grads, *a);
                for ((x, &gy), &inp) in ga.iter_mut().zip(g).zip(av) {
                    if inp > LOG_FLOOR {
                        *x += gy / inp;
                    }
                }
            }
            Op::Exp(a) => {
                let ga = self.acc(grads, *a);
                for ((x, &gy), &o) in ga.iter_mut().zip(g).zip(out) {
                    *x += gy * o;
                }
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a).data();
                let ga = self.acc(grads, *a);
                for ((x, &gy), &inp) in ga.iter_mut().zip(g).zip(av) {
                    if inp > *lo && inp < *hi {
                        *x += gy;
                    }
                }
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let take_a: Vec<bool> = av.iter().zip(bv).map(|(x, y)| x <= y).collect();
                if self.requires_grad(*a) {
                    let ga = self.acc(grads, *a);
                    for ((x, &gy), &t) in ga.iter_mut().zip(g).zip(&take_a) {
                        if t {
                            *x += gy;
                        }
                    }
                }
                if self.requires_grad(*b) {
                    let gb = self.acc(grads, *b);
                    for ((x, &gy), &t) in gb.iter_mut().zip(g).zip(&take_a) {
                        if !t {
                            *x += gy;
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                self.acc(grads, *a).iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
            Op::GatherRows(a, index) => {
                let (_, n) = self.dims(*a)?;
                let ga = self.acc(grads, *a);
                for (r, &src) in index.iter().enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    ga[src * n..(src + 1) * n].iter_mut().zip(gr).for_each(|(x, &y)| *x += y);
                }
            }
            Op::SegmentAggregate { input, segments, counts, mode } => {
                let (_, d) = self.dims(*input)?;
                let gi = self.acc(grads, *input);
                for (r, &s) in segments.iter().enumerate() {
                    let w = match mode {
                        Aggregate::Sum => 1.0,
                        Aggregate::Mean => 1.0 / counts[s] as f32,
                    };
                    let gs = &g[s * d..(s + 1) * d];
                    gi[r * d..(r + 1) * d].iter_mut().zip(gs).for_each(|(x, &y)| *x += w * y);
                }
            }
            Op::ScaleRows(a, w) => {
                let (_, d) = self.dims(*a)?;
                let wv = self.value(*w).data();
                if self.requires_grad(*a) {
                    let ga = self.acc(grads, *a);
                    for (r, &s) in wv.iter().enumerate() {
                        ga[r * d..(r + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(x, &y)| *x += s * y);
                    }
                }
                if self.requires_grad(*w) {
                    let av = self.value(*a).data();
                    let gw = self.acc(grads, *w);
                    for (r, x) in gw.iter_mut().enumerate() {
                        let dot: f32 = av[r * d..(r + 1) * d].iter().zip(&g[r * d..(r + 1) * d]).map(|(p, q)| p * q).sum();
                        *x += dot;
                    }
                }
            }
            Op::SegmentSoftmax { input, segments } => {
                let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
                let mut dots = vec![0.0f32; n_seg];
                for ((&y, &gy), &s) in out.iter().zip(g).zip(segments.iter()) {
                    dots[s] += y * gy;
                }
                let gi = self.acc(grads, *input);
                for (((x, &y), &gy), &s) in gi.iter_mut().zip(out).zip(g).zip(segments.iter()) {
                    *x += y * (gy - dots[s]);
                }
            }
            Op::Sum(a) => {
                let gs = g[0];
                self.acc(grads, *a).iter_mut().for_each(|x| *x += gs);
            }
            Op::CrossEntropy { pred, target } => {
                let gs = g[0];
                let pv = self.value(*pred).data();
                let gp = self.acc(grads, *pred);
                for ((x, &p), &t) in gp.iter_mut().zip(pv).zip(target) {
                    if t != 0.0 && p > LOG_FLOOR {
                        *x -= gs * t / p;
                    }
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::mut_from_ref)]
    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f32>>], v: Var) -> &'g mut [f32] {
        let n = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

fn activate(kind: Activation, x: f32) -> f32 {
    match kind {
        Activation::Relu => x.max(0.0),
        Activation::Sigmoid => {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::LeakyRelu(slope) => {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        }
    }
}

fn activation_grad(kind: Activation, x: f32, y: f32) -> f32 {
    match kind {
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Sigmoid => y * (1.0 - y),
        Activation::Tanh => 1.0 - y * y,
        Activation::LeakyRelu(slope) => {
            if x > 0.0 {
                1.0
            } else {
                slope
            }
        }
    }
}

fn check_distribution(values: &[f32], what: &str) -> Result<()> {
    if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Contract(format!("{} has negative or non-finite entries", what)));
    }
    let s: f64 = values.iter().map(|&v| v as f64).sum();
    if (s - 1.0).abs() > 1e-5 {
        return Err(Error::Contract(format!("{} sums to {}", what, s)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f32]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut t = Tape::new();
        let i2 = t.constant(Tensor::identity(2));
        let m = t.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let c = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = t.constant(mat(&[&[1.0, 2.0]]));
        let b = t.constant(mat(&[&[3.0], &[4.0]]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[11.0]);

        let z = t.constant(mat(&[&[0.0, 0.0]]));
        let any = t.constant(mat(&[&[5.0, -1.0, 2.0], &[7.0, 3.0, 9.0]]));
        let c = t.matmul(z, any).unwrap();
        assert_eq!(t.value(c).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(t.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn activation_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
        let z = t.constant(Tensor::vector(vec![0.0]));
        let s = t.sigmoid(z).unwrap();
        assert_eq!(t.value(s).data(), &[0.5]);
        let th = t.tanh(z).unwrap();
        assert_eq!(t.value(th).data(), &[0.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = t.softmax(x).unwrap();
        for &v in t.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let x = t.constant(Tensor::vector(vec![2f32.ln(), 0.0]));
        let y = t.softmax(x).unwrap();
        assert!((t.value(y).data()[0] - 2.0 / 3.0).abs() < 1e-6);
        assert!((t.value(y).data()[1] - 1.0 / 3.0).abs() < 1e-6);
        let x = t.constant(Tensor::vector(vec![1000.0, 0.0]));
        let y = t.softmax(x).unwrap();
        assert!(t.value(y).all_finite());
        assert!((t.value(y).data()[0] - 1.0).abs() < 1e-6);
        assert!(t.value(y).data()[1] < 1e-6);

        let e = t.constant(Tensor::vector(vec![]));
        assert!(matches!(t.softmax(e), Err(Error::Dimension(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::vector(vec![1.0 / 3.0; 3]));
        let l = t.cross_entropy(p, &Tensor::vector(vec![1.0, 0.0, 0.0])).unwrap();
        assert!((t.value(l).data()[0] - 3f32.ln()).abs() < 1e-5);

        let p = t.constant(Tensor::vector(vec![1.0, 0.0]));
        let l = t.cross_entropy(p, &Tensor::vector(vec![1.0, 0.0])).unwrap();
        assert!(t.value(l).data()[0].abs() < 1e-6);

        let p = t.constant(Tensor::vector(vec![0.5, 0.5]));
        let l = t.cross_entropy(p, &Tensor::vector(vec![0.0, 1.0])).unwrap();
        assert!((t.value(l).data()[0] - 2f32.ln()).abs() < 1e-6);

        // confidently wrong stays finite thanks to the log floor
        let p = t.constant(Tensor::vector(vec![1.0, 0.0]));
        let l = t.cross_entropy(p, &Tensor::vector(vec![0.0, 1.0])).unwrap();
        assert!(t.value(l).all_finite());

        let bad = t.constant(Tensor::vector(vec![0.7, 0.7]));
        assert!(matches!(
            t.cross_entropy(bad, &Tensor::vector(vec![1.0, 0.0])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn segment_aggregate_examples() {
        let seg: Index = vec![0, 0, 1].into();
        let mut t = Tape::new();
        let v = t.constant(Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let s = t.segment_aggregate(v, &seg, 2, Aggregate::Sum).unwrap();
        assert_eq!(t.value(s).data(), &[3.0, 3.0]);
        let m = t.segment_aggregate(v, &seg, 2, Aggregate::Mean).unwrap();
        assert_eq!(t.value(m).data(), &[1.5, 3.0]);
        let e = t.segment_aggregate(v, &seg, 3, Aggregate::Mean).unwrap();
        assert_eq!(t.value(e).data(), &[1.5, 3.0, 0.0]);
        let bad: Index = vec![0, 5, 1].into();
        assert!(matches!(t.segment_aggregate(v, &bad, 2, Aggregate::Sum), Err(Error::Index(_))));
    }

    #[test]
    fn backward_examples() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).data(), &[6.0]);

        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(0.0));
        let y = t.sigmoid(x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).data(), &[0.25]);

        let mut t = Tape::new();
        let x = t.param(Tensor::zeros(&[2]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_gives_zero_for_unused_params() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(2.0));
        let unused = t.param(Tensor::vector(vec![1.0, 1.0]));
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn shared_inputs_accumulate() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(2.0));
        let a = t.scale(x, 3.0).unwrap();
        let b = t.add(a, x).unwrap();
        t.backward(b).unwrap();
        assert_eq!(t.grad(x).data(), &[4.0]);
    }
}
