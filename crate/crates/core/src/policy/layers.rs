//! Message-passing layers. Node features are rows; weights multiply from the right.

use crate::error::Result;
use crate::numerics::{Activation, Aggregate, Index, Tape, Var};

/// Directed edges of a (possibly batched) graph.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    pub src: Index,
    pub dst: Index,
    pub n_nodes: usize,
}

impl EdgeIndex {
    pub fn new(edges: &[(usize, usize)], n_nodes: usize) -> Self {
        Self {
            src: edges.iter().map(|e| e.0).collect(),
            dst: edges.iter().map(|e| e.1).collect(),
            n_nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Per-edge source rows of `x`, optionally scaled by `edge_weight`, summed or averaged per target.
fn propagate(tape: &mut Tape, x: Var, edges: &EdgeIndex, edge_weight: Option<Var>, mode: Aggregate) -> Result<Var> {
    let mut msg = tape.gather_rows(x, &edges.src)?;
    if let Some(w) = edge_weight {
        msg = tape.scale_rows(msg, w)?;
    }
    tape.segment_aggregate(msg, &edges.dst, edges.n_nodes, mode)
}

/// `h' = ReLU(h θ1 + b + (Σ_j e_ji h_j) θ2)`.
pub fn gcn_layer(
    tape: &mut Tape,
    h: Var,
    edges: &EdgeIndex,
    edge_weight: Option<Var>,
    theta1: Var,
    bias: Var,
    theta2: Var,
) -> Result<Var> {
    isotropic(tape, h, edges, edge_weight, theta1, bias, theta2, Aggregate::Sum)
}

/// `h' = ReLU(h θ1 + b + mean_j(h_j) θ2)`.
pub fn sage_layer(
    tape: &mut Tape,
    h: Var,
    edges: &EdgeIndex,
    edge_weight: Option<Var>,
    theta1: Var,
    bias: Var,
    theta2: Var,
) -> Result<Var> {
    isotropic(tape, h, edges, edge_weight, theta1, bias, theta2, Aggregate::Mean)
}

#[allow(clippy::too_many_arguments)]
fn isotropic(
    tape: &mut Tape,
    h: Var,
    edges: &EdgeIndex,
    edge_weight: Option<Var>,
    theta1: Var,
    bias: Var,
    theta2: Var,
    mode: Aggregate,
) -> Result<Var> {
    let own = tape.matmul(h, theta1)?;
    let own = tape.add_row(own, bias)?;
    let agg = propagate(tape, h, edges, edge_weight, mode)?;
    let nb = tape.matmul(agg, theta2)?;
    let pre = tape.add(own, nb)?;
    tape.relu(pre)
}

/// GRU cell parameters; `w_*` act on the message, `u_*` on the previous state.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_n: Var,
    pub u_n: Var,
    pub b_n: Var,
}

/// GRU update with `m = Σ_j h_j θ1` as input and `h` as state:
/// `z = σ(m W_z + h U_z + b_z)`, `r = σ(m W_r + h U_r + b_r)`,
/// `n = tanh(m W_n + r ⊙ (h U_n) + b_n)`, `h' = (1 − z) ⊙ h + z ⊙ n`.
pub fn gated_layer(
    tape: &mut Tape,
    h: Var,
    edges: &EdgeIndex,
    edge_weight: Option<Var>,
    theta1: Var,
    gru: &GruVars,
) -> Result<Var> {
    let t = tape.matmul(h, theta1)?;
    let m = propagate(tape, t, edges, edge_weight, Aggregate::Sum)?;
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var, act: Activation| -> Result<Var> {
        let a = tape.matmul(m, w)?;
        let c = tape.matmul(h, u)?;
        let s = tape.add(a, c)?;
        let s = tape.add_row(s, b)?;
        tape.activation(s, act)
    };
    let z = gate(tape, gru.w_z, gru.u_z, gru.b_z, Activation::Sigmoid)?;
    let r = gate(tape, gru.w_r, gru.u_r, gru.b_r, Activation::Sigmoid)?;
    let mn = tape.matmul(m, gru.w_n)?;
    let hn = tape.matmul(h, gru.u_n)?;
    let rhn = tape.mul(r, hn)?;
    let n = tape.add(mn, rhn)?;
    let n = tape.add_row(n, gru.b_n)?;
    let n = tape.tanh(n)?;
    let keep = tape.affine(z, -1.0, 1.0)?;
    let carried = tape.mul(keep, h)?;
    let fresh = tape.mul(z, n)?;
    tape.add(carried, fresh)
}

/// Slope of the LeakyReLU applied to attention scores.
pub const ATTENTION_SLOPE: f32 = 0.2;

/// Single-head attention: `Wh = h θ2`, `e_ij = LeakyReLU(Wh_i·a_dst + Wh_j·a_src)`,
/// `α = softmax_j(e_ij)` over the in-edges of `i`, `h' = ReLU(h θ1 + b + Σ_j α_ij Wh_j)`.
/// `a_src` and `a_dst` are `[width, 1]`. Returns the layer output and the attention weights.
#[allow(clippy::too_many_arguments)]
pub fn attention_layer(
    tape: &mut Tape,
    h: Var,
    edges: &EdgeIndex,
    edge_weight: Option<Var>,
    theta1: Var,
    bias: Var,
    theta2: Var,
    a_src: Var,
    a_dst: Var,
) -> Result<(Var, Var)> {
    let wh = tape.matmul(h, theta2)?;
    let s_src = tape.matmul(wh, a_src)?;
    let s_dst = tape.matmul(wh, a_dst)?;
    let e_src = tape.gather_rows(s_src, &edges.src)?;
    let e_dst = tape.gather_rows(s_dst, &edges.dst)?;
    let e = tape.add(e_src, e_dst)?;
    let e = tape.reshape(e, vec![edges.len()])?;
    let e = tape.activation(e, Activation::LeakyRelu(ATTENTION_SLOPE))?;
    let alpha = tape.segment_softmax(e, &edges.dst, edges.n_nodes)?;
    let weight = match edge_weight {
        Some(w) => tape.mul(alpha, w)?,
        None => alpha,
    };
    let msg = tape.gather_rows(wh, &edges.src)?;
    let msg = tape.scale_rows(msg, weight)?;
    let agg = tape.segment_aggregate(msg, &edges.dst, edges.n_nodes, Aggregate::Sum)?;
    let own = tape.matmul(h, theta1)?;
    let own = tape.add_row(own, bias)?;
    let pre = tape.add(own, agg)?;
    Ok((tape.relu(pre)?, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn t(rows: &[Vec<f32>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn gcn_isolated_node() {
        let mut tape = Tape::new();
        let h = tape.constant(t(&[vec![1.0, 2.0]]));
        let th1 = tape.constant(Tensor::identity(2));
        let b = tape.constant(Tensor::zeros(&[2]));
        let th2 = tape.constant(Tensor::identity(2));
        let out = gcn_layer(&mut tape, h, &EdgeIndex::new(&[], 1), None, th1, b, th2).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0]);
    }

    #[test]
    fn gcn_swaps_neighbors() {
        let mut tape = Tape::new();
        let h = tape.constant(t(&[vec![1.0], vec![3.0]]));
        let th1 = tape.constant(Tensor::zeros(&[1, 1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let th2 = tape.constant(Tensor::identity(1));
        let out = gcn_layer(&mut tape, h, &EdgeIndex::new(&[(0, 1), (1, 0)], 2), None, th1, b, th2).unwrap();
        assert_eq!(tape.value(out).data(), &[3.0, 1.0]);
    }

    #[test]
    fn gcn_without_theta2_is_per_node() {
        let mut tape = Tape::new();
        let h = tape.constant(t(&[vec![1.0, -1.0], vec![0.5, 2.0]]));
        let th1 = tape.constant(t(&[vec![1.0, 2.0], vec![0.5, -1.0]]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let th2 = tape.constant(Tensor::zeros(&[2, 2]));
        let out = gcn_layer(&mut tape, h, &EdgeIndex::new(&[(0, 1), (1, 0)], 2), None, th1, b, th2).unwrap();
        assert_eq!(tape.value(out).data(), &[0.5, 3.0, 1.5, 0.0]);
    }

    #[test]
    fn sage_means_neighbors() {
        let mut tape = Tape::new();
        let h = tape.constant(t(&[vec![1.0], vec![2.0], vec![4.0]]));
        let one = tape.constant(Tensor::identity(1));
        let b = tape.constant(Tensor::zeros(&[1]));
        let out = sage_layer(&mut tape, h, &EdgeIndex::new(&[(1, 0), (2, 0)], 3), None, one, b, one).unwrap();
        assert_eq!(tape.value(out).data(), &[4.0, 2.0, 4.0]);
        let out2 = sage_layer(&mut tape, h, &EdgeIndex::new(&[(2, 0), (1, 0)], 3), None, one, b, one).unwrap();
        assert_eq!(tape.value(out2).data(), tape.value(out).data());
    }

    fn gru_consts(tape: &mut Tape, w: usize, bias: f32) -> GruVars {
        let mut m = || tape.constant(Tensor::zeros(&[w, w]));
        let (w_z, u_z, w_r, u_r, w_n, u_n) = (m(), m(), m(), m(), m(), m());
        let b_z = tape.constant(Tensor::full(&[w], bias));
        let b_r = tape.constant(Tensor::full(&[w], bias));
        let b_n = tape.constant(Tensor::zeros(&[w]));
        GruVars { w_z, u_z, b_z, w_r, u_r, b_r, w_n, u_n, b_n }
    }

    #[test]
    fn gated_zero_weights_halve() {
        let mut tape = Tape::new();
        let h = tape.constant(t(&[vec![2.0, -4.0], vec![1.0, 1.0]]));
        let th = tape.constant(Tensor::zeros(&[2, 2]));
        let gru = gru_consts(&mut tape, 2, 0.0);
        let out = gated_layer(&mut tape, h, &EdgeIndex::new(&[(0, 1), (1, 0)], 2), None, th, &gru).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, -2.0, 0.5, 0.5]);
    }

    #[test]
    fn gated_saturated_gates_carry_state() {
        let mut tape = Tape::new();
        let h = tape.constant(t(&[vec![0.3, -0.7, 1.1]]));
        let th = tape.constant(Tensor::zeros(&[3, 3]));
        let gru = gru_consts(&mut tape, 3, -40.0);
        let out = gated_layer(&mut tape, h, &EdgeIndex::new(&[], 1), None, th, &gru).unwrap();
        for (a, b) in tape.value(out).data().iter().zip([0.3, -0.7, 1.1]) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(tape.value(out).shape(), &[1, 3]);
    }

    fn attention_setup(h: Tensor, edges: &[(usize, usize)]) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let w = h.shape()[1];
        let hv = tape.constant(h);
        let th = tape.constant(Tensor::identity(w));
        let b = tape.constant(Tensor::zeros(&[w]));
        let a = tape.constant(Tensor::full(&[w, 1], 0.3));
        let n = tape.value(hv).shape()[0];
        let (out, alpha) = attention_layer(&mut tape, hv, &EdgeIndex::new(edges, n), None, th, b, th, a, a).unwrap();
        (tape.value(out).clone(), tape.value(alpha).clone())
    }

    #[test]
    fn attention_single_neighbor() {
        let (_, alpha) = attention_setup(t(&[vec![1.0], vec![5.0]]), &[(1, 0)]);
        assert_eq!(alpha.data(), &[1.0]);
    }

    #[test]
    fn attention_identical_neighbors() {
        let (out, alpha) = attention_setup(t(&[vec![1.0], vec![2.0], vec![2.0]]), &[(1, 0), (2, 0)]);
        assert_eq!(alpha.data(), &[0.5, 0.5]);
        assert!((out.data()[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn attention_weights_normalize() {
        let h = t(&[vec![0.1, 0.9], vec![-0.4, 0.2], vec![1.3, -0.8], vec![0.0, 0.5]]);
        let edges = crate::scenegraph::dense_edges(4);
        let (_, alpha) = attention_setup(h, &edges);
        for i in 0..4 {
            let s: f32 = edges.iter().zip(alpha.data()).filter(|(e, _)| e.1 == i).map(|(_, a)| a).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
