use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batch::GraphBatch;
use super::layers::{attention_layer, gated_layer, gcn_layer, sage_layer, GruVars};
use super::params::{Architecture, PolicyParams, ORIENTATIONS, TRAY_OPS};
use crate::error::{dim_err, Error, Result};
use crate::numerics::{argmax, Aggregate, Index, Tape, Tensor, Var};
use crate::scenegraph::SceneGraph;
use crate::worlds::{ActionTuple, TrayOp};

/// Policy weights placed on a tape, addressable by name.
pub struct Bound<'a> {
    params: &'a PolicyParams,
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    /// `trainable` leaves receive gradients; otherwise they are constants.
    pub fn new(tape: &mut Tape, params: &'a PolicyParams, trainable: bool) -> Self {
        let vars = params
            .params
            .values()
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Self { params, vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.params
            .params
            .index_of(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Format(format!("missing parameter {}", name)))
    }
}

/// Tape handles for every head of a batched forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOut {
    /// Flat per-object probabilities, softmax-normalized within each graph.
    pub p_object: Var,
    pub p_goal: Var,
    /// `[graphs * 6]`, normalized per graph.
    pub p_orientation: Option<Var>,
    /// `[graphs * 3]` over (toggle top, toggle bottom, no-op).
    pub p_tray: Option<Var>,
    /// `[graphs]` state-value estimates.
    pub value: Var,
    /// Final node embeddings, `[nodes, width]`.
    pub embeddings: Var,
}

fn linear(tape: &mut Tape, bound: &Bound, x: Var, name: &str) -> Result<Var> {
    let w = bound.get(&format!("{name}.w"))?;
    let b = bound.get(&format!("{name}.b"))?;
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn repeat_index(n: usize, each: usize) -> Index {
    (0..n * each).map(|i| i / each).collect::<Vec<_>>().into()
}

fn pooled_head(tape: &mut Tape, bound: &Bound, pooled: Var, name: &str, n: usize, width: usize) -> Result<Var> {
    let logits = linear(tape, bound, pooled, name)?;
    let flat = tape.reshape(logits, vec![n * width])?;
    tape.segment_softmax(flat, &repeat_index(n, width), n)
}

/// Runs the policy over a batch. `features` must hold `batch.features` (possibly masked);
/// `edge_weight`, if given, scales every message along the corresponding edge.
pub fn forward(
    tape: &mut Tape,
    bound: &Bound,
    batch: &GraphBatch,
    features: Var,
    edge_weight: Option<Var>,
) -> Result<ForwardOut> {
    let config = &bound.params.config;
    let d = tape.value(features).shape().get(1).copied().unwrap_or(0);
    if d != config.feature_width {
        return Err(dim_err!("feature width {} for a policy built for {}", d, config.feature_width));
    }
    let w = config.hidden_width;
    let n_graphs = batch.n_graphs;
    if config.architecture == Architecture::Mlp {
        return mlp_forward(tape, bound, batch, features);
    }
    let mut h = features;
    if config.architecture == Architecture::Gated {
        let mut pad = Tensor::zeros(&[d, w]);
        for i in 0..d {
            pad.data_mut()[i * w + i] = 1.0;
        }
        let pad = tape.constant(pad);
        h = tape.matmul(h, pad)?;
    }
    for l in 0..config.hidden_layers {
        let p = |s: &str| bound.get(&format!("l{l}.{s}"));
        h = match config.architecture {
            Architecture::Gcn => gcn_layer(tape, h, &batch.edges, edge_weight, p("theta1")?, p("bias")?, p("theta2")?)?,
            Architecture::Sage => sage_layer(tape, h, &batch.edges, edge_weight, p("theta1")?, p("bias")?, p("theta2")?)?,
            Architecture::Attention => {
                attention_layer(
                    tape,
                    h,
                    &batch.edges,
                    edge_weight,
                    p("theta1")?,
                    p("bias")?,
                    p("theta2")?,
                    p("a_src")?,
                    p("a_dst")?,
                )?
                .0
            }
            Architecture::Gated => {
                let gru = GruVars {
                    w_z: p("w_z")?,
                    u_z: p("u_z")?,
                    b_z: p("b_z")?,
                    w_r: p("w_r")?,
                    u_r: p("u_r")?,
                    b_r: p("b_r")?,
                    w_n: p("w_n")?,
                    u_n: p("u_n")?,
                    b_n: p("b_n")?,
                };
                gated_layer(tape, h, &batch.edges, edge_weight, p("theta1")?, &gru)?
            }
            Architecture::Mlp => unreachable!(),
        };
    }
    let node_head = |tape: &mut Tape, nodes: &Index, graph: &Index, name: &str| -> Result<Var> {
        let rows = tape.gather_rows(h, nodes)?;
        let s = linear(tape, bound, rows, name)?;
        let s = tape.reshape(s, vec![nodes.len()])?;
        tape.segment_softmax(s, graph, n_graphs)
    };
    let p_object = node_head(tape, &batch.object_nodes, &batch.object_graph, "head.object")?;
    let p_goal = node_head(tape, &batch.goal_nodes, &batch.goal_graph, "head.goal")?;
    let pooled = tape.segment_aggregate(h, &batch.node_graph, n_graphs, Aggregate::Mean)?;
    graph_heads(tape, bound, pooled, n_graphs, p_object, p_goal, h)
}

fn graph_heads(
    tape: &mut Tape,
    bound: &Bound,
    pooled: Var,
    n_graphs: usize,
    p_object: Var,
    p_goal: Var,
    embeddings: Var,
) -> Result<ForwardOut> {
    let config = &bound.params.config;
    let p_orientation = if config.orientation_head {
        Some(pooled_head(tape, bound, pooled, "head.orientation", n_graphs, ORIENTATIONS)?)
    } else {
        None
    };
    let p_tray =
        if config.tray_head { Some(pooled_head(tape, bound, pooled, "head.tray", n_graphs, TRAY_OPS)?) } else { None };
    let v = linear(tape, bound, pooled, "head.value")?;
    let value = tape.reshape(v, vec![n_graphs])?;
    Ok(ForwardOut { p_object, p_goal, p_orientation, p_tray, value, embeddings })
}

fn mlp_forward(tape: &mut Tape, bound: &Bound, batch: &GraphBatch, features: Var) -> Result<ForwardOut> {
    let config = &bound.params.config;
    let (k, l) = (config.mlp_objects, config.mlp_goals);
    match batch.uniform_counts() {
        Some(c) if c == (k, l) => {}
        _ => {
            return Err(dim_err!("MLP built for {} objects and {} goals", k, l));
        }
    }
    let n = batch.n_graphs;
    let mut h = tape.reshape(features, vec![n, (k + l) * config.feature_width])?;
    for i in 0..config.hidden_layers {
        let z = linear(tape, bound, h, &format!("l{i}"))?;
        h = tape.relu(z)?;
    }
    let head = |tape: &mut Tape, name: &str, width: usize| -> Result<Var> {
        let logits = linear(tape, bound, h, name)?;
        let flat = tape.reshape(logits, vec![n * width])?;
        tape.segment_softmax(flat, &repeat_index(n, width), n)
    };
    let p_object = head(tape, "head.object", k)?;
    let p_goal = head(tape, "head.goal", l)?;
    graph_heads(tape, bound, h, n, p_object, p_goal, h)
}

/// Concrete per-head probabilities for one graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionDistributions {
    pub p_object: Vec<f32>,
    pub p_goal: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_orientation: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_tray: Option<Vec<f32>>,
}

/// Splits a batched forward pass into per-graph distributions.
pub fn distributions(tape: &Tape, out: &ForwardOut, batch: &GraphBatch) -> Vec<ActionDistributions> {
    let po = tape.value(out.p_object).data();
    let pg = tape.value(out.p_goal).data();
    let fixed = |v: Option<Var>, b: usize, w: usize| v.map(|v| tape.value(v).data()[b * w..(b + 1) * w].to_vec());
    (0..batch.n_graphs)
        .map(|b| {
            ActionDistributions {
                p_object: po[batch.objects_in(b)].to_vec(),
                p_goal: pg[batch.goals_in(b)].to_vec(),
                p_orientation: fixed(out.p_orientation, b, ORIENTATIONS),
                p_tray: fixed(out.p_tray, b, TRAY_OPS),
            }
        })
        .collect()
}

/// Action distributions for many graphs in one batched pass.
pub fn policy_forward_batch(graphs: &[&SceneGraph], params: &PolicyParams) -> Result<Vec<ActionDistributions>> {
    let batch = GraphBatch::new(graphs)?;
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, false);
    let x = tape.constant(batch.features.clone());
    let out = forward(&mut tape, &bound, &batch, x, None)?;
    Ok(distributions(&tape, &out, &batch))
}

pub fn policy_forward(graph: &SceneGraph, params: &PolicyParams) -> Result<ActionDistributions> {
    Ok(policy_forward_batch(&[graph], params)?.remove(0))
}

/// Value estimates for many graphs.
pub fn value_batch(graphs: &[&SceneGraph], params: &PolicyParams) -> Result<Vec<f32>> {
    let batch = GraphBatch::new(graphs)?;
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, false);
    let x = tape.constant(batch.features.clone());
    let out = forward(&mut tape, &bound, &batch, x, None)?;
    Ok(tape.value(out.value).data().to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    Argmax,
    Sample,
}

fn sample(p: &[f32], rng: &mut impl Rng) -> usize {
    let u: f32 = rng.gen();
    let mut acc = 0.0;
    for (i, &q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&q| q > 0.0).unwrap_or(0)
}

/// Greedy or sampled action; argmax ties go to the lowest index.
pub fn select_action(dists: &ActionDistributions, mode: SelectMode, rng: &mut impl Rng) -> ActionTuple {
    let mut pick = |p: &[f32]| match mode {
        SelectMode::Argmax => argmax(p).unwrap_or(0),
        SelectMode::Sample => sample(p, rng),
    };
    let object = pick(&dists.p_object);
    let goal = pick(&dists.p_goal);
    let orientation = dists.p_orientation.as_deref().map(|p| pick(p) as u8);
    let tray_op = dists.p_tray.as_deref().map(|p| TrayOp::from_index(pick(p)).unwrap_or(TrayOp::NoOp));
    ActionTuple { object, goal, orientation, tray_op }
}

/// Log-probability of `action` under `dists`, summing the heads the action uses.
pub fn action_log_prob(dists: &ActionDistributions, action: &ActionTuple) -> f32 {
    let ln = |p: &[f32], i: usize| p.get(i).copied().unwrap_or(0.0).max(crate::numerics::LOG_FLOOR).ln();
    let mut lp = 0.0;
    if let Some(pt) = &dists.p_tray {
        lp += ln(pt, action.tray_op.unwrap_or(TrayOp::NoOp).index());
        if action.toggle().is_some() {
            return lp;
        }
    }
    lp += ln(&dists.p_object, action.object) + ln(&dists.p_goal, action.goal);
    if let (Some(po), Some(o)) = (&dists.p_orientation, action.orientation) {
        lp += ln(po, o as usize);
    }
    lp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::GnnConfig;
    use crate::scenegraph::encode_scene;
    use crate::worlds::{reset, Preference, WorldSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dists(p_object: Vec<f32>) -> ActionDistributions {
        ActionDistributions { p_object, p_goal: vec![1.0], p_orientation: None, p_tray: None }
    }

    #[test]
    fn argmax_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&dists(vec![0.1, 0.7, 0.2]), SelectMode::Argmax, &mut rng).object, 1);
        assert_eq!(select_action(&dists(vec![0.5, 0.5]), SelectMode::Argmax, &mut rng).object, 0);
    }

    #[test]
    fn seeded_sampling_reproduces() {
        let d = dists(vec![0.2, 0.3, 0.5]);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| select_action(&d, SelectMode::Sample, &mut rng).object).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert!(run(9).iter().any(|&o| o != 2));
    }

    #[test]
    fn zero_heads_are_uniform() {
        let g = encode_scene(&reset(&WorldSpec::kblock(3, 0)).unwrap()).unwrap();
        for arch in Architecture::GNNS {
            let mut p = PolicyParams::init(GnnConfig::new(arch), 1).unwrap();
            p.zero_heads();
            let d = policy_forward(&g, &p).unwrap();
            assert_eq!(d.p_object.len(), 3);
            assert_eq!(d.p_goal.len(), 3);
            for &v in d.p_object.iter().chain(&d.p_goal) {
                assert!((v - 1.0 / 3.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mlp_size_is_fixed() {
        let g3 = encode_scene(&reset(&WorldSpec::kblock(3, 0)).unwrap()).unwrap();
        let g4 = encode_scene(&reset(&WorldSpec::kblock(4, 0)).unwrap()).unwrap();
        let mut p = PolicyParams::init(GnnConfig::mlp(3, 3, 5), 0).unwrap();
        assert_eq!(policy_forward(&g3, &p).unwrap(), policy_forward(&g3, &p).unwrap());
        assert!(matches!(policy_forward(&g4, &p), Err(Error::Dimension(_))));
        p.zero_heads();
        let d = policy_forward(&g3, &p).unwrap();
        assert!(d.p_object.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-6));
    }

    #[test]
    fn dishwasher_heads() {
        let g = encode_scene(&reset(&WorldSpec::dishwasher(Preference::TopBottom, 10, 0)).unwrap()).unwrap();
        let p = PolicyParams::init(GnnConfig::dishwasher(Architecture::Attention), 0).unwrap();
        let d = policy_forward(&g, &p).unwrap();
        assert_eq!(d.p_orientation.as_ref().unwrap().len(), 6);
        assert_eq!(d.p_tray.as_ref().unwrap().len(), 3);
        assert!((d.p_tray.unwrap().iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn batch_matches_single() {
        let a = encode_scene(&reset(&WorldSpec::kblock(3, 0)).unwrap()).unwrap();
        let b = encode_scene(&reset(&WorldSpec::kblock(5, 1)).unwrap()).unwrap();
        for arch in Architecture::GNNS {
            let p = PolicyParams::init(GnnConfig::new(arch), 2).unwrap();
            let both = policy_forward_batch(&[&a, &b], &p).unwrap();
            for (g, d) in [&a, &b].iter().zip(&both) {
                let single = policy_forward(g, &p).unwrap();
                for (x, y) in single.p_object.iter().zip(&d.p_object) {
                    assert!((x - y).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn empty_head_is_an_error() {
        let mut g = encode_scene(&reset(&WorldSpec::kblock(1, 0)).unwrap()).unwrap();
        g.n_goals = 0;
        g.n_objects = 2;
        let p = PolicyParams::init(GnnConfig::new(Architecture::Sage), 0).unwrap();
        assert!(matches!(policy_forward(&g, &p), Err(Error::EmptyHead("goal"))));
    }
}
