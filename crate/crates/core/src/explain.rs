//! Post-hoc explanations of single policy decisions through learned edge and feature masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::episode_seed;
use crate::numerics::{Adam, AdamConfig, Index, ParamSet, Tape, Tensor, Var};
use crate::policy::{
    distributions, forward, policy_forward, select_action, ActionDistributions, Architecture, Bound, ForwardOut,
    GraphBatch, PolicyParams, SelectMode, ORIENTATIONS, TRAY_OPS,
};
use crate::scenegraph::{encode_scene, SceneGraph};
use crate::worlds::{reset, step, SceneState, WorldSpec};

/// Which part of the decision the masks must preserve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainTarget {
    /// Every action head.
    #[default]
    Action,
    Object,
    Goal,
}

impl ExplainTarget {
    /// `y` with the heads outside the target zeroed.
    fn restrict(self, y: &ActionDistributions) -> ActionDistributions {
        let zero = |v: &Vec<f32>| vec![0.0; v.len()];
        match self {
            ExplainTarget::Action => y.clone(),
            ExplainTarget::Object => ActionDistributions {
                p_object: y.p_object.clone(),
                p_goal: zero(&y.p_goal),
                p_orientation: y.p_orientation.as_ref().map(zero),
                p_tray: y.p_tray.as_ref().map(zero),
            },
            ExplainTarget::Goal => ActionDistributions {
                p_object: zero(&y.p_object),
                p_goal: y.p_goal.clone(),
                p_orientation: y.p_orientation.as_ref().map(zero),
                p_tray: y.p_tray.as_ref().map(zero),
            },
        }
    }
}

impl std::str::FromStr for ExplainTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "action" => Ok(Self::Action),
            "object" => Ok(Self::Object),
            "goal" => Ok(Self::Goal),
            _ => Err(Error::Contract(format!("unknown explanation target {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    /// Edges kept in the hardened explanation.
    pub c_e: usize,
    /// Features kept in the hardened explanation.
    pub c_f: usize,
    pub steps: usize,
    pub lr: f32,
    pub edge_sparsity: f32,
    pub feature_sparsity: f32,
    pub seed: u64,
    #[serde(default)]
    pub target: ExplainTarget,
    /// Largest objective change over the last `CONVERGENCE_WINDOW` steps that still counts
    /// as converged.
    pub tolerance: f32,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self { c_e: 3, c_f: 1, steps: 200, lr: 1e-2, edge_sparsity: 0.005, feature_sparsity: 0.1, seed: 0, target: ExplainTarget::Action, tolerance: 1e-3 }
    }
}

pub const CONVERGENCE_WINDOW: usize = 10;

impl ExplainConfig {
    fn validate(&self) -> Result<()> {
        if self.c_e == 0 || self.c_f == 0 {
            return Err(Error::Contract("explanation budgets must be at least 1".into()));
        }
        if self.steps == 0 || self.lr.is_nan() || self.lr <= 0.0 || self.edge_sparsity < 0.0 || self.feature_sparsity < 0.0 {
            return Err(Error::Contract("bad mask optimisation settings".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// Directed `(source, target)` node pairs, aligned with `edge_mask`.
    pub edges: Vec<(usize, usize)>,
    pub edge_mask: Vec<f32>,
    pub feature_mask: Vec<f32>,
    pub feature_names: Vec<String>,
    /// Indices into `edges`, strongest first.
    pub top_edges: Vec<usize>,
    /// Feature indices, strongest first.
    pub top_features: Vec<usize>,
    /// Objective per step, offset so that a perfect reproduction of the original output at
    /// zero mask cost scores 0.
    pub objective: Vec<f32>,
    pub converged: bool,
}

impl Explanation {
    pub fn top_edge_pairs(&self) -> Vec<(usize, usize)> {
        self.top_edges.iter().map(|&e| self.edges[e]).collect()
    }

    pub fn top_feature_names(&self) -> Vec<&str> {
        self.top_features.iter().map(|&f| self.feature_names[f].as_str()).collect()
    }

    pub fn most_important_feature(&self) -> Option<usize> {
        self.top_features.first().copied()
    }
}

/// Indices of the `k` largest values; ties go to the lower index.
fn top_k(values: &[f32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn heads(d: &ActionDistributions) -> Vec<Option<&[f32]>> {
    vec![Some(&d.p_object[..]), Some(&d.p_goal[..]), d.p_orientation.as_deref(), d.p_tray.as_deref()]
}

fn ce(target: &[f32], pred: &[f32]) -> f32 {
    -target.iter().zip(pred).filter(|(&t, _)| t != 0.0).map(|(&t, &p)| t * p.max(crate::numerics::LOG_FLOOR).ln()).sum::<f32>()
}

/// `Σ_heads −Σ Y log Y_S`: cross-entropy of the masked output against the original one.
pub fn conditional_entropy_surrogate(y: &ActionDistributions, y_s: &ActionDistributions) -> Result<f32> {
    let mut total = 0.0;
    for (a, b) in heads(y).into_iter().zip(heads(y_s)) {
        match (a, b) {
            (Some(a), Some(b)) if a.len() == b.len() => total += ce(a, b),
            (None, None) => {}
            _ => return Err(Error::Contract("original and masked outputs have different heads".into())),
        }
    }
    Ok(total)
}

fn entropy(y: &ActionDistributions) -> f32 {
    heads(y).into_iter().flatten().map(|p| ce(p, p)).sum()
}

/// Tape version of the surrogate, differentiable through `out`.
fn surrogate_on_tape(tape: &mut Tape, out: &ForwardOut, y: &ActionDistributions) -> Result<Var> {
    let single = |n: usize| -> Index { vec![0usize; n].into() };
    // Heads outside the explained target carry all-zero targets and drop out of the loss.
    let mut total = tape.cross_entropy_segments(out.p_object, &y.p_object, &single(y.p_object.len()), 1)?;
    let g = tape.cross_entropy_segments(out.p_goal, &y.p_goal, &single(y.p_goal.len()), 1)?;
    total = tape.add(total, g)?;
    for (pred, target, width) in [(out.p_orientation, &y.p_orientation, ORIENTATIONS), (out.p_tray, &y.p_tray, TRAY_OPS)] {
        if let (Some(pred), Some(target)) = (pred, target) {
            let t = tape.cross_entropy_segments(pred, target, &single(width), 1)?;
            total = tape.add(total, t)?;
        }
    }
    Ok(total)
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Policy output on `graph` with messages scaled by `edge_mask` and node features by
/// `feature_mask`.
pub fn masked_output(params: &PolicyParams, graph: &SceneGraph, edge_mask: &[f32], feature_mask: &[f32]) -> Result<ActionDistributions> {
    let batch = GraphBatch::new(&[graph])?;
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params, false);
    let em = tape.constant(Tensor::vector(edge_mask.to_vec()));
    let fm = tape.constant(Tensor::vector(feature_mask.to_vec()));
    let x = tape.constant(batch.features.clone());
    let x = tape.mul_row(x, fm)?;
    let out = forward(&mut tape, &bound, &batch, x, Some(em))?;
    Ok(distributions(&tape, &out, &batch).remove(0))
}

/// Learns soft edge and feature masks that preserve the policy's output on `graph`, then
/// keeps the `c_e` strongest edges and `c_f` strongest features. Neither `params` nor
/// `graph` is modified.
pub fn explain_decision(params: &PolicyParams, graph: &SceneGraph, config: &ExplainConfig) -> Result<Explanation> {
    config.validate()?;
    if params.architecture() == Architecture::Mlp {
        return Err(Error::Contract("edge masks need a graph policy".into()));
    }
    let y = config.target.restrict(&policy_forward(graph, params)?);
    let h_y = entropy(&y);
    let batch = GraphBatch::new(&[graph])?;
    let d = graph.feature_width();
    let n_edges = graph.edges.len();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut init = |n: usize| Tensor::vector((0..n).map(|_| 1.0 + rng.gen_range(-0.1..0.1)).collect());
    let mut logits = ParamSet::new();
    logits.push("edge", init(n_edges));
    logits.push("feature", init(d));
    let mut adam = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &logits);

    let mut objective = Vec::with_capacity(config.steps);
    let mut best = (f32::INFINITY, logits.clone());
    for _ in 0..config.steps {
        let (value, grads) = {
            let mut tape = Tape::new();
            let bound = Bound::new(&mut tape, params, false);
            let el = tape.param(logits.get(0).clone());
            let fl = tape.param(logits.get(1).clone());
            let em = tape.sigmoid(el)?;
            let fm = tape.sigmoid(fl)?;
            let x = tape.constant(batch.features.clone());
            let x = tape.mul_row(x, fm)?;
            let out = forward(&mut tape, &bound, &batch, x, Some(em))?;
            let fidelity = surrogate_on_tape(&mut tape, &out, &y)?;
            let es = tape.sum(em)?;
            let es = tape.scale(es, config.edge_sparsity)?;
            let fs = tape.sum(fm)?;
            let fs = tape.scale(fs, config.feature_sparsity)?;
            let reg = tape.add(es, fs)?;
            let loss = tape.add(fidelity, reg)?;
            tape.backward(loss)?;
            (tape.value(loss).data()[0] - h_y, [tape.grad(el), tape.grad(fl)])
        };
        if !value.is_finite() {
            return Err(Error::Training(format!("explanation objective became {value}")));
        }
        objective.push(value);
        if value < best.0 {
            best = (value, logits.clone());
        }
        for (i, g) in grads.into_iter().enumerate() {
            logits.set_grad(i, g)?;
        }
        adam.step(&mut logits)?;
    }
    let converged = objective.len() > CONVERGENCE_WINDOW && {
        let n = objective.len();
        (objective[n - 1] - objective[n - 1 - CONVERGENCE_WINDOW]).abs() <= config.tolerance
    };
    let edge_mask: Vec<f32> = best.1.get(0).data().iter().map(|&v| sigmoid(v)).collect();
    let feature_mask: Vec<f32> = best.1.get(1).data().iter().map(|&v| sigmoid(v)).collect();
    Ok(Explanation {
        edges: graph.edges.clone(),
        top_edges: top_k(&edge_mask, config.c_e),
        top_features: top_k(&feature_mask, config.c_f),
        edge_mask,
        feature_mask,
        feature_names: graph.feature_names().iter().map(|s| s.to_string()).collect(),
        objective,
        converged,
    })
}

/// Explanation of one decision in the shape consumed by the CLI and the web overlay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub context: String,
    /// Chosen visible object and goal indices.
    pub object: usize,
    pub goal: usize,
    /// Graph node pairs; objects are numbered first, then goals.
    pub top_edges: Vec<(usize, usize)>,
    pub top_features: Vec<String>,
    pub edge_mask: Vec<f32>,
    pub feature_mask: Vec<f32>,
    pub converged: bool,
}

/// Explains the greedy decision of `params` in `state`.
pub fn explain_state(params: &PolicyParams, state: &SceneState, config: &ExplainConfig, context: &str) -> Result<ExplanationRecord> {
    let graph = encode_scene(state)?;
    let y = policy_forward(&graph, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let action = select_action(&y, SelectMode::Argmax, &mut rng);
    let e = explain_decision(params, &graph, config)?;
    Ok(ExplanationRecord {
        context: context.to_string(),
        object: action.object,
        goal: action.goal,
        top_edges: e.top_edge_pairs(),
        top_features: e.top_feature_names().into_iter().map(String::from).collect(),
        edge_mask: e.edge_mask,
        feature_mask: e.feature_mask,
        converged: e.converged,
    })
}

/// How often each feature was the most important one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureProfile {
    pub names: Vec<String>,
    pub counts: Vec<usize>,
    pub decisions: usize,
}

impl FeatureProfile {
    /// The `n` most frequent feature names; ties go to the lower feature index.
    pub fn top(&self, n: usize) -> Vec<&str> {
        let c: Vec<f32> = self.counts.iter().map(|&c| c as f32).collect();
        top_k(&c, n).into_iter().filter(|&i| self.counts[i] > 0).map(|i| self.names[i].as_str()).collect()
    }

    /// Shannon entropy of the histogram in nats; 0 when empty.
    pub fn entropy(&self) -> f64 {
        if self.decisions == 0 {
            return 0.0;
        }
        let n = self.decisions as f64;
        self.counts.iter().filter(|&&c| c > 0).map(|&c| c as f64 / n).map(|p| -p * p.ln()).sum()
    }
}

/// Explains `n_decisions` greedy decisions of `params` over consecutive episodes of `spec`.
pub fn feature_profile(params: &PolicyParams, spec: &WorldSpec, n_decisions: usize, config: &ExplainConfig) -> Result<FeatureProfile> {
    let mut state = reset(&spec.with_seed(episode_seed(spec.seed, 0)))?;
    let names: Vec<String> = encode_scene(&state)?.feature_names().iter().map(|s| s.to_string()).collect();
    let mut profile = FeatureProfile { counts: vec![0; names.len()], names, decisions: 0 };
    let mut episode = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    while profile.decisions < n_decisions {
        if state.is_done() {
            episode += 1;
            state = reset(&spec.with_seed(episode_seed(spec.seed, episode)))?;
        }
        let graph = encode_scene(&state)?;
        let e = explain_decision(params, &graph, config)?;
        if let Some(f) = e.most_important_feature() {
            profile.counts[f] += 1;
        }
        profile.decisions += 1;
        let batch = GraphBatch::new(&[&graph])?;
        let dist = {
            let mut tape = Tape::new();
            let bound = Bound::new(&mut tape, params, false);
            let x = tape.constant(batch.features.clone());
            let out = forward(&mut tape, &bound, &batch, x, None)?;
            distributions(&tape, &out, &batch).remove(0)
        };
        state = step(&state, &select_action(&dist, SelectMode::Argmax, &mut rng)).state;
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::GnnConfig;

    fn dist(o: Vec<f32>, g: Vec<f32>) -> ActionDistributions {
        ActionDistributions { p_object: o, p_goal: g, p_orientation: None, p_tray: None }
    }

    #[test]
    fn uniform_surrogate_is_ln3() {
        let u = dist(vec![1.0 / 3.0; 3], vec![1.0]);
        assert!((conditional_entropy_surrogate(&u, &u).unwrap() - 3f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn surrogate_of_self_is_entropy() {
        let y = dist(vec![0.7, 0.2, 0.1], vec![0.5, 0.5]);
        let h = -(0.7f32 * 0.7f32.ln() + 0.2 * 0.2f32.ln() + 0.1 * 0.1f32.ln()) + 2f32.ln();
        assert!((conditional_entropy_surrogate(&y, &y).unwrap() - h).abs() < 1e-6);
        assert!((entropy(&y) - h).abs() < 1e-6);
    }

    #[test]
    fn sharper_prediction_on_argmax_lowers_surrogate() {
        let y = dist(vec![0.6, 0.4], vec![1.0]);
        let a = conditional_entropy_surrogate(&y, &dist(vec![0.6, 0.4], vec![1.0])).unwrap();
        let b = conditional_entropy_surrogate(&y, &dist(vec![0.2, 0.8], vec![1.0])).unwrap();
        assert!(b > a);
        let one_hot = dist(vec![1.0, 0.0], vec![1.0]);
        let c = conditional_entropy_surrogate(&one_hot, &dist(vec![0.9, 0.1], vec![1.0])).unwrap();
        let d = conditional_entropy_surrogate(&one_hot, &dist(vec![0.99, 0.01], vec![1.0])).unwrap();
        assert!(d < c);
    }

    #[test]
    fn surrogate_rejects_mismatched_heads() {
        let y = dist(vec![0.5, 0.5], vec![1.0]);
        assert!(conditional_entropy_surrogate(&y, &dist(vec![1.0], vec![1.0])).is_err());
        let mut z = y.clone();
        z.p_tray = Some(vec![1.0, 0.0, 0.0]);
        assert!(conditional_entropy_surrogate(&y, &z).is_err());
    }

    fn kblock_graph() -> SceneGraph {
        encode_scene(&reset(&WorldSpec::kblock(3, 4)).unwrap()).unwrap()
    }

    #[test]
    fn budgets_and_mask_ranges() {
        let params = PolicyParams::init(GnnConfig::new(Architecture::Sage), 3).unwrap();
        let graph = kblock_graph();
        let before = (params.clone(), graph.clone());
        let config = ExplainConfig { steps: 30, c_e: 4, c_f: 2, ..Default::default() };
        let e = explain_decision(&params, &graph, &config).unwrap();
        assert_eq!(e.top_edges.len(), 4);
        assert_eq!(e.top_features.len(), 2);
        assert_eq!(e.edge_mask.len(), graph.edges.len());
        assert!(e.edge_mask.iter().chain(&e.feature_mask).all(|m| (0.0..=1.0).contains(m)));
        assert_eq!(e.objective.len(), 30);
        assert_eq!((params, graph), before);
        assert_eq!(e, explain_decision(&before.0, &before.1, &config).unwrap());
    }

    #[test]
    fn unconstrained_masks_keep_everything() {
        let mut params = PolicyParams::init(GnnConfig::new(Architecture::Sage), 1).unwrap();
        for i in 0..params.params.len() {
            params.params.get_mut(i).data_mut().iter_mut().for_each(|v| *v *= 4.0);
        }
        let graph = kblock_graph();
        let config = ExplainConfig {
            c_e: graph.edges.len(),
            c_f: graph.feature_width(),
            edge_sparsity: 0.0,
            feature_sparsity: 0.0,
            ..Default::default()
        };
        let e = explain_decision(&params, &graph, &config).unwrap();
        let mut all: Vec<usize> = e.top_edges.clone();
        all.sort();
        assert_eq!(all, (0..graph.edges.len()).collect::<Vec<_>>());
        assert_eq!(e.top_features.len(), graph.feature_width());
        assert!(e.objective[0] > 1e-2);
        let best = e.objective.iter().copied().fold(f32::INFINITY, f32::min);
        assert!(best.abs() < 1e-3, "objective {best}");
        let y = policy_forward(&graph, &params).unwrap();
        let y_s = masked_output(&params, &graph, &e.edge_mask, &e.feature_mask).unwrap();
        for (a, b) in y.p_object.iter().zip(&y_s.p_object).chain(y.p_goal.iter().zip(&y_s.p_goal)) {
            assert!((a - b).abs() < 1e-2);
        }
        let ones = masked_output(&params, &graph, &vec![1.0; graph.edges.len()], &[1.0; 5]).unwrap();
        assert!((conditional_entropy_surrogate(&y, &ones).unwrap() - entropy(&y)).abs() < 1e-6);
    }

    /// Two objects and one goal; only feature 3 reaches the object head.
    fn feature3_policy() -> (PolicyParams, SceneGraph) {
        let mut config = GnnConfig::new(Architecture::Sage);
        config.hidden_layers = 1;
        config.hidden_width = 2;
        let mut p = PolicyParams::init(config, 0).unwrap();
        for i in 0..p.params.len() {
            p.params.get_mut(i).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let set = |p: &mut PolicyParams, name: &str, at: usize, v: f32| {
            let i = p.params.index_of(name).unwrap();
            p.params.get_mut(i).data_mut()[at] = v;
        };
        set(&mut p, "l0.theta1", 3 * 2, 10.0);
        set(&mut p, "head.object.w", 0, 1.0);
        let features = Tensor::from_rows(&[vec![1.0, 0.3, 0.2, 0.05, 1.0], vec![1.0, -0.4, 0.1, 0.2, 0.0], vec![2.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
        let graph = SceneGraph {
            n_objects: 2,
            n_goals: 1,
            features,
            edges: crate::scenegraph::dense_edges(3),
            roles: vec![crate::scenegraph::NodeKind::Block, crate::scenegraph::NodeKind::Block, crate::scenegraph::NodeKind::GoalForBlock],
            nodes: vec![crate::scenegraph::NodeRef::Entity(0), crate::scenegraph::NodeRef::Entity(1), crate::scenegraph::NodeRef::Goal(0)],
        };
        (p, graph)
    }

    #[test]
    fn feature_mask_finds_the_only_used_feature() {
        let (p, graph) = feature3_policy();
        let y = policy_forward(&graph, &p).unwrap();
        assert!((y.p_object[0] - y.p_object[1]).abs() > 0.5);
        let e = explain_decision(&p, &graph, &ExplainConfig::default()).unwrap();
        assert_eq!(e.top_features, vec![3]);
        assert_eq!(e.top_feature_names(), vec!["z"]);
        for f in [0, 1, 2, 4] {
            assert!(e.feature_mask[f] < e.feature_mask[3]);
        }
    }

    #[test]
    fn target_restricts_heads() {
        let y = dist(vec![0.7, 0.3], vec![0.5, 0.5]);
        let o = ExplainTarget::Object.restrict(&y);
        assert_eq!(o.p_goal, vec![0.0, 0.0]);
        assert!((entropy(&o) - conditional_entropy_surrogate(&o, &dist(vec![0.7, 0.3], vec![1.0, 0.0])).unwrap()).abs() < 1e-6);
        assert_eq!(ExplainTarget::Goal.restrict(&y).p_object, vec![0.0, 0.0]);
        assert_eq!("object".parse::<ExplainTarget>().unwrap(), ExplainTarget::Object);
        assert!("edge".parse::<ExplainTarget>().is_err());
        let params = PolicyParams::init(GnnConfig::new(Architecture::Sage), 2).unwrap();
        let config = ExplainConfig { target: ExplainTarget::Object, steps: 20, ..Default::default() };
        assert_eq!(explain_decision(&params, &kblock_graph(), &config).unwrap().top_edges.len(), 3);
    }

    #[test]
    fn mlp_cannot_be_explained() {
        let p = PolicyParams::init(GnnConfig::mlp(3, 3, 5), 0).unwrap();
        assert!(matches!(explain_decision(&p, &kblock_graph(), &ExplainConfig::default()), Err(Error::Contract(_))));
        let bad = ExplainConfig { c_e: 0, ..Default::default() };
        let g = PolicyParams::init(GnnConfig::new(Architecture::Sage), 0).unwrap();
        assert!(explain_decision(&g, &kblock_graph(), &bad).is_err());
    }

    #[test]
    fn empty_profile() {
        let p = PolicyParams::init(GnnConfig::new(Architecture::Sage), 0).unwrap();
        let prof = feature_profile(&p, &WorldSpec::kblock(3, 0), 0, &ExplainConfig::default()).unwrap();
        assert_eq!(prof.decisions, 0);
        assert!(prof.counts.iter().all(|&c| c == 0));
        assert!(prof.top(2).is_empty());
        assert_eq!(prof.entropy(), 0.0);
    }

    #[test]
    fn profile_counts_sum_to_decisions() {
        let p = PolicyParams::init(GnnConfig::new(Architecture::Sage), 0).unwrap();
        let config = ExplainConfig { steps: 10, ..Default::default() };
        let prof = feature_profile(&p, &WorldSpec::kblock(2, 0), 11, &config).unwrap();
        assert_eq!(prof.counts.iter().sum::<usize>(), 11);
        assert_eq!(prof.names.len(), 5);
    }

    #[test]
    fn record_serializes() {
        let p = PolicyParams::init(GnnConfig::new(Architecture::Attention), 0).unwrap();
        let s = reset(&WorldSpec::kblock(3, 0)).unwrap();
        let r = explain_state(&p, &s, &ExplainConfig { steps: 5, ..Default::default() }, "kblock step 0").unwrap();
        assert_eq!(r.top_edges.len(), 3);
        assert_eq!(r.top_features.len(), 1);
        let back: ExplanationRecord = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
