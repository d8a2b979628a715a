use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::il::{collect_grads, imitation_loss};
use super::metrics::{MetricRecord, MetricsLog};
use crate::demos::{augment, to_samples, DemoDataset, Sample};
use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, Index, Tape, Tensor, Var};
use crate::policy::{
    action_log_prob, distributions, forward, select_action, Architecture, Bound, ForwardOut, GnnConfig, GraphBatch,
    PolicyParams, SelectMode, ORIENTATIONS, TRAY_OPS,
};
use crate::scenegraph::{encode_scene, SceneGraph};
use crate::worlds::{reset, step, ActionTuple, Bounds, SceneState, TrayOp, WorldSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RlVariant {
    /// Fresh MLP per stack size.
    Mlp,
    /// Fresh GNN per stack size.
    Gnn,
    /// Each stage starts from the previous stage's final weights.
    GnnSeq,
    /// Warm-started like `GnnSeq`, plus a weighted imitation term.
    GnnDemo,
}

impl RlVariant {
    pub const ALL: [RlVariant; 4] = [RlVariant::Mlp, RlVariant::Gnn, RlVariant::GnnSeq, RlVariant::GnnDemo];

    pub fn name(self) -> &'static str {
        match self {
            RlVariant::Mlp => "mlp",
            RlVariant::Gnn => "gnn",
            RlVariant::GnnSeq => "gnn-seq",
            RlVariant::GnnDemo => "gnn-demo",
        }
    }
}

impl std::fmt::Display for RlVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RlVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RlVariant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Spec(format!("unknown RL variant {s:?} (expected mlp, gnn, gnn-seq or gnn-demo)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub interactions_per_stack: usize,
    pub clip: f32,
    pub gamma: f32,
    pub lambda: f32,
    pub entropy: f32,
    pub value_coef: f32,
    pub epochs: usize,
    /// Interactions collected between updates.
    pub rollout_len: usize,
    pub minibatch: usize,
    /// Episodes advanced in lockstep while collecting.
    pub parallel_envs: usize,
    pub lr: f32,
    pub max_grad_norm: f32,
    pub lambda_il: f32,
    /// Copies per demonstration pair for the imitation term.
    pub demo_augmentation: usize,
    pub k_base: usize,
    pub k_max: usize,
    pub architecture: Architecture,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            interactions_per_stack: 2000,
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            entropy: 0.01,
            value_coef: 0.5,
            epochs: 4,
            rollout_len: 250,
            minibatch: 50,
            parallel_envs: 5,
            lr: 1e-3,
            max_grad_norm: 0.5,
            lambda_il: 0.0,
            demo_augmentation: 10,
            k_base: 2,
            k_max: 9,
            architecture: Architecture::Sage,
            hidden_layers: 3,
            hidden_width: 64,
            seed: 0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f32| v > 0.0 && v <= 1.0;
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Contract(format!("clip {} must lie in (0, 1)", self.clip)));
        }
        if !unit(self.gamma) || !unit(self.lambda) {
            return Err(Error::Contract("discount and GAE lambda must lie in (0, 1]".into()));
        }
        if self.lambda_il < 0.0 || self.entropy < 0.0 || self.value_coef < 0.0 {
            return Err(Error::Contract("loss weights must be non-negative".into()));
        }
        if self.epochs == 0 || self.rollout_len == 0 || self.minibatch == 0 || self.parallel_envs == 0 || self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Contract("epochs, rollout length, minibatch, envs and lr must be positive".into()));
        }
        if self.k_base == 0 || self.k_base > self.k_max {
            return Err(Error::Contract(format!("bad curriculum range {}..={}", self.k_base, self.k_max)));
        }
        Ok(())
    }

    /// K-block worlds from `k_base` to `k_max`.
    pub fn kblock_ladder(&self) -> Vec<WorldSpec> {
        (self.k_base..=self.k_max).map(|k| WorldSpec::kblock(k, 0)).collect()
    }

    pub fn total_interactions(&self, stages: usize) -> usize {
        self.interactions_per_stack * stages
    }
}

/// Generalized advantage estimates. `values` holds one estimate per reward, optionally
/// followed by a bootstrap value for the state after the last reward; without it the
/// sequence is treated as terminal.
pub fn gae(rewards: &[f32], values: &[f32], gamma: f32, lambda: f32) -> Result<Vec<f32>> {
    let n = rewards.len();
    let last = match values.len() {
        l if l == n => 0.0,
        l if l == n + 1 => values[n],
        l => return Err(Error::Contract(format!("{l} values for {n} rewards"))),
    };
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { last };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// Clipped surrogate for one sample: `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f32, advantage: f32, clip: f32) -> f32 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

#[derive(Clone, Debug)]
struct Transition {
    graph: SceneGraph,
    action: ActionTuple,
    log_prob: f32,
    value: f32,
    reward: f32,
}

/// One rung of the curriculum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub k: usize,
    pub spec: WorldSpec,
    pub initial: PolicyParams,
    pub trained: PolicyParams,
    pub interactions: usize,
    pub episode_returns: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlRun {
    pub variant: RlVariant,
    pub stages: Vec<Stage>,
}

impl RlRun {
    pub fn total_interactions(&self) -> usize {
        self.stages.iter().map(|s| s.interactions).sum()
    }

    /// Weights after the last stage.
    pub fn final_params(&self) -> Option<&PolicyParams> {
        self.stages.last().map(|s| &s.trained)
    }

    /// Weights trained on the stage whose spec has `k` objects.
    pub fn params_for(&self, k: usize) -> Option<&PolicyParams> {
        self.stages.iter().find(|s| s.k == k).map(|s| &s.trained)
    }
}

fn policy_config(variant: RlVariant, config: &RlConfig, scene: &SceneState) -> Result<GnnConfig> {
    let graph = encode_scene(scene)?;
    let dish = scene.dishwasher.is_some();
    let mut c = match variant {
        RlVariant::Mlp => {
            let mut c = GnnConfig::mlp(graph.n_objects, graph.n_goals, graph.feature_width());
            c.orientation_head = dish;
            c.tray_head = dish;
            c
        }
        _ if dish => GnnConfig::dishwasher(config.architecture),
        _ => GnnConfig::new(config.architecture),
    };
    c.hidden_layers = config.hidden_layers;
    c.hidden_width = config.hidden_width;
    Ok(c)
}

/// Trains through `ladder` with PPO.
pub fn train_ppo(ladder: &[WorldSpec], config: &RlConfig, variant: RlVariant, demos: Option<&DemoDataset>) -> Result<RlRun> {
    train_ppo_logged(ladder, config, variant, demos, &mut MetricsLog::disabled())
}

pub fn train_ppo_logged(
    ladder: &[WorldSpec],
    config: &RlConfig,
    variant: RlVariant,
    demos: Option<&DemoDataset>,
    log: &mut MetricsLog,
) -> Result<RlRun> {
    config.validate()?;
    if ladder.is_empty() {
        return Err(Error::Contract("empty spec ladder".into()));
    }
    for spec in ladder {
        spec.validate()?;
    }
    let demo_samples = if variant == RlVariant::GnnDemo && config.lambda_il > 0.0 {
        let d = demos.filter(|d| !d.is_empty()).ok_or_else(|| {
            Error::Contract(format!("imitation weight {} needs a non-empty demonstration set", config.lambda_il))
        })?;
        let pairs = augment(&d.pairs(), config.demo_augmentation.max(1), config.seed, &Bounds::default())?;
        to_samples(&pairs)?
    } else {
        vec![]
    };
    let mut demo_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xD3_30D3);
    let mut stages: Vec<Stage> = Vec::with_capacity(ladder.len());
    for (i, spec) in ladder.iter().enumerate() {
        let probe = reset(spec)?;
        let fresh = || PolicyParams::init(policy_config(variant, config, &probe)?, config.seed.wrapping_add(i as u64));
        let initial = match variant {
            RlVariant::Mlp | RlVariant::Gnn => fresh()?,
            RlVariant::GnnSeq | RlVariant::GnnDemo => match stages.last() {
                Some(prev) => prev.trained.clone(),
                None => PolicyParams::init(policy_config(variant, config, &probe)?, config.seed)?,
            },
        };
        let stage = run_stage(i, spec, initial, config, &demo_samples, &mut demo_rng, log)?;
        stages.push(stage);
    }
    Ok(RlRun { variant, stages })
}

struct Env {
    state: SceneState,
    graph: SceneGraph,
    ret: f32,
    trace: Vec<Transition>,
}

fn run_stage(
    index: usize,
    spec: &WorldSpec,
    initial: PolicyParams,
    config: &RlConfig,
    demos: &[Sample],
    demo_rng: &mut ChaCha8Rng,
    log: &mut MetricsLog,
) -> Result<Stage> {
    let mut params = initial.clone();
    params.params.clear_grads();
    let mut adam = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &params.params);
    let stage_seed = config.seed.wrapping_mul(1_000_003).wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed);
    let mut next_world = stage_seed.wrapping_mul(10_000);
    let new_env = |next_world: &mut u64| -> Result<Env> {
        let state = reset(&spec.with_seed(*next_world))?;
        *next_world += 1;
        let graph = encode_scene(&state)?;
        Ok(Env { state, graph, ret: 0.0, trace: vec![] })
    };
    let mut envs = (0..config.parallel_envs).map(|_| new_env(&mut next_world)).collect::<Result<Vec<_>>>()?;
    let mut interactions = 0;
    let mut returns = Vec::new();
    let mut update = 0;
    while interactions < config.interactions_per_stack {
        let quota = config.rollout_len.min(config.interactions_per_stack - interactions);
        let mut segments: Vec<Vec<Transition>> = Vec::new();
        let mut bootstrap: Vec<f32> = Vec::new();
        let mut finished_returns = Vec::new();
        let mut collected = 0;
        while collected < quota {
            let active = (quota - collected).min(envs.len());
            let graphs: Vec<&SceneGraph> = envs[..active].iter().map(|e| &e.graph).collect();
            let batch = GraphBatch::new(&graphs)?;
            let (dists, values) = {
                let mut tape = Tape::new();
                let bound = Bound::new(&mut tape, &params, false);
                let x = tape.constant(batch.features.clone());
                let out = forward(&mut tape, &bound, &batch, x, None)?;
                (distributions(&tape, &out, &batch), tape.value(out.value).data().to_vec())
            };
            for (j, env) in envs[..active].iter_mut().enumerate() {
                let action = select_action(&dists[j], SelectMode::Sample, &mut rng);
                let log_prob = action_log_prob(&dists[j], &action);
                let out = step(&env.state, &action);
                env.ret += out.reward;
                let graph = std::mem::replace(&mut env.graph, encode_scene(&out.state)?);
                env.trace.push(Transition { graph, action, log_prob, value: values[j], reward: out.reward });
                env.state = out.state;
                if out.done {
                    finished_returns.push(env.ret);
                    segments.push(std::mem::take(&mut env.trace));
                    *env = new_env(&mut next_world)?;
                }
            }
            collected += active;
        }
        let open: Vec<usize> = (0..envs.len()).filter(|&j| !envs[j].trace.is_empty()).collect();
        if !open.is_empty() {
            let graphs: Vec<&SceneGraph> = open.iter().map(|&j| &envs[j].graph).collect();
            let v = crate::policy::value_batch(&graphs, &params)?;
            for (&j, v) in open.iter().zip(v) {
                segments.push(std::mem::take(&mut envs[j].trace));
                bootstrap.push(v);
            }
        }
        let n_terminal = segments.len() - bootstrap.len();
        let mut flat = Vec::with_capacity(quota);
        let mut advantages = Vec::with_capacity(quota);
        for (s, seg) in segments.into_iter().enumerate() {
            let rewards: Vec<f32> = seg.iter().map(|t| t.reward).collect();
            let mut values: Vec<f32> = seg.iter().map(|t| t.value).collect();
            if s >= n_terminal {
                values.push(bootstrap[s - n_terminal]);
            }
            advantages.extend(gae(&rewards, &values, config.gamma, config.lambda)?);
            flat.extend(seg);
        }
        let targets: Vec<f32> = flat.iter().zip(&advantages).map(|(t, a)| t.value + a).collect();
        let norm = normalized(&advantages);
        let stats = ppo_update(&mut params, &mut adam, &flat, &norm, &targets, config, demos, demo_rng, &mut rng)?;
        interactions += collected;
        returns.extend(&finished_returns);
        let mean_episode_return =
            (!finished_returns.is_empty()).then(|| finished_returns.iter().sum::<f32>() / finished_returns.len() as f32);
        log.record(MetricRecord::PpoUpdate {
            stage: index,
            k: spec.k,
            update,
            interactions,
            policy_loss: stats.policy,
            value_loss: stats.value,
            entropy: stats.entropy,
            il_loss: stats.il,
            mean_episode_return,
        })?;
        update += 1;
    }
    params.params.clear_grads();
    Ok(Stage { k: spec.k, spec: spec.clone(), initial, trained: params, interactions, episode_returns: returns })
}

fn normalized(x: &[f32]) -> Vec<f32> {
    let n = x.len().max(1) as f32;
    let mean = x.iter().sum::<f32>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / n).sqrt();
    x.iter().map(|v| (v - mean) / (std + 1e-8)).collect()
}

#[derive(Clone, Copy, Debug, Default)]
struct LossStats {
    policy: f32,
    value: f32,
    entropy: f32,
    il: f32,
}

#[allow(clippy::too_many_arguments)]
fn ppo_update(
    params: &mut PolicyParams,
    adam: &mut Adam,
    data: &[Transition],
    advantages: &[f32],
    targets: &[f32],
    config: &RlConfig,
    demos: &[Sample],
    demo_rng: &mut ChaCha8Rng,
    rng: &mut ChaCha8Rng,
) -> Result<LossStats> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut stats = LossStats::default();
    let mut n = 0;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch) {
            let items: Vec<&Transition> = chunk.iter().map(|&i| &data[i]).collect();
            let adv: Vec<f32> = chunk.iter().map(|&i| advantages[i]).collect();
            let ret: Vec<f32> = chunk.iter().map(|&i| targets[i]).collect();
            let demo_batch: Vec<&Sample> = if demos.is_empty() {
                vec![]
            } else {
                (0..config.minibatch).map(|_| &demos[demo_rng.gen_range(0..demos.len())]).collect()
            };
            let (grads, s) = {
                let mut tape = Tape::new();
                let bound = Bound::new(&mut tape, params, true);
                let (mut loss, mut s) = ppo_loss(&mut tape, &bound, &items, &adv, &ret, config)?;
                if !demo_batch.is_empty() {
                    let (il, _) = imitation_loss(&mut tape, &bound, &demo_batch)?;
                    s.il = tape.value(il).data()[0];
                    let il = tape.scale(il, config.lambda_il)?;
                    loss = tape.add(loss, il)?;
                }
                let total = tape.value(loss).data()[0];
                if !total.is_finite() {
                    return Err(Error::Training(format!(
                        "PPO loss became {total} (policy {}, value {}, entropy {})",
                        s.policy, s.value, s.entropy
                    )));
                }
                tape.backward(loss)?;
                (collect_grads(&tape, &bound), s)
            };
            for (i, g) in grads.into_iter().enumerate() {
                params.params.set_grad(i, g)?;
            }
            params.params.clip_grad_norm(config.max_grad_norm);
            adam.step(&mut params.params)?;
            stats.policy += s.policy;
            stats.value += s.value;
            stats.entropy += s.entropy;
            stats.il += s.il;
            n += 1;
        }
    }
    let n = n.max(1) as f32;
    Ok(LossStats { policy: stats.policy / n, value: stats.value / n, entropy: stats.entropy / n, il: stats.il / n })
}

fn index(v: Vec<usize>) -> Index {
    v.into()
}

fn entropy_sum(tape: &mut Tape, p: Var) -> Result<Var> {
    let lp = tape.log(p)?;
    let plp = tape.mul(p, lp)?;
    tape.sum(plp)
}

/// Log-probabilities of `actions` under a batched forward pass, as a `[graphs]` node.
pub fn batch_log_probs(tape: &mut Tape, out: &ForwardOut, batch: &GraphBatch, actions: &[ActionTuple]) -> Result<Var> {
    let n = actions.len();
    let place: Vec<bool> = actions.iter().map(|a| out.p_tray.is_none() || a.toggle().is_none()).collect();
    let pick = |offsets: &[usize], b: usize, i: usize, bound: usize| {
        if place[b] && i < bound {
            Ok(offsets[b] + i)
        } else if place[b] {
            Err(Error::Index(format!("action index {i} out of range for {bound} candidates")))
        } else {
            Ok(offsets[b])
        }
    };
    let obj = (0..n)
        .map(|b| pick(&batch.object_offsets, b, actions[b].object, batch.objects_in(b).len()))
        .collect::<Result<Vec<_>>>()?;
    let goal =
        (0..n).map(|b| pick(&batch.goal_offsets, b, actions[b].goal, batch.goals_in(b).len())).collect::<Result<Vec<_>>>()?;
    let po = tape.gather_rows(out.p_object, &index(obj))?;
    let po = tape.log(po)?;
    let pg = tape.gather_rows(out.p_goal, &index(goal))?;
    let pg = tape.log(pg)?;
    let mut lp = tape.add(po, pg)?;
    if let Some(p) = out.p_orientation {
        let idx = (0..n).map(|b| b * ORIENTATIONS + actions[b].orientation.unwrap_or(0) as usize % ORIENTATIONS).collect();
        let g = tape.gather_rows(p, &index(idx))?;
        let g = tape.log(g)?;
        lp = tape.add(lp, g)?;
    }
    if let Some(p) = out.p_tray {
        let mask = tape.constant(Tensor::vector(place.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()));
        lp = tape.mul(lp, mask)?;
        let idx = (0..n).map(|b| b * TRAY_OPS + actions[b].tray_op.unwrap_or(TrayOp::NoOp).index()).collect();
        let g = tape.gather_rows(p, &index(idx))?;
        let g = tape.log(g)?;
        lp = tape.add(lp, g)?;
    }
    Ok(lp)
}

fn ppo_loss(
    tape: &mut Tape,
    bound: &Bound,
    items: &[&Transition],
    advantages: &[f32],
    targets: &[f32],
    config: &RlConfig,
) -> Result<(Var, LossStats)> {
    let graphs: Vec<&SceneGraph> = items.iter().map(|t| &t.graph).collect();
    let batch = GraphBatch::new(&graphs)?;
    let x = tape.constant(batch.features.clone());
    let out = forward(tape, bound, &batch, x, None)?;
    let actions: Vec<ActionTuple> = items.iter().map(|t| t.action).collect();
    let n = items.len() as f32;

    let lp = batch_log_probs(tape, &out, &batch, &actions)?;
    let old = tape.constant(Tensor::vector(items.iter().map(|t| t.log_prob).collect()));
    let adv = tape.constant(Tensor::vector(advantages.to_vec()));
    let diff = tape.sub(lp, old)?;
    let ratio = tape.exp(diff)?;
    let s1 = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, 1.0 - config.clip, 1.0 + config.clip)?;
    let s2 = tape.mul(clipped, adv)?;
    let surr = tape.minimum(s1, s2)?;
    let surr = tape.mean(surr)?;
    let policy = tape.scale(surr, -1.0)?;

    let ret = tape.constant(Tensor::vector(targets.to_vec()));
    let err = tape.sub(out.value, ret)?;
    let sq = tape.mul(err, err)?;
    let value = tape.mean(sq)?;

    let mut neg_entropy = entropy_sum(tape, out.p_object)?;
    for p in [Some(out.p_goal), out.p_orientation, out.p_tray].into_iter().flatten() {
        let e = entropy_sum(tape, p)?;
        neg_entropy = tape.add(neg_entropy, e)?;
    }
    let neg_entropy = tape.scale(neg_entropy, 1.0 / n)?;

    let stats = LossStats {
        policy: tape.value(policy).data()[0],
        value: tape.value(value).data()[0],
        entropy: -tape.value(neg_entropy).data()[0],
        il: 0.0,
    };
    let v = tape.scale(value, config.value_coef)?;
    let e = tape.scale(neg_entropy, config.entropy)?;
    let loss = tape.add(policy, v)?;
    let loss = tape.add(loss, e)?;
    Ok((loss, stats))
}
