use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demos::expert;
use crate::error::{Error, Result};
use crate::policy::{policy_forward_batch, select_action, PolicyParams, SelectMode};
use crate::scenegraph::encode_scene;
use crate::worlds::{feasible_actions, metric_goals_fraction, reset, step, ActionTuple, SceneState, WorldSpec};

/// World seeds used for evaluation never overlap the small seeds used for demonstrations.
pub const EVAL_SEED_BASE: u64 = 1_000_000_000;

pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    EVAL_SEED_BASE + seed * 100_000 + episode as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub world_seed: u64,
    pub actions: Vec<ActionTuple>,
    pub goals_fraction: f32,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub spec: WorldSpec,
    /// Mean goals-fraction per evaluation seed.
    pub seed_means: Vec<f32>,
    pub mean: f32,
    /// Standard deviation of the per-seed means.
    pub std: f32,
    pub success_rate: f32,
    pub episodes: Vec<EpisodeTrace>,
}

impl EvalReport {
    fn from_episodes(spec: &WorldSpec, seeds: &[u64], episodes: Vec<EpisodeTrace>) -> Self {
        let seed_means: Vec<f32> = seeds
            .iter()
            .map(|&s| {
                let v: Vec<f32> = episodes.iter().filter(|e| e.seed == s).map(|e| e.goals_fraction).collect();
                v.iter().sum::<f32>() / v.len().max(1) as f32
            })
            .collect();
        let n = seed_means.len().max(1) as f32;
        let mean = seed_means.iter().sum::<f32>() / n;
        let var = seed_means.iter().map(|m| (m - mean).powi(2)).sum::<f32>() / n;
        let success_rate = episodes.iter().filter(|e| e.success).count() as f32 / episodes.len().max(1) as f32;
        Self { spec: spec.clone(), seed_means, mean, std: var.sqrt(), success_rate, episodes }
    }
}

/// Chooses actions for a batch of live scenes.
pub type Controller<'a> = dyn FnMut(&[&SceneState]) -> Result<Vec<ActionTuple>> + 'a;

/// Rolls `n_episodes` per seed, advancing all live episodes in lockstep so a controller can
/// batch its decisions.
pub fn rollout(spec: &WorldSpec, n_episodes: usize, seeds: &[u64], controller: &mut Controller) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::Contract("evaluation needs at least one seed".into()));
    }
    let mut live = Vec::new();
    for &s in seeds {
        for i in 0..n_episodes {
            let world_seed = episode_seed(s, i);
            let state = reset(&spec.with_seed(world_seed))?;
            live.push((EpisodeTrace { seed: s, world_seed, actions: vec![], goals_fraction: 0.0, success: false }, state));
        }
    }
    let mut finished = Vec::with_capacity(live.len());
    while !live.is_empty() {
        let (done, running): (Vec<_>, Vec<_>) = live.into_iter().partition(|(_, s)| s.is_done());
        for (mut trace, state) in done {
            trace.goals_fraction = metric_goals_fraction(&state);
            trace.success = state.is_success();
            finished.push(trace);
        }
        live = running;
        if live.is_empty() {
            break;
        }
        let states: Vec<&SceneState> = live.iter().map(|(_, s)| s).collect();
        let actions = controller(&states)?;
        if actions.len() != live.len() {
            return Err(Error::Contract("controller returned the wrong number of actions".into()));
        }
        for ((trace, state), a) in live.iter_mut().zip(actions) {
            *state = step(state, &a).state;
            trace.actions.push(a);
        }
    }
    finished.sort_by_key(|t| (seeds.iter().position(|&s| s == t.seed), t.world_seed));
    Ok(EvalReport::from_episodes(spec, seeds, finished))
}

/// Out-of-range placement that every scene treats as a no-op.
fn idle() -> ActionTuple {
    ActionTuple::place(usize::MAX, usize::MAX)
}

/// Actions of `params` for many scenes in one batched forward pass. Scenes with no visible
/// object or goal idle.
pub fn policy_actions(params: &PolicyParams, states: &[&SceneState], mode: SelectMode, rng: &mut ChaCha8Rng) -> Result<Vec<ActionTuple>> {
    let mut graphs = Vec::with_capacity(states.len());
    let mut slots = Vec::with_capacity(states.len());
    for s in states {
        let g = encode_scene(s)?;
        if g.n_objects == 0 || g.n_goals == 0 {
            slots.push(None);
        } else {
            slots.push(Some(graphs.len()));
            graphs.push(g);
        }
    }
    let refs: Vec<_> = graphs.iter().collect();
    let dists = if refs.is_empty() { vec![] } else { policy_forward_batch(&refs, params)? };
    Ok(slots.into_iter().map(|s| s.map_or_else(idle, |i| select_action(&dists[i], mode, rng))).collect())
}

/// Greedy rollouts of `params`.
pub fn evaluate(params: &PolicyParams, spec: &WorldSpec, n_episodes: usize, seeds: &[u64]) -> Result<EvalReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    rollout(spec, n_episodes, seeds, &mut |states| policy_actions(params, states, SelectMode::Argmax, &mut rng))
}

/// The scripted expert as a controller.
pub fn evaluate_expert(spec: &WorldSpec, n_episodes: usize, seeds: &[u64]) -> Result<EvalReport> {
    rollout(spec, n_episodes, seeds, &mut |states| states.iter().map(|s| expert(s)).collect())
}

/// Uniformly random visible object and goal, feasible or not.
pub fn evaluate_random(spec: &WorldSpec, n_episodes: usize, seeds: &[u64], rng_seed: u64) -> Result<EvalReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rollout(spec, n_episodes, seeds, &mut |states| {
        Ok(states
            .iter()
            .map(|s| {
                let (k, l) = (s.visible_objects().len(), s.visible_goals().len());
                if k == 0 || l == 0 {
                    return idle();
                }
                ActionTuple::place(rng.gen_range(0..k), rng.gen_range(0..l))
            })
            .collect())
    })
}

/// Uniformly random choice among feasible actions.
pub fn evaluate_random_feasible(spec: &WorldSpec, n_episodes: usize, seeds: &[u64], rng_seed: u64) -> Result<EvalReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rollout(spec, n_episodes, seeds, &mut |states| {
        Ok(states.iter().map(|s| feasible_actions(s).choose(&mut rng).copied().unwrap_or_else(idle)).collect())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::GnnConfig;
    use crate::policy::Architecture;

    #[test]
    fn expert_scores_one() {
        for spec in [WorldSpec::kblock(3, 0), WorldSpec::pyramid(6, 0), WorldSpec::multi_stack(3, 3, 0), WorldSpec::rearrange(3, 0)] {
            let r = evaluate_expert(&spec, 4, &[0, 1, 2]).unwrap();
            assert_eq!(r.mean, 1.0);
            assert_eq!(r.success_rate, 1.0);
            assert_eq!(r.seed_means.len(), 3);
            assert_eq!(r.std, 0.0);
        }
    }

    #[test]
    fn random_is_imperfect() {
        let r = evaluate_random(&WorldSpec::kblock(3, 0), 20, &[0, 1, 2], 5).unwrap();
        assert!(r.mean < 1.0);
        assert!((0.0..=1.0).contains(&r.mean));
    }

    #[test]
    fn untrained_policy_runs_to_budget() {
        let params = PolicyParams::init(GnnConfig::new(Architecture::Sage), 0).unwrap();
        let r = evaluate(&params, &WorldSpec::kblock(3, 0), 3, &[0, 1, 2]).unwrap();
        assert_eq!(r.episodes.len(), 9);
        for e in &r.episodes {
            assert!(e.success || e.actions.len() == 12);
        }
        assert_eq!(r, evaluate(&params, &WorldSpec::kblock(3, 0), 3, &[0, 1, 2]).unwrap());
    }
}
