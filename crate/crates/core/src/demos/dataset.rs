use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::expert::expert;
use crate::error::{Error, Result};
use crate::policy::{ORIENTATIONS, TRAY_OPS};
use crate::scenegraph::{encode_scene, SceneGraph};
use crate::worlds::{reset, resolve, step, ActionTuple, Bounds, Family, SceneState, TrayOp, WorldSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Scripted,
    Human,
}

/// One state and the action taken in it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub scene: SceneState,
    pub action: ActionTuple,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub spec: WorldSpec,
    pub source: Source,
    pub steps: Vec<Pair>,
    pub terminal: SceneState,
}

/// First step at which a replay disagrees with the stored snapshots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Divergence {
    /// Index of the first mismatching snapshot; `steps.len()` means the terminal state.
    pub t: usize,
    pub detail: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Replays the actions from `reset(spec)` and compares every snapshot exactly.
    pub fn replay(&self) -> Result<(), Divergence> {
        let mut state = reset(&self.spec).map_err(|e| Divergence { t: 0, detail: e.to_string() })?;
        for (t, pair) in self.steps.iter().enumerate() {
            if state != pair.scene {
                return Err(Divergence { t, detail: "stored scene differs from replayed scene".into() });
            }
            state = step(&state, &pair.action).state;
        }
        if state != self.terminal {
            return Err(Divergence { t: self.steps.len(), detail: "terminal scene differs".into() });
        }
        Ok(())
    }
}

/// The demonstration corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DemoDataset {
    pub trajectories: Vec<Trajectory>,
}

impl DemoDataset {
    pub fn pairs(&self) -> Vec<Pair> {
        self.trajectories.iter().flat_map(|t| t.steps.iter().cloned()).collect()
    }

    pub fn n_pairs(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_pairs() == 0
    }

    pub fn extend(&mut self, other: DemoDataset) {
        self.trajectories.extend(other.trajectories);
    }
}

/// Rolls one expert episode from `reset(spec)`.
pub fn record_episode(spec: &WorldSpec, policy: &dyn Fn(&SceneState) -> Result<ActionTuple>) -> Result<Trajectory> {
    let mut state = reset(spec)?;
    let mut steps = Vec::new();
    while !state.is_done() {
        let action = policy(&state).map_err(|e| Error::Recording(format!("step {}: {}", steps.len(), e)))?;
        let next = step(&state, &action).state;
        steps.push(Pair { scene: state, action });
        state = next;
    }
    Ok(Trajectory { spec: spec.clone(), source: Source::Scripted, steps, terminal: state })
}

/// Records `n_traj` scripted episodes, cycling through `specs` with seeds `seed, seed + 1, ...`.
pub fn record(specs: &[WorldSpec], n_traj: usize, seed: u64) -> Result<DemoDataset> {
    if specs.is_empty() && n_traj > 0 {
        return Err(Error::Recording("no world specs to record".into()));
    }
    let mut trajectories = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let spec = specs[i % specs.len()].with_seed(seed + i as u64);
        trajectories.push(record_episode(&spec, &expert)?);
    }
    Ok(DemoDataset { trajectories })
}

/// The blockworld training corpus: box packing and unpacking with 3 and 4 blocks.
pub fn blockworld_specs() -> Vec<WorldSpec> {
    let mut specs = Vec::new();
    for k in [3, 4] {
        for family in [Family::BoxPack, Family::BoxUnpack] {
            specs.push(WorldSpec::new(family, k, 0));
        }
    }
    specs
}

/// 20 scripted pack/unpack demonstrations (90 state-action pairs).
pub fn blockworld_corpus(seed: u64) -> Result<DemoDataset> {
    record(&blockworld_specs(), 20, seed)
}

/// Scripted dishwasher demonstrations with 5 plates and 5 bowls.
pub fn dishwasher_corpus(preference: crate::worlds::Preference, n_traj: usize, seed: u64) -> Result<DemoDataset> {
    record(&[WorldSpec::dishwasher(preference, 10, 0)], n_traj, seed)
}

/// Re-enumerates a pair's state and remaps its action to the new node order.
pub fn permute_pair(pair: &Pair, entity_perm: &[usize], goal_perm: &[usize]) -> Result<Pair> {
    let scene = pair.scene.permuted(entity_perm, goal_perm);
    let mut action = pair.action;
    if action.toggle().is_none() {
        let (e, g) = resolve(&pair.scene, &pair.action).map_err(|r| Error::Contract(format!("action does not resolve: {r}")))?;
        let (e2, g2) = (entity_perm[e], goal_perm[g]);
        action.object = scene.visible_objects().iter().position(|&v| v == e2).expect("visibility is order independent");
        action.goal = scene.visible_goals().iter().position(|&v| v == g2).expect("visibility is order independent");
    }
    Ok(Pair { scene, action })
}

fn translation_range(lo: f32, hi: f32, min: f32, max: f32) -> Option<(f32, f32)> {
    let (a, b) = (min - lo, max - hi);
    (a <= b).then_some((a, b))
}

/// Replicates every pair `factor` times. Copy 0 is the original; the others are shifted by a
/// random translation that keeps the scene inside `bounds` (when it fits) and re-enumerated.
pub fn augment(pairs: &[Pair], factor: usize, seed: u64, bounds: &Bounds) -> Result<Vec<Pair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs.len() * factor);
    for pair in pairs {
        for copy in 0..factor {
            if copy == 0 {
                out.push(pair.clone());
                continue;
            }
            let (x0, x1, y0, y1) = pair.scene.extent();
            let dx = translation_range(x0, x1, bounds.x_min, bounds.x_max).map_or(0.0, |(a, b)| rng.gen_range(a..=b));
            let dy = translation_range(y0, y1, bounds.y_min, bounds.y_max).map_or(0.0, |(a, b)| rng.gen_range(a..=b));
            let (dx, dy) = if pair.scene.dishwasher.is_some() { (0.0, 0.0) } else { (dx, dy) };
            let moved = Pair { scene: pair.scene.translated(dx, dy), action: pair.action };
            let mut ep: Vec<usize> = (0..moved.scene.entities.len()).collect();
            let mut gp: Vec<usize> = (0..moved.scene.goals.len()).collect();
            ep.shuffle(&mut rng);
            gp.shuffle(&mut rng);
            out.push(permute_pair(&moved, &ep, &gp)?);
        }
    }
    Ok(out)
}

/// One-hot targets per head; `None` marks a head the sample does not supervise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadTargets {
    pub object: Option<Vec<f32>>,
    pub goal: Option<Vec<f32>>,
    pub orientation: Option<Vec<f32>>,
    pub tray: Option<Vec<f32>>,
}

fn one_hot(i: usize, n: usize, head: &str) -> Result<Vec<f32>> {
    if i >= n {
        return Err(Error::Contract(format!("{head} index {i} out of range for {n} candidates")));
    }
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    Ok(v)
}

/// Targets for `action` in a scene with `k` objects and `l` goals. With `dish_heads`, placements
/// also supervise orientation and a no-op tray choice; tray toggles supervise only the tray head.
pub fn make_targets(action: &ActionTuple, k: usize, l: usize, dish_heads: bool) -> Result<HeadTargets> {
    if let Some(op) = action.toggle() {
        if !dish_heads {
            return Err(Error::Contract("tray action for a policy without a tray head".into()));
        }
        return Ok(HeadTargets { object: None, goal: None, orientation: None, tray: Some(one_hot(op.index(), TRAY_OPS, "tray")?) });
    }
    let object = Some(one_hot(action.object, k, "object")?);
    let goal = Some(one_hot(action.goal, l, "goal")?);
    if !dish_heads {
        return Ok(HeadTargets { object, goal, orientation: None, tray: None });
    }
    let orientation = Some(one_hot(action.orientation.unwrap_or(0) as usize, ORIENTATIONS, "orientation")?);
    let tray = Some(one_hot(TrayOp::NoOp.index(), TRAY_OPS, "tray")?);
    Ok(HeadTargets { object, goal, orientation, tray })
}

/// An encoded training example.
#[derive(Clone, Debug)]
pub struct Sample {
    pub graph: SceneGraph,
    pub targets: HeadTargets,
}

pub fn to_samples(pairs: &[Pair]) -> Result<Vec<Sample>> {
    pairs
        .iter()
        .map(|p| {
            let graph = encode_scene(&p.scene)?;
            let targets = make_targets(&p.action, graph.n_objects, graph.n_goals, p.scene.dishwasher.is_some())?;
            Ok(Sample { graph, targets })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worlds::feasible;

    #[test]
    fn corpus_has_ninety_pairs() {
        let d = blockworld_corpus(0).unwrap();
        assert_eq!(d.trajectories.len(), 20);
        assert_eq!(d.n_pairs(), 90);
        for t in &d.trajectories {
            t.replay().unwrap();
        }
    }

    #[test]
    fn dishwasher_corpus_size() {
        let d = dishwasher_corpus(crate::worlds::Preference::TopBottom, 5, 0).unwrap();
        assert_eq!(d.n_pairs(), 65);
    }

    #[test]
    fn no_trajectories() {
        let d = record(&blockworld_specs(), 0, 0).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn augmentation_keeps_actions_feasible() {
        let pairs = blockworld_corpus(1).unwrap().pairs();
        let aug = augment(&pairs, 10, 3, &Bounds::default()).unwrap();
        assert_eq!(aug.len(), 900);
        for p in &aug {
            assert!(feasible(&p.scene, &p.action).is_ok());
        }
        assert_eq!(&aug[0], &pairs[0]);
    }

    #[test]
    fn factor_one_is_identity() {
        let pairs = blockworld_corpus(2).unwrap().pairs();
        assert_eq!(augment(&pairs, 1, 0, &Bounds::default()).unwrap(), pairs);
    }

    #[test]
    fn targets() {
        assert_eq!(make_targets(&ActionTuple::place(2, 0), 4, 1, false).unwrap().object.unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(make_targets(&ActionTuple::place(0, 0), 1, 1, false).unwrap().goal.unwrap(), vec![1.0]);
        let t = make_targets(&ActionTuple::place_oriented(0, 0, 3), 2, 2, true).unwrap();
        assert_eq!(t.tray.unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(t.orientation.unwrap()[3], 1.0);
        assert!(matches!(make_targets(&ActionTuple::place(4, 0), 4, 1, false), Err(Error::Contract(_))));
        let t = make_targets(&ActionTuple::tray(TrayOp::ToggleBottom), 2, 2, true).unwrap();
        assert!(t.object.is_none());
        assert_eq!(t.tray.unwrap(), vec![0.0, 1.0, 0.0]);
    }
}
