use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::build::counter_pose;
use super::state::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrayOp {
    ToggleTop,
    ToggleBottom,
    NoOp,
}

impl TrayOp {
    pub const ALL: [TrayOp; 3] = [TrayOp::ToggleTop, TrayOp::ToggleBottom, TrayOp::NoOp];

    pub fn index(self) -> usize {
        match self {
            TrayOp::ToggleTop => 0,
            TrayOp::ToggleBottom => 1,
            TrayOp::NoOp => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<TrayOp> {
        Self::ALL.get(i).copied()
    }
}

/// High-level action. Indices refer to visible object and goal nodes, in node order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionTuple {
    pub object: usize,
    pub goal: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tray_op: Option<TrayOp>,
}

impl ActionTuple {
    pub fn place(object: usize, goal: usize) -> Self {
        Self { object, goal, orientation: None, tray_op: None }
    }

    pub fn place_oriented(object: usize, goal: usize, orientation: u8) -> Self {
        Self { object, goal, orientation: Some(orientation), tray_op: Some(TrayOp::NoOp) }
    }

    pub fn tray(op: TrayOp) -> Self {
        Self { object: 0, goal: 0, orientation: None, tray_op: Some(op) }
    }

    /// The tray toggle this action performs, if any.
    pub fn toggle(&self) -> Option<TrayOp> {
        self.tray_op.filter(|op| *op != TrayOp::NoOp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reason {
    IndexOutOfRange,
    NotTopOfStack,
    GoalOccupied,
    UnsupportedGoal,
    BoxClosed,
    TrayClosed,
    TrayConflict,
    NoDishwasher,
    /// Blocks go to block goals and covers to cover goals.
    WrongKind,
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

fn tray_accessible(dw: &Dishwasher, kind: GoalKind) -> Result<(), Reason> {
    match kind {
        GoalKind::TopTray if !dw.top_open => Err(Reason::TrayClosed),
        GoalKind::BottomTray if dw.top_open => Err(Reason::TrayConflict),
        GoalKind::BottomTray if !dw.bottom_open => Err(Reason::TrayClosed),
        _ => Ok(()),
    }
}

/// Entity and goal ids addressed by a pick-and-place action.
pub fn resolve(state: &SceneState, action: &ActionTuple) -> Result<(usize, usize), Reason> {
    let objects = state.visible_objects();
    let goals = state.visible_goals();
    match (objects.get(action.object), goals.get(action.goal)) {
        (Some(&e), Some(&g)) => Ok((e, g)),
        _ => Err(Reason::IndexOutOfRange),
    }
}

/// Checks preconditions; `Ok` means `step` will carry the action out.
pub fn feasible(state: &SceneState, action: &ActionTuple) -> Result<(), Reason> {
    if action.toggle().is_some() {
        return if state.dishwasher.is_some() { Ok(()) } else { Err(Reason::NoDishwasher) };
    }
    let (e, g) = resolve(state, action)?;
    let entity = &state.entities[e];
    let goal = &state.goals[g];
    if let Some(dw) = &state.dishwasher {
        if let Some(src) = state.goal_of(e) {
            tray_accessible(dw, state.goals[src].kind)?;
        }
        tray_accessible(dw, goal.kind)?;
    }
    if entity.in_box.is_some_and(|b| !state.box_is_open(b)) || goal.in_box.is_some_and(|b| !state.box_is_open(b)) {
        return Err(Reason::BoxClosed);
    }
    if state.is_covered(e) {
        return Err(Reason::NotTopOfStack);
    }
    if matches!(goal.kind, GoalKind::Block | GoalKind::Cover) && !goal.accepts_kind(entity.kind) {
        return Err(Reason::WrongKind);
    }
    if goal.filled_by.is_some() {
        return Err(Reason::GoalOccupied);
    }
    let supported = goal
        .below
        .iter()
        .all(|&b| matches!(state.goals[b].filled_by, Some(o) if o != e));
    if !supported {
        return Err(Reason::UnsupportedGoal);
    }
    Ok(())
}

/// Every feasible action in `state`; dish placements carry the target goal's orientation.
pub fn feasible_actions(state: &SceneState) -> Vec<ActionTuple> {
    let mut out = Vec::new();
    if state.dishwasher.is_some() {
        out.push(ActionTuple::tray(TrayOp::ToggleTop));
        out.push(ActionTuple::tray(TrayOp::ToggleBottom));
    }
    let goals = state.visible_goals();
    for o in 0..state.visible_objects().len() {
        for (l, &g) in goals.iter().enumerate() {
            let a = if state.dishwasher.is_some() {
                ActionTuple::place_oriented(o, l, state.goals[g].orientation.unwrap_or(0))
            } else {
                ActionTuple::place(o, l)
            };
            if feasible(state, &a).is_ok() {
                out.push(a);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub state: SceneState,
    pub reward: f32,
    pub done: bool,
    pub feasibility: Result<(), Reason>,
    /// Whether an injected failure diverted the object away from its goal.
    pub failed: bool,
}

fn failure_rng(seed: u64, step: u32) -> ChaCha8Rng {
    let mixed = seed ^ (step as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Dense reward g(s')/G − g(s)/G.
pub fn reward(before: &SceneState, after: &SceneState) -> f32 {
    let g = before.target_count.max(1) as f32;
    (after.goals_filled() as f32 - before.goals_filled() as f32) / g
}

/// Applies one action. Infeasible actions only advance the step counter.
pub fn step(state: &SceneState, action: &ActionTuple) -> StepOutcome {
    let mut next = state.clone();
    next.step_count += 1;
    let feasibility = feasible(state, action);
    let mut failed = false;
    if feasibility.is_ok() {
        if let Some(op) = action.toggle() {
            let dw = next.dishwasher.as_mut().expect("checked by feasible");
            match op {
                TrayOp::ToggleTop => dw.top_open = !dw.top_open,
                TrayOp::ToggleBottom => dw.bottom_open = !dw.bottom_open,
                TrayOp::NoOp => unreachable!(),
            }
        } else {
            let (e, g) = resolve(state, action).expect("checked by feasible");
            if let Some(src) = state.goal_of(e) {
                next.goals[src].filled_by = None;
            }
            let is_dish = next.entities[e].kind.is_dish();
            let orientation = if is_dish { action.orientation.unwrap_or(0) } else { next.entities[e].pose.orientation };
            let mut rng = failure_rng(state.seed, state.step_count);
            failed = state.failure_rate > 0.0 && rng.gen::<f32>() < state.failure_rate;
            let ent = &mut next.entities[e];
            if failed {
                ent.in_box = None;
                if is_dish {
                    ent.support = Support::Counter;
                    ent.pose = Pose { orientation, ..counter_pose(&mut rng) };
                } else {
                    let target = state.goals[g].pose;
                    let angle = rng.gen_range(0.0..std::f32::consts::TAU);
                    ent.support = Support::Table;
                    ent.pose = Pose {
                        x: target.x + 0.12 * angle.cos(),
                        y: target.y + 0.12 * angle.sin(),
                        z: 0.0,
                        orientation,
                    };
                }
            } else {
                ent.support = Support::Goal(g);
                ent.pose = Pose { orientation, ..state.goals[g].pose };
                ent.in_box = state.goals[g].in_box;
                next.goals[g].filled_by = Some(e);
            }
        }
    }
    let r = reward(state, &next);
    let done = next.is_done();
    StepOutcome { state: next, reward: r, done, feasibility, failed }
}

/// g(s_T)/G, capped at 1.
pub fn metric_goals_fraction(state: &SceneState) -> f32 {
    if state.target_count == 0 {
        return 1.0;
    }
    (state.goals_filled() as f32 / state.target_count as f32).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::super::build::*;
    use super::*;

    fn bottom_block(s: &SceneState) -> usize {
        let e = s.entities.iter().find(|e| e.support == Support::Table).unwrap().id;
        s.visible_objects().iter().position(|&v| v == e).unwrap()
    }

    fn goal_at_level(s: &SceneState, level: usize) -> usize {
        let z = level as f32 * BLOCK_SIZE;
        s.goals.iter().position(|g| (g.pose.z - z).abs() < 1e-6).unwrap()
    }

    fn top_block(s: &SceneState) -> usize {
        (0..s.entities.len()).find(|&e| !s.is_covered(e) && s.goal_of(e).is_none()).unwrap()
    }

    #[test]
    fn bottom_of_stack_is_not_pickable() {
        let s = reset(&WorldSpec::kblock(3, 0)).unwrap();
        let a = ActionTuple::place(bottom_block(&s), goal_at_level(&s, 0));
        assert_eq!(feasible(&s, &a), Err(Reason::NotTopOfStack));
    }

    #[test]
    fn unsupported_goal() {
        let s = reset(&WorldSpec::kblock(3, 0)).unwrap();
        let a = ActionTuple::place(top_block(&s), goal_at_level(&s, 1));
        assert_eq!(feasible(&s, &a), Err(Reason::UnsupportedGoal));
    }

    #[test]
    fn bottom_tray_conflict() {
        let mut s = reset(&WorldSpec::dishwasher(Preference::TopBottom, 10, 0)).unwrap();
        s.dishwasher.as_mut().unwrap().top_open = true;
        s.dishwasher.as_mut().unwrap().bottom_open = true;
        let g = s.goals.iter().position(|g| g.kind == GoalKind::BottomTray).unwrap();
        assert_eq!(feasible(&s, &ActionTuple::place_oriented(0, g, 1)), Err(Reason::TrayConflict));
        let top = s.goals.iter().position(|g| g.kind == GoalKind::TopTray).unwrap();
        assert!(feasible(&s, &ActionTuple::place_oriented(0, top, 1)).is_ok());
    }

    #[test]
    fn filling_one_of_three_goals() {
        let s = reset(&WorldSpec::kblock(3, 0)).unwrap();
        let out = step(&s, &ActionTuple::place(top_block(&s), goal_at_level(&s, 0)));
        assert!(out.feasibility.is_ok());
        assert!((out.reward - 1.0 / 3.0).abs() < 1e-6);
        assert!(!out.done);
        out.state.check_invariants().unwrap();
    }

    #[test]
    fn infeasible_action_is_a_noop() {
        let s = reset(&WorldSpec::kblock(3, 0)).unwrap();
        let out = step(&s, &ActionTuple::place(bottom_block(&s), goal_at_level(&s, 0)));
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.state.step_count, 1);
        let mut expect = s.clone();
        expect.step_count = 1;
        assert_eq!(out.state, expect);
    }

    #[test]
    fn out_of_range_index() {
        let s = reset(&WorldSpec::kblock(2, 0)).unwrap();
        assert_eq!(feasible(&s, &ActionTuple::place(5, 0)), Err(Reason::IndexOutOfRange));
        assert_eq!(feasible(&s, &ActionTuple::tray(TrayOp::ToggleTop)), Err(Reason::NoDishwasher));
    }

    #[test]
    fn goal_fraction_metric() {
        let mut s = reset(&WorldSpec::kblock(3, 0)).unwrap();
        assert_eq!(metric_goals_fraction(&s), 0.0);
        for level in 0..2 {
            s = step(&s, &ActionTuple::place(top_block(&s), goal_at_level(&s, level))).state;
        }
        assert!((metric_goals_fraction(&s) - 2.0 / 3.0).abs() < 1e-6);
        s = step(&s, &ActionTuple::place(top_block(&s), goal_at_level(&s, 2))).state;
        assert_eq!(metric_goals_fraction(&s), 1.0);
        assert!(s.is_success() && s.is_done());
    }

    #[test]
    fn opening_a_box_reveals_contents() {
        let s = reset(&WorldSpec::rearrange(2, 3)).unwrap();
        let storage = s.visible_goals().iter().position(|&g| !s.goals[g].required).unwrap();
        let out = step(&s, &ActionTuple::place(0, storage));
        assert!(out.feasibility.is_ok());
        assert!(out.reward < 0.0);
        let nodes = |s: &SceneState| s.visible_objects().len() + s.visible_goals().len();
        assert!(nodes(&out.state) > nodes(&s));
    }

    #[test]
    fn blocks_never_fill_cover_goals() {
        let s = reset(&WorldSpec::new(Family::BoxPack, 3, 0)).unwrap();
        let block = top_block(&s);
        let rim = s.visible_goals().iter().position(|&g| s.goals[g].kind == GoalKind::Cover && s.goals[g].filled_by.is_none()).unwrap();
        assert_eq!(feasible(&s, &ActionTuple::place(block, rim)), Err(Reason::WrongKind));
    }

    #[test]
    fn failure_injection_is_deterministic() {
        let s = reset(&WorldSpec::kblock(3, 0).with_failure_rate(1.0)).unwrap();
        let a = ActionTuple::place(top_block(&s), goal_at_level(&s, 0));
        let x = step(&s, &a);
        assert!(x.failed);
        assert_eq!(x.reward, 0.0);
        assert_eq!(x, step(&s, &a));
        x.state.check_invariants().unwrap();
    }
}
