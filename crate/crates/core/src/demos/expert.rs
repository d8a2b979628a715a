//! Scripted experts producing optimal or near-optimal demonstrations.

use crate::error::{Error, Result};
use crate::worlds::{
    feasible, ActionTuple, EntityKind, GoalKind, Preference, SceneState, TrayOp,
};

fn visible_index(list: &[usize], id: usize) -> Result<usize> {
    list.iter()
        .position(|&v| v == id)
        .ok_or_else(|| Error::NoAction(format!("element {} is not visible", id)))
}

fn action_for(state: &SceneState, entity: usize, goal: usize) -> Result<ActionTuple> {
    let a = ActionTuple::place(visible_index(&state.visible_objects(), entity)?, visible_index(&state.visible_goals(), goal)?);
    feasible(state, &a).map_err(|r| Error::NoAction(format!("planned move is infeasible: {r}")))?;
    Ok(a)
}

/// Whether the entity already sits in a goal that counts for it.
fn settled(state: &SceneState, e: usize) -> bool {
    state.goal_of(e).is_some_and(|g| state.goal_satisfied(g))
}

fn lowest<I: Iterator<Item = usize>>(state: &SceneState, goals: I) -> Option<usize> {
    goals.min_by(|&a, &b| state.goals[a].pose.z.total_cmp(&state.goals[b].pose.z).then(a.cmp(&b)))
}

/// Empty required goal of `kind` whose supporting goals are filled.
fn open_goals(state: &SceneState, kind: GoalKind) -> Vec<usize> {
    let visible = state.visible_goals();
    visible
        .into_iter()
        .filter(|&g| {
            let goal = &state.goals[g];
            goal.kind == kind
                && goal.required
                && goal.filled_by.is_none()
                && goal.in_box.is_none_or(|b| state.box_is_open(b))
                && goal.below.iter().all(|&b| state.goals[b].filled_by.is_some())
        })
        .collect()
}

fn box_has_work(state: &SceneState, b: usize) -> bool {
    let block_pending = state
        .entities
        .iter()
        .any(|e| e.in_box == Some(b) && e.kind == EntityKind::Block && !settled(state, e.id));
    let goal_pending = state.goals.iter().any(|g| g.in_box == Some(b) && g.required && g.filled_by.is_none());
    block_pending || goal_pending
}

/// Blockworld expert: open any closed box that still has work inside, then move the highest
/// clear unplaced block to the lowest supported empty goal, then close boxes with their covers.
/// Ties go to the lowest visible index.
pub fn expert_blocks(state: &SceneState) -> Result<ActionTuple> {
    if state.is_success() {
        return Err(Error::NoAction("all goals are filled".into()));
    }
    let objects = state.visible_objects();
    let all_goals = state.visible_goals();

    // opening phase
    for b in 0..state.boxes.len() {
        if state.box_is_open(b) || !box_has_work(state, b) {
            continue;
        }
        let cover = state.lid_of(b).expect("closed box has a cover");
        let storage = lowest(
            state,
            all_goals.iter().copied().filter(|&g| {
                let goal = &state.goals[g];
                goal.kind == GoalKind::Cover && goal.filled_by.is_none() && !state.boxes.iter().any(|x| x.cover_goal == g)
            }),
        );
        if let Some(storage) = storage {
            return action_for(state, cover, storage);
        }
    }

    // block phase
    let targets = open_goals(state, GoalKind::Block);
    if let Some(goal) = lowest(state, targets.into_iter()) {
        let block = objects
            .iter()
            .copied()
            .filter(|&e| state.entities[e].kind == EntityKind::Block && !settled(state, e) && !state.is_covered(e))
            .max_by(|&a, &b| state.entities[a].pose.z.total_cmp(&state.entities[b].pose.z).then(b.cmp(&a)));
        if let Some(block) = block {
            return action_for(state, block, goal);
        }
    }

    // closing phase
    let rims = open_goals(state, GoalKind::Cover);
    if let Some(rim) = lowest(state, rims.into_iter()) {
        let cover = objects
            .iter()
            .copied()
            .find(|&e| state.entities[e].kind == EntityKind::Cover && !settled(state, e) && !state.is_covered(e));
        if let Some(cover) = cover {
            return action_for(state, cover, rim);
        }
    }
    Err(Error::NoAction("no productive move".into()))
}

/// Box rearrangement follows the same phase order: open, move blocks, close.
pub fn expert_rearrange(state: &SceneState) -> Result<ActionTuple> {
    expert_blocks(state)
}

fn pending_dish(state: &SceneState, kind: EntityKind) -> Option<usize> {
    state
        .visible_objects()
        .into_iter()
        .filter(|&e| state.entities[e].kind == kind && !settled(state, e))
        .min_by(|&a, &b| {
            let (pa, pb) = (state.entities[a].pose, state.entities[b].pose);
            pa.y.total_cmp(&pb.y).then(pa.x.total_cmp(&pb.x)).then(a.cmp(&b))
        })
}

fn slot_for(state: &SceneState, kind: EntityKind) -> Option<usize> {
    state
        .visible_goals()
        .into_iter()
        .filter(|&g| {
            let goal = &state.goals[g];
            goal.required && goal.filled_by.is_none() && goal.accepts_kind(kind)
        })
        .min_by(|&a, &b| state.goals[a].pose.y.total_cmp(&state.goals[b].pose.y).then(a.cmp(&b)))
}

fn load(state: &SceneState, dish: usize, slot: usize) -> Result<ActionTuple> {
    let orientation = state.goals[slot].orientation.unwrap_or(0);
    let a = ActionTuple::place_oriented(
        visible_index(&state.visible_objects(), dish)?,
        visible_index(&state.visible_goals(), slot)?,
        orientation,
    );
    feasible(state, &a).map_err(|r| Error::NoAction(format!("planned load is infeasible: {r}")))?;
    Ok(a)
}

/// Dishwasher expert. TopBottom: open top, load bowls, close top, open bottom, load plates.
/// LeftRight: open top, load plates on the left, then bowls on the right.
/// Dishes are taken in order of increasing y, slots likewise.
pub fn expert_dishwasher(state: &SceneState, preference: Preference) -> Result<ActionTuple> {
    let dw = state.dishwasher.as_ref().ok_or_else(|| Error::NoAction("scene has no dishwasher".into()))?;
    if state.is_success() {
        return Err(Error::NoAction("all dishes are loaded".into()));
    }
    let order = match preference {
        Preference::TopBottom => [EntityKind::Bowl, EntityKind::Plate],
        Preference::LeftRight => [EntityKind::Plate, EntityKind::Bowl],
    };
    for kind in order {
        let Some(dish) = pending_dish(state, kind) else { continue };
        let slot = slot_for(state, kind).ok_or_else(|| Error::NoAction(format!("no free slot for {kind:?}")))?;
        let tray = state.goals[slot].kind;
        // a dish sitting in a tray needs that tray accessible too
        let source = state.goal_of(dish).map(|g| state.goals[g].kind);
        let needs_top = tray == GoalKind::TopTray || source == Some(GoalKind::TopTray);
        let needs_bottom = tray == GoalKind::BottomTray || source == Some(GoalKind::BottomTray);
        if needs_bottom {
            if dw.top_open {
                return Ok(ActionTuple::tray(TrayOp::ToggleTop));
            }
            if !dw.bottom_open {
                return Ok(ActionTuple::tray(TrayOp::ToggleBottom));
            }
        } else if needs_top && !dw.top_open {
            return Ok(ActionTuple::tray(TrayOp::ToggleTop));
        }
        return load(state, dish, slot);
    }
    Err(Error::NoAction("no pending dish".into()))
}

/// Expert matching the scene type.
pub fn expert(state: &SceneState) -> Result<ActionTuple> {
    match &state.dishwasher {
        Some(dw) => expert_dishwasher(state, dw.preference),
        None => expert_blocks(state),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worlds::{reset, step, Support, WorldSpec};

    fn run(mut s: SceneState) -> (SceneState, Vec<ActionTuple>) {
        let mut actions = vec![];
        while !s.is_done() {
            let a = expert(&s).unwrap();
            let out = step(&s, &a);
            assert!(out.feasibility.is_ok());
            actions.push(a);
            s = out.state;
        }
        (s, actions)
    }

    #[test]
    fn kblock_first_move_is_top_to_lowest_goal() {
        let s = reset(&WorldSpec::kblock(3, 2)).unwrap();
        let a = expert_blocks(&s).unwrap();
        let (e, g) = crate::worlds::resolve(&s, &a).unwrap();
        assert!((s.entities[e].pose.z - 0.1).abs() < 1e-6);
        assert_eq!(s.goals[g].pose.z, 0.0);
    }

    #[test]
    fn single_forced_move() {
        let s = reset(&WorldSpec::kblock(1, 0)).unwrap();
        assert_eq!(expert_blocks(&s).unwrap(), ActionTuple::place(0, 0));
    }

    #[test]
    fn taller_stack_first() {
        let mut s = reset(&WorldSpec::multi_stack(2, 3, 0)).unwrap();
        // move one top block into a goal so that stacks have heights 2 and 3
        let a = expert_blocks(&s).unwrap();
        s = step(&s, &a).state;
        let b = expert_blocks(&s).unwrap();
        let (e, _) = crate::worlds::resolve(&s, &b).unwrap();
        assert!((s.entities[e].pose.z - 0.1).abs() < 1e-6);
    }

    #[test]
    fn terminal_state_has_no_action() {
        let (s, actions) = run(reset(&WorldSpec::kblock(3, 0)).unwrap());
        assert_eq!(actions.len(), 3);
        assert!(matches!(expert(&s), Err(Error::NoAction(_))));
    }

    #[test]
    fn families_complete() {
        for spec in [
            WorldSpec::pyramid(6, 0),
            WorldSpec::multi_stack(3, 3, 1),
            WorldSpec::rearrange(3, 2),
            WorldSpec::new(crate::worlds::Family::BoxPack, 4, 3),
            WorldSpec::new(crate::worlds::Family::BoxUnpack, 4, 4),
            WorldSpec::dishwasher(Preference::TopBottom, 10, 5),
            WorldSpec::dishwasher(Preference::LeftRight, 10, 6),
            WorldSpec::dishwasher(Preference::TopBottom, 12, 7),
        ] {
            let (s, actions) = run(reset(&spec).unwrap());
            assert!(s.is_success(), "{:?}", spec.family);
            assert!(actions.len() as u32 <= s.target_count + 3, "{:?} took {}", spec.family, actions.len());
        }
    }

    #[test]
    fn rearrange_phases() {
        let s = reset(&WorldSpec::rearrange(2, 0)).unwrap();
        let (_, actions) = run(s.clone());
        // two openings, two block moves, two closings
        assert_eq!(actions.len(), 6);
        let a = expert_rearrange(&s).unwrap();
        let (e, g) = crate::worlds::resolve(&s, &a).unwrap();
        assert_eq!(s.entities[e].kind, EntityKind::Cover);
        assert!(!s.goals[g].required);
    }

    #[test]
    fn dishwasher_opening_moves() {
        let s = reset(&WorldSpec::dishwasher(Preference::TopBottom, 10, 0)).unwrap();
        assert_eq!(expert(&s).unwrap(), ActionTuple::tray(TrayOp::ToggleTop));
        let (_, actions) = run(s);
        assert_eq!(actions.len(), 13);
        let mut s = reset(&WorldSpec::dishwasher(Preference::TopBottom, 2, 0)).unwrap();
        // only a plate remains: with the top open, the expert closes it first
        s.dishwasher.as_mut().unwrap().top_open = true;
        let bowl = s.entities.iter().find(|e| e.kind == EntityKind::Bowl).unwrap().id;
        let slot = slot_for(&s, EntityKind::Bowl).unwrap();
        s.entities[bowl].support = Support::Goal(slot);
        s.entities[bowl].pose.orientation = s.goals[slot].orientation.unwrap();
        s.goals[slot].filled_by = Some(bowl);
        assert_eq!(expert(&s).unwrap(), ActionTuple::tray(TrayOp::ToggleTop));
    }

    #[test]
    fn dish_loads_use_slot_orientation() {
        let s = reset(&WorldSpec::dishwasher(Preference::TopBottom, 10, 0)).unwrap();
        let s = step(&s, &expert(&s).unwrap()).state;
        let a = expert(&s).unwrap();
        let (e, g) = crate::worlds::resolve(&s, &a).unwrap();
        assert_eq!(s.entities[e].kind, EntityKind::Bowl);
        assert_eq!(a.orientation, s.goals[g].orientation);
    }
}
