//! Dense scene graphs over the visible objects and goals of a world state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::worlds::{EntityKind, GoalKind, Observability, SceneState, Support};

/// Categorical node code; stored verbatim as feature 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum NodeKind {
    Cover = 0,
    Block = 1,
    GoalForBlock = 2,
    GoalForCover = 3,
    Plate = 4,
    Bowl = 5,
    GoalTopTray = 6,
    GoalBottomTray = 7,
    TrayNode = 8,
}

impl NodeKind {
    pub fn code(self) -> f32 {
        self as u8 as f32
    }

    pub fn of_entity(kind: EntityKind) -> Self {
        match kind {
            EntityKind::Cover => NodeKind::Cover,
            EntityKind::Block => NodeKind::Block,
            EntityKind::Plate => NodeKind::Plate,
            EntityKind::Bowl => NodeKind::Bowl,
        }
    }

    pub fn of_goal(kind: GoalKind) -> Self {
        match kind {
            GoalKind::Block => NodeKind::GoalForBlock,
            GoalKind::Cover => NodeKind::GoalForCover,
            GoalKind::TopTray => NodeKind::GoalTopTray,
            GoalKind::BottomTray => NodeKind::GoalBottomTray,
        }
    }
}

pub const BLOCK_FEATURES: usize = 5;
pub const DISH_FEATURES: usize = 8;
pub const FEATURE_NAMES: [&str; DISH_FEATURES] =
    ["kind", "x", "y", "z", "filled", "orientation", "top_open", "bottom_open"];

/// Which world element a node stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum NodeRef {
    Entity(usize),
    Goal(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub n_objects: usize,
    pub n_goals: usize,
    /// `[n_objects + n_goals, d]`; objects first.
    pub features: Tensor,
    /// Directed `(source, target)` pairs.
    pub edges: Vec<(usize, usize)>,
    pub roles: Vec<NodeKind>,
    /// World element behind each node.
    pub nodes: Vec<NodeRef>,
}

impl SceneGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_objects + self.n_goals
    }

    pub fn feature_width(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn object_nodes(&self) -> std::ops::Range<usize> {
        0..self.n_objects
    }

    pub fn goal_nodes(&self) -> std::ops::Range<usize> {
        self.n_objects..self.n_nodes()
    }

    pub fn feature_names(&self) -> &'static [&'static str] {
        &FEATURE_NAMES[..self.feature_width()]
    }
}

/// Every ordered pair of distinct nodes, grouped by source.
pub fn dense_edges(n: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                edges.push((i, j));
            }
        }
    }
    edges
}

pub fn feature_width(state: &SceneState) -> usize {
    if state.dishwasher.is_some() {
        DISH_FEATURES
    } else {
        BLOCK_FEATURES
    }
}

/// Feature row for one entity or goal: `[kind, x, y, z, filled]`, extended for dishwasher scenes.
pub fn node_feature(state: &SceneState, node: NodeRef) -> Vec<f32> {
    let (kind, pose, filled, orientation) = match node {
        NodeRef::Entity(e) => {
            let ent = &state.entities[e];
            let in_goal = matches!(ent.support, Support::Goal(_));
            (NodeKind::of_entity(ent.kind), ent.pose, in_goal, ent.pose.orientation)
        }
        NodeRef::Goal(g) => {
            let goal = &state.goals[g];
            let occupant = goal.filled_by.map(|e| state.entities[e].pose.orientation).unwrap_or(0);
            (NodeKind::of_goal(goal.kind), goal.pose, goal.filled_by.is_some(), occupant)
        }
    };
    let mut row = vec![kind.code(), pose.x, pose.y, pose.z, if filled { 1.0 } else { 0.0 }];
    if let Some(dw) = &state.dishwasher {
        row.push(orientation as f32 / 6.0);
        row.push(if dw.top_open { 1.0 } else { 0.0 });
        row.push(if dw.bottom_open { 1.0 } else { 0.0 });
    }
    row
}

/// Encodes the state under its own observability setting.
pub fn encode_scene(state: &SceneState) -> Result<SceneGraph> {
    encode_scene_with(state, state.observability)
}

pub fn encode_scene_with(state: &SceneState, observability: Observability) -> Result<SceneGraph> {
    let view = SceneState { observability, ..state.clone() };
    let objects = view.visible_objects();
    let goals = view.visible_goals();
    let n = objects.len() + goals.len();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let nodes: Vec<NodeRef> = objects
        .iter()
        .map(|&e| NodeRef::Entity(e))
        .chain(goals.iter().map(|&g| NodeRef::Goal(g)))
        .collect();
    let d = feature_width(state);
    let mut data = Vec::with_capacity(n * d);
    let mut roles = Vec::with_capacity(n);
    for &node in &nodes {
        let row = node_feature(state, node);
        roles.push(match node {
            NodeRef::Entity(e) => NodeKind::of_entity(state.entities[e].kind),
            NodeRef::Goal(g) => NodeKind::of_goal(state.goals[g].kind),
        });
        data.extend(row);
    }
    Ok(SceneGraph {
        n_objects: objects.len(),
        n_goals: goals.len(),
        features: Tensor::new(vec![n, d], data)?,
        edges: dense_edges(n),
        roles,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worlds::{reset, Entity, Goal, Pose, WorldSpec};

    fn minimal() -> SceneState {
        let mut s = reset(&WorldSpec::kblock(1, 0)).unwrap();
        s.entities[0].pose = Pose::at(0.0, 0.0, 0.0);
        s.goals[0].pose = Pose::at(1.0, 0.0, 0.1);
        s
    }

    #[test]
    fn minimal_scene() {
        let g = encode_scene(&minimal()).unwrap();
        assert_eq!(g.n_nodes(), 2);
        assert_eq!(g.features.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 1.0, 0.0, 0.1, 0.0]);
        assert_eq!(g.edges, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn dense_edge_count() {
        let g = encode_scene(&reset(&WorldSpec::kblock(3, 1)).unwrap()).unwrap();
        assert_eq!(g.n_nodes(), 6);
        assert_eq!(g.edges.len(), 30);
        for n in 1..20 {
            assert_eq!(dense_edges(n).len(), n * (n - 1));
        }
    }

    #[test]
    fn closed_box_hides_blocks() {
        let s = reset(&WorldSpec::rearrange(2, 0)).unwrap();
        let g = encode_scene(&s).unwrap();
        assert!(g.roles.iter().all(|r| *r != NodeKind::Block && *r != NodeKind::GoalForBlock));
        assert_eq!(g.roles.iter().filter(|r| **r == NodeKind::Cover).count(), 2);
        let full = encode_scene_with(&s, Observability::Full).unwrap();
        assert_eq!(full.roles.iter().filter(|r| **r == NodeKind::Block).count(), 2);
    }

    #[test]
    fn feature_rows() {
        let mut s = minimal();
        s.goals[0].pose = Pose::at(0.4, 0.0, 0.2);
        assert_eq!(node_feature(&s, NodeRef::Goal(0)), vec![2.0, 0.4, 0.0, 0.2, 0.0]);
        s.entities[0].support = Support::Goal(0);
        s.goals[0].filled_by = Some(0);
        assert_eq!(node_feature(&s, NodeRef::Entity(0))[4], 1.0);
        assert_eq!(node_feature(&s, NodeRef::Goal(0))[4], 1.0);
        s.entities[0].kind = EntityKind::Cover;
        assert_eq!(node_feature(&s, NodeRef::Entity(0))[0], 0.0);
    }

    #[test]
    fn empty_scene_is_an_error() {
        let mut s = minimal();
        s.entities = Vec::<Entity>::new();
        s.goals = Vec::<Goal>::new();
        assert!(matches!(encode_scene(&s), Err(Error::EmptyGraph)));
    }

    #[test]
    fn dishwasher_width() {
        let s = reset(&WorldSpec::dishwasher(crate::worlds::Preference::TopBottom, 10, 0)).unwrap();
        let g = encode_scene(&s).unwrap();
        assert_eq!(g.feature_width(), DISH_FEATURES);
        assert_eq!(g.n_objects, 10);
        assert_eq!(g.n_goals, 24);
    }
}
