use serde::{Deserialize, Serialize};

/// Edge length of a block, in meters.
pub const BLOCK_SIZE: f32 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Block,
    Cover,
    Plate,
    Bowl,
}

impl EntityKind {
    pub fn is_dish(self) -> bool {
        matches!(self, EntityKind::Plate | EntityKind::Bowl)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalKind {
    Block,
    Cover,
    TopTray,
    BottomTray,
}

/// Position in the robot frame (meters) plus a discrete orientation code in `0..6`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub orientation: u8,
}

impl Pose {
    pub fn at(x: f32, y: f32, z: f32) -> Self {
        Self { x, y, z, orientation: 0 }
    }
}

/// What an entity rests on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "on", content = "id", rename_all = "snake_case")]
pub enum Support {
    Table,
    Counter,
    Object(usize),
    Goal(usize),
    BoxFloor(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: usize,
    pub kind: EntityKind,
    pub pose: Pose,
    pub support: Support,
    /// Box whose interior holds this entity.
    pub in_box: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub id: usize,
    pub kind: GoalKind,
    pub pose: Pose,
    pub filled_by: Option<usize>,
    /// Goals that must be occupied before this one can take an object.
    pub below: Vec<usize>,
    pub in_box: Option<usize>,
    /// Whether the goal counts towards task completion.
    pub required: bool,
    /// Entity kind that satisfies the goal; `None` means the kind implied by `kind`.
    pub accepts: Option<EntityKind>,
    /// Orientation an occupant must have to satisfy the goal.
    pub orientation: Option<u8>,
}

impl Goal {
    pub fn accepts_kind(&self, kind: EntityKind) -> bool {
        match self.accepts {
            Some(k) => k == kind,
            None => match self.kind {
                GoalKind::Block => kind == EntityKind::Block,
                GoalKind::Cover => kind == EntityKind::Cover,
                GoalKind::TopTray | GoalKind::BottomTray => false,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxState {
    pub id: usize,
    pub x: f32,
    pub y: f32,
    /// Goal on the rim of the box; the box is closed while a cover occupies it.
    pub cover_goal: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    /// Bowls in the top tray, plates in the bottom tray.
    TopBottom,
    /// Everything in the top tray: plates on the left, bowls on the right.
    LeftRight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dishwasher {
    pub top_open: bool,
    pub bottom_open: bool,
    pub preference: Preference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Observability {
    #[default]
    Full,
    /// Contents of closed boxes (objects and goals) are not observed.
    HideClosedBoxes,
}

/// Ground-truth symbolic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub entities: Vec<Entity>,
    pub goals: Vec<Goal>,
    pub boxes: Vec<BoxState>,
    pub dishwasher: Option<Dishwasher>,
    pub step_count: u32,
    pub step_budget: u32,
    /// Number of goal fillings that constitutes success (G).
    pub target_count: u32,
    pub observability: Observability,
    pub seed: u64,
    pub failure_rate: f32,
}

impl SceneState {
    pub fn box_is_open(&self, b: usize) -> bool {
        !matches!(self.goals[self.boxes[b].cover_goal].filled_by, Some(e) if self.entities[e].kind == EntityKind::Cover)
    }

    /// The cover currently closing box `b`.
    pub fn lid_of(&self, b: usize) -> Option<usize> {
        self.goals[self.boxes[b].cover_goal].filled_by.filter(|&e| self.entities[e].kind == EntityKind::Cover)
    }

    fn entity_visible(&self, e: &Entity) -> bool {
        match (self.observability, e.in_box) {
            (Observability::HideClosedBoxes, Some(b)) => self.box_is_open(b),
            _ => true,
        }
    }

    fn goal_visible(&self, g: &Goal) -> bool {
        match (self.observability, g.in_box) {
            (Observability::HideClosedBoxes, Some(b)) => self.box_is_open(b),
            _ => true,
        }
    }

    /// Entity ids in node order.
    pub fn visible_objects(&self) -> Vec<usize> {
        self.entities.iter().filter(|e| self.entity_visible(e)).map(|e| e.id).collect()
    }

    /// Goal ids in node order.
    pub fn visible_goals(&self) -> Vec<usize> {
        self.goals.iter().filter(|g| self.goal_visible(g)).map(|g| g.id).collect()
    }

    pub fn goal_of(&self, entity: usize) -> Option<usize> {
        match self.entities[entity].support {
            Support::Goal(g) => Some(g),
            _ => None,
        }
    }

    /// Whether something rests on top of `entity` (or it is sealed in a closed box).
    pub fn is_covered(&self, entity: usize) -> bool {
        let e = &self.entities[entity];
        if let Some(b) = e.in_box {
            if !self.box_is_open(b) {
                return true;
            }
        }
        if self.entities.iter().any(|o| o.support == Support::Object(entity)) {
            return true;
        }
        if let Support::Goal(g) = e.support {
            return self.goals.iter().any(|h| h.filled_by.is_some() && h.below.contains(&g));
        }
        false
    }

    pub fn goal_satisfied(&self, goal: usize) -> bool {
        let g = &self.goals[goal];
        match g.filled_by {
            Some(e) if g.required => {
                let ent = &self.entities[e];
                g.accepts_kind(ent.kind) && g.orientation.is_none_or(|o| o == ent.pose.orientation)
            }
            _ => false,
        }
    }

    /// Correctly filled required goals, g(s).
    pub fn goals_filled(&self) -> u32 {
        (0..self.goals.len()).filter(|&g| self.goal_satisfied(g)).count() as u32
    }

    pub fn is_success(&self) -> bool {
        self.goals_filled() >= self.target_count
    }

    pub fn is_done(&self) -> bool {
        self.is_success() || self.step_count >= self.step_budget
    }

    /// Re-enumerates entities and goals: `entity_perm[old] = new`, `goal_perm[old] = new`.
    pub fn permuted(&self, entity_perm: &[usize], goal_perm: &[usize]) -> SceneState {
        let remap_support = |s: Support| match s {
            Support::Object(o) => Support::Object(entity_perm[o]),
            Support::Goal(g) => Support::Goal(goal_perm[g]),
            other => other,
        };
        let mut entities = self.entities.clone();
        for e in &self.entities {
            let mut n = e.clone();
            n.id = entity_perm[e.id];
            n.support = remap_support(e.support);
            let id = n.id;
            entities[id] = n;
        }
        let mut goals = self.goals.clone();
        for g in &self.goals {
            let mut n = g.clone();
            n.id = goal_perm[g.id];
            n.filled_by = g.filled_by.map(|e| entity_perm[e]);
            n.below = g.below.iter().map(|&b| goal_perm[b]).collect();
            let id = n.id;
            goals[id] = n;
        }
        let boxes = self
            .boxes
            .iter()
            .map(|b| BoxState { cover_goal: goal_perm[b.cover_goal], ..b.clone() })
            .collect();
        SceneState { entities, goals, boxes, ..self.clone() }
    }

    /// Shifts every position by `(dx, dy)` in the table plane.
    pub fn translated(&self, dx: f32, dy: f32) -> SceneState {
        let mut s = self.clone();
        for e in &mut s.entities {
            e.pose.x += dx;
            e.pose.y += dy;
        }
        for g in &mut s.goals {
            g.pose.x += dx;
            g.pose.y += dy;
        }
        for b in &mut s.boxes {
            b.x += dx;
            b.y += dy;
        }
        s
    }

    /// Axis-aligned xy extent of all entities and goals.
    pub fn extent(&self) -> (f32, f32, f32, f32) {
        let xs = self.entities.iter().map(|e| (e.pose.x, e.pose.y)).chain(self.goals.iter().map(|g| (g.pose.x, g.pose.y)));
        xs.fold(
            (f32::INFINITY, f32::NEG_INFINITY, f32::INFINITY, f32::NEG_INFINITY),
            |(x0, x1, y0, y1), (x, y)| (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
        )
    }

    /// Structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (i, e) in self.entities.iter().enumerate() {
            if e.id != i {
                return Err(format!("entity {} has id {}", i, e.id));
            }
            match e.support {
                Support::Goal(g) => {
                    if self.goals.get(g).and_then(|g| g.filled_by) != Some(i) {
                        return Err(format!("entity {} claims goal {} which does not hold it", i, g));
                    }
                }
                Support::Object(o) => {
                    if o == i || o >= self.entities.len() {
                        return Err(format!("entity {} rests on invalid object {}", i, o));
                    }
                }
                Support::BoxFloor(b) if b >= self.boxes.len() => {
                    return Err(format!("entity {} rests on missing box {}", i, b));
                }
                _ => {}
            }
            // acyclic support chain
            let mut cur = i;
            for _ in 0..=self.entities.len() {
                match self.entities[cur].support {
                    Support::Object(o) => cur = o,
                    _ => break,
                }
                if cur == i {
                    return Err(format!("support cycle through entity {}", i));
                }
            }
        }
        for (i, g) in self.goals.iter().enumerate() {
            if g.id != i {
                return Err(format!("goal {} has id {}", i, g.id));
            }
            if let Some(e) = g.filled_by {
                if self.entities.get(e).map(|e| e.support) != Some(Support::Goal(i)) {
                    return Err(format!("goal {} filled by {} which is elsewhere", i, e));
                }
            }
        }
        Ok(())
    }
}
