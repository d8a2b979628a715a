use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::state::*;
use crate::error::{Error, Result};

/// Minimum distance between stack, column, box and storage bases.
pub const MIN_SEPARATION: f32 = 0.10;

/// Orientation codes the dishwasher preferences ask for.
pub const PLATE_UPRIGHT: u8 = 1;
pub const PLATE_FLAT: u8 = 2;
pub const BOWL_FLIPPED: u8 = 3;

pub const TRAY_SLOTS: usize = 12;
const DISHWASHER_X: f32 = 0.55;
const TOP_TRAY_Z: f32 = 0.35;
const BOTTOM_TRAY_Z: f32 = 0.15;
const COUNTER_Z: f32 = 0.40;
const COUNTER: Bounds = Bounds { x_min: 0.95, x_max: 1.25, y_min: -0.45, y_max: 0.45 };

/// Axis-aligned placement region on the table, in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f32,
    pub x_max: f32,
    pub y_min: f32,
    pub y_max: f32,
}

impl Default for Bounds {
    fn default() -> Self {
        Self { x_min: 0.3, x_max: 0.8, y_min: -0.35, y_max: 0.35 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// One stack of K blocks to be inverted into a goal column elsewhere.
    KBlock,
    /// One stack of K blocks to be rebuilt as a pyramid; K must be triangular.
    KPyramid,
    /// `stacks` stacks of K blocks and as many goal columns.
    MultiStack { stacks: usize },
    /// Two closed boxes; K blocks move from one to the other and both boxes close again.
    BoxRearrange,
    /// K blocks go from a table stack into an open box which is then closed.
    BoxPack,
    /// A closed box is opened and its K blocks are stacked on the table.
    BoxUnpack,
    /// K dishes (half plates, half bowls) loaded into a two-tray dishwasher.
    Dishwasher { preference: Preference },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    #[serde(flatten)]
    pub family: Family,
    pub k: usize,
    pub seed: u64,
    #[serde(default)]
    pub bounds: Bounds,
    #[serde(default)]
    pub failure_rate: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observability: Option<Observability>,
}

impl WorldSpec {
    pub fn new(family: Family, k: usize, seed: u64) -> Self {
        Self { family, k, seed, bounds: Bounds::default(), failure_rate: 0.0, observability: None }
    }

    pub fn kblock(k: usize, seed: u64) -> Self {
        Self::new(Family::KBlock, k, seed)
    }

    pub fn pyramid(k: usize, seed: u64) -> Self {
        Self::new(Family::KPyramid, k, seed)
    }

    pub fn multi_stack(stacks: usize, k: usize, seed: u64) -> Self {
        Self::new(Family::MultiStack { stacks }, k, seed)
    }

    pub fn rearrange(k: usize, seed: u64) -> Self {
        Self::new(Family::BoxRearrange, k, seed)
    }

    pub fn dishwasher(preference: Preference, dishes: usize, seed: u64) -> Self {
        Self::new(Family::Dishwasher { preference }, dishes, seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_failure_rate(mut self, rate: f32) -> Self {
        self.failure_rate = rate;
        self
    }

    /// Observability used when none is given: only rearrangement hides closed-box contents.
    pub fn effective_observability(&self) -> Observability {
        self.observability.unwrap_or(match self.family {
            Family::BoxRearrange => Observability::HideClosedBoxes,
            _ => Observability::Full,
        })
    }

    pub fn is_dishwasher(&self) -> bool {
        matches!(self.family, Family::Dishwasher { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Spec("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err(Error::Spec(format!("failure rate {} outside [0,1]", self.failure_rate)));
        }
        let b = self.bounds;
        if !(b.x_min < b.x_max && b.y_min < b.y_max) {
            return Err(Error::Spec("empty placement bounds".into()));
        }
        match self.family {
            Family::KPyramid if pyramid_rows(self.k).is_none() => {
                Err(Error::Spec(format!("{} blocks cannot form a pyramid", self.k)))
            }
            Family::MultiStack { stacks: 0 } => Err(Error::Spec("need at least one stack".into())),
            Family::Dishwasher { .. } if self.k > 2 * TRAY_SLOTS => {
                Err(Error::Spec(format!("{} dishes exceed dishwasher capacity", self.k)))
            }
            _ => Ok(()),
        }
    }
}

fn pyramid_rows(k: usize) -> Option<usize> {
    (1..=k).find(|n| n * (n + 1) / 2 == k)
}

struct Builder {
    entities: Vec<Entity>,
    goals: Vec<Goal>,
    boxes: Vec<BoxState>,
}

impl Builder {
    fn new() -> Self {
        Self { entities: Vec::new(), goals: Vec::new(), boxes: Vec::new() }
    }

    fn entity(&mut self, kind: EntityKind, pose: Pose, support: Support, in_box: Option<usize>) -> usize {
        let id = self.entities.len();
        self.entities.push(Entity { id, kind, pose, support, in_box });
        id
    }

    fn goal(&mut self, kind: GoalKind, pose: Pose, below: Vec<usize>, in_box: Option<usize>, required: bool) -> usize {
        let id = self.goals.len();
        self.goals.push(Goal {
            id,
            kind,
            pose,
            filled_by: None,
            below,
            in_box,
            required,
            accepts: None,
            orientation: None,
        });
        id
    }

    fn stack(&mut self, x: f32, y: f32, k: usize, base: Support, in_box: Option<usize>) -> Vec<usize> {
        let mut ids = Vec::with_capacity(k);
        for i in 0..k {
            let support = if i == 0 { base } else { Support::Object(ids[i - 1]) };
            ids.push(self.entity(EntityKind::Block, Pose::at(x, y, i as f32 * BLOCK_SIZE), support, in_box));
        }
        ids
    }

    fn column(&mut self, x: f32, y: f32, k: usize, in_box: Option<usize>, required: bool) -> Vec<usize> {
        let mut ids: Vec<usize> = Vec::with_capacity(k);
        for i in 0..k {
            let below = if i == 0 { vec![] } else { vec![ids[i - 1]] };
            ids.push(self.goal(GoalKind::Block, Pose::at(x, y, i as f32 * BLOCK_SIZE), below, in_box, required));
        }
        ids
    }

    /// Adds a box with its rim goal; the rim sits above `height` blocks.
    fn open_box(&mut self, x: f32, y: f32, height: usize, rim_required: bool) -> usize {
        let id = self.boxes.len();
        let rim = self.goal(GoalKind::Cover, Pose::at(x, y, height as f32 * BLOCK_SIZE), vec![], None, rim_required);
        self.boxes.push(BoxState { id, x, y, cover_goal: rim });
        id
    }

    fn put(&mut self, entity: usize, goal: usize) {
        self.entities[entity].support = Support::Goal(goal);
        self.entities[entity].pose = Pose { orientation: self.entities[entity].pose.orientation, ..self.goals[goal].pose };
        self.goals[goal].filled_by = Some(entity);
    }

    fn cover_in(&mut self, goal: usize) -> usize {
        let pose = self.goals[goal].pose;
        let c = self.entity(EntityKind::Cover, pose, Support::Table, None);
        self.put(c, goal);
        c
    }
}

fn sample_sites(rng: &mut ChaCha8Rng, bounds: &Bounds, n: usize) -> Result<Vec<(f32, f32)>> {
    let mut sites: Vec<(f32, f32)> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..2000 {
            let x = rng.gen_range(bounds.x_min..=bounds.x_max);
            let y = rng.gen_range(bounds.y_min..=bounds.y_max);
            if sites.iter().all(|&(sx, sy)| ((sx - x).powi(2) + (sy - y).powi(2)).sqrt() >= MIN_SEPARATION) {
                sites.push((x, y));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Spec(format!("cannot place {} separated sites in bounds", n)));
        }
    }
    Ok(sites)
}

/// Samples an initial state for `spec`; identical specs give identical states.
pub fn reset(spec: &WorldSpec) -> Result<SceneState> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.k;
    let mut b = Builder::new();
    let mut dishwasher = None;
    match spec.family {
        Family::KBlock => {
            let s = sample_sites(&mut rng, &spec.bounds, 2)?;
            b.stack(s[0].0, s[0].1, k, Support::Table, None);
            b.column(s[1].0, s[1].1, k, None, true);
        }
        Family::KPyramid => {
            let rows = pyramid_rows(k).expect("validated");
            let s = sample_sites(&mut rng, &spec.bounds, 2)?;
            b.stack(s[0].0, s[0].1, k, Support::Table, None);
            let (gx, gy) = s[1];
            let mut prev: Vec<usize> = Vec::new();
            for r in 0..rows {
                let width = rows - r;
                let mut row = Vec::with_capacity(width);
                for i in 0..width {
                    let y = gy + (i as f32 - (width - 1) as f32 / 2.0) * BLOCK_SIZE;
                    let below = if r == 0 { vec![] } else { vec![prev[i], prev[i + 1]] };
                    row.push(b.goal(GoalKind::Block, Pose::at(gx, y, r as f32 * BLOCK_SIZE), below, None, true));
                }
                prev = row;
            }
        }
        Family::MultiStack { stacks } => {
            let s = sample_sites(&mut rng, &spec.bounds, 2 * stacks)?;
            for &(x, y) in &s[..stacks] {
                b.stack(x, y, k, Support::Table, None);
            }
            for &(x, y) in &s[stacks..] {
                b.column(x, y, k, None, true);
            }
        }
        Family::BoxPack => {
            let s = sample_sites(&mut rng, &spec.bounds, 3)?;
            b.stack(s[0].0, s[0].1, k, Support::Table, None);
            let bx = b.open_box(s[1].0, s[1].1, k, true);
            b.column(s[1].0, s[1].1, k, Some(bx), true);
            let storage = b.goal(GoalKind::Cover, Pose::at(s[2].0, s[2].1, 0.0), vec![], None, false);
            b.cover_in(storage);
        }
        Family::BoxUnpack => {
            let s = sample_sites(&mut rng, &spec.bounds, 3)?;
            let bx = b.open_box(s[0].0, s[0].1, k, false);
            b.stack(s[0].0, s[0].1, k, Support::BoxFloor(bx), Some(bx));
            let rim = b.boxes[bx].cover_goal;
            b.cover_in(rim);
            b.goal(GoalKind::Cover, Pose::at(s[1].0, s[1].1, 0.0), vec![], None, true);
            b.column(s[2].0, s[2].1, k, None, true);
        }
        Family::BoxRearrange => {
            let s = sample_sites(&mut rng, &spec.bounds, 4)?;
            let full = b.open_box(s[0].0, s[0].1, k, true);
            b.stack(s[0].0, s[0].1, k, Support::BoxFloor(full), Some(full));
            let empty = b.open_box(s[1].0, s[1].1, k, true);
            b.column(s[1].0, s[1].1, k, Some(empty), true);
            for bx in [full, empty] {
                let rim = b.boxes[bx].cover_goal;
                b.cover_in(rim);
            }
            for &(x, y) in &s[2..4] {
                b.goal(GoalKind::Cover, Pose::at(x, y, 0.0), vec![], None, false);
            }
        }
        Family::Dishwasher { preference } => {
            build_dishwasher(&mut b, &mut rng, k, preference)?;
            dishwasher = Some(Dishwasher { top_open: false, bottom_open: false, preference });
        }
    }

    let target_count = if dishwasher.is_some() {
        b.entities.len() as u32
    } else {
        b.goals.iter().filter(|g| g.required).count() as u32
    };
    let state = SceneState {
        entities: b.entities,
        goals: b.goals,
        boxes: b.boxes,
        dishwasher,
        step_count: 0,
        step_budget: 4 * target_count,
        target_count,
        observability: spec.effective_observability(),
        seed: spec.seed,
        failure_rate: spec.failure_rate,
    };
    // enumeration order carries no information about the task
    let mut entity_perm: Vec<usize> = (0..state.entities.len()).collect();
    let mut goal_perm: Vec<usize> = (0..state.goals.len()).collect();
    entity_perm.shuffle(&mut rng);
    goal_perm.shuffle(&mut rng);
    Ok(state.permuted(&entity_perm, &goal_perm))
}

fn build_dishwasher(b: &mut Builder, rng: &mut ChaCha8Rng, dishes: usize, preference: Preference) -> Result<()> {
    let plates = dishes.div_ceil(2);
    let sites = sample_sites(rng, &COUNTER, dishes)?;
    for (i, &(x, y)) in sites.iter().enumerate() {
        let kind = if i < plates { EntityKind::Plate } else { EntityKind::Bowl };
        b.entity(kind, Pose::at(x, y, COUNTER_Z), Support::Counter, None);
    }
    for (tray, z) in [(GoalKind::TopTray, TOP_TRAY_Z), (GoalKind::BottomTray, BOTTOM_TRAY_Z)] {
        for i in 0..TRAY_SLOTS {
            let y = (i as f32 - (TRAY_SLOTS - 1) as f32 / 2.0) * BLOCK_SIZE;
            let designation = match (preference, tray) {
                (Preference::TopBottom, GoalKind::TopTray) => Some((EntityKind::Bowl, BOWL_FLIPPED)),
                (Preference::TopBottom, _) => Some((EntityKind::Plate, PLATE_UPRIGHT)),
                (Preference::LeftRight, GoalKind::TopTray) if y < 0.0 => Some((EntityKind::Plate, PLATE_FLAT)),
                (Preference::LeftRight, GoalKind::TopTray) => Some((EntityKind::Bowl, BOWL_FLIPPED)),
                (Preference::LeftRight, _) => None,
            };
            let g = b.goal(tray, Pose::at(DISHWASHER_X, y, z), vec![], None, designation.is_some());
            if let Some((kind, orientation)) = designation {
                b.goals[g].accepts = Some(kind);
                b.goals[g].orientation = Some(orientation);
            }
        }
    }
    Ok(())
}

/// Random free spot on the counter near `(x, y)`, used when a dish slips.
pub(crate) fn counter_pose(rng: &mut impl Rng) -> Pose {
    Pose::at(
        rng.gen_range(COUNTER.x_min..=COUNTER.x_max),
        rng.gen_range(COUNTER.y_min..=COUNTER.y_max),
        COUNTER_Z,
    )
}
