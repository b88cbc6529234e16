//! Self-contained 2-D tabletop environment.
//!
//! The world is a unit square holding a drawer, a box, a light button, and a
//! blue block. An agent (the gripper) moves in the plane, toggles object
//! states by interacting near their anchors, and can grasp and carry the
//! block. Dynamics are pure functions of `(state, action)`, and observations
//! are deterministic given the state's noise seed and step counter, so every
//! trajectory is exactly reproducible from a seed.

pub mod registry;
pub mod scripted;

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, ObjectId, ObjectState, StateMap};
use crate::error::{Classify, ErrorClass};

/// Number of channels in the global observation vector.
pub const GLOBAL_DIM: usize = 16;
/// Number of channels in each per-object crop vector.
pub const CROP_DIM: usize = 6;

/// Tunable world parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Maximum per-axis displacement of one action step.
    pub max_step: f64,
    /// Radius around an anchor within which interactions and grasps succeed.
    pub interaction_radius: f64,
    /// Default number of frames in a generated clip.
    pub clip_length: usize,
    /// Standard deviation of the Gaussian observation noise.
    pub noise_sigma: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            max_step: 0.05,
            interaction_radius: 0.08,
            clip_length: 24,
            noise_sigma: 0.01,
        }
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("action contains a non-finite component: {0:?}")]
    NonFiniteAction([f64; 4]),
    #[error("initial state is invalid: {0}")]
    InvalidInitialState(String),
    #[error("scripted controller for {motion:?} did not finish within {budget} steps")]
    ControllerStuck { motion: String, budget: usize },
    #[error("clip length must be at least 3, got {0}")]
    ClipTooShort(usize),
    #[error("unknown motion: {0}")]
    UnknownMotion(String),
    #[error("unknown task: {0}")]
    UnknownTask(String),
    #[error("task registry is invalid: {0}")]
    InvalidRegistry(String),
    #[error("failed to read task registry: {0}")]
    RegistryIo(#[from] std::io::Error),
    #[error("failed to parse task registry: {0}")]
    RegistryParse(#[from] toml::de::Error),
}

impl Classify for WorldError {
    fn class(&self) -> ErrorClass {
        match self {
            WorldError::RegistryIo(_) | WorldError::ControllerStuck { .. } => ErrorClass::Runtime,
            _ => ErrorClass::Validation,
        }
    }
}

/// Complete simulator state. Observation noise is a pure function of
/// `noise_seed` and `step_count`, so states can be stepped and re-observed
/// deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub agent: [f64; 2],
    /// Agent displacement over the previous step; zero at episode start.
    pub last_delta: [f64; 2],
    pub gripper_closed: bool,
    /// Discrete state of every object, including the block's location.
    pub objects: StateMap,
    pub noise_seed: u64,
    pub step_count: u64,
}

/// One observation: a 16-channel global vector plus a 6-channel crop per
/// object, all noisy float32 channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub global: Vec<f32>,
    /// Crops in [`ObjectId::ALL`] order: drawer, box, light, block.
    pub crops: Vec<Vec<f32>>,
}

impl Observation {
    pub fn crop(&self, object: ObjectId) -> &[f32] {
        let idx = ObjectId::ALL.iter().position(|o| *o == object).unwrap();
        &self.crops[idx]
    }

    /// Global vector widened to f64 for the numeric models.
    pub fn global_f64(&self) -> Vec<f64> {
        self.global.iter().map(|&v| v as f64).collect()
    }
}

/// The environment: catalog structure plus tunable parameters.
#[derive(Clone, Debug)]
pub struct World {
    pub catalog: Arc<Catalog>,
    pub config: WorldConfig,
}

impl World {
    pub fn new(catalog: Arc<Catalog>, config: WorldConfig) -> World {
        World { catalog, config }
    }

    /// World over the built-in catalog.
    pub fn builtin(config: WorldConfig) -> World {
        World::new(Arc::new(Catalog::builtin().clone()), config)
    }

    /// Current block position: its container anchor, the table anchor, or the
    /// agent position while held.
    pub fn block_position(&self, state: &WorldState) -> [f64; 2] {
        match state.objects[&ObjectId::Block] {
            ObjectState::Held => state.agent,
            ObjectState::InDrawer => self.catalog.anchor("drawer"),
            ObjectState::InBox => self.catalog.anchor("box"),
            _ => self.catalog.anchor("block_table"),
        }
    }

    /// Starts an episode from `initial` object states with the agent placed
    /// uniformly in the start region drawn from `seed`.
    pub fn reset(&self, initial: &StateMap, seed: u64) -> Result<(WorldState, Observation), WorldError> {
        self.validate_initial(initial)?;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, 0x5eed));
        let agent = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
        let state = WorldState {
            agent,
            last_delta: [0.0, 0.0],
            gripper_closed: false,
            objects: initial.clone(),
            noise_seed: splitmix(seed, 0x0b5e),
            step_count: 0,
        };
        let obs = self.observe(&state);
        Ok((state, obs))
    }

    fn validate_initial(&self, initial: &StateMap) -> Result<(), WorldError> {
        for def in &self.catalog.objects {
            match initial.get(&def.id) {
                None => {
                    return Err(WorldError::InvalidInitialState(format!(
                        "missing state for {}",
                        def.id.as_str()
                    )))
                }
                Some(state) if !def.env_states.contains(state) => {
                    return Err(WorldError::InvalidInitialState(format!(
                        "{} cannot start in state {}",
                        def.id.as_str(),
                        state.as_str()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Advances the simulation by one action. The action is `(dx, dy,
    /// gripper, interact)` with every component clamped to `[-1, 1]`:
    /// movement is scaled by `max_step`, gripper > 0.5 closes / < -0.5 opens,
    /// and interact > 0.5 toggles the nearest object within reach. Movement
    /// applies before the gripper, the gripper before the interaction.
    pub fn step(&self, state: &WorldState, action: [f64; 4]) -> Result<(WorldState, Observation), WorldError> {
        if action.iter().any(|a| !a.is_finite()) {
            return Err(WorldError::NonFiniteAction(action));
        }
        let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let mut next = state.clone();

        next.agent[0] = (next.agent[0] + a[0] * self.config.max_step).clamp(0.0, 1.0);
        next.agent[1] = (next.agent[1] + a[1] * self.config.max_step).clamp(0.0, 1.0);
        next.last_delta = [next.agent[0] - state.agent[0], next.agent[1] - state.agent[1]];

        if a[2] > 0.5 && !next.gripper_closed {
            next.gripper_closed = true;
            if self.block_graspable(&next) {
                next.objects.insert(ObjectId::Block, ObjectState::Held);
            }
        } else if a[2] < -0.5 && next.gripper_closed {
            next.gripper_closed = false;
            if next.objects[&ObjectId::Block] == ObjectState::Held {
                next.objects.insert(ObjectId::Block, self.release_target(&next));
            }
        }

        if a[3] > 0.5 {
            self.interact(&mut next);
        }

        next.step_count += 1;
        let obs = self.observe(&next);
        Ok((next, obs))
    }

    /// The block can be grasped when the gripper is within the interaction
    /// radius of it and it is not shut inside a closed container.
    fn block_graspable(&self, state: &WorldState) -> bool {
        let reachable = match state.objects[&ObjectId::Block] {
            ObjectState::OnTable => true,
            ObjectState::InDrawer => state.objects[&ObjectId::Drawer] == ObjectState::Open,
            ObjectState::InBox => state.objects[&ObjectId::Box] == ObjectState::Open,
            _ => false,
        };
        reachable && dist(state.agent, self.block_position(state)) <= self.config.interaction_radius
    }

    /// Where a released block lands: an open drawer or box when released over
    /// one, otherwise it drops back to its table anchor.
    fn release_target(&self, state: &WorldState) -> ObjectState {
        let near = |key: &str| dist(state.agent, self.catalog.anchor(key)) <= self.config.interaction_radius;
        if state.objects[&ObjectId::Drawer] == ObjectState::Open && near("drawer") {
            ObjectState::InDrawer
        } else if state.objects[&ObjectId::Box] == ObjectState::Open && near("box") {
            ObjectState::InBox
        } else {
            ObjectState::OnTable
        }
    }

    /// Toggles the nearest of drawer, box, and light if within reach. The
    /// block is manipulated through the gripper, not the interact flag.
    fn interact(&self, state: &mut WorldState) {
        let mut nearest: Option<(ObjectId, f64)> = None;
        for (object, key) in [(ObjectId::Drawer, "drawer"), (ObjectId::Box, "box"), (ObjectId::Light, "light")] {
            let d = dist(state.agent, self.catalog.anchor(key));
            if nearest.map_or(true, |(_, best)| d < best) {
                nearest = Some((object, d));
            }
        }
        if let Some((object, d)) = nearest {
            if d <= self.config.interaction_radius {
                let flipped = match state.objects[&object] {
                    ObjectState::Closed => ObjectState::Open,
                    _ => ObjectState::Closed,
                };
                state.objects.insert(object, flipped);
            }
        }
    }

    /// Renders the deterministic noisy observation for a state.
    ///
    /// Global layout (16): agent x/y, gripper, drawer one-hot (2), box
    /// one-hot (2), light one-hot (2), block location one-hot (3, zeros while
    /// held), block x/y, agent velocity x/y in step units. Crops (6 per
    /// object): state one-hot (padded to 4 for the block) plus the anchor
    /// offset relative to the agent; container crops carry two pure-noise
    /// channels.
    pub fn observe(&self, state: &WorldState) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(state.noise_seed, state.step_count));
        let noise = Normal::new(0.0, self.config.noise_sigma).expect("sigma >= 0");
        let mut draw = |base: f64| (base + noise.sample(&mut rng)) as f32;

        let block_pos = self.block_position(state);
        let mut global = Vec::with_capacity(GLOBAL_DIM);
        global.push(draw(state.agent[0]));
        global.push(draw(state.agent[1]));
        global.push(draw(if state.gripper_closed { 1.0 } else { 0.0 }));
        for (object, states) in [
            (ObjectId::Drawer, [ObjectState::Closed, ObjectState::Open].as_slice()),
            (ObjectId::Box, [ObjectState::Closed, ObjectState::Open].as_slice()),
            (ObjectId::Light, [ObjectState::Closed, ObjectState::Open].as_slice()),
            (
                ObjectId::Block,
                [ObjectState::InDrawer, ObjectState::OnTable, ObjectState::InBox].as_slice(),
            ),
        ] {
            for s in states {
                global.push(draw(if state.objects[&object] == *s { 1.0 } else { 0.0 }));
            }
        }
        global.push(draw(block_pos[0]));
        global.push(draw(block_pos[1]));
        global.push(draw(state.last_delta[0] / self.config.max_step));
        global.push(draw(state.last_delta[1] / self.config.max_step));
        debug_assert_eq!(global.len(), GLOBAL_DIM);

        let mut crops = Vec::with_capacity(ObjectId::ALL.len());
        for def_id in ObjectId::ALL {
            let def = self.catalog.object(def_id);
            let mut crop = Vec::with_capacity(CROP_DIM);
            for s in &def.states {
                crop.push(draw(if state.objects[&def_id] == *s { 1.0 } else { 0.0 }));
            }
            let target = match def_id {
                ObjectId::Block => block_pos,
                _ => self.catalog.anchor(def_id.as_str()),
            };
            crop.push(draw(target[0] - state.agent[0]));
            crop.push(draw(target[1] - state.agent[1]));
            while crop.len() < CROP_DIM {
                crop.push(draw(0.0));
            }
            debug_assert_eq!(crop.len(), CROP_DIM);
            crops.push(crop);
        }

        Observation { global, crops }
    }

    /// Ground-truth object states (used for labels and the stage-reward
    /// baseline).
    pub fn ground_truth(&self, state: &WorldState) -> StateMap {
        state.objects.clone()
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// SplitMix64 finalizer used to derive independent noise streams.
pub(crate) fn splitmix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
