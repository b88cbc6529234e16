//! Scripted motion controllers, clip generation, and expert rollouts.
//!
//! Every catalog motion carries a [`ControllerSpec`] that a small closed-loop
//! state machine executes. The same controllers produce the labeled training
//! clips, the expert demonstrations used for reward validation, and the
//! scripted expert that sanity-checks policy evaluation.

use rand::Rng;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{AnchorRef, ControllerSpec, MotionSpec, ObjectId, ObjectState, StateMap};
use crate::corpus::{ClipCorpus, ClipKind, MotionClip};
use crate::world::{dist, splitmix, Observation, World, WorldError, WorldState};

/// Distance at which a reach/carry target counts as arrived.
const ARRIVE_EPS: f64 = 0.03;
/// Distance at which an actuate approach is close enough to gesture safely.
const ACTUATE_EPS: f64 = 0.02;
/// Hard cap on steps one motion may take inside an expert rollout.
const MOTION_STEP_CAP: usize = 150;

/// Per-axis action units that drive the agent toward `target`, saturating at
/// one `max_step` per axis.
fn drive(agent: [f64; 2], target: [f64; 2], max_step: f64) -> [f64; 2] {
    [
        ((target[0] - agent[0]) / max_step).clamp(-1.0, 1.0),
        ((target[1] - agent[1]) / max_step).clamp(-1.0, 1.0),
    ]
}

#[derive(Clone, Copy)]
enum Phase {
    Approach,
    Gesture(u32),
    Interact,
    CloseGrip,
    Lift { target: [f64; 2] },
    Release,
    Done,
}

/// Closed-loop executor for one catalog motion.
pub struct MotionController {
    spec: MotionSpec,
    phase: Phase,
}

impl MotionController {
    pub fn new(spec: &MotionSpec) -> MotionController {
        MotionController {
            spec: spec.clone(),
            phase: Phase::Approach,
        }
    }

    fn resolve_anchor(&self, world: &World, state: &WorldState, anchor: AnchorRef) -> [f64; 2] {
        match anchor.anchor_key() {
            Some(key) => world.catalog.anchor(key),
            None => world.block_position(state),
        }
    }

    /// Next action, or `None` once the motion is complete. The controller is
    /// precondition-blind: run from an invalid start it still terminates, it
    /// just fails to produce the motion's effect.
    pub fn next_action(&mut self, world: &World, state: &WorldState) -> Option<[f64; 4]> {
        let max_step = world.config.max_step;
        match self.spec.controller.clone() {
            ControllerSpec::Reach { target, .. } => {
                let goal = self.resolve_anchor(world, state, target);
                if dist(state.agent, goal) <= ARRIVE_EPS {
                    return None;
                }
                let d = drive(state.agent, goal, max_step);
                Some([d[0], d[1], -1.0, -1.0])
            }
            ControllerSpec::Actuate { target, gesture, gesture_steps, .. } => loop {
                match self.phase {
                    Phase::Approach => {
                        let goal = world.catalog.anchor(target.as_str());
                        if dist(state.agent, goal) > ACTUATE_EPS {
                            let d = drive(state.agent, goal, max_step);
                            return Some([d[0], d[1], 0.0, -1.0]);
                        }
                        self.phase = Phase::Gesture(gesture_steps);
                    }
                    Phase::Gesture(0) => self.phase = Phase::Interact,
                    Phase::Gesture(n) => {
                        self.phase = Phase::Gesture(n - 1);
                        return Some([gesture[0] / max_step, gesture[1] / max_step, 0.0, -1.0]);
                    }
                    Phase::Interact => {
                        self.phase = Phase::Done;
                        return Some([0.0, 0.0, 0.0, 1.0]);
                    }
                    _ => return None,
                }
            },
            ControllerSpec::GraspLift { away } => loop {
                match self.phase {
                    Phase::Approach => {
                        let goal = world.block_position(state);
                        if dist(state.agent, goal) > ACTUATE_EPS {
                            let d = drive(state.agent, goal, max_step);
                            return Some([d[0], d[1], -1.0, -1.0]);
                        }
                        self.phase = Phase::CloseGrip;
                    }
                    Phase::CloseGrip => {
                        // Lift away from the grasp point toward the table
                        // center so the target always stays on the table.
                        let from = state.agent;
                        let center = [0.5, 0.5];
                        let norm = dist(from, center).max(1e-6);
                        let target = [
                            (from[0] + away * (center[0] - from[0]) / norm).clamp(0.02, 0.98),
                            (from[1] + away * (center[1] - from[1]) / norm).clamp(0.02, 0.98),
                        ];
                        self.phase = Phase::Lift { target };
                        return Some([0.0, 0.0, 1.0, -1.0]);
                    }
                    Phase::Lift { target } => {
                        if dist(state.agent, target) <= ARRIVE_EPS {
                            return None;
                        }
                        let d = drive(state.agent, target, max_step);
                        return Some([d[0], d[1], 1.0, -1.0]);
                    }
                    _ => return None,
                }
            },
            ControllerSpec::Carry { target, hover } => {
                let anchor = self.resolve_anchor(world, state, target);
                let goal = [
                    (anchor[0] + hover[0]).clamp(0.02, 0.98),
                    (anchor[1] + hover[1]).clamp(0.02, 0.98),
                ];
                if dist(state.agent, goal) <= ARRIVE_EPS {
                    return None;
                }
                let d = drive(state.agent, goal, max_step);
                Some([d[0], d[1], 1.0, -1.0])
            }
            ControllerSpec::Place { target } => loop {
                match self.phase {
                    Phase::Approach => {
                        let goal = self.resolve_anchor(world, state, target);
                        if dist(state.agent, goal) > 0.04 {
                            let d = drive(state.agent, goal, max_step);
                            return Some([d[0], d[1], 1.0, -1.0]);
                        }
                        self.phase = Phase::Release;
                    }
                    Phase::Release => {
                        self.phase = Phase::Done;
                        return Some([0.0, 0.0, -1.0, -1.0]);
                    }
                    _ => return None,
                }
            },
        }
    }
}

/// Steps the controller estimates it needs beyond pure travel.
fn controller_overhead(spec: &ControllerSpec) -> usize {
    match spec {
        ControllerSpec::Reach { .. } => 2,
        ControllerSpec::Actuate { gesture_steps, .. } => 3 + *gesture_steps as usize,
        ControllerSpec::GraspLift { away } => 4 + (away / 0.05).ceil() as usize,
        ControllerSpec::Carry { .. } => 2,
        ControllerSpec::Place { .. } => 3,
    }
}

/// Samples a valid start state for a motion clip: involved objects satisfy the
/// motion's precondition, uninvolved objects are randomized for diversity, and
/// the agent is placed so the controller finishes within `budget` steps.
fn sample_start(world: &World, motion: &MotionSpec, rng: &mut ChaCha8Rng, budget: usize) -> WorldState {
    let catalog = &world.catalog;
    let mut objects = StateMap::new();
    for def in &catalog.objects {
        let state = match motion.requires.get(&def.id) {
            Some(allowed) => allowed[rng.random_range(0..allowed.len())],
            None if def.id == ObjectId::Block => {
                let options = [ObjectState::InDrawer, ObjectState::OnTable, ObjectState::InBox];
                options[rng.random_range(0..options.len())]
            }
            None => def.env_states[rng.random_range(0..def.env_states.len())],
        };
        objects.insert(def.id, state);
    }
    if motion.block_reachable {
        match objects[&ObjectId::Block] {
            ObjectState::InDrawer => {
                objects.insert(ObjectId::Drawer, ObjectState::Open);
            }
            ObjectState::InBox => {
                objects.insert(ObjectId::Box, ObjectState::Open);
            }
            _ => {}
        }
    }
    let held = objects[&ObjectId::Block] == ObjectState::Held;

    let mut state = WorldState {
        agent: [0.5, 0.5],
        last_delta: [0.0, 0.0],
        gripper_closed: held,
        objects,
        noise_seed: rng.next_u64(),
        step_count: 0,
    };

    let overhead = controller_overhead(&motion.controller);
    let travel_budget = budget.saturating_sub(overhead).max(1);
    let max_far = (travel_budget as f64 * world.config.max_step * 0.9).min(0.85);
    let radius = world.config.interaction_radius;

    let place_near = |rng: &mut ChaCha8Rng, center: [f64; 2], lo: f64, hi: f64| -> [f64; 2] {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let r = rng.random_range(lo..hi.max(lo + 1e-6));
        [
            (center[0] + r * theta.cos()).clamp(0.02, 0.98),
            (center[1] + r * theta.sin()).clamp(0.02, 0.98),
        ]
    };

    // Far-start motions spend the clip traveling, so most frames land on the
    // approach corridor rather than piling up at the goal after the
    // controller finishes and the clip pads out. Filling the travel budget
    // also gives the in-clip temporal ordering a position gradient to bite
    // on at every radius instead of a still tail.
    let far_lo = (0.80 * max_far).max(0.12).min(max_far * 0.95);
    state.agent = match &motion.controller {
        ControllerSpec::Reach { target, .. } => {
            let goal = match target.anchor_key() {
                Some(key) => catalog.anchor(key),
                None => world.block_position(&state),
            };
            place_near(rng, goal, far_lo, max_far)
        }
        ControllerSpec::Actuate { target, far_start, .. } => {
            let goal = catalog.anchor(target.as_str());
            if *far_start {
                place_near(rng, goal, far_lo, max_far)
            } else {
                place_near(rng, goal, 0.0, radius * 0.5)
            }
        }
        ControllerSpec::GraspLift { .. } => {
            let goal = world.block_position(&state);
            place_near(rng, goal, 0.0, radius * 0.75)
        }
        ControllerSpec::Carry { target, hover } => {
            // Carries begin where a lift left off — away from the destination.
            // Keeping the start ring clear of the place band below means carry
            // frames cover the route and place frames cover the drop zone.
            let anchor = match target.anchor_key() {
                Some(key) => catalog.anchor(key),
                None => world.block_position(&state),
            };
            let goal = [anchor[0] + hover[0], anchor[1] + hover[1]];
            place_near(rng, goal, (0.45 * max_far).max(0.22), max_far)
        }
        ControllerSpec::Place { target } => {
            let goal = match target.anchor_key() {
                Some(key) => catalog.anchor(key),
                None => world.block_position(&state),
            };
            place_near(rng, goal, 0.06, 0.14)
        }
    };
    state
}

/// Generates one labeled clip demonstrating a catalog motion from a
/// randomized valid start. The controller runs to completion (applying the
/// motion's effect) and the clip ends after a brief hold at the completed
/// state, so frame count tracks how long the motion actually took; `length`
/// caps the rollout. Ending at completion rather than padding keeps frame
/// order aligned with spatial progress all the way through the clip, which
/// is what the in-clip temporal losses consume.
pub fn generate_motion_clip(
    world: &World,
    motion_name: &str,
    seed: u64,
    length: usize,
) -> Result<MotionClip, WorldError> {
    if length < 3 {
        return Err(WorldError::ClipTooShort(length));
    }
    const HOLD_FRAMES: usize = 2;
    let (motion_idx, motion) = world
        .catalog
        .resolve_motion(motion_name)
        .ok_or_else(|| WorldError::UnknownMotion(motion_name.to_string()))?;
    let motion = motion.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, motion_idx as u64 + 1));
    let mut state = sample_start(world, &motion, &mut rng, length - 1);
    let mut controller = MotionController::new(&motion);

    let mut frames = vec![world.observe(&state)];
    let mut labels = vec![state.objects.clone()];
    let mut held = 0usize;
    while frames.len() < length {
        let action = match controller.next_action(world, &state) {
            Some(a) => a,
            None if held < HOLD_FRAMES || frames.len() < 4 => {
                held += 1;
                [0.0, 0.0, 0.0, 0.0]
            }
            None => break,
        };
        let (next, obs) = world.step(&state, action)?;
        state = next;
        frames.push(obs);
        labels.push(state.objects.clone());
    }
    if controller.next_action(world, &state).is_some() {
        return Err(WorldError::ControllerStuck {
            motion: motion.name.clone(),
            budget: length - 1,
        });
    }
    Ok(MotionClip {
        instruction: motion.name.clone(),
        kind: ClipKind::Motion,
        motion_name: Some(motion.name.clone()),
        frames,
        labels,
    })
}

/// Generates one clip of meaningless movement: a random valid start and
/// uniformly random actions, labeled with the arbitrary instruction.
pub fn generate_arbitrary_clip(world: &World, seed: u64, length: usize) -> Result<MotionClip, WorldError> {
    if length < 3 {
        return Err(WorldError::ClipTooShort(length));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, 0xa1b));
    let mut objects = StateMap::new();
    for def in &world.catalog.objects {
        objects.insert(def.id, def.env_states[rng.random_range(0..def.env_states.len())]);
    }
    let mut state = WorldState {
        agent: [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)],
        last_delta: [0.0, 0.0],
        gripper_closed: false,
        objects,
        noise_seed: rng.next_u64(),
        step_count: 0,
    };
    let mut frames = vec![world.observe(&state)];
    let mut labels = vec![state.objects.clone()];
    for _ in 0..length - 1 {
        let action = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let (next, obs) = world.step(&state, action)?;
        state = next;
        frames.push(obs);
        labels.push(state.objects.clone());
    }
    Ok(MotionClip {
        instruction: world.catalog.arbitrary_instruction.clone(),
        kind: ClipKind::Arbitrary,
        motion_name: None,
        frames,
        labels,
    })
}

/// How many clips to generate per motion and in total for arbitrary movement.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub clips_per_motion: usize,
    pub arbitrary_clips: usize,
    pub clip_length: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            clips_per_motion: 150,
            arbitrary_clips: 150,
            clip_length: 24,
            seed: 0,
        }
    }
}

/// Whether a motion's clips begin anywhere on the table rather than at their
/// object. Such motions cover far more ground per clip, so the corpus doubles
/// their clip count to keep frame densities comparable across motions.
fn wide_support(spec: &ControllerSpec) -> bool {
    matches!(
        spec,
        ControllerSpec::Reach { far_start: true, .. }
            | ControllerSpec::Actuate { far_start: true, .. }
            | ControllerSpec::Carry { .. }
    )
}

/// Generates the full training corpus: `clips_per_motion` clips for every
/// catalog motion (doubled for wide-support motions) plus `arbitrary_clips`
/// meaningless clips.
pub fn generate_corpus(world: &World, spec: &CorpusSpec) -> Result<ClipCorpus, WorldError> {
    let mut clips = Vec::new();
    let motions: Vec<(String, bool)> = world
        .catalog
        .motions
        .iter()
        .map(|m| (m.name.clone(), wide_support(&m.controller)))
        .collect();
    let mut ordinal = 0u64;
    for (name, wide) in &motions {
        let count = if *wide { spec.clips_per_motion * 2 } else { spec.clips_per_motion };
        for _ in 0..count {
            clips.push(generate_motion_clip(
                world,
                name,
                splitmix(spec.seed, ordinal),
                spec.clip_length,
            )?);
            ordinal += 1;
        }
    }
    for _ in 0..spec.arbitrary_clips {
        clips.push(generate_arbitrary_clip(
            world,
            splitmix(spec.seed, 0x0a_0000 + ordinal),
            spec.clip_length,
        )?);
        ordinal += 1;
    }
    Ok(ClipCorpus { clips })
}

/// A scripted trajectory: states and observations, frame 0 being the reset.
pub struct Rollout {
    pub states: Vec<WorldState>,
    pub observations: Vec<Observation>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn final_state(&self) -> &WorldState {
        self.states.last().expect("rollout has at least the reset state")
    }
}

/// Runs the scripted controllers for `motion_names` in order from a fresh
/// reset, returning the full trajectory. Controllers are run precondition-
/// blind, so out-of-order sequences still produce (futile) trajectories.
pub fn scripted_rollout(
    world: &World,
    motion_names: &[String],
    initial: &StateMap,
    seed: u64,
) -> Result<Rollout, WorldError> {
    let (mut state, obs) = world.reset(initial, seed)?;
    let mut rollout = Rollout {
        states: vec![state.clone()],
        observations: vec![obs],
    };
    for name in motion_names {
        let motion = world
            .catalog
            .resolve_motion(name)
            .ok_or_else(|| WorldError::UnknownMotion(name.clone()))?
            .1
            .clone();
        let mut controller = MotionController::new(&motion);
        let mut steps = 0;
        while let Some(action) = controller.next_action(world, &state) {
            let (next, obs) = world.step(&state, action)?;
            state = next;
            rollout.states.push(state.clone());
            rollout.observations.push(obs);
            steps += 1;
            if steps >= MOTION_STEP_CAP {
                return Err(WorldError::ControllerStuck {
                    motion: motion.name.clone(),
                    budget: MOTION_STEP_CAP,
                });
            }
        }
    }
    Ok(rollout)
}

/// Scripted expert over a fixed motion sequence, usable as an evaluation
/// policy: it replays the sequence, advancing to the next motion as each
/// controller completes.
pub struct ScriptedExpert {
    motions: Vec<MotionSpec>,
    current: usize,
    controller: Option<MotionController>,
}

impl ScriptedExpert {
    pub fn new(world: &World, motion_names: &[String]) -> Result<ScriptedExpert, WorldError> {
        let motions = motion_names
            .iter()
            .map(|name| {
                world
                    .catalog
                    .resolve_motion(name)
                    .map(|(_, m)| m.clone())
                    .ok_or_else(|| WorldError::UnknownMotion(name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ScriptedExpert { motions, current: 0, controller: None })
    }

    /// Resets the expert for a new episode.
    pub fn begin_episode(&mut self) {
        self.current = 0;
        self.controller = None;
    }

    /// Action for the current state; no-op once the sequence is exhausted.
    pub fn act(&mut self, world: &World, state: &WorldState) -> [f64; 4] {
        loop {
            if self.current >= self.motions.len() {
                return [0.0, 0.0, 0.0, 0.0];
            }
            if self.controller.is_none() {
                self.controller = Some(MotionController::new(&self.motions[self.current]));
            }
            match self.controller.as_mut().unwrap().next_action(world, state) {
                Some(action) => return action,
                None => {
                    self.current += 1;
                    self.controller = None;
                }
            }
        }
    }
}
