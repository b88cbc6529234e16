//! Object, motion, and stage catalog: the static structure of the tabletop domain.
//!
//! The catalog is loaded from a TOML document (see `assets/catalog.toml`) so the
//! domain can be extended without touching planner or detector code. Everything
//! downstream — instruction parsing, knowledge validation, scripted controllers,
//! and the frozen language-embedding vocabulary — indexes into this structure.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifiers of the four tabletop objects, in observation-layout order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectId {
    Drawer,
    Box,
    Light,
    Block,
}

impl ObjectId {
    pub const ALL: [ObjectId; 4] = [ObjectId::Drawer, ObjectId::Box, ObjectId::Light, ObjectId::Block];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectId::Drawer => "drawer",
            ObjectId::Box => "box",
            ObjectId::Light => "light",
            ObjectId::Block => "block",
        }
    }

    /// Key used in task-knowledge documents, where the block is spelled out.
    pub fn knowledge_key(self) -> &'static str {
        match self {
            ObjectId::Block => "blue_block",
            other => other.as_str(),
        }
    }

    /// Parses either the world key (`block`) or the knowledge key (`blue_block`).
    pub fn parse(key: &str) -> Option<ObjectId> {
        match key.trim() {
            "drawer" => Some(ObjectId::Drawer),
            "box" => Some(ObjectId::Box),
            "light" => Some(ObjectId::Light),
            "block" | "blue_block" => Some(ObjectId::Block),
            _ => None,
        }
    }
}

/// Discrete object states. Which states apply to which object is catalog data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectState {
    Closed,
    Open,
    InDrawer,
    OnTable,
    InBox,
    Held,
}

impl ObjectState {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectState::Closed => "closed",
            ObjectState::Open => "open",
            ObjectState::InDrawer => "in_drawer",
            ObjectState::OnTable => "on_table",
            ObjectState::InBox => "in_box",
            ObjectState::Held => "held",
        }
    }

    pub fn parse(token: &str) -> Option<ObjectState> {
        match token.trim() {
            "closed" => Some(ObjectState::Closed),
            "open" => Some(ObjectState::Open),
            "in_drawer" => Some(ObjectState::InDrawer),
            "on_table" => Some(ObjectState::OnTable),
            "in_box" => Some(ObjectState::InBox),
            "held" => Some(ObjectState::Held),
            _ => None,
        }
    }
}

/// A full assignment of states to objects (symbolic environment).
pub type StateMap = BTreeMap<ObjectId, ObjectState>;

/// True when the block can be reached by the gripper under `env`: it is held,
/// resting on the table, or inside a container that is currently open.
pub fn block_reachable(env: &StateMap) -> bool {
    match env.get(&ObjectId::Block) {
        Some(ObjectState::OnTable) | Some(ObjectState::Held) => true,
        Some(ObjectState::InDrawer) => env.get(&ObjectId::Drawer) == Some(&ObjectState::Open),
        Some(ObjectState::InBox) => env.get(&ObjectId::Box) == Some(&ObjectState::Open),
        _ => false,
    }
}

/// Where the block ends up after a place motion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceTarget {
    Drawer,
    Box,
    Table,
}

impl PlaceTarget {
    pub fn block_state(self) -> ObjectState {
        match self {
            PlaceTarget::Drawer => ObjectState::InDrawer,
            PlaceTarget::Box => ObjectState::InBox,
            PlaceTarget::Table => ObjectState::OnTable,
        }
    }
}

/// Symbolic effect a motion has on the object states once it completes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionEffect {
    None,
    ToggleLight,
    Grasp,
    Set { object: ObjectId, state: ObjectState },
    Place(PlaceTarget),
}

impl MotionEffect {
    /// Applies the effect to a symbolic environment map.
    pub fn apply(&self, env: &mut StateMap) {
        match self {
            MotionEffect::None => {}
            MotionEffect::ToggleLight => {
                let flipped = match env.get(&ObjectId::Light) {
                    Some(ObjectState::Closed) => ObjectState::Open,
                    _ => ObjectState::Closed,
                };
                env.insert(ObjectId::Light, flipped);
            }
            MotionEffect::Grasp => {
                env.insert(ObjectId::Block, ObjectState::Held);
            }
            MotionEffect::Set { object, state } => {
                env.insert(*object, *state);
            }
            MotionEffect::Place(target) => {
                env.insert(ObjectId::Block, target.block_state());
            }
        }
    }
}

/// Anchor a scripted controller steers toward. `Block` resolves to the block's
/// current position at run time; the rest are fixed catalog anchors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorRef {
    Drawer,
    Box,
    Light,
    BlockTable,
    Block,
}

impl AnchorRef {
    /// Catalog anchor key, or `None` for the run-time block position.
    pub fn anchor_key(self) -> Option<&'static str> {
        match self {
            AnchorRef::Drawer => Some("drawer"),
            AnchorRef::Box => Some("box"),
            AnchorRef::Light => Some("light"),
            AnchorRef::BlockTable => Some("block_table"),
            AnchorRef::Block => None,
        }
    }
}

fn default_gesture_steps() -> u32 {
    2
}

/// Built-in controller behaviors, parameterized by catalog data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerSpec {
    /// Drive the gripper to a target anchor and stop.
    Reach {
        target: AnchorRef,
        #[serde(default)]
        far_start: bool,
    },
    /// Approach an object anchor, perform a short gesture, then trigger the
    /// interaction that flips the object state.
    Actuate {
        target: ObjectId,
        gesture: [f64; 2],
        #[serde(default = "default_gesture_steps")]
        gesture_steps: u32,
        #[serde(default)]
        far_start: bool,
    },
    /// Close the gripper on the block and carry it `away` from its rest point.
    GraspLift { away: f64 },
    /// Carry the held block to a hover point offset from a target anchor.
    Carry { target: AnchorRef, hover: [f64; 2] },
    /// Move over a target anchor and release the held block.
    Place { target: AnchorRef },
}

/// A primitive motion: name, owning object, start requirements, symbolic
/// effect, and the scripted controller that demonstrates it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSpec {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub object: ObjectId,
    /// Object states required when the motion starts.
    #[serde(default)]
    pub requires: BTreeMap<ObjectId, Vec<ObjectState>>,
    /// Whether the block must not be shut inside a closed container.
    #[serde(default)]
    pub block_reachable: bool,
    pub effect: MotionEffect,
    pub controller: ControllerSpec,
}

impl MotionSpec {
    /// True when the motion may start under the symbolic environment `env`.
    pub fn precondition_holds(&self, env: &StateMap) -> bool {
        for (object, allowed) in &self.requires {
            match env.get(object) {
                Some(state) if allowed.contains(state) => {}
                _ => return false,
            }
        }
        !self.block_reachable || block_reachable(env)
    }
}

/// A stage: one complete interaction with a single object, spanning an ordered
/// list of motions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDef {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub object: ObjectId,
    /// Canonical motion names, a subsequence of the object's motion list.
    pub motions: Vec<String>,
}

/// An object definition: its state vocabulary and natural-language descriptions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDef {
    pub id: ObjectId,
    pub states: Vec<ObjectState>,
    /// States that may appear in task-knowledge environments (excludes `held`).
    pub env_states: Vec<ObjectState>,
    pub descriptions: BTreeMap<ObjectState, String>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("failed to read catalog file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse catalog TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid catalog: {0}")]
    Invalid(String),
}

/// The full domain catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    /// Instruction attached to meaningless (random-action) clips.
    pub arbitrary_instruction: String,
    pub objects: Vec<ObjectDef>,
    pub anchors: BTreeMap<String, [f64; 2]>,
    pub motions: Vec<MotionSpec>,
    pub stages: Vec<StageDef>,
}

static BUILTIN: OnceLock<Catalog> = OnceLock::new();

impl Catalog {
    /// The catalog compiled into the crate.
    pub fn builtin() -> &'static Catalog {
        BUILTIN.get_or_init(|| {
            Catalog::from_toml_str(include_str!("../assets/catalog.toml"))
                .expect("built-in catalog must be valid")
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Catalog, CatalogError> {
        let catalog: Catalog = toml::from_str(text)?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn from_path(path: &Path) -> Result<Catalog, CatalogError> {
        Catalog::from_toml_str(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), CatalogError> {
        let invalid = |msg: String| Err(CatalogError::Invalid(msg));

        let mut seen_objects = BTreeSet::new();
        for def in &self.objects {
            if !seen_objects.insert(def.id) {
                return invalid(format!("duplicate object definition: {}", def.id.as_str()));
            }
            if def.states.is_empty() {
                return invalid(format!("object {} has no states", def.id.as_str()));
            }
            for state in &def.env_states {
                if !def.states.contains(state) {
                    return invalid(format!(
                        "object {}: env state {} not in state list",
                        def.id.as_str(),
                        state.as_str()
                    ));
                }
            }
            for state in &def.states {
                if !def.descriptions.contains_key(state) {
                    return invalid(format!(
                        "object {}: missing description for state {}",
                        def.id.as_str(),
                        state.as_str()
                    ));
                }
            }
        }
        for id in ObjectId::ALL {
            if !seen_objects.contains(&id) {
                return invalid(format!("missing object definition: {}", id.as_str()));
            }
        }

        for key in ["drawer", "box", "light", "block_table"] {
            if !self.anchors.contains_key(key) {
                return invalid(format!("missing anchor: {key}"));
            }
        }

        let mut names = BTreeSet::new();
        for motion in &self.motions {
            for name in std::iter::once(&motion.name).chain(&motion.aliases) {
                if !names.insert(normalize_phrase(name)) {
                    return invalid(format!("duplicate motion name or alias: {name}"));
                }
            }
            self.object(motion.object);
            for (object, allowed) in &motion.requires {
                let def = self.object(*object);
                for state in allowed {
                    if !def.states.contains(state) {
                        return invalid(format!(
                            "motion {}: requires unknown state {} for {}",
                            motion.name,
                            state.as_str(),
                            object.as_str()
                        ));
                    }
                }
            }
            if let MotionEffect::Set { object, state } = &motion.effect {
                if !self.object(*object).states.contains(state) {
                    return invalid(format!(
                        "motion {}: effect sets unknown state {} for {}",
                        motion.name,
                        state.as_str(),
                        object.as_str()
                    ));
                }
            }
        }

        let mut stage_names = BTreeSet::new();
        for stage in &self.stages {
            for name in std::iter::once(&stage.name).chain(&stage.aliases) {
                if !stage_names.insert(normalize_phrase(name)) {
                    return invalid(format!("duplicate stage name or alias: {name}"));
                }
            }
            if stage.motions.is_empty() {
                return invalid(format!("stage {} has no motions", stage.name));
            }
            let object_motions = self.object_motion_names(stage.object);
            if !is_subsequence(&stage.motions, &object_motions) {
                return invalid(format!(
                    "stage {}: motions are not an ordered subsequence of {}'s motion list",
                    stage.name,
                    stage.object.as_str()
                ));
            }
        }
        Ok(())
    }

    pub fn object(&self, id: ObjectId) -> &ObjectDef {
        self.objects
            .iter()
            .find(|def| def.id == id)
            .expect("catalog validated: all objects defined")
    }

    /// Fixed anchor position for a key such as `drawer` or `block_table`.
    pub fn anchor(&self, key: &str) -> [f64; 2] {
        self.anchors[key]
    }

    /// Canonical motion names belonging to `object`, in catalog order.
    pub fn object_motion_names(&self, object: ObjectId) -> Vec<String> {
        self.motions
            .iter()
            .filter(|m| m.object == object)
            .map(|m| m.name.clone())
            .collect()
    }

    /// Looks a motion up by canonical name or alias; returns its catalog index.
    pub fn resolve_motion(&self, phrase: &str) -> Option<(usize, &MotionSpec)> {
        let wanted = normalize_phrase(phrase);
        self.motions.iter().enumerate().find(|(_, m)| {
            normalize_phrase(&m.name) == wanted
                || m.aliases.iter().any(|a| normalize_phrase(a) == wanted)
        })
    }

    /// Looks a stage up by canonical name or alias; returns its catalog index.
    pub fn resolve_stage(&self, phrase: &str) -> Option<(usize, &StageDef)> {
        let wanted = normalize_phrase(phrase);
        self.stages.iter().enumerate().find(|(_, s)| {
            normalize_phrase(&s.name) == wanted
                || s.aliases.iter().any(|a| normalize_phrase(a) == wanted)
        })
    }

    pub fn motion(&self, canonical_name: &str) -> &MotionSpec {
        self.resolve_motion(canonical_name)
            .unwrap_or_else(|| panic!("unknown motion: {canonical_name}"))
            .1
    }

    pub fn state_description(&self, object: ObjectId, state: ObjectState) -> &str {
        &self.object(object).descriptions[&state]
    }

    /// Inverse of [`Catalog::state_description`].
    pub fn parse_state_description(&self, object: ObjectId, description: &str) -> Option<ObjectState> {
        let wanted = description.trim();
        self.object(object)
            .descriptions
            .iter()
            .find(|(_, text)| text.as_str() == wanted)
            .map(|(state, _)| *state)
    }

    /// Net symbolic effect of running `stage`'s motions from `env`. Fails with
    /// the index of the first motion whose precondition does not hold.
    pub fn simulate_stage(&self, stage: &StageDef, env: &StateMap) -> Result<StateMap, usize> {
        let mut env = env.clone();
        for (idx, name) in stage.motions.iter().enumerate() {
            let motion = self.motion(name);
            if !motion.precondition_holds(&env) {
                return Err(idx);
            }
            motion.effect.apply(&mut env);
        }
        Ok(env)
    }

    /// Every catalog string that receives a frozen language embedding, in
    /// vocabulary order: motions, the arbitrary instruction, then object-state
    /// descriptions.
    pub fn language_strings(&self) -> Vec<String> {
        let mut strings: Vec<String> = self.motions.iter().map(|m| m.name.clone()).collect();
        strings.push(self.arbitrary_instruction.clone());
        for def in &self.objects {
            for state in &def.states {
                strings.push(def.descriptions[state].clone());
            }
        }
        strings
    }
}

/// Lowercases and collapses interior whitespace so instruction phrasing is
/// insensitive to spacing and case.
pub fn normalize_phrase(phrase: &str) -> String {
    phrase.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn is_subsequence(needle: &[String], haystack: &[String]) -> bool {
    let mut pos = 0;
    for name in needle {
        match haystack[pos..].iter().position(|h| h == name) {
            Some(offset) => pos += offset + 1,
            None => return false,
        }
    }
    true
}
