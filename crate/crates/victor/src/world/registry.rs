//! Built-in task registry: named tasks with initial states and success tests.

use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ObjectId, ObjectState, StateMap};
use crate::world::{dist, World, WorldError, WorldState};

/// Success predicate for a task, evaluated on the ground-truth state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessSpec {
    /// All listed object states hold.
    States { required: StateMap },
    /// Listed states hold and the gripper is within the interaction radius
    /// of the block.
    ReachBlock {
        #[serde(default)]
        required: StateMap,
    },
    /// Listed states hold and the held block has been carried at least
    /// `min_away` from the `from` anchor (the toy analog of lifting it).
    LiftedBlock {
        #[serde(default)]
        required: StateMap,
        from: String,
        min_away: f64,
    },
}

impl SuccessSpec {
    fn required(&self) -> &StateMap {
        match self {
            SuccessSpec::States { required }
            | SuccessSpec::ReachBlock { required }
            | SuccessSpec::LiftedBlock { required, .. } => required,
        }
    }
}

/// One registry entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDef {
    pub id: String,
    /// Stage phrases joined by " then "; input to the task planner.
    pub instruction: String,
    /// Default training budget in environment steps.
    pub train_budget: u64,
    pub initial: StateMap,
    pub success: SuccessSpec,
}

impl TaskDef {
    /// Evaluates the task's success predicate on a world state.
    pub fn is_success(&self, world: &World, state: &WorldState) -> bool {
        for (object, wanted) in self.success.required() {
            if state.objects.get(object) != Some(wanted) {
                return false;
            }
        }
        match &self.success {
            SuccessSpec::States { .. } => true,
            SuccessSpec::ReachBlock { .. } => {
                dist(state.agent, world.block_position(state)) <= world.config.interaction_radius
            }
            SuccessSpec::LiftedBlock { from, min_away, .. } => {
                state.objects[&ObjectId::Block] == ObjectState::Held
                    && dist(state.agent, world.catalog.anchor(from)) >= *min_away
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRegistry {
    pub tasks: Vec<TaskDef>,
}

static BUILTIN: OnceLock<TaskRegistry> = OnceLock::new();

impl TaskRegistry {
    /// The registry compiled into the crate.
    pub fn builtin() -> &'static TaskRegistry {
        BUILTIN.get_or_init(|| {
            TaskRegistry::from_toml_str(include_str!("../../assets/tasks.toml"), Catalog::builtin())
                .expect("built-in task registry must be valid")
        })
    }

    pub fn from_toml_str(text: &str, catalog: &Catalog) -> Result<TaskRegistry, WorldError> {
        let registry: TaskRegistry = toml::from_str(text)?;
        registry.validate(catalog)?;
        Ok(registry)
    }

    pub fn from_path(path: &Path, catalog: &Catalog) -> Result<TaskRegistry, WorldError> {
        TaskRegistry::from_toml_str(&std::fs::read_to_string(path)?, catalog)
    }

    fn validate(&self, catalog: &Catalog) -> Result<(), WorldError> {
        let invalid = |msg: String| Err(WorldError::InvalidRegistry(msg));
        let mut ids = std::collections::BTreeSet::new();
        for task in &self.tasks {
            if !ids.insert(task.id.clone()) {
                return invalid(format!("duplicate task id: {}", task.id));
            }
            for def in &catalog.objects {
                match task.initial.get(&def.id) {
                    None => {
                        return invalid(format!(
                            "task {}: missing initial state for {}",
                            task.id,
                            def.id.as_str()
                        ))
                    }
                    Some(state) if !def.env_states.contains(state) => {
                        return invalid(format!(
                            "task {}: {} cannot start in state {}",
                            task.id,
                            def.id.as_str(),
                            state.as_str()
                        ))
                    }
                    _ => {}
                }
            }
            if let SuccessSpec::LiftedBlock { from, min_away, .. } = &task.success {
                if !catalog.anchors.contains_key(from) {
                    return invalid(format!("task {}: unknown anchor {from}", task.id));
                }
                if !min_away.is_finite() || *min_away <= 0.0 {
                    return invalid(format!("task {}: min_away must be positive", task.id));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, task_id: &str) -> Result<&TaskDef, WorldError> {
        self.tasks
            .iter()
            .find(|t| t.id == task_id)
            .ok_or_else(|| WorldError::UnknownTask(task_id.to_string()))
    }
}
