//! Task knowledge: decomposing a long-horizon instruction into stages.
//!
//! A task is represented as an ordered list of stages, each naming the object
//! being interacted with, the full symbolic environment expected when the
//! stage begins, and the ordered motion instructions that carry it out. Two
//! producers build this structure: a deterministic planner over the closed
//! stage catalog ([`plan_task`]), and an optional completion-endpoint adapter
//! ([`llm::llm_generate`]) for free-form phrasings. Both funnel through the
//! same validator ([`validate_knowledge`]), so downstream consumers (stage
//! matching, reward shaping) only ever see checked knowledge.

pub mod json;
pub mod llm;
pub mod prompt;

use std::collections::BTreeSet;

use serde_json::Value;
use thiserror::Error;

use crate::catalog::{normalize_phrase, Catalog, ObjectId, ObjectState, StateMap};
use crate::error::{Classify, ErrorClass};

pub use json::{extract_first_json_block, extract_json_blocks, parse_lenient};
pub use llm::{llm_generate, CompletionClient, HttpCompletionClient, MockCompletionClient};
pub use prompt::render_prompt;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    // -- instruction planning ------------------------------------------------
    #[error("instruction contains no stages")]
    EmptyInstruction,
    #[error("unknown stage phrase: {0:?}")]
    UnknownStage(String),
    #[error("initial states are missing {}", .0.as_str())]
    MissingInitialState(ObjectId),
    #[error("{} cannot start in state {}", .object.as_str(), .state.as_str())]
    InvalidInitialState { object: ObjectId, state: ObjectState },
    #[error("stage {index} ({name:?}) is infeasible: motion {motion:?} cannot start under the propagated environment")]
    InfeasibleStage { index: usize, name: String, motion: String },

    // -- document syntax -----------------------------------------------------
    #[error("document syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("response contains no JSON block")]
    NoJsonBlock,

    // -- document schema -----------------------------------------------------
    #[error("{path}: expected {expected}")]
    Schema { path: String, expected: String },

    // -- document semantics --------------------------------------------------
    #[error("stages must not be empty")]
    EmptyStages,
    #[error("stages {} and {index} both interact with {}", index - 1, .object.as_str())]
    AdjacentObjects { index: usize, object: ObjectId },
    #[error("stage {index}: unknown motion {name:?}")]
    UnknownMotion { index: usize, name: String },
    #[error("stage {index}: motions must be an ordered subset of the interacted_object's motion list ({detail})")]
    MotionSubset { index: usize, detail: String },
    #[error("stage {index}: environment is missing {}", .object.as_str())]
    MissingEnvironment { index: usize, object: ObjectId },
    #[error("stage {index}: {text:?} is not a state of {}", .object.as_str())]
    UnknownStateDescription { index: usize, object: ObjectId, text: String },
    #[error("stage {index}: environment for {} should be {} after the preceding stages, found {}",
            .object.as_str(), .expected.as_str(), .found.as_str())]
    Propagation {
        index: usize,
        object: ObjectId,
        expected: ObjectState,
        found: ObjectState,
    },
    #[error("stage {index}: motion {motion:?} cannot start under the stage environment")]
    Precondition { index: usize, motion: String },
    #[error("stages {first} and {second} share an identical environment and cannot be told apart")]
    DuplicateEnvironment { first: usize, second: usize },
    #[error("interact_objects[{index}] does not match the stages' interacted objects")]
    InteractObjectsMismatch { index: usize },

    // -- prompt rendering ----------------------------------------------------
    #[error("prompt placeholder {0:?} has no value")]
    MissingPlaceholder(String),

    // -- completion endpoint -------------------------------------------------
    #[error("completion endpoint is not configured: set {0}")]
    MissingEnv(&'static str),
    #[error("completion request failed: {0}")]
    Transport(String),
    #[error("no valid task knowledge after {attempts} attempts: {last}")]
    Exhausted { attempts: usize, last: Box<KnowledgeError> },
}

impl Classify for KnowledgeError {
    fn class(&self) -> ErrorClass {
        match self {
            KnowledgeError::Transport(_) => ErrorClass::Runtime,
            KnowledgeError::Exhausted { last, .. } => last.class(),
            _ => ErrorClass::Validation,
        }
    }
}

/// One stage: a complete interaction with a single object.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub name: String,
    pub interacted_object: ObjectId,
    /// Symbolic state of every object when the stage begins.
    pub environment: StateMap,
    /// Canonical motion instructions, in execution order.
    pub motions: Vec<String>,
}

/// A validated task decomposition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskKnowledge {
    pub task_id: String,
    /// Stage names joined by " then " (the planner's instruction grammar).
    pub instruction: String,
    /// One entry per stage: the object that stage interacts with.
    pub interact_objects: Vec<ObjectId>,
    pub stages: Vec<StageSpec>,
}

impl TaskKnowledge {
    /// Objects whose states discriminate between stages: the interacted
    /// objects plus any object whose expected state differs across stage
    /// environments. Stage matching compares only these.
    pub fn conditioned_objects(&self) -> BTreeSet<ObjectId> {
        let mut set: BTreeSet<ObjectId> = self.interact_objects.iter().copied().collect();
        for object in ObjectId::ALL {
            let mut values = self.stages.iter().map(|s| s.environment.get(&object));
            let first = values.next().flatten();
            if values.any(|v| v != first) {
                set.insert(object);
            }
        }
        set
    }

    /// The symbolic environment after the final stage's motions complete.
    pub fn terminal_environment(&self, catalog: &Catalog) -> StateMap {
        let last = self.stages.last().expect("validated knowledge has stages");
        let mut env = last.environment.clone();
        for name in &last.motions {
            catalog.motion(name).effect.apply(&mut env);
        }
        env
    }

    /// Serializes to the knowledge-document shape consumed by
    /// [`validate_knowledge`]: object ids use their document spelling and
    /// environment values are the natural-language state descriptions.
    pub fn to_document(&self, catalog: &Catalog) -> Value {
        let interact: Vec<Value> = self
            .interact_objects
            .iter()
            .map(|o| Value::String(o.knowledge_key().to_string()))
            .collect();
        let stages: Vec<Value> = self
            .stages
            .iter()
            .map(|stage| {
                let mut env = serde_json::Map::new();
                for (object, state) in &stage.environment {
                    env.insert(
                        object.knowledge_key().to_string(),
                        Value::String(catalog.state_description(*object, *state).to_string()),
                    );
                }
                serde_json::json!({
                    "name": stage.name,
                    "interacted_object": stage.interacted_object.knowledge_key(),
                    "environment": env,
                    "motions": stage.motions,
                })
            })
            .collect();
        serde_json::json!({ "interact_objects": interact, "stages": stages })
    }

    pub fn to_json_string(&self, catalog: &Catalog) -> String {
        serde_json::to_string_pretty(&self.to_document(catalog)).expect("document is plain JSON")
    }
}

fn task_slug(instruction: &str) -> String {
    normalize_phrase(instruction).replace(' ', "_")
}

/// Splits a " then "-joined instruction into task knowledge over the stage
/// catalog, propagating the symbolic environment across stages.
///
/// The instruction grammar accepts stage names and their catalog aliases in
/// any casing; the returned knowledge stores canonical stage names, so its
/// `instruction` field is the canonical form of the input.
pub fn plan_task(
    instruction: &str,
    initial_states: &StateMap,
    catalog: &Catalog,
) -> Result<TaskKnowledge, KnowledgeError> {
    for def in &catalog.objects {
        match initial_states.get(&def.id) {
            None => return Err(KnowledgeError::MissingInitialState(def.id)),
            Some(state) if !def.env_states.contains(state) => {
                return Err(KnowledgeError::InvalidInitialState {
                    object: def.id,
                    state: *state,
                })
            }
            _ => {}
        }
    }

    let normalized = normalize_phrase(instruction);
    let phrases: Vec<&str> = normalized
        .split(" then ")
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    if phrases.is_empty() {
        return Err(KnowledgeError::EmptyInstruction);
    }

    let mut stages = Vec::with_capacity(phrases.len());
    let mut env = initial_states.clone();
    for (index, phrase) in phrases.iter().enumerate() {
        let (_, def) = catalog
            .resolve_stage(phrase)
            .ok_or_else(|| KnowledgeError::UnknownStage(phrase.to_string()))?;
        if let Some(previous) = stages.last() {
            let previous: &StageSpec = previous;
            if previous.interacted_object == def.object {
                return Err(KnowledgeError::AdjacentObjects {
                    index,
                    object: def.object,
                });
            }
        }
        let next_env = catalog.simulate_stage(def, &env).map_err(|motion_idx| {
            KnowledgeError::InfeasibleStage {
                index,
                name: def.name.clone(),
                motion: def.motions[motion_idx].clone(),
            }
        })?;
        stages.push(StageSpec {
            name: def.name.clone(),
            interacted_object: def.object,
            environment: env,
            motions: def.motions.clone(),
        });
        env = next_env;
    }

    for first in 0..stages.len() {
        for second in first + 1..stages.len() {
            if stages[first].environment == stages[second].environment {
                return Err(KnowledgeError::DuplicateEnvironment { first, second });
            }
        }
    }

    let canonical = stages.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(" then ");
    Ok(TaskKnowledge {
        task_id: task_slug(&canonical),
        instruction: canonical,
        interact_objects: stages.iter().map(|s| s.interacted_object).collect(),
        stages,
    })
}

/// Checks a parsed knowledge document and returns the typed form.
///
/// Schema errors name the offending field path; semantic errors name the
/// stage index. The misspelled key `interated_object`, which appears in
/// circulating documents, is accepted and normalized to `interacted_object`.
/// Motion names are normalized to their canonical catalog spelling.
pub fn validate_knowledge(doc: &Value, catalog: &Catalog) -> Result<TaskKnowledge, KnowledgeError> {
    let root = as_object(doc, "$")?;

    let interact_value = root
        .get("interact_objects")
        .ok_or_else(|| schema("$.interact_objects", "an array of object ids"))?;
    let mut interact_objects = Vec::new();
    for (i, item) in as_array(interact_value, "$.interact_objects")?.iter().enumerate() {
        interact_objects.push(parse_object_id(item, &format!("$.interact_objects[{i}]"))?);
    }

    let stages_value = root
        .get("stages")
        .ok_or_else(|| schema("$.stages", "an array of stages"))?;
    let stage_docs = as_array(stages_value, "$.stages")?;
    if stage_docs.is_empty() {
        return Err(KnowledgeError::EmptyStages);
    }

    let mut stages = Vec::with_capacity(stage_docs.len());
    for (index, stage_doc) in stage_docs.iter().enumerate() {
        stages.push(validate_stage(stage_doc, index, catalog)?);
    }

    for index in 1..stages.len() {
        if stages[index].interacted_object == stages[index - 1].interacted_object {
            return Err(KnowledgeError::AdjacentObjects {
                index,
                object: stages[index].interacted_object,
            });
        }
    }

    for (index, stage) in stages.iter().enumerate() {
        if interact_objects.get(index) != Some(&stage.interacted_object) {
            return Err(KnowledgeError::InteractObjectsMismatch { index });
        }
    }
    if interact_objects.len() > stages.len() {
        return Err(KnowledgeError::InteractObjectsMismatch { index: stages.len() });
    }

    // Environments must propagate: each stage starts where the previous
    // stage's motions left the world, and every motion must be startable.
    let mut env = stages[0].environment.clone();
    for (index, stage) in stages.iter().enumerate() {
        if index > 0 {
            for object in ObjectId::ALL {
                let expected = env[&object];
                let found = stage.environment[&object];
                if expected != found {
                    return Err(KnowledgeError::Propagation {
                        index,
                        object,
                        expected,
                        found,
                    });
                }
            }
        }
        for name in &stage.motions {
            let motion = catalog.motion(name);
            if !motion.precondition_holds(&env) {
                return Err(KnowledgeError::Precondition {
                    index,
                    motion: name.clone(),
                });
            }
            motion.effect.apply(&mut env);
        }
    }

    for first in 0..stages.len() {
        for second in first + 1..stages.len() {
            if stages[first].environment == stages[second].environment {
                return Err(KnowledgeError::DuplicateEnvironment { first, second });
            }
        }
    }

    let instruction = stages.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(" then ");
    Ok(TaskKnowledge {
        task_id: task_slug(&instruction),
        instruction,
        interact_objects,
        stages,
    })
}

/// Lenient-parses `text` and validates the result.
pub fn parse_knowledge(text: &str, catalog: &Catalog) -> Result<TaskKnowledge, KnowledgeError> {
    validate_knowledge(&parse_lenient(text)?, catalog)
}

fn validate_stage(doc: &Value, index: usize, catalog: &Catalog) -> Result<StageSpec, KnowledgeError> {
    let path = format!("$.stages[{index}]");
    let map = as_object(doc, &path)?;

    let name = as_str(
        map.get("name").ok_or_else(|| schema(format!("{path}.name"), "a string"))?,
        &format!("{path}.name"),
    )?
    .trim()
    .to_string();
    if name.is_empty() {
        return Err(schema(format!("{path}.name"), "a non-empty string"));
    }

    let object_value = map
        .get("interacted_object")
        .or_else(|| map.get("interated_object"))
        .ok_or_else(|| schema(format!("{path}.interacted_object"), "an object id"))?;
    let interacted_object = parse_object_id(object_value, &format!("{path}.interacted_object"))?;

    let env_value = map
        .get("environment")
        .ok_or_else(|| schema(format!("{path}.environment"), "an object-state map"))?;
    let mut environment = StateMap::new();
    for (key, value) in as_object(env_value, &format!("{path}.environment"))? {
        let object = ObjectId::parse(key)
            .ok_or_else(|| schema(format!("{path}.environment.{key}"), "a known object id"))?;
        let text = as_str(value, &format!("{path}.environment.{key}"))?;
        let state = parse_state(catalog, object, text).ok_or_else(|| {
            KnowledgeError::UnknownStateDescription {
                index,
                object,
                text: text.to_string(),
            }
        })?;
        environment.insert(object, state);
    }
    for def in &catalog.objects {
        if !environment.contains_key(&def.id) {
            return Err(KnowledgeError::MissingEnvironment { index, object: def.id });
        }
    }

    let motions_value = map
        .get("motions")
        .ok_or_else(|| schema(format!("{path}.motions"), "an array of motion instructions"))?;
    let motion_docs = as_array(motions_value, &format!("{path}.motions"))?;
    if motion_docs.is_empty() {
        return Err(schema(format!("{path}.motions"), "a non-empty array"));
    }
    let mut motions = Vec::with_capacity(motion_docs.len());
    for (i, item) in motion_docs.iter().enumerate() {
        let text = as_str(item, &format!("{path}.motions[{i}]"))?;
        let (_, spec) = catalog.resolve_motion(text).ok_or_else(|| KnowledgeError::UnknownMotion {
            index,
            name: text.to_string(),
        })?;
        if spec.object != interacted_object {
            return Err(KnowledgeError::MotionSubset {
                index,
                detail: format!("{:?} belongs to {}", spec.name, spec.object.as_str()),
            });
        }
        motions.push(spec.name.clone());
    }
    if !is_ordered_subset(&motions, &catalog.object_motion_names(interacted_object)) {
        return Err(KnowledgeError::MotionSubset {
            index,
            detail: "motions are out of catalog order or repeated".to_string(),
        });
    }

    Ok(StageSpec {
        name,
        interacted_object,
        environment,
        motions,
    })
}

/// Accepts either a natural-language state description ("The drawer is
/// open") or a bare state token ("open"), scoped to `object`'s states.
fn parse_state(catalog: &Catalog, object: ObjectId, text: &str) -> Option<ObjectState> {
    catalog.parse_state_description(object, text).or_else(|| {
        ObjectState::parse(text).filter(|s| catalog.object(object).states.contains(s))
    })
}

fn is_ordered_subset(needle: &[String], haystack: &[String]) -> bool {
    let mut pos = 0;
    for name in needle {
        match haystack[pos..].iter().position(|h| h == name) {
            Some(offset) => pos += offset + 1,
            None => return false,
        }
    }
    true
}

fn schema(path: impl Into<String>, expected: impl Into<String>) -> KnowledgeError {
    KnowledgeError::Schema {
        path: path.into(),
        expected: expected.into(),
    }
}

fn as_object<'v>(
    value: &'v Value,
    path: &str,
) -> Result<&'v serde_json::Map<String, Value>, KnowledgeError> {
    value.as_object().ok_or_else(|| schema(path, "an object"))
}

fn as_array<'v>(value: &'v Value, path: &str) -> Result<&'v Vec<Value>, KnowledgeError> {
    value.as_array().ok_or_else(|| schema(path, "an array"))
}

fn as_str<'v>(value: &'v Value, path: &str) -> Result<&'v str, KnowledgeError> {
    value.as_str().ok_or_else(|| schema(path, "a string"))
}

fn parse_object_id(value: &Value, path: &str) -> Result<ObjectId, KnowledgeError> {
    let text = as_str(value, path)?;
    ObjectId::parse(text).ok_or_else(|| schema(path, format!("a known object id, got {text:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ObjectState::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn initial(block: ObjectState) -> StateMap {
        let mut map = StateMap::new();
        map.insert(ObjectId::Drawer, Closed);
        map.insert(ObjectId::Box, Closed);
        map.insert(ObjectId::Light, Closed);
        map.insert(ObjectId::Block, block);
        map
    }

    fn all_open(block: ObjectState) -> StateMap {
        let mut map = StateMap::new();
        map.insert(ObjectId::Drawer, Open);
        map.insert(ObjectId::Box, Open);
        map.insert(ObjectId::Light, Open);
        map.insert(ObjectId::Block, block);
        map
    }

    #[test]
    fn planner_decomposes_a_three_stage_instruction() {
        let catalog = Catalog::builtin();
        let knowledge = plan_task(
            "open the drawer then open the box then move the blue block to the table",
            &initial(InDrawer),
            catalog,
        )
        .unwrap();
        assert_eq!(knowledge.stages.len(), 3);
        assert_eq!(
            knowledge.interact_objects,
            vec![ObjectId::Drawer, ObjectId::Box, ObjectId::Block]
        );
        // Each stage's environment is the world as the stage begins.
        assert_eq!(knowledge.stages[0].environment[&ObjectId::Drawer], Closed);
        assert_eq!(knowledge.stages[1].environment[&ObjectId::Drawer], Open);
        assert_eq!(knowledge.stages[1].environment[&ObjectId::Box], Closed);
        assert_eq!(knowledge.stages[2].environment[&ObjectId::Drawer], Open);
        assert_eq!(knowledge.stages[2].environment[&ObjectId::Box], Open);
        assert_eq!(knowledge.stages[2].environment[&ObjectId::Block], InDrawer);
        // Canonical names are stored, so the instruction is canonicalized.
        assert_eq!(
            knowledge.instruction,
            "open drawer then open box then move blue block to table"
        );
        assert_eq!(knowledge.task_id, "open_drawer_then_open_box_then_move_blue_block_to_table");
    }

    #[test]
    fn planner_handles_single_stage_instructions() {
        let catalog = Catalog::builtin();
        let moved = plan_task("move the blue block to the table", &all_open(InDrawer), catalog).unwrap();
        assert_eq!(moved.stages.len(), 1);
        assert_eq!(moved.stages[0].motions.len(), 4);
        assert_eq!(
            moved.stages[0].motions.last().unwrap(),
            "place the blue block down to the table"
        );

        let reach = plan_task("reach blue block", &initial(OnTable), catalog).unwrap();
        assert_eq!(reach.stages.len(), 1);
        assert_eq!(reach.stages[0].motions, vec!["reach the blue block".to_string()]);
    }

    #[test]
    fn planner_rejects_unknown_infeasible_and_ill_formed_instructions() {
        let catalog = Catalog::builtin();
        assert!(matches!(
            plan_task("sweep the floor", &initial(OnTable), catalog),
            Err(KnowledgeError::UnknownStage(p)) if p == "sweep the floor"
        ));
        assert!(matches!(
            plan_task("", &initial(OnTable), catalog),
            Err(KnowledgeError::EmptyInstruction)
        ));
        // Opening an already-open drawer fails the first motion's precondition.
        assert!(matches!(
            plan_task("open the drawer", &all_open(OnTable), catalog),
            Err(KnowledgeError::InfeasibleStage { index: 0, ref motion, .. })
                if motion == "reach the closed drawer handle top"
        ));
        // Adjacent stages must interact with different objects.
        assert!(matches!(
            plan_task("reach blue block then pick blue block", &initial(OnTable), catalog),
            Err(KnowledgeError::AdjacentObjects { index: 1, object: ObjectId::Block })
        ));
        // A no-effect stage followed by more stages leaves two identical
        // environments, which stage matching could never tell apart.
        assert!(matches!(
            plan_task("reach blue block then open light", &initial(OnTable), catalog),
            Err(KnowledgeError::DuplicateEnvironment { first: 0, second: 1 })
        ));

        let mut incomplete = initial(OnTable);
        incomplete.remove(&ObjectId::Light);
        assert!(matches!(
            plan_task("open the drawer", &incomplete, catalog),
            Err(KnowledgeError::MissingInitialState(ObjectId::Light))
        ));
        let mut held = initial(OnTable);
        held.insert(ObjectId::Block, Held);
        assert!(matches!(
            plan_task("open the drawer", &held, catalog),
            Err(KnowledgeError::InvalidInitialState { object: ObjectId::Block, .. })
        ));
    }

    #[test]
    fn registry_instructions_all_plan_and_revalidate_identically() {
        let catalog = Catalog::builtin();
        for task in &crate::world::registry::TaskRegistry::builtin().tasks {
            let knowledge = plan_task(&task.instruction, &task.initial, catalog)
                .unwrap_or_else(|e| panic!("{}: {e}", task.id));
            let doc = knowledge.to_document(catalog);
            let back = validate_knowledge(&doc, catalog).unwrap_or_else(|e| panic!("{}: {e}", task.id));
            assert_eq!(back, knowledge, "{}", task.id);
        }
    }

    #[test]
    fn random_feasible_plans_always_validate() {
        let catalog = Catalog::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(0x9a17);
        let mut accepted = 0;
        while accepted < 50 {
            let len = rng.random_range(1..=4usize);
            let names: Vec<String> = (0..len)
                .map(|_| {
                    let idx = rng.random_range(0..catalog.stages.len());
                    catalog.stages[idx].name.clone()
                })
                .collect();
            let instruction = names.join(" then ");
            let Ok(knowledge) = plan_task(&instruction, &initial(OnTable), catalog) else {
                continue;
            };
            accepted += 1;
            let back = validate_knowledge(&knowledge.to_document(catalog), catalog).unwrap();
            assert_eq!(back, knowledge, "{instruction}");
        }
    }

    /// The worked examples embedded in the shipped prompt template, in order.
    fn template_examples() -> Vec<String> {
        let blocks = extract_json_blocks(prompt::TEMPLATE);
        // Block 0 is the output-format skeleton; 1 and 2 are worked examples.
        assert_eq!(blocks.len(), 3);
        blocks
    }

    #[test]
    fn template_example_documents_validate_verbatim() {
        let catalog = Catalog::builtin();
        let blocks = template_examples();

        // Three-stage example: misspelled "interated_object" keys, missing
        // and trailing commas, and alias motion phrasings all normalize.
        let first = parse_knowledge(&blocks[1], catalog).unwrap();
        assert_eq!(first.stages.len(), 3);
        assert_eq!(
            first.interact_objects,
            vec![ObjectId::Drawer, ObjectId::Box, ObjectId::Block]
        );
        assert_eq!(first.stages[0].name, "open the drawer");
        assert_eq!(
            first.instruction,
            "open the drawer then open the box then move the blue block to the table"
        );
        assert_eq!(
            first.stages[0].motions,
            vec!["reach the closed drawer handle top".to_string(), "pull the drawer out".to_string()]
        );
        assert_eq!(first.stages[2].environment[&ObjectId::Block], InDrawer);

        // Single-stage example.
        let second = parse_knowledge(&blocks[2], catalog).unwrap();
        assert_eq!(second.stages.len(), 1);
        assert_eq!(second.stages[0].motions.len(), 4);
        assert_eq!(second.stages[0].environment[&ObjectId::Light], Open);
    }

    #[test]
    fn validator_reports_schema_paths() {
        let catalog = Catalog::builtin();
        let err = |text: &str| parse_knowledge(text, catalog).unwrap_err();

        assert!(matches!(err("[1]"), KnowledgeError::Schema { path, .. } if path == "$"));
        assert!(
            matches!(err(r#"{"stages": []}"#), KnowledgeError::Schema { path, .. } if path == "$.interact_objects")
        );
        assert!(matches!(
            err(r#"{"interact_objects": ["drawer"], "stages": 3}"#),
            KnowledgeError::Schema { path, .. } if path == "$.stages"
        ));
        assert!(matches!(
            err(r#"{"interact_objects": ["drawer"], "stages": []}"#),
            KnowledgeError::EmptyStages
        ));
        assert!(matches!(
            err(r#"{"interact_objects": ["moon"], "stages": []}"#),
            KnowledgeError::Schema { path, .. } if path == "$.interact_objects[0]"
        ));
        assert!(matches!(
            err(r#"{"interact_objects": ["drawer"], "stages": [{"interacted_object": "drawer"}]}"#),
            KnowledgeError::Schema { path, .. } if path == "$.stages[0].name"
        ));
    }

    #[test]
    fn validator_reports_semantic_violations_by_stage() {
        let catalog = Catalog::builtin();
        let blocks = template_examples();
        let base = parse_lenient(&blocks[1]).unwrap();

        // A drawer motion inside the box stage breaks the subset rule.
        let mut doc = base.clone();
        doc["stages"][1]["motions"][0] = Value::String("pull the drawer out".into());
        assert!(matches!(
            validate_knowledge(&doc, catalog),
            Err(KnowledgeError::MotionSubset { index: 1, .. })
        ));

        // Reordering motions violates catalog order.
        let mut doc = base.clone();
        let motions = doc["stages"][0]["motions"].as_array_mut().unwrap();
        motions.swap(0, 1);
        assert!(matches!(
            validate_knowledge(&doc, catalog),
            Err(KnowledgeError::MotionSubset { index: 0, .. })
        ));

        // A stage environment that ignores the previous stage's effect.
        let mut doc = base.clone();
        doc["stages"][1]["environment"]["drawer"] = Value::String("The drawer is closed".into());
        assert!(matches!(
            validate_knowledge(&doc, catalog),
            Err(KnowledgeError::Propagation { index: 1, object: ObjectId::Drawer, .. })
        ));

        // Unknown state text and incomplete environments name the stage.
        let mut doc = base.clone();
        doc["stages"][0]["environment"]["drawer"] = Value::String("The drawer is ajar".into());
        assert!(matches!(
            validate_knowledge(&doc, catalog),
            Err(KnowledgeError::UnknownStateDescription { index: 0, object: ObjectId::Drawer, .. })
        ));
        let mut doc = base.clone();
        doc["stages"][0]["environment"].as_object_mut().unwrap().remove("light");
        assert!(matches!(
            validate_knowledge(&doc, catalog),
            Err(KnowledgeError::MissingEnvironment { index: 0, object: ObjectId::Light })
        ));

        // interact_objects must mirror the stages' objects.
        let mut doc = base.clone();
        doc["interact_objects"][0] = Value::String("light".into());
        assert!(matches!(
            validate_knowledge(&doc, catalog),
            Err(KnowledgeError::InteractObjectsMismatch { index: 0 })
        ));
        let mut doc = base.clone();
        doc["interact_objects"]
            .as_array_mut()
            .unwrap()
            .push(Value::String("light".into()));
        assert!(matches!(
            validate_knowledge(&doc, catalog),
            Err(KnowledgeError::InteractObjectsMismatch { index: 3 })
        ));

        // Adjacent stages sharing an object are rejected: a well-formed
        // close-the-drawer stage directly after open-the-drawer.
        let text = r#"{
            "interact_objects": ["drawer", "drawer"],
            "stages": [
                {
                    "name": "open the drawer",
                    "interacted_object": "drawer",
                    "environment": {"drawer": "closed", "box": "closed", "light": "closed", "blue_block": "on_table"},
                    "motions": ["reach the closed drawer handle top", "pull the drawer out"]
                },
                {
                    "name": "close the drawer",
                    "interacted_object": "drawer",
                    "environment": {"drawer": "open", "box": "closed", "light": "closed", "blue_block": "on_table"},
                    "motions": ["reach the opened drawer handle top", "push the drawer forward"]
                }
            ]
        }"#;
        assert!(matches!(
            parse_knowledge(text, catalog),
            Err(KnowledgeError::AdjacentObjects { index: 1, object: ObjectId::Drawer })
        ));
    }

    #[test]
    fn bare_state_tokens_are_accepted_in_environments() {
        let catalog = Catalog::builtin();
        let text = r#"{
            "interact_objects": ["light"],
            "stages": [{
                "name": "open light",
                "interacted_object": "light",
                "environment": {"drawer": "closed", "box": "closed", "light": "closed", "blue_block": "on_table"},
                "motions": ["reach and push down the button"]
            }]
        }"#;
        let knowledge = parse_knowledge(text, catalog).unwrap();
        assert_eq!(knowledge.stages[0].environment[&ObjectId::Light], Closed);
        assert_eq!(knowledge.task_id, "open_light");
    }

    #[test]
    fn conditioned_objects_and_terminal_environment() {
        let catalog = Catalog::builtin();
        let knowledge = plan_task(
            "open the drawer then move the blue block to the drawer",
            &initial(OnTable),
            catalog,
        )
        .unwrap();
        // The box and light never move and are not interacted with.
        let conditioned = knowledge.conditioned_objects();
        assert!(conditioned.contains(&ObjectId::Drawer));
        assert!(conditioned.contains(&ObjectId::Block));
        assert!(!conditioned.contains(&ObjectId::Box));
        assert!(!conditioned.contains(&ObjectId::Light));

        let terminal = knowledge.terminal_environment(catalog);
        assert_eq!(terminal[&ObjectId::Drawer], Open);
        assert_eq!(terminal[&ObjectId::Block], InDrawer);
    }
}
