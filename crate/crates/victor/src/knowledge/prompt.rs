//! Task-splitter prompt construction.
//!
//! The prompt ships as a text asset with five `{{…}}` placeholders: the task
//! name and the four initial object states. Rendering is pure string
//! substitution — everything around the placeholders is reproduced
//! byte-for-byte — so the instructions, catalog listing, guidelines, and
//! worked examples the model sees are exactly what is on disk.

use crate::catalog::{Catalog, ObjectId, StateMap};

use super::KnowledgeError;

/// The shipped prompt template.
pub const TEMPLATE: &str = include_str!("../../assets/task_splitter_prompt.txt");

/// Placeholder names in template order, paired with the object they describe.
/// `task_name` is handled separately.
const INITIAL_PLACEHOLDERS: [(ObjectId, &str); 4] = [
    (ObjectId::Drawer, "initial_drawer"),
    (ObjectId::Box, "initial_box"),
    (ObjectId::Light, "initial_light"),
    (ObjectId::Block, "initial_block"),
];

/// Substitutes the task name and initial state descriptions into the
/// template. State values render as quoted descriptions (`"The drawer is
/// closed"`), matching the template's worked examples.
pub fn render_prompt(
    instruction: &str,
    initial_states: &StateMap,
    catalog: &Catalog,
) -> Result<String, KnowledgeError> {
    let mut out = TEMPLATE.replace("{{task_name}}", instruction);
    for (object, placeholder) in INITIAL_PLACEHOLDERS {
        let state = initial_states
            .get(&object)
            .ok_or_else(|| KnowledgeError::MissingPlaceholder(placeholder.to_string()))?;
        let description = catalog
            .object(object)
            .descriptions
            .get(state)
            .ok_or(KnowledgeError::InvalidInitialState {
                object,
                state: *state,
            })?;
        out = out.replace(&format!("{{{{{placeholder}}}}}"), &format!("\"{description}\""));
    }
    if let Some(start) = out.find("{{") {
        let rest = &out[start + 2..];
        let name = rest[..rest.find("}}").unwrap_or(rest.len())].to_string();
        return Err(KnowledgeError::MissingPlaceholder(name));
    }
    Ok(out)
}
