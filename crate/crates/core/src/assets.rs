//! Text assets compiled into the binary: agent system prompts, built-in task
//! specifications, the skeleton retrieval entrypoint and the default `utils/`
//! payload installed into every iteration directory.

use crate::model::{ModelError, TaskSpecification};

pub const META_AGENT_PROMPT: &str = include_str!("../assets/prompts/meta_agent.md");
pub const BASE_AGENT_PROMPT: &str = include_str!("../assets/prompts/base_agent.md");

pub const SKELETON_ENTRYPOINT: &str = include_str!("../assets/retrieve_context.py");

/// Default `utils/` payload as (file name, contents).
pub const UTILS_PAYLOAD: &[(&str, &str)] = &[
    ("__init__.py", include_str!("../assets/utils/__init__.py")),
    ("llm.py", include_str!("../assets/utils/llm.py")),
    ("embedding.py", include_str!("../assets/utils/embedding.py")),
];

const BUILTIN_TASKS: &[(&str, &str)] = &[
    ("finer", include_str!("../assets/tasks/finer.toml")),
    ("uspto50k", include_str!("../assets/tasks/uspto50k.toml")),
    ("symptom2disease", include_str!("../assets/tasks/symptom2disease.toml")),
    ("lawbench", include_str!("../assets/tasks/lawbench.toml")),
    ("aegis2", include_str!("../assets/tasks/aegis2.toml")),
];

pub fn builtin_task_names() -> impl Iterator<Item = &'static str> {
    BUILTIN_TASKS.iter().map(|(name, _)| *name)
}

pub fn builtin_task(name: &str) -> Option<Result<TaskSpecification, ModelError>> {
    BUILTIN_TASKS
        .iter()
        .find(|(key, _)| *key == name)
        .map(|(_, text)| TaskSpecification::from_toml(text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_task_spec;

    #[test]
    fn builtin_tasks_are_valid() {
        for name in builtin_task_names() {
            let spec = builtin_task(name).unwrap().unwrap();
            assert_eq!(spec.name, name);
            assert!(validate_task_spec(&spec).is_empty(), "{name}: {:?}", validate_task_spec(&spec));
        }
    }

    #[test]
    fn base_prompt_points_at_the_skill() {
        assert!(BASE_AGENT_PROMPT
            .contains("Read `.claude/skills/learning-context/SKILL.md` for your learning methodology"));
        assert!(META_AGENT_PROMPT.contains("MUST include `## Skill Overview` section"));
    }
}
