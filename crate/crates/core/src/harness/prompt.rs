//! Agent system prompts rendered from the shipped assets.

use std::collections::BTreeMap;
use std::path::Path;

use crate::assets::{BASE_AGENT_PROMPT, META_AGENT_PROMPT};
use crate::template::{render, TemplateError};
use crate::workspace::AgentRole;

const SKILL_SECTION: &str = "## Skill Guidance";

pub fn template_for(role: AgentRole) -> &'static str {
    match role {
        AgentRole::Meta => META_AGENT_PROMPT,
        AgentRole::Base => BASE_AGENT_PROMPT,
    }
}

pub fn render_prompt(_role: AgentRole, template: &str, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    render(template, bindings)
}

/// Base prompt without any reference to a skill: drops the skill-guidance
/// section and the SKILL.md line of the directory sketch.
pub fn strip_skill_guidance(template: &str) -> String {
    let mut out = Vec::new();
    let mut skipping = false;
    for line in template.lines() {
        if line.trim_start().starts_with("## ") {
            skipping = line.trim() == SKILL_SECTION;
        }
        if skipping || line.contains("SKILL.md") {
            continue;
        }
        out.push(line);
    }
    let mut text = out.join("\n");
    if template.ends_with('\n') {
        text.push('\n');
    }
    text
}

fn bind(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

pub fn meta_bindings(task_specification: &str, iter_name: &str, workspace_base: &Path, skill_database: &str, current_iteration: u32) -> BTreeMap<String, String> {
    bind(&[
        ("task_specification", task_specification.to_string()),
        ("iter_name", iter_name.to_string()),
        ("workspace_base", workspace_base.display().to_string()),
        ("skill_database", skill_database.to_string()),
        ("current_iteration", current_iteration.to_string()),
    ])
}

pub fn base_bindings(task_specification: &str, iter_dir: &Path) -> BTreeMap<String, String> {
    let name = iter_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    bind(&[
        ("task_specification", task_specification.to_string()),
        ("iter_dir", iter_dir.display().to_string()),
        ("iter_dir.name", name),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_prompt_embeds_summary_verbatim() {
        let b = meta_bindings("TASK", "iter3", Path::new("/w"), "SUMMARY-LINE", 3);
        let text = render_prompt(AgentRole::Meta, META_AGENT_PROMPT, &b).unwrap();
        assert!(text.contains("SUMMARY-LINE"));
        assert!(!text.contains("{iter_name}"));
    }

    #[test]
    fn missing_binding_is_named() {
        let mut b = meta_bindings("TASK", "iter3", Path::new("/w"), "S", 3);
        b.remove("iter_name");
        let err = render_prompt(AgentRole::Meta, META_AGENT_PROMPT, &b).unwrap_err();
        assert_eq!(err.to_string(), "unbound placeholder iter_name");
    }

    #[test]
    fn base_prompt_points_at_skill() {
        let b = base_bindings("TASK", Path::new("/w/iter1"));
        let text = render_prompt(AgentRole::Base, BASE_AGENT_PROMPT, &b).unwrap();
        assert!(text.contains("Read `.claude/skills/learning-context/SKILL.md`"));
        assert!(text.contains("iter1/\n"));
    }

    #[test]
    fn stripped_base_prompt_has_no_skill() {
        let stripped = strip_skill_guidance(BASE_AGENT_PROMPT);
        assert!(!stripped.contains("SKILL.md"));
        assert!(!stripped.contains(SKILL_SECTION));
        assert!(stripped.contains("## Available Utilities"));
        let text = render(&stripped, &base_bindings("T", Path::new("/w/online_step1"))).unwrap();
        assert!(text.contains("online_step1"));
    }
}
