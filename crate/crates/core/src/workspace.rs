//! On-disk workspace layout and the permission scopes of both agents.
//!
//! ```text
//! {base}/
//!   meta_agent/
//!     train.jsonl
//!     evaluations.json
//!     skills/iter{k}/SKILL.md
//!   iter{k}/ or iter{k}_sub{j}/
//!     .claude/skills/learning-context/SKILL.md
//!     context/
//!     retrieve_context.py
//!     utils/
//!     data/train.json
//!   .mce/            harness-owned: transcripts, evaluation rollouts, usage
//!   run_report.json
//! ```
//!
//! Every path check goes through [`resolve_path`], which normalizes `..` and
//! follows symlinks component by component (including dangling ones) before
//! comparing against scope prefixes.

use std::ffi::OsString;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets;
use crate::fsutil;
use crate::model::{ContextArtifact, DataSplit, ModelError, SkillStatus};

pub const META_DIR: &str = "meta_agent";
pub const INTERNAL_DIR: &str = ".mce";
pub const SKILL_SUBDIR: &str = ".claude/skills/learning-context";
pub const SKILLS_ROOT: &str = ".claude/skills";
pub const SKILL_FILE: &str = "SKILL.md";
pub const SKILL_OVERVIEW_HEADING: &str = "## Skill Overview";
pub const DEFAULT_ENTRYPOINT: &str = "retrieve_context.py";
pub const LOCK_FILE: &str = ".lock";
pub const RUN_REPORT_FILE: &str = "run_report.json";

const MAX_SYMLINK_HOPS: usize = 40;

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("workspace not empty: {0}")]
    NotEmpty(PathBuf),
    #[error("iteration number must be >= 1")]
    BadIteration,
    #[error("directory already exists: {0}")]
    AlreadyExists(PathBuf),
    #[error("skill-invalid: {0}")]
    SkillInvalid(String),
    #[error("copy failed: {0}")]
    Copy(String),
    #[error("workspace is locked by another command ({0})")]
    Locked(PathBuf),
    #[error("writable prefix {0} is not inside any readable prefix")]
    ScopeShape(PathBuf),
    #[error(transparent)]
    Scope(#[from] ScopeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl WorkspaceError {
    /// Iteration status a failure maps to when it aborts an iteration.
    pub fn status(&self) -> SkillStatus {
        match self {
            WorkspaceError::SkillInvalid(_) => SkillStatus::SkillInvalid,
            _ => SkillStatus::ArtifactInvalid,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ScopeError {
    #[error("permission denied: {access} access to {path} is outside the session scope")]
    Denied { path: PathBuf, access: Access },
    #[error("cannot resolve {path}: {reason}")]
    Unresolvable { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read,
    Write,
}

impl std::fmt::Display for Access {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Access::Read => "read",
            Access::Write => "write",
        })
    }
}

/// Resolves `path` (relative paths are taken from `cwd`) to an absolute
/// path with no `.`/`..` components and no symlinks in any existing prefix.
/// Components that do not exist yet are appended lexically.
pub fn resolve_path(path: &Path, cwd: &Path) -> Result<PathBuf, ScopeError> {
    let joined = if path.is_absolute() { path.to_path_buf() } else { cwd.join(path) };
    let mut pending: Vec<OsString> = Vec::new();
    push_components(&joined, &mut pending);
    pending.reverse();

    let mut resolved = PathBuf::from("/");
    let mut hops = 0;
    while let Some(part) = pending.pop() {
        match part.to_str() {
            Some("/") => resolved = PathBuf::from("/"),
            Some(".") => {}
            Some("..") => {
                resolved.pop();
            }
            _ => {
                let candidate = resolved.join(&part);
                match fs::symlink_metadata(&candidate) {
                    Ok(meta) if meta.file_type().is_symlink() => {
                        hops += 1;
                        if hops > MAX_SYMLINK_HOPS {
                            return Err(ScopeError::Unresolvable {
                                path: path.to_path_buf(),
                                reason: "too many levels of symbolic links".into(),
                            });
                        }
                        let link = fs::read_link(&candidate).map_err(|e| ScopeError::Unresolvable {
                            path: path.to_path_buf(),
                            reason: e.to_string(),
                        })?;
                        let mut expanded = Vec::new();
                        push_components(&link, &mut expanded);
                        for c in expanded.into_iter().rev() {
                            pending.push(c);
                        }
                    }
                    _ => resolved = candidate,
                }
            }
        }
    }
    Ok(resolved)
}

fn push_components(path: &Path, out: &mut Vec<OsString>) {
    for c in path.components() {
        match c {
            Component::RootDir | Component::Prefix(_) => out.push("/".into()),
            Component::CurDir => out.push(".".into()),
            Component::ParentDir => out.push("..".into()),
            Component::Normal(n) => out.push(n.to_os_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Meta,
    Base,
}

impl std::fmt::Display for AgentRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AgentRole::Meta => "meta",
            AgentRole::Base => "base",
        })
    }
}

/// Read/write prefixes for one agent session. Prefixes are stored resolved,
/// and `writable ⊆ readable` is checked at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermissionScope {
    readable: Vec<PathBuf>,
    writable: Vec<PathBuf>,
    pub executable_allowed: bool,
}

impl PermissionScope {
    pub fn new(readable: Vec<PathBuf>, writable: Vec<PathBuf>, executable_allowed: bool) -> Result<Self, WorkspaceError> {
        let root = Path::new("/");
        let readable = readable.iter().map(|p| resolve_path(p, root)).collect::<Result<Vec<_>, _>>()?;
        let writable = writable.iter().map(|p| resolve_path(p, root)).collect::<Result<Vec<_>, _>>()?;
        for w in &writable {
            if !readable.iter().any(|r| w.starts_with(r)) {
                return Err(WorkspaceError::ScopeShape(w.clone()));
            }
        }
        Ok(Self { readable, writable, executable_allowed })
    }

    pub fn readable(&self) -> &[PathBuf] {
        &self.readable
    }

    pub fn writable(&self) -> &[PathBuf] {
        &self.writable
    }

    pub fn allows(&self, resolved: &Path, access: Access) -> bool {
        let prefixes = match access {
            Access::Read => &self.readable,
            Access::Write => &self.writable,
        };
        prefixes.iter().any(|p| resolved.starts_with(p))
    }

    /// Resolves `path` against `cwd` and checks it; returns the resolved path.
    pub fn check(&self, path: &Path, cwd: &Path, access: Access) -> Result<PathBuf, ScopeError> {
        let resolved = resolve_path(path, cwd)?;
        if self.allows(&resolved, access) {
            Ok(resolved)
        } else {
            Err(ScopeError::Denied { path: path.to_path_buf(), access })
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceConfig {
    /// File name of the retrieval entrypoint inside each artifact.
    #[serde(default = "default_entrypoint")]
    pub entrypoint_name: String,
    /// Directory copied into every iteration as `utils/`; the built-in
    /// payload is used when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utils_payload: Option<PathBuf>,
}

fn default_entrypoint() -> String {
    DEFAULT_ENTRYPOINT.to_string()
}

impl WorkspaceConfig {
    pub fn new() -> Self {
        Self { entrypoint_name: default_entrypoint(), utils_payload: None }
    }
}

#[derive(Debug, Clone)]
pub struct WorkspaceLayout {
    base: PathBuf,
    config: WorkspaceConfig,
}

impl WorkspaceLayout {
    /// Opens an existing workspace.
    pub fn open(base: &Path, config: WorkspaceConfig) -> Result<Self, WorkspaceError> {
        let base = fs::canonicalize(base)?;
        Ok(Self { base, config })
    }

    pub fn base(&self) -> &Path {
        &self.base
    }

    pub fn entrypoint_name(&self) -> &str {
        &self.config.entrypoint_name
    }

    pub fn meta_dir(&self) -> PathBuf {
        self.base.join(META_DIR)
    }

    pub fn train_jsonl(&self) -> PathBuf {
        self.meta_dir().join("train.jsonl")
    }

    pub fn evaluations_path(&self) -> PathBuf {
        self.meta_dir().join("evaluations.json")
    }

    pub fn archived_skill_dir(&self, k: u32) -> PathBuf {
        self.meta_dir().join("skills").join(format!("iter{k}"))
    }

    pub fn internal_dir(&self) -> PathBuf {
        self.base.join(INTERNAL_DIR)
    }

    pub fn transcripts_dir(&self) -> PathBuf {
        self.internal_dir().join("transcripts")
    }

    pub fn rollouts_dir(&self, name: &str) -> PathBuf {
        self.internal_dir().join("rollouts").join(name)
    }

    pub fn run_report_path(&self) -> PathBuf {
        self.base.join(RUN_REPORT_FILE)
    }

    pub fn iter_name(k: u32, sub: Option<u32>) -> String {
        match sub {
            Some(j) => format!("iter{k}_sub{j}"),
            None => format!("iter{k}"),
        }
    }

    pub fn iter_dir(&self, k: u32, sub: Option<u32>) -> PathBuf {
        self.base.join(Self::iter_name(k, sub))
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.base.join(rel)
        }
    }

    pub fn relativize(&self, abs: &Path) -> PathBuf {
        abs.strip_prefix(&self.base).map(Path::to_path_buf).unwrap_or_else(|_| abs.to_path_buf())
    }

    /// Artifact rooted at a workspace directory (absolute or relative).
    pub fn artifact_at(&self, dir: &Path) -> ContextArtifact {
        ContextArtifact::at(self.relativize(dir), self.entrypoint_name())
    }

    /// Digest over an artifact's `context/` tree and entrypoint.
    pub fn artifact_digest(&self, artifact: &ContextArtifact) -> std::io::Result<String> {
        let root = self.resolve(&artifact.root_dir);
        fsutil::tree_digest(
            &root,
            &[&self.resolve(&artifact.context_dir), &self.resolve(&artifact.retrieval_entrypoint)],
        )
    }

    /// Iteration directories (`iter{k}` and `iter{k}_sub{j}`) sorted by (k, j).
    pub fn iteration_dirs(&self) -> std::io::Result<Vec<(u32, Option<u32>, PathBuf)>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.base)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            if let Some((k, sub)) = parse_iter_name(&entry.file_name().to_string_lossy()) {
                out.push((k, sub, entry.path()));
            }
        }
        out.sort_by_key(|(k, sub, _)| (*k, sub.map_or(-1, i64::from)));
        Ok(out)
    }
}

pub fn parse_iter_name(name: &str) -> Option<(u32, Option<u32>)> {
    let rest = name.strip_prefix("iter")?;
    match rest.split_once("_sub") {
        Some((k, j)) => Some((k.parse().ok()?, Some(j.parse().ok()?))),
        None => Some((rest.parse().ok()?, None)),
    }
}

/// Creates a fresh workspace and writes the full training split to
/// `meta_agent/train.jsonl` in split order.
pub fn init_workspace(base: &Path, train: &DataSplit, config: WorkspaceConfig) -> Result<WorkspaceLayout, WorkspaceError> {
    if base.exists() && fs::read_dir(base)?.next().is_some() {
        return Err(WorkspaceError::NotEmpty(base.to_path_buf()));
    }
    fs::create_dir_all(base)?;
    let layout = WorkspaceLayout::open(base, config)?;
    fs::create_dir_all(layout.meta_dir().join("skills"))?;
    fs::create_dir_all(layout.internal_dir())?;
    train.write_jsonl(&layout.train_jsonl())?;
    write_evaluations(&layout, &[])?;
    Ok(layout)
}

/// Creates `iter{k}` (or `iter{k}_sub{j}`), warm-started from `prior_best`.
pub fn prepare_iteration(
    layout: &WorkspaceLayout,
    k: u32,
    sub: Option<u32>,
    prior_best: Option<&ContextArtifact>,
    skill_dir: Option<&Path>,
) -> Result<PathBuf, WorkspaceError> {
    if k == 0 {
        return Err(WorkspaceError::BadIteration);
    }
    prepare_dir(layout, &WorkspaceLayout::iter_name(k, sub), prior_best, skill_dir)
}

/// Creates a working directory named `name` under the base: `context/` and
/// the entrypoint copied from `prior` (or an empty context with the skeleton
/// entrypoint), the skill folder when given, and the `utils/` payload.
pub fn prepare_dir(
    layout: &WorkspaceLayout,
    name: &str,
    prior: Option<&ContextArtifact>,
    skill_dir: Option<&Path>,
) -> Result<PathBuf, WorkspaceError> {
    let dir = layout.base().join(name);
    if dir.exists() {
        return Err(WorkspaceError::AlreadyExists(dir));
    }
    let copy_err = |what: &str, e: std::io::Error| WorkspaceError::Copy(format!("{what}: {e}"));
    fs::create_dir_all(dir.join("data"))?;
    fs::create_dir_all(dir.join(SKILLS_ROOT))?;
    let entrypoint = dir.join(layout.entrypoint_name());
    match prior {
        Some(artifact) => {
            let src_ctx = layout.resolve(&artifact.context_dir);
            if src_ctx.exists() {
                fsutil::copy_tree(&src_ctx, &dir.join("context")).map_err(|e| copy_err("context", e))?;
            } else {
                fs::create_dir_all(dir.join("context"))?;
            }
            fsutil::copy_file(&layout.resolve(&artifact.retrieval_entrypoint), &entrypoint)
                .map_err(|e| copy_err("retrieval entrypoint", e))?;
        }
        None => {
            fs::create_dir_all(dir.join("context"))?;
            fs::write(&entrypoint, assets::SKELETON_ENTRYPOINT)?;
            fsutil::set_executable(&entrypoint)?;
        }
    }
    if let Some(skill) = skill_dir {
        fsutil::copy_tree(skill, &dir.join(SKILL_SUBDIR)).map_err(|e| copy_err("skill", e))?;
    }
    let utils = dir.join("utils");
    match &layout.config.utils_payload {
        Some(payload) => fsutil::copy_tree(payload, &utils).map_err(|e| copy_err("utils payload", e))?,
        None => {
            fs::create_dir_all(&utils)?;
            for (file, text) in assets::UTILS_PAYLOAD {
                fs::write(utils.join(file), text)?;
            }
        }
    }
    Ok(dir)
}

/// Scope for an agent working on `iter_dir`.
///
/// Meta: reads `meta_agent/`, every earlier iteration directory and its own
/// `.claude/skills/`; writes only the latter. Base: reads and writes its
/// iteration directory only.
pub fn scope_for(role: AgentRole, layout: &WorkspaceLayout, iter_dir: &Path) -> Result<PermissionScope, WorkspaceError> {
    match role {
        AgentRole::Base => PermissionScope::new(vec![iter_dir.to_path_buf()], vec![iter_dir.to_path_buf()], true),
        AgentRole::Meta => {
            let current = iter_dir
                .file_name()
                .and_then(|n| parse_iter_name(&n.to_string_lossy()))
                .map(|(k, _)| k);
            let skills = iter_dir.join(SKILLS_ROOT);
            let mut readable = vec![layout.meta_dir()];
            for (k, _, dir) in layout.iteration_dirs()? {
                if current.is_none_or(|cur| k < cur) {
                    readable.push(dir);
                }
            }
            readable.push(skills.clone());
            PermissionScope::new(readable, vec![skills], true)
        }
    }
}

/// Checks that a skill folder holds a `SKILL.md` with the overview heading.
pub fn validate_skill(skill_dir: &Path) -> Result<(), String> {
    let path = skill_dir.join(SKILL_FILE);
    let text = fs::read_to_string(&path).map_err(|_| format!("{SKILL_FILE} does not exist in {}", skill_dir.display()))?;
    if text.lines().any(|l| l.trim_end() == SKILL_OVERVIEW_HEADING) {
        Ok(())
    } else {
        Err(format!("{SKILL_FILE} has no `{SKILL_OVERVIEW_HEADING}` section"))
    }
}

/// Copies a finished skill to `meta_agent/skills/iter{k}/`.
pub fn archive_skill(layout: &WorkspaceLayout, k: u32, skill_src: &Path) -> Result<PathBuf, WorkspaceError> {
    if !skill_src.join(SKILL_FILE).is_file() {
        return Err(WorkspaceError::SkillInvalid(format!("{SKILL_FILE} missing in {}", skill_src.display())));
    }
    let dest = layout.archived_skill_dir(k);
    if dest.exists() {
        fs::remove_dir_all(&dest)?;
    }
    fsutil::copy_tree(skill_src, &dest).map_err(|e| WorkspaceError::Copy(e.to_string()))?;
    Ok(dest)
}

/// One row of `meta_agent/evaluations.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationEntry {
    pub iteration: u32,
    pub sub: Option<u32>,
    pub train_score: Option<f64>,
    pub val_score: Option<f64>,
    pub status: SkillStatus,
    pub skill_path: Option<PathBuf>,
    pub artifact_path: Option<PathBuf>,
    pub wall_clock_s: f64,
}

pub fn read_evaluations(layout: &WorkspaceLayout) -> Result<Vec<EvaluationEntry>, WorkspaceError> {
    Ok(serde_json::from_slice(&fs::read(layout.evaluations_path())?)?)
}

pub fn write_evaluations(layout: &WorkspaceLayout, entries: &[EvaluationEntry]) -> Result<(), WorkspaceError> {
    let path = layout.evaluations_path();
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(entries)?)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn append_evaluation(layout: &WorkspaceLayout, entry: EvaluationEntry) -> Result<(), WorkspaceError> {
    let mut entries = read_evaluations(layout)?;
    entries.push(entry);
    write_evaluations(layout, &entries)
}

/// Exclusive lock held by a mutating command; removed on drop.
#[derive(Debug)]
pub struct WorkspaceLock {
    path: PathBuf,
}

impl WorkspaceLock {
    pub fn acquire(base: &Path) -> Result<Self, WorkspaceError> {
        let path = base.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(WorkspaceError::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DataInstance, SplitKind};

    fn split(n: usize) -> DataSplit {
        let instances = (0..n)
            .map(|i| DataInstance { id: i as u64, question: format!("q{i}"), target: format!("t{i}").as_str().into() })
            .collect();
        DataSplit::new(SplitKind::Train, instances).unwrap()
    }

    fn layout() -> (tempfile::TempDir, WorkspaceLayout) {
        let tmp = tempfile::tempdir().unwrap();
        let layout = init_workspace(&tmp.path().join("ws"), &split(3), WorkspaceConfig::new()).unwrap();
        (tmp, layout)
    }

    #[test]
    fn init_writes_train_in_order() {
        let (_tmp, layout) = layout();
        let text = fs::read_to_string(layout.train_jsonl()).unwrap();
        let questions: Vec<String> = text
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["question"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(questions, ["q0", "q1", "q2"]);
        assert!(read_evaluations(&layout).unwrap().is_empty());
    }

    #[test]
    fn init_refuses_non_empty_base() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("old"), "x").unwrap();
        let err = init_workspace(tmp.path(), &split(1), WorkspaceConfig::new()).unwrap_err();
        assert!(err.to_string().starts_with("workspace not empty"));
    }

    #[test]
    fn first_iteration_gets_skeleton() {
        let (_tmp, layout) = layout();
        let dir = prepare_iteration(&layout, 1, None, None, None).unwrap();
        assert_eq!(dir.file_name().unwrap(), "iter1");
        assert_eq!(fs::read_dir(dir.join("context")).unwrap().count(), 0);
        assert!(fsutil::is_executable(&dir.join(DEFAULT_ENTRYPOINT)));
        assert!(dir.join("utils/llm.py").is_file() && dir.join("utils/embedding.py").is_file());
        assert!(dir.join("data").is_dir());
        assert!(matches!(prepare_iteration(&layout, 0, None, None, None), Err(WorkspaceError::BadIteration)));
    }

    #[test]
    fn warm_start_copies_bytes_and_skill() {
        let (_tmp, layout) = layout();
        let first = prepare_iteration(&layout, 1, None, None, None).unwrap();
        fs::create_dir_all(first.join("context/nested")).unwrap();
        fs::write(first.join("context/rules.md"), "rule one\n").unwrap();
        fs::write(first.join("context/nested/x.md"), [0u8, 159, 146, 150]).unwrap();
        let skill = first.join(SKILL_SUBDIR);
        fs::create_dir_all(skill.join("scripts")).unwrap();
        fs::write(skill.join(SKILL_FILE), "## Skill Overview\nx\n").unwrap();

        let prior = layout.artifact_at(&first);
        let second = prepare_iteration(&layout, 2, Some(0), Some(&prior), Some(&skill)).unwrap();
        assert_eq!(second.file_name().unwrap(), "iter2_sub0");
        let next = layout.artifact_at(&second);
        assert_eq!(layout.artifact_digest(&prior).unwrap(), layout.artifact_digest(&next).unwrap());
        assert!(second.join(SKILL_SUBDIR).join("scripts").is_dir());
        assert!(fsutil::is_executable(&second.join(DEFAULT_ENTRYPOINT)));
    }

    #[test]
    fn archive_requires_skill_file() {
        let (_tmp, layout) = layout();
        let src = layout.base().join("tmp-skill");
        fs::create_dir_all(src.join("scripts")).unwrap();
        assert!(matches!(archive_skill(&layout, 1, &src), Err(WorkspaceError::SkillInvalid(_))));
        fs::write(src.join(SKILL_FILE), "## Skill Overview\nbody\n").unwrap();
        fs::write(src.join("scripts/run.py"), "print(1)\n").unwrap();
        let dest = archive_skill(&layout, 1, &src).unwrap();
        assert_eq!(fs::read(dest.join(SKILL_FILE)).unwrap(), fs::read(src.join(SKILL_FILE)).unwrap());
        assert!(dest.join("scripts/run.py").is_file());
    }

    #[test]
    fn skill_validation_requires_heading() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(validate_skill(tmp.path()).is_err());
        fs::write(tmp.path().join(SKILL_FILE), "# Skill\n## Methodology\n").unwrap();
        assert!(validate_skill(tmp.path()).unwrap_err().contains("Skill Overview"));
        fs::write(tmp.path().join(SKILL_FILE), "# Skill\n## Skill Overview\n").unwrap();
        assert!(validate_skill(tmp.path()).is_ok());
    }

    #[test]
    fn scopes_follow_roles() {
        let (_tmp, layout) = layout();
        let iter1 = prepare_iteration(&layout, 1, None, None, None).unwrap();
        let iter2 = prepare_iteration(&layout, 2, None, None, None).unwrap();

        let base = scope_for(AgentRole::Base, &layout, &iter2).unwrap();
        assert!(base.check(Path::new("context/a.md"), &iter2, Access::Write).is_ok());
        assert!(base.check(Path::new("../iter1/context/a.md"), &iter2, Access::Write).is_err());
        assert!(base.check(&iter1.join("context"), &iter2, Access::Read).is_err());

        let meta = scope_for(AgentRole::Meta, &layout, &iter2).unwrap();
        let ws = layout.base();
        assert!(meta.check(Path::new("meta_agent/evaluations.json"), ws, Access::Read).is_ok());
        assert!(meta.check(Path::new("iter1/context"), ws, Access::Read).is_ok());
        assert!(meta.check(Path::new("iter2/context/x.md"), ws, Access::Write).is_err());
        assert!(meta.check(Path::new("iter2/.claude/skills/learning-context/SKILL.md"), ws, Access::Write).is_ok());
        assert!(meta.check(Path::new(".mce/transcripts/x"), ws, Access::Read).is_err());
    }

    #[test]
    fn symlinks_are_resolved_before_checks() {
        let (_tmp, layout) = layout();
        let iter1 = prepare_iteration(&layout, 1, None, None, None).unwrap();
        std::os::unix::fs::symlink(layout.meta_dir(), iter1.join("escape")).unwrap();
        std::os::unix::fs::symlink("../../nowhere/new", iter1.join("dangling")).unwrap();
        let scope = scope_for(AgentRole::Base, &layout, &iter1).unwrap();
        assert!(scope.check(Path::new("escape/evaluations.json"), &iter1, Access::Read).is_err());
        assert!(scope.check(Path::new("dangling"), &iter1, Access::Write).is_err());
    }

    #[test]
    fn writable_must_be_readable() {
        assert!(PermissionScope::new(vec!["/a".into()], vec!["/b".into()], true).is_err());
    }

    #[test]
    fn lock_is_exclusive() {
        let tmp = tempfile::tempdir().unwrap();
        let lock = WorkspaceLock::acquire(tmp.path()).unwrap();
        assert!(WorkspaceLock::acquire(tmp.path()).is_err());
        drop(lock);
        assert!(WorkspaceLock::acquire(tmp.path()).is_ok());
    }
}
