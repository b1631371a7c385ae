//! The seven agent tools. Every path argument goes through the session's
//! [`PermissionScope`]; Bash additionally runs under [`Confinement`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use globset::GlobBuilder;
use regex::RegexBuilder;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::process::Command;
use walkdir::WalkDir;

use super::sandbox::{run_bounded, Confinement, SandboxEnv};
use crate::gateway::ToolDefinition;
use crate::workspace::{Access, PermissionScope, ScopeError};

pub const TOOL_NAMES: [&str; 7] = ["Read", "Write", "Edit", "Bash", "Glob", "Grep", "TodoWrite"];

const MAX_GLOB_RESULTS: usize = 1000;
const MAX_GREP_MATCHES: usize = 500;
const MAX_GREP_FILE_BYTES: u64 = 8 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToolErrorCode {
    PermissionDenied,
    Timeout,
    OutputTooLarge,
    NoMatch,
    AmbiguousMatch,
    NotFound,
    InvalidArguments,
    UnknownTool,
    Io,
}

impl std::fmt::Display for ToolErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub ok: bool,
    pub code: Option<ToolErrorCode>,
    pub content: String,
}

impl ToolResult {
    fn ok(content: impl Into<String>) -> Self {
        Self { ok: true, code: None, content: content.into() }
    }

    fn err(code: ToolErrorCode, message: impl std::fmt::Display) -> Self {
        Self { ok: false, code: Some(code), content: format!("error [{code}]: {message}") }
    }
}

impl From<ScopeError> for ToolResult {
    fn from(e: ScopeError) -> Self {
        match e {
            ScopeError::Denied { .. } => ToolResult::err(ToolErrorCode::PermissionDenied, e),
            ScopeError::Unresolvable { .. } => ToolResult::err(ToolErrorCode::InvalidArguments, e),
        }
    }
}

/// Everything a tool needs to know about its session.
#[derive(Debug, Clone)]
pub struct ToolContext {
    pub scope: PermissionScope,
    pub cwd: PathBuf,
    pub bash_timeout: Duration,
    pub read_cap: usize,
    pub output_cap: usize,
    /// Session-local TodoWrite store (harness-owned, outside the scope).
    pub todo_path: PathBuf,
    /// Private TMPDIR for Bash.
    pub tmp_dir: PathBuf,
    pub env: SandboxEnv,
    pub confine_reads: bool,
}

fn schema(props: Value, required: &[&str]) -> Value {
    json!({ "type": "object", "properties": props, "required": required, "additionalProperties": false })
}

pub fn tool_definitions() -> Vec<ToolDefinition> {
    let def = |name: &str, description: &str, parameters: Value| ToolDefinition {
        name: name.into(),
        description: description.into(),
        parameters,
    };
    vec![
        def(
            "Read",
            "Read a text file. Output has line numbers. Large files are truncated; use offset/limit (1-based lines) to page.",
            schema(
                json!({
                    "file_path": { "type": "string" },
                    "offset": { "type": "integer", "minimum": 1 },
                    "limit": { "type": "integer", "minimum": 1 }
                }),
                &["file_path"],
            ),
        ),
        def(
            "Write",
            "Create or overwrite a file with the given content. Parent directories are created.",
            schema(json!({ "file_path": { "type": "string" }, "content": { "type": "string" } }), &["file_path", "content"]),
        ),
        def(
            "Edit",
            "Replace an exact string in a file. Fails if old_string is absent, or occurs more than once without replace_all.",
            schema(
                json!({
                    "file_path": { "type": "string" },
                    "old_string": { "type": "string" },
                    "new_string": { "type": "string" },
                    "replace_all": { "type": "boolean" }
                }),
                &["file_path", "old_string", "new_string"],
            ),
        ),
        def(
            "Bash",
            "Run a shell command in the working directory. Output is captured and bounded; long runs are killed.",
            schema(json!({ "command": { "type": "string" }, "timeout_s": { "type": "integer", "minimum": 1 } }), &["command"]),
        ),
        def(
            "Glob",
            "List files matching a glob pattern (e.g. **/*.md) under path (default: working directory).",
            schema(json!({ "pattern": { "type": "string" }, "path": { "type": "string" } }), &["pattern"]),
        ),
        def(
            "Grep",
            "Search file contents with a regular expression. Returns path:line:text matches.",
            schema(
                json!({
                    "pattern": { "type": "string" },
                    "path": { "type": "string" },
                    "glob": { "type": "string" },
                    "case_insensitive": { "type": "boolean" }
                }),
                &["pattern"],
            ),
        ),
        def(
            "TodoWrite",
            "Replace the session's scratch task list.",
            schema(
                json!({
                    "todos": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "properties": {
                                "content": { "type": "string" },
                                "status": { "type": "string", "enum": ["pending", "in_progress", "completed"] }
                            },
                            "required": ["content", "status"]
                        }
                    }
                }),
                &["todos"],
            ),
        ),
    ]
}

#[derive(Deserialize)]
struct ReadArgs {
    file_path: String,
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Deserialize)]
struct WriteArgs {
    file_path: String,
    content: String,
}

#[derive(Deserialize)]
struct EditArgs {
    file_path: String,
    old_string: String,
    new_string: String,
    #[serde(default)]
    replace_all: bool,
}

#[derive(Deserialize)]
struct BashArgs {
    command: String,
    timeout_s: Option<u64>,
}

#[derive(Deserialize)]
struct GlobArgs {
    pattern: String,
    path: Option<String>,
}

#[derive(Deserialize)]
struct GrepArgs {
    pattern: String,
    path: Option<String>,
    glob: Option<String>,
    #[serde(default)]
    case_insensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TodoItem {
    pub content: String,
    pub status: String,
}

#[derive(Deserialize)]
struct TodoArgs {
    todos: Vec<TodoItem>,
}

fn parse<T: for<'de> Deserialize<'de>>(args: &Value) -> Result<T, ToolResult> {
    serde_json::from_value(args.clone()).map_err(|e| ToolResult::err(ToolErrorCode::InvalidArguments, e))
}

fn io_err(path: &Path, e: std::io::Error) -> ToolResult {
    if e.kind() == std::io::ErrorKind::NotFound {
        ToolResult::err(ToolErrorCode::NotFound, format!("{} does not exist", path.display()))
    } else {
        ToolResult::err(ToolErrorCode::Io, format!("{}: {e}", path.display()))
    }
}

impl ToolContext {
    fn display(&self, p: &Path) -> String {
        match p.strip_prefix(&self.cwd) {
            Ok(rel) if !rel.as_os_str().is_empty() => rel.display().to_string(),
            _ => p.display().to_string(),
        }
    }

    fn check(&self, path: &str, access: Access) -> Result<PathBuf, ToolResult> {
        if path.is_empty() {
            return Err(ToolResult::err(ToolErrorCode::InvalidArguments, "empty path"));
        }
        self.scope.check(Path::new(path), &self.cwd, access).map_err(ToolResult::from)
    }

    /// Executes one call. Never fails: problems become error results.
    pub async fn exec(&self, name: &str, args: &Value) -> ToolResult {
        let result = match name {
            "Read" => self.read(args),
            "Write" => self.write(args),
            "Edit" => self.edit(args),
            "Bash" => self.bash(args).await,
            "Glob" => self.glob(args),
            "Grep" => self.grep(args),
            "TodoWrite" => self.todo(args),
            other => Err(ToolResult::err(ToolErrorCode::UnknownTool, format!("unknown tool {other}"))),
        };
        result.unwrap_or_else(|e| e)
    }

    fn read(&self, args: &Value) -> Result<ToolResult, ToolResult> {
        let a: ReadArgs = parse(args)?;
        let path = self.check(&a.file_path, Access::Read)?;
        if path.is_dir() {
            return Err(ToolResult::err(ToolErrorCode::InvalidArguments, format!("{} is a directory", a.file_path)));
        }
        let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        let text = String::from_utf8_lossy(&bytes);
        let start = a.offset.unwrap_or(1).max(1) - 1;
        let mut out = String::new();
        let mut shown = 0usize;
        let mut truncated = false;
        let mut total = 0usize;
        for (i, line) in text.lines().enumerate() {
            total = i + 1;
            if i < start || a.limit.is_some_and(|l| i >= start + l) || truncated {
                continue;
            }
            let row = format!("{:>6}\t{line}\n", i + 1);
            if out.len() + row.len() > self.read_cap {
                truncated = true;
                continue;
            }
            out.push_str(&row);
            shown = i + 1;
        }
        if truncated {
            let _ = write!(
                out,
                "[truncated: output capped at {} bytes; showed through line {shown} of {total}; use offset/limit to read more]",
                self.read_cap
            );
        }
        if out.is_empty() {
            out = "(empty)".into();
        }
        Ok(ToolResult::ok(out))
    }

    fn write(&self, args: &Value) -> Result<ToolResult, ToolResult> {
        let a: WriteArgs = parse(args)?;
        let path = self.check(&a.file_path, Access::Write)?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        std::fs::write(&path, a.content.as_bytes()).map_err(|e| io_err(&path, e))?;
        Ok(ToolResult::ok(format!("Wrote {} bytes to {}", a.content.len(), self.display(&path))))
    }

    fn edit(&self, args: &Value) -> Result<ToolResult, ToolResult> {
        let a: EditArgs = parse(args)?;
        if a.old_string.is_empty() {
            return Err(ToolResult::err(ToolErrorCode::InvalidArguments, "old_string must be non-empty"));
        }
        let path = self.check(&a.file_path, Access::Write)?;
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let count = text.matches(a.old_string.as_str()).count();
        match count {
            0 => return Err(ToolResult::err(ToolErrorCode::NoMatch, "no match")),
            n if n > 1 && !a.replace_all => {
                return Err(ToolResult::err(
                    ToolErrorCode::AmbiguousMatch,
                    format!("old_string occurs {n} times; add context or set replace_all"),
                ))
            }
            _ => {}
        }
        let updated = if a.replace_all {
            text.replace(a.old_string.as_str(), &a.new_string)
        } else {
            text.replacen(a.old_string.as_str(), &a.new_string, 1)
        };
        std::fs::write(&path, updated).map_err(|e| io_err(&path, e))?;
        Ok(ToolResult::ok(format!("Replaced {count} occurrence(s) in {}", self.display(&path))))
    }

    async fn bash(&self, args: &Value) -> Result<ToolResult, ToolResult> {
        let a: BashArgs = parse(args)?;
        if !self.scope.executable_allowed {
            return Err(ToolResult::err(ToolErrorCode::PermissionDenied, "command execution is not allowed in this session"));
        }
        std::fs::create_dir_all(&self.tmp_dir).map_err(|e| io_err(&self.tmp_dir, e))?;
        let timeout = a.timeout_s.map_or(self.bash_timeout, Duration::from_secs).min(self.bash_timeout);
        let mut cmd = Command::new("sh");
        cmd.arg("-c")
            .arg(&a.command)
            .current_dir(&self.cwd)
            .env_clear()
            .envs(self.env.vars(&self.cwd, Some(&self.tmp_dir)));
        let mut writable = self.scope.writable().to_vec();
        writable.push(self.tmp_dir.clone());
        let mut confinement = Confinement::writes_only(writable);
        if self.confine_reads {
            let mut readable = self.scope.readable().to_vec();
            readable.push(self.tmp_dir.clone());
            confinement = confinement.with_reads(readable);
        }
        confinement
            .apply(&mut cmd)
            .map_err(|e| ToolResult::err(ToolErrorCode::Io, e))?;
        let out = run_bounded(cmd, None, timeout, self.output_cap)
            .await
            .map_err(|e| ToolResult::err(ToolErrorCode::Io, e))?;
        let mut text = String::new();
        match out.code {
            Some(c) => {
                let _ = writeln!(text, "exit code: {c}");
            }
            None => text.push_str("exit code: none (killed)\n"),
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let stderr = String::from_utf8_lossy(&out.stderr);
        if !stdout.is_empty() {
            let _ = write!(text, "--- stdout ---\n{stdout}");
            if !stdout.ends_with('\n') {
                text.push('\n');
            }
        }
        if !stderr.is_empty() {
            let _ = write!(text, "--- stderr ---\n{stderr}");
        }
        if out.timed_out {
            return Err(ToolResult::err(ToolErrorCode::Timeout, format!("command killed after {timeout:?}\n{text}")));
        }
        if out.stdout_truncated || out.stderr_truncated {
            return Err(ToolResult::err(
                ToolErrorCode::OutputTooLarge,
                format!("output exceeded {} bytes and was truncated\n{text}", self.output_cap),
            ));
        }
        Ok(ToolResult::ok(text))
    }

    fn search_root(&self, path: Option<&str>) -> Result<PathBuf, ToolResult> {
        match path {
            Some(p) => self.check(p, Access::Read),
            None => Ok(self.cwd.clone()),
        }
    }

    /// Files under `root` the scope lets us read, in sorted order.
    fn readable_files(&self, root: &Path) -> impl Iterator<Item = PathBuf> + '_ {
        WalkDir::new(root)
            .follow_links(false)
            .sort_by_file_name()
            .into_iter()
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file())
            .map(|e| e.into_path())
            .filter(|p| self.scope.allows(p, Access::Read))
    }

    fn glob(&self, args: &Value) -> Result<ToolResult, ToolResult> {
        let a: GlobArgs = parse(args)?;
        let root = self.search_root(a.path.as_deref())?;
        let matcher = GlobBuilder::new(&a.pattern)
            .literal_separator(true)
            .build()
            .map_err(|e| ToolResult::err(ToolErrorCode::InvalidArguments, e))?
            .compile_matcher();
        let mut hits = Vec::new();
        for path in self.readable_files(&root) {
            let rel = path.strip_prefix(&root).unwrap_or(&path);
            if matcher.is_match(rel) {
                hits.push(self.display(&path));
                if hits.len() >= MAX_GLOB_RESULTS {
                    hits.push(format!("[truncated at {MAX_GLOB_RESULTS} results]"));
                    break;
                }
            }
        }
        if hits.is_empty() {
            return Ok(ToolResult::ok("No files found"));
        }
        Ok(ToolResult::ok(hits.join("\n")))
    }

    fn grep(&self, args: &Value) -> Result<ToolResult, ToolResult> {
        let a: GrepArgs = parse(args)?;
        let root = self.search_root(a.path.as_deref())?;
        let re = RegexBuilder::new(&a.pattern)
            .case_insensitive(a.case_insensitive)
            .build()
            .map_err(|e| ToolResult::err(ToolErrorCode::InvalidArguments, e))?;
        let filter = match &a.glob {
            Some(g) => Some(
                GlobBuilder::new(g)
                    .build()
                    .map_err(|e| ToolResult::err(ToolErrorCode::InvalidArguments, e))?
                    .compile_matcher(),
            ),
            None => None,
        };
        let mut out = Vec::new();
        'files: for path in self.readable_files(&root) {
            if let Some(f) = &filter {
                let name = path.file_name().map(Path::new).unwrap_or(&path);
                let rel = path.strip_prefix(&root).unwrap_or(&path);
                if !f.is_match(name) && !f.is_match(rel) {
                    continue;
                }
            }
            if std::fs::metadata(&path).map_or(true, |m| m.len() > MAX_GREP_FILE_BYTES) {
                continue;
            }
            let Ok(text) = std::fs::read_to_string(&path) else { continue };
            for (i, line) in text.lines().enumerate() {
                if re.is_match(line) {
                    out.push(format!("{}:{}:{line}", self.display(&path), i + 1));
                    if out.len() >= MAX_GREP_MATCHES {
                        out.push(format!("[truncated at {MAX_GREP_MATCHES} matches]"));
                        break 'files;
                    }
                }
            }
        }
        if out.is_empty() {
            return Ok(ToolResult::ok("No matches found"));
        }
        Ok(ToolResult::ok(out.join("\n")))
    }

    fn todo(&self, args: &Value) -> Result<ToolResult, ToolResult> {
        let a: TodoArgs = parse(args)?;
        if let Some(parent) = self.todo_path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let body = serde_json::to_vec_pretty(&a.todos).map_err(|e| ToolResult::err(ToolErrorCode::Io, e))?;
        std::fs::write(&self.todo_path, body).map_err(|e| io_err(&self.todo_path, e))?;
        let done = a.todos.iter().filter(|t| t.status == "completed").count();
        Ok(ToolResult::ok(format!("Todo list updated: {} items, {done} completed", a.todos.len())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(dir: &Path) -> ToolContext {
        let work = dir.join("iter1");
        std::fs::create_dir_all(&work).unwrap();
        ToolContext {
            scope: PermissionScope::new(vec![work.clone()], vec![work.clone()], true).unwrap(),
            cwd: work,
            bash_timeout: Duration::from_secs(10),
            read_cap: 200 * 1024,
            output_cap: 64 * 1024,
            todo_path: dir.join("todo.json"),
            tmp_dir: dir.join("tmp"),
            env: SandboxEnv::default(),
            confine_reads: false,
        }
    }

    #[test]
    fn exactly_seven_tools() {
        let names: Vec<String> = tool_definitions().into_iter().map(|d| d.name).collect();
        assert_eq!(names, TOOL_NAMES);
    }

    #[tokio::test]
    async fn write_read_edit_cycle() {
        let dir = tempfile::tempdir().unwrap();
        let c = ctx(dir.path());
        let r = c.exec("Write", &json!({"file_path": "notes/a.md", "content": "one\ntwo two\n"})).await;
        assert!(r.ok, "{}", r.content);
        let r = c.exec("Read", &json!({"file_path": "notes/a.md"})).await;
        assert!(r.content.contains("     2\ttwo two"));
        let r = c.exec("Edit", &json!({"file_path": "notes/a.md", "old_string": "three", "new_string": "x"})).await;
        assert_eq!(r.code, Some(ToolErrorCode::NoMatch));
        assert!(r.content.contains("no match"));
        let r = c.exec("Edit", &json!({"file_path": "notes/a.md", "old_string": "two", "new_string": "x"})).await;
        assert_eq!(r.code, Some(ToolErrorCode::AmbiguousMatch));
        let r = c.exec("Edit", &json!({"file_path": "notes/a.md", "old_string": "two", "new_string": "x", "replace_all": true})).await;
        assert!(r.ok);
        assert_eq!(std::fs::read_to_string(c.cwd.join("notes/a.md")).unwrap(), "one\nx x\n");
    }

    #[tokio::test]
    async fn out_of_scope_write_is_denied() {
        let dir = tempfile::tempdir().unwrap();
        let c = ctx(dir.path());
        let r = c.exec("Write", &json!({"file_path": "../escape.txt", "content": "x"})).await;
        assert_eq!(r.code, Some(ToolErrorCode::PermissionDenied));
        assert!(!dir.path().join("escape.txt").exists());
    }

    #[tokio::test]
    async fn read_truncates_with_banner() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ctx(dir.path());
        c.read_cap = 100;
        std::fs::write(c.cwd.join("big.txt"), "line\n".repeat(100)).unwrap();
        let r = c.exec("Read", &json!({"file_path": "big.txt"})).await;
        assert!(r.ok);
        assert!(r.content.contains("[truncated"));
    }

    #[tokio::test]
    async fn grep_and_glob_find_skill_overview() {
        let dir = tempfile::tempdir().unwrap();
        let c = ctx(dir.path());
        std::fs::create_dir_all(c.cwd.join("skill")).unwrap();
        std::fs::write(c.cwd.join("skill/SKILL.md"), "# S\n\n## Skill Overview\nx\n").unwrap();
        let r = c.exec("Grep", &json!({"pattern": "Skill Overview"})).await;
        assert_eq!(r.content, "skill/SKILL.md:3:## Skill Overview");
        let r = c.exec("Glob", &json!({"pattern": "**/*.md"})).await;
        assert_eq!(r.content, "skill/SKILL.md");
    }

    #[tokio::test]
    async fn bash_captures_stdout_and_reports_timeout() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ctx(dir.path());
        let r = c.exec("Bash", &json!({"command": "echo hi; pwd"})).await;
        assert!(r.ok, "{}", r.content);
        assert!(r.content.contains("hi\n"));
        c.bash_timeout = Duration::from_millis(300);
        let r = c.exec("Bash", &json!({"command": "sleep 5"})).await;
        assert_eq!(r.code, Some(ToolErrorCode::Timeout));
    }

    #[tokio::test]
    async fn unknown_tool_and_bad_args() {
        let dir = tempfile::tempdir().unwrap();
        let c = ctx(dir.path());
        assert_eq!(c.exec("WebFetch", &json!({})).await.code, Some(ToolErrorCode::UnknownTool));
        assert_eq!(c.exec("Read", &json!({"path": 1})).await.code, Some(ToolErrorCode::InvalidArguments));
        assert_eq!(c.exec("Read", &json!({"file_path": "nope"})).await.code, Some(ToolErrorCode::NotFound));
    }
}
