//! Subprocess confinement and bounded execution.
//!
//! Child processes get a cleared environment, their own process group and,
//! where the kernel supports Landlock, a filesystem ruleset that only allows
//! writes beneath the scope's writable roots (plus `/dev/null`). Reads can
//! optionally be restricted to the readable roots plus system directories.

use std::ffi::OsString;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::Mutex;
use std::time::Duration;

use landlock::{
    AccessFs, BitFlags, PathBeneath, PathFd, Ruleset, RulesetAttr, RulesetCreated, RulesetCreatedAttr, ABI,
};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWriteExt};
use tokio::process::Command;

use crate::gateway::{ENV_API_BASE, ENV_API_KEY, ENV_EMBEDDING_MODEL, ENV_SANDBOX_MODEL};

const SYSTEM_READ_ROOTS: &[&str] = &[
    "/usr", "/bin", "/sbin", "/lib", "/lib32", "/lib64", "/etc", "/opt", "/proc", "/sys", "/dev", "/run", "/var/lib",
];

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("landlock: {0}")]
    Landlock(String),
    #[error("spawn failed: {0}")]
    Spawn(io::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// True when the running kernel accepts Landlock rulesets.
pub fn landlock_available() -> bool {
    // SAFETY: LANDLOCK_CREATE_RULESET_VERSION with a null attr only queries the ABI.
    let abi = unsafe { libc::syscall(libc::SYS_landlock_create_ruleset, std::ptr::null::<u8>(), 0usize, 1u32) };
    abi >= 1
}

/// Filesystem limits applied to a child process.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Confinement {
    pub writable: Vec<PathBuf>,
    /// `None` leaves reads unrestricted.
    pub readable: Option<Vec<PathBuf>>,
}

impl Confinement {
    pub fn writes_only(writable: Vec<PathBuf>) -> Self {
        Self { writable, readable: None }
    }

    pub fn with_reads(mut self, readable: Vec<PathBuf>) -> Self {
        self.readable = Some(readable);
        self
    }

    fn ruleset(&self) -> Result<RulesetCreated, SandboxError> {
        let ll = |e: landlock::RulesetError| SandboxError::Landlock(e.to_string());
        let write = AccessFs::from_write(ABI::V3);
        let read = AccessFs::from_read(ABI::V3);
        let handled: BitFlags<AccessFs> = if self.readable.is_some() { write | read } else { write };
        let mut ruleset = Ruleset::default().handle_access(handled).map_err(ll)?.create().map_err(ll)?;

        let add = |ruleset: RulesetCreated, path: &Path, access: BitFlags<AccessFs>| -> Result<RulesetCreated, SandboxError> {
            match PathFd::new(path) {
                Ok(fd) => {
                    let access = if path.is_dir() { access } else { access & AccessFs::from_file(ABI::V3) };
                    ruleset.add_rule(PathBeneath::new(fd, access)).map_err(ll)
                }
                Err(_) => Ok(ruleset),
            }
        };

        if let Some(readable) = &self.readable {
            let path_dirs: Vec<PathBuf> = std::env::var_os("PATH")
                .map(|p| std::env::split_paths(&p).collect())
                .unwrap_or_default();
            let roots = SYSTEM_READ_ROOTS.iter().map(PathBuf::from).chain(path_dirs).chain(readable.iter().cloned());
            for root in roots {
                ruleset = add(ruleset, &root, read)?;
            }
        }
        for root in &self.writable {
            ruleset = add(ruleset, root, handled)?;
        }
        ruleset = add(ruleset, Path::new("/dev/null"), handled)?;
        Ok(ruleset)
    }

    /// Arranges for the child to restrict itself right before `exec`.
    pub fn apply(&self, cmd: &mut Command) -> Result<(), SandboxError> {
        if !landlock_available() {
            tracing::warn!("landlock unavailable; subprocess writes are not confined");
            return Ok(());
        }
        let slot = Mutex::new(Some(self.ruleset()?));
        // SAFETY: the closure only takes a pre-built ruleset and issues the
        // prctl/landlock syscalls; it performs no allocation on success.
        unsafe {
            cmd.pre_exec(move || {
                let ruleset = slot.lock().ok().and_then(|mut s| s.take());
                if let Some(ruleset) = ruleset {
                    ruleset.restrict_self().map_err(|_| io::Error::from_raw_os_error(libc::EPERM))?;
                }
                Ok(())
            });
        }
        Ok(())
    }
}

/// Environment passed to sandboxed children: nothing from the parent except
/// `PATH`, plus the sandbox model variables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SandboxEnv {
    pub api_base: Option<String>,
    pub api_key: Option<String>,
    pub sandbox_model: Option<String>,
    pub embedding_model: Option<String>,
}

impl SandboxEnv {
    pub fn from_process() -> Self {
        Self {
            api_base: std::env::var(ENV_API_BASE).ok(),
            api_key: std::env::var(ENV_API_KEY).ok(),
            sandbox_model: std::env::var(ENV_SANDBOX_MODEL).ok(),
            embedding_model: std::env::var(ENV_EMBEDDING_MODEL).ok(),
        }
    }

    pub fn vars(&self, home: &Path, tmp: Option<&Path>) -> Vec<(OsString, OsString)> {
        let mut vars: Vec<(OsString, OsString)> = vec![
            ("PATH".into(), std::env::var_os("PATH").unwrap_or_else(|| "/usr/local/bin:/usr/bin:/bin".into())),
            ("HOME".into(), home.into()),
            ("LANG".into(), "C.UTF-8".into()),
            ("PYTHONDONTWRITEBYTECODE".into(), "1".into()),
            ("PYTHONIOENCODING".into(), "utf-8".into()),
        ];
        if let Some(tmp) = tmp {
            vars.push(("TMPDIR".into(), tmp.into()));
        }
        for (name, value) in [
            (ENV_API_BASE, &self.api_base),
            (ENV_API_KEY, &self.api_key),
            (ENV_SANDBOX_MODEL, &self.sandbox_model),
            (ENV_EMBEDDING_MODEL, &self.embedding_model),
        ] {
            if let Some(v) = value {
                vars.push((name.into(), v.into()));
            }
        }
        vars
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    /// `None` when killed by a signal (including the timeout kill).
    pub code: Option<i32>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub timed_out: bool,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
}

async fn read_capped<R: AsyncRead + Unpin>(mut r: R, cap: usize) -> (Vec<u8>, bool) {
    let mut kept = Vec::new();
    let mut buf = [0u8; 8192];
    let mut truncated = false;
    loop {
        match r.read(&mut buf).await {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                let room = cap.saturating_sub(kept.len());
                kept.extend_from_slice(&buf[..n.min(room)]);
                truncated |= n > room;
            }
        }
    }
    (kept, truncated)
}

fn kill_group(pid: Option<u32>) {
    if let Some(pid) = pid {
        // SAFETY: signalling our own child's process group.
        unsafe {
            libc::kill(-(pid as i32), libc::SIGKILL);
        }
    }
}

/// Runs `cmd` in a fresh process group, feeding `stdin` and keeping at most
/// `cap` bytes of each output stream. On timeout the whole group is killed.
pub async fn run_bounded(mut cmd: Command, stdin: Option<&[u8]>, timeout: Duration, cap: usize) -> Result<RunOutcome, SandboxError> {
    cmd.process_group(0)
        .stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .kill_on_drop(true);
    let mut child = cmd.spawn().map_err(SandboxError::Spawn)?;
    let pid = child.id();
    if let (Some(input), Some(mut pipe)) = (stdin, child.stdin.take()) {
        let input = input.to_vec();
        tokio::spawn(async move {
            let _ = pipe.write_all(&input).await;
            let _ = pipe.shutdown().await;
        });
    }
    let out = tokio::spawn(read_capped(child.stdout.take().expect("piped stdout"), cap));
    let err = tokio::spawn(read_capped(child.stderr.take().expect("piped stderr"), cap));

    let (status, timed_out) = match tokio::time::timeout(timeout, child.wait()).await {
        Ok(status) => (Some(status?), false),
        Err(_) => {
            kill_group(pid);
            let _ = child.wait().await;
            (None, true)
        }
    };
    // Background jobs left behind would otherwise hold the pipes open.
    kill_group(pid);
    let (stdout, stdout_truncated) = out.await.unwrap_or_default();
    let (stderr, stderr_truncated) = err.await.unwrap_or_default();
    let code = status.and_then(|s| s.code());
    Ok(RunOutcome { code, stdout, stderr, timed_out, stdout_truncated, stderr_truncated })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn timeout_kills_process_group() {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg("sleep 30 & sleep 30");
        let started = std::time::Instant::now();
        let out = run_bounded(cmd, None, Duration::from_millis(200), 1024).await.unwrap();
        assert!(out.timed_out);
        assert!(started.elapsed() < Duration::from_secs(5));
    }

    #[tokio::test]
    async fn output_is_capped() {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg("yes | head -c 100000");
        let out = run_bounded(cmd, None, Duration::from_secs(10), 1000).await.unwrap();
        assert_eq!(out.stdout.len(), 1000);
        assert!(out.stdout_truncated);
        assert_eq!(out.code, Some(0));
    }

    #[tokio::test]
    async fn stdin_is_delivered() {
        let mut cmd = Command::new("cat");
        cmd.env_clear();
        let out = run_bounded(cmd, Some(b"hello"), Duration::from_secs(10), 1000).await.unwrap();
        assert_eq!(out.stdout, b"hello");
    }

    #[tokio::test]
    async fn landlock_blocks_writes_outside_scope() {
        if !landlock_available() {
            return;
        }
        let dir = tempfile::tempdir().unwrap();
        let inside = dir.path().join("in");
        let outside = dir.path().join("out");
        std::fs::create_dir_all(&inside).unwrap();
        std::fs::create_dir_all(&outside).unwrap();
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(format!(
            "echo a > {i}/ok; echo b > {o}/bad; echo c > /dev/null",
            i = inside.display(),
            o = outside.display()
        ));
        Confinement::writes_only(vec![inside.clone()]).apply(&mut cmd).unwrap();
        run_bounded(cmd, None, Duration::from_secs(10), 1000).await.unwrap();
        assert!(inside.join("ok").exists());
        assert!(!outside.join("bad").exists());
    }

    #[tokio::test]
    async fn landlock_can_restrict_reads() {
        if !landlock_available() {
            return;
        }
        let dir = tempfile::tempdir().unwrap();
        let visible = dir.path().join("visible");
        let hidden = dir.path().join("hidden");
        std::fs::create_dir_all(&visible).unwrap();
        std::fs::create_dir_all(&hidden).unwrap();
        std::fs::write(hidden.join("secret"), "s").unwrap();
        std::fs::write(visible.join("public"), "p").unwrap();
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(format!("cat {}/public; cat {}/secret", visible.display(), hidden.display()));
        Confinement::writes_only(vec![]).with_reads(vec![visible]).apply(&mut cmd).unwrap();
        let out = run_bounded(cmd, None, Duration::from_secs(10), 1000).await.unwrap();
        assert_eq!(out.stdout, b"p");
    }
}
