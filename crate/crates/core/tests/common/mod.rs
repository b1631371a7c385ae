#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use walkdir::WalkDir;

/// Relative path -> sha256 of bytes (files) or of the link target (symlinks).
/// Directories map to "dir". Paths under any of `skip` are ignored.
pub fn tree_hashes(root: &Path, skip: &[PathBuf]) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    for entry in WalkDir::new(root).follow_links(false).into_iter().filter_map(Result::ok) {
        let path = entry.path();
        if skip.iter().any(|s| path.starts_with(s)) {
            continue;
        }
        let rel = path.strip_prefix(root).unwrap().to_path_buf();
        let ft = entry.file_type();
        let value = if ft.is_symlink() {
            format!("link:{}", std::fs::read_link(path).unwrap().display())
        } else if ft.is_file() {
            hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
        } else {
            "dir".to_string()
        };
        out.insert(rel, value);
    }
    out
}

pub fn write_exec(path: &Path, body: &str) {
    use std::os::unix::fs::PermissionsExt;
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).unwrap();
    }
    std::fs::write(path, body).unwrap();
    std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o755)).unwrap();
}

/// Outcome of one acceptance check.
pub type Check = Result<String, String>;

pub fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}
