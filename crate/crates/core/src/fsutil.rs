use std::fs;
use std::io;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;

use sha2::{Digest, Sha256};
use walkdir::WalkDir;

/// Recursive copy. Regular files keep their permission bits; symlinks are
/// recreated with the same target rather than followed.
pub(crate) fn copy_tree(src: &Path, dst: &Path) -> io::Result<()> {
    fs::create_dir_all(dst)?;
    for entry in WalkDir::new(src).min_depth(1).follow_links(false) {
        let entry = entry.map_err(io::Error::other)?;
        let rel = entry.path().strip_prefix(src).map_err(io::Error::other)?;
        let target = dst.join(rel);
        let ft = entry.file_type();
        if ft.is_dir() {
            fs::create_dir_all(&target)?;
        } else if ft.is_symlink() {
            let link = fs::read_link(entry.path())?;
            std::os::unix::fs::symlink(link, &target)?;
        } else {
            copy_file(entry.path(), &target)?;
        }
    }
    Ok(())
}

pub(crate) fn copy_file(src: &Path, dst: &Path) -> io::Result<()> {
    if let Some(parent) = dst.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::copy(src, dst)?;
    let mode = fs::metadata(src)?.permissions().mode();
    fs::set_permissions(dst, fs::Permissions::from_mode(mode))?;
    Ok(())
}

pub(crate) fn set_executable(path: &Path) -> io::Result<()> {
    let mut perms = fs::metadata(path)?.permissions();
    perms.set_mode(perms.mode() | 0o755);
    fs::set_permissions(path, perms)
}

pub(crate) fn is_executable(path: &Path) -> bool {
    fs::metadata(path).is_ok_and(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
}

/// Content digest of a set of roots: sorted relative paths, file bytes and
/// symlink targets. Missing roots contribute a marker so that "absent" and
/// "empty" differ.
pub(crate) fn tree_digest(base: &Path, roots: &[&Path]) -> io::Result<String> {
    let mut hasher = Sha256::new();
    for root in roots {
        let rel_root = root.strip_prefix(base).unwrap_or(root);
        hasher.update(rel_root.to_string_lossy().as_bytes());
        if fs::symlink_metadata(root).is_err() {
            hasher.update(b"\0absent\0");
            continue;
        }
        let mut entries: Vec<_> = WalkDir::new(root)
            .follow_links(false)
            .into_iter()
            .collect::<Result<_, _>>()
            .map_err(io::Error::other)?;
        entries.sort_by(|a, b| a.path().cmp(b.path()));
        for entry in entries {
            let rel = entry.path().strip_prefix(base).unwrap_or(entry.path());
            hasher.update(b"\0path\0");
            hasher.update(rel.to_string_lossy().as_bytes());
            let ft = entry.file_type();
            if ft.is_symlink() {
                hasher.update(b"\0link\0");
                hasher.update(fs::read_link(entry.path())?.to_string_lossy().as_bytes());
            } else if ft.is_file() {
                hasher.update(b"\0file\0");
                hasher.update(fs::read(entry.path())?);
            }
        }
    }
    Ok(hex::encode(hasher.finalize()))
}
