//! Versioned artifact paths. A written artifact is never mutated: if the
//! base name exists, the next write gets a bumped `.vN` name, and readers
//! pick the highest version present.

use std::path::{Path, PathBuf};

fn versioned(dir: &Path, base: &str, ext: &str, version: usize) -> PathBuf {
    if version <= 1 {
        dir.join(format!("{base}.{ext}"))
    } else {
        dir.join(format!("{base}.v{version}.{ext}"))
    }
}

/// First path in the version sequence that does not exist yet.
pub fn next_write_path(dir: &Path, base: &str, ext: &str) -> PathBuf {
    let mut version = 1;
    loop {
        let path = versioned(dir, base, ext, version);
        if !path.exists() {
            return path;
        }
        version += 1;
    }
}

/// Highest existing version, if any.
pub fn latest_path(dir: &Path, base: &str, ext: &str) -> Option<PathBuf> {
    let mut latest = None;
    let mut version = 1;
    loop {
        let path = versioned(dir, base, ext, version);
        if !path.exists() {
            return latest;
        }
        latest = Some(path);
        version += 1;
    }
}
