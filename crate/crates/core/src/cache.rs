//! On-disk stage cache keyed by (stage, config digest, sample id).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{PadError, Result};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to a sibling temp file then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| PadError::io(dir, e))?;
        }
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes).map_err(|e| PadError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PadError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Frames,
    Align,
    Maps,
    Features,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Frames => "frames",
            Stage::Align => "align",
            Stage::Maps => "maps",
            Stage::Features => "features",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageCache {
    root: PathBuf,
}

impl StageCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        StageCache { root: root.into() }
    }

    /// `cache_dir` from config unless `PAD_CACHE_DIR` is set.
    pub fn from_env_or(dir: &Path) -> Self {
        match std::env::var_os("PAD_CACHE_DIR") {
            Some(d) if !d.is_empty() => StageCache::new(PathBuf::from(d)),
            _ => StageCache::new(dir),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn sample_dir(&self, stage: Stage, digest: &str, sample_id: &str) -> PathBuf {
        self.root
            .join(stage.name())
            .join(digest)
            .join(sanitize(sample_id))
    }

    fn marker(&self, stage: Stage, digest: &str, sample_id: &str) -> PathBuf {
        self.sample_dir(stage, digest, sample_id).join(".complete")
    }

    pub fn is_complete(&self, stage: Stage, digest: &str, sample_id: &str) -> bool {
        self.marker(stage, digest, sample_id).is_file()
    }

    /// Marks a sample's stage output complete. Written last, so a crash
    /// mid-stage leaves the stage to be recomputed.
    pub fn mark_complete(&self, stage: Stage, digest: &str, sample_id: &str, n_items: usize) -> Result<()> {
        write_atomic(
            &self.marker(stage, digest, sample_id),
            format!("{digest}\n{n_items}\n").as_bytes(),
        )
    }

    pub fn completed_items(&self, stage: Stage, digest: &str, sample_id: &str) -> Option<usize> {
        let text = fs::read_to_string(self.marker(stage, digest, sample_id)).ok()?;
        text.lines().nth(1)?.trim().parse().ok()
    }
}

/// Maps a sample id onto a single safe path component.
pub fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/c.bin");
        write_atomic(&p, b"hello").unwrap();
        write_atomic(&p, b"world").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"world");
        let entries: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn completion_marker() {
        let dir = tempfile::tempdir().unwrap();
        let c = StageCache::new(dir.path());
        assert!(!c.is_complete(Stage::Maps, "abc", "s/1"));
        c.mark_complete(Stage::Maps, "abc", "s/1", 7).unwrap();
        assert!(c.is_complete(Stage::Maps, "abc", "s/1"));
        assert!(!c.is_complete(Stage::Maps, "abd", "s/1"));
        assert_eq!(c.completed_items(Stage::Maps, "abc", "s/1"), Some(7));
        assert!(c.sample_dir(Stage::Maps, "abc", "s/1").ends_with("maps/abc/s_1"));
    }
}
