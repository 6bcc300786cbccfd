//! Output directories and the `FAILED` marker.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::error::Invalid;

pub const FAILED_MARKER: &str = "FAILED";

/// `<root>/<timestamp>-<seed>-<mode>`.
pub fn run_dir_name(root: &Path, seed: u64, mode: &str) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    root.join(format!("{stamp}-{seed}-{mode}"))
}

/// Creates `dir`. An existing directory is refused unless `force`, in which
/// case it is reused and any stale `FAILED` marker is removed.
pub fn prepare_dir(dir: &Path, force: bool) -> anyhow::Result<()> {
    if dir.exists() {
        if !force {
            return Err(Invalid(format!(
                "output directory {} already exists (use --force to reuse it)",
                dir.display()
            ))
            .into());
        }
        let marker = dir.join(FAILED_MARKER);
        if marker.exists() {
            fs::remove_file(&marker).with_context(|| format!("removing {}", marker.display()))?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Runs `body`; on error leaves a `FAILED` marker holding the message.
pub fn guarded<T>(dir: &Path, body: impl FnOnce() -> anyhow::Result<T>) -> anyhow::Result<T> {
    body().inspect_err(|err| {
        // Best effort: the original error is what gets reported.
        let _ = fs::write(dir.join(FAILED_MARKER), format!("{err:#}\n"));
    })
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
