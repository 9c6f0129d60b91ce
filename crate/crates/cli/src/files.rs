use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

pub const FEATURE_EXT: &str = "dcft";
const RENDER_SUFFIX: &str = ".render";

/// Input files under `path`: the file itself, or every `*.ext` in the
/// directory (not recursive), sorted by name.
pub fn list_inputs(path: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        bail!("{} does not exist", path.display());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(path).with_context(|| format!("reading {}", path.display()))? {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == ext) {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        bail!("no .{ext} files in {}", path.display());
    }
    Ok(out)
}

/// Label PNGs in a prediction or ground-truth location, skipping renders.
pub fn list_label_pngs(path: &Path) -> Result<Vec<PathBuf>> {
    Ok(list_inputs(path, "png")?
        .into_iter()
        .filter(|p| !stem(p).ends_with(RENDER_SUFFIX))
        .collect())
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// The file paired with `stem` under `location`. A plain file is taken as
/// the partner of whatever single input it accompanies.
pub fn partner(location: &Path, stem: &str, ext: &str) -> Option<PathBuf> {
    if location.is_file() {
        return Some(location.to_path_buf());
    }
    let p = location.join(format!("{stem}.{ext}"));
    p.is_file().then_some(p)
}

pub fn require_partner(location: &Path, stem: &str, ext: &str) -> Result<PathBuf> {
    partner(location, stem, ext)
        .ok_or_else(|| anyhow!("missing pair: no {stem}.{ext} in {}", location.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn output_path(dir: &Path, stem: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{stem}{suffix}"))
}
