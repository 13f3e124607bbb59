use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use cresp_core::bmdp::BMDPInstance;
use serde::Serialize;

pub fn read_instance(path: &Path) -> Result<BMDPInstance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading instance {}", path.display()))?;
    BMDPInstance::from_json(&text).with_context(|| format!("parsing instance {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
