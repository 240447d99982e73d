use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

pub const SPEC_VERSION: &str = "1.0";

/// Serializes `v` with a top-level `spec_version` key. Non-object values
/// are wrapped under `data`.
pub fn versioned(v: &impl Serialize) -> Result<Value> {
    let mut obj = match serde_json::to_value(v)? {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("data".into(), other);
            m
        }
    };
    obj.insert("spec_version".into(), Value::String(SPEC_VERSION.into()));
    Ok(Value::Object(obj))
}

pub fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(&versioned(v)?)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// `snapshot_t<t>.json`, with the time printed without trailing zeros.
pub fn snapshot_name(t: f64) -> String {
    format!("snapshot_t{t}.json")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_injected() {
        let v = versioned(&serde_json::json!({"a": 1})).unwrap();
        assert_eq!(v["spec_version"], SPEC_VERSION);
        assert_eq!(v["a"], 1);
        let w = versioned(&[1.0, 2.0]).unwrap();
        assert_eq!(w["data"][1], 2.0);
        assert_eq!(w["spec_version"], SPEC_VERSION);
    }

    #[test]
    fn names() {
        assert_eq!(snapshot_name(50.0), "snapshot_t50.json");
        assert_eq!(snapshot_name(0.25), "snapshot_t0.25.json");
    }
}
