#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::Value;

pub fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
}

/// The bundled mock pipeline config with absolute asset paths, writing to
/// `dir/out`, after `tweak` has adjusted it.
pub fn mock_config(dir: &Path, tweak: impl FnOnce(&mut Value)) -> PathBuf {
    let text = std::fs::read_to_string(assets().join("configs/mock_pipeline.json")).unwrap();
    let text = text.replace("\"../", &format!("\"{}/", assets().display()));
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["output_dir"] = Value::String(dir.join("out").display().to_string());
    tweak(&mut v);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

/// Keeps only the named splits, each with `count` items, and drops the plan.
pub fn only_splits(v: &mut Value, splits: &[&str], count: u64) {
    let all = v["splits"].as_object().unwrap().clone();
    let mut kept = serde_json::Map::new();
    for s in splits {
        let mut sc = all[*s].clone();
        sc["count"] = count.into();
        kept.insert(s.to_string(), sc);
    }
    v["splits"] = Value::Object(kept);
    v.as_object_mut().unwrap().remove("plan");
}

pub fn set_all_counts(v: &mut Value, count: u64) {
    for sc in v["splits"].as_object_mut().unwrap().values_mut() {
        sc["count"] = count.into();
    }
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Request ids in a raw jsonl file, in file order.
pub fn raw_ids(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["request_id"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect()
}
