use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageState {
    Pending,
    Running,
    /// Stopped before finishing; re-running resumes.
    Partial,
    Done,
    Failed,
}

pub const STAGES: [&str; 6] = ["generate", "parse", "dedup", "analyze", "rebalance", "stats"];

/// Sorted, disjoint half-open index ranges.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RangeSet(Vec<(u64, u64)>);

impl RangeSet {
    pub fn from_sorted(indices: impl IntoIterator<Item = u64>) -> Self {
        let mut v: Vec<(u64, u64)> = Vec::new();
        for i in indices {
            match v.last_mut() {
                Some((_, end)) if *end == i => *end += 1,
                Some((_, end)) if *end > i => {}
                _ => v.push((i, i + 1)),
            }
        }
        Self(v)
    }

    pub fn contains(&self, i: u64) -> bool {
        let k = self.0.partition_point(|&(_, end)| end <= i);
        self.0.get(k).is_some_and(|&(start, _)| start <= i)
    }

    pub fn len(&self) -> u64 {
        self.0.iter().map(|(a, b)| b - a).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.0.iter().flat_map(|&(a, b)| a..b)
    }

    pub fn is_subset(&self, other: &RangeSet) -> bool {
        self.0
            .iter()
            .all(|&(a, b)| other.0.iter().any(|&(c, d)| c <= a && b <= d))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitProgress {
    pub count: u64,
    /// Raw-completion file, relative to the output directory.
    pub raw: String,
    /// Item indices whose request ids have a persisted record.
    pub completed: RangeSet,
}

/// Per-job record of what has been done, rewritten atomically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobManifest {
    pub job_id: String,
    pub config_digest: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageState>,
    pub splits: BTreeMap<String, SplitProgress>,
    /// Stage outputs, relative to the output directory.
    #[serde(default)]
    pub outputs: BTreeMap<String, Vec<String>>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl JobManifest {
    pub fn new(job_id: &str, config_digest: &str, seed: u64) -> Self {
        Self {
            job_id: job_id.to_string(),
            config_digest: config_digest.to_string(),
            seed,
            stages: STAGES.iter().map(|s| (s.to_string(), StageState::Pending)).collect(),
            splits: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn load(dir: &Path) -> std::io::Result<Option<Self>> {
        let path = Self::path(dir);
        match std::fs::read_to_string(&path) {
            Ok(t) => serde_json::from_str(&t)
                .map(Some)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        let bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomic(&Self::path(dir), &bytes)
    }

    pub fn set_stage(&mut self, stage: &str, state: StageState) {
        self.stages.insert(stage.to_string(), state);
    }

    pub fn stage(&self, stage: &str) -> StageState {
        self.stages.get(stage).copied().unwrap_or(StageState::Pending)
    }
}

/// Writes to a sibling temporary file, syncs it, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
