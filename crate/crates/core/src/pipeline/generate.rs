use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::manifest::{write_atomic, RangeSet, SplitProgress, StageState};
use super::{io_err, open_job, save_manifest, ConfigError, Pipeline, PipelineError};
use crate::assemble::AssembleError;
use crate::provider::{Client, Clock, GenerationRequest, ProviderConfig, ProviderKind, RawRecord, SystemClock};
use crate::seed::{child_seed, labeled_seed};
use crate::template::instantiate;

const CHECKPOINT_EVERY: u64 = 500;

pub fn request_id(split: &str, k: u64) -> String {
    format!("{split}-{k:06}")
}

pub fn parse_request_id(split: &str, id: &str) -> Option<u64> {
    id.strip_prefix(split)?.strip_prefix('-')?.parse().ok()
}

#[derive(Clone, Default)]
pub struct GenerateOptions {
    /// Stop after persisting this many new records, as if killed.
    pub stop_after: Option<u64>,
    /// Clock for rate limiting and backoff; wall time when absent.
    pub clock: Option<Arc<dyn Clock>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateOutcome {
    pub split: String,
    pub count: u64,
    /// Records found on disk before this invocation.
    pub resumed: u64,
    /// Records written by this invocation.
    pub written: u64,
    /// Of `written`, records carrying a provider error.
    pub errors: u64,
    pub complete: bool,
}

/// Provider settings with the mock's seed tied to the job seed.
pub(crate) fn effective_provider(p: &Pipeline, seed: u64) -> ProviderConfig {
    let mut cfg = p.provider.clone();
    if cfg.kind == ProviderKind::Mock {
        let mut mock = cfg.mock.unwrap_or_default();
        mock.seed = labeled_seed(seed, "mock");
        cfg.mock = Some(mock);
    }
    cfg
}

fn build_request(
    p: &Pipeline,
    provider: &ProviderConfig,
    split: &str,
    split_seed: u64,
    k: u64,
) -> Result<GenerationRequest, ConfigError> {
    let templates = &p.templates[split];
    let tpl = &templates[(k % templates.len() as u64) as usize];
    let invalid = |m: String| ConfigError::Split {
        split: split.to_string(),
        message: m,
    };
    let prompt = instantiate(tpl, child_seed(split_seed, k), Some(&p.topics), &p.boosters)
        .map_err(|e| invalid(e.to_string()))?;
    provider
        .request(request_id(split, k), prompt)
        .map_err(|e| invalid(e.to_string()))
}

/// Reads the indices of records already on disk, dropping a torn last line.
fn recover(path: &Path, split: &str) -> Result<Vec<u64>, PipelineError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut indices = Vec::new();
    let mut good_len = 0u64;
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if !line.ends_with('\n') {
            log::warn!("{}: dropping incomplete final line", path.display());
            break;
        }
        let schema = |message: String| AssembleError::SchemaViolation {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        let k = parse_request_id(split, &rec.request_id)
            .ok_or_else(|| schema(format!("request id `{}` is not from split `{split}`", rec.request_id)))?;
        indices.push(k);
        good_len += n as u64;
    }
    let on_disk = std::fs::metadata(path).map_err(io_err(path))?.len();
    if on_disk != good_len {
        OpenOptions::new()
            .write(true)
            .open(path)
            .and_then(|f| f.set_len(good_len))
            .map_err(io_err(path))?;
    }
    Ok(indices)
}

/// Rewrites the raw file with records in request order.
fn sort_raw(path: &Path, split: &str) -> Result<(), PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines: Vec<(u64, &str)> = text
        .lines()
        .map(|l| {
            let rec: RawRecord = serde_json::from_str(l).expect("validated by recover");
            (
                parse_request_id(split, &rec.request_id).expect("validated by recover"),
                l,
            )
        })
        .collect();
    lines.sort_by_key(|&(k, _)| k);
    let mut out = String::with_capacity(text.len());
    for (_, l) in lines {
        out.push_str(l);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes()).map_err(io_err(path))
}

/// Generates `count` records for `split` into `out/raw/<split>.jsonl`.
///
/// Request ids are `<split>-<k>` for `k` in `0..count`, and item `k` is a
/// pure function of `(seed, split, k)`. Records already on disk are kept
/// and only missing ids are issued; records are appended in id order so an
/// interrupted file is always a valid prefix.
pub fn cmd_generate(
    p: &Pipeline,
    out: &Path,
    split: &str,
    count: u64,
    seed: u64,
    opts: &GenerateOptions,
) -> Result<GenerateOutcome, PipelineError> {
    if count == 0 {
        return Err(ConfigError::ZeroCount(split.to_string()).into());
    }
    if !p.templates.contains_key(split) {
        return Err(ConfigError::Split {
            split: split.to_string(),
            message: "not configured".into(),
        }
        .into());
    }
    p.check_credentials()?;
    let provider = effective_provider(p, seed);
    let split_seed = labeled_seed(seed, &format!("generate/{split}"));

    let mut manifest = open_job(p, out, seed)?;
    let raw_rel = format!("raw/{split}.jsonl");
    let raw_path = out.join(&raw_rel);
    if let Some(dir) = raw_path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }

    let existing = recover(&raw_path, split)?;
    let in_order = existing.windows(2).all(|w| w[0] < w[1]);
    let mut sorted = existing.clone();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(AssembleError::SchemaViolation {
            path: raw_path,
            line: 0,
            message: format!("request id {} appears twice", request_id(split, w[0])),
        }
        .into());
    }
    if let Some(&k) = sorted.last().filter(|&&k| k >= count) {
        return Err(ConfigError::Split {
            split: split.to_string(),
            message: format!("{} already holds item {k}, beyond count {count}", raw_path.display()),
        }
        .into());
    }
    let done = RangeSet::from_sorted(sorted.iter().copied());
    if let Some(prev) = manifest.splits.get(split) {
        if !prev.completed.is_subset(&done) {
            log::warn!("{split}: manifest lists records missing from {raw_rel}; issuing them again");
        }
    }

    let pending: Vec<u64> = (0..count).filter(|&k| !done.contains(k)).collect();
    let resumed = done.len();
    // Surface template or request errors before anything is sent.
    if let Some(&k) = pending.first() {
        build_request(p, &provider, split, split_seed, k)?;
    }
    log::info!(
        "{split}: {resumed} of {count} records on disk, issuing {}",
        pending.len()
    );

    manifest.set_stage("generate", StageState::Running);
    manifest.splits.insert(
        split.to_string(),
        SplitProgress {
            count,
            raw: raw_rel.clone(),
            completed: done.clone(),
        },
    );
    save_manifest(&manifest, out)?;

    let clock = opts.clock.clone().unwrap_or_else(|| Arc::new(SystemClock::new()));
    let client = Client::with_clock(provider.build_provider(), &provider, clock);
    let limit = opts.stop_after.unwrap_or(u64::MAX);
    let stop = AtomicBool::new(limit == 0);

    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&raw_path)
        .map_err(io_err(&raw_path))?;
    let mut writer = BufWriter::new(file);
    let mut buffer: BTreeMap<u64, RawRecord> = BTreeMap::new();
    let mut next = 0usize;
    let mut written = 0u64;
    let mut errors = 0u64;
    let mut failure: Option<PipelineError> = None;

    let checkpoint = |manifest: &mut crate::pipeline::JobManifest,
                      writer: &mut BufWriter<File>,
                      next: usize|
     -> Result<(), PipelineError> {
        writer.flush().map_err(io_err(&raw_path))?;
        let completed = RangeSet::from_sorted(merge_sorted(&sorted, &pending[..next]));
        manifest.splits.get_mut(split).expect("inserted above").completed = completed;
        save_manifest(manifest, out)
    };

    let requests = pending
        .iter()
        .take_while(|_| !stop.load(Ordering::SeqCst))
        .map(|&k| build_request(p, &provider, split, split_seed, k).expect("checked before sending"));

    client.generate_batch(requests, |item| {
        if failure.is_some() || written >= limit {
            return;
        }
        let k = parse_request_id(split, &item.request_id).expect("ids are generated here");
        let req = build_request(p, &provider, split, split_seed, k).expect("checked before sending");
        buffer.insert(k, RawRecord::new(&req, client.provider_name(), &item.result));
        while next < pending.len() && written < limit {
            let Some(rec) = buffer.remove(&pending[next]) else {
                break;
            };
            let line = serde_json::to_string(&rec).expect("record serializes");
            if let Err(e) = writeln!(writer, "{line}") {
                failure = Some(io_err(&raw_path)(e));
                stop.store(true, Ordering::SeqCst);
                return;
            }
            errors += rec.is_error() as u64;
            written += 1;
            next += 1;
            if written.is_multiple_of(CHECKPOINT_EVERY) {
                if let Err(e) = checkpoint(&mut manifest, &mut writer, next) {
                    failure = Some(e);
                    stop.store(true, Ordering::SeqCst);
                    return;
                }
            }
        }
        if written >= limit {
            stop.store(true, Ordering::SeqCst);
        }
    });
    if let Some(e) = failure {
        manifest.set_stage("generate", StageState::Failed);
        let _ = save_manifest(&manifest, out);
        return Err(e);
    }
    checkpoint(&mut manifest, &mut writer, next)?;
    drop(writer);

    let complete = next == pending.len();
    let appended_in_order = match (sorted.last(), pending.first()) {
        (Some(&last), Some(&first)) => last < first,
        _ => true,
    };
    if complete && !(in_order && appended_in_order) {
        sort_raw(&raw_path, split)?;
    }
    let all_done = p
        .config
        .splits
        .keys()
        .all(|s| manifest.splits.get(s).is_some_and(|sp| sp.completed.len() == sp.count));
    manifest.set_stage(
        "generate",
        if all_done {
            StageState::Done
        } else {
            StageState::Partial
        },
    );
    save_manifest(&manifest, out)?;
    log::info!("{split}: wrote {written} records ({errors} provider errors)");
    Ok(GenerateOutcome {
        split: split.to_string(),
        count,
        resumed,
        written,
        errors,
        complete,
    })
}

fn merge_sorted(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v.sort_unstable();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_ids() {
        assert_eq!(request_id("math", 7), "math-000007");
        assert_eq!(parse_request_id("math", "math-000007"), Some(7));
        assert_eq!(parse_request_id("math", "mathx-000007"), None);
        assert_eq!(parse_request_id("math", "code-000007"), None);
        assert_eq!(
            parse_request_id("code", &request_id("code", 1_234_567)),
            Some(1_234_567)
        );
    }
}
