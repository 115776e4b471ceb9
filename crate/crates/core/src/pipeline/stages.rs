use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_128;

use super::generate::{cmd_generate, GenerateOptions};
use super::manifest::{write_atomic, StageState};
use super::{io_err, open_job, save_manifest, ConfigError, Pipeline, PipelineError};
use crate::assemble::{
    read_jsonl, rebalance, token_stats, write_jsonl, AssembleError, DatasetStats, RebalancePlan, RebalanceReport,
};
use crate::conversation::Conversation;
use crate::dedup::{dedup, DedupReport};
use crate::diversity::{
    compare, sample_indices, BoosterContrast, ComparisonSummary, DiversityError, EmbeddingCache, EmbeddingProvider,
    Side, SimilarityReport,
};
use crate::parse::{parse, summarize, FailureReason, ParseFailure};
use crate::provider::RawRecord;
use crate::seed::labeled_seed;

fn raw_path(out: &Path, split: &str) -> PathBuf {
    out.join("raw").join(format!("{split}.jsonl"))
}
fn parsed_path(out: &Path, split: &str) -> PathBuf {
    out.join("parsed").join(format!("{split}.jsonl"))
}
fn failures_path(out: &Path, split: &str) -> PathBuf {
    out.join("parsed").join(format!("{split}.failures.jsonl"))
}
fn dedup_path(out: &Path, split: &str) -> PathBuf {
    out.join("dedup").join(format!("{split}.jsonl"))
}
fn report_path(out: &Path, name: &str) -> PathBuf {
    out.join("reports").join(name)
}
pub(crate) const DATASET_FILE: &str = "dataset.jsonl";
pub(crate) const SUMMARY_FILE: &str = "summary.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes).map_err(io_err(path))
}

fn require(path: PathBuf, stage: &'static str, needs: &'static str) -> Result<PathBuf, PipelineError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingInput { stage, needs, path })
    }
}

/// Runs `body` with the stage marked running, then done or failed.
fn staged<T>(
    p: &Pipeline,
    out: &Path,
    seed: u64,
    stage: &str,
    body: impl FnOnce() -> Result<T, PipelineError>,
) -> Result<T, PipelineError> {
    let mut m = open_job(p, out, seed)?;
    m.set_stage(stage, StageState::Running);
    save_manifest(&m, out)?;
    let result = body();
    let mut m = open_job(p, out, seed)?;
    m.set_stage(
        stage,
        if result.is_ok() {
            StageState::Done
        } else {
            StageState::Failed
        },
    );
    save_manifest(&m, out)?;
    result
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseSplitReport {
    pub records: u64,
    pub provider_errors: u64,
    pub parsed: u64,
    pub failed: u64,
    pub reasons: BTreeMap<FailureReason, u64>,
    /// Audit flag to number of parsed conversations carrying it.
    pub flags: BTreeMap<String, u64>,
}

fn read_raw(path: &Path) -> Result<Vec<RawRecord>, PipelineError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AssembleError::SchemaViolation {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Parses every raw completion into conversations, writing failures aside.
pub fn cmd_parse(p: &Pipeline, out: &Path, seed: u64) -> Result<BTreeMap<String, ParseSplitReport>, PipelineError> {
    staged(p, out, seed, "parse", || {
        let mut reports = BTreeMap::new();
        for (split, rule) in &p.rules {
            let raw = read_raw(&require(raw_path(out, split), "parse", "generate")?)?;
            let results: Vec<Option<Result<Conversation, ParseFailure>>> = raw
                .par_iter()
                .map(|r| (!r.is_error()).then(|| parse(r, rule)))
                .collect();
            let mut convs = Vec::new();
            let mut failures = Vec::new();
            let mut report = ParseSplitReport {
                records: raw.len() as u64,
                ..Default::default()
            };
            for r in results {
                match r {
                    None => report.provider_errors += 1,
                    Some(Ok(c)) => {
                        for f in &c.meta.flags {
                            *report.flags.entry(f.clone()).or_insert(0) += 1;
                        }
                        convs.push(c);
                    }
                    Some(Err(f)) => failures.push(f),
                }
            }
            report.parsed = convs.len() as u64;
            report.failed = failures.len() as u64;
            report.reasons = summarize(&failures);
            write_jsonl(&parsed_path(out, split), &convs)?;
            let fpath = failures_path(out, split);
            let mut text = String::new();
            for f in &failures {
                text.push_str(&serde_json::to_string(f).expect("failure serializes"));
                text.push('\n');
            }
            write_atomic(&fpath, text.as_bytes()).map_err(io_err(&fpath))?;
            log::info!(
                "{split}: parsed {} of {} records ({} failures, {} provider errors)",
                report.parsed,
                report.records,
                report.failed,
                report.provider_errors
            );
            reports.insert(split.clone(), report);
        }
        write_json(&report_path(out, "parse.json"), &reports)?;
        Ok(reports)
    })
}

/// Removes repeated questions within each split.
pub fn cmd_dedup(p: &Pipeline, out: &Path, seed: u64) -> Result<BTreeMap<String, DedupReport>, PipelineError> {
    staged(p, out, seed, "dedup", || {
        let mut reports = BTreeMap::new();
        for split in p.config.splits.keys() {
            let convs = read_jsonl(&require(parsed_path(out, split), "dedup", "parse")?)?;
            let (kept, report) = dedup(convs);
            write_jsonl(&dedup_path(out, split), &kept)?;
            log::info!(
                "{split}: kept {} of {} ({:.2}% unique)",
                report.kept,
                report.total,
                100.0 * report.uniqueness_rate()
            );
            reports.insert(split.clone(), report);
        }
        write_json(&report_path(out, "dedup.json"), &reports)?;
        Ok(reports)
    })
}

fn sample(convs: &[Conversation], n: usize, seed: u64) -> Result<Vec<Conversation>, DiversityError> {
    Ok(sample_indices(convs.len(), n, seed)?
        .into_iter()
        .map(|i| convs[i].clone())
        .collect())
}

/// One report per dataset over equal-sized uniform samples, plus their
/// comparison when there are at least two. Every dataset is sampled with
/// the same seed, so a dataset compared with itself shows no shift.
pub fn analyze_datasets(
    datasets: &[(String, Vec<Conversation>)],
    side: Side,
    n: usize,
    seed: u64,
    embedder: &dyn EmbeddingProvider,
    mut cache: Option<&mut EmbeddingCache>,
) -> Result<(Vec<SimilarityReport>, Option<ComparisonSummary>), DiversityError> {
    let sample_seed = labeled_seed(seed, "analyze");
    let mut reports = Vec::new();
    for (label, convs) in datasets {
        let picked = sample(convs, n, sample_seed)?;
        reports.push(SimilarityReport::from_conversations(
            label,
            side,
            &picked,
            embedder,
            cache.as_deref_mut(),
        )?);
    }
    let comparison = if reports.len() >= 2 {
        Some(compare(&reports)?)
    } else {
        None
    };
    Ok((reports, comparison))
}

/// Splits one dataset by whether a booster was appended to its prompt and
/// compares `n` items from each arm.
pub fn booster_contrast(
    label: &str,
    convs: &[Conversation],
    side: Side,
    n: usize,
    seed: u64,
    embedder: &dyn EmbeddingProvider,
    mut cache: Option<&mut EmbeddingCache>,
) -> Result<(Vec<SimilarityReport>, ComparisonSummary), DiversityError> {
    let (with, without): (Vec<Conversation>, Vec<Conversation>) = convs
        .iter()
        .cloned()
        .partition(|c| c.meta.booster.as_deref().is_some_and(|b| !b.is_empty()));
    let mut reports = Vec::new();
    for (arm, items) in [("booster", &with), ("no_booster", &without)] {
        let picked = sample(items, n, labeled_seed(seed, &format!("analyze/{arm}")))?;
        reports.push(
            SimilarityReport::from_conversations(label, side, &picked, embedder, cache.as_deref_mut())?.with_arm(arm),
        );
    }
    let summary = compare(&reports)?;
    Ok((reports, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub side: Side,
    pub sample: usize,
    pub reports: Vec<SimilarityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonSummary>,
    /// Per split booster contrast, when requested.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub booster: BTreeMap<String, ComparisonSummary>,
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    /// Conversation files to compare instead of the job's deduplicated splits.
    pub inputs: Vec<PathBuf>,
    pub side: Option<Side>,
    pub sample: Option<usize>,
    pub booster_contrast: Option<bool>,
}

/// Nearest-neighbour similarity reports for each split (or each input
/// file) and their comparison.
pub fn cmd_analyze(
    p: &Pipeline,
    out: &Path,
    seed: u64,
    opts: &AnalyzeOptions,
) -> Result<AnalysisOutput, PipelineError> {
    let cfg = p.config.analysis.clone();
    let side = opts.side.or(cfg.as_ref().map(|a| a.side)).unwrap_or(Side::Question);
    let n = opts
        .sample
        .or(cfg.as_ref().map(|a| a.sample))
        .ok_or_else(|| ConfigError::Invalid {
            path: p.config_path.clone(),
            message: "no `analysis` section and no sample size given".into(),
        })?;
    let contrast = opts
        .booster_contrast
        .or(cfg.as_ref().map(|a| a.booster_contrast))
        .unwrap_or(false);
    let embed_cfg = cfg.as_ref().map(|a| a.embedder.clone()).unwrap_or_default();
    staged(p, out, seed, "analyze", || {
        let datasets: Vec<(String, Vec<Conversation>)> = if opts.inputs.is_empty() {
            p.config
                .splits
                .keys()
                .map(|s| {
                    Ok((
                        s.clone(),
                        read_jsonl(&require(dedup_path(out, s), "analyze", "dedup")?)?,
                    ))
                })
                .collect::<Result<_, PipelineError>>()?
        } else {
            opts.inputs
                .iter()
                .map(|path| Ok((path.display().to_string(), read_jsonl(path)?)))
                .collect::<Result<_, PipelineError>>()?
        };
        let embedder = embed_cfg.build();
        let mut cache = match p.analysis_cache() {
            Some(path) => Some(EmbeddingCache::open(&path, embed_cfg.dim()).map_err(DiversityError::from)?),
            None => None,
        };
        let (reports, comparison) = analyze_datasets(&datasets, side, n, seed, embedder.as_ref(), cache.as_mut())?;
        let mut booster = BTreeMap::new();
        if contrast {
            for (label, convs) in &datasets {
                let (_, summary) = booster_contrast(label, convs, side, n, seed, embedder.as_ref(), cache.as_mut())?;
                booster.insert(label.clone(), summary);
            }
        }
        if let Some(c) = cache.as_mut() {
            c.save().map_err(DiversityError::from)?;
        }
        let output = AnalysisOutput {
            side,
            sample: n,
            reports,
            comparison,
            booster,
        };
        write_json(&report_path(out, "analysis.json"), &output)?;
        Ok(output)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceOutput {
    /// Absent when no plan is configured and splits are concatenated as is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<RebalanceReport>,
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

/// Samples the deduplicated splits to the plan's proportions and writes the
/// combined dataset.
pub fn cmd_rebalance(
    p: &Pipeline,
    out: &Path,
    seed: u64,
    plan: Option<&RebalancePlan>,
) -> Result<RebalanceOutput, PipelineError> {
    let plan = plan.or(p.plan.as_ref()).cloned();
    staged(p, out, seed, "rebalance", || {
        let mut splits = BTreeMap::new();
        for s in p.config.splits.keys() {
            splits.insert(
                s.clone(),
                read_jsonl(&require(dedup_path(out, s), "rebalance", "dedup")?)?,
            );
        }
        let (dataset, report) = match &plan {
            Some(plan) => {
                let (d, r) = rebalance(&splits, plan, labeled_seed(seed, "rebalance"))?;
                for e in &r.allocation.exhausted {
                    log::warn!(
                        "{}: quota {} exceeds the {} available; taking all (round {})",
                        e.split,
                        e.quota,
                        e.available,
                        e.round
                    );
                }
                (d, Some(r))
            }
            None => (splits.values().flatten().cloned().collect(), None),
        };
        let mut counts = BTreeMap::new();
        for c in &dataset {
            *counts.entry(c.split.clone()).or_insert(0) += 1;
        }
        write_jsonl(&out.join(DATASET_FILE), &dataset)?;
        let output = RebalanceOutput {
            report,
            counts,
            total: dataset.len() as u64,
        };
        write_json(&report_path(out, "rebalance.json"), &output)?;
        log::info!("dataset: {} conversations", output.total);
        Ok(output)
    })
}

/// Token statistics of the final dataset, or of `input` when given.
pub fn cmd_stats(p: &Pipeline, out: &Path, seed: u64, input: Option<&Path>) -> Result<DatasetStats, PipelineError> {
    staged(p, out, seed, "stats", || {
        let path = match input {
            Some(i) => i.to_path_buf(),
            None => require(out.join(DATASET_FILE), "stats", "rebalance")?,
        };
        let convs = read_jsonl(&path)?;
        let stats = token_stats(&convs);
        write_json(&report_path(out, "stats.json"), &stats)?;
        let csv = report_path(out, "stats.csv");
        write_atomic(&csv, stats.to_csv().as_bytes()).map_err(io_err(&csv))?;
        Ok(stats)
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub requested: u64,
    pub records: u64,
    pub provider_errors: u64,
    pub parsed: u64,
    pub parse_failures: u64,
    pub kept: u64,
    pub removed: u64,
    pub selected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub job_id: String,
    pub config_digest: String,
    pub seed: u64,
    pub splits: BTreeMap<String, SplitSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<ComparisonSummary>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub booster: BTreeMap<String, BoosterContrast>,
    pub exhausted: Vec<String>,
    pub conversations: u64,
    pub turns: u64,
    pub words: u64,
    /// xxh3-128 of the dataset file.
    pub dataset_digest: String,
}

#[derive(Clone, Default)]
pub struct RunOptions {
    pub generate: GenerateOptions,
}

/// generate, parse, dedup, analyze (when configured), rebalance and stats,
/// then a summary. Safe to re-run after an interruption.
pub fn cmd_run(p: &Pipeline, out: &Path, seed: u64, opts: &RunOptions) -> Result<RunSummary, PipelineError> {
    let mut budget = opts.generate.stop_after;
    for (split, sc) in &p.config.splits {
        let g = GenerateOptions {
            stop_after: budget,
            clock: opts.generate.clock.clone(),
        };
        let o = cmd_generate(p, out, split, sc.count, seed, &g)?;
        if !o.complete {
            return Err(PipelineError::Interrupted {
                split: split.clone(),
                count: o.count,
                remaining: o.count - o.resumed - o.written,
            });
        }
        budget = budget.map(|b| b - o.written);
    }
    let parsed = cmd_parse(p, out, seed)?;
    let deduped = cmd_dedup(p, out, seed)?;
    let analysis = match &p.config.analysis {
        Some(_) => Some(cmd_analyze(p, out, seed, &AnalyzeOptions::default())?),
        None => None,
    };
    let rebalanced = cmd_rebalance(p, out, seed, None)?;
    let stats = cmd_stats(p, out, seed, None)?;

    let dataset = out.join(DATASET_FILE);
    let bytes = std::fs::read(&dataset).map_err(io_err(&dataset))?;
    let splits = p
        .config
        .splits
        .iter()
        .map(|(s, sc)| {
            let pr = parsed.get(s).cloned().unwrap_or_default();
            let dr = deduped.get(s).cloned().unwrap_or_default();
            (
                s.clone(),
                SplitSummary {
                    requested: sc.count,
                    records: pr.records,
                    provider_errors: pr.provider_errors,
                    parsed: pr.parsed,
                    parse_failures: pr.failed,
                    kept: dr.kept,
                    removed: dr.removed,
                    selected: rebalanced.counts.get(s).copied().unwrap_or(0),
                },
            )
        })
        .collect();
    let summary = RunSummary {
        job_id: p.config.job_id.clone(),
        config_digest: p.digest.clone(),
        seed,
        splits,
        diversity: analysis.as_ref().and_then(|a| a.comparison.clone()),
        booster: analysis
            .as_ref()
            .map(|a| {
                a.booster
                    .iter()
                    .filter_map(|(k, v)| Some((k.clone(), v.booster.clone()?)))
                    .collect()
            })
            .unwrap_or_default(),
        exhausted: rebalanced
            .report
            .as_ref()
            .map(|r| r.allocation.exhausted.iter().map(|e| e.split.clone()).collect())
            .unwrap_or_default(),
        conversations: stats.conversations,
        turns: stats.turns,
        words: stats.words,
        dataset_digest: format!("{:032x}", xxh3_128(&bytes)),
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
