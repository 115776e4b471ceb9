use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::Xxh3;

use crate::assemble::RebalancePlan;
use crate::diversity::{EmbeddingProvider, RemoteEmbedder, Side, TrigramEmbedder, DEFAULT_DIM};
use crate::parse::ParseRule;
use crate::provider::{ProviderConfig, ProviderKind};
use crate::template::{instantiate, BoosterSet, PromptTemplate, TopicCatalog, TopicList};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{kind} `{name}` not found at {path}")]
    MissingAsset {
        kind: &'static str,
        name: String,
        path: PathBuf,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("split `{split}`: {message}")]
    Split { split: String, message: String },
    #[error("count must be >= 1 (split `{0}`)")]
    ZeroCount(String),
    #[error("environment variable {0} is not set")]
    AuthMissing(String),
    #[error("job in {dir} was started with a different {what}; use a fresh output directory")]
    JobMismatch { dir: PathBuf, what: &'static str },
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Pipeline configuration as written on disk. Relative paths resolve
/// against the directory holding the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub job_id: String,
    pub provider: PathBuf,
    /// Booster file; the default seven boosters when absent.
    #[serde(default)]
    pub boosters: Option<PathBuf>,
    #[serde(default)]
    pub topics: BTreeMap<String, PathBuf>,
    pub splits: BTreeMap<String, SplitConfig>,
    #[serde(default)]
    pub plan: Option<PathBuf>,
    #[serde(default)]
    pub analysis: Option<AnalysisConfig>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Item `k` uses template `k mod templates.len()`.
    pub templates: Vec<PathBuf>,
    pub count: u64,
    /// Parse rule file; the built-in rule for the split name when absent.
    #[serde(default)]
    pub rule: Option<PathBuf>,
}

fn default_side() -> Side {
    Side::Question
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_side")]
    pub side: Side,
    pub sample: usize,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    /// Also contrast booster and no-booster items within each split.
    #[serde(default)]
    pub booster_contrast: bool,
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

fn default_dim() -> usize {
    DEFAULT_DIM
}
fn default_batch() -> usize {
    64
}
fn default_embed_timeout() -> u64 {
    60_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    Trigram {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Remote {
        name: String,
        endpoint: String,
        #[serde(default)]
        auth_env: Option<String>,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default = "default_embed_timeout")]
        timeout_ms: u64,
    },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Trigram { dim: DEFAULT_DIM }
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Box<dyn EmbeddingProvider> {
        match self {
            EmbedderConfig::Trigram { dim } => Box::new(TrigramEmbedder::new(*dim)),
            EmbedderConfig::Remote {
                name,
                endpoint,
                auth_env,
                dim,
                batch_size,
                timeout_ms,
            } => Box::new(RemoteEmbedder {
                name: name.clone(),
                endpoint: endpoint.clone(),
                auth_env: auth_env.clone(),
                dim: *dim,
                batch_size: *batch_size,
                timeout: Duration::from_millis(*timeout_ms),
            }),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbedderConfig::Trigram { dim } | EmbedderConfig::Remote { dim, .. } => *dim,
        }
    }
}

/// Everything a job needs, loaded and checked up front.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub config_path: PathBuf,
    pub provider: ProviderConfig,
    pub boosters: BoosterSet,
    pub topics: TopicCatalog,
    pub templates: BTreeMap<String, Vec<PromptTemplate>>,
    pub rules: BTreeMap<String, ParseRule>,
    pub plan: Option<RebalancePlan>,
    /// Hex xxh3-128 over the config and every asset it references.
    pub digest: String,
}

fn read_asset(kind: &'static str, name: &str, path: &Path, h: &mut Xxh3) -> Result<String, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|_| ConfigError::MissingAsset {
        kind,
        name: name.to_string(),
        path: path.to_path_buf(),
    })?;
    h.update(kind.as_bytes());
    h.update(&[0]);
    h.update(name.as_bytes());
    h.update(&[0]);
    h.update(&(text.len() as u64).to_le_bytes());
    h.update(text.as_bytes());
    Ok(text)
}

fn invalid(path: &Path, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

impl Pipeline {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let mut h = Xxh3::new();
        let text = read_asset("config", "config", path, &mut h)?;
        let config: PipelineConfig = serde_json::from_str(&text).map_err(|e| invalid(path, e))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let at = |p: &Path| base.join(p);

        let provider_path = at(&config.provider);
        let provider_text = read_asset("provider config", "provider", &provider_path, &mut h)?;
        let provider: ProviderConfig = serde_json::from_str(&provider_text).map_err(|e| invalid(&provider_path, e))?;
        provider.validate().map_err(|e| invalid(&provider_path, e))?;

        let boosters = match &config.boosters {
            Some(p) => {
                let p = at(p);
                let t = read_asset("booster set", "boosters", &p, &mut h)?;
                serde_json::from_str(&t).map_err(|e| invalid(&p, e))?
            }
            None => BoosterSet::default(),
        };

        let mut topics = TopicCatalog::new();
        for (name, p) in &config.topics {
            let p = at(p);
            let t = read_asset("topic list", name, &p, &mut h)?;
            topics.insert(TopicList::parse(name, &t).map_err(|e| invalid(&p, e))?);
        }

        if config.splits.is_empty() {
            return Err(invalid(path, "no splits configured"));
        }
        let mut templates = BTreeMap::new();
        let mut rules = BTreeMap::new();
        for (split, sc) in &config.splits {
            let split_err = |message: String| ConfigError::Split {
                split: split.clone(),
                message,
            };
            if sc.count == 0 {
                return Err(ConfigError::ZeroCount(split.clone()));
            }
            if sc.templates.is_empty() {
                return Err(split_err("no templates".into()));
            }
            let mut list = Vec::new();
            for tp in &sc.templates {
                let p = at(tp);
                let t = read_asset("template", &tp.display().to_string(), &p, &mut h)?;
                let tpl: PromptTemplate = serde_json::from_str(&t).map_err(|e| invalid(&p, e))?;
                for source in tpl.topic_sources() {
                    if topics.get(source).is_none() {
                        return Err(ConfigError::MissingAsset {
                            kind: "topic list",
                            name: source.to_string(),
                            path: p.clone(),
                        });
                    }
                }
                instantiate(&tpl, 0, Some(&topics), &boosters).map_err(|e| invalid(&p, e))?;
                list.push(tpl);
            }
            templates.insert(split.clone(), list);

            let rule = match &sc.rule {
                Some(rp) => {
                    let p = at(rp);
                    let t = read_asset("parse rule", split, &p, &mut h)?;
                    let r: ParseRule = serde_json::from_str(&t).map_err(|e| invalid(&p, e))?;
                    r.validate().map_err(|e| invalid(&p, e))?;
                    r
                }
                None => {
                    ParseRule::builtin(split).ok_or_else(|| split_err("no built-in parse rule; set `rule`".into()))?
                }
            };
            rules.insert(split.clone(), rule);
        }

        let plan = match &config.plan {
            Some(p) => {
                let p = at(p);
                let t = read_asset("rebalance plan", "plan", &p, &mut h)?;
                let plan: RebalancePlan = serde_json::from_str(&t).map_err(|e| invalid(&p, e))?;
                plan.validate().map_err(|e| invalid(&p, e))?;
                for s in plan.fractions.keys() {
                    if !config.splits.contains_key(s) {
                        return Err(invalid(&p, format!("plan names unconfigured split `{s}`")));
                    }
                }
                Some(plan)
            }
            None => None,
        };

        if let Some(a) = &config.analysis {
            if a.sample < 2 {
                return Err(invalid(path, "analysis.sample must be >= 2"));
            }
        }

        Ok(Self {
            config,
            config_path: path.to_path_buf(),
            provider,
            boosters,
            topics,
            templates,
            rules,
            plan,
            digest: format!("{:032x}", h.digest128()),
        })
    }

    /// Default output directory, resolved against the config location.
    pub fn default_out(&self) -> PathBuf {
        self.config_path
            .parent()
            .unwrap_or(Path::new(""))
            .join(&self.config.output_dir)
    }

    pub fn analysis_cache(&self) -> Option<PathBuf> {
        let a = self.config.analysis.as_ref()?;
        let p = a.cache.as_ref()?;
        Some(self.config_path.parent().unwrap_or(Path::new("")).join(p))
    }

    /// Fails before any request when a remote provider's credential is absent.
    pub fn check_credentials(&self) -> Result<(), ConfigError> {
        if self.provider.kind == ProviderKind::OpenaiCompatible {
            if let Some(var) = &self.provider.auth_env {
                if std::env::var_os(var).is_none() {
                    return Err(ConfigError::AuthMissing(var.clone()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn asset(rel: &str) -> String {
        format!("{}/assets/{rel}", env!("CARGO_MANIFEST_DIR"))
    }

    fn base() -> serde_json::Value {
        json!({
            "job_id": "t",
            "provider": asset("providers/mock.json"),
            "topics": {"general_topics": asset("topics/general_topics.txt")},
            "splits": {
                "academic": {"templates": [asset("templates/academic_generator_conditional.json")], "count": 5}
            },
            "output_dir": "out"
        })
    }

    fn load(v: &serde_json::Value) -> (tempfile::TempDir, Result<Pipeline, ConfigError>) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, serde_json::to_string(v).unwrap()).unwrap();
        let r = Pipeline::load(&path);
        (dir, r)
    }

    #[test]
    fn loads_and_resolves_paths() {
        let (dir, r) = load(&base());
        let p = r.unwrap();
        assert_eq!(p.templates["academic"].len(), 1);
        assert_eq!(p.default_out(), dir.path().join("out"));
        assert_eq!(p.digest.len(), 32);
    }

    #[test]
    fn missing_topic_file_is_named() {
        let mut v = base();
        v["topics"]["general_topics"] = json!("/nonexistent/general.txt");
        match load(&v).1 {
            Err(ConfigError::MissingAsset { kind, name, .. }) => {
                assert_eq!(kind, "topic list");
                assert_eq!(name, "general_topics");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn template_with_uncatalogued_topic_source() {
        let mut v = base();
        v["topics"] = json!({});
        match load(&v).1 {
            Err(ConfigError::MissingAsset { kind, name, .. }) => {
                assert_eq!(kind, "topic list");
                assert_eq!(name, "general_topics");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_count_is_rejected() {
        let mut v = base();
        v["splits"]["academic"]["count"] = json!(0);
        assert!(matches!(load(&v).1, Err(ConfigError::ZeroCount(s)) if s == "academic"));
    }

    #[test]
    fn unknown_fields_and_bad_sample_are_rejected() {
        let mut v = base();
        v["colour"] = json!(1);
        assert!(matches!(load(&v).1, Err(ConfigError::Invalid { .. })));
        let mut v = base();
        v["analysis"] = json!({"side": "question", "sample": 1, "embedder": {"kind": "trigram", "dim": 64}});
        assert!(matches!(load(&v).1, Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn split_without_builtin_rule_needs_one() {
        let mut v = base();
        v["splits"] = json!({"poetry": {"templates": [asset("templates/general_static.json")], "count": 1}});
        assert!(matches!(load(&v).1, Err(ConfigError::Split { .. })));
    }

    #[test]
    fn digest_tracks_referenced_assets() {
        let (_d, a) = load(&base());
        let mut v = base();
        v["splits"]["academic"]["templates"] = json!([asset("templates/academic_generator_conditional_uniform.json")]);
        let (_e, b) = load(&v);
        assert_ne!(a.unwrap().digest, b.unwrap().digest);
    }
}
