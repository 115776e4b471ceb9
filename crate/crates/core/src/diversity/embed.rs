use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::{json, Value};
use xxhash_rust::xxh3::{xxh3_128, xxh3_64};

use crate::net;

pub type EmbeddingVector = Vec<f64>;

pub const DEFAULT_DIM: usize = 384;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding service: {0}")]
    Remote(String),
    #[error("expected {expected} vectors, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite component in embedding")]
    NonFinite,
    #[error("embedding cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
    #[error("environment variable {0} is not set")]
    AuthMissing(String),
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Returns one vector per input, in input order.
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

/// Hashes character trigrams into signed buckets and L2-normalizes.
///
/// Equal strings always get equal vectors, so exact duplicates have cosine 1.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dim: usize,
    name: String,
}

impl TrigramEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self {
            dim,
            name: format!("trigram-{dim}"),
        }
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut v = vec![0.0f64; self.dim];
        let chars: Vec<char> = ['\u{2}', '\u{2}']
            .into_iter()
            .chain(text.chars())
            .chain(std::iter::once('\u{3}'))
            .collect();
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut n = 0;
            for c in w {
                n += c.encode_utf8(&mut buf[n..]).len();
            }
            let h = xxh3_64(&buf[..n]);
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl EmbeddingProvider for TrigramEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Client for a service answering `{"texts": [...]}` with `{"vectors": [[...]]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub name: String,
    pub endpoint: String,
    pub auth_env: Option<String>,
    pub dim: usize,
    pub batch_size: usize,
    pub timeout: Duration,
}

impl RemoteEmbedder {
    fn post(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let token = match &self.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| EmbedError::AuthMissing(var.clone()))?),
            None => None,
        };
        let resp = net::post_json(
            &self.endpoint,
            token.as_deref(),
            &json!({ "texts": texts }),
            self.timeout,
        )
        .map_err(|e| EmbedError::Remote(e.to_string()))?;
        let rows = resp
            .get("vectors")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Remote("response has no `vectors` array".into()))?;
        if rows.len() != texts.len() {
            return Err(EmbedError::CountMismatch {
                expected: texts.len(),
                got: rows.len(),
            });
        }
        rows.iter()
            .map(|row| {
                let row = row
                    .as_array()
                    .ok_or_else(|| EmbedError::Remote("vector is not an array".into()))?;
                if row.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.dim,
                        got: row.len(),
                    });
                }
                row.iter()
                    .map(|x| x.as_f64().filter(|f| f.is_finite()).ok_or(EmbedError::NonFinite))
                    .collect()
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size.max(1)) {
            out.extend(self.post(chunk)?);
        }
        Ok(out)
    }
}

const CACHE_MAGIC: &[u8; 8] = b"GQAEMB01";

/// Binary store of text digest to vector.
///
/// Layout: magic, dimension as u32 LE, then records of a 16-byte digest
/// followed by `dim` f64 LE values.
#[derive(Debug)]
pub struct EmbeddingCache {
    path: PathBuf,
    dim: usize,
    map: HashMap<u128, EmbeddingVector>,
    dirty: bool,
}

impl EmbeddingCache {
    pub fn open(path: &Path, dim: usize) -> Result<Self, EmbedError> {
        let err = |m: String| EmbedError::Cache {
            path: path.to_path_buf(),
            message: m,
        };
        let mut map = HashMap::new();
        if path.exists() {
            let mut r = BufReader::new(File::open(path).map_err(|e| err(e.to_string()))?);
            let mut head = [0u8; 12];
            r.read_exact(&mut head).map_err(|e| err(e.to_string()))?;
            if &head[..8] != CACHE_MAGIC {
                return Err(err("not an embedding cache".into()));
            }
            let file_dim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
            if file_dim != dim {
                return Err(err(format!("cache has dimension {file_dim}, wanted {dim}")));
            }
            let mut rec = vec![0u8; 16 + 8 * dim];
            loop {
                match r.read_exact(&mut rec) {
                    Ok(()) => {}
                    Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                    Err(e) => return Err(err(e.to_string())),
                }
                let key = u128::from_le_bytes(rec[..16].try_into().unwrap());
                let v = rec[16..]
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                map.insert(key, v);
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            dim,
            map,
            dirty: false,
        })
    }

    pub fn key(embedder: &str, text: &str) -> u128 {
        let mut buf = Vec::with_capacity(embedder.len() + 1 + text.len());
        buf.extend_from_slice(embedder.as_bytes());
        buf.push(0);
        buf.extend_from_slice(text.as_bytes());
        xxh3_128(&buf)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, key: u128) -> Option<&EmbeddingVector> {
        self.map.get(&key)
    }

    pub fn insert(&mut self, key: u128, v: EmbeddingVector) {
        assert_eq!(v.len(), self.dim);
        self.map.insert(key, v);
        self.dirty = true;
    }

    /// Writes the whole cache to a temporary file and renames it into place.
    pub fn save(&mut self) -> Result<(), EmbedError> {
        if !self.dirty {
            return Ok(());
        }
        let err = |e: std::io::Error| EmbedError::Cache {
            path: self.path.clone(),
            message: e.to_string(),
        };
        let tmp = self.path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp).map_err(err)?);
            w.write_all(CACHE_MAGIC).map_err(err)?;
            w.write_all(&(self.dim as u32).to_le_bytes()).map_err(err)?;
            let mut keys: Vec<&u128> = self.map.keys().collect();
            keys.sort_unstable();
            for k in keys {
                w.write_all(&k.to_le_bytes()).map_err(err)?;
                for x in &self.map[k] {
                    w.write_all(&x.to_le_bytes()).map_err(err)?;
                }
            }
            w.flush().map_err(err)?;
        }
        std::fs::rename(&tmp, &self.path).map_err(err)?;
        self.dirty = false;
        Ok(())
    }
}

/// Embeds through a cache, calling the inner provider only for misses.
pub fn embed_cached(
    provider: &dyn EmbeddingProvider,
    cache: &mut EmbeddingCache,
    texts: &[&str],
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let keys: Vec<u128> = texts.iter().map(|t| EmbeddingCache::key(provider.name(), t)).collect();
    let mut queued = std::collections::HashSet::new();
    let missing: Vec<usize> = (0..texts.len())
        .filter(|&i| cache.get(keys[i]).is_none() && queued.insert(keys[i]))
        .collect();
    if !missing.is_empty() {
        let batch: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
        let vs = provider.embed(&batch)?;
        if vs.len() != batch.len() {
            return Err(EmbedError::CountMismatch {
                expected: batch.len(),
                got: vs.len(),
            });
        }
        for (&i, v) in missing.iter().zip(vs) {
            if v.len() != cache.dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: cache.dim,
                    got: v.len(),
                });
            }
            cache.insert(keys[i], v);
        }
    }
    Ok(keys.iter().map(|k| cache.get(*k).unwrap().clone()).collect())
}
