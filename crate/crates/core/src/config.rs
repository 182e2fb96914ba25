//! Run configuration shared by every command.
//!
//! Values come from three layers: built-in defaults, an optional plain-text
//! `key = value` file, and command-line flags, later layers winning. Both
//! the file and the flags go through [`RunConfig::set`], so the key set is
//! the same everywhere. Secrets are never stored here; `api_key_env` only
//! names the environment variable to read.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::bench::{load_dataset, BenchConfig, BenchError, Dataset};
use crate::chunker::{ChunkingError, ChunkingParams};
use crate::pipelines::PipelineVariant;
use crate::prompts::{PromptTemplates, QuestionType};
use crate::providers::{
    CachedDescriber, Endpoint, Generator, ImageDescriber, Judge, MultiModalEmbedder, OfflineGenerator,
    OfflineImageDescriber, OfflineJudge, OfflineMultiModalEmbedder, OfflineSimilarityScorer,
    OfflineTextEmbedder, ProviderConfig, ProviderError, ProviderModels, Providers, RemoteProvider, SimilarityScorer,
    TextEmbedder,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error(transparent)]
    Chunking(#[from] ChunkingError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Every configuration key with its help text, in display order.
pub const FIELDS: &[(&str, &str)] = &[
    ("corpus", "corpus root directory containing manifest.jsonl"),
    ("variant", "pipeline variant(s): rag, rag-hq, manu1..manu4, a comma list, or `all`"),
    ("k", "number of chunks (and images) retrieved per question"),
    ("chunk_size", "chunk size S in whitespace tokens"),
    ("chunk_overlap", "chunk overlap O in whitespace tokens"),
    ("text_endpoint", "text embedder: `offline` or an http(s) URL"),
    ("text_model", "text embedder model name"),
    ("mm_endpoint", "multi-modal embedder: `offline` or an http(s) URL"),
    ("mm_model", "multi-modal embedder model name"),
    ("generator_endpoint", "answer generator: `offline` or an http(s) URL"),
    ("generator_model", "answer generator model name"),
    ("describer_endpoint", "image describer: `offline` or an http(s) URL"),
    ("describer_model", "image describer model name"),
    ("judge_endpoint", "claim judge: `offline` or an http(s) URL"),
    ("judge_model", "claim judge model name"),
    ("scorer_endpoint", "similarity scorer: `offline` or an http(s) URL"),
    ("scorer_model", "similarity scorer model name"),
    ("api_key_env", "environment variable holding the API key for remote providers"),
    ("timeout_secs", "remote request timeout in seconds"),
    ("max_in_flight", "concurrent requests allowed per remote provider"),
    ("temperature", "sampling temperature sent to remote generators and judges"),
    ("embedding_dim", "dimension of the offline hashing embedders"),
    ("generator_fixtures", "JSONL fixture table for the offline generator"),
    ("templates", "directory with mathq.txt / mcq.txt / rq.txt prompt templates"),
    ("describe_cache", "image description cache file (default <output>/describe_cache.json)"),
    ("mathq", "MathQ dataset (JSONL)"),
    ("mcq", "MCQ dataset (JSONL)"),
    ("rq", "RQ dataset (JSONL)"),
    ("output", "output directory for indexes and reports"),
    ("seed", "seed recorded with every run"),
    ("workers", "benchmark rows scored concurrently"),
    ("error_threshold", "bench fails when more than this fraction of rows error"),
];

/// Keys holding filesystem paths. In a config file these resolve relative
/// to the file's directory.
pub const PATH_KEYS: &[&str] = &[
    "corpus",
    "generator_fixtures",
    "templates",
    "describe_cache",
    "mathq",
    "mcq",
    "rq",
    "output",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub variants: Vec<PipelineVariant>,
    pub k: usize,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub text: ProviderConfig,
    pub mm: ProviderConfig,
    pub generator: ProviderConfig,
    pub describer: ProviderConfig,
    pub judge: ProviderConfig,
    pub scorer: ProviderConfig,
    pub embedding_dim: usize,
    pub generator_fixtures: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub describe_cache: Option<PathBuf>,
    pub mathq: Option<PathBuf>,
    pub mcq: Option<PathBuf>,
    pub rq: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: u64,
    pub workers: usize,
    pub error_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus"),
            variants: vec![PipelineVariant::Manu4],
            k: 1,
            chunk_size: 600,
            chunk_overlap: 100,
            text: ProviderConfig::offline("text-embedding-ada-002"),
            mm: ProviderConfig::offline("clip-vit-base-patch32"),
            generator: ProviderConfig::offline("gpt-4o"),
            describer: ProviderConfig::offline("gpt-4o"),
            judge: ProviderConfig::offline("gpt-4"),
            scorer: ProviderConfig::offline("cross-encoder"),
            embedding_dim: crate::providers::offline::DEFAULT_DIM,
            generator_fixtures: None,
            templates: None,
            describe_cache: None,
            mathq: None,
            mcq: None,
            rq: None,
            output: PathBuf::from("out"),
            seed: 0,
            workers: 4,
            error_threshold: 0.10,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.to_owned(),
        reason: e.to_string(),
    })
}

fn positive(key: &str, value: &str) -> Result<usize, ConfigError> {
    let n: usize = parse(key, value)?;
    if n == 0 {
        return Err(ConfigError::InvalidValue {
            key: key.to_owned(),
            reason: "must be at least 1".into(),
        });
    }
    Ok(n)
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

pub fn parse_variants(value: &str) -> Result<Vec<PipelineVariant>, String> {
    if value.trim().eq_ignore_ascii_case("all") {
        return Ok(PipelineVariant::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let v: PipelineVariant = part.parse()?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err("no variant given".into());
    }
    Ok(out)
}

impl RunConfig {
    fn providers_mut(&mut self) -> [(&'static str, &mut ProviderConfig); 6] {
        [
            ("text", &mut self.text),
            ("mm", &mut self.mm),
            ("generator", &mut self.generator),
            ("describer", &mut self.describer),
            ("judge", &mut self.judge),
            ("scorer", &mut self.scorer),
        ]
    }

    fn providers_ref(&self) -> [(&'static str, &ProviderConfig); 6] {
        [
            ("text", &self.text),
            ("mm", &self.mm),
            ("generator", &self.generator),
            ("describer", &self.describer),
            ("judge", &self.judge),
            ("scorer", &self.scorer),
        ]
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "corpus" => self.corpus = PathBuf::from(value),
            "variant" => {
                self.variants = parse_variants(value).map_err(|reason| ConfigError::InvalidValue {
                    key: key.into(),
                    reason,
                })?
            }
            "k" => self.k = positive(key, value)?,
            "chunk_size" => self.chunk_size = positive(key, value)?,
            "chunk_overlap" => self.chunk_overlap = parse(key, value)?,
            "api_key_env" => {
                let env = opt_path(value).map(|_| value.to_owned());
                for (_, p) in self.providers_mut() {
                    p.api_key_env = env.clone();
                }
            }
            "timeout_secs" => {
                let secs: u64 = parse(key, value)?;
                for (_, p) in self.providers_mut() {
                    p.timeout = Duration::from_secs(secs);
                }
            }
            "max_in_flight" => {
                let n = positive(key, value)?;
                for (_, p) in self.providers_mut() {
                    p.max_in_flight = n;
                }
            }
            "temperature" => {
                let t: f32 = parse(key, value)?;
                for (_, p) in self.providers_mut() {
                    p.temperature = t;
                }
            }
            "embedding_dim" => self.embedding_dim = positive(key, value)?,
            "generator_fixtures" => self.generator_fixtures = opt_path(value),
            "templates" => self.templates = opt_path(value),
            "describe_cache" => self.describe_cache = opt_path(value),
            "mathq" => self.mathq = opt_path(value),
            "mcq" => self.mcq = opt_path(value),
            "rq" => self.rq = opt_path(value),
            "output" => self.output = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "workers" => self.workers = positive(key, value)?,
            "error_threshold" => {
                let t: f64 = parse(key, value)?;
                if !(0.0..=1.0).contains(&t) {
                    return Err(ConfigError::InvalidValue {
                        key: key.into(),
                        reason: "must be between 0 and 1".into(),
                    });
                }
                self.error_threshold = t;
            }
            _ => {
                let (name, field) = key.rsplit_once('_').ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
                let mut providers = self.providers_mut();
                let (_, provider) = providers
                    .iter_mut()
                    .find(|(n, _)| *n == name)
                    .ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
                match field {
                    "endpoint" => {
                        provider.endpoint = value.parse::<Endpoint>().map_err(|reason| ConfigError::InvalidValue {
                            key: key.into(),
                            reason,
                        })?
                    }
                    "model" => provider.model_name = value.to_owned(),
                    _ => return Err(ConfigError::UnknownKey(key.into())),
                }
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<(), ConfigError> {
        self.apply_kv_text_in(text, None)
    }

    /// Like [`RunConfig::apply_kv_text`], resolving relative paths against `base`.
    pub fn apply_kv_text_in(&mut self, text: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                reason: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            let value = match base {
                Some(base) if PATH_KEYS.contains(&key) && !value.trim().is_empty() && Path::new(value.trim()).is_relative() => {
                    base.join(value.trim()).display().to_string()
                }
                _ => value.to_owned(),
            };
            self.set(key, &value).map_err(|e| match e {
                ConfigError::UnknownKey(_) | ConfigError::InvalidValue { .. } => ConfigError::Syntax {
                    line: i + 1,
                    reason: e.to_string(),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_kv_text_in(&text, path.parent())
    }

    /// Defaults, then the file (if any), then flag overrides.
    pub fn resolve<'a>(
        file: Option<&Path>,
        flags: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        cfg.chunking()?;
        Ok(cfg)
    }

    pub fn chunking(&self) -> Result<ChunkingParams, ChunkingError> {
        ChunkingParams::new(self.chunk_size, self.chunk_overlap)
    }

    pub fn dataset_path(&self, qtype: QuestionType) -> Option<&Path> {
        match qtype {
            QuestionType::MathQ => self.mathq.as_deref(),
            QuestionType::Mcq => self.mcq.as_deref(),
            QuestionType::Rq => self.rq.as_deref(),
        }
    }

    pub fn bench_config(&self, variant: PipelineVariant, providers: ProviderModels) -> BenchConfig {
        BenchConfig {
            variant,
            k: self.k,
            chunk_size: self.chunk_size,
            chunk_overlap: self.chunk_overlap,
            providers,
            seed: self.seed,
            workers: self.workers,
        }
    }

    /// Loads every configured dataset, in MathQ, MCQ, RQ order.
    pub fn datasets(&self) -> Result<Vec<Dataset>, BenchError> {
        QuestionType::ALL
            .into_iter()
            .filter_map(|q| self.dataset_path(q).map(|p| load_dataset(p, q)))
            .collect()
    }

    pub fn index_dir(&self) -> PathBuf {
        self.output.join("index")
    }

    pub fn describe_cache_path(&self) -> PathBuf {
        self.describe_cache
            .clone()
            .unwrap_or_else(|| self.output.join("describe_cache.json"))
    }

    /// Value of every key, in [`FIELDS`] order.
    pub fn to_kv_text(&self) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out = String::new();
        for (key, _) in FIELDS {
            let value = match *key {
                "corpus" => self.corpus.display().to_string(),
                "variant" => self.variants.iter().map(|v| v.key()).collect::<Vec<_>>().join(","),
                "k" => self.k.to_string(),
                "chunk_size" => self.chunk_size.to_string(),
                "chunk_overlap" => self.chunk_overlap.to_string(),
                "api_key_env" => self.text.api_key_env.clone().unwrap_or_default(),
                "timeout_secs" => self.text.timeout.as_secs().to_string(),
                "max_in_flight" => self.text.max_in_flight.to_string(),
                "temperature" => self.text.temperature.to_string(),
                "embedding_dim" => self.embedding_dim.to_string(),
                "generator_fixtures" => p(&self.generator_fixtures),
                "templates" => p(&self.templates),
                "describe_cache" => p(&self.describe_cache),
                "mathq" => p(&self.mathq),
                "mcq" => p(&self.mcq),
                "rq" => p(&self.rq),
                "output" => self.output.display().to_string(),
                "seed" => self.seed.to_string(),
                "workers" => self.workers.to_string(),
                "error_threshold" => self.error_threshold.to_string(),
                other => {
                    let (name, field) = other.rsplit_once('_').expect("provider key");
                    let (_, cfg) = self
                        .providers_ref()
                        .into_iter()
                        .find(|(n, _)| *n == name)
                        .expect("known provider");
                    match field {
                        "endpoint" => cfg.endpoint.to_string(),
                        _ => cfg.model_name.clone(),
                    }
                }
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn prompt_templates(&self) -> std::io::Result<PromptTemplates> {
        match &self.templates {
            Some(dir) => PromptTemplates::from_dir(dir),
            None => Ok(PromptTemplates::default()),
        }
    }

    /// Instantiates every provider. The describer is wrapped in the
    /// persistent description cache, which is also returned for inspection.
    pub fn build_providers(&self) -> Result<(Providers, Arc<CachedDescriber>), ConfigError> {
        let dim = self.embedding_dim;
        let root = &self.corpus;
        let remote = |cfg: &ProviderConfig| -> Result<Option<Arc<RemoteProvider>>, ConfigError> {
            match cfg.endpoint {
                Endpoint::Offline => Ok(None),
                Endpoint::Url(_) => Ok(Some(Arc::new(RemoteProvider::new(cfg.clone())?))),
            }
        };

        let text_embedder: Arc<dyn TextEmbedder> = match remote(&self.text)? {
            Some(r) => r,
            None => Arc::new(OfflineTextEmbedder::new(dim)),
        };
        let mm_embedder: Arc<dyn MultiModalEmbedder> = match remote(&self.mm)? {
            Some(r) => r,
            None => Arc::new(OfflineMultiModalEmbedder::new(root, dim)),
        };
        let generator: Arc<dyn Generator> = match remote(&self.generator)? {
            Some(r) => r,
            None => Arc::new(match &self.generator_fixtures {
                Some(path) => OfflineGenerator::from_file(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?,
                None => OfflineGenerator::new(),
            }),
        };
        let describer_inner: Arc<dyn ImageDescriber> = match remote(&self.describer)? {
            Some(r) => r,
            None => Arc::new(OfflineImageDescriber::new(root)),
        };
        let cache_path = self.describe_cache_path();
        let describer = Arc::new(
            CachedDescriber::with_file(describer_inner, &cache_path).map_err(|source| ConfigError::Io {
                path: cache_path,
                source,
            })?,
        );
        let judge: Arc<dyn Judge> = match remote(&self.judge)? {
            Some(r) => r,
            None => Arc::new(OfflineJudge),
        };
        let scorer: Arc<dyn SimilarityScorer> = match remote(&self.scorer)? {
            Some(r) => r,
            None => Arc::new(OfflineSimilarityScorer::new(dim)),
        };

        Ok((
            Providers {
                text_embedder,
                mm_embedder,
                generator,
                describer: describer.clone(),
                judge,
                scorer,
            },
            describer,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.k, c.chunk_size, c.chunk_overlap), (1, 600, 100));
        assert_eq!(c.generator.temperature, 0.0);
        assert_eq!(c.text.endpoint, Endpoint::Offline);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.conf");
        std::fs::write(&file, "# comment\nk = 3\nchunk_size = 200\n\nvariant = manu1\n").unwrap();
        let c = RunConfig::resolve(Some(&file), [("k", "5")]).unwrap();
        assert_eq!(c.k, 5);
        assert_eq!(c.chunk_size, 200);
        assert_eq!(c.chunk_overlap, 100);
        assert_eq!(c.variants, vec![PipelineVariant::Manu1]);
        assert_eq!(c.corpus, PathBuf::from("corpus"));

        std::fs::write(&file, "corpus = docs\nmcq = /abs/mcq.jsonl\n").unwrap();
        let c = RunConfig::resolve(Some(&file), [("rq", "rel.jsonl")]).unwrap();
        assert_eq!(c.corpus, dir.path().join("docs"));
        assert_eq!(c.mcq, Some(PathBuf::from("/abs/mcq.jsonl")));
        assert_eq!(c.rq, Some(PathBuf::from("rel.jsonl")));
    }

    #[test]
    fn kv_text_round_trips() {
        let mut c = RunConfig::default();
        c.set("variant", "rag,manu3").unwrap();
        c.set("judge_endpoint", "http://127.0.0.1:8080/judge").unwrap();
        c.set("mcq", "data/mcq.jsonl").unwrap();
        let mut back = RunConfig::default();
        back.apply_kv_text(&c.to_kv_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.to_kv_text().lines().count(), FIELDS.len());
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("nope", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.set("text_colour", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.set("k", "0"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(c.set("text_endpoint", "ftp://x"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(
            c.apply_kv_text("k 3"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(RunConfig::resolve(None, [("chunk_overlap", "600")]).is_err());
        assert_eq!(parse_variants("all").unwrap().len(), 6);
    }
}
