//! Multi-modal retrieval-augmented question answering over manufacturing
//! documents, plus the benchmark harness that scores it.

pub mod bench;
pub mod chunker;
pub mod config;
pub mod corpus;
pub mod metrics;
pub mod pipelines;
pub mod prompts;
pub mod providers;
pub mod store;

pub use bench::{BenchConfig, BenchError, BenchRun, Dataset, QaItem};
pub use chunker::{Chunk, ChunkId, ChunkingError, ChunkingParams};
pub use config::{ConfigError, RunConfig};
pub use corpus::{AssetKind, Corpus, CorpusError, ExtractedDocument, ImageAsset};
pub use metrics::{Metric, MetricError, MetricReport};
pub use pipelines::{Answer, IndexSet, PipelineError, PipelineVariant, RetrievalBundle};
pub use prompts::{PromptTemplates, QuestionType};
pub use providers::{EmbeddingVector, ProviderConfig, ProviderError, Providers};
pub use store::{ImageVectorStore, ScoredHit, StoreError, TextVectorStore};
