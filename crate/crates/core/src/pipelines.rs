//! The six retrieval-augmented pipelines.
//!
//! | variant  | indexed text                     | image store | generator inputs                         |
//! |----------|----------------------------------|-------------|------------------------------------------|
//! | `rag`    | bodies flattened to plain words  | no          | prompt                                   |
//! | `rag-hq` | structured markdown bodies       | no          | prompt                                   |
//! | `manu1`  | markdown bodies                  | yes         | prompt + top-k images                    |
//! | `manu2`  | markdown bodies                  | no          | prompt                                   |
//! | `manu3`  | markdown bodies                  | yes         | prompt + linked images, backfilled to k  |
//! | `manu4`  | bodies with images described     | no          | prompt                                   |

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use uuid::Uuid;

use crate::chunker::{chunk_document, tokenize, Chunk, ChunkId, ChunkingParams};
use crate::corpus::{extract_links, Corpus, CorpusError, ExtractedDocument, ImageAsset};
use crate::prompts::{context_string, PromptTemplates, QuestionType};
use crate::providers::{ImageRef, ProviderError, Providers};
use crate::store::{ImageVectorStore, StoreError, TextVectorStore, IMAGE_INDEX_FILE, TEXT_INDEX_FILE};

pub const BUILD_MANIFEST_FILE: &str = "build.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{context}: {source}")]
    Provider {
        context: String,
        #[source]
        source: ProviderError,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("corpus produced no chunks to index")]
    NothingToIndex,
    #[error("index was built for {built}, not {requested}")]
    VariantMismatch {
        built: PipelineVariant,
        requested: PipelineVariant,
    },
    #[error("cannot read build manifest: {0}")]
    Manifest(String),
}

impl PipelineError {
    fn provider(context: impl Into<String>) -> impl FnOnce(ProviderError) -> Self {
        let context = context.into();
        move |source| PipelineError::Provider { context, source }
    }

    pub fn provider_error(&self) -> Option<&ProviderError> {
        match self {
            PipelineError::Provider { source, .. } => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineVariant {
    #[serde(rename = "rag")]
    RagRaw,
    RagHq,
    Manu1,
    Manu2,
    Manu3,
    Manu4,
}

impl PipelineVariant {
    pub const ALL: [PipelineVariant; 6] = [
        PipelineVariant::RagRaw,
        PipelineVariant::RagHq,
        PipelineVariant::Manu1,
        PipelineVariant::Manu2,
        PipelineVariant::Manu3,
        PipelineVariant::Manu4,
    ];

    pub fn key(self) -> &'static str {
        match self {
            PipelineVariant::RagRaw => "rag",
            PipelineVariant::RagHq => "rag-hq",
            PipelineVariant::Manu1 => "manu1",
            PipelineVariant::Manu2 => "manu2",
            PipelineVariant::Manu3 => "manu3",
            PipelineVariant::Manu4 => "manu4",
        }
    }

    /// Name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            PipelineVariant::RagRaw => "RAG",
            PipelineVariant::RagHq => "RAG_hq",
            PipelineVariant::Manu1 => "ManuRAG_1",
            PipelineVariant::Manu2 => "ManuRAG_2",
            PipelineVariant::Manu3 => "ManuRAG_3",
            PipelineVariant::Manu4 => "ManuRAG_4",
        }
    }

    pub fn uses_image_store(self) -> bool {
        matches!(self, PipelineVariant::Manu1 | PipelineVariant::Manu3)
    }

    /// Whether the generator is handed images.
    pub fn multimodal_generation(self) -> bool {
        self.uses_image_store()
    }
}

impl fmt::Display for PipelineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for PipelineVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.to_ascii_lowercase().replace('_', "-");
        PipelineVariant::ALL
            .into_iter()
            .find(|v| v.key() == s)
            .or(match s.as_str() {
                "rag-raw" => Some(PipelineVariant::RagRaw),
                "raghq" => Some(PipelineVariant::RagHq),
                _ => None,
            })
            .ok_or_else(|| {
                format!("unknown variant `{s}` (expected rag, rag-hq, manu1, manu2, manu3 or manu4)")
            })
    }
}

fn math_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\$\$[\s\S]*?\$\$|\$[^$\n]*\$").expect("valid regex"))
}

fn link_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"!\[[^\]\n]*\]\(uuid://[^)\s]*\)").expect("valid regex"))
}

/// Reduces structured markdown to plain words: formulas, image links and
/// markup characters are removed, whitespace collapsed.
pub fn flatten_markdown(body: &str) -> String {
    let no_math = math_regex().replace_all(body, " ");
    let no_links = link_regex().replace_all(&no_math, " ");
    let no_markup: String = no_links
        .chars()
        .map(|c| if matches!(c, '#' | '*' | '|' | '>' | '`') { ' ' } else { c })
        .collect();
    no_markup
        .split_whitespace()
        .filter(|t| !t.chars().all(|c| matches!(c, '-' | ':' | '=')))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Replaces every image link with `[IMAGE <uuid>]: <description>`.
pub fn inline_descriptions(body: &str, descriptions: &HashMap<Uuid, String>) -> String {
    link_regex()
        .replace_all(body, |caps: &regex::Captures<'_>| {
            let link = &caps[0];
            match extract_links(link).ok().and_then(|v| v.first().copied()) {
                Some(uuid) => match descriptions.get(&uuid) {
                    Some(text) => format!("[IMAGE {uuid}]: {}", text.replace("uuid://", "uuid:")),
                    None => format!("[IMAGE {uuid}]"),
                },
                None => String::new(),
            }
        })
        .into_owned()
}

/// Text a variant indexes for one document.
pub fn prepare_body(
    doc: &ExtractedDocument,
    variant: PipelineVariant,
    descriptions: &HashMap<Uuid, String>,
) -> String {
    match variant {
        PipelineVariant::RagRaw => flatten_markdown(&doc.body),
        PipelineVariant::Manu4 => inline_descriptions(&doc.body, descriptions),
        _ => doc.body.clone(),
    }
}

fn image_ref<'a>(asset: &ImageAsset, bytes: &'a [u8]) -> ImageRef<'a> {
    ImageRef {
        uuid: asset.uuid,
        kind: asset.kind,
        bytes,
    }
}

/// Describes every linked asset once, in corpus order.
pub fn describe_linked_images(
    corpus: &Corpus,
    providers: &Providers,
) -> Result<HashMap<Uuid, String>, PipelineError> {
    let mut out = HashMap::new();
    for doc in &corpus.documents {
        for uuid in extract_links(&doc.body)? {
            if out.contains_key(&uuid) {
                continue;
            }
            let asset = corpus.asset(&uuid).ok_or_else(|| CorpusError::MissingAsset {
                uuid,
                doc_id: doc.doc_id.clone(),
            })?;
            let bytes = corpus.read_asset(asset)?;
            let text = providers
                .describer
                .describe_image(&image_ref(asset, &bytes))
                .map_err(PipelineError::provider(format!("describing asset {uuid}")))?;
            out.insert(uuid, text);
        }
    }
    Ok(out)
}

/// Stores built for one variant.
#[derive(Debug)]
pub struct IndexSet {
    pub variant: PipelineVariant,
    pub params: ChunkingParams,
    pub text: TextVectorStore,
    pub image: Option<ImageVectorStore>,
}

pub fn build_index(
    corpus: &Corpus,
    variant: PipelineVariant,
    params: ChunkingParams,
    providers: &Providers,
) -> Result<IndexSet, PipelineError> {
    let descriptions = if variant == PipelineVariant::Manu4 {
        describe_linked_images(corpus, providers)?
    } else {
        HashMap::new()
    };

    let mut chunks: Vec<Chunk> = Vec::new();
    for doc in &corpus.documents {
        let body = prepare_body(doc, variant, &descriptions);
        chunks.extend(chunk_document(&doc.doc_id, &body, params, corpus)?);
    }
    if chunks.is_empty() {
        return Err(PipelineError::NothingToIndex);
    }

    let embedder = &providers.text_embedder;
    let vectors = chunks
        .par_iter()
        .map(|c| {
            embedder
                .embed_text(&c.text)
                .map_err(PipelineError::provider(format!("embedding chunk {}", c.id)))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut text = TextVectorStore::new(vectors[0].dim());
    for (vector, chunk) in vectors.iter().zip(chunks) {
        text.insert(vector, chunk)?;
    }

    let image = if variant.uses_image_store() {
        build_image_store(corpus, providers)?
    } else {
        None
    };

    Ok(IndexSet {
        variant,
        params,
        text,
        image,
    })
}

fn build_image_store(corpus: &Corpus, providers: &Providers) -> Result<Option<ImageVectorStore>, PipelineError> {
    let assets: Vec<&ImageAsset> = corpus.assets().collect();
    if assets.is_empty() {
        return Ok(None);
    }
    let vectors = assets
        .par_iter()
        .map(|asset| {
            let bytes = corpus.read_asset(asset)?;
            providers
                .mm_embedder
                .embed_mm_image(&image_ref(asset, &bytes))
                .map_err(PipelineError::provider(format!("embedding asset {}", asset.uuid)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut store = ImageVectorStore::new(vectors[0].dim());
    for (vector, asset) in vectors.iter().zip(assets) {
        store.insert(vector, asset.clone())?;
    }
    Ok(Some(store))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextHit {
    pub chunk_id: ChunkId,
    pub score: f64,
    pub text: String,
    pub images: Vec<Uuid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageHit {
    pub uuid: Uuid,
    pub score: f64,
}

/// Everything handed to the generator for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalBundle {
    pub question: String,
    pub qtype: QuestionType,
    pub text_hits: Vec<TextHit>,
    /// Images retrieved directly from the image store.
    pub image_hits: Vec<ImageHit>,
    /// Images linked from the retrieved chunks.
    pub referenced: Vec<Uuid>,
    pub prompt: String,
    #[serde(skip)]
    pub embedding_calls: usize,
}

impl RetrievalBundle {
    /// Images given to a multi-modal generator: store hits first, then linked
    /// images, without repeats.
    pub fn presented_images(&self) -> Vec<Uuid> {
        let mut seen = HashSet::new();
        self.image_hits
            .iter()
            .map(|h| h.uuid)
            .chain(self.referenced.iter().copied())
            .filter(|u| seen.insert(*u))
            .collect()
    }

    pub fn contexts(&self) -> Vec<&str> {
        self.text_hits.iter().map(|h| h.text.as_str()).collect()
    }
}

pub fn retrieve(
    question: &str,
    qtype: QuestionType,
    index: &IndexSet,
    k: usize,
    providers: &Providers,
    templates: &PromptTemplates,
) -> Result<RetrievalBundle, PipelineError> {
    let q_text = providers
        .text_embedder
        .embed_text(question)
        .map_err(PipelineError::provider("embedding question"))?;
    let mut embedding_calls = 1;
    let hits = index.text.top_k_text(&q_text, k)?;

    let text_hits: Vec<TextHit> = hits
        .iter()
        .map(|h| {
            let c = index.text.chunk(h.index);
            TextHit {
                chunk_id: h.id.clone(),
                score: h.score,
                text: c.text.clone(),
                images: c.images.clone(),
            }
        })
        .collect();

    let mut referenced = Vec::new();
    let mut image_hits = Vec::new();
    let mut query_images = |budget: usize, skip: &[Uuid]| -> Result<Vec<ImageHit>, PipelineError> {
        let Some(store) = index.image.as_ref().filter(|s| !s.is_empty()) else {
            return Ok(Vec::new());
        };
        let q_mm = providers
            .mm_embedder
            .embed_mm_text(question)
            .map_err(PipelineError::provider("embedding question for image search"))?;
        embedding_calls += 1;
        Ok(store
            .top_k_image(&q_mm, budget + skip.len())?
            .into_iter()
            .filter(|h| !skip.contains(&h.id))
            .take(budget)
            .map(|h| ImageHit {
                uuid: h.id,
                score: h.score,
            })
            .collect())
    };

    match index.variant {
        PipelineVariant::Manu1 => {
            image_hits = query_images(k, &[])?;
        }
        PipelineVariant::Manu3 => {
            referenced = index.text.referenced_images(&hits);
            referenced.truncate(k);
            if referenced.len() < k {
                image_hits = query_images(k - referenced.len(), &referenced)?;
            }
        }
        _ => {}
    }

    let context = context_string(text_hits.iter().map(|h| h.text.as_str()));
    let prompt = templates.render(qtype, &context, question);

    Ok(RetrievalBundle {
        question: question.to_owned(),
        qtype,
        text_hits,
        image_hits,
        referenced,
        prompt,
        embedding_calls,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub bundle: RetrievalBundle,
    pub variant: PipelineVariant,
    #[serde(skip)]
    pub latency: Duration,
    /// Generator invocations.
    pub provider_calls: usize,
    pub embedding_calls: usize,
}

pub fn answer(
    question: &str,
    qtype: QuestionType,
    corpus: &Corpus,
    index: &IndexSet,
    k: usize,
    providers: &Providers,
    templates: &PromptTemplates,
) -> Result<Answer, PipelineError> {
    let started = Instant::now();
    let bundle = retrieve(question, qtype, index, k, providers, templates)?;

    let mut loaded: Vec<(&ImageAsset, Vec<u8>)> = Vec::new();
    if index.variant.multimodal_generation() {
        for uuid in bundle.presented_images() {
            let asset = corpus.asset(&uuid).ok_or_else(|| CorpusError::MissingAsset {
                uuid,
                doc_id: String::from("<retrieval>"),
            })?;
            loaded.push((asset, corpus.read_asset(asset)?));
        }
    }
    let images: Vec<ImageRef<'_>> = loaded.iter().map(|(a, b)| image_ref(a, b)).collect();

    let text = providers
        .generator
        .generate(&bundle.prompt, &images)
        .map_err(PipelineError::provider("generating answer"))?;

    Ok(Answer {
        text,
        embedding_calls: bundle.embedding_calls,
        bundle,
        variant: index.variant,
        latency: started.elapsed(),
        provider_calls: 1,
    })
}

/// Binds a built index to the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildManifest {
    pub variant: PipelineVariant,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub text_model: String,
    pub mm_model: Option<String>,
    pub describer_model: Option<String>,
    pub corpus_hash: String,
    pub text_entries: usize,
    pub image_entries: Option<usize>,
}

impl BuildManifest {
    pub fn describe(index: &IndexSet, providers: &Providers, corpus_hash: String) -> Self {
        Self {
            text_entries: index.text.len(),
            image_entries: index.image.as_ref().map(|s| s.len()),
            ..Self::expected(index.variant, index.params, providers, corpus_hash)
        }
    }

    /// Manifest an index built now from this configuration would carry,
    /// minus the entry counts.
    pub fn expected(
        variant: PipelineVariant,
        params: ChunkingParams,
        providers: &Providers,
        corpus_hash: String,
    ) -> Self {
        Self {
            variant,
            chunk_size: params.chunk_size(),
            chunk_overlap: params.chunk_overlap(),
            text_model: providers.text_embedder.model_name().to_owned(),
            mm_model: variant
                .uses_image_store()
                .then(|| providers.mm_embedder.model_name().to_owned()),
            describer_model: (variant == PipelineVariant::Manu4).then(|| providers.describer.model_name().to_owned()),
            corpus_hash,
            text_entries: 0,
            image_entries: None,
        }
    }

    /// Names of the fields that differ from `other`, ignoring entry counts.
    pub fn mismatches(&self, other: &BuildManifest) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.variant != other.variant {
            out.push("variant");
        }
        if self.chunk_size != other.chunk_size {
            out.push("chunk_size");
        }
        if self.chunk_overlap != other.chunk_overlap {
            out.push("chunk_overlap");
        }
        if self.text_model != other.text_model {
            out.push("text_model");
        }
        if self.mm_model != other.mm_model {
            out.push("mm_model");
        }
        if self.describer_model != other.describer_model {
            out.push("describer_model");
        }
        if self.corpus_hash != other.corpus_hash {
            out.push("corpus_hash");
        }
        out
    }
}

/// SHA-256 over document ids, bodies, catalogs, asset bytes and sidecars.
pub fn corpus_hash(corpus: &Corpus) -> Result<String, CorpusError> {
    let mut h = Sha256::new();
    let docs = serde_json::to_vec(&corpus.documents).expect("corpus serialises");
    h.update(&docs);
    let catalog: BTreeMap<Uuid, &ImageAsset> = corpus.catalog();
    for (uuid, asset) in catalog {
        h.update(uuid.as_bytes());
        h.update(corpus.read_asset(asset)?);
        let sidecar = corpus
            .root
            .join(crate::corpus::ASSETS_DIR)
            .join(format!("{uuid}.txt"));
        if let Ok(text) = fs::read(&sidecar) {
            h.update(&text);
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl IndexSet {
    /// Writes `text.idx` (+ `image.idx`) and the build manifest into `dir`.
    pub fn save(&self, dir: &Path, manifest: &BuildManifest) -> Result<(), PipelineError> {
        fs::create_dir_all(dir).map_err(|source| StoreError::IoFailure {
            path: dir.to_path_buf(),
            source,
        })?;
        self.text.save(dir.join(TEXT_INDEX_FILE))?;
        if let Some(image) = &self.image {
            image.save(dir.join(IMAGE_INDEX_FILE))?;
        }
        let path = dir.join(BUILD_MANIFEST_FILE);
        let text = serde_json::to_string_pretty(manifest).expect("manifest serialises") + "\n";
        fs::write(&path, text).map_err(|source| StoreError::IoFailure { path, source })?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, BuildManifest), PipelineError> {
        let manifest = read_manifest(dir)?;
        let text = TextVectorStore::load(dir.join(TEXT_INDEX_FILE))?;
        let image_path = dir.join(IMAGE_INDEX_FILE);
        let image = if manifest.image_entries.is_some() {
            Some(ImageVectorStore::load(image_path)?)
        } else {
            None
        };
        let params = ChunkingParams::new(manifest.chunk_size, manifest.chunk_overlap)
            .map_err(|e| PipelineError::Manifest(e.to_string()))?;
        Ok((
            Self {
                variant: manifest.variant,
                params,
                text,
                image,
            },
            manifest,
        ))
    }
}

pub fn read_manifest(dir: &Path) -> Result<BuildManifest, PipelineError> {
    let path = dir.join(BUILD_MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))
}

/// Whitespace token count of the text a variant would index.
pub fn indexed_token_count(doc: &ExtractedDocument, variant: PipelineVariant) -> usize {
    tokenize(&prepare_body(doc, variant, &HashMap::new())).len()
}
