#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use manurag::corpus::{load_corpus, Corpus};
use manurag::providers::{
    CachedDescriber, EmbeddingVector, Generator, ImageDescriber, ImageRef, MultiModalEmbedder, OfflineImageDescriber,
    OfflineJudge, OfflineMultiModalEmbedder, OfflineSimilarityScorer, OfflineTextEmbedder, ProviderError, Providers,
};
use uuid::Uuid;

pub const DIM: usize = 256;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn corpus_root() -> PathBuf {
    fixtures().join("corpus")
}

pub fn corpus() -> Corpus {
    load_corpus(corpus_root()).expect("fixture corpus loads")
}

/// Fixture asset uuids U1..U5.
pub fn u(n: u8) -> Uuid {
    format!("0b5e1c3a-7d41-4e2f-9a10-3c5d7e9f1a0{n}").parse().unwrap()
}

/// Prompt, image uuids and image bytes of one generator call.
pub type Call = (String, Vec<Uuid>, Vec<Vec<u8>>);

/// Records every generator call and answers with a constant.
#[derive(Default)]
pub struct RecordingGenerator {
    pub calls: Mutex<Vec<Call>>,
}

impl Generator for RecordingGenerator {
    fn model_name(&self) -> &str {
        "recording"
    }

    fn generate(&self, prompt: &str, images: &[ImageRef<'_>]) -> Result<String, ProviderError> {
        self.calls.lock().unwrap().push((
            prompt.to_owned(),
            images.iter().map(|i| i.uuid).collect(),
            images.iter().map(|i| i.bytes.to_vec()).collect(),
        ));
        Ok("recorded".into())
    }
}

/// Offline multi-modal embedder that counts calls.
pub struct CountingMm {
    pub inner: OfflineMultiModalEmbedder,
    pub text_calls: AtomicUsize,
    pub image_calls: AtomicUsize,
}

impl CountingMm {
    pub fn total(&self) -> usize {
        self.text_calls.load(Ordering::SeqCst) + self.image_calls.load(Ordering::SeqCst)
    }
}

impl MultiModalEmbedder for CountingMm {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn embed_mm_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.text_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed_mm_text(text)
    }

    fn embed_mm_image(&self, image: &ImageRef<'_>) -> Result<EmbeddingVector, ProviderError> {
        self.image_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed_mm_image(image)
    }
}

/// Offline describer that counts calls reaching it.
pub struct CountingDescriber {
    pub inner: OfflineImageDescriber,
    pub calls: AtomicUsize,
}

impl ImageDescriber for CountingDescriber {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn describe_image(&self, image: &ImageRef<'_>) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.describe_image(image)
    }
}

pub struct Harness {
    pub providers: Providers,
    pub generator: Arc<RecordingGenerator>,
    pub mm: Arc<CountingMm>,
    pub describer: Arc<CountingDescriber>,
    pub cache: Arc<CachedDescriber>,
}

pub fn harness() -> Harness {
    let root = corpus_root();
    let generator = Arc::new(RecordingGenerator::default());
    let mm = Arc::new(CountingMm {
        inner: OfflineMultiModalEmbedder::new(&root, DIM),
        text_calls: AtomicUsize::new(0),
        image_calls: AtomicUsize::new(0),
    });
    let describer = Arc::new(CountingDescriber {
        inner: OfflineImageDescriber::new(&root),
        calls: AtomicUsize::new(0),
    });
    let cache = Arc::new(CachedDescriber::in_memory(describer.clone()));
    let providers = Providers {
        text_embedder: Arc::new(OfflineTextEmbedder::new(DIM)),
        mm_embedder: mm.clone(),
        generator: generator.clone(),
        describer: cache.clone(),
        judge: Arc::new(OfflineJudge),
        scorer: Arc::new(OfflineSimilarityScorer::new(DIM)),
    };
    Harness {
        providers,
        generator,
        mm,
        describer,
        cache,
    }
}
