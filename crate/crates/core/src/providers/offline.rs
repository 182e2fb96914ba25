//! Deterministic offline providers.
//!
//! These are pure functions of their inputs plus fixture files, so every
//! downstream result built on them is reproducible bit for bit.
//!
//! Text embedding scheme: lowercase the text and split on whitespace; hash
//! each token with 64-bit FNV-1a; add `+1` (bit 63 clear) or `-1` (bit 63
//! set) to bucket `hash % dim`; L2-normalise. A text whose buckets all cancel
//! to zero is rejected as [`ProviderError::EmptyInput`].

use std::collections::{HashMap, HashSet};
use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    require_decodable, require_text, EmbeddingVector, Generator, ImageDescriber, ImageRef, Judge,
    MultiModalEmbedder, ProviderError, SimilarityScorer, TextEmbedder,
};
use crate::corpus::ASSETS_DIR;

pub const DEFAULT_DIM: usize = 256;

fn fnv1a(token: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    h.finish()
}

/// The reference hashing projection shared by the offline embedders.
pub fn hash_embedding(text: &str, dim: usize) -> Result<EmbeddingVector, ProviderError> {
    require_text(text)?;
    let lowered = text.to_lowercase();
    let mut acc = vec![0f64; dim];
    for token in lowered.split_whitespace() {
        let h = fnv1a(token);
        let bucket = (h % dim as u64) as usize;
        acc[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(ProviderError::EmptyInput);
    }
    EmbeddingVector::new(acc.iter().map(|v| (v / norm) as f32).collect())
}

#[derive(Debug, Clone)]
pub struct OfflineTextEmbedder {
    model_name: String,
    dim: usize,
}

impl OfflineTextEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            model_name: format!("offline-hash-{dim}"),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Default for OfflineTextEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl TextEmbedder for OfflineTextEmbedder {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        hash_embedding(text, self.dim)
    }
}

fn sidecar_path(assets_dir: &Path, uuid: &uuid::Uuid) -> PathBuf {
    assets_dir.join(format!("{uuid}.txt"))
}

fn read_sidecar(assets_dir: &Path, image: &ImageRef<'_>) -> Result<String, ProviderError> {
    fs::read_to_string(sidecar_path(assets_dir, &image.uuid))
        .map(|s| s.trim().to_owned())
        .map_err(|_| ProviderError::MissingSidecar(image.uuid))
}

/// Images are embedded as the text embedding of their sidecar description
/// (`assets/<uuid>.txt`), which puts both modalities in one space.
#[derive(Debug, Clone)]
pub struct OfflineMultiModalEmbedder {
    model_name: String,
    dim: usize,
    assets_dir: PathBuf,
}

impl OfflineMultiModalEmbedder {
    pub fn new(corpus_root: impl AsRef<Path>, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            model_name: format!("offline-mm-hash-{dim}"),
            dim,
            assets_dir: corpus_root.as_ref().join(ASSETS_DIR),
        }
    }
}

impl MultiModalEmbedder for OfflineMultiModalEmbedder {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn embed_mm_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        hash_embedding(text, self.dim)
    }

    fn embed_mm_image(&self, image: &ImageRef<'_>) -> Result<EmbeddingVector, ProviderError> {
        require_decodable(image.bytes)?;
        let description = read_sidecar(&self.assets_dir, image)?;
        self.embed_mm_text(&description)
    }
}

/// Returns the sidecar description verbatim.
#[derive(Debug, Clone)]
pub struct OfflineImageDescriber {
    assets_dir: PathBuf,
}

impl OfflineImageDescriber {
    pub fn new(corpus_root: impl AsRef<Path>) -> Self {
        Self {
            assets_dir: corpus_root.as_ref().join(ASSETS_DIR),
        }
    }
}

impl ImageDescriber for OfflineImageDescriber {
    fn model_name(&self) -> &str {
        "offline-sidecar"
    }

    fn describe_image(&self, image: &ImageRef<'_>) -> Result<String, ProviderError> {
        require_decodable(image.bytes)?;
        read_sidecar(&self.assets_dir, image)
    }
}

pub fn prompt_sha256(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One line of a generator fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorFixture {
    pub prompt_sha256: String,
    pub answer: String,
}

/// Answers by exact lookup of the prompt's SHA-256.
#[derive(Debug, Clone, Default)]
pub struct OfflineGenerator {
    answers: HashMap<String, String>,
}

impl OfflineGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads a JSONL file of [`GeneratorFixture`] records. Unknown fields are ignored.
    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut gen = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fx: GeneratorFixture = serde_json::from_str(line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
            })?;
            gen.answers.insert(fx.prompt_sha256, fx.answer);
        }
        Ok(gen)
    }

    pub fn insert(&mut self, prompt: &str, answer: impl Into<String>) {
        self.answers.insert(prompt_sha256(prompt), answer.into());
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

impl Generator for OfflineGenerator {
    fn model_name(&self) -> &str {
        "offline-fixture"
    }

    fn generate(&self, prompt: &str, _images: &[ImageRef<'_>]) -> Result<String, ProviderError> {
        require_text(prompt)?;
        let key = prompt_sha256(prompt);
        self.answers
            .get(&key)
            .cloned()
            .ok_or(ProviderError::FixtureMiss(key))
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "been", "by", "for", "from", "in", "into", "is",
    "it", "its", "of", "on", "or", "that", "the", "these", "this", "those", "to", "was", "were",
    "which", "with",
];

/// Case-folded whitespace tokens with surrounding punctuation removed.
pub fn normalized_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
}

pub fn content_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    normalized_tokens(text).filter(|t| !STOPWORDS.contains(&t.as_str()))
}

/// Sentence-split claims and token-subset entailment.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineJudge;

impl Judge for OfflineJudge {
    fn model_name(&self) -> &str {
        "offline-token-judge"
    }

    fn decompose_claims(&self, text: &str) -> Result<Vec<String>, ProviderError> {
        require_text(text)?;
        Ok(text
            .split(['.', ';'])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect())
    }

    fn entails(&self, claim: &str, premise: &str) -> Result<bool, ProviderError> {
        let premise: HashSet<String> = content_tokens(premise).collect();
        Ok(content_tokens(claim).all(|t| premise.contains(&t)))
    }
}

/// Cosine of the offline text embeddings, clamped to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct OfflineSimilarityScorer {
    embedder: OfflineTextEmbedder,
}

impl OfflineSimilarityScorer {
    pub fn new(dim: usize) -> Self {
        Self {
            embedder: OfflineTextEmbedder::new(dim),
        }
    }
}

impl Default for OfflineSimilarityScorer {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl SimilarityScorer for OfflineSimilarityScorer {
    fn model_name(&self) -> &str {
        "offline-hash-cosine"
    }

    fn similarity_score(&self, answer: &str, reference: &str) -> Result<f64, ProviderError> {
        let a = self.embedder.embed_text(answer)?;
        let b = self.embedder.embed_text(reference)?;
        // One square root over the norm product keeps self-similarity at exactly 1.
        let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            let (x, y) = (f64::from(*x), f64::from(*y));
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        Ok((dot / (na * nb).sqrt()).clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AssetKind;
    use crate::store::cosine_raw;

    /// Independent FNV-1a for checking the hashing projection by hand.
    fn fnv1a_by_hand(bytes: &[u8]) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    #[test]
    fn two_token_projection_matches_hand_computation() {
        let dim = 64;
        let v = OfflineTextEmbedder::new(dim).embed_text("Milling  SPEED").unwrap();
        let mut expected = vec![0f64; dim];
        for tok in ["milling", "speed"] {
            let h = fnv1a_by_hand(tok.as_bytes());
            expected[(h % 64) as usize] += if h >> 63 == 1 { -1.0 } else { 1.0 };
        }
        let n = expected.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expected: Vec<f32> = expected.iter().map(|x| (x / n) as f32).collect();
        assert_eq!(v.as_slice(), expected.as_slice());
        assert_eq!(v.as_slice().iter().filter(|x| **x != 0.0).count(), 2);
    }

    #[test]
    fn embedding_is_deterministic() {
        let e = OfflineTextEmbedder::default();
        assert_eq!(e.embed_text("cutting tool wear").unwrap(), e.embed_text("cutting tool wear").unwrap());
        assert_eq!(e.embed_text(""), Err(ProviderError::EmptyInput));
        assert_eq!(e.embed_text("  \n"), Err(ProviderError::EmptyInput));
    }

    #[test]
    fn generator_lookup() {
        let mut g = OfflineGenerator::new();
        g.insert("P", "answer");
        assert_eq!(g.generate("P", &[]).unwrap(), "answer");
        assert!(matches!(g.generate("Q", &[]), Err(ProviderError::FixtureMiss(_))));
    }

    #[test]
    fn judge_rules() {
        let j = OfflineJudge;
        assert_eq!(j.decompose_claims("A is B. C is D.").unwrap(), vec!["A is B", "C is D"]);
        assert_eq!(j.decompose_claims("x; y").unwrap(), vec!["x", "y"]);
        assert!(j.entails("steel expands", "steel expands when heated").unwrap());
        assert!(!j.entails("aluminum melts", "steel expands").unwrap());
        assert!(j.entails("Steel EXPANDS.", "steel expands").unwrap());
    }

    #[test]
    fn similarity_identical_and_disjoint() {
        let s = OfflineSimilarityScorer::default();
        let same = s.similarity_score("heat treatment of steel", "heat treatment of steel").unwrap();
        assert!((same - 1.0).abs() < 1e-9);
        // Chosen so their hash buckets do not collide at dim 256.
        let (a, b) = ("lathe", "casting");
        let e = OfflineTextEmbedder::default();
        let va = e.embed_text(a).unwrap();
        let vb = e.embed_text(b).unwrap();
        let dot: f64 = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(x, y)| f64::from(*x) * f64::from(*y))
            .sum();
        assert_eq!(dot, 0.0);
        assert_eq!(s.similarity_score(a, b).unwrap(), 0.0);
    }

    #[test]
    fn image_embedding_equals_sidecar_text_embedding() {
        let dir = tempfile::tempdir().unwrap();
        let assets = dir.path().join(ASSETS_DIR);
        fs::create_dir_all(&assets).unwrap();
        let uuid = uuid::Uuid::from_u128(7);
        fs::write(assets.join(format!("{uuid}.txt")), "gear\n").unwrap();
        let png = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, 0, 0];
        let mm = OfflineMultiModalEmbedder::new(dir.path(), 64);
        let img = ImageRef { uuid, kind: AssetKind::Figure, bytes: &png };
        let vi = mm.embed_mm_image(&img).unwrap();
        let vt = mm.embed_mm_text("gear").unwrap();
        assert!((cosine_raw(vi.as_slice(), vt.as_slice()) - 1.0).abs() < 1e-9);
        assert_eq!(mm.embed_mm_image(&img).unwrap(), vi);

        let empty = ImageRef { uuid, kind: AssetKind::Figure, bytes: &[] };
        assert_eq!(mm.embed_mm_image(&empty), Err(ProviderError::UndecodableImage));

        let d = OfflineImageDescriber::new(dir.path());
        assert_eq!(d.describe_image(&img).unwrap(), "gear");
    }
}
