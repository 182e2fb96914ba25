//! Fixed-window chunking over whitespace tokens.
//!
//! A document of `n` tokens is cut into windows `tokens[i .. i + S + O]` for
//! `i = 0, S, 2S, ...` while `i < n`. Consecutive windows therefore share `O`
//! tokens, and the last window may be shorter than `S + O`. Image links of
//! the form `![kind](uuid://...)` are always a single token.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::corpus::{extract_links, Corpus, CorpusError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChunkingError {
    #[error("chunk size must be at least 1")]
    ZeroChunkSize,
    #[error("chunk overlap {overlap} must be smaller than chunk size {size}")]
    OverlapTooLarge { size: usize, overlap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingParams {
    chunk_size: usize,
    chunk_overlap: usize,
}

impl ChunkingParams {
    pub fn new(chunk_size: usize, chunk_overlap: usize) -> Result<Self, ChunkingError> {
        if chunk_size == 0 {
            return Err(ChunkingError::ZeroChunkSize);
        }
        if chunk_overlap >= chunk_size {
            return Err(ChunkingError::OverlapTooLarge {
                size: chunk_size,
                overlap: chunk_overlap,
            });
        }
        Ok(Self {
            chunk_size,
            chunk_overlap,
        })
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn chunk_overlap(&self) -> usize {
        self.chunk_overlap
    }

    pub fn window(&self) -> usize {
        self.chunk_size + self.chunk_overlap
    }
}

impl Default for ChunkingParams {
    fn default() -> Self {
        Self {
            chunk_size: 600,
            chunk_overlap: 100,
        }
    }
}

/// Identifies a chunk by its document and starting token index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChunkId {
    pub doc_id: String,
    pub start: usize,
}

impl ChunkId {
    pub fn new(doc_id: impl Into<String>, start: usize) -> Self {
        Self {
            doc_id: doc_id.into(),
            start,
        }
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.doc_id, self.start)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: ChunkId,
    /// Number of tokens in the window.
    pub len: usize,
    /// Tokens joined by single spaces.
    pub text: String,
    /// Linked image uuids, document order, deduplicated.
    pub images: Vec<Uuid>,
}

impl Chunk {
    pub fn range(&self) -> Range<usize> {
        self.id.start..self.id.start + self.len
    }
}

fn link_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"!\[[^\]\n]*\]\(uuid://[^)\s]*\)").expect("valid regex"))
}

/// Splits on whitespace runs, keeping every image link as one token even
/// when it is glued to neighbouring text.
pub fn tokenize(body: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut last = 0;
    for m in link_regex().find_iter(body) {
        tokens.extend(body[last..m.start()].split_whitespace().map(str::to_owned));
        tokens.push(m.as_str().to_owned());
        last = m.end();
    }
    tokens.extend(body[last..].split_whitespace().map(str::to_owned));
    tokens
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Token count as used throughout the crate (dataset cutoffs included).
pub fn token_count(text: &str) -> usize {
    tokenize(text).len()
}

/// Window ranges for a token sequence of length `n`.
pub fn chunk_ranges(n: usize, params: ChunkingParams) -> Vec<Range<usize>> {
    (0..n)
        .step_by(params.chunk_size)
        .map(|start| start..(start + params.window()).min(n))
        .collect()
}

/// Cuts `tokens` into windows and fills each chunk's image list from the
/// links found in its text.
pub fn chunk(doc_id: &str, tokens: &[String], params: ChunkingParams) -> Vec<Chunk> {
    chunk_ranges(tokens.len(), params)
        .into_iter()
        .map(|range| {
            let text = detokenize(&tokens[range.clone()]);
            // Tokens never contain a malformed link once the corpus has been
            // validated; an unparseable one simply contributes no image.
            let images = extract_links(&text).unwrap_or_default();
            Chunk {
                id: ChunkId::new(doc_id, range.start),
                len: range.len(),
                text,
                images,
            }
        })
        .collect()
}

/// Recomputes the chunk's image list against the corpus catalog.
pub fn attach_images(mut chunk: Chunk, corpus: &Corpus) -> Result<Chunk, CorpusError> {
    let catalog: HashSet<Uuid> = match corpus.document(&chunk.id.doc_id) {
        Some(doc) => doc.assets.iter().map(|a| a.uuid).collect(),
        None => corpus.assets().map(|a| a.uuid).collect(),
    };
    let links = extract_links(&chunk.text)?;
    if let Some(missing) = links.iter().find(|u| !catalog.contains(u)) {
        return Err(CorpusError::MissingAsset {
            uuid: *missing,
            doc_id: chunk.id.doc_id.clone(),
        });
    }
    chunk.images = links;
    Ok(chunk)
}

/// Tokenizes and chunks one document body, resolving images against `corpus`.
pub fn chunk_document(
    doc_id: &str,
    body: &str,
    params: ChunkingParams,
    corpus: &Corpus,
) -> Result<Vec<Chunk>, CorpusError> {
    let tokens = tokenize(body);
    chunk(doc_id, &tokens, params)
        .into_iter()
        .map(|c| attach_images(c, corpus))
        .collect()
}
