//! Exact flat-scan vector stores for chunks and images.
//!
//! Hits are ordered by descending cosine similarity, ties broken by
//! ascending id, so every query has exactly one correct answer.
//!
//! Index file layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "MRAGVEC\0"
//! version      u32
//! kind         u32      1 = text, 2 = image
//! dim          u32
//! count        u64
//! vectors_crc  u32      CRC-32 of the record block
//! catalog_crc  u32      CRC-32 of the sidecar catalog bytes
//! records      count * dim * f32
//! ```
//!
//! The sidecar catalog `<stem>.catalog.json` lists the payload of each record
//! in record order.

use std::cmp::Ordering as CmpOrdering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::hash::Hash;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::chunker::{Chunk, ChunkId};
use crate::corpus::ImageAsset;
use crate::providers::EmbeddingVector;

const MAGIC: &[u8; 8] = b"MRAGVEC\0";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 8 + 4 + 4;

pub const TEXT_INDEX_FILE: &str = "text.idx";
pub const IMAGE_INDEX_FILE: &str = "image.idx";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("dimension mismatch: store has {expected}, vector has {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("store is empty")]
    EmptyStore,
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt index {path}: {reason}")]
    CorruptIndex { path: PathBuf, reason: String },
}

fn dot_and_norms(a: &[f32], b: &[f32]) -> (f64, f64, f64) {
    let mut dot = 0f64;
    let mut na = 0f64;
    let mut nb = 0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot, na, nb)
}

/// Cosine similarity without validation. Zero vectors yield NaN.
pub fn cosine_raw(a: &[f32], b: &[f32]) -> f64 {
    let (dot, na, nb) = dot_and_norms(a, b);
    dot / (na.sqrt() * nb.sqrt())
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, StoreError> {
    if a.dim() != b.dim() {
        return Err(StoreError::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (dot, na, nb) = dot_and_norms(a.as_slice(), b.as_slice());
    if na == 0.0 || nb == 0.0 {
        return Err(StoreError::ZeroVector);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit<I> {
    pub id: I,
    pub score: f64,
    /// Position of the entry in its store.
    pub index: usize,
}

/// Contiguous row-major vectors with precomputed norms.
#[derive(Debug, Clone)]
struct FlatVectors {
    dim: usize,
    data: Vec<f32>,
    norms: Vec<f64>,
}

impl FlatVectors {
    fn new(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        Self {
            dim,
            data: Vec::new(),
            norms: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.norms.len()
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn check(&self, v: &[f32]) -> Result<f64, StoreError> {
        if v.len() != self.dim {
            return Err(StoreError::DimMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let n = norm(v);
        if n == 0.0 {
            return Err(StoreError::ZeroVector);
        }
        Ok(n)
    }

    fn push(&mut self, v: &[f32]) -> Result<(), StoreError> {
        let n = self.check(v)?;
        self.data.extend_from_slice(v);
        self.norms.push(n);
        Ok(())
    }

    fn top_k<I: Ord + Clone>(&self, ids: &[I], query: &[f32], k: usize) -> Result<Vec<ScoredHit<I>>, StoreError> {
        let qn = self.check(query)?;
        if self.len() == 0 {
            return Err(StoreError::EmptyStore);
        }
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            // Adding 0.0 folds -0.0 into 0.0 so orthogonal entries tie by id.
            .map(|i| (dot(query, self.row(i)) / (qn * self.norms[i]) + 0.0, i))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| -> CmpOrdering {
            b.0.total_cmp(&a.0).then_with(|| ids[a.1].cmp(&ids[b.1]))
        };
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .map(|(score, index)| ScoredHit {
                id: ids[index].clone(),
                score,
                index,
            })
            .collect())
    }

    fn bits_eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Generic store: ids, payloads and vectors in insertion order.
#[derive(Debug)]
struct Store<I, P> {
    ids: Vec<I>,
    payloads: Vec<P>,
    positions: HashMap<I, usize>,
    vectors: FlatVectors,
    queries: AtomicUsize,
}

impl<I: Ord + Clone + Hash + ToString, P> Store<I, P> {
    fn new(dim: usize) -> Self {
        Self {
            ids: Vec::new(),
            payloads: Vec::new(),
            positions: HashMap::new(),
            vectors: FlatVectors::new(dim),
            queries: AtomicUsize::new(0),
        }
    }

    fn insert(&mut self, id: I, vector: &EmbeddingVector, payload: P) -> Result<(), StoreError> {
        if self.positions.contains_key(&id) {
            return Err(StoreError::DuplicateId(id.to_string()));
        }
        self.vectors.push(vector.as_slice())?;
        self.positions.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.payloads.push(payload);
        Ok(())
    }

    fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredHit<I>>, StoreError> {
        self.queries.fetch_add(1, Ordering::SeqCst);
        self.vectors.top_k(&self.ids, query.as_slice(), k)
    }

    fn vector(&self, i: usize) -> &[f32] {
        self.vectors.row(i)
    }
}

#[derive(Deserialize)]
struct Catalog<P> {
    entries: Vec<P>,
}

#[derive(Serialize)]
struct CatalogRef<'a, P> {
    kind: &'a str,
    entries: &'a [P],
}

fn catalog_path(index_path: &Path) -> PathBuf {
    let stem = index_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "index".into());
    index_path.with_file_name(format!("{stem}.catalog.json"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

fn save_store<P: Serialize>(
    path: &Path,
    kind: u32,
    kind_name: &str,
    vectors: &FlatVectors,
    payloads: &[P],
) -> Result<(), StoreError> {
    let catalog = CatalogRef {
        kind: kind_name,
        entries: payloads,
    };
    let mut catalog_bytes = serde_json::to_vec(&catalog).map_err(|e| StoreError::IoFailure {
        path: catalog_path(path),
        source: std::io::Error::other(e),
    })?;
    catalog_bytes.push(b'\n');

    let mut records = Vec::with_capacity(vectors.data.len() * 4);
    for v in &vectors.data {
        records.extend_from_slice(&v.to_le_bytes());
    }

    let mut out = Vec::with_capacity(HEADER_LEN + records.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&(vectors.dim as u32).to_le_bytes());
    out.extend_from_slice(&(vectors.len() as u64).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&records).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&catalog_bytes).to_le_bytes());
    out.extend_from_slice(&records);

    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, out).map_err(io_err(path))?;
    let cpath = catalog_path(path);
    fs::write(&cpath, catalog_bytes).map_err(io_err(&cpath))
}

fn load_store<P: DeserializeOwned>(path: &Path, kind: u32) -> Result<(FlatVectors, Vec<P>), StoreError> {
    let corrupt = |reason: String| StoreError::CorruptIndex {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < HEADER_LEN {
        return Err(corrupt("file shorter than header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    if u32_at(8) != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported version {}", u32_at(8))));
    }
    if u32_at(12) != kind {
        return Err(corrupt(format!("index kind {} where {kind} expected", u32_at(12))));
    }
    let dim = u32_at(16) as usize;
    let count = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let vectors_crc = u32_at(28);
    let catalog_crc = u32_at(32);
    if dim == 0 {
        return Err(corrupt("zero dimension".into()));
    }
    let expected_len = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| corrupt("size overflow".into()))?;
    if bytes.len() != expected_len {
        return Err(corrupt(format!(
            "expected {expected_len} bytes, found {}",
            bytes.len()
        )));
    }
    let records = &bytes[HEADER_LEN..];
    if crc32fast::hash(records) != vectors_crc {
        return Err(corrupt("vector checksum mismatch".into()));
    }

    let cpath = catalog_path(path);
    let catalog_bytes = fs::read(&cpath).map_err(io_err(&cpath))?;
    if crc32fast::hash(&catalog_bytes) != catalog_crc {
        return Err(corrupt("catalog checksum mismatch".into()));
    }
    let catalog: Catalog<P> =
        serde_json::from_slice(&catalog_bytes).map_err(|e| corrupt(format!("catalog: {e}")))?;
    if catalog.entries.len() != count {
        return Err(corrupt(format!(
            "catalog has {} entries, index has {count}",
            catalog.entries.len()
        )));
    }

    let mut vectors = FlatVectors::new(dim);
    vectors.data = records
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    vectors.norms = (0..count).map(|i| norm(vectors.row(i))).collect();
    if vectors.norms.iter().any(|n| *n == 0.0 || !n.is_finite()) {
        return Err(corrupt("zero or non-finite vector".into()));
    }
    Ok((vectors, catalog.entries))
}

/// Chunk embeddings.
#[derive(Debug)]
pub struct TextVectorStore {
    inner: Store<ChunkId, Chunk>,
}

impl TextVectorStore {
    pub fn new(dim: usize) -> Self {
        Self {
            inner: Store::new(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.vectors.dim
    }

    pub fn len(&self) -> usize {
        self.inner.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, vector: &EmbeddingVector, chunk: Chunk) -> Result<(), StoreError> {
        self.inner.insert(chunk.id.clone(), vector, chunk)
    }

    pub fn top_k_text(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredHit<ChunkId>>, StoreError> {
        self.inner.top_k(query, k)
    }

    pub fn chunk(&self, index: usize) -> &Chunk {
        &self.inner.payloads[index]
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.inner.payloads
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        self.inner.vector(index)
    }

    /// Number of top-k queries served so far.
    pub fn query_count(&self) -> usize {
        self.inner.queries.load(Ordering::SeqCst)
    }

    /// Union of the image lists of the hit chunks, ordered by hit rank then
    /// position inside the chunk, duplicates dropped.
    pub fn referenced_images(&self, hits: &[ScoredHit<ChunkId>]) -> Vec<Uuid> {
        let mut seen = HashSet::new();
        hits.iter()
            .flat_map(|h| self.chunk(h.index).images.iter().copied())
            .filter(|u| seen.insert(*u))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        save_store(path.as_ref(), 1, "text", &self.inner.vectors, &self.inner.payloads)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let (vectors, chunks): (FlatVectors, Vec<Chunk>) = load_store(path.as_ref(), 1)?;
        Ok(Self {
            inner: rebuild(path.as_ref(), vectors, chunks, |c| c.id.clone())?,
        })
    }

    /// Structural equality with vectors compared bit for bit.
    pub fn bit_identical(&self, other: &Self) -> bool {
        self.inner.ids == other.inner.ids
            && self.inner.payloads == other.inner.payloads
            && self.inner.vectors.bits_eq(&other.inner.vectors)
    }
}

/// Figure and table embeddings.
#[derive(Debug)]
pub struct ImageVectorStore {
    inner: Store<Uuid, ImageAsset>,
}

impl ImageVectorStore {
    pub fn new(dim: usize) -> Self {
        Self {
            inner: Store::new(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.vectors.dim
    }

    pub fn len(&self) -> usize {
        self.inner.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, vector: &EmbeddingVector, asset: ImageAsset) -> Result<(), StoreError> {
        self.inner.insert(asset.uuid, vector, asset)
    }

    pub fn top_k_image(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredHit<Uuid>>, StoreError> {
        self.inner.top_k(query, k)
    }

    pub fn asset(&self, index: usize) -> &ImageAsset {
        &self.inner.payloads[index]
    }

    pub fn assets(&self) -> &[ImageAsset] {
        &self.inner.payloads
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        self.inner.vector(index)
    }

    pub fn query_count(&self) -> usize {
        self.inner.queries.load(Ordering::SeqCst)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        save_store(path.as_ref(), 2, "image", &self.inner.vectors, &self.inner.payloads)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let (vectors, assets): (FlatVectors, Vec<ImageAsset>) = load_store(path.as_ref(), 2)?;
        Ok(Self {
            inner: rebuild(path.as_ref(), vectors, assets, |a| a.uuid)?,
        })
    }

    pub fn bit_identical(&self, other: &Self) -> bool {
        self.inner.ids == other.inner.ids
            && self.inner.payloads == other.inner.payloads
            && self.inner.vectors.bits_eq(&other.inner.vectors)
    }
}

fn rebuild<I, P>(
    path: &Path,
    vectors: FlatVectors,
    payloads: Vec<P>,
    id_of: impl Fn(&P) -> I,
) -> Result<Store<I, P>, StoreError>
where
    I: Ord + Clone + Hash + ToString,
{
    let ids: Vec<I> = payloads.iter().map(id_of).collect();
    let mut positions = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if positions.insert(id.clone(), i).is_some() {
            return Err(StoreError::CorruptIndex {
                path: path.to_path_buf(),
                reason: format!("duplicate id {}", id.to_string()),
            });
        }
    }
    Ok(Store {
        ids,
        payloads,
        positions,
        vectors,
        queries: AtomicUsize::new(0),
    })
}

pub fn catalog_file_for(index_path: impl AsRef<Path>) -> PathBuf {
    catalog_path(index_path.as_ref())
}
