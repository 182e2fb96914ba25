use std::path::PathBuf;

use manurag::chunker::{Chunk, ChunkId};
use manurag::corpus::{AssetKind, ImageAsset};
use manurag::providers::EmbeddingVector;
use manurag::store::{ImageVectorStore, StoreError, TextVectorStore};
use proptest::prelude::*;
use rand::{rngs::StdRng, Rng, SeedableRng};
use uuid::Uuid;

/// Full-scan reference: score every entry, sort by (score desc, id asc).
fn oracle<I: Ord + Clone>(entries: &[(I, Vec<f32>)], q: &[f32], k: usize) -> Vec<(I, f64)> {
    let norm = |v: &[f32]| v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    let qn = norm(q);
    let mut all: Vec<(I, f64)> = entries
        .iter()
        .map(|(id, v)| {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
            (id.clone(), dot / (qn * norm(v)) + 0.0)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn chunk(doc: &str, start: usize) -> Chunk {
    Chunk {
        id: ChunkId::new(doc, start),
        len: 1,
        text: format!("{doc} {start}"),
        images: vec![],
    }
}

fn asset(uuid: Uuid) -> ImageAsset {
    ImageAsset {
        uuid,
        kind: AssetKind::Figure,
        path: PathBuf::from(format!("assets/{uuid}.png")),
        caption: None,
        source_page: None,
    }
}

/// Random non-zero vector drawn from a tiny value set so that duplicate
/// vectors (and therefore exact score ties) are common.
fn coarse_vector(rng: &mut StdRng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-2i8..=2) as f32).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn text_top_k_matches_full_sort(seed in any::<u64>(), n in 1usize..300, dim in 1usize..8, k in 0usize..40) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut store = TextVectorStore::new(dim);
        let mut entries = Vec::new();
        for i in 0..n {
            let v = coarse_vector(&mut rng, dim);
            let c = chunk(["a", "b", "c"][i % 3], i);
            store.insert(&EmbeddingVector::new(v.clone()).unwrap(), c.clone()).unwrap();
            entries.push((c.id, v));
        }
        let q = coarse_vector(&mut rng, dim);
        let got = store.top_k_text(&EmbeddingVector::new(q.clone()).unwrap(), k).unwrap();
        let want = oracle(&entries, &q, k);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!(&g.id, &w.0);
            prop_assert_eq!(g.score.to_bits(), w.1.to_bits());
        }
    }

    #[test]
    fn image_top_k_matches_full_sort(seed in any::<u64>(), n in 1usize..300, dim in 1usize..8, k in 0usize..40) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut store = ImageVectorStore::new(dim);
        let mut entries = Vec::new();
        for _ in 0..n {
            let v = coarse_vector(&mut rng, dim);
            let id = Uuid::from_u128(rng.gen());
            store.insert(&EmbeddingVector::new(v.clone()).unwrap(), asset(id)).unwrap();
            entries.push((id, v));
        }
        let q = coarse_vector(&mut rng, dim);
        let got: Vec<Uuid> = store.top_k_image(&EmbeddingVector::new(q.clone()).unwrap(), k).unwrap().into_iter().map(|h| h.id).collect();
        let want: Vec<Uuid> = oracle(&entries, &q, k).into_iter().map(|w| w.0).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn scores_are_monotone_and_bounded(seed in any::<u64>(), n in 1usize..200, dim in 1usize..32) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut store = TextVectorStore::new(dim);
        for i in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            if v.iter().all(|x| *x == 0.0) { continue; }
            store.insert(&EmbeddingVector::new(v).unwrap(), chunk("d", i)).unwrap();
        }
        prop_assume!(!store.is_empty());
        let q: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        prop_assume!(q.iter().any(|x| *x != 0.0));
        let hits = store.top_k_text(&EmbeddingVector::new(q).unwrap(), n).unwrap();
        prop_assert_eq!(hits.len(), store.len());
        for w in hits.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        for h in &hits {
            prop_assert!(h.score >= -1.0 - 1e-9 && h.score <= 1.0 + 1e-9);
        }
    }
}

#[test]
fn k_edge_cases() {
    let mut store = TextVectorStore::new(2);
    for i in 0..3 {
        store
            .insert(&EmbeddingVector::new(vec![1.0, i as f32]).unwrap(), chunk("d", i))
            .unwrap();
    }
    let q = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
    assert!(store.top_k_text(&q, 0).unwrap().is_empty());
    assert_eq!(store.top_k_text(&q, 10).unwrap().len(), 3);
    assert!(matches!(
        store.top_k_text(&EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap(), 1),
        Err(StoreError::DimMismatch { .. })
    ));
    assert!(matches!(
        TextVectorStore::new(2).top_k_text(&q, 1),
        Err(StoreError::EmptyStore)
    ));
    assert!(matches!(
        store.insert(&EmbeddingVector::new(vec![0.5, 0.5]).unwrap(), chunk("d", 1)),
        Err(StoreError::DuplicateId(_))
    ));
}

#[test]
fn orthogonal_entries_tie_by_id() {
    // Both scores are zero; one of them comes out of the dot product as -0.0.
    let mut store = ImageVectorStore::new(2);
    let (lo, hi) = (Uuid::from_u128(1), Uuid::from_u128(2));
    store.insert(&EmbeddingVector::new(vec![0.0, -1.0]).unwrap(), asset(hi)).unwrap();
    store.insert(&EmbeddingVector::new(vec![0.0, 1.0]).unwrap(), asset(lo)).unwrap();
    let q = EmbeddingVector::new(vec![-1.0, 0.0]).unwrap();
    let hits = store.top_k_image(&q, 2).unwrap();
    assert_eq!(hits.iter().map(|h| h.id).collect::<Vec<_>>(), vec![lo, hi]);
    assert!(hits.iter().all(|h| h.score.to_bits() == 0.0f64.to_bits()));
}

fn random_text_store(n: usize, dim: usize, seed: u64) -> TextVectorStore {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut store = TextVectorStore::new(dim);
    for i in 0..n {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let mut c = chunk(&format!("doc{}", i % 7), i);
        if i % 5 == 0 {
            c.images = vec![Uuid::from_u128(rng.gen())];
        }
        store.insert(&EmbeddingVector::new(v).unwrap(), c).unwrap();
    }
    store
}

#[test]
fn thousand_entry_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("text.idx");
    let store = random_text_store(1_000, 64, 7);
    store.save(&path).unwrap();
    let back = TextVectorStore::load(&path).unwrap();
    assert!(store.bit_identical(&back));
    assert_eq!(store.chunks(), back.chunks());

    let mut images = ImageVectorStore::new(16);
    let mut rng = StdRng::seed_from_u64(9);
    for _ in 0..1_000 {
        let v: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        images.insert(&EmbeddingVector::new(v).unwrap(), asset(Uuid::from_u128(rng.gen()))).unwrap();
    }
    let ipath = dir.path().join("image.idx");
    images.save(&ipath).unwrap();
    let back = ImageVectorStore::load(&ipath).unwrap();
    assert!(images.bit_identical(&back));
    assert_eq!(images.assets(), back.assets());

    // Saving twice gives identical bytes.
    let first = std::fs::read(&path).unwrap();
    store.save(&path).unwrap();
    assert_eq!(first, std::fs::read(&path).unwrap());
}

#[test]
fn corruption_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("text.idx");
    let store = random_text_store(1_000, 32, 11);
    store.save(&path).unwrap();
    let pristine = std::fs::read(&path).unwrap();

    // Flip one bit in the record block.
    let mut bytes = pristine.clone();
    let at = bytes.len() - 123;
    bytes[at] ^= 0x01;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(TextVectorStore::load(&path), Err(StoreError::CorruptIndex { .. })));

    // Truncation.
    std::fs::write(&path, &pristine[..pristine.len() - 4]).unwrap();
    assert!(matches!(TextVectorStore::load(&path), Err(StoreError::CorruptIndex { .. })));

    // Catalog tampering.
    std::fs::write(&path, &pristine).unwrap();
    let catalog = dir.path().join("text.catalog.json");
    let text = std::fs::read_to_string(&catalog).unwrap().replacen("doc1", "doc9", 1);
    std::fs::write(&catalog, text).unwrap();
    assert!(matches!(TextVectorStore::load(&path), Err(StoreError::CorruptIndex { .. })));

    // Loading a text index as an image index.
    std::fs::write(&path, &pristine).unwrap();
    assert!(matches!(ImageVectorStore::load(&path), Err(StoreError::CorruptIndex { .. })));
}
