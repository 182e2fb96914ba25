//! Input generators shared by the benchmarks.

use manurag::chunker::{Chunk, ChunkId};
use manurag::providers::EmbeddingVector;
use manurag::store::TextVectorStore;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const WORDS: &[&str] = &[
    "casting", "riser", "sprue", "mold", "lathe", "feed", "rake", "angle", "chip", "weld", "bead", "heat",
    "steel", "alloy", "grain", "stress", "strain", "tool", "speed", "depth",
];

/// A whitespace-separated body of `n` words drawn from a small vocabulary.
pub fn synthetic_body(n: usize, seed: u64) -> String {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn random_vector(rng: &mut StdRng, dim: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        if let Ok(v) = EmbeddingVector::new(v) {
            return v;
        }
    }
}

/// A text store of `n` random unit-free vectors.
pub fn text_store(n: usize, dim: usize, seed: u64) -> TextVectorStore {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut store = TextVectorStore::new(dim);
    for i in 0..n {
        let chunk = Chunk {
            id: ChunkId::new(format!("doc{}", i % 17), i),
            len: 1,
            text: String::new(),
            images: vec![],
        };
        store.insert(&random_vector(&mut rng, dim), chunk).expect("fresh id and matching dim");
    }
    store
}
