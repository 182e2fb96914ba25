//! Regenerates the offline generator fixture table for the test corpus.
//!
//! For every variant and dataset item the real retrieval path renders the
//! prompt; the recorded answer is the item's `grounded` answer when a
//! retrieved chunk comes from the item's source document and its
//! `ungrounded` answer otherwise.
//!
//!     cargo run -p manurag-core --example record_fixtures -- crates/core/tests/fixtures/bench.conf

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use manurag::corpus::load_corpus;
use manurag::pipelines::{build_index, retrieve};
use manurag::providers::offline::{prompt_sha256, GeneratorFixture};
use manurag::RunConfig;
use serde::Deserialize;

#[derive(Deserialize)]
struct ItemAnswers {
    id: String,
    doc: String,
    grounded: String,
    ungrounded: String,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let conf = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "crates/core/tests/fixtures/bench.conf".into()),
    );
    let dir = conf.parent().unwrap_or(std::path::Path::new(".")).to_path_buf();
    let scratch = tempfile::tempdir()?;

    let mut cfg = RunConfig::resolve(Some(&conf), [])?;
    let out_path = cfg.generator_fixtures.take().unwrap_or_else(|| dir.join("generator_fixtures.jsonl"));
    cfg.output = scratch.path().to_path_buf();
    cfg.describe_cache = None;

    let (providers, _) = cfg.build_providers()?;
    let templates = cfg.prompt_templates()?;
    let corpus = load_corpus(&cfg.corpus)?;
    let datasets = cfg.datasets()?;

    let answers: HashMap<String, ItemAnswers> = std::fs::read_to_string(dir.join("answers.jsonl"))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<ItemAnswers>(l).map(|a| (a.id.clone(), a)))
        .collect::<Result<_, _>>()?;

    let mut table: BTreeMap<String, String> = BTreeMap::new();
    for &variant in &cfg.variants {
        let index = build_index(&corpus, variant, cfg.chunking()?, &providers)?;
        for dataset in &datasets {
            for item in &dataset.items {
                let a = answers.get(&item.id).ok_or_else(|| format!("no answers for item {}", item.id))?;
                let bundle = retrieve(&item.query_text(), item.qtype, &index, cfg.k, &providers, &templates)?;
                let grounded = bundle.text_hits.iter().any(|h| h.chunk_id.doc_id == a.doc);
                let answer = if grounded { &a.grounded } else { &a.ungrounded };
                let key = prompt_sha256(&bundle.prompt);
                if let Some(prev) = table.insert(key, answer.clone()) {
                    if &prev != answer {
                        return Err(format!("item {} renders a prompt already recorded with another answer", item.id).into());
                    }
                }
            }
        }
    }

    let mut out = String::new();
    for (prompt_sha256, answer) in table {
        out.push_str(&serde_json::to_string(&GeneratorFixture { prompt_sha256, answer })?);
        out.push('\n');
    }
    std::fs::write(&out_path, out)?;
    println!("wrote {}", out_path.display());
    Ok(())
}
