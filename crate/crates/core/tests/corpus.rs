mod common;

use manurag::corpus::{extract_links, load_corpus, AssetKind, CorpusError};

#[test]
fn fixture_corpus_listing() {
    let corpus = common::corpus();
    let listing: Vec<(String, Vec<(uuid::Uuid, AssetKind)>)> = corpus
        .documents
        .iter()
        .map(|d| (d.doc_id.clone(), d.assets.iter().map(|a| (a.uuid, a.kind)).collect()))
        .collect();
    let u = common::u;
    assert_eq!(
        listing,
        vec![
            ("casting".into(), vec![(u(1), AssetKind::Table), (u(2), AssetKind::Figure)]),
            ("machining".into(), vec![(u(3), AssetKind::Figure), (u(4), AssetKind::Table), (u(5), AssetKind::Figure)]),
            ("welding".into(), vec![]),
        ]
    );
    assert_eq!(corpus.asset_count(), 5);
    assert!(corpus.orphans().is_empty());
    assert_eq!(corpus.asset(&u(3)).unwrap().caption.as_deref(), Some("Lathe tool geometry"));
    assert_eq!(corpus.asset(&u(4)).unwrap().source_page, Some(530));
}

#[test]
fn fixture_link_sequence() {
    let corpus = common::corpus();
    let u = common::u;
    let body = &corpus.document("machining").unwrap().body;
    assert_eq!(extract_links(body).unwrap(), vec![u(3), u(4), u(5)]);
    let body = &corpus.document("casting").unwrap().body;
    assert_eq!(extract_links(body).unwrap(), vec![u(1), u(2)]);
}

fn copy_corpus(dst: &std::path::Path) {
    let src = common::corpus_root();
    for sub in ["", "docs", "assets"] {
        std::fs::create_dir_all(dst.join(sub)).unwrap();
        for entry in std::fs::read_dir(src.join(sub)).unwrap() {
            let entry = entry.unwrap();
            if entry.file_type().unwrap().is_file() {
                std::fs::copy(entry.path(), dst.join(sub).join(entry.file_name())).unwrap();
            }
        }
    }
}

#[test]
fn link_to_undeclared_asset_is_missing_asset() {
    let dir = tempfile::tempdir().unwrap();
    copy_corpus(dir.path());
    let stray = "9f9f9f9f-0000-4000-8000-000000000009";
    let welding = dir.path().join("docs/welding.md");
    let mut body = std::fs::read_to_string(&welding).unwrap();
    body.push_str(&format!("\n![figure](uuid://{stray})\n"));
    std::fs::write(&welding, body).unwrap();
    match load_corpus(dir.path()) {
        Err(CorpusError::MissingAsset { uuid, doc_id }) => {
            assert_eq!(uuid.to_string(), stray);
            assert_eq!(doc_id, "welding");
        }
        other => panic!("expected MissingAsset, got {other:?}"),
    }
}

#[test]
fn unlinked_asset_is_an_orphan_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    copy_corpus(dir.path());
    let casting = dir.path().join("docs/casting.md");
    let body = std::fs::read_to_string(&casting).unwrap();
    let body = body.replace("![figure](uuid://0b5e1c3a-7d41-4e2f-9a10-3c5d7e9f1a02)", "");
    std::fs::write(&casting, body).unwrap();
    let corpus = load_corpus(dir.path()).unwrap();
    assert_eq!(corpus.orphans(), vec![common::u(2)]);
}

#[test]
fn empty_directory_is_malformed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_corpus(dir.path()), Err(CorpusError::MalformedManifest(_))));
}

#[test]
fn missing_image_file_is_unreadable() {
    let dir = tempfile::tempdir().unwrap();
    copy_corpus(dir.path());
    std::fs::remove_file(dir.path().join("assets/0b5e1c3a-7d41-4e2f-9a10-3c5d7e9f1a05.png")).unwrap();
    assert!(matches!(load_corpus(dir.path()), Err(CorpusError::UnreadableFile { .. })));
}
