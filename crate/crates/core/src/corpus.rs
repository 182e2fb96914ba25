//! Extracted multi-modal corpus: markdown documents whose figures and tables
//! are referenced by `![kind](uuid://<uuid>)` links into an asset catalog.
//!
//! On-disk layout:
//!
//! ```text
//! <root>/manifest.jsonl        one record per document
//! <root>/<markdown>            markdown body, path given per record
//! <root>/assets/<uuid>.<ext>   image file
//! <root>/assets/<uuid>.txt     optional sidecar description
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const ASSETS_DIR: &str = "assets";

const LINK_SCHEME: &str = "uuid://";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document {doc_id} links asset {uuid} which is not in the catalog")]
    MissingAsset { uuid: Uuid, doc_id: String },
    #[error("asset uuid {0} is declared more than once")]
    DuplicateUuid(Uuid),
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("malformed uuid link at byte offset {offset}")]
    MalformedLink { offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetKind {
    Figure,
    Table,
}

impl AssetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AssetKind::Figure => "figure",
            AssetKind::Table => "table",
        }
    }
}

impl fmt::Display for AssetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AssetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "figure" => Ok(AssetKind::Figure),
            "table" => Ok(AssetKind::Table),
            other => Err(format!("unknown asset kind `{other}`")),
        }
    }
}

/// A figure or table extracted from a source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAsset {
    pub uuid: Uuid,
    pub kind: AssetKind,
    /// Relative to the corpus root.
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    /// Carried from the extractor; retrieval does not use it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_page: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedDocument {
    pub doc_id: String,
    pub body: String,
    pub assets: Vec<ImageAsset>,
}

impl ExtractedDocument {
    /// Assets in this document's catalog that no link in the body refers to.
    pub fn orphans(&self) -> Vec<Uuid> {
        let linked: HashSet<Uuid> = extract_links(&self.body)
            .map(|v| v.into_iter().collect())
            .unwrap_or_default();
        self.assets
            .iter()
            .map(|a| a.uuid)
            .filter(|u| !linked.contains(u))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub root: PathBuf,
    pub documents: Vec<ExtractedDocument>,
}

impl Corpus {
    pub fn asset(&self, uuid: &Uuid) -> Option<&ImageAsset> {
        self.assets().find(|a| a.uuid == *uuid)
    }

    pub fn assets(&self) -> impl Iterator<Item = &ImageAsset> {
        self.documents.iter().flat_map(|d| d.assets.iter())
    }

    pub fn asset_count(&self) -> usize {
        self.assets().count()
    }

    pub fn orphans(&self) -> Vec<Uuid> {
        self.documents.iter().flat_map(|d| d.orphans()).collect()
    }

    pub fn document(&self, doc_id: &str) -> Option<&ExtractedDocument> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn asset_path(&self, asset: &ImageAsset) -> PathBuf {
        self.root.join(&asset.path)
    }

    pub fn read_asset(&self, asset: &ImageAsset) -> Result<Vec<u8>, CorpusError> {
        let path = self.asset_path(asset);
        fs::read(&path).map_err(|source| CorpusError::UnreadableFile { path, source })
    }

    /// Map of every asset uuid to its catalog entry.
    pub fn catalog(&self) -> BTreeMap<Uuid, &ImageAsset> {
        self.assets().map(|a| (a.uuid, a)).collect()
    }
}

/// Manifest line as stored in `manifest.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub doc_id: String,
    pub markdown: PathBuf,
    #[serde(default)]
    pub assets: Vec<ImageAsset>,
}

/// Returns the uuids linked from `body` in order of first occurrence.
///
/// Every occurrence of `uuid://` must be followed by a hyphenated or simple
/// 128-bit hex uuid.
pub fn extract_links(body: &str) -> Result<Vec<Uuid>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (offset, _) in body.match_indices(LINK_SCHEME) {
        let start = offset + LINK_SCHEME.len();
        let rest = &body[start..];
        let end = rest
            .find(|c: char| !(c.is_ascii_hexdigit() || c == '-'))
            .unwrap_or(rest.len());
        let uuid = parse_link_uuid(&rest[..end]).ok_or(CorpusError::MalformedLink { offset })?;
        if seen.insert(uuid) {
            out.push(uuid);
        }
    }
    Ok(out)
}

fn parse_link_uuid(raw: &str) -> Option<Uuid> {
    // Uuid::parse_str also accepts braced and urn forms; links only allow the two hex forms.
    match raw.len() {
        32 | 36 => Uuid::parse_str(raw).ok(),
        _ => None,
    }
}

pub fn load_corpus(root: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let root = root.as_ref();
    let manifest_path = root.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(CorpusError::MalformedManifest(format!(
            "{} not found",
            manifest_path.display()
        )));
    }
    let manifest = read_to_string(&manifest_path)?;

    let mut documents = Vec::new();
    let mut seen_docs = HashSet::new();
    let mut owner: HashMap<Uuid, String> = HashMap::new();

    for (lineno, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(line).map_err(|e| {
            CorpusError::MalformedManifest(format!("line {}: {e}", lineno + 1))
        })?;
        if record.doc_id.trim().is_empty() {
            return Err(CorpusError::MalformedManifest(format!(
                "line {}: empty doc_id",
                lineno + 1
            )));
        }
        if !seen_docs.insert(record.doc_id.clone()) {
            return Err(CorpusError::MalformedManifest(format!(
                "line {}: duplicate doc_id `{}`",
                lineno + 1,
                record.doc_id
            )));
        }

        for asset in &record.assets {
            if owner.insert(asset.uuid, record.doc_id.clone()).is_some() {
                return Err(CorpusError::DuplicateUuid(asset.uuid));
            }
            let path = root.join(&asset.path);
            fs::File::open(&path).map_err(|source| CorpusError::UnreadableFile { path, source })?;
        }

        let body = read_to_string(&root.join(&record.markdown))?;
        let catalog: HashSet<Uuid> = record.assets.iter().map(|a| a.uuid).collect();
        for uuid in extract_links(&body)? {
            if !catalog.contains(&uuid) {
                return Err(CorpusError::MissingAsset {
                    uuid,
                    doc_id: record.doc_id,
                });
            }
        }

        documents.push(ExtractedDocument {
            doc_id: record.doc_id,
            body,
            assets: record.assets,
        });
    }

    if documents.is_empty() {
        return Err(CorpusError::MalformedManifest("manifest lists no documents".into()));
    }

    let corpus = Corpus {
        root: root.to_path_buf(),
        documents,
    };
    for uuid in corpus.orphans() {
        tracing::warn!(%uuid, "asset is never linked from any document");
    }
    Ok(corpus)
}

fn read_to_string(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const U1: &str = "0b5e2f52-3f1d-4c55-9a52-6f0f4d7a1c01";
    const U2: &str = "0b5e2f52-3f1d-4c55-9a52-6f0f4d7a1c02";

    #[test]
    fn no_links() {
        assert!(extract_links("no links here").unwrap().is_empty());
    }

    #[test]
    fn links_deduplicated_in_first_occurrence_order() {
        let body = format!(
            "A ![figure](uuid://{U1}) B ![table](uuid://{U2}) C ![figure](uuid://{U1})"
        );
        let got = extract_links(&body).unwrap();
        assert_eq!(got, vec![U1.parse().unwrap(), U2.parse::<Uuid>().unwrap()]);
    }

    #[test]
    fn simple_hex_form_accepted() {
        let body = "![figure](uuid://0b5e2f523f1d4c559a526f0f4d7a1c01)";
        assert_eq!(extract_links(body).unwrap(), vec![U1.parse::<Uuid>().unwrap()]);
    }

    #[test]
    fn malformed_link_reports_offset() {
        let body = "text ![figure](uuid://AAAA)";
        match extract_links(body) {
            Err(CorpusError::MalformedLink { offset }) => assert_eq!(offset, 15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uppercase_hex_is_canonicalised() {
        let body = format!("![figure](uuid://{})", U1.to_uppercase());
        let got = extract_links(&body).unwrap();
        assert_eq!(got[0].to_string(), U1);
    }
}
