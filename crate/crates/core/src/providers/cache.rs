use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use super::{ImageDescriber, ImageRef, ProviderError};

/// Describe-once cache in front of an [`ImageDescriber`], keyed by
/// `model_name` and asset uuid. When backed by a file, every new entry is
/// written through so re-indexing never calls the provider again.
pub struct CachedDescriber {
    inner: Arc<dyn ImageDescriber>,
    path: Option<PathBuf>,
    entries: RwLock<BTreeMap<String, String>>,
    write_lock: Mutex<()>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl CachedDescriber {
    pub fn in_memory(inner: Arc<dyn ImageDescriber>) -> Self {
        Self {
            inner,
            path: None,
            entries: RwLock::new(BTreeMap::new()),
            write_lock: Mutex::new(()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    /// Opens (or starts) a JSON cache file.
    pub fn with_file(inner: Arc<dyn ImageDescriber>, path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let entries = if path.exists() {
            let text = fs::read_to_string(&path)?;
            serde_json::from_str(&text)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            path: Some(path),
            entries: RwLock::new(entries),
            ..Self::in_memory(inner)
        })
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(&self, image: &ImageRef<'_>) -> String {
        format!("{}::{}", self.inner.model_name(), image.uuid)
    }

    fn persist(&self) -> std::io::Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        let text = serde_json::to_string_pretty(&*self.entries.read().unwrap())?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text)?;
        fs::rename(tmp, path)
    }
}

impl ImageDescriber for CachedDescriber {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn describe_image(&self, image: &ImageRef<'_>) -> Result<String, ProviderError> {
        let key = self.key(image);
        if let Some(text) = self.entries.read().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(text.clone());
        }
        let _writer = self.write_lock.lock().unwrap();
        if let Some(text) = self.entries.read().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(text.clone());
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let text = self.inner.describe_image(image)?;
        self.entries.write().unwrap().insert(key, text.clone());
        if let Err(e) = self.persist() {
            tracing::warn!(error = %e, "could not persist describe cache");
        }
        Ok(text)
    }
}
