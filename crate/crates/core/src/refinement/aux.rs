//! Auxiliary reasoning texts: chain-of-thought and existence descriptions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AuxiliaryTexts, Event, EventSequence, MAX_TEXT_LEN};
use crate::vocab::Vocab;

/// Produces the texts that steer causal refinement.
pub trait AuxTextProvider: Send + Sync {
    /// Reasoning text leading from `predecessor` to `result`.
    fn cot(&self, predecessor: &Event, result: &Event) -> Result<Vec<u32>>;

    /// Sentence listing the objects of `caption`.
    fn existence(&self, caption: &[u32]) -> Result<Vec<u32>>;

    /// Texts for masking premise `k` (0-based) when `target` is the result.
    /// The chain-of-thought is empty when `k` has no predecessor.
    fn texts(&self, seq: &EventSequence, k: usize, target: usize) -> Result<AuxiliaryTexts> {
        let cot = if k == 0 { Vec::new() } else { self.cot(&seq.events[k - 1], &seq.events[target])? };
        let existence = self.existence(&seq.events[k].caption)?;
        Ok(clip(AuxiliaryTexts { cot, existence }))
    }
}

fn clip(mut t: AuxiliaryTexts) -> AuxiliaryTexts {
    t.cot.truncate(MAX_TEXT_LEN);
    t.existence.truncate(MAX_TEXT_LEN);
    t
}

/// Template texts built from the captions themselves.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateAuxTexts;

impl AuxTextProvider for TemplateAuxTexts {
    fn cot(&self, predecessor: &Event, result: &Event) -> Result<Vec<u32>> {
        let v = Vocab::get();
        let stop = v.id(".");
        let mut out = vec![v.id("because")];
        out.extend(predecessor.caption.iter().filter(|&&t| t != stop));
        out.push(v.id("then"));
        out.extend(result.caption.iter().filter(|&&t| t != stop));
        out.truncate(MAX_TEXT_LEN);
        Ok(out)
    }

    fn existence(&self, caption: &[u32]) -> Result<Vec<u32>> {
        let v = Vocab::get();
        let mut objects: Vec<u32> = Vec::new();
        for &t in caption {
            if v.is_object(t) && !objects.contains(&t) {
                objects.push(t);
            }
        }
        let mut out = vec![v.id("there"), v.id("are"), v.id("objects")];
        for (i, &o) in objects.iter().enumerate() {
            if i > 0 {
                out.push(if i + 1 == objects.len() { v.id("and") } else { v.id(",") });
            }
            out.push(o);
        }
        out.push(v.id("."));
        out.truncate(MAX_TEXT_LEN);
        Ok(out)
    }
}

const CACHE_VERSION: u32 = 1;
const CACHE_FILE: &str = "aux_texts.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuxTextCache {
    pub version: u32,
    /// Keyed `video_id:k:j` with 1-based premise `k` and result `j`.
    pub entries: BTreeMap<String, AuxiliaryTexts>,
}

impl AuxTextCache {
    pub fn key(video_id: &str, k: usize, target: usize) -> String {
        format!("{video_id}:{}:{}", k + 1, target + 1)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self { version: CACHE_VERSION, entries: BTreeMap::new() });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cache: Self = serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        if cache.version != CACHE_VERSION {
            return Err(Error::Parse { path: path.to_path_buf(), message: format!("unsupported cache version {}", cache.version) });
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("cache serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Wraps a provider with an on-disk cache so expensive texts are made once.
pub struct CachedAuxTexts<P> {
    inner: P,
    path: PathBuf,
    cache: Mutex<AuxTextCache>,
}

impl<P: AuxTextProvider> CachedAuxTexts<P> {
    /// Opens (or starts) the cache file inside `dir`.
    pub fn open(inner: P, dir: &Path) -> Result<Self> {
        let path = dir.join(CACHE_FILE);
        let cache = AuxTextCache::load(&path)?;
        Ok(Self { inner, path, cache: Mutex::new(cache) })
    }

    /// Opens the cache named by `VGCM_CACHE`, if set.
    pub fn from_env(inner: P) -> Result<Option<Self>> {
        match std::env::var_os("VGCM_CACHE") {
            Some(dir) => Self::open(inner, Path::new(&dir)).map(Some),
            None => Ok(None),
        }
    }

    pub fn flush(&self) -> Result<()> {
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.cache.lock().unwrap().save(&self.path)
    }

    pub fn len(&self) -> usize {
        self.cache.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<P: AuxTextProvider> AuxTextProvider for CachedAuxTexts<P> {
    fn cot(&self, predecessor: &Event, result: &Event) -> Result<Vec<u32>> {
        self.inner.cot(predecessor, result)
    }

    fn existence(&self, caption: &[u32]) -> Result<Vec<u32>> {
        self.inner.existence(caption)
    }

    fn texts(&self, seq: &EventSequence, k: usize, target: usize) -> Result<AuxiliaryTexts> {
        let key = AuxTextCache::key(&seq.video_id, k, target);
        if let Some(t) = self.cache.lock().unwrap().entries.get(&key) {
            return Ok(t.clone());
        }
        let t = self.inner.texts(seq, k, target)?;
        self.cache.lock().unwrap().entries.insert(key, t.clone());
        Ok(t)
    }
}
