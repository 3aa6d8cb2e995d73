//! Visual feature sources and the on-disk feature container.
//!
//! Container layout (little endian): magic `VGCMFEAT`, then u32 fields
//! `version, n_events, frames, feature_dim, dtype` (dtype 0 = float32),
//! then `n_events × frames × feature_dim` row-major f32 values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::annotation::AnnotationRecord;
use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::types::{CompleteCausalityList, Event, EventSequence};
use crate::vocab::Vocab;

const MAGIC: &[u8; 8] = b"VGCMFEAT";
const VERSION: u32 = 1;
const DTYPE_F32: u32 = 0;
const HEADER_LEN: usize = 8 + 5 * 4;

/// Source of per-event visual features. Must be deterministic in
/// `(video_id, index)` and its own seed.
pub trait FeatureProvider: Sync {
    fn frames(&self) -> usize;
    fn feature_dim(&self) -> usize;
    /// Features of event `index` (0-based) of `video_id`.
    fn features(&self, video_id: &str, index: usize) -> Result<Mat>;
}

/// All-zero features.
#[derive(Debug, Clone)]
pub struct ZeroFeatures {
    pub frames: usize,
    pub feature_dim: usize,
}

impl FeatureProvider for ZeroFeatures {
    fn frames(&self) -> usize {
        self.frames
    }
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }
    fn features(&self, _: &str, _: usize) -> Result<Mat> {
        Ok(Mat::zeros(self.frames, self.feature_dim))
    }
}

/// Standard normal features seeded per `(seed, video_id, index)`.
#[derive(Debug, Clone)]
pub struct SeededRandomFeatures {
    pub frames: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

pub(crate) fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl FeatureProvider for SeededRandomFeatures {
    fn frames(&self) -> usize {
        self.frames
    }
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }
    fn features(&self, video_id: &str, index: usize) -> Result<Mat> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stable_hash(video_id));
        rng.set_stream(index as u64);
        let data = (0..self.frames * self.feature_dim)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                f64::from(x as f32)
            })
            .collect();
        Ok(Mat::from_vec(self.frames, self.feature_dim, data))
    }
}

/// Features held in memory, keyed by video id.
#[derive(Debug, Clone, Default)]
pub struct InMemoryFeatures {
    frames: usize,
    feature_dim: usize,
    videos: BTreeMap<String, Vec<Mat>>,
}

impl InMemoryFeatures {
    pub fn new(frames: usize, feature_dim: usize) -> Self {
        Self { frames, feature_dim, videos: BTreeMap::new() }
    }

    pub fn insert(&mut self, video_id: impl Into<String>, events: Vec<Mat>) -> Result<()> {
        let video_id = video_id.into();
        if let Some(m) = events.iter().find(|m| m.shape() != (self.frames, self.feature_dim)) {
            return Err(Error::record(
                video_id,
                format!("feature shape {:?} differs from {}×{}", m.shape(), self.frames, self.feature_dim),
            ));
        }
        self.videos.insert(video_id, events);
        Ok(())
    }

    /// Loads the container of every record that names one, resolving paths
    /// against `base`.
    pub fn from_records(records: &[AnnotationRecord], base: &Path) -> Result<Self> {
        let mut out: Option<Self> = None;
        for r in records {
            let Some(rel) = &r.features_path else { continue };
            let events = read_container(&base.join(rel))?;
            let store = out.get_or_insert_with(|| Self::new(events[0].rows(), events[0].cols()));
            store.insert(r.video_id.clone(), events)?;
        }
        out.ok_or_else(|| Error::Schema("no record names a features_path".into()))
    }
}

impl FeatureProvider for InMemoryFeatures {
    fn frames(&self) -> usize {
        self.frames
    }
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }
    fn features(&self, video_id: &str, index: usize) -> Result<Mat> {
        self.videos
            .get(video_id)
            .and_then(|v| v.get(index))
            .cloned()
            .ok_or_else(|| Error::MissingFeature { video_id: video_id.to_string(), index: index + 1 })
    }
}

/// Serializes event feature matrices into container bytes. Values are
/// stored as f32.
pub fn encode_container(events: &[Mat]) -> Result<Vec<u8>> {
    let first = events.first().ok_or_else(|| Error::Schema("feature container needs at least one event".into()))?;
    let (frames, dim) = first.shape();
    if events.iter().any(|m| m.shape() != (frames, dim)) {
        return Err(Error::Schema("feature matrices of one video must share a shape".into()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + events.len() * frames * dim * 4);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, events.len() as u32, frames as u32, dim as u32, DTYPE_F32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for m in events {
        for &x in m.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8], origin: &Path) -> Result<Vec<Mat>> {
    let bad = |m: &str| Error::Parse { path: origin.to_path_buf(), message: m.to_string() };
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(bad("not a feature container"));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    if field(0) != VERSION as usize {
        return Err(bad(&format!("unsupported container version {}", field(0))));
    }
    let (n, frames, dim, dtype) = (field(1), field(2), field(3), field(4));
    if dtype != DTYPE_F32 as usize {
        return Err(bad(&format!("unsupported dtype {dtype}")));
    }
    if n == 0 || frames == 0 || dim == 0 {
        return Err(bad("empty dimension in header"));
    }
    let per = frames * dim;
    if bytes.len() != HEADER_LEN + n * per * 4 {
        return Err(bad(&format!("expected {} data bytes, found {}", n * per * 4, bytes.len() - HEADER_LEN)));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok(values.chunks(per).map(|c| Mat::from_vec(frames, dim, c.to_vec())).collect())
}

pub fn write_container(path: &Path, events: &[Mat]) -> Result<()> {
    std::fs::write(path, encode_container(events)?).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Vec<Mat>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes, path)
}

/// Tokenizes captions and pulls visual features for every record.
pub fn attach_features(records: &[AnnotationRecord], provider: &dyn FeatureProvider) -> Result<Vec<EventSequence>> {
    let vocab = Vocab::get();
    records
        .iter()
        .map(|r| {
            let events = (0..r.n_events())
                .map(|i| {
                    let visual = provider.features(&r.video_id, i)?;
                    if visual.shape() != (provider.frames(), provider.feature_dim()) {
                        return Err(Error::record(&r.video_id, format!("event {} has feature shape {:?}", i + 1, visual.shape())));
                    }
                    let mut caption = vocab.encode(&r.sentences[i]);
                    caption.truncate(crate::types::MAX_TEXT_LEN);
                    Ok(Event { index: i, visual, caption, span: r.timestamps[i] })
                })
                .collect::<Result<Vec<_>>>()?;
            let complete_labels = match (&r.complete_causality, &r.planted_graph) {
                (Some(c), _) => Some(c.clone()),
                (None, Some(g)) => Some(CompleteCausalityList::from_graph(g)),
                (None, None) => None,
            };
            Ok(EventSequence { video_id: r.video_id.clone(), events, chain_labels: r.causality.clone(), complete_labels })
        })
        .collect()
}

/// Path of a video's container inside a corpus directory.
pub fn container_file_name(video_id: &str) -> PathBuf {
    PathBuf::from("features").join(format!("{video_id}.feat"))
}
