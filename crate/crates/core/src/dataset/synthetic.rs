//! Synthetic planted-graph corpora.
//!
//! A world fixes, from `world_seed`, a set of action types with a cause
//! propensity and a receptivity each, the rule `propensity(a) +
//! receptivity(b) > rule_threshold` that allows an edge of type `a → b`,
//! and the linear maps of the feature model. Videos draw actions, then edges
//! among rule-allowed pairs, then latents:
//!
//! ```text
//! u_i   = action_embedding(a_i) + N(0, I)
//! eff_j = cause_strength · Σ_{i ∈ parents(j)} A u_i
//! x_j   = P [u_j ; eff_j]         (per frame: + noise_std · N(0, I))
//! ```
//!
//! Non-edges share nothing but the world constants. Confounders are relay
//! chains `a → b → c` without `a → c`; illusory pairs share an object token
//! or touch in time while carrying no edge.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::annotation::{save_annotations, AnnotationRecord};
use super::features::{container_file_name, write_container, InMemoryFeatures};
use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::types::{CausalGraph, CompleteCausalityList, Event, EventSequence, MAX_EVENTS, MIN_EVENTS};
use crate::vocab::{Vocab, ACTIONS, MODIFIERS, OBJECTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorldConfig {
    /// Training split size.
    pub n_videos: usize,
    pub n_test_videos: usize,
    /// Videos whose relations are all non-causal.
    pub n_stress_videos: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub feature_dim: usize,
    pub frames: usize,
    pub latent_dim: usize,
    pub cause_strength: f64,
    pub noise_std: f64,
    pub confounder_rate: f64,
    pub illusory_rate: f64,
    pub n_action_types: usize,
    pub rule_threshold: f64,
    /// Probability that a rule-allowed pair carries an edge.
    pub edge_prob: f64,
    /// Minimum causes of the last event; applies to train and test splits.
    pub min_chain_causes: usize,
    pub seed: u64,
    pub world_seed: u64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            n_videos: 500,
            n_test_videos: 100,
            n_stress_videos: 100,
            min_events: MIN_EVENTS,
            max_events: MAX_EVENTS,
            feature_dim: 64,
            frames: 8,
            latent_dim: 16,
            cause_strength: 2.0,
            noise_std: 0.1,
            confounder_rate: 0.2,
            illusory_rate: 0.2,
            n_action_types: 16,
            rule_threshold: 0.9,
            edge_prob: 0.9,
            min_chain_causes: 2,
            seed: 0,
            world_seed: 0,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_videos < 1 {
            return bad("n_videos must be \u{2265} 1".into());
        }
        if !(MIN_EVENTS <= self.min_events && self.min_events <= self.max_events && self.max_events <= MAX_EVENTS) {
            return bad(format!("event range [{}, {}] must lie within [{MIN_EVENTS}, {MAX_EVENTS}]", self.min_events, self.max_events));
        }
        for (name, v) in [("confounder_rate", self.confounder_rate), ("illusory_rate", self.illusory_rate), ("edge_prob", self.edge_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.cause_strength >= 0.0 && self.cause_strength.is_finite()) {
            return bad(format!("cause_strength must be \u{2265} 0, got {}", self.cause_strength));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be \u{2265} 0, got {}", self.noise_std));
        }
        if self.frames < 1 || self.latent_dim < 1 {
            return bad("frames and latent_dim must be \u{2265} 1".into());
        }
        if 2 * self.latent_dim > self.feature_dim {
            return bad(format!("feature_dim {} must be at least 2 \u{00d7} latent_dim {}", self.feature_dim, self.latent_dim));
        }
        if !(2..=ACTIONS.len()).contains(&self.n_action_types) {
            return bad(format!("n_action_types must lie in [2, {}]", ACTIONS.len()));
        }
        if self.min_chain_causes >= self.min_events {
            return bad(format!("min_chain_causes {} needs more premises than min_events allows", self.min_chain_causes));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which split a video belongs to; part of its id and its random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Stress,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Stress => "stress",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
            Split::Stress => 3,
        }
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// World constants shared by every split generated from one `world_seed`.
#[derive(Debug, Clone)]
pub struct World {
    pub propensity: Vec<f64>,
    pub receptivity: Vec<f64>,
    pub action_embedding: Mat,
    /// Orthogonal `latent_dim × latent_dim` coupling map.
    pub coupling: Mat,
    /// `feature_dim × 2·latent_dim` projection.
    pub projection: Mat,
}

impl World {
    pub fn new(cfg: &SyntheticWorldConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.world_seed);
        let k = cfg.n_action_types;
        let d = cfg.latent_dim;
        let propensity = (0..k).map(|_| normal(&mut rng)).collect();
        let receptivity = (0..k).map(|_| normal(&mut rng)).collect();
        let action_embedding = Mat::from_vec(k, d, (0..k * d).map(|_| normal(&mut rng)).collect());
        let coupling = orthogonal(d, &mut rng);
        let scale = 1.0 / ((2 * d) as f64).sqrt();
        let projection =
            Mat::from_vec(cfg.feature_dim, 2 * d, (0..cfg.feature_dim * 2 * d).map(|_| scale * normal(&mut rng)).collect());
        Self { propensity, receptivity, action_embedding, coupling, projection }
    }

    pub fn n_actions(&self) -> usize {
        self.propensity.len()
    }

    /// Whether an edge of type `a → b` is allowed.
    pub fn rule(&self, cfg: &SyntheticWorldConfig, a: usize, b: usize) -> bool {
        self.propensity[a] + self.receptivity[b] > cfg.rule_threshold
    }
}

/// Gram-Schmidt on a Gaussian matrix.
fn orthogonal(d: usize, rng: &mut impl Rng) -> Mat {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut m = Mat::zeros(d, d);
    for (j, c) in cols.iter().enumerate() {
        for (i, &x) in c.iter().enumerate() {
            m.set(i, j, x);
        }
    }
    m
}

/// Kind of an injected illusory pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IllusoryKind {
    SharedObject,
    Adjacent,
}

/// Everything about one video except its sampled latents.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSkeleton {
    pub video_id: String,
    pub actions: Vec<usize>,
    /// Two object indices per event.
    pub objects: Vec<[usize; 2]>,
    pub subjects: Vec<usize>,
    pub modifiers: Vec<usize>,
    pub timestamps: Vec<(f64, f64)>,
    pub duration: f64,
    pub graph: CausalGraph,
    /// Relay chains `(a, b, c)`.
    pub confounders: Vec<(usize, usize, usize)>,
    pub illusory: Vec<(usize, usize, IllusoryKind)>,
}

const SUBJECTS: [&str; 4] = ["person", "man", "woman", "child"];

impl VideoSkeleton {
    pub fn n_events(&self) -> usize {
        self.actions.len()
    }

    pub fn caption(&self, i: usize) -> String {
        let [o0, o1] = self.objects[i];
        format!(
            "a {} {} the {} {} with the {} .",
            SUBJECTS[self.subjects[i]], ACTIONS[self.actions[i]], MODIFIERS[self.modifiers[i]], OBJECTS[o0], OBJECTS[o1]
        )
    }

    pub fn chain_labels(&self) -> Vec<bool> {
        let n = self.n_events();
        (0..n - 1).map(|i| self.graph.contains(i, n - 1)).collect()
    }
}

/// A generated video: skeleton plus per-event frame features.
#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub skeleton: VideoSkeleton,
    pub features: Vec<Mat>,
}

impl SyntheticVideo {
    pub fn record(&self, features_path: Option<String>) -> AnnotationRecord {
        let s = &self.skeleton;
        AnnotationRecord {
            video_id: s.video_id.clone(),
            duration: s.duration,
            timestamps: s.timestamps.clone(),
            sentences: (0..s.n_events()).map(|i| s.caption(i)).collect(),
            causality: s.chain_labels(),
            complete_causality: Some(CompleteCausalityList::from_graph(&s.graph)),
            planted_graph: Some(s.graph.clone()),
            features_path,
        }
    }

    pub fn to_sequence(&self) -> EventSequence {
        let s = &self.skeleton;
        let vocab = Vocab::get();
        let events = (0..s.n_events())
            .map(|i| Event {
                index: i,
                visual: self.features[i].clone(),
                caption: vocab.encode(&s.caption(i)),
                span: s.timestamps[i],
            })
            .collect();
        EventSequence {
            video_id: s.video_id.clone(),
            events,
            chain_labels: s.chain_labels(),
            complete_labels: Some(CompleteCausalityList::from_graph(&s.graph)),
        }
    }
}

fn video_rng(cfg: &SyntheticWorldConfig, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream((split.stream() << 32) | index as u64);
    rng
}

fn draw_timestamps(n: usize, touching: &[usize], rng: &mut impl Rng) -> (Vec<(f64, f64)>, f64) {
    let mut t = round_time(rng.random_range(0.0..2.0));
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let end = round_time(t + rng.random_range(2.0..8.0));
        out.push((t, end));
        let gap = rng.random_range(0.5..2.0);
        t = if touching.contains(&i) { end } else { round_time(end + gap) };
    }
    let duration = round_time(t + rng.random_range(0.0..2.0));
    (out, duration)
}

fn round_time(t: f64) -> f64 {
    (t * 100.0).round() / 100.0
}

/// Samples the structure of one main-split video.
fn draw_skeleton(cfg: &SyntheticWorldConfig, world: &World, video_id: String, rng: &mut impl Rng) -> VideoSkeleton {
    loop {
        let n = rng.random_range(cfg.min_events..=cfg.max_events);
        let k = world.n_actions();
        let mut actions: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let mut objects: Vec<[usize; 2]> = (0..n).map(|_| distinct_objects(rng)).collect();

        let mut confounders = Vec::new();
        if rng.random_bool(cfg.confounder_rate) {
            let mut idx = sample_distinct(n, 3, rng);
            idx.sort_unstable();
            let (a, b, c) = (idx[0], idx[1], idx[2]);
            for _ in 0..1000 {
                let (x, y, z) = (rng.random_range(0..k), rng.random_range(0..k), rng.random_range(0..k));
                if world.rule(cfg, x, y) && world.rule(cfg, y, z) {
                    actions[a] = x;
                    actions[b] = y;
                    actions[c] = z;
                    confounders.push((a, b, c));
                    break;
                }
            }
        }

        let mut graph = CausalGraph::empty(n);
        for j in 1..n {
            for i in 0..j {
                if world.rule(cfg, actions[i], actions[j]) && rng.random_bool(cfg.edge_prob) {
                    graph.insert(i, j);
                }
            }
        }
        for &(a, b, c) in &confounders {
            graph.insert(a, b);
            graph.insert(b, c);
            graph.remove(a, c);
        }

        let mut illusory = Vec::new();
        let mut touching = Vec::new();
        if rng.random_bool(cfg.illusory_rate) {
            let protected = |i: usize, j: usize| confounders.iter().any(|&(a, b, c)| (i, j) == (a, b) || (i, j) == (b, c));
            if rng.random_bool(0.5) {
                let i = rng.random_range(0..n - 1);
                if !protected(i, i + 1) {
                    graph.remove(i, i + 1);
                    touching.push(i);
                    illusory.push((i, i + 1, IllusoryKind::Adjacent));
                }
            } else {
                let pair = sample_distinct(n, 2, rng);
                let (i, j) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
                if !protected(i, j) {
                    graph.remove(i, j);
                    objects[j][0] = objects[i][0];
                    if objects[j][1] == objects[j][0] {
                        objects[j][1] = (objects[j][1] + 1) % OBJECTS.len();
                    }
                    illusory.push((i, j, IllusoryKind::SharedObject));
                }
            }
        }

        let causes = (0..n - 1).filter(|&i| graph.contains(i, n - 1)).count();
        if causes < cfg.min_chain_causes {
            continue;
        }
        let subjects = (0..n).map(|_| rng.random_range(0..SUBJECTS.len())).collect();
        let modifiers = (0..n).map(|_| rng.random_range(0..MODIFIERS.len())).collect();
        let (timestamps, duration) = draw_timestamps(n, &touching, rng);
        return VideoSkeleton {
            video_id,
            actions,
            objects,
            subjects,
            modifiers,
            timestamps,
            duration,
            graph,
            confounders,
            illusory,
        };
    }
}

/// A stress video: no edges at all, and every premise shares an object with
/// the last event or touches its successor in time.
fn draw_stress_skeleton(cfg: &SyntheticWorldConfig, world: &World, video_id: String, rng: &mut impl Rng) -> VideoSkeleton {
    let n = rng.random_range(cfg.min_events..=cfg.max_events);
    let actions: Vec<usize> = (0..n).map(|_| rng.random_range(0..world.n_actions())).collect();
    let mut objects: Vec<[usize; 2]> = (0..n).map(|_| distinct_objects(rng)).collect();
    let mut illusory = Vec::new();
    let mut touching = Vec::new();
    let last = n - 1;
    for i in 0..last {
        if rng.random_bool(0.5) {
            objects[i][0] = objects[last][rng.random_range(0..2)];
            if objects[i][1] == objects[i][0] {
                objects[i][1] = (objects[i][1] + 1) % OBJECTS.len();
            }
            illusory.push((i, last, IllusoryKind::SharedObject));
        } else {
            touching.push(i);
            illusory.push((i, i + 1, IllusoryKind::Adjacent));
        }
    }
    let subjects = (0..n).map(|_| rng.random_range(0..SUBJECTS.len())).collect();
    let modifiers = (0..n).map(|_| rng.random_range(0..MODIFIERS.len())).collect();
    let (timestamps, duration) = draw_timestamps(n, &touching, rng);
    VideoSkeleton {
        video_id,
        actions,
        objects,
        subjects,
        modifiers,
        timestamps,
        duration,
        graph: CausalGraph::empty(n),
        confounders: Vec::new(),
        illusory,
    }
}

fn distinct_objects(rng: &mut impl Rng) -> [usize; 2] {
    let a = rng.random_range(0..OBJECTS.len());
    let b = (a + rng.random_range(1..OBJECTS.len())) % OBJECTS.len();
    [a, b]
}

fn sample_distinct(n: usize, m: usize, rng: &mut impl Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, n, m).into_vec()
}

/// Per-event latent vectors `u_i` (rows).
pub fn draw_latents(cfg: &SyntheticWorldConfig, world: &World, skeleton: &VideoSkeleton, rng: &mut impl Rng) -> Mat {
    let d = cfg.latent_dim;
    let n = skeleton.n_events();
    let mut u = Mat::zeros(n, d);
    for (i, &a) in skeleton.actions.iter().enumerate() {
        for c in 0..d {
            u.set(i, c, world.action_embedding.get(a, c) + normal(rng));
        }
    }
    u
}

/// Noise-free event features `x_j = P [u_j ; eff_j]` for given latents (rows).
pub fn event_means(cfg: &SyntheticWorldConfig, world: &World, graph: &CausalGraph, latents: &Mat) -> Mat {
    let d = cfg.latent_dim;
    let n = latents.rows();
    let coupled = latents.matmul(&world.coupling.transpose());
    let mut z = Mat::zeros(n, 2 * d);
    for j in 0..n {
        z.row_mut(j)[..d].copy_from_slice(latents.row(j));
        for i in graph.parents(j) {
            for c in 0..d {
                let v = z.get(j, d + c) + cfg.cause_strength * coupled.get(i, c);
                z.set(j, d + c, v);
            }
        }
    }
    z.matmul(&world.projection.transpose())
}

/// Draws fresh latents and frame noise for a fixed skeleton. Values are
/// rounded to f32 so in-memory and on-disk corpora agree exactly.
pub fn sample_features(cfg: &SyntheticWorldConfig, world: &World, skeleton: &VideoSkeleton, rng: &mut impl Rng) -> Vec<Mat> {
    let latents = draw_latents(cfg, world, skeleton, rng);
    let means = event_means(cfg, world, &skeleton.graph, &latents);
    (0..skeleton.n_events())
        .map(|j| {
            let mut m = Mat::zeros(cfg.frames, cfg.feature_dim);
            for f in 0..cfg.frames {
                for c in 0..cfg.feature_dim {
                    let x = means.get(j, c) + cfg.noise_std * normal(rng);
                    m.set(f, c, f64::from(x as f32));
                }
            }
            m
        })
        .collect()
}

pub fn generate_video(cfg: &SyntheticWorldConfig, world: &World, split: Split, index: usize) -> SyntheticVideo {
    let mut rng = video_rng(cfg, split, index);
    let id = format!("{}_{index:05}", split.name());
    let skeleton = match split {
        Split::Stress => draw_stress_skeleton(cfg, world, id, &mut rng),
        _ => draw_skeleton(cfg, world, id, &mut rng),
    };
    let features = sample_features(cfg, world, &skeleton, &mut rng);
    SyntheticVideo { skeleton, features }
}

/// Generates `count` videos of a split.
pub fn generate_split(cfg: &SyntheticWorldConfig, split: Split, count: usize) -> Vec<SyntheticVideo> {
    let world = World::new(cfg);
    (0..count).map(|i| generate_video(cfg, &world, split, i)).collect()
}

/// The training split as event sequences.
pub fn generate_synthetic_corpus(cfg: &SyntheticWorldConfig) -> Result<Vec<EventSequence>> {
    cfg.validate()?;
    Ok(generate_split(cfg, Split::Train, cfg.n_videos).iter().map(SyntheticVideo::to_sequence).collect())
}

/// Summary printed after synthesis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub split: &'static str,
    pub videos: usize,
    pub events: usize,
    pub edges: usize,
    pub pairs: usize,
    pub chain_positive_fraction: f64,
}

impl CorpusSummary {
    pub fn of(split: Split, videos: &[SyntheticVideo]) -> Self {
        let mut s = Self { split: split.name(), videos: videos.len(), events: 0, edges: 0, pairs: 0, chain_positive_fraction: 0.0 };
        let (mut pos, mut rel) = (0, 0);
        for v in videos {
            let n = v.skeleton.n_events();
            s.events += n;
            s.edges += v.skeleton.graph.edge_count();
            s.pairs += n * (n - 1) / 2;
            let chain = v.skeleton.chain_labels();
            pos += chain.iter().filter(|&&b| b).count();
            rel += chain.len();
        }
        s.chain_positive_fraction = if rel > 0 { pos as f64 / rel as f64 } else { 0.0 };
        s
    }

    pub fn edge_density(&self) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.edges as f64 / self.pairs as f64
        }
    }
}

/// Writes `<split>.json` manifests and per-video feature containers under
/// `dir`. Returns one summary per non-empty split.
pub fn write_corpus(cfg: &SyntheticWorldConfig, dir: &Path) -> Result<Vec<CorpusSummary>> {
    cfg.validate()?;
    let features_dir = dir.join("features");
    std::fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
    let world = World::new(cfg);
    let mut summaries = Vec::new();
    for (split, count) in [(Split::Train, cfg.n_videos), (Split::Test, cfg.n_test_videos), (Split::Stress, cfg.n_stress_videos)] {
        if count == 0 {
            continue;
        }
        let videos: Vec<SyntheticVideo> = (0..count).map(|i| generate_video(cfg, &world, split, i)).collect();
        let mut records = Vec::with_capacity(count);
        for v in &videos {
            let rel = container_file_name(&v.skeleton.video_id);
            write_container(&dir.join(&rel), &v.features)?;
            records.push(v.record(Some(rel.to_string_lossy().replace('\\', "/"))));
        }
        save_annotations(&dir.join(format!("{}.json", split.name())), &records)?;
        summaries.push(CorpusSummary::of(split, &videos));
    }
    Ok(summaries)
}

/// In-memory features for a list of generated videos.
pub fn feature_store(videos: &[SyntheticVideo]) -> Result<InMemoryFeatures> {
    let first = videos.first().ok_or_else(|| Error::Schema("empty corpus".into()))?;
    let (frames, dim) = first.features[0].shape();
    let mut store = InMemoryFeatures::new(frames, dim);
    for v in videos {
        store.insert(v.skeleton.video_id.clone(), v.features.clone())?;
    }
    Ok(store)
}
