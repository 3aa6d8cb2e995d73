#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgcm::dataset::synthetic::{generate_split, SyntheticWorldConfig, Split};
use vgcm::model::{ModelConfig, Vgcm};
use vgcm::tensor::Mat;
use vgcm::training::TrainConfig;
use vgcm::types::{CompleteCausalityList, Event, EventSequence};

pub const FEATURE_DIM: usize = 8;
pub const FRAMES: usize = 2;

pub fn tiny_model_config(seed: u64) -> ModelConfig {
    ModelConfig { model_dim: 8, n_heads: 2, feature_dim: FEATURE_DIM, frames: FRAMES, seed, ..ModelConfig::default() }
}

pub fn tiny_model(seed: u64) -> Vgcm {
    Vgcm::new(tiny_model_config(seed)).unwrap()
}

pub fn tiny_train_config() -> TrainConfig {
    TrainConfig { model_dim: 8, n_heads: 2, feature_dim: FEATURE_DIM, frames: FRAMES, epochs: 2, batch_size: 3, lr: 1e-3, ..TrainConfig::default() }
}

pub fn tiny_world() -> SyntheticWorldConfig {
    SyntheticWorldConfig { n_videos: 6, n_test_videos: 4, n_stress_videos: 3, feature_dim: FEATURE_DIM, latent_dim: 4, frames: FRAMES, ..SyntheticWorldConfig::default() }
}

pub fn corpus(cfg: &SyntheticWorldConfig, split: Split, count: usize) -> Vec<EventSequence> {
    generate_split(cfg, split, count).iter().map(|v| v.to_sequence()).collect()
}

/// A labelled sequence with random content and random complete labels.
pub fn random_sequence(n: usize, seed: u64) -> EventSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = (0..n)
        .map(|i| Event {
            index: i,
            visual: Mat::from_vec(FRAMES, FEATURE_DIM, (0..FRAMES * FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()),
            caption: (0..rng.random_range(1..6)).map(|_| rng.random_range(3..200)).collect(),
            span: (i as f64, i as f64 + 1.0),
        })
        .collect();
    let items: Vec<Vec<bool>> = (1..n).map(|k| (0..k).map(|_| rng.random_bool(0.5)).collect()).collect();
    let complete = CompleteCausalityList::new(items).unwrap();
    EventSequence { video_id: format!("rand{seed}"), events, chain_labels: complete.chain_labels().to_vec(), complete_labels: Some(complete) }
}
