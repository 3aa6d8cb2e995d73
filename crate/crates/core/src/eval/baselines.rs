//! Constant and seeded-random reference predictors.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::types::{CausalGraph, EventSequence};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    AllCausal,
    AllNonCausal,
    /// Independent Bernoulli(`p`) per relation.
    SeededRandom { p: f64, seed: u64 },
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "all_causal" => Ok(Self::AllCausal),
            "all_noncausal" => Ok(Self::AllNonCausal),
            "seeded_random" => Ok(Self::SeededRandom { p: 0.5, seed: 0 }),
            other => Err(Error::Config(format!("unknown baseline kind {other:?}"))),
        }
    }
}

/// A label-free predictor for chains and complete graphs.
#[derive(Debug, Clone)]
pub struct BaselinePredictor {
    kind: BaselineKind,
}

fn video_rng(seed: u64, video_id: &str) -> ChaCha8Rng {
    // FNV-1a keeps per-video draws independent of evaluation order.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in video_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

impl BaselinePredictor {
    pub fn new(kind: BaselineKind) -> Self {
        Self { kind }
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn predict_chain(&self, seq: &EventSequence) -> Vec<bool> {
        let n = seq.n_events().saturating_sub(1);
        match self.kind {
            BaselineKind::AllCausal => vec![true; n],
            BaselineKind::AllNonCausal => vec![false; n],
            BaselineKind::SeededRandom { p, seed } => {
                let mut rng = video_rng(seed, &seq.video_id);
                (0..n).map(|_| rng.random_bool(p)).collect()
            }
        }
    }

    pub fn predict_graph(&self, seq: &EventSequence) -> CausalGraph {
        let n = seq.n_events();
        match self.kind {
            BaselineKind::AllCausal => CausalGraph::complete(n),
            BaselineKind::AllNonCausal => CausalGraph::empty(n),
            BaselineKind::SeededRandom { p, seed } => {
                let mut rng = video_rng(seed.wrapping_add(1), &seq.video_id);
                let mut g = CausalGraph::empty(n);
                for j in 1..n {
                    for i in 0..j {
                        if rng.random_bool(p) {
                            g.insert(i, j);
                        }
                    }
                }
                g
            }
        }
    }
}
