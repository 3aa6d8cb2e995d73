//! Causal chain and complete-graph inference.

mod emit;

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

pub use emit::{graph_to_dot, graph_to_json, GraphFile};

use crate::error::{Error, Result};
use crate::model::{Ctx, RelationLogit, VideoPass, Vgcm};
use crate::refinement::{AuxTextProvider, RefinementConfig, Refiner, TemplateAuxTexts};
use crate::tensor::Graph;
use crate::types::{CausalGraph, EventSequence};

/// Decoder runs spent on one or more videos.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceBudget {
    pub masked: usize,
    pub unmasked: usize,
    pub result: usize,
    /// Conditioned and single-slot runs made by causal refinement.
    pub refinement: usize,
}

impl InferenceBudget {
    /// Runs of the main dual-path test: masked, unmasked and result passes.
    pub fn forward_passes(&self) -> usize {
        self.masked + self.unmasked + self.result
    }
}

impl AddAssign for InferenceBudget {
    fn add_assign(&mut self, o: Self) {
        self.masked += o.masked;
        self.unmasked += o.unmasked;
        self.result += o.result;
        self.refinement += o.refinement;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub threshold: f64,
    pub refinement: RefinementConfig,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self { threshold: 0.5, refinement: RefinementConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainPrediction {
    pub video_id: String,
    pub logits: Vec<RelationLogit>,
    pub labels: Vec<bool>,
    pub budget: InferenceBudget,
}

/// A complete graph with the probability of every scored pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPrediction {
    pub video_id: String,
    pub graph: CausalGraph,
    /// `(i, j, p)` with 0-based `i < j`, ordered by `j` then `i`.
    pub probabilities: Vec<(usize, usize, f64)>,
    pub budget: InferenceBudget,
}

impl GraphPrediction {
    /// Re-thresholds the stored probabilities.
    pub fn with_threshold(&self, threshold: f64) -> CausalGraph {
        let edges = self.probabilities.iter().filter(|(_, _, p)| *p > threshold).map(|&(i, j, _)| (i, j));
        CausalGraph::from_edges(self.graph.n_events(), edges).expect("stored pairs are forward edges")
    }

    /// Predicted labels of the premises of the last event.
    pub fn last_row(&self, threshold: f64) -> Vec<bool> {
        let n = self.graph.n_events();
        self.probabilities.iter().filter(|(_, j, _)| *j == n - 1).map(|(_, _, p)| *p > threshold).collect()
    }
}

/// `(premise, target, logit)`, 0-based.
type Scored = (usize, usize, RelationLogit);

pub struct Inferencer<'a> {
    pub model: &'a Vgcm,
    pub options: InferenceOptions,
    pub texts: &'a dyn AuxTextProvider,
}

impl<'a> Inferencer<'a> {
    pub fn new(model: &'a Vgcm, options: InferenceOptions) -> Self {
        Self { model, options, texts: &TemplateAuxTexts }
    }

    pub fn with_texts(mut self, texts: &'a dyn AuxTextProvider) -> Self {
        self.texts = texts;
        self
    }

    fn check(&self, seq: &EventSequence) -> Result<()> {
        if seq.n_events() < 2 {
            return Err(Error::record(&seq.video_id, "inference needs at least two events"));
        }
        Ok(())
    }

    /// Scores `(i, j)` for every target in `targets` and every `i < j`,
    /// using the first `n_premises` events as the decoder memory.
    fn score(&self, seq: &EventSequence, n_premises: usize, targets: &[usize]) -> Result<(Vec<Scored>, InferenceBudget)> {
        let g = Graph::new(self.model.params());
        let cx = Ctx::new(&g);
        let pass = VideoPass::new(self.model, &cx, seq, n_premises);
        let refiner = Refiner::new(&pass, self.options.refinement, self.texts);
        let mut budget = InferenceBudget { unmasked: 1, ..InferenceBudget::default() };
        let unmasked = pass.unmasked();
        let masked: Vec<_> = (0..n_premises).map(|i| pass.with_mask(&[i])).collect();
        budget.masked = n_premises;
        let mut out = Vec::new();
        for &j in targets {
            let o_j = pass.result(j);
            budget.result += 1;
            let o_p = unmasked.row(j);
            for (i, m) in masked.iter().enumerate().take(j) {
                let o_m = refiner.refine(m.row(j), i, j)?;
                let logit = self.model.relation_logit(&cx, o_m, o_p, o_j).item();
                out.push((i, j, RelationLogit { logit }));
            }
        }
        budget.refinement = refiner.passes();
        Ok((out, budget))
    }

    /// Relation of every premise to the last event.
    pub fn infer_chain(&self, seq: &EventSequence) -> Result<ChainPrediction> {
        self.check(seq)?;
        let n = seq.n_events();
        let (scores, budget) = self.score(seq, n - 1, &[n - 1])?;
        let logits: Vec<_> = scores.into_iter().map(|(_, _, l)| l).collect();
        let labels = logits.iter().map(|l| l.decide(self.options.threshold)).collect();
        Ok(ChainPrediction { video_id: seq.video_id.clone(), logits, labels, budget })
    }

    /// All pairs from one set of masked and unmasked runs: target `j` reads
    /// slot `j` of the runs already made for the chain.
    pub fn infer_complete_graph(&self, seq: &EventSequence) -> Result<GraphPrediction> {
        self.check(seq)?;
        let n = seq.n_events();
        let targets: Vec<usize> = (1..n).rev().collect();
        let (scores, budget) = self.score(seq, n - 1, &targets)?;
        Ok(self.assemble(seq, scores, budget))
    }

    /// Oracle: treats every event in turn as the result and reruns the
    /// chain test on the prefix ending there.
    pub fn infer_complete_graph_regressive(&self, seq: &EventSequence) -> Result<GraphPrediction> {
        self.check(seq)?;
        let n = seq.n_events();
        let mut scores = Vec::new();
        let mut budget = InferenceBudget::default();
        for j in (1..n).rev() {
            let (s, b) = self.score(seq, j, &[j])?;
            scores.extend(s);
            budget += b;
        }
        Ok(self.assemble(seq, scores, budget))
    }

    fn assemble(&self, seq: &EventSequence, mut scores: Vec<Scored>, budget: InferenceBudget) -> GraphPrediction {
        scores.sort_by_key(|&(i, j, _)| (j, i));
        let probabilities: Vec<_> = scores.iter().map(|&(i, j, l)| (i, j, l.probability())).collect();
        let edges = scores.iter().filter(|(_, _, l)| l.decide(self.options.threshold)).map(|&(i, j, _)| (i, j));
        let graph = CausalGraph::from_edges(seq.n_events(), edges).expect("scored pairs are forward edges");
        GraphPrediction { video_id: seq.video_id.clone(), graph, probabilities, budget }
    }
}

/// Applies `f` to every item on up to `jobs` threads, keeping input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Masked runs of the regressive oracle for `n` events.
pub fn regressive_masked_passes(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Extra masked runs the regressive oracle spends beyond the chain test.
pub fn regressive_extra_passes(n: usize) -> usize {
    (n - 1) * (n - 2) / 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tensor::Mat;
    use crate::types::Event;

    fn tiny() -> Vgcm {
        Vgcm::new(ModelConfig { model_dim: 8, n_heads: 2, feature_dim: 3, frames: 2, ..ModelConfig::default() }).unwrap()
    }

    fn seq(n: usize) -> EventSequence {
        let events = (0..n)
            .map(|i| Event {
                index: i,
                visual: Mat::from_vec(2, 3, (0..6).map(|x| ((x + i) % 3) as f64).collect()),
                caption: vec![30 + i as u32, 40],
                span: (i as f64, i as f64 + 1.0),
            })
            .collect();
        EventSequence { video_id: "v".into(), events, chain_labels: vec![false; n - 1], complete_labels: None }
    }

    #[test]
    fn chain_pass_counts() {
        let m = tiny();
        let inf = Inferencer::new(&m, InferenceOptions::default());
        let p = inf.infer_chain(&seq(5)).unwrap();
        assert_eq!((p.budget.masked, p.budget.unmasked, p.budget.result), (4, 1, 1));
        assert_eq!(p.budget.forward_passes(), 6);
    }

    #[test]
    fn graph_last_row_matches_chain() {
        let m = tiny();
        let inf = Inferencer::new(&m, InferenceOptions::default());
        let s = seq(6);
        let chain = inf.infer_chain(&s).unwrap();
        let graph = inf.infer_complete_graph(&s).unwrap();
        let row: Vec<f64> = graph.probabilities.iter().filter(|t| t.1 == 5).map(|t| t.2).collect();
        let chain_p: Vec<f64> = chain.logits.iter().map(|l| l.probability()).collect();
        assert_eq!(row, chain_p);
        assert_eq!(graph.budget.masked, 5);
        assert_eq!(graph.budget.result, 5);
        let oracle = inf.infer_complete_graph_regressive(&s).unwrap();
        assert_eq!(oracle.budget.masked, regressive_masked_passes(6));
        assert_eq!(oracle.budget.masked - graph.budget.masked, regressive_extra_passes(6));
    }

    #[test]
    fn parallel_map_keeps_order() {
        let v: Vec<usize> = (0..17).collect();
        assert_eq!(parallel_map(&v, 4, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
