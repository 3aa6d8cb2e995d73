//! Domain vocabulary: events, sequences, causal graphs and label lists.
//!
//! Indices are 0-based in memory. Files and reports use 1-based event numbers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Smallest number of events in a video.
pub const MIN_EVENTS: usize = 4;
/// Largest number of events in a video.
pub const MAX_EVENTS: usize = 11;
/// Maximum caption / auxiliary text length in tokens.
pub const MAX_TEXT_LEN: usize = 50;

/// One video sub-event `e_n = {v_n, c_n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub index: usize,
    /// `frames × feature_dim` visual features.
    pub visual: Mat,
    pub caption: Vec<u32>,
    pub span: (f64, f64),
}

/// All events of a video together with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    pub video_id: String,
    pub events: Vec<Event>,
    /// `r`: relation of every premise to the last event.
    pub chain_labels: Vec<bool>,
    pub complete_labels: Option<CompleteCausalityList>,
}

impl EventSequence {
    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    /// Ground truth graph, if the complete labels are known.
    pub fn graph(&self) -> Option<CausalGraph> {
        self.complete_labels.as_ref().map(CompleteCausalityList::to_graph)
    }
}

/// A broken invariant reported by [`validate_sequence`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

fn violation(field: &'static str, rule: impl Into<String>) -> Violation {
    Violation { field, rule: rule.into() }
}

/// Checks every structural invariant of a sequence. Returns an empty list when
/// the sequence is well formed.
pub fn validate_sequence(seq: &EventSequence) -> Vec<Violation> {
    let n = seq.events.len();
    let mut out = Vec::new();
    if n < MIN_EVENTS {
        out.push(violation("events", format!("N={n} < {MIN_EVENTS}")));
    }
    if n > MAX_EVENTS {
        out.push(violation("events", format!("N={n} > {MAX_EVENTS}")));
    }
    if seq.chain_labels.len() + 1 != n {
        out.push(violation(
            "chain_labels",
            format!("chain_labels length {} \u{2260} N\u{2212}1={}", seq.chain_labels.len(), n.saturating_sub(1)),
        ));
    }
    for (pos, e) in seq.events.iter().enumerate() {
        if e.index != pos {
            out.push(violation("events", format!("event at position {pos} has index {}", e.index)));
        }
        if e.visual.rows() == 0 {
            out.push(violation("visual", format!("event {} has no frames", pos + 1)));
        }
        let (s, t) = e.span;
        if !(s >= 0.0 && s < t) {
            out.push(violation("span", format!("event {} span ({s}, {t}) is not 0 \u{2264} start < end", pos + 1)));
        }
        if e.caption.is_empty() {
            out.push(violation("caption", format!("event {} caption is empty", pos + 1)));
        }
        if e.caption.len() > MAX_TEXT_LEN {
            out.push(violation("caption", format!("event {} caption longer than {MAX_TEXT_LEN}", pos + 1)));
        }
    }
    for (pos, w) in seq.events.windows(2).enumerate() {
        if w[0].span.0 >= w[1].span.0 {
            out.push(violation("events", format!("events {} and {} are not ordered by start", pos + 1, pos + 2)));
        }
    }
    if let Some(c) = &seq.complete_labels {
        if c.n_events() != n {
            out.push(violation("complete_labels", format!("covers {} events, sequence has {n}", c.n_events())));
        }
    }
    out
}

/// [`validate_sequence`] plus the training-set rule of at least two causes.
pub fn validate_training_sequence(seq: &EventSequence) -> Vec<Violation> {
    let mut out = validate_sequence(seq);
    let causes = seq.chain_labels.iter().filter(|&&b| b).count();
    if causes < 2 {
        out.push(violation("chain_labels", format!("{causes} causal premises, training sequences need at least 2")));
    }
    out
}

/// Per-target relation lists. Item `k` holds the relations from events
/// `0..=k` to event `k + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<bool>>", into = "Vec<Vec<bool>>")]
pub struct CompleteCausalityList {
    items: Vec<Vec<bool>>,
}

impl CompleteCausalityList {
    pub fn new(items: Vec<Vec<bool>>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Schema("complete causality list is empty".into()));
        }
        for (k, item) in items.iter().enumerate() {
            if item.len() != k + 1 {
                return Err(Error::Schema(format!("complete causality item {k} has length {}, expected {}", item.len(), k + 1)));
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[Vec<bool>] {
        &self.items
    }

    pub fn n_events(&self) -> usize {
        self.items.len() + 1
    }

    /// Relations of all premises to the last event.
    pub fn chain_labels(&self) -> &[bool] {
        self.items.last().expect("non-empty by construction")
    }

    pub fn to_graph(&self) -> CausalGraph {
        let mut g = CausalGraph::empty(self.n_events());
        for (k, item) in self.items.iter().enumerate() {
            for (i, &b) in item.iter().enumerate() {
                if b {
                    g.insert(i, k + 1);
                }
            }
        }
        g
    }

    pub fn from_graph(g: &CausalGraph) -> Self {
        let n = g.n_events();
        let items = (1..n).map(|j| (0..j).map(|i| g.contains(i, j)).collect()).collect();
        Self { items }
    }
}

impl TryFrom<Vec<Vec<bool>>> for CompleteCausalityList {
    type Error = Error;

    fn try_from(items: Vec<Vec<bool>>) -> Result<Self> {
        Self::new(items)
    }
}

impl From<CompleteCausalityList> for Vec<Vec<bool>> {
    fn from(c: CompleteCausalityList) -> Self {
        c.items
    }
}

/// Last item of a complete causality list.
pub fn chain_labels_from_complete(c: &CompleteCausalityList) -> Vec<bool> {
    c.chain_labels().to_vec()
}

pub fn graph_from_complete(c: &CompleteCausalityList) -> CausalGraph {
    c.to_graph()
}

/// Forward-in-time directed graph over the events of one video.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CausalGraph {
    n_events: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl CausalGraph {
    pub fn empty(n_events: usize) -> Self {
        Self { n_events, edges: BTreeSet::new() }
    }

    pub fn complete(n_events: usize) -> Self {
        let edges = (0..n_events).flat_map(|j| (0..j).map(move |i| (i, j))).collect();
        Self { n_events, edges }
    }

    /// Builds a graph from 0-based `(cause, effect)` pairs.
    pub fn from_edges(n_events: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut g = Self::empty(n_events);
        for (i, j) in edges {
            if i >= j || j >= n_events {
                return Err(Error::Schema(format!("edge ({}, {}) is not forward within {n_events} events", i + 1, j + 1)));
            }
            g.edges.insert((i, j));
        }
        Ok(g)
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    /// Adds a 0-based edge. Panics unless `i < j < n`.
    pub fn insert(&mut self, i: usize, j: usize) {
        assert!(i < j && j < self.n_events, "edge ({i},{j}) violates i < j < {}", self.n_events);
        self.edges.insert((i, j));
    }

    pub fn remove(&mut self, i: usize, j: usize) {
        self.edges.remove(&(i, j));
    }

    /// Causes of event `j`.
    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..j).filter(|&i| self.contains(i, j)).collect()
    }

    /// 1-based edge list as written to files.
    pub fn edges_one_based(&self) -> Vec<[usize; 2]> {
        self.edges.iter().map(|&(i, j)| [i + 1, j + 1]).collect()
    }
}

/// Decoder outputs of one dual-path forward.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutputs {
    /// `O^p`: unmasked path, one row per premise token.
    pub o_p: Mat,
    /// `O^m_k` keyed by the sorted masked premise set.
    pub o_m: BTreeMap<Vec<usize>, Mat>,
    /// `O_N` (or `O_j` for an interior target).
    pub o_result: Mat,
    /// `F^p_N`: result features predicted by the unmasked path.
    pub f_p_result: Mat,
}

/// Auxiliary reasoning texts for the refinement module.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuxiliaryTexts {
    /// `T_cot`: chain-of-thought text from the predecessor to the result.
    pub cot: Vec<u32>,
    /// `c_k^0`: existence-only description of the masked event.
    pub existence: Vec<u32>,
}

/// Weights of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_r: f64,
    pub lambda_v: f64,
    pub lambda_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_c: 1.0, lambda_r: 4.0, lambda_v: 0.25, lambda_s: 0.05 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_c", self.lambda_c), ("lambda_r", self.lambda_r), ("lambda_v", self.lambda_v), ("lambda_s", self.lambda_s)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize, labels: usize) -> EventSequence {
        let events = (0..n)
            .map(|i| Event { index: i, visual: Mat::zeros(2, 3), caption: vec![5, 6], span: (i as f64, i as f64 + 0.5) })
            .collect();
        EventSequence { video_id: "v".into(), events, chain_labels: vec![true; labels], complete_labels: None }
    }

    #[test]
    fn valid_sequence_has_no_violations() {
        assert!(validate_sequence(&seq(5, 4)).is_empty());
    }

    #[test]
    fn short_label_vector_is_reported() {
        let v = validate_sequence(&seq(5, 3));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "chain_labels length 3 \u{2260} N\u{2212}1=4");
    }

    #[test]
    fn too_few_events_is_reported() {
        let v = validate_sequence(&seq(3, 2));
        assert_eq!(v[0].rule, "N=3 < 4");
    }

    #[test]
    fn chain_labels_are_the_last_item() {
        let c = CompleteCausalityList::new(vec![vec![true], vec![false, true], vec![true, false, true]]).unwrap();
        assert_eq!(chain_labels_from_complete(&c), vec![true, false, true]);
        let c = CompleteCausalityList::new(vec![
            vec![false],
            vec![true, true],
            vec![false, false, true],
            vec![true, false, false, true],
        ])
        .unwrap();
        assert_eq!(chain_labels_from_complete(&c), vec![true, false, false, true]);
    }

    #[test]
    fn bad_item_length_is_a_schema_error() {
        let err = CompleteCausalityList::new(vec![vec![true], vec![false, true], vec![true, false]]);
        assert!(matches!(err, Err(Error::Schema(_))));
    }

    #[test]
    fn graph_edges_follow_item_indexing() {
        let c = CompleteCausalityList::new(vec![vec![true], vec![false, true], vec![true, false, true]]).unwrap();
        assert_eq!(graph_from_complete(&c).edges_one_based(), vec![[1, 2], [1, 4], [2, 3], [3, 4]]);
        let all = CompleteCausalityList::new((0..3).map(|k| vec![true; k + 1]).collect()).unwrap();
        assert_eq!(all.to_graph().edge_count(), 6);
        let none = CompleteCausalityList::new((0..3).map(|k| vec![false; k + 1]).collect()).unwrap();
        assert_eq!(none.to_graph().edge_count(), 0);
    }

    #[test]
    fn backward_edges_are_rejected() {
        assert!(CausalGraph::from_edges(4, [(2, 1)]).is_err());
        assert!(CausalGraph::from_edges(4, [(1, 1)]).is_err());
        assert!(CausalGraph::from_edges(4, [(1, 4)]).is_err());
    }

    #[test]
    fn default_loss_weights() {
        let w = LossWeights::default();
        assert_eq!((w.lambda_c, w.lambda_r, w.lambda_v, w.lambda_s), (1.0, 4.0, 0.25, 0.05));
    }
}
