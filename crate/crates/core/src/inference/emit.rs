//! JSON edge lists and DOT text for inferred graphs.

use serde::{Deserialize, Serialize};

use super::GraphPrediction;

/// On-disk graph record; indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub video_id: String,
    pub n_events: usize,
    pub edges: Vec<[usize; 2]>,
    pub probabilities: Vec<(usize, usize, f64)>,
}

impl From<&GraphPrediction> for GraphFile {
    fn from(p: &GraphPrediction) -> Self {
        Self {
            video_id: p.video_id.clone(),
            n_events: p.graph.n_events(),
            edges: p.graph.edges_one_based(),
            probabilities: p.probabilities.iter().map(|&(i, j, q)| (i + 1, j + 1, q)).collect(),
        }
    }
}

pub fn graph_to_json(p: &GraphPrediction) -> String {
    serde_json::to_string_pretty(&GraphFile::from(p)).expect("graph serializes")
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// DOT digraph with one node per event and one edge per predicted relation,
/// labelled with its probability.
pub fn graph_to_dot(p: &GraphPrediction) -> String {
    let mut out = format!("digraph {} {{\n  rankdir=LR;\n", quote(&p.video_id));
    for i in 1..=p.graph.n_events() {
        out.push_str(&format!("  e{i} [label=\"e{i}\"];\n"));
    }
    for &(i, j, q) in &p.probabilities {
        if p.graph.contains(i, j) {
            out.push_str(&format!("  e{} -> e{} [label=\"{q:.2}\"];\n", i + 1, j + 1));
        }
    }
    out.push_str("}\n");
    out
}
