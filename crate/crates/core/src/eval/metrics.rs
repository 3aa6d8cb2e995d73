//! Chain accuracy (Acc/Pos/Neg) and structural Hamming distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::CausalGraph;

/// Size of the symmetric difference of the two edge sets.
pub fn compute_shd(pred: &CausalGraph, truth: &CausalGraph) -> Result<usize> {
    if pred.n_events() != truth.n_events() {
        return Err(Error::Schema(format!(
            "graph sizes differ: predicted {} events, truth {}",
            pred.n_events(),
            truth.n_events()
        )));
    }
    Ok(pred.edges().symmetric_difference(truth.edges()).count())
}

/// Outcome for one video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoResult {
    pub video_id: String,
    /// `None` when the video carries no complete labels.
    pub shd: Option<usize>,
    pub correct: usize,
    pub total: usize,
}

/// Aggregated chain metrics. All state is integral so derived percentages
/// are exact functions of the counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetricsReport {
    pub n_pos: usize,
    pub n_neg: usize,
    pub correct_pos: usize,
    pub correct_neg: usize,
    pub per_video: Vec<VideoResult>,
}

fn percent(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

impl MetricsReport {
    pub fn n_videos(&self) -> usize {
        self.per_video.len()
    }

    pub fn n_relations(&self) -> usize {
        self.n_pos + self.n_neg
    }

    pub fn correct(&self) -> usize {
        self.correct_pos + self.correct_neg
    }

    /// Micro-averaged accuracy in percent.
    pub fn acc(&self) -> Option<f64> {
        percent(self.correct(), self.n_relations())
    }

    /// Accuracy on truth-positive relations.
    pub fn pos(&self) -> Option<f64> {
        percent(self.correct_pos, self.n_pos)
    }

    /// Accuracy on truth-negative relations.
    pub fn neg(&self) -> Option<f64> {
        percent(self.correct_neg, self.n_neg)
    }

    /// Videos that contributed an SHD value.
    pub fn n_shd_videos(&self) -> usize {
        self.per_video.iter().filter(|v| v.shd.is_some()).count()
    }

    pub fn shd_total(&self) -> usize {
        self.per_video.iter().filter_map(|v| v.shd).sum()
    }

    /// Mean SHD over videos with complete labels.
    pub fn shd_mean(&self) -> Option<f64> {
        let n = self.n_shd_videos();
        (n > 0).then(|| self.shd_total() as f64 / n as f64)
    }

    /// Adds one video's chain predictions and optional graph comparison.
    pub fn add_video(&mut self, video_id: &str, pred: &[bool], truth: &[bool], shd: Option<usize>) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::record(
                video_id,
                format!("prediction length {} does not match label length {}", pred.len(), truth.len()),
            ));
        }
        let mut correct = 0;
        for (&p, &t) in pred.iter().zip(truth) {
            if t {
                self.n_pos += 1;
                self.correct_pos += usize::from(p);
            } else {
                self.n_neg += 1;
                self.correct_neg += usize::from(!p);
            }
            correct += usize::from(p == t);
        }
        self.per_video.push(VideoResult { video_id: video_id.to_string(), shd, correct, total: truth.len() });
        Ok(())
    }

    /// Orders per-video entries by id so reports do not depend on evaluation order.
    pub fn sort(&mut self) {
        self.per_video.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    }
}

/// One video's chain predictions with labels and optional graphs.
#[derive(Debug, Clone)]
pub struct VideoPrediction<'a> {
    pub video_id: &'a str,
    pub chain_pred: Vec<bool>,
    pub chain_truth: &'a [bool],
    pub graph_pred: Option<CausalGraph>,
    pub graph_truth: Option<CausalGraph>,
}

/// Builds a report from aligned predictions.
pub fn compute_chain_metrics<'a>(items: impl IntoIterator<Item = VideoPrediction<'a>>) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for item in items {
        let shd = match (&item.graph_pred, &item.graph_truth) {
            (Some(p), Some(t)) => Some(compute_shd(p, t)?),
            _ => None,
        };
        report.add_video(item.video_id, &item.chain_pred, item.chain_truth, shd)?;
    }
    report.sort();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shd_counts_missing_and_extra_edges() {
        let truth = CausalGraph::from_edges(5, [(0, 4), (1, 4), (2, 4), (0, 2)]).unwrap();
        let pred = CausalGraph::from_edges(5, [(0, 4), (0, 2), (3, 4)]).unwrap();
        assert_eq!(compute_shd(&pred, &truth).unwrap(), 3);
        assert_eq!(compute_shd(&truth, &truth).unwrap(), 0);
        assert_eq!(compute_shd(&CausalGraph::empty(5), &truth).unwrap(), 4);
        assert!(compute_shd(&CausalGraph::empty(4), &truth).is_err());
    }

    #[test]
    fn undefined_rates_are_none() {
        let mut r = MetricsReport::default();
        r.add_video("v", &[false, false], &[false, false], None).unwrap();
        assert_eq!(r.acc(), Some(100.0));
        assert_eq!(r.neg(), Some(100.0));
        assert_eq!(r.pos(), None);
        assert_eq!(r.shd_mean(), None);
    }

    #[test]
    fn length_mismatch_names_the_video() {
        let mut r = MetricsReport::default();
        let err = r.add_video("vid7", &[true], &[true, false], None).unwrap_err();
        assert!(err.to_string().contains("vid7"));
    }
}
