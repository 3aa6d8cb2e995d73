//! Components of the training objective and their weighted sum.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Mat, Var};
use crate::types::LossWeights;

/// Which relation label switches the similarity loss on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityGate {
    /// Active for causal premises, `sign(r_k)` read literally.
    #[default]
    Causal,
    /// Active for premises without a causal relation.
    Noncausal,
}

impl SimilarityGate {
    pub fn active(self, label: bool) -> bool {
        match self {
            Self::Causal => label,
            Self::Noncausal => !label,
        }
    }
}

impl FromStr for SimilarityGate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Self::Causal),
            "noncausal" => Ok(Self::Noncausal),
            other => Err(Error::Config(format!("similarity_gate must be causal or noncausal, got {other:?}"))),
        }
    }
}

/// Scalar view of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_r: f64,
    pub l_v: f64,
    pub l_s: f64,
    pub total: f64,
    pub sign_gate: u8,
}

/// Weighted sum of unweighted component losses. `r_k` must be 0 or 1.
pub fn compute_losses(l_c: f64, l_r: f64, l_v: f64, l_s: f64, weights: &LossWeights, r_k: u8) -> Result<LossBreakdown> {
    if r_k > 1 {
        return Err(Error::Config(format!("relation label must be 0 or 1, got {r_k}")));
    }
    for (name, v) in [("l_c", l_c), ("l_r", l_r), ("l_v", l_v), ("l_s", l_s)] {
        if v < 0.0 {
            return Err(Error::Config(format!("{name} is negative ({v})")));
        }
    }
    let total = weights.lambda_c * l_c + weights.lambda_r * l_r + weights.lambda_v * l_v + weights.lambda_s * f64::from(r_k) * l_s;
    Ok(LossBreakdown { l_c, l_r, l_v, l_s, total, sign_gate: r_k })
}

/// Cross-entropy against targets smoothed by `eps`, averaged over rows.
pub fn label_smoothed_ce<'g>(logits: Var<'g>, targets: &[u32], eps: f64) -> Var<'g> {
    let (rows, vocab) = logits.shape();
    assert_eq!(rows, targets.len(), "one target per logit row");
    let mut q = Mat::filled(rows, vocab, eps / vocab as f64);
    for (r, &t) in targets.iter().enumerate() {
        let t = (t as usize).min(vocab - 1);
        q.set(r, t, q.get(r, t) + 1.0 - eps);
    }
    let q = logits.graph_constant(q);
    logits.log_softmax_rows().mul(q).sum().scale(-1.0 / rows as f64)
}

/// Mean squared error against a fixed target.
pub fn mse<'g>(pred: Var<'g>, target: &Mat) -> Var<'g> {
    assert_eq!(pred.shape(), target.shape(), "mse shape mismatch");
    let diff = pred.sub(pred.graph_constant(target.clone()));
    diff.mul(diff).mean()
}

/// InfoNCE with cosine similarity: row `i` of `anchors` should match row
/// `positives[i]` of `candidates` against every other candidate.
pub fn info_nce<'g>(anchors: Var<'g>, candidates: Var<'g>, positives: &[usize], temperature: f64) -> Var<'g> {
    let (n, _) = anchors.shape();
    assert_eq!(n, positives.len());
    let sims = anchors.l2_normalize_rows().matmul(candidates.l2_normalize_rows().transpose()).scale(1.0 / temperature);
    let mut pick = Mat::zeros(n, candidates.rows());
    for (i, &p) in positives.iter().enumerate() {
        pick.set(i, p, 1.0);
    }
    let pick = anchors.graph_constant(pick);
    sims.log_softmax_rows().mul(pick).sum().scale(-1.0 / n as f64)
}
