//! Finite-difference check of the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::trainer::{objective_with_targets, VideoSample};
use crate::error::{Error, Result};
use crate::model::{Ctx, Vgcm};
use crate::refinement::AuxTextProvider;
use crate::tensor::{Graph, Mat};
use crate::types::EventSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter name, flat index, analytic, numeric)` per sampled entry.
    pub samples: Vec<(String, usize, f64, f64)>,
}

/// Relative error with a floor on the scale so that entries whose gradient
/// is numerically zero compare on an absolute basis.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn objective(model: &Vgcm, cfg: &TrainConfig, texts: &dyn AuxTextProvider, data: &[EventSequence], batch: &[VideoSample], targets: &[Mat]) -> Result<f64> {
    let g = Graph::new(model.params());
    let cx = Ctx::new(&g);
    Ok(objective_with_targets(model, &cx, cfg, texts, data, batch, Some(targets))?.1.total)
}

/// Compares analytic gradients of the total objective with central
/// differences (step `h`) on `n_samples` parameter entries drawn from
/// tensors that receive a gradient. The visual targets are detached in
/// training, so the perturbed objectives keep them at their base values.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    model: &Vgcm,
    cfg: &TrainConfig,
    texts: &dyn AuxTextProvider,
    data: &[EventSequence],
    batch: &[VideoSample],
    n_samples: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if cfg.dropout != 0.0 {
        return Err(Error::Config("gradient check needs dropout = 0".into()));
    }
    let g = Graph::new(model.params());
    let cx = Ctx::new(&g);
    let (total, _, targets) = objective_with_targets(model, &cx, cfg, texts, data, batch, None)?;
    let grads = g.backward(total);
    let candidates: Vec<(crate::tensor::ParamId, usize)> = model
        .params()
        .ids()
        .filter(|&id| grads.get(id).is_some())
        .flat_map(|id| (0..model.params().get(id).len()).map(move |i| (id, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut samples = Vec::with_capacity(n_samples);
    let mut worst: f64 = 0.0;
    for _ in 0..n_samples {
        let (id, i) = candidates[rng.random_range(0..candidates.len())];
        let analytic = grads.get(id).unwrap().data()[i];
        let orig = model.params().get(id).data()[i];
        probe.params_mut().get_mut(id).data_mut()[i] = orig + h;
        let up = objective(&probe, cfg, texts, data, batch, &targets)?;
        probe.params_mut().get_mut(id).data_mut()[i] = orig - h;
        let down = objective(&probe, cfg, texts, data, batch, &targets)?;
        probe.params_mut().get_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic, numeric));
        samples.push((model.params().name(id).to_string(), i, analytic, numeric));
    }
    Ok(GradCheckReport { max_relative_error: worst, samples })
}
