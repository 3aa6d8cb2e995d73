//! The optimisation loop.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::losses::{info_nce, label_smoothed_ce, mse, LossBreakdown};
use super::optim::AdamW;
use super::schedule::{sample_mask_at, MaskSpec};
use crate::error::{Error, Result};
use crate::eval::{compute_chain_metrics, VideoPrediction};
use crate::inference::{parallel_map, InferenceOptions, Inferencer};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, Ctx, OptimizerState, VideoPass, Vgcm};
use crate::refinement::{AuxTextProvider, Refiner, TemplateAuxTexts};
use crate::tensor::{Grads, Graph, Mat, Var};
use crate::types::EventSequence;

/// Relation labels of every premise of event `target` (0-based).
pub fn target_labels(seq: &EventSequence, target: usize) -> Option<Vec<bool>> {
    let n = seq.n_events();
    if target == 0 || target >= n {
        return None;
    }
    if target == n - 1 {
        return Some(seq.chain_labels.clone());
    }
    seq.complete_labels.as_ref().map(|c| c.items()[target - 1].clone())
}

/// One video's share of a batch: the result event and one mask per premise.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub index: usize,
    pub target: usize,
    pub masks: Vec<(MaskSpec, bool)>,
}

/// Draws the result event and the per-premise masks for one video.
pub fn sample_video(seq: &EventSequence, index: usize, cfg: &TrainConfig, rng: &mut impl Rng) -> VideoSample {
    let n = seq.n_events();
    let target = if seq.complete_labels.is_some() && rng.random_bool(cfg.interior_target_prob) { rng.random_range(1..n) } else { n - 1 };
    let labels = target_labels(seq, target).expect("target has labels");
    let schedule = cfg.schedule();
    let masks = (0..target).map(|k| sample_mask_at(&labels, k, &schedule, rng)).collect();
    VideoSample { index, target, masks }
}

/// Builds the batch objective on `cx` and returns the differentiable total
/// with its scalar breakdown.
pub fn batch_objective<'g>(
    model: &Vgcm,
    cx: &Ctx<'g>,
    cfg: &TrainConfig,
    texts: &dyn AuxTextProvider,
    data: &[EventSequence],
    batch: &[VideoSample],
) -> Result<(Var<'g>, LossBreakdown)> {
    objective_with_targets(model, cx, cfg, texts, data, batch, None).map(|(v, b, _)| (v, b))
}

/// The batch objective with the detached visual targets either recomputed
/// (`None`) or pinned to given values. Also returns the targets used.
pub(crate) fn objective_with_targets<'g>(
    model: &Vgcm,
    cx: &Ctx<'g>,
    cfg: &TrainConfig,
    texts: &dyn AuxTextProvider,
    data: &[EventSequence],
    batch: &[VideoSample],
    pinned: Option<&[Mat]>,
) -> Result<(Var<'g>, LossBreakdown, Vec<Mat>)> {
    let weights = cfg.loss_weights();
    let refine_cfg = cfg.refinement_config();
    let mut l_c = Vec::new();
    let mut l_r = Vec::new();
    let mut l_v = Vec::new();
    let mut o_ps = Vec::new();
    let mut anchors = Vec::new();
    let mut positives = Vec::new();
    let mut targets = Vec::with_capacity(batch.len());
    for (b, s) in batch.iter().enumerate() {
        let seq = &data[s.index];
        let t = s.target;
        let pass = VideoPass::new(model, cx, seq, t);
        let refiner = Refiner::new(&pass, refine_cfg, texts);
        let o_p = pass.unmasked().row(t);
        let o_t = pass.result(t);
        let mut bce = Vec::with_capacity(s.masks.len());
        for (spec, label) in &s.masks {
            let o_m = refiner.refine(pass.with_mask(&spec.indices).row(t), spec.anchor, t)?;
            let logit = model.relation_logit(cx, o_m, o_p, o_t);
            bce.push(logit.bce_with_logits(&Mat::scalar(f64::from(u8::from(*label)))));
            if cfg.similarity_gate.active(*label) {
                anchors.push(o_m);
                positives.push(b);
            }
        }
        l_r.push(Var::concat_rows(&bce).mean());
        let caption = &seq.events[t].caption;
        l_c.push(label_smoothed_ce(model.caption_logits(cx, o_p, caption.len()), caption, cfg.label_smoothing));
        let target_feature = match pinned {
            Some(p) => p[b].clone(),
            None => pass.encoded(t).visual.value().as_ref().clone(),
        };
        l_v.push(mse(model.predict_visual(cx, o_p), &target_feature));
        targets.push(target_feature);
        o_ps.push(o_p);
    }
    let mean = |v: Vec<Var<'g>>| Var::concat_rows(&v).mean();
    let (l_c, l_r, l_v) = (mean(l_c), mean(l_r), mean(l_v));
    let mut total = l_c.scale(weights.lambda_c).add(l_r.scale(weights.lambda_r)).add(l_v.scale(weights.lambda_v));
    let mut l_s_value = 0.0;
    let gate = !anchors.is_empty();
    if gate {
        let l_s = info_nce(Var::concat_rows(&anchors), Var::concat_rows(&o_ps), &positives, cfg.temperature);
        l_s_value = l_s.item();
        total = total.add(l_s.scale(weights.lambda_s));
    }
    let breakdown =
        LossBreakdown { l_c: l_c.item(), l_r: l_r.item(), l_v: l_v.item(), l_s: l_s_value, total: total.item(), sign_gate: u8::from(gate) };
    Ok((total, breakdown, targets))
}

/// Gradient of the batch objective.
pub fn batch_gradients(
    model: &Vgcm,
    cfg: &TrainConfig,
    texts: &dyn AuxTextProvider,
    data: &[EventSequence],
    batch: &[VideoSample],
    dropout_seed: u64,
) -> Result<(Grads, LossBreakdown)> {
    let g = Graph::new(model.params());
    let cx = Ctx::with_dropout(&g, cfg.dropout, dropout_seed);
    let (total, breakdown) = batch_objective(model, &cx, cfg, texts, data, batch)?;
    Ok((g.backward(total), breakdown))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: u64,
    pub l_c: f64,
    pub l_r: f64,
    pub l_v: f64,
    pub l_s: f64,
    pub total: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Vgcm,
    pub log: Vec<LogRecord>,
    pub step: u64,
    pub epochs_run: u64,
    pub best_val_acc: Option<f64>,
    /// Path of the final checkpoint when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub texts: &'a dyn AuxTextProvider,
    pub output: Option<PathBuf>,
    pub ablations: Vec<String>,
    pub jobs: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig) -> Self {
        Self { cfg, texts: &TemplateAuxTexts, output: None, ablations: Vec::new(), jobs: 1 }
    }

    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.output = Some(dir.into());
        self
    }

    pub fn with_texts(mut self, texts: &'a dyn AuxTextProvider) -> Self {
        self.texts = texts;
        self
    }

    pub fn with_ablations(mut self, ablations: Vec<String>) -> Self {
        self.ablations = ablations;
        self
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": self.cfg.seed,
            "ablations": self.ablations,
            "ablated": !self.ablations.is_empty(),
            "refinement": self.cfg.refinement_config(),
            "train_config": self.cfg,
        })
    }

    /// Chain accuracy (percent) on `val`.
    pub fn validate(&self, model: &Vgcm, val: &[EventSequence]) -> Result<f64> {
        let inf = Inferencer::new(model, InferenceOptions { threshold: 0.5, refinement: self.cfg.refinement_config() }).with_texts(self.texts);
        let preds = parallel_map(val, self.jobs, |s| inf.infer_chain(s)).into_iter().collect::<Result<Vec<_>>>()?;
        let videos = preds.into_iter().zip(val).map(|(p, s)| VideoPrediction {
            video_id: &s.video_id,
            chain_pred: p.labels,
            chain_truth: &s.chain_labels,
            graph_pred: None,
            graph_truth: None,
        });
        Ok(compute_chain_metrics(videos)?.acc().unwrap_or(0.0))
    }

    pub fn train(&self, train: &[EventSequence], val: &[EventSequence]) -> Result<TrainOutcome> {
        self.cfg.validate()?;
        let model = Vgcm::new(self.cfg.model_config())?;
        let opt = AdamW::new(self.cfg.optimizer(), model.params());
        if let Some(dir) = &self.output {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            File::create(dir.join(LOG_FILE)).map_err(|e| Error::io(dir.join(LOG_FILE), e))?;
        }
        self.run(model, opt, 0, 0, train, val)
    }

    /// Continues from a checkpoint written at an epoch boundary.
    pub fn resume(&self, checkpoint: &Path, train: &[EventSequence], val: &[EventSequence]) -> Result<TrainOutcome> {
        self.cfg.validate()?;
        let Checkpoint { header, model, optimizer } = load_checkpoint(checkpoint)?;
        if header.model != self.cfg.model_config() {
            return Err(Error::Config("checkpoint model settings differ from the training config".into()));
        }
        let mut opt = AdamW::new(self.cfg.optimizer(), model.params());
        if let Some(OptimizerState { t, m, v }) = optimizer {
            opt.t = t;
            opt.m = m;
            opt.v = v;
        }
        self.run(model, opt, header.epoch, header.step, train, val)
    }

    fn run(&self, mut model: Vgcm, mut opt: AdamW, start_epoch: u64, start_step: u64, train: &[EventSequence], val: &[EventSequence]) -> Result<TrainOutcome> {
        if train.is_empty() {
            return Err(Error::Config("training corpus is empty".into()));
        }
        let cfg = &self.cfg;
        let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
        let total_steps = steps_per_epoch * cfg.epochs;
        let mut log = Vec::new();
        let mut log_file = match &self.output {
            Some(dir) => {
                let p = dir.join(LOG_FILE);
                Some(OpenOptions::new().create(true).append(true).open(&p).map_err(|e| Error::io(&p, e))?)
            }
            None => None,
        };
        let mut step = start_step;
        let mut best: Option<f64> = None;
        let mut stale = 0;
        let mut epochs_run = start_epoch;
        let mut checkpoint = None;
        for epoch in start_epoch..cfg.epochs {
            let mut order: Vec<usize> = (0..train.len()).collect();
            let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
            shuffle.set_stream(epoch << 1);
            order.shuffle(&mut shuffle);
            for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream((step << 1) | 1);
                let batch: Vec<VideoSample> = chunk.iter().map(|&i| sample_video(&train[i], i, cfg, &mut rng)).collect();
                let (mut grads, b) = batch_gradients(&model, cfg, self.texts, train, &batch, rng.random())?;
                if !b.total.is_finite() {
                    return Err(Error::Divergence { step: step as usize, reason: format!("total loss is {}", b.total) });
                }
                opt.clip(&mut grads);
                let lr = cfg.optimizer().lr_at(step, total_steps);
                opt.step(model.params_mut(), &grads, lr);
                step += 1;
                let last_in_epoch = bi as u64 + 1 == steps_per_epoch;
                let val_acc = if last_in_epoch && !val.is_empty() { Some(self.validate(&model, val)?) } else { None };
                let rec = LogRecord { step, epoch, l_c: b.l_c, l_r: b.l_r, l_v: b.l_v, l_s: b.l_s, total: b.total, val_acc };
                if let Some(f) = log_file.as_mut() {
                    writeln!(f, "{}", serde_json::to_string(&rec).expect("record serializes")).map_err(|e| Error::io(Path::new(LOG_FILE), e))?;
                }
                log.push(rec);
            }
            epochs_run = epoch + 1;
            if let Some(dir) = &self.output {
                if cfg.checkpoint_every > 0 && epochs_run.is_multiple_of(cfg.checkpoint_every) {
                    let p = dir.join(format!("epoch_{epochs_run:03}.ckpt"));
                    self.save(&p, &model, &opt, epochs_run, step)?;
                }
            }
            if let Some(acc) = log.last().and_then(|r| r.val_acc) {
                if best.is_none_or(|b| acc > b) {
                    best = Some(acc);
                    stale = 0;
                } else {
                    stale += 1;
                    if cfg.patience > 0 && stale >= cfg.patience {
                        break;
                    }
                }
            }
        }
        if let Some(dir) = &self.output {
            let p = dir.join(FINAL_CHECKPOINT);
            self.save(&p, &model, &opt, epochs_run, step)?;
            checkpoint = Some(p);
        }
        Ok(TrainOutcome { model, log, step, epochs_run, best_val_acc: best, checkpoint })
    }

    fn save(&self, path: &Path, model: &Vgcm, opt: &AdamW, epoch: u64, step: u64) -> Result<()> {
        let state = OptimizerState { t: opt.t, m: opt.m.clone(), v: opt.v.clone() };
        save_checkpoint(path, model, self.metadata(), epoch, step, Some(&state))
    }
}
