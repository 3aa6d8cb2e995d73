//! The dual-path generative model and its relation head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{sinusoid, AttnBlock, Ctx, DecoderLayer, LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Mat, ParamId, ParamStore, Var};
use crate::types::{Event, EventSequence};
use crate::vocab::{MASK, PAD};

/// Replaces an event's content with the mask placeholder: zero visual
/// features and a caption of `MASK` tokens of the same length.
pub fn mask_event(e: &Event) -> Event {
    Event {
        index: e.index,
        visual: Mat::zeros(e.visual.rows(), e.visual.cols()),
        caption: vec![MASK; e.caption.len().max(1)],
        span: e.span,
    }
}

/// A relation score before thresholding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationLogit {
    pub logit: f64,
}

impl RelationLogit {
    pub fn probability(&self) -> f64 {
        crate::tensor::sigmoid(self.logit)
    }

    /// Causal when the probability exceeds `threshold`; ties are not.
    pub fn decide(&self, threshold: f64) -> bool {
        self.probability() > threshold
    }
}

#[derive(Debug, Clone)]
struct Net {
    enc_v: Linear,
    ln_v: LayerNorm,
    tok_emb: ParamId,
    enc: Vec<AttnBlock>,
    ln_c: LayerNorm,
    typ_v: ParamId,
    typ_c: ParamId,
    slot: ParamId,
    dec: Vec<DecoderLayer>,
    ln_dec: LayerNorm,
    cap_ln: LayerNorm,
    cap_out: Linear,
    vhead: Linear,
    head_cross: AttnBlock,
    head_self: AttnBlock,
    g_r: Linear,
    g_do: Linear,
    cf_w: ParamId,
}

/// Model parameters plus the layer layout that reads them.
#[derive(Debug, Clone)]
pub struct Vgcm {
    cfg: ModelConfig,
    params: ParamStore,
    net: Net,
}

/// Encoder output of one event: `F` (visual) and the caption summary.
#[derive(Debug, Clone, Copy)]
pub struct EncodedEvent<'g> {
    pub visual: Var<'g>,
    pub caption: Var<'g>,
}

impl Vgcm {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut ps = ParamStore::new();
        let d = cfg.model_dim;
        let hidden = d * cfg.ffn_mult;
        let h = cfg.n_heads;
        let enc_v = Linear::new(&mut ps, "enc_v", cfg.feature_dim, d, &mut rng);
        let ln_v = LayerNorm::new(&mut ps, "ln_v", d);
        let tok_emb = ps.add_normal("tok_emb", cfg.vocab_size, d, 1.0, &mut rng);
        let enc = (0..cfg.n_encoder_layers).map(|i| AttnBlock::new(&mut ps, &format!("enc.{i}"), d, h, hidden, &mut rng)).collect();
        let ln_c = LayerNorm::new(&mut ps, "ln_c", d);
        let typ_v = ps.add_normal("typ_v", 1, d, 0.02, &mut rng);
        let typ_c = ps.add_normal("typ_c", 1, d, 0.02, &mut rng);
        let slot = ps.add_normal("slot", 1, d, 0.02, &mut rng);
        let dec = (0..cfg.n_decoder_layers).map(|i| DecoderLayer::new(&mut ps, &format!("dec.{i}"), d, h, hidden, &mut rng)).collect();
        let ln_dec = LayerNorm::new(&mut ps, "ln_dec", d);
        let cap_ln = LayerNorm::new(&mut ps, "cap_ln", d);
        let cap_out = Linear::new(&mut ps, "cap_out", d, cfg.vocab_size, &mut rng);
        let vhead = Linear::new(&mut ps, "vhead", d, d, &mut rng);
        let head_cross = AttnBlock::new(&mut ps, "head.cross", d, h, hidden, &mut rng);
        let head_self = AttnBlock::new(&mut ps, "head.self", d, h, hidden, &mut rng);
        let g_r = Linear::new(&mut ps, "g_r", 4 * d, 1, &mut rng);
        // Refinement parameters come last so the base initialisation does
        // not depend on them.
        let g_do = Linear::new(&mut ps, "g_do", 3 * d, d, &mut rng);
        let cf_w = ps.add_filled("cf_w", 1, d, 1.0);
        let net = Net {
            enc_v,
            ln_v,
            tok_emb,
            enc,
            ln_c,
            typ_v,
            typ_c,
            slot,
            dec,
            ln_dec,
            cap_ln,
            cap_out,
            vhead,
            head_cross,
            head_self,
            g_r,
            g_do,
            cf_w,
        };
        Ok(Self { cfg, params: ps, net })
    }

    /// Rebuilds a model from a config and a full set of parameter values.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut m = Self::new(cfg)?;
        if m.params.len() != params.len() {
            return Err(Error::Checkpoint(format!("expected {} parameter tensors, found {}", m.params.len(), params.len())));
        }
        for ((id, name, value), (_, other_name, other)) in m.params.iter().zip(params.iter()) {
            if name != other_name || value.shape() != other.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} ({name}, {:?}) does not match {other_name} {:?}",
                    id.index(),
                    value.shape(),
                    other.shape()
                )));
            }
        }
        m.params = params;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn dim(&self) -> usize {
        self.cfg.model_dim
    }

    /// Ids of the parameters used only by causal refinement.
    pub fn refinement_params(&self) -> Vec<ParamId> {
        vec![self.net.g_do.w, self.net.g_do.b, self.net.cf_w]
    }

    pub fn encode_visual<'g>(&self, cx: &Ctx<'g>, visual: &Mat) -> Var<'g> {
        let (frames, dim) = visual.shape();
        assert_eq!(dim, self.cfg.feature_dim, "visual feature width");
        let mut mean = Mat::zeros(1, dim);
        for f in 0..frames {
            for (m, x) in mean.data_mut().iter_mut().zip(visual.row(f)) {
                *m += x / frames as f64;
            }
        }
        self.net.ln_v.fwd(cx, self.net.enc_v.fwd(cx, cx.c(mean)))
    }

    /// Mean-pooled text encoding, `1 × d`. An empty text reads as one `PAD`.
    pub fn encode_text<'g>(&self, cx: &Ctx<'g>, tokens: &[u32]) -> Var<'g> {
        let pad = [PAD];
        let tokens = if tokens.is_empty() { &pad[..] } else { tokens };
        let ids: Vec<usize> = tokens.iter().map(|&t| (t as usize).min(self.cfg.vocab_size - 1)).collect();
        let mut x = cx.p(self.net.tok_emb).gather_rows(&ids).add(cx.c(sinusoid(ids.len(), self.dim())));
        for block in &self.net.enc {
            x = block.fwd(cx, x, None, None);
        }
        cx.mean_rows(self.net.ln_c.fwd(cx, x))
    }

    pub fn encode_event<'g>(&self, cx: &Ctx<'g>, e: &Event) -> EncodedEvent<'g> {
        EncodedEvent { visual: self.encode_visual(cx, &e.visual), caption: self.encode_text(cx, &e.caption) }
    }

    /// The two memory rows of an event, without position.
    pub fn event_rows<'g>(&self, cx: &Ctx<'g>, e: &EncodedEvent<'g>) -> Var<'g> {
        Var::concat_rows(&[e.visual.add(cx.p(self.net.typ_v)), e.caption.add(cx.p(self.net.typ_c))])
    }

    /// Decoder memory: two rows per event with event positions added.
    pub fn memory<'g>(&self, cx: &Ctx<'g>, events: &[EncodedEvent<'g>]) -> Var<'g> {
        let pe = sinusoid(events.len(), self.dim());
        let mut rows = Vec::with_capacity(2 * events.len());
        for (i, e) in events.iter().enumerate() {
            let pos = cx.c(Mat::row_vector(pe.row(i).to_vec()));
            rows.push(e.visual.add(cx.p(self.net.typ_v)).add(pos));
            rows.push(e.caption.add(cx.p(self.net.typ_c)).add(pos));
        }
        Var::concat_rows(&rows)
    }

    fn run_decoder<'g>(&self, cx: &Ctx<'g>, memory: Var<'g>, n_slots: usize, cross_mask: &[bool]) -> Var<'g> {
        let slots = cx.p(self.net.slot).gather_rows(&vec![0; n_slots]).add(cx.c(sinusoid(n_slots, self.dim())));
        let self_mask: Vec<bool> = (0..n_slots).flat_map(|s| (0..n_slots).map(move |t| t <= s)).collect();
        let mut x = slots;
        for layer in &self.net.dec {
            x = layer.fwd(cx, x, memory, &self_mask, cross_mask);
        }
        self.net.ln_dec.fwd(cx, x)
    }

    /// Causal decoding over a memory built by [`Vgcm::memory`]. Slot `s`
    /// predicts event `s` and sees only events before it.
    pub fn decode<'g>(&self, cx: &Ctx<'g>, memory: Var<'g>, n_slots: usize) -> Var<'g> {
        let m = memory.rows();
        let cross: Vec<bool> = (0..n_slots).flat_map(|s| (0..m).map(move |r| r / 2 < s)).collect();
        self.run_decoder(cx, memory, n_slots, &cross)
    }

    /// One slot attending to every memory row.
    pub fn decode_full<'g>(&self, cx: &Ctx<'g>, memory: Var<'g>) -> Var<'g> {
        self.run_decoder(cx, memory, 1, &vec![true; memory.rows()])
    }

    /// `O_N`: the result event decoded on its own.
    pub fn encode_result<'g>(&self, cx: &Ctx<'g>, e: &EncodedEvent<'g>) -> Var<'g> {
        self.decode_full(cx, self.memory(cx, std::slice::from_ref(e)))
    }

    /// `Dec(F)` for a single feature row.
    pub fn dec_single<'g>(&self, cx: &Ctx<'g>, f: Var<'g>) -> Var<'g> {
        self.decode_full(cx, f)
    }

    /// Caption logits, `len × vocab`.
    pub fn caption_logits<'g>(&self, cx: &Ctx<'g>, o: Var<'g>, len: usize) -> Var<'g> {
        let x = o.gather_rows(&vec![0; len]).add(cx.c(sinusoid(len, self.dim())));
        self.net.cap_out.fwd(cx, self.net.cap_ln.fwd(cx, x))
    }

    /// Token logits for a caption, `max_caption_len × vocab`.
    pub fn caption_head<'g>(&self, cx: &Ctx<'g>, o: Var<'g>) -> Var<'g> {
        self.caption_logits(cx, o, self.cfg.max_caption_len)
    }

    /// `F^p`: visual features predicted from a decoder output.
    pub fn predict_visual<'g>(&self, cx: &Ctx<'g>, o: Var<'g>) -> Var<'g> {
        self.net.vhead.fwd(cx, o)
    }

    /// Relation logit for one premise from `O^m`, `O^p` and `O_N`.
    pub fn relation_logit<'g>(&self, cx: &Ctx<'g>, o_m: Var<'g>, o_p: Var<'g>, o_n: Var<'g>) -> Var<'g> {
        let qm = Var::concat_rows(&[o_m, o_n]);
        let kp = Var::concat_rows(&[o_p, o_n]);
        let a = self.net.head_cross.fwd(cx, qm, Some(kp), None);
        let b = self.net.head_self.fwd(cx, qm, None, None);
        let flat = Var::concat_cols(&[a.row(0), a.row(1), b.row(0), b.row(1)]);
        self.net.g_r.fwd(cx, flat)
    }

    /// The deconfounding term subtracted by front-door adjustment.
    pub fn frontdoor_term<'g>(&self, cx: &Ctx<'g>, e_k: &EncodedEvent<'g>, e_next: &EncodedEvent<'g>, cot: &[u32]) -> Var<'g> {
        let mk = self.event_rows(cx, e_k);
        let mn = self.event_rows(cx, e_next);
        let cross = cx.mean_rows(self.net.head_cross.fwd(cx, mk, Some(mn), None));
        let own = cx.mean_rows(self.net.head_self.fwd(cx, mk, None, None));
        let text = self.encode_text(cx, cot);
        self.net.g_do.fwd(cx, Var::concat_cols(&[cross, own, text]))
    }

    /// Learned gate of counterfactual removal: `σ(w ⊙ diff) − 0.5`, zero
    /// when `diff` is zero.
    pub fn counterfactual_gate<'g>(&self, cx: &Ctx<'g>, diff: Var<'g>) -> Var<'g> {
        diff.mul(cx.p(self.net.cf_w)).sigmoid().add_scalar(-0.5)
    }
}

/// Memory, slot count and encodings of one video inside one graph.
///
/// The premises are events `0..n_premises`; the decoder has
/// `n_premises + 1` slots so the last slot predicts event `n_premises`.
pub struct VideoPass<'a, 'g> {
    pub model: &'a Vgcm,
    pub cx: &'a Ctx<'g>,
    pub seq: &'a EventSequence,
    pub n_premises: usize,
    plain: Vec<EncodedEvent<'g>>,
    masked: Vec<EncodedEvent<'g>>,
}

impl<'a, 'g> VideoPass<'a, 'g> {
    /// Encodes the first `n_premises` events plus event `n_premises`.
    pub fn new(model: &'a Vgcm, cx: &'a Ctx<'g>, seq: &'a EventSequence, n_premises: usize) -> Self {
        assert!(n_premises >= 1 && n_premises < seq.n_events(), "premise count out of range");
        let plain: Vec<_> = seq.events[..=n_premises].iter().map(|e| model.encode_event(cx, e)).collect();
        let masked = seq.events[..n_premises].iter().map(|e| model.encode_event(cx, &mask_event(e))).collect();
        Self { model, cx, seq, n_premises, plain, masked }
    }

    pub fn encoded(&self, i: usize) -> &EncodedEvent<'g> {
        &self.plain[i]
    }

    pub fn masked(&self, i: usize) -> &EncodedEvent<'g> {
        &self.masked[i]
    }

    /// Runs the decoder with each premise drawn from `pick`.
    pub fn decode_with(&self, pick: impl Fn(usize) -> EncodedEvent<'g>) -> Var<'g> {
        let events: Vec<_> = (0..self.n_premises).map(pick).collect();
        let memory = self.model.memory(self.cx, &events);
        self.model.decode(self.cx, memory, self.n_premises + 1)
    }

    /// All slots of the unmasked path.
    pub fn unmasked(&self) -> Var<'g> {
        self.decode_with(|i| self.plain[i])
    }

    /// All slots with the premises in `mask` masked.
    pub fn with_mask(&self, mask: &[usize]) -> Var<'g> {
        self.decode_with(|i| if mask.contains(&i) { self.masked[i] } else { self.plain[i] })
    }

    /// All slots when only premise `keep` is visible.
    pub fn only(&self, keep: usize, replacement: Option<EncodedEvent<'g>>) -> Var<'g> {
        self.decode_with(|i| if i == keep { replacement.unwrap_or(self.plain[i]) } else { self.masked[i] })
    }

    /// `O_j` of event `j`.
    pub fn result(&self, j: usize) -> Var<'g> {
        self.model.encode_result(self.cx, &self.plain[j])
    }
}

impl Vgcm {
    /// Decoder output of one path.
    ///
    /// `mask` holds 0-based premise indices; `slice_index` is 1-based and
    /// selects the slot that predicts event `slice_index + 1`.
    pub fn forward_path(&self, seq: &EventSequence, mask: &[usize], slice_index: usize) -> Result<Mat> {
        let n = seq.n_events();
        if slice_index == 0 || slice_index >= n {
            return Err(Error::Config(format!("slice index {slice_index} outside 1..{}", n - 1)));
        }
        if let Some(&bad) = mask.iter().find(|&&k| k + 1 >= n) {
            return Err(Error::Config(format!("mask index {bad} is not a premise")));
        }
        let g = Graph::new(&self.params);
        let cx = Ctx::new(&g);
        let pass = VideoPass::new(self, &cx, seq, n - 1);
        let out = pass.with_mask(mask).row(slice_index);
        Ok(out.value().as_ref().clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig { model_dim: 16, n_heads: 2, feature_dim: 6, frames: 2, ..ModelConfig::default() }
    }

    fn seq(n: usize) -> EventSequence {
        let events = (0..n)
            .map(|i| Event {
                index: i,
                visual: Mat::from_vec(2, 6, (0..12).map(|x| ((x * 7 + i * 3) % 5) as f64 - 2.0).collect()),
                caption: vec![10 + i as u32, 20, 30],
                span: (i as f64, i as f64 + 1.0),
            })
            .collect();
        EventSequence { video_id: "v".into(), events, chain_labels: vec![false; n - 1], complete_labels: None }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Vgcm::new(tiny()).unwrap();
        let b = Vgcm::new(tiny()).unwrap();
        for ((_, _, x), (_, _, y)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn masked_slot_ignores_masked_content() {
        let m = Vgcm::new(tiny()).unwrap();
        let s = seq(5);
        let mut other = s.clone();
        other.events[1].visual = Mat::filled(2, 6, 3.0);
        other.events[1].caption = vec![40, 41, 42];
        assert_eq!(m.forward_path(&s, &[1], 4).unwrap(), m.forward_path(&other, &[1], 4).unwrap());
        assert_ne!(m.forward_path(&s, &[], 4).unwrap(), m.forward_path(&other, &[], 4).unwrap());
    }

    #[test]
    fn slot_does_not_see_later_events() {
        let m = Vgcm::new(tiny()).unwrap();
        let s = seq(5);
        let mut other = s.clone();
        other.events[3].caption = vec![50];
        assert_eq!(m.forward_path(&s, &[], 2).unwrap(), m.forward_path(&other, &[], 2).unwrap());
    }

    #[test]
    fn gate_is_zero_without_difference() {
        let m = Vgcm::new(tiny()).unwrap();
        let g = Graph::new(m.params());
        let cx = Ctx::new(&g);
        let out = m.counterfactual_gate(&cx, cx.c(Mat::zeros(1, 16)));
        assert!(out.value().data().iter().all(|&x| x == 0.0));
    }
}
