//! Causal refinement of masked-path features: front-door compensation of
//! the predecessor's effect and counterfactual removal of the successor's.
//!
//! Conditional distributions are represented by predicted target features:
//! `P(e_t | e_i)` is the visual feature the decoder predicts for event `t`
//! when every premise except `e_i` is masked.

pub mod aux;

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use aux::{AuxTextCache, AuxTextProvider, CachedAuxTexts, TemplateAuxTexts};

use crate::error::{Error, Result};
use crate::model::{EncodedEvent, VideoPass, Vgcm};
use crate::tensor::{Mat, Var};

/// Which refinement terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    pub enabled: bool,
    pub frontdoor: bool,
    pub counterfactual: bool,
    /// Average removal over every later premise instead of the adjacent one.
    pub extended: bool,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self { enabled: true, frontdoor: true, counterfactual: true, extended: false }
    }
}

impl RefinementConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn is_active(&self) -> bool {
        self.enabled && (self.frontdoor || self.counterfactual)
    }
}

/// `F^C` and `F^R`. `None` marks a term that does not exist for this
/// premise, which contributes nothing to the refined feature.
#[derive(Debug, Clone, Copy)]
pub struct EffectPair<'g> {
    pub f_comp: Option<Var<'g>>,
    pub f_rem: Option<Var<'g>>,
}

/// `O′ = O − Dec(F^C) + Dec(F^R)` for any decoder `dec`. The correction
/// `Dec(F^R) − Dec(F^C)` is formed first and then added to `O`.
pub fn refine_with<'g>(o_m: Var<'g>, effects: &EffectPair<'g>, dec: impl Fn(Var<'g>) -> Var<'g>) -> Result<Var<'g>> {
    let d = o_m.cols();
    for f in [effects.f_comp, effects.f_rem].into_iter().flatten() {
        if f.shape() != (1, d) {
            return Err(Error::Config(format!("effect shape {:?} does not match feature width {d}", f.shape())));
        }
    }
    let delta = match (effects.f_comp.map(&dec), effects.f_rem.map(&dec)) {
        (None, None) => return Ok(o_m),
        (Some(c), None) => c.scale(-1.0),
        (None, Some(r)) => r,
        (Some(c), Some(r)) => r.sub(c),
    };
    Ok(o_m.add(delta))
}

/// Refinement using the model's shared single-slot decoder.
pub fn refine_masked_feature<'g>(model: &Vgcm, cx: &crate::model::Ctx<'g>, o_m: Var<'g>, effects: &EffectPair<'g>) -> Result<Var<'g>> {
    refine_with(o_m, effects, |f| model.dec_single(cx, f))
}

/// Per-video refinement state. Conditioned decoder runs are cached, so each
/// is computed once per graph whatever the number of targets.
pub struct Refiner<'p, 'a, 'g> {
    pass: &'p VideoPass<'a, 'g>,
    cfg: RefinementConfig,
    texts: &'p dyn AuxTextProvider,
    single: RefCell<BTreeMap<usize, Var<'g>>>,
    existence: RefCell<BTreeMap<usize, Var<'g>>>,
    passes: Cell<usize>,
}

impl<'p, 'a, 'g> Refiner<'p, 'a, 'g> {
    pub fn new(pass: &'p VideoPass<'a, 'g>, cfg: RefinementConfig, texts: &'p dyn AuxTextProvider) -> Self {
        Self { pass, cfg, texts, single: RefCell::new(BTreeMap::new()), existence: RefCell::new(BTreeMap::new()), passes: Cell::new(0) }
    }

    /// Decoder runs spent on refinement so far.
    pub fn passes(&self) -> usize {
        self.passes.get()
    }

    fn count(&self) {
        self.passes.set(self.passes.get() + 1);
    }

    fn check_order(&self, cond: usize, target: usize) -> Result<()> {
        if cond >= target || target > self.pass.n_premises {
            return Err(Error::Config(format!(
                "condition event {} must precede target {} within the first {} events",
                cond + 1,
                target + 1,
                self.pass.n_premises + 1
            )));
        }
        Ok(())
    }

    fn zero(&self) -> Var<'g> {
        self.pass.cx.c(Mat::zeros(1, self.pass.model.dim()))
    }

    /// `P(e_target | e_cond)`.
    pub fn predictive_feature(&self, cond: usize, target: usize) -> Result<Var<'g>> {
        self.check_order(cond, target)?;
        let slots = *self.single.borrow_mut().entry(cond).or_insert_with(|| {
            self.count();
            self.pass.only(cond, None)
        });
        Ok(self.pass.model.predict_visual(self.pass.cx, slots.row(target)))
    }

    /// `P(e_target | e_cond^0)`: the condition reduced to its object list.
    fn existence_feature(&self, cond: usize, target: usize) -> Result<Var<'g>> {
        self.check_order(cond, target)?;
        let cached = self.existence.borrow().get(&cond).copied();
        let slots = match cached {
            Some(s) => s,
            None => {
                let texts = self.texts.texts(self.pass.seq, cond, target)?;
                let e = self.pass.encoded(cond);
                let replacement = EncodedEvent { visual: e.visual, caption: self.pass.model.encode_text(self.pass.cx, &texts.existence) };
                self.count();
                let s = self.pass.only(cond, Some(replacement));
                self.existence.borrow_mut().insert(cond, s);
                s
            }
        };
        Ok(self.pass.model.predict_visual(self.pass.cx, slots.row(target)))
    }

    /// `P(e_target | do(e_k))` from the two attention views of `e_k` and
    /// `e_{k+1}` and the reasoning text from `e_{k−1}` to the target.
    pub fn front_door_adjust(&self, k: usize, target: usize) -> Result<Var<'g>> {
        self.check_order(k + 1, target)?;
        let texts = self.texts.texts(self.pass.seq, k, target)?;
        let (model, cx) = (self.pass.model, self.pass.cx);
        Ok(model.frontdoor_term(cx, self.pass.encoded(k), self.pass.encoded(k + 1), &texts.cot))
    }

    /// `P(e_target | do(e_next))` where `e_next` follows the masked `e_k`.
    pub fn counterfactual_remove_at(&self, k: usize, next: usize, target: usize) -> Result<Var<'g>> {
        self.check_order(k, next)?;
        self.check_order(next, target)?;
        let diff = self.predictive_feature(k, next)?.sub(self.existence_feature(k, next)?);
        let gate = self.pass.model.counterfactual_gate(self.pass.cx, diff);
        Ok(self.predictive_feature(next, target)?.mul(gate))
    }

    /// `P(e_target | do(e_{k+1}))`.
    pub fn counterfactual_remove(&self, k: usize, target: usize) -> Result<Var<'g>> {
        self.counterfactual_remove_at(k, k + 1, target)
    }

    /// Effects for masking premise `k` with `target` as the result. The
    /// first premise has nothing to compensate; the premise just before the
    /// target has no later premise to remove.
    pub fn effects(&self, k: usize, target: usize) -> Result<EffectPair<'g>> {
        self.check_order(k, target)?;
        let interior = k + 1 < target;
        let f_comp = if self.cfg.frontdoor && k > 0 && interior {
            Some(self.predictive_feature(k, target)?.sub(self.front_door_adjust(k, target)?))
        } else {
            None
        };
        let f_rem = if self.cfg.counterfactual && interior {
            let nexts: Vec<usize> = if self.cfg.extended { (k + 1..target).collect() } else { vec![k + 1] };
            let mut terms = Vec::with_capacity(nexts.len());
            for next in nexts.iter().copied() {
                terms.push(self.predictive_feature(next, target)?.sub(self.counterfactual_remove_at(k, next, target)?));
            }
            let n = terms.len();
            let sum = terms.into_iter().reduce(|a, b| a.add(b)).unwrap_or_else(|| self.zero());
            Some(if n > 1 { sum.scale(1.0 / n as f64) } else { sum })
        } else {
            None
        };
        Ok(EffectPair { f_comp, f_rem })
    }

    /// `O′^m_k`, or `o_m` unchanged when refinement is off.
    pub fn refine(&self, o_m: Var<'g>, k: usize, target: usize) -> Result<Var<'g>> {
        if !self.cfg.is_active() {
            return Ok(o_m);
        }
        let effects = self.effects(k, target)?;
        let n = usize::from(effects.f_comp.is_some()) + usize::from(effects.f_rem.is_some());
        self.passes.set(self.passes.get() + n);
        refine_masked_feature(self.pass.model, self.pass.cx, o_m, &effects)
    }
}
