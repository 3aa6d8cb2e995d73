//! Transformer building blocks over the autodiff tape.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, Mat, ParamId, ParamStore, Var};

/// Binds parameters to one graph lazily, so each parameter becomes a single
/// tape node however often it is used.
pub struct Ctx<'g> {
    pub g: &'g Graph<'g>,
    bound: RefCell<Vec<Option<Var<'g>>>>,
    dropout: Option<(f64, RefCell<ChaCha8Rng>)>,
}

impl<'g> Ctx<'g> {
    pub fn new(g: &'g Graph<'g>) -> Self {
        Self { g, bound: RefCell::new(vec![None; g.params().len()]), dropout: None }
    }

    /// A context that applies inverted dropout with rate `p`.
    pub fn with_dropout(g: &'g Graph<'g>, p: f64, seed: u64) -> Self {
        let mut cx = Self::new(g);
        if p > 0.0 {
            cx.dropout = Some((p, RefCell::new(ChaCha8Rng::seed_from_u64(seed))));
        }
        cx
    }

    pub fn p(&self, id: ParamId) -> Var<'g> {
        let mut bound = self.bound.borrow_mut();
        *bound[id.index()].get_or_insert_with(|| self.g.param(id))
    }

    pub fn c(&self, m: Mat) -> Var<'g> {
        self.g.constant(m)
    }

    pub fn dropout(&self, x: Var<'g>) -> Var<'g> {
        let Some((p, rng)) = &self.dropout else { return x };
        let (r, c) = x.shape();
        let mut rng = rng.borrow_mut();
        let keep = 1.0 / (1.0 - p);
        let mask = Mat::from_vec(r, c, (0..r * c).map(|_| if rng.random_bool(*p) { 0.0 } else { keep }).collect());
        x.mul(self.c(mask))
    }

    /// Mean over rows as a `1 × cols` row.
    pub fn mean_rows(&self, x: Var<'g>) -> Var<'g> {
        let n = x.rows();
        self.c(Mat::filled(1, n, 1.0 / n as f64)).matmul(x)
    }
}

/// Standard deviation used for weight matrices with `fan_in` inputs.
fn init_std(fan_in: usize) -> f64 {
    1.0 / (3.0 * fan_in as f64).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let w = ps.add_normal(format!("{name}.w"), input, output, init_std(input), rng);
        let b = ps.add_zeros(format!("{name}.b"), 1, output);
        Self { w, b }
    }

    pub fn fwd<'g>(&self, cx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        x.linear(cx.p(self.w), cx.p(self.b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self { gamma: ps.add_filled(format!("{name}.gamma"), 1, dim, 1.0), beta: ps.add_zeros(format!("{name}.beta"), 1, dim) }
    }

    pub fn fwd<'g>(&self, cx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        x.layer_norm(cx.p(self.gamma), cx.p(self.beta))
    }
}

/// Multi-head attention with input and output projections.
#[derive(Debug, Clone, Copy)]
pub struct Mha {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Mha {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        Self {
            q: Linear::new(ps, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(ps, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(ps, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(ps, &format!("{name}.o"), dim, dim, rng),
            heads,
        }
    }

    pub fn fwd<'g>(&self, cx: &Ctx<'g>, xq: Var<'g>, xkv: Var<'g>, mask: Option<&[bool]>) -> Var<'g> {
        let q = self.q.fwd(cx, xq);
        let k = self.k.fwd(cx, xkv);
        let v = self.v.fwd(cx, xkv);
        self.o.fwd(cx, q.attention(k, v, self.heads, mask))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Ffn {
    pub up: Linear,
    pub down: Linear,
}

impl Ffn {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self { up: Linear::new(ps, &format!("{name}.up"), dim, hidden, rng), down: Linear::new(ps, &format!("{name}.down"), hidden, dim, rng) }
    }

    pub fn fwd<'g>(&self, cx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        self.down.fwd(cx, self.up.fwd(cx, x).gelu())
    }
}

/// Pre-norm attention sublayer followed by a feed-forward sublayer. With a
/// separate key/value input the attention is cross-attention.
#[derive(Debug, Clone, Copy)]
pub struct AttnBlock {
    pub ln_q: LayerNorm,
    pub ln_kv: LayerNorm,
    pub attn: Mha,
    pub ln_f: LayerNorm,
    pub ffn: Ffn,
}

impl AttnBlock {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            ln_q: LayerNorm::new(ps, &format!("{name}.ln_q"), dim),
            ln_kv: LayerNorm::new(ps, &format!("{name}.ln_kv"), dim),
            attn: Mha::new(ps, &format!("{name}.attn"), dim, heads, rng),
            ln_f: LayerNorm::new(ps, &format!("{name}.ln_f"), dim),
            ffn: Ffn::new(ps, &format!("{name}.ffn"), dim, hidden, rng),
        }
    }

    /// Self-attention when `kv` is `None`.
    pub fn fwd<'g>(&self, cx: &Ctx<'g>, x: Var<'g>, kv: Option<Var<'g>>, mask: Option<&[bool]>) -> Var<'g> {
        let h = self.ln_q.fwd(cx, x);
        let kv = match kv {
            Some(kv) => self.ln_kv.fwd(cx, kv),
            None => h,
        };
        let x = x.add(cx.dropout(self.attn.fwd(cx, h, kv, mask)));
        x.add(cx.dropout(self.ffn.fwd(cx, self.ln_f.fwd(cx, x))))
    }
}

/// Decoder layer: causal self-attention over query slots, cross-attention
/// into the event memory, feed-forward.
#[derive(Debug, Clone, Copy)]
pub struct DecoderLayer {
    pub ln_s: LayerNorm,
    pub self_attn: Mha,
    pub ln_c: LayerNorm,
    pub ln_m: LayerNorm,
    pub cross: Mha,
    pub ln_f: LayerNorm,
    pub ffn: Ffn,
}

impl DecoderLayer {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            ln_s: LayerNorm::new(ps, &format!("{name}.ln_s"), dim),
            self_attn: Mha::new(ps, &format!("{name}.self"), dim, heads, rng),
            ln_c: LayerNorm::new(ps, &format!("{name}.ln_c"), dim),
            ln_m: LayerNorm::new(ps, &format!("{name}.ln_m"), dim),
            cross: Mha::new(ps, &format!("{name}.cross"), dim, heads, rng),
            ln_f: LayerNorm::new(ps, &format!("{name}.ln_f"), dim),
            ffn: Ffn::new(ps, &format!("{name}.ffn"), dim, hidden, rng),
        }
    }

    pub fn fwd<'g>(&self, cx: &Ctx<'g>, x: Var<'g>, memory: Var<'g>, self_mask: &[bool], cross_mask: &[bool]) -> Var<'g> {
        let h = self.ln_s.fwd(cx, x);
        let x = x.add(cx.dropout(self.self_attn.fwd(cx, h, h, Some(self_mask))));
        let h = self.ln_c.fwd(cx, x);
        let m = self.ln_m.fwd(cx, memory);
        let x = x.add(cx.dropout(self.cross.fwd(cx, h, m, Some(cross_mask))));
        x.add(cx.dropout(self.ffn.fwd(cx, self.ln_f.fwd(cx, x))))
    }
}

/// Additive sinusoidal positions, one row per position.
pub fn sinusoid(n: usize, dim: usize) -> Mat {
    let mut m = Mat::zeros(n, dim);
    for pos in 0..n {
        for i in (0..dim).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / dim as f64);
            m.set(pos, i, angle.sin());
            if i + 1 < dim {
                m.set(pos, i + 1, angle.cos());
            }
        }
    }
    m
}
