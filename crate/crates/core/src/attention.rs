//! Differential aggregated attention over a pixel grid.
//!
//! Two branches share one layer shape: the local branch attends over each
//! pixel's `k×k` window, the global branch over an adaptively pooled grid of
//! at most `P×P` tokens. Attention weights are the difference of two softmax
//! maps computed on the halves of every head, `A₁ − λ·A₂`.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, GroupNorm, Linear, ParamId, ParamStore};
use crate::ops::neighborhood_mask;
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

pub const DEFAULT_WINDOW: usize = 3;
pub const DEFAULT_POOL: usize = 7;
pub const DEFAULT_HEADS: usize = 4;
pub const LAMBDA_INIT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttnConfig {
    /// Channels entering the branch.
    pub channels: usize,
    pub heads: usize,
    /// Odd local window side.
    pub window: usize,
    /// Side of the pooled global grid.
    pub pool: usize,
    pub lambda_init: f64,
    /// `A₁ − λA₂` on head halves; otherwise one softmax over the full head.
    pub differential: bool,
    /// Depthwise 3×3 positional term on the value map.
    pub use_pe: bool,
    /// GroupNorm per head followed by the `(1 − λ_init)` rescale.
    pub post_norm: bool,
}

impl AttnConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            heads: DEFAULT_HEADS,
            window: DEFAULT_WINDOW,
            pool: DEFAULT_POOL,
            lambda_init: LAMBDA_INIT,
            differential: true,
            use_pe: true,
            post_norm: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.heads == 0 || self.channels == 0 || self.channels % self.heads != 0 {
            return bad(format!("channels {} not divisible by heads {}", self.channels, self.heads));
        }
        if self.differential && self.head_dim() % 2 != 0 {
            return bad(format!("differential attention needs an even head dim, got {}", self.head_dim()));
        }
        if self.window % 2 == 0 {
            return bad(format!("window {} must be odd", self.window));
        }
        if self.pool == 0 {
            return bad("pool must be >= 1".into());
        }
        if !(self.lambda_init > 0.0 && self.lambda_init < 1.0) {
            return bad(format!("lambda_init {} outside (0, 1)", self.lambda_init));
        }
        Ok(())
    }

    /// Pooled global grid. It stays `P×P` on maps smaller than `P`, where
    /// bins repeat pixels, so every query always sees `P²` tokens.
    pub fn pooled(&self) -> (usize, usize) {
        (self.pool, self.pool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Local,
    Global,
}

/// Softmax weights for one set of queries and keys.
enum Keys<'a> {
    Dense,
    Window { h: usize, w: usize, k: usize, mask: &'a Rc<Vec<bool>> },
}

fn weights<T: Element>(q: &Var<T>, k: &Var<T>, keys: &Keys<'_>) -> Result<Var<T>> {
    let scale = T::lit(1.0 / (q.shape()[3] as f64).sqrt());
    match keys {
        Keys::Dense => Ok(q.matmul(&k.permute(&[0, 1, 3, 2])?)?.scale(scale).softmax_lastdim()),
        Keys::Window { h, w, k: win, mask } => q
            .neighborhood_logits(k, *h, *w, *win)?
            .scale(scale)
            .softmax_lastdim_masked(Rc::clone(mask)),
    }
}

fn halves<T: Element>(t: &Var<T>) -> Result<(Var<T>, Var<T>)> {
    let c = t.shape()[3];
    if c % 2 != 0 {
        return Err(Error::InvalidArgument(format!("differential split needs an even head dim, got {c}")));
    }
    Ok((t.narrow(3, 0, c / 2)?, t.narrow(3, c / 2, c / 2)?))
}

fn differential_weights<T: Element>(q: &Var<T>, k: &Var<T>, lambda: &Var<T>, keys: &Keys<'_>) -> Result<Var<T>> {
    let ((q1, q2), (k1, k2)) = (halves(q)?, halves(k)?);
    let a1 = weights(&q1, &k1, keys)?;
    let a2 = weights(&q2, &k2, keys)?;
    a1.sub(&a2.mul(lambda)?)
}

/// `(A₁ − λA₂)·v` with `A_i = softmax(q_i k_iᵀ / √(c/2))` over every key.
///
/// `q: [B, h, n, c]`, `k: [B, h, m, c]`, `v: [B, h, m, cv]`, `lambda: [h, 1, 1]`.
pub fn diff_softmax<T: Element>(q: &Var<T>, k: &Var<T>, v: &Var<T>, lambda: &Var<T>) -> Result<Var<T>> {
    differential_weights(q, k, lambda, &Keys::Dense)?.matmul(v)
}

/// [`diff_softmax`] restricted to each pixel's `window×window` neighbourhood.
/// `q`, `k`, `v` hold one token per pixel of the `h×w` grid.
pub fn local_diff_softmax<T: Element>(
    q: &Var<T>,
    k: &Var<T>,
    v: &Var<T>,
    lambda: &Var<T>,
    h: usize,
    w: usize,
    window: usize,
) -> Result<Var<T>> {
    let mask = Rc::new(neighborhood_mask(h, w, window));
    differential_weights(q, k, lambda, &Keys::Window { h, w, k: window, mask: &mask })?
        .neighborhood_aggregate(v, h, w, window)
}

/// One attention branch with its projections, norm and positional term.
#[derive(Debug, Clone)]
pub struct DiffAgg {
    pub config: AttnConfig,
    pub branch: Branch,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub lambda: Option<ParamId>,
    pub pe: Option<Conv2d>,
    pub gn: Option<GroupNorm>,
    pub wo: Linear,
}

impl DiffAgg {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        config: AttnConfig,
        branch: Branch,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.channels;
        let wq = Linear::new(store, &format!("{name}.wq"), d, d, false, rng);
        let wk = Linear::new(store, &format!("{name}.wk"), d, d, false, rng);
        let wv = Linear::new(store, &format!("{name}.wv"), d, d, false, rng);
        let lambda = config
            .differential
            .then(|| store.add(format!("{name}.lambda"), Tensor::full([config.heads], T::lit(config.lambda_init))));
        let pe = config
            .use_pe
            .then(|| Conv2d::depthwise(store, &format!("{name}.pe"), d, 3, true, rng));
        let gn = (config.differential && config.post_norm)
            .then(|| GroupNorm::new(store, &format!("{name}.gn"), d, config.heads));
        let wo = Linear::new(store, &format!("{name}.wo"), d, d, true, rng);
        Ok(Self {
            config,
            branch,
            wq,
            wk,
            wv,
            lambda,
            pe,
            gn,
            wo,
        })
    }

    fn split_heads<T: Element>(&self, t: &Var<T>) -> Result<Var<T>> {
        let (bn, n) = (t.shape()[0], t.shape()[1]);
        t.reshape(&[bn, n, self.config.heads, self.config.head_dim()])?
            .permute(&[0, 2, 1, 3])
    }

    /// Tokens `[B, H·W, d]` of an `h×w` map to `[B, H·W, d]`.
    pub fn forward_tokens<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        let s = x.shape().to_vec();
        let d = self.config.channels;
        if s.len() != 3 || s[1] != h * w || s[2] != d {
            return Err(crate::error::mismatch("diff_agg", &s, &[s.first().copied().unwrap_or(0), h * w, d]));
        }
        let bn = s[0];
        let heads = self.config.heads;
        let q = self.split_heads(&self.wq.forward(ctx, x)?)?;
        let v_tok = self.wv.forward(ctx, x)?;
        let v_map = v_tok.permute(&[0, 2, 1])?.reshape(&[bn, d, h, w])?;
        let (k, v) = match self.branch {
            Branch::Local => (self.split_heads(&self.wk.forward(ctx, x)?)?, self.split_heads(&v_tok)?),
            Branch::Global => {
                // Projections are bias-free, so pooling commutes with them.
                let (ph, pw) = self.config.pooled();
                let to_tokens = |m: Var<T>| -> Result<Var<T>> { m.reshape(&[bn, d, ph * pw])?.permute(&[0, 2, 1]) };
                let x_pool = to_tokens(x.permute(&[0, 2, 1])?.reshape(&[bn, d, h, w])?.adaptive_avg_pool2d(ph, pw)?)?;
                let v_pool = to_tokens(v_map.adaptive_avg_pool2d(ph, pw)?)?;
                (
                    self.split_heads(&self.wk.forward(ctx, &x_pool)?)?,
                    self.split_heads(&v_pool)?,
                )
            }
        };
        let mask = Rc::new(neighborhood_mask(h, w, self.config.window));
        let keys = match self.branch {
            Branch::Local => Keys::Window {
                h,
                w,
                k: self.config.window,
                mask: &mask,
            },
            Branch::Global => Keys::Dense,
        };
        let a = match self.lambda {
            Some(id) => differential_weights(&q, &k, &ctx.param(id).reshape(&[heads, 1, 1])?, &keys)?,
            None => weights(&q, &k, &keys)?,
        };
        let o = match self.branch {
            Branch::Local => a.neighborhood_aggregate(&v, h, w, self.config.window)?,
            Branch::Global => a.matmul(&v)?,
        };
        // [B, heads, HW, c] -> [B, d, HW] with channel = head·c + i.
        let mut o = o.permute(&[0, 1, 3, 2])?.reshape(&[bn, d, h * w])?;
        if let Some(gn) = &self.gn {
            o = gn.forward(ctx, &o)?.scale(T::lit(1.0 - self.config.lambda_init));
        }
        if let Some(pe) = &self.pe {
            o = o.add(&pe.forward(ctx, &v_map)?.reshape(&[bn, d, h * w])?)?;
        }
        self.wo.forward(ctx, &o.permute(&[0, 2, 1])?)
    }

    /// `[B, d, H, W] -> [B, d, H, W]`.
    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let s = x.shape().to_vec();
        if s.len() != 4 {
            return Err(crate::error::mismatch("diff_agg", &s, &[0, self.config.channels, 0, 0]));
        }
        let (bn, d, h, w) = (s[0], s[1], s[2], s[3]);
        let tokens = x.reshape(&[bn, d, h * w])?.permute(&[0, 2, 1])?;
        self.forward_tokens(ctx, &tokens, h, w)?
            .permute(&[0, 2, 1])?
            .reshape(&[bn, d, h, w])
    }

    pub fn param_count(&self) -> usize {
        self.wq.param_count()
            + self.wk.param_count()
            + self.wv.param_count()
            + self.wo.param_count()
            + self.lambda.map_or(0, |_| self.config.heads)
            + self.pe.as_ref().map_or(0, Conv2d::param_count)
            + self.gn.as_ref().map_or(0, GroupNorm::param_count)
    }
}
