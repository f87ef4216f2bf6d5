//! The SAMA encoder block: a pre-norm token mixer followed by a pre-norm
//! feed-forward sub-block.
//!
//! The mixer expands channels, runs a depthwise 3×3 convolution, splits the
//! result into a local and a global attention half, gates the concatenated
//! outputs with an activated bypass projection and projects back.

use rand::Rng;

use crate::attention::{AttnConfig, Branch, DiffAgg};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, LayerNorm, Linear, ParamStore};
use crate::tape::Var;
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamaConfig {
    pub channels: usize,
    pub expansion: usize,
    pub ffn_ratio: usize,
    /// Expansion, depthwise conv and gated bypass around the attention pair.
    pub mamba_macro: bool,
    /// Attention settings; `channels` is overwritten with the branch width.
    pub attn: AttnConfig,
}

impl SamaConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            expansion: 2,
            ffn_ratio: 4,
            mamba_macro: true,
            attn: AttnConfig::new(channels),
        }
    }

    /// Channels seen by each attention branch.
    pub fn branch_width(&self) -> usize {
        self.inner_width() / 2
    }

    fn inner_width(&self) -> usize {
        if self.mamba_macro {
            self.channels * self.expansion
        } else {
            self.channels
        }
    }
}

#[derive(Debug, Clone)]
pub struct SamaMixer {
    pub config: SamaConfig,
    pub in_proj: Option<Linear>,
    pub dw: Option<Conv2d>,
    pub res_proj: Option<Linear>,
    pub local: DiffAgg,
    pub global: DiffAgg,
    pub out_proj: Linear,
}

impl SamaMixer {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, config: SamaConfig, rng: &mut impl Rng) -> Result<Self> {
        let (c, inner) = (config.channels, config.inner_width());
        if inner % 2 != 0 || inner == 0 {
            return Err(Error::Config(format!("mixer width {inner} cannot be split in halves")));
        }
        let attn = AttnConfig {
            channels: config.branch_width(),
            ..config.attn
        };
        let (in_proj, dw, res_proj) = if config.mamba_macro {
            (
                Some(Linear::new(store, &format!("{name}.in_proj"), c, inner, true, rng)),
                Some(Conv2d::depthwise(store, &format!("{name}.dw"), inner, 3, true, rng)),
                Some(Linear::new(store, &format!("{name}.res_proj"), c, inner, true, rng)),
            )
        } else {
            (None, None, None)
        };
        Ok(Self {
            config,
            in_proj,
            dw,
            res_proj,
            local: DiffAgg::new(store, &format!("{name}.local"), attn, Branch::Local, rng)?,
            global: DiffAgg::new(store, &format!("{name}.global"), attn, Branch::Global, rng)?,
            out_proj: Linear::new(store, &format!("{name}.out_proj"), inner, c, true, rng),
        })
    }

    /// Tokens `[B, H·W, C]` of an `h×w` map.
    pub fn forward_tokens<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        let bn = x.shape()[0];
        let inner = self.config.inner_width();
        let mixed = match (&self.in_proj, &self.dw) {
            (Some(inp), Some(dw)) => {
                let e = inp.forward(ctx, x)?.permute(&[0, 2, 1])?.reshape(&[bn, inner, h, w])?;
                dw.forward(ctx, &e)?
                    .silu()
                    .reshape(&[bn, inner, h * w])?
                    .permute(&[0, 2, 1])?
            }
            _ => x.clone(),
        };
        let half = inner / 2;
        let local = self.local.forward_tokens(ctx, &mixed.narrow(2, 0, half)?, h, w)?;
        let global = self.global.forward_tokens(ctx, &mixed.narrow(2, half, half)?, h, w)?;
        let mut o = Var::concat(&[&local, &global], 2)?;
        if let Some(res) = &self.res_proj {
            o = o.mul(&res.forward(ctx, x)?.silu())?;
        }
        self.out_proj.forward(ctx, &o)
    }

    pub fn param_count(&self) -> usize {
        self.in_proj.as_ref().map_or(0, Linear::param_count)
            + self.dw.as_ref().map_or(0, Conv2d::param_count)
            + self.res_proj.as_ref().map_or(0, Linear::param_count)
            + self.local.param_count()
            + self.global.param_count()
            + self.out_proj.param_count()
    }
}

#[derive(Debug, Clone)]
pub struct SamaBlock {
    pub norm1: LayerNorm,
    pub mixer: SamaMixer,
    pub norm2: LayerNorm,
    pub ffn1: Linear,
    pub ffn2: Linear,
}

impl SamaBlock {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, config: SamaConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = config.channels;
        let hidden = c * config.ffn_ratio;
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), c),
            mixer: SamaMixer::new(store, &format!("{name}.mixer"), config, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), c),
            ffn1: Linear::new(store, &format!("{name}.ffn1"), c, hidden, true, rng),
            ffn2: Linear::new(store, &format!("{name}.ffn2"), hidden, c, true, rng),
        })
    }

    /// Tokens `[B, H·W, C]` of an `h×w` map to the same shape.
    pub fn forward_tokens<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        let c = self.mixer.config.channels;
        if x.shape().len() != 3 || x.shape()[1] != h * w || x.shape()[2] != c {
            return Err(crate::error::mismatch("sama_block", x.shape(), &[0, h * w, c]));
        }
        let y = x.add(&self.mixer.forward_tokens(ctx, &self.norm1.forward(ctx, x)?, h, w)?)?;
        let f = self.ffn1.forward(ctx, &self.norm2.forward(ctx, &y)?)?.silu();
        y.add(&self.ffn2.forward(ctx, &f)?)
    }

    /// `[B, C, H, W] -> [B, C, H, W]`.
    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let s = x.shape().to_vec();
        if s.len() != 4 {
            return Err(crate::error::mismatch("sama_block", &s, &[0, self.mixer.config.channels, 0, 0]));
        }
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let t = x.reshape(&[bn, c, h * w])?.permute(&[0, 2, 1])?;
        self.forward_tokens(ctx, &t, h, w)?
            .permute(&[0, 2, 1])?
            .reshape(&[bn, c, h, w])
    }

    pub fn param_count(&self) -> usize {
        self.norm1.param_count()
            + self.mixer.param_count()
            + self.norm2.param_count()
            + self.ffn1.param_count()
            + self.ffn2.param_count()
    }
}
