//! Four-view state-space skip module.
//!
//! Each encoder feature map is flattened into four token orders (row-major,
//! transposed, and the reversal of each), every order is scanned by one
//! shared sequence mixer, scattered back to the spatial layout, averaged and
//! projected.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, Linear, ParamStore};
use crate::ssm::{Ssm, SsmConfig};
use crate::tape::Var;
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrMsmFlags {
    /// Scan all four orders; otherwise only the row-major one.
    pub multi_view: bool,
    /// Use the state-space mixer; otherwise a 3×3 convolution per view.
    pub use_ssm: bool,
    /// Average the views; otherwise concatenate and project `4C -> C`.
    pub causal_fusion: bool,
    /// Build the reversed views as horizontal mirrors instead of full
    /// sequence reversals.
    pub mirror_flip: bool,
    pub static_ssm: bool,
}

impl Default for CrMsmFlags {
    fn default() -> Self {
        Self {
            multi_view: true,
            use_ssm: true,
            causal_fusion: true,
            mirror_flip: false,
            static_ssm: false,
        }
    }
}

/// Token orders for an `h×w` map: `order[j][s]` is the row-major source
/// pixel of sequence position `s` in view `j`.
#[derive(Debug, Clone)]
pub struct Views {
    pub height: usize,
    pub width: usize,
    pub order: [Rc<Vec<usize>>; 4],
    pub inverse: [Rc<Vec<usize>>; 4],
}

impl Views {
    pub fn new(height: usize, width: usize, mirror_flip: bool) -> Self {
        let (h, w) = (height, width);
        let orig: Vec<usize> = (0..h * w).collect();
        let trans: Vec<usize> = (0..h * w).map(|s| (s % h) * w + s / h).collect();
        let flip = |v: &[usize], rows: usize, cols: usize| -> Vec<usize> {
            if mirror_flip {
                (0..rows * cols).map(|s| v[(s / cols) * cols + cols - 1 - s % cols]).collect()
            } else {
                v.iter().rev().copied().collect()
            }
        };
        let (rev_orig, rev_trans) = (flip(&orig, h, w), flip(&trans, w, h));
        let order = [orig, trans, rev_orig, rev_trans].map(Rc::new);
        let inverse = order.clone().map(|o| Rc::new(invert(&o)));
        Self {
            height,
            width,
            order,
            inverse,
        }
    }

    /// Spatial extent in which view `j` is a row-major flatten.
    pub fn view_dims(&self, j: usize) -> (usize, usize) {
        if j % 2 == 0 {
            (self.height, self.width)
        } else {
            (self.width, self.height)
        }
    }
}

pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (s, &p) in perm.iter().enumerate() {
        inv[p] = s;
    }
    inv
}

/// The per-view sequence operator.
#[derive(Debug, Clone)]
pub enum Mixer {
    Ssm(Ssm),
    Conv(Conv2d),
    Identity,
}

#[derive(Debug, Clone)]
pub struct CrMsmScale {
    pub channels: usize,
    pub flags: CrMsmFlags,
    pub mixer: Mixer,
    pub proj: Linear,
}

impl CrMsmScale {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        flags: CrMsmFlags,
        state: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mixer = if flags.use_ssm {
            let cfg = SsmConfig {
                channels,
                state,
                static_params: flags.static_ssm,
            };
            Mixer::Ssm(Ssm::new(store, &format!("{name}.ssm"), cfg, rng)?)
        } else {
            Mixer::Conv(Conv2d::new(store, &format!("{name}.conv"), channels, channels, 3, 1, 1, 1, true, rng))
        };
        Self::with_mixer(store, name, channels, flags, mixer, rng)
    }

    pub fn with_mixer<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        flags: CrMsmFlags,
        mixer: Mixer,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("cr-msm needs at least one channel".into()));
        }
        let fused = if flags.causal_fusion { channels } else { channels * num_views(flags) };
        let proj = Linear::new(store, &format!("{name}.proj"), fused, channels, true, rng);
        Ok(Self {
            channels,
            flags,
            mixer,
            proj,
        })
    }

    /// `[B, C, H, W] -> [B, C, H, W]`.
    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, f: &Var<T>) -> Result<Var<T>> {
        let s = f.shape().to_vec();
        if s.len() != 4 || s[1] != self.channels {
            return Err(crate::error::mismatch("cr-msm", &s, &[0, self.channels, 0, 0]));
        }
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let views = Views::new(h, w, self.flags.mirror_flip);
        let tokens = f.reshape(&[bn, c, h * w])?.permute(&[0, 2, 1])?;
        let nv = num_views(self.flags);
        let xs = (0..nv)
            .map(|j| tokens.index_select(1, views.order[j].clone()))
            .collect::<Result<Vec<_>>>()?;
        let ys = self.mix(ctx, &views, &xs)?;
        let back = ys
            .iter()
            .enumerate()
            .map(|(j, y)| y.index_select(1, views.inverse[j].clone()))
            .collect::<Result<Vec<_>>>()?;
        let fused = if self.flags.causal_fusion {
            match back.as_slice() {
                [y] => y.clone(),
                [a, b, c, d] => a.add(b)?.add(&c.add(d)?)?.scale(T::lit(0.25)),
                _ => unreachable!(),
            }
        } else {
            Var::concat(&back.iter().collect::<Vec<_>>(), 2)?
        };
        self.proj
            .forward(ctx, &fused)?
            .permute(&[0, 2, 1])?
            .reshape(&[bn, c, h, w])
    }

    fn mix<T: Element>(&self, ctx: &Ctx<T>, views: &Views, xs: &[Var<T>]) -> Result<Vec<Var<T>>> {
        match &self.mixer {
            Mixer::Identity => Ok(xs.to_vec()),
            Mixer::Ssm(ssm) => {
                // One scan over the views stacked along the batch axis.
                let bn = xs[0].shape()[0];
                let stacked = Var::concat(&xs.iter().collect::<Vec<_>>(), 0)?;
                let y = ssm.forward(ctx, &stacked)?;
                (0..xs.len()).map(|j| y.narrow(0, j * bn, bn)).collect()
            }
            Mixer::Conv(conv) => xs
                .iter()
                .enumerate()
                .map(|(j, x)| {
                    let (bn, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                    let (vh, vw) = views.view_dims(j);
                    let map = x.permute(&[0, 2, 1])?.reshape(&[bn, c, vh, vw])?;
                    conv.forward(ctx, &map)?.reshape(&[bn, c, l])?.permute(&[0, 2, 1])
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.proj.param_count()
            + match &self.mixer {
                Mixer::Ssm(s) => s.param_count(),
                Mixer::Conv(c) => c.param_count(),
                Mixer::Identity => 0,
            }
    }
}

pub fn num_views(flags: CrMsmFlags) -> usize {
    if flags.multi_view {
        4
    } else {
        1
    }
}

/// One [`CrMsmScale`] per pyramid level, fine to coarse.
#[derive(Debug, Clone)]
pub struct CrMsm {
    pub scales: Vec<CrMsmScale>,
}

impl CrMsm {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: &[usize],
        flags: CrMsmFlags,
        state: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let scales = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| CrMsmScale::new(store, &format!("{name}.{i}"), c, flags, state, rng))
            .collect::<Result<_>>()?;
        Ok(Self { scales })
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, pyramid: &[Var<T>]) -> Result<Vec<Var<T>>> {
        if pyramid.is_empty() || pyramid.len() != self.scales.len() {
            return Err(Error::InvalidArgument(format!(
                "pyramid has {} levels, module has {}",
                pyramid.len(),
                self.scales.len()
            )));
        }
        self.scales.iter().zip(pyramid).map(|(s, f)| s.forward(ctx, f)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.scales.iter().map(CrMsmScale::param_count).sum()
    }
}
