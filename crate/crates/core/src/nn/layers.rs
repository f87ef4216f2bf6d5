use rand::Rng;

use super::param::{kaiming_uniform, Ctx, ParamId, ParamStore};
use crate::error::Result;
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

/// GroupNorm group count: 8, or `channels` when fewer than 8; falls back to
/// the largest common divisor with 8 otherwise.
pub fn default_groups(channels: usize) -> usize {
    if channels < 8 {
        return channels.max(1);
    }
    let (mut a, mut b) = (channels, 8);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[out_dim, in_dim], in_dim, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros([out_dim])));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        x.linear(ctx.param(self.weight), self.bias.map(|b| ctx.param(b)))
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch / groups * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[out_ch, in_ch / groups, kernel, kernel], fan_in, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros([out_ch])));
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            groups,
        }
    }

    /// Depthwise `k×k`, stride 1, same padding.
    pub fn depthwise<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self::new(store, name, channels, channels, kernel, 1, kernel / 2, channels, bias, rng)
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        x.conv2d(
            ctx.param(self.weight),
            self.bias.map(|b| ctx.param(b)),
            self.stride,
            self.padding,
            self.groups,
        )
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * (self.in_ch / self.groups) * self.kernel * self.kernel
            + if self.bias.is_some() { self.out_ch } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[in_ch, out_ch, kernel, kernel], out_ch * kernel * kernel, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros([out_ch])));
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        }
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        x.conv_transpose2d(
            ctx.param(self.weight),
            self.bias.map(|b| ctx.param(b)),
            self.stride,
            self.padding,
        )
    }

    pub fn param_count(&self) -> usize {
        self.in_ch * self.out_ch * self.kernel * self.kernel
            + if self.bias.is_some() { self.out_ch } else { 0 }
    }
}

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize, groups: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones([channels]));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros([channels]));
        Self {
            gamma,
            beta,
            channels,
            groups,
        }
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        x.group_norm(ctx.param(self.gamma), ctx.param(self.beta), self.groups, NORM_EPS)
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones([dim]));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros([dim]));
        Self { gamma, beta, dim }
    }

    /// Normalises the last axis.
    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        x.layer_norm(ctx.param(self.gamma), ctx.param(self.beta), NORM_EPS)
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim
    }
}
