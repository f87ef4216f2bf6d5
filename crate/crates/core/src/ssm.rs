//! Selective state-space layer over `[B, L, C]` sequences.
//!
//! `Δ = softplus(δ(x))`, `B = B(x)`, `C = C(x)` are per-token projections
//! (or fixed parameters in static mode), `A = −exp(A_log)` is diagonal per
//! channel, and `y = scan(x, Δ, A, B, C) + D∘x`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{kaiming_uniform, Ctx, Linear, ParamId, ParamStore};
use crate::ops::ScanInputs;
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

pub const DEFAULT_STATE: usize = 8;
/// Step size at initialisation, before input dependence kicks in.
pub const DELTA_INIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SsmConfig {
    pub channels: usize,
    pub state: usize,
    /// Input-independent `Δ`, `B`, `C`.
    pub static_params: bool,
}

impl SsmConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            state: DEFAULT_STATE,
            static_params: false,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Selection {
    Selective { delta: Linear, b: Linear, c: Linear },
    Static { delta: ParamId, b: ParamId, c: ParamId },
}

#[derive(Debug, Clone)]
pub struct Ssm {
    pub config: SsmConfig,
    pub a_log: ParamId,
    pub d: ParamId,
    pub selection: Selection,
}

fn softplus_inverse(y: f64) -> f64 {
    y.exp_m1().ln()
}

impl Ssm {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, config: SsmConfig, rng: &mut impl Rng) -> Result<Self> {
        let SsmConfig { channels, state, .. } = config;
        if channels == 0 || state == 0 {
            return Err(Error::Config(format!("ssm needs channels and state >= 1, got {channels} and {state}")));
        }
        let a_log = store.add(
            format!("{name}.a_log"),
            Tensor::from_fn([channels, state], |i| T::lit(((i % state) as f64 + 1.0).ln())),
        );
        let d = store.add(format!("{name}.d"), Tensor::ones([channels]));
        let bias = T::lit(softplus_inverse(DELTA_INIT));
        let selection = if config.static_params {
            Selection::Static {
                delta: store.add(format!("{name}.delta"), Tensor::full([channels], bias)),
                b: store.add(format!("{name}.b"), Tensor::ones([state])),
                c: store.add(format!("{name}.c"), kaiming_uniform(&[state], state, rng)),
            }
        } else {
            let delta = Linear::new(store, &format!("{name}.proj_delta"), channels, channels, true, rng);
            store.get_mut(delta.bias.expect("delta bias")).data_mut().fill(bias);
            Selection::Selective {
                delta,
                b: Linear::new(store, &format!("{name}.proj_b"), channels, state, false, rng),
                c: Linear::new(store, &format!("{name}.proj_c"), channels, state, false, rng),
            }
        };
        Ok(Self {
            config,
            a_log,
            d,
            selection,
        })
    }

    /// `x: [B, L, C] -> [B, L, C]`.
    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.config.channels {
            return Err(crate::error::mismatch("ssm", s, &[0, 0, self.config.channels]));
        }
        let (bn, l) = (s[0], s[1]);
        let (delta, b, c) = match &self.selection {
            Selection::Selective { delta, b, c } => {
                (delta.forward(ctx, x)?.softplus(), b.forward(ctx, x)?, c.forward(ctx, x)?)
            }
            Selection::Static { delta, b, c } => {
                let tape = ctx.tape();
                let tile = |id: ParamId, width: usize| tape.constant(Tensor::zeros([bn, l, width])).add(ctx.param(id));
                (
                    tile(*delta, self.config.channels)?.softplus(),
                    tile(*b, self.config.state)?,
                    tile(*c, self.config.state)?,
                )
            }
        };
        let a = ctx.param(self.a_log).exp().neg();
        let y = Var::selective_scan(ScanInputs {
            x,
            delta: &delta,
            a: &a,
            b: &b,
            c: &c,
        })?;
        y.add(&x.mul(ctx.param(self.d))?)
    }

    pub fn param_count(&self) -> usize {
        let SsmConfig { channels: c, state: n, .. } = self.config;
        c * n
            + c
            + match &self.selection {
                Selection::Selective { delta, b, c } => delta.param_count() + b.param_count() + c.param_count(),
                Selection::Static { .. } => c + 2 * n,
            }
    }
}
