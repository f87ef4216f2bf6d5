//! The finite-difference suite behind `gradcheck`: every differentiable op,
//! the composite modules and an end-to-end micro network, each checked at
//! 64-bit precision against central differences.

use std::fmt::Write as _;
use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{diff_softmax, local_diff_softmax, AttnConfig, Branch, DiffAgg};
use crate::crmsm::{CrMsmFlags, CrMsmScale};
use crate::error::Result;
use crate::gradcheck::{grad_check_many, grad_check_module, GradCheckReport, DEFAULT_STEP};
use crate::loss::{seg_loss, Labels};
use crate::nn::{Ctx, ParamStore};
use crate::ops::ScanInputs;
use crate::sama::{SamaBlock, SamaConfig};
use crate::ssm::{Ssm, SsmConfig};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::unet::{ModelConfig, SamaUnet};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Step for the end-to-end check. Near-zero gradients of the deepest
/// parameters sit below the roundoff of a 1e-5 step through the whole
/// network.
pub const MODEL_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    /// Primitive differentiable ops.
    Ops,
    /// Ops, composite modules and the micro network.
    Micro,
}

#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub evaluations: usize,
    pub seconds: f64,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn render(rows: &[SuiteRow]) -> String {
    let mut s = format!("{:<28} {:>12} {:>10} {:>8} {:>8}  result\n", "check", "max rel err", "tolerance", "evals", "secs");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<28} {:>12.3e} {:>10.0e} {:>8} {:>8.2}  {}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.evaluations,
            r.seconds,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    s
}

/// `Σ wᵢ yᵢ` with fixed, non-uniform weights so that every output element
/// contributes a distinct seed.
fn probe(y: &Var<f64>) -> Result<Var<f64>> {
    let w = Tensor::from_fn(y.shape().to_vec(), |i| (1.3 * i as f64 + 0.7).sin());
    Ok(y.mul(&y.tape().constant(w))?.sum_all())
}

struct Suite {
    rng: ChaCha8Rng,
    rows: Vec<SuiteRow>,
}

impl Suite {
    fn rand(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| self.rng.gen_range(-1.0..1.0))
    }

    fn record(&mut self, name: &str, tolerance: f64, run: impl FnOnce() -> Result<GradCheckReport>) -> Result<()> {
        let t0 = Instant::now();
        let r = run()?;
        self.rows.push(SuiteRow {
            name: name.to_string(),
            max_rel_error: r.max_rel_error,
            tolerance,
            evaluations: r.evaluations,
            seconds: t0.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    fn op<F>(&mut self, name: &str, shapes: &[&[usize]], f: F) -> Result<()>
    where
        F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
    {
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| self.rand(s)).collect();
        self.record(name, OP_TOLERANCE, || {
            grad_check_many(|t, v| probe(&f(t, v)?), &inputs, DEFAULT_STEP)
        })
    }

    fn module<F>(&mut self, name: &str, tol: f64, h: f64, store: &ParamStore<f64>, inputs: &[Tensor<f64>], f: F) -> Result<()>
    where
        F: Fn(&Ctx<f64>, &[Var<f64>]) -> Result<Var<f64>>,
    {
        self.record(name, tol, || grad_check_module(store, inputs, f, h))
    }
}

fn positive(v: &Var<f64>) -> Var<f64> {
    v.square().add_scalar(0.5)
}

fn ops(s: &mut Suite) -> Result<()> {
    s.op("add (broadcast)", &[&[2, 3], &[3]], |_, v| v[0].add(&v[1]))?;
    s.op("sub (broadcast)", &[&[2, 3, 2], &[3, 1]], |_, v| v[0].sub(&v[1]))?;
    s.op("mul (broadcast)", &[&[2, 3], &[2, 3]], |_, v| v[0].mul(&v[1]))?;
    s.op("div", &[&[2, 3], &[3]], |_, v| v[0].div(&positive(&v[1])))?;
    s.op("exp / neg / scale", &[&[5]], |_, v| Ok(v[0].exp().neg().scale(1.7).add_scalar(0.3)))?;
    s.op("ln / sqrt", &[&[5]], |_, v| Ok(positive(&v[0]).ln().add(&positive(&v[0]).sqrt())?))?;
    s.op("sigmoid / silu / softplus", &[&[6]], |_, v| {
        v[0].sigmoid().add(&v[0].silu())?.add(&v[0].softplus())
    })?;
    s.op("sum / mean reductions", &[&[2, 3, 4]], |_, v| {
        let a = v[0].sum_lastdim().square();
        let b = v[0].mean_lastdim().square();
        Ok(a.add(&b)?.reshape(&[6])?.add(&v[0].mean_all().square().reshape(&[1])?)?)
    })?;
    s.op("softmax", &[&[3, 5]], |_, v| Ok(v[0].scale(2.0).softmax_lastdim()))?;
    s.op("softmax (masked)", &[&[2, 4]], |_, v| {
        v[0].softmax_lastdim_masked(Rc::new(vec![true, false, true, true, true, true, false, true]))
    })?;
    s.op("log_softmax", &[&[3, 4]], |_, v| Ok(v[0].log_softmax_lastdim()))?;
    s.op("matmul (shared)", &[&[2, 3, 4], &[4, 2]], |_, v| v[0].matmul(&v[1]))?;
    s.op("matmul (batched)", &[&[2, 3, 4], &[2, 4, 5]], |_, v| v[0].matmul(&v[1]))?;
    s.op("linear", &[&[2, 3, 4], &[5, 4], &[5]], |_, v| v[0].linear(&v[1], Some(&v[2])))?;
    s.op("conv2d 3x3 pad 1", &[&[2, 2, 5, 4], &[3, 2, 3, 3], &[3]], |_, v| {
        v[0].conv2d(&v[1], Some(&v[2]), 1, 1, 1)
    })?;
    s.op("conv2d stride 2 groups 2", &[&[1, 4, 6, 5], &[2, 2, 3, 3]], |_, v| v[0].conv2d(&v[1], None, 2, 1, 2))?;
    s.op("conv2d depthwise", &[&[1, 3, 4, 4], &[3, 1, 3, 3], &[3]], |_, v| {
        v[0].conv2d(&v[1], Some(&v[2]), 1, 1, 3)
    })?;
    s.op("conv_transpose2d k2 s2", &[&[2, 3, 3, 2], &[3, 2, 2, 2], &[2]], |_, v| {
        v[0].conv_transpose2d(&v[1], Some(&v[2]), 2, 0)
    })?;
    s.op("conv_transpose2d k3 s2 p1", &[&[1, 2, 3, 3], &[2, 2, 3, 3]], |_, v| {
        v[0].conv_transpose2d(&v[1], None, 2, 1)
    })?;
    s.op("group_norm", &[&[2, 4, 3, 2], &[4], &[4]], |_, v| v[0].group_norm(&v[1], &v[2], 2, 1e-5))?;
    s.op("layer_norm", &[&[3, 5], &[5], &[5]], |_, v| v[0].layer_norm(&v[1], &v[2], 1e-5))?;
    s.op("adaptive_avg_pool2d", &[&[1, 2, 5, 7]], |_, v| v[0].adaptive_avg_pool2d(3, 3))?;
    s.op("adaptive_avg_pool2d (up)", &[&[1, 2, 2, 3]], |_, v| v[0].adaptive_avg_pool2d(3, 4))?;
    s.op("neighborhood_logits", &[&[1, 2, 20, 3], &[1, 2, 20, 3]], |_, v| {
        v[0].neighborhood_logits(&v[1], 4, 5, 3)
    })?;
    s.op("neighborhood_aggregate", &[&[1, 2, 20, 9], &[1, 2, 20, 3]], |_, v| {
        v[0].neighborhood_aggregate(&v[1], 4, 5, 3)
    })?;
    s.op("reshape / permute / narrow", &[&[2, 3, 4]], |_, v| {
        v[0].permute(&[2, 0, 1])?.reshape(&[4, 6])?.narrow(1, 1, 4)
    })?;
    s.op("concat / index_select", &[&[2, 3], &[2, 2]], |_, v| {
        Var::concat(&[&v[0], &v[1]], 1)?.index_select(1, Rc::new(vec![4, 0, 0, 2, 3]))
    })?;
    s.op("selective_scan", &[&[2, 5, 3], &[2, 5, 3], &[3, 4], &[2, 5, 4], &[2, 5, 4]], |_, v| {
        Var::selective_scan(ScanInputs {
            x: &v[0],
            delta: &v[1].softplus(),
            a: &v[2].exp().neg(),
            b: &v[3],
            c: &v[4],
        })
    })?;
    s.op("diff_softmax", &[&[1, 2, 3, 4], &[1, 2, 5, 4], &[1, 2, 5, 3], &[2, 1, 1]], |_, v| {
        diff_softmax(&v[0], &v[1], &v[2], &v[3])
    })?;
    s.op("local_diff_softmax", &[&[1, 1, 12, 4], &[1, 1, 12, 4], &[1, 1, 12, 2], &[1, 1, 1]], |_, v| {
        local_diff_softmax(&v[0], &v[1], &v[2], &v[3], 3, 4, 3)
    })?;
    Ok(())
}

fn attn_config(channels: usize) -> AttnConfig {
    AttnConfig {
        heads: 1,
        pool: 3,
        ..AttnConfig::new(channels)
    }
}

fn modules(s: &mut Suite) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.rng.gen());
    for (name, branch) in [("diff_agg local", Branch::Local), ("diff_agg global", Branch::Global)] {
        let mut store = ParamStore::new();
        let m = DiffAgg::new(&mut store, "m", attn_config(4), branch, &mut rng)?;
        let x = s.rand(&[1, 16, 4]);
        s.module(name, OP_TOLERANCE, DEFAULT_STEP, &store, &[x], |ctx, v| {
            probe(&m.forward_tokens(ctx, &v[0], 4, 4)?)
        })?;
    }
    let mut store = ParamStore::new();
    let cfg = SamaConfig {
        attn: attn_config(4),
        ..SamaConfig::new(4)
    };
    let b = SamaBlock::new(&mut store, "b", cfg, &mut rng)?;
    let x = s.rand(&[1, 4, 4, 4]);
    s.module("sama_block", OP_TOLERANCE, DEFAULT_STEP, &store, &[x], |ctx, v| {
        probe(&b.forward(ctx, &v[0])?)
    })?;

    let mut store = ParamStore::new();
    let ssm = Ssm::new(&mut store, "s", SsmConfig::new(3), &mut rng)?;
    let x = s.rand(&[2, 6, 3]);
    s.module("ssm (selective)", OP_TOLERANCE, DEFAULT_STEP, &store, &[x], |ctx, v| {
        probe(&ssm.forward(ctx, &v[0])?)
    })?;

    for (name, flags) in [
        ("crmsm_scale", CrMsmFlags::default()),
        (
            "crmsm_scale (conv, concat)",
            CrMsmFlags {
                use_ssm: false,
                causal_fusion: false,
                ..CrMsmFlags::default()
            },
        ),
    ] {
        let mut store = ParamStore::new();
        let m = CrMsmScale::new(&mut store, "c", 2, flags, 4, &mut rng)?;
        let x = s.rand(&[1, 2, 3, 3]);
        s.module(name, OP_TOLERANCE, DEFAULT_STEP, &store, &[x], |ctx, v| probe(&m.forward(ctx, &v[0])?))?;
    }

    let labels = Labels::new(2, 3, 2, (0..12).map(|i| (i * 7 % 3) as u16).collect())?;
    let logits = s.rand(&[2, 3, 3, 2]);
    let coarse = s.rand(&[2, 3, 2, 1]);
    s.record("seg_loss", OP_TOLERANCE, || {
        grad_check_many(
            |_, v| seg_loss(&[v[0].clone(), v[1].clone()], &labels, &[2.0 / 3.0, 1.0 / 3.0]),
            &[logits, coarse],
            DEFAULT_STEP,
        )
    })
}

/// The smallest network the model code accepts: two stages, four base
/// channels, one head per attention branch, 16×16 input.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        base_channels: 4,
        stage_depths: vec![1, 1],
        heads: 1,
        ..ModelConfig::toy()
    }
}

fn micro(s: &mut Suite) -> Result<()> {
    let cfg = micro_config();
    let mut store = ParamStore::new();
    let model = SamaUnet::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(s.rng.gen()))?;
    let x = Tensor::from_fn([1, 1, 16, 16], |_| s.rng.gen_range(0.0..1.0));
    let labels = Labels::new(1, 16, 16, (0..256).map(|_| s.rng.gen_range(0..3)).collect())?;
    let weights = cfg.head_weights();
    s.module("micro network", MODEL_TOLERANCE, MODEL_STEP, &store, &[], |ctx, _| {
        let heads = model.forward(ctx, &ctx.tape().constant(x.clone()))?;
        seg_loss(&heads, &labels, &weights)
    })
}

pub fn run(level: Level, seed: u64) -> Result<Vec<SuiteRow>> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        rows: Vec::new(),
    };
    ops(&mut s)?;
    if level == Level::Micro {
        modules(&mut s)?;
        micro(&mut s)?;
    }
    Ok(s.rows)
}
