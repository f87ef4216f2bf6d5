//! Central-difference gradient checking at 64-bit precision.

use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor in the relative error.
pub const REL_EPS: f64 = 1e-8;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// Worst element per input.
    pub per_input: Vec<f64>,
    /// (input, element, analytic, numeric) of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub evaluations: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_EPS)
}

/// Checks the gradient of a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &Var<f64>) -> Result<Var<f64>>,
{
    grad_check_many(|tape, xs| f(tape, &xs[0]), std::slice::from_ref(x), h)
}

/// Checks the gradient of a scalar function with respect to every element of
/// every input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&tape, &vars)?;
    if out.numel() != 1 {
        return Err(Error::NonScalarRoot(out.shape().to_vec()));
    }
    let grads = tape.backward(&out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.get_or_zero(v)).collect();

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<f64>> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.value().item())
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_input: vec![0.0; inputs.len()],
        worst: None,
        evaluations: 1,
    };
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = orig;
            report.evaluations += 2;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i].data()[j];
            let err = relative_error(a, numeric);
            if err > report.per_input[i] {
                report.per_input[i] = err;
            }
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, j, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Checks a module: gradients with respect to `inputs` and every parameter
/// of `store`. The closure receives a context over the perturbed parameters.
pub fn grad_check_module<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], f: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&Ctx<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let n = inputs.len();
    let mut all = inputs.to_vec();
    all.extend(store.values());
    grad_check_many(
        |tape, vars| {
            let ctx = Ctx::from_vars(tape, vars[n..].to_vec());
            f(&ctx, &vars[..n])
        },
        &all,
        h,
    )
}
