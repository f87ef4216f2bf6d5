use std::rc::Rc;

use crate::error::{geometry, Result};
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

impl<T: Element> Var<T> {
    /// Softmax along the last axis, with max subtraction.
    pub fn softmax_lastdim(&self) -> Var<T> {
        self.softmax_impl(None).expect("unmasked softmax cannot fail")
    }

    /// Softmax along the last axis where `mask[i % mask.len()] == false`
    /// excludes element `i`: it gets probability 0 and no adjoint. Every row
    /// needs at least one unmasked element.
    pub fn softmax_lastdim_masked(&self, mask: Rc<Vec<bool>>) -> Result<Var<T>> {
        let k = *self.shape().last().unwrap_or(&1);
        if mask.is_empty() || self.numel() % mask.len() != 0 || mask.len() % k != 0 {
            return Err(geometry(
                "softmax_lastdim_masked",
                format!("mask of {} for shape {:?}", mask.len(), self.shape()),
            ));
        }
        if mask.chunks(k).any(|row| !row.iter().any(|&m| m)) {
            return Err(geometry("softmax_lastdim_masked", "row with every entry masked"));
        }
        self.softmax_impl(Some(mask))
    }

    fn softmax_impl(&self, mask: Option<Rc<Vec<bool>>>) -> Result<Var<T>> {
        let k = *self.shape().last().unwrap_or(&1);
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        let valid = |i: usize| mask.as_ref().map_or(true, |m| m[i % m.len()]);
        for (r, row) in x.chunks(k).enumerate() {
            let base = r * k;
            let mut mx = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if valid(base + j) && v > mx {
                    mx = v;
                }
            }
            let mut sum = T::zero();
            for (j, &v) in row.iter().enumerate() {
                if valid(base + j) {
                    let e = (v - mx).exp();
                    out[base + j] = e;
                    sum = sum + e;
                }
            }
            for o in &mut out[base..base + k] {
                *o = *o / sum;
            }
        }
        let y = Rc::new(Tensor::new(self.shape().to_vec(), out)?);
        let saved = Rc::clone(&y);
        let ix = self.id();
        Ok(self.tape().record_rc(y, &[self], move |g, sink| {
            if let Some(dx) = sink.slot(ix) {
                let y = saved.data();
                for r in 0..g.len() / k {
                    let (gs, ys) = (&g[r * k..(r + 1) * k], &y[r * k..(r + 1) * k]);
                    let dot = super::dot(gs, ys);
                    for j in 0..k {
                        dx[r * k + j] = dx[r * k + j] + ys[j] * (gs[j] - dot);
                    }
                }
            }
        }))
    }

    /// `x - logsumexp(x)` along the last axis.
    pub fn log_softmax_lastdim(&self) -> Var<T> {
        let k = *self.shape().last().unwrap_or(&1);
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        let mut probs = vec![T::zero(); x.len()];
        for (r, row) in x.chunks(k).enumerate() {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + sum.ln();
            for j in 0..k {
                out[r * k + j] = row[j] - lse;
                probs[r * k + j] = (row[j] - lse).exp();
            }
        }
        let ix = self.id();
        let value = Tensor::new(self.shape().to_vec(), out).expect("same shape");
        self.tape().record(value, &[self], move |g, sink| {
            if let Some(dx) = sink.slot(ix) {
                for r in 0..g.len() / k {
                    let gs = &g[r * k..(r + 1) * k];
                    let total: T = gs.iter().copied().sum();
                    for j in 0..k {
                        dx[r * k + j] = dx[r * k + j] + gs[j] - probs[r * k + j] * total;
                    }
                }
            }
        })
    }
}
