use crate::error::{geometry, mismatch, Result};
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

/// Normalises `groups` contiguous blocks of `len` values each, scaling block
/// element `i` by `gamma[ch(i)]` and shifting by `beta[ch(i)]`, where `ch`
/// maps the element to its affine channel. Returns (output, x̂, 1/σ).
fn normalize<T: Element>(
    x: &[T],
    blocks: usize,
    len: usize,
    eps: T,
    affine: impl Fn(usize, usize) -> usize,
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::lit(len as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); blocks];
    for blk in 0..blocks {
        let xs = &x[blk * len..(blk + 1) * len];
        let mean = xs.iter().copied().sum::<T>() / n;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let r = (var + eps).sqrt().recip();
        rstd[blk] = r;
        for i in 0..len {
            let h = (xs[i] - mean) * r;
            let c = affine(blk, i);
            xhat[blk * len + i] = h;
            out[blk * len + i] = h * gamma[c] + beta[c];
        }
    }
    (out, xhat, rstd)
}

#[allow(clippy::too_many_arguments)]
fn normalize_backward<T: Element>(
    g: &[T],
    xhat: &[T],
    rstd: &[T],
    len: usize,
    affine: impl Fn(usize, usize) -> usize,
    gamma: &[T],
    dx: Option<&mut [T]>,
    dgamma: &mut [T],
    dbeta: &mut [T],
) {
    let n = T::lit(len as f64);
    let mut dx = dx;
    for (blk, &r) in rstd.iter().enumerate() {
        let base = blk * len;
        let mut sum_d = T::zero();
        let mut sum_dh = T::zero();
        for i in 0..len {
            let c = affine(blk, i);
            let gv = g[base + i];
            let h = xhat[base + i];
            dgamma[c] = dgamma[c] + gv * h;
            dbeta[c] = dbeta[c] + gv;
            let d = gv * gamma[c];
            sum_d = sum_d + d;
            sum_dh = sum_dh + d * h;
        }
        if let Some(dx) = dx.as_deref_mut() {
            for i in 0..len {
                let c = affine(blk, i);
                let d = g[base + i] * gamma[c];
                let h = xhat[base + i];
                dx[base + i] = dx[base + i] + r / n * (n * d - sum_d - h * sum_dh);
            }
        }
    }
}

impl<T: Element> Var<T> {
    /// Group normalisation over `[B, C, ...]` with per-channel affine.
    pub fn group_norm(&self, gamma: &Var<T>, beta: &Var<T>, groups: usize, eps: f64) -> Result<Var<T>> {
        let xs = self.shape().to_vec();
        if xs.len() < 2 {
            return Err(geometry("group_norm", format!("rank of {xs:?}")));
        }
        let (bn, c) = (xs[0], xs[1]);
        if groups == 0 || c % groups != 0 {
            return Err(geometry("group_norm", format!("{c} channels not divisible by {groups} groups")));
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(mismatch("group_norm affine", gamma.shape(), &[c]));
        }
        let spatial = self.numel() / (bn * c);
        let cpg = c / groups;
        let len = cpg * spatial;
        let affine = move |blk: usize, i: usize| (blk % groups) * cpg + i / spatial;
        let (out, xhat, rstd) = normalize(
            self.data(),
            bn * groups,
            len,
            T::lit(eps),
            affine,
            gamma.data(),
            beta.data(),
        );
        self.norm_record(xs, out, xhat, rstd, len, affine, gamma, beta)
    }

    /// Layer normalisation over the last axis.
    pub fn layer_norm(&self, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Result<Var<T>> {
        let xs = self.shape().to_vec();
        let c = *xs.last().ok_or_else(|| geometry("layer_norm", "scalar input"))?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(mismatch("layer_norm affine", gamma.shape(), &[c]));
        }
        let affine = |_: usize, i: usize| i;
        let (out, xhat, rstd) = normalize(
            self.data(),
            self.numel() / c,
            c,
            T::lit(eps),
            affine,
            gamma.data(),
            beta.data(),
        );
        self.norm_record(xs, out, xhat, rstd, c, affine, gamma, beta)
    }

    #[allow(clippy::too_many_arguments)]
    fn norm_record<A>(
        &self,
        shape: Vec<usize>,
        out: Vec<T>,
        xhat: Vec<T>,
        rstd: Vec<T>,
        len: usize,
        affine: A,
        gamma: &Var<T>,
        beta: &Var<T>,
    ) -> Result<Var<T>>
    where
        A: Fn(usize, usize) -> usize + Copy + 'static,
    {
        let (ix, ig, ibt) = (self.id(), gamma.id(), beta.id());
        let gamma_v = gamma.value_rc();
        let c = gamma.numel();
        Ok(self.tape().record(Tensor::new(shape, out)?, &[self, gamma, beta], move |g, sink| {
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut dx = if sink.wants(ix) { Some(vec![T::zero(); g.len()]) } else { None };
            normalize_backward(
                g,
                &xhat,
                &rstd,
                len,
                affine,
                gamma_v.data(),
                dx.as_deref_mut(),
                &mut dgamma,
                &mut dbeta,
            );
            if let Some(dx) = dx {
                sink.add(ix, &dx);
            }
            sink.add(ig, &dgamma);
            sink.add(ibt, &dbeta);
        }))
    }
}
