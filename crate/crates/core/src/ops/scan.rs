//! Fused diagonal selective scan with a hand-derived adjoint.

use crate::error::{mismatch, Result};
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

/// Operands of [`Var::selective_scan`].
pub struct ScanInputs<'a, T> {
    /// Sequence `[B, L, C]`.
    pub x: &'a Var<T>,
    /// Positive step sizes `[B, L, C]`.
    pub delta: &'a Var<T>,
    /// Negative state decay rates `[C, N]`.
    pub a: &'a Var<T>,
    /// Input matrices `[B, L, N]`.
    pub b: &'a Var<T>,
    /// Output matrices `[B, L, N]`.
    pub c: &'a Var<T>,
}

impl<T: Element> Var<T> {
    /// Zero-order-hold recurrence, left to right from `h_0 = 0`:
    ///
    /// ```text
    /// h_t[c, n] = exp(Δ_t[c]·A[c, n])·h_{t-1}[c, n] + Δ_t[c]·B_t[n]·x_t[c]
    /// y_t[c]    = Σ_n C_t[n]·h_t[c, n]
    /// ```
    pub fn selective_scan(inputs: ScanInputs<'_, T>) -> Result<Var<T>> {
        let ScanInputs { x, delta, a, b, c } = inputs;
        let xs = x.shape().to_vec();
        if xs.len() != 3 || delta.shape() != xs.as_slice() {
            return Err(mismatch("selective_scan delta", &xs, delta.shape()));
        }
        let (bn, l, ch) = (xs[0], xs[1], xs[2]);
        let ns = a.shape().get(1).copied().unwrap_or(0);
        if a.shape() != [ch, ns] {
            return Err(mismatch("selective_scan A", a.shape(), &[ch, ns]));
        }
        for m in [b, c] {
            if m.shape() != [bn, l, ns] {
                return Err(mismatch("selective_scan B/C", m.shape(), &[bn, l, ns]));
            }
        }
        let (xv, dv, av, bv, cv) = (x.value_rc(), delta.value_rc(), a.value_rc(), b.value_rc(), c.value_rc());
        let mut hs = vec![T::zero(); bn * l * ch * ns];
        let mut out = vec![T::zero(); bn * l * ch];
        for bi in 0..bn {
            for t in 0..l {
                let row = bi * l + t;
                let brow = &bv.data()[row * ns..(row + 1) * ns];
                let crow = &cv.data()[row * ns..(row + 1) * ns];
                for cc in 0..ch {
                    let d = dv.data()[row * ch + cc];
                    let u = xv.data()[row * ch + cc];
                    let arow = &av.data()[cc * ns..(cc + 1) * ns];
                    let cur = (row * ch + cc) * ns;
                    let mut y = T::zero();
                    for n in 0..ns {
                        let prev = if t == 0 { T::zero() } else { hs[cur - ch * ns + n] };
                        let h = (d * arow[n]).exp() * prev + d * brow[n] * u;
                        hs[cur + n] = h;
                        y = y + crow[n] * h;
                    }
                    out[row * ch + cc] = y;
                }
            }
        }
        let ids = [x.id(), delta.id(), a.id(), b.id(), c.id()];
        let value = Tensor::new(xs.clone(), out)?;
        Ok(x.tape().record(value, &[x, delta, a, b, c], move |gy, sink| {
            let mut dx = vec![T::zero(); bn * l * ch];
            let mut dd = vec![T::zero(); bn * l * ch];
            let mut da = vec![T::zero(); ch * ns];
            let mut db = vec![T::zero(); bn * l * ns];
            let mut dc = vec![T::zero(); bn * l * ns];
            let mut gh = vec![T::zero(); ch * ns];
            for bi in 0..bn {
                gh.fill(T::zero());
                for t in (0..l).rev() {
                    let row = bi * l + t;
                    let brow = &bv.data()[row * ns..(row + 1) * ns];
                    let crow = &cv.data()[row * ns..(row + 1) * ns];
                    for cc in 0..ch {
                        let d = dv.data()[row * ch + cc];
                        let u = xv.data()[row * ch + cc];
                        let g = gy[row * ch + cc];
                        let arow = &av.data()[cc * ns..(cc + 1) * ns];
                        let cur = (row * ch + cc) * ns;
                        let mut gd = T::zero();
                        let mut gu = T::zero();
                        for n in 0..ns {
                            let h = hs[cur + n];
                            dc[row * ns + n] = dc[row * ns + n] + g * h;
                            let gsum = gh[cc * ns + n] + g * crow[n];
                            let prev = if t == 0 { T::zero() } else { hs[cur - ch * ns + n] };
                            let e = (d * arow[n]).exp();
                            gd = gd + gsum * (prev * e * arow[n] + brow[n] * u);
                            da[cc * ns + n] = da[cc * ns + n] + gsum * prev * e * d;
                            db[row * ns + n] = db[row * ns + n] + gsum * d * u;
                            gu = gu + gsum * d * brow[n];
                            gh[cc * ns + n] = gsum * e;
                        }
                        dd[row * ch + cc] = dd[row * ch + cc] + gd;
                        dx[row * ch + cc] = dx[row * ch + cc] + gu;
                    }
                }
            }
            sink.add(ids[0], &dx);
            sink.add(ids[1], &dd);
            sink.add(ids[2], &da);
            sink.add(ids[3], &db);
            sink.add(ids[4], &dc);
        }))
    }
}
