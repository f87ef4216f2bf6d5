//! Sliding-window attention primitives over a `H×W` pixel grid.
//!
//! Tokens are laid out `[B, heads, H·W, c]`. Window slot `s = dy·k + dx`
//! of pixel `(i, j)` refers to pixel `(i + dy - r, j + dx - r)` with
//! `r = (k - 1) / 2`; slots falling outside the grid are invalid.

use crate::error::{geometry, mismatch, Result};
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

/// Validity of every `(pixel, slot)` pair, row-major over pixels.
pub fn neighborhood_mask(height: usize, width: usize, window: usize) -> Vec<bool> {
    let k2 = window * window;
    let mut mask = vec![false; height * width * k2];
    for p in 0..height * width {
        for (s, m) in mask[p * k2..(p + 1) * k2].iter_mut().enumerate() {
            *m = neighbor(p, s, height, width, window).is_some();
        }
    }
    mask
}

#[inline]
fn neighbor(p: usize, s: usize, h: usize, w: usize, k: usize) -> Option<usize> {
    let r = (k / 2) as isize;
    let (i, j) = ((p / w) as isize, (p % w) as isize);
    let (ni, nj) = (i + (s / k) as isize - r, j + (s % k) as isize - r);
    (ni >= 0 && nj >= 0 && ni < h as isize && nj < w as isize).then(|| ni as usize * w + nj as usize)
}

fn check(op: &'static str, a: &[usize], b: &[usize], h: usize, w: usize, k: usize) -> Result<()> {
    if k % 2 == 0 {
        return Err(geometry(op, format!("window {k} must be odd")));
    }
    if a.len() != 4 || b.len() != 4 || a[..2] != b[..2] || b[2] != h * w {
        return Err(mismatch(op, a, b));
    }
    Ok(())
}

impl<T: Element> Var<T> {
    /// Query–key dot products over each pixel's window, `[B, heads, H·W, k²]`.
    /// Invalid slots hold 0 and must be masked downstream.
    pub fn neighborhood_logits(&self, keys: &Var<T>, height: usize, width: usize, window: usize) -> Result<Var<T>> {
        let (qs, ks) = (self.shape().to_vec(), keys.shape().to_vec());
        check("neighborhood_logits", &qs, &ks, height, width, window)?;
        if qs != ks {
            return Err(mismatch("neighborhood_logits", &qs, &ks));
        }
        let (planes, n, c) = (qs[0] * qs[1], qs[2], qs[3]);
        let k2 = window * window;
        let nb: Vec<Option<usize>> = (0..n * k2)
            .map(|i| neighbor(i / k2, i % k2, height, width, window))
            .collect();
        let (q, kv) = (self.value_rc(), keys.value_rc());
        let mut out = vec![T::zero(); planes * n * k2];
        for pl in 0..planes {
            let qp = &q.data()[pl * n * c..(pl + 1) * n * c];
            let kp = &kv.data()[pl * n * c..(pl + 1) * n * c];
            for p in 0..n {
                let qr = &qp[p * c..(p + 1) * c];
                for s in 0..k2 {
                    if let Some(m) = nb[p * k2 + s] {
                        let kr = &kp[m * c..(m + 1) * c];
                        out[(pl * n + p) * k2 + s] = super::dot(qr, kr);
                    }
                }
            }
        }
        let (iq, ik) = (self.id(), keys.id());
        let value = Tensor::new(vec![qs[0], qs[1], n, k2], out)?;
        Ok(self.tape().record(value, &[self, keys], move |g, sink| {
            if let Some(dq) = sink.slot(iq) {
                for pl in 0..planes {
                    for p in 0..n {
                        for s in 0..k2 {
                            if let Some(m) = nb[p * k2 + s] {
                                let gv = g[(pl * n + p) * k2 + s];
                                let kr = &kv.data()[(pl * n + m) * c..(pl * n + m + 1) * c];
                                let dr = &mut dq[(pl * n + p) * c..(pl * n + p + 1) * c];
                                for (d, &kx) in dr.iter_mut().zip(kr) {
                                    *d = *d + gv * kx;
                                }
                            }
                        }
                    }
                }
            }
            if let Some(dk) = sink.slot(ik) {
                for pl in 0..planes {
                    for p in 0..n {
                        let qr = &q.data()[(pl * n + p) * c..(pl * n + p + 1) * c];
                        for s in 0..k2 {
                            if let Some(m) = nb[p * k2 + s] {
                                let gv = g[(pl * n + p) * k2 + s];
                                let dr = &mut dk[(pl * n + m) * c..(pl * n + m + 1) * c];
                                for (d, &qx) in dr.iter_mut().zip(qr) {
                                    *d = *d + gv * qx;
                                }
                            }
                        }
                    }
                }
            }
        }))
    }

    /// Weighted sum of window values: `self` holds weights
    /// `[B, heads, H·W, k²]`, `values` is `[B, heads, H·W, c]`.
    pub fn neighborhood_aggregate(&self, values: &Var<T>, height: usize, width: usize, window: usize) -> Result<Var<T>> {
        let (as_, vs) = (self.shape().to_vec(), values.shape().to_vec());
        check("neighborhood_aggregate", &vs, &vs, height, width, window)?;
        let k2 = window * window;
        if as_.len() != 4 || as_[..3] != vs[..3] || as_[3] != k2 {
            return Err(mismatch("neighborhood_aggregate", &as_, &vs));
        }
        let (planes, n, c) = (vs[0] * vs[1], vs[2], vs[3]);
        let nb: Vec<Option<usize>> = (0..n * k2)
            .map(|i| neighbor(i / k2, i % k2, height, width, window))
            .collect();
        let (a, v) = (self.value_rc(), values.value_rc());
        let mut out = vec![T::zero(); planes * n * c];
        for pl in 0..planes {
            for p in 0..n {
                let orow = &mut out[(pl * n + p) * c..(pl * n + p + 1) * c];
                for s in 0..k2 {
                    if let Some(m) = nb[p * k2 + s] {
                        let wv = a.data()[(pl * n + p) * k2 + s];
                        let vr = &v.data()[(pl * n + m) * c..(pl * n + m + 1) * c];
                        for (o, &x) in orow.iter_mut().zip(vr) {
                            *o = *o + wv * x;
                        }
                    }
                }
            }
        }
        let (ia, iv) = (self.id(), values.id());
        let value = Tensor::new(vs.clone(), out)?;
        Ok(self.tape().record(value, &[self, values], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                for pl in 0..planes {
                    for p in 0..n {
                        let gr = &g[(pl * n + p) * c..(pl * n + p + 1) * c];
                        for s in 0..k2 {
                            if let Some(m) = nb[p * k2 + s] {
                                let vr = &v.data()[(pl * n + m) * c..(pl * n + m + 1) * c];
                                let d = &mut da[(pl * n + p) * k2 + s];
                                *d = *d + super::dot(gr, vr);
                            }
                        }
                    }
                }
            }
            if let Some(dv) = sink.slot(iv) {
                for pl in 0..planes {
                    for p in 0..n {
                        let gr = &g[(pl * n + p) * c..(pl * n + p + 1) * c];
                        for s in 0..k2 {
                            if let Some(m) = nb[p * k2 + s] {
                                let wv = a.data()[(pl * n + p) * k2 + s];
                                let dr = &mut dv[(pl * n + m) * c..(pl * n + m + 1) * c];
                                for (d, &x) in dr.iter_mut().zip(gr) {
                                    *d = *d + wv * x;
                                }
                            }
                        }
                    }
                }
            }
        }))
    }
}
