use crate::error::{geometry, mismatch, Result};
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

/// `floor((h + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
pub fn conv2d_out_extent(h: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || h + 2 * padding < k {
        return None;
    }
    Some((h + 2 * padding - k) / stride + 1)
}

/// `(h - 1)·s - 2p + k`, or `None` when that is not positive.
pub fn conv_transpose2d_out_extent(h: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || h == 0 {
        return None;
    }
    let full = (h - 1) * stride + k;
    (full > 2 * padding).then(|| full - 2 * padding)
}

/// Enumerates the taps of kernel offset `(ky, kx)` that relate a "dense"
/// plane `[dh, dw]` to a "strided" plane `[sh, sw]` through
/// `dense = strided·s + k - p`. For every strided row with in-range dense
/// positions, calls `f(dense_off, strided_off, count)`; consecutive taps step
/// by `s` in the dense plane and by 1 in the strided plane.
#[allow(clippy::too_many_arguments)]
#[inline]
fn taps(
    dense: (usize, usize),
    strided: (usize, usize),
    ky: usize,
    kx: usize,
    s: usize,
    p: usize,
    mut f: impl FnMut(usize, usize, usize),
) {
    let (dh, dw) = (dense.0 as isize, dense.1 as isize);
    let (si, sj) = (s as isize, p as isize);
    // column range valid for every row
    let kxo = kx as isize - sj;
    let lo = if kxo >= 0 { 0 } else { (-kxo + si - 1) / si };
    let hi = if dw - 1 - kxo < 0 {
        0
    } else {
        ((dw - 1 - kxo) / si + 1).min(strided.1 as isize)
    };
    if hi <= lo {
        return;
    }
    let count = (hi - lo) as usize;
    for oy in 0..strided.0 {
        let iy = oy as isize * si + ky as isize - sj;
        if iy < 0 || iy >= dh {
            continue;
        }
        let dense_off = (iy * dw + lo * si + kxo) as usize;
        let strided_off = oy * strided.1 + lo as usize;
        f(dense_off, strided_off, count);
    }
}

/// `dst[t·ds] += a·src[t·ss]` for `t < n`, with a contiguous fast path.
#[inline]
fn axpy<T: Element>(dst: &mut [T], ds: usize, src: &[T], ss: usize, a: T, n: usize) {
    if ds == 1 && ss == 1 {
        for (d, &v) in dst[..n].iter_mut().zip(&src[..n]) {
            *d = *d + a * v;
        }
    } else {
        for t in 0..n {
            dst[t * ds] = dst[t * ds] + a * src[t * ss];
        }
    }
}

impl<T: Element> Var<T> {
    /// 2-D cross-correlation over `[B, C, H, W]` with weight
    /// `[C_out, C/groups, kh, kw]`.
    pub fn conv2d(
        &self,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var<T>> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(mismatch("conv2d", &xs, &ws));
        }
        let (bn, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cpg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if groups == 0 || cin % groups != 0 || cout % groups != 0 || cpg != cin / groups {
            return Err(mismatch("conv2d channels/groups", &xs, &ws));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(mismatch("conv2d bias", b.shape(), &[cout]));
            }
        }
        let ho = conv2d_out_extent(h, kh, stride, padding)
            .ok_or_else(|| geometry("conv2d", format!("kernel {kh} on extent {h} pad {padding}")))?;
        let wo = conv2d_out_extent(w, kw, stride, padding)
            .ok_or_else(|| geometry("conv2d", format!("kernel {kw} on extent {w} pad {padding}")))?;
        let opg = cout / groups;
        let (x, wt) = (self.value_rc(), weight.value_rc());
        let mut out = vec![T::zero(); bn * cout * ho * wo];
        for b in 0..bn {
            for oc in 0..cout {
                let g = oc / opg;
                let oplane = &mut out[(b * cout + oc) * ho * wo..(b * cout + oc + 1) * ho * wo];
                if let Some(bv) = bias {
                    oplane.fill(bv.data()[oc]);
                }
                for icl in 0..cpg {
                    let ic = g * cpg + icl;
                    let xplane = &x.data()[(b * cin + ic) * h * w..(b * cin + ic + 1) * h * w];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = wt.data()[((oc * cpg + icl) * kh + ky) * kw + kx];
                            taps((h, w), (ho, wo), ky, kx, stride, padding, |io, oo, n| {
                                axpy(&mut oplane[oo..], 1, &xplane[io..], stride, wv, n);
                            });
                        }
                    }
                }
            }
        }
        let (ixx, iw) = (self.id(), weight.id());
        let ib = bias.map(|b| b.id());
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let value = Tensor::new(vec![bn, cout, ho, wo], out)?;
        Ok(self.tape().record(value, &parents, move |gr, sink| {
            let want_x = sink.wants(ixx);
            let want_w = sink.wants(iw);
            let mut dx = if want_x { vec![T::zero(); x.numel()] } else { Vec::new() };
            let mut dw = if want_w { vec![T::zero(); wt.numel()] } else { Vec::new() };
            for b in 0..bn {
                for oc in 0..cout {
                    let g = oc / opg;
                    let gplane = &gr[(b * cout + oc) * ho * wo..(b * cout + oc + 1) * ho * wo];
                    for icl in 0..cpg {
                        let ic = g * cpg + icl;
                        let xo = (b * cin + ic) * h * w;
                        let xplane = &x.data()[xo..xo + h * w];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let widx = ((oc * cpg + icl) * kh + ky) * kw + kx;
                                let wv = wt.data()[widx];
                                let mut acc = T::zero();
                                taps((h, w), (ho, wo), ky, kx, stride, padding, |io, oo, n| {
                                    let gs = &gplane[oo..oo + n];
                                    if want_x {
                                        axpy(&mut dx[xo + io..], stride, gs, 1, wv, n);
                                    }
                                    if want_w {
                                        acc = acc
                                            + if stride == 1 {
                                                super::dot(gs, &xplane[io..io + n])
                                            } else {
                                                gs.iter()
                                                    .enumerate()
                                                    .fold(T::zero(), |a, (t, &gv)| a + gv * xplane[io + t * stride])
                                            };
                                    }
                                });
                                if want_w {
                                    dw[widx] = dw[widx] + acc;
                                }
                            }
                        }
                    }
                }
            }
            if want_x {
                sink.add(ixx, &dx);
            }
            if want_w {
                sink.add(iw, &dw);
            }
            if let Some(ib) = ib {
                if let Some(db) = sink.slot(ib) {
                    for b in 0..bn {
                        for (oc, d) in db.iter_mut().enumerate() {
                            let gplane = &gr[(b * cout + oc) * ho * wo..(b * cout + oc + 1) * ho * wo];
                            *d = *d + super::sum(gplane);
                        }
                    }
                }
            }
        }))
    }

    /// Transposed convolution over `[B, C_in, H, W]` with weight
    /// `[C_in, C_out, kh, kw]`; output extent `(H-1)·s - 2p + kh`.
    pub fn conv_transpose2d(
        &self,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<T>> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] {
            return Err(mismatch("conv_transpose2d", &xs, &ws));
        }
        let (bn, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(mismatch("conv_transpose2d bias", b.shape(), &[cout]));
            }
        }
        let ho = conv_transpose2d_out_extent(h, kh, stride, padding)
            .ok_or_else(|| geometry("conv_transpose2d", format!("extent {h} kernel {kh} stride {stride} pad {padding}")))?;
        let wo = conv_transpose2d_out_extent(w, kw, stride, padding)
            .ok_or_else(|| geometry("conv_transpose2d", format!("extent {w} kernel {kw} stride {stride} pad {padding}")))?;
        let (x, wt) = (self.value_rc(), weight.value_rc());
        let mut out = vec![T::zero(); bn * cout * ho * wo];
        for b in 0..bn {
            for oc in 0..cout {
                let oplane = &mut out[(b * cout + oc) * ho * wo..(b * cout + oc + 1) * ho * wo];
                if let Some(bv) = bias {
                    oplane.fill(bv.data()[oc]);
                }
                for ic in 0..cin {
                    let xplane = &x.data()[(b * cin + ic) * h * w..(b * cin + ic + 1) * h * w];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = wt.data()[((ic * cout + oc) * kh + ky) * kw + kx];
                            taps((ho, wo), (h, w), ky, kx, stride, padding, |dense, small, n| {
                                axpy(&mut oplane[dense..], stride, &xplane[small..], 1, wv, n);
                            });
                        }
                    }
                }
            }
        }
        let (ixx, iw) = (self.id(), weight.id());
        let ib = bias.map(|b| b.id());
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let value = Tensor::new(vec![bn, cout, ho, wo], out)?;
        Ok(self.tape().record(value, &parents, move |gr, sink| {
            let want_x = sink.wants(ixx);
            let want_w = sink.wants(iw);
            let mut dx = if want_x { vec![T::zero(); x.numel()] } else { Vec::new() };
            let mut dw = if want_w { vec![T::zero(); wt.numel()] } else { Vec::new() };
            for b in 0..bn {
                for oc in 0..cout {
                    let gplane = &gr[(b * cout + oc) * ho * wo..(b * cout + oc + 1) * ho * wo];
                    for ic in 0..cin {
                        let xo = (b * cin + ic) * h * w;
                        let xplane = &x.data()[xo..xo + h * w];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let widx = ((ic * cout + oc) * kh + ky) * kw + kx;
                                let wv = wt.data()[widx];
                                let mut acc = T::zero();
                                taps((ho, wo), (h, w), ky, kx, stride, padding, |dense, small, n| {
                                    if want_x {
                                        axpy(&mut dx[xo + small..], 1, &gplane[dense..], stride, wv, n);
                                    }
                                    if want_w {
                                        acc = acc
                                            + (0..n).fold(T::zero(), |a, t| a + gplane[dense + t * stride] * xplane[small + t]);
                                    }
                                });
                                if want_w {
                                    dw[widx] = dw[widx] + acc;
                                }
                            }
                        }
                    }
                }
            }
            if want_x {
                sink.add(ixx, &dx);
            }
            if want_w {
                sink.add(iw, &dw);
            }
            if let Some(ib) = ib {
                if let Some(db) = sink.slot(ib) {
                    for b in 0..bn {
                        for (oc, d) in db.iter_mut().enumerate() {
                            let gplane = &gr[(b * cout + oc) * ho * wo..(b * cout + oc + 1) * ho * wo];
                            *d = *d + super::sum(gplane);
                        }
                    }
                }
            }
        }))
    }
}
