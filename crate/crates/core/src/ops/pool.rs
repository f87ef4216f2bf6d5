use crate::error::{geometry, Result};
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

/// Bin `i` of `out` bins over `len` inputs covers `[floor(i·len/out), ceil((i+1)·len/out))`.
fn bins(len: usize, out: usize) -> Vec<(usize, usize)> {
    (0..out)
        .map(|i| (i * len / out, ((i + 1) * len).div_ceil(out)))
        .collect()
}

impl<T: Element> Var<T> {
    /// Adaptive average pooling of `[B, C, H, W]` to `[B, C, ph, pw]`.
    /// Output grids larger than the input repeat pixels across bins.
    pub fn adaptive_avg_pool2d(&self, ph: usize, pw: usize) -> Result<Var<T>> {
        let s = self.shape().to_vec();
        if s.len() != 4 || ph == 0 || pw == 0 {
            return Err(geometry("adaptive_avg_pool2d", format!("{s:?} -> {ph}x{pw}")));
        }
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (rows, cols) = (bins(h, ph), bins(w, pw));
        let x = self.data();
        let mut out = vec![T::zero(); bn * c * ph * pw];
        for plane in 0..bn * c {
            let xp = &x[plane * h * w..(plane + 1) * h * w];
            for (i, &(r0, r1)) in rows.iter().enumerate() {
                for (j, &(c0, c1)) in cols.iter().enumerate() {
                    let mut acc = T::zero();
                    for r in r0..r1 {
                        for cc in c0..c1 {
                            acc = acc + xp[r * w + cc];
                        }
                    }
                    let n = T::lit(((r1 - r0) * (c1 - c0)) as f64);
                    out[(plane * ph + i) * pw + j] = acc / n;
                }
            }
        }
        let ix = self.id();
        let value = Tensor::new(vec![bn, c, ph, pw], out)?;
        Ok(self.tape().record(value, &[self], move |g, sink| {
            if let Some(dx) = sink.slot(ix) {
                for plane in 0..bn * c {
                    for (i, &(r0, r1)) in rows.iter().enumerate() {
                        for (j, &(c0, c1)) in cols.iter().enumerate() {
                            let n = T::lit(((r1 - r0) * (c1 - c0)) as f64);
                            let gv = g[(plane * ph + i) * pw + j] / n;
                            for r in r0..r1 {
                                for cc in c0..c1 {
                                    let d = &mut dx[plane * h * w + r * w + cc];
                                    *d = *d + gv;
                                }
                            }
                        }
                    }
                }
            }
        }))
    }
}
