use crate::error::{mismatch, Result};
use crate::tape::Var;
use crate::tensor::{numel, Element, Tensor};

/// `c[m,n] += a[m,k] · b[k,n]`
fn gemm_acc<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m,k] += g[m,n] · b[k,n]ᵀ`
fn gemm_nt_acc<T: Element>(g: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot = super::dot(grow, brow);
            c[i * k + p] = c[i * k + p] + dot;
        }
    }
}

/// `c[k,n] += a[m,k]ᵀ · g[m,n]`
fn gemm_tn_acc<T: Element>(a: &[T], g: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv = *cv + av * gv;
            }
        }
    }
}

impl<T: Element> Var<T> {
    /// Batched matrix product `[.., m, k] · [.., k, n]`. The right operand
    /// is either a plain matrix shared by every batch entry or carries the
    /// same leading extents as the left operand.
    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        if k != k2 || !(batch_b.is_empty() || batch_b == batch_a) {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let batches = numel(batch_a);
        let shared = batch_b.is_empty();
        let (a, b) = (self.value_rc(), other.value_rc());
        let mut out = vec![T::zero(); batches * m * n];
        for bi in 0..batches {
            let bo = if shared { 0 } else { bi * k * n };
            gemm_acc(
                &a.data()[bi * m * k..(bi + 1) * m * k],
                &b.data()[bo..bo + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut out_shape = batch_a.to_vec();
        out_shape.extend([m, n]);
        let (ia, ib) = (self.id(), other.id());
        Ok(self.tape().record(Tensor::new(out_shape, out)?, &[self, other], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                for bi in 0..batches {
                    let bo = if shared { 0 } else { bi * k * n };
                    gemm_nt_acc(
                        &g[bi * m * n..(bi + 1) * m * n],
                        &b.data()[bo..bo + k * n],
                        &mut da[bi * m * k..(bi + 1) * m * k],
                        m,
                        k,
                        n,
                    );
                }
            }
            if let Some(db) = sink.slot(ib) {
                for bi in 0..batches {
                    let bo = if shared { 0 } else { bi * k * n };
                    gemm_tn_acc(
                        &a.data()[bi * m * k..(bi + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        &mut db[bo..bo + k * n],
                        m,
                        k,
                        n,
                    );
                }
            }
        }))
    }

    /// Affine map over the last axis: `y = x·Wᵀ + b` with `W: [out, in]`.
    pub fn linear(&self, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[1]) {
            return Err(mismatch("linear", &xs, &ws));
        }
        let (out_dim, in_dim) = (ws[0], ws[1]);
        if let Some(b) = bias {
            if b.shape() != [out_dim] {
                return Err(mismatch("linear bias", b.shape(), &[out_dim]));
            }
        }
        let rows = self.numel() / in_dim;
        let (x, w) = (self.value_rc(), weight.value_rc());
        let mut out = vec![T::zero(); rows * out_dim];
        for r in 0..rows {
            let xr = &x.data()[r * in_dim..(r + 1) * in_dim];
            let orow = &mut out[r * out_dim..(r + 1) * out_dim];
            for (o, ov) in orow.iter_mut().enumerate() {
                let wr = &w.data()[o * in_dim..(o + 1) * in_dim];
                let mut acc = super::dot(xr, wr);
                if let Some(b) = bias {
                    acc = acc + b.data()[o];
                }
                *ov = acc;
            }
        }
        let mut out_shape = xs;
        *out_shape.last_mut().expect("rank >= 1") = out_dim;
        let (ixx, iw) = (self.id(), weight.id());
        let ib = bias.map(|b| b.id());
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        Ok(self.tape().record(Tensor::new(out_shape, out)?, &parents, move |g, sink| {
            if let Some(dx) = sink.slot(ixx) {
                gemm_acc(g, w.data(), dx, rows, out_dim, in_dim);
            }
            if let Some(dw) = sink.slot(iw) {
                gemm_tn_acc(g, x.data(), dw, rows, out_dim, in_dim);
            }
            if let Some(ib) = ib {
                if let Some(db) = sink.slot(ib) {
                    for grow in g.chunks(out_dim) {
                        for (d, &v) in db.iter_mut().zip(grow) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::tape::Tape;
    use crate::tensor::Tensor;

    fn triple_loop(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn identity_and_small_product() {
        let t = Tape::<f64>::new();
        let i2 = t.constant(Tensor::from_f64([2, 2], &[1., 0., 0., 1.]).unwrap());
        assert_eq!(i2.matmul(&i2).unwrap().data(), &[1., 0., 0., 1.]);
        let a = t.constant(Tensor::from_f64([2, 2], &[1., 2., 3., 4.]).unwrap());
        let b = t.constant(Tensor::from_f64([2, 1], &[1., 1.]).unwrap());
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3., 7.]);
    }

    #[test]
    fn matches_triple_loop_on_integer_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..12).map(|_| rng.gen_range(-5..=5) as f64).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-5..=5) as f64).collect();
        let t = Tape::<f64>::new();
        let va = t.constant(Tensor::new([3, 4], a.clone()).unwrap());
        let vb = t.constant(Tensor::new([4, 2], b.clone()).unwrap());
        assert_eq!(va.matmul(&vb).unwrap().data(), triple_loop(&a, &b, 3, 4, 2));
    }

    #[test]
    fn inner_dim_mismatch_errors() {
        let t = Tape::<f64>::new();
        let a = t.constant(Tensor::zeros([2, 3]));
        let b = t.constant(Tensor::zeros([2, 3]));
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn linear_values() {
        let t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_f64([1, 2], &[1., 1.]).unwrap());
        let w = t.constant(Tensor::from_f64([1, 2], &[1., 2.]).unwrap());
        let b = t.constant(Tensor::from_f64([1], &[3.]).unwrap());
        assert_eq!(x.linear(&w, Some(&b)).unwrap().data(), &[6.]);

        let x = t.constant(Tensor::from_f64([2, 3], &[1., -2., 3., 0.5, 4., -1.]).unwrap());
        let eye = t.constant(Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        assert_eq!(x.linear(&eye, None).unwrap().value(), x.value());
    }

    #[test]
    fn linear_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = Tape::<f64>::new();
        let y = t
            .constant(Tensor::new([3, 5], x.clone()).unwrap())
            .linear(
                &t.constant(Tensor::new([4, 5], w.clone()).unwrap()),
                Some(&t.constant(Tensor::new([4], b.clone()).unwrap())),
            )
            .unwrap();
        for r in 0..3 {
            for o in 0..4 {
                let mut acc = b[o];
                for i in 0..5 {
                    acc += x[r * 5 + i] * w[o * 5 + i];
                }
                assert!((y.data()[r * 4 + o] - acc).abs() < 1e-12);
            }
        }
    }
}
