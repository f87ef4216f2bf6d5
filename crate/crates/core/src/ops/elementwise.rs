use std::rc::Rc;

use crate::error::{mismatch, Result};
use crate::tape::Var;
use crate::tensor::{numel, Element, Tensor};

/// How the right operand of a binary op is indexed for each output element.
#[derive(Clone)]
enum Bcast {
    Same,
    Scalar,
    /// `b` equals a trailing suffix of `a`'s shape.
    Cycle(usize),
    Map(Rc<Vec<usize>>),
}

impl Bcast {
    fn plan(a: &[usize], b: &[usize], op: &'static str) -> Result<Self> {
        if a == b {
            return Ok(Self::Same);
        }
        if numel(b) == 1 && b.len() <= a.len().max(1) {
            return Ok(Self::Scalar);
        }
        if b.len() > a.len() {
            return Err(mismatch(op, a, b));
        }
        let offset = a.len() - b.len();
        let mut padded = vec![1usize; offset];
        padded.extend_from_slice(b);
        for (&da, &db) in a.iter().zip(&padded) {
            if db != da && db != 1 {
                return Err(mismatch(op, a, b));
            }
        }
        if &a[offset..] == b {
            return Ok(Self::Cycle(numel(b)));
        }
        // General trailing-aligned broadcast with unit extents in `b`.
        let mut strides = vec![0usize; a.len()];
        let mut acc = 1;
        for d in (0..a.len()).rev() {
            strides[d] = if padded[d] == 1 { 0 } else { acc };
            acc *= padded[d];
        }
        let n = numel(a);
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; a.len()];
        let mut off = 0usize;
        for _ in 0..n {
            map.push(off);
            for d in (0..a.len()).rev() {
                idx[d] += 1;
                off += strides[d];
                if idx[d] < a[d] {
                    break;
                }
                off -= strides[d] * a[d];
                idx[d] = 0;
            }
        }
        Ok(Self::Map(Rc::new(map)))
    }

    #[inline]
    fn idx(&self, i: usize) -> usize {
        match self {
            Self::Same => i,
            Self::Scalar => 0,
            Self::Cycle(n) => i % n,
            Self::Map(m) => m[i],
        }
    }
}

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl<T: Element> Var<T> {
    fn binary(&self, other: &Var<T>, kind: BinKind, op: &'static str) -> Result<Var<T>> {
        let plan = Bcast::plan(self.shape(), other.shape(), op)?;
        let a = self.value_rc();
        let b = other.value_rc();
        let (ad, bd) = (a.data(), b.data());
        let out: Vec<T> = (0..ad.len())
            .map(|i| {
                let (x, y) = (ad[i], bd[plan.idx(i)]);
                match kind {
                    BinKind::Add => x + y,
                    BinKind::Sub => x - y,
                    BinKind::Mul => x * y,
                    BinKind::Div => x / y,
                }
            })
            .collect();
        let value = Tensor::new(self.shape().to_vec(), out)?;
        let (ia, ib) = (self.id(), other.id());
        Ok(self.tape().record(value, &[self, other], move |g, sink| {
            let (ad, bd) = (a.data(), b.data());
            if let Some(da) = sink.slot(ia) {
                for i in 0..g.len() {
                    da[i] = da[i]
                        + match kind {
                            BinKind::Add | BinKind::Sub => g[i],
                            BinKind::Mul => g[i] * bd[plan.idx(i)],
                            BinKind::Div => g[i] / bd[plan.idx(i)],
                        };
                }
            }
            if let Some(db) = sink.slot(ib) {
                for i in 0..g.len() {
                    let j = plan.idx(i);
                    db[j] = db[j]
                        + match kind {
                            BinKind::Add => g[i],
                            BinKind::Sub => -g[i],
                            BinKind::Mul => g[i] * ad[i],
                            BinKind::Div => -g[i] * ad[i] / (bd[j] * bd[j]),
                        };
                }
            }
        }))
    }

    /// Elementwise sum; `other` may broadcast along trailing axes.
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(other, BinKind::Add, "add")
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(other, BinKind::Sub, "sub")
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(other, BinKind::Mul, "mul")
    }

    pub fn div(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(other, BinKind::Div, "div")
    }

    /// Applies `f` elementwise; `df(x, y)` is the derivative at input `x`
    /// with output `y`.
    pub fn unary<F, D>(&self, f: F, df: D) -> Var<T>
    where
        F: Fn(T) -> T,
        D: Fn(T, T) -> T + 'static,
    {
        let x = self.value_rc();
        let y = Rc::new(x.map(&f));
        let ix = self.id();
        let saved = Rc::clone(&y);
        self.tape().record_rc(y, &[self], move |g, sink| {
            if let Some(dx) = sink.slot(ix) {
                let (xd, yd) = (x.data(), saved.data());
                for i in 0..g.len() {
                    dx[i] = dx[i] + g[i] * df(xd[i], yd[i]);
                }
            }
        })
    }

    pub fn neg(&self) -> Var<T> {
        self.unary(|x| -x, |_, _| -T::one())
    }

    pub fn exp(&self) -> Var<T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Var<T> {
        self.unary(|x| x.ln(), |x, _| x.recip())
    }

    pub fn sqrt(&self) -> Var<T> {
        self.unary(|x| x.sqrt(), |_, y| T::lit(0.5) / y)
    }

    pub fn square(&self) -> Var<T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn sigmoid(&self) -> Var<T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self) -> Var<T> {
        self.unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Var<T> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn scale(&self, c: T) -> Var<T> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: T) -> Var<T> {
        self.unary(move |x| x + c, |_, _| T::one())
    }
}

pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Element>(x: T) -> T {
    if x > T::lit(30.0) {
        x
    } else {
        x.max(T::zero()) + (-x.abs()).exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn add_and_broadcast() {
        let t = Tape::<f64>::new();
        let a = t.constant(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
        let b = t.constant(Tensor::from_f64([2], &[3.0, 4.0]).unwrap());
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);

        let m = t.constant(Tensor::from_f64([2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let col = t.constant(Tensor::from_f64([2, 1], &[10., 20.]).unwrap());
        assert_eq!(m.add(&col).unwrap().data(), &[11., 12., 13., 24., 25., 26.]);
        let row = t.constant(Tensor::from_f64([3], &[1., 1., 1.]).unwrap());
        assert_eq!(m.sub(&row).unwrap().data(), &[0., 1., 2., 3., 4., 5.]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let t = Tape::<f64>::new();
        let a = t.constant(Tensor::zeros([2, 3]));
        let b = t.constant(Tensor::zeros([2]));
        let msg = a.add(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn multiply_by_zero_annihilates() {
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_f64([3], &[1.5, -2.0, 7.0]).unwrap(), true);
        let z = t.constant(Tensor::zeros([3]));
        let y = x.mul(&z).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let g = y.sum_all().backward().unwrap();
        assert!(g.get(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn silu_values() {
        let t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_f64([2], &[0.0, 1.0]).unwrap());
        let y = x.silu();
        assert_eq!(y.data()[0], 0.0);
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((y.data()[1] - expected).abs() < 1e-15);
        assert!((y.data()[1] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn softplus_is_stable() {
        let t = Tape::<f32>::new();
        let x = t.constant(Tensor::new([3], vec![-100.0f32, 0.0, 100.0]).unwrap());
        let y = x.softplus();
        assert!(y.value().all_finite());
        assert!((y.data()[1] - 2f32.ln()).abs() < 1e-6);
        assert_eq!(y.data()[2], 100.0);
    }
}
