use crate::tape::Var;
use crate::tensor::{Element, Tensor};

impl<T: Element> Var<T> {
    /// Sum of all elements as a scalar.
    pub fn sum_all(&self) -> Var<T> {
        let s = super::sum(self.data());
        let ix = self.id();
        self.tape().record(Tensor::scalar(s), &[self], move |g, sink| {
            if let Some(dx) = sink.slot(ix) {
                for v in dx.iter_mut() {
                    *v = *v + g[0];
                }
            }
        })
    }

    pub fn mean_all(&self) -> Var<T> {
        let n = T::lit(self.numel() as f64);
        self.sum_all().scale(T::one() / n)
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_lastdim(&self) -> Var<T> {
        let shape = self.shape();
        let k = *shape.last().unwrap_or(&1);
        let out_shape = shape[..shape.len().saturating_sub(1)].to_vec();
        let out: Vec<T> = self
            .data()
            .chunks(k)
            .map(super::sum)
            .collect();
        let ix = self.id();
        self.tape().record(
            Tensor::new(out_shape, out).expect("row count matches"),
            &[self],
            move |g, sink| {
                if let Some(dx) = sink.slot(ix) {
                    for (row, &gv) in dx.chunks_mut(k).zip(g) {
                        for v in row {
                            *v = *v + gv;
                        }
                    }
                }
            },
        )
    }

    pub fn mean_lastdim(&self) -> Var<T> {
        let k = *self.shape().last().unwrap_or(&1);
        self.sum_lastdim().scale(T::one() / T::lit(k as f64))
    }
}
