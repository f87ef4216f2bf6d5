use std::rc::Rc;

use crate::error::{geometry, mismatch, Result};
use crate::tape::Var;
use crate::tensor::{numel, Element, Tensor};

/// Copies `data` (of `shape`) into the axis order given by `axes`.
pub(crate) fn permute_data<T: Copy>(data: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if rank == 0 {
        out.extend_from_slice(data);
        return out;
    }
    let last = rank - 1;
    let (inner_len, inner_stride) = (out_shape[last], strides[last]);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    while out.len() < n {
        let mut o = off;
        for _ in 0..inner_len {
            out.push(data[o]);
            o += inner_stride;
        }
        // advance the outer multi-index
        let mut d = last;
        loop {
            if d == 0 {
                break;
            }
            d -= 1;
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

impl<T: Element> Var<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        if numel(shape) != self.numel() {
            return Err(mismatch("reshape", self.shape(), shape));
        }
        let value = Tensor::new(shape.to_vec(), self.data().to_vec())?;
        let ix = self.id();
        Ok(self.tape().record(value, &[self], move |g, sink| sink.add(ix, g)))
    }

    /// Reorders axes; `axes[i]` names the source axis of output axis `i`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(geometry("permute", format!("axes {axes:?} for shape {shape:?}")));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let value = Tensor::new(out_shape.clone(), permute_data(self.data(), &shape, axes))?;
        let mut inverse = vec![0usize; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let ix = self.id();
        Ok(self.tape().record(value, &[self], move |g, sink| {
            if sink.wants(ix) {
                let back = permute_data(g, &out_shape, &inverse);
                sink.add(ix, &back);
            }
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(geometry(
                "narrow",
                format!("axis {axis} range {start}..{} of shape {shape:?}", start + len),
            ));
        }
        let (outer, extent, inner) = around(&shape, axis);
        let src = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let ix = self.id();
        Ok(self.tape().record(Tensor::new(out_shape, out)?, &[self], move |g, sink| {
            if let Some(dx) = sink.slot(ix) {
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    let gs = &g[o * len * inner..(o + 1) * len * inner];
                    for (d, &v) in dx[base..base + len * inner].iter_mut().zip(gs) {
                        *d = *d + v;
                    }
                }
            }
        }))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Var<T>], axis: usize) -> Result<Var<T>> {
        let first = parts
            .first()
            .ok_or_else(|| geometry("concat", "no operands"))?;
        let base_shape = first.shape().to_vec();
        if axis >= base_shape.len() {
            return Err(geometry("concat", format!("axis {axis} of {base_shape:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != base_shape.len()
                || s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(mismatch("concat", &base_shape, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = around(&base_shape, axis);
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                out.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut out_shape = base_shape;
        out_shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id()).collect();
        let tape = first.tape().clone();
        Ok(tape.record(Tensor::new(out_shape, out)?, parts, move |g, sink| {
            let mut offset = 0;
            for (&id, &e) in ids.iter().zip(&extents) {
                if let Some(dx) = sink.slot(id) {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + e) * inner];
                        for (d, &v) in dx[o * e * inner..(o + 1) * e * inner].iter_mut().zip(src) {
                            *d = *d + v;
                        }
                    }
                }
                offset += e;
            }
        }))
    }

    /// Gathers entries `index[i]` along `axis`. The adjoint scatter-adds.
    pub fn index_select(&self, axis: usize, index: Rc<Vec<usize>>) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || index.is_empty() || index.iter().any(|&i| i >= shape[axis]) {
            return Err(geometry(
                "index_select",
                format!("axis {axis} of shape {shape:?} with {} indices", index.len()),
            ));
        }
        let (outer, extent, inner) = around(&shape, axis);
        let m = index.len();
        let src = self.data();
        let mut out = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            for &i in index.iter() {
                let base = (o * extent + i) * inner;
                out.extend_from_slice(&src[base..base + inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = m;
        let ix = self.id();
        Ok(self.tape().record(Tensor::new(out_shape, out)?, &[self], move |g, sink| {
            if let Some(dx) = sink.slot(ix) {
                for o in 0..outer {
                    for (s, &i) in index.iter().enumerate() {
                        let base = (o * extent + i) * inner;
                        let gs = &g[(o * m + s) * inner..(o * m + s + 1) * inner];
                        for (d, &v) in dx[base..base + inner].iter_mut().zip(gs) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }))
    }
}
