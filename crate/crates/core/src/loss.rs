//! Cross-entropy plus soft Dice, summed over deep-supervision heads.

use crate::error::{Error, Result};
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

pub const DICE_EPS: f64 = 1e-5;

/// Integer masks `[B, H, W]`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u16>,
}

impl Labels {
    pub fn new(batch: usize, height: usize, width: usize, data: Vec<u16>) -> Result<Self> {
        if data.len() != batch * height * width {
            return Err(Error::InvalidArgument(format!(
                "{} labels for a {batch}×{height}×{width} mask",
                data.len()
            )));
        }
        Ok(Self {
            batch,
            height,
            width,
            data,
        })
    }

    /// Nearest-neighbour subsampling taking every `stride`-th pixel, giving
    /// `ceil(H/stride) × ceil(W/stride)`.
    pub fn downsample(&self, stride: usize) -> Self {
        if stride == 1 {
            return self.clone();
        }
        let (h, w) = (self.height.div_ceil(stride), self.width.div_ceil(stride));
        let mut data = Vec::with_capacity(self.batch * h * w);
        for b in 0..self.batch {
            for i in 0..h {
                for j in 0..w {
                    data.push(self.data[(b * self.height + i * stride) * self.width + j * stride]);
                }
            }
        }
        Self {
            batch: self.batch,
            height: h,
            width: w,
            data,
        }
    }

    /// One-hot `[B·H·W, K]`, or `[K, B·H·W]` when `transposed`.
    fn one_hot<T: Element>(&self, k: usize, transposed: bool) -> Result<Tensor<T>> {
        let n = self.data.len();
        let mut out = vec![T::zero(); n * k];
        for (p, &l) in self.data.iter().enumerate() {
            let l = l as usize;
            if l >= k {
                return Err(Error::LabelOutOfRange { label: l, num_classes: k });
            }
            out[if transposed { l * n + p } else { p * k + l }] = T::one();
        }
        Tensor::new(if transposed { vec![k, n] } else { vec![n, k] }, out)
    }
}

fn pixels_by_class<T: Element>(logits: &Var<T>, labels: &Labels) -> Result<Var<T>> {
    let s = logits.shape();
    if s.len() != 4 || s[0] != labels.batch || s[2] != labels.height || s[3] != labels.width {
        return Err(crate::error::mismatch(
            "loss",
            s,
            &[labels.batch, 0, labels.height, labels.width],
        ));
    }
    logits.permute(&[0, 2, 3, 1])?.reshape(&[labels.data.len(), s[1]])
}

/// Mean negative log-likelihood of the labelled class.
pub fn cross_entropy<T: Element>(logits: &Var<T>, labels: &Labels) -> Result<Var<T>> {
    let z = pixels_by_class(logits, labels)?;
    let oh = z.tape().constant(labels.one_hot(z.shape()[1], false)?);
    let n = labels.data.len() as f64;
    Ok(z.log_softmax_lastdim().mul(&oh)?.sum_all().scale(T::lit(-1.0 / n)))
}

/// `1 − mean_k (2·Σ p·y + ε) / (Σ p + Σ y + ε)`, sums over the whole batch.
pub fn soft_dice_loss<T: Element>(logits: &Var<T>, labels: &Labels) -> Result<Var<T>> {
    let z = pixels_by_class(logits, labels)?;
    let k = z.shape()[1];
    let oh = labels.one_hot::<T>(k, true)?;
    let ysum = Tensor::from_fn([k], |c| oh.data()[c * labels.data.len()..(c + 1) * labels.data.len()].iter().copied().sum());
    let tape = z.tape().clone();
    let p = z.softmax_lastdim().permute(&[1, 0])?;
    let inter = p.mul(&tape.constant(oh))?.sum_lastdim();
    let eps = T::lit(DICE_EPS);
    let num = inter.scale(T::lit(2.0)).add_scalar(eps);
    let den = p.sum_lastdim().add(&tape.constant(ysum))?.add_scalar(eps);
    Ok(num.div(&den)?.mean_all().neg().add_scalar(T::one()))
}

/// Weighted sum over heads of `CE + Dice`; head `i` is compared against
/// the mask subsampled by `2^i`.
pub fn seg_loss<T: Element>(heads: &[Var<T>], labels: &Labels, weights: &[f64]) -> Result<Var<T>> {
    if heads.is_empty() || heads.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} heads but {} weights",
            heads.len(),
            weights.len()
        )));
    }
    let mut total: Option<Var<T>> = None;
    for (i, (head, &w)) in heads.iter().zip(weights).enumerate() {
        let lab = labels.downsample(1 << i);
        let l = cross_entropy(head, &lab)?.add(&soft_dice_loss(head, &lab)?)?.scale(T::lit(w));
        total = Some(match total {
            Some(t) => t.add(&l)?,
            None => l,
        });
    }
    Ok(total.expect("at least one head"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::testutil::random;

    fn loss_oracle(logits: &Tensor<f64>, labels: &Labels) -> f64 {
        let (b, k, h, w) = (logits.shape()[0], logits.shape()[1], logits.shape()[2], logits.shape()[3]);
        let mut ce = 0.0;
        let (mut inter, mut psum, mut ysum) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        for bi in 0..b {
            for p in 0..h * w {
                let z: Vec<f64> = (0..k).map(|c| logits.data()[(bi * k + c) * h * w + p]).collect();
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                let y = labels.data[bi * h * w + p] as usize;
                ce -= z[y] - lse;
                for c in 0..k {
                    let pr = (z[c] - lse).exp();
                    psum[c] += pr;
                    if c == y {
                        inter[c] += pr;
                        ysum[c] += 1.0;
                    }
                }
            }
        }
        ce /= (b * h * w) as f64;
        let dice: f64 = (0..k)
            .map(|c| (2.0 * inter[c] + DICE_EPS) / (psum[c] + ysum[c] + DICE_EPS))
            .sum::<f64>()
            / k as f64;
        ce + 1.0 - dice
    }

    fn labels(b: usize, h: usize, w: usize, k: u16) -> Labels {
        Labels::new(b, h, w, (0..b * h * w).map(|i| ((i * 7 + i / 3) % k as usize) as u16).collect()).unwrap()
    }

    #[test]
    fn matches_scalar_loop() {
        let lab = labels(2, 3, 4, 3);
        let x = random(&[2, 3, 3, 4], 1).map(|v| 3.0 * v);
        let tape = Tape::new();
        let z = tape.constant(x.clone());
        let got = seg_loss(&[z], &lab, &[1.0]).unwrap().value().item();
        assert!((got - loss_oracle(&x, &lab)).abs() < 1e-6);
    }

    #[test]
    fn uniform_logits_balanced_mask() {
        let lab = Labels::new(1, 2, 2, vec![0, 1, 1, 0]).unwrap();
        let tape = Tape::new();
        let ce = cross_entropy(&tape.constant(Tensor::<f64>::zeros([1, 2, 2, 2])), &lab).unwrap();
        assert!((ce.value().item() - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn confident_correct_logits_have_tiny_loss() {
        let lab = labels(1, 4, 4, 3);
        let x = Tensor::from_fn([1, 3, 4, 4], |i| if lab.data[i % 16] as usize == i / 16 { 30.0 } else { -30.0 });
        let tape = Tape::new();
        let l = seg_loss(&[tape.constant(x)], &lab, &[1.0]).unwrap();
        assert!(l.value().item() < 1e-3);
    }

    #[test]
    fn out_of_range_label() {
        let lab = Labels::new(1, 1, 2, vec![0, 3]).unwrap();
        let tape = Tape::new();
        let err = cross_entropy(&tape.constant(Tensor::<f64>::zeros([1, 3, 1, 2])), &lab).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 3, num_classes: 3 }));
    }

    #[test]
    fn downsample_takes_every_stride_pixel() {
        let lab = Labels::new(1, 3, 3, (0..9).collect()).unwrap();
        let d = lab.downsample(2);
        assert_eq!((d.height, d.width), (2, 2));
        assert_eq!(d.data, [0, 2, 6, 8]);
    }

    #[test]
    fn heads_are_weighted() {
        let lab = labels(1, 4, 4, 2);
        let (fine, coarse) = (random(&[1, 2, 4, 4], 2), random(&[1, 2, 2, 2], 3));
        let tape = Tape::new();
        let (a, b) = (tape.constant(fine.clone()), tape.constant(coarse.clone()));
        let got = seg_loss(&[a, b], &lab, &[0.75, 0.25]).unwrap().value().item();
        let want = 0.75 * loss_oracle(&fine, &lab) + 0.25 * loss_oracle(&coarse, &lab.downsample(2));
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn gradient() {
        let lab = labels(2, 2, 3, 3);
        let x = random(&[2, 3, 2, 3], 4);
        let r = crate::gradcheck::grad_check(|_, z| seg_loss(&[z.clone()], &lab, &[1.0]), &x, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }
}
