//! Deterministic synthetic segmentation data.
//!
//! Each image holds random ellipses and rectangles, one or more per
//! foreground class, painted in order so later shapes occlude earlier ones.
//! Pixel intensity blends towards a per-class level through a soft edge of
//! about one pixel; the mask takes the class of the last shape whose signed
//! distance is negative. Gaussian noise is added on top.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::stn::StnArray;
use crate::tensor::Tensor;

/// Attempts per image before giving up on placing every class.
const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Inclusive range of shapes drawn per foreground class.
    pub shapes_per_class: (usize, usize),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 8,
            height: 64,
            width: 64,
            num_classes: 3,
            shapes_per_class: (1, 2),
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.shapes_per_class;
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::Config(format!("num_classes {} outside 2..=256", self.num_classes)));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!("images of {}×{} are below 8×8", self.height, self.width)));
        }
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("bad shapes-per-class range {lo}..={hi}")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma {} must be finite and >= 0", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[1, H, W]`.
    pub image: Tensor<f32>,
    /// `H·W` class ids.
    pub mask: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks the given samples into `[B, 1, H, W]` images and `B·H·W` labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<u16>) {
        let hw = self.height * self.width;
        let mut img = Vec::with_capacity(indices.len() * hw);
        let mut lab = Vec::with_capacity(indices.len() * hw);
        for &i in indices {
            img.extend_from_slice(self.samples[i].image.data());
            lab.extend_from_slice(&self.samples[i].mask);
        }
        let image = Tensor::new([indices.len(), 1, self.height, self.width], img).expect("consistent sizes");
        (image, lab)
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, angle: f64 },
    Rect { cy: f64, cx: f64, hy: f64, hx: f64, angle: f64 },
}

impl Shape {
    fn random(rng: &mut impl Rng, h: usize, w: usize) -> Self {
        let (hf, wf) = (h as f64, w as f64);
        let small = hf.min(wf);
        let cy = rng.gen_range(0.15 * hf..0.85 * hf);
        let cx = rng.gen_range(0.15 * wf..0.85 * wf);
        let a = rng.gen_range(0.08 * small..0.25 * small);
        let b = rng.gen_range(0.08 * small..0.25 * small);
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        if rng.gen_bool(0.5) {
            Shape::Ellipse { cy, cx, ry: a, rx: b, angle }
        } else {
            Shape::Rect { cy, cx, hy: a, hx: b, angle }
        }
    }

    /// Approximate signed distance in pixels, negative inside.
    fn signed_distance(&self, y: f64, x: f64) -> f64 {
        let rotate = |cy: f64, cx: f64, angle: f64| {
            let (s, c) = angle.sin_cos();
            let (dy, dx) = (y - cy, x - cx);
            (c * dy - s * dx, s * dy + c * dx)
        };
        match *self {
            Shape::Ellipse { cy, cx, ry, rx, angle } => {
                let (u, v) = rotate(cy, cx, angle);
                let r = ((u / ry).powi(2) + (v / rx).powi(2)).sqrt();
                (r - 1.0) * ry.min(rx)
            }
            Shape::Rect { cy, cx, hy, hx, angle } => {
                let (u, v) = rotate(cy, cx, angle);
                let (qy, qx) = (u.abs() - hy, v.abs() - hx);
                let outside = (qy.max(0.0).powi(2) + qx.max(0.0).powi(2)).sqrt();
                outside + qy.max(qx).min(0.0)
            }
        }
    }
}

/// Intensity level of a class; background is 0.
fn level(class: usize, num_classes: usize) -> f64 {
    class as f64 / (num_classes - 1) as f64
}

fn render(rng: &mut impl Rng, spec: &SyntheticSpec) -> (Vec<f64>, Vec<u16>) {
    let (h, w) = (spec.height, spec.width);
    let mut image = vec![0.0; h * w];
    let mut mask = vec![0u16; h * w];
    let mut shapes = Vec::new();
    for class in 1..spec.num_classes {
        let n = rng.gen_range(spec.shapes_per_class.0..=spec.shapes_per_class.1);
        for _ in 0..n {
            shapes.push((class, Shape::random(rng, h, w)));
        }
    }
    for (class, shape) in shapes {
        let target = level(class, spec.num_classes);
        for y in 0..h {
            for x in 0..w {
                let d = shape.signed_distance(y as f64, x as f64);
                let alpha = 1.0 / (1.0 + (2.0 * d).exp());
                let p = y * w + x;
                image[p] += alpha * (target - image[p]);
                if d < 0.0 {
                    mask[p] = class as u16;
                }
            }
        }
    }
    (image, mask)
}

/// Generates `spec.count` samples. Every foreground class occurs in every
/// mask; layouts that lose a class to occlusion are redrawn.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut samples = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut attempt = 0;
        let (image, mask) = loop {
            let (image, mask) = render(&mut rng, spec);
            let mut seen = vec![false; spec.num_classes];
            for &m in &mask {
                seen[m as usize] = true;
            }
            if seen[1..].iter().all(|&s| s) {
                break (image, mask);
            }
            attempt += 1;
            if attempt == MAX_ATTEMPTS {
                return Err(Error::Config(format!(
                    "could not place all {} classes in image {i} after {MAX_ATTEMPTS} attempts",
                    spec.num_classes
                )));
            }
        };
        let data: Vec<f32> = image.iter().map(|&v| (v + noise.sample(&mut rng)) as f32).collect();
        samples.push(Sample {
            image: Tensor::new([1, spec.height, spec.width], data)?,
            mask,
        });
    }
    Ok(Dataset {
        height: spec.height,
        width: spec.width,
        samples,
    })
}

pub fn image_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("image_{i:04}.stn"))
}

pub fn mask_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("mask_{i:04}.stn"))
}

/// Masks are stored as `u8` when every label fits, otherwise `u16`.
pub fn mask_array(mask: &[u16], height: usize, width: usize) -> StnArray {
    if mask.iter().all(|&m| m <= u8::MAX as u16) {
        StnArray::U8 {
            shape: vec![height, width],
            data: mask.iter().map(|&m| m as u8).collect(),
        }
    } else {
        StnArray::U16 {
            shape: vec![height, width],
            data: mask.to_vec(),
        }
    }
}

/// Writes `image_NNNN.stn` / `mask_NNNN.stn` pairs.
pub fn save_dataset(data: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, s) in data.samples.iter().enumerate() {
        StnArray::F32(s.image.clone()).write(image_path(dir, i))?;
        mask_array(&s.mask, data.height, data.width).write(mask_path(dir, i))?;
    }
    Ok(())
}

/// Reads a `[H, W]` label file.
pub fn load_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>)> {
    let path = path.as_ref();
    let (shape, data) = StnArray::read(path)?.into_labels()?;
    match shape.as_slice() {
        &[h, w] => Ok((h, w, data)),
        s => Err(Error::Format(format!("{}: mask of shape {s:?}, expected [H, W]", path.display()))),
    }
}

/// Reads consecutive pairs starting at index 0 until the first missing image.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut samples = Vec::new();
    let mut dims = None;
    while image_path(dir, samples.len()).exists() {
        let i = samples.len();
        let image = StnArray::read(image_path(dir, i))?.into_f32()?;
        let (h, w, mask) = load_mask(mask_path(dir, i))?;
        if image.shape() != [1, h, w] || dims.is_some_and(|d| d != (h, w)) {
            return Err(Error::Format(format!(
                "sample {i}: image {:?} and mask {h}×{w} disagree with the dataset",
                image.shape()
            )));
        }
        dims = Some((h, w));
        samples.push(Sample { image, mask });
    }
    let (height, width) = dims.ok_or_else(|| Error::Format(format!("no samples in {}", dir.display())))?;
    Ok(Dataset {
        height,
        width,
        samples,
    })
}

/// Binary PGM (P5) with 255 where `mask == class`.
pub fn write_pgm(path: impl AsRef<Path>, mask: &[u16], height: usize, width: usize, class: u16) -> Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(mask.iter().map(|&m| if m == class { 255u8 } else { 0 }));
    fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            count: 3,
            height: 24,
            width: 20,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SyntheticSpec { seed: 1, ..small() };
        assert_ne!(generate(&small()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn every_class_in_every_mask() {
        for k in 2..6 {
            let d = generate(&SyntheticSpec {
                num_classes: k,
                ..small()
            })
            .unwrap();
            for s in &d.samples {
                let mut hist = vec![0; k];
                for &m in &s.mask {
                    hist[m as usize] += 1;
                }
                assert!(hist.iter().all(|&c| c > 0), "{hist:?}");
            }
        }
    }

    #[test]
    fn images_follow_masks() {
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            ..small()
        };
        let d = generate(&spec).unwrap();
        // Away from edges the intensity sits near its class level.
        let s = &d.samples[0];
        let mut close = 0;
        for (p, &m) in s.mask.iter().enumerate() {
            if (s.image.data()[p] as f64 - level(m as usize, 3)).abs() < 0.25 {
                close += 1;
            }
        }
        assert!(close as f64 > 0.8 * s.mask.len() as f64);
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            SyntheticSpec { num_classes: 1, ..small() },
            SyntheticSpec { height: 4, ..small() },
            SyntheticSpec { shapes_per_class: (2, 1), ..small() },
            SyntheticSpec { noise_sigma: -1.0, ..small() },
        ] {
            assert!(generate(&spec).is_err());
        }
    }

    #[test]
    fn pgm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        write_pgm(&p, &[0, 1, 1, 2, 0, 1], 2, 3, 1).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 255, 255, 0, 0, 255]);
    }
}
