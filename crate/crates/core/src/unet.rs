//! The assembled segmentation network.
//!
//! Encoder: a two-convolution overlapping patch embedding (÷4) followed by
//! SAMA stages, each after the first entered through a depthwise-separable
//! stride-2 downsampling. Skips pass through CR-MSM. Decoder: transpose-conv
//! upsampling, skip concatenation and a residual two-convolution block per
//! level, continued for two extra levels back to full resolution (skips are
//! the first patch-embedding activation and the raw image). One 1×1 head per
//! decoder level, finest first.

use rand::Rng;

use crate::attention::AttnConfig;
use crate::crmsm::{CrMsmFlags, CrMsmScale};
use crate::error::{Error, Result};
use crate::nn::{default_groups, Conv2d, ConvTranspose2d, Ctx, GroupNorm, ParamStore};
use crate::sama::{SamaBlock, SamaConfig};
use crate::ssm::DEFAULT_STATE;
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_channels: usize,
    /// SAMA blocks per stage; stage `i` has `base_channels·2^i` channels.
    pub stage_depths: Vec<usize>,
    pub expansion: usize,
    pub ffn_ratio: usize,
    pub heads: usize,
    pub window: usize,
    pub pool: usize,
    pub lambda_init: f64,
    pub mamba_macro: bool,
    pub differential: bool,
    pub use_pe: bool,
    pub post_norm: bool,
    pub use_crmsm: bool,
    pub crmsm: CrMsmFlags,
    /// Also run CR-MSM on the coarsest encoder output.
    pub crmsm_bottleneck: bool,
    pub ssm_state: usize,
    pub deep_supervision: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            num_classes: 3,
            base_channels: 16,
            stage_depths: vec![2, 2, 2, 2],
            expansion: 2,
            ffn_ratio: 4,
            heads: crate::attention::DEFAULT_HEADS,
            window: crate::attention::DEFAULT_WINDOW,
            pool: crate::attention::DEFAULT_POOL,
            lambda_init: crate::attention::LAMBDA_INIT,
            mamba_macro: true,
            differential: true,
            use_pe: true,
            post_norm: true,
            use_crmsm: true,
            crmsm: CrMsmFlags::default(),
            crmsm_bottleneck: true,
            ssm_state: DEFAULT_STATE,
            deep_supervision: true,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for quick experiments.
    pub fn toy() -> Self {
        Self {
            stage_depths: vec![1, 1, 1, 1],
            ..Self::default()
        }
    }

    pub fn stages(&self) -> usize {
        self.stage_depths.len()
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        (0..self.stages()).map(|i| self.base_channels << i).collect()
    }

    /// Channels of the two full-resolution decoder levels.
    pub fn stem_channels(&self) -> usize {
        (self.base_channels / 2).max(2)
    }

    /// Input extents are padded to a multiple of this.
    pub fn divisor(&self) -> usize {
        1 << (self.stages() + 1)
    }

    pub fn sama_config(&self, stage: usize) -> SamaConfig {
        let c = self.base_channels << stage;
        SamaConfig {
            channels: c,
            expansion: self.expansion,
            ffn_ratio: self.ffn_ratio,
            mamba_macro: self.mamba_macro,
            attn: AttnConfig {
                channels: c,
                heads: self.heads,
                window: self.window,
                pool: self.pool,
                lambda_init: self.lambda_init,
                differential: self.differential,
                use_pe: self.use_pe,
                post_norm: self.post_norm,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.num_classes < 2 {
            return bad(format!(
                "need in_channels >= 1 and num_classes >= 2, got {} and {}",
                self.in_channels, self.num_classes
            ));
        }
        if self.stage_depths.is_empty() || self.base_channels < 2 {
            return bad("need at least one stage and base_channels >= 2".into());
        }
        if self.stages() > 8 {
            return bad(format!("{} stages is too many", self.stages()));
        }
        for s in 0..self.stages() {
            let cfg = self.sama_config(s);
            AttnConfig {
                channels: cfg.branch_width(),
                ..cfg.attn
            }
            .validate()
            .map_err(|e| Error::Config(format!("stage {s}: {e}")))?;
        }
        Ok(())
    }

    /// Normalised deep-supervision weights, finest head first, halving per
    /// coarser head.
    pub fn head_weights(&self) -> Vec<f64> {
        let n = self.num_heads();
        let raw: Vec<f64> = (0..n).map(|i| 0.5f64.powi(i as i32)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }

    pub fn num_heads(&self) -> usize {
        if self.deep_supervision {
            self.stages() + 1
        } else {
            1
        }
    }

    /// Downsampling factor of head `i` (finest first).
    pub fn head_stride(&self, i: usize) -> usize {
        1 << i
    }
}

/// `conv3×3 → GN → SiLU → conv3×3 → GN`, plus a 1×1 shortcut, then SiLU.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub gn1: GroupNorm,
    pub conv2: Conv2d,
    pub gn2: GroupNorm,
    pub shortcut: Conv2d,
}

impl ResBlock {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let g = default_groups(cout);
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, 1, 1, 1, false, rng),
            gn1: GroupNorm::new(store, &format!("{name}.gn1"), cout, g),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, 1, 1, false, rng),
            gn2: GroupNorm::new(store, &format!("{name}.gn2"), cout, g),
            shortcut: Conv2d::new(store, &format!("{name}.shortcut"), cin, cout, 1, 1, 0, 1, true, rng),
        }
    }

    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let h = self.gn1.forward(ctx, &self.conv1.forward(ctx, x)?)?.silu();
        let h = self.gn2.forward(ctx, &self.conv2.forward(ctx, &h)?)?;
        h.add(&self.shortcut.forward(ctx, x)?).map(|y| y.silu())
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count()
            + self.gn1.param_count()
            + self.conv2.param_count()
            + self.gn2.param_count()
            + self.shortcut.param_count()
    }
}

#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl PatchEmbed {
    /// Returns the half-resolution activation and the quarter-resolution
    /// embedding.
    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let s = x.shape();
        if s.len() != 4 || s[2] < 8 || s[3] < 8 {
            return Err(crate::error::geometry("patch_embed", format!("input {s:?} smaller than 8×8")));
        }
        let half = self.conv1.forward(ctx, x)?.silu();
        let out = self.conv2.forward(ctx, &half)?;
        Ok((half, out))
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count()
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    /// Depthwise stride-2 then pointwise; absent for the first stage.
    pub down: Option<(Conv2d, Conv2d)>,
    pub blocks: Vec<SamaBlock>,
}

impl Stage {
    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let x = match &self.down {
            Some((dw, pw)) => pw.forward(ctx, &dw.forward(ctx, x)?)?,
            None => x.clone(),
        };
        let (bn, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let mut t = x.reshape(&[bn, c, h * w])?.permute(&[0, 2, 1])?;
        for b in &self.blocks {
            t = b.forward_tokens(ctx, &t, h, w)?;
        }
        t.permute(&[0, 2, 1])?.reshape(&[bn, c, h, w])
    }

    pub fn param_count(&self) -> usize {
        self.down.as_ref().map_or(0, |(a, b)| a.param_count() + b.param_count())
            + self.blocks.iter().map(SamaBlock::param_count).sum::<usize>()
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLevel {
    pub up: ConvTranspose2d,
    pub block: ResBlock,
}

impl DecoderLevel {
    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, x: &Var<T>, skip: &Var<T>) -> Result<Var<T>> {
        let up = self.up.forward(ctx, x)?;
        self.block.forward(ctx, &Var::concat(&[&up, skip], 1)?)
    }

    pub fn param_count(&self) -> usize {
        self.up.param_count() + self.block.param_count()
    }
}

#[derive(Debug, Clone)]
pub struct SamaUnet {
    pub config: ModelConfig,
    pub embed: PatchEmbed,
    pub stages: Vec<Stage>,
    /// One per encoder output that receives CR-MSM, fine to coarse.
    pub skips: Vec<Option<CrMsmScale>>,
    /// Coarse to fine, ending with the two full-resolution levels.
    pub decoder: Vec<DecoderLevel>,
    /// Finest first.
    pub heads: Vec<Conv2d>,
}

impl SamaUnet {
    pub fn new<T: Element>(store: &mut ParamStore<T>, config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let chans = config.stage_channels();
        let (c0, half) = (config.base_channels, config.stem_channels());
        let embed = PatchEmbed {
            conv1: Conv2d::new(store, "embed.conv1", config.in_channels, half, 3, 2, 1, 1, true, rng),
            conv2: Conv2d::new(store, "embed.conv2", half, c0, 3, 2, 1, 1, true, rng),
        };
        let mut stages = Vec::new();
        for (i, &depth) in config.stage_depths.iter().enumerate() {
            let down = (i > 0).then(|| {
                let p = chans[i - 1];
                (
                    Conv2d::new(store, &format!("stage{i}.down.dw"), p, p, 3, 2, 1, p, true, rng),
                    Conv2d::new(store, &format!("stage{i}.down.pw"), p, chans[i], 1, 1, 0, 1, true, rng),
                )
            });
            let blocks = (0..depth)
                .map(|b| SamaBlock::new(store, &format!("stage{i}.block{b}"), config.sama_config(i), rng))
                .collect::<Result<_>>()?;
            stages.push(Stage { down, blocks });
        }
        let mut skips = Vec::new();
        for (i, &c) in chans.iter().enumerate() {
            let on = config.use_crmsm && (i + 1 < chans.len() || config.crmsm_bottleneck);
            skips.push(if on {
                Some(CrMsmScale::new(store, &format!("crmsm{i}"), c, config.crmsm, config.ssm_state, rng)?)
            } else {
                None
            });
        }
        let mut decoder = Vec::new();
        for i in (0..chans.len() - 1).rev() {
            decoder.push(DecoderLevel {
                up: ConvTranspose2d::new(store, &format!("dec{i}.up"), chans[i + 1], chans[i], 2, 2, 0, true, rng),
                block: ResBlock::new(store, &format!("dec{i}.block"), 2 * chans[i], chans[i], rng),
            });
        }
        decoder.push(DecoderLevel {
            up: ConvTranspose2d::new(store, "dec_half.up", c0, half, 2, 2, 0, true, rng),
            block: ResBlock::new(store, "dec_half.block", 2 * half, half, rng),
        });
        decoder.push(DecoderLevel {
            up: ConvTranspose2d::new(store, "dec_full.up", half, half, 2, 2, 0, true, rng),
            block: ResBlock::new(store, "dec_full.block", half + config.in_channels, half, rng),
        });
        // Decoder output channels, finest first.
        let mut level_channels = vec![half, half];
        level_channels.extend(chans[..chans.len() - 1].iter().copied());
        let heads = (0..config.num_heads())
            .map(|i| {
                Conv2d::new(store, &format!("head{i}"), level_channels[i], config.num_classes, 1, 1, 0, 1, true, rng)
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            embed,
            stages,
            skips,
            decoder,
            heads,
        })
    }

    /// Logits per head, finest first; head `i` covers `ceil(H/2^i)×ceil(W/2^i)`.
    pub fn forward<T: Element>(&self, ctx: &Ctx<T>, img: &Var<T>) -> Result<Vec<Var<T>>> {
        let s = img.shape().to_vec();
        if s.len() != 4 || s[1] != self.config.in_channels {
            return Err(crate::error::mismatch("model", &s, &[0, self.config.in_channels, 0, 0]));
        }
        let (h, w) = (s[2], s[3]);
        if h < 8 || w < 8 {
            return Err(crate::error::geometry("model", format!("input {h}×{w} smaller than 8×8")));
        }
        let x = pad_to(img, self.config.divisor())?;
        let (stem, mut f) = self.embed.forward(ctx, &x)?;
        let mut pyramid = Vec::new();
        for st in &self.stages {
            f = st.forward(ctx, &f)?;
            pyramid.push(f.clone());
        }
        let skips = pyramid
            .iter()
            .zip(&self.skips)
            .map(|(f, m)| match m {
                Some(m) => m.forward(ctx, f),
                None => Ok(f.clone()),
            })
            .collect::<Result<Vec<_>>>()?;
        let n = skips.len();
        let mut d = skips[n - 1].clone();
        let mut levels = Vec::new();
        for (j, lvl) in self.decoder.iter().enumerate() {
            let skip = if j + 1 < n {
                &skips[n - 2 - j]
            } else if j + 1 == n {
                &stem
            } else {
                &x
            };
            d = lvl.forward(ctx, &d, skip)?;
            levels.push(d.clone());
        }
        levels.reverse();
        self.heads
            .iter()
            .enumerate()
            .map(|(i, head)| {
                let stride = self.config.head_stride(i);
                let logits = head.forward(ctx, &levels[i])?;
                crop(&logits, h.div_ceil(stride), w.div_ceil(stride))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.embed.param_count()
            + self.stages.iter().map(Stage::param_count).sum::<usize>()
            + self.skips.iter().flatten().map(CrMsmScale::param_count).sum::<usize>()
            + self.decoder.iter().map(DecoderLevel::param_count).sum::<usize>()
            + self.heads.iter().map(Conv2d::param_count).sum::<usize>()
    }

    /// Per-pixel argmax of the finest head for a `[B, C, H, W]` batch.
    pub fn predict<T: Element>(&self, store: &ParamStore<T>, img: &Tensor<T>) -> Result<Vec<u16>> {
        let tape = crate::tape::Tape::new();
        let ctx = Ctx::new(&tape, store, false);
        let logits = self.forward(&ctx, &tape.constant(img.clone()))?;
        Ok(argmax_classes(logits[0].value()))
    }
}

/// Class index of the largest logit per pixel of `[B, K, H, W]`, as `[B, H, W]`.
pub fn argmax_classes<T: Element>(logits: &Tensor<T>) -> Vec<u16> {
    let s = logits.shape();
    let (bn, k, hw) = (s[0], s[1], s[2] * s[3]);
    let d = logits.data();
    let mut out = Vec::with_capacity(bn * hw);
    for b in 0..bn {
        for p in 0..hw {
            let mut best = 0;
            for c in 1..k {
                if d[(b * k + c) * hw + p] > d[(b * k + best) * hw + p] {
                    best = c;
                }
            }
            out.push(best as u16);
        }
    }
    out
}

/// Zero-pads the two trailing axes up to a multiple of `m`.
fn pad_to<T: Element>(x: &Var<T>, m: usize) -> Result<Var<T>> {
    let mut x = x.clone();
    for axis in [2, 3] {
        let len = x.shape()[axis];
        let extra = len.div_ceil(m) * m - len;
        if extra > 0 {
            let mut shape = x.shape().to_vec();
            shape[axis] = extra;
            let zeros = x.tape().constant(Tensor::zeros(shape));
            x = Var::concat(&[&x, &zeros], axis)?;
        }
    }
    Ok(x)
}

fn crop<T: Element>(x: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
    let mut x = x.clone();
    if x.shape()[2] != h {
        x = x.narrow(2, 0, h)?;
    }
    if x.shape()[3] != w {
        x = x.narrow(3, 0, w)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gradcheck::{grad_check_module, DEFAULT_STEP};
    use crate::tape::Tape;
    use crate::testutil::random;

    fn build(cfg: &ModelConfig, seed: u64) -> (ParamStore<f64>, SamaUnet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let m = SamaUnet::new(&mut store, cfg, &mut rng).unwrap();
        (store, m)
    }

    fn shapes(store: &ParamStore<f64>, m: &SamaUnet, x: &Tensor<f64>) -> Vec<Vec<usize>> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store, false);
        m.forward(&ctx, &tape.constant(x.clone()))
            .unwrap()
            .iter()
            .map(|v| v.shape().to_vec())
            .collect()
    }

    #[test]
    fn toy_head_shapes() {
        let (store, m) = build(&ModelConfig::toy(), 1);
        let got = shapes(&store, &m, &random(&[2, 1, 64, 64], 2));
        let want: Vec<Vec<usize>> = [64, 32, 16, 8, 4].iter().map(|&s| vec![2, 3, s, s]).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn padded_inputs_are_cropped_back() {
        let cfg = ModelConfig {
            base_channels: 8,
            stage_depths: vec![1, 1],
            heads: 2,
            ..ModelConfig::toy()
        };
        let (store, m) = build(&cfg, 3);
        for (h, w) in [(8, 8), (13, 21), (16, 9)] {
            let got = shapes(&store, &m, &random(&[1, 1, h, w], 4));
            assert_eq!(got[0], [1, 3, h, w]);
            assert_eq!(got[1], [1, 3, h.div_ceil(2), w.div_ceil(2)]);
            assert_eq!(got[2], [1, 3, h.div_ceil(4), w.div_ceil(4)]);
        }
        assert!(m.forward(&Ctx::new(&Tape::new(), &store, false), &Tape::new().constant(Tensor::zeros([1, 1, 7, 8]))).is_err());
    }

    #[test]
    fn toy_parameter_count_by_hand() {
        let cfg = ModelConfig::toy();
        let (store, m) = build(&cfg, 5);
        let lin = |i: usize, o: usize, b: usize| i * o + b * o;
        let conv = |i: usize, o: usize, k: usize, g: usize, b: usize| o * (i / g) * k * k + b * o;
        let agg = |d: usize| 3 * d * d + lin(d, d, 1) + 4 + conv(d, d, 3, d, 1) + 2 * d;
        let block = |c: usize| {
            4 * c + 2 * lin(c, 2 * c, 1) + conv(2 * c, 2 * c, 3, 2 * c, 1) + 2 * agg(c) + lin(2 * c, c, 1)
                + lin(c, 4 * c, 1)
                + lin(4 * c, c, 1)
        };
        let crmsm = |c: usize| c * 8 + c + lin(c, c, 1) + 2 * c * 8 + lin(c, c, 1);
        let res = |i: usize, o: usize| conv(i, o, 3, 1, 0) + conv(o, o, 3, 1, 0) + 4 * o + conv(i, o, 1, 1, 1);
        let tconv = |i: usize, o: usize| i * o * 4 + o;
        let ch = [16, 32, 64, 128];
        let mut want = conv(1, 8, 3, 1, 1) + conv(8, 16, 3, 1, 1);
        for i in 0..4 {
            want += block(ch[i]) + crmsm(ch[i]);
            if i > 0 {
                want += conv(ch[i - 1], ch[i - 1], 3, ch[i - 1], 1) + conv(ch[i - 1], ch[i], 1, 1, 1);
            }
            if i < 3 {
                want += tconv(ch[i + 1], ch[i]) + res(2 * ch[i], ch[i]) + conv(ch[i], 3, 1, 1, 1);
            }
        }
        want += tconv(16, 8) + res(16, 8) + tconv(8, 8) + res(9, 8) + 2 * conv(8, 3, 1, 1, 1);
        assert_eq!(m.param_count(), want);
        assert_eq!(store.scalar_count(), want);
    }

    #[test]
    fn zero_heads_give_zero_logits() {
        let cfg = ModelConfig {
            stage_depths: vec![1, 1],
            ..ModelConfig::toy()
        };
        let (mut store, m) = build(&cfg, 6);
        for h in &m.heads {
            store.get_mut(h.weight).data_mut().fill(0.0);
            store.get_mut(h.bias.unwrap()).data_mut().fill(0.0);
        }
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, false);
        for l in m.forward(&ctx, &tape.constant(random(&[1, 1, 16, 16], 7))).unwrap() {
            assert!(l.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn head_weights_normalised() {
        let w = ModelConfig::toy().head_weights();
        assert_eq!(w.len(), 5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((w[0] / w[1] - 2.0).abs() < 1e-12);
        let single = ModelConfig {
            deep_supervision: false,
            ..ModelConfig::toy()
        };
        assert_eq!(single.head_weights(), [1.0]);
    }

    fn embed(seed: u64) -> (ParamStore<f64>, PatchEmbed) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let e = PatchEmbed {
            conv1: Conv2d::new(&mut store, "c1", 2, 4, 3, 2, 1, 1, true, &mut rng),
            conv2: Conv2d::new(&mut store, "c2", 4, 6, 3, 2, 1, 1, true, &mut rng),
        };
        (store, e)
    }

    #[test]
    fn patch_embed_shape_and_translation() {
        let (store, e) = embed(8);
        let (h, w) = (16, 32);
        let x = random(&[1, 2, h, w], 9);
        let shifted = Tensor::from_fn([1, 2, h, w], |i| {
            let j = i % w;
            if j >= 4 { x.data()[i - 4] } else { 0.0 }
        });
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, false);
        let (_, a) = e.forward(&ctx, &tape.constant(x.clone())).unwrap();
        let (_, b) = e.forward(&ctx, &tape.constant(shifted)).unwrap();
        assert_eq!(a.shape(), &[1, 6, 4, 8]);
        let (oh, ow) = (4, 8);
        for c in 0..6 {
            for i in 0..oh {
                for t in 2..ow {
                    let (va, vb) = (a.data()[(c * oh + i) * ow + t - 1], b.data()[(c * oh + i) * ow + t]);
                    assert!((va - vb).abs() < 1e-12);
                }
            }
        }
        assert!(e.forward(&ctx, &tape.constant(Tensor::zeros([1, 2, 4, 16]))).is_err());
    }

    #[test]
    fn patch_embed_gradient() {
        let (store, e) = embed(10);
        let x = random(&[1, 2, 8, 8], 11);
        let wt = random(&[1, 6, 2, 2], 12);
        let r = grad_check_module(
            &store,
            &[x],
            |ctx, v| Ok(e.forward(ctx, &v[0])?.1.mul(&ctx.tape().constant(wt.clone()))?.sum_all()),
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = [
            ModelConfig { num_classes: 1, ..ModelConfig::toy() },
            ModelConfig { stage_depths: vec![], ..ModelConfig::toy() },
            ModelConfig { heads: 3, ..ModelConfig::toy() },
        ];
        for cfg in bad {
            assert!(SamaUnet::new(&mut ParamStore::<f64>::new(), &cfg, &mut rng).is_err());
        }
    }

    #[test]
    fn argmax_picks_largest() {
        let t = Tensor::<f32>::from_f64([1, 3, 1, 2], &[0.0, 5.0, 2.0, 1.0, 1.0, 9.0]).unwrap();
        assert_eq!(argmax_classes(&t), [1, 2]);
    }
}
