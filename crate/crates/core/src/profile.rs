//! Analytic parameter and multiply-accumulate counts per layer.
//!
//! Counts follow the layer formulas directly rather than inspecting a built
//! model: linear `in·out (+out)` parameters and `in·out` MACs per token,
//! convolution `out·(in/groups)·k²` MACs per output pixel, attention the
//! explicit `q·k` and `a·v` contractions, and the selective scan `3·L·C·N`
//! (decay, input and readout products per state element). Normalisation,
//! activations, pooling and elementwise products contribute parameters but
//! no MACs.

use std::fmt::Write as _;

use crate::crmsm::num_views;
use crate::error::Result;
use crate::sama::SamaConfig;
use crate::unet::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Linear,
    Conv,
    Norm,
    Attention,
    Scan,
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub name: String,
    pub kind: Kind,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, Default)]
pub struct FlopsReport {
    pub input: (usize, usize),
    pub padded: (usize, usize),
    pub rows: Vec<Row>,
}

impl FlopsReport {
    fn push(&mut self, name: String, kind: Kind, params: u64, macs: u64) {
        self.rows.push(Row {
            name,
            kind,
            params,
            macs,
        });
    }

    pub fn linear(&mut self, name: String, input: usize, output: usize, bias: bool, tokens: usize) {
        let params = (input * output + if bias { output } else { 0 }) as u64;
        self.push(name, Kind::Linear, params, (input * output * tokens) as u64);
    }

    /// `k×k` convolution producing an `out_h×out_w` map.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(&mut self, name: String, cin: usize, cout: usize, k: usize, groups: usize, bias: bool, out_hw: usize) {
        let per_pixel = cout * (cin / groups) * k * k;
        let params = (per_pixel + if bias { cout } else { 0 }) as u64;
        self.push(name, Kind::Conv, params, (per_pixel * out_hw) as u64);
    }

    /// Stride-`k` transpose convolution with a `k×k` kernel from an
    /// `in_h×in_w` map.
    pub fn conv_transpose(&mut self, name: String, cin: usize, cout: usize, k: usize, in_hw: usize) {
        let per_pixel = cin * cout * k * k;
        self.push(name, Kind::Conv, (per_pixel + cout) as u64, (per_pixel * in_hw) as u64);
    }

    fn norm(&mut self, name: String, channels: usize) {
        self.push(name, Kind::Norm, 2 * channels as u64, 0);
    }

    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn macs_of(&self, kind: Kind) -> u64 {
        self.rows.iter().filter(|r| r.kind == kind).map(|r| r.macs).sum()
    }

    /// Rows whose name is `prefix` or starts with `prefix.`.
    pub fn module<'a>(&'a self, prefix: &str) -> impl Iterator<Item = &'a Row> + 'a {
        let (exact, dotted) = (prefix.to_string(), format!("{prefix}."));
        self.rows
            .iter()
            .filter(move |r| r.name == exact || r.name.starts_with(&dotted))
    }

    /// Top-level module names in order of appearance.
    pub fn modules(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            let top = r.name.split('.').next().unwrap_or("").to_string();
            if out.last() != Some(&top) {
                out.push(top);
            }
        }
        out
    }

    /// Per-module totals followed by the per-layer table.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let (h, w) = self.input;
        let (ph, pw) = self.padded;
        let _ = writeln!(s, "# input {h}x{w} (padded to {ph}x{pw}), batch 1");
        let _ = writeln!(s, "# MACs are multiply-accumulates; 1 MAC = 2 FLOPs");
        let _ = writeln!(s, "{:<48} {:>12} {:>16}", "module", "params", "MACs");
        for m in self.modules() {
            let (p, c) = self.module(&m).fold((0, 0), |(p, c), r| (p + r.params, c + r.macs));
            let _ = writeln!(s, "{m:<48} {p:>12} {c:>16}");
        }
        let _ = writeln!(s, "{:<48} {:>12} {:>16}", "total", self.total_params(), self.total_macs());
        let _ = writeln!(s, "# GFLOPs {:.6}", 2.0 * self.total_macs() as f64 / 1e9);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<48} {:>10} {:>12} {:>16}", "layer", "kind", "params", "MACs");
        for r in &self.rows {
            let _ = writeln!(s, "{:<48} {:>10} {:>12} {:>16}", r.name, format!("{:?}", r.kind), r.params, r.macs);
        }
        s
    }
}

/// One attention branch over an `h×w` map of width `d`.
fn diff_agg(rep: &mut FlopsReport, name: &str, cfg: &SamaConfig, global: bool, hw: usize) {
    let a = cfg.attn;
    let d = cfg.branch_width();
    let keys = if global { a.pool * a.pool } else { a.window * a.window };
    rep.linear(format!("{name}.wq"), d, d, false, hw);
    rep.linear(format!("{name}.wk"), d, d, false, if global { keys } else { hw });
    rep.linear(format!("{name}.wv"), d, d, false, hw);
    if a.differential {
        rep.push(format!("{name}.lambda"), Kind::Scalar, a.heads as u64, 0);
    }
    // q·k over all heads and a·v with the combined weights.
    rep.push(format!("{name}.attn"), Kind::Attention, 0, 2 * (hw * keys * d) as u64);
    if a.differential && a.post_norm {
        rep.norm(format!("{name}.gn"), d);
    }
    if a.use_pe {
        rep.conv(format!("{name}.pe"), d, d, 3, d, true, hw);
    }
    rep.linear(format!("{name}.wo"), d, d, true, hw);
}

fn sama_block(rep: &mut FlopsReport, name: &str, cfg: &SamaConfig, hw: usize) {
    let c = cfg.channels;
    let inner = 2 * cfg.branch_width();
    rep.norm(format!("{name}.norm1"), c);
    let m = format!("{name}.mixer");
    if cfg.mamba_macro {
        rep.linear(format!("{m}.in_proj"), c, inner, true, hw);
        rep.conv(format!("{m}.dw"), inner, inner, 3, inner, true, hw);
        rep.linear(format!("{m}.res_proj"), c, inner, true, hw);
    }
    diff_agg(rep, &format!("{m}.local"), cfg, false, hw);
    diff_agg(rep, &format!("{m}.global"), cfg, true, hw);
    rep.linear(format!("{m}.out_proj"), inner, c, true, hw);
    rep.norm(format!("{name}.norm2"), c);
    rep.linear(format!("{name}.ffn1"), c, c * cfg.ffn_ratio, true, hw);
    rep.linear(format!("{name}.ffn2"), c * cfg.ffn_ratio, c, true, hw);
}

fn crmsm_scale(rep: &mut FlopsReport, name: &str, cfg: &ModelConfig, c: usize, hw: usize) {
    let flags = cfg.crmsm;
    let views = num_views(flags);
    let n = cfg.ssm_state;
    if flags.use_ssm {
        let s = format!("{name}.ssm");
        rep.push(format!("{s}.scan"), Kind::Scan, (c * n + c) as u64, (3 * views * hw * c * n) as u64);
        if flags.static_ssm {
            rep.push(format!("{s}.selection"), Kind::Scalar, (c + 2 * n) as u64, 0);
        } else {
            rep.linear(format!("{s}.proj_delta"), c, c, true, views * hw);
            rep.linear(format!("{s}.proj_b"), c, n, false, views * hw);
            rep.linear(format!("{s}.proj_c"), c, n, false, views * hw);
        }
    } else {
        rep.conv(format!("{name}.conv"), c, c, 3, 1, true, views * hw);
    }
    let fused = if flags.causal_fusion { c } else { c * views };
    rep.linear(format!("{name}.proj"), fused, c, true, hw);
}

fn res_block(rep: &mut FlopsReport, name: &str, cin: usize, cout: usize, hw: usize) {
    rep.conv(format!("{name}.conv1"), cin, cout, 3, 1, false, hw);
    rep.norm(format!("{name}.gn1"), cout);
    rep.conv(format!("{name}.conv2"), cout, cout, 3, 1, false, hw);
    rep.norm(format!("{name}.gn2"), cout);
    rep.conv(format!("{name}.shortcut"), cin, cout, 1, 1, true, hw);
}

/// Profiles one `h×w` image through the network described by `cfg`.
pub fn profile(cfg: &ModelConfig, h: usize, w: usize) -> Result<FlopsReport> {
    cfg.validate()?;
    let m = cfg.divisor();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let mut rep = FlopsReport {
        input: (h, w),
        padded: (ph, pw),
        rows: Vec::new(),
    };
    // Pixels of a map downsampled by 2^s.
    let at = |s: usize| (ph >> s) * (pw >> s);
    let chans = cfg.stage_channels();
    let (c0, half) = (cfg.base_channels, cfg.stem_channels());
    rep.conv("embed.conv1".into(), cfg.in_channels, half, 3, 1, true, at(1));
    rep.conv("embed.conv2".into(), half, c0, 3, 1, true, at(2));
    for (i, &depth) in cfg.stage_depths.iter().enumerate() {
        let hw = at(i + 2);
        if i > 0 {
            let p = chans[i - 1];
            rep.conv(format!("stage{i}.down.dw"), p, p, 3, p, true, hw);
            rep.conv(format!("stage{i}.down.pw"), p, chans[i], 1, 1, true, hw);
        }
        for b in 0..depth {
            sama_block(&mut rep, &format!("stage{i}.block{b}"), &cfg.sama_config(i), hw);
        }
    }
    if cfg.use_crmsm {
        for (i, &c) in chans.iter().enumerate() {
            if i + 1 < chans.len() || cfg.crmsm_bottleneck {
                crmsm_scale(&mut rep, &format!("crmsm{i}"), cfg, c, at(i + 2));
            }
        }
    }
    for i in (0..chans.len() - 1).rev() {
        rep.conv_transpose(format!("dec{i}.up"), chans[i + 1], chans[i], 2, at(i + 3));
        res_block(&mut rep, &format!("dec{i}.block"), 2 * chans[i], chans[i], at(i + 2));
    }
    rep.conv_transpose("dec_half.up".into(), c0, half, 2, at(2));
    res_block(&mut rep, "dec_half.block", 2 * half, half, at(1));
    rep.conv_transpose("dec_full.up".into(), half, half, 2, at(1));
    res_block(&mut rep, "dec_full.block", half + cfg.in_channels, half, at(0));
    let mut level_channels = vec![half, half];
    level_channels.extend(chans[..chans.len() - 1].iter().copied());
    for (i, &c) in level_channels.iter().enumerate().take(cfg.num_heads()) {
        rep.conv(format!("head{i}"), c, cfg.num_classes, 1, 1, true, at(i));
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::crmsm::CrMsmFlags;
    use crate::nn::{Linear, ParamStore};
    use crate::unet::SamaUnet;

    #[test]
    fn single_linear() {
        let mut rep = FlopsReport::default();
        rep.linear("fc".into(), 8, 8, true, 10);
        assert_eq!((rep.total_params(), rep.total_macs()), (72, 640));
        let mut store = ParamStore::<f32>::new();
        Linear::new(&mut store, "fc", 8, 8, true, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(store.scalar_count() as u64, rep.total_params());
    }

    #[test]
    fn conv_formulas() {
        let mut rep = FlopsReport::default();
        rep.conv("c".into(), 4, 6, 3, 2, true, 25);
        assert_eq!(rep.rows[0].params, 6 * 2 * 9 + 6);
        assert_eq!(rep.rows[0].macs, 6 * 2 * 9 * 25);
        rep.conv_transpose("t".into(), 4, 2, 2, 9);
        assert_eq!(rep.rows[1].params, 4 * 2 * 4 + 2);
        assert_eq!(rep.rows[1].macs, 4 * 2 * 4 * 9);
    }

    fn configs() -> Vec<ModelConfig> {
        let toy = ModelConfig::toy();
        vec![
            toy.clone(),
            ModelConfig {
                base_channels: 8,
                stage_depths: vec![2, 1],
                deep_supervision: false,
                crmsm: CrMsmFlags {
                    multi_view: false,
                    causal_fusion: false,
                    ..CrMsmFlags::default()
                },
                ..toy.clone()
            },
            ModelConfig {
                base_channels: 8,
                stage_depths: vec![1, 1, 1],
                mamba_macro: false,
                differential: false,
                use_pe: false,
                crmsm_bottleneck: false,
                crmsm: CrMsmFlags {
                    use_ssm: false,
                    ..CrMsmFlags::default()
                },
                in_channels: 2,
                num_classes: 4,
                ..toy.clone()
            },
            ModelConfig {
                base_channels: 8,
                stage_depths: vec![1, 1],
                crmsm: CrMsmFlags {
                    static_ssm: true,
                    ..CrMsmFlags::default()
                },
                ..toy
            },
        ]
    }

    #[test]
    fn params_match_built_models_per_module() {
        for cfg in configs() {
            let mut store = ParamStore::<f32>::new();
            let model = SamaUnet::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let rep = profile(&cfg, 64, 64).unwrap();
            assert_eq!(rep.total_params(), store.scalar_count() as u64, "{cfg:?}");
            assert_eq!(rep.total_params(), model.param_count() as u64);
            for m in rep.modules() {
                let on_store: usize = store
                    .iter()
                    .filter(|p| p.name.split('.').next() == Some(m.as_str()))
                    .map(|p| p.value.numel())
                    .sum();
                let profiled: u64 = rep.module(&m).map(|r| r.params).sum();
                assert_eq!(profiled, on_store as u64, "module {m}");
            }
        }
    }

    #[test]
    fn whole_is_sum_of_modules() {
        let rep = profile(&ModelConfig::default(), 64, 64).unwrap();
        let mods = rep.modules();
        assert!(mods.contains(&"crmsm3".to_string()));
        let (p, c) = mods
            .iter()
            .flat_map(|m| rep.module(m))
            .fold((0, 0), |(p, c), r| (p + r.params, c + r.macs));
        assert_eq!((p, c), (rep.total_params(), rep.total_macs()));
        assert!(rep.render().contains("1 MAC = 2 FLOPs"));
    }

    #[test]
    fn attention_and_scan_scale_linearly() {
        let cfg = ModelConfig::toy();
        let (a, b) = (profile(&cfg, 64, 64).unwrap(), profile(&cfg, 128, 128).unwrap());
        for kind in [Kind::Attention, Kind::Scan] {
            let r = b.macs_of(kind) as f64 / a.macs_of(kind) as f64;
            assert!((3.8..=4.2).contains(&r), "{kind:?} {r}");
        }
    }

    #[test]
    fn odd_sizes_are_padded() {
        let rep = profile(&ModelConfig::toy(), 50, 70).unwrap();
        assert_eq!(rep.padded, (64, 96));
    }
}
