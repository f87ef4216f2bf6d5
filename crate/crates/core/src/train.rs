//! The training loop: AdamW under a cosine schedule, one logged row per
//! epoch.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{seg_loss, Labels};
use crate::metrics::mean_foreground_dsc;
use crate::nn::{cosine_lr, save_checkpoint, AdamW, Ctx, ParamStore};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::unet::{argmax_classes, SamaUnet};

pub const LOG_HEADER: &str = "epoch,lr,loss,dsc";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate of the epoch's first step.
    pub lr: f64,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    /// Mean foreground DSC of the training batches, measured before each
    /// update.
    pub dsc: f64,
    /// Largest global gradient norm seen in the epoch, before clipping.
    pub max_grad_norm: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.lr, self.loss, self.dsc)
    }
}

pub fn log_csv(rows: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Draws batches from a sequence that is reshuffled whenever it runs out.
struct Sampler {
    order: Vec<usize>,
    next: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        Self {
            order: (0..n).collect(),
            next: n,
            rng,
        }
    }

    fn batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.next == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.next = 0;
                }
                self.next += 1;
                self.order[self.next - 1]
            })
            .collect()
    }
}

pub struct Trained {
    pub model: SamaUnet,
    pub store: ParamStore<f32>,
    pub log: Vec<EpochLog>,
}

/// Builds the model for `cfg` with parameters drawn from its seed.
pub fn init_model(cfg: &RunConfig) -> Result<(SamaUnet, ParamStore<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let model = SamaUnet::new(&mut store, &cfg.model, &mut rng)?;
    Ok((model, store))
}

/// Trains from the seeded initialisation. `on_epoch` sees each row as soon
/// as the epoch ends.
pub fn train(cfg: &RunConfig, data: &Dataset, mut on_epoch: impl FnMut(&EpochLog)) -> Result<Trained> {
    cfg.model.validate()?;
    let t = &cfg.train;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if t.epochs == 0 || t.iters_per_epoch == 0 || t.batch_size == 0 {
        return Err(Error::Config("epochs, iters_per_epoch and batch_size must be positive".into()));
    }
    let (model, mut store) = init_model(cfg)?;
    let mut opt = AdamW::new(cfg.optim, &store)?;
    let mut sampler = Sampler::new(data.len(), ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)));
    let weights = cfg.model.head_weights();
    let total = t.epochs * t.iters_per_epoch;
    let (h, w) = (data.height, data.width);
    let mut log = Vec::with_capacity(t.epochs);
    for epoch in 0..t.epochs {
        let (mut loss_sum, mut dsc_sum, mut max_norm) = (0.0, 0.0, 0.0f64);
        let mut first_lr = 0.0;
        for it in 0..t.iters_per_epoch {
            let step = epoch * t.iters_per_epoch + it;
            let lr = cosine_lr(step, total, t.lr)?;
            if it == 0 {
                first_lr = lr;
            }
            let idx = sampler.batch(t.batch_size);
            let (img, lab) = data.batch(&idx);
            let labels = Labels::new(idx.len(), h, w, lab)?;
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &store, true);
            let heads = model.forward(&ctx, &tape.constant(img))?;
            let loss = seg_loss(&heads, &labels, &weights)?;
            let value = loss.value().item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step, value });
            }
            let pred = argmax_classes(heads[0].value());
            dsc_sum += mean_foreground_dsc(&labels.data, &pred, h, w, cfg.model.num_classes)?;
            loss_sum += value;
            let grads = tape.backward(&loss)?;
            let mut grads = ctx.param_grads(&grads);
            drop(ctx);
            let norm = global_norm(&grads);
            max_norm = max_norm.max(norm);
            if let Some(limit) = t.grad_clip {
                if norm > limit {
                    let f = (limit / norm) as f32;
                    for g in &mut grads {
                        g.data_mut().iter_mut().for_each(|v| *v *= f);
                    }
                }
            }
            opt.step(&mut store, &grads, lr)?;
        }
        let row = EpochLog {
            epoch,
            lr: first_lr,
            loss: loss_sum / t.iters_per_epoch as f64,
            dsc: dsc_sum / t.iters_per_epoch as f64,
            max_grad_norm: max_norm,
        };
        on_epoch(&row);
        log.push(row);
    }
    Ok(Trained { model, store, log })
}

fn global_norm(grads: &[Tensor<f32>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt()
}

/// Mean foreground DSC of the model's predictions over the whole set.
pub fn dataset_dsc(model: &SamaUnet, store: &ParamStore<f32>, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let (img, lab) = data.batch(&[i]);
        let pred = model.predict(store, &img)?;
        total += mean_foreground_dsc(&lab, &pred, data.height, data.width, model.config.num_classes)?;
    }
    Ok(total / data.len() as f64)
}

/// Writes the checkpoint, its config and the epoch log into `dir`.
pub fn save_run(dir: &Path, cfg: &RunConfig, trained: &Trained) -> Result<()> {
    save_checkpoint(dir, &trained.store, Some(&cfg.to_text()))?;
    std::fs::write(dir.join("log.csv"), log_csv(&trained.log))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};
    use crate::unet::ModelConfig;

    fn tiny() -> (RunConfig, Dataset) {
        let mut cfg = RunConfig::default();
        cfg.model = ModelConfig {
            base_channels: 4,
            stage_depths: vec![1, 1],
            heads: 1,
            ..ModelConfig::toy()
        };
        cfg.train.epochs = 2;
        cfg.train.iters_per_epoch = 2;
        let data = generate(&SyntheticSpec {
            count: 3,
            height: 16,
            width: 16,
            ..SyntheticSpec::default()
        })
        .unwrap();
        (cfg, data)
    }

    #[test]
    fn sampler_visits_everything_each_pass() {
        let mut s = Sampler::new(5, ChaCha8Rng::seed_from_u64(0));
        for _ in 0..3 {
            let mut b = s.batch(5);
            b.sort();
            assert_eq!(b, [0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let (mut cfg, data) = tiny();
        cfg.train.lr = 0.0;
        let (_, init) = init_model(&cfg).unwrap();
        let trained = train(&cfg, &data, |_| {}).unwrap();
        for (a, b) in init.iter().zip(trained.store.iter()) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }

    #[test]
    fn logs_one_row_per_epoch_and_repeats() {
        let (cfg, data) = tiny();
        let mut seen = 0;
        let a = train(&cfg, &data, |_| seen += 1).unwrap();
        assert_eq!(seen, 2);
        assert_eq!(a.log[0].lr, cfg.train.lr);
        let b = train(&cfg, &data, |_| {}).unwrap();
        assert_eq!(log_csv(&a.log), log_csv(&b.log));
        assert!(log_csv(&a.log).starts_with("epoch,lr,loss,dsc\n"));
    }

    #[test]
    fn empty_dataset_rejected() {
        let (cfg, mut data) = tiny();
        data.samples.clear();
        assert!(train(&cfg, &data, |_| {}).is_err());
    }
}
