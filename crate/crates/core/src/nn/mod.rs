//! Parameters, layers, optimisation and checkpoints.

mod checkpoint;
mod layers;
mod optim;
mod param;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MANIFEST};
pub use layers::{default_groups, Conv2d, ConvTranspose2d, GroupNorm, LayerNorm, Linear};
pub use optim::{cosine_lr, AdamW, AdamWConfig};
pub use param::{kaiming_uniform, Ctx, Param, ParamId, ParamStore};
