//! Checkpoints: a directory of STN1 files plus a text manifest.

use std::fs;
use std::path::Path;

use super::param::ParamStore;
use crate::error::{Error, Result};
use crate::stn::StnArray;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.txt";
const CONFIG: &str = "config.txt";

/// Loaded checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: Vec<(String, Tensor<f32>)>,
    pub config: Option<String>,
}

fn file_name(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:04}_{clean}.stn")
}

/// Writes every parameter as `f32` STN1 plus `manifest.txt`, one line per
/// tensor: `name filename d0,d1,...`. `config` is stored verbatim.
pub fn save_checkpoint(dir: &Path, store: &ParamStore<f32>, config: Option<&str>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (i, p) in store.iter().enumerate() {
        let file = file_name(i, &p.name);
        StnArray::F32(p.value.clone()).write(dir.join(&file))?;
        let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("{} {} {}\n", p.name, file, dims.join(",")));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    if let Some(cfg) = config {
        fs::write(dir.join(CONFIG), cfg)?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = fs::read_to_string(dir.join(MANIFEST))?;
    let mut params = Vec::new();
    for (n, line) in manifest.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |m: &str| Error::Format(format!("{MANIFEST} line {}: {m}", n + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, file, dims] = fields[..] else {
            return Err(bad("expected `name file shape`"));
        };
        let shape: Vec<usize> = dims
            .split(',')
            .map(|d| d.parse().map_err(|_| bad("bad shape")))
            .collect::<Result<_>>()?;
        let t = StnArray::read(dir.join(file))?.into_f32()?;
        if t.shape() != shape.as_slice() {
            return Err(bad(&format!("shape {:?} does not match file {:?}", shape, t.shape())));
        }
        params.push((name.to_string(), t));
    }
    let config = match fs::read_to_string(dir.join(CONFIG)) {
        Ok(s) => Some(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    Ok(Checkpoint { params, config })
}

impl Checkpoint {
    /// Copies values into `store` by name; every store entry must be present.
    pub fn apply(&self, store: &mut ParamStore<f32>) -> Result<()> {
        for p in store.iter_mut() {
            let (_, t) = self
                .params
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter `{}`", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(crate::error::mismatch("checkpoint", p.value.shape(), t.shape()));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}
