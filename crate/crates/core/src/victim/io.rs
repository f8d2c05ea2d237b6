//! Model file format, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "BADGEMDL"
//! version    u32      1
//! arch       u32      0 = linear, 1 = mlp, 2 = cnn
//! channels   u32
//! height     u32
//! width      u32
//! n_classes  u32
//! hidden     u32      mlp hidden width, 0 otherwise
//! norm       channels × (mean f64, std f64)
//! tensors    u32 count, then per tensor: u64 length + length × f64
//! ```
//!
//! Tensors appear in layer order, weight before bias.

use std::fs;
use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::data::Shape;
use crate::error::{BadgeError, Result};

use super::{Arch, VictimModel};

pub const MODEL_MAGIC: &[u8; 8] = b"BADGEMDL";
pub const MODEL_VERSION: u32 = 1;

impl VictimModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MODEL_MAGIC, MODEL_VERSION);
        w.u32(self.arch.tag());
        for v in [self.shape.channels, self.shape.height, self.shape.width, self.n_classes, self.hidden] {
            w.u32(v as u32);
        }
        for (m, s) in self.norm_mean.iter().zip(&self.norm_std) {
            w.f64(*m);
            w.f64(*s);
        }
        let params = self.parameters();
        w.u32(params.len() as u32);
        for p in params {
            w.f64s(p);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::open(bytes, MODEL_MAGIC, "model")?;
        if version != MODEL_VERSION {
            return Err(BadgeError::Format(format!("unsupported model version {version}")));
        }
        let tag = r.u32()?;
        let arch = Arch::from_tag(tag).ok_or_else(|| BadgeError::Format(format!("unknown arch tag {tag}")))?;
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let [channels, height, width, n_classes, hidden] = dims;
        let shape = Shape::new(channels, height, width);
        let mut model = VictimModel::new(arch, shape, n_classes, hidden)
            .map_err(|e| BadgeError::Format(format!("inconsistent model header: {e}")))?;
        if model.hidden != hidden {
            return Err(BadgeError::Format(format!("arch {arch} does not take hidden width {hidden}")));
        }
        let mut mean = Vec::with_capacity(channels);
        let mut std = Vec::with_capacity(channels);
        for _ in 0..channels {
            mean.push(r.f64()?);
            std.push(r.f64()?);
        }
        model.set_normalization(mean, std).map_err(|e| BadgeError::Format(e.to_string()))?;

        let count = r.u32()? as usize;
        let expected = model.parameters().len();
        if count != expected {
            return Err(BadgeError::Format(format!("{arch} expects {expected} tensors, file has {count}")));
        }
        for (i, slot) in model.parameters_mut().into_iter().enumerate() {
            let values = r.f64s()?;
            if values.len() != slot.len() {
                return Err(BadgeError::Format(format!(
                    "tensor {i} has {} values, {arch} layout needs {}",
                    values.len(),
                    slot.len()
                )));
            }
            *slot = values;
        }
        r.finish()?;
        Ok(model)
    }
}

pub fn save_model(model: &VictimModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<VictimModel> {
    VictimModel::from_bytes(&fs::read(path)?)
}
