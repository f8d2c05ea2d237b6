//! Universal perturbation in pixel units plus its file format.
//!
//! ```text
//! magic       8 bytes  "BADGEPRT"
//! version     u32      1
//! norm order  u32      0 = l2, 1 = linf
//! projection  u32      0 = radial, 1 = clamp
//! eps         f64
//! channels, height, width  u32
//! values      u64 length + length × f64
//! ```

use std::fs;
use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::data::Shape;
use crate::error::{BadgeError, Result};
use crate::optim::{l2_norm, linf_norm, Budget, NormOrder, Projection};

pub const PERTURBATION_MAGIC: &[u8; 8] = b"BADGEPRT";
pub const PERTURBATION_VERSION: u32 = 1;

/// One image-shaped additive perturbation and the budget it was fit under.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub values: Vec<f64>,
    pub shape: Shape,
    pub budget: Budget,
}

impl Perturbation {
    pub fn new(values: Vec<f64>, shape: Shape, budget: Budget) -> Result<Self> {
        if values.len() != shape.dim() {
            return Err(BadgeError::Dimension(format!(
                "{} values for an image of {} pixels",
                values.len(),
                shape.dim()
            )));
        }
        Ok(Self { values, shape, budget })
    }

    pub fn zeros(shape: Shape, budget: Budget) -> Self {
        Self { values: vec![0.0; shape.dim()], shape, budget }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `(l2, linf)`.
    pub fn norms(&self) -> (f64, f64) {
        (l2_norm(&self.values), linf_norm(&self.values))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(PERTURBATION_MAGIC, PERTURBATION_VERSION);
        w.u32(match self.budget.order {
            NormOrder::L2 => 0,
            NormOrder::Linf => 1,
        });
        w.u32(match self.budget.projection {
            Projection::Radial => 0,
            Projection::Clamp => 1,
        });
        w.f64(self.budget.eps);
        for v in [self.shape.channels, self.shape.height, self.shape.width] {
            w.u32(v as u32);
        }
        w.f64s(&self.values);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::open(bytes, PERTURBATION_MAGIC, "perturbation")?;
        if version != PERTURBATION_VERSION {
            return Err(BadgeError::Format(format!("unsupported perturbation version {version}")));
        }
        let order = match r.u32()? {
            0 => NormOrder::L2,
            1 => NormOrder::Linf,
            t => return Err(BadgeError::Format(format!("unknown norm tag {t}"))),
        };
        let projection = match r.u32()? {
            0 => Projection::Radial,
            1 => Projection::Clamp,
            t => return Err(BadgeError::Format(format!("unknown projection tag {t}"))),
        };
        let eps = r.f64()?;
        let shape = Shape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let values = r.f64s()?;
        r.finish()?;
        Perturbation::new(values, shape, Budget { order, eps, projection })
            .map_err(|e| BadgeError::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
