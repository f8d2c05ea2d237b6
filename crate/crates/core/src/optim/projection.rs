use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BadgeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormOrder {
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "linf")]
    Linf,
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormOrder::L2 => "l2",
            NormOrder::Linf => "linf",
        })
    }
}

impl FromStr for NormOrder {
    type Err = BadgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" | "2" => Ok(NormOrder::L2),
            "linf" | "inf" => Ok(NormOrder::Linf),
            other => Err(BadgeError::Parameter(format!("unknown norm '{other}' (l2|linf)"))),
        }
    }
}

/// How an over-budget perturbation is brought back inside the ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// `ε · p / ‖p‖`, applied only when `‖p‖ > ε`.
    Radial,
    /// Per-element clamp to `[-ε, ε]`; l∞ only (falls back to radial for l2).
    Clamp,
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Projection::Radial => "radial",
            Projection::Clamp => "clamp",
        })
    }
}

impl FromStr for Projection {
    type Err = BadgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radial" => Ok(Projection::Radial),
            "clamp" => Ok(Projection::Clamp),
            other => Err(BadgeError::Parameter(format!("unknown projection '{other}' (radial|clamp)"))),
        }
    }
}

/// Norm ball the perturbation must stay in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub order: NormOrder,
    pub eps: f64,
    pub projection: Projection,
}

impl Budget {
    pub fn new(order: NormOrder, eps: f64) -> Self {
        Self { order, eps, projection: Projection::Radial }
    }

    /// The same ball with ε divided by `scale`.
    pub fn scaled(&self, scale: f64) -> Self {
        Self { eps: self.eps / scale, ..*self }
    }

    pub fn project(&self, p: &mut [f64]) {
        match (self.order, self.projection) {
            (NormOrder::Linf, Projection::Clamp) => p.iter_mut().for_each(|v| *v = v.clamp(-self.eps, self.eps)),
            _ => project_in_place(p, self.order, self.eps),
        }
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        norm(p, self.order) <= self.eps + tol
    }
}

pub fn l2_norm(p: &[f64]) -> f64 {
    p.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn linf_norm(p: &[f64]) -> f64 {
    p.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn norm(p: &[f64], order: NormOrder) -> f64 {
    match order {
        NormOrder::L2 => l2_norm(p),
        NormOrder::Linf => linf_norm(p),
    }
}

/// Radial rescaling onto the ε-ball, only when the norm exceeds ε.
pub fn project(p: &[f64], order: NormOrder, eps: f64) -> Vec<f64> {
    let mut out = p.to_vec();
    project_in_place(&mut out, order, eps);
    out
}

pub fn project_in_place(p: &mut [f64], order: NormOrder, eps: f64) {
    let n = norm(p, order);
    if n > eps {
        let scale = eps / n;
        p.iter_mut().for_each(|v| *v *= scale);
        // Rounding can leave the scaled norm a few ulps above ε.
        while norm(p, order) > eps {
            p.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
        }
    }
}
