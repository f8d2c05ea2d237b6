//! Zeroth-order update machinery.
//!
//! Each update evaluates the attack loss at two probe perturbations and
//! turns the difference into a step:
//!
//! | variant    | probes                     | step                                        |
//! |------------|----------------------------|---------------------------------------------|
//! | `spsa`     | `p - u`, `p + u`           | `p + α u⁻¹ g`                               |
//! | `spsa_am`  | `p - u`, `p + u`           | `p + α u⁻¹ m̂/(√v̂ + η)` (scalar Adam on g)  |
//! | `spsa_gc`  | `p̃ - u`, `p̃ + u`, `p̃ = p + μ v` | `v ← μ v + α u⁻¹ g`, `p + v`          |
//! | `rgf`      | `p`, `p + γ q`             | `p - α ĝ`, `ĝ = q (L(p+γq) - L(p))/γ`       |
//! | `rgf_adam` | `p`, `p + γ q`             | `p - α m̂/(√v̂ + η)` (element-wise Adam on ĝ) |
//!
//! `u` is a Rademacher vector with entries `±δ`, `u⁻¹` its element-wise
//! reciprocal, `q` a standard Gaussian vector and `g = (L⁻ - L⁺)/γ`. Every
//! probe and every updated perturbation is projected onto the budget.

mod projection;
mod schedule;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use projection::{l2_norm, linf_norm, norm, project, project_in_place, Budget, NormOrder, Projection};
pub use schedule::Schedule;

use crate::error::{BadgeError, Result};

/// Rademacher direction, every entry exactly `±delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    values: Vec<f64>,
    delta: f64,
}

impl Direction {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Element-wise reciprocal `u⁻¹`, entries `±1/δ`.
    pub fn reciprocal(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(|v| 1.0 / v)
    }
}

pub fn sample_direction<R: Rng + ?Sized>(dim: usize, delta: f64, rng: &mut R) -> Result<Direction> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(BadgeError::Parameter(format!("delta must be positive, got {delta}")));
    }
    let values = (0..dim).map(|_| if rng.random::<bool>() { delta } else { -delta }).collect();
    Ok(Direction { values, delta })
}

/// `(loss_minus - loss_plus) / gamma`; positive when `+u` lowers the loss.
pub fn pseudo_gradient(loss_minus: f64, loss_plus: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(BadgeError::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    Ok((loss_minus - loss_plus) / gamma)
}

/// `p ← project(p + α · u⁻¹ · corrected)`.
pub fn apply_update(p: &mut [f64], u: &Direction, corrected: f64, alpha: f64, budget: &Budget) -> Result<()> {
    if p.len() != u.values.len() {
        return Err(BadgeError::Dimension("perturbation and direction lengths differ".into()));
    }
    for (pi, inv) in p.iter_mut().zip(u.reciprocal()) {
        *pi += alpha * inv * corrected;
    }
    budget.project(p);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Spsa,
    SpsaAm,
    SpsaGc,
    Rgf,
    RgfAdam,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Spsa, Variant::SpsaAm, Variant::SpsaGc, Variant::Rgf, Variant::RgfAdam];

    fn is_rgf(self) -> bool {
        matches!(self, Variant::Rgf | Variant::RgfAdam)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Spsa => "spsa",
            Variant::SpsaAm => "spsa_am",
            Variant::SpsaGc => "spsa_gc",
            Variant::Rgf => "rgf",
            Variant::RgfAdam => "rgf_adam",
        })
    }
}

impl FromStr for Variant {
    type Err = BadgeError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.to_string() == s).ok_or_else(|| {
            BadgeError::Parameter(format!("unknown optimizer '{s}' (spsa|spsa_am|spsa_gc|rgf|rgf_adam)"))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eta: f64,
    pub gamma: f64,
    /// Nesterov momentum coefficient of `spsa_gc`.
    pub momentum: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self { beta1: 0.5, beta2: 0.999, eta: 1e-8, gamma: 1e-3, momentum: 0.9 }
    }
}

/// Scalar Adam moments with bias correction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdamMoments {
    pub m: f64,
    pub v: f64,
}

impl AdamMoments {
    /// Folds `g` into the moments at step `t` (1-based) and returns
    /// `m̂ / (√v̂ + η)`.
    pub fn correct(&mut self, g: f64, t: u64, hyper: &Hyper) -> f64 {
        self.m = hyper.beta1 * self.m + (1.0 - hyper.beta1) * g;
        self.v = hyper.beta2 * self.v + (1.0 - hyper.beta2) * g * g;
        let m_hat = self.m / (1.0 - hyper.beta1.powf(t as f64));
        let v_hat = self.v / (1.0 - hyper.beta2.powf(t as f64));
        m_hat / (v_hat.sqrt() + hyper.eta)
    }
}

/// The two perturbations at which the loss is evaluated for one update.
#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    /// `first = project(base - u)`, `second = project(base + u)`.
    Rademacher { u: Direction, first: Vec<f64>, second: Vec<f64> },
    /// `first = p`, `second = project(p + γ q)`.
    Gaussian { q: Vec<f64>, first: Vec<f64>, second: Vec<f64> },
}

impl Probe {
    pub fn points(&self) -> [&[f64]; 2] {
        match self {
            Probe::Rademacher { first, second, .. } | Probe::Gaussian { first, second, .. } => [first, second],
        }
    }
}

/// Mutable optimizer state owned by one attack run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub variant: Variant,
    pub hyper: Hyper,
    /// Completed updates.
    pub t: u64,
    pub adam: AdamMoments,
    /// `spsa_gc` velocity.
    pub velocity: Vec<f64>,
    /// `rgf_adam` element-wise moments.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(variant: Variant, hyper: Hyper, dim: usize) -> Self {
        let vec_if = |on: bool| if on { vec![0.0; dim] } else { Vec::new() };
        Self {
            variant,
            hyper,
            t: 0,
            adam: AdamMoments::default(),
            velocity: vec_if(variant == Variant::SpsaGc),
            m: vec_if(variant == Variant::RgfAdam),
            v: vec_if(variant == Variant::RgfAdam),
        }
    }

    /// Samples a direction and builds the two probe perturbations.
    pub fn propose<R: Rng + ?Sized>(&self, p: &[f64], delta: f64, budget: &Budget, rng: &mut R) -> Result<Probe> {
        if self.variant.is_rgf() {
            let q: Vec<f64> = (0..p.len()).map(|_| StandardNormal.sample(rng)).collect();
            let mut second: Vec<f64> = p.iter().zip(&q).map(|(pi, qi)| pi + self.hyper.gamma * qi).collect();
            budget.project(&mut second);
            return Ok(Probe::Gaussian { q, first: p.to_vec(), second });
        }
        let u = sample_direction(p.len(), delta, rng)?;
        let mut base = p.to_vec();
        if self.variant == Variant::SpsaGc {
            for (b, v) in base.iter_mut().zip(&self.velocity) {
                *b += self.hyper.momentum * v;
            }
            budget.project(&mut base);
        }
        let mut first: Vec<f64> = base.iter().zip(u.values()).map(|(b, ui)| b - ui).collect();
        let mut second: Vec<f64> = base.iter().zip(u.values()).map(|(b, ui)| b + ui).collect();
        budget.project(&mut first);
        budget.project(&mut second);
        Ok(Probe::Rademacher { u, first, second })
    }

    /// Applies one update from the losses at the probe's two points.
    pub fn step(&mut self, p: &mut [f64], probe: &Probe, losses: [f64; 2], alpha: f64, budget: &Budget) -> Result<()> {
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(BadgeError::Parameter("non-finite loss".into()));
        }
        self.t += 1;
        let hyper = self.hyper;
        match (self.variant, probe) {
            (Variant::Spsa, Probe::Rademacher { u, .. }) => {
                let g = pseudo_gradient(losses[0], losses[1], hyper.gamma)?;
                apply_update(p, u, g, alpha, budget)
            }
            (Variant::SpsaAm, Probe::Rademacher { u, .. }) => {
                let g = pseudo_gradient(losses[0], losses[1], hyper.gamma)?;
                let corrected = self.adam.correct(g, self.t, &hyper);
                apply_update(p, u, corrected, alpha, budget)
            }
            (Variant::SpsaGc, Probe::Rademacher { u, .. }) => {
                let g = pseudo_gradient(losses[0], losses[1], hyper.gamma)?;
                for ((v, inv), pi) in self.velocity.iter_mut().zip(u.reciprocal()).zip(p.iter_mut()) {
                    *v = hyper.momentum * *v + alpha * inv * g;
                    *pi += *v;
                }
                budget.project(p);
                Ok(())
            }
            (Variant::Rgf | Variant::RgfAdam, Probe::Gaussian { q, .. }) => {
                if !(hyper.gamma > 0.0) {
                    return Err(BadgeError::Parameter("gamma must be positive".into()));
                }
                let slope = (losses[1] - losses[0]) / hyper.gamma;
                if self.variant == Variant::Rgf {
                    for (pi, qi) in p.iter_mut().zip(q) {
                        *pi -= alpha * slope * qi;
                    }
                } else {
                    let (c1, c2) = (1.0 - hyper.beta1.powf(self.t as f64), 1.0 - hyper.beta2.powf(self.t as f64));
                    for (((pi, qi), m), v) in p.iter_mut().zip(q).zip(&mut self.m).zip(&mut self.v) {
                        let g = slope * qi;
                        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
                        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
                        *pi -= alpha * (*m / c1) / ((*v / c2).sqrt() + hyper.eta);
                    }
                }
                budget.project(p);
                Ok(())
            }
            (variant, _) => Err(BadgeError::Parameter(format!("probe kind does not match optimizer {variant}"))),
        }
    }
}
