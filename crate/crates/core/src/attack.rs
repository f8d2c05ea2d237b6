//! The universal perturbation search loop.
//!
//! Optimizer state lives in normalized units: the perturbation `p`, the
//! probe size δ, the step size α and γ are all measured in
//! `pixel / intensity_scale`, so the default δ = 0.01 moves a pixel by 2.55
//! intensity levels. Adversarial inputs are
//! `clamp(x + intensity_scale · p)`; reported perturbations are in pixels.
//!
//! One update consumes one training batch and exactly two oracle queries of
//! that batch. Epochs reshuffle the training split with a per-epoch seed.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{Reader, Writer};
use crate::data::{batches, epoch_seed, Dataset, ImageBatch};
use crate::error::{BadgeError, Result};
use crate::losses::Loss;
use crate::optim::{AdamMoments, Budget, Hyper, NormOrder, OptimizerState, Schedule, Variant};
use crate::perturbation::Perturbation;
use crate::victim::{DecisionBatch, OracleMode, QueryOracle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    /// Move decisions away from the ground-truth labels.
    NonTargeted,
    /// Move decisions onto `class`.
    Targeted { class: usize },
}

impl Objective {
    pub fn target(self) -> Option<usize> {
        match self {
            Objective::NonTargeted => None,
            Objective::Targeted { class } => Some(class),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::NonTargeted => f.write_str("non_targeted"),
            Objective::Targeted { class } => write!(f, "targeted:{class}"),
        }
    }
}

/// Value range adversarial inputs are clamped to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampMode {
    /// The dataset's value range, `[0, 255]`.
    Global,
    /// Minimum and maximum pixel of the current batch.
    PerBatch,
}

impl FromStr for ClampMode {
    type Err = BadgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(ClampMode::Global),
            "per_batch" => Ok(ClampMode::PerBatch),
            other => Err(BadgeError::Parameter(format!("unknown clamp mode '{other}' (global|per_batch)"))),
        }
    }
}

impl fmt::Display for ClampMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClampMode::Global => "global",
            ClampMode::PerBatch => "per_batch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub mode: OracleMode,
    pub objective: Objective,
    pub loss: Loss,
    pub variant: Variant,
    /// Budget in pixel units.
    pub budget: Budget,
    pub batch_size: usize,
    pub epochs: usize,
    /// Caps the total update count below `epochs × batches_per_epoch`.
    pub max_updates: Option<usize>,
    pub data_seed: u64,
    pub direction_seed: u64,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub delta_start: f64,
    pub delta_ratio: f64,
    /// Updates between δ decays; one epoch when unset.
    pub delta_period: Option<usize>,
    pub hyper: Hyper,
    /// Updates between probe-ASR measurements and checkpoint hooks; 0 disables both.
    pub checkpoint_interval: usize,
    pub probe_size: usize,
    pub intensity_scale: f64,
    pub clamp: ClampMode,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            mode: OracleMode::Decision,
            objective: Objective::NonTargeted,
            loss: Loss::Acc,
            variant: Variant::SpsaAm,
            budget: Budget::new(NormOrder::Linf, 10.0),
            batch_size: 256,
            epochs: 500,
            max_updates: Some(20_000),
            data_seed: 0,
            direction_seed: 0,
            alpha_start: 1e-4,
            alpha_end: 1e-3,
            delta_start: 0.01,
            delta_ratio: 0.9,
            delta_period: None,
            hyper: Hyper::default(),
            checkpoint_interval: 1000,
            probe_size: 512,
            intensity_scale: 255.0,
            clamp: ClampMode::Global,
        }
    }
}

impl AttackConfig {
    /// Default configuration with both run seeds set to `seed`.
    pub fn seeded(seed: u64) -> Self {
        Self { data_seed: seed, direction_seed: seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BadgeError::Config(msg));
        if !(self.budget.eps >= 0.0 && self.budget.eps.is_finite()) {
            return bad(format!("eps must be finite and >= 0, got {}", self.budget.eps));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.intensity_scale > 0.0 && self.intensity_scale.is_finite()) {
            return bad(format!("intensity scale must be positive, got {}", self.intensity_scale));
        }
        for (name, v) in [
            ("alpha_start", self.alpha_start),
            ("alpha_end", self.alpha_end),
            ("delta", self.delta_start),
            ("delta_ratio", self.delta_ratio),
            ("gamma", self.hyper.gamma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [("beta1", self.hyper.beta1), ("beta2", self.hyper.beta2), ("momentum", self.hyper.momentum)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.hyper.eta > 0.0) {
            return bad(format!("eta must be positive, got {}", self.hyper.eta));
        }
        if self.delta_period == Some(0) {
            return bad("delta period must be >= 1".into());
        }
        Ok(())
    }

    /// Canonical serialization; two configs hash equal iff every field matches.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`AttackConfig::canonical`].
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn batches_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size.max(1))
    }

    pub fn total_updates(&self, n_train: usize) -> usize {
        let full = self.epochs * self.batches_per_epoch(n_train);
        self.max_updates.map_or(full, |cap| cap.min(full))
    }

    pub fn alpha_schedule(&self, total: usize) -> Schedule {
        Schedule::Cosine { start: self.alpha_start, end: self.alpha_end, horizon: total }
    }

    pub fn delta_schedule(&self, n_train: usize, total: usize) -> Schedule {
        let period = self.delta_period.unwrap_or_else(|| self.batches_per_epoch(n_train).max(1));
        Schedule::Step { start: self.delta_start, ratio: self.delta_ratio, period, horizon: total }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One update. `loss_minus`/`loss_plus` are the losses at the first and
/// second probe (`p - u`/`p + u`, or `p`/`p + γq` for the Gaussian variants).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub update: usize,
    pub loss_minus: f64,
    pub loss_plus: f64,
    pub alpha: f64,
    pub delta: f64,
    /// ASR on the held-out probe batch, at checkpoint intervals only.
    pub probe_asr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub seconds: f64,
    /// Attack queries (rows sent to the oracle), excluding probe measurements.
    pub queries: u64,
}

impl RunTrace {
    pub fn updates(&self) -> usize {
        self.records.len()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| 0.5 * (r.loss_minus + r.loss_plus))
    }
}

/// `clamp(x + p)` row by row; `p` is broadcast over every row of `x`.
pub fn clamp_adversarial(x: &[f64], p: &[f64], range: (f64, f64)) -> Vec<f64> {
    perturb(x, p, 1.0, range)
}

fn perturb(x: &[f64], p: &[f64], scale: f64, (lo, hi): (f64, f64)) -> Vec<f64> {
    debug_assert!(!p.is_empty() && x.len() % p.len() == 0);
    x.chunks(p.len()).flat_map(|row| row.iter().zip(p).map(|(xi, pi)| (xi + scale * pi).clamp(lo, hi))).collect()
}

fn batch_range(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
}

/// Percentage of rows whose decision differs between `clean` and `adv`.
pub(crate) fn changed_percent(clean: &[usize], adv: &[usize]) -> f64 {
    let changed = clean.iter().zip(adv).filter(|(a, b)| a != b).count();
    100.0 * changed as f64 / clean.len() as f64
}

/// Resumable attack run over a borrowed oracle and dataset.
pub struct AttackRun<'a> {
    config: AttackConfig,
    oracle: &'a QueryOracle,
    data: &'a Dataset,
    budget: Budget,
    state: OptimizerState,
    p: Vec<f64>,
    rng: ChaCha8Rng,
    update: usize,
    total: usize,
    per_epoch: usize,
    alpha: Schedule,
    delta: Schedule,
    epoch: Option<(usize, Vec<ImageBatch>)>,
    probe: ImageBatch,
    probe_oracle: QueryOracle,
    probe_clean: Vec<usize>,
    records: Vec<TraceRecord>,
    queries: u64,
    prior_seconds: f64,
    started: Instant,
}

impl<'a> AttackRun<'a> {
    pub fn new(config: &AttackConfig, oracle: &'a QueryOracle, data: &'a Dataset) -> Result<Self> {
        config.validate()?;
        if oracle.n_classes() != data.n_classes {
            return Err(BadgeError::Config(format!(
                "victim has {} classes, dataset has {}",
                oracle.n_classes(),
                data.n_classes
            )));
        }
        if oracle.input_dim() != data.shape().dim() {
            return Err(BadgeError::Config(format!(
                "victim takes {} inputs, dataset images have {}",
                oracle.input_dim(),
                data.shape().dim()
            )));
        }
        if oracle.mode() != config.mode {
            return Err(BadgeError::Config(format!("oracle answers in {} mode, config asks for {}", oracle.mode(), config.mode)));
        }
        if let Some(class) = config.objective.target() {
            if class >= data.n_classes {
                return Err(BadgeError::Config(format!("target class {class} outside [0, {})", data.n_classes)));
            }
        }
        let n_train = data.train.len();
        let total = config.total_updates(n_train);
        let probe = data.test.head(config.probe_size);
        let probe_oracle = oracle.sibling(OracleMode::Decision);
        let probe_clean = if config.checkpoint_interval > 0 && !probe.is_empty() {
            probe_oracle.predict(probe.pixels())?
        } else {
            Vec::new()
        };
        let dim = data.shape().dim();
        Ok(Self {
            budget: config.budget.scaled(config.intensity_scale),
            state: OptimizerState::new(config.variant, config.hyper, dim),
            p: vec![0.0; dim],
            rng: ChaCha8Rng::seed_from_u64(config.direction_seed),
            update: 0,
            total,
            per_epoch: config.batches_per_epoch(n_train),
            alpha: config.alpha_schedule(total),
            delta: config.delta_schedule(n_train, total),
            epoch: None,
            probe,
            probe_oracle,
            probe_clean,
            records: Vec::with_capacity(total),
            queries: 0,
            prior_seconds: 0.0,
            started: Instant::now(),
            config: config.clone(),
            oracle,
            data,
        })
    }

    /// Restores a run from a checkpoint taken with the same config.
    pub fn resume(config: &AttackConfig, oracle: &'a QueryOracle, data: &'a Dataset, ckpt: &Checkpoint) -> Result<Self> {
        let hash = config.hash();
        if ckpt.config_hash != hash {
            return Err(BadgeError::Config(format!(
                "checkpoint was written by config {}, current config is {hash}",
                ckpt.config_hash
            )));
        }
        let mut run = Self::new(config, oracle, data)?;
        if ckpt.update > run.total || ckpt.p.len() != run.p.len() || ckpt.records.len() != ckpt.update {
            return Err(BadgeError::Format("checkpoint does not fit this run".into()));
        }
        if ckpt.state.variant != config.variant || ckpt.state.t != ckpt.update as u64 {
            return Err(BadgeError::Format("checkpoint optimizer state does not fit this run".into()));
        }
        run.p = ckpt.p.clone();
        run.state = ckpt.state.clone();
        run.state.hyper = config.hyper;
        run.rng.set_word_pos(ckpt.rng_word_pos);
        run.update = ckpt.update;
        run.records = ckpt.records.clone();
        run.queries = ckpt.queries;
        run.prior_seconds = ckpt.seconds;
        Ok(run)
    }

    pub fn config(&self) -> &AttackConfig {
        &self.config
    }

    pub fn update(&self) -> usize {
        self.update
    }

    pub fn total_updates(&self) -> usize {
        self.total
    }

    pub fn is_done(&self) -> bool {
        self.update >= self.total
    }

    /// Current perturbation in pixel units.
    pub fn perturbation(&self) -> Perturbation {
        let values = self.p.iter().map(|v| v * self.config.intensity_scale).collect();
        Perturbation { values, shape: self.data.shape(), budget: self.config.budget }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    fn seconds(&self) -> f64 {
        self.prior_seconds + self.started.elapsed().as_secs_f64()
    }

    fn trace(&self) -> RunTrace {
        RunTrace { records: self.records.clone(), seconds: self.seconds(), queries: self.queries }
    }

    /// ASR of the current perturbation on the held-out probe batch.
    pub fn probe_asr(&self) -> Result<f64> {
        if self.probe.is_empty() {
            return Err(BadgeError::UndefinedMetric("probe batch is empty".into()));
        }
        let clean = if self.probe_clean.is_empty() {
            self.probe_oracle.predict(self.probe.pixels())?
        } else {
            self.probe_clean.clone()
        };
        let adv = perturb(self.probe.pixels(), &self.p, self.config.intensity_scale, self.data.value_range);
        Ok(changed_percent(&clean, &self.probe_oracle.predict(&adv)?))
    }

    fn batch(&mut self) -> Result<ImageBatch> {
        let (epoch, index) = (self.update / self.per_epoch, self.update % self.per_epoch);
        if self.epoch.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let seed = epoch_seed(self.config.data_seed, epoch);
            self.epoch = Some((epoch, batches(&self.data.train, self.config.batch_size, seed)?));
        }
        Ok(self.epoch.as_ref().expect("epoch batches cached").1[index].clone())
    }

    fn reference(&self, batch: &ImageBatch) -> Result<DecisionBatch> {
        match self.config.objective {
            Objective::NonTargeted => DecisionBatch::one_hot(batch.labels(), self.data.n_classes),
            Objective::Targeted { class } => DecisionBatch::one_hot(&vec![class; batch.len()], self.data.n_classes),
        }
    }

    fn loss(&self, pred: &DecisionBatch, reference: &DecisionBatch) -> Result<f64> {
        match (self.config.objective, self.config.loss) {
            (Objective::NonTargeted, loss) => loss.eval(pred, reference),
            (Objective::Targeted { .. }, Loss::Acc | Loss::TargetAcc) => Loss::TargetAcc.eval(pred, reference),
            // Distances to the target; the loss rows are negated distances.
            (Objective::Targeted { .. }, loss) => Ok(-loss.eval(pred, reference)?),
        }
    }

    /// Performs one update. No-op once the run is complete.
    pub fn step(&mut self) -> Result<()> {
        if self.is_done() {
            return Ok(());
        }
        let batch = self.batch()?;
        let reference = self.reference(&batch)?;
        let (alpha, delta) = (self.alpha.value(self.update), self.delta.value(self.update));
        let probe = self.state.propose(&self.p, delta, &self.budget, &mut self.rng)?;
        let range = match self.config.clamp {
            ClampMode::Global => self.data.value_range,
            ClampMode::PerBatch => batch_range(batch.pixels()),
        };
        let mut losses = [0.0; 2];
        for (slot, point) in losses.iter_mut().zip(probe.points()) {
            let adv = perturb(batch.pixels(), point, self.config.intensity_scale, range);
            *slot = self.loss(&self.oracle.query(&adv)?, &reference)?;
        }
        self.queries += 2 * batch.len() as u64;
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(BadgeError::NonFinite { update: self.update, trace: Box::new(self.trace()) });
        }
        self.state.step(&mut self.p, &probe, losses, alpha, &self.budget)?;
        self.update += 1;
        let interval = self.config.checkpoint_interval;
        let probe_asr = if interval > 0 && self.update % interval == 0 && !self.probe.is_empty() {
            Some(self.probe_asr()?)
        } else {
            None
        };
        self.records.push(TraceRecord {
            update: self.update - 1,
            loss_minus: losses[0],
            loss_plus: losses[1],
            alpha,
            delta,
            probe_asr,
        });
        Ok(())
    }

    /// Steps until `update` updates are complete (or the run ends).
    pub fn run_to(&mut self, update: usize) -> Result<()> {
        while self.update < update.min(self.total) {
            self.step()?;
        }
        Ok(())
    }

    /// Steps to the end, calling `hook` after every `checkpoint_interval` updates.
    pub fn run_with(&mut self, mut hook: impl FnMut(&AttackRun) -> Result<()>) -> Result<()> {
        let interval = self.config.checkpoint_interval;
        while !self.is_done() {
            self.step()?;
            if interval > 0 && self.update % interval == 0 {
                hook(self)?;
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.config.hash(),
            update: self.update,
            rng_word_pos: self.rng.get_word_pos(),
            p: self.p.clone(),
            state: self.state.clone(),
            queries: self.queries,
            seconds: self.seconds(),
            records: self.records.clone(),
        }
    }

    pub fn finish(self) -> (Perturbation, RunTrace) {
        (self.perturbation(), self.trace())
    }
}

/// Runs the full attack and returns the final perturbation with its trace.
pub fn run_attack(config: &AttackConfig, oracle: &QueryOracle, data: &Dataset) -> Result<(Perturbation, RunTrace)> {
    run_attack_with(config, oracle, data, |_| Ok(()))
}

/// As [`run_attack`], calling `hook` after every `checkpoint_interval` updates.
pub fn run_attack_with(
    config: &AttackConfig,
    oracle: &QueryOracle,
    data: &Dataset,
    mut hook: impl FnMut(&AttackRun) -> Result<()>,
) -> Result<(Perturbation, RunTrace)> {
    let mut run = AttackRun::new(config, oracle, data)?;
    run.run_with(&mut hook)?;
    Ok(run.finish())
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BADGECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Snapshot of an attack run. File layout, little-endian:
///
/// ```text
/// magic "BADGECKP", version u32
/// config hash   64 hex bytes
/// update        u64
/// rng word pos  u128
/// p             u64 length + f64s (normalized units)
/// variant u32, t u64, adam m f64, adam v f64
/// velocity, m, v  each u64 length + f64s
/// queries u64, seconds f64
/// records u64 count, each: update u64, loss_minus, loss_plus, alpha, delta f64,
///                          probe flag u32, probe asr f64
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub update: usize,
    pub rng_word_pos: u128,
    pub p: Vec<f64>,
    pub state: OptimizerState,
    pub queries: u64,
    pub seconds: f64,
    pub records: Vec<TraceRecord>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        debug_assert_eq!(self.config_hash.len(), 64);
        w.bytes(self.config_hash.as_bytes());
        w.u64(self.update as u64);
        w.u128(self.rng_word_pos);
        w.f64s(&self.p);
        w.u32(Variant::ALL.iter().position(|v| *v == self.state.variant).expect("known variant") as u32);
        w.u64(self.state.t);
        w.f64(self.state.adam.m);
        w.f64(self.state.adam.v);
        w.f64s(&self.state.velocity);
        w.f64s(&self.state.m);
        w.f64s(&self.state.v);
        w.u64(self.queries);
        w.f64(self.seconds);
        w.u64(self.records.len() as u64);
        for r in &self.records {
            w.u64(r.update as u64);
            for v in [r.loss_minus, r.loss_plus, r.alpha, r.delta] {
                w.f64(v);
            }
            w.u32(r.probe_asr.is_some() as u32);
            w.f64(r.probe_asr.unwrap_or(0.0));
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::open(bytes, CHECKPOINT_MAGIC, "checkpoint")?;
        if version != CHECKPOINT_VERSION {
            return Err(BadgeError::Format(format!("unsupported checkpoint version {version}")));
        }
        let config_hash = String::from_utf8(r.bytes(64)?.to_vec())
            .map_err(|_| BadgeError::Format("config hash is not text".into()))?;
        let update = r.u64()? as usize;
        let rng_word_pos = r.u128()?;
        let p = r.f64s()?;
        let tag = r.u32()? as usize;
        let variant = *Variant::ALL.get(tag).ok_or_else(|| BadgeError::Format(format!("unknown variant tag {tag}")))?;
        let t = r.u64()?;
        let adam = AdamMoments { m: r.f64()?, v: r.f64()? };
        let (velocity, m, v) = (r.f64s()?, r.f64s()?, r.f64s()?);
        let queries = r.u64()?;
        let seconds = r.f64()?;
        let count = r.u64()? as usize;
        // Each record takes 48 bytes; reject counts the payload cannot hold.
        if count > bytes.len() / 48 {
            return Err(BadgeError::Format(format!("record count {count} exceeds file size")));
        }
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let update = r.u64()? as usize;
            let (loss_minus, loss_plus, alpha, delta) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let flag = r.u32()?;
            let asr = r.f64()?;
            let probe_asr = match flag {
                0 => None,
                1 => Some(asr),
                f => return Err(BadgeError::Format(format!("bad probe flag {f}"))),
            };
            records.push(TraceRecord { update, loss_minus, loss_plus, alpha, delta, probe_asr });
        }
        r.finish()?;
        let state = OptimizerState { variant, hyper: Hyper::default(), t, adam, velocity, m, v };
        Ok(Self { config_hash, update, rng_word_pos, p, state, queries, seconds, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
