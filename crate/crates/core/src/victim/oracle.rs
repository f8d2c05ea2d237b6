use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Shape;
use crate::error::{BadgeError, Result};

use super::VictimModel;

/// `rows × n_classes` matrix of one-hot decisions or probability rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionBatch {
    rows: Vec<f64>,
    n_classes: usize,
}

impl DecisionBatch {
    pub fn from_rows(rows: Vec<f64>, n_classes: usize) -> Result<Self> {
        if n_classes == 0 || rows.len() % n_classes != 0 {
            return Err(BadgeError::Dimension(format!(
                "{} entries do not form rows of {n_classes} classes",
                rows.len()
            )));
        }
        Ok(Self { rows, n_classes })
    }

    /// One-hot rows for the given class indices.
    pub fn one_hot(classes: &[usize], n_classes: usize) -> Result<Self> {
        let mut rows = vec![0.0; classes.len() * n_classes];
        for (i, &c) in classes.iter().enumerate() {
            if c >= n_classes {
                return Err(BadgeError::Parameter(format!("class {c} outside [0, {n_classes})")));
            }
            rows[i * n_classes + c] = 1.0;
        }
        Ok(Self { rows, n_classes })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.n_classes
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.n_classes)
    }

    /// Index of the largest entry per row, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        self.iter().map(argmax_row).collect()
    }
}

fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One-hot top-1 decisions; ties go to the lowest class index.
pub fn decide(logits: &[f64], n_classes: usize) -> DecisionBatch {
    let mut rows = vec![0.0; logits.len()];
    for (out, row) in rows.chunks_exact_mut(n_classes).zip(logits.chunks_exact(n_classes)) {
        out[argmax_row(row)] = 1.0;
    }
    DecisionBatch { rows, n_classes }
}

/// Row-wise softmax, computed after subtracting each row's maximum.
pub fn score(logits: &[f64], n_classes: usize) -> DecisionBatch {
    let mut rows = logits.to_vec();
    for row in rows.chunks_exact_mut(n_classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    DecisionBatch { rows, n_classes }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// Top-1 one-hot decisions only.
    Decision,
    /// Full softmax probability rows.
    Score,
}

impl fmt::Display for OracleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleMode::Decision => "decision",
            OracleMode::Score => "score",
        })
    }
}

impl FromStr for OracleMode {
    type Err = BadgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decision" => Ok(OracleMode::Decision),
            "score" => Ok(OracleMode::Score),
            other => Err(BadgeError::Parameter(format!("unknown oracle mode '{other}'"))),
        }
    }
}

/// Black-box access to a victim: batched queries in, decisions or scores
/// out. The model parameters are not reachable through this type.
///
/// Every queried row adds one to the query counter.
#[derive(Debug)]
pub struct QueryOracle {
    model: Arc<VictimModel>,
    mode: OracleMode,
    queries: AtomicU64,
}

impl QueryOracle {
    pub fn new(model: Arc<VictimModel>, mode: OracleMode) -> Self {
        Self { model, mode, queries: AtomicU64::new(0) }
    }

    /// Another oracle over the same victim with its own zeroed counter,
    /// for measurements that must not count as attack queries.
    pub fn sibling(&self, mode: OracleMode) -> Self {
        Self::new(Arc::clone(&self.model), mode)
    }

    pub fn mode(&self) -> OracleMode {
        self.mode
    }

    pub fn n_classes(&self) -> usize {
        self.model.n_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    pub fn input_shape(&self) -> Shape {
        self.model.shape()
    }

    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    fn logits(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        let logits = self.model.forward(pixels)?;
        self.queries.fetch_add((pixels.len() / self.input_dim()) as u64, Ordering::Relaxed);
        Ok(logits)
    }

    /// Decisions (decision mode) or probability rows (score mode).
    pub fn query(&self, pixels: &[f64]) -> Result<DecisionBatch> {
        let logits = self.logits(pixels)?;
        Ok(match self.mode {
            OracleMode::Decision => decide(&logits, self.n_classes()),
            OracleMode::Score => score(&logits, self.n_classes()),
        })
    }

    /// Top-1 class per row, regardless of mode.
    pub fn predict(&self, pixels: &[f64]) -> Result<Vec<usize>> {
        Ok(decide(&self.logits(pixels)?, self.n_classes()).argmax())
    }
}
