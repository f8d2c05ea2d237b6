//! Batch losses between predicted rows and reference rows.
//!
//! All losses share one orientation: lower values mean more adversarial
//! success for a non-targeted attack, i.e. they measure agreement with the
//! reference. Cross-entropy, KL divergence and EMD are distances, so they
//! are returned negated. Batch values are the mean over samples.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BadgeError, Result};
use crate::victim::DecisionBatch;

pub const CE_SMOOTHING: f64 = 1e-12;
pub const KLD_SMOOTHING: f64 = 1e-6;

/// Per-sample batch accuracy loss: `(1/N) Σ max(0, a_i + b_i - 1)`.
///
/// For one-hot rows this is `1/N` when the top-1 classes agree and `0`
/// otherwise.
pub fn acc_row(a: &[f64], b: &[f64]) -> f64 {
    hinge_sum(a, b) / a.len() as f64
}

/// Per-sample target accuracy loss: `(1/N) Σ (1 - max(0, a_i + b_i - 1))`.
pub fn target_acc_row(a: &[f64], b: &[f64]) -> f64 {
    target_hinge_sum(a, b) / a.len() as f64
}

/// `Σ max(0, a_i + b_i - 1)`: 1 for agreeing one-hot rows, 0 otherwise.
fn hinge_sum(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x + y - 1.0).max(0.0)).sum()
}

fn target_hinge_sum(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| 1.0 - (x + y - 1.0).max(0.0)).sum()
}

/// Negated cross-entropy `Σ t_i ln(p_i + 1e-12)` of prediction `p` against reference `t`.
pub fn ce_row(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| t * (p + CE_SMOOTHING).ln()).sum()
}

fn smoothed(row: &[f64]) -> Vec<f64> {
    let total: f64 = row.iter().map(|v| v + KLD_SMOOTHING).sum();
    row.iter().map(|v| (v + KLD_SMOOTHING) / total).collect()
}

/// Negated `KL(truth ‖ pred)` after adding 1e-6 to both rows and renormalizing.
pub fn kld_row(pred: &[f64], truth: &[f64]) -> f64 {
    let (p, t) = (smoothed(pred), smoothed(truth));
    -t.iter().zip(&p).map(|(ti, pi)| ti * (ti / pi).ln()).sum::<f64>()
}

/// Negated 1-D earth mover's distance with class-index ground metric.
pub fn emd_row(pred: &[f64], truth: &[f64]) -> f64 {
    let (mut cp, mut ct, mut dist) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        cp += p;
        ct += t;
        dist += (cp - ct).abs();
    }
    -dist
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Acc,
    TargetAcc,
    Ce,
    Kld,
    Emd,
}

impl Loss {
    pub const ALL: [Loss; 5] = [Loss::Acc, Loss::TargetAcc, Loss::Ce, Loss::Kld, Loss::Emd];

    pub fn row_fn(self) -> fn(&[f64], &[f64]) -> f64 {
        match self {
            Loss::Acc => acc_row,
            Loss::TargetAcc => target_acc_row,
            Loss::Ce => ce_row,
            Loss::Kld => kld_row,
            Loss::Emd => emd_row,
        }
    }

    /// Mean per-sample loss over the batch.
    pub fn eval(self, pred: &DecisionBatch, truth: &DecisionBatch) -> Result<f64> {
        check_shapes(pred, truth)?;
        if pred.is_empty() {
            return Err(BadgeError::Dimension("loss over an empty batch".into()));
        }
        let n = pred.len() as f64;
        // The accuracy family averages the unscaled hinge sums first: on
        // one-hot rows that mean is the agreement rate with a single rounding,
        // and the 1/N_cls factor is applied once at the end.
        let unscaled = match self {
            Loss::Acc => Some(hinge_sum as fn(&[f64], &[f64]) -> f64),
            Loss::TargetAcc => Some(target_hinge_sum as fn(&[f64], &[f64]) -> f64),
            _ => None,
        };
        if let Some(f) = unscaled {
            let total: f64 = pred.iter().zip(truth.iter()).map(|(p, t)| f(p, t)).sum();
            return Ok(total / n / pred.n_classes() as f64);
        }
        let f = self.row_fn();
        let total: f64 = pred.iter().zip(truth.iter()).map(|(p, t)| f(p, t)).sum();
        Ok(total / n)
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::Acc => "acc",
            Loss::TargetAcc => "target_acc",
            Loss::Ce => "ce",
            Loss::Kld => "kld",
            Loss::Emd => "emd",
        })
    }
}

impl FromStr for Loss {
    type Err = BadgeError;

    fn from_str(s: &str) -> Result<Self> {
        Loss::ALL
            .into_iter()
            .find(|l| l.to_string() == s)
            .ok_or_else(|| BadgeError::Parameter(format!("unknown loss '{s}' (acc|target_acc|ce|kld|emd)")))
    }
}

fn check_shapes(pred: &DecisionBatch, truth: &DecisionBatch) -> Result<()> {
    if pred.n_classes() != truth.n_classes() || pred.len() != truth.len() {
        return Err(BadgeError::Dimension(format!(
            "prediction is {}×{}, reference is {}×{}",
            pred.len(),
            pred.n_classes(),
            truth.len(),
            truth.n_classes()
        )));
    }
    Ok(())
}

pub fn acc_loss(pred: &DecisionBatch, truth: &DecisionBatch) -> Result<f64> {
    Loss::Acc.eval(pred, truth)
}

pub fn target_acc_loss(pred: &DecisionBatch, target: &DecisionBatch) -> Result<f64> {
    Loss::TargetAcc.eval(pred, target)
}

pub fn ce_loss(pred: &DecisionBatch, truth: &DecisionBatch) -> Result<f64> {
    Loss::Ce.eval(pred, truth)
}

pub fn kld_loss(pred: &DecisionBatch, truth: &DecisionBatch) -> Result<f64> {
    Loss::Kld.eval(pred, truth)
}

pub fn emd_loss(pred: &DecisionBatch, truth: &DecisionBatch) -> Result<f64> {
    Loss::Emd.eval(pred, truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(v: &[f64], n: usize) -> DecisionBatch {
        DecisionBatch::from_rows(v.to_vec(), n).unwrap()
    }

    fn hot(classes: &[usize], n: usize) -> DecisionBatch {
        DecisionBatch::one_hot(classes, n).unwrap()
    }

    #[test]
    fn accuracy_loss_values() {
        assert_eq!(acc_loss(&hot(&[2], 10), &hot(&[2], 10)).unwrap(), 0.1);
        assert_eq!(acc_loss(&hot(&[1], 10), &hot(&[2], 10)).unwrap(), 0.0);
        let v = acc_loss(&hot(&[1, 2, 3, 4], 10), &hot(&[1, 2, 3, 5], 10)).unwrap();
        assert!((v - 0.075).abs() < 1e-15);
    }

    #[test]
    fn accuracy_loss_is_rounded_agreement_rate() {
        let pred: Vec<usize> = (0..37).map(|i| (i * 7) % 10).collect();
        let truth: Vec<usize> = (0..37).map(|i| (i * 3) % 10).collect();
        let agree = pred.iter().zip(&truth).filter(|(a, b)| a == b).count();
        let v = acc_loss(&hot(&pred, 10), &hot(&truth, 10)).unwrap();
        assert_eq!(v, agree as f64 / 37.0 / 10.0);
        for n in [2, 4, 8] {
            let p: Vec<usize> = pred.iter().map(|c| c % n).collect();
            let t: Vec<usize> = truth.iter().map(|c| c % n).collect();
            let agree = p.iter().zip(&t).filter(|(a, b)| a == b).count();
            assert_eq!(n as f64 * acc_loss(&hot(&p, n), &hot(&t, n)).unwrap(), agree as f64 / 37.0);
        }
    }

    #[test]
    fn target_accuracy_loss_values() {
        assert!((target_acc_loss(&hot(&[4], 10), &hot(&[4], 10)).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(target_acc_loss(&hot(&[1], 10), &hot(&[2], 10)).unwrap(), 1.0);
    }

    #[test]
    fn cross_entropy_values() {
        let v = ce_loss(&rows(&[0.5, 0.5], 2), &hot(&[0], 2)).unwrap();
        assert!((v + std::f64::consts::LN_2).abs() < 1e-10);
        assert!(ce_loss(&hot(&[0], 2), &hot(&[0], 2)).unwrap().abs() < 1e-11);
        let off = ce_loss(&rows(&[0.1, 0.9], 2), &hot(&[0], 2)).unwrap();
        assert!(off < v);
    }

    #[test]
    fn kld_values() {
        let p = rows(&[0.2, 0.3, 0.5], 3);
        assert!(kld_loss(&p, &p).unwrap().abs() < 1e-15);
        assert!(kld_loss(&hot(&[1], 3), &hot(&[1], 3)).unwrap().abs() < 1e-15);
        // ln(1e6 + 1) / (1 + 2e-6), evaluated independently in high precision.
        let v = kld_loss(&hot(&[1], 2), &hot(&[0], 2)).unwrap();
        assert!((v + 13.815483926995920).abs() < 1e-9, "{v}");
    }

    #[test]
    fn emd_values() {
        assert_eq!(emd_loss(&rows(&[1.0, 0.0, 0.0], 3), &hot(&[2], 3)).unwrap(), -2.0);
        assert_eq!(emd_loss(&hot(&[1], 3), &hot(&[2], 3)).unwrap(), -1.0);
        assert_eq!(emd_loss(&hot(&[2], 3), &hot(&[2], 3)).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        for loss in Loss::ALL {
            assert!(matches!(loss.eval(&hot(&[0], 3), &hot(&[0], 2)), Err(BadgeError::Dimension(_))));
            assert!(matches!(loss.eval(&hot(&[0, 1], 3), &hot(&[0], 3)), Err(BadgeError::Dimension(_))));
        }
    }

    #[test]
    fn names_round_trip() {
        for loss in Loss::ALL {
            assert_eq!(loss.to_string().parse::<Loss>().unwrap(), loss);
        }
        assert!("hinge".parse::<Loss>().is_err());
    }

    proptest! {
        #[test]
        fn single_sample_batch_equals_row_formula(
            a in proptest::collection::vec(0.0f64..1.0, 4),
            b in proptest::collection::vec(0.0f64..1.0, 4),
        ) {
            for loss in Loss::ALL {
                let batch = loss.eval(&rows(&a, 4), &rows(&b, 4)).unwrap();
                prop_assert_eq!(batch, loss.row_fn()(&a, &b));
            }
        }

        #[test]
        fn acc_and_target_acc_are_complementary(p in 0usize..7, t in 0usize..7) {
            let (a, b) = (hot(&[p], 7), hot(&[t], 7));
            prop_assert_eq!(acc_loss(&a, &b).unwrap() + target_acc_loss(&a, &b).unwrap(), 1.0);
        }
    }
}
