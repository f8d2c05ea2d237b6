//! Metrics, baselines and multi-run harnesses.
//!
//! ASR counts decision changes against the clean decision of the same
//! image, so a flip onto the true label of a misclassified image counts as
//! a success. All measurements clamp adversarial inputs to the dataset's
//! global value range.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{changed_percent, clamp_adversarial, run_attack, AttackConfig, RunTrace};
use crate::data::{Dataset, ImageBatch};
use crate::error::{BadgeError, Result};
use crate::optim::{l2_norm, linf_norm, norm, NormOrder};
use crate::perturbation::Perturbation;
use crate::victim::{OracleMode, QueryOracle, VictimModel};

/// Rows per forward pass during evaluation.
const EVAL_CHUNK: usize = 1000;

fn check(oracle: &QueryOracle, test: &ImageBatch, p: &[f64]) -> Result<()> {
    if test.is_empty() {
        return Err(BadgeError::UndefinedMetric("evaluation set is empty".into()));
    }
    if p.len() != test.dim() || oracle.input_dim() != test.dim() {
        return Err(BadgeError::Dimension(format!(
            "perturbation has {} values, images {}, victim input {}",
            p.len(),
            test.dim(),
            oracle.input_dim()
        )));
    }
    Ok(())
}

/// Top-1 decisions on `clamp(x + p)` for every row of `test`.
pub fn decisions(oracle: &QueryOracle, test: &ImageBatch, p: &[f64], range: (f64, f64)) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(test.len());
    for chunk in test.pixels().chunks(EVAL_CHUNK * test.dim()) {
        out.extend(oracle.predict(&clamp_adversarial(chunk, p, range))?);
    }
    Ok(out)
}

/// Percentage of decisions that differ between two aligned decision lists.
pub fn asr_of_decisions(clean: &[usize], adversarial: &[usize]) -> Result<f64> {
    if clean.is_empty() {
        return Err(BadgeError::UndefinedMetric("no decisions to compare".into()));
    }
    if clean.len() != adversarial.len() {
        return Err(BadgeError::Dimension("decision lists differ in length".into()));
    }
    Ok(changed_percent(clean, adversarial))
}

pub fn asr(oracle: &QueryOracle, test: &ImageBatch, p: &[f64], range: (f64, f64)) -> Result<f64> {
    check(oracle, test, p)?;
    let clean = decisions(oracle, test, &vec![0.0; p.len()], range)?;
    asr_of_decisions(&clean, &decisions(oracle, test, p, range)?)
}

/// Percentage of adversarial examples decided as `target`.
pub fn target_accuracy(oracle: &QueryOracle, test: &ImageBatch, p: &[f64], target: usize, range: (f64, f64)) -> Result<f64> {
    check(oracle, test, p)?;
    if target >= oracle.n_classes() {
        return Err(BadgeError::Parameter(format!("target {target} outside [0, {})", oracle.n_classes())));
    }
    let adv = decisions(oracle, test, p, range)?;
    Ok(100.0 * adv.iter().filter(|&&d| d == target).count() as f64 / adv.len() as f64)
}

/// `(l2, linf)`.
pub fn norms(p: &[f64]) -> (f64, f64) {
    (l2_norm(p), linf_norm(p))
}

/// Uniform random signs rescaled so the `order` norm equals `value`.
pub fn random_noise<R: Rng + ?Sized>(dim: usize, order: NormOrder, value: f64, rng: &mut R) -> Vec<f64> {
    let signs: Vec<f64> = (0..dim).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let n = norm(&signs, order);
    if value == 0.0 || n == 0.0 {
        return vec![0.0; dim];
    }
    signs.into_iter().map(|s| s * value / n).collect()
}

/// Mean ASR of `n_trials` seeded random-sign noises with matched norm.
pub fn random_baseline(
    oracle: &QueryOracle,
    test: &ImageBatch,
    (order, value): (NormOrder, f64),
    n_trials: usize,
    seed: u64,
    range: (f64, f64),
) -> Result<f64> {
    if n_trials == 0 {
        return Err(BadgeError::Parameter("random baseline needs at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = decisions(oracle, test, &vec![0.0; test.dim()], range)?;
    let mut total = 0.0;
    for _ in 0..n_trials {
        let noise = random_noise(test.dim(), order, value, &mut rng);
        check(oracle, test, &noise)?;
        total += asr_of_decisions(&clean, &decisions(oracle, test, &noise, range)?)?;
    }
    Ok(total / n_trials as f64)
}

/// `asr[i][j]`: perturbation trained on victim `i`, evaluated on victim `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub victims: Vec<String>,
    pub asr: Vec<Vec<f64>>,
}

impl TransferMatrix {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["source".to_string()];
        header.extend(self.victims.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.victims.iter().zip(&self.asr) {
            let mut record = vec![name.clone()];
            record.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn transfer_matrix(
    victims: &[(String, &QueryOracle)],
    perturbations: &[Perturbation],
    test: &ImageBatch,
    range: (f64, f64),
) -> Result<TransferMatrix> {
    if victims.len() != perturbations.len() {
        return Err(BadgeError::Config(format!(
            "{} victims but {} perturbations",
            victims.len(),
            perturbations.len()
        )));
    }
    if let Some((name, _)) = victims.iter().find(|(_, o)| o.input_dim() != test.dim()) {
        return Err(BadgeError::Config(format!("victim {name} does not take {}-pixel images", test.dim())));
    }
    let clean: Vec<Vec<usize>> =
        victims.iter().map(|(_, o)| decisions(o, test, &vec![0.0; test.dim()], range)).collect::<Result<_>>()?;
    let mut asr = Vec::with_capacity(victims.len());
    for p in perturbations {
        let mut row = Vec::with_capacity(victims.len());
        for ((_, oracle), clean) in victims.iter().zip(&clean) {
            check(oracle, test, &p.values)?;
            row.push(asr_of_decisions(clean, &decisions(oracle, test, &p.values, range)?)?);
        }
        asr.push(row);
    }
    Ok(TransferMatrix { victims: victims.iter().map(|(n, _)| n.clone()).collect(), asr })
}

/// Mean and sample standard deviation; one value has std 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `f` on every cell with up to `jobs` worker threads; results keep cell order.
pub fn par_map<T: Sync, U: Send>(cells: &[T], jobs: usize, f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let jobs = jobs.clamp(1, cells.len().max(1));
    if jobs == 1 {
        return cells.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<U>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let value = f(cell);
                out.lock().expect("worker panicked")[i] = Some(value);
            });
        }
    });
    out.into_inner().expect("worker panicked").into_iter().map(|v| v.expect("every cell ran")).collect()
}

/// Per-run record mirrored to JSON; [`ReportRow`] is its CSV projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub run_id: String,
    /// Percentage of test decisions changed.
    pub asr: f64,
    /// Percentage of adversarial test examples decided as the target (targeted runs).
    pub target_acc: Option<f64>,
    pub l2: f64,
    pub linf: f64,
    pub udt: usize,
    pub queries: u64,
    pub seconds: f64,
    pub seed: u64,
    pub config: AttackConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    pub mode: String,
    pub objective: String,
    pub loss: String,
    pub optimizer: String,
    pub eps: f64,
    pub norm_order: String,
    pub batch_size: usize,
    pub epochs: usize,
    pub udt: usize,
    pub queries: u64,
    pub asr: f64,
    pub target_acc: Option<f64>,
    pub l2: f64,
    pub linf: f64,
    pub seconds: f64,
    pub seed: u64,
}

impl AttackReport {
    /// Measures `p` on the test split through an uncounted sibling of `oracle`.
    pub fn measure(
        run_id: impl Into<String>,
        config: &AttackConfig,
        oracle: &QueryOracle,
        data: &Dataset,
        p: &Perturbation,
        trace: &RunTrace,
    ) -> Result<Self> {
        let eval = oracle.sibling(OracleMode::Decision);
        let asr = asr(&eval, &data.test, &p.values, data.value_range)?;
        let target_acc = match config.objective.target() {
            Some(t) => Some(target_accuracy(&eval, &data.test, &p.values, t, data.value_range)?),
            None => None,
        };
        let (l2, linf) = p.norms();
        Ok(Self {
            run_id: run_id.into(),
            asr,
            target_acc,
            l2,
            linf,
            udt: trace.updates(),
            queries: trace.queries,
            seconds: trace.seconds,
            seed: config.direction_seed,
            config: config.clone(),
        })
    }

    pub fn row(&self) -> ReportRow {
        let c = &self.config;
        ReportRow {
            run_id: self.run_id.clone(),
            mode: c.mode.to_string(),
            objective: c.objective.to_string(),
            loss: c.loss.to_string(),
            optimizer: c.variant.to_string(),
            eps: c.budget.eps,
            norm_order: c.budget.order.to_string(),
            batch_size: c.batch_size,
            epochs: c.epochs,
            udt: self.udt,
            queries: self.queries,
            asr: self.asr,
            target_acc: self.target_acc,
            l2: self.l2,
            linf: self.linf,
            seconds: self.seconds,
            seed: self.seed,
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

pub fn write_reports_csv(path: impl AsRef<Path>, reports: &[AttackReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(r.row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &RunTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &trace.records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: f64,
    pub mean_asr: f64,
    pub std_asr: f64,
}

/// Rejects an empty grid and budgets that are not positive and strictly ascending.
pub fn check_sweep_grid(budgets: &[f64], seeds: &[u64]) -> Result<()> {
    if budgets.is_empty() || seeds.is_empty() {
        return Err(BadgeError::Config("sweep needs at least one budget and one seed".into()));
    }
    if budgets.windows(2).any(|w| w[0] >= w[1]) || budgets[0] <= 0.0 {
        return Err(BadgeError::Config("sweep budgets must be positive and ascending".into()));
    }
    Ok(())
}

/// Attacks `model` once per (budget, seed) cell and aggregates ASR per budget.
///
/// Returns the aggregate rows in budget order and the per-cell reports in
/// budget-major, seed-minor order.
pub fn budget_sweep(
    template: &AttackConfig,
    budgets: &[f64],
    seeds: &[u64],
    model: &Arc<VictimModel>,
    data: &Dataset,
    jobs: usize,
) -> Result<(Vec<SweepRow>, Vec<AttackReport>)> {
    check_sweep_grid(budgets, seeds)?;
    let cells: Vec<(f64, u64)> = budgets.iter().flat_map(|&b| seeds.iter().map(move |&s| (b, s))).collect();
    let reports = par_map(&cells, jobs, |&(eps, seed)| {
        let mut config = template.clone();
        config.budget.eps = eps;
        config.data_seed = seed;
        config.direction_seed = seed;
        let oracle = QueryOracle::new(Arc::clone(model), config.mode);
        let (p, trace) = run_attack(&config, &oracle, data)?;
        AttackReport::measure(format!("eps{eps}-seed{seed}"), &config, &oracle, data, &p, &trace)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let rows = budgets
        .iter()
        .zip(reports.chunks(seeds.len()))
        .map(|(&budget, cell)| {
            let (mean_asr, std_asr) = mean_std(&cell.iter().map(|r| r.asr).collect::<Vec<_>>());
            SweepRow { budget, mean_asr, std_asr }
        })
        .collect();
    Ok((rows, reports))
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
