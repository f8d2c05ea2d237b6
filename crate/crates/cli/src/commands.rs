//! Subcommand bodies: resolve settings, build core values, write artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use badge_core::attack::{AttackConfig, AttackRun, Checkpoint, ClampMode, Objective};
use badge_core::data::{load_mnist, make_blobs, BlobSpec, Dataset, MnistPaths};
use badge_core::eval::{
    self, budget_sweep, check_sweep_grid, random_baseline, transfer_matrix, write_reports_csv, write_sweep_csv, write_trace_csv,
    AttackReport,
};
use badge_core::losses::Loss;
use badge_core::optim::{Budget, Hyper, NormOrder, Projection, Variant};
use badge_core::perturbation::Perturbation;
use badge_core::victim::{load_model, save_model, train_sgd, Arch, OracleMode, QueryOracle, TrainConfig, VictimModel};
use badge_core::BadgeError;
use serde::Serialize;

use crate::settings::{RunManifest, Settings};
use crate::{AttackArgs, EvalArgs, SweepArgs, TrainArgs, TransferArgs, UsageError};

const OUT_ENV: &str = "BADGE_OUT";
const DEFAULT_OUT_ROOT: &str = "runs";

/// Core configuration errors are the caller's fault, so they exit as usage errors.
fn core(e: BadgeError) -> anyhow::Error {
    match e {
        BadgeError::Config(msg) => UsageError(msg).into(),
        other => other.into(),
    }
}

fn out_dir(explicit: Option<PathBuf>, command: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
        root.join(command)
    })
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} {} does not exist", path.display())).into())
    }
}

/// Writes `config.ini` and `manifest.json` into `dir`.
fn echo_settings(dir: &Path, command: &str, config: Option<&Path>, settings: &Settings) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    fs::write(dir.join("config.ini"), settings.to_ini())?;
    let manifest = RunManifest {
        command: command.into(),
        config_path: config.map(|p| p.display().to_string()),
        resolved: settings.clone(),
        out_dir: dir.display().to_string(),
        config_hash: settings.hash(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn load_data(s: &Settings) -> Result<Dataset> {
    let data = match s.raw("data.source") {
        "mnist" => {
            let mut paths = MnistPaths::in_dir(s.raw("data.mnist_dir"));
            for (key, slot) in [
                ("data.train_images", &mut paths.train_images),
                ("data.train_labels", &mut paths.train_labels),
                ("data.test_images", &mut paths.test_images),
                ("data.test_labels", &mut paths.test_labels),
            ] {
                if let Some(p) = s.opt::<PathBuf>(key)? {
                    *slot = p;
                }
            }
            if let Some(missing) = paths.missing() {
                return Err(UsageError(format!(
                    "MNIST file {} does not exist (set --mnist-dir or run scripts/fetch_mnist.sh)",
                    missing.display()
                ))
                .into());
            }
            load_mnist(&paths)?
        }
        "blobs" => make_blobs(BlobSpec {
            seed: s.get("data.blob_seed")?,
            n_per_class: s.get("data.blob_per_class")?,
            n_classes: s.get("data.blob_classes")?,
            dim: s.get("data.blob_dim")?,
            separation: s.get("data.blob_separation")?,
        })
        .map_err(|e| UsageError(e.to_string()))?,
        other => return Err(UsageError(format!("unknown data source '{other}' (expected mnist or blobs)")).into()),
    };
    Ok(match s.opt::<usize>("data.train_subset")? {
        Some(n) => data.with_train_subset(n),
        None => data,
    })
}

fn load_victim(path: &Path) -> Result<Arc<VictimModel>> {
    require(path, "victim file")?;
    Ok(Arc::new(load_model(path).with_context(|| format!("cannot load victim {}", path.display()))?))
}

fn attack_config(s: &Settings) -> Result<AttackConfig> {
    let order: NormOrder = s.get("attack.norm")?;
    let projection: Projection = s.get("attack.projection")?;
    let seed: u64 = s.get("attack.seed")?;
    let config = AttackConfig {
        mode: s.get::<OracleMode>("attack.mode")?,
        objective: match s.opt::<usize>("attack.target")? {
            Some(class) => Objective::Targeted { class },
            None => Objective::NonTargeted,
        },
        loss: s.get::<Loss>("attack.loss")?,
        variant: s.get::<Variant>("attack.optimizer")?,
        budget: Budget { order, eps: s.get("attack.eps")?, projection },
        batch_size: s.get("attack.batch_size")?,
        epochs: s.get("attack.epochs")?,
        max_updates: s.opt("attack.updates")?,
        data_seed: s.opt("attack.data_seed")?.unwrap_or(seed),
        direction_seed: seed,
        alpha_start: s.get("attack.alpha_start")?,
        alpha_end: s.get("attack.alpha_end")?,
        delta_start: s.get("attack.delta")?,
        delta_ratio: s.get("attack.delta_ratio")?,
        delta_period: s.opt("attack.delta_period")?,
        hyper: Hyper {
            beta1: s.get("attack.beta1")?,
            beta2: s.get("attack.beta2")?,
            eta: s.get("attack.eta")?,
            gamma: s.get("attack.gamma")?,
            momentum: s.get("attack.momentum")?,
        },
        checkpoint_interval: s.get("attack.checkpoint_interval")?,
        probe_size: s.get("attack.probe_size")?,
        intensity_scale: s.get("attack.intensity_scale")?,
        clamp: s.get::<ClampMode>("attack.clamp")?,
    };
    config.validate().map_err(core)?;
    Ok(config)
}

pub fn train_victim(a: TrainArgs) -> Result<()> {
    let mut flags = a.data.flags();
    flags.extend([
        ("train.arch", a.arch),
        ("train.epochs", a.epochs),
        ("train.lr", a.lr),
        ("train.batch_size", a.batch_size),
        ("train.hidden", a.hidden),
        ("train.seed", a.seed),
    ]);
    let s = Settings::resolve(a.common.config.as_deref(), &flags)?;
    let arch: Arch = s.get("train.arch")?;
    let config = TrainConfig {
        epochs: s.get("train.epochs")?,
        lr: s.get("train.lr")?,
        batch_size: s.get("train.batch_size")?,
        hidden: s.get("train.hidden")?,
        seed: s.get("train.seed")?,
    };
    let data = load_data(&s)?;
    let (model, report) = train_sgd(arch, &data, &config).map_err(|e| match e {
        BadgeError::Parameter(msg) => UsageError(msg).into(),
        other => anyhow::Error::from(other),
    })?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    save_model(&model, &a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    fs::write(a.out.with_extension("ini"), s.to_ini())?;
    println!(
        "arch={arch} params={} train_acc={:.4} test_acc={:.4} model={}",
        model.parameter_count(),
        report.train_accuracy,
        report.test_accuracy,
        a.out.display()
    );
    Ok(())
}

pub fn attack(a: AttackArgs) -> Result<()> {
    let mut flags = a.data.flags();
    flags.extend(a.attack.flags());
    let s = Settings::resolve(a.common.config.as_deref(), &flags)?;
    let config = attack_config(&s)?;
    let model = load_victim(&a.victim)?;
    let data = load_data(&s)?;
    let dir = out_dir(a.out, "attack");
    echo_settings(&dir, "attack", a.common.config.as_deref(), &s)?;

    let oracle = QueryOracle::new(model, config.mode);
    let mut run = match &a.resume {
        Some(path) => {
            require(path, "checkpoint")?;
            let ckpt = Checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
            AttackRun::resume(&config, &oracle, &data, &ckpt).map_err(core)?
        }
        None => AttackRun::new(&config, &oracle, &data).map_err(core)?,
    };
    let ckpt_path = dir.join("checkpoint.bin");
    let outcome = run.run_with(|r| {
        r.checkpoint().save(&ckpt_path)?;
        if let Some(last) = r.records().last() {
            let probe = last.probe_asr.map_or_else(String::new, |v| format!(" probe_asr={v:.2}"));
            eprintln!("update {}/{} loss={:.4}{probe}", r.update(), r.total_updates(), last.loss_plus);
        }
        Ok(())
    });
    if let Err(BadgeError::NonFinite { update, trace }) = outcome {
        write_trace_csv(dir.join("trace.csv"), &trace)?;
        anyhow::bail!("attack stopped at update {update}: non-finite loss (partial trace in {})", dir.display());
    }
    outcome?;
    run.checkpoint().save(&ckpt_path)?;
    let (p, trace) = run.finish();

    p.save(dir.join("perturbation.bin"))?;
    write_trace_csv(dir.join("trace.csv"), &trace)?;
    let run_id = dir.file_name().map_or_else(|| "attack".into(), |n| n.to_string_lossy().into_owned());
    let report = AttackReport::measure(run_id, &config, &oracle, &data, &p, &trace)?;
    report.write_json(dir.join("report.json"))?;
    write_reports_csv(dir.join("report.csv"), std::slice::from_ref(&report))?;
    print_report(&report);
    Ok(())
}

fn print_report(r: &AttackReport) {
    let target = r.target_acc.map_or_else(String::new, |t| format!(" target_acc={t:.2}"));
    println!(
        "asr={:.2}{target} l2={:.3} linf={:.3} udt={} queries={} seconds={:.1}",
        r.asr, r.l2, r.linf, r.udt, r.queries, r.seconds
    );
}

#[derive(Serialize)]
struct EvalRow {
    asr: f64,
    target_acc: Option<f64>,
    l2: f64,
    linf: f64,
    baseline_trials: usize,
    baseline_asr: Option<f64>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut flags = a.data.flags();
    flags.extend([
        ("attack.target", a.target),
        ("eval.baseline_trials", a.baseline_trials),
        ("eval.baseline_seed", a.baseline_seed),
    ]);
    let s = Settings::resolve(a.common.config.as_deref(), &flags)?;
    let model = load_victim(&a.victim)?;
    require(&a.pert, "perturbation file")?;
    let p = Perturbation::load(&a.pert).with_context(|| format!("cannot load perturbation {}", a.pert.display()))?;
    let data = load_data(&s)?;
    let dir = out_dir(a.out, "eval");
    echo_settings(&dir, "eval", a.common.config.as_deref(), &s)?;

    let oracle = QueryOracle::new(model, OracleMode::Decision);
    let range = data.value_range;
    let asr = eval::asr(&oracle, &data.test, &p.values, range).map_err(core)?;
    let target_acc = match s.opt::<usize>("attack.target")? {
        Some(t) => Some(eval::target_accuracy(&oracle, &data.test, &p.values, t, range).map_err(core)?),
        None => None,
    };
    let (l2, linf) = p.norms();
    let trials: usize = s.get("eval.baseline_trials")?;
    let baseline_asr = if trials > 0 {
        let seed = s.get("eval.baseline_seed")?;
        Some(random_baseline(&oracle, &data.test, (NormOrder::L2, l2), trials, seed, range)?)
    } else {
        None
    };
    let row = EvalRow { asr, target_acc, l2, linf, baseline_trials: trials, baseline_asr };
    let mut w = csv::Writer::from_path(dir.join("eval.csv"))?;
    w.serialize(&row)?;
    w.flush()?;

    let target = target_acc.map_or_else(String::new, |t| format!(" target_acc={t:.2}"));
    let baseline = baseline_asr.map_or_else(String::new, |b| format!(" baseline_asr={b:.2} ({trials} trials)"));
    println!("asr={asr:.2}{target} l2={l2:.3} linf={linf:.3}{baseline}");
    Ok(())
}

pub fn transfer(a: TransferArgs) -> Result<()> {
    if a.victims.len() != a.perts.len() {
        return Err(UsageError(format!(
            "--victims has {} entries but --perts has {}",
            a.victims.len(),
            a.perts.len()
        ))
        .into());
    }
    let s = Settings::resolve(a.common.config.as_deref(), &a.data.flags())?;
    let models = a.victims.iter().map(|p| load_victim(p)).collect::<Result<Vec<_>>>()?;
    let mut perts = Vec::with_capacity(a.perts.len());
    for path in &a.perts {
        require(path, "perturbation file")?;
        perts.push(Perturbation::load(path).with_context(|| format!("cannot load perturbation {}", path.display()))?);
    }
    let data = load_data(&s)?;
    let dir = out_dir(a.out, "transfer");
    echo_settings(&dir, "transfer", a.common.config.as_deref(), &s)?;

    let names: Vec<String> = a
        .victims
        .iter()
        .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()))
        .collect();
    let oracles: Vec<QueryOracle> = models.into_iter().map(|m| QueryOracle::new(m, OracleMode::Decision)).collect();
    let named: Vec<(String, &QueryOracle)> = names.iter().cloned().zip(oracles.iter()).collect();
    let matrix = transfer_matrix(&named, &perts, &data.test, data.value_range).map_err(core)?;
    matrix.write_csv(dir.join("transfer.csv"))?;
    println!("trained_on,{}", names.join(","));
    for (name, row) in names.iter().zip(&matrix.asr) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
        println!("{name},{}", cells.join(","));
    }
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let mut flags = a.data.flags();
    flags.extend(a.attack.flags());
    flags.extend([("sweep.budgets", a.budgets), ("sweep.seeds", a.seeds), ("sweep.jobs", a.jobs)]);
    let s = Settings::resolve(a.common.config.as_deref(), &flags)?;
    let template = attack_config(&s)?;
    let budgets: Vec<f64> = s.list("sweep.budgets")?;
    let seeds: Vec<u64> = s.list("sweep.seeds")?;
    let jobs: usize = s.get("sweep.jobs")?;
    check_sweep_grid(&budgets, &seeds).map_err(core)?;
    if jobs == 0 {
        return Err(UsageError("--jobs must be at least 1".into()).into());
    }
    let model = load_victim(&a.victim)?;
    let data = load_data(&s)?;
    let dir = out_dir(a.out, "sweep");
    echo_settings(&dir, "sweep", a.common.config.as_deref(), &s)?;

    let (rows, reports) = budget_sweep(&template, &budgets, &seeds, &model, &data, jobs).map_err(core)?;
    write_sweep_csv(dir.join("sweep.csv"), &rows)?;
    write_reports_csv(dir.join("runs.csv"), &reports)?;
    println!("budget,mean_asr,std_asr");
    for r in &rows {
        println!("{},{:.2},{:.2}", r.budget, r.mean_asr, r.std_asr);
    }
    Ok(())
}
