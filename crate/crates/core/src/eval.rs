//! kNN evaluation under learned metrics and the sequential-task
//! experiments (stage matrix, dimension and sparsity sweeps).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use log::{info, warn};
use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::LabeledDataset;
use crate::engine::{EngineConfig, EngineState};
use crate::error::{ensure_shape, LmlError, Result};
use crate::learners::fit_base;
use crate::metric::{MetricKind, MetricMatrix};
use crate::scalar::Real;
use crate::triplets::{mine_triplets, TripletSet};

pub const DEFAULT_K: usize = 3;

/// Metric scores between `query` and every training row: distances for
/// [`MetricKind::Distance`], similarities otherwise.
fn scores<T: Real>(m: &MetricMatrix<T>, train: &LabeledDataset<T>, query: ArrayView1<T>) -> Result<Vec<T>> {
    ensure_shape(query.len() == train.dim() && m.dim() == train.dim(), || {
        format!("query has {} features, train {}, metric {}", query.len(), train.dim(), m.dim())
    })?;
    let mv = m.values();
    let x = train.features();
    Ok(match m.kind() {
        MetricKind::Similarity => {
            let mq = x.dot(&mv.dot(&query));
            mq.to_vec()
        }
        MetricKind::Distance => x
            .outer_iter()
            .map(|row| {
                let diff: Array1<T> = &query - &row;
                diff.dot(&mv.dot(&diff))
            })
            .collect(),
    })
}

/// Majority label among the `k` nearest training rows under `m`.
///
/// Neighbors are ordered by ascending distance (descending similarity),
/// ties to the lower row index. A vote tie goes to the label with the
/// smaller summed distance (larger summed similarity), then the lower label.
pub fn knn_classify<T: Real>(
    m: &MetricMatrix<T>,
    train: &LabeledDataset<T>,
    query: ArrayView1<T>,
    k: usize,
) -> Result<i64> {
    if train.is_empty() {
        return Err(LmlError::config("empty training set"));
    }
    if k == 0 || k > train.len() {
        return Err(LmlError::config(format!("k must lie in 1..={}, got {k}", train.len())));
    }
    let s = scores(m, train, query)?;
    let closer = |a: T, b: T| match m.kind() {
        MetricKind::Distance => a.partial_cmp(&b),
        MetricKind::Similarity => b.partial_cmp(&a),
    };
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| closer(s[a], s[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));

    let mut votes: BTreeMap<i64, (usize, T)> = BTreeMap::new();
    for &i in &order[..k] {
        let entry = votes.entry(train.labels()[i]).or_insert((0, T::zero()));
        entry.0 += 1;
        entry.1 += s[i];
    }
    let mut best: Option<(i64, usize, T)> = None;
    // ascending label order, so strict improvement keeps the lower label
    for (&label, &(count, total)) in &votes {
        let better = match best {
            None => true,
            Some((_, c, t)) => count > c || (count == c && closer(total, t) == Some(Ordering::Less)),
        };
        if better {
            best = Some((label, count, total));
        }
    }
    Ok(best.map(|b| b.0).expect("k >= 1 gives at least one vote"))
}

/// Fraction of `test` rows misclassified by kNN over `train`.
pub fn knn_error<T: Real>(
    m: &MetricMatrix<T>,
    train: &LabeledDataset<T>,
    test: &LabeledDataset<T>,
    k: usize,
) -> Result<f64> {
    if test.is_empty() {
        return Err(LmlError::config("empty evaluation set"));
    }
    let k = k.min(train.len());
    let mut wrong = 0usize;
    for (i, &label) in test.labels().iter().enumerate() {
        if knn_classify(m, train, test.row(i), k)? != label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / test.len() as f64)
}

/// Train / validation / test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splits {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for Splits {
    fn default() -> Self {
        Splits { train: 0.25, validation: 0.25, test: 0.5 }
    }
}

impl Splits {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(LmlError::config("split fractions must be finite and >= 0"));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(LmlError::config(format!("split fractions must sum to 1, got {}", parts.iter().sum::<f64>())));
        }
        Ok(())
    }
}

/// The three parts of one stratified split.
#[derive(Debug, Clone)]
pub struct Split<T> {
    pub train: LabeledDataset<T>,
    pub validation: Option<LabeledDataset<T>>,
    pub test: LabeledDataset<T>,
}

/// Shuffles each class with `seed` and cuts it by the given fractions
/// (rounded per class; the test part takes the remainder).
pub fn stratified_split<T: Real>(data: &LabeledDataset<T>, splits: &Splits, seed: u64) -> Result<Split<T>> {
    splits.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for (_, mut members) in data.class_members() {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((splits.train * n as f64).round() as usize).min(n);
        let n_val = ((splits.validation * n as f64).round() as usize).min(n - n_train);
        tr.extend_from_slice(&members[..n_train]);
        va.extend_from_slice(&members[n_train..n_train + n_val]);
        te.extend_from_slice(&members[n_train + n_val..]);
    }
    if tr.is_empty() || te.is_empty() {
        return Err(LmlError::config(format!(
            "degenerate split of `{}`: {} train and {} test rows",
            data.task_id(),
            tr.len(),
            te.len()
        )));
    }
    for part in [&mut tr, &mut va, &mut te] {
        part.sort_unstable();
    }
    Ok(Split {
        train: data.subset(&tr)?,
        validation: if va.is_empty() { None } else { Some(data.subset(&va)?) },
        test: data.subset(&te)?,
    })
}

/// Repetition and evaluation settings of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub splits: Splits,
    pub reps: usize,
    /// One seed per repetition; missing entries continue from the last one.
    pub seeds: Vec<u64>,
    pub k: usize,
    /// Record wall-clock training time. Off by default so reports are
    /// reproducible byte for byte.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig { splits: Splits::default(), reps: 1, seeds: vec![0], k: DEFAULT_K, timing: false }
    }
}

impl ExperimentConfig {
    pub fn rep_seed(&self, rep: usize) -> u64 {
        match self.seeds.get(rep) {
            Some(&s) => s,
            None => {
                let last = self.seeds.last().copied().unwrap_or(0);
                last.wrapping_add((rep + 1 - self.seeds.len()) as u64)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.splits.validate()?;
        if self.reps == 0 {
            return Err(LmlError::config("reps must be >= 1"));
        }
        if self.k == 0 {
            return Err(LmlError::config("k must be >= 1"));
        }
        Ok(())
    }
}

/// Mean and standard deviation of one task's error over repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskError {
    pub task: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// In task arrival order.
    pub per_task_error: Vec<TaskError>,
    pub avg_error: f64,
    /// Mean over repetitions of the total training time.
    pub train_seconds: f64,
    pub reps: usize,
}

impl EvalReport {
    fn from_samples(tasks: &[String], samples: &[Vec<f64>], seconds: &[f64]) -> Self {
        let per_task_error: Vec<TaskError> = tasks
            .iter()
            .zip(samples)
            .map(|(task, errs)| {
                let (mean, std) = mean_std(errs);
                TaskError { task: task.clone(), mean, std }
            })
            .collect();
        let avg_error = per_task_error.iter().map(|e| e.mean).sum::<f64>() / per_task_error.len().max(1) as f64;
        EvalReport { per_task_error, avg_error, train_seconds: mean_std(seconds).0, reps: seconds.len() }
    }

    pub fn task(&self, task: &str) -> Option<&TaskError> {
        self.per_task_error.iter().find(|e| e.task == task)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One evaluation of one task in one repetition. Stage 0 is the
/// single-task base learner; stage `s ≥ 1` is the engine after the `s`-th
/// task arrived.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub task: String,
    pub rep: usize,
    pub error: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SequenceReport {
    pub task_ids: Vec<String>,
    /// Engine errors after the last task.
    pub lml: EvalReport,
    /// Errors of each task's base learner trained alone.
    pub baseline: EvalReport,
    /// Mean validation error of the final engine, when a validation split exists.
    pub validation_error: Option<f64>,
    /// `stage_errors[t][s]`: mean test error of task `t` after `s + 1`
    /// tasks; `None` for stages before the task arrived.
    pub stage_errors: Vec<Vec<Option<f64>>>,
    pub records: Vec<StageRecord>,
}

fn elapsed(timing: bool, start: Instant) -> f64 {
    if timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

/// Error of the base learner fit on `train` alone.
pub fn single_task_error<T: Real>(split: &Split<T>, cfg: &EngineConfig<T>, k: usize) -> Result<f64> {
    let triplets = if split.train.classes().len() < 2 {
        TripletSet::new(Vec::new(), split.train.len())
    } else {
        mine_triplets(&split.train, &cfg.mining_config())?
    };
    let m = if triplets.is_empty() {
        MetricMatrix::identity(split.train.dim(), cfg.base.kind)
    } else {
        fit_base(&split.train, &triplets, &cfg.base_config())?
    };
    knn_error(&m, &split.train, &split.test, k)
}

/// Feeds `tasks` through a fresh engine in order and evaluates every task
/// learned so far after each arrival, over `exp.reps` random splits.
pub fn run_sequence_experiment<T: Real>(
    tasks: &[LabeledDataset<T>],
    cfg: &EngineConfig<T>,
    exp: &ExperimentConfig,
) -> Result<SequenceReport> {
    run_sequence_with_engine(tasks, cfg, exp).map(|(report, _)| report)
}

/// [`run_sequence_experiment`], also returning the engine of the last
/// repetition (with its active task finished).
pub fn run_sequence_with_engine<T: Real>(
    tasks: &[LabeledDataset<T>],
    cfg: &EngineConfig<T>,
    exp: &ExperimentConfig,
) -> Result<(SequenceReport, EngineState<T>)> {
    exp.validate()?;
    cfg.validate()?;
    if tasks.len() < 2 {
        return Err(LmlError::config("a sequence experiment needs at least 2 tasks"));
    }
    let ids: Vec<String> = tasks.iter().map(|t| t.task_id().to_string()).collect();
    for (i, id) in ids.iter().enumerate() {
        if ids[..i].contains(id) {
            return Err(LmlError::config(format!("duplicate task id `{id}`")));
        }
    }
    let m = tasks.len();
    let mut records = Vec::new();
    let mut final_errs = vec![Vec::with_capacity(exp.reps); m];
    let mut base_errs = vec![Vec::with_capacity(exp.reps); m];
    let mut stage_sums = vec![vec![0.0; m]; m];
    let mut lml_seconds = Vec::with_capacity(exp.reps);
    let mut base_seconds = Vec::with_capacity(exp.reps);
    let mut val_errs = Vec::new();
    let mut last = None;

    for rep in 0..exp.reps {
        let seed = exp.rep_seed(rep);
        let rep_cfg = EngineConfig { seed, ..cfg.clone() };
        let splits: Vec<Split<T>> = tasks
            .iter()
            .enumerate()
            .map(|(t, data)| stratified_split(data, &exp.splits, seed.wrapping_mul(1_000_003).wrapping_add(t as u64)))
            .collect::<Result<_>>()?;

        let mut base_total = 0.0;
        for (t, split) in splits.iter().enumerate() {
            let start = Instant::now();
            let err = single_task_error(split, &rep_cfg, exp.k)?;
            let secs = elapsed(exp.timing, start);
            base_total += secs;
            base_errs[t].push(err);
            records.push(StageRecord { stage: 0, task: ids[t].clone(), rep, error: err, seconds: secs });
        }
        base_seconds.push(base_total);

        let mut engine = EngineState::new(rep_cfg)?;
        let mut total = 0.0;
        for (s, split) in splits.iter().enumerate() {
            let start = Instant::now();
            engine.observe_batch(&split.train, &ids[s])?;
            let secs = elapsed(exp.timing, start);
            total += secs;
            for t in 0..=s {
                let metric = engine.task_metric(&ids[t])?;
                let err = knn_error(&metric, &splits[t].train, &splits[t].test, exp.k)?;
                stage_sums[t][s] += err;
                if s + 1 == m {
                    final_errs[t].push(err);
                }
                records.push(StageRecord { stage: s + 1, task: ids[t].clone(), rep, error: err, seconds: secs });
            }
        }
        engine.finish_active();
        lml_seconds.push(total);

        let mut val = Vec::new();
        for (t, split) in splits.iter().enumerate() {
            if let Some(v) = &split.validation {
                val.push(knn_error(&engine.task_metric(&ids[t])?, &split.train, v, exp.k)?);
            }
        }
        if !val.is_empty() {
            val_errs.push(val.iter().sum::<f64>() / val.len() as f64);
        }
        info!("rep {rep}: seed {seed}, {} tasks learned", engine.task_count());
        last = Some(engine);
    }

    let reps = exp.reps as f64;
    let stage_errors = (0..m).map(|t| (0..m).map(|s| (s >= t).then(|| stage_sums[t][s] / reps)).collect()).collect();
    let report = SequenceReport {
        lml: EvalReport::from_samples(&ids, &final_errs, &lml_seconds),
        baseline: EvalReport::from_samples(&ids, &base_errs, &base_seconds),
        validation_error: (!val_errs.is_empty()).then(|| mean_std(&val_errs).0),
        stage_errors,
        records,
        task_ids: ids,
    };
    Ok((report, last.expect("reps >= 1")))
}

/// One point of a parameter sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    /// The experiment's result, or the message of the error that stopped it.
    pub outcome: std::result::Result<SequenceReport, String>,
}

impl SweepPoint {
    pub fn avg_error(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.lml.avg_error)
    }
}

fn sweep<T: Real>(
    tasks: &[LabeledDataset<T>],
    values: &[f64],
    exp: &ExperimentConfig,
    mut make: impl FnMut(f64) -> Result<EngineConfig<T>>,
    label: &str,
) -> Vec<SweepPoint> {
    values
        .iter()
        .map(|&value| {
            let outcome = make(value).and_then(|cfg| run_sequence_experiment(tasks, &cfg, exp)).map_err(|e| {
                warn!("{label}={value}: {e}");
                e.to_string()
            });
            SweepPoint { value, outcome }
        })
        .collect()
}

/// Runs the sequence experiment once per dictionary size. A size larger
/// than the feature dimension is recorded as a failed point.
pub fn sweep_dimension<T: Real>(
    tasks: &[LabeledDataset<T>],
    d_values: &[usize],
    cfg: &EngineConfig<T>,
    exp: &ExperimentConfig,
) -> Vec<SweepPoint> {
    let d_hat = tasks.first().map(|t| t.dim()).unwrap_or(0);
    let values: Vec<f64> = d_values.iter().map(|&d| d as f64).collect();
    sweep(
        tasks,
        &values,
        exp,
        |v| {
            let d = v as usize;
            if d > d_hat {
                return Err(LmlError::config(format!("d={d} exceeds the feature dimension {d_hat}")));
            }
            Ok(EngineConfig { d, ..cfg.clone() })
        },
        "d",
    )
}

/// Runs the sequence experiment once per sparsity weight.
pub fn sweep_sparsity<T: Real>(
    tasks: &[LabeledDataset<T>],
    lambda_values: &[f64],
    cfg: &EngineConfig<T>,
    exp: &ExperimentConfig,
) -> Vec<SweepPoint> {
    sweep(tasks, lambda_values, exp, |v| Ok(EngineConfig { lambda: T::lit(v), ..cfg.clone() }), "lambda")
}

/// Index of the point with the lowest validation error (falling back to
/// test error when no validation split exists); ties to the earlier point.
pub fn best_by_validation(points: &[SweepPoint]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        if let Ok(r) = &p.outcome {
            let score = r.validation_error.unwrap_or(r.lml.avg_error);
            if best.is_none_or(|(_, b)| score < b) {
                best = Some((i, score));
            }
        }
    }
    best.map(|b| b.0)
}

pub const REPORT_FIELDS: [&str; 7] = ["stage", "task", "rep", "error", "seconds", "lambda", "d"];

/// Writes the header line of a tab-separated report.
pub fn write_report_header(mut out: impl Write) -> Result<()> {
    writeln!(out, "{}", REPORT_FIELDS.join("\t"))?;
    Ok(())
}

/// Writes one tab-separated line per record, tagged with `lambda` and `d`.
pub fn write_records(records: &[StageRecord], lambda: f64, d: usize, mut out: impl Write) -> Result<()> {
    for r in records {
        writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}\t{}", r.stage, r.task, r.rep, r.error, r.seconds, lambda, d)?;
    }
    Ok(())
}
