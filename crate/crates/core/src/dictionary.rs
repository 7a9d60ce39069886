//! The lifelong dictionary `L0`: a `d × d̂` matrix of shared basis rows from
//! which every task metric is assembled as `L0ᵀ W_t L0`.

use std::io::{BufRead, Write};

use log::{debug, warn};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::dataset::LabeledDataset;
use crate::error::{ensure_shape, LmlError, Result};
use crate::kmeans::kmeans;
use crate::linalg::{self, cholesky, lower_triangular_inverse, symmetric_eigen};
use crate::metric::{GradientSummary, MetricKind};
use crate::scalar::Real;

/// Candidates whose |cosine| with an accepted row exceeds this are dropped.
pub const DUPLICATE_COSINE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct LifelongDictionary<T> {
    l0: Array2<T>,
}

impl<T: Real> LifelongDictionary<T> {
    pub fn new(l0: Array2<T>) -> Result<Self> {
        ensure_shape(l0.nrows() >= 1 && l0.nrows() <= l0.ncols(), || {
            format!("dictionary must have 1 <= d <= d_hat, got {}x{}", l0.nrows(), l0.ncols())
        })?;
        if !linalg::all_finite(l0.view()) {
            return Err(LmlError::Divergence("dictionary has non-finite entries".into()));
        }
        Ok(LifelongDictionary { l0 })
    }

    /// Subspace dimension.
    pub fn d(&self) -> usize {
        self.l0.nrows()
    }

    /// Ambient feature dimension.
    pub fn d_hat(&self) -> usize {
        self.l0.ncols()
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.l0
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.l0.view()
    }

    /// `L0ᵀ W L0`.
    pub fn compose(&self, w: ArrayView2<T>) -> Result<Array2<T>> {
        ensure_shape(w.nrows() == self.d() && w.ncols() == self.d(), || {
            format!("weights are {}x{}, dictionary has d={}", w.nrows(), w.ncols(), self.d())
        })?;
        Ok(self.l0.t().dot(&w).dot(&self.l0))
    }

    /// Writes `d d_hat` then one row per line, 17 significant digits.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        write_matrix(&mut out, self.l0.view())?;
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let l0 = read_matrix(&mut lines)?;
        LifelongDictionary::new(l0)
    }
}

pub(crate) fn write_matrix<T: Real>(out: &mut impl Write, m: ArrayView2<T>) -> std::io::Result<()> {
    writeln!(out, "{} {}", m.nrows(), m.ncols())?;
    for row in m.outer_iter() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                out.write_all(b" ")?;
            }
            first = false;
            write!(out, "{:.16e}", v.as_f64())?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub(crate) fn read_matrix<T: Real, B: BufRead>(lines: &mut std::io::Lines<B>) -> Result<Array2<T>> {
    let header = lines.next().transpose()?.ok_or_else(|| LmlError::Format("missing matrix header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| LmlError::Format(format!("bad matrix header `{header}`")))?;
    if dims.len() != 2 {
        return Err(LmlError::Format(format!("bad matrix header `{header}`")));
    }
    let (rows, cols) = (dims[0], dims[1]);
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line = lines.next().transpose()?.ok_or_else(|| LmlError::Format(format!("matrix truncated at row {r}")))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| LmlError::Format(format!("bad number `{tok}` in matrix row {r}")))?;
            data.push(T::lit(v));
        }
        if data.len() - before != cols {
            return Err(LmlError::Format(format!("matrix row {r} has {} entries, want {cols}", data.len() - before)));
        }
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| LmlError::Format(e.to_string()))
}

/// What the dictionary keeps about a learned task in place of its data.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSummary<T> {
    pub task_id: String,
    pub kind: MetricKind,
    /// `W_t`, `d × d`.
    pub weights: Array2<T>,
    /// `Δ_t`: mean active triplet gradient at the base-learner metric.
    pub delta: GradientSummary<T>,
    /// `M_t*`, held only while the task is the active one.
    pub m_star: Option<Array2<T>>,
}

impl<T: Real> TaskSummary<T> {
    fn check(&self, dict: &LifelongDictionary<T>) -> Result<()> {
        let (d, dh) = (dict.d(), dict.d_hat());
        ensure_shape(self.weights.dim() == (d, d), || {
            format!("task `{}`: W is {:?}, want ({d}, {d})", self.task_id, self.weights.dim())
        })?;
        ensure_shape(self.delta.delta.dim() == (dh, dh), || {
            format!("task `{}`: delta is {:?}, want ({dh}, {dh})", self.task_id, self.delta.delta.dim())
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    pub d: usize,
    pub num_clusters: usize,
    /// Neighborhood sizes per class around each cluster center.
    pub j_scales: Vec<usize>,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { d: 5, num_clusters: 3, j_scales: vec![10, 20, 50], seed: 0 }
    }
}

struct Candidate<T> {
    eigenvalue: T,
    direction: Array1<T>,
}

/// Fisher directions `(S_w + εI)⁻¹ S_b` of one local neighborhood, with
/// unit-norm eigenvectors paired with their eigenvalues.
fn local_fisher<T: Real>(data: &LabeledDataset<T>, groups: &[Vec<usize>]) -> Result<Vec<Candidate<T>>> {
    let dh = data.dim();
    let x = data.features();
    let total: usize = groups.iter().map(Vec::len).sum();
    let mut overall = Array1::<T>::zeros(dh);
    for idx in groups.iter().flatten() {
        overall += &x.row(*idx);
    }
    overall /= T::from_count(total);

    let mut sb = Array2::<T>::zeros((dh, dh));
    let mut sw = Array2::<T>::zeros((dh, dh));
    for members in groups {
        let sub = x.select(Axis(0), members);
        let mean = sub.mean_axis(Axis(0)).expect("non-empty class");
        let shift = (&mean - &overall).insert_axis(Axis(1));
        sb = sb + shift.dot(&shift.t()) * T::from_count(members.len());
        let centered = &sub - &mean.insert_axis(Axis(0));
        sw = sw + centered.t().dot(&centered);
    }
    let trace = sw.diag().sum();
    let eps = if trace > T::zero() { T::lit(1e-6) * trace / T::from_count(dh) } else { T::lit(1e-6) };
    sw.diag_mut().mapv_inplace(|v| v + eps);

    // S_w = C Cᵀ turns the generalized problem into a symmetric one.
    let c = cholesky(sw.view())?;
    let ci = lower_triangular_inverse(c.view());
    let k = ci.dot(&sb).dot(&ci.t());
    let eig = symmetric_eigen(k.view())?;
    let back = ci.t().dot(&eig.vectors);
    let mut out = Vec::with_capacity(dh);
    for (col, &value) in back.axis_iter(Axis(1)).zip(eig.values.iter()) {
        let norm = col.dot(&col).sqrt();
        if norm > T::zero() && norm.is_finite() {
            out.push(Candidate { eigenvalue: value, direction: &col / norm });
        }
    }
    Ok(out)
}

/// Builds the initial dictionary from the first task.
///
/// The data is clustered with seeded k-means; around each center and for
/// each scale `J`, the `J` nearest members of every class form a local
/// Fisher problem whose eigenvectors become candidate rows. Candidates are
/// ranked by eigenvalue and accepted greedily, skipping any whose component
/// outside the span of the accepted rows is shorter than
/// `sqrt(1 − 0.99²)` (so no accepted pair has |cosine| above 0.99).
pub fn init_dictionary<T: Real>(first_task: &LabeledDataset<T>, cfg: &InitConfig) -> Result<LifelongDictionary<T>> {
    let dh = first_task.dim();
    if cfg.d == 0 || cfg.d > dh {
        return Err(LmlError::config(format!("need 1 <= d <= d_hat, got d={} d_hat={dh}", cfg.d)));
    }
    if cfg.num_clusters == 0 {
        return Err(LmlError::config("num_clusters must be >= 1"));
    }
    if cfg.j_scales.is_empty() || cfg.j_scales.contains(&0) {
        return Err(LmlError::config("j_scales must be non-empty positive integers"));
    }
    let classes = first_task.class_members();
    if classes.len() < 2 {
        return Err(LmlError::config("dictionary initialization needs >=2 classes"));
    }

    let x = first_task.features();
    let km = kmeans(x.view(), cfg.num_clusters, cfg.seed, 100);
    let mut candidates: Vec<Candidate<T>> = Vec::new();
    let mut warned = std::collections::HashSet::new();
    for center in km.centers.outer_iter() {
        for &j in &cfg.j_scales {
            let mut groups = Vec::with_capacity(classes.len());
            for (label, members) in &classes {
                let take = if j > members.len() {
                    if warned.insert((j, *label)) {
                        warn!("J={j} exceeds the {} members of class {label}; clamping", members.len());
                    }
                    members.len()
                } else {
                    j
                };
                let mut ranked: Vec<(T, usize)> = members
                    .iter()
                    .map(|&i| {
                        let diff = &x.row(i) - &center;
                        (diff.dot(&diff), i)
                    })
                    .collect();
                ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
                groups.push(ranked.into_iter().take(take).map(|(_, i)| i).collect());
            }
            candidates.extend(local_fisher(first_task, &groups)?);
        }
    }

    // stable: equal eigenvalues keep generation order
    candidates.sort_by(|a, b| b.eigenvalue.partial_cmp(&a.eigenvalue).unwrap_or(std::cmp::Ordering::Equal));
    let min_residual = T::lit((1.0 - DUPLICATE_COSINE * DUPLICATE_COSINE).sqrt());
    let mut accepted: Vec<Array1<T>> = Vec::with_capacity(cfg.d);
    // orthonormal basis of the accepted span, for the residual test
    let mut basis: Vec<Array1<T>> = Vec::with_capacity(cfg.d);
    for cand in &candidates {
        if accepted.len() == cfg.d {
            break;
        }
        let mut residual = cand.direction.clone();
        for q in &basis {
            let proj = q.dot(&residual);
            residual.scaled_add(-proj, q);
        }
        let norm = residual.dot(&residual).sqrt();
        if norm < min_residual {
            continue;
        }
        basis.push(residual / norm);
        accepted.push(cand.direction.clone());
    }
    debug!("dictionary init: {} candidates, {} accepted", candidates.len(), accepted.len());
    if accepted.len() < cfg.d {
        return Err(LmlError::config(format!(
            "only {} distinct basis rows could be harvested for d={}; use a smaller d or more clusters",
            accepted.len(),
            cfg.d
        )));
    }
    let mut l0 = Array2::<T>::zeros((cfg.d, dh));
    for (r, row) in accepted.iter().enumerate() {
        l0.row_mut(r).assign(row);
    }
    LifelongDictionary::new(l0)
}

fn check_summaries<T: Real>(dict: &LifelongDictionary<T>, summaries: &[TaskSummary<T>]) -> Result<()> {
    if summaries.is_empty() {
        return Err(LmlError::config("dictionary gradient needs at least one task summary"));
    }
    summaries.iter().try_for_each(|s| s.check(dict))
}

/// `(1/m) Σ_t W_tᵀ L0 Δ_t + γ L0`.
///
/// With `symmetrized`, returns instead the full derivative of
/// [`linearized_objective`], `(1/m) Σ_t (W_t L0 Δ_tᵀ + W_tᵀ L0 Δ_t) + 2γ L0`.
pub fn dictionary_gradient<T: Real>(
    dict: &LifelongDictionary<T>,
    summaries: &[TaskSummary<T>],
    gamma: T,
    symmetrized: bool,
) -> Result<Array2<T>> {
    check_summaries(dict, summaries)?;
    let l0 = dict.view();
    let mut grad = Array2::<T>::zeros(l0.raw_dim());
    for s in summaries {
        let l0_delta = l0.dot(&s.delta.delta);
        grad = grad + s.weights.t().dot(&l0_delta);
        if symmetrized {
            grad = grad + s.weights.dot(&l0.dot(&s.delta.delta.t()));
        }
    }
    grad /= T::from_count(summaries.len());
    let reg = if symmetrized { gamma + gamma } else { gamma };
    grad.scaled_add(reg, &l0);
    Ok(grad)
}

/// `(1/m) Σ_t ⟨L0ᵀ W_t L0, Δ_t⟩ + γ‖L0‖²_F`: the task losses linearized at
/// their base metrics, as seen through the dictionary.
pub fn linearized_objective<T: Real>(l0: ArrayView2<T>, summaries: &[TaskSummary<T>], gamma: T) -> T {
    let mut total = T::zero();
    for s in summaries {
        let metric = l0.t().dot(&s.weights).dot(&l0);
        total += linalg::frobenius_inner(metric.view(), s.delta.delta.view());
    }
    if !summaries.is_empty() {
        total /= T::from_count(summaries.len());
    }
    total + gamma * linalg::frobenius_norm_sq(l0)
}

/// `(1/m) Σ_t ‖L0ᵀ W_t L0 − M_t*‖²_F + γ‖L0‖²_F` over the summaries that
/// still hold `M_t*`; the sparsity term is constant in `L0` and omitted.
pub fn target_fit_objective<T: Real>(l0: ArrayView2<T>, summaries: &[TaskSummary<T>], gamma: T) -> T {
    let mut total = T::zero();
    let mut count = 0;
    for s in summaries {
        if let Some(m_star) = &s.m_star {
            let resid = l0.t().dot(&s.weights).dot(&l0) - m_star;
            total += linalg::frobenius_norm_sq(resid.view());
            count += 1;
        }
    }
    if count > 0 {
        total /= T::from_count(count);
    }
    total + gamma * linalg::frobenius_norm_sq(l0)
}

/// Fixed-step gradient descent: `L0 ← L0 − step·∇`, `steps` times.
pub fn refine_dictionary<T: Real>(
    dict: &LifelongDictionary<T>,
    summaries: &[TaskSummary<T>],
    gamma: T,
    step: T,
    steps: usize,
    symmetrized: bool,
) -> Result<LifelongDictionary<T>> {
    if !(step > T::zero()) {
        return Err(LmlError::config("dictionary step must be > 0"));
    }
    if steps == 0 {
        return Err(LmlError::config("dictionary steps must be >= 1"));
    }
    let mut current = dict.clone();
    for k in 0..steps {
        let grad = dictionary_gradient(&current, summaries, gamma, symmetrized)?;
        let mut next = current.l0.clone();
        next.scaled_add(-step, &grad);
        if !linalg::all_finite(next.view()) {
            return Err(LmlError::Divergence(format!(
                "dictionary update became non-finite at step {} (step size {})",
                k + 1,
                step
            )));
        }
        current = LifelongDictionary { l0: next };
    }
    Ok(current)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig<T> {
    pub gamma: T,
    pub step: T,
    pub steps: usize,
    /// Halvings tried before a step is abandoned.
    pub max_halvings: usize,
    pub symmetrized: bool,
}

impl<T: Real> Default for RefineConfig<T> {
    fn default() -> Self {
        RefineConfig { gamma: T::lit(0.01), step: T::lit(1e-3), steps: 5, max_halvings: 5, symmetrized: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineReport<T> {
    pub accepted_steps: usize,
    pub final_step: T,
    pub objective_trace: Vec<T>,
}

/// Gradient descent with step halving: a step that raises `objective` is
/// retried at half size up to `max_halvings` times, and refinement stops
/// early if no size helps. The objective trace is non-increasing.
pub fn refine_dictionary_adaptive<T: Real>(
    dict: &LifelongDictionary<T>,
    summaries: &[TaskSummary<T>],
    cfg: &RefineConfig<T>,
    objective: impl Fn(ArrayView2<T>) -> T,
) -> Result<(LifelongDictionary<T>, RefineReport<T>)> {
    if !(cfg.step > T::zero()) {
        return Err(LmlError::config("dictionary step must be > 0"));
    }
    let mut current = dict.clone();
    let mut value = objective(current.view());
    let mut step = cfg.step;
    let mut report = RefineReport { accepted_steps: 0, final_step: step, objective_trace: vec![value] };
    'outer: for _ in 0..cfg.steps {
        let grad = dictionary_gradient(&current, summaries, cfg.gamma, cfg.symmetrized)?;
        for _ in 0..=cfg.max_halvings {
            let mut next = current.l0.clone();
            next.scaled_add(-step, &grad);
            if linalg::all_finite(next.view()) {
                let v = objective(next.view());
                if v.is_finite() && v <= value {
                    current = LifelongDictionary { l0: next };
                    value = v;
                    report.accepted_steps += 1;
                    report.objective_trace.push(v);
                    continue 'outer;
                }
            }
            step *= T::lit(0.5);
        }
        debug!("dictionary refinement stalled after {} steps", report.accepted_steps);
        break;
    }
    report.final_step = step;
    Ok((current, report))
}
