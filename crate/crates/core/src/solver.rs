//! Per-task weight subproblem
//!
//! ```text
//! min_W  ½‖L0ᵀ W L0 − M*‖²_F + λ Σ_{i≠j} |w_ij|
//! ```
//!
//! solved by FISTA with backtracking on the step size.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Zip};

use crate::dictionary::LifelongDictionary;
use crate::error::{ensure_shape, LmlError, Result};
use crate::linalg;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T> {
    /// Weight of the off-diagonal ℓ1 penalty.
    pub lambda: T,
    /// Initial step size.
    pub eta0: T,
    /// Step-size multiplier applied on each failed sufficient-decrease test.
    pub backtrack_shrink: T,
    pub max_iter: usize,
    /// Stop once the objective moves less than this relative amount.
    pub rel_tol: T,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        SolverConfig {
            lambda: T::lit(0.1),
            eta0: T::one(),
            backtrack_shrink: T::lit(0.5),
            max_iter: 500,
            rel_tol: T::lit(1e-6),
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return Err(LmlError::config("lambda must be finite and >= 0"));
        }
        if !(self.eta0 > T::zero()) || !self.eta0.is_finite() {
            return Err(LmlError::config("eta0 must be > 0"));
        }
        if !(self.backtrack_shrink > T::zero() && self.backtrack_shrink < T::one()) {
            return Err(LmlError::config("backtrack_shrink must lie in (0, 1)"));
        }
        if self.max_iter == 0 {
            return Err(LmlError::config("max_iter must be >= 1"));
        }
        if !(self.rel_tol > T::zero()) {
            return Err(LmlError::config("rel_tol must be > 0"));
        }
        Ok(())
    }
}

/// Solver state after the last outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct FistaState<T> {
    pub w_curr: Array2<T>,
    pub w_prev: Array2<T>,
    pub t_curr: T,
    pub t_prev: T,
    pub eta: T,
    pub iter: usize,
    /// Composite objective after each outer iteration.
    pub objective_history: Vec<T>,
    /// Objective of the returned (best) iterate.
    pub best_objective: T,
    pub converged: bool,
}

fn check_shapes<T: Real>(dict: &LifelongDictionary<T>, w: ArrayView2<T>, m_star: ArrayView2<T>) -> Result<()> {
    let (d, dh) = (dict.d(), dict.d_hat());
    ensure_shape(w.dim() == (d, d), || format!("W is {:?}, dictionary needs ({d}, {d})", w.dim()))?;
    ensure_shape(m_star.dim() == (dh, dh), || {
        format!("target metric is {:?}, dictionary needs ({dh}, {dh})", m_star.dim())
    })
}

/// `L0L0ᵀ W L0L0ᵀ − L0 M* L0ᵀ`, the gradient of `½‖L0ᵀWL0 − M*‖²_F`.
pub fn smooth_gradient<T: Real>(
    dict: &LifelongDictionary<T>,
    w: ArrayView2<T>,
    m_star: ArrayView2<T>,
) -> Result<Array2<T>> {
    check_shapes(dict, w, m_star)?;
    let l0 = dict.view();
    let gram = l0.dot(&l0.t());
    Ok(gram.dot(&w).dot(&gram) - l0.dot(&m_star).dot(&l0.t()))
}

/// Soft-thresholds the off-diagonal entries by `threshold`; the diagonal
/// passes through untouched.
pub fn prox_l1_off<T: Real>(w: ArrayView2<T>, threshold: T) -> Array2<T> {
    let mut out = w.to_owned();
    for ((i, j), v) in out.indexed_iter_mut() {
        if i != j {
            let shrunk = (v.abs() - threshold).max(T::zero());
            *v = if shrunk == T::zero() { T::zero() } else { v.signum() * shrunk };
        }
    }
    out
}

/// `Σ_{i≠j} |w_ij|`.
pub fn l1_off<T: Real>(w: ArrayView2<T>) -> T {
    w.indexed_iter().filter(|((i, j), _)| i != j).fold(T::zero(), |acc, (_, v)| acc + v.abs())
}

fn smooth_value<T: Real>(l0: ArrayView2<T>, w: ArrayView2<T>, m_star: ArrayView2<T>) -> T {
    let resid = l0.t().dot(&w).dot(&l0) - m_star;
    T::lit(0.5) * linalg::frobenius_norm_sq(resid.view())
}

/// `½‖L0ᵀWL0 − M*‖²_F + λ Σ_{i≠j}|w_ij|`.
pub fn objective<T: Real>(
    dict: &LifelongDictionary<T>,
    w: ArrayView2<T>,
    m_star: ArrayView2<T>,
    lambda: T,
) -> Result<T> {
    check_shapes(dict, w, m_star)?;
    Ok(smooth_value(dict.view(), w, m_star) + lambda * l1_off(w))
}

/// Precomputed pieces of the subproblem: `G = L0L0ᵀ` and `B = L0 M* L0ᵀ`.
struct Problem<'a, 'b, T> {
    l0: ArrayView2<'a, T>,
    m_star: ArrayView2<'b, T>,
    gram: Array2<T>,
    target: Array2<T>,
}

impl<'a, 'b, T: Real> Problem<'a, 'b, T> {
    fn new(dict: &'a LifelongDictionary<T>, m_star: ArrayView2<'b, T>) -> Self {
        let l0 = dict.view();
        let gram = l0.dot(&l0.t());
        let target = l0.dot(&m_star).dot(&l0.t());
        Problem { l0, m_star, gram, target }
    }

    fn value(&self, w: ArrayView2<T>) -> T {
        smooth_value(self.l0, w, self.m_star)
    }

    fn gradient(&self, w: ArrayView2<T>) -> Array2<T> {
        self.gram.dot(&w).dot(&self.gram) - &self.target
    }

    /// `f(v + D) − f(v) − ⟨D, ∇f(v)⟩ = ½‖L0ᵀ D L0‖²_F`, exact because `f`
    /// is quadratic; computed as `½⟨D, G D G⟩` without cancellation.
    fn curvature(&self, d: ArrayView2<T>) -> T {
        let gdg = self.gram.dot(&d).dot(&self.gram);
        T::lit(0.5) * linalg::frobenius_inner(d, gdg.view())
    }
}

/// Runs FISTA from `w_init` and returns the best iterate seen.
///
/// Search points use `α_i = (t_{i−1} − 1)/t_i` with `t_{−1} = 0`, `t_0 = 1`
/// and `t_{i+1} = (1 + √(1 + 4t_i²))/2`. At each search point the step size
/// is multiplied by `backtrack_shrink` until
/// `f(p) ≤ f(v) + ⟨p − v, ∇f(v)⟩ + ‖p − v‖²/(2η)`, and the accepted size
/// carries over to the next iteration. The loop stops when an iterate's
/// objective is within `rel_tol` (relative) of the best objective so far.
pub fn solve_weights<T: Real>(
    dict: &LifelongDictionary<T>,
    m_star: ArrayView2<T>,
    w_init: ArrayView2<T>,
    cfg: &SolverConfig<T>,
) -> Result<(Array2<T>, FistaState<T>)> {
    solve_weights_traced(dict, m_star, w_init, cfg, None)
}

/// [`solve_weights`] that also writes `iter eta objective` per outer
/// iteration to `trace`.
pub fn solve_weights_traced<T: Real>(
    dict: &LifelongDictionary<T>,
    m_star: ArrayView2<T>,
    w_init: ArrayView2<T>,
    cfg: &SolverConfig<T>,
    mut trace: Option<&mut dyn Write>,
) -> Result<(Array2<T>, FistaState<T>)> {
    cfg.validate()?;
    check_shapes(dict, w_init, m_star)?;
    let problem = Problem::new(dict, m_star);
    let composite = |w: ArrayView2<T>| problem.value(w) + cfg.lambda * l1_off(w);

    let start_obj = composite(w_init);
    if !start_obj.is_finite() {
        return Err(LmlError::Divergence("objective is non-finite at the initial weights".into()));
    }
    let mut state = FistaState {
        w_curr: w_init.to_owned(),
        w_prev: w_init.to_owned(),
        t_curr: T::one(),
        t_prev: T::zero(),
        eta: cfg.eta0,
        iter: 0,
        objective_history: Vec::with_capacity(cfg.max_iter.min(4096)),
        best_objective: start_obj,
        converged: false,
    };
    let mut best_w = w_init.to_owned();
    let slack = T::epsilon() * T::lit(16.0);
    let two = T::lit(2.0);

    for i in 1..=cfg.max_iter {
        let alpha = (state.t_prev - T::one()) / state.t_curr;
        let mut v = state.w_curr.clone();
        Zip::from(&mut v).and(&state.w_curr).and(&state.w_prev).for_each(|v, &c, &p| *v = c + alpha * (c - p));

        let grad = problem.gradient(v.view());
        let mut shrinks = 0;
        let next = loop {
            let mut step = v.clone();
            step.scaled_add(-state.eta, &grad);
            let p = prox_l1_off(step.view(), cfg.lambda * state.eta);
            let diff = &p - &v;
            // the sufficient-decrease test with f(p) − f(v) − ⟨p − v, ∇f(v)⟩
            // replaced by its exact value
            let excess = problem.curvature(diff.view());
            let allowed = linalg::frobenius_norm_sq(diff.view()) / (two * state.eta);
            if excess <= allowed * (T::one() + slack) {
                let f_p = problem.value(p.view());
                break (p, f_p);
            }
            state.eta *= cfg.backtrack_shrink;
            shrinks += 1;
            if !(state.eta > T::zero()) || shrinks > 200 {
                return Err(LmlError::Divergence(format!("step size underflow during backtracking at iteration {i}")));
            }
        };
        let (p, f_p) = next;
        let obj = f_p + cfg.lambda * l1_off(p.view());
        if !obj.is_finite() {
            return Err(LmlError::Divergence(format!("objective non-finite at iteration {i}")));
        }

        state.w_prev = std::mem::replace(&mut state.w_curr, p);
        let t_next = (T::one() + (T::one() + T::lit(4.0) * state.t_curr * state.t_curr).sqrt()) / two;
        state.t_prev = state.t_curr;
        state.t_curr = t_next;
        state.iter = i;
        state.objective_history.push(obj);
        if let Some(out) = trace.as_mut() {
            writeln!(out, "{i} {:e} {:e}", state.eta.as_f64(), obj.as_f64())?;
        }

        let previous_best = state.best_objective;
        if obj < previous_best {
            state.best_objective = obj;
            best_w.assign(&state.w_curr);
        }
        if (obj - previous_best).abs() <= cfg.rel_tol * previous_best.abs() {
            state.converged = true;
            break;
        }
    }
    Ok((best_w, state))
}
