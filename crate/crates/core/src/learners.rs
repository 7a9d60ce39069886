//! Single-task base learners producing `M_t`, and the passive-aggressive
//! target `M_t* = M_t − η G_t` handed to the weight solver.

use log::debug;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::LabeledDataset;
use crate::error::{ensure_shape, LmlError, Result};
use crate::linalg;
use crate::metric::{aggregate_gradient, MetricKind, MetricMatrix};
use crate::scalar::Real;
use crate::triplets::TripletSet;

#[derive(Debug, Clone, PartialEq)]
pub struct BaseLearnerConfig<T> {
    pub kind: MetricKind,
    /// OASIS aggressiveness cap `C` on each step.
    pub aggressiveness: T,
    pub iterations: usize,
    /// Step size of the batch distance learner.
    pub batch_step: T,
    /// Linearization step `η` of the passive-aggressive target.
    pub pa_eta: T,
    pub seed: u64,
}

impl<T: Real> Default for BaseLearnerConfig<T> {
    fn default() -> Self {
        BaseLearnerConfig {
            kind: MetricKind::Similarity,
            aggressiveness: T::lit(0.1),
            iterations: 20_000,
            batch_step: T::lit(0.01),
            pa_eta: T::lit(0.1),
            seed: 0,
        }
    }
}

impl<T: Real> BaseLearnerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.aggressiveness > T::zero()) {
            return Err(LmlError::config("aggressiveness C must be > 0"));
        }
        if !(self.batch_step > T::zero()) {
            return Err(LmlError::config("batch_step must be > 0"));
        }
        if !(self.pa_eta >= T::zero()) || !self.pa_eta.is_finite() {
            return Err(LmlError::config("pa_eta must be finite and >= 0"));
        }
        Ok(())
    }
}

fn require_kind<T: Real>(cfg: &BaseLearnerConfig<T>, kind: MetricKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(LmlError::config(format!("learner needs kind={kind}, config has {}", cfg.kind)));
    }
    Ok(())
}

/// Online passive-aggressive similarity learning.
///
/// Starting from `M = I`, draws `iterations` triplets uniformly with
/// replacement; each with hinge loss `l > 0` moves
/// `M ← M + τ x_i(x_j − x_k)ᵀ` with `τ = min(C, l/‖x_i(x_j − x_k)ᵀ‖²_F)`.
pub fn oasis_fit<T: Real>(
    data: &LabeledDataset<T>,
    triplets: &TripletSet,
    cfg: &BaseLearnerConfig<T>,
) -> Result<MetricMatrix<T>> {
    require_kind(cfg, MetricKind::Similarity)?;
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(LmlError::config("OASIS needs a non-empty triplet set"));
    }
    triplets.validate(data)?;
    let mut m = Array2::<T>::eye(data.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ts = triplets.as_slice();
    let mut skipped = 0usize;
    for _ in 0..cfg.iterations {
        let t = ts[rng.random_range(0..ts.len())];
        let xi = data.row(t.anchor);
        let dir = &data.row(t.positive) - &data.row(t.negative);
        // 1 − s(i,j) + s(i,k) = 1 − x_iᵀ M (x_j − x_k)
        let loss = T::one() - xi.dot(&m.dot(&dir));
        if loss <= T::zero() {
            continue;
        }
        // ‖x yᵀ‖²_F = ‖x‖²‖y‖²
        let norm_sq = xi.dot(&xi) * dir.dot(&dir);
        if !(norm_sq > T::zero()) {
            skipped += 1;
            continue;
        }
        let tau = cfg.aggressiveness.min(loss / norm_sq);
        for (r, &xr) in xi.iter().enumerate() {
            m.row_mut(r).scaled_add(tau * xr, &dir);
        }
    }
    if skipped > 0 {
        debug!("oasis: skipped {skipped} degenerate updates");
    }
    MetricMatrix::new(m, MetricKind::Similarity)
}

/// Full-batch subgradient descent on the mean triplet hinge loss of the
/// distance model: `M ← M − step·(1/|T|)·Δ_active(M)` from `M = I`.
pub fn batch_distance_fit<T: Real>(
    data: &LabeledDataset<T>,
    triplets: &TripletSet,
    cfg: &BaseLearnerConfig<T>,
) -> Result<MetricMatrix<T>> {
    require_kind(cfg, MetricKind::Distance)?;
    cfg.validate()?;
    let dim = data.dim();
    let mut m = MetricMatrix::identity(dim, MetricKind::Distance);
    if triplets.is_empty() {
        return Ok(m);
    }
    triplets.validate(data)?;
    let scale = cfg.batch_step / T::from_count(triplets.len());
    for it in 0..cfg.iterations {
        let g = aggregate_gradient(&m, triplets, data, true)?;
        if g.triplet_count == 0 {
            break;
        }
        let mut values = m.into_values();
        values.scaled_add(-scale, &g.delta);
        if !linalg::all_finite(values.view()) {
            return Err(LmlError::Divergence(format!(
                "distance learner produced a non-finite metric at iteration {}",
                it + 1
            )));
        }
        m = MetricMatrix::new(values, MetricKind::Distance)?;
    }
    Ok(m)
}

/// Runs the learner matching `cfg.kind`.
pub fn fit_base<T: Real>(
    data: &LabeledDataset<T>,
    triplets: &TripletSet,
    cfg: &BaseLearnerConfig<T>,
) -> Result<MetricMatrix<T>> {
    match cfg.kind {
        MetricKind::Similarity => oasis_fit(data, triplets, cfg),
        MetricKind::Distance => batch_distance_fit(data, triplets, cfg),
    }
}

/// Mean active triplet gradient at `m`: `G = (1/|T|) Δ_active(m)`.
pub fn mean_active_gradient<T: Real>(
    m: &MetricMatrix<T>,
    data: &LabeledDataset<T>,
    triplets: &TripletSet,
) -> Result<Array2<T>> {
    let g = aggregate_gradient(m, triplets, data, true)?;
    if triplets.is_empty() {
        return Ok(g.delta);
    }
    Ok(g.delta / T::from_count(triplets.len()))
}

/// `M_t − η G_t` with `G_t` the mean active subgradient at `M_t`.
pub fn pa_target<T: Real>(
    m: &MetricMatrix<T>,
    data: &LabeledDataset<T>,
    triplets: &TripletSet,
    cfg: &BaseLearnerConfig<T>,
) -> Result<Array2<T>> {
    ensure_shape(m.dim() == data.dim(), || {
        format!("metric is {0}x{0} but data has {1} features", m.dim(), data.dim())
    })?;
    let g = mean_active_gradient(m, data, triplets)?;
    let mut out = m.values().clone();
    out.scaled_add(-cfg.pa_eta, &g);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{total_hinge_loss, triplet_hinge_loss, Triplet};
    use crate::triplets::{mine_triplets, MiningConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn sim_cfg() -> BaseLearnerConfig<f64> {
        BaseLearnerConfig { iterations: 50, ..BaseLearnerConfig::default() }
    }

    fn dist_cfg() -> BaseLearnerConfig<f64> {
        BaseLearnerConfig { kind: MetricKind::Distance, iterations: 50, ..BaseLearnerConfig::default() }
    }

    #[test]
    fn oasis_passive_when_margin_met() {
        // s(0,1) = 25, s(0,2) = 0
        let d = LabeledDataset::new(array![[5.0, 0.0], [5.0, 0.0], [0.0, 5.0]], vec![0, 0, 1], "t").unwrap();
        let set = TripletSet::new(vec![Triplet::new(0, 1, 2)], 3);
        let m = oasis_fit(&d, &set, &sim_cfg()).unwrap();
        assert_eq!(m, MetricMatrix::identity(2, MetricKind::Similarity));
    }

    #[test]
    fn oasis_aggressive_step_satisfies_margin() {
        let d = LabeledDataset::new(array![[0.3, 0.1], [0.2, -0.1], [0.25, 0.4]], vec![0, 0, 1], "t").unwrap();
        let t = Triplet::new(0, 1, 2);
        let set = TripletSet::new(vec![t], 3);
        let before = MetricMatrix::identity(2, MetricKind::Similarity);
        assert!(triplet_hinge_loss(&before, &t, &d).unwrap() > 0.0);
        let cfg = BaseLearnerConfig { aggressiveness: 1e12, iterations: 1, ..sim_cfg() };
        let m = oasis_fit(&d, &set, &cfg).unwrap();
        assert!(triplet_hinge_loss(&m, &t, &d).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn oasis_step_is_capped_and_deterministic() {
        let d =
            LabeledDataset::new(array![[1.0, 0.0], [1.0, 0.1], [0.0, 1.0], [0.1, 1.0]], vec![0, 0, 1, 1], "t").unwrap();
        let set = mine_triplets(&d, &MiningConfig { neighbors_per_anchor: 1, impostors_per_pair: 2, seed: 1 }).unwrap();
        let cfg = BaseLearnerConfig { aggressiveness: 1e-3, iterations: 1, ..sim_cfg() };
        let m = oasis_fit(&d, &set, &cfg).unwrap();
        let change = &m.values().clone() - &Array2::<f64>::eye(2);
        // one step of size <= C along a unit-bounded outer product
        assert!(change.iter().all(|v| v.abs() <= 1e-3 * 1.5));
        let a = oasis_fit(&d, &set, &sim_cfg()).unwrap();
        let b = oasis_fit(&d, &set, &sim_cfg()).unwrap();
        assert_eq!(a, b);
        assert!(oasis_fit(&d, &TripletSet::new(vec![], 4), &sim_cfg()).is_err());
        assert!(oasis_fit(&d, &set, &dist_cfg()).is_err());
    }

    #[test]
    fn oasis_skips_degenerate_direction() {
        let d = LabeledDataset::new(array![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![0, 0, 1], "t").unwrap();
        let set = TripletSet::new(vec![Triplet::new(0, 1, 2)], 3);
        // anchor is the origin: loss 1 but zero update direction
        let m = oasis_fit(&d, &set, &sim_cfg()).unwrap();
        assert_eq!(m, MetricMatrix::identity(2, MetricKind::Similarity));
    }

    #[test]
    fn distance_learner_identity_when_inactive() {
        let d = LabeledDataset::new(array![[0.0], [0.1], [5.0]], vec![0, 0, 1], "t").unwrap();
        let set = TripletSet::new(vec![Triplet::new(0, 1, 2)], 3);
        let m = batch_distance_fit(&d, &set, &dist_cfg()).unwrap();
        assert_eq!(m, MetricMatrix::identity(1, MetricKind::Distance));
    }

    #[test]
    fn distance_learner_scalar_step() {
        // d̂ = 1: Δ = (xi−xj)² − (xi−xk)² = 0.25 − 1 = −0.75; arg = 1 + 0.25 − 1 > 0
        let d = LabeledDataset::new(array![[0.0], [0.5], [1.0]], vec![0, 0, 1], "t").unwrap();
        let set = TripletSet::new(vec![Triplet::new(0, 1, 2)], 3);
        let cfg = BaseLearnerConfig { iterations: 1, batch_step: 0.2, ..dist_cfg() };
        let m = batch_distance_fit(&d, &set, &cfg).unwrap();
        assert_abs_diff_eq!(m.values()[[0, 0]], 1.0 - 0.2 * (-0.75), epsilon = 1e-15);
    }

    #[test]
    fn distance_learner_loss_trace_non_increasing_and_symmetric() {
        let d = LabeledDataset::new(
            array![[0.0, 0.0], [0.2, 0.9], [-0.1, 1.8], [1.0, 0.1], [1.2, 1.0], [0.9, 2.0]],
            vec![0, 0, 0, 1, 1, 1],
            "t",
        )
        .unwrap();
        let set = mine_triplets(&d, &MiningConfig { neighbors_per_anchor: 2, impostors_per_pair: 3, seed: 4 }).unwrap();
        let mut last = f64::INFINITY;
        for iters in 0..15 {
            let cfg = BaseLearnerConfig { iterations: iters, batch_step: 0.05, ..dist_cfg() };
            let m = batch_distance_fit(&d, &set, &cfg).unwrap();
            assert!(m.is_symmetric(1e-12));
            let loss = total_hinge_loss(&m, &set, &d).unwrap() / set.len() as f64;
            assert!(loss <= last + 1e-12, "iteration {iters}: {loss} > {last}");
            last = loss;
        }
    }

    #[test]
    fn distance_learner_divergence_names_iteration() {
        let d = LabeledDataset::new(array![[0.0], [1e100], [1.0]], vec![0, 0, 1], "t").unwrap();
        let set = TripletSet::new(vec![Triplet::new(0, 1, 2)], 3);
        let cfg = BaseLearnerConfig { iterations: 10, batch_step: 1e300, ..dist_cfg() };
        let err = batch_distance_fit(&d, &set, &cfg).unwrap_err();
        assert!(matches!(err, LmlError::Divergence(ref m) if m.contains("iteration")), "{err}");
    }

    #[test]
    fn pa_target_cases() {
        let d = LabeledDataset::new(array![[0.0, 0.0], [0.3, 0.1], [0.5, 0.4]], vec![0, 0, 1], "t").unwrap();
        let t = Triplet::new(0, 1, 2);
        let set = TripletSet::new(vec![t], 3);
        let m = MetricMatrix::identity(2, MetricKind::Distance);
        let cfg = BaseLearnerConfig { pa_eta: 0.0, ..dist_cfg() };
        assert_eq!(pa_target(&m, &d, &set, &cfg).unwrap(), Array2::eye(2));

        let cfg = BaseLearnerConfig { pa_eta: 0.4, ..dist_cfg() };
        let got = pa_target(&m, &d, &set, &cfg).unwrap();
        let delta = aggregate_gradient(&m, &set, &d, true).unwrap().delta;
        let want = Array2::<f64>::eye(2) - &(delta * 0.4);
        assert_eq!(got, want);

        let far = LabeledDataset::new(array![[0.0, 0.0], [0.1, 0.0], [9.0, 9.0]], vec![0, 0, 1], "t").unwrap();
        assert_eq!(pa_target(&m, &far, &set, &cfg).unwrap(), Array2::eye(2));
    }
}
