//! Task-by-task orchestration. Each observed batch refits its task's base
//! metric, re-solves the task weights against the current dictionary and
//! refines the dictionary from every task's stored gradient summary. Raw
//! samples are kept only for the task currently being observed.

use std::io::{BufRead, Write};

use log::{info, warn};
use ndarray::Array2;

use crate::dataset::LabeledDataset;
use crate::dictionary::{
    init_dictionary, linearized_objective, read_matrix, refine_dictionary_adaptive, write_matrix, InitConfig,
    LifelongDictionary, RefineConfig, TaskSummary,
};
use crate::error::{ensure_shape, LmlError, Result};
use crate::learners::{fit_base, mean_active_gradient, pa_target, BaseLearnerConfig};
use crate::metric::{GradientSummary, MetricKind, MetricMatrix};
use crate::scalar::Real;
use crate::solver::{solve_weights, SolverConfig};
use crate::triplets::{mine_triplets, MiningConfig, TripletSet};

const CHECKPOINT_MAGIC: &str = "lml-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig<T> {
    /// Dictionary size (number of basis rows).
    pub d: usize,
    /// Off-diagonal sparsity weight shared by all tasks.
    pub lambda: T,
    /// Dictionary Frobenius regularization.
    pub gamma: T,
    pub base: BaseLearnerConfig<T>,
    /// Solver settings; its `lambda` is replaced by [`EngineConfig::lambda`].
    pub solver: SolverConfig<T>,
    pub mining: MiningConfig,
    pub num_clusters: usize,
    pub j_scales: Vec<usize>,
    pub dict_step: T,
    /// Dictionary gradient steps per task update; 0 disables refinement.
    pub dict_steps: usize,
    pub dict_max_halvings: usize,
    pub symmetrized: bool,
    pub seed: u64,
}

impl<T: Real> Default for EngineConfig<T> {
    fn default() -> Self {
        EngineConfig {
            d: 5,
            lambda: T::lit(0.1),
            gamma: T::lit(0.01),
            base: BaseLearnerConfig::default(),
            solver: SolverConfig::default(),
            mining: MiningConfig::default(),
            num_clusters: 3,
            j_scales: vec![10, 20, 50],
            dict_step: T::lit(1e-3),
            dict_steps: 5,
            dict_max_halvings: 5,
            symmetrized: false,
            seed: 0,
        }
    }
}

fn parse_num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value.trim().parse().map_err(|_| LmlError::config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(LmlError::config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

pub(crate) fn parse_list<V: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_num(key, s)).collect()
}

fn fmt_real<T: Real>(v: T) -> String {
    format!("{}", v.as_f64())
}

impl<T: Real> EngineConfig<T> {
    /// Keys accepted by [`EngineConfig::set`], in serialization order.
    pub const KEYS: &'static [&'static str] = &[
        "d",
        "lambda",
        "gamma",
        "base-kind",
        "oasis-c",
        "base-iterations",
        "batch-step",
        "pa-eta",
        "eta0",
        "backtrack-shrink",
        "max-iter",
        "rel-tol",
        "neighbors",
        "impostors",
        "num-clusters",
        "j-scales",
        "dict-step",
        "dict-steps",
        "dict-max-halvings",
        "symmetrized",
        "seed",
    ];

    pub fn solver_config(&self) -> SolverConfig<T> {
        SolverConfig { lambda: self.lambda, ..self.solver.clone() }
    }

    pub fn init_config(&self) -> InitConfig {
        InitConfig { d: self.d, num_clusters: self.num_clusters, j_scales: self.j_scales.clone(), seed: self.seed }
    }

    pub fn mining_config(&self) -> MiningConfig {
        MiningConfig { seed: self.seed, ..self.mining }
    }

    pub fn base_config(&self) -> BaseLearnerConfig<T> {
        BaseLearnerConfig { seed: self.seed, ..self.base.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(LmlError::config("d must be >= 1"));
        }
        if !(self.gamma >= T::zero()) {
            return Err(LmlError::config("gamma must be >= 0"));
        }
        if !(self.dict_step > T::zero()) {
            return Err(LmlError::config("dict-step must be > 0"));
        }
        if self.num_clusters == 0 || self.j_scales.is_empty() || self.j_scales.contains(&0) {
            return Err(LmlError::config("num-clusters and j-scales must be positive"));
        }
        if self.mining.neighbors_per_anchor == 0 || self.mining.impostors_per_pair == 0 {
            return Err(LmlError::config("neighbors and impostors must be >= 1"));
        }
        self.base.validate()?;
        self.solver_config().validate()
    }

    /// Sets one field from its `key = value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        match key.as_str() {
            "d" => self.d = parse_num(&key, value)?,
            "lambda" => self.lambda = T::lit(parse_num(&key, value)?),
            "gamma" => self.gamma = T::lit(parse_num(&key, value)?),
            "base-kind" => self.base.kind = value.parse()?,
            "oasis-c" => self.base.aggressiveness = T::lit(parse_num(&key, value)?),
            "base-iterations" => self.base.iterations = parse_num(&key, value)?,
            "batch-step" => self.base.batch_step = T::lit(parse_num(&key, value)?),
            "pa-eta" => self.base.pa_eta = T::lit(parse_num(&key, value)?),
            "eta0" => self.solver.eta0 = T::lit(parse_num(&key, value)?),
            "backtrack-shrink" => self.solver.backtrack_shrink = T::lit(parse_num(&key, value)?),
            "max-iter" => self.solver.max_iter = parse_num(&key, value)?,
            "rel-tol" => self.solver.rel_tol = T::lit(parse_num(&key, value)?),
            "neighbors" => self.mining.neighbors_per_anchor = parse_num(&key, value)?,
            "impostors" => self.mining.impostors_per_pair = parse_num(&key, value)?,
            "num-clusters" => self.num_clusters = parse_num(&key, value)?,
            "j-scales" => self.j_scales = parse_list(&key, value)?,
            "dict-step" => self.dict_step = T::lit(parse_num(&key, value)?),
            "dict-steps" => self.dict_steps = parse_num(&key, value)?,
            "dict-max-halvings" => self.dict_max_halvings = parse_num(&key, value)?,
            "symmetrized" => self.symmetrized = parse_bool(&key, value)?,
            "seed" => self.seed = parse_num(&key, value)?,
            other => return Err(LmlError::config(format!("unknown engine setting `{other}`"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let scales = self.j_scales.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("d", self.d.to_string()),
            ("lambda", fmt_real(self.lambda)),
            ("gamma", fmt_real(self.gamma)),
            ("base-kind", self.base.kind.to_string()),
            ("oasis-c", fmt_real(self.base.aggressiveness)),
            ("base-iterations", self.base.iterations.to_string()),
            ("batch-step", fmt_real(self.base.batch_step)),
            ("pa-eta", fmt_real(self.base.pa_eta)),
            ("eta0", fmt_real(self.solver.eta0)),
            ("backtrack-shrink", fmt_real(self.solver.backtrack_shrink)),
            ("max-iter", self.solver.max_iter.to_string()),
            ("rel-tol", fmt_real(self.solver.rel_tol)),
            ("neighbors", self.mining.neighbors_per_anchor.to_string()),
            ("impostors", self.mining.impostors_per_pair.to_string()),
            ("num-clusters", self.num_clusters.to_string()),
            ("j-scales", scales),
            ("dict-step", fmt_real(self.dict_step)),
            ("dict-steps", self.dict_steps.to_string()),
            ("dict-max-halvings", self.dict_max_halvings.to_string()),
            ("symmetrized", self.symmetrized.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// Raw data of the task currently being observed.
#[derive(Debug, Clone)]
pub struct ActiveTask<T> {
    pub task_id: String,
    pub data: LabeledDataset<T>,
    pub triplets: TripletSet,
}

/// What one task update produced.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport<T> {
    pub task_id: String,
    pub new_task: bool,
    pub triplets: usize,
    pub solver_iterations: usize,
    pub solver_converged: bool,
    pub dictionary_steps: usize,
    pub base_metric: Option<MetricMatrix<T>>,
}

#[derive(Debug, Clone)]
pub struct EngineState<T> {
    config: EngineConfig<T>,
    dictionary: Option<LifelongDictionary<T>>,
    /// Summaries in order of first arrival.
    tasks: Vec<TaskSummary<T>>,
    active: Option<ActiveTask<T>>,
}

impl<T: Real> EngineState<T> {
    pub fn new(config: EngineConfig<T>) -> Result<Self> {
        config.validate()?;
        Ok(EngineState { config, dictionary: None, tasks: Vec::new(), active: None })
    }

    pub fn config(&self) -> &EngineConfig<T> {
        &self.config
    }

    pub fn dictionary(&self) -> Option<&LifelongDictionary<T>> {
        self.dictionary.as_ref()
    }

    /// Number of distinct tasks seen.
    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.tasks.iter().map(|t| t.task_id.as_str())
    }

    pub fn summary(&self, task_id: &str) -> Option<&TaskSummary<T>> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn summaries(&self) -> &[TaskSummary<T>] {
        &self.tasks
    }

    pub fn active(&self) -> Option<&ActiveTask<T>> {
        self.active.as_ref()
    }

    /// Drops the active task's raw samples and target metric.
    pub fn finish_active(&mut self) {
        if let Some(active) = self.active.take() {
            if let Some(s) = self.tasks.iter_mut().find(|t| t.task_id == active.task_id) {
                s.m_star = None;
            }
        }
    }

    /// Feeds a batch for `task_id` and updates that task and the dictionary.
    ///
    /// A new id registers a task. A known id extends the buffered data when
    /// it is the active task; otherwise its old samples are gone and the
    /// buffer restarts from this batch.
    pub fn observe_batch(&mut self, batch: &LabeledDataset<T>, task_id: &str) -> Result<UpdateReport<T>> {
        if let Some(dict) = &self.dictionary {
            ensure_shape(batch.dim() == dict.d_hat(), || {
                format!("batch has {} features, engine expects {}", batch.dim(), dict.d_hat())
            })?;
        }
        if self.dictionary.is_none() {
            let dict = init_dictionary(batch, &self.config.init_config())?;
            info!("initialized dictionary {}x{} from task `{task_id}`", dict.d(), dict.d_hat());
            self.dictionary = Some(dict);
        }

        let mut batch = batch.clone();
        batch.set_task_id(task_id);
        let is_new = self.summary(task_id).is_none();
        let data = match self.active.take() {
            Some(active) if active.task_id == task_id => active.data.concat(&batch)?,
            previous => {
                if let Some(prev) = previous {
                    if let Some(s) = self.tasks.iter_mut().find(|t| t.task_id == prev.task_id) {
                        s.m_star = None;
                    }
                }
                batch
            }
        };
        let triplets = if data.classes().len() < 2 {
            TripletSet::new(Vec::new(), data.len())
        } else {
            mine_triplets(&data, &self.config.mining_config())?
        };
        self.active = Some(ActiveTask { task_id: task_id.to_string(), data, triplets });
        let mut report = self.update_task(task_id)?;
        report.new_task = is_new;
        Ok(report)
    }

    /// Refits the active task: base metric, target, weights, gradient
    /// summary, then dictionary refinement over all stored summaries.
    pub fn update_task(&mut self, task_id: &str) -> Result<UpdateReport<T>> {
        let active = match &self.active {
            Some(a) if a.task_id == task_id => a,
            _ => return Err(LmlError::config(format!("task `{task_id}` has no active data buffer"))),
        };
        let dict = self.dictionary.as_ref().ok_or_else(|| LmlError::config("dictionary not initialized"))?;
        let d = dict.d();
        let kind = self.config.base.kind;
        let existing = self.tasks.iter().position(|t| t.task_id == task_id);
        let w_init = existing.map(|i| self.tasks[i].weights.clone()).unwrap_or_else(|| Array2::eye(d));

        let mut report = UpdateReport {
            task_id: task_id.to_string(),
            new_task: existing.is_none(),
            triplets: active.triplets.len(),
            solver_iterations: 0,
            solver_converged: true,
            dictionary_steps: 0,
            base_metric: None,
        };

        let summary = if active.triplets.is_empty() {
            warn!("task `{task_id}` produced no triplets; keeping its weights and a zero gradient summary");
            TaskSummary {
                task_id: task_id.to_string(),
                kind,
                weights: w_init,
                delta: GradientSummary::zeros(dict.d_hat()),
                m_star: None,
            }
        } else {
            let base_cfg = self.config.base_config();
            let m_t = fit_base(&active.data, &active.triplets, &base_cfg)?;
            let m_star = pa_target(&m_t, &active.data, &active.triplets, &base_cfg)?;
            let (weights, state) = solve_weights(dict, m_star.view(), w_init.view(), &self.config.solver_config())?;
            report.solver_iterations = state.iter;
            report.solver_converged = state.converged;
            let delta = mean_active_gradient(&m_t, &active.data, &active.triplets)?;
            report.base_metric = Some(m_t);
            TaskSummary {
                task_id: task_id.to_string(),
                kind,
                weights,
                delta: GradientSummary { delta, triplet_count: active.triplets.len() },
                m_star: Some(m_star),
            }
        };
        match existing {
            Some(i) => self.tasks[i] = summary,
            None => self.tasks.push(summary),
        }

        if self.config.dict_steps > 0 {
            let cfg = RefineConfig {
                gamma: self.config.gamma,
                step: self.config.dict_step,
                steps: self.config.dict_steps,
                max_halvings: self.config.dict_max_halvings,
                symmetrized: self.config.symmetrized,
            };
            let summaries = &self.tasks;
            let gamma = self.config.gamma;
            let (refined, refine) =
                refine_dictionary_adaptive(dict, summaries, &cfg, |l0| linearized_objective(l0, summaries, gamma))?;
            report.dictionary_steps = refine.accepted_steps;
            self.dictionary = Some(refined);
        }
        Ok(report)
    }

    /// `L0ᵀ W_t L0` for a learned task.
    pub fn task_metric(&self, task_id: &str) -> Result<MetricMatrix<T>> {
        let summary = self.summary(task_id).ok_or_else(|| LmlError::UnknownTask(task_id.to_string()))?;
        let dict = self.dictionary.as_ref().ok_or_else(|| LmlError::UnknownTask(task_id.to_string()))?;
        MetricMatrix::new(dict.compose(summary.weights.view())?, summary.kind)
    }

    /// Writes the versioned checkpoint: config, dictionary and each task's
    /// `W_t`/`Δ_t`. Raw samples and `M_t*` are never written.
    pub fn save_checkpoint(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(out, "[config]")?;
        for (k, v) in self.config.to_pairs() {
            writeln!(out, "{k} = {v}")?;
        }
        writeln!(out, "[dictionary]")?;
        match &self.dictionary {
            Some(dict) => write_matrix(&mut out, dict.view())?,
            None => writeln!(out, "0 0")?,
        }
        writeln!(out, "[tasks] {}", self.tasks.len())?;
        for t in &self.tasks {
            writeln!(out, "task {}", t.task_id)?;
            writeln!(out, "kind {}", t.kind)?;
            writeln!(out, "triplets {}", t.delta.triplet_count)?;
            write_matrix(&mut out, t.weights.view())?;
            write_matrix(&mut out, t.delta.delta.view())?;
        }
        Ok(())
    }

    pub fn load_checkpoint(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let header = next_line(&mut lines, "header")?;
        let version = header
            .strip_prefix(CHECKPOINT_MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| LmlError::Format(format!("not a checkpoint: `{header}`")))?;
        if version != CHECKPOINT_VERSION {
            return Err(LmlError::Format(format!("unsupported checkpoint version {version}")));
        }
        if next_line(&mut lines, "config")?.trim() != "[config]" {
            return Err(LmlError::Format("missing [config] section".into()));
        }
        let mut config = EngineConfig::<T>::default();
        loop {
            let line = next_line(&mut lines, "[dictionary]")?;
            if line.trim() == "[dictionary]" {
                break;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| LmlError::Format(format!("bad config line `{line}`")))?;
            config.set(k, v)?;
        }
        let l0: Array2<T> = read_matrix(&mut lines)?;
        let dictionary = if l0.is_empty() { None } else { Some(LifelongDictionary::new(l0)?) };

        let count_line = next_line(&mut lines, "[tasks]")?;
        let count: usize = count_line
            .strip_prefix("[tasks]")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| LmlError::Format(format!("bad tasks header `{count_line}`")))?;
        let mut tasks = Vec::with_capacity(count);
        for _ in 0..count {
            let task_id = tagged(&next_line(&mut lines, "task")?, "task")?;
            let kind: MetricKind = tagged(&next_line(&mut lines, "kind")?, "kind")?.parse()?;
            let triplet_count = tagged(&next_line(&mut lines, "triplets")?, "triplets")?
                .parse()
                .map_err(|_| LmlError::Format("bad triplet count".into()))?;
            let weights = read_matrix(&mut lines)?;
            let delta = read_matrix(&mut lines)?;
            tasks.push(TaskSummary {
                task_id,
                kind,
                weights,
                delta: GradientSummary { delta, triplet_count },
                m_star: None,
            });
        }
        let state = EngineState { config, dictionary, tasks, active: None };
        if let Some(dict) = &state.dictionary {
            for t in &state.tasks {
                ensure_shape(t.weights.dim() == (dict.d(), dict.d()), || {
                    format!("checkpoint task `{}` has W {:?}", t.task_id, t.weights.dim())
                })?;
                ensure_shape(t.delta.delta.dim() == (dict.d_hat(), dict.d_hat()), || {
                    format!("checkpoint task `{}` has delta {:?}", t.task_id, t.delta.delta.dim())
                })?;
            }
        } else if !state.tasks.is_empty() {
            return Err(LmlError::Format("checkpoint has tasks but no dictionary".into()));
        }
        Ok(state)
    }
}

fn next_line<B: BufRead>(lines: &mut std::io::Lines<B>, what: &str) -> Result<String> {
    lines.next().transpose()?.ok_or_else(|| LmlError::Format(format!("checkpoint truncated before {what}")))
}

fn tagged(line: &str, tag: &str) -> Result<String> {
    line.strip_prefix(tag)
        .and_then(|rest| rest.strip_prefix(' '))
        .map(str::to_string)
        .ok_or_else(|| LmlError::Format(format!("expected `{tag} <value>`, got `{line}`")))
}
