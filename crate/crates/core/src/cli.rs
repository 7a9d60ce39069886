//! Command-line front end.
//!
//! Every setting can come from a `key = value` file given with `--config`;
//! flags on the command line override it. Exit codes: 0 success, 2 bad
//! usage or configuration, 1 failed run.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};
use log::info;

use crate::dataset::LabeledDataset;
use crate::dictionary::init_dictionary;
use crate::engine::{parse_list, EngineConfig, EngineState};
use crate::error::{LmlError, Result};
use crate::eval::{
    knn_error, run_sequence_with_engine, sweep_dimension, sweep_sparsity, write_records, write_report_header,
    ExperimentConfig, SweepPoint,
};
use crate::io::{load_config, load_csv, save_csv};
use crate::synth::{generate_synthetic, SyntheticSpec};

type Engine = EngineState<f64>;

const RUN_KEYS: &[&str] = &["train-frac", "val-frac", "test-frac", "reps", "seeds", "k"];
const SYNTH_KEYS: &[&str] = &[
    "d-hat",
    "d-true",
    "num-tasks",
    "classes-per-task",
    "samples-per-class",
    "noise-sigma",
    "offdiag-density",
    "class-separation",
    "modes-per-class",
];
const FLAG_KEYS: &[&str] = &["timing", "symmetrized"];
const PATH_KEYS: &[&str] = &["output", "checkpoint", "train", "test"];

/// The paper's tuning grid.
const DEFAULT_LAMBDAS: &str = "10,1,0.1,0.01,0.001";
const DEFAULT_DIMS: &str = "2,5,10,15";

#[derive(Debug, Clone, Default)]
struct Settings {
    engine: EngineConfig<f64>,
    exp: ExperimentConfig,
    synth: SyntheticSpec,
    seeds_given: bool,
    data: Vec<PathBuf>,
    values: Option<String>,
    task: Option<String>,
    output: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    train: Option<PathBuf>,
    test: Option<PathBuf>,
}

fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value.trim().parse().map_err(|_| LmlError::config(format!("`{key}`: cannot parse `{value}`")))
}

impl Settings {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let v = value.trim();
        match key.as_str() {
            "train-frac" => self.exp.splits.train = num(&key, v)?,
            "val-frac" => self.exp.splits.validation = num(&key, v)?,
            "test-frac" => self.exp.splits.test = num(&key, v)?,
            "reps" => self.exp.reps = num(&key, v)?,
            "seeds" => {
                self.exp.seeds = parse_list(&key, v)?;
                self.seeds_given = true;
            }
            "k" => self.exp.k = num(&key, v)?,
            "timing" => self.exp.timing = matches!(v.to_ascii_lowercase().as_str(), "true" | "1" | "yes" | "on"),
            "d-hat" => self.synth.d_hat = num(&key, v)?,
            "d-true" => self.synth.d_true = num(&key, v)?,
            "num-tasks" => self.synth.num_tasks = num(&key, v)?,
            "classes-per-task" => self.synth.classes_per_task = num(&key, v)?,
            "samples-per-class" => self.synth.samples_per_class = num(&key, v)?,
            "noise-sigma" => self.synth.noise_sigma = num(&key, v)?,
            "offdiag-density" => self.synth.offdiag_density = num(&key, v)?,
            "class-separation" => self.synth.class_separation = num(&key, v)?,
            "modes-per-class" => self.synth.modes_per_class = num(&key, v)?,
            "data" => self.data = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect(),
            "values" => self.values = Some(v.to_string()),
            "task" => self.task = Some(v.to_string()),
            "output" => self.output = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "train" => self.train = Some(PathBuf::from(v)),
            "test" => self.test = Some(PathBuf::from(v)),
            "seed" => {
                self.engine.set("seed", v)?;
                self.synth.seed = num(&key, v)?;
            }
            _ => self.engine.set(&key, v)?,
        }
        Ok(())
    }

    fn experiment(&self) -> ExperimentConfig {
        let mut exp = self.exp.clone();
        if !self.seeds_given {
            exp.seeds = vec![self.engine.seed];
        }
        exp
    }
}

fn value_arg(key: &'static str) -> Arg {
    Arg::new(key).long(key).value_name("VALUE").num_args(1)
}

fn engine_args() -> Vec<Arg> {
    EngineConfig::<f64>::KEYS
        .iter()
        .map(|&k| if k == "symmetrized" { Arg::new(k).long(k).action(ArgAction::SetTrue) } else { value_arg(k) })
        .collect()
}

fn run_args() -> Vec<Arg> {
    let mut args: Vec<Arg> = RUN_KEYS.iter().map(|&k| value_arg(k)).collect();
    args.push(Arg::new("timing").long("timing").action(ArgAction::SetTrue).help("Record wall-clock seconds"));
    args
}

fn data_arg() -> Arg {
    Arg::new("data")
        .long("data")
        .value_name("CSV")
        .num_args(1..)
        .action(ArgAction::Append)
        .help("Task datasets, in arrival order")
}

fn output_arg(help: &'static str) -> Arg {
    Arg::new("output").long("output").short('o').value_name("PATH").help(help)
}

fn config_arg() -> Arg {
    Arg::new("config").long("config").value_name("FILE").help("`key = value` defaults")
}

fn command() -> Command {
    let sweep = |name: &'static str, about: &'static str, default: &'static str| {
        Command::new(name)
            .about(about)
            .arg(config_arg())
            .arg(data_arg())
            .arg(value_arg("values").help(format!("Comma-separated grid [default: {default}]")))
            .args(engine_args())
            .args(run_args())
            .arg(output_arg("Report file (stdout if absent)"))
    };
    Command::new("lml")
        .about("Lifelong metric learning")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("init-dict")
                .about("Build a dictionary from one task and write it")
                .arg(config_arg())
                .arg(data_arg())
                .args(engine_args())
                .arg(output_arg("Dictionary file (stdout if absent)")),
        )
        .subcommand(
            Command::new("train-sequence")
                .about("Learn tasks in order and report per-stage test errors")
                .arg(config_arg())
                .arg(data_arg())
                .args(engine_args())
                .args(run_args())
                .arg(output_arg("Report file (stdout if absent)"))
                .arg(value_arg("checkpoint").help("Also save the final engine of the last repetition here")),
        )
        .subcommand(
            Command::new("eval")
                .about("kNN test error of one task of a checkpoint")
                .arg(config_arg())
                .arg(value_arg("checkpoint").required(true))
                .arg(value_arg("train").required(true).help("Reference samples"))
                .arg(value_arg("test").required(true).help("Query samples"))
                .arg(value_arg("task").help("Task id [default: stem of --train]"))
                .arg(value_arg("k"))
                .arg(output_arg("Report file (stdout if absent)")),
        )
        .subcommand(sweep("sweep-d", "Sweep the dictionary size", DEFAULT_DIMS))
        .subcommand(sweep("sweep-lambda", "Sweep the sparsity weight", DEFAULT_LAMBDAS))
        .subcommand(
            Command::new("synth-gen")
                .about("Write a synthetic task set as CSV files")
                .arg(config_arg())
                .args(SYNTH_KEYS.iter().map(|&k| value_arg(k)))
                .arg(value_arg("seed"))
                .arg(output_arg("Output directory").required(true)),
        )
        .subcommand(
            Command::new("checkpoint")
                .about("Train on whole datasets and save, or inspect a saved engine")
                .subcommand_required(true)
                .subcommand(
                    Command::new("save")
                        .arg(config_arg())
                        .arg(data_arg())
                        .args(engine_args())
                        .arg(output_arg("Checkpoint file").required(true)),
                )
                .subcommand(
                    Command::new("load")
                        .arg(value_arg("checkpoint").required(true))
                        .arg(output_arg("Re-save the loaded state here")),
                ),
        )
}

/// Config file first, then every flag actually given on the command line.
fn settings(m: &ArgMatches) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = string_arg(m, "config") {
        for (k, v) in load_config(path)? {
            s.set(&k, &v)?;
        }
    }
    let keys = EngineConfig::<f64>::KEYS
        .iter()
        .chain(RUN_KEYS)
        .chain(SYNTH_KEYS)
        .chain(PATH_KEYS)
        .chain(&["values", "task", "seed"]);
    for &key in keys {
        if !from_cli(m, key) || FLAG_KEYS.contains(&key) {
            continue;
        }
        if let Some(v) = string_arg(m, key) {
            s.set(key, v)?;
        }
    }
    for &key in FLAG_KEYS {
        if from_cli(m, key) && m.get_flag(key) {
            s.set(key, "true")?;
        }
    }
    if from_cli(m, "data") {
        s.data = m.get_many::<String>("data").into_iter().flatten().map(PathBuf::from).collect();
    }
    s.engine.validate()?;
    Ok(s)
}

/// A string argument, or `None` when this subcommand does not define it.
fn string_arg<'a>(m: &'a ArgMatches, key: &str) -> Option<&'a String> {
    m.try_get_one::<String>(key).ok().flatten()
}

fn from_cli(m: &ArgMatches, key: &str) -> bool {
    m.try_contains_id(key).unwrap_or(false) && m.value_source(key) == Some(ValueSource::CommandLine)
}

fn load_tasks(paths: &[PathBuf], at_least: usize) -> Result<Vec<LabeledDataset<f64>>> {
    if paths.len() < at_least {
        return Err(LmlError::config(format!("need at least {at_least} --data file(s), got {}", paths.len())));
    }
    for p in paths {
        if !p.exists() {
            return Err(LmlError::config(format!("dataset `{}` does not exist", p.display())));
        }
    }
    paths.iter().map(load_csv).collect()
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn save_engine(engine: &Engine, path: &Path) -> Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    engine.save_checkpoint(&mut out)?;
    out.flush()?;
    Ok(())
}

fn load_engine(path: &Path) -> Result<Engine> {
    let file = fs::File::open(path)
        .map_err(|e| LmlError::config(format!("cannot open checkpoint `{}`: {e}", path.display())))?;
    Engine::load_checkpoint(BufReader::new(file))
}

fn cmd_init_dict(s: &Settings) -> Result<()> {
    let tasks = load_tasks(&s.data, 1)?;
    let dict = init_dictionary(&tasks[0], &s.engine.init_config())?;
    let mut out = open_output(s.output.as_deref())?;
    dict.write_to(&mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_train_sequence(s: &Settings) -> Result<()> {
    let tasks = load_tasks(&s.data, 2)?;
    let (report, engine) = run_sequence_with_engine(&tasks, &s.engine, &s.experiment())?;
    let mut out = open_output(s.output.as_deref())?;
    write_report_header(&mut out)?;
    write_records(&report.records, s.engine.lambda, s.engine.d, &mut out)?;
    out.flush()?;
    if let Some(path) = &s.checkpoint {
        save_engine(&engine, path)?;
    }
    for e in &report.lml.per_task_error {
        let base = report.baseline.task(&e.task).map_or(f64::NAN, |b| b.mean);
        info!("{}: lml {:.4} ± {:.4}, base {:.4}", e.task, e.mean, e.std, base);
    }
    info!("average: lml {:.4}, base {:.4}", report.lml.avg_error, report.baseline.avg_error);
    Ok(())
}

fn cmd_eval(s: &Settings) -> Result<()> {
    let engine = load_engine(s.checkpoint.as_deref().expect("required by clap"))?;
    let train = load_tasks(std::slice::from_ref(s.train.as_ref().expect("required by clap")), 1)?.remove(0);
    let test = load_tasks(std::slice::from_ref(s.test.as_ref().expect("required by clap")), 1)?.remove(0);
    let task = s.task.clone().unwrap_or_else(|| train.task_id().to_string());
    let metric = engine.task_metric(&task).map_err(|e| LmlError::config(e.to_string()))?;
    let error = knn_error(&metric, &train, &test, s.exp.k)?;
    let cfg = engine.config();
    let mut out = open_output(s.output.as_deref())?;
    write_report_header(&mut out)?;
    writeln!(out, "{}\t{task}\t0\t{error}\t0\t{}\t{}", engine.task_count(), cfg.lambda, cfg.d)?;
    out.flush()?;
    Ok(())
}

/// One row per grid point; failed points get `nan` and are logged.
fn write_sweep(points: &[SweepPoint], s: &Settings, stage: usize, dimension: bool, out: &mut dyn Write) -> Result<()> {
    write_report_header(&mut *out)?;
    for p in points {
        let (lambda, d) = if dimension { (s.engine.lambda, p.value as usize) } else { (p.value, s.engine.d) };
        let (error, seconds) = match &p.outcome {
            Ok(r) => (r.lml.avg_error, r.lml.train_seconds),
            Err(_) => (f64::NAN, 0.0),
        };
        writeln!(out, "{stage}\tall\tall\t{error}\t{seconds}\t{lambda}\t{d}")?;
    }
    Ok(())
}

fn cmd_sweep(s: &Settings, dimension: bool) -> Result<()> {
    let tasks = load_tasks(&s.data, 2)?;
    let exp = s.experiment();
    exp.validate()?;
    let points = if dimension {
        let values: Vec<usize> = parse_list("values", s.values.as_deref().unwrap_or(DEFAULT_DIMS))?;
        sweep_dimension(&tasks, &values, &s.engine, &exp)
    } else {
        let values: Vec<f64> = parse_list("values", s.values.as_deref().unwrap_or(DEFAULT_LAMBDAS))?;
        sweep_sparsity(&tasks, &values, &s.engine, &exp)
    };
    if points.is_empty() {
        return Err(LmlError::config("empty --values grid"));
    }
    if points.iter().all(|p| p.outcome.is_err()) {
        let msg = points[0].outcome.as_ref().err().cloned().unwrap_or_default();
        return Err(LmlError::Divergence(format!("every sweep point failed; first: {msg}")));
    }
    let mut out = open_output(s.output.as_deref())?;
    write_sweep(&points, s, tasks.len(), dimension, &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_synth_gen(s: &Settings) -> Result<()> {
    let dir = s.output.as_deref().expect("required by clap");
    let (tasks, _) = generate_synthetic::<f64>(&s.synth)?;
    fs::create_dir_all(dir)?;
    for t in &tasks {
        save_csv(t, dir.join(format!("{}.csv", t.task_id())))?;
    }
    info!("wrote {} tasks to {}", tasks.len(), dir.display());
    Ok(())
}

fn cmd_checkpoint_save(s: &Settings) -> Result<()> {
    let tasks = load_tasks(&s.data, 1)?;
    let mut engine = Engine::new(s.engine.clone())?;
    for t in &tasks {
        engine.observe_batch(t, t.task_id())?;
    }
    engine.finish_active();
    save_engine(&engine, s.output.as_deref().expect("required by clap"))
}

fn cmd_checkpoint_load(s: &Settings) -> Result<()> {
    let engine = load_engine(s.checkpoint.as_deref().expect("required by clap"))?;
    let (d, d_hat) = engine.dictionary().map_or((0, 0), |dict| (dict.d(), dict.d_hat()));
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "tasks\t{}\td\t{d}\td_hat\t{d_hat}", engine.task_count())?;
    for id in engine.task_ids() {
        writeln!(stdout, "task\t{id}")?;
    }
    if let Some(path) = &s.output {
        save_engine(&engine, path)?;
    }
    Ok(())
}

fn dispatch(m: &ArgMatches) -> Result<()> {
    match m.subcommand() {
        Some(("init-dict", sub)) => cmd_init_dict(&settings(sub)?),
        Some(("train-sequence", sub)) => cmd_train_sequence(&settings(sub)?),
        Some(("eval", sub)) => cmd_eval(&settings(sub)?),
        Some(("sweep-d", sub)) => cmd_sweep(&settings(sub)?, true),
        Some(("sweep-lambda", sub)) => cmd_sweep(&settings(sub)?, false),
        Some(("synth-gen", sub)) => cmd_synth_gen(&settings(sub)?),
        Some(("checkpoint", sub)) => match sub.subcommand() {
            Some(("save", c)) => cmd_checkpoint_save(&settings(c)?),
            Some(("load", c)) => cmd_checkpoint_load(&settings(c)?),
            _ => unreachable!("subcommand required"),
        },
        _ => unreachable!("subcommand required"),
    }
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn cli_main<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                2
            } else {
                1
            }
        }
    }
}
