//! A desk-scale multi-task trainer that reproduces the loss trade-off
//! phenomena the law describes.
//!
//! Teacher networks generate noisy regression targets per task; one shared
//! student (tanh trunk, per-task scalar heads) trains with SGD on batches
//! whose examples are drawn from the tasks by a multinomial over the
//! sampling ratios. Sweeping the ratio grid and recording per-task
//! validation losses yields the same kind of trade-off sweeps the law is
//! fitted to: small tasks show U-shaped curves and unbalanced grids produce
//! Pareto-dominated allocations.
//!
//! Everything is deterministic given the config: independent ChaCha streams
//! are derived per (master seed, replicate seed, purpose, index), so the
//! datasets, initialization, and validation sets are shared across grid
//! points and only the batch sampling differs.
//!
//! This module is `f64` only; training in `f32` changes the phenomenology
//! near convergence.

pub mod net;
pub mod sharpness;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Observation;
use crate::rng;

pub use net::{Mlp, ParamSubset};
pub use sharpness::{default_step, sharpness, sharpness_masked, SharpnessEstimate};

/// Salt for teacher parameter draws.
pub const SALT_TEACHER: u64 = 1;
/// Salt for training-set draws.
pub const SALT_DATA: u64 = 2;
/// Salt for student initialization draws.
pub const SALT_INIT: u64 = 3;
/// Salt for validation-set draws.
pub const SALT_VAL: u64 = 4;
/// Salt for batch task/example sampling draws.
pub const SALT_SAMPLING: u64 = 5;

/// One task: a name, a training-set size in examples, and optionally a
/// pinned teacher seed (two tasks pinning the same seed share a teacher).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub train_size: usize,
    /// When set, the teacher is drawn from this seed alone, independent of
    /// the master seed and replicate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_seed: Option<u64>,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, train_size: usize) -> Self {
        TaskSpec {
            name: name.into(),
            train_size,
            teacher_seed: None,
        }
    }
}

fn default_hidden() -> usize {
    64
}
fn default_steps() -> usize {
    8000
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    0.15
}
fn default_noise() -> f64 {
    0.15
}
fn default_val_size() -> usize {
    1000
}
fn default_input_dim() -> usize {
    4
}

/// Full simulation configuration. The defaults reproduce the documented
/// collapse phenomenology; `grid` rows are per-task sampling ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub tasks: Vec<TaskSpec>,
    pub grid: Vec<Vec<f64>>,
    /// Replicate seeds; sweep medians are taken across them.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Initial learning rate; decays linearly to 0 over the run.
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Target noise applied to training and validation targets alike.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_val_size")]
    pub val_size: usize,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
}

impl SimConfig {
    /// Validates sizes, ratios, and the grid shape.
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::EmptyInput("config has no tasks".into()));
        }
        for (i, task) in self.tasks.iter().enumerate() {
            if task.train_size == 0 {
                return Err(Error::domain(format!(
                    "task `{}` has an empty training set",
                    task.name
                )));
            }
            if self.tasks[..i].iter().any(|t| t.name == task.name) {
                return Err(Error::domain(format!("duplicate task name `{}`", task.name)));
            }
        }
        if self.grid.is_empty() {
            return Err(Error::EmptyInput("config has an empty ratio grid".into()));
        }
        for (idx, point) in self.grid.iter().enumerate() {
            if point.len() != self.tasks.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.tasks.len(),
                    got: point.len(),
                });
            }
            let mut total = 0.0;
            for &p in point {
                if !(p.is_finite() && p > 0.0 && p <= 1.0) {
                    return Err(Error::domain(format!(
                        "grid point #{idx} has ratio {p} outside (0, 1]"
                    )));
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::domain(format!(
                    "grid point #{idx} ratios sum to {total}, expected 1"
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::EmptyInput("config has no seeds".into()));
        }
        if self.hidden == 0 || self.batch == 0 || self.val_size == 0 || self.input_dim == 0 {
            return Err(Error::domain(
                "hidden, batch, val_size, and input_dim must be >= 1",
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::domain(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::domain(format!(
                "noise must be non-negative, got {}",
                self.noise
            )));
        }
        Ok(())
    }

    /// Two tasks, 10000 versus 200 examples: the small task's curve is
    /// U-shaped and the sweep's Pareto front collapses.
    pub fn builtin_imbalanced() -> Self {
        SimConfig {
            tasks: vec![TaskSpec::new("hi", 10000), TaskSpec::new("lo", 200)],
            grid: two_task_grid(),
            seeds: (0..10).collect(),
            master_seed: 0,
            hidden: default_hidden(),
            steps: default_steps(),
            batch: default_batch(),
            learning_rate: default_lr(),
            noise: default_noise(),
            val_size: default_val_size(),
            input_dim: default_input_dim(),
        }
    }

    /// Two tasks with equal data: no collapse, the front stays spread.
    pub fn builtin_balanced() -> Self {
        SimConfig {
            tasks: vec![TaskSpec::new("a", 10000), TaskSpec::new("b", 10000)],
            ..SimConfig::builtin_imbalanced()
        }
    }

    /// Four tasks with a steep size pipeline; most grid points waste ratio
    /// on some small task and get dominated.
    pub fn builtin_pipeline() -> Self {
        let tasks = vec![
            TaskSpec::new("t0", 10000),
            TaskSpec::new("t1", 400),
            TaskSpec::new("t2", 200),
            TaskSpec::new("t3", 100),
        ];
        let mut grid = Vec::new();
        for j in 1..4usize {
            for step in 0..9usize {
                let pj = 0.1 + 0.075 * step as f64;
                let mut point = vec![0.1; 4];
                point[j] = pj;
                point[0] = 1.0 - pj - 0.2;
                grid.push(point);
            }
        }
        SimConfig {
            tasks,
            grid,
            seeds: (0..5).collect(),
            ..SimConfig::builtin_imbalanced()
        }
    }

    /// Resolves a builtin config by label.
    pub fn builtin(label: &str) -> Result<Self> {
        match label {
            "imbalanced" => Ok(SimConfig::builtin_imbalanced()),
            "balanced" => Ok(SimConfig::builtin_balanced()),
            "pipeline" => Ok(SimConfig::builtin_pipeline()),
            other => Err(Error::UnknownPreset {
                label: other.to_string(),
                available: vec![
                    "imbalanced".into(),
                    "balanced".into(),
                    "pipeline".into(),
                ],
            }),
        }
    }
}

fn two_task_grid() -> Vec<Vec<f64>> {
    (1..=9)
        .map(|i| {
            let p = i as f64 / 10.0;
            vec![p, 1.0 - p]
        })
        .collect()
}

/// One trained cell: a grid point under one replicate seed.
#[derive(Debug, Clone, Serialize)]
pub struct CellRecord {
    pub grid_index: usize,
    pub seed: u64,
    pub ratios: Vec<f64>,
    /// Per-task MSE on the held-out sets.
    pub val_losses: Vec<f64>,
    /// Per-task MSE on the full training sets.
    pub train_losses: Vec<f64>,
    /// True when training produced non-finite parameters or losses; such
    /// cells are excluded from the sweep medians.
    pub diverged: bool,
}

/// A full sweep: every grid point trained under every seed.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub task_names: Vec<String>,
    pub train_sizes: Vec<usize>,
    pub grid: Vec<Vec<f64>>,
    pub cells: Vec<CellRecord>,
    /// Per grid point, per task: median validation loss across the seeds
    /// whose cells did not diverge.
    pub median_val_losses: Vec<Vec<f64>>,
}

impl SweepResult {
    /// Flattens the medians into observation rows (the fitter's input).
    /// Data sizes convert to millions; ratios must lie in the open (0, 1).
    pub fn to_observations(&self) -> Result<Vec<Observation<f64>>> {
        let mut out = Vec::new();
        for (gi, point) in self.grid.iter().enumerate() {
            for (ti, name) in self.task_names.iter().enumerate() {
                out.push(Observation::new(
                    name.clone(),
                    self.train_sizes[ti] as f64 / 1e6,
                    point[ti],
                    self.median_val_losses[gi][ti],
                )?);
            }
        }
        Ok(out)
    }
}

/// The per-task datasets a training run worked with.
#[derive(Debug, Clone)]
pub struct TaskData {
    /// Row-major `train_size x input_dim` inputs, one entry per task.
    pub train_xs: Vec<Vec<f64>>,
    pub train_ys: Vec<Vec<f64>>,
    pub val_xs: Vec<Vec<f64>>,
    pub val_ys: Vec<Vec<f64>>,
}

/// A trained cell together with the student and its data, for probing.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: CellRecord,
    pub student: Mlp,
    pub data: TaskData,
}

/// Per-seed immutable context: teachers, datasets, and the initial student.
struct Replicate {
    data: TaskData,
    student0: Mlp,
}

fn build_replicate(config: &SimConfig, seed: u64) -> Replicate {
    let master = config.master_seed;
    let teachers: Vec<Mlp> = config
        .tasks
        .iter()
        .enumerate()
        .map(|(i, task)| {
            let mut stream = match task.teacher_seed {
                Some(pinned) => rng::derive_stream(pinned, &[SALT_TEACHER]),
                None => rng::derive_stream(master, &[seed, SALT_TEACHER, i as u64]),
            };
            Mlp::teacher(config.input_dim, config.hidden, &mut stream)
        })
        .collect();

    let draw_set = |teacher: &Mlp, count: usize, stream: &mut rand_chacha::ChaCha8Rng| {
        let mut xs = vec![0.0; count * config.input_dim];
        let mut ys = vec![0.0; count];
        for row in 0..count {
            let x = &mut xs[row * config.input_dim..(row + 1) * config.input_dim];
            for v in x.iter_mut() {
                *v = rng::normal(stream);
            }
            ys[row] = teacher.predict(x, 0) + config.noise * rng::normal(stream);
        }
        (xs, ys)
    };

    let mut data = TaskData {
        train_xs: Vec::new(),
        train_ys: Vec::new(),
        val_xs: Vec::new(),
        val_ys: Vec::new(),
    };
    for (i, task) in config.tasks.iter().enumerate() {
        let mut data_stream = rng::derive_stream(master, &[seed, SALT_DATA, i as u64]);
        let (xs, ys) = draw_set(&teachers[i], task.train_size, &mut data_stream);
        data.train_xs.push(xs);
        data.train_ys.push(ys);
        let mut val_stream = rng::derive_stream(master, &[seed, SALT_VAL, i as u64]);
        let (xs, ys) = draw_set(&teachers[i], config.val_size, &mut val_stream);
        data.val_xs.push(xs);
        data.val_ys.push(ys);
    }

    let mut init_stream = rng::derive_stream(master, &[seed, SALT_INIT]);
    let student0 = Mlp::student(
        config.input_dim,
        config.hidden,
        config.tasks.len(),
        &mut init_stream,
    );

    Replicate { data, student0 }
}

fn per_task_loss(net: &Mlp, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Vec<f64> {
    xs.iter()
        .zip(ys)
        .enumerate()
        .map(|(task, (x, y))| {
            let tasks = vec![task; y.len()];
            net.loss(x, &tasks, y)
        })
        .collect()
}

/// SGD over multinomially sampled batches; returns the record and the
/// trained student.
fn train_in_replicate(
    config: &SimConfig,
    replicate: &Replicate,
    ratios: &[f64],
    seed: u64,
    grid_index: usize,
) -> (CellRecord, Mlp) {
    let mut student = replicate.student0.clone();
    let mut sampling =
        rng::derive_stream(config.master_seed, &[seed, SALT_SAMPLING, grid_index as u64]);

    let mut cum = Vec::with_capacity(ratios.len());
    let mut acc = 0.0;
    for &r in ratios {
        acc += r;
        cum.push(acc);
    }

    let mut batch_xs = vec![0.0; config.batch * config.input_dim];
    let mut batch_tasks = vec![0usize; config.batch];
    let mut batch_ys = vec![0.0; config.batch];
    let mut flat = student.to_vec();

    for step in 0..config.steps {
        for row in 0..config.batch {
            let u = rng::uniform01(&mut sampling);
            let task = cum.iter().position(|&c| u < c).unwrap_or(ratios.len() - 1);
            let size = config.tasks[task].train_size;
            let idx = ((rng::uniform01(&mut sampling) * size as f64) as usize).min(size - 1);
            let src =
                &replicate.data.train_xs[task][idx * config.input_dim..(idx + 1) * config.input_dim];
            batch_xs[row * config.input_dim..(row + 1) * config.input_dim].copy_from_slice(src);
            batch_tasks[row] = task;
            batch_ys[row] = replicate.data.train_ys[task][idx];
        }
        let (_, grad) = student.loss_grad(&batch_xs, &batch_tasks, &batch_ys);
        let lr = config.learning_rate * (1.0 - step as f64 / config.steps as f64);
        for (w, g) in flat.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
        student.from_vec(&flat).expect("layout is fixed");
    }

    let val_losses = per_task_loss(&student, &replicate.data.val_xs, &replicate.data.val_ys);
    let train_losses =
        per_task_loss(&student, &replicate.data.train_xs, &replicate.data.train_ys);
    let diverged = !student.is_finite()
        || val_losses.iter().any(|v| !v.is_finite())
        || train_losses.iter().any(|v| !v.is_finite());

    let record = CellRecord {
        grid_index,
        seed,
        ratios: ratios.to_vec(),
        val_losses,
        train_losses,
        diverged,
    };
    (record, student)
}

/// Trains one cell at the given ratios (the config's own grid is ignored;
/// batch sampling is keyed as grid index 0). Returns the record, the trained
/// student, and the datasets, so curvature probes can reuse them.
pub fn train_once(config: &SimConfig, ratios: &[f64], seed: u64) -> Result<TrainOutcome> {
    let mut single = config.clone();
    single.grid = vec![ratios.to_vec()];
    single.seeds = vec![seed];
    single.validate()?;
    let replicate = build_replicate(&single, seed);
    let (record, student) = train_in_replicate(&single, &replicate, ratios, seed, 0);
    Ok(TrainOutcome {
        record,
        student,
        data: replicate.data,
    })
}

/// Runs the full grid-by-seed sweep and aggregates medians.
pub fn run_sweep(config: &SimConfig) -> Result<SweepResult> {
    config.validate()?;
    let mut cells = Vec::with_capacity(config.grid.len() * config.seeds.len());
    for &seed in &config.seeds {
        let replicate = build_replicate(config, seed);
        for (gi, point) in config.grid.iter().enumerate() {
            let (record, _) = train_in_replicate(config, &replicate, point, seed, gi);
            cells.push(record);
        }
    }

    let mut median_val_losses = Vec::with_capacity(config.grid.len());
    for gi in 0..config.grid.len() {
        let mut per_task = Vec::with_capacity(config.tasks.len());
        for ti in 0..config.tasks.len() {
            let mut values: Vec<f64> = cells
                .iter()
                .filter(|c| c.grid_index == gi && !c.diverged)
                .map(|c| c.val_losses[ti])
                .collect();
            if values.is_empty() {
                return Err(Error::Divergence {
                    message: format!("every seed diverged at grid point #{gi}"),
                    best: Vec::new(),
                });
            }
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = values.len();
            let median = if n % 2 == 1 {
                values[n / 2]
            } else {
                0.5 * (values[n / 2 - 1] + values[n / 2])
            };
            per_task.push(median);
        }
        median_val_losses.push(per_task);
    }

    Ok(SweepResult {
        task_names: config.tasks.iter().map(|t| t.name.clone()).collect(),
        train_sizes: config.tasks.iter().map(|t| t.train_size).collect(),
        grid: config.grid.clone(),
        cells,
        median_val_losses,
    })
}
