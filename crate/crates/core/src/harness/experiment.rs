use std::time::Instant;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Seeds, Variant};
use crate::data::{self, Dataset, TaskSequence, TestSplit};
use crate::error::{Error, Result, ResultExt};
use crate::metrics::{self, AccuracyMatrix};
use crate::output_head::{init_closed_form, FisherState, HeadConfig, OutputHead};
use crate::rep_learning::RandomLayerStack;

/// Final-layer representations of one task.
#[derive(Debug, Clone)]
pub struct TaskReps {
    pub v_train: Array2<f64>,
    pub y_train: Array2<f64>,
    pub v_test: Array2<f64>,
    pub labels_test: Vec<usize>,
}

/// How task-1 output weights are initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadInit {
    /// Ridge solution on this many randomly chosen task-1 rows.
    Analytic { rows: usize },
    /// Entries drawn from `U[-1, 1]`.
    Random,
}

/// Outcome of one training sequence.
#[derive(Debug, Clone)]
pub struct Trained {
    pub accuracy: AccuracyMatrix,
    pub head: OutputHead,
    /// Mean squared error `‖vβ − y‖²` over task-1 training rows, measured
    /// right after task 1.
    pub task1_loss: f64,
    pub task_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub run_index: usize,
    /// Seeds in effect for this run (ordering seed already offset).
    pub seeds: Seeds,
    pub class_order: Vec<usize>,
    pub accuracy: AccuracyMatrix,
    pub acc: f64,
    pub bwt: Option<f64>,
    pub fwt: Option<f64>,
    pub task1_loss: f64,
    /// SHA-256 of the serialized hidden stack before task 1 and after task T.
    pub stack_digest_before: String,
    pub stack_digest_after: String,
    /// Representation plus head time per task; not reproducible.
    pub task_seconds: Vec<f64>,
    pub config: ExperimentConfig,
}

impl RunResult {
    pub fn weights_unchanged(&self) -> bool {
        self.stack_digest_before == self.stack_digest_after
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn stack_digest(stack: &RandomLayerStack) -> String {
    hex(&Sha256::digest(stack.to_bytes(true)))
}

pub fn build_stack(config: &ExperimentConfig, input_dim: usize, weight_seed: u64) -> Result<RandomLayerStack> {
    RandomLayerStack::new(&config.layer_configs(), input_dim, weight_seed, config.solver, config.tweak_bias)
}

/// Loaded data ready to be split per run.
pub struct Pools {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

impl Pools {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let (train, test) = config.dataset.load()?;
        Ok(Self { train, test })
    }

    pub fn split(&self, config: &ExperimentConfig, ordering_seed: u64) -> Result<TaskSequence> {
        let test = match &self.test {
            Some(t) => TestSplit::Dataset(t),
            None => TestSplit::Fraction(config.dataset.test_fraction),
        };
        data::split_cil(&self.train, config.num_tasks, ordering_seed, test)
    }
}

/// Representations of every task's train and test split.
pub fn represent_tasks(stack: &RandomLayerStack, seq: &TaskSequence, chunk: usize) -> Result<Vec<TaskReps>> {
    seq.tasks
        .iter()
        .enumerate()
        .map(|(t, task)| {
            Ok(TaskReps {
                v_train: stack
                    .represent_chunked(task.x_train.view(), chunk)
                    .context(|| format!("representing task {t} train split"))?,
                y_train: task.y_train.clone(),
                v_test: stack
                    .represent_chunked(task.x_test.view(), chunk)
                    .context(|| format!("representing task {t} test split"))?,
                labels_test: task.labels_test.clone(),
            })
        })
        .collect()
}

pub fn accuracy(head: &OutputHead, v: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let pred = head.predict(v)?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean over rows of `‖vβ − y‖²`.
pub fn squared_loss(head: &OutputHead, v: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<f64> {
    if v.nrows() == 0 {
        return Ok(0.0);
    }
    let r = head.scores(v)? - y;
    Ok(r.mapv(|e| e * e).sum() / v.nrows() as f64)
}

/// Shuffled mini-batch epochs, calling `step` on each batch.
fn run_epochs(
    head: &mut OutputHead,
    v: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    epochs: usize,
    batch: usize,
    rng: &mut ChaCha8Rng,
    mut step: impl FnMut(&mut OutputHead, ArrayView2<'_, f64>, ArrayView2<'_, f64>) -> Result<()>,
) -> Result<()> {
    let mut order: Vec<usize> = (0..v.nrows()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for idx in order.chunks(batch) {
            let vb = v.select(Axis(0), idx);
            let yb = y.select(Axis(0), idx);
            step(head, vb.view(), yb.view())?;
        }
    }
    Ok(())
}

fn initialize(head: &mut OutputHead, task: &TaskReps, init: HeadInit, rng: &mut ChaCha8Rng) -> Result<()> {
    let beta = match init {
        HeadInit::Analytic { rows } => {
            let n = task.v_train.nrows();
            let rows = rows.clamp(1, n.max(1));
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            idx.truncate(rows);
            idx.sort_unstable();
            let v = task.v_train.select(Axis(0), &idx);
            let y = task.y_train.select(Axis(0), &idx);
            init_closed_form(v.view(), y.view(), head.mu())?
        }
        HeadInit::Random => Array2::from_shape_simple_fn((head.width(), head.classes()), || {
            rng.random_range(-1.0..=1.0)
        }),
    };
    head.set_beta(beta)
}

/// Default task-1 initialization for a head configuration.
pub fn default_init(head: &HeadConfig, task1_rows: usize) -> HeadInit {
    HeadInit::Analytic {
        rows: ((task1_rows as f64) * head.init_fraction).ceil() as usize,
    }
}

/// Trains `variant` over the cached representations and fills the accuracy
/// matrix row by row.
pub fn train_sequence(
    variant: Variant,
    reps: &[TaskReps],
    head_cfg: &HeadConfig,
    init: HeadInit,
    shuffle_seed: u64,
) -> Result<Trained> {
    let first = reps
        .first()
        .ok_or_else(|| Error::Argument("no tasks to train".into()))?;
    let width = first.v_train.ncols();
    let classes = first.y_train.ncols();
    let mut head = OutputHead::new(width, classes, head_cfg)?;
    let mut fisher = FisherState::new(width, classes);
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut accuracy = AccuracyMatrix::new();
    let mut task_seconds = Vec::with_capacity(reps.len());
    let mut task1_loss = f64::NAN;
    let (epochs, batch) = (head_cfg.epochs, head_cfg.batch_size);

    for (t, task) in reps.iter().enumerate() {
        let started = Instant::now();
        if t == 0 {
            initialize(&mut head, task, init, &mut rng).context(|| "initializing task 1".to_string())?;
        }
        let v = task.v_train.view();
        let y = task.y_train.view();
        match variant {
            Variant::If2net => run_epochs(&mut head, v, y, epochs, batch, &mut rng, |h, vb, yb| {
                h.sgd_step_orthogonal(vb, yb)
            })?,
            Variant::If2netEwc => {
                let use_penalty = t > 0;
                let fisher_ref = &fisher;
                run_epochs(&mut head, v, y, epochs, batch, &mut rng, |h, vb, yb| {
                    if use_penalty {
                        h.sgd_step_ewc(fisher_ref, vb, yb)
                    } else {
                        h.sgd_step_orthogonal(vb, yb)
                    }
                })?
            }
            Variant::None => run_epochs(&mut head, v, y, epochs, batch, &mut rng, |h, vb, yb| {
                h.sgd_step_plain(vb, yb)
            })?,
            Variant::Joint => {
                let vs: Vec<_> = reps[..=t].iter().map(|r| r.v_train.view()).collect();
                let ys: Vec<_> = reps[..=t].iter().map(|r| r.y_train.view()).collect();
                let v_all = concatenate(Axis(0), &vs).map_err(|e| Error::Argument(e.to_string()))?;
                let y_all = concatenate(Axis(0), &ys).map_err(|e| Error::Argument(e.to_string()))?;
                run_epochs(&mut head, v_all.view(), y_all.view(), epochs, batch, &mut rng, |h, vb, yb| {
                    h.sgd_step_plain(vb, yb)
                })?
            }
        }
        if t == 0 {
            task1_loss = squared_loss(&head, v, y)?;
        }
        match variant {
            Variant::If2net | Variant::If2netEwc => head.finish_task(&mut fisher, v, y)?,
            Variant::None | Variant::Joint => {
                head.finish_task(&mut fisher, Array2::zeros((0, width)).view(), Array2::zeros((0, classes)).view())?
            }
        }
        task_seconds.push(started.elapsed().as_secs_f64());

        let row = reps[..=t]
            .iter()
            .map(|r| accuracy_of(&head, r))
            .collect::<Result<Vec<_>>>()?;
        accuracy.push_row(row)?;
    }
    Ok(Trained {
        accuracy,
        head,
        task1_loss,
        task_seconds,
    })
}

fn accuracy_of(head: &OutputHead, r: &TaskReps) -> Result<f64> {
    accuracy(head, r.v_test.view(), &r.labels_test)
}

/// Test accuracy of a fresh model, built with its own weight seed, trained
/// on each task alone.
pub fn independent_accuracies(
    config: &ExperimentConfig,
    seq: &TaskSequence,
    base_seed: u64,
) -> Result<Vec<f64>> {
    let dim = seq
        .tasks
        .first()
        .map(|t| t.x_train.ncols())
        .ok_or_else(|| Error::Argument("empty task sequence".into()))?;
    let mut out = Vec::with_capacity(seq.len());
    for (t, task) in seq.tasks.iter().enumerate() {
        let stack = build_stack(config, dim, base_seed.wrapping_add(1 + t as u64))?;
        let single = TaskSequence {
            tasks: vec![task.clone()],
            ordering_seed: seq.ordering_seed,
            class_order: seq.class_order.clone(),
        };
        let reps = represent_tasks(&stack, &single, config.tweak_batch)?;
        let init = default_init(&config.head, reps[0].v_train.nrows());
        let trained = train_sequence(Variant::If2net, &reps, &config.head, init, config.seeds.shuffle_seed)
            .context(|| format!("independent model for task {t}"))?;
        out.push(trained.accuracy.rows()[0][0]);
    }
    Ok(out)
}

/// Everything derived from one seeded split: the stack, its cached
/// representations and the independent-model accuracies.
pub struct PreparedRun {
    pub run_index: usize,
    pub seeds: Seeds,
    pub sequence: TaskSequence,
    pub stack: RandomLayerStack,
    pub reps: Vec<TaskReps>,
    pub r_ind: Option<Vec<f64>>,
    pub digest_before: String,
    pub represent_seconds: Vec<f64>,
}

pub fn prepare_run(config: &ExperimentConfig, pools: &Pools, run_index: usize) -> Result<PreparedRun> {
    let seeds = Seeds {
        ordering_seed: config.seeds.ordering_seed.wrapping_add(run_index as u64),
        ..config.seeds
    };
    let sequence = pools.split(config, seeds.ordering_seed)?;
    let stack = build_stack(config, pools.train.dim(), seeds.weight_seed)?;
    let digest_before = stack_digest(&stack);
    let mut reps = Vec::with_capacity(sequence.len());
    let mut represent_seconds = Vec::with_capacity(sequence.len());
    for (t, task) in sequence.tasks.iter().enumerate() {
        let started = Instant::now();
        let single = TaskSequence {
            tasks: vec![task.clone()],
            ordering_seed: sequence.ordering_seed,
            class_order: sequence.class_order.clone(),
        };
        let mut r = represent_tasks(&stack, &single, config.tweak_batch).context(|| format!("task {t}"))?;
        reps.push(r.remove(0));
        represent_seconds.push(started.elapsed().as_secs_f64());
    }
    let r_ind = if config.independent_models && sequence.len() >= 2 {
        Some(independent_accuracies(config, &sequence, seeds.weight_seed)?)
    } else {
        None
    };
    Ok(PreparedRun {
        run_index,
        seeds,
        sequence,
        stack,
        reps,
        r_ind,
        digest_before,
        represent_seconds,
    })
}

/// Trains one variant on a prepared run and scores it.
pub fn finish_run(config: &ExperimentConfig, prepared: &PreparedRun, variant: Variant) -> Result<RunResult> {
    let init = default_init(&config.head, prepared.reps[0].v_train.nrows());
    let trained = train_sequence(variant, &prepared.reps, &config.head, init, prepared.seeds.shuffle_seed)?;
    let mut accuracy = trained.accuracy;
    if let Some(r_ind) = &prepared.r_ind {
        accuracy.set_independent(r_ind.clone())?;
    }
    let acc = metrics::acc(&accuracy)?;
    let bwt = metrics::bwt(&accuracy).ok();
    let fwt = metrics::fwt(&accuracy).ok();
    let task_seconds = trained
        .task_seconds
        .iter()
        .zip(&prepared.represent_seconds)
        .map(|(a, b)| a + b)
        .collect();
    let mut echo = config.clone();
    echo.variant = variant;
    Ok(RunResult {
        variant,
        run_index: prepared.run_index,
        seeds: prepared.seeds,
        class_order: prepared.sequence.class_order.clone(),
        accuracy,
        acc,
        bwt,
        fwt,
        task1_loss: trained.task1_loss,
        stack_digest_before: prepared.digest_before.clone(),
        stack_digest_after: stack_digest(&prepared.stack),
        task_seconds,
        config: echo,
    })
}

/// Runs every configured repetition of `config.variant`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunResult>> {
    run_variants(config, &[config.variant])
}

/// Like [`run_experiment`] but trains several variants on the same splits
/// and representations. Results are ordered by run, then by `variants`.
pub fn run_variants(config: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<RunResult>> {
    config.validate()?;
    let pools = Pools::load(config)?;
    run_variants_on(config, &pools, variants)
}

pub fn run_variants_on(config: &ExperimentConfig, pools: &Pools, variants: &[Variant]) -> Result<Vec<RunResult>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.runs * variants.len());
    for run in 0..config.runs {
        let prepared = prepare_run(config, pools, run).context(|| format!("run {run}"))?;
        for &v in variants {
            out.push(finish_run(config, &prepared, v).context(|| format!("run {run}, variant {v}"))?);
        }
    }
    Ok(out)
}
