//! Turns a stage's work units into the tasks the engine dispatches.
//!
//! Two strategies:
//!
//! * static: one task per unit up to the core count, balanced with a
//!   longest-processing-time greedy; units are never split.
//! * runtime: targets `ceil(estimated_runtime / atr)` tasks so every task
//!   stays close to the configured average task runtime `atr`; units
//!   longer than `atr` are first cut into equal pieces no longer than
//!   `atr`, which caps the makespan skew of the plan at `2 * atr`.

use crate::error::{Result, SimError};
use crate::model::{Cluster, Stage, WorkUnit};

/// Target average task runtime for runtime partitioning, in seconds.
#[derive(Debug, Clone, Copy)]
pub struct AtrConfig {
    atr: f64,
}

impl AtrConfig {
    pub fn new(atr: f64) -> Result<Self> {
        if !atr.is_finite() || atr <= 0.0 {
            return Err(SimError::Validation(format!("atr must be positive, got {atr}")));
        }
        Ok(Self { atr })
    }

    pub fn atr(&self) -> f64 {
        self.atr
    }
}

/// One schedulable task: pieces of work units that run back to back on a
/// single core.
#[derive(Debug, Clone, Default)]
pub struct PlannedTask {
    pieces: Vec<f64>,
    duration: f64,
}

impl PlannedTask {
    pub fn pieces(&self) -> &[f64] {
        &self.pieces
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    fn push(&mut self, piece: f64) {
        self.pieces.push(piece);
        self.duration += piece;
    }
}

/// The tasks a stage got split into.
#[derive(Debug, Clone)]
pub struct PartitionPlan {
    tasks: Vec<PlannedTask>,
}

impl PartitionPlan {
    pub fn tasks(&self) -> &[PlannedTask] {
        &self.tasks
    }

    pub fn total_work(&self) -> f64 {
        self.tasks.iter().map(PlannedTask::duration).sum()
    }

    pub fn max_task(&self) -> f64 {
        self.tasks.iter().map(PlannedTask::duration).fold(0.0, f64::max)
    }
}

/// Which partitioning strategy a simulation run uses.
#[derive(Debug, Clone, Copy)]
pub enum Partitioner {
    Static,
    Runtime(AtrConfig),
}

impl Partitioner {
    pub fn runtime(atr: f64) -> Result<Self> {
        Ok(Self::Runtime(AtrConfig::new(atr)?))
    }

    pub fn plan(&self, stage: &Stage, cluster: &Cluster) -> PartitionPlan {
        match self {
            Self::Static => static_partition(stage, cluster),
            Self::Runtime(cfg) => runtime_partition(stage, *cfg),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Static => "static".to_string(),
            Self::Runtime(cfg) => format!("runtime(atr={})", cfg.atr()),
        }
    }
}

/// Greedy longest-processing-time packing of `pieces` into `n` tasks:
/// place each piece, largest first, onto the least-loaded task. Ties go
/// to the lowest task index, so plans are deterministic.
fn lpt_pack(mut pieces: Vec<f64>, n: usize) -> Vec<PlannedTask> {
    debug_assert!(n >= 1);
    pieces.sort_by(|a, b| b.total_cmp(a));
    let mut tasks = vec![PlannedTask::default(); n];
    for piece in pieces {
        let target = tasks
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.duration.total_cmp(&b.duration))
            .map(|(i, _)| i)
            .expect("n >= 1 tasks");
        tasks[target].push(piece);
    }
    tasks
}

/// Static partitioning: `min(cores, units)` tasks, whole units only.
pub fn static_partition(stage: &Stage, cluster: &Cluster) -> PartitionPlan {
    let n = cluster.cores().min(stage.units().len()).max(1);
    let pieces = stage.units().iter().map(WorkUnit::duration).collect();
    PartitionPlan { tasks: lpt_pack(pieces, n) }
}

/// Runtime partitioning: aim for tasks of roughly `atr` seconds.
///
/// The task count comes from the stage's *estimated* runtime; the pieces
/// come from its real units, so a wrong estimate shifts granularity but
/// never loses work. Not capped by the core count: extra tasks queue and
/// let the scheduler hand out finer-grained slices.
pub fn runtime_partition(stage: &Stage, cfg: AtrConfig) -> PartitionPlan {
    let atr = cfg.atr();
    let n = ceil_div_time(stage.estimated_runtime(), atr).max(1);
    let mut pieces = Vec::with_capacity(stage.units().len());
    for unit in stage.units() {
        let d = unit.duration();
        let k = ceil_div_time(d, atr).max(1);
        if k == 1 {
            pieces.push(d);
        } else {
            // Equal pieces; the last one absorbs the rounding residue so
            // the split conserves the unit's duration exactly.
            let piece = d / k as f64;
            let mut used = 0.0;
            for _ in 0..k - 1 {
                pieces.push(piece);
                used += piece;
            }
            pieces.push(d - used);
        }
    }
    PartitionPlan { tasks: lpt_pack(pieces, n).into_iter().filter(|t| !t.pieces.is_empty()).collect() }
}

/// `ceil(work / atr)` with a guard against floating-point noise right at
/// a multiple of `atr` (e.g. 2.0 / 1.0 must give 2, not 3).
fn ceil_div_time(work: f64, atr: f64) -> usize {
    ((work / atr) - 1e-9).ceil().max(0.0) as usize
}

/// Lower bound on how far task coalescing may shrink a stage's task
/// count: starting from `initial` tasks, never merge below what keeps
/// average task runtime at `atr`.
pub fn coalesce_floor(initial: usize, total_runtime: f64, atr: f64) -> usize {
    let by_runtime = ceil_div_time(total_runtime, atr).max(1);
    initial.min(by_runtime)
}
