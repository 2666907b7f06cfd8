//! Core domain types: work units, stages, jobs, the cluster, and the
//! execution traces a simulation produces.
//!
//! A job is a linear chain of stages; a stage is a multiset of atomic
//! work units measured in seconds of one core. The "slot time" of a job
//! is the sum of all its unit durations, i.e. how long the job would run
//! on a single core. All times are `f64` seconds.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Result, SimError};

/// Absolute tolerance for comparing simulation times, in seconds.
pub const TIME_EPS: f64 = 1e-9;

/// One atomic piece of work. Runs on one core, never preempted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkUnit {
    duration: f64,
}

impl WorkUnit {
    pub fn new(duration: f64) -> Result<Self> {
        if duration.is_finite() && duration > 0.0 {
            Ok(Self { duration })
        } else {
            Err(SimError::Validation(format!(
                "work unit duration must be positive and finite, got {duration}"
            )))
        }
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }
}

/// A stage: a bag of work units that may run in parallel. The next stage
/// of the job starts only when every unit of this one has finished.
#[derive(Debug, Clone)]
pub struct Stage {
    units: Vec<WorkUnit>,
    /// Runtime estimate handed to the partitioner. Defaults to the exact
    /// total work; a multiplicative error factor can skew it to model
    /// imperfect estimators.
    estimated_runtime: f64,
}

impl Stage {
    pub fn new(units: Vec<WorkUnit>) -> Result<Self> {
        if units.is_empty() {
            return Err(SimError::Validation("stage has no work units".into()));
        }
        let total = units.iter().map(WorkUnit::duration).sum();
        Ok(Self { units, estimated_runtime: total })
    }

    pub fn from_durations(durations: &[f64]) -> Result<Self> {
        Self::new(durations.iter().map(|&d| WorkUnit::new(d)).collect::<Result<_>>()?)
    }

    pub fn units(&self) -> &[WorkUnit] {
        &self.units
    }

    /// Sum of all unit durations, in core-seconds.
    pub fn total_work(&self) -> f64 {
        self.units.iter().map(WorkUnit::duration).sum()
    }

    pub fn estimated_runtime(&self) -> f64 {
        self.estimated_runtime
    }

    /// Scales the runtime estimate while leaving the real work untouched.
    pub fn apply_estimation_error(&mut self, factor: f64) {
        self.estimated_runtime = self.total_work() * factor;
    }
}

/// A job: who owns it, when it arrives, and its chain of stages.
#[derive(Debug, Clone)]
pub struct Job {
    pub id: String,
    pub user: String,
    pub arrival: f64,
    pub stages: Vec<Stage>,
}

impl Job {
    pub fn new(id: impl Into<String>, user: impl Into<String>, arrival: f64, stages: Vec<Stage>) -> Result<Self> {
        let id = id.into();
        let user = user.into();
        if !arrival.is_finite() || arrival < 0.0 {
            return Err(SimError::Validation(format!("job `{id}` has invalid arrival {arrival}")));
        }
        if stages.is_empty() {
            return Err(SimError::Validation(format!("job `{id}` has no stages")));
        }
        if id.is_empty() || user.is_empty() {
            return Err(SimError::Validation("job and user ids must be non-empty".into()));
        }
        Ok(Self { id, user, arrival, stages })
    }

    /// Slot time: total single-core runtime of the whole job.
    pub fn slot_time(&self) -> f64 {
        self.stages.iter().map(Stage::total_work).sum()
    }
}

/// The simulated cluster: a fixed pool of identical cores.
#[derive(Debug, Clone, Copy)]
pub struct Cluster {
    cores: usize,
}

impl Cluster {
    pub fn new(cores: usize) -> Result<Self> {
        if cores == 0 {
            return Err(SimError::Validation("cluster needs at least one core".into()));
        }
        Ok(Self { cores })
    }

    pub fn cores(&self) -> usize {
        self.cores
    }

    pub fn resources(&self) -> f64 {
        self.cores as f64
    }
}

/// A validated set of jobs, sorted by (arrival, job id), plus optional
/// per-user scheduling weights (default 1).
#[derive(Debug, Clone)]
pub struct Workload {
    jobs: Vec<Job>,
    weights: BTreeMap<String, f64>,
}

impl Workload {
    pub fn new(jobs: Vec<Job>) -> Result<Self> {
        Self::with_weights(jobs, BTreeMap::new())
    }

    pub fn with_weights(mut jobs: Vec<Job>, weights: BTreeMap<String, f64>) -> Result<Self> {
        let mut seen = HashSet::new();
        for job in &jobs {
            if !seen.insert(job.id.clone()) {
                return Err(SimError::Validation(format!("duplicate job id `{}`", job.id)));
            }
        }
        for (user, w) in &weights {
            if !w.is_finite() || *w <= 0.0 {
                return Err(SimError::Validation(format!("user `{user}` has invalid weight {w}")));
            }
        }
        jobs.sort_by(|a, b| a.arrival.total_cmp(&b.arrival).then_with(|| a.id.cmp(&b.id)));
        Ok(Self { jobs, weights })
    }

    pub fn jobs(&self) -> &[Job] {
        &self.jobs
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn weight(&self, user: &str) -> f64 {
        self.weights.get(user).copied().unwrap_or(1.0)
    }

    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.weights
    }

    /// Largest job slot time in the workload (0 when empty).
    pub fn max_slot_time(&self) -> f64 {
        self.jobs.iter().map(Job::slot_time).fold(0.0, f64::max)
    }

    pub fn total_work(&self) -> f64 {
        self.jobs.iter().map(Job::slot_time).sum()
    }

    /// Distinct users in first-arrival order.
    pub fn users(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for job in &self.jobs {
            if seen.insert(job.user.as_str()) {
                out.push(job.user.as_str());
            }
        }
        out
    }

    pub fn apply_estimation_error(&mut self, factor: f64) {
        for job in &mut self.jobs {
            for stage in &mut job.stages {
                stage.apply_estimation_error(factor);
            }
        }
    }
}

/// One task as actually executed: a contiguous slice of core time.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub job: String,
    pub user: String,
    pub stage: usize,
    pub core: usize,
    pub start: f64,
    pub end: f64,
}

impl TaskRecord {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Full record of one simulation run.
#[derive(Debug, Clone)]
pub struct ExecutionTrace {
    pub policy: String,
    pub seed: u64,
    pub cores: usize,
    pub tasks: Vec<TaskRecord>,
    /// job id -> (arrival = first stage submit time, last task end).
    pub spans: BTreeMap<String, (f64, f64)>,
}

impl ExecutionTrace {
    /// Response time of one job: last task end minus arrival.
    pub fn response_time(&self, job: &str) -> Result<f64> {
        let (start, end) = self
            .spans
            .get(job)
            .ok_or_else(|| SimError::IncompleteJob(job.to_string()))?;
        Ok(end - start)
    }

    pub fn finish_time(&self, job: &str) -> Result<f64> {
        let (_, end) = self
            .spans
            .get(job)
            .ok_or_else(|| SimError::IncompleteJob(job.to_string()))?;
        Ok(*end)
    }
}
