//! Non-preemptive discrete-event engine.
//!
//! Events are job arrivals and task finishes, processed in time order
//! with deterministic tie-breaking. After draining all events at one
//! instant the engine holds a dispatch round: while free cores and
//! queued tasks exist, it asks the policy to rank every runnable stage,
//! hands the longest queued task of the winning stage to the lowest
//! numbered free core, updates the running-task counts and repeats, so
//! policies that rank on counts see the effect of each assignment before
//! the next one.
//!
//! Work conservation holds by construction: a dispatch round only ends
//! when cores or queued tasks run out.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::error::{Result, SimError};
use crate::model::{Cluster, ExecutionTrace, Job, TaskRecord, Workload, TIME_EPS};
use crate::partition::Partitioner;
use crate::policy::{Fifo, Policy, StageView};

/// Knobs that are not part of any policy: currently only the fixed
/// bookkeeping cost added to every task's wall time (default 0).
#[derive(Debug, Clone, Copy, Default)]
pub struct EngineOptions {
    pub per_task_overhead: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    // Finishes sort before arrivals at equal times so freed cores and
    // newly runnable stages are all on the books before dispatch.
    TaskFinish { job: usize, stage: usize, core: usize },
    Arrival { job: usize },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    rank: u8,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.rank == other.rank && self.seq == other.seq
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Reversed: BinaryHeap is a max-heap but we pop earliest first.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.rank.cmp(&self.rank))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Queued and running tasks of one submitted stage.
#[derive(Debug)]
struct ActiveStage {
    /// Remaining task durations, ascending; dispatch pops the longest.
    queued: Vec<f64>,
    running: usize,
}

struct EngineState<'a> {
    workload: &'a Workload,
    cluster: &'a Cluster,
    partitioner: &'a Partitioner,
    options: EngineOptions,
    events: BinaryHeap<Event>,
    next_seq: u64,
    free_cores: BTreeSet<usize>,
    /// (job index, stage index) -> queue; BTreeMap iteration order doubles
    /// as the (arrival, job id, stage) tie-break because jobs are sorted.
    active: BTreeMap<(usize, usize), ActiveStage>,
    user_running: Vec<usize>,
    user_of_job: Vec<usize>,
    user_first_arrival: Vec<f64>,
    tasks: Vec<TaskRecord>,
    last_end: Vec<f64>,
}

impl<'a> EngineState<'a> {
    fn push_event(&mut self, time: f64, kind: EventKind) {
        let rank = match kind {
            EventKind::TaskFinish { .. } => 0,
            EventKind::Arrival { .. } => 1,
        };
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(Event { time, rank, seq, kind });
    }

    fn submit_stage(&mut self, policy: &mut dyn Policy, job_idx: usize, stage_idx: usize, now: f64) -> Result<()> {
        let job = &self.workload.jobs()[job_idx];
        let stage = &job.stages[stage_idx];
        policy.on_stage_submit(job, stage_idx, stage.total_work(), now)?;
        let plan = self.partitioner.plan(stage, self.cluster);
        let mut queued: Vec<f64> = plan.tasks().iter().map(|t| t.duration()).collect();
        queued.sort_by(f64::total_cmp);
        self.active.insert((job_idx, stage_idx), ActiveStage { queued, running: 0 });
        Ok(())
    }

    fn dispatch(&mut self, policy: &mut dyn Policy, now: f64) -> Result<()> {
        while !self.free_cores.is_empty() {
            let mut best: Option<(crate::policy::Priority, usize, usize)> = None;
            for (&(job_idx, stage_idx), stage) in &self.active {
                if stage.queued.is_empty() {
                    continue;
                }
                let job = &self.workload.jobs()[job_idx];
                let user = self.user_of_job[job_idx];
                let view = StageView {
                    job_id: &job.id,
                    user_id: &job.user,
                    stage_index: stage_idx,
                    job_arrival: job.arrival,
                    user_first_arrival: self.user_first_arrival[user],
                    stage_running: stage.running,
                    user_running: self.user_running[user],
                    now,
                };
                let key = (policy.priority(&view)?, job_idx, stage_idx);
                let better = match &best {
                    None => true,
                    Some((prio, j, s)) => {
                        (key.0.cmp_keys(prio), key.1, key.2) < (std::cmp::Ordering::Equal, *j, *s)
                    }
                };
                if better {
                    best = Some(key);
                }
            }
            let Some((_, job_idx, stage_idx)) = best else { break };

            let stage = self.active.get_mut(&(job_idx, stage_idx)).expect("candidate exists");
            let duration = stage.queued.pop().expect("candidate has queued tasks");
            stage.running += 1;
            let core = *self.free_cores.iter().next().expect("loop guard");
            self.free_cores.remove(&core);
            let user = self.user_of_job[job_idx];
            self.user_running[user] += 1;

            let job = &self.workload.jobs()[job_idx];
            let end = now + duration + self.options.per_task_overhead;
            self.tasks.push(TaskRecord {
                job: job.id.clone(),
                user: job.user.clone(),
                stage: stage_idx,
                core,
                start: now,
                end,
            });
            self.push_event(end, EventKind::TaskFinish { job: job_idx, stage: stage_idx, core });
        }
        Ok(())
    }
}

/// Runs `workload` under `policy` and returns the full trace. The seed
/// does not influence the engine (it is deterministic); it is recorded
/// in the trace so outputs are attributable to the workload's seed.
pub fn run(
    workload: &Workload,
    cluster: &Cluster,
    partitioner: &Partitioner,
    policy: &mut dyn Policy,
    seed: u64,
) -> Result<ExecutionTrace> {
    run_with(workload, cluster, partitioner, policy, seed, EngineOptions::default())
}

pub fn run_with(
    workload: &Workload,
    cluster: &Cluster,
    partitioner: &Partitioner,
    policy: &mut dyn Policy,
    seed: u64,
    options: EngineOptions,
) -> Result<ExecutionTrace> {
    if !options.per_task_overhead.is_finite() || options.per_task_overhead < 0.0 {
        return Err(SimError::Validation(format!(
            "per-task overhead must be non-negative, got {}",
            options.per_task_overhead
        )));
    }

    let n_jobs = workload.jobs().len();
    let mut user_index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut user_of_job = Vec::with_capacity(n_jobs);
    let mut user_first_arrival = Vec::new();
    for job in workload.jobs() {
        let next = user_index.len();
        let idx = *user_index.entry(job.user.as_str()).or_insert(next);
        if idx == user_first_arrival.len() {
            user_first_arrival.push(job.arrival);
        }
        user_of_job.push(idx);
    }

    let mut state = EngineState {
        workload,
        cluster,
        partitioner,
        options,
        events: BinaryHeap::new(),
        next_seq: 0,
        free_cores: (0..cluster.cores()).collect(),
        active: BTreeMap::new(),
        user_running: vec![0; user_index.len()],
        user_of_job,
        user_first_arrival,
        tasks: Vec::new(),
        last_end: vec![0.0; n_jobs],
    };

    for (idx, job) in workload.jobs().iter().enumerate() {
        state.push_event(job.arrival, EventKind::Arrival { job: idx });
    }

    while let Some(first) = state.events.pop() {
        let mut batch = vec![first];
        while let Some(next) = state.events.peek() {
            if next.time <= batch[0].time + TIME_EPS {
                batch.push(state.events.pop().expect("peeked"));
            } else {
                break;
            }
        }
        // Dispatch at the latest instant of the batch so a task never
        // starts before the finish that freed its core.
        let now = batch.iter().map(|e| e.time).fold(0.0, f64::max);
        for event in batch {
            match event.kind {
                EventKind::TaskFinish { job, stage, core } => {
                    state.free_cores.insert(core);
                    let user = state.user_of_job[job];
                    state.user_running[user] -= 1;
                    state.last_end[job] = state.last_end[job].max(event.time);
                    let done = {
                        let s = state.active.get_mut(&(job, stage)).expect("finishing stage is active");
                        s.running -= 1;
                        s.queued.is_empty() && s.running == 0
                    };
                    if done {
                        state.active.remove(&(job, stage));
                        if stage + 1 < workload.jobs()[job].stages.len() {
                            state.submit_stage(policy, job, stage + 1, now)?;
                        }
                    }
                }
                EventKind::Arrival { job } => {
                    policy.on_job_arrival(&workload.jobs()[job], now)?;
                    state.submit_stage(policy, job, 0, now)?;
                }
            }
        }
        state.dispatch(policy, now)?;

        // Anything still queued must have a running task or a pending
        // event somewhere, otherwise nothing will ever dispatch it.
        if state.events.is_empty() && state.active.values().any(|s| !s.queued.is_empty()) {
            return Err(SimError::Deadlock(now));
        }
    }

    let mut spans = BTreeMap::new();
    for (idx, job) in workload.jobs().iter().enumerate() {
        if job.stages.iter().all(|s| s.units().is_empty()) {
            continue;
        }
        spans.insert(job.id.clone(), (job.arrival, state.last_end[idx]));
    }

    Ok(ExecutionTrace {
        policy: policy.name().to_string(),
        seed,
        cores: cluster.cores(),
        tasks: state.tasks,
        spans,
    })
}

/// Response time of `job` when it runs alone on the cluster with the
/// same partitioner: the denominator of the slowdown metric.
pub fn idle_runtime(job: &Job, cluster: &Cluster, partitioner: &Partitioner) -> Result<f64> {
    let solo = Workload::new(vec![job.clone()])?;
    let trace = run(&solo, cluster, partitioner, &mut Fifo, 0)?;
    trace.response_time(&job.id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Stage;
    use crate::partition::Partitioner;
    use crate::policy::{Cfq, CfqGranularity, Fair, Ujf, Uwfq};

    fn job(id: &str, user: &str, arrival: f64, stages: &[&[f64]]) -> Job {
        let stages = stages.iter().map(|s| Stage::from_durations(s).unwrap()).collect();
        Job::new(id, user, arrival, stages).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9
    }

    #[test]
    fn static_partitioning_serializes_the_long_unit() {
        // One stage {5,1,1,1} on 4 cores: whole units, finishes at 5.
        let w = Workload::new(vec![job("j", "u", 0.0, &[&[5.0, 1.0, 1.0, 1.0]])]).unwrap();
        let cluster = Cluster::new(4).unwrap();
        let trace = run(&w, &cluster, &Partitioner::Static, &mut Fifo, 0).unwrap();
        assert!(close(trace.response_time("j").unwrap(), 5.0));
    }

    #[test]
    fn runtime_partitioning_spreads_the_long_unit() {
        // Same stage with atr = 1: eight 1 s tasks over 4 cores -> 2.0.
        let w = Workload::new(vec![job("j", "u", 0.0, &[&[5.0, 1.0, 1.0, 1.0]])]).unwrap();
        let cluster = Cluster::new(4).unwrap();
        let trace = run(&w, &cluster, &Partitioner::runtime(1.0).unwrap(), &mut Fifo, 0).unwrap();
        assert!(close(trace.response_time("j").unwrap(), 2.0));
    }

    #[test]
    fn small_job_waits_out_static_tasks() {
        // Blue: 4 x 5 s at t=0 fills all cores; red: 4 x 1 s at t=0.1
        // has the better deadline but must wait for blue to finish.
        let w = Workload::new(vec![
            job("blue", "a", 0.0, &[&[5.0, 5.0, 5.0, 5.0]]),
            job("red", "b", 0.1, &[&[1.0, 1.0, 1.0, 1.0]]),
        ])
        .unwrap();
        let cluster = Cluster::new(4).unwrap();
        let mut uwfq = Uwfq::new(4.0, &w).unwrap();
        let trace = run(&w, &cluster, &Partitioner::Static, &mut uwfq, 0).unwrap();
        assert!(close(trace.response_time("red").unwrap(), 5.9));
    }

    #[test]
    fn small_job_slips_between_runtime_tasks() {
        let w = Workload::new(vec![
            job("blue", "a", 0.0, &[&[5.0, 5.0, 5.0, 5.0]]),
            job("red", "b", 0.1, &[&[1.0, 1.0, 1.0, 1.0]]),
        ])
        .unwrap();
        let cluster = Cluster::new(4).unwrap();
        let mut uwfq = Uwfq::new(4.0, &w).unwrap();
        let trace = run(&w, &cluster, &Partitioner::runtime(1.0).unwrap(), &mut uwfq, 0).unwrap();
        // Cores free at t=1; red's four 1 s tasks run [1,2).
        assert!(close(trace.response_time("red").unwrap(), 1.9));
    }

    #[test]
    fn empty_workload_runs_to_an_empty_trace() {
        let w = Workload::new(vec![]).unwrap();
        let trace = run(&w, &Cluster::new(2).unwrap(), &Partitioner::Static, &mut Fifo, 0).unwrap();
        assert!(trace.tasks.is_empty());
        assert!(trace.spans.is_empty());
    }

    #[test]
    fn stages_run_strictly_in_order() {
        let w = Workload::new(vec![job("j", "u", 0.0, &[&[2.0, 2.0], &[1.0]])]).unwrap();
        let trace = run(&w, &Cluster::new(4).unwrap(), &Partitioner::Static, &mut Fifo, 0).unwrap();
        let stage1_start = trace
            .tasks
            .iter()
            .filter(|t| t.stage == 1)
            .map(|t| t.start)
            .fold(f64::INFINITY, f64::min);
        let stage0_end = trace
            .tasks
            .iter()
            .filter(|t| t.stage == 0)
            .map(|t| t.end)
            .fold(0.0, f64::max);
        assert!(stage1_start >= stage0_end - 1e-9);
        assert!(close(trace.response_time("j").unwrap(), 3.0));
    }

    #[test]
    fn idle_runtime_of_tiny_single_unit_job() {
        let j = job("t", "u", 3.0, &[&[0.9]]);
        let rt = idle_runtime(&j, &Cluster::new(32).unwrap(), &Partitioner::Static).unwrap();
        assert!(close(rt, 0.9));
    }

    #[test]
    fn same_seed_same_bytes() {
        let mk = || {
            Workload::new(vec![
                job("a1", "a", 0.0, &[&[2.0, 1.0], &[0.5]]),
                job("b1", "b", 0.5, &[&[1.5, 1.5]]),
                job("a2", "a", 1.0, &[&[3.0]]),
            ])
            .unwrap()
        };
        let cluster = Cluster::new(2).unwrap();
        let t1 = run(&mk(), &cluster, &Partitioner::Static, &mut Ujf, 7).unwrap();
        let t2 = run(&mk(), &cluster, &Partitioner::Static, &mut Ujf, 7).unwrap();
        assert_eq!(format!("{:?}", t1.tasks), format!("{:?}", t2.tasks));
        assert_eq!(format!("{:?}", t1.spans), format!("{:?}", t2.spans));
    }

    #[test]
    fn per_task_overhead_stretches_wall_time() {
        let w = Workload::new(vec![job("j", "u", 0.0, &[&[1.0, 1.0]])]).unwrap();
        let cluster = Cluster::new(1).unwrap();
        let opts = EngineOptions { per_task_overhead: 0.25 };
        let trace = run_with(&w, &cluster, &Partitioner::Static, &mut Fifo, 0, opts).unwrap();
        // One core, static keeps both units in one task: 2.0 + 0.25.
        assert!(close(trace.response_time("j").unwrap(), 2.25));
    }

    #[test]
    fn cores_never_idle_while_tasks_queue() {
        let w = Workload::new(vec![
            job("a1", "a", 0.0, &[&[1.0, 1.0, 1.0, 1.0, 1.0]]),
            job("b1", "b", 0.5, &[&[2.0, 2.0]]),
        ])
        .unwrap();
        let cluster = Cluster::new(2).unwrap();
        for policy in [0, 1, 2] {
            let trace = match policy {
                0 => run(&w, &cluster, &Partitioner::Static, &mut Fair, 0).unwrap(),
                1 => run(&w, &cluster, &Partitioner::Static, &mut Ujf, 0).unwrap(),
                _ => {
                    let mut cfq = Cfq::new(2.0, CfqGranularity::Stage).unwrap();
                    run(&w, &cluster, &Partitioner::Static, &mut cfq, 0).unwrap()
                }
            };
            // Total busy core time must equal total work (overhead 0).
            let busy: f64 = trace.tasks.iter().map(|t| t.duration()).sum();
            assert!(close(busy, w.total_work()));
            // No overlap per core.
            let mut by_core: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
            for t in &trace.tasks {
                by_core.entry(t.core).or_default().push((t.start, t.end));
            }
            for (_, mut spans) in by_core {
                spans.sort_by(|a, b| a.0.total_cmp(&b.0));
                for w in spans.windows(2) {
                    assert!(w[1].0 >= w[0].1 - 1e-9);
                }
            }
        }
    }
}
