//! Dispatch policies. The engine asks the active policy to rank every
//! runnable stage each time a core frees up; the stage with the smallest
//! priority wins it.
//!
//! Policies see arrivals and stage submissions through hooks so the two
//! virtual-time based policies (`cfq`, `uwfq`) can keep their clocks up
//! to date, while `fifo`, `fair` and `ujf` rank purely from the counts
//! the engine passes in.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::str::FromStr;

use crate::error::{Result, SimError};
use crate::model::{Job, Workload, TIME_EPS};
use crate::vt::GlobalVt;

/// Dispatch priority; smaller wins. Up to three lexicographic keys so a
/// policy can rank on a primary value and break ties on secondary ones.
/// The engine appends (job arrival, job id, stage index) as final
/// tie-breakers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priority {
    keys: [f64; 3],
}

impl Priority {
    pub fn single(k: f64) -> Self {
        Self { keys: [k, 0.0, 0.0] }
    }

    pub fn pair(k1: f64, k2: f64) -> Self {
        Self { keys: [k1, k2, 0.0] }
    }

    pub fn triple(k1: f64, k2: f64, k3: f64) -> Self {
        Self { keys: [k1, k2, k3] }
    }

    pub fn keys(&self) -> &[f64; 3] {
        &self.keys
    }

    pub fn cmp_keys(&self, other: &Self) -> Ordering {
        for (a, b) in self.keys.iter().zip(other.keys.iter()) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        Ordering::Equal
    }
}

/// What the engine knows about one runnable stage when asking for its
/// priority.
#[derive(Debug, Clone, Copy)]
pub struct StageView<'a> {
    pub job_id: &'a str,
    pub user_id: &'a str,
    pub stage_index: usize,
    pub job_arrival: f64,
    /// Arrival of the user's first job in the workload.
    pub user_first_arrival: f64,
    /// Tasks of this stage currently occupying cores.
    pub stage_running: usize,
    /// Tasks of this user (across all its jobs) currently occupying cores.
    pub user_running: usize,
    pub now: f64,
}

pub trait Policy {
    fn name(&self) -> &'static str;

    /// Called once when a job arrives, before its first stage is queued.
    fn on_job_arrival(&mut self, _job: &Job, _now: f64) -> Result<()> {
        Ok(())
    }

    /// Called when a stage becomes runnable (first stage at arrival,
    /// later stages when their predecessor completes). `stage_slot_time`
    /// is the stage's total work before partitioning.
    fn on_stage_submit(&mut self, _job: &Job, _stage_index: usize, _stage_slot_time: f64, _now: f64) -> Result<()> {
        Ok(())
    }

    /// Ranks one runnable stage. Must be a pure function of the view and
    /// the policy's current bookkeeping.
    fn priority(&self, view: &StageView) -> Result<Priority>;
}

/// First in, first out over job arrival times.
pub struct Fifo;

impl Policy for Fifo {
    fn name(&self) -> &'static str {
        "fifo"
    }

    fn priority(&self, view: &StageView) -> Result<Priority> {
        Ok(Priority::single(view.job_arrival))
    }
}

/// Stage-level fair sharing: the stage with the fewest running tasks
/// goes first, which equalizes running task counts across stages.
pub struct Fair;

impl Policy for Fair {
    fn name(&self) -> &'static str {
        "fair"
    }

    fn priority(&self, view: &StageView) -> Result<Priority> {
        Ok(Priority::single(view.stage_running as f64))
    }
}

/// User-job fair sharing: equalize across users first, then across the
/// chosen user's stages; users who showed up earlier break ties.
pub struct Ujf;

impl Policy for Ujf {
    fn name(&self) -> &'static str {
        "ujf"
    }

    fn priority(&self, view: &StageView) -> Result<Priority> {
        Ok(Priority::triple(
            view.user_running as f64,
            view.stage_running as f64,
            view.user_first_arrival,
        ))
    }
}

/// Single-level virtual clock: advances at `R / N` per wall second while
/// `N` registered flows are virtually unfinished, and stands still when
/// idle. Flow deadlines are `V + slot_time` at registration.
#[derive(Debug, Clone)]
pub struct SingleVt {
    resources: f64,
    v: f64,
    t_previous: f64,
    /// Deadlines of virtually unfinished flows, ascending.
    flows: Vec<f64>,
}

impl SingleVt {
    pub fn new(resources: f64) -> Result<Self> {
        if !resources.is_finite() || resources <= 0.0 {
            return Err(SimError::Validation(format!("resources must be positive, got {resources}")));
        }
        Ok(Self { resources, v: 0.0, t_previous: 0.0, flows: Vec::new() })
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    /// Rolls the clock to `t`, retiring flows whose deadlines fall inside
    /// the elapsed interval at their exact crossing instants.
    pub fn advance(&mut self, t: f64) -> Result<()> {
        if t < self.t_previous - TIME_EPS {
            return Err(SimError::NonMonotonicClock { t, t_previous: self.t_previous });
        }
        let t = t.max(self.t_previous);
        while let Some(&d) = self.flows.first() {
            let rate = self.resources / self.flows.len() as f64;
            let crossing = self.t_previous + (d - self.v) / rate;
            if crossing > t + TIME_EPS {
                break;
            }
            let crossing = crossing.clamp(self.t_previous, t);
            self.v = d.max(self.v);
            self.t_previous = crossing;
            self.flows.remove(0);
        }
        if !self.flows.is_empty() {
            let rate = self.resources / self.flows.len() as f64;
            self.v += (t - self.t_previous) * rate;
        }
        self.t_previous = t;
        Ok(())
    }

    /// Registers a flow of `slot_time` work and returns its deadline.
    pub fn register(&mut self, slot_time: f64) -> f64 {
        let d = self.v + slot_time;
        let pos = self.flows.partition_point(|&x| x <= d);
        self.flows.insert(pos, d);
        d
    }
}

/// Granularity at which `cfq` assigns deadlines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfqGranularity {
    /// One deadline per job at arrival, shared by all its stages.
    Job,
    /// One deadline per stage at stage submission (the default).
    Stage,
}

/// Classic fair queuing on a single-level virtual clock. Knows nothing
/// about users or, at stage granularity, about which job a stage belongs
/// to.
pub struct Cfq {
    vt: SingleVt,
    granularity: CfqGranularity,
    job_deadlines: HashMap<String, f64>,
    stage_deadlines: HashMap<(String, usize), f64>,
}

impl Cfq {
    pub fn new(resources: f64, granularity: CfqGranularity) -> Result<Self> {
        Ok(Self {
            vt: SingleVt::new(resources)?,
            granularity,
            job_deadlines: HashMap::new(),
            stage_deadlines: HashMap::new(),
        })
    }

    pub fn deadline_of_job(&self, job: &str) -> Option<f64> {
        self.job_deadlines.get(job).copied()
    }
}

impl Policy for Cfq {
    fn name(&self) -> &'static str {
        "cfq"
    }

    fn on_job_arrival(&mut self, job: &Job, now: f64) -> Result<()> {
        if self.granularity == CfqGranularity::Job {
            self.vt.advance(now)?;
            let d = self.vt.register(job.slot_time());
            self.job_deadlines.insert(job.id.clone(), d);
        }
        Ok(())
    }

    fn on_stage_submit(&mut self, job: &Job, stage_index: usize, stage_slot_time: f64, now: f64) -> Result<()> {
        if self.granularity == CfqGranularity::Stage {
            self.vt.advance(now)?;
            let d = self.vt.register(stage_slot_time);
            self.stage_deadlines.insert((job.id.clone(), stage_index), d);
        }
        Ok(())
    }

    fn priority(&self, view: &StageView) -> Result<Priority> {
        let d = match self.granularity {
            CfqGranularity::Job => self.job_deadlines.get(view.job_id).copied(),
            CfqGranularity::Stage => self
                .stage_deadlines
                .get(&(view.job_id.to_string(), view.stage_index))
                .copied(),
        };
        d.map(Priority::single)
            .ok_or_else(|| SimError::MissingDeadline(view.job_id.to_string()))
    }
}

/// User-weighted fair queuing on the two-level virtual clock: dispatch
/// by global deadline.
pub struct Uwfq {
    vt: GlobalVt,
    weights: HashMap<String, f64>,
}

impl Uwfq {
    pub fn new(resources: f64, workload: &Workload) -> Result<Self> {
        Ok(Self {
            vt: GlobalVt::new(resources)?,
            weights: workload.weights().iter().map(|(k, v)| (k.clone(), *v)).collect(),
        })
    }

    /// Overrides the revival grace window (resource-seconds; 0 disables).
    pub fn with_grace(resources: f64, grace: f64, workload: &Workload) -> Result<Self> {
        Ok(Self {
            vt: GlobalVt::with_grace(resources, grace)?,
            weights: workload.weights().iter().map(|(k, v)| (k.clone(), *v)).collect(),
        })
    }

    pub fn vt(&self) -> &GlobalVt {
        &self.vt
    }
}

impl Policy for Uwfq {
    fn name(&self) -> &'static str {
        "uwfq"
    }

    fn on_job_arrival(&mut self, job: &Job, now: f64) -> Result<()> {
        let weight = self.weights.get(&job.user).copied().unwrap_or(1.0);
        self.vt
            .assign_deadline(&job.user, &job.id, now, job.slot_time(), weight)?;
        Ok(())
    }

    fn priority(&self, view: &StageView) -> Result<Priority> {
        self.vt
            .deadline_of(view.job_id)
            .map(Priority::single)
            .ok_or_else(|| SimError::MissingDeadline(view.job_id.to_string()))
    }
}

/// The policies the command line accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    Fifo,
    Fair,
    Ujf,
    Cfq,
    Uwfq,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Fifo,
        PolicyKind::Fair,
        PolicyKind::Ujf,
        PolicyKind::Cfq,
        PolicyKind::Uwfq,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Fifo => "fifo",
            Self::Fair => "fair",
            Self::Ujf => "ujf",
            Self::Cfq => "cfq",
            Self::Uwfq => "uwfq",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fifo" => Ok(Self::Fifo),
            "fair" => Ok(Self::Fair),
            "ujf" => Ok(Self::Ujf),
            "cfq" => Ok(Self::Cfq),
            "uwfq" => Ok(Self::Uwfq),
            other => Err(SimError::Validation(format!(
                "unknown policy `{other}` (expected fifo, fair, ujf, cfq or uwfq)"
            ))),
        }
    }
}

/// Options that alter how a [`PolicyKind`] is instantiated.
#[derive(Debug, Clone, Copy)]
pub struct PolicyOptions {
    pub cfq_stage_granularity: bool,
    /// Revival grace window for `uwfq`, in resource-seconds.
    pub uwfq_grace: f64,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self { cfq_stage_granularity: true, uwfq_grace: crate::vt::DEFAULT_GRACE }
    }
}

pub fn make_policy(kind: PolicyKind, workload: &Workload, resources: f64, opts: &PolicyOptions) -> Result<Box<dyn Policy>> {
    Ok(match kind {
        PolicyKind::Fifo => Box::new(Fifo),
        PolicyKind::Fair => Box::new(Fair),
        PolicyKind::Ujf => Box::new(Ujf),
        PolicyKind::Cfq => Box::new(Cfq::new(
            resources,
            if opts.cfq_stage_granularity { CfqGranularity::Stage } else { CfqGranularity::Job },
        )?),
        PolicyKind::Uwfq => Box::new(Uwfq::with_grace(resources, opts.uwfq_grace, workload)?),
    })
}
