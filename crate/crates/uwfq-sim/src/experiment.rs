//! Experiment runner: compose a workload source with a policy sweep,
//! simulate every (policy, seed) pair, and emit traces, a comparison
//! table, per-user ratio exports and response-time ECDFs under a stable
//! directory layout.
//!
//! The comparison metrics (DVR/DSR) need a reference run, which is the
//! `ujf` policy on the same workload, partitioner and cluster; it is
//! added to the sweep automatically when missing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::engine::{self, EngineOptions};
use crate::error::{Result, SimError};
use crate::fluid::{user_job_share_fluid, user_sequential_fluid};
use crate::metrics::{bands, deadline_ratios, ecdf, ratio_summary, Bands, RatioSummary};
use crate::model::{Cluster, ExecutionTrace, Workload};
use crate::partition::Partitioner;
use crate::policy::{make_policy, PolicyKind, PolicyOptions};
use crate::workload::{
    ingest_trace, load_workload, scenario_mixed_load_with, scenario_tiny_bursts_with, user_class,
    IngestReport, MixedLoadConfig, TinyBurstConfig, TraceRefinement,
};

/// Where the jobs come from.
#[derive(Debug, Clone)]
pub enum WorkloadSource {
    MixedLoad(MixedLoadConfig),
    TinyBursts(TinyBurstConfig),
    Trace { path: PathBuf, refinement: TraceRefinement },
    File(PathBuf),
    /// A pre-built workload, used directly (tests, library callers).
    Inline(Workload),
}

impl WorkloadSource {
    /// Materializes the workload for one seed. Only the mixed-load
    /// scenario actually consumes the seed; the other sources are fixed.
    pub fn build(&self, seed: u64, resources: f64) -> Result<(Workload, Option<IngestReport>)> {
        match self {
            Self::MixedLoad(config) => Ok((scenario_mixed_load_with(config, seed)?, None)),
            Self::TinyBursts(config) => Ok((scenario_tiny_bursts_with(config)?, None)),
            Self::Trace { path, refinement } => {
                let (w, report) = ingest_trace(path, refinement, resources)?;
                Ok((w, Some(report)))
            }
            Self::File(path) => Ok((load_workload(path)?, None)),
            Self::Inline(w) => Ok((w.clone(), None)),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::MixedLoad(c) => format!(
                "mixed-load scenario (horizon {}s, {} infrequent + {} frequent users, burst {} every {}s)",
                c.horizon, c.infrequent_users, c.frequent_users, c.burst_size, c.burst_period
            ),
            Self::TinyBursts(c) => format!(
                "tiny-burst scenario ({} users x {} jobs, delay step {}s)",
                c.users, c.jobs_per_user, c.start_delay_step
            ),
            Self::Trace { path, refinement } => format!(
                "trace {} (window [{}, {}) ms, cutoff {}x, utilization {})",
                path.display(),
                refinement.window_start_ms,
                refinement.window_end_ms,
                refinement.cutoff,
                refinement.utilization
            ),
            Self::File(path) => format!("workload file {}", path.display()),
            Self::Inline(w) => format!("inline workload ({} jobs)", w.jobs().len()),
        }
    }
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub source: WorkloadSource,
    pub policies: Vec<PolicyKind>,
    pub partitioner: Partitioner,
    pub cores: usize,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    pub strict_eq23: bool,
    pub policy_options: PolicyOptions,
    pub engine_options: EngineOptions,
    pub force: bool,
}

impl ExperimentSpec {
    pub fn new(source: WorkloadSource) -> Self {
        Self {
            source,
            policies: PolicyKind::ALL.to_vec(),
            partitioner: Partitioner::Static,
            cores: 32,
            seeds: vec![0],
            out_dir: None,
            strict_eq23: false,
            policy_options: PolicyOptions::default(),
            engine_options: EngineOptions::default(),
            force: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(SimError::Validation("experiment needs at least one policy".into()));
        }
        if self.seeds.is_empty() {
            return Err(SimError::Validation("experiment needs at least one seed".into()));
        }
        if self.cores == 0 {
            return Err(SimError::Validation("cluster needs at least one core".into()));
        }
        Ok(())
    }
}

/// Pooled (across seeds) results of one policy.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub policy: PolicyKind,
    /// Mean and percentile-band means of pooled response times.
    pub bands: Bands,
    /// DVR/DSR of pooled per-job ratios against the reference policy.
    pub ratios: RatioSummary,
    /// Pooled mean response time per user class.
    pub class_mean_rt: BTreeMap<String, f64>,
    /// Per-user ratio of pooled mean response times vs the reference.
    pub per_user_ratio: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    /// One row per policy, in sweep order.
    pub rows: Vec<ComparisonRow>,
    pub ingest: Option<IngestReport>,
    pub jobs_per_seed: Vec<usize>,
}

/// One seed's simulations: every policy's trace over the same workload.
struct SeedOutcome {
    workload: Workload,
    ingest: Option<IngestReport>,
    traces: BTreeMap<PolicyKind, ExecutionTrace>,
}

fn run_seed(spec: &ExperimentSpec, policies: &[PolicyKind], seed: u64) -> Result<SeedOutcome> {
    let cluster = Cluster::new(spec.cores)?;
    let (workload, ingest) = spec.source.build(seed, cluster.resources())?;
    let mut traces = BTreeMap::new();
    for &kind in policies {
        let mut policy = make_policy(kind, &workload, cluster.resources(), &spec.policy_options)?;
        let trace = engine::run_with(
            &workload,
            &cluster,
            &spec.partitioner,
            policy.as_mut(),
            seed,
            spec.engine_options,
        )?;
        traces.insert(kind, trace);
    }
    Ok(SeedOutcome { workload, ingest, traces })
}

/// Runs the full sweep and, when `spec.out_dir` is set, writes the
/// output files. Returns the pooled per-policy rows.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let mut policies = spec.policies.clone();
    if !policies.contains(&PolicyKind::Ujf) {
        policies.push(PolicyKind::Ujf);
    }

    // Seeds are independent; run them on their own threads and merge in
    // seed order so the report does not depend on scheduling.
    let policies_ref = &policies;
    let outcomes: Vec<SeedOutcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = spec
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || run_seed(spec, policies_ref, seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::with_capacity(policies.len());
    for &kind in &policies {
        // Pool response times, per-class response times and per-job
        // ratios across seeds.
        let mut rts = Vec::new();
        let mut class_rts: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut ratios = Vec::new();
        let mut user_rt_sums: BTreeMap<String, (f64, f64)> = BTreeMap::new();
        for outcome in &outcomes {
            let trace = &outcome.traces[&kind];
            let reference = &outcome.traces[&PolicyKind::Ujf];
            for job in outcome.workload.jobs() {
                let rt = trace.response_time(&job.id)?;
                rts.push(rt);
                class_rts.entry(user_class(&job.user).to_string()).or_default().push(rt);
                let sums = user_rt_sums.entry(job.user.clone()).or_insert((0.0, 0.0));
                sums.0 += rt;
                sums.1 += reference.response_time(&job.id)?;
            }
            ratios.extend(deadline_ratios(trace, reference)?.into_values());
        }
        let class_mean_rt = class_rts
            .into_iter()
            .map(|(class, values)| {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                (class, mean)
            })
            .collect();
        let per_user_ratio = user_rt_sums
            .into_iter()
            .filter(|(_, (_, r))| *r > 0.0)
            .map(|(user, (t, r))| (user, (t - r) / r))
            .collect();
        rows.push(ComparisonRow {
            policy: kind,
            bands: bands(&rts),
            ratios: ratio_summary(ratios.iter(), spec.strict_eq23),
            class_mean_rt,
            per_user_ratio,
        });
    }

    let report = ExperimentReport {
        rows,
        ingest: outcomes.first().and_then(|o| o.ingest.clone()),
        jobs_per_seed: outcomes.iter().map(|o| o.workload.jobs().len()).collect(),
    };

    if let Some(dir) = &spec.out_dir {
        write_outputs(spec, dir, &outcomes, &report)?;
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn write_outputs(
    spec: &ExperimentSpec,
    dir: &Path,
    outcomes: &[SeedOutcome],
    report: &ExperimentReport,
) -> Result<()> {
    if dir.exists() {
        let occupied = dir.read_dir()?.next().is_some();
        if occupied && !spec.force {
            return Err(SimError::OutputExists(dir.display().to_string()));
        }
    }
    std::fs::create_dir_all(dir)?;

    // Per-seed raw traces.
    for (outcome, &seed) in outcomes.iter().zip(&spec.seeds) {
        let seed_dir = dir.join(format!("seed{seed}"));
        std::fs::create_dir_all(&seed_dir)?;
        for (kind, trace) in &outcome.traces {
            let mut text = String::from("job,user,stage,core,start,end\n");
            for t in &trace.tasks {
                writeln!(text, "{},{},{},{},{:.9},{:.9}", t.job, t.user, t.stage, t.core, t.start, t.end)
                    .expect("string write");
            }
            std::fs::write(seed_dir.join(format!("trace_{}.csv", kind.name())), text)?;
        }
    }

    // Pooled comparison table.
    let mut table = String::from("policy,avg_rt,rt_0_80,rt_80_95,rt_95_100,dvr,violations,dsr,slacks\n");
    for row in &report.rows {
        writeln!(
            table,
            "{},{},{},{},{},{:.6},{},{:.6},{}",
            row.policy.name(),
            fmt_opt(row.bands.mean),
            fmt_opt(row.bands.band_0_80),
            fmt_opt(row.bands.band_80_95),
            fmt_opt(row.bands.band_95_100),
            row.ratios.dvr,
            row.ratios.violations,
            row.ratios.dsr,
            row.ratios.slacks
        )
        .expect("string write");
    }
    std::fs::write(dir.join("comparison.csv"), table)?;

    // Per-user ratios and per-class response-time ECDFs, per policy.
    for row in &report.rows {
        let mut text = String::from("user,ratio\n");
        for (user, ratio) in &row.per_user_ratio {
            writeln!(text, "{user},{ratio:.6}").expect("string write");
        }
        std::fs::write(dir.join(format!("per_user_ratios_{}.csv", row.policy.name())), text)?;
    }
    for &kind in report.rows.iter().map(|r| &r.policy) {
        let mut class_rts: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut all = Vec::new();
        for outcome in outcomes {
            let trace = &outcome.traces[&kind];
            for job in outcome.workload.jobs() {
                let rt = trace.response_time(&job.id)?;
                class_rts.entry(user_class(&job.user).to_string()).or_default().push(rt);
                all.push(rt);
            }
        }
        class_rts.insert("all".to_string(), all);
        for (class, values) in class_rts {
            let mut text = String::from("response_time,fraction\n");
            for (v, frac) in ecdf(&values) {
                writeln!(text, "{v:.6},{frac:.6}").expect("string write");
            }
            std::fs::write(dir.join(format!("ecdf_rt_{}_{class}.csv", kind.name())), text)?;
        }
    }

    // Flat key-value summary.
    let mut summary = String::new();
    writeln!(summary, "source = {}", spec.source.describe()).expect("string write");
    writeln!(summary, "cores = {}", spec.cores).expect("string write");
    writeln!(summary, "partitioner = {}", spec.partitioner.label()).expect("string write");
    writeln!(summary, "seeds = {:?}", spec.seeds).expect("string write");
    writeln!(summary, "jobs_per_seed = {:?}", report.jobs_per_seed).expect("string write");
    writeln!(summary, "strict_eq23 = {}", spec.strict_eq23).expect("string write");
    if let Some(ingest) = &report.ingest {
        writeln!(summary, "trace_rows = {}", ingest.rows_total).expect("string write");
        writeln!(summary, "trace_jobs = {}", ingest.jobs_total).expect("string write");
        writeln!(summary, "trace_jobs_in_window = {}", ingest.jobs_in_window).expect("string write");
        writeln!(summary, "trace_jobs_dropped = {}", ingest.jobs_dropped).expect("string write");
        writeln!(summary, "trace_jobs_kept = {}", ingest.jobs_kept).expect("string write");
        writeln!(summary, "trace_users = {}", ingest.users).expect("string write");
        writeln!(summary, "trace_median_runtime_s = {:.6}", ingest.median_runtime).expect("string write");
        writeln!(summary, "trace_scale_factor = {:.6}", ingest.scale_factor).expect("string write");
        writeln!(summary, "trace_utilization = {:.6}", ingest.utilization).expect("string write");
        writeln!(summary, "trace_largest_user_share = {:.6}", ingest.largest_user_share).expect("string write");
    }
    for row in &report.rows {
        writeln!(summary, "mean_rt_{} = {}", row.policy.name(), fmt_opt(row.bands.mean)).expect("string write");
    }
    std::fs::write(dir.join("summary.txt"), summary)?;
    Ok(())
}

/// Result of checking one workload's fairness bounds.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub jobs: usize,
    /// `max_slot_time / R + 2 × longest task` from the actual trace.
    pub bound: f64,
    /// Largest observed `finish − sequential-fluid finish`.
    pub max_lateness: f64,
    /// Smallest remaining margin of the trace bound (≥ 0 means pass).
    pub min_margin_trace: f64,
    /// Smallest `share-fluid − sequential-fluid` finish gap (≥ 0 means
    /// the sequential model never falls behind the share model).
    pub min_margin_fluid: f64,
}

/// Simulates the workload under the two-level virtual-time policy and
/// checks both fairness bounds:
///
/// * every job's simulated finish exceeds its sequential-fluid finish
///   by at most `L_max / R + 2 × l_max` (longest slot over the cluster
///   rate plus two longest tasks), and
/// * the sequential fluid never finishes a job after the share fluid.
///
/// Returns the observed margins, or a [`SimError::BoundViolation`]
/// naming the first offending job.
pub fn verify_bounds(
    workload: &Workload,
    cluster: &Cluster,
    partitioner: &Partitioner,
    options: &PolicyOptions,
) -> Result<BoundReport> {
    const TOLERANCE: f64 = 1e-6;
    if workload.is_empty() {
        return Ok(BoundReport {
            jobs: 0,
            bound: 0.0,
            max_lateness: 0.0,
            min_margin_trace: f64::INFINITY,
            min_margin_fluid: f64::INFINITY,
        });
    }
    let resources = cluster.resources();
    let mut policy = make_policy(PolicyKind::Uwfq, workload, resources, options)?;
    let trace = engine::run(workload, cluster, partitioner, policy.as_mut(), 0)?;
    let sequential = user_sequential_fluid(workload, resources)?;
    let share = user_job_share_fluid(workload, resources)?;

    let l_max = trace.tasks.iter().map(|t| t.duration()).fold(0.0, f64::max);
    let bound = workload.max_slot_time() / resources + 2.0 * l_max;

    let mut max_lateness = f64::NEG_INFINITY;
    let mut min_margin_trace = f64::INFINITY;
    let mut min_margin_fluid = f64::INFINITY;
    for job in workload.jobs() {
        let finish = trace.finish_time(&job.id)?;
        let f_seq = sequential.finish(&job.id)?;
        let f_share = share.finish(&job.id)?;
        let lateness = finish - f_seq;
        if lateness > bound + TOLERANCE {
            return Err(SimError::BoundViolation { job: job.id.clone(), excess: lateness - bound });
        }
        if f_seq > f_share + TOLERANCE {
            return Err(SimError::BoundViolation { job: job.id.clone(), excess: f_seq - f_share });
        }
        max_lateness = max_lateness.max(lateness);
        min_margin_trace = min_margin_trace.min(bound - lateness);
        min_margin_fluid = min_margin_fluid.min(f_share - f_seq);
    }
    Ok(BoundReport { jobs: workload.jobs().len(), bound, max_lateness, min_margin_trace, min_margin_fluid })
}
