//! Experiment runner over the simulator library.
//!
//! Picks a workload source (a built-in scenario, a CSV job trace or a
//! TOML workload file), a policy list, a partitioner and a cluster
//! size, runs every policy under every seed and prints a pooled
//! comparison table. With `--out` each run also writes execution
//! traces, per-user deadline ratios and response-time ECDFs; with
//! `--verify-bounds` the tool checks the fairness bounds against the
//! fluid oracles instead of comparing policies. Exit code 0 means
//! every run and every bound check succeeded.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, ArgGroup, Parser, ValueEnum};
use uwfq_sim::experiment::{run_experiment, verify_bounds, ExperimentReport, ExperimentSpec, WorkloadSource};
use uwfq_sim::model::Cluster;
use uwfq_sim::partition::Partitioner;
use uwfq_sim::policy::{PolicyKind, PolicyOptions};
use uwfq_sim::vt::DEFAULT_GRACE;
use uwfq_sim::workload::{IngestReport, MixedLoadConfig, TinyBurstConfig, TraceRefinement};

/// Batch-cluster scheduling simulator: run one workload under one or
/// more policies and compare response times and deadline fairness.
#[derive(Debug, Parser)]
#[command(
    name = "uwfq",
    version,
    group(ArgGroup::new("source").required(true).args(["scenario", "trace", "workload"]))
)]
struct Cli {
    /// Built-in scenario: 1 = mixed load (bursty frequent users next
    /// to infrequent short-job users), 2 = synchronized tiny-job
    /// bursts.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    scenario: Option<u8>,

    /// CSV job trace (job_id,user_id,submit_ms,task_runtime_ms); needs
    /// --window-start-ms and --window-end-ms.
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,

    /// TOML workload file with a [[jobs]] array and an optional
    /// [weights] table.
    #[arg(long, value_name = "PATH")]
    workload: Option<PathBuf>,

    /// Policy to run: fifo, fair, ujf, cfq or uwfq. Repeat for
    /// several; default is all five.
    #[arg(long = "policy", value_name = "NAME", value_parser = parse_policy)]
    policies: Vec<PolicyKind>,

    /// How stages are cut into tasks.
    #[arg(long, value_enum, default_value_t = PartitionerArg::Static)]
    partitioner: PartitionerArg,

    /// Available-task ratio: target task length in seconds for the
    /// runtime partitioner (ignored by static).
    #[arg(long, default_value_t = 1.0)]
    atr: f64,

    /// Number of cores in the simulated cluster.
    #[arg(long, default_value_t = 32)]
    cores: usize,

    /// RNG seed; repeat to pool several runs (default: 0). Only the
    /// mixed-load scenario draws randomness.
    #[arg(long = "seed", value_name = "N")]
    seeds: Vec<u64>,

    /// Directory for traces, the comparison table, per-user ratios and
    /// ECDFs. Without it only the table is printed.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Split deadline ratios into violations/slacks at r = 1 instead
    /// of r = 0 (numerators unchanged).
    #[arg(long)]
    strict_eq23: bool,

    /// Whether cfq stamps deadlines per stage (true) or once per job
    /// (false).
    #[arg(long, value_name = "BOOL", default_value_t = true, action = ArgAction::Set)]
    cfq_stage_granularity: bool,

    /// Revival grace window for uwfq, in resource-seconds.
    #[arg(long, default_value_t = DEFAULT_GRACE, value_name = "RSEC")]
    grace: f64,

    /// Check the fairness bounds (simulated lateness against the fluid
    /// oracles) instead of comparing policies. Revival is disabled for
    /// the check, which models fresh admissions only.
    #[arg(long)]
    verify_bounds: bool,

    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,

    /// Start of the ingest window, in trace milliseconds.
    #[arg(long, value_name = "MS", help_heading = "Trace refinement")]
    window_start_ms: Option<u64>,

    /// End of the ingest window (exclusive), in trace milliseconds.
    #[arg(long, value_name = "MS", help_heading = "Trace refinement")]
    window_end_ms: Option<u64>,

    /// Drop jobs longer than this multiple of the in-window median
    /// runtime.
    #[arg(long, default_value_t = 10.0, help_heading = "Trace refinement")]
    cutoff: f64,

    /// Scale kept work to this fraction of cores x window length.
    #[arg(long, default_value_t = 1.0, help_heading = "Trace refinement")]
    utilization: f64,

    /// Scenario 1: length of the arrival window, seconds.
    #[arg(long, help_heading = "Scenario overrides")]
    horizon: Option<f64>,

    /// Scenario 1: users submitting occasional short jobs.
    #[arg(long, help_heading = "Scenario overrides")]
    infrequent_users: Option<usize>,

    /// Scenario 1: users submitting periodic job bursts.
    #[arg(long, help_heading = "Scenario overrides")]
    frequent_users: Option<usize>,

    /// Scenario 1: mean gap between an infrequent user's jobs, seconds.
    #[arg(long, help_heading = "Scenario overrides")]
    mean_gap: Option<f64>,

    /// Scenario 1: gap between bursts, seconds.
    #[arg(long, help_heading = "Scenario overrides")]
    burst_period: Option<f64>,

    /// Scenario 1: jobs per burst.
    #[arg(long, help_heading = "Scenario overrides")]
    burst_size: Option<usize>,

    /// Scenario 2: number of users.
    #[arg(long, help_heading = "Scenario overrides")]
    users: Option<usize>,

    /// Scenario 2: tiny jobs per user.
    #[arg(long, help_heading = "Scenario overrides")]
    jobs_per_user: Option<usize>,

    /// Scenario 2: offset between consecutive users' bursts, seconds.
    #[arg(long, help_heading = "Scenario overrides")]
    start_delay_step: Option<f64>,
}

/// How stages are split into tasks.
#[derive(Debug, Clone, Copy, ValueEnum)]
enum PartitionerArg {
    /// min(cores, units) tasks, whole work units only.
    Static,
    /// tasks of roughly --atr seconds, sized from the stage's estimate.
    Runtime,
}

fn parse_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    s.parse().map_err(|e: uwfq_sim::SimError| e.to_string())
}

impl Cli {
    fn source(&self) -> Result<WorkloadSource> {
        self.reject_stray_overrides()?;
        if let Some(n) = self.scenario {
            return Ok(if n == 1 {
                let mut c = MixedLoadConfig::default();
                if let Some(v) = self.horizon {
                    c.horizon = v;
                }
                if let Some(v) = self.infrequent_users {
                    c.infrequent_users = v;
                }
                if let Some(v) = self.frequent_users {
                    c.frequent_users = v;
                }
                if let Some(v) = self.mean_gap {
                    c.mean_gap = v;
                }
                if let Some(v) = self.burst_period {
                    c.burst_period = v;
                }
                if let Some(v) = self.burst_size {
                    c.burst_size = v;
                }
                WorkloadSource::MixedLoad(c)
            } else {
                let mut c = TinyBurstConfig::default();
                if let Some(v) = self.users {
                    c.users = v;
                }
                if let Some(v) = self.jobs_per_user {
                    c.jobs_per_user = v;
                }
                if let Some(v) = self.start_delay_step {
                    c.start_delay_step = v;
                }
                WorkloadSource::TinyBursts(c)
            });
        }
        if let Some(path) = &self.trace {
            let (Some(start), Some(end)) = (self.window_start_ms, self.window_end_ms) else {
                bail!("--trace needs --window-start-ms and --window-end-ms");
            };
            let refinement = TraceRefinement::new(start, end, self.cutoff, self.utilization)?;
            return Ok(WorkloadSource::Trace { path: path.clone(), refinement });
        }
        let path = self.workload.clone().expect("clap guarantees one source");
        Ok(WorkloadSource::File(path))
    }

    /// Flags that tune one source are errors with any other, so a typo
    /// never silently changes nothing.
    fn reject_stray_overrides(&self) -> Result<()> {
        let mixed = [
            ("--horizon", self.horizon.is_some()),
            ("--infrequent-users", self.infrequent_users.is_some()),
            ("--frequent-users", self.frequent_users.is_some()),
            ("--mean-gap", self.mean_gap.is_some()),
            ("--burst-period", self.burst_period.is_some()),
            ("--burst-size", self.burst_size.is_some()),
        ];
        let tiny = [
            ("--users", self.users.is_some()),
            ("--jobs-per-user", self.jobs_per_user.is_some()),
            ("--start-delay-step", self.start_delay_step.is_some()),
        ];
        let windows = [
            ("--window-start-ms", self.window_start_ms.is_some()),
            ("--window-end-ms", self.window_end_ms.is_some()),
        ];
        for (flag, given) in mixed {
            if given && self.scenario != Some(1) {
                bail!("{flag} only applies to --scenario 1");
            }
        }
        for (flag, given) in tiny {
            if given && self.scenario != Some(2) {
                bail!("{flag} only applies to --scenario 2");
            }
        }
        for (flag, given) in windows {
            if given && self.trace.is_none() {
                bail!("{flag} only applies to --trace");
            }
        }
        Ok(())
    }

    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::new(self.source()?);
        if !self.policies.is_empty() {
            spec.policies = self.policies.clone();
        }
        spec.partitioner = match self.partitioner {
            PartitionerArg::Static => Partitioner::Static,
            PartitionerArg::Runtime => Partitioner::runtime(self.atr)?,
        };
        spec.cores = self.cores;
        if !self.seeds.is_empty() {
            spec.seeds = self.seeds.clone();
        }
        spec.out_dir = self.out.clone();
        spec.strict_eq23 = self.strict_eq23;
        spec.policy_options = PolicyOptions {
            cfq_stage_granularity: self.cfq_stage_granularity,
            uwfq_grace: self.grace,
        };
        spec.force = self.force;
        Ok(spec)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let spec = cli.spec()?;
    if cli.verify_bounds {
        return check_bounds(&spec);
    }
    let report = run_experiment(&spec).context("experiment failed")?;
    print_report(&spec, &report);
    Ok(())
}

/// Runs the headline policy on every seed and asserts the two fairness
/// bounds, printing the observed margins. Any violation surfaces as an
/// error and a nonzero exit.
fn check_bounds(spec: &ExperimentSpec) -> Result<()> {
    let options = PolicyOptions { uwfq_grace: 0.0, ..spec.policy_options };
    let cluster = Cluster::new(spec.cores)?;
    println!("bound check: {}", spec.source.describe());
    println!("partitioner {}, {} cores", spec.partitioner.label(), spec.cores);
    for &seed in &spec.seeds {
        let (workload, _) = spec.source.build(seed, cluster.resources())?;
        let report = verify_bounds(&workload, &cluster, &spec.partitioner, &options)
            .with_context(|| format!("bound check failed on seed {seed}"))?;
        if report.jobs == 0 {
            println!("seed {seed}: empty workload, bounds hold trivially");
            continue;
        }
        println!(
            "seed {seed}: {} job(s), bound {:.4} s, max lateness {:.4} s, worst slack {:.4} s (lateness) / {:.4} s (fluid order)",
            report.jobs, report.bound, report.max_lateness, report.min_margin_trace, report.min_margin_fluid
        );
    }
    println!("bounds hold on {} seed(s)", spec.seeds.len());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn print_report(spec: &ExperimentSpec, report: &ExperimentReport) {
    println!("source: {}", spec.source.describe());
    println!(
        "partitioner {}, {} cores, seeds {:?}, jobs per seed {:?}",
        spec.partitioner.label(),
        spec.cores,
        spec.seeds,
        report.jobs_per_seed
    );
    if let Some(ingest) = &report.ingest {
        print_ingest(ingest);
    }
    println!();
    println!(
        "{:<8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>6} {:>9} {:>6}",
        "policy", "avg_rt", "0-80%", "80-95%", "95-100%", "dvr", "viol", "dsr", "slack"
    );
    for row in &report.rows {
        println!(
            "{:<8} {:>9} {:>9} {:>9} {:>9} {:>9.4} {:>6} {:>9.4} {:>6}",
            row.policy.name(),
            fmt_opt(row.bands.mean),
            fmt_opt(row.bands.band_0_80),
            fmt_opt(row.bands.band_80_95),
            fmt_opt(row.bands.band_95_100),
            row.ratios.dvr,
            row.ratios.violations,
            row.ratios.dsr,
            row.ratios.slacks
        );
    }

    // The reference runs and gets a row even when not requested, so
    // the ratio columns are interpretable from the table alone.
    println!("deadline ratios are relative to ujf under the same partitioner");

    // A per-class breakdown is only readable for a handful of classes;
    // traces with one class per user get it from the ECDF files.
    let classes = report.rows.iter().map(|r| r.class_mean_rt.len()).max().unwrap_or(0);
    if (2..=8).contains(&classes) {
        println!();
        println!("mean response time by user class:");
        for row in &report.rows {
            let parts: Vec<String> = row
                .class_mean_rt
                .iter()
                .map(|(class, rt)| format!("{class} {rt:.4}"))
                .collect();
            println!("  {:<8} {}", row.policy.name(), parts.join("  "));
        }
    }
    if let Some(dir) = &spec.out_dir {
        println!();
        println!("wrote {}", dir.display());
    }
}

fn print_ingest(ingest: &IngestReport) {
    println!(
        "trace: {} rows, {} jobs ({} in window, {} dropped, {} kept), {} users",
        ingest.rows_total,
        ingest.jobs_total,
        ingest.jobs_in_window,
        ingest.jobs_dropped,
        ingest.jobs_kept,
        ingest.users
    );
    println!(
        "trace: median runtime {:.3} s, scale factor {:.4}, utilization {:.4}, largest user share {:.4}",
        ingest.median_runtime, ingest.scale_factor, ingest.utilization, ingest.largest_user_share
    );
}
