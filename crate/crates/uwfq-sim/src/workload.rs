//! Workload sources: two micro-benchmark scenario generators, a random
//! corpus generator for property tests, a TOML workload-file loader and
//! a CSV trace ingest pipeline with median filtering and utilization
//! scaling.
//!
//! All generators are pure functions of their configuration and seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Deserialize;

use crate::error::{Result, SimError};
use crate::model::{Job, Stage, Workload};

/// Three-stage job shape used by the mixed-load scenario: a serial load
/// step, a four-way parallel compute step and a serial collect step.
/// Runs in 2.25 s on an idle cluster with at least four cores; carries
/// 8.235 core-seconds of work.
pub fn short_job(id: impl Into<String>, user: impl Into<String>, arrival: f64) -> Job {
    let stages = vec![
        Stage::from_durations(&[0.25]).expect("constant durations are valid"),
        Stage::from_durations(&[1.995; 4]).expect("constant durations are valid"),
        Stage::from_durations(&[0.005]).expect("constant durations are valid"),
    ];
    Job::new(id, user, arrival, stages).expect("template job is valid")
}

/// Smaller shape used by the tiny-burst scenario: a serial load step,
/// four chained two-way parallel compute steps and a serial collect
/// step. Runs in 0.9 s on an idle cluster and carries 1.695
/// core-seconds of work.
pub fn tiny_job(id: impl Into<String>, user: impl Into<String>, arrival: f64) -> Job {
    let mut stages = vec![Stage::from_durations(&[0.1]).expect("constant durations are valid")];
    for _ in 0..4 {
        stages.push(Stage::from_durations(&[0.19875; 2]).expect("constant durations are valid"));
    }
    stages.push(Stage::from_durations(&[0.005]).expect("constant durations are valid"));
    Job::new(id, user, arrival, stages).expect("template job is valid")
}

/// Parameters of the mixed-load scenario: a couple of interactive users
/// submitting occasional jobs against batch users that dump a burst of
/// jobs on a fixed period.
#[derive(Debug, Clone)]
pub struct MixedLoadConfig {
    pub horizon: f64,
    pub infrequent_users: usize,
    pub frequent_users: usize,
    /// Mean of the exponential inter-arrival gap of infrequent users.
    pub mean_gap: f64,
    pub burst_period: f64,
    /// Jobs per burst; the default congests 32 cores for several seconds.
    pub burst_size: usize,
}

impl Default for MixedLoadConfig {
    fn default() -> Self {
        Self {
            horizon: 300.0,
            infrequent_users: 2,
            frequent_users: 2,
            mean_gap: 20.0,
            burst_period: 30.0,
            burst_size: 60,
        }
    }
}

impl MixedLoadConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("horizon", self.horizon), ("mean_gap", self.mean_gap), ("burst_period", self.burst_period)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(SimError::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.burst_size == 0 {
            return Err(SimError::Validation("burst_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mixed-load scenario with default parameters.
pub fn scenario_mixed_load(seed: u64) -> Workload {
    scenario_mixed_load_with(&MixedLoadConfig::default(), seed).expect("default config is valid")
}

/// Mixed-load scenario: `infrequent_users` submit short jobs with
/// exponential gaps, `frequent_users` each dump `burst_size` short jobs
/// at 0, `burst_period`, 2·`burst_period`, … up to the horizon.
pub fn scenario_mixed_load_with(config: &MixedLoadConfig, seed: u64) -> Result<Workload> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(1.0 / config.mean_gap).expect("validated mean_gap");
    let mut jobs = Vec::new();

    for u in 1..=config.infrequent_users {
        let user = format!("infrequent-{u}");
        let mut t = gap.sample(&mut rng);
        let mut k = 0usize;
        while t < config.horizon {
            jobs.push(short_job(format!("{user}-j{k:03}"), &user, t));
            k += 1;
            t += gap.sample(&mut rng);
        }
    }

    for u in 1..=config.frequent_users {
        let user = format!("frequent-{u}");
        let mut burst = 0usize;
        let mut t = 0.0;
        while t < config.horizon {
            for j in 0..config.burst_size {
                jobs.push(short_job(format!("{user}-b{burst:02}-j{j:02}"), &user, t));
            }
            burst += 1;
            t = burst as f64 * config.burst_period;
        }
    }

    Workload::new(jobs)
}

/// Parameters of the tiny-burst scenario: several users submit a batch
/// of tiny jobs at once, staggered by a fixed per-user delay.
#[derive(Debug, Clone)]
pub struct TinyBurstConfig {
    pub users: usize,
    pub jobs_per_user: usize,
    pub start_delay_step: f64,
}

impl Default for TinyBurstConfig {
    fn default() -> Self {
        Self { users: 4, jobs_per_user: 25, start_delay_step: 0.1 }
    }
}

/// Tiny-burst scenario with default parameters. Deterministic: the seed
/// is accepted for interface uniformity but nothing is sampled.
pub fn scenario_tiny_bursts(_seed: u64) -> Workload {
    scenario_tiny_bursts_with(&TinyBurstConfig::default()).expect("default config is valid")
}

pub fn scenario_tiny_bursts_with(config: &TinyBurstConfig) -> Result<Workload> {
    if config.users == 0 || config.jobs_per_user == 0 {
        return Err(SimError::Validation("tiny-burst scenario needs at least one user and one job".into()));
    }
    if !config.start_delay_step.is_finite() || config.start_delay_step < 0.0 {
        return Err(SimError::Validation(format!(
            "start_delay_step must be non-negative, got {}",
            config.start_delay_step
        )));
    }
    let mut jobs = Vec::new();
    for u in 0..config.users {
        let user = format!("user-{}", u + 1);
        let delay = u as f64 * config.start_delay_step;
        for j in 0..config.jobs_per_user {
            jobs.push(tiny_job(format!("{user}-j{j:03}"), &user, delay));
        }
    }
    Workload::new(jobs)
}

/// Shape of the random workloads used by the property and acceptance
/// suites: bounded user and job counts, bounded slot times and arrivals.
#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub max_users: usize,
    pub max_jobs_per_user: usize,
    pub min_slot: f64,
    pub max_slot: f64,
    pub max_arrival: f64,
    pub max_stages: usize,
    pub max_units_per_stage: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            max_users: 8,
            max_jobs_per_user: 8,
            min_slot: 0.5,
            max_slot: 20.0,
            max_arrival: 60.0,
            max_stages: 3,
            max_units_per_stage: 4,
        }
    }
}

/// Random workload with default corpus bounds.
pub fn random_workload(seed: u64) -> Workload {
    random_workload_with(&CorpusConfig::default(), seed)
}

pub fn random_workload_with(config: &CorpusConfig, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_users = rng.random_range(1..=config.max_users.max(1));
    let mut jobs = Vec::new();
    for u in 1..=n_users {
        let user = format!("u{u}");
        let n_jobs = rng.random_range(1..=config.max_jobs_per_user.max(1));
        for j in 1..=n_jobs {
            let arrival = rng.random_range(0.0..=config.max_arrival);
            let slot = rng.random_range(config.min_slot..=config.max_slot);
            let stages = random_stages(&mut rng, slot, config.max_stages, config.max_units_per_stage);
            jobs.push(Job::new(format!("{user}-j{j}"), &user, arrival, stages).expect("generated job is valid"));
        }
    }
    Workload::new(jobs).expect("generated ids are unique")
}

/// Splits `slot` seconds of work into random stages and units. Random
/// positive weights are normalized so the total stays exactly `slot`.
fn random_stages(rng: &mut ChaCha8Rng, slot: f64, max_stages: usize, max_units: usize) -> Vec<Stage> {
    let n_stages = rng.random_range(1..=max_stages.max(1));
    let stage_weights: Vec<f64> = (0..n_stages).map(|_| rng.random_range(0.2..1.0)).collect();
    let stage_total: f64 = stage_weights.iter().sum();
    stage_weights
        .iter()
        .map(|w| {
            let stage_slot = slot * w / stage_total;
            let n_units = rng.random_range(1..=max_units.max(1));
            let unit_weights: Vec<f64> = (0..n_units).map(|_| rng.random_range(0.2..1.0)).collect();
            let unit_total: f64 = unit_weights.iter().sum();
            let durations: Vec<f64> = unit_weights.iter().map(|uw| stage_slot * uw / unit_total).collect();
            Stage::from_durations(&durations).expect("normalized durations are positive")
        })
        .collect()
}

/// Strips a trailing `-<digits>` group from a user id, grouping users
/// like `frequent-1`, `frequent-2` into the class `frequent`. Ids
/// without such a suffix form their own class.
pub fn user_class(user: &str) -> &str {
    match user.rfind('-') {
        Some(pos) if pos > 0 && user[pos + 1..].chars().all(|c| c.is_ascii_digit()) && pos + 1 < user.len() => {
            &user[..pos]
        }
        _ => user,
    }
}

#[derive(Debug, Deserialize)]
struct WorkloadFile {
    #[serde(default)]
    weights: BTreeMap<String, f64>,
    #[serde(default)]
    jobs: Vec<JobFile>,
}

#[derive(Debug, Deserialize)]
struct JobFile {
    id: String,
    user: String,
    arrival: f64,
    /// Nested arrays: one inner array of unit durations per stage.
    stages: Vec<Vec<f64>>,
}

/// Loads a workload from a TOML file with a `[weights]` table and a
/// `[[jobs]]` array (id, user, arrival, stages as nested duration
/// arrays).
pub fn load_workload(path: &Path) -> Result<Workload> {
    let text = std::fs::read_to_string(path)?;
    let file: WorkloadFile = toml::from_str(&text)
        .map_err(|e| SimError::Validation(format!("{}: {e}", path.display())))?;
    let mut jobs = Vec::with_capacity(file.jobs.len());
    for j in file.jobs {
        let stages = j
            .stages
            .iter()
            .map(|durations| Stage::from_durations(durations))
            .collect::<Result<Vec<_>>>()?;
        jobs.push(Job::new(j.id, j.user, j.arrival, stages)?);
    }
    if file.weights.is_empty() {
        Workload::new(jobs)
    } else {
        Workload::with_weights(jobs, file.weights)
    }
}

/// Window and refinement parameters for trace ingest.
#[derive(Debug, Clone, Copy)]
pub struct TraceRefinement {
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    /// Jobs longer than `cutoff` times the in-window median runtime are
    /// dropped (applied once, against the initial median).
    pub cutoff: f64,
    /// Target fraction of `R × window length` the kept work is scaled to.
    pub utilization: f64,
}

impl TraceRefinement {
    pub fn new(window_start_ms: u64, window_end_ms: u64, cutoff: f64, utilization: f64) -> Result<Self> {
        if window_end_ms <= window_start_ms {
            return Err(SimError::Validation(format!(
                "window end {window_end_ms} must exceed start {window_start_ms}"
            )));
        }
        if !cutoff.is_finite() || cutoff <= 1.0 {
            return Err(SimError::Validation(format!("cutoff must exceed 1, got {cutoff}")));
        }
        if !utilization.is_finite() || utilization <= 0.0 {
            return Err(SimError::Validation(format!("utilization must be positive, got {utilization}")));
        }
        Ok(Self { window_start_ms, window_end_ms, cutoff, utilization })
    }
}

/// What the ingest pipeline did, for logging and assertions.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub rows_total: usize,
    pub jobs_total: usize,
    pub jobs_in_window: usize,
    pub jobs_dropped: usize,
    pub jobs_kept: usize,
    pub users: usize,
    /// Median total runtime (seconds) of the in-window jobs.
    pub median_runtime: f64,
    pub scale_factor: f64,
    /// Kept work before scaling, in core-seconds.
    pub raw_work: f64,
    /// Kept work after scaling, in core-seconds.
    pub scaled_work: f64,
    /// scaled_work / (R × window length).
    pub utilization: f64,
    /// Fraction of the scaled work owned by the biggest user.
    pub largest_user_share: f64,
}

struct TraceJob {
    user: String,
    submit_ms: u64,
    task_runtimes_ms: Vec<f64>,
}

/// Reads a per-task CSV trace (`job_id,user_id,submit_ms,task_runtime_ms`,
/// with header), keeps jobs submitted inside `[window_start, window_end)`,
/// drops outliers, scales runtimes to the target utilization and shifts
/// arrivals so the first kept job starts at 0. Jobs become single-stage
/// bags of tasks.
pub fn ingest_trace(path: &Path, refinement: &TraceRefinement, resources: f64) -> Result<(Workload, IngestReport)> {
    if !resources.is_finite() || resources <= 0.0 {
        return Err(SimError::Validation(format!("resources must be positive, got {resources}")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_error(None, &e.to_string()))?;

    let mut jobs: BTreeMap<String, TraceJob> = BTreeMap::new();
    let mut rows_total = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| parse_error(e.position(), &e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(SimError::Parse { line, msg: format!("expected 4 fields, got {}", record.len()) });
        }
        rows_total += 1;
        let job_id = record[0].to_string();
        let user_id = record[1].to_string();
        let submit_ms: u64 = record[2]
            .parse()
            .map_err(|_| SimError::Parse { line, msg: format!("bad submit_ms `{}`", &record[2]) })?;
        let runtime_ms: f64 = record[3]
            .parse()
            .map_err(|_| SimError::Parse { line, msg: format!("bad task_runtime_ms `{}`", &record[3]) })?;
        if !runtime_ms.is_finite() || runtime_ms <= 0.0 {
            return Err(SimError::Parse { line, msg: format!("task runtime must be positive, got {runtime_ms}") });
        }
        let entry = jobs.entry(job_id.clone()).or_insert_with(|| TraceJob {
            user: user_id.clone(),
            submit_ms,
            task_runtimes_ms: Vec::new(),
        });
        if entry.user != user_id {
            return Err(SimError::Parse { line, msg: format!("job `{job_id}` appears under two users") });
        }
        if entry.submit_ms != submit_ms {
            return Err(SimError::Parse { line, msg: format!("job `{job_id}` has two submit times") });
        }
        entry.task_runtimes_ms.push(runtime_ms);
    }

    let jobs_total = jobs.len();
    let windowed: Vec<(&String, &TraceJob)> = jobs
        .iter()
        .filter(|(_, j)| j.submit_ms >= refinement.window_start_ms && j.submit_ms < refinement.window_end_ms)
        .collect();
    let jobs_in_window = windowed.len();
    if jobs_in_window == 0 {
        return Err(SimError::EmptyWindow);
    }

    // Outlier cut against the initial (pre-filter) median, applied once.
    let mut runtimes: Vec<f64> = windowed
        .iter()
        .map(|(_, j)| j.task_runtimes_ms.iter().sum::<f64>())
        .collect();
    runtimes.sort_by(f64::total_cmp);
    let median_ms = if runtimes.len() % 2 == 1 {
        runtimes[runtimes.len() / 2]
    } else {
        (runtimes[runtimes.len() / 2 - 1] + runtimes[runtimes.len() / 2]) / 2.0
    };
    let limit_ms = refinement.cutoff * median_ms;
    let kept: Vec<(&String, &TraceJob)> = windowed
        .into_iter()
        .filter(|(_, j)| j.task_runtimes_ms.iter().sum::<f64>() <= limit_ms)
        .collect();
    let jobs_dropped = jobs_in_window - kept.len();
    if kept.is_empty() {
        return Err(SimError::EmptyWindow);
    }

    let raw_work_ms: f64 = kept.iter().map(|(_, j)| j.task_runtimes_ms.iter().sum::<f64>()).sum();
    let window_s = (refinement.window_end_ms - refinement.window_start_ms) as f64 / 1000.0;
    let scale = refinement.utilization * resources * window_s / (raw_work_ms / 1000.0);
    let first_submit = kept.iter().map(|(_, j)| j.submit_ms).min().expect("kept is non-empty");

    let mut user_work: BTreeMap<&str, f64> = BTreeMap::new();
    let mut out_jobs = Vec::with_capacity(kept.len());
    for (id, j) in &kept {
        let arrival = (j.submit_ms - first_submit) as f64 / 1000.0;
        let durations: Vec<f64> = j.task_runtimes_ms.iter().map(|ms| ms / 1000.0 * scale).collect();
        *user_work.entry(j.user.as_str()).or_default() += durations.iter().sum::<f64>();
        let stage = Stage::from_durations(&durations)?;
        out_jobs.push(Job::new(id.as_str(), j.user.as_str(), arrival, vec![stage])?);
    }

    let scaled_work = raw_work_ms / 1000.0 * scale;
    let largest = user_work.values().fold(0.0, |a: f64, &b| a.max(b));
    let report = IngestReport {
        rows_total,
        jobs_total,
        jobs_in_window,
        jobs_dropped,
        jobs_kept: kept.len(),
        users: user_work.len(),
        median_runtime: median_ms / 1000.0,
        scale_factor: scale,
        raw_work: raw_work_ms / 1000.0,
        scaled_work,
        utilization: scaled_work / (resources * window_s),
        largest_user_share: largest / scaled_work,
    };
    Ok((Workload::new(out_jobs)?, report))
}

fn parse_error(position: Option<&csv::Position>, msg: &str) -> SimError {
    SimError::Parse { line: position.map(|p| p.line()).unwrap_or(0), msg: msg.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9
    }

    #[test]
    fn job_templates_have_documented_shapes() {
        let s = short_job("s", "u", 0.0);
        assert!(close(s.slot_time(), 8.235));
        assert_eq!(s.stages.len(), 3);
        let t = tiny_job("t", "u", 0.0);
        assert!(close(t.slot_time(), 1.695));
    }

    #[test]
    fn mixed_load_is_deterministic_per_seed() {
        let a = scenario_mixed_load(11);
        let b = scenario_mixed_load(11);
        let c = scenario_mixed_load(12);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert_ne!(format!("{a:?}"), format!("{c:?}"));
    }

    #[test]
    fn mixed_load_bursts_land_on_the_period_grid() {
        let w = scenario_mixed_load(3);
        let config = MixedLoadConfig::default();
        let mut burst_times: Vec<f64> = w
            .jobs()
            .iter()
            .filter(|j| j.user.starts_with("frequent"))
            .map(|j| j.arrival)
            .collect();
        burst_times.sort_by(f64::total_cmp);
        burst_times.dedup();
        let expected: Vec<f64> = (0..10).map(|k| k as f64 * config.burst_period).collect();
        assert_eq!(burst_times, expected);
        // Every burst carries the full job count for both frequent users.
        for t in &expected {
            let n = w
                .jobs()
                .iter()
                .filter(|j| j.user == "frequent-1" && close(j.arrival, *t))
                .count();
            assert_eq!(n, config.burst_size);
        }
    }

    #[test]
    fn mixed_load_infrequent_arrivals_stay_inside_horizon() {
        for seed in 0..5 {
            let w = scenario_mixed_load(seed);
            for j in w.jobs().iter().filter(|j| j.user.starts_with("infrequent")) {
                assert!(j.arrival >= 0.0 && j.arrival < 300.0);
            }
            assert!(w.jobs().iter().any(|j| j.user == "infrequent-1"));
        }
    }

    #[test]
    fn tiny_bursts_stagger_users_by_fixed_delays() {
        let w = scenario_tiny_bursts(0);
        assert_eq!(w.jobs().len(), 100);
        for (u, delay) in [(1, 0.0), (2, 0.1), (3, 0.2), (4, 0.3)] {
            let user = format!("user-{u}");
            let jobs: Vec<_> = w.jobs().iter().filter(|j| j.user == user).collect();
            assert_eq!(jobs.len(), 25);
            assert!(jobs.iter().all(|j| close(j.arrival, delay)));
        }
    }

    #[test]
    fn corpus_respects_bounds() {
        for seed in 0..20 {
            let w = random_workload(seed);
            let users = w.users().len();
            assert!((1..=8).contains(&users));
            for job in w.jobs() {
                assert!(job.slot_time() >= 0.5 - 1e-9 && job.slot_time() <= 20.0 + 1e-9);
                assert!(job.arrival >= 0.0 && job.arrival <= 60.0);
                assert!(!job.stages.is_empty() && job.stages.len() <= 3);
            }
        }
        let a = random_workload(5);
        let b = random_workload(5);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn user_class_strips_numeric_suffix() {
        assert_eq!(user_class("frequent-1"), "frequent");
        assert_eq!(user_class("infrequent-12"), "infrequent");
        assert_eq!(user_class("u7"), "u7");
        assert_eq!(user_class("team-x"), "team-x");
        assert_eq!(user_class("-3"), "-3");
        assert_eq!(user_class("trailing-"), "trailing-");
    }

    #[test]
    fn workload_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.toml");
        std::fs::write(
            &path,
            r#"
[weights]
alice = 2.0

[[jobs]]
id = "a1"
user = "alice"
arrival = 0.5
stages = [[0.25], [1.0, 1.0]]

[[jobs]]
id = "b1"
user = "bob"
arrival = 0.0
stages = [[2.0]]
"#,
        )
        .unwrap();
        let w = load_workload(&path).unwrap();
        assert_eq!(w.jobs().len(), 2);
        assert!(close(w.weight("alice"), 2.0));
        assert!(close(w.weight("bob"), 1.0));
        assert_eq!(w.jobs()[0].id, "b1"); // sorted by arrival
        assert!(close(w.jobs()[1].slot_time(), 2.25));
    }

    #[test]
    fn workload_file_rejects_bad_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.toml");
        std::fs::write(&path, "jobs = 3").unwrap();
        assert!(load_workload(&path).is_err());
    }

    fn write_trace(rows: &[(&str, &str, u64, f64)]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "job_id,user_id,submit_ms,task_runtime_ms").unwrap();
        for (job, user, submit, runtime) in rows {
            writeln!(f, "{job},{user},{submit},{runtime}").unwrap();
        }
        (dir, path)
    }

    #[test]
    fn ingest_filters_window_drops_outlier_and_scales() {
        // Window [1000, 5000) ms: j_early and j_late fall outside; the
        // outlier (20x the 1000 ms median) is dropped by the 10x cutoff.
        let (_dir, path) = write_trace(&[
            ("j_early", "a", 500, 1000.0),
            ("j1", "a", 1000, 500.0),
            ("j1", "a", 1000, 500.0),
            ("j2", "b", 2000, 1000.0),
            ("j_big", "b", 3000, 20_000.0),
            ("j3", "c", 4000, 1000.0),
            ("j_late", "c", 5000, 1000.0),
        ]);
        let refinement = TraceRefinement::new(1000, 5000, 10.0, 1.0).unwrap();
        let (w, report) = ingest_trace(&path, &refinement, 2.0).unwrap();
        assert_eq!(report.jobs_in_window, 4);
        assert_eq!(report.jobs_dropped, 1);
        assert_eq!(report.jobs_kept, 3);
        assert_eq!(report.users, 3);
        assert!(close(report.median_runtime, 1.0));
        // Kept work 3 core-s over a 4 s window at R=2 -> scale 8/3.
        assert!(close(report.scale_factor, 8.0 / 3.0));
        assert!(close(report.utilization, 1.0));
        assert_eq!(w.jobs().len(), 3);
        // Arrivals shift so the first kept job starts at 0.
        assert!(close(w.jobs()[0].arrival, 0.0));
        assert_eq!(w.jobs()[0].id, "j1");
        assert!(close(w.jobs()[2].arrival, 3.0));
        // j1's two 500 ms tasks scale to 4/3 s each.
        assert!(close(w.jobs()[0].slot_time(), 8.0 / 3.0));
        assert_eq!(w.jobs()[0].stages[0].units().len(), 2);
    }

    #[test]
    fn ingest_rejects_empty_window() {
        let (_dir, path) = write_trace(&[("j1", "a", 100, 1000.0)]);
        let refinement = TraceRefinement::new(1000, 5000, 10.0, 1.0).unwrap();
        assert!(matches!(ingest_trace(&path, &refinement, 2.0), Err(SimError::EmptyWindow)));
    }

    #[test]
    fn ingest_reports_parse_errors_with_line_numbers() {
        let (_dir, path) = write_trace(&[("j1", "a", 1000, 500.0)]);
        std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"j2,b,not_a_number,5\n")
            .unwrap();
        let refinement = TraceRefinement::new(1000, 5000, 10.0, 1.0).unwrap();
        match ingest_trace(&path, &refinement, 2.0) {
            Err(SimError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_conflicting_job_rows() {
        let (_dir, path) = write_trace(&[("j1", "a", 1000, 500.0), ("j1", "b", 1000, 500.0)]);
        let refinement = TraceRefinement::new(1000, 5000, 10.0, 1.0).unwrap();
        assert!(matches!(ingest_trace(&path, &refinement, 2.0), Err(SimError::Parse { .. })));
    }

    #[test]
    fn refinement_validation() {
        assert!(TraceRefinement::new(5, 5, 10.0, 1.0).is_err());
        assert!(TraceRefinement::new(0, 5, 1.0, 1.0).is_err());
        assert!(TraceRefinement::new(0, 5, 10.0, 0.0).is_err());
        assert!(TraceRefinement::new(0, 5, 10.0, 1.0).is_ok());
    }
}
