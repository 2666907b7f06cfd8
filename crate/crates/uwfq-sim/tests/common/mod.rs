//! Helpers shared by the integration test binaries.
#![allow(dead_code)]

use std::collections::BTreeMap;

use uwfq_sim::model::{ExecutionTrace, Workload};
use uwfq_sim::vt::GlobalVt;

/// Feeds every job of `workload` into a fresh two-level clock at its
/// arrival time (in arrival order) and runs the clock dry. `grace = 0`
/// makes the clock comparable to the fluid references.
pub fn drive_kernel(workload: &Workload, resources: f64, grace: f64) -> GlobalVt {
    let mut vt = GlobalVt::with_grace(resources, grace).expect("valid clock parameters");
    for job in workload.jobs() {
        vt.assign_deadline(&job.user, &job.id, job.arrival, job.slot_time(), workload.weight(&job.user))
            .expect("registration succeeds");
    }
    vt.drain().expect("drain succeeds");
    vt
}

/// Virtual completion wall times keyed by job id.
pub fn completion_map(vt: &GlobalVt) -> BTreeMap<String, f64> {
    vt.completions().iter().cloned().collect()
}

/// Maximum number of tasks simultaneously on cores anywhere in the trace.
pub fn peak_concurrency(trace: &ExecutionTrace) -> usize {
    let mut events: Vec<(f64, i64)> = Vec::with_capacity(trace.tasks.len() * 2);
    for t in &trace.tasks {
        events.push((t.start, 1));
        events.push((t.end, -1));
    }
    // Ends sort before starts at equal times: back-to-back tasks on one
    // core do not double-count.
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let mut current = 0i64;
    let mut peak = 0i64;
    for (_, delta) in events {
        current += delta;
        peak = peak.max(current);
    }
    peak as usize
}

/// Asserts no two tasks overlap on the same core.
pub fn assert_no_core_overlap(trace: &ExecutionTrace) {
    let mut by_core: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for t in &trace.tasks {
        by_core.entry(t.core).or_default().push((t.start, t.end));
    }
    for (core, mut spans) in by_core {
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in spans.windows(2) {
            assert!(w[1].0 >= w[0].1 - 1e-9, "core {core} runs two tasks at once: {w:?}");
        }
    }
}

/// Stable fingerprint of a trace for byte-level determinism checks.
pub fn fingerprint(trace: &ExecutionTrace) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    for t in &trace.tasks {
        writeln!(s, "{}|{}|{}|{}|{:.12}|{:.12}", t.job, t.user, t.stage, t.core, t.start, t.end).unwrap();
    }
    for (job, (a, b)) in &trace.spans {
        writeln!(s, "{job}|{a:.12}|{b:.12}").unwrap();
    }
    s
}

/// Like [`drive_kernel`], but also reports which users only ever saw
/// arrivals land at the tail of their deadline ladder. For those users
/// every job's final global deadline crossing coincides with its
/// one-at-a-time fluid finish; a mid-ladder insertion retags queued
/// work and breaks that correspondence for the whole user.
pub fn drive_kernel_tracking(
    workload: &Workload,
    resources: f64,
    grace: f64,
) -> (GlobalVt, std::collections::BTreeSet<String>) {
    let mut vt = GlobalVt::with_grace(resources, grace).expect("valid clock parameters");
    let mut tail_only: std::collections::BTreeSet<String> =
        workload.users().into_iter().map(|u| u.to_string()).collect();
    for job in workload.jobs() {
        let d = vt
            .assign_deadline(&job.user, &job.id, job.arrival, job.slot_time(), workload.weight(&job.user))
            .expect("registration succeeds");
        let latest = vt.user(&job.user).expect("user active after insert").latest_d_global();
        if (d - latest).abs() > 1e-12 {
            tail_only.remove(&job.user);
        }
    }
    vt.drain().expect("drain succeeds");
    (vt, tail_only)
}
