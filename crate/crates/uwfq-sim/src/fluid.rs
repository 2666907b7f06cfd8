//! Fluid (idealized, infinitely divisible) schedules used as fairness
//! references. Two models share the same per-user rate rule: every user
//! with arrived unfinished work receives `R / N_users`.
//!
//! * [`user_job_share_fluid`]: inside each user, its active jobs split
//!   the user's rate equally (processor sharing at both levels). The
//!   finish times of this model are the per-job fairness ideal.
//! * [`user_sequential_fluid`]: inside each user, jobs are served one at
//!   a time, ordered by their processor-sharing finish times, each at
//!   the user's full rate. This is the schedule the two-level virtual
//!   clock tracks: a job's clock crossing lands exactly on its finish
//!   time here.
//!
//! Both are event-driven and exact up to floating point. A forward-Euler
//! integrator ([`brute_force_user_job_share`]) cross-checks the first.
//!
//! The oracles model unweighted sharing; workloads carrying non-unit
//! user weights are rejected rather than silently mis-modeled.

use std::collections::BTreeMap;

use crate::error::{Result, SimError};
use crate::model::Workload;

const FLUID_EPS: f64 = 1e-9;

/// One interval of constant service rates, in resource units per second.
#[derive(Debug, Clone)]
pub struct FluidSegment {
    pub start: f64,
    pub end: f64,
    /// Per-job service rate during the interval; absent means zero.
    pub rates: BTreeMap<String, f64>,
}

/// A complete fluid schedule: per-job finish times plus the rate
/// segments they integrate from.
#[derive(Debug, Clone, Default)]
pub struct FluidSchedule {
    finish: BTreeMap<String, f64>,
    segments: Vec<FluidSegment>,
}

impl FluidSchedule {
    pub fn finish(&self, job: &str) -> Result<f64> {
        self.finish
            .get(job)
            .copied()
            .ok_or_else(|| SimError::IncompleteJob(job.to_string()))
    }

    pub fn finish_times(&self) -> &BTreeMap<String, f64> {
        &self.finish
    }

    pub fn segments(&self) -> &[FluidSegment] {
        &self.segments
    }

    /// Service received by `job` up to time `t` (for consistency checks).
    pub fn served_by(&self, job: &str, t: f64) -> f64 {
        let mut total = 0.0;
        for seg in &self.segments {
            if seg.start >= t {
                break;
            }
            if let Some(rate) = seg.rates.get(job) {
                total += rate * (t.min(seg.end) - seg.start);
            }
        }
        total
    }
}

struct FluidJob {
    id: String,
    user: usize,
    arrival: f64,
    remaining: f64,
    /// Service order inside the user (sequential model only).
    rank: usize,
}

fn check_unit_weights(workload: &Workload) -> Result<()> {
    for (user, w) in workload.weights() {
        if (*w - 1.0).abs() > FLUID_EPS {
            return Err(SimError::Validation(format!(
                "fluid references model unweighted sharing, but user `{user}` has weight {w}"
            )));
        }
    }
    Ok(())
}

fn fluid_jobs(workload: &Workload) -> (Vec<FluidJob>, usize) {
    let mut user_index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut jobs = Vec::with_capacity(workload.jobs().len());
    for job in workload.jobs() {
        let next = user_index.len();
        let user = *user_index.entry(job.user.as_str()).or_insert(next);
        jobs.push(FluidJob {
            id: job.id.clone(),
            user,
            arrival: job.arrival,
            remaining: job.slot_time(),
            rank: 0,
        });
    }
    let n_users = user_index.len();
    (jobs, n_users)
}

/// Runs one event-driven fluid simulation. `rates_of` maps the indices
/// of arrived unfinished jobs to their current per-job service rates.
fn run_fluid(
    mut jobs: Vec<FluidJob>,
    resources: f64,
    n_users: usize,
    rates_of: impl Fn(&[FluidJob], &[usize]) -> Vec<(usize, f64)>,
) -> Result<FluidSchedule> {
    if !resources.is_finite() || resources <= 0.0 {
        return Err(SimError::Validation(format!("resources must be positive, got {resources}")));
    }
    let _ = n_users;
    let mut schedule = FluidSchedule::default();
    let n = jobs.len();
    // Jobs come pre-sorted by (arrival, id); admit by walking this cursor.
    let mut next_arrival = 0usize;
    let mut active: Vec<usize> = Vec::new();
    let mut t = 0.0;

    // Each step admits an arrival or finishes a job, so 2n steps suffice.
    for _ in 0..(2 * n + 2) {
        while next_arrival < n && jobs[next_arrival].arrival <= t + FLUID_EPS {
            active.push(next_arrival);
            next_arrival += 1;
        }
        if active.is_empty() {
            if next_arrival == n {
                return Ok(schedule);
            }
            t = jobs[next_arrival].arrival;
            continue;
        }

        let rates = rates_of(&jobs, &active);
        let mut dt = f64::INFINITY;
        for &(idx, rate) in &rates {
            if rate > 0.0 {
                dt = dt.min(jobs[idx].remaining / rate);
            }
        }
        if next_arrival < n {
            dt = dt.min(jobs[next_arrival].arrival - t);
        }
        if !dt.is_finite() {
            // Arrived work exists but nothing is being served.
            return Err(SimError::Deadlock(t));
        }
        let dt = dt.max(0.0);

        let mut seg = FluidSegment { start: t, end: t + dt, rates: BTreeMap::new() };
        for &(idx, rate) in &rates {
            jobs[idx].remaining -= rate * dt;
            if rate > 0.0 {
                seg.rates.insert(jobs[idx].id.clone(), rate);
            }
        }
        t += dt;
        if dt > 0.0 {
            schedule.segments.push(seg);
        }
        active.retain(|&idx| {
            if jobs[idx].remaining <= FLUID_EPS {
                schedule.finish.insert(jobs[idx].id.clone(), t);
                false
            } else {
                true
            }
        });
        if active.is_empty() && next_arrival == n {
            return Ok(schedule);
        }
    }
    Err(SimError::Deadlock(t))
}

fn active_users(jobs: &[FluidJob], active: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut by_user: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &idx in active {
        by_user.entry(jobs[idx].user).or_default().push(idx);
    }
    by_user
}

/// Fluid ideal with processor sharing at both levels: each user with
/// arrived unfinished work gets `R / N_users`, split equally over its
/// own arrived unfinished jobs.
pub fn user_job_share_fluid(workload: &Workload, resources: f64) -> Result<FluidSchedule> {
    check_unit_weights(workload)?;
    let (jobs, n_users) = fluid_jobs(workload);
    run_fluid(jobs, resources, n_users, move |jobs, active| {
        let by_user = active_users(jobs, active);
        let user_rate = resources / by_user.len() as f64;
        let mut rates = Vec::with_capacity(active.len());
        for (_, members) in by_user {
            let job_rate = user_rate / members.len() as f64;
            for idx in members {
                rates.push((idx, job_rate));
            }
        }
        rates
    })
}

/// Fluid schedule with sequential service inside each user: the user's
/// arrived unfinished jobs are served one at a time, in the order they
/// finish under [`user_job_share_fluid`], each at the user's full rate.
/// A job that jumps the order (shorter, so it would finish first) takes
/// over the rate as soon as it arrives.
pub fn user_sequential_fluid(workload: &Workload, resources: f64) -> Result<FluidSchedule> {
    check_unit_weights(workload)?;
    let reference = user_job_share_fluid(workload, resources)?;
    let (mut jobs, n_users) = fluid_jobs(workload);

    // Rank each user's jobs by (reference finish, arrival, id).
    let mut by_user: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, job) in jobs.iter().enumerate() {
        by_user.entry(job.user).or_default().push(idx);
    }
    for members in by_user.values_mut() {
        members.sort_by(|&a, &b| {
            let fa = reference.finish(&jobs[a].id).expect("reference covers all jobs");
            let fb = reference.finish(&jobs[b].id).expect("reference covers all jobs");
            fa.total_cmp(&fb)
                .then_with(|| jobs[a].arrival.total_cmp(&jobs[b].arrival))
                .then_with(|| jobs[a].id.cmp(&jobs[b].id))
        });
        for (rank, &idx) in members.iter().enumerate() {
            jobs[idx].rank = rank;
        }
    }

    run_fluid(jobs, resources, n_users, move |jobs, active| {
        let by_user = active_users(jobs, active);
        let user_rate = resources / by_user.len() as f64;
        let mut rates = Vec::with_capacity(active.len());
        for (_, members) in by_user {
            let head = members
                .iter()
                .copied()
                .min_by_key(|&idx| jobs[idx].rank)
                .expect("user has an active member");
            for idx in members {
                rates.push((idx, if idx == head { user_rate } else { 0.0 }));
            }
        }
        rates
    })
}

/// Forward-Euler integration of the user-job-share model, for
/// cross-checking the event-driven version. Finish times carry an
/// `O(dt)` error.
pub fn brute_force_user_job_share(workload: &Workload, resources: f64, dt: f64) -> Result<FluidSchedule> {
    check_unit_weights(workload)?;
    if !dt.is_finite() || dt <= 0.0 {
        return Err(SimError::Validation(format!("step size must be positive, got {dt}")));
    }
    if !resources.is_finite() || resources <= 0.0 {
        return Err(SimError::Validation(format!("resources must be positive, got {resources}")));
    }
    let (mut jobs, _) = fluid_jobs(workload);
    let mut schedule = FluidSchedule::default();
    let n = jobs.len();
    let mut done = 0usize;
    let mut t = 0.0;
    let total_work: f64 = jobs.iter().map(|j| j.remaining).sum();
    let horizon = jobs.iter().map(|j| j.arrival).fold(0.0, f64::max) + total_work + 1.0;

    while done < n && t < horizon {
        let active: Vec<usize> = (0..n)
            .filter(|&i| jobs[i].arrival <= t + FLUID_EPS && jobs[i].remaining > FLUID_EPS)
            .collect();
        if active.is_empty() {
            t += dt;
            continue;
        }
        let by_user = active_users(&jobs, &active);
        let user_rate = resources / by_user.len() as f64;
        for (_, members) in by_user {
            let job_rate = user_rate / members.len() as f64;
            for idx in members {
                jobs[idx].remaining -= job_rate * dt;
                if jobs[idx].remaining <= FLUID_EPS {
                    // Land inside the step proportionally to the residue.
                    let overshoot = -jobs[idx].remaining / job_rate;
                    schedule.finish.insert(jobs[idx].id.clone(), t + dt - overshoot);
                    jobs[idx].remaining = 0.0;
                    done += 1;
                }
            }
        }
        t += dt;
    }
    if done < n {
        return Err(SimError::Deadlock(t));
    }
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Job, Stage};

    fn job(id: &str, user: &str, arrival: f64, slot: f64) -> Job {
        Job::new(id, user, arrival, vec![Stage::from_durations(&[slot]).unwrap()]).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9
    }

    #[test]
    fn single_job_finishes_after_its_slot_time() {
        let w = Workload::new(vec![job("j", "u", 0.0, 4.0)]).unwrap();
        let share = user_job_share_fluid(&w, 1.0).unwrap();
        let seq = user_sequential_fluid(&w, 1.0).unwrap();
        assert!(close(share.finish("j").unwrap(), 4.0));
        assert!(close(seq.finish("j").unwrap(), 4.0));
    }

    #[test]
    fn one_user_two_jobs_share_vs_sequential() {
        let w = Workload::new(vec![job("j4", "u", 0.0, 4.0), job("j2", "u", 0.0, 2.0)]).unwrap();
        let share = user_job_share_fluid(&w, 1.0).unwrap();
        // Processor sharing at rate 1/2 each: j2 at 4, then j4 at 6.
        assert!(close(share.finish("j2").unwrap(), 4.0));
        assert!(close(share.finish("j4").unwrap(), 6.0));
        let seq = user_sequential_fluid(&w, 1.0).unwrap();
        // Sequential in share-finish order: j2 first at full rate.
        assert!(close(seq.finish("j2").unwrap(), 2.0));
        assert!(close(seq.finish("j4").unwrap(), 6.0));
    }

    #[test]
    fn users_split_the_cluster_evenly() {
        let w = Workload::new(vec![job("a1", "a", 0.0, 10.0), job("b1", "b", 0.0, 2.0)]).unwrap();
        let share = user_job_share_fluid(&w, 2.0).unwrap();
        // Each user at rate 1; b done at 2; a speeds up to 2: 2 + 8/2.
        assert!(close(share.finish("b1").unwrap(), 2.0));
        assert!(close(share.finish("a1").unwrap(), 6.0));
    }

    #[test]
    fn staggered_arrivals_change_rates_at_the_right_instants() {
        let w = Workload::new(vec![
            job("a1", "a", 0.0, 10.0),
            job("b1", "b", 0.0, 2.0),
            job("b2", "b", 3.0, 2.0),
        ])
        .unwrap();
        let share = user_job_share_fluid(&w, 2.0).unwrap();
        // [0,2): both users at 1, b1 done at 2. [2,3): a alone at 2.
        // [3,5): both at 1, b2 done at 5. [5,7): a alone, done at 7.
        assert!(close(share.finish("b1").unwrap(), 2.0));
        assert!(close(share.finish("b2").unwrap(), 5.0));
        assert!(close(share.finish("a1").unwrap(), 7.0));
        // Sequential model coincides here: one arrived job per user at a time.
        let seq = user_sequential_fluid(&w, 2.0).unwrap();
        for j in ["a1", "b1", "b2"] {
            assert!(close(seq.finish(j).unwrap(), share.finish(j).unwrap()));
        }
    }

    #[test]
    fn short_job_preempts_inside_its_user() {
        // j_long arrives first; j_short arrives later but finishes first
        // under processor sharing, so the sequential model lets it take
        // over the user's rate on arrival.
        let w = Workload::new(vec![job("long", "u", 0.0, 10.0), job("short", "u", 2.0, 1.0)]).unwrap();
        let share = user_job_share_fluid(&w, 1.0).unwrap();
        // [2,4): rate 1/2 each, short done at 4; long: 2 + 1 + 7 = done at 11.
        assert!(close(share.finish("short").unwrap(), 4.0));
        assert!(close(share.finish("long").unwrap(), 11.0));
        let seq = user_sequential_fluid(&w, 1.0).unwrap();
        // Sequential: long [0,2), short [2,3), long resumes [3,11).
        assert!(close(seq.finish("short").unwrap(), 3.0));
        assert!(close(seq.finish("long").unwrap(), 11.0));
    }

    #[test]
    fn sequential_never_finishes_later_than_share() {
        let w = Workload::new(vec![
            job("a1", "a", 0.0, 5.0),
            job("a2", "a", 1.0, 1.0),
            job("a3", "a", 2.5, 3.0),
            job("b1", "b", 0.5, 4.0),
            job("b2", "b", 4.0, 2.0),
        ])
        .unwrap();
        let share = user_job_share_fluid(&w, 3.0).unwrap();
        let seq = user_sequential_fluid(&w, 3.0).unwrap();
        for (id, f) in share.finish_times() {
            assert!(seq.finish(id).unwrap() <= f + 1e-9, "{id} regressed");
        }
    }

    #[test]
    fn brute_force_agrees_with_event_driven() {
        let w = Workload::new(vec![
            job("a1", "a", 0.0, 5.0),
            job("a2", "a", 1.0, 1.0),
            job("b1", "b", 0.5, 4.0),
            job("c1", "c", 2.0, 3.0),
        ])
        .unwrap();
        let exact = user_job_share_fluid(&w, 2.0).unwrap();
        let euler = brute_force_user_job_share(&w, 2.0, 1e-4).unwrap();
        for (id, f) in exact.finish_times() {
            assert!((euler.finish(id).unwrap() - f).abs() < 1e-2, "{id} drifted");
        }
    }

    #[test]
    fn segments_conserve_work_and_respect_capacity() {
        let w = Workload::new(vec![
            job("a1", "a", 0.0, 5.0),
            job("a2", "a", 1.0, 1.0),
            job("b1", "b", 0.5, 4.0),
        ])
        .unwrap();
        for schedule in [user_job_share_fluid(&w, 2.0).unwrap(), user_sequential_fluid(&w, 2.0).unwrap()] {
            for seg in schedule.segments() {
                let total: f64 = seg.rates.values().sum();
                assert!(total <= 2.0 + 1e-9);
            }
            let horizon = 1e9;
            for j in w.jobs() {
                assert!(close(schedule.served_by(&j.id, horizon), j.slot_time()));
            }
        }
    }

    #[test]
    fn user_departures_coincide_across_models() {
        let w = Workload::new(vec![
            job("a1", "a", 0.0, 5.0),
            job("a2", "a", 1.0, 1.0),
            job("a3", "a", 6.5, 2.0),
            job("b1", "b", 0.5, 4.0),
        ])
        .unwrap();
        let share = user_job_share_fluid(&w, 2.0).unwrap();
        let seq = user_sequential_fluid(&w, 2.0).unwrap();
        for user in ["a", "b"] {
            let last = |s: &FluidSchedule| {
                w.jobs()
                    .iter()
                    .filter(|j| j.user == user)
                    .map(|j| s.finish(&j.id).unwrap())
                    .fold(0.0, f64::max)
            };
            assert!(close(last(&share), last(&seq)));
        }
    }

    #[test]
    fn non_unit_weights_are_rejected() {
        let mut weights = std::collections::BTreeMap::new();
        weights.insert("u".to_string(), 2.0);
        let w = Workload::with_weights(vec![job("j", "u", 0.0, 4.0)], weights).unwrap();
        assert!(user_job_share_fluid(&w, 1.0).is_err());
        assert!(user_sequential_fluid(&w, 1.0).is_err());
    }

    #[test]
    fn empty_workload_yields_empty_schedule() {
        let w = Workload::new(vec![]).unwrap();
        let s = user_job_share_fluid(&w, 2.0).unwrap();
        assert!(s.finish_times().is_empty());
        assert!(s.segments().is_empty());
    }
}
