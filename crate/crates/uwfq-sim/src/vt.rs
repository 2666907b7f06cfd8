//! Two-level virtual-time bookkeeping behind the `uwfq` policy.
//!
//! Two clocks run side by side:
//!
//! * a global clock `V_global`, shared by all users, that advances at
//!   `R / N_users` per wall second (the fair per-user service rate), and
//! * one private clock `V_user` per user that advances at
//!   `R_user / N_jobs` per wall second (the fair per-job rate inside the
//!   user's own share).
//!
//! Each arriving job first receives a user-level deadline
//! `D_user = V_user + L * w` which orders it among the user's own jobs,
//! and then a global deadline `D_global` built as a cumulative ladder
//! from the user's virtual arrival point: walking the user's jobs in
//! `D_user` order, the first gets `V_arrival + L * w` and each next one
//! extends the previous deadline by its own `L * w`. `D_global` is the
//! virtual time at which the job would finish if the user ran its jobs
//! back to back inside its fair share, and it doubles as the dispatch
//! priority (smaller is better).
//!
//! Every mutating call starts by rolling both clock levels forward to the
//! call's wall time. Users whose last deadline falls inside the elapsed
//! interval depart at their exact virtual finish instant, which changes
//! the per-user rate for the remainder of the interval; the sweep in
//! [`GlobalVt::update_virtual_time`] replays those rate changes in
//! deadline order so the result is independent of how often the caller
//! updates.
//!
//! A departed user that submits again shortly afterwards may be revived
//! with its original `V_arrival` (so the pause does not cost it its
//! place); see [`GlobalVt::maybe_revive_user`]. Revival is the one
//! mechanism that is intentionally *not* part of the fluid oracles.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Result, SimError};
use crate::model::TIME_EPS;

/// Grace window for user revival, in resource-seconds.
pub const DEFAULT_GRACE: f64 = 2.0;

/// Tolerance for comparing virtual-time quantities.
const VT_EPS: f64 = 1e-9;

/// One job queued inside a user's virtual schedule.
#[derive(Debug, Clone)]
pub struct JobEntry {
    pub job: String,
    /// Slot time `L`: the job's total single-core runtime.
    pub slot_time: f64,
    pub d_user: f64,
    pub d_global: f64,
    seq: u64,
}

/// Per-user virtual state. `v_arrival` marks where the user's deadline
/// ladder is anchored on the global clock; it moves forward by `L` every
/// time one of the user's jobs finishes virtually.
#[derive(Debug, Clone)]
pub struct UserState {
    pub id: String,
    pub weight: f64,
    pub v_user: f64,
    pub v_arrival: f64,
    jobs: Vec<JobEntry>,
    latest_d_global: f64,
    seq: u64,
}

impl UserState {
    pub fn jobs(&self) -> &[JobEntry] {
        &self.jobs
    }

    pub fn latest_d_global(&self) -> f64 {
        self.latest_d_global
    }
}

#[derive(Debug, Clone)]
struct DepartedUser {
    v_global_end: f64,
    v_arrival: f64,
    weight: f64,
    seq: u64,
}

/// The two-level virtual-time state.
#[derive(Debug, Clone)]
pub struct GlobalVt {
    resources: f64,
    grace: f64,
    v_global: f64,
    t_previous: f64,
    users: BTreeMap<String, UserState>,
    departed: HashMap<String, DepartedUser>,
    /// Current (or final) global deadline of every job ever registered.
    deadlines: HashMap<String, f64>,
    /// (job, wall time) pairs in the order jobs finished virtually.
    completions: Vec<(String, f64)>,
    /// Breakpoints (wall time, v_global) of the piecewise-linear clock.
    trajectory: Vec<(f64, f64)>,
    next_seq: u64,
}

impl GlobalVt {
    pub fn new(resources: f64) -> Result<Self> {
        Self::with_grace(resources, DEFAULT_GRACE)
    }

    /// `grace` is measured in resource-seconds; 0 disables revival.
    pub fn with_grace(resources: f64, grace: f64) -> Result<Self> {
        if !resources.is_finite() || resources <= 0.0 {
            return Err(SimError::Validation(format!("resources must be positive, got {resources}")));
        }
        if !grace.is_finite() || grace < 0.0 {
            return Err(SimError::Validation(format!("grace must be non-negative, got {grace}")));
        }
        Ok(Self {
            resources,
            grace,
            v_global: 0.0,
            t_previous: 0.0,
            users: BTreeMap::new(),
            departed: HashMap::new(),
            deadlines: HashMap::new(),
            completions: Vec::new(),
            trajectory: vec![(0.0, 0.0)],
            next_seq: 0,
        })
    }

    pub fn v_global(&self) -> f64 {
        self.v_global
    }

    pub fn t_previous(&self) -> f64 {
        self.t_previous
    }

    pub fn resources(&self) -> f64 {
        self.resources
    }

    pub fn user(&self, id: &str) -> Option<&UserState> {
        self.users.get(id)
    }

    pub fn is_active(&self, user: &str) -> bool {
        self.users.contains_key(user)
    }

    pub fn has_departed(&self, user: &str) -> bool {
        self.departed.contains_key(user)
    }

    /// Current global deadline of a registered job. Stays available (and
    /// frozen) after the job finishes virtually, so it can serve as a
    /// dispatch priority for the job's whole physical lifetime.
    pub fn deadline_of(&self, job: &str) -> Option<f64> {
        self.deadlines.get(job).copied()
    }

    /// Jobs in virtual completion order with their wall finish times.
    pub fn completions(&self) -> &[(String, f64)] {
        &self.completions
    }

    /// Breakpoints of the global clock as (wall time, v_global).
    pub fn trajectory(&self) -> &[(f64, f64)] {
        &self.trajectory
    }

    /// Inverts the clock trajectory: first wall time at which `v_global`
    /// reached `v`. `None` if the clock has not got there yet.
    pub fn wall_time_at(&self, v: f64) -> Option<f64> {
        let first = self.trajectory.first()?;
        if v <= first.1 + VT_EPS {
            return Some(first.0);
        }
        for pair in self.trajectory.windows(2) {
            let (t0, v0) = pair[0];
            let (t1, v1) = pair[1];
            if v <= v1 + VT_EPS {
                if v1 - v0 <= VT_EPS {
                    return Some(t1);
                }
                return Some(t0 + (v - v0) / (v1 - v0) * (t1 - t0));
            }
        }
        None
    }

    /// One human-readable line of the full clock state, for golden traces.
    pub fn snapshot_line(&self) -> String {
        use std::fmt::Write;
        let mut line = format!("t={:.6} V={:.6}", self.t_previous, self.v_global);
        for u in self.users.values() {
            write!(line, " {}[Vu={:.6} Va={:.6}", u.id, u.v_user, u.v_arrival).unwrap();
            for e in &u.jobs {
                write!(line, " {}:Du={:.6},Dg={:.6}", e.job, e.d_user, e.d_global).unwrap();
            }
            line.push(']');
        }
        line
    }

    /// Registers one arriving job and returns its global deadline.
    ///
    /// Rolls the clocks to `t_current` first. An unknown user is created
    /// with `v_arrival = v_global` unless it departed recently enough to
    /// be revived with its original anchor. Re-ranks the whole deadline
    /// ladder of the owning user, so deadlines of its other queued jobs
    /// may move.
    pub fn assign_deadline(
        &mut self,
        user_id: &str,
        job_id: &str,
        t_current: f64,
        slot_time: f64,
        weight: f64,
    ) -> Result<f64> {
        if !slot_time.is_finite() || slot_time <= 0.0 {
            return Err(SimError::Validation(format!("job `{job_id}` has invalid slot time {slot_time}")));
        }
        if !weight.is_finite() || weight <= 0.0 {
            return Err(SimError::Validation(format!("user `{user_id}` has invalid weight {weight}")));
        }
        if self.deadlines.contains_key(job_id) {
            return Err(SimError::Validation(format!("job `{job_id}` already registered")));
        }
        self.update_virtual_time(t_current)?;

        if !self.users.contains_key(user_id) {
            self.admit_user(user_id, weight);
        }
        let user = self.users.get_mut(user_id).expect("user admitted above");

        let d_user = user.v_user + slot_time * user.weight;
        let seq = self.next_seq;
        self.next_seq += 1;
        let entry = JobEntry { job: job_id.to_string(), slot_time, d_user, d_global: 0.0, seq };
        let pos = user
            .jobs
            .partition_point(|e| (e.d_user, e.seq) <= (d_user, seq));
        user.jobs.insert(pos, entry);

        Self::rebuild_global_deadlines(user, &mut self.deadlines);
        Ok(self.deadlines[job_id])
    }

    /// Creates or revives `user_id` as an active user with no queued jobs.
    fn admit_user(&mut self, user_id: &str, weight: f64) {
        let state = match self.departed.remove(user_id) {
            Some(d) if self.v_global < d.v_global_end + self.grace * self.resources => UserState {
                id: user_id.to_string(),
                weight: d.weight,
                v_user: 0.0,
                v_arrival: d.v_arrival,
                jobs: Vec::new(),
                latest_d_global: d.v_global_end,
                seq: d.seq,
            },
            _ => {
                let seq = self.next_seq;
                self.next_seq += 1;
                UserState {
                    id: user_id.to_string(),
                    weight,
                    v_user: 0.0,
                    v_arrival: self.v_global,
                    jobs: Vec::new(),
                    latest_d_global: self.v_global,
                    seq,
                }
            }
        };
        self.users.insert(user_id.to_string(), state);
    }

    /// Explicit revival check. Returns true when the user re-enters with
    /// its original `v_arrival`; false when the grace window has passed,
    /// in which case its history is dropped and it will be treated as a
    /// brand-new user on its next job.
    pub fn maybe_revive_user(&mut self, user_id: &str, t_current: f64) -> Result<bool> {
        self.update_virtual_time(t_current)?;
        if self.users.contains_key(user_id) {
            return Err(SimError::Validation(format!("user `{user_id}` is still active")));
        }
        let Some(d) = self.departed.get(user_id) else {
            return Err(SimError::UnknownUser(user_id.to_string()));
        };
        if self.v_global < d.v_global_end + self.grace * self.resources {
            let weight = d.weight;
            self.admit_user(user_id, weight);
            Ok(true)
        } else {
            self.departed.remove(user_id);
            Ok(false)
        }
    }

    /// Wall time at which `user_id` runs out of queued virtual work when
    /// served at `r_user` from `t_previous` on.
    pub fn user_finish_time(&self, user_id: &str, r_user: f64) -> Result<f64> {
        let user = self
            .users
            .get(user_id)
            .ok_or_else(|| SimError::UnknownUser(user_id.to_string()))?;
        if user.jobs.is_empty() {
            return Err(SimError::EmptyUser(user_id.to_string()));
        }
        Ok(self.finish_time_of(user, r_user))
    }

    fn finish_time_of(&self, user: &UserState, r_user: f64) -> f64 {
        let latest = user.jobs.last().expect("caller checks for jobs").d_global;
        self.t_previous + (latest - self.v_global) / r_user
    }

    /// Rolls both clock levels forward to `t_current`, letting users whose
    /// deadlines fall inside the interval depart at their exact finish
    /// instants. Idempotent with respect to update granularity.
    pub fn update_virtual_time(&mut self, t_current: f64) -> Result<()> {
        if t_current < self.t_previous - TIME_EPS {
            return Err(SimError::NonMonotonicClock { t: t_current, t_previous: self.t_previous });
        }
        let t_current = t_current.max(self.t_previous);
        let logged = self.completions.len();

        // Departure sweep, in order of each user's latest global deadline.
        // The per-user rate is recomputed after every departure.
        let order = self.user_order();
        for uid in order {
            let r_user = self.resources / self.users.len() as f64;
            let finish = {
                let user = &self.users[&uid];
                if user.jobs.is_empty() {
                    self.t_previous
                } else {
                    self.finish_time_of(user, r_user)
                }
            };
            if finish > t_current + TIME_EPS {
                break;
            }
            let finish = finish.clamp(self.t_previous, t_current);
            let mut user = self.users.remove(&uid).expect("listed user exists");
            // Run the departing user's own clock to its finish instant so
            // its job completions land in the log, then force out any
            // residue left by floating-point slack.
            Self::advance_user(&mut user, r_user, self.t_previous, finish, &mut self.completions);
            while let Some(e) = user.jobs.first() {
                user.v_user = e.d_user;
                user.v_arrival += e.slot_time;
                self.completions.push((e.job.clone(), finish));
                user.jobs.remove(0);
            }
            self.departed.insert(
                uid.clone(),
                DepartedUser {
                    v_global_end: user.latest_d_global,
                    v_arrival: user.v_arrival,
                    weight: user.weight,
                    seq: user.seq,
                },
            );
            self.progress_virtual_time(finish, r_user);
        }

        if self.users.is_empty() {
            // Nobody is consuming service; the clock stands still.
            self.t_previous = t_current;
            self.trajectory.push((t_current, self.v_global));
        } else {
            let r_user = self.resources / self.users.len() as f64;
            self.progress_virtual_time(t_current, r_user);
        }
        // The sweep visits users one after another, so completions of
        // different users inside this interval land out of order; merge
        // them by wall time (stable, so same-instant entries keep the
        // sweep order).
        self.completions[logged..].sort_by(|a, b| a.1.total_cmp(&b.1));
        Ok(())
    }

    /// Active users sorted by (latest global deadline, admission order).
    fn user_order(&self) -> Vec<String> {
        let mut ids: Vec<&UserState> = self.users.values().collect();
        ids.sort_by(|a, b| {
            a.latest_d_global
                .total_cmp(&b.latest_d_global)
                .then_with(|| a.seq.cmp(&b.seq))
        });
        ids.into_iter().map(|u| u.id.clone()).collect()
    }

    /// Advances the global clock to wall time `t` at per-user rate
    /// `r_user` and every active user's private clock along with it.
    fn progress_virtual_time(&mut self, t: f64, r_user: f64) {
        let dt = (t - self.t_previous).max(0.0);
        self.v_global += dt * r_user;
        for user in self.users.values_mut() {
            Self::advance_user(user, r_user, self.t_previous, t, &mut self.completions);
        }
        self.t_previous = t;
        self.trajectory.push((t, self.v_global));
    }

    /// Advances one user's private clock from `t_prev` to `t_current`.
    /// Jobs whose `d_user` falls inside the interval finish virtually:
    /// each removal bumps the per-job rate for the rest of the interval
    /// and moves `v_arrival` forward by the finished job's slot time.
    fn advance_user(
        user: &mut UserState,
        r_user: f64,
        t_prev: f64,
        t_current: f64,
        completions: &mut Vec<(String, f64)>,
    ) {
        let mut t_user_prev = t_prev;
        while let Some(entry) = user.jobs.first() {
            let r_job = r_user / user.jobs.len() as f64;
            let assumed = user.v_user + (t_current - t_user_prev) * r_job;
            if entry.d_user > assumed + VT_EPS {
                break;
            }
            let v_spent = (entry.d_user - user.v_user).max(0.0);
            let t_spent = v_spent / r_job;
            user.v_user += v_spent;
            t_user_prev = (t_user_prev + t_spent).min(t_current);
            user.v_arrival += entry.slot_time;
            completions.push((entry.job.clone(), t_user_prev));
            user.jobs.remove(0);
        }
        if !user.jobs.is_empty() {
            let r_job = r_user / user.jobs.len() as f64;
            user.v_user += (t_current - t_user_prev).max(0.0) * r_job;
        }
    }

    /// Rebuilds the user's global-deadline ladder: walking its queued
    /// jobs in `d_user` order, deadlines accumulate from `v_arrival`.
    fn rebuild_global_deadlines(user: &mut UserState, deadlines: &mut HashMap<String, f64>) {
        let mut d = user.v_arrival;
        for entry in &mut user.jobs {
            d += entry.slot_time * user.weight;
            entry.d_global = d;
            deadlines.insert(entry.job.clone(), d);
        }
        user.latest_d_global = d;
    }

    /// Runs the virtual system dry: advances the clock until every active
    /// user has departed, using each user's exact finish time as the next
    /// step. Returns the wall time of the last departure (or `t_previous`
    /// when already idle).
    pub fn drain(&mut self) -> Result<f64> {
        while !self.users.is_empty() {
            let r_user = self.resources / self.users.len() as f64;
            let next = self
                .users
                .values()
                .map(|u| {
                    if u.jobs.is_empty() {
                        self.t_previous
                    } else {
                        self.finish_time_of(u, r_user)
                    }
                })
                .min_by(f64::total_cmp)
                .expect("users is non-empty");
            self.update_virtual_time(next.max(self.t_previous))?;
        }
        Ok(self.t_previous)
    }
}
