//! Deterministic discrete-event simulator for multi-user batch clusters.
//!
//! Jobs are chains of stages, each stage a bag of work units that a
//! partitioner cuts into tasks; a non-preemptive engine dispatches tasks
//! onto cores under a pluggable policy. The headline policy (`uwfq`)
//! ranks jobs by global deadlines from a two-level virtual clock that is
//! fair across users first and across each user's jobs second; classic
//! baselines (`fifo`, `fair`, `ujf`, `cfq`) share the same engine.
//!
//! Fluid-schedule oracles ([`fluid`]) provide idealized finish times the
//! clock provably tracks, [`metrics`] turns traces into response-time
//! and fairness numbers, [`workload`] generates benchmark scenarios and
//! ingests CSV traces, and [`experiment`] sweeps policies and writes
//! comparison tables.
//!
//! ```
//! use uwfq_sim::engine;
//! use uwfq_sim::model::{Cluster, Job, Stage, Workload};
//! use uwfq_sim::partition::Partitioner;
//! use uwfq_sim::policy::Uwfq;
//!
//! let jobs = vec![
//!     Job::new("a1", "alice", 0.0, vec![Stage::from_durations(&[2.0, 2.0]).unwrap()]).unwrap(),
//!     Job::new("b1", "bob", 0.5, vec![Stage::from_durations(&[1.0]).unwrap()]).unwrap(),
//! ];
//! let workload = Workload::new(jobs).unwrap();
//! let cluster = Cluster::new(2).unwrap();
//! let mut policy = Uwfq::new(cluster.resources(), &workload).unwrap();
//! let trace = engine::run(&workload, &cluster, &Partitioner::Static, &mut policy, 0).unwrap();
//! assert!(trace.response_time("b1").unwrap() > 0.0);
//! ```

pub mod engine;
pub mod error;
pub mod experiment;
pub mod fluid;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod policy;
pub mod vt;
pub mod workload;

pub use error::{Result, SimError};
