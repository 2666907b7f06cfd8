//! Response-time and fairness metrics computed from execution traces.
//!
//! The central comparison metric is the per-job deadline ratio against a
//! reference policy (normally `ujf` on the same workload, partitioner
//! and cluster):
//!
//! ```text
//! r_j = (finish_target(j) - finish_reference(j)) / response_reference(j)
//! ```
//!
//! Positive ratios are violations (the job finished later than the
//! reference), negative ones are slack (earlier). The deadline violation
//! ratio (DVR) averages the positive parts, the deadline slack ratio
//! (DSR) the magnitudes of the negative parts.
//!
//! Two denominator conventions are supported. The default splits the
//! population at `r = 0`: DVR divides by `|{r > 0}|` and DSR by
//! `|{r <= 0}|`, so the counts match the jobs the numerators draw from.
//! The strict convention splits at `r = 1` instead (DVR over
//! `|{r > 1}|`, DSR over `|{r <= 1}|`), which punishes mild violations
//! harder; it is retained behind a flag for comparability with that
//! definition.

use std::collections::BTreeMap;

use crate::engine::idle_runtime;
use crate::error::{Result, SimError};
use crate::model::{Cluster, ExecutionTrace, Workload};
use crate::partition::Partitioner;

/// Aggregate of per-job deadline ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSummary {
    /// Mean positive overshoot (see module docs for the denominator).
    pub dvr: f64,
    /// Number of jobs counted in the DVR denominator.
    pub violations: usize,
    /// Mean slack magnitude.
    pub dsr: f64,
    /// Number of jobs counted in the DSR denominator.
    pub slacks: usize,
}

/// Mean response times of the sorted population split at the 80th and
/// 95th percentiles. Bands that contain no jobs are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bands {
    pub mean: Option<f64>,
    pub band_0_80: Option<f64>,
    pub band_80_95: Option<f64>,
    pub band_95_100: Option<f64>,
}

/// Response time of every job in the trace, keyed by job id.
pub fn response_times(trace: &ExecutionTrace) -> BTreeMap<String, f64> {
    trace
        .spans
        .iter()
        .map(|(id, &(arrival, end))| (id.clone(), end - arrival))
        .collect()
}

/// Per-job slowdown: response time divided by the job's response time
/// when running alone on the same cluster with the same partitioner.
pub fn slowdowns(
    trace: &ExecutionTrace,
    workload: &Workload,
    cluster: &Cluster,
    partitioner: &Partitioner,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for job in workload.jobs() {
        let rt = trace.response_time(&job.id)?;
        let idle = idle_runtime(job, cluster, partitioner)?;
        if idle <= 0.0 {
            return Err(SimError::Validation(format!("job `{}` has zero idle runtime", job.id)));
        }
        out.insert(job.id.clone(), rt / idle);
    }
    Ok(out)
}

/// Per-job deadline ratios of `target` against `reference`. Both traces
/// must cover the same jobs.
pub fn deadline_ratios(target: &ExecutionTrace, reference: &ExecutionTrace) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (id, &(arrival, ref_end)) in &reference.spans {
        let target_end = target.finish_time(id)?;
        let ref_rt = ref_end - arrival;
        if ref_rt <= 0.0 {
            return Err(SimError::Validation(format!("job `{id}` has non-positive reference response time")));
        }
        out.insert(id.clone(), (target_end - ref_end) / ref_rt);
    }
    Ok(out)
}

/// Collapses per-job ratios into DVR/DSR. `strict` selects the `r = 1`
/// split denominators described in the module docs.
pub fn ratio_summary<'a>(ratios: impl IntoIterator<Item = &'a f64>, strict: bool) -> RatioSummary {
    let mut over_sum = 0.0;
    let mut under_sum = 0.0;
    let mut n_positive = 0usize;
    let mut n_non_positive = 0usize;
    let mut n_above_one = 0usize;
    let mut n_at_most_one = 0usize;
    for &r in ratios {
        if r > 0.0 {
            over_sum += r;
            n_positive += 1;
        } else {
            under_sum += -r;
            n_non_positive += 1;
        }
        if r > 1.0 {
            n_above_one += 1;
        } else {
            n_at_most_one += 1;
        }
    }
    let (violations, slacks) = if strict { (n_above_one, n_at_most_one) } else { (n_positive, n_non_positive) };
    let div = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    RatioSummary {
        dvr: div(over_sum, violations),
        violations,
        dsr: div(under_sum, slacks),
        slacks,
    }
}

/// Per-user deadline ratios computed from mean response times:
/// `(mean_rt_target - mean_rt_reference) / mean_rt_reference`.
pub fn per_user_ratios(
    target: &ExecutionTrace,
    reference: &ExecutionTrace,
    workload: &Workload,
) -> Result<BTreeMap<String, f64>> {
    let mut sums: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for job in workload.jobs() {
        let entry = sums.entry(job.user.as_str()).or_insert((0.0, 0.0, 0));
        entry.0 += target.response_time(&job.id)?;
        entry.1 += reference.response_time(&job.id)?;
        entry.2 += 1;
    }
    let mut out = BTreeMap::new();
    for (user, (t_sum, r_sum, n)) in sums {
        if r_sum <= 0.0 {
            return Err(SimError::Validation(format!("user `{user}` has non-positive reference response time")));
        }
        let _ = n;
        out.insert(user.to_string(), (t_sum - r_sum) / r_sum);
    }
    Ok(out)
}

/// Empirical CDF: sorted distinct values with cumulative fractions.
/// The last fraction is exactly 1 for non-empty input.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => out.push((*v, frac)),
        }
    }
    out
}

/// Splits the sorted values at floor(0.8 n) and floor(0.95 n) and
/// averages each band, plus the overall mean.
pub fn bands(values: &[f64]) -> Bands {
    if values.is_empty() {
        return Bands { mean: None, band_0_80: None, band_80_95: None, band_95_100: None };
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let cut1 = (0.8 * n as f64).floor() as usize;
    let cut2 = (0.95 * n as f64).floor() as usize;
    let mean_of = |slice: &[f64]| {
        if slice.is_empty() {
            None
        } else {
            Some(slice.iter().sum::<f64>() / slice.len() as f64)
        }
    };
    Bands {
        mean: mean_of(&sorted),
        band_0_80: mean_of(&sorted[..cut1]),
        band_80_95: mean_of(&sorted[cut1..cut2]),
        band_95_100: mean_of(&sorted[cut2..]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run;
    use crate::model::{Job, Stage};
    use crate::policy::Fifo;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9
    }

    fn job(id: &str, user: &str, arrival: f64, slot: f64) -> Job {
        Job::new(id, user, arrival, vec![Stage::from_durations(&[slot]).unwrap()]).unwrap()
    }

    #[test]
    fn ratio_summary_default_denominators() {
        let ratios = [0.5, -0.2, 1.5];
        let s = ratio_summary(ratios.iter(), false);
        assert!(close(s.dvr, 1.0));
        assert_eq!(s.violations, 2);
        assert!(close(s.dsr, 0.2));
        assert_eq!(s.slacks, 1);
    }

    #[test]
    fn ratio_summary_strict_denominators() {
        let ratios = [0.5, -0.2, 1.5];
        let s = ratio_summary(ratios.iter(), true);
        // Only 1.5 exceeds 1, so the whole overshoot mass lands on it.
        assert!(close(s.dvr, 2.0));
        assert_eq!(s.violations, 1);
        assert!(close(s.dsr, 0.1));
        assert_eq!(s.slacks, 2);
    }

    #[test]
    fn ratio_summary_of_empty_and_all_zero_input() {
        let s = ratio_summary([].iter(), false);
        assert_eq!(s, RatioSummary { dvr: 0.0, violations: 0, dsr: 0.0, slacks: 0 });
        // Exact-zero ratios are slack entries with zero magnitude.
        let zeros = [0.0, 0.0];
        let s = ratio_summary(zeros.iter(), false);
        assert!(close(s.dvr, 0.0) && close(s.dsr, 0.0));
        assert_eq!(s.violations, 0);
        assert_eq!(s.slacks, 2);
    }

    #[test]
    fn ecdf_merges_duplicates_and_ends_at_one() {
        let e = ecdf(&[1.0, 2.0, 2.0]);
        assert_eq!(e.len(), 2);
        assert!(close(e[0].0, 1.0) && close(e[0].1, 1.0 / 3.0));
        assert!(close(e[1].0, 2.0) && close(e[1].1, 1.0));
    }

    #[test]
    fn bands_split_at_80_and_95_percent() {
        let values: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let b = bands(&values);
        // cuts at 8 and 9: [1..8], [9], [10]
        assert!(close(b.band_0_80.unwrap(), 4.5));
        assert!(close(b.band_80_95.unwrap(), 9.0));
        assert!(close(b.band_95_100.unwrap(), 10.0));
        assert!(close(b.mean.unwrap(), 5.5));
    }

    #[test]
    fn bands_of_tiny_population_leave_middle_empty() {
        let b = bands(&[1.0, 2.0, 3.0]);
        // cuts at 2 and 2: middle band is empty.
        assert!(close(b.band_0_80.unwrap(), 1.5));
        assert!(b.band_80_95.is_none());
        assert!(close(b.band_95_100.unwrap(), 3.0));
    }

    #[test]
    fn self_comparison_has_zero_ratios() {
        let w = Workload::new(vec![job("a1", "a", 0.0, 2.0), job("b1", "b", 1.0, 3.0)]).unwrap();
        let cluster = Cluster::new(2).unwrap();
        let t = run(&w, &cluster, &Partitioner::Static, &mut Fifo, 0).unwrap();
        let ratios = deadline_ratios(&t, &t).unwrap();
        assert!(ratios.values().all(|r| close(*r, 0.0)));
        let s = ratio_summary(ratios.values(), false);
        assert!(close(s.dvr, 0.0) && close(s.dsr, 0.0));
        assert_eq!((s.violations, s.slacks), (0, 2));
        let per_user = per_user_ratios(&t, &t, &w).unwrap();
        assert!(per_user.values().all(|r| close(*r, 0.0)));
    }

    #[test]
    fn deadline_ratio_measures_relative_lateness() {
        let w = Workload::new(vec![job("x", "u", 0.0, 2.0)]).unwrap();
        let cluster = Cluster::new(1).unwrap();
        let reference = run(&w, &cluster, &Partitioner::Static, &mut Fifo, 0).unwrap();
        // Delay the job by inflating its arrival in a second workload run.
        let w2 = Workload::new(vec![job("x", "u", 1.0, 2.0)]).unwrap();
        let target = run(&w2, &cluster, &Partitioner::Static, &mut Fifo, 0).unwrap();
        let ratios = deadline_ratios(&target, &reference).unwrap();
        // reference: [0,2]; target ends at 3 -> (3-2)/2 = 0.5
        assert!(close(ratios["x"], 0.5));
    }

    #[test]
    fn slowdown_of_lone_job_is_one() {
        let w = Workload::new(vec![job("x", "u", 0.0, 2.0)]).unwrap();
        let cluster = Cluster::new(4).unwrap();
        let t = run(&w, &cluster, &Partitioner::Static, &mut Fifo, 0).unwrap();
        let s = slowdowns(&t, &w, &cluster, &Partitioner::Static).unwrap();
        assert!(close(s["x"], 1.0));
    }
}
