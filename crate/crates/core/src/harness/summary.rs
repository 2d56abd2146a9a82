//! Aggregate statistics over rollout records and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ActionCounts, HarnessError, RolloutRecord, RECORD_SCHEMA_VERSION};
use crate::policies::TerminationCause;

/// Published simulation result for the random baseline at N = 15, kept in
/// reports for side-by-side comparison.
pub const REFERENCE_ROW: (&str, f64, f64, f64) = ("random (published)", 0.888, 11.26, 0.15);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub policy: String,
    pub n_objects: u32,
    pub rollouts: u32,
    pub successes: u32,
    pub success_rate: f64,
    /// Mean actions over successful rollouts; `None` when there were none.
    pub mean_actions: Option<f64>,
    /// Standard error of that mean (sample deviation / √n).
    pub sem_actions: Option<f64>,
    pub no_successes: bool,
    /// `curve[k-1]` = successes needing at most k actions, k = 1..=2N.
    pub curve: Vec<u32>,
    pub action_totals: ActionCounts,
    /// Counts per failure cause; all three causes are always present.
    pub failures: BTreeMap<TerminationCause, u32>,
}

impl GroupSummary {
    pub fn push_fraction(&self) -> f64 {
        let total = self.action_totals.total();
        if total == 0 {
            0.0
        } else {
            self.action_totals.push as f64 / total as f64
        }
    }

    /// Fraction of rollouts that succeeded within `k` actions.
    pub fn curve_fraction(&self, k: usize) -> f64 {
        let hits = if k == 0 { 0 } else { self.curve.get(k - 1).or(self.curve.last()).copied().unwrap_or(0) };
        hits as f64 / self.rollouts.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub groups: Vec<GroupSummary>,
}

impl ExperimentSummary {
    pub fn group(&self, policy: &str, n_objects: u32) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.policy == policy && g.n_objects == n_objects)
    }
}

fn summarize_group(policy: &str, n: u32, records: &[&RolloutRecord]) -> GroupSummary {
    let horizon = records.iter().map(|r| r.config.policy.max_steps(n)).max().unwrap_or(0) as usize;
    let succ: Vec<f64> = records.iter().filter(|r| r.is_success()).map(|r| r.num_actions() as f64).collect();
    let k = succ.len();
    let mean = (k > 0).then(|| succ.iter().sum::<f64>() / k as f64);
    let sem = mean.map(|m| {
        if k < 2 {
            0.0
        } else {
            let var = succ.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k - 1) as f64;
            (var / k as f64).sqrt()
        }
    });
    let mut curve = vec![0u32; horizon];
    for r in records.iter().filter(|r| r.is_success()) {
        let a = r.num_actions() as usize;
        for c in curve.iter_mut().skip(a.saturating_sub(1)) {
            *c += 1;
        }
    }
    let mut totals = ActionCounts::default();
    let mut failures: BTreeMap<TerminationCause, u32> = TerminationCause::ALL
        .iter()
        .filter(|c| **c != TerminationCause::Success)
        .map(|&c| (c, 0))
        .collect();
    for r in records {
        totals.merge(&r.action_counts);
        if let Some(v) = failures.get_mut(&r.termination) {
            *v += 1;
        }
    }
    GroupSummary {
        policy: policy.to_string(),
        n_objects: n,
        rollouts: records.len() as u32,
        successes: k as u32,
        success_rate: k as f64 / records.len().max(1) as f64,
        mean_actions: mean,
        sem_actions: sem,
        no_successes: k == 0,
        curve,
        action_totals: totals,
        failures,
    }
}

/// Groups records by (label, heap size). Order of `records` does not matter.
pub fn summarize(records: &[RolloutRecord]) -> Result<ExperimentSummary, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Invalid("no records to summarize".into()));
    }
    let mut groups: BTreeMap<(String, u32), Vec<&RolloutRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.config.label.clone(), r.heap.n_objects)).or_default().push(r);
    }
    Ok(ExperimentSummary { groups: groups.iter().map(|((p, n), rs)| summarize_group(p, *n, rs)).collect() })
}

/// Parses a JSON-lines record file, rejecting unknown schema versions.
pub fn parse_records(text: &str) -> Result<Vec<RolloutRecord>, HarnessError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let r: RolloutRecord = serde_json::from_str(line)
                .map_err(|e| HarnessError::Invalid(format!("record {}: {e}", i + 1)))?;
            if r.schema_version != RECORD_SCHEMA_VERSION {
                return Err(HarnessError::Invalid(format!("record {}: schema version {}", i + 1, r.schema_version)));
            }
            Ok(r)
        })
        .collect()
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.prec$}"))
}

/// Writes `summary.csv`, `summary.txt` and one `curve_<policy>_n<N>.csv`
/// per group. Returns the written paths.
pub fn emit_reports(summary: &ExperimentSummary, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let mut csv = String::from(
        "policy,n_objects,rollouts,successes,success_rate,mean_actions,sem_actions,suction,parallel_jaw,push,no_action_available,target_ejected,timeout\n",
    );
    for g in &summary.groups {
        let f = |c| g.failures.get(&c).copied().unwrap_or(0);
        writeln!(
            csv,
            "{},{},{},{},{:.4},{},{},{},{},{},{},{},{}",
            g.policy,
            g.n_objects,
            g.rollouts,
            g.successes,
            g.success_rate,
            fmt_opt(g.mean_actions, 4),
            fmt_opt(g.sem_actions, 4),
            g.action_totals.suction,
            g.action_totals.parallel_jaw,
            g.action_totals.push,
            f(TerminationCause::NoActionAvailable),
            f(TerminationCause::TargetEjected),
            f(TerminationCause::Timeout),
        )
        .expect("write to string");
    }
    let path = out_dir.join("summary.csv");
    fs::write(&path, csv)?;
    written.push(path);

    let mut txt = String::new();
    writeln!(txt, "{:<22} {:>4} {:>6} {:>8} {:>16} {:>7}  failures (none/ejected/timeout)", "policy", "N", "runs", "success", "actions", "push%")
        .expect("write to string");
    for g in &summary.groups {
        let actions = match (g.mean_actions, g.sem_actions) {
            (Some(m), Some(s)) => format!("{m:.2} ± {s:.2}"),
            _ => "undefined".to_string(),
        };
        let f = |c| g.failures.get(&c).copied().unwrap_or(0);
        writeln!(
            txt,
            "{:<22} {:>4} {:>6} {:>7.1}% {:>16} {:>6.1}%  {}/{}/{}",
            g.policy,
            g.n_objects,
            g.rollouts,
            100.0 * g.success_rate,
            actions,
            100.0 * g.push_fraction(),
            f(TerminationCause::NoActionAvailable),
            f(TerminationCause::TargetEjected),
            f(TerminationCause::Timeout),
        )
        .expect("write to string");
    }
    let (name, rate, mean, sem) = REFERENCE_ROW;
    writeln!(txt, "{:<22} {:>4} {:>6} {:>7.1}% {:>16}", name, 15, "-", 100.0 * rate, format!("{mean:.2} ± {sem:.2}"))
        .expect("write to string");
    let path = out_dir.join("summary.txt");
    fs::write(&path, txt)?;
    written.push(path);

    for g in &summary.groups {
        let mut c = String::from("k,successes\n");
        for (i, v) in g.curve.iter().enumerate() {
            writeln!(c, "{},{}", i + 1, v).expect("write to string");
        }
        let path = out_dir.join(format!("curve_{}_n{}.csv", g.policy, g.n_objects));
        fs::write(&path, c)?;
        written.push(path);
    }
    Ok(written)
}
