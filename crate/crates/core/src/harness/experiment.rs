//! Batch execution of heap × config rollouts with a single JSONL writer.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};
#[cfg(feature = "parallel")]
use std::sync::mpsc;

use super::{run_rollout, summarize, ExperimentSummary, HarnessError, LoadedHeap, RolloutConfig, RolloutRecord};

/// Marker file present next to the record file while a run is incomplete.
pub const PARTIAL_SUFFIX: &str = ".partial";
const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Worker pool of the given size. Falls back to sequential execution
    /// when the crate is built without the `parallel` feature.
    Parallel { workers: usize },
}

impl Execution {
    pub fn with_workers(workers: usize) -> Self {
        if workers <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel { workers }
        }
    }
}

/// Index pair into the heap and config lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkItem {
    pub heap: usize,
    pub config: usize,
}

fn work_items(n_heaps: usize, n_configs: usize) -> Vec<WorkItem> {
    (0..n_configs).flat_map(|config| (0..n_heaps).map(move |heap| WorkItem { heap, config })).collect()
}

/// Runs every item, handing each result to `sink` on the calling thread as
/// it completes. Stops scheduling new items once `sink` returns false.
fn drive(
    items: &[WorkItem],
    heaps: &[LoadedHeap],
    configs: &[RolloutConfig],
    exec: Execution,
    mut sink: impl FnMut(usize, Result<RolloutRecord, HarnessError>) -> bool,
) -> Result<(), HarnessError> {
    let run = |item: &WorkItem| {
        let h = &heaps[item.heap];
        run_rollout(&h.scene, &h.heap, &configs[item.config])
    };
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel { workers } => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| HarnessError::Invalid(format!("worker pool: {e}")))?;
            let abort = AtomicBool::new(false);
            let (tx, rx) = mpsc::channel();
            std::thread::scope(|scope| {
                let abort = &abort;
                scope.spawn(move || {
                    pool.install(|| {
                        items.par_iter().enumerate().for_each_with(tx, |tx, (i, item)| {
                            if !abort.load(Ordering::Relaxed) {
                                let _ = tx.send((i, run(item)));
                            }
                        })
                    })
                });
                for (i, res) in rx {
                    if !sink(i, res) {
                        abort.store(true, Ordering::Relaxed);
                    }
                }
            });
            Ok(())
        }
        _ => {
            for (i, item) in items.iter().enumerate() {
                if !sink(i, run(item)) {
                    break;
                }
            }
            Ok(())
        }
    }
}

/// Runs all heap × config rollouts in memory, returned in item order
/// (configs outer, heaps inner).
pub fn run_batch(heaps: &[LoadedHeap], configs: &[RolloutConfig], exec: Execution) -> Result<Vec<RolloutRecord>, HarnessError> {
    let items = work_items(heaps.len(), configs.len());
    let mut slots: Vec<Option<RolloutRecord>> = vec![None; items.len()];
    let mut first_err = None;
    drive(&items, heaps, configs, exec, |i, res| match res {
        Ok(r) => {
            slots[i] = Some(r);
            true
        }
        Err(e) => {
            first_err.get_or_insert(e);
            false
        }
    })?;
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(slots.into_iter().map(|r| r.expect("every item ran")).collect())
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub records_path: PathBuf,
    /// Records in item order, independent of completion order.
    pub records: Vec<RolloutRecord>,
    pub summary: ExperimentSummary,
}

/// Runs every rollout, streaming records to `out_dir/records.jsonl` as they
/// finish. A `.partial` marker sits beside the file until the run completes;
/// an interrupted run leaves the marker and a valid (shorter) JSONL file.
pub fn run_experiment(
    heaps: &[LoadedHeap],
    configs: &[RolloutConfig],
    exec: Execution,
    out_dir: &Path,
) -> Result<ExperimentOutput, HarnessError> {
    if heaps.is_empty() || configs.is_empty() {
        return Err(HarnessError::Invalid("need at least one heap and one config".into()));
    }
    fs::create_dir_all(out_dir)?;
    let records_path = out_dir.join(RECORDS_FILE);
    let marker = out_dir.join(format!("{RECORDS_FILE}{PARTIAL_SUFFIX}"));
    File::create(&marker)?;
    let mut writer = BufWriter::new(File::create(&records_path)?);

    let items = work_items(heaps.len(), configs.len());
    let total = items.len();
    let mut slots: Vec<Option<RolloutRecord>> = vec![None; total];
    let mut failure: Option<String> = None;
    let mut completed = 0;
    drive(&items, heaps, configs, exec, |i, res| {
        let line = res.and_then(|r| {
            let mut line = serde_json::to_string(&r)?;
            line.push('\n');
            writer.write_all(line.as_bytes())?;
            writer.flush()?;
            slots[i] = Some(r);
            Ok(())
        });
        match line {
            Ok(()) => {
                completed += 1;
                true
            }
            Err(e) => {
                failure.get_or_insert(e.to_string());
                false
            }
        }
    })?;
    writer.flush()?;
    if let Some(reason) = failure {
        return Err(HarnessError::PartialRun { completed, total, reason });
    }
    fs::remove_file(&marker)?;
    let records: Vec<RolloutRecord> = slots.into_iter().map(|r| r.expect("every item ran")).collect();
    let summary = summarize(&records)?;
    Ok(ExperimentOutput { records_path, records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{parse_records, HeapRef};
    use crate::heapgen::{generate_heap, HeapSpec};

    fn heaps(n: usize, count: u64) -> Vec<LoadedHeap> {
        (0..count)
            .map(|seed| LoadedHeap {
                heap: HeapRef { name: format!("h{seed}"), seed, n_objects: n as u32 },
                scene: generate_heap(&HeapSpec::new(n, seed)).unwrap(),
            })
            .collect()
    }

    fn sorted_lines(path: &Path) -> Vec<String> {
        let mut v: Vec<String> = fs::read_to_string(path).unwrap().lines().map(String::from).collect();
        v.sort();
        v
    }

    #[test]
    fn two_heaps_two_policies() {
        let hs = heaps(6, 2);
        let cfgs = vec![RolloutConfig::from_policy_name("random").unwrap(), RolloutConfig::from_policy_name("largest").unwrap()];
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&hs, &cfgs, Execution::Sequential, dir.path()).unwrap();
        assert_eq!(out.records.len(), 4);
        assert!(!dir.path().join("records.jsonl.partial").exists());
        let parsed = parse_records(&fs::read_to_string(&out.records_path).unwrap()).unwrap();
        assert_eq!(parsed.len(), 4);
        assert_eq!(summarize(&parsed).unwrap(), out.summary);
        assert_eq!(out.summary.groups.iter().map(|g| g.rollouts).sum::<u32>(), 4);
    }

    #[test]
    fn worker_count_does_not_change_records() {
        let hs = heaps(8, 4);
        let cfgs = vec![RolloutConfig::from_policy_name("prandom-push").unwrap()];
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let seq = run_experiment(&hs, &cfgs, Execution::Sequential, a.path()).unwrap();
        let par = run_experiment(&hs, &cfgs, Execution::Parallel { workers: 3 }, b.path()).unwrap();
        assert_eq!(seq.records, par.records);
        assert_eq!(sorted_lines(&seq.records_path), sorted_lines(&par.records_path));
    }

    #[test]
    fn failing_rollout_leaves_partial_marker() {
        let mut hs = heaps(5, 3);
        // An invalid heap (duplicate id) makes its rollout fail.
        let dup = hs[1].scene.objects[0].clone();
        hs[1].scene.objects.push(dup);
        let cfgs = vec![RolloutConfig::from_policy_name("random").unwrap()];
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment(&hs, &cfgs, Execution::Sequential, dir.path()).unwrap_err();
        assert!(matches!(err, HarnessError::PartialRun { completed: 1, total: 3, .. }), "{err}");
        assert!(dir.path().join("records.jsonl.partial").exists());
        assert_eq!(parse_records(&fs::read_to_string(dir.path().join("records.jsonl")).unwrap()).unwrap().len(), 1);
    }
}
