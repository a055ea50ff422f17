//! Import driver: node phase, relationship binning and the round-by-round
//! relationship phase.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Barrier;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use crate::error::{IngestError, StoreError};
use crate::node::{EdgeRecord, NodeRecord};
use crate::schedule::{
    bin_index, bin_of, validate_schedule, BinCoord, RoundSchedule, ThreadExponent,
};
use crate::store::{BatchTag, CommitFailure, CommitOutcome, GraphStore, WorkerId};

pub const MAX_RETRIES: u32 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImportConfig {
    pub n: ThreadExponent,
    pub batch_size: usize,
    pub max_retries: u32,
    pub instrumentation: bool,
    /// Abort on the first overlapping node access instead of recording it.
    pub strict_isolation: bool,
}

impl ImportConfig {
    pub fn new(n: ThreadExponent, batch_size: usize) -> Result<Self, IngestError> {
        let config = Self {
            n,
            batch_size,
            max_retries: 0,
            instrumentation: false,
            strict_isolation: false,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_retries(mut self, max_retries: u32) -> Result<Self, IngestError> {
        self.max_retries = max_retries;
        self.validate()?;
        Ok(self)
    }

    pub fn instrumented(mut self, on: bool) -> Self {
        self.instrumentation = on;
        self
    }

    pub fn strict(mut self, on: bool) -> Self {
        self.strict_isolation = on;
        self
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.batch_size == 0 {
            return Err(IngestError::InvalidConfig(
                "batch size must be at least 1".into(),
            ));
        }
        if self.max_retries > MAX_RETRIES {
            return Err(IngestError::InvalidConfig(format!(
                "max retries {} exceeds {MAX_RETRIES}",
                self.max_retries
            )));
        }
        Ok(())
    }

    fn apply_to(&self, store: &GraphStore) {
        store.set_instrumentation(self.instrumentation);
        store.set_strict_isolation(self.strict_isolation);
    }
}

/// Relationships sorted into the `2^(n+1)` square grid, row-major by
/// source bin index.
#[derive(Clone, Debug)]
pub struct BinStore {
    n: ThreadExponent,
    bins: Vec<Vec<EdgeRecord>>,
}

impl BinStore {
    pub fn n(&self) -> ThreadExponent {
        self.n
    }

    pub fn get(&self, bin: BinCoord) -> &[EdgeRecord] {
        &self.bins[bin.offset(self.n.grid_side())]
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(Vec::len).sum()
    }

    /// Edge count per bin, row-major.
    pub fn counts(&self) -> Vec<u64> {
        self.bins.iter().map(|b| b.len() as u64).collect()
    }

    pub fn skew(&self) -> SkewMetrics {
        SkewMetrics::from_counts(&self.counts(), self.n.grid_side())
    }
}

pub fn bin_relationships(
    edges: impl IntoIterator<Item = EdgeRecord>,
    n: ThreadExponent,
) -> BinStore {
    let side = n.grid_side();
    let mut bins = vec![Vec::new(); n.grid_cells()];
    for edge in edges {
        let bin = bin_of(&edge.source, &edge.target, n);
        bins[bin.offset(side)].push(edge);
    }
    BinStore { n, bins }
}

/// How unevenly relationships are spread over the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SkewMetrics {
    pub max_bin_load: u64,
    pub mean_bin_load: f64,
    /// Share of all edges in the fullest grid row (one source bin index).
    pub heaviest_row_fraction: f64,
    /// Share of all edges in the fullest grid column (one target bin index).
    pub heaviest_column_fraction: f64,
}

impl SkewMetrics {
    pub fn from_counts(counts: &[u64], side: u32) -> Self {
        let side = side as usize;
        assert_eq!(counts.len(), side * side, "counts must cover the grid");
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Self::default();
        }
        let mut rows = vec![0u64; side];
        let mut cols = vec![0u64; side];
        for (offset, &c) in counts.iter().enumerate() {
            rows[offset / side] += c;
            cols[offset % side] += c;
        }
        let fraction = |v: &[u64]| *v.iter().max().unwrap_or(&0) as f64 / total as f64;
        Self {
            max_bin_load: *counts.iter().max().unwrap_or(&0),
            mean_bin_load: total as f64 / counts.len() as f64,
            heaviest_row_fraction: fraction(&rows),
            heaviest_column_fraction: fraction(&cols),
        }
    }

    /// Max over mean bin load; 1.0 is perfectly even.
    pub fn load_ratio(&self) -> f64 {
        if self.mean_bin_load == 0.0 {
            0.0
        } else {
            self.max_bin_load as f64 / self.mean_bin_load
        }
    }

    /// Share of edges in the fullest single row or column.
    pub fn heaviest_line_fraction(&self) -> f64 {
        self.heaviest_row_fraction
            .max(self.heaviest_column_fraction)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundStats {
    pub label: String,
    pub duration: Duration,
    pub edges: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImportReport {
    pub threads: usize,
    pub node_phase: Duration,
    pub binning: Duration,
    /// Time spent committing relationships (rounds for the parallel path).
    pub relationship_phase: Duration,
    pub rounds: Vec<RoundStats>,
    pub grid_side: u32,
    /// Edge count per bin, row-major.
    pub bin_counts: Vec<u64>,
    pub skew: SkewMetrics,
    pub edges: u64,
    pub commits: u64,
    pub retries: u64,
    pub violations: usize,
}

impl ImportReport {
    /// Binning plus commit time, the figure compared across thread counts.
    pub fn relationship_total(&self) -> Duration {
        self.binning + self.relationship_phase
    }
}

/// Loads nodes with `2^n` workers; worker `w` takes the ids whose bin index
/// is congruent to `w` modulo `2^n`, so one id always maps to one worker.
pub fn import_nodes(
    nodes: impl IntoIterator<Item = NodeRecord>,
    config: &ImportConfig,
    store: &GraphStore,
) -> Result<usize, IngestError> {
    config.validate()?;
    let threads = config.n.threads();
    let mut parts: Vec<Vec<NodeRecord>> = vec![Vec::new(); threads];
    for node in nodes {
        let worker = bin_index(&node.id, config.n) as usize % threads;
        parts[worker].push(node);
    }

    let results: Vec<Result<usize, IngestError>> = thread::scope(|s| {
        let handles: Vec<_> = parts
            .into_iter()
            .map(|part| {
                s.spawn(move || {
                    let mut created = 0;
                    let mut iter = part.into_iter();
                    loop {
                        let chunk: Vec<NodeRecord> =
                            iter.by_ref().take(config.batch_size).collect();
                        if chunk.is_empty() {
                            return Ok(created);
                        }
                        created += store.create_nodes(chunk).map_err(IngestError::from)?;
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or(Err(IngestError::WorkerPanicked)))
            .collect()
    });

    let mut total = 0;
    for r in results {
        total += r?;
    }
    Ok(total)
}

/// Commits `edges` in batches of `config.batch_size`, resubmitting a batch
/// that hits a conflict up to `config.max_retries` times.
fn commit_batches(
    store: &GraphStore,
    worker: WorkerId,
    tag: BatchTag,
    edges: Vec<EdgeRecord>,
    config: &ImportConfig,
    retries: &AtomicU64,
    commits: &AtomicU64,
) -> Result<(), IngestError> {
    let mut iter = edges.into_iter();
    for batch in 0.. {
        let chunk: Vec<EdgeRecord> = iter.by_ref().take(config.batch_size).collect();
        if chunk.is_empty() {
            break;
        }
        let mut txn = store.begin_tagged(worker, tag);
        txn.extend(chunk)?;
        let mut attempts: u32 = 0;
        loop {
            attempts += 1;
            match txn.commit() {
                CommitOutcome::Committed { .. } => {
                    commits.fetch_add(1, Ordering::Relaxed);
                    break;
                }
                CommitOutcome::Conflict if attempts > config.max_retries => {
                    return Err(IngestError::RetriesExhausted {
                        bin: tag.bin,
                        batch,
                        attempts,
                    });
                }
                CommitOutcome::Conflict => {
                    retries.fetch_add(1, Ordering::Relaxed);
                    txn.reopen()?;
                }
                CommitOutcome::Failed(CommitFailure::UnknownNode(id)) => {
                    return Err(IngestError::UnknownNode(id));
                }
                CommitOutcome::Failed(CommitFailure::IsolationViolation { node, holder }) => {
                    return Err(IngestError::IsolationViolation {
                        node,
                        worker,
                        holder,
                    });
                }
                CommitOutcome::Failed(CommitFailure::TransactionClosed) => {
                    return Err(StoreError::TransactionClosed.into());
                }
            }
        }
    }
    Ok(())
}

fn count_violations(config: &ImportConfig, store: &GraphStore) -> Result<usize, IngestError> {
    if config.instrumentation {
        Ok(store.isolation_violations()?.len())
    } else {
        Ok(0)
    }
}

type WorkItem = (usize, BinCoord, Vec<EdgeRecord>);

/// Imports binned relationships round by round.
///
/// Each round's bins go to workers by position (worker `i` takes the `i`-th
/// bin). All `2^n` workers meet at a barrier after every round, so no batch
/// of round `k + 1` starts before every batch of round `k` has resolved.
/// Rounds whose bins are all empty still run and are timed.
///
/// With instrumentation on, the store's access log is cleared first and the
/// report carries the number of overlapping accesses found afterwards.
pub fn import_relationships(
    bins: BinStore,
    schedule: &RoundSchedule,
    config: &ImportConfig,
    store: &GraphStore,
) -> Result<ImportReport, IngestError> {
    config.validate()?;
    if schedule.n != bins.n {
        return Err(IngestError::ScheduleMismatch {
            schedule: schedule.n.get(),
            bins: bins.n.get(),
        });
    }
    let violations = validate_schedule(schedule);
    if !violations.is_empty() {
        return Err(IngestError::InvalidConfig(format!(
            "schedule is invalid: {}",
            violations[0]
        )));
    }

    config.apply_to(store);
    if config.instrumentation {
        store.reset_instrumentation();
    }

    let n = bins.n;
    let side = n.grid_side();
    let threads = n.threads();
    let bin_counts = bins.counts();
    let skew = SkewMetrics::from_counts(&bin_counts, side);
    let edges = bin_counts.iter().sum();

    let mut grid = bins.bins;
    let mut work: Vec<Vec<WorkItem>> = vec![Vec::new(); threads];
    let mut rounds: Vec<RoundStats> = Vec::with_capacity(schedule.len());
    for (r, round) in schedule.iter().enumerate() {
        let mut round_edges = 0;
        for (worker, &bin) in round.bins.iter().enumerate() {
            let offset = bin.offset(side);
            round_edges += bin_counts[offset];
            work[worker].push((r, bin, std::mem::take(&mut grid[offset])));
        }
        rounds.push(RoundStats {
            label: round.label(),
            duration: Duration::ZERO,
            edges: round_edges,
        });
    }

    let round_count = schedule.len();
    let barrier = Barrier::new(threads);
    let abort = AtomicBool::new(false);
    let first_error: Mutex<Option<IngestError>> = Mutex::new(None);
    let retries = AtomicU64::new(0);
    let commits = AtomicU64::new(0);
    let durations: Mutex<Vec<Duration>> = Mutex::new(Vec::with_capacity(round_count));

    let started = Instant::now();
    let mark = Mutex::new(started);
    thread::scope(|s| {
        for (worker, items) in work.into_iter().enumerate() {
            let (barrier, abort, first_error) = (&barrier, &abort, &first_error);
            let (retries, commits, durations, mark) = (&retries, &commits, &durations, &mark);
            s.spawn(move || {
                let mut items = items.into_iter().peekable();
                // Every worker passes every barrier, even after an abort, so
                // none is left waiting.
                for r in 0..round_count {
                    if let Some((round, bin, edges)) = items.next_if(|item| item.0 == r) {
                        if !abort.load(Ordering::SeqCst) {
                            let tag = BatchTag {
                                round: Some(round),
                                bin: Some(bin),
                            };
                            if let Err(e) = commit_batches(
                                store,
                                worker as WorkerId,
                                tag,
                                edges,
                                config,
                                retries,
                                commits,
                            ) {
                                abort.store(true, Ordering::SeqCst);
                                first_error.lock().get_or_insert(e);
                            }
                        }
                    }
                    if barrier.wait().is_leader() {
                        let now = Instant::now();
                        let mut mark = mark.lock();
                        durations.lock().push(now - *mark);
                        *mark = now;
                    }
                }
            });
        }
    });
    let relationship_phase = started.elapsed();

    if let Some(e) = first_error.into_inner() {
        return Err(e);
    }
    for (stats, d) in rounds.iter_mut().zip(durations.into_inner()) {
        stats.duration = d;
    }

    Ok(ImportReport {
        threads,
        node_phase: Duration::ZERO,
        binning: Duration::ZERO,
        relationship_phase,
        rounds,
        grid_side: side,
        bin_counts,
        skew,
        edges,
        commits: commits.into_inner(),
        retries: retries.into_inner(),
        violations: count_violations(config, store)?,
    })
}

/// Single-worker baseline: no binning, batches committed in stream order.
///
/// Bin counts for `config.n` are still reported so serial and parallel
/// reports are comparable; they are computed outside the timed region.
pub fn import_serial(
    edges: Vec<EdgeRecord>,
    config: &ImportConfig,
    store: &GraphStore,
) -> Result<ImportReport, IngestError> {
    config.validate()?;
    config.apply_to(store);
    if config.instrumentation {
        store.reset_instrumentation();
    }

    let side = config.n.grid_side();
    let mut bin_counts = vec![0u64; config.n.grid_cells()];
    for e in &edges {
        bin_counts[bin_of(&e.source, &e.target, config.n).offset(side)] += 1;
    }
    let edge_count = edges.len() as u64;

    let retries = AtomicU64::new(0);
    let commits = AtomicU64::new(0);
    let started = Instant::now();
    commit_batches(
        store,
        0,
        BatchTag::default(),
        edges,
        config,
        &retries,
        &commits,
    )?;
    let relationship_phase = started.elapsed();

    Ok(ImportReport {
        threads: 1,
        node_phase: Duration::ZERO,
        binning: Duration::ZERO,
        relationship_phase,
        rounds: Vec::new(),
        grid_side: side,
        skew: SkewMetrics::from_counts(&bin_counts, side),
        bin_counts,
        edges: edge_count,
        commits: commits.into_inner(),
        retries: retries.into_inner(),
        violations: count_violations(config, store)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImportMode {
    /// One worker, stream order, no binning.
    Serial,
    /// `2^n` workers driven by the round schedule.
    Scheduled,
}

/// Full import into `store`: node phase, then the relationship phase in the
/// chosen mode. Binning time is included in the report separately.
pub fn run_import(
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
    config: &ImportConfig,
    mode: ImportMode,
    store: &GraphStore,
) -> Result<ImportReport, IngestError> {
    let started = Instant::now();
    import_nodes(nodes, config, store)?;
    let node_phase = started.elapsed();

    let mut report = match mode {
        ImportMode::Serial => import_serial(edges, config, store)?,
        ImportMode::Scheduled => {
            let started = Instant::now();
            let schedule = RoundSchedule::build(config.n);
            let bins = bin_relationships(edges, config.n);
            let binning = started.elapsed();
            let mut report = import_relationships(bins, &schedule, config, store)?;
            report.binning = binning;
            report
        }
    };
    report.node_phase = node_phase;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::NodeId;
    use crate::store::{FaultInjector, FaultRule};

    fn n(v: u8) -> ThreadExponent {
        ThreadExponent::new(v).unwrap()
    }

    fn config(v: u8, batch: usize) -> ImportConfig {
        ImportConfig::new(n(v), batch).unwrap()
    }

    fn nodes(range: std::ops::Range<i64>) -> Vec<NodeRecord> {
        range.map(NodeRecord::new).collect()
    }

    #[test]
    fn config_bounds() {
        assert!(ImportConfig::new(n(1), 0).is_err());
        assert!(config(1, 1).with_retries(1000).is_ok());
        assert!(config(1, 1).with_retries(1001).is_err());
    }

    #[test]
    fn node_import_partitions_by_bin_index() {
        let store = GraphStore::new();
        assert_eq!(
            import_nodes(nodes(0..1000), &config(2, 64), &store).unwrap(),
            1000
        );
        assert_eq!(store.node_count(), 1000);
        assert_eq!(
            import_nodes(Vec::new(), &config(2, 64), &GraphStore::new()).unwrap(),
            0
        );
    }

    #[test]
    fn node_import_reports_duplicate() {
        let store = GraphStore::new();
        let mut list = nodes(0..100);
        list.push(NodeRecord::new(37));
        match import_nodes(list, &config(2, 1000), &store) {
            Err(IngestError::Store(StoreError::DuplicateNodeId(id))) => {
                assert_eq!(id, NodeId::Int(37))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binning_places_edges() {
        let bins = bin_relationships([EdgeRecord::new(13, 8), EdgeRecord::new(7, 7)], n(2));
        assert_eq!(bins.get(BinCoord::new(5, 0)).len(), 1);
        assert_eq!(bins.get(BinCoord::new(7, 7)).len(), 1);
        assert_eq!(bins.total(), 2);

        let empty = bin_relationships(Vec::new(), n(2));
        assert!(empty.counts().iter().all(|&c| c == 0));
        assert_eq!(empty.counts().len(), 64);
    }

    #[test]
    fn skew_of_single_column() {
        // 2x2 grid, everything in column 0
        let m = SkewMetrics::from_counts(&[3, 0, 1, 0], 2);
        assert_eq!(m.max_bin_load, 3);
        assert_eq!(m.mean_bin_load, 1.0);
        assert_eq!(m.heaviest_row_fraction, 0.75);
        assert_eq!(m.heaviest_column_fraction, 1.0);
        assert_eq!(m.load_ratio(), 3.0);
    }

    #[test]
    fn empty_bins_still_run_every_round() {
        let store = GraphStore::new();
        let cfg = config(2, 10);
        let report = import_relationships(
            bin_relationships(Vec::new(), n(2)),
            &RoundSchedule::build(n(2)),
            &cfg,
            &store,
        )
        .unwrap();
        assert_eq!(report.edges, 0);
        assert_eq!(report.commits, 0);
        assert_eq!(report.rounds.len(), 16);
        assert_eq!(report.rounds[15].label, "7.B");
    }

    #[test]
    fn mismatched_schedule_is_rejected() {
        let store = GraphStore::new();
        let err = import_relationships(
            bin_relationships(Vec::new(), n(2)),
            &RoundSchedule::build(n(1)),
            &config(2, 1),
            &store,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            IngestError::ScheduleMismatch {
                schedule: 1,
                bins: 2
            }
        ));
    }

    #[test]
    fn serial_commit_arithmetic() {
        let store = GraphStore::new();
        store.create_nodes(nodes(0..100)).unwrap();
        let edges: Vec<_> = (0..75_000)
            .map(|i| EdgeRecord::new(i % 100, (i * 31) % 100))
            .collect();
        let report = import_serial(edges, &config(0, 1000), &store).unwrap();
        assert_eq!(report.commits, 75);
        assert_eq!(report.edges, 75_000);
        assert_eq!(store.edge_count(), 75_000);

        let empty = import_serial(Vec::new(), &config(0, 1000), &GraphStore::new()).unwrap();
        assert_eq!(empty.edges, 0);
    }

    #[test]
    fn unknown_node_propagates() {
        let store = GraphStore::new();
        store.create_nodes(nodes(0..4)).unwrap();
        let bins = bin_relationships([EdgeRecord::new(0, 1), EdgeRecord::new(2, 42)], n(1));
        let err = import_relationships(bins, &RoundSchedule::build(n(1)), &config(1, 10), &store)
            .unwrap_err();
        assert!(matches!(err, IngestError::UnknownNode(NodeId::Int(42))));
    }

    #[test]
    fn always_conflicting_bin_exhausts_retries() {
        let store = GraphStore::new();
        store.create_nodes(nodes(0..64)).unwrap();
        let edges: Vec<_> = (0..64)
            .flat_map(|s| (0..64).map(move |t| EdgeRecord::new(s, t)))
            .collect();
        let bad = BinCoord::new(2, 6);
        store.set_fault_injector(Some(FaultInjector::new([FaultRule::AlwaysBin(bad)])));
        let cfg = config(2, 16).with_retries(2).unwrap();
        let err = import_relationships(
            bin_relationships(edges, n(2)),
            &RoundSchedule::build(n(2)),
            &cfg,
            &store,
        )
        .unwrap_err();
        match err {
            IngestError::RetriesExhausted {
                bin,
                batch,
                attempts,
            } => {
                assert_eq!(bin, Some(bad));
                assert_eq!(batch, 0);
                assert_eq!(attempts, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scheduled_import_matches_serial() {
        let edges: Vec<_> = (0..500i64)
            .map(|i| EdgeRecord::new(i % 50, (i * 17 + 3) % 50))
            .collect();
        let serial = GraphStore::new();
        run_import(
            nodes(0..50),
            edges.clone(),
            &config(0, 7),
            ImportMode::Serial,
            &serial,
        )
        .unwrap();
        for v in 0..=3 {
            let store = GraphStore::new();
            let cfg = config(v, 7).instrumented(true);
            let report = run_import(
                nodes(0..50),
                edges.clone(),
                &cfg,
                ImportMode::Scheduled,
                &store,
            )
            .unwrap();
            assert_eq!(report.violations, 0);
            assert_eq!(report.bin_counts.iter().sum::<u64>(), 500);
            assert_eq!(
                store.snapshot_edges().unwrap(),
                serial.snapshot_edges().unwrap()
            );
        }
    }
}
