//! Conflict-free parallel relationship import.
//!
//! Relationships are binned on a `2^(n+1)` square grid by the low bits of
//! their endpoint ids, then imported by `2^n` workers in rounds whose bins
//! never share a row or column index. See [`schedule`] for the round
//! construction, [`store`] for the instrumented target store and [`engine`]
//! for the import driver.

pub mod csvio;
pub mod engine;
pub mod error;
pub mod gen;
pub mod hash;
pub mod node;
pub mod report;
pub mod schedule;
pub mod store;

pub use engine::{
    bin_relationships, import_nodes, import_relationships, import_serial, run_import, BinStore,
    ImportConfig, ImportMode, ImportReport, RoundStats, SkewMetrics,
};
pub use error::{CsvError, GenError, IngestError, ScheduleError, StoreError};
pub use gen::{generate, GenSpec, GeneratedGraph, GraphModel, IdKind};
pub use node::{EdgeRecord, NodeId, NodeRecord, DEFAULT_REL_TYPE};
pub use report::BenchRow;
pub use schedule::{
    bin_index, bin_of, build_schedule, validate_schedule, BinCoord, Half, Round, RoundSchedule,
    ThreadExponent, Violation,
};
pub use store::{
    BatchTag, BatchTransaction, CommitFailure, CommitOutcome, EdgeSnapshot, FaultInjector,
    FaultRule, GraphStore, IsolationViolation, WorkerId,
};
