use std::path::PathBuf;

use thiserror::Error;

use crate::node::NodeId;
use crate::schedule::BinCoord;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("thread exponent {n} exceeds the maximum of {max}")]
    ExponentTooLarge { n: u8, max: u8 },
    #[error("threads must be a power of two, got {0}")]
    NotPowerOfTwo(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("duplicate node id {0}")]
    DuplicateNodeId(NodeId),
    #[error("text node ids must be non-empty")]
    EmptyTextId,
    #[error("transaction is not open")]
    TransactionClosed,
    #[error("{0} transaction(s) still open")]
    OpenTransactionsOutstanding(usize),
    #[error("access instrumentation is disabled")]
    InstrumentationDisabled,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("invalid import config: {0}")]
    InvalidConfig(String),
    #[error("schedule is for n = {schedule} but bins were built for n = {bins}")]
    ScheduleMismatch { schedule: u8, bins: u8 },
    #[error("{}", retries_exhausted_message(.bin, *.batch, *.attempts))]
    RetriesExhausted {
        bin: Option<BinCoord>,
        batch: usize,
        attempts: u32,
    },
    #[error("relationship references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("isolation violation on node {node}: worker {worker} overlapped worker {holder}")]
    IsolationViolation {
        node: NodeId,
        worker: u32,
        holder: u32,
    },
    #[error("import worker panicked")]
    WorkerPanicked,
}

fn retries_exhausted_message(bin: &Option<BinCoord>, batch: usize, attempts: u32) -> String {
    match bin {
        Some(bin) => {
            format!("retries exhausted for bin {bin}, batch {batch} after {attempts} attempts")
        }
        None => format!("retries exhausted for batch {batch} after {attempts} attempts"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("invalid graph spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },
}
