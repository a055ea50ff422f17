//! Benchmark report rows and the append-only report CSV.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::ImportReport;
use crate::error::CsvError;

pub const REPORT_HEADER: &str =
    "threads,batch_size,trial,node_ms,rel_ms,retries,violations,max_bin_load,mean_bin_load";

/// One import run. `rel_ms` includes binning for the scheduled path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub threads: usize,
    pub batch_size: usize,
    pub trial: u32,
    pub node_ms: f64,
    pub rel_ms: f64,
    pub retries: u64,
    pub violations: usize,
    pub max_bin_load: u64,
    pub mean_bin_load: f64,
}

impl BenchRow {
    pub fn from_report(batch_size: usize, trial: u32, report: &ImportReport) -> Self {
        Self {
            threads: report.threads,
            batch_size,
            trial,
            node_ms: report.node_phase.as_secs_f64() * 1e3,
            rel_ms: report.relationship_total().as_secs_f64() * 1e3,
            retries: report.retries,
            violations: report.violations,
            max_bin_load: report.skew.max_bin_load,
            mean_bin_load: report.skew.mean_bin_load,
        }
    }
}

/// Appends rows to `path`, writing the header first when the file is new or
/// empty.
pub fn append_rows(path: &Path, rows: &[BenchRow]) -> Result<(), CsvError> {
    let io = |source| CsvError::Io {
        path: path.to_owned(),
        source,
    };
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io)?;
    if file.metadata().map_err(io)?.len() == 0 {
        writeln!(file, "{REPORT_HEADER}").map_err(io)?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|source| CsvError::Csv {
            path: path.to_owned(),
            source,
        })?;
    }
    w.flush().map_err(io)
}

pub fn read_rows(path: &Path) -> Result<Vec<BenchRow>, CsvError> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| CsvError::Csv {
        path: path.to_owned(),
        source,
    })?;
    reader
        .deserialize()
        .collect::<Result<Vec<BenchRow>, _>>()
        .map_err(|source| CsvError::Csv {
            path: path.to_owned(),
            source,
        })
}

/// Batch size with the lowest mean `rel_ms` for each thread count, with that
/// mean.
pub fn optimal_batch_sizes(rows: &[BenchRow]) -> BTreeMap<usize, (usize, f64)> {
    let mut cells: BTreeMap<(usize, usize), (f64, u32)> = BTreeMap::new();
    for row in rows {
        let cell = cells.entry((row.threads, row.batch_size)).or_default();
        cell.0 += row.rel_ms;
        cell.1 += 1;
    }
    let mut best: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for ((threads, batch), (sum, count)) in cells {
        let mean = sum / f64::from(count);
        let entry = best.entry(threads).or_insert((batch, mean));
        if mean < entry.1 {
            *entry = (batch, mean);
        }
    }
    best
}
