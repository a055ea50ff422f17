//! `nodes.csv` / `relationships.csv` reading and writing.
//!
//! `nodes.csv` has the single column `id`; `relationships.csv` has
//! `source,target,type`, where an empty or absent `type` reads as `REL`.
//! Ids that parse as a signed 64-bit integer are integer ids; everything
//! else is a text id.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use crate::error::CsvError;
use crate::gen::GeneratedGraph;
use crate::node::{EdgeRecord, NodeId, NodeRecord, DEFAULT_REL_TYPE};

pub const NODES_FILE: &str = "nodes.csv";
pub const RELATIONSHIPS_FILE: &str = "relationships.csv";

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CsvError + '_ {
    move |source| CsvError::Csv {
        path: path.to_owned(),
        source,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CsvError + '_ {
    move |source| CsvError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Writes `nodes.csv` and `relationships.csv` into `dir`, creating it if
/// needed, and returns the two paths.
pub fn write_graph(graph: &GeneratedGraph, dir: &Path) -> Result<(PathBuf, PathBuf), CsvError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let nodes_path = dir.join(NODES_FILE);
    let rels_path = dir.join(RELATIONSHIPS_FILE);

    let mut w = csv::Writer::from_path(&nodes_path).map_err(csv_err(&nodes_path))?;
    w.write_record(["id"]).map_err(csv_err(&nodes_path))?;
    for node in &graph.nodes {
        w.write_record([node.id.to_string()])
            .map_err(csv_err(&nodes_path))?;
    }
    w.flush().map_err(io_err(&nodes_path))?;

    let mut w = csv::Writer::from_path(&rels_path).map_err(csv_err(&rels_path))?;
    w.write_record(["source", "target", "type"])
        .map_err(csv_err(&rels_path))?;
    for edge in &graph.edges {
        w.write_record([
            edge.source.to_string(),
            edge.target.to_string(),
            edge.rel_type.clone(),
        ])
        .map_err(csv_err(&rels_path))?;
    }
    w.flush().map_err(io_err(&rels_path))?;

    Ok((nodes_path, rels_path))
}

fn open(path: &Path) -> Result<(csv::Reader<File>, csv::StringRecord), CsvError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers().map_err(csv_err(path))?.clone();
    Ok((reader, headers))
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn malformed(path: &Path, line: u64, message: impl Into<String>) -> CsvError {
    CsvError::Malformed {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

fn parse_id(path: &Path, line: u64, field: Option<&str>, what: &str) -> Result<NodeId, CsvError> {
    let raw = field.ok_or_else(|| malformed(path, line, format!("missing {what}")))?;
    raw.parse()
        .map_err(|_| malformed(path, line, format!("empty {what}")))
}

pub fn read_nodes(path: &Path) -> Result<Vec<NodeRecord>, CsvError> {
    let (mut reader, headers) = open(path)?;
    let id_col = column(&headers, "id").ok_or_else(|| malformed(path, 1, "missing `id` header"))?;
    let mut nodes = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err(path))?;
        let line = record.position().map_or(0, |p| p.line());
        nodes.push(NodeRecord::new(parse_id(
            path,
            line,
            record.get(id_col),
            "id",
        )?));
    }
    Ok(nodes)
}

pub fn read_relationships(path: &Path) -> Result<Vec<EdgeRecord>, CsvError> {
    let (mut reader, headers) = open(path)?;
    let source_col =
        column(&headers, "source").ok_or_else(|| malformed(path, 1, "missing `source` header"))?;
    let target_col =
        column(&headers, "target").ok_or_else(|| malformed(path, 1, "missing `target` header"))?;
    let type_col = column(&headers, "type");

    let mut edges = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err(path))?;
        let line = record.position().map_or(0, |p| p.line());
        let rel_type = type_col
            .and_then(|c| record.get(c))
            .filter(|t| !t.is_empty())
            .unwrap_or(DEFAULT_REL_TYPE);
        edges.push(EdgeRecord::typed(
            parse_id(path, line, record.get(source_col), "source")?,
            parse_id(path, line, record.get(target_col), "target")?,
            rel_type,
        ));
    }
    Ok(edges)
}

/// Reads `nodes.csv` and `relationships.csv` from `dir`.
pub fn read_graph(dir: &Path) -> Result<GeneratedGraph, CsvError> {
    Ok(GeneratedGraph {
        nodes: read_nodes(&dir.join(NODES_FILE))?,
        edges: read_relationships(&dir.join(RELATIONSHIPS_FILE))?,
    })
}
