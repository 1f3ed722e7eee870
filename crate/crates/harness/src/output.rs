//! Result tables and their serialization.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind, OutputFormat, ECHO_PREFIX};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    /// Shortest text that parses back to the same value.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:?}"),
            Cell::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(u64::from(v))
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric values of a column.
    pub fn values(&self, name: &str) -> Vec<f64> {
        let Some(c) = self.column(name) else { return Vec::new() };
        self.rows.iter().filter_map(|r| r[c].as_f64()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    pub version: &'static str,
    pub tables: Vec<Table>,
}

impl ResultRecord {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn file_name(&self, table: &Table, format: OutputFormat) -> String {
        let ext = match format {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        };
        format!("{}_{}.{ext}", self.experiment.name().replace('-', "_"), table.name)
    }

    pub fn render(&self, table: &Table, format: OutputFormat) -> io::Result<String> {
        match format {
            OutputFormat::Csv => self.render_csv(table),
            OutputFormat::Json => self.render_json(table),
        }
    }

    fn render_csv(&self, table: &Table) -> io::Result<String> {
        let mut out = format!("# version: {}\n", self.version);
        for line in self.config.to_toml().lines() {
            out.push_str(ECHO_PREFIX);
            out.push_str(line);
            out.push('\n');
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&table.columns)?;
        for row in &table.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        let body = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
        out.push_str(&String::from_utf8(body).map_err(io::Error::other)?);
        Ok(out)
    }

    fn render_json(&self, table: &Table) -> io::Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            version: &'a str,
            experiment: ExperimentKind,
            config: &'a ExperimentConfig,
            table: &'a str,
            columns: &'a [String],
            rows: &'a [Vec<Cell>],
        }
        let doc = Doc {
            version: self.version,
            experiment: self.experiment,
            config: &self.config,
            table: &table.name,
            columns: &table.columns,
            rows: &table.rows,
        };
        let mut s = serde_json::to_string_pretty(&doc).map_err(io::Error::other)?;
        s.push('\n');
        Ok(s)
    }

    /// Write one file per table into `dir`.
    pub fn write(&self, dir: &Path, format: OutputFormat) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut paths = Vec::with_capacity(self.tables.len());
        for table in &self.tables {
            let path = dir.join(self.file_name(table, format));
            fs::write(&path, self.render(table, format)?)?;
            paths.push(path);
        }
        Ok(paths)
    }
}
