//! Atomic persistence of tables, JSON documents and field snapshots.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use snls_core::snapshot::write_snapshot;
use snls_core::Field;
use tempfile::NamedTempFile;

/// Version of the JSON summary layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Shortest round-trip decimal; `NaN`, `inf`, `-inf` for non-finite values.
pub fn fmt_f64(x: f64) -> String {
    ryu::Buffer::new().format(x).to_string()
}

/// A named table written as `<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::WriterBuilder::new().delimiter(b',').from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(w.into_inner().expect("in-memory writer"))
    }
}

/// Output directory; every write goes through a temp file plus rename.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Relative paths written so far, in write order.
    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> std::io::Result<()> {
        let target = self.root.join(rel);
        let dir = target.parent().unwrap_or(&self.root).to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut tmp = NamedTempFile::new_in(&dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target).map_err(|e| e.error)?;
        self.written.push(rel.to_string());
        Ok(())
    }

    pub fn write_table(&mut self, table: &Table) -> std::io::Result<()> {
        let bytes = table.to_bytes().map_err(std::io::Error::other)?;
        self.write_bytes(&table.file_name(), &bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> std::io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    pub fn write_field(&mut self, rel: &str, field: &Field, time: f64) -> std::io::Result<()> {
        let mut bytes = Vec::new();
        write_snapshot(&mut bytes, field, time).map_err(|e| std::io::Error::other(e.to_string()))?;
        self.write_bytes(rel, &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new("norms", &["time", "norm_kind", "value"]);
        assert_eq!(String::from_utf8(t.to_bytes().unwrap()).unwrap(), "time,norm_kind,value\n");
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1e-10, 2.5, -3.0e300, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn writes_land_in_root() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(&dir.path().join("run")).unwrap();
        out.write_bytes("a/b.txt", b"x").unwrap();
        assert_eq!(fs::read(dir.path().join("run/a/b.txt")).unwrap(), b"x");
        assert_eq!(out.written(), ["a/b.txt"]);
        let leftovers = fs::read_dir(dir.path().join("run/a")).unwrap().count();
        assert_eq!(leftovers, 1);
    }
}
