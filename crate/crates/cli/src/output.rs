//! CSV tables, manifests and atomic writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// 17 significant digits, locale independent.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map_or_else(String::new, num)
}

pub struct Table {
    pub name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    /// Every table starts with a `config_hash` column.
    pub fn new(name: &str, columns: &[&str]) -> Self {
        let mut header = vec!["config_hash".to_string()];
        header.extend(columns.iter().map(|c| c.to_string()));
        Self { name: name.to_string(), header, rows: Vec::new() }
    }

    pub fn push(&mut self, hash: &str, cells: Vec<String>) {
        assert_eq!(cells.len() + 1, self.header.len(), "row width mismatch in {}", self.name);
        let mut row = vec![hash.to_string()];
        row.extend(cells);
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(contents.as_bytes()).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

#[derive(Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub threads: usize,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}

pub struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write_table(&mut self, t: &Table) -> Result<(), CliError> {
        let file = format!("{}.csv", t.name);
        write_atomic(&self.dir.join(&file), &t.render())?;
        self.written.push(file);
        Ok(())
    }

    pub fn finish(self, mut manifest: Manifest) -> Result<(), CliError> {
        manifest.outputs = self.written;
        let text = toml::to_string(&manifest).map_err(|e| CliError::Io(format!("manifest: {e}")))?;
        write_atomic(&self.dir.join("manifest.toml"), &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_roundtrip() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt() * 1e-300, -7.25e12] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn tables_render_with_hash() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push("h", vec!["1".into(), "2".into()]);
        assert_eq!(t.render(), "config_hash,a,b\nh,1,2\n");
    }
}
