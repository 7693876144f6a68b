use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pgrecruit::estimation::CentreEvents;

use crate::error::{CliError, CliResult};
use crate::ingest::write_events;

/// Output directory that remembers what was written, for the manifest.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

impl Output {
    pub fn new(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn create(&mut self, name: &str) -> CliResult<(PathBuf, BufWriter<File>)> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        self.files.push(name.to_string());
        Ok((path, BufWriter::new(file)))
    }

    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let (path, file) = self.create(name)?;
        let err = |e: csv::Error| CliError::io(&path, e.into());
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(row).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))
    }

    pub fn events(&mut self, name: &str, events: &[CentreEvents]) -> CliResult<()> {
        let (path, mut file) = self.create(name)?;
        write_events(&mut file, events)?;
        file.flush().map_err(|e| CliError::io(&path, e))
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn manifest(&mut self, mut manifest: serde_json::Value) -> CliResult<()> {
        manifest["outputs"] = serde_json::json!(self.files);
        let (path, mut file) = self.create("manifest.json")?;
        serde_json::to_writer_pretty(&mut file, &manifest).map_err(|e| CliError::io(&path, e.into()))?;
        writeln!(file).and_then(|_| file.flush()).map_err(|e| CliError::io(&path, e))
    }
}
