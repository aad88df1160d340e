//! Artifact serialization: deterministic CSV tables and the run manifest.
//!
//! Every run writes the same bytes for the same (configuration, seed) pair,
//! so CSV cells are formatted through one path: floats at 17 significant
//! digits (enough to round-trip an f64 exactly), records terminated with
//! CRLF, quoting per RFC 4180.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::Result;

/// Formats a float with 17 significant digits, round-tripping every f64.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Formats an integer-valued cell.
pub fn fmt_int<T: std::fmt::Display>(x: T) -> String {
    x.to_string()
}

/// An open CSV file with a fixed header.
pub struct CsvSink {
    writer: csv::Writer<File>,
    columns: usize,
    path: PathBuf,
}

impl CsvSink {
    /// Creates the file and writes the header record.
    ///
    /// # Errors
    ///
    /// [`crate::Error::Io`] if the file cannot be created or written.
    pub fn create(path: impl AsRef<Path>, headers: &[&str]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path)?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(file);
        writer.write_record(headers).map_err(csv_io)?;
        Ok(CsvSink {
            writer,
            columns: headers.len(),
            path,
        })
    }

    /// Appends one record; the field count must match the header.
    ///
    /// # Errors
    ///
    /// [`crate::Error::Io`] on a short write.
    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        assert_eq!(
            fields.len(),
            self.columns,
            "row width mismatch in {}",
            self.path.display()
        );
        self.writer.write_record(fields).map_err(csv_io)?;
        Ok(())
    }

    /// Flushes and closes the file.
    ///
    /// # Errors
    ///
    /// [`crate::Error::Io`] if buffered records cannot be flushed.
    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

fn csv_io(err: csv::Error) -> crate::Error {
    match err.into_kind() {
        csv::ErrorKind::Io(io) => crate::Error::Io(io),
        other => crate::Error::Io(std::io::Error::other(format!("csv: {other:?}"))),
    }
}

/// Writes `manifest.json`: the expanded configuration, the library version,
/// the seed, the run mode, and the artifact list.
///
/// # Errors
///
/// [`crate::Error::Io`] if the manifest cannot be written.
pub fn write_manifest(
    dir: &Path,
    mode: &str,
    config: &Value,
    artifacts: &[&str],
) -> Result<()> {
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "mode": mode,
        "seed": config.get("seed").cloned().unwrap_or(Value::Null),
        "config": config,
        "artifacts": artifacts,
    });
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let mut file = File::create(dir.join("manifest.json"))?;
    file.write_all(text.as_bytes())?;
    Ok(())
}
