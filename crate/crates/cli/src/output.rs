//! Deterministic file emission.
//!
//! Floats are printed with 12 significant digits in scientific notation, negative zero
//! is printed as zero, and every CSV starts with a `# scenario_hash=...` comment line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::{CliError, CliResult};

/// 12 significant digits.
pub fn fmt_f(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.11e}")
}

/// A CSV file stamped with the scenario hash.
pub struct CsvOut {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(dir: &Path, name: &str, hash: &str, header: &[&str]) -> CliResult<Self> {
        let path = dir.join(name);
        let werr = |source| CliError::Write {
            path: path.clone(),
            source,
        };
        let mut buf = BufWriter::new(File::create(&path).map_err(werr)?);
        writeln!(buf, "# scenario_hash={hash}").map_err(werr)?;
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(buf);
        inner.write_record(header).map_err(|e| csv_err(&path, e))?;
        Ok(Self { path, inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner
            .write_record(fields)
            .map_err(|e| csv_err(&self.path, e))
    }

    pub fn finish(mut self) -> CliResult<PathBuf> {
        self.inner.flush().map_err(|source| CliError::Write {
            path: self.path.clone(),
            source,
        })?;
        Ok(self.path)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> CliResult<PathBuf> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialise");
    text.push('\n');
    std::fs::write(&path, text).map_err(|source| CliError::Write {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })
}
