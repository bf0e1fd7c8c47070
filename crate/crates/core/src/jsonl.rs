//! Object-per-line record files.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
}

impl JsonlError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        JsonlError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Reads every non-blank line of `path` as a `T`. Line numbers in errors are 1-based.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, JsonlError> {
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    parse_records(BufReader::new(file), &path.display().to_string())
}

pub fn parse_records<T: DeserializeOwned, R: BufRead>(
    reader: R,
    label: &str,
) -> Result<Vec<(usize, T)>, JsonlError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| JsonlError::Io {
            path: label.to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| JsonlError::Malformed {
            path: label.to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push((idx + 1, rec));
    }
    Ok(out)
}

pub fn to_line<T: Serialize>(record: &T) -> String {
    // Serialising plain data structs cannot fail.
    serde_json::to_string(record).expect("record serialises")
}

/// Atomically replaces `path` with one line per record (write to a sibling temp file, fsync, rename).
pub fn write_records<'a, T, I>(path: &Path, records: I) -> Result<(), JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| JsonlError::io(path, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| JsonlError::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for r in records {
            writeln!(w, "{}", to_line(r)).map_err(|e| JsonlError::io(&tmp, e))?;
        }
        let file = w.into_inner().map_err(|e| JsonlError::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| JsonlError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| JsonlError::io(path, e))
}

/// Appends a single record and fsyncs before returning.
pub fn append_record<T: Serialize>(path: &Path, record: &T) -> Result<(), JsonlError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| JsonlError::io(path, e))?;
        }
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| JsonlError::io(path, e))?;
    let mut line = to_line(record);
    line.push('\n');
    file.write_all(line.as_bytes())
        .map_err(|e| JsonlError::io(path, e))?;
    file.sync_data().map_err(|e| JsonlError::io(path, e))
}
