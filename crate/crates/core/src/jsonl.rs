//! Append-only line-delimited JSON files.
//!
//! Writers emit one complete line per `write_all`, so after a crash only the
//! final line can be partial. Readers accept an unterminated final line if
//! it parses, drop it with a warning if it does not, and treat any other
//! malformed line as corruption.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: line {line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl JsonlError {
    fn io(path: &Path, source: io::Error) -> Self {
        JsonlError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, PartialEq)]
pub struct JsonlRead<T> {
    pub records: Vec<T>,
    /// Byte length of the well-formed prefix.
    pub valid_len: usize,
    /// The well-formed prefix ends without a newline.
    pub missing_newline: bool,
    /// An unparseable unterminated final line was discarded.
    pub dropped_tail: bool,
}

/// Parses line-delimited JSON under the crash-tail policy described above.
pub fn parse_jsonl<T: DeserializeOwned>(bytes: &[u8], origin: &str) -> Result<JsonlRead<T>, JsonlError> {
    let mut out = JsonlRead {
        records: Vec::new(),
        valid_len: 0,
        missing_newline: false,
        dropped_tail: false,
    };
    let mut start = 0usize;
    let mut line_no = 0usize;
    while start < bytes.len() {
        line_no += 1;
        let (end, terminated) = match bytes[start..].iter().position(|b| *b == b'\n') {
            Some(i) => (start + i, true),
            None => (bytes.len(), false),
        };
        let line = &bytes[start..end];
        let next = if terminated { end + 1 } else { end };
        if line.iter().all(u8::is_ascii_whitespace) {
            if terminated {
                out.valid_len = next;
            }
            start = next;
            continue;
        }
        match serde_json::from_slice::<T>(line) {
            Ok(rec) => {
                out.records.push(rec);
                out.valid_len = next;
                out.missing_newline = !terminated;
            }
            Err(e) if !terminated => {
                log::warn!("{origin}: dropping partial final line {line_no}: {e}");
                out.dropped_tail = true;
            }
            Err(e) => {
                return Err(JsonlError::Corrupt {
                    path: origin.to_string(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
        start = next;
    }
    Ok(out)
}

/// Loads a file; a missing file reads as empty.
pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<JsonlRead<T>, JsonlError> {
    match std::fs::read(path) {
        Ok(bytes) => parse_jsonl(&bytes, &path.display().to_string()),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(JsonlRead {
            records: Vec::new(),
            valid_len: 0,
            missing_newline: false,
            dropped_tail: false,
        }),
        Err(e) => Err(JsonlError::io(path, e)),
    }
}

/// Appends records, one line per call, flushing each line.
#[derive(Debug)]
pub struct JsonlWriter {
    path: PathBuf,
    file: File,
}

impl JsonlWriter {
    /// Opens for append after cutting off a dropped partial tail and
    /// terminating an unterminated final record, as reported by `read`.
    pub fn open_repaired<T>(path: &Path, read: &JsonlRead<T>) -> Result<Self, JsonlError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| JsonlError::io(path, e))?;
        let len = file.metadata().map_err(|e| JsonlError::io(path, e))?.len();
        if len > read.valid_len as u64 {
            file.set_len(read.valid_len as u64)
                .map_err(|e| JsonlError::io(path, e))?;
        }
        let mut w = JsonlWriter {
            path: path.to_path_buf(),
            file,
        };
        if read.missing_newline {
            w.file
                .write_all(b"\n")
                .map_err(|e| JsonlError::io(path, e))?;
        }
        Ok(w)
    }

    /// Creates or truncates.
    pub fn create(path: &Path) -> Result<Self, JsonlError> {
        let file = File::create(path).map_err(|e| JsonlError::io(path, e))?;
        Ok(JsonlWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<(), JsonlError> {
        let mut line = serde_json::to_vec(record).map_err(|e| JsonlError::Corrupt {
            path: self.path.display().to_string(),
            line: 0,
            message: format!("serialize: {e}"),
        })?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.flush())
            .map_err(|e| JsonlError::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
