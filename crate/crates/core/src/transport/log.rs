//! JSON Lines logs written by the publisher (send log) and the broker
//! (receive log), and a tolerant loader for them.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SendLogEntry {
    pub session: String,
    pub seq_no: u32,
    pub send_ts_ms: f64,
    pub digest: String,
    pub samples: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiveLogEntry {
    pub session: String,
    /// `None` when the payload could not be decoded as a batch.
    pub seq_no: Option<u32>,
    pub recv_ts_ms: f64,
    /// Whole-millisecond send time from the payload header.
    pub send_ts_ms: Option<u64>,
    pub digest: String,
    pub samples: Vec<i32>,
    #[serde(default)]
    pub corrupt: bool,
}

/// Serialized append-only log: every entry is flushed as one line, and
/// optionally mirrored in memory.
pub struct JsonlAppender<T> {
    inner: Mutex<AppenderState<T>>,
}

struct AppenderState<T> {
    file: Option<BufWriter<File>>,
    memory: Option<Vec<T>>,
    write_errors: u64,
}

impl<T: Serialize + Clone> JsonlAppender<T> {
    pub fn memory() -> Self {
        Self::build(None, true)
    }

    pub fn create(path: impl AsRef<Path>, keep_in_memory: bool) -> io::Result<Self> {
        let f = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self::build(Some(BufWriter::new(f)), keep_in_memory))
    }

    fn build(file: Option<BufWriter<File>>, keep: bool) -> Self {
        Self {
            inner: Mutex::new(AppenderState {
                file,
                memory: keep.then(Vec::new),
                write_errors: 0,
            }),
        }
    }

    /// Write failures are counted, never propagated.
    pub fn append(&self, entry: &T) {
        let mut st = self.inner.lock().unwrap();
        if let Some(f) = st.file.as_mut() {
            let ok = serde_json::to_writer(&mut *f, entry).is_ok() && f.write_all(b"\n").is_ok() && f.flush().is_ok();
            if !ok {
                st.write_errors += 1;
            }
        }
        if let Some(m) = st.memory.as_mut() {
            m.push(entry.clone());
        }
    }

    pub fn snapshot(&self) -> Vec<T> {
        self.inner.lock().unwrap().memory.clone().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().memory.as_ref().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_errors(&self) -> u64 {
        self.inner.lock().unwrap().write_errors
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedLog<T> {
    pub entries: Vec<T>,
    /// 1-based line numbers that did not parse.
    pub skipped_lines: Vec<usize>,
}

impl<T> LoadedLog<T> {
    pub fn skipped(&self) -> usize {
        self.skipped_lines.len()
    }
}

/// Parse a JSON Lines log. Malformed lines are skipped and reported;
/// only an unreadable file is an error.
pub fn load_log<T: DeserializeOwned>(path: impl AsRef<Path>) -> io::Result<LoadedLog<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    let mut skipped_lines = Vec::new();
    for (i, line) in reader.split(b'\n').enumerate() {
        let line = line?;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match serde_json::from_slice::<T>(&line) {
            Ok(e) => entries.push(e),
            Err(_) => skipped_lines.push(i + 1),
        }
    }
    Ok(LoadedLog { entries, skipped_lines })
}
