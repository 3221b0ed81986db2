//! File access helpers that record every path opened for reading.
//!
//! The record lets callers prove which inputs a command touched (for example
//! that training and reconstruction never read the synthetic ground truth).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{Error, Result};

static READS: Mutex<Vec<PathBuf>> = Mutex::new(Vec::new());

fn record(path: &Path) {
    READS
        .lock()
        .expect("read log poisoned")
        .push(path.to_path_buf());
}

/// Every path read through this module since process start, in order.
pub fn reads() -> Vec<PathBuf> {
    READS.lock().expect("read log poisoned").clone()
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    record(path);
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    record(path);
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::format(path, json_field(&e), e.to_string())
    })
}

fn json_field(e: &serde_json::Error) -> String {
    // serde_json reports unknown/missing fields inside the message; the line
    // and column are the most precise location it offers.
    format!("line {} column {}", e.line(), e.column())
}

pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, "<root>", e.to_string()))?;
    text.push('\n');
    write(path, text)
}
