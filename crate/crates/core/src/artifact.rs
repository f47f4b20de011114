//! Schema-versioned JSON-lines artifacts.
//!
//! Every record written by the pipeline carries a `"schema"` tag such as
//! `"trace/1"`. Readers refuse records whose tag does not match what they
//! expect, so a stale artifact from an older layout is never silently
//! misread.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const PROMPT_SCHEMA: &str = "prompt/1";
pub const FINAL_PROMPT_SCHEMA: &str = "final/1";
pub const TRACE_SCHEMA: &str = "trace/1";
pub const RETRIEVAL_SCHEMA: &str = "retrieval/1";
pub const MANIFEST_SCHEMA: &str = "manifest/1";
pub const RESPONSE_SCHEMA: &str = "response/1";
pub const PAGE_SCHEMA: &str = "page/1";
pub const ASSIGNMENT_SCHEMA: &str = "assignment/1";
pub const AGGREGATE_SCHEMA: &str = "aggregate/1";
pub const FREQUENCY_SCHEMA: &str = "frequency/1";
pub const VIE_SCHEMA: &str = "vie/1";

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Decode {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: expected schema {expected:?}, found {found:?}")]
    SchemaMismatch {
        path: PathBuf,
        line: usize,
        expected: String,
        found: String,
    },
    #[error("serialization failed: {0}")]
    Encode(#[from] serde_json::Error),
}

impl ArtifactError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        ArtifactError::Io {
            path: path.into(),
            source,
        }
    }
}

/// A record together with its schema tag. The tag is serialized first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema: String,
    #[serde(flatten)]
    pub record: T,
}

/// Encodes one record as a single JSON line (without the trailing newline).
pub fn encode_line<T: Serialize>(schema: &str, record: &T) -> Result<String, ArtifactError> {
    let v = Versioned {
        schema: schema.to_string(),
        record,
    };
    Ok(serde_json::to_string(&v)?)
}

fn decode_line<T: DeserializeOwned>(
    path: &Path,
    line_no: usize,
    line: &str,
    schema: &str,
) -> Result<T, ArtifactError> {
    #[derive(Deserialize)]
    struct Tag {
        schema: Option<String>,
    }
    let tag: Tag = serde_json::from_str(line).map_err(|source| ArtifactError::Decode {
        path: path.to_path_buf(),
        line: line_no,
        source,
    })?;
    let found = tag.schema.unwrap_or_default();
    if found != schema {
        return Err(ArtifactError::SchemaMismatch {
            path: path.to_path_buf(),
            line: line_no,
            expected: schema.to_string(),
            found,
        });
    }
    let v: Versioned<T> = serde_json::from_str(line).map_err(|source| ArtifactError::Decode {
        path: path.to_path_buf(),
        line: line_no,
        source,
    })?;
    Ok(v.record)
}

/// Reads every record of a JSON-lines artifact. Blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>, ArtifactError> {
    let file = File::open(path).map_err(|e| ArtifactError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ArtifactError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode_line(path, i + 1, &line, schema)?);
    }
    Ok(out)
}

/// Like [`read_jsonl`] but a missing file reads as empty.
pub fn read_jsonl_or_empty<T: DeserializeOwned>(
    path: &Path,
    schema: &str,
) -> Result<Vec<T>, ArtifactError> {
    if path.exists() {
        read_jsonl(path, schema)
    } else {
        Ok(Vec::new())
    }
}

/// Writes a whole artifact atomically: a temp file in the same directory is
/// renamed over the destination.
pub fn write_jsonl<'a, T, I>(path: &Path, schema: &str, records: I) -> Result<(), ArtifactError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut buf = String::new();
    for r in records {
        buf.push_str(&encode_line(schema, r)?);
        buf.push('\n');
    }
    write_atomic(path, buf.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| ArtifactError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| ArtifactError::io(dir, e))?;
    tmp.write_all(bytes)
        .map_err(|e| ArtifactError::io(path, e))?;
    tmp.as_file()
        .sync_data()
        .map_err(|e| ArtifactError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| ArtifactError::io(path, e.error))?;
    Ok(())
}

/// Append-only JSON-lines writer. Each record is written and flushed as one
/// `write` call so a crash never leaves half a line behind a complete one.
pub struct JsonlAppender {
    path: PathBuf,
    file: File,
    schema: String,
}

impl JsonlAppender {
    pub fn open(path: &Path, schema: &str) -> Result<Self, ArtifactError> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| ArtifactError::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ArtifactError::io(path, e))?;
        Ok(JsonlAppender {
            path: path.to_path_buf(),
            file,
            schema: schema.to_string(),
        })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<(), ArtifactError> {
        let mut line = encode_line(&self.schema, record)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| ArtifactError::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
