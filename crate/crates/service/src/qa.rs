//! Append-only QA submission log.
//!
//! One JSON object per line. Every line is written with a single
//! `write_all` on an `O_APPEND` handle while holding the writer lock, so
//! concurrent submissions never interleave.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, TimeDelta, Utc};
use momentscope_core::corpus::CorpusManifest;
use momentscope_core::temporal::MomentSelection;
use momentscope_core::FrameKey;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QaError {
    #[error("answer required")]
    AnswerRequired,
    #[error("session_id required")]
    SessionRequired,
    #[error("invalid moment: {0}")]
    InvalidMoment(String),
    #[error("viewed frame {0} not in corpus")]
    UnknownViewedFrame(i64),
    #[error("qa log {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Submission body as sent by clients. The server assigns `submitted_at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSubmission {
    pub session_id: String,
    #[serde(default)]
    pub question: String,
    pub answer: String,
    pub moment: MomentSelection,
    #[serde(default)]
    pub viewed_frame_keys: Vec<i64>,
}

/// One log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub submission_id: String,
    pub content_hash: String,
    pub submitted_at: String,
    pub session_id: String,
    pub question: String,
    pub answer: String,
    pub moment: MomentSelection,
    pub viewed_frame_keys: Vec<FrameKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReceipt {
    pub submission_id: String,
    pub content_hash: String,
    pub submitted_at: String,
}

#[derive(Serialize)]
struct Content<'a> {
    session_id: &'a str,
    question: &'a str,
    answer: &'a str,
    moment: &'a MomentSelection,
    viewed_frame_keys: &'a [FrameKey],
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl QaSubmission {
    /// Checks the submission against the corpus and resolves viewed keys.
    pub fn validate(&self, manifest: &CorpusManifest) -> Result<Vec<FrameKey>, QaError> {
        if self.answer.trim().is_empty() {
            return Err(QaError::AnswerRequired);
        }
        if self.session_id.trim().is_empty() {
            return Err(QaError::SessionRequired);
        }
        self.moment
            .validate(manifest, None)
            .map_err(QaError::InvalidMoment)?;
        self.viewed_frame_keys
            .iter()
            .map(|&k| manifest.checked_key(k).map_err(|_| QaError::UnknownViewedFrame(k)))
            .collect()
    }
}

/// Hash of the submitted content, independent of when it arrived.
pub fn content_hash(
    session_id: &str,
    question: &str,
    answer: &str,
    moment: &MomentSelection,
    viewed: &[FrameKey],
) -> String {
    let content = Content {
        session_id,
        question,
        answer,
        moment,
        viewed_frame_keys: viewed,
    };
    sha256_hex(&serde_json::to_vec(&content).expect("serializable"))
}

struct Writer {
    file: File,
    last: Option<DateTime<Utc>>,
}

pub struct QaLog {
    path: PathBuf,
    writer: Mutex<Writer>,
}

impl QaLog {
    pub fn open(path: &Path) -> Result<Self, QaError> {
        let io = |source| QaError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        Ok(Self {
            path: path.to_path_buf(),
            writer: Mutex::new(Writer { file, last: None }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Validates and appends one submission.
    pub fn submit(&self, sub: &QaSubmission, manifest: &CorpusManifest) -> Result<QaRecord, QaError> {
        let viewed = sub.validate(manifest)?;
        let hash = content_hash(&sub.session_id, &sub.question, &sub.answer, &sub.moment, &viewed);
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut now = Utc::now();
        if let Some(last) = w.last {
            if now <= last {
                now = last + TimeDelta::nanoseconds(1);
            }
        }
        let submitted_at = now.to_rfc3339_opts(SecondsFormat::Nanos, true);
        let mut record = QaRecord {
            submission_id: String::new(),
            content_hash: hash,
            submitted_at,
            session_id: sub.session_id.clone(),
            question: sub.question.clone(),
            answer: sub.answer.clone(),
            moment: sub.moment.clone(),
            viewed_frame_keys: viewed,
        };
        let stamp = sha256_hex(&serde_json::to_vec(&record).expect("serializable"));
        record.submission_id = format!("{}-{}", &record.content_hash[..16], &stamp[..8]);
        let mut line = serde_json::to_vec(&record).expect("serializable");
        line.push(b'\n');
        w.file.write_all(&line).map_err(|source| QaError::Io {
            path: self.path.display().to_string(),
            source,
        })?;
        w.last = Some(now);
        Ok(record)
    }
}

/// Parses a log file. Fails on the first malformed or partial line.
pub fn read_log(path: &Path) -> Result<Vec<QaRecord>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    if !text.is_empty() && !text.ends_with('\n') {
        return Err("log ends with a partial line".into());
    }
    text.lines()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}
