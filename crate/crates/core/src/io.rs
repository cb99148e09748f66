//! JSONL record schemas.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keystep::KeyStepSet;
use crate::rewards::{AnswerStatus, RewardBreakdown};

/// One reasoning path to score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub question_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyStepRecord {
    pub question_id: String,
    pub key_steps: KeyStepSet,
}

/// Gold answer for a question. Other fields on the line are ignored, so a
/// task corpus doubles as an answers file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    pub gold_answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub question_id: String,
    pub r_auc: f64,
    pub r_val: f64,
    pub k: f64,
    pub total: f64,
    pub answer_status: AnswerStatus,
}

impl RewardRecord {
    pub fn new(question_id: impl Into<String>, r: &RewardBreakdown) -> Self {
        Self {
            question_id: question_id.into(),
            r_auc: r.r_auc,
            r_val: r.r_val,
            k: r.k,
            total: r.total,
            answer_status: r.answer_status,
        }
    }
}

/// Parses one JSON value per non-blank line. Errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
