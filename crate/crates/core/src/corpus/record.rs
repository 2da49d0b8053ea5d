//! Reasoning records: one logic template or one carrier rewrite of it.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::formula::{parse_formula, Formula, SyntaxError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Abstract,
    Carrier,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Abstract => "abstract",
            Mode::Carrier => "carrier",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepBody {
    Formula(Formula),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLine {
    pub index: usize,
    pub body: StepBody,
    /// Cited earlier steps; only populated for abstract templates.
    pub justification: Vec<usize>,
    pub raw: String,
}

impl StepLine {
    pub fn formula(&self) -> Option<&Formula> {
        match &self.body {
            StepBody::Formula(f) => Some(f),
            StepBody::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningRecord {
    pub logic_id: String,
    pub topic: String,
    pub language: String,
    pub mode: Mode,
    pub steps: Vec<StepLine>,
    pub n_steps: usize,
}

impl ReasoningRecord {
    /// `logic_id/topic/language`, the identifier used for flows and matrices.
    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.logic_id, self.topic, self.language)
    }

    pub fn step_texts(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.raw.as_str()).collect()
    }

    pub fn to_raw(&self) -> RawRecord {
        RawRecord {
            logic_id: Some(self.logic_id.clone()),
            topic: Some(self.topic.clone()),
            language: Some(self.language.clone()),
            mode: Some(self.mode),
            steps: Some(self.steps.iter().map(|s| s.raw.clone()).collect()),
        }
    }
}

/// On-disk shape of one corpus line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub logic_id: Option<String>,
    pub topic: Option<String>,
    pub language: Option<String>,
    pub mode: Option<Mode>,
    pub steps: Option<Vec<String>>,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("step line without a `[k]` prefix: {0:?}")]
    BadStepPrefix(String),
    #[error("duplicate step index {0}")]
    DuplicateIndex(usize),
    #[error("step {index}: {source}")]
    Formula {
        index: usize,
        #[source]
        source: SyntaxError,
    },
    #[error("malformed justification in step {index}: {text:?}")]
    BadJustification { index: usize, text: String },
    #[error("invalid JSON record: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn parse_record_json(line: &str) -> Result<ReasoningRecord, RecordError> {
    let raw: RawRecord = serde_json::from_str(line)?;
    parse_record(&raw)
}

pub fn parse_record(raw: &RawRecord) -> Result<ReasoningRecord, RecordError> {
    let field = |v: &Option<String>, name: &'static str| -> Result<String, RecordError> {
        match v {
            Some(s) if !s.trim().is_empty() => Ok(s.clone()),
            _ => Err(RecordError::MissingField(name)),
        }
    };
    let logic_id = field(&raw.logic_id, "logic_id")?;
    let topic = field(&raw.topic, "topic")?;
    let language = field(&raw.language, "language")?;
    let mode = raw.mode.ok_or(RecordError::MissingField("mode"))?;
    let lines = match &raw.steps {
        Some(s) if !s.is_empty() => s,
        _ => return Err(RecordError::MissingField("steps")),
    };

    let mut seen = BTreeSet::new();
    let mut steps = Vec::with_capacity(lines.len());
    for line in lines {
        let (index, rest) = split_index(line)?;
        if !seen.insert(index) {
            return Err(RecordError::DuplicateIndex(index));
        }
        let step = match mode {
            Mode::Carrier => StepLine {
                index,
                body: StepBody::Text(rest.trim().to_string()),
                justification: Vec::new(),
                raw: line.clone(),
            },
            Mode::Abstract => {
                let (body, justification) = split_justification(index, rest)?;
                let formula = parse_formula(body)
                    .map_err(|source| RecordError::Formula { index, source })?;
                StepLine {
                    index,
                    body: StepBody::Formula(formula),
                    justification,
                    raw: line.clone(),
                }
            }
        };
        steps.push(step);
    }
    let n_steps = steps.len();
    Ok(ReasoningRecord {
        logic_id,
        topic,
        language,
        mode,
        steps,
        n_steps,
    })
}

fn split_index(line: &str) -> Result<(usize, &str), RecordError> {
    let bad = || RecordError::BadStepPrefix(line.to_string());
    let trimmed = line.trim_start();
    let inner = trimmed.strip_prefix('[').ok_or_else(bad)?;
    let close = inner.find(']').ok_or_else(bad)?;
    let digits = &inner[..close];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let index: usize = digits.parse().map_err(|_| bad())?;
    if index == 0 {
        return Err(bad());
    }
    Ok((index, &inner[close + 1..]))
}

/// Splits a trailing `(from [i], [j-k] ...)` clause off an abstract step body.
fn split_justification(index: usize, rest: &str) -> Result<(&str, Vec<usize>), RecordError> {
    let text = rest.trim_end();
    if !text.ends_with(')') {
        return Ok((rest.trim(), Vec::new()));
    }
    let mut depth = 0i32;
    let mut open = None;
    for (pos, c) in text.char_indices().rev() {
        match c {
            ')' => depth += 1,
            '(' => {
                depth -= 1;
                if depth == 0 {
                    open = Some(pos);
                    break;
                }
            }
            _ => {}
        }
    }
    let Some(open) = open else {
        return Ok((rest.trim(), Vec::new()));
    };
    let clause = text[open + 1..text.len() - 1].trim();
    let is_from = clause
        .get(..4)
        .is_some_and(|head| head.eq_ignore_ascii_case("from"));
    if !is_from {
        return Ok((rest.trim(), Vec::new()));
    }
    let refs = parse_references(clause).ok_or_else(|| RecordError::BadJustification {
        index,
        text: clause.to_string(),
    })?;
    Ok((text[..open].trim(), refs))
}

fn parse_references(clause: &str) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    let mut rest = clause;
    while let Some(start) = rest.find('[') {
        let end = rest[start..].find(']')? + start;
        for part in rest[start + 1..end].split(',') {
            let part = part.trim();
            match part.split_once('-') {
                Some((a, b)) => {
                    let (a, b): (usize, usize) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
                    if a > b {
                        return None;
                    }
                    for k in a..=b {
                        push_unique(&mut out, k);
                    }
                }
                None => push_unique(&mut out, part.parse().ok()?),
            }
        }
        rest = &rest[end + 1..];
    }
    if out.is_empty() {
        return None;
    }
    Some(out)
}

fn push_unique(out: &mut Vec<usize>, k: usize) {
    if !out.contains(&k) {
        out.push(k);
    }
}
