use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use super::record::{parse_record_json, Mode, ReasoningRecord, RecordError};
use super::validate::{validate_record, Finding, FindingCode, ValidationReport};

#[derive(Debug, Clone, Default)]
pub struct LogicGroup {
    pub template: Option<ReasoningRecord>,
    /// Sorted by (topic, language).
    pub carriers: Vec<ReasoningRecord>,
}

impl LogicGroup {
    pub fn n_steps(&self) -> Option<usize> {
        self.template
            .as_ref()
            .or_else(|| self.carriers.first())
            .map(|r| r.n_steps)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Exclusion {
    pub record: String,
    pub mode: Mode,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusIndex {
    pub groups: BTreeMap<String, LogicGroup>,
    pub topic_counts: BTreeMap<String, usize>,
    pub language_counts: BTreeMap<String, usize>,
    pub excluded: Vec<Exclusion>,
    pub warnings: Vec<(String, Finding)>,
}

impl CorpusIndex {
    pub fn accepted_records(&self) -> usize {
        self.groups
            .values()
            .map(|g| g.carriers.len() + usize::from(g.template.is_some()))
            .sum()
    }

    pub fn carriers(&self) -> impl Iterator<Item = &ReasoningRecord> {
        self.groups.values().flat_map(|g| g.carriers.iter())
    }
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("corpus is empty (no records accepted)")]
    EmptyCorpus,
}

/// Groups records by logic id. Records failing validation, duplicated
/// carriers and carriers whose step count differs from their group are
/// excluded and reported.
pub fn build_index(records: Vec<ReasoningRecord>) -> Result<CorpusIndex, IndexError> {
    let mut index = CorpusIndex::default();
    let mut templates: BTreeMap<String, ReasoningRecord> = BTreeMap::new();
    let mut carriers: BTreeMap<String, Vec<ReasoningRecord>> = BTreeMap::new();

    for rec in records {
        let report = validate_record(&rec, None);
        if report.has_errors() {
            index.excluded.push(Exclusion {
                record: rec.key(),
                mode: rec.mode,
                reason: format!("{} validation error(s)", report.error_count()),
            });
            continue;
        }
        match rec.mode {
            Mode::Abstract => {
                if templates.contains_key(&rec.logic_id) {
                    let finding = Finding::warning(
                        None,
                        FindingCode::DuplicateTemplate,
                        "second template for this logic ignored",
                    );
                    index.warnings.push((rec.key(), finding));
                    index.excluded.push(Exclusion {
                        record: rec.key(),
                        mode: rec.mode,
                        reason: "duplicate template".into(),
                    });
                } else {
                    templates.insert(rec.logic_id.clone(), rec);
                }
            }
            Mode::Carrier => carriers.entry(rec.logic_id.clone()).or_default().push(rec),
        }
    }

    let logic_ids: std::collections::BTreeSet<String> =
        templates.keys().chain(carriers.keys()).cloned().collect();
    for logic_id in logic_ids {
        let template = templates.remove(&logic_id);
        let mut members = carriers.remove(&logic_id).unwrap_or_default();
        members.sort_by(|a, b| (&a.topic, &a.language).cmp(&(&b.topic, &b.language)));

        let reference = match &template {
            Some(t) => t.n_steps,
            None => modal_length(&members),
        };
        let mut kept: Vec<ReasoningRecord> = Vec::with_capacity(members.len());
        for rec in members {
            let duplicate = kept
                .last()
                .is_some_and(|k| k.topic == rec.topic && k.language == rec.language);
            let finding = if duplicate {
                Some(Finding::warning(
                    None,
                    FindingCode::DuplicateCarrier,
                    "duplicate (logic, topic, language) carrier excluded",
                ))
            } else if rec.n_steps != reference {
                Some(Finding::warning(
                    None,
                    FindingCode::StepCountMismatch {
                        expected: reference,
                        found: rec.n_steps,
                    },
                    format!("carrier has {} steps, group has {reference}", rec.n_steps),
                ))
            } else {
                None
            };
            match finding {
                Some(f) => {
                    index.excluded.push(Exclusion {
                        record: rec.key(),
                        mode: rec.mode,
                        reason: f.message.clone(),
                    });
                    index.warnings.push((rec.key(), f));
                }
                None => {
                    *index.topic_counts.entry(rec.topic.clone()).or_default() += 1;
                    *index.language_counts.entry(rec.language.clone()).or_default() += 1;
                    kept.push(rec);
                }
            }
        }
        index.groups.insert(
            logic_id,
            LogicGroup {
                template,
                carriers: kept,
            },
        );
    }

    if index.accepted_records() == 0 {
        return Err(IndexError::EmptyCorpus);
    }
    Ok(index)
}

fn modal_length(records: &[ReasoningRecord]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.n_steps).or_default() += 1;
    }
    // BTreeMap iterates ascending, so ties keep the shorter length
    counts
        .into_iter()
        .fold((0, 0), |best, (len, n)| if n > best.1 { (len, n) } else { best })
        .0
}

/// One corpus line that could not be parsed.
#[derive(Debug)]
pub struct LineError {
    pub line: usize,
    pub error: RecordError,
}

/// Reads a JSONL corpus. Blank lines are skipped; unparseable lines are
/// returned alongside the parsed records.
pub fn load_corpus(path: &Path) -> std::io::Result<(Vec<ReasoningRecord>, Vec<LineError>)> {
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record_json(&line) {
            Ok(r) => records.push(r),
            Err(error) => errors.push(LineError { line: i + 1, error }),
        }
    }
    Ok((records, errors))
}

pub fn write_corpus(path: &Path, records: &[ReasoningRecord]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r.to_raw()).expect("raw record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Validation of a whole corpus: per-record structure, each carrier against
/// its template, and (optionally) template derivations.
pub fn validate_corpus(records: &[ReasoningRecord], check_derivations: bool) -> Vec<ValidationReport> {
    let templates: BTreeMap<&str, &ReasoningRecord> = records
        .iter()
        .filter(|r| r.mode == Mode::Abstract)
        .map(|r| (r.logic_id.as_str(), r))
        .collect();
    records
        .iter()
        .map(|r| {
            let template = match r.mode {
                Mode::Carrier => templates.get(r.logic_id.as_str()).copied(),
                Mode::Abstract => None,
            };
            let mut report = validate_record(r, template);
            if check_derivations && r.mode == Mode::Abstract {
                report.merge(super::validate::check_derivation(r));
            }
            report
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::record::{parse_record, RawRecord};

    fn rec(logic: &str, topic: &str, lang: &str, mode: Mode, n: usize) -> ReasoningRecord {
        let steps = (1..=n)
            .map(|k| match mode {
                Mode::Carrier => format!("[{k}] text {k}"),
                Mode::Abstract => format!("[{k}] A"),
            })
            .collect();
        parse_record(&RawRecord {
            logic_id: Some(logic.into()),
            topic: Some(topic.into()),
            language: Some(lang.into()),
            mode: Some(mode),
            steps: Some(steps),
        })
        .unwrap()
    }

    #[test]
    fn groups_two_by_two() {
        let records = vec![
            rec("L2", "b", "en", Mode::Carrier, 9),
            rec("L1", "a", "en", Mode::Carrier, 9),
            rec("L1", "b", "en", Mode::Carrier, 9),
            rec("L2", "a", "en", Mode::Carrier, 9),
        ];
        let index = build_index(records).unwrap();
        assert_eq!(index.groups.len(), 2);
        assert!(index.groups.values().all(|g| g.carriers.len() == 2));
        assert_eq!(index.groups.keys().collect::<Vec<_>>(), vec!["L1", "L2"]);
        assert_eq!(index.groups["L1"].carriers[0].topic, "a");
        assert_eq!(index.topic_counts["a"], 2);
        assert_eq!(index.language_counts["en"], 4);
    }

    #[test]
    fn mismatched_carrier_excluded() {
        let records = vec![
            rec("L1", "abstract", "sym", Mode::Abstract, 9),
            rec("L1", "a", "en", Mode::Carrier, 9),
            rec("L1", "b", "en", Mode::Carrier, 8),
        ];
        let index = build_index(records).unwrap();
        assert_eq!(index.groups["L1"].carriers.len(), 1);
        assert_eq!(index.excluded.len(), 1);
        assert!(matches!(
            index.warnings[0].1.code,
            FindingCode::StepCountMismatch { expected: 9, found: 8 }
        ));
        assert_eq!(index.accepted_records(), 2);
    }

    #[test]
    fn group_without_template_uses_modal_length() {
        let records = vec![
            rec("L1", "a", "en", Mode::Carrier, 10),
            rec("L1", "b", "en", Mode::Carrier, 9),
            rec("L1", "c", "en", Mode::Carrier, 10),
        ];
        let index = build_index(records).unwrap();
        assert_eq!(index.groups["L1"].n_steps(), Some(10));
        assert_eq!(index.groups["L1"].carriers.len(), 2);
    }

    #[test]
    fn invalid_record_excluded_and_empty_corpus() {
        let mut bad = rec("L1", "a", "en", Mode::Carrier, 9);
        bad.steps.remove(3);
        let err = build_index(vec![bad]).unwrap_err();
        assert!(matches!(err, IndexError::EmptyCorpus));
        assert!(matches!(build_index(vec![]), Err(IndexError::EmptyCorpus)));
    }

    #[test]
    fn duplicate_carrier_excluded() {
        let records = vec![
            rec("L1", "a", "en", Mode::Carrier, 9),
            rec("L1", "a", "en", Mode::Carrier, 9),
        ];
        let index = build_index(records).unwrap();
        assert_eq!(index.groups["L1"].carriers.len(), 1);
        assert_eq!(index.excluded.len(), 1);
    }
}
