//! Structural validation of records and rule checking of abstract templates.

use serde::Serialize;

use super::derive::{judge_step, Judgement};
use super::record::{Mode, ReasoningRecord};

/// Step counts outside this range are reported as warnings.
pub const STEP_RANGE: std::ops::RangeInclusive<usize> = 8..=16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "code")]
pub enum FindingCode {
    NonContiguous { missing: usize },
    ForwardReference { from: usize, to: usize },
    StepCountMismatch { expected: usize, found: usize },
    StepCountOutOfRange { found: usize },
    VariableScope { variable: String },
    TemplateMismatch,
    NotAbstract,
    DuplicateCarrier,
    DuplicateTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub step: Option<usize>,
    #[serde(flatten)]
    pub code: FindingCode,
    pub message: String,
}

impl Finding {
    pub fn error(step: Option<usize>, code: FindingCode, message: impl Into<String>) -> Self {
        Finding {
            severity: Severity::Error,
            step,
            code,
            message: message.into(),
        }
    }

    pub fn warning(step: Option<usize>, code: FindingCode, message: impl Into<String>) -> Self {
        Finding {
            severity: Severity::Warning,
            step,
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivationStatus {
    Valid,
    Unchecked,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivationFinding {
    pub step: usize,
    pub status: DerivationStatus,
    /// e.g. `→E`, `∧I`, `∀E then →E`.
    pub rule: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub record: String,
    pub mode: Mode,
    pub findings: Vec<Finding>,
    pub derivations: Vec<DerivationFinding>,
}

impl ValidationReport {
    fn new(rec: &ReasoningRecord) -> Self {
        ValidationReport {
            record: rec.key(),
            mode: rec.mode,
            findings: Vec::new(),
            derivations: Vec::new(),
        }
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn error_count(&self) -> usize {
        self.count(Severity::Error)
    }

    pub fn count(&self, severity: Severity) -> usize {
        self.findings.iter().filter(|f| f.severity == severity).count()
    }

    pub fn invalid_derivations(&self) -> usize {
        self.derivations
            .iter()
            .filter(|d| d.status == DerivationStatus::Invalid)
            .count()
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.findings.extend(other.findings);
        self.derivations.extend(other.derivations);
    }
}

pub fn validate_record(rec: &ReasoningRecord, template: Option<&ReasoningRecord>) -> ValidationReport {
    let mut report = ValidationReport::new(rec);

    let mut indices: Vec<usize> = rec.steps.iter().map(|s| s.index).collect();
    indices.sort_unstable();
    let mut expected = 1;
    for &k in &indices {
        while expected < k {
            report.findings.push(Finding::error(
                Some(expected),
                FindingCode::NonContiguous { missing: expected },
                format!("step [{expected}] is missing"),
            ));
            expected += 1;
        }
        expected = k + 1;
    }
    for step in &rec.steps {
        for &cited in &step.justification {
            if cited >= step.index {
                report.findings.push(Finding::error(
                    Some(step.index),
                    FindingCode::ForwardReference {
                        from: step.index,
                        to: cited,
                    },
                    format!("step [{}] cites later step [{cited}]", step.index),
                ));
            }
        }
        if let Some(f) = step.formula() {
            for variable in f.scope_violations() {
                report.findings.push(Finding::error(
                    Some(step.index),
                    FindingCode::VariableScope {
                        variable: variable.clone(),
                    },
                    format!("variable `{variable}` occurs outside its quantifier"),
                ));
            }
        }
    }

    if !STEP_RANGE.contains(&rec.n_steps) {
        report.findings.push(Finding::warning(
            None,
            FindingCode::StepCountOutOfRange { found: rec.n_steps },
            format!(
                "{} steps is outside the usual {}..={} range",
                rec.n_steps,
                STEP_RANGE.start(),
                STEP_RANGE.end()
            ),
        ));
    }

    if let Some(t) = template {
        if t.logic_id != rec.logic_id {
            report.findings.push(Finding::error(
                None,
                FindingCode::TemplateMismatch,
                format!("template logic `{}` differs from record logic `{}`", t.logic_id, rec.logic_id),
            ));
        }
        if t.n_steps != rec.n_steps {
            report.findings.push(Finding::error(
                None,
                FindingCode::StepCountMismatch {
                    expected: t.n_steps,
                    found: rec.n_steps,
                },
                format!("template has {} steps, record has {}", t.n_steps, rec.n_steps),
            ));
        }
    }
    report
}

/// Tags every justified step of an abstract template as valid, invalid or unchecked.
pub fn check_derivation(template: &ReasoningRecord) -> ValidationReport {
    let mut report = ValidationReport::new(template);
    if template.mode != Mode::Abstract {
        report.findings.push(Finding {
            severity: Severity::Info,
            step: None,
            code: FindingCode::NotAbstract,
            message: "derivations are only checked for abstract templates".into(),
        });
        return report;
    }
    for step in template.steps.iter().filter(|s| !s.justification.is_empty()) {
        let Some(conclusion) = step.formula() else {
            continue;
        };
        let mut premises = Vec::new();
        let mut missing = Vec::new();
        for &k in &step.justification {
            match template.steps.iter().find(|s| s.index == k && k < step.index) {
                Some(s) => premises.extend(s.formula().cloned()),
                None => missing.push(k),
            }
        }
        let finding = if !missing.is_empty() {
            DerivationFinding {
                step: step.index,
                status: DerivationStatus::Invalid,
                rule: None,
                message: format!("cites unavailable steps {missing:?}"),
            }
        } else {
            match judge_step(&premises, conclusion) {
                Judgement::Valid(rules) => DerivationFinding {
                    step: step.index,
                    status: DerivationStatus::Valid,
                    rule: Some(rules.join(" then ")),
                    message: String::new(),
                },
                Judgement::Invalid => DerivationFinding {
                    step: step.index,
                    status: DerivationStatus::Invalid,
                    rule: None,
                    message: "conclusion does not follow from the cited steps".into(),
                },
                Judgement::Unchecked => DerivationFinding {
                    step: step.index,
                    status: DerivationStatus::Unchecked,
                    rule: None,
                    message: "no supported rule (→E, ∀E, ∧I) applies".into(),
                },
            }
        };
        report.derivations.push(finding);
    }
    report
}
