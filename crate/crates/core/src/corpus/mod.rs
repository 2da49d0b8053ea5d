//! Parallel formal-logic reasoning corpus: abstract templates and their
//! topic/language carrier rewrites.

mod derive;
pub mod formula;
mod index;
mod record;
mod validate;

pub use derive::{judge_step, Judgement};
pub use formula::{parse_formula, Formula, SyntaxError};
pub use index::{
    build_index, load_corpus, validate_corpus, write_corpus, CorpusIndex, Exclusion, IndexError,
    LineError, LogicGroup,
};
pub use record::{
    parse_record, parse_record_json, Mode, RawRecord, ReasoningRecord, RecordError, StepBody,
    StepLine,
};
pub use validate::{
    check_derivation, validate_record, DerivationFinding, DerivationStatus, Finding, FindingCode,
    Severity, ValidationReport, STEP_RANGE,
};
