//! Synthetic corpora and flows with known ground truth.
//!
//! Flow (l, m, k) is
//! y_t = β·b_m + ρβ·o_k + Σ_{j≤t} γ·a_{l,j}·e_{l,j} + σ·ε_t
//! with topic bases b_m, language offsets o_k and per-logic step directions
//! e_{l,j} drawn from one seeded orthonormal set, step lengths a_{l,j} in
//! [0.5, 1.5] and ε_t ~ N(0, I/d).

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{flow_metadata, group_summary, pairwise_matrix, AnalysisError, GroupCriterion, GroupReport, Measure};
use crate::corpus::formula::{and, atom, forall, implies, pred};
use crate::corpus::{parse_record, Formula, Mode, RawRecord, ReasoningRecord};
use crate::flow::{Flow, Pooling};
use crate::geometry::norm;
use crate::provider::FlowMeta;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("{0} must be at least 1")]
    Count(&'static str),
    #[error("{0} must be non-negative and finite")]
    Magnitude(&'static str),
    #[error("step range {0}..={1} must lie within 3..=16")]
    Steps(usize, usize),
    #[error("dimension must be ≥ 2, got {0}")]
    Dim(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub logics: usize,
    pub topics: usize,
    pub languages: usize,
    pub steps_min: usize,
    pub steps_max: usize,
    pub seed: u64,
    /// Topic base magnitude β.
    pub beta: f64,
    /// Step magnitude γ.
    pub gamma: f64,
    /// Noise level σ.
    pub sigma: f64,
    /// Language offsets have magnitude `lang_ratio`·β.
    pub lang_ratio: f64,
    pub dim: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            logics: 3,
            topics: 4,
            languages: 2,
            steps_min: 8,
            steps_max: 12,
            seed: 0,
            beta: 10.0,
            gamma: 1.0,
            sigma: 0.01,
            lang_ratio: 0.3,
            dim: 64,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (n, name) in [(self.logics, "logics"), (self.topics, "topics"), (self.languages, "languages")] {
            if n == 0 {
                return Err(SynthError::Count(name));
            }
        }
        for (x, name) in [
            (self.beta, "beta"),
            (self.gamma, "gamma"),
            (self.sigma, "sigma"),
            (self.lang_ratio, "lang_ratio"),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(SynthError::Magnitude(name));
            }
        }
        if self.steps_min < 3 || self.steps_min > self.steps_max || self.steps_max > MAX_STEPS {
            return Err(SynthError::Steps(self.steps_min, self.steps_max));
        }
        if self.dim < 2 {
            return Err(SynthError::Dim(self.dim));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Seeded step count per logic.
    pub fn step_counts(&self) -> Vec<usize> {
        let mut rng = self.rng(0);
        (0..self.logics)
            .map(|_| rng.random_range(self.steps_min..=self.steps_max))
            .collect()
    }

    pub fn logic_id(&self, l: usize) -> String {
        format!("L{:02}", l + 1)
    }

    pub fn topic(&self, m: usize) -> String {
        TOPICS.get(m).map_or_else(|| format!("topic{:02}", m + 1), |t| t.name.to_string())
    }

    pub fn language(&self, k: usize) -> String {
        LANGUAGES.get(k).map_or_else(|| format!("x{:02}", k + 1), |l| l.code.to_string())
    }
}

/// One template line: the formula and the steps it cites.
#[derive(Debug, Clone)]
struct Line {
    formula: Formula,
    from: Vec<usize>,
}

/// m premises (in seeded order), one fact, m derivations and, for even T, a
/// closing conjunction. Odd-numbered logics open with a universal premise
/// over the constant c.
fn template_lines(l: usize, n_steps: usize, rng: &mut ChaCha8Rng) -> Vec<Line> {
    let m = (n_steps - 1) / 2;
    let mut letters: Vec<usize> = (0..CONCEPTS).collect();
    letters.shuffle(rng);
    let letters = &letters[..=m];
    let quantified = l % 2 == 1;
    let name = |i: usize| char::from(b'A' + letters[i] as u8).to_string();
    let prop = |i: usize| if quantified { pred(&name(i), &["c"]) } else { atom(&name(i)) };

    // premise j links concept j to j+1
    let premise = |j: usize| {
        if quantified && j == 0 {
            forall("x", implies(pred(&name(0), &["x"]), pred(&name(1), &["x"])))
        } else {
            implies(prop(j), prop(j + 1))
        }
    };
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut position = vec![0; m];
    let mut lines = Vec::with_capacity(n_steps);
    for (slot, &j) in order.iter().enumerate() {
        position[j] = slot + 1;
        lines.push(Line { formula: premise(j), from: vec![] });
    }
    lines.push(Line { formula: prop(0), from: vec![] });
    let mut last = m + 1;
    for j in 0..m {
        lines.push(Line {
            formula: prop(j + 1),
            from: vec![position[j], last],
        });
        last = lines.len();
    }
    if n_steps.is_multiple_of(2) {
        lines.push(Line {
            formula: and(prop(m - 1), prop(m)),
            from: vec![last - 1, last],
        });
    }
    debug_assert_eq!(lines.len(), n_steps);
    lines
}

fn cite(from: &[usize]) -> String {
    from.iter().map(|i| format!("[{i}]")).collect::<Vec<_>>().join(", ")
}

fn abstract_text(lines: &[Line]) -> Vec<String> {
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let mut s = format!("[{}] {}", i + 1, line.formula);
            if !line.from.is_empty() {
                s.push_str(&format!(" (from {})", cite(&line.from)));
            }
            s
        })
        .collect()
}

const CONCEPTS: usize = 8;
/// Templates use at most `CONCEPTS` propositions: (T − 1)/2 + 1 ≤ 8.
const MAX_STEPS: usize = 16;

struct TopicVocab {
    name: &'static str,
    entity: &'static str,
    concepts: [&'static str; CONCEPTS],
}

const TOPICS: [TopicVocab; 6] = [
    TopicVocab {
        name: "weather",
        entity: "the valley",
        concepts: [
            "clouds gather", "rain falls", "the soil is wet", "rivers rise",
            "roads flood", "traffic slows", "the air cools", "fog forms",
        ],
    },
    TopicVocab {
        name: "finance",
        entity: "the fund",
        concepts: [
            "rates climb", "loans cost more", "spending drops", "profits shrink",
            "shares fall", "investors wait", "bonds gain", "cash piles up",
        ],
    },
    TopicVocab {
        name: "biology",
        entity: "the cell",
        concepts: [
            "glucose enters", "enzymes activate", "energy is stored", "growth speeds up",
            "division begins", "proteins fold", "waste accumulates", "repair starts",
        ],
    },
    TopicVocab {
        name: "cooking",
        entity: "the dough",
        concepts: [
            "the oven heats", "butter melts", "sugar caramelizes", "the crust browns",
            "steam escapes", "the filling sets", "the kitchen smells sweet", "guests arrive",
        ],
    },
    TopicVocab {
        name: "travel",
        entity: "the train",
        concepts: [
            "the station opens", "tickets sell out", "platforms crowd", "departures slip",
            "connections are missed", "hotels fill", "fares rise", "tourists reroute",
        ],
    },
    TopicVocab {
        name: "sports",
        entity: "the team",
        concepts: [
            "training intensifies", "fitness improves", "the defense holds", "the striker scores",
            "the lead grows", "fans celebrate", "tickets sell", "the coach rests players",
        ],
    },
];

struct LanguageVocab {
    code: &'static str,
    conditional: (&'static str, &'static str),
    universal: (&'static str, &'static str),
    holds_for: &'static str,
    therefore: &'static str,
    so: &'static str,
    and: &'static str,
    from: &'static str,
}

const LANGUAGES: [LanguageVocab; 4] = [
    LanguageVocab {
        code: "en",
        conditional: ("If", "then"),
        universal: ("Whenever", "holds for something, so does"),
        holds_for: "holds for",
        therefore: "Therefore",
        so: "So",
        and: "and",
        from: "from",
    },
    LanguageVocab {
        code: "de",
        conditional: ("Wenn", "dann"),
        universal: ("Immer wenn", "für etwas gilt, gilt auch"),
        holds_for: "gilt für",
        therefore: "Daher",
        so: "Also",
        and: "und",
        from: "aus",
    },
    LanguageVocab {
        code: "fr",
        conditional: ("Si", "alors"),
        universal: ("Chaque fois que", "vaut pour une chose, vaut aussi"),
        holds_for: "vaut pour",
        therefore: "Donc",
        so: "Ainsi",
        and: "et",
        from: "d'après",
    },
    LanguageVocab {
        code: "es",
        conditional: ("Si", "entonces"),
        universal: ("Siempre que", "vale para algo, también vale"),
        holds_for: "vale para",
        therefore: "Por tanto",
        so: "Así",
        and: "y",
        from: "de",
    },
];

struct Carrier<'a> {
    topic: usize,
    vocab: &'a LanguageVocab,
}

impl Carrier<'_> {
    fn concept(&self, letter: &str) -> String {
        let idx = usize::from(letter.as_bytes()[0] - b'A');
        match TOPICS.get(self.topic) {
            Some(t) => t.concepts[idx].to_string(),
            None => format!("concept {} of topic {}", letter, self.topic + 1),
        }
    }

    fn entity(&self) -> String {
        TOPICS
            .get(self.topic)
            .map_or_else(|| format!("item {}", self.topic + 1), |t| t.entity.to_string())
    }

    fn clause(&self, f: &Formula) -> String {
        match f {
            Formula::Atom(a) => self.concept(a),
            Formula::Predicate { name, .. } => format!("{} {} {}", self.concept(name), self.vocab.holds_for, self.entity()),
            Formula::Implies(a, b) => format!(
                "{} {}, {} {}",
                self.vocab.conditional.0,
                self.clause(a),
                self.vocab.conditional.1,
                self.clause(b)
            ),
            Formula::Forall(_, body) => match body.as_ref() {
                Formula::Implies(a, b) => {
                    let name = |f: &Formula| match f {
                        Formula::Predicate { name, .. } => self.concept(name),
                        other => self.clause(other),
                    };
                    format!("{} {} {} {}", self.vocab.universal.0, name(a), self.vocab.universal.1, name(b))
                }
                other => self.clause(other),
            },
            Formula::And(a, b) => format!("{} {} {}", self.clause(a), self.vocab.and, self.clause(b)),
            other => other.to_string(),
        }
    }

    fn lines(&self, lines: &[Line]) -> Vec<String> {
        lines
            .iter()
            .enumerate()
            .map(|(i, line)| {
                let body = self.clause(&line.formula);
                let text = if line.from.is_empty() {
                    capitalize(&body)
                } else {
                    let lead = if matches!(line.formula, Formula::And(..)) {
                        self.vocab.so
                    } else {
                        self.vocab.therefore
                    };
                    format!("{lead} {body} ({} {})", self.vocab.from, cite(&line.from))
                };
                format!("[{}] {text}.", i + 1)
            })
            .collect()
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn build(raw: RawRecord) -> ReasoningRecord {
    parse_record(&raw).expect("generated records are well-formed")
}

/// L abstract templates followed by L·M·K carrier rewrites.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<ReasoningRecord>, SynthError> {
    spec.validate()?;
    let counts = spec.step_counts();
    let mut rng = spec.rng(1);
    let templates: Vec<Vec<Line>> = counts
        .iter()
        .enumerate()
        .map(|(l, &n)| template_lines(l, n, &mut rng))
        .collect();

    let mut out = Vec::new();
    for (l, lines) in templates.iter().enumerate() {
        out.push(build(RawRecord {
            logic_id: Some(spec.logic_id(l)),
            topic: Some("abstract".into()),
            language: Some("formal".into()),
            mode: Some(Mode::Abstract),
            steps: Some(abstract_text(lines)),
        }));
    }
    for (l, lines) in templates.iter().enumerate() {
        for m in 0..spec.topics {
            for k in 0..spec.languages {
                let carrier = Carrier {
                    topic: m,
                    vocab: &LANGUAGES[k.min(LANGUAGES.len() - 1)],
                };
                out.push(build(RawRecord {
                    logic_id: Some(spec.logic_id(l)),
                    topic: Some(spec.topic(m)),
                    language: Some(spec.language(k)),
                    mode: Some(Mode::Carrier),
                    steps: Some(carrier.lines(lines)),
                }));
            }
        }
    }
    Ok(out)
}

/// `n` unit vectors in R^d: orthonormal (QR of a Gaussian matrix) while
/// n ≤ d, topped up with independent random unit vectors beyond that.
fn directions(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut gaussian = |rows: usize, cols: usize| {
        DMatrix::<f64>::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut *rng))
    };
    let take = n.min(d);
    let q = gaussian(d, take).qr().q();
    let mut out: Vec<Vec<f64>> = (0..take).map(|j| q.column(j).iter().copied().collect()).collect();
    if n > take {
        let extra = gaussian(d, n - take);
        for j in 0..n - take {
            let v: Vec<f64> = extra.column(j).iter().copied().collect();
            let len = norm(&v);
            out.push(v.iter().map(|x| x / len).collect());
        }
    }
    out
}

/// Everything the flows are assembled from.
struct Geometry {
    bases: Vec<Vec<f64>>,
    offsets: Vec<Vec<f64>>,
    /// Per logic: (step length, direction) for each step.
    steps: Vec<Vec<(f64, Vec<f64>)>>,
}

fn geometry(spec: &SynthSpec) -> Geometry {
    let counts = spec.step_counts();
    let total: usize = spec.topics + spec.languages + counts.iter().sum::<usize>();
    let mut dirs = directions(total, spec.dim, &mut spec.rng(2)).into_iter();
    let bases = dirs.by_ref().take(spec.topics).collect();
    let offsets = dirs.by_ref().take(spec.languages).collect();
    let mut profile = spec.rng(3);
    let steps = counts
        .iter()
        .map(|&n| {
            dirs.by_ref()
                .take(n)
                .map(|e| (profile.random_range(0.5..=1.5), e))
                .collect()
        })
        .collect();
    Geometry { bases, offsets, steps }
}

fn noise_stream(spec: &SynthSpec, l: usize, m: usize, k: usize) -> ChaCha8Rng {
    let idx = (l * spec.topics + m) * spec.languages + k;
    spec.rng(16 + idx as u64)
}

/// One flow per (logic, topic, language), in that nesting order.
pub fn generate_flows(spec: &SynthSpec) -> Result<Vec<Flow>, SynthError> {
    spec.validate()?;
    let g = geometry(spec);
    let d = spec.dim;
    let keys: Vec<(usize, usize, usize)> = (0..spec.logics)
        .flat_map(|l| (0..spec.topics).flat_map(move |m| (0..spec.languages).map(move |k| (l, m, k))))
        .collect();
    let flows = keys
        .par_iter()
        .map(|&(l, m, k)| {
            let mut rng = noise_stream(spec, l, m, k);
            let scale = spec.sigma / (d as f64).sqrt();
            let mut walk = vec![0.0; d];
            let points = g.steps[l]
                .iter()
                .map(|(a, e)| {
                    for (w, x) in walk.iter_mut().zip(e) {
                        *w += spec.gamma * a * x;
                    }
                    (0..d)
                        .map(|i| {
                            let eps: f64 = StandardNormal.sample(&mut rng);
                            spec.beta * g.bases[m][i]
                                + spec.lang_ratio * spec.beta * g.offsets[k][i]
                                + walk[i]
                                + scale * eps
                        })
                        .collect()
                })
                .collect();
            let mut extra = BTreeMap::new();
            extra.insert("seed".to_string(), serde_json::json!(spec.seed));
            Flow::new(
                points,
                FlowMeta {
                    logic_id: spec.logic_id(l),
                    topic: spec.topic(m),
                    language: spec.language(k),
                    mode: Mode::Carrier.to_string(),
                    provider: "synthetic".into(),
                    pooling: Pooling::Synthetic.as_str().into(),
                    joiner: None,
                    include_prompt: None,
                    extra,
                },
            )
        })
        .collect();
    Ok(flows)
}

/// Grouped report of the noise-free flows under default alignment: what an
/// analysis of the generated flows should approach as σ → 0.
pub fn expected_report(spec: &SynthSpec) -> Result<GroupReport, AnalysisError> {
    let clean = SynthSpec {
        sigma: 0.0,
        ..spec.clone()
    };
    let flows = generate_flows(&clean).map_err(|e| AnalysisError::Parse {
        kind: "synth spec",
        value: e.to_string(),
    })?;
    let matrices = Measure::ALL
        .iter()
        .map(|&m| pairwise_matrix(&flows, m, m.default_policy()))
        .collect::<Result<Vec<_>, _>>()?;
    group_summary(&matrices, &flow_metadata(&flows), &GroupCriterion::ALL, false)
}
