//! Pairwise flow similarity, block-ordered matrices and grouped summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::Flow;
use crate::geometry::{dot, kinematics_of, norm, velocities_of};

/// Norms or variances below this are treated as zero.
pub const TINY: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series too short: need {needed}, got {found}")]
    TooShort { needed: usize, found: usize },
    #[error("need at least two flows, got {0}")]
    TooFewFlows(usize),
    #[error("unknown flow id {0:?}")]
    UnknownFlowId(String),
    #[error("resampling grid must be ≥ 3, got {0}")]
    BadGrid(usize),
    #[error("unknown {kind} {value:?}")]
    Parse { kind: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    /// A cosine with a (near-)zero vector.
    ZeroVector,
    /// A Pearson correlation with a (near-)constant series.
    ConstantSeries,
    /// Too few points for the measure.
    TooShort,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipReason::ZeroVector => "zero-vector",
            SkipReason::ConstantSeries => "constant-series",
            SkipReason::TooShort => "too-short",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Value(f64),
    Skipped(SkipReason),
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Skipped(_) => None,
        }
    }
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<Score, AnalysisError> {
    if u.len() != v.len() {
        return Err(AnalysisError::DimensionMismatch(u.len(), v.len()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu < TINY || nv < TINY {
        return Ok(Score::Skipped(SkipReason::ZeroVector));
    }
    Ok(Score::Value((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Score, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(AnalysisError::TooShort {
            needed: 3,
            found: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx / n < TINY || vy / n < TINY {
        return Ok(Score::Skipped(SkipReason::ConstantSeries));
    }
    Ok(Score::Value((cov / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignKind {
    NearestIndex,
    ResampleLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentPolicy {
    pub kind: AlignKind,
    /// Number of resampling positions (resample-linear only).
    pub grid: usize,
}

impl AlignmentPolicy {
    pub const DEFAULT_GRID: usize = 16;

    pub fn nearest() -> Self {
        AlignmentPolicy {
            kind: AlignKind::NearestIndex,
            grid: Self::DEFAULT_GRID,
        }
    }

    pub fn resample(grid: usize) -> Self {
        AlignmentPolicy {
            kind: AlignKind::ResampleLinear,
            grid,
        }
    }
}

/// Values that can be linearly interpolated during resampling.
pub trait Lerp: Clone {
    fn lerp(&self, other: &Self, t: f64) -> Self;
}

impl Lerp for f64 {
    fn lerp(&self, other: &Self, t: f64) -> Self {
        self * (1.0 - t) + other * t
    }
}

impl Lerp for Vec<f64> {
    fn lerp(&self, other: &Self, t: f64) -> Self {
        self.iter().zip(other).map(|(a, b)| a.lerp(b, t)).collect()
    }
}

/// Index into a series of length `long` for position `j` of a series of
/// length `short`: round(j·(long−1)/(short−1)), halves rounded up.
pub fn nearest_indices(short: usize, long: usize) -> Vec<usize> {
    if short == long {
        return (0..short).collect();
    }
    let (num, den) = (long - 1, short - 1);
    (0..short).map(|j| (2 * j * num + den) / (2 * den)).collect()
}

pub fn resample<T: Lerp>(series: &[T], grid: usize) -> Vec<T> {
    let last = series.len() - 1;
    (0..grid)
        .map(|g| {
            let pos = g as f64 / (grid - 1) as f64 * last as f64;
            let i = (pos.floor() as usize).min(last);
            if i == last {
                series[last].clone()
            } else {
                series[i].lerp(&series[i + 1], pos - i as f64)
            }
        })
        .collect()
}

/// Pairs up two series of possibly different lengths.
pub fn align<T: Lerp>(a: &[T], b: &[T], policy: AlignmentPolicy) -> Result<(Vec<T>, Vec<T>), AnalysisError> {
    let shortest = a.len().min(b.len());
    if shortest < 2 {
        return Err(AnalysisError::TooShort {
            needed: 2,
            found: shortest,
        });
    }
    match policy.kind {
        AlignKind::NearestIndex => {
            if a.len() <= b.len() {
                let idx = nearest_indices(a.len(), b.len());
                Ok((a.to_vec(), idx.iter().map(|&i| b[i].clone()).collect()))
            } else {
                let idx = nearest_indices(b.len(), a.len());
                Ok((idx.iter().map(|&i| a[i].clone()).collect(), b.to_vec()))
            }
        }
        AlignKind::ResampleLinear => {
            if policy.grid < 3 {
                return Err(AnalysisError::BadGrid(policy.grid));
            }
            Ok((resample(a, policy.grid), resample(b, policy.grid)))
        }
    }
}

/// A score together with the step pairs that had to be left out of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOutcome {
    pub score: Score,
    pub undefined_steps: usize,
}

fn mean_cosine(a: &[Vec<f64>], b: &[Vec<f64>], policy: AlignmentPolicy) -> Result<PairOutcome, AnalysisError> {
    let (a, b) = align(a, b, policy)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut undefined = 0usize;
    for (u, v) in a.iter().zip(&b) {
        match cosine(u, v)? {
            Score::Value(c) => {
                sum += c;
                count += 1;
            }
            Score::Skipped(_) => undefined += 1,
        }
    }
    let score = if count == 0 {
        Score::Skipped(SkipReason::ZeroVector)
    } else {
        Score::Value(sum / count as f64)
    };
    Ok(PairOutcome {
        score,
        undefined_steps: undefined,
    })
}

fn check_dims(a: &Flow, b: &Flow) -> Result<(), AnalysisError> {
    if a.dim() != b.dim() {
        return Err(AnalysisError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(())
}

fn too_short() -> PairOutcome {
    PairOutcome {
        score: Score::Skipped(SkipReason::TooShort),
        undefined_steps: 0,
    }
}

pub fn position_similarity(a: &Flow, b: &Flow, policy: AlignmentPolicy) -> Result<PairOutcome, AnalysisError> {
    check_dims(a, b)?;
    position_of(&a.points, &b.points, policy)
}

fn position_of(a: &[Vec<f64>], b: &[Vec<f64>], policy: AlignmentPolicy) -> Result<PairOutcome, AnalysisError> {
    if a.len().min(b.len()) < 2 {
        // a single point on each side still has a well-defined cosine
        if a.len() == 1 && b.len() == 1 {
            let score = cosine(&a[0], &b[0])?;
            return Ok(PairOutcome {
                score,
                undefined_steps: usize::from(score.value().is_none()),
            });
        }
        return Ok(too_short());
    }
    mean_cosine(a, b, policy)
}

pub fn velocity_similarity(a: &Flow, b: &Flow, policy: AlignmentPolicy) -> Result<PairOutcome, AnalysisError> {
    check_dims(a, b)?;
    if a.len() < 2 || b.len() < 2 {
        return Ok(too_short());
    }
    let va = velocities_of(&a.points).map_err(|_| AnalysisError::TooShort { needed: 2, found: a.len() })?;
    let vb = velocities_of(&b.points).map_err(|_| AnalysisError::TooShort { needed: 2, found: b.len() })?;
    velocity_of(&va, &vb, policy)
}

fn velocity_of(va: &[Vec<f64>], vb: &[Vec<f64>], policy: AlignmentPolicy) -> Result<PairOutcome, AnalysisError> {
    if va.is_empty() || vb.is_empty() {
        return Ok(too_short());
    }
    if va.len() == 1 && vb.len() == 1 {
        let score = cosine(&va[0], &vb[0])?;
        return Ok(PairOutcome {
            score,
            undefined_steps: usize::from(score.value().is_none()),
        });
    }
    if va.len().min(vb.len()) < 2 {
        return Ok(too_short());
    }
    mean_cosine(va, vb, policy)
}

pub fn curvature_similarity(a: &Flow, b: &Flow, policy: AlignmentPolicy) -> Result<PairOutcome, AnalysisError> {
    check_dims(a, b)?;
    if a.len() < 3 || b.len() < 3 {
        return Ok(too_short());
    }
    let ka = kinematics_of(&a.points).map_err(|_| AnalysisError::TooShort { needed: 3, found: a.len() })?;
    let kb = kinematics_of(&b.points).map_err(|_| AnalysisError::TooShort { needed: 3, found: b.len() })?;
    curvature_of(&ka.curvatures, &kb.curvatures, policy)
}

fn curvature_of(ka: &[f64], kb: &[f64], policy: AlignmentPolicy) -> Result<PairOutcome, AnalysisError> {
    let (x, y) = if ka.len() == kb.len() {
        (ka.to_vec(), kb.to_vec())
    } else if ka.len().min(kb.len()) < 2 {
        return Ok(too_short());
    } else {
        align(ka, kb, policy)?
    };
    if x.len() < 3 {
        return Ok(too_short());
    }
    Ok(PairOutcome {
        score: pearson(&x, &y)?,
        undefined_steps: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Position,
    Velocity,
    Curvature,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Position, Measure::Velocity, Measure::Curvature];

    pub fn as_str(&self) -> &'static str {
        match self {
            Measure::Position => "position",
            Measure::Velocity => "velocity",
            Measure::Curvature => "curvature",
        }
    }

    /// Position and velocity use nearest-index pairing; curvature is
    /// resampled onto 16 points when lengths differ.
    pub fn default_policy(&self) -> AlignmentPolicy {
        match self {
            Measure::Position | Measure::Velocity => AlignmentPolicy::nearest(),
            Measure::Curvature => AlignmentPolicy::resample(AlignmentPolicy::DEFAULT_GRID),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = AnalysisError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "position" => Ok(Measure::Position),
            "velocity" => Ok(Measure::Velocity),
            "curvature" => Ok(Measure::Curvature),
            other => Err(AnalysisError::Parse {
                kind: "measure",
                value: other.into(),
            }),
        }
    }
}

/// Grouping identity of a flow.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub logic_id: String,
    pub topic: String,
    pub language: String,
}

impl FlowKey {
    pub fn of(flow: &Flow) -> Self {
        FlowKey {
            logic_id: flow.meta.logic_id.clone(),
            topic: flow.meta.topic.clone(),
            language: flow.meta.language.clone(),
        }
    }

    /// Parses `logic/topic/language`.
    pub fn parse(id: &str) -> Option<Self> {
        let mut parts = id.splitn(3, '/');
        Some(FlowKey {
            logic_id: parts.next()?.to_string(),
            topic: parts.next()?.to_string(),
            language: parts.next()?.to_string(),
        })
    }

    pub fn id(&self) -> String {
        format!("{}/{}/{}", self.logic_id, self.topic, self.language)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub logic_id: String,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub i: usize,
    pub j: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub measure: Measure,
    pub policy: AlignmentPolicy,
    /// Flow ids in block order (logic, topic, language).
    pub ids: Vec<String>,
    pub keys: Vec<FlowKey>,
    pub blocks: Vec<Block>,
    /// `None` where the pair was skipped.
    pub values: Vec<Vec<Option<f64>>>,
    /// Off-diagonal skipped pairs (i < j).
    pub skipped: Vec<SkippedPair>,
    /// Diagonal cells that could not be scored (e.g. constant κ).
    pub diagonal_flags: Vec<usize>,
    /// Step pairs left out of position/velocity means, summed over i < j.
    pub undefined_steps: usize,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    pub fn skipped_tally(&self) -> BTreeMap<SkipReason, usize> {
        let mut out = BTreeMap::new();
        for s in &self.skipped {
            *out.entry(s.reason).or_default() += 1;
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once("").chain(self.ids.iter().map(String::as_str)).collect();
        w.write_record(&header).expect("in-memory csv");
        for (id, row) in self.ids.iter().zip(&self.values) {
            let cells: Vec<String> = std::iter::once(id.clone())
                .chain(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()))
                .collect();
            w.write_record(&cells).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    /// Everything except the values, for the JSON sidecar next to the CSV.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "measure": self.measure,
            "policy": self.policy,
            "ids": self.ids,
            "blocks": self.blocks,
            "skipped": self.skipped,
            "skipped_tally": self.skipped_tally().into_iter()
                .map(|(k, v)| (k.to_string(), v)).collect::<BTreeMap<_, _>>(),
            "diagonal_flags": self.diagonal_flags,
            "undefined_steps": self.undefined_steps,
        })
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}.csv", self.measure)), self.to_csv())?;
        let sidecar = serde_json::to_string_pretty(&self.sidecar()).expect("sidecar serializes");
        std::fs::write(dir.join(format!("{}.json", self.measure)), sidecar + "\n")
    }
}

/// Reads a matrix CSV written by [`SimilarityMatrix::to_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>), Box<dyn std::error::Error + Send + Sync>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let ids: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|c| if c.is_empty() { Ok(None) } else { c.parse::<f64>().map(Some) })
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != ids.len() {
            return Err(format!("row has {} cells, header has {}", row.len(), ids.len()).into());
        }
        values.push(row);
    }
    if values.len() != ids.len() {
        return Err(format!("{} rows for {} columns", values.len(), ids.len()).into());
    }
    Ok((ids, values))
}

pub fn blocks_of(keys: &[FlowKey]) -> Vec<Block> {
    let mut blocks: Vec<Block> = Vec::new();
    for (i, k) in keys.iter().enumerate() {
        match blocks.last_mut() {
            Some(b) if b.logic_id == k.logic_id => b.end = i + 1,
            _ => blocks.push(Block {
                logic_id: k.logic_id.clone(),
                start: i,
                end: i + 1,
            }),
        }
    }
    blocks
}

/// Per-flow series computed once and reused across pairs.
enum Series {
    Points(Vec<Vec<f64>>),
    Velocities(Vec<Vec<f64>>),
    Curvatures(Option<Vec<f64>>),
}

fn series_for(flow: &Flow, measure: Measure) -> Series {
    match measure {
        Measure::Position => Series::Points(flow.points.clone()),
        Measure::Velocity => Series::Velocities(velocities_of(&flow.points).unwrap_or_default()),
        Measure::Curvature => Series::Curvatures(kinematics_of(&flow.points).ok().map(|k| k.curvatures)),
    }
}

fn pair_score(a: &Series, b: &Series, policy: AlignmentPolicy) -> Result<PairOutcome, AnalysisError> {
    match (a, b) {
        (Series::Points(a), Series::Points(b)) => position_of(a, b, policy),
        (Series::Velocities(a), Series::Velocities(b)) => velocity_of(a, b, policy),
        (Series::Curvatures(Some(a)), Series::Curvatures(Some(b))) => curvature_of(a, b, policy),
        (Series::Curvatures(_), Series::Curvatures(_)) => Ok(too_short()),
        _ => unreachable!("series of one measure"),
    }
}

/// Scores every pair of flows for one measure. Rows and columns follow
/// block order; skipped cells are recorded rather than zeroed.
pub fn pairwise_matrix(flows: &[Flow], measure: Measure, policy: AlignmentPolicy) -> Result<SimilarityMatrix, AnalysisError> {
    if flows.len() < 2 {
        return Err(AnalysisError::TooFewFlows(flows.len()));
    }
    let dim = flows[0].dim();
    if let Some(f) = flows.iter().find(|f| f.dim() != dim) {
        return Err(AnalysisError::DimensionMismatch(dim, f.dim()));
    }
    if policy.kind == AlignKind::ResampleLinear && policy.grid < 3 {
        return Err(AnalysisError::BadGrid(policy.grid));
    }

    let mut order: Vec<usize> = (0..flows.len()).collect();
    order.sort_by(|&i, &j| FlowKey::of(&flows[i]).cmp(&FlowKey::of(&flows[j])));
    let keys: Vec<FlowKey> = order.iter().map(|&i| FlowKey::of(&flows[i])).collect();
    let series: Vec<Series> = order.par_iter().map(|&i| series_for(&flows[i], measure)).collect();

    let n = flows.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let scored: Vec<PairOutcome> = pairs
        .par_iter()
        .map(|&(i, j)| pair_score(&series[i], &series[j], policy))
        .collect::<Result<_, _>>()?;

    let mut values = vec![vec![None; n]; n];
    let mut skipped = Vec::new();
    let mut diagonal_flags = Vec::new();
    let mut undefined_steps = 0;
    for (&(i, j), outcome) in pairs.iter().zip(&scored) {
        match outcome.score {
            Score::Value(v) => {
                values[i][j] = Some(v);
                values[j][i] = Some(v);
            }
            Score::Skipped(reason) if i == j => {
                let _ = reason;
                diagonal_flags.push(i);
            }
            Score::Skipped(reason) => skipped.push(SkippedPair { i, j, reason }),
        }
        if i != j {
            undefined_steps += outcome.undefined_steps;
        }
    }

    Ok(SimilarityMatrix {
        measure,
        policy,
        ids: keys.iter().map(FlowKey::id).collect(),
        blocks: blocks_of(&keys),
        keys,
        values,
        skipped,
        diagonal_flags,
        undefined_steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupCriterion {
    Logic,
    Topic,
    Language,
}

impl GroupCriterion {
    pub const ALL: [GroupCriterion; 3] = [GroupCriterion::Logic, GroupCriterion::Topic, GroupCriterion::Language];

    /// Exclusive rules: logic pairs share the skeleton but differ in some
    /// carrier; topic and language pairs share the carrier attribute but
    /// differ in logic. `inclusive` only asks for the shared attribute.
    pub fn admits(&self, a: &FlowKey, b: &FlowKey, inclusive: bool) -> bool {
        match self {
            GroupCriterion::Logic => {
                a.logic_id == b.logic_id && (inclusive || a.topic != b.topic || a.language != b.language)
            }
            GroupCriterion::Topic => a.topic == b.topic && (inclusive || a.logic_id != b.logic_id),
            GroupCriterion::Language => a.language == b.language && (inclusive || a.logic_id != b.logic_id),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            GroupCriterion::Logic => "logic",
            GroupCriterion::Topic => "topic",
            GroupCriterion::Language => "language",
        }
    }
}

impl fmt::Display for GroupCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupCriterion {
    type Err = AnalysisError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "logic" => Ok(GroupCriterion::Logic),
            "topic" => Ok(GroupCriterion::Topic),
            "language" | "lang" => Ok(GroupCriterion::Language),
            other => Err(AnalysisError::Parse {
                kind: "criterion",
                value: other.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub measure: Measure,
    pub criterion: GroupCriterion,
    /// Mean over included pairs; `None` when no pair could be scored.
    pub mean: Option<f64>,
    pub sum: f64,
    pub pairs: usize,
    pub eligible: usize,
    pub excluded: BTreeMap<SkipReason, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub inclusive: bool,
    pub stats: Vec<GroupStat>,
}

impl GroupReport {
    pub fn get(&self, measure: Measure, criterion: GroupCriterion) -> Option<&GroupStat> {
        self.stats
            .iter()
            .find(|s| s.measure == measure && s.criterion == criterion)
    }

    pub fn mean(&self, measure: Measure, criterion: GroupCriterion) -> Option<f64> {
        self.get(measure, criterion).and_then(|s| s.mean)
    }
}

/// Averages matrix entries over unordered pairs i < j admitted by each criterion.
pub fn group_summary(
    matrices: &[SimilarityMatrix],
    metadata: &BTreeMap<String, FlowKey>,
    criteria: &[GroupCriterion],
    inclusive: bool,
) -> Result<GroupReport, AnalysisError> {
    let mut stats = Vec::new();
    for m in matrices {
        let keys: Vec<&FlowKey> = m
            .ids
            .iter()
            .map(|id| metadata.get(id).ok_or_else(|| AnalysisError::UnknownFlowId(id.clone())))
            .collect::<Result<_, _>>()?;
        let skip_reason: BTreeMap<(usize, usize), SkipReason> =
            m.skipped.iter().map(|s| ((s.i, s.j), s.reason)).collect();
        for &criterion in criteria {
            let mut stat = GroupStat {
                measure: m.measure,
                criterion,
                mean: None,
                sum: 0.0,
                pairs: 0,
                eligible: 0,
                excluded: BTreeMap::new(),
            };
            for i in 0..m.len() {
                for j in i + 1..m.len() {
                    if !criterion.admits(keys[i], keys[j], inclusive) {
                        continue;
                    }
                    stat.eligible += 1;
                    match m.values[i][j] {
                        Some(v) => {
                            stat.sum += v;
                            stat.pairs += 1;
                        }
                        None => {
                            let reason = skip_reason.get(&(i, j)).copied().unwrap_or(SkipReason::TooShort);
                            *stat.excluded.entry(reason).or_default() += 1;
                        }
                    }
                }
            }
            if stat.pairs > 0 {
                stat.mean = Some(stat.sum / stat.pairs as f64);
            }
            stats.push(stat);
        }
    }
    Ok(GroupReport { inclusive, stats })
}

/// Metadata map for [`group_summary`] from the flows themselves.
pub fn flow_metadata(flows: &[Flow]) -> BTreeMap<String, FlowKey> {
    flows.iter().map(|f| (f.id(), FlowKey::of(f))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::FlowMeta;
    use proptest::prelude::*;

    fn flow(id: (&str, &str, &str), points: Vec<Vec<f64>>) -> Flow {
        Flow::new(
            points,
            FlowMeta {
                logic_id: id.0.into(),
                topic: id.1.into(),
                language: id.2.into(),
                ..Default::default()
            },
        )
    }

    fn val(s: Score) -> f64 {
        s.value().expect("scored")
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(val(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap()), 0.0);
        assert!((val(cosine(&[1.0, 1.0], &[2.0, 2.0]).unwrap()) - 1.0).abs() < 1e-15);
        assert!((val(cosine(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap()) - 8.0 / 9.0).abs() < 1e-15);
        assert_eq!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(),
            Score::Skipped(SkipReason::ZeroVector)
        );
        assert!(cosine(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn pearson_examples() {
        assert!((val(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap()) - 1.0).abs() < 1e-15);
        assert!((val(pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap()) + 1.0).abs() < 1e-15);
        assert!((val(pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap()) - 0.8).abs() < 1e-15);
        assert_eq!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(),
            Score::Skipped(SkipReason::ConstantSeries)
        );
        assert_eq!(
            pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(AnalysisError::LengthMismatch(2, 3))
        );
    }

    #[test]
    fn alignment_examples() {
        assert_eq!(nearest_indices(5, 5), vec![0, 1, 2, 3, 4]);
        assert_eq!(nearest_indices(5, 9), vec![0, 2, 4, 6, 8]);
        // j·(L−1)/(S−1) for S=3, L=4: 0, 1.5, 3 → 0, 2, 3
        assert_eq!(nearest_indices(3, 4), vec![0, 2, 3]);
        let (a, b) = align(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0], AlignmentPolicy::resample(5)).unwrap();
        assert_eq!(a, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(a, b);
        let long: Vec<f64> = (0..9).map(f64::from).collect();
        let short: Vec<f64> = (0..5).map(|i| 10.0 * f64::from(i)).collect();
        let (x, y) = align(&long, &short, AlignmentPolicy::nearest()).unwrap();
        assert_eq!(x, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        assert_eq!(y, short);
        assert!(align(&[1.0], &[1.0, 2.0], AlignmentPolicy::nearest()).is_err());
        assert_eq!(
            align(&[1.0, 2.0], &[1.0, 2.0], AlignmentPolicy::resample(2)),
            Err(AnalysisError::BadGrid(2))
        );
    }

    fn wiggly(n: usize, phase: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                vec![t, (t * 1.3 + phase).sin(), (t * 0.7).cos() * t * 0.2 + 1.0]
            })
            .collect()
    }

    #[test]
    fn self_similarity() {
        let a = flow(("L", "t", "en"), wiggly(8, 0.0));
        for m in Measure::ALL {
            let p = m.default_policy();
            let s = match m {
                Measure::Position => position_similarity(&a, &a, p),
                Measure::Velocity => velocity_similarity(&a, &a, p),
                Measure::Curvature => curvature_similarity(&a, &a, p),
            }
            .unwrap();
            assert!((val(s.score) - 1.0).abs() < 1e-12, "{m}");
        }
    }

    #[test]
    fn orthogonal_positions() {
        let a = flow(("L", "t", "en"), vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]);
        let b = flow(("L", "t", "en"), vec![vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 2.0]]);
        let s = position_similarity(&a, &b, AlignmentPolicy::nearest()).unwrap();
        assert_eq!(val(s.score), 0.0);
    }

    #[test]
    fn velocity_translation_and_reversal() {
        let a = flow(("L", "t", "en"), wiggly(7, 0.3));
        let shifted: Vec<Vec<f64>> = a.points.iter().map(|p| p.iter().map(|x| x + 5.0).collect()).collect();
        let b = flow(("L", "t", "en"), shifted);
        let s = velocity_similarity(&a, &b, AlignmentPolicy::nearest()).unwrap();
        assert!((val(s.score) - 1.0).abs() < 1e-12);

        // straight line traversed backwards: every aligned Δy pair is antiparallel
        let line: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        let mut back = line.clone();
        back.reverse();
        let s = velocity_similarity(
            &flow(("L", "t", "en"), line),
            &flow(("L", "t", "en"), back),
            AlignmentPolicy::nearest(),
        )
        .unwrap();
        assert!((val(s.score) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn curvature_scaled_flow() {
        let a = flow(("L", "t", "en"), wiggly(9, 0.1));
        let scaled: Vec<Vec<f64>> = a.points.iter().map(|p| p.iter().map(|x| 3.0 * x).collect()).collect();
        let b = flow(("L", "t", "en"), scaled);
        let s = curvature_similarity(&a, &b, AlignmentPolicy::resample(16)).unwrap();
        assert!((val(s.score) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn curvature_hand_series() {
        let s = curvature_of(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0], AlignmentPolicy::resample(16)).unwrap();
        assert!((val(s.score) - 0.8).abs() < 1e-15);
        let short = flow(("L", "t", "en"), wiggly(4, 0.0));
        let s = curvature_similarity(&short, &short, AlignmentPolicy::resample(16)).unwrap();
        assert_eq!(s.score, Score::Skipped(SkipReason::TooShort));
    }

    #[test]
    fn matrix_of_identical_flows() {
        let flows: Vec<Flow> = (0..3).map(|i| flow(("L", &format!("t{i}"), "en"), wiggly(6, 0.0))).collect();
        let m = pairwise_matrix(&flows, Measure::Position, AlignmentPolicy::nearest()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((m.get(i, j).unwrap() - 1.0).abs() < 1e-12);
            }
        }
        assert!(pairwise_matrix(&flows[..1], Measure::Position, AlignmentPolicy::nearest()).is_err());
    }

    #[test]
    fn matrix_block_order_and_skips() {
        let flows = vec![
            flow(("L2", "a", "en"), wiggly(6, 0.0)),
            flow(("L1", "b", "en"), wiggly(6, 1.0)),
            flow(("L1", "a", "en"), vec![vec![0.0; 3]; 6]),
        ];
        let m = pairwise_matrix(&flows, Measure::Curvature, AlignmentPolicy::resample(16)).unwrap();
        assert_eq!(m.ids, vec!["L1/a/en", "L1/b/en", "L2/a/en"]);
        assert_eq!(
            m.blocks,
            vec![
                Block { logic_id: "L1".into(), start: 0, end: 2 },
                Block { logic_id: "L2".into(), start: 2, end: 3 },
            ]
        );
        // the all-zero flow has constant (degenerate) curvature
        assert_eq!(m.diagonal_flags, vec![0]);
        assert_eq!(m.skipped.len(), 2);
        assert!(m.skipped.iter().all(|s| s.reason == SkipReason::ConstantSeries));
        assert_eq!(m.get(0, 1), None);

        let csv = m.to_csv();
        assert!(csv.starts_with(",L1/a/en,L1/b/en,L2/a/en\n"));
        assert!(csv.contains("L1/a/en,,,\n"));
    }

    #[test]
    fn group_summary_by_hand() {
        // keys: 0 L1/a/de, 1 L1/a/en, 2 L1/b/en, 3 L2/a/en, 4 L2/b/de (block order)
        let keys = [
            ("L1", "a", "de"),
            ("L1", "a", "en"),
            ("L1", "b", "en"),
            ("L2", "a", "en"),
            ("L2", "b", "de"),
        ];
        let score = |i: usize, j: usize| (i * 10 + j) as f64 / 100.0;
        let n = keys.len();
        let mut values = vec![vec![Some(1.0); n]; n];
        for i in 0..n {
            for j in i + 1..n {
                values[i][j] = Some(score(i, j));
                values[j][i] = Some(score(i, j));
            }
        }
        values[1][3] = None;
        values[3][1] = None;
        let flow_keys: Vec<FlowKey> = keys
            .iter()
            .map(|k| FlowKey { logic_id: k.0.into(), topic: k.1.into(), language: k.2.into() })
            .collect();
        let m = SimilarityMatrix {
            measure: Measure::Velocity,
            policy: AlignmentPolicy::nearest(),
            ids: flow_keys.iter().map(FlowKey::id).collect(),
            blocks: blocks_of(&flow_keys),
            keys: flow_keys.clone(),
            values,
            skipped: vec![SkippedPair { i: 1, j: 3, reason: SkipReason::ZeroVector }],
            diagonal_flags: vec![],
            undefined_steps: 0,
        };
        let meta: BTreeMap<String, FlowKey> = flow_keys.iter().map(|k| (k.id(), k.clone())).collect();
        let report = group_summary(std::slice::from_ref(&m), &meta, &GroupCriterion::ALL, false).unwrap();

        // logic: (0,1) (0,2) (1,2) (3,4) → 0.01, 0.02, 0.12, 0.34
        let logic = report.get(Measure::Velocity, GroupCriterion::Logic).unwrap();
        assert_eq!((logic.pairs, logic.eligible), (4, 4));
        assert!((logic.mean.unwrap() - (0.01 + 0.02 + 0.12 + 0.34) / 4.0).abs() < 1e-15);
        // topic, different logic: a: (0,3) (1,3)*; b: (2,4) → 0.03, 0.24
        let topic = report.get(Measure::Velocity, GroupCriterion::Topic).unwrap();
        assert_eq!((topic.pairs, topic.eligible), (2, 3));
        assert_eq!(topic.excluded[&SkipReason::ZeroVector], 1);
        assert!((topic.mean.unwrap() - (0.03 + 0.24) / 2.0).abs() < 1e-15);
        // language, different logic: de: (0,4); en: (1,3)* (2,3) → 0.04, 0.23
        let lang = report.get(Measure::Velocity, GroupCriterion::Language).unwrap();
        assert_eq!((lang.pairs, lang.eligible), (2, 3));
        assert!((lang.mean.unwrap() - (0.04 + 0.23) / 2.0).abs() < 1e-15);

        // inclusive topic adds same-logic pairs (0,1) and ... (0,1) a/a, (3,?) none
        let inclusive = group_summary(std::slice::from_ref(&m), &meta, &[GroupCriterion::Topic], true).unwrap();
        let topic = &inclusive.stats[0];
        // a: (0,1) (0,3) (1,3)*; b: (2,4)
        assert_eq!((topic.pairs, topic.eligible), (3, 4));

        let mut missing = meta.clone();
        missing.remove("L2/b/de");
        assert!(matches!(
            group_summary(&[m], &missing, &GroupCriterion::ALL, false),
            Err(AnalysisError::UnknownFlowId(_))
        ));
    }

    #[test]
    fn all_ones_two_by_two() {
        let mut flows = Vec::new();
        for l in ["L1", "L2"] {
            for t in ["a", "b"] {
                flows.push(flow((l, t, "en"), wiggly(6, 0.0)));
            }
        }
        let m = pairwise_matrix(&flows, Measure::Position, AlignmentPolicy::nearest()).unwrap();
        let report = group_summary(&[m], &flow_metadata(&flows), &GroupCriterion::ALL, false).unwrap();
        for (c, pairs) in [
            (GroupCriterion::Logic, 2),
            (GroupCriterion::Topic, 2),
            (GroupCriterion::Language, 4),
        ] {
            let s = report.get(Measure::Position, c).unwrap();
            assert_eq!(s.pairs, pairs, "{c}");
            assert!((s.mean.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    fn arb_flow(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), len)
    }

    proptest! {
        #[test]
        fn measures_are_symmetric(a in arb_flow(3..12), b in arb_flow(3..12)) {
            let fa = flow(("L", "x", "en"), a);
            let fb = flow(("L", "y", "en"), b);
            for m in Measure::ALL {
                let p = m.default_policy();
                let (ab, ba) = match m {
                    Measure::Position => (position_similarity(&fa, &fb, p), position_similarity(&fb, &fa, p)),
                    Measure::Velocity => (velocity_similarity(&fa, &fb, p), velocity_similarity(&fb, &fa, p)),
                    Measure::Curvature => (curvature_similarity(&fa, &fb, p), curvature_similarity(&fb, &fa, p)),
                };
                match (ab.unwrap().score, ba.unwrap().score) {
                    (Score::Value(x), Score::Value(y)) => prop_assert!((x - y).abs() <= 1e-12),
                    (x, y) => prop_assert_eq!(x, y),
                }
            }
        }

        #[test]
        fn velocity_translation_invariant(a in arb_flow(2..10), shift in prop::collection::vec(-50.0f64..50.0, 3)) {
            let moved: Vec<Vec<f64>> = a.iter().map(|p| p.iter().zip(&shift).map(|(x, s)| x + s).collect()).collect();
            let s = velocity_similarity(&flow(("L", "x", "en"), a), &flow(("L", "x", "en"), moved), AlignmentPolicy::nearest()).unwrap();
            if let Score::Value(v) = s.score {
                prop_assert!((v - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn curvature_affine_invariant(a in arb_flow(5..10), lambda in 0.1f64..10.0, shift in prop::collection::vec(-50.0f64..50.0, 3)) {
            let moved: Vec<Vec<f64>> = a.iter().map(|p| p.iter().zip(&shift).map(|(x, s)| lambda * x + s).collect()).collect();
            let s = curvature_similarity(&flow(("L", "x", "en"), a), &flow(("L", "x", "en"), moved), AlignmentPolicy::resample(16)).unwrap();
            if let Score::Value(v) = s.score {
                prop_assert!((v - 1.0).abs() < 1e-6, "{}", v);
            }
        }
    }
}
