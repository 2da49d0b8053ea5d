//! Context-cumulative trajectories: point t is the embedding of the text of
//! steps 1..=t joined together.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusIndex, ReasoningRecord};
use crate::provider::{read_flow, write_flow, Embedder, FlowFile, FlowFileError, FlowMeta, ProviderError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Each point embeds the concatenated prefix through a provider.
    PrefixEmbedding,
    /// Hidden states pooled over each step's token span (produced externally).
    StepSpan,
    /// Generated trajectories with known ground truth.
    Synthetic,
}

impl Pooling {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pooling::PrefixEmbedding => "prefix-embedding",
            Pooling::StepSpan => "step-span",
            Pooling::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub include_prompt: bool,
    /// Text placed before step 1 when `include_prompt` is set.
    pub prompt: Option<String>,
    pub joiner: String,
    pub mode: Pooling,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            include_prompt: false,
            prompt: None,
            joiner: "\n".into(),
            mode: Pooling::PrefixEmbedding,
        }
    }
}

/// A trajectory y_1..y_T held in 64-bit precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub points: Vec<Vec<f64>>,
    pub meta: FlowMeta,
}

impl Flow {
    pub fn new(points: Vec<Vec<f64>>, meta: FlowMeta) -> Self {
        Flow { points, meta }
    }

    /// A flow with placeholder metadata, handy for geometry on raw points.
    pub fn from_points(points: Vec<Vec<f64>>) -> Self {
        Flow {
            points,
            meta: FlowMeta::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn id(&self) -> String {
        self.meta.id()
    }

    pub fn to_file(&self) -> FlowFile {
        FlowFile {
            dim: self.dim(),
            steps: self.len(),
            payload: self.points.iter().flatten().map(|&x| x as f32).collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn from_file(file: &FlowFile) -> Self {
        let points = (0..file.steps)
            .map(|t| file.row(t).iter().map(|&x| f64::from(x)).collect())
            .collect();
        Flow {
            points,
            meta: file.meta.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("{record}{}: {source}", step.map(|t| format!(" step {t}")).unwrap_or_default())]
    Provider {
        record: String,
        step: Option<usize>,
        #[source]
        source: ProviderError,
    },
    #[error("{record}: include_prompt is set but no prompt text was given")]
    MissingPrompt { record: String },
    #[error("{record}: expected {expected} points, got {found}")]
    LengthMismatch {
        record: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: FlowFileError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cannot build flows from an empty index")]
    EmptyIndex,
}

/// The cumulative texts S_1..S_T for a record.
pub fn prefix_texts(rec: &ReasoningRecord, opts: &FlowOptions) -> Result<Vec<String>, FlowError> {
    let mut current = String::new();
    if opts.include_prompt {
        let prompt = opts.prompt.as_deref().ok_or_else(|| FlowError::MissingPrompt {
            record: rec.key(),
        })?;
        current.push_str(prompt);
        current.push_str(&opts.joiner);
    }
    let mut out = Vec::with_capacity(rec.steps.len());
    for (t, step) in rec.steps.iter().enumerate() {
        if t > 0 {
            current.push_str(&opts.joiner);
        }
        current.push_str(&step.raw);
        out.push(current.clone());
    }
    Ok(out)
}

pub fn flow_meta(rec: &ReasoningRecord, provider: &str, opts: &FlowOptions) -> FlowMeta {
    FlowMeta {
        logic_id: rec.logic_id.clone(),
        topic: rec.topic.clone(),
        language: rec.language.clone(),
        mode: rec.mode.to_string(),
        provider: provider.to_string(),
        pooling: opts.mode.as_str().to_string(),
        joiner: Some(opts.joiner.clone()),
        include_prompt: Some(opts.include_prompt),
        extra: Default::default(),
    }
}

pub fn build_cumulative_flow(
    rec: &ReasoningRecord,
    provider: &dyn Embedder,
    opts: &FlowOptions,
) -> Result<Flow, FlowError> {
    let texts = prefix_texts(rec, opts)?;
    let points = provider
        .embed_batch(&texts)
        .map_err(|source| FlowError::Provider {
            record: rec.key(),
            step: None,
            source,
        })?;
    if points.len() != texts.len() {
        return Err(FlowError::LengthMismatch {
            record: rec.key(),
            expected: texts.len(),
            found: points.len(),
        });
    }
    let dim = points[0].len();
    if let Some(t) = points.iter().position(|p| p.len() != dim) {
        return Err(FlowError::Provider {
            record: rec.key(),
            step: Some(t + 1),
            source: ProviderError::DimensionMismatch {
                expected: dim,
                found: points[t].len(),
            },
        });
    }
    Ok(Flow::new(points, flow_meta(rec, &provider.id(), opts)))
}

/// Where batch_build takes its points from.
pub enum FlowSource<'a> {
    Embedder(&'a dyn Embedder),
    /// Directory of pre-built flow files, `<logic>/<topic>/<language>.rflw`.
    Files(&'a Path),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub id: String,
    pub logic_id: String,
    pub topic: String,
    pub language: String,
    pub steps: usize,
    pub dim: usize,
    pub pooling: String,
    pub provider: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: String,
    pub options: FlowOptions,
    pub flows: Vec<ManifestEntry>,
    pub failures: Vec<ManifestFailure>,
}

pub const MANIFEST_NAME: &str = "manifest.json";
pub const FLOW_EXT: &str = "rflw";

fn sanitize(component: &str) -> String {
    let s: String = component
        .chars()
        .map(|c| if c.is_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    match s.as_str() {
        "" | "." | ".." => "_".into(),
        _ => s,
    }
}

/// Relative path of a record's flow file.
pub fn flow_path(logic_id: &str, topic: &str, language: &str) -> PathBuf {
    PathBuf::from(sanitize(logic_id))
        .join(sanitize(topic))
        .join(format!("{}.{FLOW_EXT}", sanitize(language)))
}

fn relative_name(path: &Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Builds one flow file per carrier record of the index and writes
/// `manifest.json`. Per-record failures are listed in the manifest and do
/// not stop the run.
pub fn batch_build(
    index: &CorpusIndex,
    source: FlowSource<'_>,
    opts: &FlowOptions,
    out_dir: &Path,
) -> Result<Manifest, FlowError> {
    let records: Vec<&ReasoningRecord> = index.carriers().collect();
    if records.is_empty() {
        return Err(FlowError::EmptyIndex);
    }
    std::fs::create_dir_all(out_dir)?;

    let results: Vec<(PathBuf, &ReasoningRecord, Result<FlowFile, FlowError>)> = records
        .par_iter()
        .map(|rec| {
            let rel = flow_path(&rec.logic_id, &rec.topic, &rec.language);
            let file = match &source {
                FlowSource::Embedder(e) => build_cumulative_flow(rec, *e, opts).map(|f| f.to_file()),
                FlowSource::Files(dir) => load_prebuilt(rec, &dir.join(&rel)),
            };
            (rel, *rec, file)
        })
        .collect();

    let mut flows = Vec::new();
    let mut failures = Vec::new();
    for (rel, rec, file) in results {
        let written = file.and_then(|f| {
            let path = out_dir.join(&rel);
            write_flow(&f, &path).map_err(|source| FlowError::File { path, source })?;
            Ok(f)
        });
        match written {
            Ok(f) => flows.push(ManifestEntry {
                file: relative_name(&rel),
                id: rec.key(),
                logic_id: rec.logic_id.clone(),
                topic: rec.topic.clone(),
                language: rec.language.clone(),
                steps: f.steps,
                dim: f.dim,
                pooling: f.meta.pooling.clone(),
                provider: f.meta.provider.clone(),
            }),
            Err(e) => {
                tracing::warn!(record = %rec.key(), error = %e, "flow build failed");
                failures.push(ManifestFailure {
                    id: rec.key(),
                    error: e.to_string(),
                });
            }
        }
    }
    flows.sort_by(|a, b| a.file.cmp(&b.file));
    failures.sort_by(|a, b| a.id.cmp(&b.id));

    let manifest = Manifest {
        source: match &source {
            FlowSource::Embedder(e) => e.id(),
            FlowSource::Files(dir) => format!("file:{}", dir.display()),
        },
        options: opts.clone(),
        flows,
        failures,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(out_dir.join(MANIFEST_NAME), json + "\n")?;
    Ok(manifest)
}

/// Writes already-built flows under the usual naming plus a manifest.
pub fn write_flows(flows: &[Flow], source: &str, opts: &FlowOptions, out_dir: &Path) -> Result<Manifest, FlowError> {
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(flows.len());
    for flow in flows {
        let rel = flow_path(&flow.meta.logic_id, &flow.meta.topic, &flow.meta.language);
        let path = out_dir.join(&rel);
        let file = flow.to_file();
        write_flow(&file, &path).map_err(|source| FlowError::File { path, source })?;
        entries.push(ManifestEntry {
            file: relative_name(&rel),
            id: flow.id(),
            logic_id: flow.meta.logic_id.clone(),
            topic: flow.meta.topic.clone(),
            language: flow.meta.language.clone(),
            steps: file.steps,
            dim: file.dim,
            pooling: file.meta.pooling.clone(),
            provider: file.meta.provider.clone(),
        });
    }
    entries.sort_by(|a, b| a.file.cmp(&b.file));
    let manifest = Manifest {
        source: source.to_string(),
        options: opts.clone(),
        flows: entries,
        failures: Vec::new(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(out_dir.join(MANIFEST_NAME), json + "\n")?;
    Ok(manifest)
}

fn load_prebuilt(rec: &ReasoningRecord, path: &Path) -> Result<FlowFile, FlowError> {
    let file = read_flow(path).map_err(|source| FlowError::File {
        path: path.to_path_buf(),
        source,
    })?;
    if file.steps != rec.n_steps {
        return Err(FlowError::LengthMismatch {
            record: rec.key(),
            expected: rec.n_steps,
            found: file.steps,
        });
    }
    Ok(file)
}

/// All `.rflw` files below `dir`, sorted by relative path.
pub fn find_flow_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == FLOW_EXT) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_flows(dir: &Path) -> Result<Vec<Flow>, FlowError> {
    find_flow_files(dir)?
        .into_iter()
        .map(|path| {
            read_flow(&path)
                .map(|f| Flow::from_file(&f))
                .map_err(|source| FlowError::File { path, source })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_record, Mode, RawRecord};
    use crate::provider::{synth_embedding, SynthEmbedder};

    fn record(steps: &[&str]) -> ReasoningRecord {
        parse_record(&RawRecord {
            logic_id: Some("L".into()),
            topic: Some("t".into()),
            language: Some("en".into()),
            mode: Some(Mode::Carrier),
            steps: Some(steps.iter().map(|s| s.to_string()).collect()),
        })
        .unwrap()
    }

    struct Constant;
    impl Embedder for Constant {
        fn id(&self) -> String {
            "constant".into()
        }
        fn dimension(&self) -> Option<usize> {
            Some(2)
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
            Ok(texts.iter().map(|_| vec![1.0, 2.0]).collect())
        }
    }

    #[test]
    fn three_step_flow_matches_independent_prefixes() {
        let rec = record(&["[1] alpha beta", "[2] gamma", "[3] delta epsilon"]);
        let synth = SynthEmbedder { dim: 8, seed: 5 };
        let flow = build_cumulative_flow(&rec, &synth, &FlowOptions::default()).unwrap();
        assert_eq!(flow.len(), 3);
        let prefixes = [
            "[1] alpha beta",
            "[1] alpha beta\n[2] gamma",
            "[1] alpha beta\n[2] gamma\n[3] delta epsilon",
        ];
        for (p, text) in flow.points.iter().zip(prefixes) {
            assert_eq!(p, &synth_embedding(text, 8, 5));
        }
        assert_eq!(flow.meta.joiner.as_deref(), Some("\n"));
        assert_eq!(flow.meta.pooling, "prefix-embedding");
    }

    #[test]
    fn constant_provider_gives_equal_points() {
        let rec = record(&["[1] s", "[2] s"]);
        let flow = build_cumulative_flow(&rec, &Constant, &FlowOptions::default()).unwrap();
        assert_eq!(flow.points[0], flow.points[1]);
    }

    #[test]
    fn prompt_changes_flow() {
        let rec = record(&["[1] a b", "[2] c"]);
        let synth = SynthEmbedder { dim: 8, seed: 1 };
        let plain = build_cumulative_flow(&rec, &synth, &FlowOptions::default()).unwrap();
        let opts = FlowOptions {
            include_prompt: true,
            prompt: Some("Solve the problem.".into()),
            ..Default::default()
        };
        let prompted = build_cumulative_flow(&rec, &synth, &opts).unwrap();
        assert_ne!(plain.points, prompted.points);
        assert_eq!(prompted.meta.include_prompt, Some(true));

        let no_text = FlowOptions {
            include_prompt: true,
            ..Default::default()
        };
        assert!(matches!(
            build_cumulative_flow(&rec, &synth, &no_text),
            Err(FlowError::MissingPrompt { .. })
        ));
    }

    #[test]
    fn prefixes_grow_monotonically() {
        let rec = record(&["[1] x", "[2] y", "[3] z", "[4] w"]);
        for joiner in ["\n", " ", " || "] {
            let opts = FlowOptions {
                joiner: joiner.into(),
                ..Default::default()
            };
            let texts = prefix_texts(&rec, &opts).unwrap();
            for w in texts.windows(2) {
                assert!(w[0].chars().count() < w[1].chars().count());
                assert!(w[1].starts_with(&w[0]));
            }
        }
    }

    #[test]
    fn path_components_are_sanitized() {
        assert_eq!(flow_path("L1", "weather", "en"), PathBuf::from("L1/weather/en.rflw"));
        assert_eq!(flow_path("..", "a/b", "en"), PathBuf::from("_/a_b/en.rflw"));
    }

    #[test]
    fn file_round_trip_rounds_to_f32() {
        let flow = Flow::from_points(vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
        let back = Flow::from_file(&flow.to_file());
        assert_eq!(back.points[0][0], f64::from(0.1f32));
    }
}
