use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use flowgeom::analysis::{
    blocks_of, flow_metadata, group_summary, pairwise_matrix, read_matrix_csv, AlignmentPolicy, Block,
    FlowKey, GroupCriterion, Measure,
};
use flowgeom::corpus::{build_index, load_corpus, validate_corpus, Severity};
use flowgeom::flow::{batch_build, load_flows, write_flows, FlowOptions, FlowSource, Pooling};
use flowgeom::project::{heatmap_svg, project_flows, ProjectOptions, Solver};
use flowgeom::provider::{Embedder, HttpConfig, HttpEmbedder, SynthEmbedder, DEFAULT_KEY_ENV};
use flowgeom::smooth::{c1_report, tokenize, MaskSchedule, ToyEncoder, ToyEncoderConfig};
use flowgeom::synth::{expected_report, generate_corpus, generate_flows, SynthSpec};

use crate::{CliError, Command};

fn fail<E: Display>(context: impl Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Failure(format!("{context}: {e}"))
}

fn invalid<E: Display>(context: impl Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Validation(format!("{context}: {e}"))
}

fn parent_or_cwd(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(fail(parent.display()))?;
    }
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, json + "\n").map_err(fail(path.display()))
}

pub fn default_run_dir(command: &Command) -> PathBuf {
    match command {
        Command::Validate(a) => a.report.as_deref().map_or_else(|| PathBuf::from("."), parent_or_cwd),
        Command::Embed(a) => a.out.clone(),
        Command::Analyze(a) => parent_or_cwd(&a.out),
        Command::Project(a) => parent_or_cwd(&a.out),
        Command::Heatmap(a) => parent_or_cwd(&a.svg),
        Command::SmoothDemo(a) => parent_or_cwd(&a.out),
        Command::Synth(a) => a.out.clone(),
    }
}

pub fn run(command: &Command, seed: u64) -> Result<(), CliError> {
    match command {
        Command::Validate(a) => validate(a),
        Command::Embed(a) => embed(a, seed),
        Command::Analyze(a) => analyze(a),
        Command::Project(a) => project(a, seed),
        Command::Heatmap(a) => heatmap(a),
        Command::SmoothDemo(a) => smooth_demo(a, seed),
        Command::Synth(a) => synth(a, seed),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Also check →E, ∀E and ∧I steps of abstract templates.
    #[arg(long)]
    pub check_derivations: bool,
    /// Write the full findings as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn validate(a: &ValidateArgs) -> Result<(), CliError> {
    let (records, line_errors) = load_corpus(&a.corpus).map_err(fail(a.corpus.display()))?;
    for e in &line_errors {
        tracing::error!(line = e.line, error = %e.error, "unreadable record");
    }
    let reports = validate_corpus(&records, a.check_derivations);
    let excluded = build_index(records.clone()).map(|i| i.excluded).unwrap_or_default();

    let errors: usize = line_errors.len() + reports.iter().map(|r| r.error_count()).sum::<usize>();
    let warnings: usize = reports.iter().map(|r| r.count(Severity::Warning)).sum();
    let invalid: usize = reports.iter().map(|r| r.invalid_derivations()).sum();
    eprintln!(
        "{}: {} records, {} errors, {} warnings, {} invalid derivations, {} excluded",
        a.corpus.display(),
        records.len(),
        errors,
        warnings,
        invalid,
        excluded.len()
    );
    for r in &reports {
        for f in r.findings.iter().filter(|f| f.severity == Severity::Error) {
            eprintln!("  {}: {}", r.record, f.message);
        }
        for d in r.derivations.iter().filter(|d| d.status == flowgeom::corpus::DerivationStatus::Invalid) {
            eprintln!("  {} step {}: {}", r.record, d.step, d.message);
        }
    }

    if let Some(path) = &a.report {
        let line_errors: Vec<_> = line_errors
            .iter()
            .map(|e| serde_json::json!({ "line": e.line, "error": e.error.to_string() }))
            .collect();
        write_json(
            path,
            &serde_json::json!({
                "summary": {
                    "records": records.len(),
                    "errors": errors,
                    "warnings": warnings,
                    "invalid_derivations": invalid,
                    "excluded": excluded.len(),
                },
                "line_errors": line_errors,
                "excluded": excluded,
                "records": reports,
            }),
        )?;
    }
    if errors + invalid > 0 {
        return Err(CliError::Validation(format!(
            "{errors} errors and {invalid} invalid derivations"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Synth,
    Http,
    File,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "synth")]
    pub provider: ProviderKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Put the prompt text before step 1.
    #[arg(long)]
    pub include_prompt: bool,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    /// Separator between steps; `\n` and `\t` escapes are understood.
    #[arg(long, default_value = "\\n")]
    pub joiner: String,
    /// Dimension of the synth provider.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Directory of pre-built flow files (file provider).
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value = "")]
    pub model: String,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value = DEFAULT_KEY_ENV)]
    pub api_key_env: String,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 4)]
    pub parallel: usize,
    #[arg(long, default_value_t = 5)]
    pub retries: u32,
    #[arg(long, default_value_t = 500)]
    pub backoff_ms: u64,
    #[arg(long, default_value_t = 60_000)]
    pub timeout_ms: u64,
}

fn unescape(s: &str) -> String {
    s.replace("\\n", "\n").replace("\\t", "\t")
}

fn embed(a: &EmbedArgs, seed: u64) -> Result<(), CliError> {
    let (records, line_errors) = load_corpus(&a.corpus).map_err(fail(a.corpus.display()))?;
    for e in &line_errors {
        tracing::warn!(line = e.line, error = %e.error, "skipping unreadable record");
    }
    let index = build_index(records).map_err(invalid(a.corpus.display()))?;
    for x in &index.excluded {
        tracing::warn!(record = %x.record, reason = %x.reason, "record excluded");
    }

    let prompt = match (&a.prompt, &a.prompt_file) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(path)) => Some(std::fs::read_to_string(path).map_err(fail(path.display()))?),
        (None, None) => None,
    };
    let opts = FlowOptions {
        include_prompt: a.include_prompt,
        prompt,
        joiner: unescape(&a.joiner),
        mode: Pooling::PrefixEmbedding,
    };

    let synth;
    let http;
    let source = match a.provider {
        ProviderKind::Synth => {
            if a.dim < 2 {
                return Err(CliError::Validation(format!("--dim must be ≥ 2, got {}", a.dim)));
            }
            synth = SynthEmbedder { dim: a.dim, seed };
            FlowSource::Embedder(&synth as &dyn Embedder)
        }
        ProviderKind::Http => {
            let endpoint = a
                .endpoint
                .clone()
                .ok_or_else(|| CliError::Validation("--provider http needs --endpoint".into()))?;
            http = HttpEmbedder::new(HttpConfig {
                endpoint,
                model: a.model.clone(),
                api_key_env: a.api_key_env.clone(),
                max_batch: a.batch,
                max_parallel: a.parallel,
                retries: a.retries,
                backoff_base_ms: a.backoff_ms,
                timeout_ms: a.timeout_ms,
            })
            .map_err(invalid("http provider"))?;
            FlowSource::Embedder(&http as &dyn Embedder)
        }
        ProviderKind::File => {
            let dir = a
                .source
                .as_deref()
                .ok_or_else(|| CliError::Validation("--provider file needs --source <dir>".into()))?;
            FlowSource::Files(dir)
        }
    };
    let manifest = batch_build(&index, source, &opts, &a.out).map_err(fail("embed"))?;
    eprintln!(
        "{} flows written to {} ({} failed)",
        manifest.flows.len(),
        a.out.display(),
        manifest.failures.len()
    );
    for f in &manifest.failures {
        eprintln!("  {}: {}", f.id, f.error);
    }
    if !manifest.failures.is_empty() {
        return Err(CliError::Failure(format!("{} records could not be embedded", manifest.failures.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignArg {
    Nearest,
    Resample,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub flows: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "position,velocity,curvature")]
    pub measures: Vec<Measure>,
    /// One alignment for every measure (default: nearest for position and
    /// velocity, resample for curvature).
    #[arg(long, value_enum)]
    pub align: Option<AlignArg>,
    #[arg(long, default_value_t = AlignmentPolicy::DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, value_delimiter = ',', default_value = "logic,topic,language")]
    pub criteria: Vec<GroupCriterion>,
    /// Group by the shared attribute alone.
    #[arg(long)]
    pub inclusive: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Matrix CSVs and sidecars (default: `matrices/` next to the report).
    #[arg(long)]
    pub matrices: Option<PathBuf>,
}

fn policy_for(m: Measure, align: Option<AlignArg>, grid: usize) -> AlignmentPolicy {
    match align {
        Some(AlignArg::Nearest) => AlignmentPolicy::nearest(),
        Some(AlignArg::Resample) => AlignmentPolicy::resample(grid),
        None => match m {
            Measure::Curvature => AlignmentPolicy::resample(grid),
            _ => m.default_policy(),
        },
    }
}

fn analyze(a: &AnalyzeArgs) -> Result<(), CliError> {
    let flows = load_flows(&a.flows).map_err(fail(a.flows.display()))?;
    let mut measures = a.measures.clone();
    measures.dedup();
    let matrices = measures
        .iter()
        .map(|&m| pairwise_matrix(&flows, m, policy_for(m, a.align, a.grid)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(invalid(a.flows.display()))?;
    let dir = a.matrices.clone().unwrap_or_else(|| parent_or_cwd(&a.out).join("matrices"));
    for m in &matrices {
        m.write(&dir).map_err(fail(dir.display()))?;
    }
    let report = group_summary(&matrices, &flow_metadata(&flows), &a.criteria, a.inclusive)
        .map_err(invalid("grouping"))?;

    eprintln!("{} flows, {} measures", flows.len(), matrices.len());
    for s in &report.stats {
        let mean = s.mean.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        eprintln!(
            "  {:<9} {:<8} mean {:>8}  ({} of {} pairs)",
            s.measure.as_str(), s.criterion.as_str(), mean, s.pairs, s.eligible
        );
    }
    let policies: BTreeMap<String, AlignmentPolicy> =
        matrices.iter().map(|m| (m.measure.to_string(), m.policy)).collect();
    write_json(
        &a.out,
        &serde_json::json!({
            "config": {
                "flows": flows.len(),
                "measures": measures,
                "policies": policies,
                "criteria": a.criteria,
                "inclusive": a.inclusive,
            },
            "report": report,
            "matrices": matrices.iter().map(|m| m.sidecar()).collect::<Vec<_>>(),
        }),
    )
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverArg {
    Auto,
    Dense,
    Iterative,
}

#[derive(Debug, Args, Serialize)]
pub struct ProjectArgs {
    #[arg(long)]
    pub flows: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    pub dims: u8,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Subtract each flow's mean before fitting (display only).
    #[arg(long)]
    pub center_per_flow: bool,
    #[arg(long, value_enum, default_value = "auto")]
    pub solver: SolverArg,
}

fn project(a: &ProjectArgs, seed: u64) -> Result<(), CliError> {
    let flows = load_flows(&a.flows).map_err(fail(a.flows.display()))?;
    let opts = ProjectOptions {
        k: usize::from(a.dims),
        center_per_flow: a.center_per_flow,
        solver: match a.solver {
            SolverArg::Auto => Solver::Auto,
            SolverArg::Dense => Solver::Dense,
            SolverArg::Iterative => Solver::Iterative,
        },
        seed,
    };
    let projection = project_flows(&flows, &opts).map_err(invalid(a.flows.display()))?;
    projection
        .write(&a.out, a.svg.as_deref())
        .map_err(fail(a.out.display()))?;
    let m = &projection.model;
    let share: Vec<String> = m
        .explained_variance
        .iter()
        .map(|v| format!("{:.3}", v / m.total_variance.max(f64::MIN_POSITIVE)))
        .collect();
    eprintln!(
        "{} flows projected to {} dims (variance share {})",
        projection.flows.len(),
        m.k(),
        share.join(", ")
    );
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub svg: PathBuf,
}

fn heatmap(a: &HeatmapArgs) -> Result<(), CliError> {
    let (ids, values) = read_matrix_csv(&a.matrix).map_err(invalid(a.matrix.display()))?;
    let sidecar = a.matrix.with_extension("json");
    let blocks: Vec<Block> = match std::fs::read_to_string(&sidecar) {
        Ok(text) => {
            let v: serde_json::Value = serde_json::from_str(&text).map_err(invalid(sidecar.display()))?;
            serde_json::from_value(v["blocks"].clone()).map_err(invalid(sidecar.display()))?
        }
        Err(_) => match ids.iter().map(|id| FlowKey::parse(id)).collect::<Option<Vec<_>>>() {
            Some(keys) => blocks_of(&keys),
            None => Vec::new(),
        },
    };
    let svg = heatmap_svg(&ids, &values, &blocks);
    if let Some(parent) = a.svg.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(fail(parent.display()))?;
    }
    std::fs::write(&a.svg, svg).map_err(fail(a.svg.display()))?;
    eprintln!("{}×{} heatmap written to {}", ids.len(), ids.len(), a.svg.display());
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct SmoothArgs {
    /// Text file; tokens are whitespace-separated.
    #[arg(long)]
    pub tokens: PathBuf,
    /// Cumulative token counts at sentence ends (default: after tokens
    /// ending in `.`, `!` or `?`, and at the last token).
    #[arg(long, value_delimiter = ',')]
    pub boundaries: Vec<usize>,
    #[arg(long, default_value_t = MaskSchedule::DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, default_value_t = 512)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Encoder output dimension.
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
}

fn sentence_ends(tokens: &[String]) -> Vec<usize> {
    let mut out: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.ends_with(['.', '!', '?']))
        .map(|(i, _)| i + 1)
        .collect();
    if out.last() != Some(&tokens.len()) {
        out.push(tokens.len());
    }
    out
}

fn smooth_demo(a: &SmoothArgs, seed: u64) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.tokens).map_err(fail(a.tokens.display()))?;
    let tokens = tokenize(&text);
    if tokens.is_empty() {
        return Err(CliError::Validation(format!("{}: no tokens", a.tokens.display())));
    }
    let boundaries = if a.boundaries.is_empty() {
        sentence_ends(&tokens)
    } else {
        a.boundaries.clone()
    };
    let schedule = MaskSchedule::new(tokens.len(), boundaries, a.delta).map_err(invalid("schedule"))?;
    let encoder = ToyEncoder::new(ToyEncoderConfig {
        dim: a.dim,
        width: a.width,
        temperature: a.temperature,
        seed,
        ..Default::default()
    });
    let report = c1_report(&tokens, &schedule, &encoder, a.grid).map_err(invalid("smooth-demo"))?;
    eprintln!(
        "{} tokens, boundaries {:?}: boundary error {:.3e}, first-difference ratios {:?}",
        schedule.n_tokens,
        schedule.boundaries,
        report.boundary_exactness,
        report
            .first_difference_ratios
            .iter()
            .map(|r| format!("{r:.3}"))
            .collect::<Vec<_>>()
    );
    write_json(&a.out, &report)
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub logics: usize,
    #[arg(long, default_value_t = 4)]
    pub topics: usize,
    #[arg(long, default_value_t = 2)]
    pub langs: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    /// Language offset magnitude relative to β.
    #[arg(long, default_value_t = 0.3)]
    pub lang_ratio: f64,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 8)]
    pub steps_min: usize,
    #[arg(long, default_value_t = 12)]
    pub steps_max: usize,
}

fn synth(a: &SynthArgs, seed: u64) -> Result<(), CliError> {
    let spec = SynthSpec {
        logics: a.logics,
        topics: a.topics,
        languages: a.langs,
        steps_min: a.steps_min,
        steps_max: a.steps_max,
        seed,
        beta: a.beta,
        gamma: a.gamma,
        sigma: a.sigma,
        lang_ratio: a.lang_ratio,
        dim: a.dim,
    };
    let corpus = generate_corpus(&spec).map_err(invalid("synth"))?;
    let flows = generate_flows(&spec).map_err(invalid("synth"))?;
    std::fs::create_dir_all(&a.out).map_err(fail(a.out.display()))?;
    let corpus_path = a.out.join("corpus.jsonl");
    flowgeom::corpus::write_corpus(&corpus_path, &corpus).map_err(fail(corpus_path.display()))?;
    let flow_dir = a.out.join("flows");
    let opts = FlowOptions {
        mode: Pooling::Synthetic,
        ..Default::default()
    };
    write_flows(&flows, "synthetic", &opts, &flow_dir).map_err(fail(flow_dir.display()))?;
    let expected = expected_report(&spec).map_err(invalid("expected report"))?;
    write_json(
        &a.out.join("expected_report.json"),
        &serde_json::json!({ "spec": spec, "report": expected }),
    )?;
    eprintln!(
        "{} records and {} flows written to {}",
        corpus.len(),
        flows.len(),
        a.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joiner_escapes() {
        assert_eq!(unescape("\\n"), "\n");
        assert_eq!(unescape(" | "), " | ");
        assert_eq!(unescape("\\t\\n"), "\t\n");
    }

    #[test]
    fn default_boundaries_follow_sentences() {
        let tokens = tokenize("a b. c d e! f");
        assert_eq!(sentence_ends(&tokens), vec![2, 5, 6]);
        let tokens = tokenize("a b.");
        assert_eq!(sentence_ends(&tokens), vec![2]);
    }

    #[test]
    fn curvature_grid_override() {
        assert_eq!(policy_for(Measure::Curvature, None, 32), AlignmentPolicy::resample(32));
        assert_eq!(policy_for(Measure::Position, None, 32), AlignmentPolicy::nearest());
        assert_eq!(
            policy_for(Measure::Velocity, Some(AlignArg::Resample), 20),
            AlignmentPolicy::resample(20)
        );
    }
}
