//! Experiment orchestration: configuration, the results store and the
//! command implementations behind the CLI.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::client::{ClientError, Dialect, DispatchItem, EndpointConfig, MllmClient, RequestKey};
use crate::fixtures;
use crate::fusion::{self, FusionError, FusionWeights};
use crate::manifest::{
    load_annotations, load_manifest, sample_per_class, AnnotationMap, Manifest, ManifestError, PresentationClass,
};
use crate::mesh::{self, InjectedMesh, MeshError, MESH_TAG};
use crate::mock::MockError;
use crate::prompt::{enumerate_variants, AssembledPrompt, PromptError, PromptVariant, SalienceCorpus, SalienceKind, SalienceLibrary};
use crate::report;
use crate::scoring::{
    aggregate_mse, confidence_histogram, error_rates, ClassErrorRates, Decision, HistogramBin, MseScore, ScoringError,
    Verdict, DEFAULT_HISTOGRAM_BINS, DEFAULT_THRESHOLD,
};
use crate::stats::{self, LearningCurve, StatResult, StatsError};

pub const STORE_FILE: &str = "results.txt";
pub const FAILURES_FILE: &str = "failures.txt";
pub const STORE_HEADER: &str = "sample_id | class | variant | confidence | decision | attempts";
pub const DEFAULT_SAMPLE_CAP: usize = 30;
pub const DEFAULT_CHUNK_SIZE: usize = 64;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{}: `{field}`: {msg}", path.display())]
    Config { path: PathBuf, field: String, msg: String },
    #[error("{}: {msg}", path.display())]
    Io { path: PathBuf, msg: String },
    #[error("{}:{line}: {msg}", path.display())]
    Store { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Mock(#[from] MockError),
    #[error("{failed} of {total} MESH documents could not be generated")]
    MeshFailures { failed: usize, total: usize },
}

impl ExperimentError {
    /// Stable identifier for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentError::Config { .. } => "config",
            ExperimentError::Io { .. } => "io",
            ExperimentError::Store { .. } => "store",
            ExperimentError::Manifest(_) => "manifest",
            ExperimentError::Prompt(_) => "prompt",
            ExperimentError::Client(_) => "client",
            ExperimentError::Scoring(_) => "scoring",
            ExperimentError::Stats(_) => "stats",
            ExperimentError::Fusion(_) => "fusion",
            ExperimentError::Mesh(_) => "mesh",
            ExperimentError::Mock(_) => "mock",
            ExperimentError::MeshFailures { .. } => "mesh_failures",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io { path: path.to_path_buf(), msg: e.to_string() }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshSettings {
    /// Exemplar sample per class; classes left out get the first annotated
    /// sample of that class.
    pub exemplars: BTreeMap<PresentationClass, String>,
    pub max_attempts: u32,
    pub output: PathBuf,
    pub inject: InjectedMesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedSettings {
    pub embeddings: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub manifest_path: PathBuf,
    pub annotations_path: Option<PathBuf>,
    pub salience_paths: BTreeMap<SalienceKind, PathBuf>,
    pub endpoint: Option<EndpointConfig>,
    pub variants: Vec<PromptVariant>,
    pub threshold: f64,
    pub sample_cap: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Dispatch granularity; results are persisted after every chunk.
    pub chunk_size: usize,
    pub histogram_bins: usize,
    pub mesh: MeshSettings,
    pub embed: EmbedSettings,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    threshold: Option<f64>,
    sample_cap: Option<usize>,
    output_dir: Option<PathBuf>,
    variants: Option<Vec<String>>,
    chunk_size: Option<usize>,
    histogram_bins: Option<usize>,
    data: RawData,
    #[serde(default)]
    salience: BTreeMap<String, PathBuf>,
    endpoint: Option<RawEndpoint>,
    #[serde(default)]
    mesh: RawMesh,
    #[serde(default)]
    embed: RawEmbed,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    manifest: PathBuf,
    annotations: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEndpoint {
    dialect: Option<String>,
    base_url: String,
    model: String,
    auth_token_env: Option<String>,
    max_retries: Option<u32>,
    max_in_flight: Option<usize>,
    min_request_spacing_ms: Option<u64>,
    retry_backoff_ms: Option<u64>,
    request_timeout_s: Option<u64>,
    transcript_log: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMesh {
    max_attempts: Option<u32>,
    output: Option<PathBuf>,
    inject: Option<InjectedMesh>,
    #[serde(default)]
    exemplars: BTreeMap<String, String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEmbed {
    embeddings: Option<PathBuf>,
    weights: Option<PathBuf>,
    hidden_dim: Option<usize>,
    output_dim: Option<usize>,
}

impl ExperimentConfig {
    /// Parses TOML config text. Relative paths resolve against `base_dir`.
    pub fn parse(text: &str, origin: &Path, base_dir: &Path) -> Result<Self, ExperimentError> {
        let cfg_err = |field: &str, msg: String| ExperimentError::Config {
            path: origin.to_path_buf(),
            field: field.to_string(),
            msg,
        };
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let field = e.message().split('`').nth(1).unwrap_or("").to_string();
            cfg_err(&field, e.to_string().trim().replace('\n', " "))
        })?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };

        let variants = match raw.variants {
            None => enumerate_variants(),
            Some(labels) => {
                let mut out = Vec::new();
                for l in labels {
                    let v: PromptVariant = l.parse().map_err(|_| cfg_err("variants", format!("unknown variant `{l}`")))?;
                    if !out.contains(&v) {
                        out.push(v);
                    }
                }
                if out.is_empty() {
                    return Err(cfg_err("variants", "empty variant list".into()));
                }
                out
            }
        };
        let threshold = raw.threshold.unwrap_or(DEFAULT_THRESHOLD);
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(cfg_err("threshold", format!("{threshold} is outside (0, 1)")));
        }
        let sample_cap = raw.sample_cap.unwrap_or(DEFAULT_SAMPLE_CAP);
        if sample_cap == 0 {
            return Err(cfg_err("sample_cap", "must be positive".into()));
        }
        let chunk_size = raw.chunk_size.unwrap_or(DEFAULT_CHUNK_SIZE);
        if chunk_size == 0 {
            return Err(cfg_err("chunk_size", "must be positive".into()));
        }
        let histogram_bins = raw.histogram_bins.unwrap_or(DEFAULT_HISTOGRAM_BINS);
        if histogram_bins == 0 {
            return Err(cfg_err("histogram_bins", "must be positive".into()));
        }

        let mut salience_paths = BTreeMap::new();
        for (k, p) in &raw.salience {
            let kind: SalienceKind = k
                .parse()
                .ok()
                .filter(|k| *k != SalienceKind::None)
                .ok_or_else(|| cfg_err(&format!("salience.{k}"), "unknown salience kind".into()))?;
            salience_paths.insert(kind, resolve(p));
        }

        let endpoint = match raw.endpoint {
            None => None,
            Some(e) => {
                let dialect = match e.dialect.as_deref().unwrap_or("chat_completions") {
                    "chat_completions" => Dialect::ChatCompletions,
                    "generate_content" => Dialect::GenerateContent,
                    other => return Err(cfg_err("endpoint.dialect", format!("unknown dialect `{other}`"))),
                };
                let mut ep = EndpointConfig::new(dialect, e.base_url, e.model);
                ep.auth_token_env = e.auth_token_env;
                if let Some(v) = e.max_retries {
                    ep.max_retries = v;
                }
                if let Some(v) = e.max_in_flight {
                    ep.max_in_flight = v;
                }
                if let Some(ms) = e.min_request_spacing_ms {
                    ep.min_request_spacing = Duration::from_millis(ms);
                }
                if let Some(ms) = e.retry_backoff_ms {
                    ep.retry_backoff = Duration::from_millis(ms);
                }
                if let Some(s) = e.request_timeout_s {
                    ep.request_timeout = Duration::from_secs(s);
                }
                ep.transcript_log = e.transcript_log.as_deref().map(resolve);
                ep.validate().map_err(|err| cfg_err("endpoint", err.to_string()))?;
                Some(ep)
            }
        };

        let output_dir = resolve(raw.output_dir.as_deref().unwrap_or(Path::new("out")));
        let mut exemplars = BTreeMap::new();
        for (class, id) in raw.mesh.exemplars {
            let c: PresentationClass = class
                .parse()
                .map_err(|_| cfg_err(&format!("mesh.exemplars.{class}"), "unknown class".into()))?;
            exemplars.insert(c, id);
        }
        let mesh = MeshSettings {
            exemplars,
            max_attempts: raw.mesh.max_attempts.unwrap_or(5).max(1),
            output: raw.mesh.output.as_deref().map(resolve).unwrap_or_else(|| output_dir.join("mesh_corpus.txt")),
            inject: raw.mesh.inject.unwrap_or_default(),
        };
        let embed = EmbedSettings {
            embeddings: raw.embed.embeddings.as_deref().map(resolve),
            weights: raw.embed.weights.as_deref().map(resolve),
            hidden_dim: raw.embed.hidden_dim.unwrap_or(fusion::DEFAULT_HIDDEN_DIM),
            output_dim: raw.embed.output_dim.unwrap_or(fusion::DEFAULT_OUTPUT_DIM),
        };

        Ok(ExperimentConfig {
            manifest_path: resolve(&raw.data.manifest),
            annotations_path: raw.data.annotations.as_deref().map(resolve),
            salience_paths,
            endpoint,
            variants,
            threshold,
            sample_cap,
            seed: raw.seed.unwrap_or(0),
            output_dir,
            chunk_size,
            histogram_bins,
            mesh,
            embed,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    pub fn require_endpoint(&self) -> Result<&EndpointConfig, ExperimentError> {
        self.endpoint.as_ref().ok_or_else(|| ExperimentError::Config {
            path: PathBuf::from("<config>"),
            field: "endpoint".into(),
            msg: "an [endpoint] section is required for this command".into(),
        })
    }

    /// Corpora for every salience kind used by the configured variants.
    pub fn salience_library(&self) -> Result<SalienceLibrary, ExperimentError> {
        let mut lib = SalienceLibrary::default();
        let needed: BTreeSet<SalienceKind> = self
            .variants
            .iter()
            .map(|v| v.salience)
            .filter(|k| *k != SalienceKind::None)
            .collect();
        for kind in needed {
            let path = self.salience_paths.get(&kind).ok_or_else(|| ExperimentError::Config {
                path: PathBuf::from("<config>"),
                field: format!("salience.{}", kind.as_str()),
                msg: "required by a configured variant".into(),
            })?;
            lib.corpora.insert(kind, SalienceCorpus::load(path)?);
        }
        Ok(lib)
    }
}

/// Manifest with image paths made relative to the manifest file's folder.
pub fn load_manifest_resolved(path: &Path) -> Result<Manifest, ExperimentError> {
    let mut manifest = load_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for s in &mut manifest.samples {
        if s.image_ref.is_relative() {
            s.image_ref = base.join(&s.image_ref);
        }
    }
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreRecord {
    pub variant: PromptVariant,
    pub verdict: Verdict,
    pub attempts: u32,
}

impl StoreRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{} | {} | {} | {} | {} | {}",
            self.verdict.sample_id,
            self.verdict.class,
            self.variant,
            self.verdict.confidence,
            self.verdict.decision.as_str(),
            self.attempts
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        let [sample_id, class, variant, confidence, decision, attempts] = fields[..] else {
            return Err(format!("expected 6 fields, got {}", fields.len()));
        };
        let class: PresentationClass = class.parse().map_err(|e: crate::manifest::UnknownClass| e.to_string())?;
        let variant: PromptVariant = variant.parse().map_err(|e: PromptError| e.to_string())?;
        let confidence: f64 = confidence.parse().map_err(|_| format!("bad confidence `{confidence}`"))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(format!("confidence {confidence} outside [0, 1]"));
        }
        let decision: Decision = decision.parse().map_err(|e: ScoringError| e.to_string())?;
        let attempts: u32 = attempts.parse().map_err(|_| format!("bad attempts `{attempts}`"))?;
        if sample_id.is_empty() {
            return Err("empty sample id".into());
        }
        Ok(StoreRecord {
            variant,
            verdict: Verdict { sample_id: sample_id.to_string(), class, confidence, decision },
            attempts,
        })
    }

    fn sort_key(&self) -> (usize, usize, &str) {
        (self.variant.index(), self.verdict.class.index(), &self.verdict.sample_id)
    }
}

/// Canonical order: variant, then class, then sample id. Later duplicates
/// of a `(variant, sample)` pair are dropped.
pub fn canonicalize(records: &mut Vec<StoreRecord>) {
    let mut seen = HashSet::new();
    records.retain(|r| seen.insert((r.variant, r.verdict.sample_id.clone())));
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

pub fn parse_store(text: &str, path: &Path) -> Result<Vec<StoreRecord>, ExperimentError> {
    let mut out = Vec::new();
    let lines: Vec<&str> = text.split('\n').collect();
    let last = lines.len() - 1;
    for (idx, line) in lines.iter().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed == STORE_HEADER {
            continue;
        }
        match StoreRecord::parse_line(trimmed) {
            Ok(r) => out.push(r),
            // a final line without newline is an interrupted write
            Err(_) if idx == last => tracing::warn!("{}: dropping truncated last line", path.display()),
            Err(msg) => return Err(ExperimentError::Store { path: path.to_path_buf(), line: idx + 1, msg }),
        }
    }
    Ok(out)
}

pub fn read_store(path: &Path) -> Result<Vec<StoreRecord>, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_store(&text, path)
}

pub fn store_to_text(records: &[StoreRecord]) -> String {
    let mut sorted = records.to_vec();
    canonicalize(&mut sorted);
    let mut out = String::with_capacity(64 * (sorted.len() + 1));
    out.push_str(STORE_HEADER);
    out.push('\n');
    for r in &sorted {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub fn write_store(path: &Path, records: &[StoreRecord]) -> Result<(), ExperimentError> {
    write_file(path, store_to_text(records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub variant: PromptVariant,
    pub sample_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub store: PathBuf,
    pub new_records: usize,
    pub skipped: usize,
    pub failures: Vec<RunFailure>,
    pub total_records: usize,
}

/// Queries every configured variant for every sampled image and persists
/// verdicts. Pairs already in the store are skipped, so an interrupted run
/// can simply be restarted. Failed pairs go to the failures file and are
/// retried on the next run.
pub async fn cmd_run(cfg: &ExperimentConfig) -> Result<RunSummary, ExperimentError> {
    let endpoint = cfg.require_endpoint()?.clone();
    let manifest = load_manifest_resolved(&cfg.manifest_path)?;
    let sampled = sample_per_class(&manifest, cfg.sample_cap, cfg.seed);
    let library = cfg.salience_library()?;
    let mut texts = BTreeMap::new();
    for v in &cfg.variants {
        texts.insert(*v, library.render(*v)?);
    }

    std::fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let store_path = cfg.output_dir.join(STORE_FILE);
    let mut records = if store_path.exists() { read_store(&store_path)? } else { Vec::new() };
    // rewrite first so a truncated tail from an interrupted run is gone
    // before appending
    write_store(&store_path, &records)?;
    let done: HashSet<(PromptVariant, String)> =
        records.iter().map(|r| (r.variant, r.verdict.sample_id.clone())).collect();

    let classes: BTreeMap<&str, PresentationClass> =
        sampled.samples.iter().map(|s| (s.sample_id.as_str(), s.class)).collect();
    let mut pending = Vec::new();
    let mut skipped = 0;
    for v in &cfg.variants {
        for s in &sampled.samples {
            if done.contains(&(*v, s.sample_id.clone())) {
                skipped += 1;
                continue;
            }
            pending.push(DispatchItem {
                key: RequestKey::new(&s.sample_id, Some(v.to_string())),
                prompt: AssembledPrompt::new(Some(*v), texts[v].clone(), s.image_ref.clone()),
            });
        }
    }

    let client = MllmClient::new(endpoint)?;
    let mut file = std::fs::OpenOptions::new()
        .append(true)
        .open(&store_path)
        .map_err(io_err(&store_path))?;
    let mut failures = Vec::new();
    let mut new_records = 0;
    for chunk in pending.chunks(cfg.chunk_size) {
        let outcomes = client.run_batch(chunk).await;
        let mut lines = String::new();
        for (item, outcome) in chunk.iter().zip(outcomes) {
            let variant = item.prompt.variant.expect("run prompts carry their variant");
            let sample_id = &item.key.sample_id;
            match outcome.result {
                Ok(resp) => {
                    let verdict = Verdict::new(sample_id, classes[sample_id.as_str()], resp.confidence, cfg.threshold)?;
                    let rec = StoreRecord { variant, verdict, attempts: resp.attempts };
                    lines.push_str(&rec.to_line());
                    lines.push('\n');
                    records.push(rec);
                    new_records += 1;
                }
                Err(e) => failures.push(RunFailure { variant, sample_id: sample_id.clone(), error: e.to_string() }),
            }
        }
        file.write_all(lines.as_bytes()).map_err(io_err(&store_path))?;
        file.flush().map_err(io_err(&store_path))?;
        tracing::info!(persisted = new_records, failed = failures.len(), "chunk done");
    }
    drop(file);
    write_store(&store_path, &records)?;

    let failures_path = cfg.output_dir.join(FAILURES_FILE);
    if failures.is_empty() {
        let _ = std::fs::remove_file(&failures_path);
    } else {
        let mut text = String::from("sample_id | variant | error\n");
        for f in &failures {
            let _ = writeln!(text, "{} | {} | {}", f.sample_id, f.variant, f.error.replace(['\n', '|'], " "));
        }
        write_file(&failures_path, text)?;
    }
    canonicalize(&mut records);
    Ok(RunSummary {
        store: store_path,
        new_records,
        skipped,
        failures,
        total_records: records.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub variant: PromptVariant,
    pub rates: ClassErrorRates,
    pub mse: MseScore,
    pub verdicts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub rows: Vec<ScoreRow>,
    pub histograms: BTreeMap<PromptVariant, Vec<HistogramBin>>,
}

fn group_by_variant(records: &[StoreRecord]) -> BTreeMap<PromptVariant, Vec<Verdict>> {
    let mut out: BTreeMap<PromptVariant, Vec<Verdict>> = BTreeMap::new();
    for r in records {
        out.entry(r.variant).or_default().push(r.verdict.clone());
    }
    out
}

/// Per-variant rates, MSE and confidence histograms from store records.
pub fn score_records(records: &[StoreRecord], bins: usize) -> Result<ScoreReport, ExperimentError> {
    if records.is_empty() {
        return Err(ScoringError::Empty.into());
    }
    let mut rows = Vec::new();
    let mut histograms = BTreeMap::new();
    for (variant, verdicts) in group_by_variant(records) {
        let rates = error_rates(&verdicts);
        let mse = aggregate_mse(&rates)?;
        histograms.insert(variant, confidence_histogram(&verdicts, bins));
        rows.push(ScoreRow { variant, rates, mse, verdicts: verdicts.len() });
    }
    Ok(ScoreReport { rows, histograms })
}

fn file_label(v: PromptVariant) -> String {
    v.to_string().replace('+', "_")
}

/// Scores a store and writes `rates.csv`, `counts.csv`, `histograms.csv`,
/// `mse.svg` and one `hist_<variant>.svg` per variant into `out_dir`.
pub fn cmd_score(store: &Path, out_dir: &Path, bins: usize) -> Result<ScoreReport, ExperimentError> {
    let records = read_store(store)?;
    let report = score_records(&records, bins)?;

    let mut rates_csv = String::from("variant");
    for c in PresentationClass::ALL {
        let _ = write!(rates_csv, ",{c}");
    }
    rates_csv.push_str(",mse\n");
    let mut counts_csv = String::from("variant,class,errors,total\n");
    for row in &report.rows {
        let _ = write!(rates_csv, "{}", row.variant);
        for c in PresentationClass::ALL {
            let r = row.rates.rate(c).expect("scored rows cover every class");
            let _ = write!(rates_csv, ",{r:.3}");
            if let Some(n) = row.rates.counts(c) {
                let _ = writeln!(counts_csv, "{},{c},{},{}", row.variant, n.errors, n.total);
            }
        }
        let _ = writeln!(rates_csv, ",{:.3}", row.mse.rounded(3));
    }
    write_file(&out_dir.join("rates.csv"), rates_csv)?;
    write_file(&out_dir.join("counts.csv"), counts_csv)?;

    let mut hist_csv = String::from("variant,bin_lower,bin_upper,count\n");
    for (variant, hist) in &report.histograms {
        let width = 1.0 / hist.len() as f64;
        for b in hist {
            let _ = writeln!(hist_csv, "{variant},{:.4},{:.4},{}", b.lower, b.lower + width, b.count);
        }
        let labels: Vec<String> = hist.iter().map(|b| format!("{:.2}", b.lower)).collect();
        let counts: Vec<f64> = hist.iter().map(|b| b.count as f64).collect();
        let svg = report::bar_chart(&format!("Confidence histogram: {variant}"), &labels, &counts);
        write_file(&out_dir.join(format!("hist_{}.svg", file_label(*variant))), svg)?;
    }
    write_file(&out_dir.join("histograms.csv"), hist_csv)?;

    let labels: Vec<String> = report.rows.iter().map(|r| r.variant.to_string()).collect();
    let values: Vec<f64> = report.rows.iter().map(|r| r.mse.value()).collect();
    write_file(&out_dir.join("mse.svg"), report::bar_chart("MSE by prompt variant", &labels, &values))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveReport {
    pub variant: PromptVariant,
    pub curve: LearningCurve,
    pub converged_at: Option<usize>,
}

/// Learning curves per variant; writes `curve.csv` and `curve_<variant>.svg`.
pub fn cmd_curve(store: &Path, out_dir: &Path, seed: u64, epsilon: f64) -> Result<Vec<CurveReport>, ExperimentError> {
    let records = read_store(store)?;
    if records.is_empty() {
        return Err(ScoringError::Empty.into());
    }
    let mut csv = String::from("variant,n_per_class,mse\n");
    let mut out = Vec::new();
    for (variant, verdicts) in group_by_variant(&records) {
        let curve = stats::learning_curve(&verdicts, seed)?;
        let points: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.n_per_class as f64, p.mse)).collect();
        for p in &curve.points {
            let _ = writeln!(csv, "{variant},{},{:.6}", p.n_per_class, p.mse);
        }
        let final_mse = curve.points.last().map(|p| p.mse);
        let svg = report::line_chart(&format!("Learning curve: {variant}"), &points, final_mse);
        write_file(&out_dir.join(format!("curve_{}.svg", file_label(variant))), svg)?;
        let converged_at = stats::converged_at(&curve, epsilon);
        out.push(CurveReport { variant, curve, converged_at });
    }
    write_file(&out_dir.join("curve.csv"), csv)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    Wilcoxon,
    MannWhitney,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::Wilcoxon => "wilcoxon",
            TestKind::MannWhitney => "mann_whitney",
        }
    }
}

/// What is compared between two stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// Per-class error rates, paired by (variant, class).
    ClassRates,
    /// Per-sample confidences, paired by (variant, sample).
    Confidence,
    /// Per-sample 0/1 error indicators, paired by (variant, sample).
    SampleError,
}

impl Quantity {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::ClassRates => "class_rates",
            Quantity::Confidence => "confidence",
            Quantity::SampleError => "sample_error",
        }
    }
}

fn quantities(records: &[StoreRecord], q: Quantity, variant: Option<PromptVariant>) -> BTreeMap<(usize, String), f64> {
    let selected: Vec<StoreRecord> = records
        .iter()
        .filter(|r| variant.is_none_or(|v| r.variant == v))
        .cloned()
        .collect();
    let mut out = BTreeMap::new();
    match q {
        Quantity::ClassRates => {
            for (v, verdicts) in group_by_variant(&selected) {
                for (class, rate) in error_rates(&verdicts).iter() {
                    out.insert((v.index(), class.to_string()), rate);
                }
            }
        }
        Quantity::Confidence | Quantity::SampleError => {
            for r in selected {
                let value = match q {
                    Quantity::Confidence => r.verdict.confidence,
                    _ => r.verdict.is_error() as u8 as f64,
                };
                out.insert((r.variant.index(), r.verdict.sample_id), value);
            }
        }
    }
    out
}

/// Compares two stores. The paired test uses keys present in both; the
/// independent test uses every value from each side.
pub fn cmd_stats(
    store_a: &Path,
    store_b: &Path,
    test: TestKind,
    quantity: Quantity,
    variant: Option<PromptVariant>,
) -> Result<StatResult, ExperimentError> {
    let a = quantities(&read_store(store_a)?, quantity, variant);
    let b = quantities(&read_store(store_b)?, quantity, variant);
    match test {
        TestKind::Wilcoxon => {
            let (x, y): (Vec<f64>, Vec<f64>) = a
                .iter()
                .filter_map(|(k, va)| b.get(k).map(|vb| (*va, *vb)))
                .unzip();
            if x.is_empty() {
                return Err(StatsError::EmptySample.into());
            }
            Ok(stats::wilcoxon_signed_rank(&x, &y)?)
        }
        TestKind::MannWhitney => {
            let x: Vec<f64> = a.into_values().collect();
            let y: Vec<f64> = b.into_values().collect();
            Ok(stats::mann_whitney_u(&x, &y)?)
        }
    }
}

/// `test | statistic | p | method | n`
pub fn format_stat_line(test: TestKind, r: &StatResult) -> String {
    format!("{} | {} | {:.6} | {} | {}", test.as_str(), r.statistic, r.p_value, r.method.as_str(), r.n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub samples: usize,
    pub sampled: usize,
    pub annotations: usize,
    pub class_counts: BTreeMap<PresentationClass, usize>,
    pub written: PathBuf,
}

/// Validates the manifest and annotations and writes the capped sample to
/// `sampled_manifest.csv`.
pub fn cmd_ingest(cfg: &ExperimentConfig) -> Result<IngestSummary, ExperimentError> {
    let manifest = load_manifest(&cfg.manifest_path)?;
    let annotations = match &cfg.annotations_path {
        Some(p) => load_annotations(p, &manifest)?.values().map(Vec::len).sum(),
        None => 0,
    };
    let sampled = sample_per_class(&manifest, cfg.sample_cap, cfg.seed);
    std::fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let written = cfg.output_dir.join("sampled_manifest.csv");
    sampled.write_csv(&written)?;
    Ok(IngestSummary {
        samples: manifest.len(),
        sampled: sampled.len(),
        annotations,
        class_counts: sampled.class_counts(),
        written,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshFailure {
    pub class: PresentationClass,
    pub sample_id: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshSummary {
    pub corpus: PathBuf,
    pub written: usize,
    pub failures: Vec<MeshFailure>,
}

fn choose_exemplars(
    cfg: &ExperimentConfig,
    manifest: &Manifest,
    annotations: &AnnotationMap,
) -> Vec<(PresentationClass, Option<String>)> {
    PresentationClass::ALL
        .into_iter()
        .map(|class| {
            let id = cfg.mesh.exemplars.get(&class).cloned().or_else(|| {
                let mut ids: Vec<&str> = manifest
                    .samples
                    .iter()
                    .filter(|s| s.class == class && annotations.contains_key(&s.sample_id))
                    .map(|s| s.sample_id.as_str())
                    .collect();
                ids.sort();
                ids.first().map(|s| s.to_string())
            });
            (class, id)
        })
        .collect()
}

/// Generates one MESH description per class from examiner feedback on the
/// exemplar image and writes them as a salience corpus. Classes that fail
/// are reported; the rest are still written.
pub async fn cmd_mesh(cfg: &ExperimentConfig) -> Result<MeshSummary, ExperimentError> {
    let endpoint = cfg.require_endpoint()?.clone();
    let manifest = load_manifest_resolved(&cfg.manifest_path)?;
    let ann_path = cfg.annotations_path.as_ref().ok_or_else(|| ExperimentError::Config {
        path: PathBuf::from("<config>"),
        field: "data.annotations".into(),
        msg: "required by mesh".into(),
    })?;
    let annotations = load_annotations(ann_path, &manifest)?;
    let client = MllmClient::new(endpoint)?;
    let by_id = manifest.by_id();

    let mut failures = Vec::new();
    let mut jobs = Vec::new();
    for (class, id) in choose_exemplars(cfg, &manifest, &annotations) {
        let Some(id) = id else {
            failures.push(MeshFailure { class, sample_id: None, error: "no annotated sample".into() });
            continue;
        };
        let Some(record) = by_id.get(id.as_str()) else {
            failures.push(MeshFailure { class, sample_id: Some(id), error: "sample not in manifest".into() });
            continue;
        };
        let anns = annotations.get(&id).cloned().unwrap_or_default();
        jobs.push((class, id, record.image_ref.clone(), anns));
    }
    let futures = jobs.iter().map(|(_, id, image, anns)| {
        let key = RequestKey::new(id, Some(MESH_TAG.to_string()));
        let client = &client;
        async move { mesh::generate_mesh(client, &key, image, anns, cfg.mesh.max_attempts).await }
    });
    let results = futures::future::join_all(futures).await;

    let mut corpus = SalienceCorpus::default();
    let mut documents = String::new();
    let mut written = 0;
    for ((class, id, _, _), result) in jobs.iter().zip(results) {
        match result {
            Ok(outcome) => {
                corpus.push(*class, id, &mesh::corpus_text(&outcome.description, cfg.mesh.inject));
                let _ = writeln!(documents, "## {class} {id} attempts={}\n{}\n", outcome.attempts, outcome.description.serialize());
                written += 1;
            }
            Err(e) => failures.push(MeshFailure { class: *class, sample_id: Some(id.clone()), error: e.to_string() }),
        }
    }
    write_file(&cfg.mesh.output, corpus.to_text())?;
    write_file(&cfg.output_dir.join("mesh_documents.txt"), documents)?;
    failures.sort_by_key(|f| f.class);
    Ok(MeshSummary { corpus: cfg.mesh.output.clone(), written, failures })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedReport {
    pub records: usize,
    pub silhouette_fused: f64,
    pub silhouette_image_only: f64,
    pub explained_ratio: Vec<f64>,
    pub coords: Vec<(String, PresentationClass, f64, f64)>,
}

/// Fuses, projects to 2-D and scores separability of fused vs image-only
/// embeddings, both after projection.
pub fn embed_records(
    records: &[fusion::EmbeddingRecord],
    weights: &FusionWeights,
) -> Result<EmbedReport, ExperimentError> {
    let labels: Vec<PresentationClass> = records.iter().map(|r| r.class).collect();
    let fused = fusion::fuse_batch(records, weights)?;
    let proj = fusion::pca_project(&fused, 2)?;
    let images: Vec<Vec<f64>> = records.iter().map(|r| r.image_vec.clone()).collect();
    let image_proj = fusion::pca_project(&images, 2)?;
    let silhouette_fused = fusion::silhouette(&proj.scores, &labels)?;
    let silhouette_image_only = fusion::silhouette(&image_proj.scores, &labels)?;
    let coords = records
        .iter()
        .zip(&proj.scores)
        .map(|(r, s)| (r.sample_id.clone(), r.class, s[0], s[1]))
        .collect();
    Ok(EmbedReport {
        records: records.len(),
        silhouette_fused,
        silhouette_image_only,
        explained_ratio: proj.explained_ratio,
        coords,
    })
}

/// Writes `embed_coords.csv` and `embed_scatter.svg`.
pub fn cmd_embed(cfg: &ExperimentConfig) -> Result<EmbedReport, ExperimentError> {
    let path = cfg.embed.embeddings.as_ref().ok_or_else(|| ExperimentError::Config {
        path: PathBuf::from("<config>"),
        field: "embed.embeddings".into(),
        msg: "required by embed".into(),
    })?;
    let records = fusion::load_embeddings(path)?;
    let input = records.first().map(|r| r.image_vec.len() + r.text_vec.len()).unwrap_or(0);
    let weights = match &cfg.embed.weights {
        Some(w) => FusionWeights::load(w)?,
        None => FusionWeights::random(input, cfg.embed.hidden_dim, cfg.embed.output_dim, cfg.seed),
    };
    let report = embed_records(&records, &weights)?;

    let mut csv = String::from("sample_id,class,pc1,pc2\n");
    for (id, class, x, y) in &report.coords {
        let _ = writeln!(csv, "{id},{class},{x:.6},{y:.6}");
    }
    write_file(&cfg.output_dir.join("embed_coords.csv"), csv)?;
    let points: Vec<(f64, f64, usize)> = report.coords.iter().map(|(_, c, x, y)| (*x, *y, c.index())).collect();
    let names: Vec<String> = PresentationClass::ALL.iter().map(|c| c.to_string()).collect();
    write_file(
        &cfg.output_dir.join("embed_scatter.svg"),
        report::scatter("Fused embeddings (PCA)", &points, &names),
    )?;
    Ok(report)
}

pub fn format_silhouette_line(r: &EmbedReport) -> String {
    format!(
        "silhouette | fused={:.4} | image_only={:.4} | n={} | explained={:.4},{:.4}",
        r.silhouette_fused,
        r.silhouette_image_only,
        r.records,
        r.explained_ratio.first().copied().unwrap_or(0.0),
        r.explained_ratio.get(1).copied().unwrap_or(0.0)
    )
}

/// Writes a self-contained synthetic workspace into `dir`: manifest,
/// placeholder images, annotations, salience corpora, embeddings, a mock
/// script answering every request, and `config.toml` pointing at a mock
/// server on `port`.
pub fn scaffold_demo(dir: &Path, seed: u64, port: u16) -> Result<PathBuf, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = fixtures::reference_manifest();
    manifest.write_csv(&dir.join("manifest.csv"))?;
    fixtures::write_placeholder_images(dir, &manifest).map_err(io_err(dir))?;
    write_file(&dir.join("annotations.txt"), fixtures::synthetic_annotations(&manifest, seed))?;
    for kind in [SalienceKind::Human, SalienceKind::LlamaMesh, SalienceKind::GeminiMesh] {
        write_file(
            &dir.join(format!("salience/{}.txt", kind.as_str())),
            fixtures::fixture_corpus(kind).to_text(),
        )?;
    }
    let embeddings = fixtures::separability_fixture(20, 32, 32, seed);
    write_file(&dir.join("embeddings.csv"), fusion::embeddings_to_text(&embeddings))?;

    let mut script = fixtures::mock_script_for(&manifest, &fixtures::full_plan("gemini"), DEFAULT_THRESHOLD, seed);
    for s in &manifest.samples {
        script.push(
            &format!("{MESH_TAG}/{}", s.sample_id),
            crate::mock::AttemptSelector::Any,
            crate::mock::ScriptAction::Text(fixtures::mesh_reply(s.class)),
        );
    }
    write_file(&dir.join("mock_script.txt"), script.to_text())?;

    let config = format!(
        "seed = {seed}\nthreshold = 0.5\nsample_cap = 30\noutput_dir = \"out\"\n\n\
         [data]\nmanifest = \"manifest.csv\"\nannotations = \"annotations.txt\"\n\n\
         [salience]\nhuman = \"salience/human.txt\"\nllama_mesh = \"salience/llama_mesh.txt\"\ngemini_mesh = \"salience/gemini_mesh.txt\"\n\n\
         [endpoint]\ndialect = \"chat_completions\"\nbase_url = \"http://127.0.0.1:{port}/v1\"\nmodel = \"mock-model\"\n\
         max_retries = 3\nmax_in_flight = 8\nretry_backoff_ms = 10\n\n\
         [mesh]\nmax_attempts = 3\n\n\
         [embed]\nembeddings = \"embeddings.csv\"\nhidden_dim = 64\noutput_dim = 32\n"
    );
    let config_path = dir.join("config.toml");
    write_file(&config_path, config)?;
    Ok(config_path)
}
