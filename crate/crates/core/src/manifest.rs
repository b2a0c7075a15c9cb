//! Dataset manifests, examiner annotations and per-class capped sampling.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::sub_rng;

pub const MANIFEST_HEADER: [&str; 4] = ["sample_id", "class", "image_path", "source"];

/// The eight presentation classes. Declaration order is the canonical order
/// used whenever per-class values are serialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresentationClass {
    Live,
    Artificial,
    ContactsPrint,
    Diseased,
    PostMortem,
    Printout,
    Synthetic,
    TexturedContact,
}

impl PresentationClass {
    pub const ALL: [PresentationClass; 8] = [
        PresentationClass::Live,
        PresentationClass::Artificial,
        PresentationClass::ContactsPrint,
        PresentationClass::Diseased,
        PresentationClass::PostMortem,
        PresentationClass::Printout,
        PresentationClass::Synthetic,
        PresentationClass::TexturedContact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresentationClass::Live => "live",
            PresentationClass::Artificial => "artificial",
            PresentationClass::ContactsPrint => "contacts_print",
            PresentationClass::Diseased => "diseased",
            PresentationClass::PostMortem => "post_mortem",
            PresentationClass::Printout => "printout",
            PresentationClass::Synthetic => "synthetic",
            PresentationClass::TexturedContact => "textured_contact",
        }
    }

    /// Only live irises are bona fide presentations.
    pub fn is_bona_fide(self) -> bool {
        self == PresentationClass::Live
    }

    pub fn is_attack(self) -> bool {
        !self.is_bona_fide()
    }

    /// Position in canonical order.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PresentationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown presentation class `{0}`")]
pub struct UnknownClass(pub String);

impl FromStr for PresentationClass {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PresentationClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub image_ref: PathBuf,
    pub class: PresentationClass,
    pub source_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub samples: Vec<SampleRecord>,
    /// Seed of the sampling pass that produced this manifest, if any.
    pub seed: Option<u64>,
}

impl Manifest {
    pub fn new(samples: Vec<SampleRecord>) -> Result<Self, ManifestError> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(ManifestError::DuplicateId(s.sample_id.clone()));
            }
        }
        Ok(Manifest {
            samples,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    /// Per-class sample counts in canonical order; absent classes map to 0.
    pub fn class_counts(&self) -> BTreeMap<PresentationClass, usize> {
        let mut counts: BTreeMap<_, _> = PresentationClass::ALL.iter().map(|&c| (c, 0)).collect();
        for s in &self.samples {
            *counts.entry(s.class).or_default() += 1;
        }
        counts
    }

    pub fn by_id(&self) -> BTreeMap<&str, &SampleRecord> {
        self.samples
            .iter()
            .map(|s| (s.sample_id.as_str(), s))
            .collect()
    }

    /// Writes the manifest back out in the ingest format.
    pub fn write_csv(&self, path: &Path) -> Result<(), ManifestError> {
        let io = |e: csv::Error| ManifestError::Io(path.to_path_buf(), e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(MANIFEST_HEADER).map_err(io)?;
        for s in &self.samples {
            w.write_record([
                s.sample_id.as_str(),
                s.class.as_str(),
                &s.image_ref.to_string_lossy(),
                s.source_tag.as_str(),
            ])
            .map_err(io)?;
        }
        w.flush()
            .map_err(|e| ManifestError::Io(path.to_path_buf(), e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("{0}: {1}")]
    Io(PathBuf, String),
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: unknown class `{token}`")]
    UnknownClass { line: usize, token: String },
    #[error("line {0}: malformed row")]
    MalformedRow(usize),
    #[error("annotation for unknown sample `{0}`")]
    UnknownSample(String),
    #[error("sample `{sample_id}`, examiner `{examiner_id}`: stored correctness disagrees with ground truth")]
    InconsistentCorrectness {
        sample_id: String,
        examiner_id: String,
    },
}

/// Loads a comma-delimited manifest with header `sample_id,class,image_path,source`.
///
/// Image paths are not checked here; a missing image surfaces when the sample
/// is dispatched. Relative image paths are kept as written.
pub fn load_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| ManifestError::Io(path.to_path_buf(), e.to_string()))?;

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 1;
        let row = row.map_err(|_| ManifestError::MalformedRow(line))?;
        if line == 1 {
            let header: Vec<&str> = row.iter().map(str::trim).collect();
            if header != MANIFEST_HEADER {
                return Err(ManifestError::MalformedRow(1));
            }
            continue;
        }
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        if row.len() != 4 {
            return Err(ManifestError::MalformedRow(line));
        }
        let sample_id = row[0].trim();
        if sample_id.is_empty() {
            return Err(ManifestError::MalformedRow(line));
        }
        let class = row[1]
            .trim()
            .parse::<PresentationClass>()
            .map_err(|UnknownClass(token)| ManifestError::UnknownClass { line, token })?;
        if !seen.insert(sample_id.to_string()) {
            return Err(ManifestError::DuplicateId(sample_id.to_string()));
        }
        samples.push(SampleRecord {
            sample_id: sample_id.to_string(),
            class,
            image_ref: PathBuf::from(row[2].trim()),
            source_tag: row[3].trim().to_string(),
        });
    }
    Ok(Manifest {
        samples,
        seed: None,
    })
}

/// Draws at most `cap` samples per class, uniformly, with a per-class
/// partial Fisher-Yates shuffle seeded from `seed` and the class name.
///
/// Each class is sorted by sample id before shuffling, so the draw does not
/// depend on row order in the input file. Output is in canonical class order,
/// then by sample id.
pub fn sample_per_class(manifest: &Manifest, cap: usize, seed: u64) -> Manifest {
    assert!(cap >= 1, "sample cap must be positive");
    let mut out = Vec::with_capacity(manifest.len().min(cap * PresentationClass::ALL.len()));
    for class in PresentationClass::ALL {
        let mut pool: Vec<&SampleRecord> =
            manifest.samples.iter().filter(|s| s.class == class).collect();
        pool.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let mut chosen: Vec<&SampleRecord> = if pool.len() <= cap {
            pool
        } else {
            let mut rng = sub_rng(seed, &format!("sample/{class}"));
            let (head, _) = pool.partial_shuffle(&mut rng, cap);
            head.to_vec()
        };
        chosen.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        out.extend(chosen.into_iter().cloned());
    }
    Manifest {
        samples: out,
        seed: Some(seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Expertise {
    Expert,
    NonExpert,
}

impl Expertise {
    pub fn label(self) -> &'static str {
        match self {
            Expertise::Expert => "expert",
            Expertise::NonExpert => "non-expert",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Declared {
    Normal,
    Abnormal,
}

impl Declared {
    pub fn as_str(self) -> &'static str {
        match self {
            Declared::Normal => "normal",
            Declared::Abnormal => "abnormal",
        }
    }

    /// Whether this declaration agrees with the sample's ground truth.
    pub fn matches(self, class: PresentationClass) -> bool {
        match self {
            Declared::Normal => class.is_bona_fide(),
            Declared::Abnormal => class.is_attack(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExaminerAnnotation {
    pub examiner_id: String,
    pub expertise: Expertise,
    pub declared: Declared,
    pub correct: bool,
    pub transcript: String,
}

pub type AnnotationMap = BTreeMap<String, Vec<ExaminerAnnotation>>;

fn parse_expertise(s: &str) -> Option<Expertise> {
    match s {
        "expert" => Some(Expertise::Expert),
        "non_expert" | "non-expert" => Some(Expertise::NonExpert),
        _ => None,
    }
}

fn parse_declared(s: &str) -> Option<Declared> {
    match s {
        "normal" => Some(Declared::Normal),
        "abnormal" => Some(Declared::Abnormal),
        _ => None,
    }
}

fn parse_correct(s: &str) -> Option<bool> {
    match s {
        "true" | "correct" => Some(true),
        "false" | "incorrect" => Some(false),
        _ => None,
    }
}

/// Parses the `|`-delimited annotation format, checking every stored
/// correctness flag against the manifest ground truth.
///
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_annotations(text: &str, manifest: &Manifest) -> Result<AnnotationMap, ManifestError> {
    let truth = manifest.by_id();
    let mut out = AnnotationMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.splitn(6, '|').map(str::trim).collect();
        let [sample_id, examiner_id, expertise, declared, correct, transcript] = fields[..] else {
            return Err(ManifestError::MalformedRow(line));
        };
        let (Some(expertise), Some(declared), Some(correct)) = (
            parse_expertise(expertise),
            parse_declared(declared),
            parse_correct(correct),
        ) else {
            return Err(ManifestError::MalformedRow(line));
        };
        if examiner_id.is_empty() || transcript.is_empty() || transcript.contains('|') {
            return Err(ManifestError::MalformedRow(line));
        }
        let record = truth
            .get(sample_id)
            .ok_or_else(|| ManifestError::UnknownSample(sample_id.to_string()))?;
        if declared.matches(record.class) != correct {
            return Err(ManifestError::InconsistentCorrectness {
                sample_id: sample_id.to_string(),
                examiner_id: examiner_id.to_string(),
            });
        }
        out.entry(sample_id.to_string())
            .or_default()
            .push(ExaminerAnnotation {
                examiner_id: examiner_id.to_string(),
                expertise,
                declared,
                correct,
                transcript: transcript.to_string(),
            });
    }
    Ok(out)
}

pub fn load_annotations(path: &Path, manifest: &Manifest) -> Result<AnnotationMap, ManifestError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ManifestError::Io(path.to_path_buf(), e.to_string()))?;
    parse_annotations(&text, manifest)
}
