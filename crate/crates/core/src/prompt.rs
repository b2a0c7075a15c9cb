//! Prompt rendering for the eight base × salience configurations.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::PresentationClass;

/// Substring every assembled prompt carries so that the model returns a
/// parseable confidence.
pub const FLOAT_INSTRUCTION: &str = "float number from 0 to 1";

const SHORT_PROMPT: &str = "Is this a real and healthy iris or synthetic/unhealthy iris? \
Return a single float number from 0 to 1 with 0 being real/healthy and 1 being \
synthetic/unhealthy and no other output.";

pub const LONG_SECTIONS: [&str; 3] = [
    "Role and Task",
    "Analysis Framework and Classification Context",
    "Required Output Format and Instructions",
];

const ROLE_AND_TASK: &str = "You are an expert biometrics examiner performing iris presentation \
attack detection. You will be shown a single iris image. Decide whether it shows a real and \
healthy iris (a bona fide presentation) or an attack or unhealthy sample. Attack samples include \
artificial eyes such as glass prostheses, iris printouts, eyes wearing textured contact lenses, \
printouts of eyes wearing textured contact lenses, diseased eyes, post-mortem eyes, and \
synthetically generated iris images.";

const ANALYSIS_FRAMEWORK: &str = "Examine the image systematically before deciding. Consider the \
iris texture and its fine radial structure, specular reflections and whether their number and \
placement are physically plausible, printing dots, lens edges or other artifacts, lighting and \
focus, the pupil and limbus boundaries, the eyelids and eyelashes, and any other anomalous \
indicators. Diseased and post-mortem eyes are to be classified as attacks even though they are \
real tissue.";

const OUTPUT_FORMAT: &str = "Answer using exactly these three lines:\n\
Classification: normal or attack\n\
Confidence: a single float number from 0 to 1, with 0 being real/healthy and 1 being \
synthetic/unhealthy\n\
Explanation: a short explanation of the decision";

/// Separator between a base prompt and its appended exemplars.
pub const SALIENCE_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptBase {
    Short,
    Long,
}

impl PromptBase {
    pub const ALL: [PromptBase; 2] = [PromptBase::Short, PromptBase::Long];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptBase::Short => "short",
            PromptBase::Long => "long",
        }
    }

    pub fn render(self) -> String {
        match self {
            PromptBase::Short => render_short(),
            PromptBase::Long => render_long(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SalienceKind {
    None,
    Human,
    LlamaMesh,
    GeminiMesh,
}

impl SalienceKind {
    pub const ALL: [SalienceKind; 4] = [
        SalienceKind::None,
        SalienceKind::Human,
        SalienceKind::LlamaMesh,
        SalienceKind::GeminiMesh,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SalienceKind::None => "none",
            SalienceKind::Human => "human",
            SalienceKind::LlamaMesh => "llama_mesh",
            SalienceKind::GeminiMesh => "gemini_mesh",
        }
    }
}

impl FromStr for SalienceKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SalienceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PromptError::UnknownVariant(s.to_string()))
    }
}

/// One row of the prompt configuration table. Constructible only from the
/// two enums, so exactly eight values exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PromptVariant {
    pub base: PromptBase,
    pub salience: SalienceKind,
}

impl PromptVariant {
    pub const fn new(base: PromptBase, salience: SalienceKind) -> Self {
        PromptVariant { base, salience }
    }

    /// Position in [`enumerate_variants`] order.
    pub fn index(self) -> usize {
        self.base as usize * 4 + self.salience as usize
    }
}

/// Labels are `short`, `short+human`, `long+gemini_mesh`, ...
impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.salience {
            SalienceKind::None => f.write_str(self.base.as_str()),
            s => write!(f, "{}+{}", self.base.as_str(), s.as_str()),
        }
    }
}

impl FromStr for PromptVariant {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        enumerate_variants()
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| PromptError::UnknownVariant(s.to_string()))
    }
}

/// All eight configurations: short × {none, human, llama_mesh, gemini_mesh},
/// then long × the same.
pub fn enumerate_variants() -> Vec<PromptVariant> {
    PromptBase::ALL
        .into_iter()
        .flat_map(|b| SalienceKind::ALL.into_iter().map(move |s| PromptVariant::new(b, s)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("no salience entry for class `{0}`")]
    MissingSalience(PresentationClass),
    #[error("salience selector {index} out of range for class `{class}` ({len} entries)")]
    SelectorOutOfRange {
        class: PresentationClass,
        index: usize,
        len: usize,
    },
    #[error("salience injection requested with kind `none`")]
    NoneKind,
    #[error("no corpus configured for salience kind `{0}`")]
    MissingCorpus(&'static str),
    #[error("unknown prompt variant `{0}`")]
    UnknownVariant(String),
    #[error("line {0}: malformed salience record")]
    MalformedRow(usize),
    #[error("{0}: {1}")]
    Io(PathBuf, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SalienceEntry {
    pub entry_id: String,
    pub text: String,
}

/// Salience texts per class plus the index of the entry to inject.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SalienceCorpus {
    pub entries: BTreeMap<PresentationClass, Vec<SalienceEntry>>,
    pub selector: BTreeMap<PresentationClass, usize>,
}

impl SalienceCorpus {
    pub fn push(&mut self, class: PresentationClass, entry_id: &str, text: &str) {
        self.entries.entry(class).or_default().push(SalienceEntry {
            entry_id: entry_id.to_string(),
            text: text.to_string(),
        });
    }

    pub fn with_selector(mut self, class: PresentationClass, index: usize) -> Self {
        self.selector.insert(class, index);
        self
    }

    /// The entry injected for `class`; defaults to the first one.
    pub fn selected(&self, class: PresentationClass) -> Result<&SalienceEntry, PromptError> {
        let list = self
            .entries
            .get(&class)
            .filter(|l| !l.is_empty())
            .ok_or(PromptError::MissingSalience(class))?;
        let index = self.selector.get(&class).copied().unwrap_or(0);
        list.get(index).ok_or(PromptError::SelectorOutOfRange {
            class,
            index,
            len: list.len(),
        })
    }

    /// Mean token estimate over every entry, `None` if the corpus is empty.
    pub fn mean_entry_tokens(&self) -> Option<f64> {
        let lens: Vec<usize> = self
            .entries
            .values()
            .flatten()
            .map(|e| estimate_tokens(&e.text))
            .collect();
        (!lens.is_empty()).then(|| lens.iter().sum::<usize>() as f64 / lens.len() as f64)
    }

    /// Parses `class | entry_id | text` lines. Blank and `#` lines are skipped.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut corpus = SalienceCorpus::default();
        for (idx, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.splitn(3, '|').map(str::trim).collect();
            let [class, entry_id, body] = fields[..] else {
                return Err(PromptError::MalformedRow(idx + 1));
            };
            let class = class
                .parse::<PresentationClass>()
                .map_err(|_| PromptError::MalformedRow(idx + 1))?;
            if entry_id.is_empty() || body.is_empty() || body.contains('|') {
                return Err(PromptError::MalformedRow(idx + 1));
            }
            corpus.push(class, entry_id, body);
        }
        Ok(corpus)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Io(path.to_path_buf(), e.to_string()))?;
        Self::parse(&text)
    }

    /// Serializes back to the line format, classes in canonical order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (class, list) in &self.entries {
            for e in list {
                out.push_str(&format!("{} | {} | {}\n", class, e.entry_id, e.text));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    /// `None` for auxiliary requests such as MESH generation.
    pub variant: Option<PromptVariant>,
    pub text: String,
    pub image_ref: PathBuf,
    pub token_estimate: usize,
}

impl AssembledPrompt {
    pub fn new(variant: Option<PromptVariant>, text: String, image_ref: PathBuf) -> Self {
        let token_estimate = estimate_tokens(&text);
        AssembledPrompt {
            variant,
            text,
            image_ref,
            token_estimate,
        }
    }
}

pub fn render_short() -> String {
    SHORT_PROMPT.to_string()
}

pub fn render_long() -> String {
    let bodies = [ROLE_AND_TASK, ANALYSIS_FRAMEWORK, OUTPUT_FORMAT];
    LONG_SECTIONS
        .iter()
        .zip(bodies)
        .map(|(title, body)| format!("{title}:\n{body}"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Appends one `[Exemplar: <class>] <text>` block per requested class, in
/// canonical class order, after a blank line. `base_text` is left intact as
/// a prefix of the result.
pub fn inject_salience(
    base_text: &str,
    corpus: &SalienceCorpus,
    kind: SalienceKind,
    classes: &[PresentationClass],
) -> Result<String, PromptError> {
    if kind == SalienceKind::None {
        return Err(PromptError::NoneKind);
    }
    let mut ordered = classes.to_vec();
    ordered.sort();
    ordered.dedup();
    let blocks = ordered
        .into_iter()
        .map(|c| corpus.selected(c).map(|e| format!("[Exemplar: {c}] {}", e.text)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = String::with_capacity(base_text.len() + blocks.iter().map(String::len).sum::<usize>() + 16);
    out.push_str(base_text);
    out.push_str(SALIENCE_SEPARATOR);
    out.push_str(&blocks.join("\n"));
    Ok(out)
}

/// Corpora keyed by salience kind, plus the classes that receive exemplars.
#[derive(Debug, Clone)]
pub struct SalienceLibrary {
    pub corpora: BTreeMap<SalienceKind, SalienceCorpus>,
    pub classes: Vec<PresentationClass>,
}

impl Default for SalienceLibrary {
    fn default() -> Self {
        SalienceLibrary {
            corpora: BTreeMap::new(),
            classes: PresentationClass::ALL.to_vec(),
        }
    }
}

impl SalienceLibrary {
    /// Renders the full prompt text for a variant.
    pub fn render(&self, variant: PromptVariant) -> Result<String, PromptError> {
        let base = variant.base.render();
        if variant.salience == SalienceKind::None {
            return Ok(base);
        }
        let corpus = self
            .corpora
            .get(&variant.salience)
            .ok_or(PromptError::MissingCorpus(variant.salience.as_str()))?;
        inject_salience(&base, corpus, variant.salience, &self.classes)
    }

    pub fn assemble(
        &self,
        variant: PromptVariant,
        image_ref: &Path,
    ) -> Result<AssembledPrompt, PromptError> {
        Ok(AssembledPrompt::new(
            Some(variant),
            self.render(variant)?,
            image_ref.to_path_buf(),
        ))
    }
}

/// `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetStatus {
    Ok,
    OverBudget { excess: usize },
}

/// The boundary is inclusive: a prompt filling the context exactly fits.
pub fn budget_check(prompt: &AssembledPrompt, context_limit: usize, image_allowance: usize) -> BudgetStatus {
    let needed = prompt.token_estimate + image_allowance;
    if needed <= context_limit {
        BudgetStatus::Ok
    } else {
        BudgetStatus::OverBudget {
            excess: needed - context_limit,
        }
    }
}
