//! Machine-expanded salience: a model rewrites human examiner feedback into
//! a structured, self-contained image description.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientError, CompletionBackend, RequestKey};
use crate::manifest::{ExaminerAnnotation, Expertise};
use crate::prompt::AssembledPrompt;

/// Request tag used for MESH generation requests.
pub const MESH_TAG: &str = "mesh";

pub const REQUEST_SECTIONS: [&str; 4] = [
    "Analysis Framework",
    "Examiner Feedback Evaluation",
    "Critical Synthesis",
    "Required Output Format",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MeshSection {
    ImageClassification,
    Confidence,
    KeyFeaturesObserved,
    SpoofingIndicators,
    ExaminerIntegration,
    TechnicalDetails,
    ComprehensiveIrisDescription,
}

impl MeshSection {
    pub const ALL: [MeshSection; 7] = [
        MeshSection::ImageClassification,
        MeshSection::Confidence,
        MeshSection::KeyFeaturesObserved,
        MeshSection::SpoofingIndicators,
        MeshSection::ExaminerIntegration,
        MeshSection::TechnicalDetails,
        MeshSection::ComprehensiveIrisDescription,
    ];

    pub fn title(self) -> &'static str {
        match self {
            MeshSection::ImageClassification => "Image Classification",
            MeshSection::Confidence => "Confidence",
            MeshSection::KeyFeaturesObserved => "Key Features Observed",
            MeshSection::SpoofingIndicators => "Spoofing Indicators",
            MeshSection::ExaminerIntegration => "Examiner Integration",
            MeshSection::TechnicalDetails => "Technical Details",
            MeshSection::ComprehensiveIrisDescription => "Comprehensive Iris Description",
        }
    }
}

impl fmt::Display for MeshSection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeshClassification {
    Normal,
    Attack,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("no examiner feedback")]
    EmptyFeedback,
    #[error("missing section `{0}`")]
    MissingSection(MeshSection),
    #[error("bad confidence `{0}`")]
    BadConfidence(String),
    #[error("cannot read classification from `{0}`")]
    BadClassification(String),
    #[error("no valid description after {max_attempts} attempts: {last_error}")]
    AttemptsExhausted { max_attempts: u32, last_error: String },
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// A validated seven-section document. The section texts are authoritative;
/// classification and confidence are read from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshDescription {
    pub classification: MeshClassification,
    /// Likelihood of an attack, in [0, 1].
    pub confidence: f64,
    pub sections: BTreeMap<MeshSection, String>,
}

impl MeshDescription {
    pub fn from_sections(sections: BTreeMap<MeshSection, String>) -> Result<Self, MeshError> {
        for s in MeshSection::ALL {
            match sections.get(&s) {
                Some(t) if !t.trim().is_empty() => {}
                _ => return Err(MeshError::MissingSection(s)),
            }
        }
        let classification = parse_classification(&sections[&MeshSection::ImageClassification])?;
        let confidence = parse_mesh_confidence(&sections[&MeshSection::Confidence])?;
        Ok(MeshDescription {
            classification,
            confidence,
            sections,
        })
    }

    pub fn section(&self, s: MeshSection) -> &str {
        &self.sections[&s]
    }

    /// `Title: text` blocks in canonical order.
    pub fn serialize(&self) -> String {
        MeshSection::ALL
            .iter()
            .map(|s| format!("{}: {}", s.title(), self.sections[s]))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn parse_classification(text: &str) -> Result<MeshClassification, MeshError> {
    const ATTACK: [&str; 5] = ["attack", "abnormal", "spoof", "synthetic", "unhealthy"];
    const NORMAL: [&str; 4] = ["normal", "bona fide", "live", "healthy"];
    let lower = text.to_lowercase();
    let first = |words: &[&str]| words.iter().filter_map(|w| lower.find(w)).min();
    match (first(&ATTACK), first(&NORMAL)) {
        (Some(a), Some(n)) if a <= n => Ok(MeshClassification::Attack),
        (Some(_), None) => Ok(MeshClassification::Attack),
        (_, Some(_)) => Ok(MeshClassification::Normal),
        (None, None) => Err(MeshError::BadClassification(text.to_string())),
    }
}

fn parse_mesh_confidence(text: &str) -> Result<f64, MeshError> {
    let start = text
        .char_indices()
        .find(|(i, c)| c.is_ascii_digit() || (*c == '.' && text[i + 1..].starts_with(|d: char| d.is_ascii_digit())))
        .map(|(i, _)| i)
        .ok_or_else(|| MeshError::BadConfidence(text.trim().to_string()))?;
    let token: String = text[start..]
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == '.')
        .collect();
    let token = token.trim_end_matches('.');
    match token.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(MeshError::BadConfidence(token.to_string())),
    }
}

/// Recognizes a section header line, tolerating list markers and markdown
/// emphasis (`**Confidence:**`, `### Confidence:`, `2. Confidence:`).
/// Returns the section and the text after the colon.
fn match_header(line: &str) -> Option<(MeshSection, &str)> {
    let mut t = line.trim_start_matches(|c: char| c.is_whitespace() || "#*_->`".contains(c));
    let digits = t.len() - t.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 && t[digits..].starts_with(['.', ')']) {
        t = t[digits + 1..].trim_start_matches(|c: char| c.is_whitespace() || "*_".contains(c));
    }
    for s in MeshSection::ALL {
        let title = s.title();
        let Some(head) = t.get(..title.len()) else { continue };
        if !head.eq_ignore_ascii_case(title) {
            continue;
        }
        let rest = t[title.len()..].trim_start_matches(['*', '_', ' ']);
        if let Some(after) = rest.strip_prefix(':') {
            return Some((s, after.trim_start_matches(['*', '_']).trim()));
        }
    }
    None
}

/// Parses a model reply into a [`MeshDescription`]. Text outside the seven
/// sections is ignored; the first occurrence of a repeated header wins.
pub fn parse_mesh_response(raw: &str) -> Result<MeshDescription, MeshError> {
    let mut sections: BTreeMap<MeshSection, String> = BTreeMap::new();
    let mut current: Option<(MeshSection, Vec<&str>)> = None;
    let flush = |cur: Option<(MeshSection, Vec<&str>)>, sections: &mut BTreeMap<MeshSection, String>| {
        if let Some((s, lines)) = cur {
            sections.entry(s).or_insert_with(|| lines.join("\n").trim().to_string());
        }
    };
    for line in raw.lines() {
        if let Some((s, rest)) = match_header(line) {
            flush(current.take(), &mut sections);
            current = Some((s, vec![rest]));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        }
    }
    flush(current.take(), &mut sections);
    MeshDescription::from_sections(sections)
}

/// One line per annotation, experts first, each group by examiner id.
pub fn format_examiner_feedback(annotations: &[ExaminerAnnotation]) -> Result<String, MeshError> {
    if annotations.is_empty() {
        return Err(MeshError::EmptyFeedback);
    }
    let mut sorted: Vec<&ExaminerAnnotation> = annotations.iter().collect();
    sorted.sort_by(|a, b| {
        (a.expertise != Expertise::Expert, &a.examiner_id).cmp(&(b.expertise != Expertise::Expert, &b.examiner_id))
    });
    Ok(sorted
        .iter()
        .map(|a| {
            format!(
                "{}, {}, {}, {}",
                a.examiner_id,
                a.expertise.label(),
                if a.correct { "correct" } else { "incorrect" },
                a.transcript
            )
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

const MESH_PREAMBLE: &str = "You will analyze the attached iris image for presentation attack \
detection and produce a complete description of it, informed by feedback from human examiners \
who classified the same image as normal or abnormal.";

const MESH_ANALYSIS: &str = "Begin with your own assessment of the image. Examine the iris \
texture, specular reflections, printing or display artifacts, lens edges, lighting and focus, \
the pupil and limbus boundaries, the eyelids and eyelashes, and any other spoofing indicators. \
Diseased and post-mortem eyes are attacks even though they are real tissue.";

const MESH_FEEDBACK: &str = "Examiner feedback follows, one examiner per line, formatted as: \
examiner ID, expertise status (expert or non-expert), whether that examiner's classification \
was correct or incorrect, and the examiner's verbal description.";

const MESH_SYNTHESIS: &str = "Check every examiner observation against the image instead of \
accepting it as stated. Give expert observations more weight, but keep non-expert observations \
that you can confirm. Trust examiners whose classification was correct more than those whose \
classification was incorrect. Where observations conflict, prefer the ones you can verify in \
the image.";

const MESH_OUTPUT: &str = "Reply with exactly these seven sections, each starting on its own \
line with the section name followed by a colon:\n\
Image Classification: normal or attack\n\
Confidence: a single float number from 0 to 1, with 0 being real/healthy and 1 being \
synthetic/unhealthy\n\
Key Features Observed: the features that drive the decision\n\
Spoofing Indicators: any signs of an attack, or none\n\
Examiner Integration: which examiner observations you confirmed or rejected, and why\n\
Technical Details: imaging conditions and quality\n\
Comprehensive Iris Description: a thorough, self-contained description of the whole image \
that can be understood without seeing it";

/// Prompt asking a model to turn examiner feedback into a MESH document.
pub fn build_mesh_request(image_ref: &Path, feedback: &str) -> Result<AssembledPrompt, MeshError> {
    if feedback.trim().is_empty() {
        return Err(MeshError::EmptyFeedback);
    }
    let bodies = [
        MESH_ANALYSIS.to_string(),
        format!("{MESH_FEEDBACK}\n\n<examiner_feedback>\n{feedback}\n</examiner_feedback>"),
        MESH_SYNTHESIS.to_string(),
        MESH_OUTPUT.to_string(),
    ];
    let mut text = String::from(MESH_PREAMBLE);
    for (title, body) in REQUEST_SECTIONS.iter().zip(bodies) {
        text.push_str(&format!("\n\n{title}:\n{body}"));
    }
    Ok(AssembledPrompt::new(None, text, image_ref.to_path_buf()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshOutcome {
    pub description: MeshDescription,
    pub attempts: u32,
    pub raw_text: String,
}

/// Queries `client` until a reply parses as a complete MESH document.
/// Uses every supplied annotation.
pub async fn generate_mesh<B: CompletionBackend>(
    client: &B,
    key: &RequestKey,
    image_ref: &Path,
    annotations: &[ExaminerAnnotation],
    max_attempts: u32,
) -> Result<MeshOutcome, MeshError> {
    let feedback = format_examiner_feedback(annotations)?;
    let prompt = build_mesh_request(image_ref, &feedback)?;
    let mut last_error = String::from("no attempt made");
    for attempt in 1..=max_attempts {
        let reply = match client.complete(key, &prompt).await {
            Ok(text) => text,
            Err(e) if e.is_retryable() => {
                last_error = e.to_string();
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        match parse_mesh_response(&reply) {
            Ok(description) => {
                return Ok(MeshOutcome {
                    description,
                    attempts: attempt,
                    raw_text: reply,
                })
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    Err(MeshError::AttemptsExhausted {
        max_attempts,
        last_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectedMesh {
    /// Only the comprehensive description section.
    #[default]
    ComprehensiveDescription,
    /// All seven sections.
    FullDocument,
}

/// Single-line corpus text for a MESH document (newlines folded to spaces,
/// `|` replaced since it delimits corpus fields).
pub fn corpus_text(desc: &MeshDescription, mode: InjectedMesh) -> String {
    let text = match mode {
        InjectedMesh::ComprehensiveDescription => desc.section(MeshSection::ComprehensiveIrisDescription).to_string(),
        InjectedMesh::FullDocument => desc.serialize(),
    };
    text.split_whitespace().collect::<Vec<_>>().join(" ").replace('|', "/")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::Declared;
    use proptest::prelude::*;
    use std::collections::VecDeque;
    use std::sync::Mutex;

    fn ann(id: &str, expertise: Expertise, correct: bool, text: &str) -> ExaminerAnnotation {
        ExaminerAnnotation {
            examiner_id: id.to_string(),
            expertise,
            declared: Declared::Normal,
            correct,
            transcript: text.to_string(),
        }
    }

    pub(crate) const VALID_REPLY: &str = "\
**Image Classification:** Attack (synthetic)
**Confidence:** 0.85
**Key Features Observed:** irregular eyelashes near the corner
one Purkinje reflection
**Spoofing Indicators:** GAN-like texture repetition
**Examiner Integration:** agreed with expert E01
**Technical Details:** NIR, sharp focus
**Comprehensive Iris Description:** A near-infrared image of a left eye with a dark pupil.
The iris texture repeats in a way typical of generated images.";

    #[test]
    fn feedback_single_line() {
        let out = format_examiner_feedback(&[ann("E01", Expertise::Expert, true, "Purkinje reflections present")]).unwrap();
        assert_eq!(out, "E01, expert, correct, Purkinje reflections present");
    }

    #[test]
    fn feedback_experts_first() {
        let out = format_examiner_feedback(&[
            ann("N02", Expertise::NonExpert, false, "b"),
            ann("E09", Expertise::Expert, true, "a"),
            ann("A01", Expertise::NonExpert, true, "c"),
            ann("E01", Expertise::Expert, false, "d"),
        ])
        .unwrap();
        let ids: Vec<&str> = out.lines().map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(ids, ["E01", "E09", "A01", "N02"]);
        assert!(out.contains("N02, non-expert, incorrect, b"));
        assert_eq!(format_examiner_feedback(&[]), Err(MeshError::EmptyFeedback));
    }

    #[test]
    fn request_sections_and_feedback() {
        let fb = "E01, expert, correct, spikes around the pupil";
        let p = build_mesh_request(Path::new("a.png"), fb).unwrap();
        let pos: Vec<usize> = REQUEST_SECTIONS
            .iter()
            .map(|s| p.text.find(&format!("{s}:")).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(p.text.contains(fb));
        for s in MeshSection::ALL {
            assert!(p.text.contains(&format!("{}:", s.title())));
        }
        assert!(p.text.contains(crate::prompt::FLOAT_INSTRUCTION));
    }

    #[test]
    fn parses_decorated_reply() {
        let d = parse_mesh_response(VALID_REPLY).unwrap();
        assert_eq!(d.sections.len(), 7);
        assert_eq!(d.classification, MeshClassification::Attack);
        assert_eq!(d.confidence, 0.85);
        assert!(d
            .section(MeshSection::ComprehensiveIrisDescription)
            .ends_with("typical of generated images."));
        assert_eq!(
            d.section(MeshSection::KeyFeaturesObserved),
            "irregular eyelashes near the corner\none Purkinje reflection"
        );
    }

    #[test]
    fn header_variants() {
        let reply = "## image classification: Normal\n3. Confidence : .2\n- key features observed: x\n\
                     spoofing indicators:** none\n__Examiner Integration__: y\nTECHNICAL DETAILS: z\n\
                     Comprehensive Iris Description:\n  whole eye";
        let d = parse_mesh_response(reply).unwrap();
        assert_eq!(d.classification, MeshClassification::Normal);
        assert_eq!(d.confidence, 0.2);
        assert_eq!(d.section(MeshSection::ComprehensiveIrisDescription), "whole eye");
    }

    #[test]
    fn parse_failures() {
        let missing = VALID_REPLY.split("**Comprehensive").next().unwrap();
        assert_eq!(
            parse_mesh_response(missing),
            Err(MeshError::MissingSection(MeshSection::ComprehensiveIrisDescription))
        );
        let bad = VALID_REPLY.replace("0.85", "1.4");
        assert_eq!(parse_mesh_response(&bad), Err(MeshError::BadConfidence("1.4".into())));
        let abnormal = VALID_REPLY.replace("Attack (synthetic)", "Abnormal");
        assert_eq!(parse_mesh_response(&abnormal).unwrap().classification, MeshClassification::Attack);
    }

    struct Replies(Mutex<VecDeque<String>>);

    impl CompletionBackend for Replies {
        async fn complete(&self, _: &RequestKey, _: &AssembledPrompt) -> Result<String, ClientError> {
            Ok(self.0.lock().unwrap().pop_front().unwrap_or_else(|| "garbage".into()))
        }
    }

    fn run<F: std::future::Future>(f: F) -> F::Output {
        tokio::runtime::Builder::new_current_thread().build().unwrap().block_on(f)
    }

    #[test]
    fn generation_retries_until_valid() {
        let anns = [ann("E01", Expertise::Expert, true, "ok")];
        let key = RequestKey::new("s01", Some(MESH_TAG.into()));
        let first = Replies(Mutex::new(VecDeque::from([VALID_REPLY.to_string()])));
        let out = run(generate_mesh(&first, &key, Path::new("a.png"), &anns, 5)).unwrap();
        assert_eq!(out.attempts, 1);

        let third = Replies(Mutex::new(VecDeque::from(["nope".to_string(), "Confidence: 0.5".to_string(), VALID_REPLY.to_string()])));
        let out = run(generate_mesh(&third, &key, Path::new("a.png"), &anns, 5)).unwrap();
        assert_eq!(out.attempts, 3);

        let never = Replies(Mutex::new(VecDeque::new()));
        let err = run(generate_mesh(&never, &key, Path::new("a.png"), &anns, 3)).unwrap_err();
        assert!(matches!(err, MeshError::AttemptsExhausted { max_attempts: 3, .. }));
    }

    #[test]
    fn corpus_text_is_single_line() {
        let d = parse_mesh_response(VALID_REPLY).unwrap();
        let t = corpus_text(&d, InjectedMesh::ComprehensiveDescription);
        assert!(!t.contains('\n'));
        assert!(t.starts_with("A near-infrared image"));
        let full = corpus_text(&d, InjectedMesh::FullDocument);
        assert!(full.starts_with("Image Classification: Attack"));
    }

    fn body() -> impl Strategy<Value = String> {
        proptest::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,6}", 1..4).prop_map(|lines| lines.join("\n"))
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(
            attack in any::<bool>(),
            conf in 0.0f64..=1.0,
            texts in proptest::collection::vec(body(), 5),
        ) {
            let mut sections = BTreeMap::new();
            sections.insert(MeshSection::ImageClassification, if attack { "attack".to_string() } else { "normal".to_string() });
            sections.insert(MeshSection::Confidence, format!("{conf}"));
            for (s, t) in MeshSection::ALL[2..].iter().zip(texts) {
                sections.insert(*s, t);
            }
            let d = MeshDescription::from_sections(sections).unwrap();
            prop_assert_eq!(parse_mesh_response(&d.serialize()).unwrap(), d);
        }
    }
}
