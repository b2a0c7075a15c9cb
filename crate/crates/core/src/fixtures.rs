//! Synthetic datasets, reference result rows and scripted mock responses
//! used by tests, demos and the `--synthetic` CLI paths.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::fusion::EmbeddingRecord;
use crate::manifest::{Declared, ExaminerAnnotation, Expertise, Manifest, PresentationClass, SampleRecord};
use crate::mesh::MeshSection;
use crate::mock::{AttemptSelector, MockScript, ScriptAction};
use crate::prompt::{PromptBase, PromptVariant, SalienceCorpus, SalienceKind};
use crate::scoring::{Decision, Verdict};
use crate::seed::sub_rng;

/// Samples per class in the reference dataset (224 images in total).
pub fn class_size(class: PresentationClass) -> usize {
    match class {
        PresentationClass::Artificial => 14,
        _ => 30,
    }
}

pub fn reference_class_sizes() -> [usize; 8] {
    PresentationClass::ALL.map(class_size)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    /// `human`, `gemini` or `llama`.
    pub model: &'static str,
    pub variant: Option<PromptVariant>,
    /// Per-class error rates in canonical class order.
    pub rates: [f64; 8],
    /// Published aggregate MSE (3 decimals).
    pub mse: f64,
}

impl ReferenceRow {
    pub fn label(&self) -> String {
        match self.variant {
            Some(v) => format!("{} {}", self.model, v),
            None => self.model.to_string(),
        }
    }
}

const fn v(base: PromptBase, salience: SalienceKind) -> Option<PromptVariant> {
    Some(PromptVariant::new(base, salience))
}

use PromptBase::{Long, Short};
use SalienceKind::{GeminiMesh, Human, LlamaMesh, None as NoSalience};

/// Published per-class error rates and MSE values for human examiners and
/// both models under all eight prompt variants.
pub const REFERENCE_ROWS: [ReferenceRow; 17] = [
    ReferenceRow { model: "human", variant: None, rates: [0.437, 0.349, 0.057, 0.020, 0.162, 0.298, 0.118, 0.227], mse: 0.062 },
    ReferenceRow { model: "gemini", variant: v(Short, NoSalience), rates: [0.000, 0.769, 0.700, 0.833, 0.833, 0.267, 0.833, 0.300], mse: 0.416 },
    ReferenceRow { model: "gemini", variant: v(Short, Human), rates: [0.033, 0.077, 0.567, 0.700, 0.400, 0.167, 0.633, 0.233], mse: 0.183 },
    ReferenceRow { model: "gemini", variant: v(Short, LlamaMesh), rates: [0.033, 0.462, 0.667, 0.700, 0.700, 0.167, 0.667, 0.267], mse: 0.273 },
    ReferenceRow { model: "gemini", variant: v(Short, GeminiMesh), rates: [0.200, 0.077, 0.333, 0.767, 0.367, 0.133, 0.067, 0.200], mse: 0.118 },
    ReferenceRow { model: "gemini", variant: v(Long, NoSalience), rates: [0.167, 0.083, 0.222, 0.517, 0.233, 0.074, 0.241, 0.172], mse: 0.062 },
    ReferenceRow { model: "gemini", variant: v(Long, Human), rates: [0.300, 0.000, 0.233, 0.433, 0.133, 0.133, 0.167, 0.167], mse: 0.053 },
    ReferenceRow { model: "gemini", variant: v(Long, LlamaMesh), rates: [0.133, 0.077, 0.400, 0.533, 0.300, 0.167, 0.267, 0.200], mse: 0.087 },
    ReferenceRow { model: "gemini", variant: v(Long, GeminiMesh), rates: [0.367, 0.000, 0.233, 0.467, 0.300, 0.100, 0.300, 0.167], mse: 0.078 },
    ReferenceRow { model: "llama", variant: v(Short, NoSalience), rates: [0.167, 0.692, 0.759, 0.800, 0.533, 0.467, 0.724, 0.793], mse: 0.422 },
    ReferenceRow { model: "llama", variant: v(Short, Human), rates: [0.233, 0.385, 0.633, 0.433, 0.400, 0.433, 0.400, 0.467], mse: 0.190 },
    ReferenceRow { model: "llama", variant: v(Short, LlamaMesh), rates: [0.400, 0.583, 0.643, 0.533, 0.433, 0.433, 0.400, 0.633], mse: 0.267 },
    ReferenceRow { model: "llama", variant: v(Short, GeminiMesh), rates: [1.000, 0.000, 0.000, 0.000, 0.000, 0.000, 0.000, 0.000], mse: 0.125 },
    ReferenceRow { model: "llama", variant: v(Long, NoSalience), rates: [0.048, 1.000, 0.688, 0.667, 0.412, 0.381, 0.529, 0.880], mse: 0.411 },
    ReferenceRow { model: "llama", variant: v(Long, Human), rates: [0.640, 0.286, 0.115, 0.208, 0.048, 0.000, 0.050, 0.200], mse: 0.074 },
    ReferenceRow { model: "llama", variant: v(Long, LlamaMesh), rates: [0.500, 0.429, 0.263, 0.364, 0.105, 0.053, 0.143, 0.333], mse: 0.098 },
    ReferenceRow { model: "llama", variant: v(Long, GeminiMesh), rates: [1.000, 0.000, 0.000, 0.000, 0.000, 0.000, 0.000, 0.000], mse: 0.125 },
];

/// CNN baseline: mean per-class rates over cross-validation folds and the
/// published MSE. The MSE is a mean over folds, so it cannot be recovered
/// from the mean rates.
pub const CNN_RATES: [f64; 8] = [0.000, 0.236, 0.990, 0.227, 0.900, 0.647, 0.377, 0.460];
pub const CNN_MSE: f64 = 0.345;
pub const CNN_MSE_SD: f64 = 0.041;

pub fn reference_rows_for(model: &str) -> Vec<ReferenceRow> {
    REFERENCE_ROWS.iter().filter(|r| r.model == model).copied().collect()
}

/// `(errors, denominator)` with `denominator <= max_den` whose ratio is
/// closest to `rate`; among equally close fractions the largest
/// denominator wins.
pub fn closest_fraction(rate: f64, max_den: usize) -> (usize, usize) {
    let mut best = (0, 1, f64::INFINITY);
    for d in 1..=max_den {
        let a = (rate * d as f64).round().clamp(0.0, d as f64) as usize;
        let err = (a as f64 / d as f64 - rate).abs();
        if err <= best.2 + 1e-12 {
            best = (a, d, err.min(best.2));
        }
    }
    (best.0, best.1)
}

/// Per-class `(errors, answered)` counts consistent with a rounded rate
/// row, given at most `class_size` samples per class.
pub fn counts_from_rates(rates: [f64; 8]) -> [(usize, usize); 8] {
    let mut out = [(0, 0); 8];
    for (i, class) in PresentationClass::ALL.into_iter().enumerate() {
        out[i] = closest_fraction(rates[i], class_size(class));
    }
    out
}

/// Per-class counts when every sample is answered: `round(rate * size)`.
pub fn counts_full(rates: [f64; 8]) -> [(usize, usize); 8] {
    let mut out = [(0, 0); 8];
    for (i, class) in PresentationClass::ALL.into_iter().enumerate() {
        let n = class_size(class);
        out[i] = ((rates[i] * n as f64).round() as usize, n);
    }
    out
}

pub fn sample_id(class: PresentationClass, i: usize) -> String {
    format!("{}_{:03}", class, i + 1)
}

/// Manifest with `sizes[i]` samples of class `i`, images under `images/`.
pub fn synthetic_manifest(sizes: [usize; 8]) -> Manifest {
    let mut samples = Vec::new();
    for (class, &n) in PresentationClass::ALL.iter().zip(&sizes) {
        for i in 0..n {
            let id = sample_id(*class, i);
            samples.push(SampleRecord {
                image_ref: PathBuf::from(format!("images/{id}.png")),
                sample_id: id,
                class: *class,
                source_tag: "synthetic".to_string(),
            });
        }
    }
    Manifest::new(samples).expect("generated ids are unique")
}

pub fn reference_manifest() -> Manifest {
    synthetic_manifest(reference_class_sizes())
}

/// A valid 1×1 PNG.
pub const TINY_PNG: [u8; 67] = [
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52,
    0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1f, 0x15, 0xc4,
    0x89, 0x00, 0x00, 0x00, 0x0a, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x00, 0x01, 0x00, 0x00,
    0x05, 0x00, 0x01, 0x0d, 0x0a, 0x2d, 0xb4, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae,
    0x42, 0x60, 0x82,
];

/// Writes a placeholder image for every sample, relative to `root`.
pub fn write_placeholder_images(root: &Path, manifest: &Manifest) -> std::io::Result<()> {
    for s in &manifest.samples {
        let path = root.join(&s.image_ref);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, TINY_PNG)?;
    }
    Ok(())
}

/// Model reply text carrying `confidence`.
pub fn reply_text(confidence: f64) -> String {
    let label = if confidence >= 0.5 { "attack" } else { "bona fide" };
    format!("Classification: {label}\nConfidence: {confidence:.2}\nExplanation: scripted reply.")
}

pub const UNANSWERABLE_REPLY: &str = "I cannot judge this image.";

/// Mock key for a variant-tagged request.
pub fn script_key(variant: PromptVariant, sample_id: &str) -> String {
    format!("{variant}/{sample_id}")
}

/// Scripted confidences for one variant, keyed by sample id. Within each
/// class (samples ordered by id) the first `answered` samples get replies,
/// the first `errors` of those on the wrong side of `threshold`. Samples
/// past `answered` never yield a confidence.
pub fn scripted_confidences(
    manifest: &Manifest,
    variant: PromptVariant,
    counts: [(usize, usize); 8],
    threshold: f64,
    seed: u64,
) -> BTreeMap<String, Option<f64>> {
    let mut by_class: BTreeMap<PresentationClass, Vec<&SampleRecord>> = BTreeMap::new();
    for s in &manifest.samples {
        by_class.entry(s.class).or_default().push(s);
    }
    let mut out = BTreeMap::new();
    for (class, mut list) in by_class {
        list.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let (errors, answered) = counts[class.index()];
        let mut rng = sub_rng(seed, &format!("script/{variant}/{class}"));
        for (i, s) in list.iter().enumerate() {
            let conf = if i < answered {
                let wrong = i < errors;
                let says_attack = class.is_attack() != wrong;
                // two decimals, strictly on the intended side of the threshold
                let c = if says_attack {
                    let lo = (threshold * 100.0).ceil() as u32;
                    rng.random_range(lo.min(100)..=100)
                } else {
                    let hi = ((threshold * 100.0).ceil() as u32).saturating_sub(1);
                    rng.random_range(0..=hi)
                };
                Some(c as f64 / 100.0)
            } else {
                None
            };
            out.insert(s.sample_id.clone(), conf);
        }
    }
    out
}

/// Mock script for the given variants and per-variant counts.
pub fn mock_script_for(
    manifest: &Manifest,
    plan: &[(PromptVariant, [(usize, usize); 8])],
    threshold: f64,
    seed: u64,
) -> MockScript {
    let mut script = MockScript::default();
    for (variant, counts) in plan {
        for (id, conf) in scripted_confidences(manifest, *variant, *counts, threshold, seed) {
            let action = match conf {
                Some(c) => ScriptAction::Text(reply_text(c)),
                None => ScriptAction::Text(UNANSWERABLE_REPLY.to_string()),
            };
            script.push(&script_key(*variant, &id), AttemptSelector::Any, action);
        }
    }
    script
}

/// Plan reproducing one model's reference rows with reconstructed counts.
pub fn reference_plan(model: &str) -> Vec<(PromptVariant, [(usize, usize); 8])> {
    reference_rows_for(model)
        .into_iter()
        .filter_map(|r| r.variant.map(|v| (v, counts_from_rates(r.rates))))
        .collect()
}

/// Plan where every sample of the reference manifest is answered, with
/// error counts taken from one model's reference rows.
pub fn full_plan(model: &str) -> Vec<(PromptVariant, [(usize, usize); 8])> {
    reference_rows_for(model)
        .into_iter()
        .filter_map(|r| r.variant.map(|v| (v, counts_full(r.rates))))
        .collect()
}

/// Verdicts where each sample is independently wrong with its class rate.
pub fn bernoulli_verdicts(rates: [f64; 8], sizes: [usize; 8], threshold: f64, seed: u64) -> Vec<Verdict> {
    let mut rng = sub_rng(seed, "bernoulli");
    let mut out = Vec::new();
    for (i, class) in PresentationClass::ALL.into_iter().enumerate() {
        for k in 0..sizes[i] {
            let wrong = rng.random_bool(rates[i]);
            let says_attack = class.is_attack() != wrong;
            let confidence = if says_attack { 0.9 } else { 0.1 };
            let decision = if says_attack { Decision::Attack } else { Decision::BonaFide };
            debug_assert_eq!(decision, crate::scoring::classify(confidence, threshold).unwrap());
            out.push(Verdict {
                sample_id: sample_id(class, k),
                class,
                confidence,
                decision,
            });
        }
    }
    out
}

const EXEMPLAR_NOTES: [&str; 8] = [
    "clear crypts and furrows, natural limbus, a single sharp specular highlight",
    "glassy uniform iris with painted radial lines and no depth",
    "printed dot pattern visible through a lens edge",
    "clouded cornea and irregular pupil shape from disease",
    "dull dry surface, hazy cornea and drooping eyelids",
    "flat paper texture, moire pattern and missing reflections",
    "repeating texture and smeared eyelashes typical of generated images",
    "regular printed texture on a contact lens with a visible lens rim",
];

/// One exemplar per class for the given salience kind.
pub fn fixture_corpus(kind: SalienceKind) -> SalienceCorpus {
    let mut corpus = SalienceCorpus::default();
    for class in PresentationClass::ALL {
        let note = EXEMPLAR_NOTES[class.index()];
        let text = match kind {
            SalienceKind::Human => format!("I see {note}."),
            SalienceKind::LlamaMesh => format!("Llama description: {note}."),
            SalienceKind::GeminiMesh => format!("Gemini description: {note}."),
            SalienceKind::None => continue,
        };
        corpus.push(class, &format!("{}_ex1", class), &text);
    }
    corpus
}

/// Two annotations (one expert, one non-expert) per sample.
pub fn synthetic_annotations(manifest: &Manifest, seed: u64) -> String {
    let mut rng = sub_rng(seed, "annotations");
    let mut out = String::new();
    for s in &manifest.samples {
        for (examiner, expertise) in [("E01", Expertise::Expert), ("N07", Expertise::NonExpert)] {
            let correct = rng.random_bool(0.8);
            let declared = if s.class.is_bona_fide() == correct { Declared::Normal } else { Declared::Abnormal };
            let note = EXEMPLAR_NOTES[s.class.index()];
            let ann = ExaminerAnnotation {
                examiner_id: examiner.to_string(),
                expertise,
                declared,
                correct,
                transcript: format!("{note}, so {}", if declared == Declared::Normal { "normal" } else { "abnormal" }),
            };
            out.push_str(&format!(
                "{} | {} | {} | {} | {} | {}\n",
                s.sample_id,
                ann.examiner_id,
                ann.expertise.label(),
                declared.as_str(),
                ann.correct,
                ann.transcript
            ));
        }
    }
    out
}

/// A well-formed seven-section MESH reply for a sample of `class`.
pub fn mesh_reply(class: PresentationClass) -> String {
    let (label, conf) = if class.is_attack() { ("attack", 0.9) } else { ("normal", 0.1) };
    let note = EXEMPLAR_NOTES[class.index()];
    MeshSection::ALL
        .iter()
        .map(|s| {
            let body = match s {
                MeshSection::ImageClassification => label.to_string(),
                MeshSection::Confidence => format!("{conf}"),
                MeshSection::ComprehensiveIrisDescription => {
                    format!("Near-infrared eye image showing {note}.")
                }
                _ => note.to_string(),
            };
            format!("**{}:** {}", s.title(), body)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Embeddings whose text part separates every class while the image part
/// only separates pairs of classes.
pub fn separability_fixture(n_per_class: usize, image_dim: usize, text_dim: usize, seed: u64) -> Vec<EmbeddingRecord> {
    let mut rng = sub_rng(seed, "separability");
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut centers = |count: usize, dim: usize, scale: f64| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..dim).map(|_| scale * unit.sample(&mut rng)).collect())
            .collect()
    };
    let image_centers = centers(4, image_dim, 1.5);
    let text_centers = centers(8, text_dim, 2.0);
    let mut out = Vec::new();
    for class in PresentationClass::ALL {
        for i in 0..n_per_class {
            let noisy = |c: &Vec<f64>, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                c.iter().map(|m| m + unit.sample(rng)).collect()
            };
            let image_vec = noisy(&image_centers[class.index() / 2], &mut rng);
            let text_vec = noisy(&text_centers[class.index()], &mut rng);
            out.push(EmbeddingRecord {
                sample_id: sample_id(class, i),
                class,
                image_vec,
                text_vec,
            });
        }
    }
    out
}
