//! Embedding fusion (two-layer MLP), PCA projection and silhouette scoring.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{concatenate, Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erf;
use thiserror::Error;

use crate::manifest::PresentationClass;
use crate::seed::sub_rng;

pub const DEFAULT_INPUT_DIM: usize = 2048;
pub const DEFAULT_HIDDEN_DIM: usize = 512;
pub const DEFAULT_OUTPUT_DIM: usize = 512;
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("all input vectors are identical")]
    DegenerateInput,
    #[error("need at least two vectors of equal dimension")]
    TooFewVectors,
    #[error("k must be between 1 and {max}, got {k}")]
    InvalidK { k: usize, max: usize },
    #[error("silhouette needs at least two distinct labels")]
    SingleCluster,
    #[error("{points} points but {labels} labels")]
    LengthMismatch { points: usize, labels: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub sample_id: String,
    pub class: PresentationClass,
    pub image_vec: Vec<f64>,
    pub text_vec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    /// input × hidden
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub norm_scale: Array1<f64>,
    pub norm_shift: Array1<f64>,
    /// hidden × d_out
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl FusionWeights {
    pub fn new(
        w1: Array2<f64>,
        b1: Array1<f64>,
        norm_scale: Array1<f64>,
        norm_shift: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    ) -> Result<Self, FusionError> {
        let hidden = w1.ncols();
        for (what, got) in [("b1", b1.len()), ("norm_scale", norm_scale.len()), ("norm_shift", norm_shift.len()), ("w2 rows", w2.nrows())] {
            if got != hidden {
                return Err(FusionError::DimensionMismatch { what, expected: hidden, got });
            }
        }
        if b2.len() != w2.ncols() {
            return Err(FusionError::DimensionMismatch { what: "b2", expected: w2.ncols(), got: b2.len() });
        }
        let parts: [(&'static str, &[f64]); 6] = [
            ("w1", w1.as_slice().unwrap_or(&[])),
            ("b1", b1.as_slice().unwrap_or(&[])),
            ("norm_scale", norm_scale.as_slice().unwrap_or(&[])),
            ("norm_shift", norm_shift.as_slice().unwrap_or(&[])),
            ("w2", w2.as_slice().unwrap_or(&[])),
            ("b2", b2.as_slice().unwrap_or(&[])),
        ];
        for (name, xs) in parts {
            if xs.iter().any(|x| !x.is_finite()) {
                return Err(FusionError::NonFinite(name));
            }
        }
        Ok(FusionWeights { w1, b1, norm_scale, norm_shift, w2, b2 })
    }

    /// Seeded stand-in weights: scaled Gaussian linear layers, norm affine
    /// near identity.
    pub fn random(input: usize, hidden: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = sub_rng(seed, "fusion/weights");
        let mut draw = |n: usize, mean: f64, sd: f64| -> Vec<f64> {
            let d = Normal::new(mean, sd).expect("valid normal");
            (0..n).map(|_| d.sample(&mut rng)).collect()
        };
        let w1 = Array2::from_shape_vec((input, hidden), draw(input * hidden, 0.0, 1.0 / (input as f64).sqrt())).unwrap();
        let b1 = Array1::from(draw(hidden, 0.0, 0.1));
        let norm_scale = Array1::from(draw(hidden, 1.0, 0.1));
        let norm_shift = Array1::from(draw(hidden, 0.0, 0.1));
        let w2 = Array2::from_shape_vec((hidden, d_out), draw(hidden * d_out, 0.0, 1.0 / (hidden as f64).sqrt())).unwrap();
        let b2 = Array1::from(draw(d_out, 0.0, 0.1));
        FusionWeights { w1, b1, norm_scale, norm_shift, w2, b2 }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.ncols()
    }

    /// Reads `in hidden d_out` followed by whitespace-separated values for
    /// w1, b1, norm_scale, norm_shift, w2, b2 (matrices row-major).
    pub fn parse(text: &str) -> Result<Self, FusionError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or(FusionError::Parse { line: 1, msg: "empty weights file".into() })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<Result<_, _>>()
            .map_err(|e| FusionError::Parse { line: hline + 1, msg: format!("bad dimension header: {e}") })?;
        let [input, hidden, d_out] = dims[..] else {
            return Err(FusionError::Parse { line: hline + 1, msg: "expected `in hidden d_out`".into() });
        };
        let mut values = Vec::new();
        for (i, line) in lines {
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| FusionError::Parse { line: i + 1, msg: format!("bad number `{tok}`") })?;
                values.push(v);
            }
        }
        let expected = input * hidden + 3 * hidden + hidden * d_out + d_out;
        if values.len() != expected {
            return Err(FusionError::DimensionMismatch { what: "weights file values", expected, got: values.len() });
        }
        let mut rest = values.as_slice();
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        let w1 = Array2::from_shape_vec((input, hidden), take(input * hidden)).unwrap();
        let b1 = Array1::from(take(hidden));
        let norm_scale = Array1::from(take(hidden));
        let norm_shift = Array1::from(take(hidden));
        let w2 = Array2::from_shape_vec((hidden, d_out), take(hidden * d_out)).unwrap();
        let b2 = Array1::from(take(d_out));
        FusionWeights::new(w1, b1, norm_scale, norm_shift, w2, b2)
    }

    pub fn load(path: &Path) -> Result<Self, FusionError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.input_dim(), self.hidden_dim(), self.output_dim());
        let mut row = |xs: &mut dyn Iterator<Item = &f64>| {
            let line: Vec<String> = xs.map(|x| format!("{x:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        };
        for r in self.w1.rows() {
            row(&mut r.iter());
        }
        row(&mut self.b1.iter());
        row(&mut self.norm_scale.iter());
        row(&mut self.norm_shift.iter());
        for r in self.w2.rows() {
            row(&mut r.iter());
        }
        row(&mut self.b2.iter());
        out
    }
}

/// x·Φ(x), with Φ the standard normal CDF.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Forward pass: linear, feature normalization with affine, GELU, linear.
/// The image vector comes first in the concatenated input.
pub fn fuse(rec: &EmbeddingRecord, w: &FusionWeights) -> Result<Vec<f64>, FusionError> {
    let got = rec.image_vec.len() + rec.text_vec.len();
    if got != w.input_dim() {
        return Err(FusionError::DimensionMismatch { what: "fusion input", expected: w.input_dim(), got });
    }
    let x = concatenate(
        Axis(0),
        &[Array1::from(rec.image_vec.clone()).view(), Array1::from(rec.text_vec.clone()).view()],
    )
    .expect("1-D concat");
    let h = w.w1.t().dot(&x) + &w.b1;
    let mean = h.mean().unwrap_or(0.0);
    let var = h.mapv(|v| (v - mean).powi(2)).mean().unwrap_or(0.0);
    let normed = h.mapv(|v| (v - mean) / (var + NORM_EPS).sqrt()) * &w.norm_scale + &w.norm_shift;
    let out = w.w2.t().dot(&normed.mapv(gelu)) + &w.b2;
    Ok(out.to_vec())
}

pub fn fuse_batch(records: &[EmbeddingRecord], w: &FusionWeights) -> Result<Vec<Vec<f64>>, FusionError> {
    records.iter().map(|r| fuse(r, w)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// One k-dimensional score vector per input.
    pub scores: Vec<Vec<f64>>,
    /// k unit basis vectors in input space.
    pub components: Vec<Vec<f64>>,
    /// Share of total variance per component.
    pub explained_ratio: Vec<f64>,
}

/// Principal component projection onto the top `k` eigenvectors of the
/// sample covariance. Each component is signed so its largest-magnitude
/// coordinate is positive.
pub fn pca_project(vectors: &[Vec<f64>], k: usize) -> Result<Projection, FusionError> {
    let n = vectors.len();
    if n < 2 {
        return Err(FusionError::TooFewVectors);
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(FusionError::DimensionMismatch { what: "pca input", expected: dim, got: v.len() });
    }
    if k == 0 || k > dim {
        return Err(FusionError::InvalidK { k, max: dim });
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(FusionError::NonFinite("pca input"));
    }
    if vectors.iter().all(|v| v == &vectors[0]) {
        return Err(FusionError::DegenerateInput);
    }

    let data = DMatrix::from_fn(n, dim, |i, j| vectors[i][j]);
    let mean = data.row_mean();
    let centered = DMatrix::from_fn(n, dim, |i, j| data[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    if total <= 0.0 {
        return Err(FusionError::DegenerateInput);
    }

    let mut components = Vec::with_capacity(k);
    let mut explained_ratio = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut c: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let mut pivot = 0;
        for (j, v) in c.iter().enumerate() {
            if v.abs() > c[pivot].abs() {
                pivot = j;
            }
        }
        if c[pivot] < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        explained_ratio.push(eig.eigenvalues[idx].max(0.0) / total);
    }

    let scores = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| (0..dim).map(|j| centered[(i, j)] * c[j]).sum())
                .collect()
        })
        .collect();
    Ok(Projection { scores, components, explained_ratio })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean silhouette coefficient under the Euclidean metric. Points alone in
/// their cluster score 0.
pub fn silhouette<L: Ord>(points: &[Vec<f64>], labels: &[L]) -> Result<f64, FusionError> {
    if points.len() != labels.len() {
        return Err(FusionError::LengthMismatch { points: points.len(), labels: labels.len() });
    }
    let mut clusters: BTreeMap<&L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        clusters.entry(l).or_default().push(i);
    }
    if clusters.len() < 2 {
        return Err(FusionError::SingleCluster);
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let own = &clusters[&labels[i]];
        if own.len() == 1 {
            continue;
        }
        let mean_dist = |members: &[usize]| -> f64 {
            members.iter().map(|&j| euclidean(p, &points[j])).sum::<f64>()
        };
        let a = mean_dist(own) / (own.len() - 1) as f64;
        let b = clusters
            .iter()
            .filter(|(l, _)| **l != &labels[i])
            .map(|(_, m)| mean_dist(m) / m.len() as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / points.len() as f64)
}

/// Parses an embedding file: header `sample_id,class,<image_dim>,<text_dim>`
/// then `sample_id,class,v1,...` rows.
pub fn parse_embeddings(text: &str) -> Result<Vec<EmbeddingRecord>, FusionError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(FusionError::Parse { line: 1, msg: "empty embedding file".into() })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let dims = match cols[..] {
        ["sample_id", "class", i, t] => i.parse::<usize>().ok().zip(t.parse::<usize>().ok()),
        _ => None,
    };
    let (image_dim, text_dim) = dims.ok_or(FusionError::Parse {
        line: 1,
        msg: "expected header `sample_id,class,<image_dim>,<text_dim>`".into(),
    })?;
    let mut out = Vec::new();
    for (i, line) in lines {
        let err = |msg: String| FusionError::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 + image_dim + text_dim {
            return Err(err(format!("expected {} fields, got {}", 2 + image_dim + text_dim, fields.len())));
        }
        let class = fields[1].parse().map_err(|_| err(format!("unknown class `{}`", fields[1])))?;
        let values: Vec<f64> = fields[2..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number `{t}`"))))
            .collect::<Result<_, _>>()?;
        out.push(EmbeddingRecord {
            sample_id: fields[0].to_string(),
            class,
            image_vec: values[..image_dim].to_vec(),
            text_vec: values[image_dim..].to_vec(),
        });
    }
    Ok(out)
}

pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>, FusionError> {
    parse_embeddings(&std::fs::read_to_string(path)?)
}

/// Writes values at single precision.
pub fn embeddings_to_text(records: &[EmbeddingRecord]) -> String {
    let (image_dim, text_dim) = records
        .first()
        .map(|r| (r.image_vec.len(), r.text_vec.len()))
        .unwrap_or((0, 0));
    let mut out = format!("sample_id,class,{image_dim},{text_dim}\n");
    for r in records {
        let _ = write!(out, "{},{}", r.sample_id, r.class);
        for v in r.image_vec.iter().chain(&r.text_vec) {
            let _ = write!(out, ",{}", *v as f32);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(image: Vec<f64>, text: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord { sample_id: "s".into(), class: PresentationClass::Live, image_vec: image, text_vec: text }
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841345).abs() < 1e-6);
        assert!((gelu(-1.0) + 0.158655).abs() < 1e-6);
    }

    #[test]
    fn zero_weights_give_zero() {
        let w = FusionWeights::new(
            Array2::zeros((4, 3)),
            Array1::zeros(3),
            Array1::zeros(3),
            Array1::zeros(3),
            Array2::zeros((3, 2)),
            Array1::zeros(2),
        )
        .unwrap();
        assert_eq!(fuse(&rec(vec![0.0; 2], vec![0.0; 2]), &w).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            fuse(&rec(vec![0.0; 3], vec![0.0; 2]), &w),
            Err(FusionError::DimensionMismatch { expected: 4, got: 5, .. })
        ));
    }

    #[test]
    fn weight_validation() {
        let bad = FusionWeights::new(
            Array2::zeros((4, 3)),
            Array1::zeros(2),
            Array1::zeros(3),
            Array1::zeros(3),
            Array2::zeros((3, 2)),
            Array1::zeros(2),
        );
        assert!(matches!(bad, Err(FusionError::DimensionMismatch { what: "b1", .. })));
        let mut w1 = Array2::zeros((4, 3));
        w1[(0, 0)] = f64::NAN;
        let nan = FusionWeights::new(w1, Array1::zeros(3), Array1::zeros(3), Array1::zeros(3), Array2::zeros((3, 2)), Array1::zeros(2));
        assert!(matches!(nan, Err(FusionError::NonFinite("w1"))));
    }

    #[test]
    fn weights_text_round_trip() {
        let w = FusionWeights::random(6, 4, 3, 9);
        let back = FusionWeights::parse(&w.to_text()).unwrap();
        assert_eq!(back, w);
        assert!(FusionWeights::parse("2 2 1\n1 2 3").is_err());
    }

    #[test]
    fn w2_scale_covariance() {
        let mut w = FusionWeights::random(8, 5, 3, 1);
        w.b2.fill(0.0);
        let r = rec(vec![0.3, -1.0, 2.0, 0.5], vec![1.0, 0.0, -0.2, 0.7]);
        let base = fuse(&r, &w).unwrap();
        w.w2 *= 2.0;
        let doubled = fuse(&r, &w).unwrap();
        for (a, b) in base.iter().zip(&doubled) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_is_not_additive() {
        let w = FusionWeights::random(4, 6, 2, 3);
        let a = rec(vec![1.0, 0.0], vec![0.5, -0.5]);
        let b = rec(vec![-0.3, 2.0], vec![0.1, 0.9]);
        let sum = rec(vec![0.7, 2.0], vec![0.6, 0.4]);
        let (fa, fb, fs) = (fuse(&a, &w).unwrap(), fuse(&b, &w).unwrap(), fuse(&sum, &w).unwrap());
        assert!(fa.iter().zip(&fb).zip(&fs).any(|((x, y), s)| (x + y - s).abs() > 1e-6));
    }

    #[test]
    fn pca_collinear() {
        let p = pca_project(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]], 1).unwrap();
        let r2 = 2f64.sqrt();
        for (s, e) in p.scores.iter().zip([-r2, 0.0, r2]) {
            assert!((s[0] - e).abs() < 1e-12);
        }
        assert!((p.explained_ratio[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_errors() {
        assert!(matches!(pca_project(&[vec![1.0, 2.0], vec![1.0, 2.0]], 1), Err(FusionError::DegenerateInput)));
        assert!(matches!(pca_project(&[vec![1.0]], 1), Err(FusionError::TooFewVectors)));
        assert!(matches!(pca_project(&[vec![1.0], vec![2.0]], 2), Err(FusionError::InvalidK { .. })));
    }

    #[test]
    fn pca_isotropic_ratios() {
        let pts = [vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let p = pca_project(&pts, 2).unwrap();
        assert!((p.explained_ratio[0] - 0.5).abs() < 1e-12);
        assert!((p.explained_ratio[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn silhouette_examples() {
        let pts = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        let oracle = {
            let s0 = 1.0 - 0.1 / 10.05;
            let s1 = 1.0 - 0.1 / 9.95;
            (s0 + s1) / 2.0
        };
        assert!((s - oracle).abs() < 1e-12);
        assert!((s - 0.990).abs() < 5e-4);

        let grid: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let twin: Vec<Vec<f64>> = grid.iter().chain(&grid).cloned().collect();
        let labels: Vec<u8> = (0..100).map(|i| (i >= 50) as u8).collect();
        assert!(silhouette(&twin, &labels).unwrap().abs() < 0.05);
        assert!(matches!(silhouette(&pts, &[1, 1, 1, 1]), Err(FusionError::SingleCluster)));
        assert_eq!(silhouette(&[vec![0.0], vec![5.0]], &['a', 'b']).unwrap(), 0.0);
    }

    #[test]
    fn embedding_file_round_trip() {
        let recs = vec![
            EmbeddingRecord { sample_id: "a".into(), class: PresentationClass::Live, image_vec: vec![0.5, 1.25], text_vec: vec![-2.0] },
            EmbeddingRecord { sample_id: "b".into(), class: PresentationClass::Synthetic, image_vec: vec![0.0, 3.0], text_vec: vec![0.125] },
        ];
        let text = embeddings_to_text(&recs);
        assert!(text.starts_with("sample_id,class,2,1\n"));
        assert_eq!(parse_embeddings(&text).unwrap(), recs);
        assert!(parse_embeddings("sample_id,class,2,1\na,live,1,2\n").is_err());
        assert!(parse_embeddings("sample_id,class,2,1\na,alien,1,2,3\n").is_err());
    }

    fn cloud() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<u8>)> {
        (2usize..5).prop_flat_map(|dim| {
            proptest::collection::vec((proptest::collection::vec(-10.0f64..10.0, dim), 0u8..3), 4..20)
                .prop_map(|v| v.into_iter().unzip())
        })
    }

    proptest! {
        #[test]
        fn pca_basis_orthonormal((pts, _) in cloud()) {
            let dim = pts[0].len();
            if let Ok(p) = pca_project(&pts, dim) {
                for (i, a) in p.components.iter().enumerate() {
                    for (j, b) in p.components.iter().enumerate() {
                        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                        let want = if i == j { 1.0 } else { 0.0 };
                        prop_assert!((dot - want).abs() < 1e-9);
                    }
                }
                let sum: f64 = p.explained_ratio.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn silhouette_bounded_and_translation_invariant((pts, labels) in cloud(), shift in -50.0f64..50.0) {
            if let Ok(s) = silhouette(&pts, &labels) {
                prop_assert!((-1.0..=1.0).contains(&s));
                let moved: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|x| x + shift).collect()).collect();
                prop_assert!((silhouette(&moved, &labels).unwrap() - s).abs() < 1e-9);
            }
        }

        #[test]
        fn fuse_deterministic(seed in any::<u64>()) {
            let w = FusionWeights::random(6, 4, 3, seed);
            let r = rec(vec![0.1, 0.2, 0.3], vec![-0.4, 0.5, 0.6]);
            prop_assert_eq!(fuse(&r, &w).unwrap(), fuse(&r, &w).unwrap());
        }
    }
}
