//! Independent reference implementations and workspace helpers shared by
//! the integration tests. Nothing here calls into the code under test for
//! the values it checks.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use irispad::experiment::{self, ExperimentConfig};
use irispad::fusion::{EmbeddingRecord, FusionWeights};
use irispad::mock::{MockScript, MockServer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two-sided p from the full null distribution: twice the smaller tail,
/// capped at one.
fn two_sided(null: &[f64], observed: f64) -> f64 {
    let total = null.len() as f64;
    let lower = null.iter().filter(|s| **s <= observed + 1e-9).count() as f64;
    let upper = null.iter().filter(|s| **s >= observed - 1e-9).count() as f64;
    (2.0 * lower.min(upper) / total).min(1.0)
}

/// Signed-rank W+ and its exact p by enumerating every sign assignment.
/// Assumes no zero and no tied magnitudes.
pub fn brute_wilcoxon(diffs: &[f64]) -> (f64, f64) {
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diffs[a].abs().total_cmp(&diffs[b].abs()));
    let mut rank = vec![0.0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = (r + 1) as f64;
    }
    let w: f64 = (0..n).filter(|&i| diffs[i] > 0.0).map(|i| rank[i]).sum();
    let null: Vec<f64> = (0u32..1 << n)
        .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| (i + 1) as f64).sum())
        .collect();
    (w, two_sided(&null, w))
}

/// U for `a` counted pairwise, and its exact p by enumerating every way to
/// pick |a| positions out of the pooled ranks. Assumes no ties.
pub fn brute_mann_whitney(a: &[f64], b: &[f64]) -> (f64, f64) {
    let u: f64 = a
        .iter()
        .map(|x| b.iter().map(|y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 }).sum::<f64>())
        .sum();
    let (n, total) = (a.len(), a.len() + b.len());
    let mut null = Vec::new();
    for mask in 0u32..1 << total {
        if mask.count_ones() as usize != n {
            continue;
        }
        // rank positions 1..=total; U = rank sum - n(n+1)/2
        let rank_sum: usize = (0..total).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).sum();
        null.push(rank_sum as f64 - (n * (n + 1) / 2) as f64);
    }
    (u, two_sided(&null, u))
}

/// Distinct values with distinct magnitudes, random signs.
pub fn tie_free_diffs(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut mags: Vec<f64> = (1..=n).map(|k| k as f64 + r.random_range(0.0..0.5)).collect();
    mags.shuffle(&mut r);
    mags.into_iter()
        .map(|m| if r.random_bool(0.5) { m } else { -m })
        .collect()
}

/// Two tie-free samples of the given sizes, with `a` shifted by `shift`.
pub fn tie_free_samples(n: usize, m: usize, shift: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let mut pool: Vec<f64> = (0..n + m).map(|k| k as f64 * 0.37 + r.random_range(0.0..0.1)).collect();
    pool.shuffle(&mut r);
    let a = pool[..n].iter().map(|x| x + shift).collect();
    let b = pool[n..].to_vec();
    (a, b)
}

/// erf by its Maclaurin series; accurate to ~1e-15 for |x| <= 3.
pub fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        let add = term / (2 * n + 1) as f64;
        sum += add;
        if add.abs() < 1e-18 {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

pub fn gelu_ref(x: f64) -> f64 {
    0.5 * x * (1.0 + erf_series(x / std::f64::consts::SQRT_2))
}

/// Fusion forward pass written with plain loops over the weight arrays.
pub fn naive_fuse(image: &[f64], text: &[f64], w: &FusionWeights) -> Vec<f64> {
    let x: Vec<f64> = image.iter().chain(text).copied().collect();
    let (input, hidden) = (w.w1.nrows(), w.w1.ncols());
    assert_eq!(x.len(), input);
    let mut h = vec![0.0; hidden];
    for j in 0..hidden {
        let mut acc = w.b1[j];
        for i in 0..input {
            acc += x[i] * w.w1[[i, j]];
        }
        h[j] = acc;
    }
    let mean = h.iter().sum::<f64>() / hidden as f64;
    let var = h.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hidden as f64;
    let act: Vec<f64> = (0..hidden)
        .map(|j| gelu_ref((h[j] - mean) / (var + 1e-5).sqrt() * w.norm_scale[j] + w.norm_shift[j]))
        .collect();
    let out_dim = w.w2.ncols();
    (0..out_dim)
        .map(|k| {
            let mut acc = w.b2[k];
            for j in 0..hidden {
                acc += act[j] * w.w2[[j, k]];
            }
            acc
        })
        .collect()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// descending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

/// Sample covariance (n - 1 denominator) with plain loops.
pub fn covariance(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    let d = points[0].len();
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for p in points {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]);
            }
        }
    }
    for row in &mut cov {
        for v in row {
            *v /= (n - 1) as f64;
        }
    }
    cov
}

pub fn random_record(image_dim: usize, text_dim: usize, seed: u64) -> EmbeddingRecord {
    let mut r = rng(seed);
    EmbeddingRecord {
        sample_id: format!("r{seed}"),
        class: irispad::manifest::PresentationClass::Live,
        image_vec: (0..image_dim).map(|_| r.random_range(-2.0..2.0)).collect(),
        text_vec: (0..text_dim).map(|_| r.random_range(-2.0..2.0)).collect(),
    }
}

/// Demo workspace plus a mock server answering its script.
pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub config: ExperimentConfig,
    pub server: MockServer,
}

impl Workspace {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    /// Config pointing at the running mock, writing into `out_name`.
    pub fn config_for(&self, out_name: &str, in_flight: usize) -> ExperimentConfig {
        let mut cfg = self.config.clone();
        let ep = cfg.endpoint.as_mut().expect("demo config has an endpoint");
        ep.base_url = format!("{}/v1", self.server.base_url());
        ep.max_in_flight = in_flight;
        cfg.output_dir = self.root().join(out_name);
        cfg.mesh.output = cfg.output_dir.join("mesh_corpus.txt");
        cfg
    }
}

/// Scaffolds the demo workspace and serves `script` (or the scaffolded
/// script when `None`).
pub async fn workspace(seed: u64, script: Option<MockScript>) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = experiment::scaffold_demo(dir.path(), seed, 1).unwrap();
    let config = ExperimentConfig::load(&cfg_path).unwrap();
    let script = match script {
        Some(s) => s,
        None => MockScript::load(&dir.path().join("mock_script.txt")).unwrap(),
    };
    let server = MockServer::start(script, 0).await.unwrap();
    Workspace { dir, config, server }
}

pub fn read(path: impl Into<PathBuf>) -> String {
    let path = path.into();
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
