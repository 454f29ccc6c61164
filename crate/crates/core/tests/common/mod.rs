//! Reference implementations written independently of the library: plain
//! loops over `Vec<Vec<f64>>`, exhaustive enumeration and scalar recurrences.

#![allow(dead_code)]

use layerprobe::dump::{DumpHeader, HiddenStateDump, TaskKind};
use layerprobe::probe::Comparison;
use layerprobe::tagging::CrfParams;
use layerprobe::tensor::Matrix;
use rand::Rng;

pub fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-3.0..3.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Naive comparison straight from the formulas.
pub fn naive_compare(x: &[Vec<f64>], method: Comparison) -> Vec<Vec<f64>> {
    let l = x.len();
    let scalar = |f: &dyn Fn(&[f64]) -> f64| x.iter().map(|a| vec![f(a)]).collect::<Vec<_>>();
    let pairwise = |f: &dyn Fn(&[f64], &[f64]) -> f64| {
        let mut out = vec![vec![0.0; l]; l];
        for i in 0..l {
            for j in 0..l {
                out[i][j] = f(&x[i], &x[j]);
            }
        }
        out
    };
    match method {
        Comparison::None => x.to_vec(),
        Comparison::DotSelf => scalar(&|a| dot(a, a)),
        Comparison::EuclideanNorm => scalar(&|a| dot(a, a).sqrt()),
        Comparison::ManhattanNorm => scalar(&|a| a.iter().map(|v| v.abs()).sum()),
        Comparison::PairwiseDot => pairwise(&|a, b| dot(a, b)),
        Comparison::EuclideanDistance => {
            pairwise(&|a, b| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        }
        Comparison::ManhattanDistance => pairwise(&|a, b| a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum()),
        Comparison::Cosine => pairwise(&|a, b| {
            let na = dot(a, a).sqrt();
            let nb = dot(b, b).sqrt();
            if na < 1e-12 || nb < 1e-12 {
                0.0
            } else {
                dot(a, b) / (na * nb)
            }
        }),
    }
}

/// Every tag path of length `t` over `k` tags.
pub fn all_paths(t: usize, k: usize) -> Vec<Vec<usize>> {
    let mut paths = vec![vec![]];
    for _ in 0..t {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    paths
}

pub fn oracle_path_score(e: &[Vec<f64>], crf: &CrfParams, path: &[usize]) -> f64 {
    let k = crf.num_tags;
    let mut s = crf.start[path[0]] + crf.end[*path.last().unwrap()];
    for t in 0..path.len() {
        s += e[t][path[t]];
    }
    for t in 1..path.len() {
        s += crf.transitions[path[t - 1] * k + path[t]];
    }
    s
}

/// Best score and log partition by enumeration.
pub fn brute_force_crf(e: &[Vec<f64>], crf: &CrfParams) -> (f64, f64) {
    let scores: Vec<f64> = all_paths(e.len(), crf.num_tags)
        .iter()
        .map(|p| oracle_path_score(e, crf, p))
        .collect();
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = best + scores.iter().map(|s| (s - best).exp()).sum::<f64>().ln();
    (best, log_z)
}

pub fn random_crf<R: Rng>(rng: &mut R, k: usize) -> CrfParams {
    let mut v = |n: usize| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
    CrfParams {
        num_tags: k,
        transitions: v(k * k),
        start: v(k),
        end: v(k),
    }
}

/// Scalar Adam with coupled weight decay, unrolled by hand.
pub fn adam_oracle(mut p: f64, grads: &[f64], lr: f64, wd: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8_f64);
    let (mut m, mut v) = (0.0, 0.0);
    let mut out = Vec::new();
    for (i, g) in grads.iter().enumerate() {
        let t = (i + 1) as i32;
        let g = g + wd * p;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        p -= lr * m_hat / (v_hat.sqrt() + eps);
        out.push(p);
    }
    out
}

/// Central differences of `f` around `x`.
pub fn finite_differences(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Relative error with a small absolute floor so exact zeros compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// (tp, fp, tn, fn) by direct counting.
pub fn oracle_counts(pred: &[u8], gold: &[u8]) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (1, 1) => c.0 += 1,
            (1, 0) => c.1 += 1,
            (0, 0) => c.2 += 1,
            _ => c.3 += 1,
        }
    }
    c
}

pub fn random_dump<R: Rng>(rng: &mut R, max_l: u32, max_n: u32, max_t: u32) -> HiddenStateDump {
    let sequence = rng.gen_bool(0.5);
    let header = DumpHeader {
        num_layers: rng.gen_range(1..=max_l),
        hidden_dim: rng.gen_range(1..=max_n),
        num_tokens: if sequence { rng.gen_range(1..=max_t) } else { 1 },
        task: if sequence {
            TaskKind::SequenceLabeling
        } else {
            TaskKind::TextClassification
        },
    };
    let activations = (0..header.activation_count())
        .map(|_| {
            // raw bit patterns exercise subnormals and signed zero too
            loop {
                let v = f32::from_bits(rng.gen());
                if v.is_finite() {
                    break v;
                }
            }
        })
        .collect();
    let labels = (0..header.label_count()).map(|_| rng.gen_range(0..=1)).collect();
    HiddenStateDump::new(header, activations, labels).unwrap()
}
