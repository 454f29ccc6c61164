use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};

/// Below this norm a vector counts as zero for cosine similarity.
pub const COSINE_ZERO_NORM: f64 = 1e-12;

/// How per-layer encodings are compared before aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// Identity: encodings pass through unchanged.
    None,
    DotSelf,
    EuclideanNorm,
    ManhattanNorm,
    PairwiseDot,
    EuclideanDistance,
    ManhattanDistance,
    Cosine,
}

impl Comparison {
    pub const ALL: [Comparison; 8] = [
        Comparison::None,
        Comparison::DotSelf,
        Comparison::EuclideanNorm,
        Comparison::ManhattanNorm,
        Comparison::PairwiseDot,
        Comparison::EuclideanDistance,
        Comparison::ManhattanDistance,
        Comparison::Cosine,
    ];

    /// Methods producing one scalar per layer.
    pub fn is_scalar(self) -> bool {
        matches!(self, Comparison::DotSelf | Comparison::EuclideanNorm | Comparison::ManhattanNorm)
    }

    pub fn is_pairwise(self) -> bool {
        matches!(
            self,
            Comparison::PairwiseDot | Comparison::EuclideanDistance | Comparison::ManhattanDistance | Comparison::Cosine
        )
    }

    /// Output shape for `layers` encodings of width `width`.
    pub fn output_shape(self, layers: usize, width: usize) -> (usize, usize) {
        if self.is_scalar() {
            (layers, 1)
        } else if self.is_pairwise() {
            (layers, layers)
        } else {
            (layers, width)
        }
    }

    pub fn code(self) -> u32 {
        Self::ALL.iter().position(|c| *c == self).unwrap() as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Comparison::None => "none",
            Comparison::DotSelf => "dot_self",
            Comparison::EuclideanNorm => "euclidean_norm",
            Comparison::ManhattanNorm => "manhattan_norm",
            Comparison::PairwiseDot => "pairwise_dot",
            Comparison::EuclideanDistance => "euclidean_distance",
            Comparison::ManhattanDistance => "manhattan_distance",
            Comparison::Cosine => "cosine",
        }
    }
}

fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na < COSINE_ZERO_NORM || nb < COSINE_ZERO_NORM {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Applies a comparison method to the `[L, N']` encodings.
pub fn compare(encodings: &Matrix, method: Comparison) -> Result<Matrix> {
    if !encodings.is_finite() {
        return Err(Error::NonFinite("comparison input"));
    }
    let layers = encodings.rows();
    let (rows, cols) = method.output_shape(layers, encodings.cols());
    let mut out = Matrix::zeros(rows, cols);
    match method {
        Comparison::None => return Ok(encodings.clone()),
        Comparison::DotSelf => {
            for l in 0..layers {
                let a = encodings.row(l);
                out.set(l, 0, dot(a, a));
            }
        }
        Comparison::EuclideanNorm => {
            for l in 0..layers {
                out.set(l, 0, l2(encodings.row(l)));
            }
        }
        Comparison::ManhattanNorm => {
            for l in 0..layers {
                out.set(l, 0, encodings.row(l).iter().map(|v| v.abs()).sum());
            }
        }
        Comparison::PairwiseDot | Comparison::EuclideanDistance | Comparison::ManhattanDistance => {
            for i in 0..layers {
                for j in i..layers {
                    let (a, b) = (encodings.row(i), encodings.row(j));
                    let v = match method {
                        Comparison::PairwiseDot => dot(a, b),
                        Comparison::EuclideanDistance => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
                        _ => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
                    };
                    out.set(i, j, v);
                    out.set(j, i, v);
                }
            }
        }
        Comparison::Cosine => {
            let norms: Vec<f64> = (0..layers).map(|l| l2(encodings.row(l))).collect();
            for i in 0..layers {
                for j in i..layers {
                    let v = cosine(encodings.row(i), encodings.row(j), norms[i], norms[j]);
                    out.set(i, j, v);
                    out.set(j, i, v);
                }
            }
        }
    }
    Ok(out)
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of a scalar loss w.r.t. the encodings given its gradient w.r.t.
/// the comparison output. Non-differentiable points (zero norms, zero
/// differences) take the zero subgradient.
pub(crate) fn compare_backward(encodings: &Matrix, method: Comparison, d_out: &Matrix) -> Matrix {
    let layers = encodings.rows();
    let width = encodings.cols();
    let mut d_enc = Matrix::zeros(layers, width);
    match method {
        Comparison::None => return d_out.clone(),
        Comparison::DotSelf => {
            for l in 0..layers {
                let g = d_out.get(l, 0);
                for (d, a) in d_enc.row_mut(l).iter_mut().zip(encodings.row(l)) {
                    *d = 2.0 * g * a;
                }
            }
        }
        Comparison::EuclideanNorm => {
            for l in 0..layers {
                let n = l2(encodings.row(l));
                if n > 0.0 {
                    let g = d_out.get(l, 0) / n;
                    for (d, a) in d_enc.row_mut(l).iter_mut().zip(encodings.row(l)) {
                        *d = g * a;
                    }
                }
            }
        }
        Comparison::ManhattanNorm => {
            for l in 0..layers {
                let g = d_out.get(l, 0);
                for (d, a) in d_enc.row_mut(l).iter_mut().zip(encodings.row(l)) {
                    *d = g * signum0(*a);
                }
            }
        }
        Comparison::PairwiseDot => {
            for i in 0..layers {
                for j in 0..layers {
                    // C[i][j] = e_i·e_j feeds both rows
                    let g = d_out.get(i, j) + d_out.get(j, i);
                    if g == 0.0 {
                        continue;
                    }
                    let ej = encodings.row(j).to_vec();
                    for (d, b) in d_enc.row_mut(i).iter_mut().zip(&ej) {
                        *d += g * b;
                    }
                }
            }
        }
        Comparison::EuclideanDistance => {
            for i in 0..layers {
                for j in 0..layers {
                    if i == j {
                        continue;
                    }
                    let (a, b) = (encodings.row(i), encodings.row(j));
                    let dist = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    if dist == 0.0 {
                        continue;
                    }
                    let g = (d_out.get(i, j) + d_out.get(j, i)) / dist;
                    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                    for (d, v) in d_enc.row_mut(i).iter_mut().zip(&diff) {
                        *d += g * v;
                    }
                }
            }
        }
        Comparison::ManhattanDistance => {
            for i in 0..layers {
                for j in 0..layers {
                    if i == j {
                        continue;
                    }
                    let g = d_out.get(i, j) + d_out.get(j, i);
                    let signs: Vec<f64> = encodings.row(i).iter().zip(encodings.row(j)).map(|(x, y)| signum0(x - y)).collect();
                    for (d, s) in d_enc.row_mut(i).iter_mut().zip(&signs) {
                        *d += g * s;
                    }
                }
            }
        }
        Comparison::Cosine => {
            let norms: Vec<f64> = (0..layers).map(|l| l2(encodings.row(l))).collect();
            for i in 0..layers {
                if norms[i] < COSINE_ZERO_NORM {
                    continue;
                }
                for j in 0..layers {
                    // cos(a, a) is constant wherever it is defined
                    if i == j || norms[j] < COSINE_ZERO_NORM {
                        continue;
                    }
                    let g = d_out.get(i, j) + d_out.get(j, i);
                    let (a, b) = (encodings.row(i).to_vec(), encodings.row(j));
                    let c = cosine(&a, b, norms[i], norms[j]);
                    let inv = 1.0 / (norms[i] * norms[j]);
                    let ni2 = norms[i] * norms[i];
                    for ((d, ai), bi) in d_enc.row_mut(i).iter_mut().zip(&a).zip(b) {
                        *d += g * (bi * inv - c * ai / ni2);
                    }
                }
            }
        }
    }
    d_enc
}
