//! Tagging schemes for hallucinated spans and the linear-chain CRF used to
//! decode per-token emissions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const OUTSIDE: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagScheme {
    Io,
    Bio,
    Bioes,
}

impl TagScheme {
    pub const ALL: [TagScheme; 3] = [TagScheme::Io, TagScheme::Bio, TagScheme::Bioes];

    pub fn alphabet(self) -> &'static [&'static str] {
        match self {
            TagScheme::Io => &["O", "h-i"],
            TagScheme::Bio => &["O", "h-b", "h-i"],
            TagScheme::Bioes => &["O", "h-b", "h-i", "h-e", "h-s"],
        }
    }

    pub fn size(self) -> usize {
        self.alphabet().len()
    }

    pub fn tag_index(self, name: &str) -> Option<usize> {
        self.alphabet().iter().position(|t| *t == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            TagScheme::Io => "io",
            TagScheme::Bio => "bio",
            TagScheme::Bioes => "bioes",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagSequence {
    pub scheme: TagScheme,
    pub tags: Vec<usize>,
}

impl TagSequence {
    pub fn new(scheme: TagScheme, tags: Vec<usize>) -> Result<Self> {
        if let Some(bad) = tags.iter().find(|&&t| t >= scheme.size()) {
            return Err(Error::InvalidSpec(format!(
                "tag {bad} outside the {} alphabet",
                scheme.name()
            )));
        }
        Ok(Self { scheme, tags })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.tags.iter().map(|&t| self.scheme.alphabet()[t]).collect()
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Encodes maximal runs of positive tokens under `scheme`.
pub fn encode_tags(token_binary: &[u8], scheme: TagScheme) -> TagSequence {
    let idx = |name| scheme.tag_index(name).unwrap();
    let mut tags = vec![OUTSIDE; token_binary.len()];
    let mut t = 0;
    while t < token_binary.len() {
        if token_binary[t] == 0 {
            t += 1;
            continue;
        }
        let start = t;
        while t < token_binary.len() && token_binary[t] != 0 {
            t += 1;
        }
        let end = t - 1;
        for (i, tag) in tags.iter_mut().enumerate().take(end + 1).skip(start) {
            *tag = match scheme {
                TagScheme::Io => idx("h-i"),
                TagScheme::Bio if i == start => idx("h-b"),
                TagScheme::Bio => idx("h-i"),
                TagScheme::Bioes if start == end => idx("h-s"),
                TagScheme::Bioes if i == start => idx("h-b"),
                TagScheme::Bioes if i == end => idx("h-e"),
                TagScheme::Bioes => idx("h-i"),
            };
        }
    }
    TagSequence { scheme, tags }
}

/// 1 for every non-O tag.
pub fn tags_to_binary(tags: &TagSequence) -> Vec<u8> {
    tags.tags.iter().map(|&t| u8::from(t != OUTSIDE)).collect()
}

/// Transition scores of a linear-chain CRF over `num_tags` tags.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    pub num_tags: usize,
    /// `transitions[i * num_tags + j]`: score of tag `i` followed by tag `j`.
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl CrfParams {
    pub fn zeros(num_tags: usize) -> Self {
        Self {
            num_tags,
            transitions: vec![0.0; num_tags * num_tags],
            start: vec![0.0; num_tags],
            end: vec![0.0; num_tags],
        }
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * self.num_tags + to]
    }

    fn validate(&self) -> Result<()> {
        let k = self.num_tags;
        if self.transitions.len() != k * k || self.start.len() != k || self.end.len() != k {
            return Err(Error::InvalidSpec(format!("CRF tensors inconsistent with {k} tags")));
        }
        if self.transitions.iter().chain(&self.start).chain(&self.end).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("CRF parameters"));
        }
        Ok(())
    }
}

/// Gradient of the CRF negative log-likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfGradient {
    pub emissions: Matrix,
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

fn check_emissions(emissions: &Matrix, crf: &CrfParams) -> Result<()> {
    crf.validate()?;
    if emissions.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if emissions.cols() != crf.num_tags {
        return Err(Error::DimensionMismatch {
            context: "emission width",
            expected: crf.num_tags,
            got: emissions.cols(),
        });
    }
    if !emissions.is_finite() {
        return Err(Error::NonFinite("emissions"));
    }
    Ok(())
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Unnormalized score of one tag path.
pub fn path_score(emissions: &Matrix, tags: &[usize], crf: &CrfParams) -> f64 {
    let mut score = crf.start[tags[0]] + crf.end[tags[tags.len() - 1]];
    for (t, &y) in tags.iter().enumerate() {
        score += emissions.get(t, y);
        if t > 0 {
            score += crf.transition(tags[t - 1], y);
        }
    }
    score
}

fn forward_scores(emissions: &Matrix, crf: &CrfParams) -> Matrix {
    let (len, k) = emissions.shape();
    let mut alpha = Matrix::zeros(len, k);
    for j in 0..k {
        alpha.set(0, j, crf.start[j] + emissions.get(0, j));
    }
    for t in 1..len {
        for j in 0..k {
            let prev = alpha.row(t - 1);
            let v = log_sum_exp((0..k).map(|i| prev[i] + crf.transition(i, j)));
            alpha.set(t, j, v + emissions.get(t, j));
        }
    }
    alpha
}

fn backward_scores(emissions: &Matrix, crf: &CrfParams) -> Matrix {
    let (len, k) = emissions.shape();
    let mut beta = Matrix::zeros(len, k);
    beta.row_mut(len - 1).copy_from_slice(&crf.end);
    for t in (0..len - 1).rev() {
        for i in 0..k {
            let next = beta.row(t + 1);
            let v = log_sum_exp((0..k).map(|j| crf.transition(i, j) + emissions.get(t + 1, j) + next[j]));
            beta.set(t, i, v);
        }
    }
    beta
}

/// Log partition function over all `K^T` tag paths.
pub fn log_partition(emissions: &Matrix, crf: &CrfParams) -> Result<f64> {
    check_emissions(emissions, crf)?;
    let alpha = forward_scores(emissions, crf);
    let last = alpha.row(emissions.rows() - 1);
    Ok(log_sum_exp((0..crf.num_tags).map(|k| last[k] + crf.end[k])))
}

fn check_gold(emissions: &Matrix, gold: &TagSequence, crf: &CrfParams) -> Result<()> {
    if gold.len() != emissions.rows() {
        return Err(Error::LengthMismatch {
            left: gold.len(),
            right: emissions.rows(),
        });
    }
    if gold.scheme.size() != crf.num_tags {
        return Err(Error::DimensionMismatch {
            context: "tag alphabet",
            expected: crf.num_tags,
            got: gold.scheme.size(),
        });
    }
    Ok(())
}

/// `log Z - score(gold)`.
pub fn crf_negative_log_likelihood(emissions: &Matrix, gold: &TagSequence, crf: &CrfParams) -> Result<f64> {
    check_gold(emissions, gold, crf)?;
    let log_z = log_partition(emissions, crf)?;
    Ok((log_z - path_score(emissions, &gold.tags, crf)).max(0.0))
}

/// NLL together with its gradient (expected minus observed feature counts).
pub fn crf_nll_with_gradient(emissions: &Matrix, gold: &TagSequence, crf: &CrfParams) -> Result<(f64, CrfGradient)> {
    check_gold(emissions, gold, crf)?;
    check_emissions(emissions, crf)?;
    let (len, k) = emissions.shape();
    let alpha = forward_scores(emissions, crf);
    let beta = backward_scores(emissions, crf);
    let log_z = log_sum_exp((0..k).map(|j| alpha.get(len - 1, j) + crf.end[j]));
    let nll = (log_z - path_score(emissions, &gold.tags, crf)).max(0.0);

    let mut grad = CrfGradient {
        emissions: Matrix::zeros(len, k),
        transitions: vec![0.0; k * k],
        start: vec![0.0; k],
        end: vec![0.0; k],
    };
    for t in 0..len {
        for j in 0..k {
            let p = (alpha.get(t, j) + beta.get(t, j) - log_z).exp();
            grad.emissions.set(t, j, p);
            if t == 0 {
                grad.start[j] = p;
            }
            if t == len - 1 {
                grad.end[j] = p;
            }
        }
    }
    for t in 0..len.saturating_sub(1) {
        for i in 0..k {
            for j in 0..k {
                let p = (alpha.get(t, i) + crf.transition(i, j) + emissions.get(t + 1, j) + beta.get(t + 1, j) - log_z).exp();
                grad.transitions[i * k + j] += p;
            }
        }
    }
    let y = &gold.tags;
    grad.start[y[0]] -= 1.0;
    grad.end[y[len - 1]] -= 1.0;
    for t in 0..len {
        let v = grad.emissions.get(t, y[t]);
        grad.emissions.set(t, y[t], v - 1.0);
        if t > 0 {
            grad.transitions[y[t - 1] * k + y[t]] -= 1.0;
        }
    }
    Ok((nll, grad))
}

fn argmax_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Highest-scoring tag path; ties go to the lower tag index.
pub fn viterbi_decode(emissions: &Matrix, crf: &CrfParams, scheme: TagScheme) -> Result<TagSequence> {
    check_emissions(emissions, crf)?;
    if scheme.size() != crf.num_tags {
        return Err(Error::DimensionMismatch {
            context: "tag alphabet",
            expected: crf.num_tags,
            got: scheme.size(),
        });
    }
    let (len, k) = emissions.shape();
    let mut delta: Vec<f64> = (0..k).map(|j| crf.start[j] + emissions.get(0, j)).collect();
    let mut backptr = vec![vec![0usize; k]; len];
    for (t, pointers) in backptr.iter_mut().enumerate().skip(1) {
        let mut next = vec![0.0; k];
        for j in 0..k {
            let i = argmax_lowest((0..k).map(|i| delta[i] + crf.transition(i, j)));
            pointers[j] = i;
            next[j] = delta[i] + crf.transition(i, j) + emissions.get(t, j);
        }
        delta = next;
    }
    let mut tags = vec![0; len];
    tags[len - 1] = argmax_lowest((0..k).map(|j| delta[j] + crf.end[j]));
    for t in (1..len).rev() {
        tags[t - 1] = backptr[t][tags[t]];
    }
    Ok(TagSequence { scheme, tags })
}

/// Per-token argmax, ties to the lower index. May produce sequences that are
/// not well-formed under the scheme.
pub fn greedy_decode(emissions: &Matrix, scheme: TagScheme) -> Result<TagSequence> {
    if emissions.cols() != scheme.size() {
        return Err(Error::DimensionMismatch {
            context: "emission width",
            expected: scheme.size(),
            got: emissions.cols(),
        });
    }
    let tags = (0..emissions.rows()).map(|t| argmax_lowest(emissions.row(t).iter().copied())).collect();
    Ok(TagSequence { scheme, tags })
}
