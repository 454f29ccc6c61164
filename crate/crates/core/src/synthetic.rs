//! Synthetic hidden-state datasets with known structure, used by tests, the
//! acceptance suite and the CLI's `synth` helper.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dump::{Dataset, DumpHeader, HiddenStateDump, Sample, TaskKind};
use crate::error::{Error, Result};

/// Two Gaussian clusters that differ only at one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeparableConfig {
    pub samples: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub signal_layer: usize,
    /// Distance of each class mean from the origin at the signal layer.
    pub shift: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SeparableConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            num_layers: 4,
            hidden_dim: 16,
            signal_layer: 2,
            shift: 4.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

fn unit_direction(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Class 1 is centred at `+shift·u`, class 0 at `-shift·u` on the signal
/// layer; every other layer is pure noise. Labels alternate, so the classes
/// are balanced.
pub fn separable_dumps(cfg: &SeparableConfig) -> Result<Vec<HiddenStateDump>> {
    if cfg.samples == 0 {
        return Err(Error::EmptyDataset);
    }
    if cfg.signal_layer >= cfg.num_layers {
        return Err(Error::InvalidConfig(format!(
            "signal layer {} outside {} layers",
            cfg.signal_layer, cfg.num_layers
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let direction = unit_direction(cfg.hidden_dim, &mut rng);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let header = DumpHeader {
        num_layers: cfg.num_layers as u32,
        hidden_dim: cfg.hidden_dim as u32,
        num_tokens: 1,
        task: TaskKind::TextClassification,
    };
    (0..cfg.samples)
        .map(|i| {
            let label = (i % 2) as u8;
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let mut acts = Vec::with_capacity(cfg.num_layers * cfg.hidden_dim);
            for layer in 0..cfg.num_layers {
                for &u in &direction {
                    let mut v = noise.sample(&mut rng);
                    if layer == cfg.signal_layer {
                        v += sign * cfg.shift * u;
                    }
                    acts.push(v as f32);
                }
            }
            HiddenStateDump::new(header, acts, vec![label])
        })
        .collect()
}

pub fn separable_dataset(cfg: &SeparableConfig) -> Result<Dataset> {
    let dumps = separable_dumps(cfg)?;
    Dataset::new("separable", TaskKind::TextClassification, dumps.iter().map(Sample::from_dump).collect())
}

/// Token sequences with hallucinated spans marked at one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaggedConfig {
    pub sequences: usize,
    pub tokens_per_sequence: usize,
    /// Exact number of positive tokens across the whole dataset.
    pub positive_tokens: usize,
    pub max_span: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub signal_layer: usize,
    pub shift: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for TaggedConfig {
    fn default() -> Self {
        // 431 of 10 000 tokens positive: a 4.31% positive rate
        Self {
            sequences: 200,
            tokens_per_sequence: 50,
            positive_tokens: 431,
            max_span: 4,
            num_layers: 4,
            hidden_dim: 16,
            signal_layer: 1,
            shift: 4.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

/// Places non-overlapping spans of length 1..=max_span until exactly
/// `positive_tokens` tokens are positive.
fn place_spans(cfg: &TaggedConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<u8>>> {
    let total = cfg.sequences * cfg.tokens_per_sequence;
    // spans need a gap, so at most half the tokens can be positive
    if cfg.positive_tokens > total / 2 || cfg.max_span == 0 {
        return Err(Error::InvalidConfig(format!(
            "cannot place {} positive tokens in {total} tokens",
            cfg.positive_tokens
        )));
    }
    let mut labels = vec![vec![0u8; cfg.tokens_per_sequence]; cfg.sequences];
    let mut remaining = cfg.positive_tokens;
    let mut slots: Vec<(usize, usize)> = (0..cfg.sequences)
        .flat_map(|s| (0..cfg.tokens_per_sequence).map(move |t| (s, t)))
        .collect();
    slots.shuffle(rng);
    for (s, start) in slots {
        if remaining == 0 {
            break;
        }
        let len = rng.gen_range(1..=cfg.max_span).min(remaining);
        let end = start + len;
        let row = &labels[s];
        let lo = start.saturating_sub(1);
        let hi = (end + 1).min(cfg.tokens_per_sequence);
        if end > cfg.tokens_per_sequence || row[lo..hi].contains(&1) {
            continue;
        }
        labels[s][start..end].iter_mut().for_each(|l| *l = 1);
        remaining -= len;
    }
    if remaining > 0 {
        return Err(Error::InvalidConfig("could not place every positive token".into()));
    }
    Ok(labels)
}

pub fn tagged_dumps(cfg: &TaggedConfig) -> Result<Vec<HiddenStateDump>> {
    if cfg.sequences == 0 || cfg.tokens_per_sequence == 0 {
        return Err(Error::EmptyDataset);
    }
    if cfg.signal_layer >= cfg.num_layers {
        return Err(Error::InvalidConfig("signal layer outside the layer range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels = place_spans(cfg, &mut rng)?;
    let direction = unit_direction(cfg.hidden_dim, &mut rng);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let t = cfg.tokens_per_sequence;
    let header = DumpHeader {
        num_layers: cfg.num_layers as u32,
        hidden_dim: cfg.hidden_dim as u32,
        num_tokens: t as u32,
        task: TaskKind::SequenceLabeling,
    };
    labels
        .into_iter()
        .map(|tokens| {
            let mut acts = Vec::with_capacity(cfg.num_layers * t * cfg.hidden_dim);
            for layer in 0..cfg.num_layers {
                for &label in &tokens {
                    let sign = if label == 1 { 1.0 } else { -1.0 };
                    for &u in &direction {
                        let mut v = noise.sample(&mut rng);
                        if layer == cfg.signal_layer {
                            v += sign * cfg.shift * u;
                        }
                        acts.push(v as f32);
                    }
                }
            }
            HiddenStateDump::new(header, acts, tokens)
        })
        .collect()
}

pub fn tagged_dataset(cfg: &TaggedConfig) -> Result<Dataset> {
    let dumps = tagged_dumps(cfg)?;
    Dataset::new("tagged", TaskKind::SequenceLabeling, dumps.iter().map(Sample::from_dump).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_is_balanced_and_valid() {
        let ds = separable_dataset(&SeparableConfig {
            samples: 10,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.samples.iter().filter(|s| s.label() == 1).count(), 5);
        assert_eq!((ds.num_layers, ds.hidden_dim), (4, 16));
    }

    #[test]
    fn tagged_hits_exact_positive_count() {
        let cfg = TaggedConfig::default();
        let ds = tagged_dataset(&cfg).unwrap();
        let positives: usize = ds.samples.iter().map(|s| s.labels.iter().filter(|&&l| l == 1).count()).sum();
        let total: usize = ds.samples.iter().map(|s| s.labels.len()).sum();
        assert_eq!(positives, 431);
        assert_eq!(total, 10_000);
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SeparableConfig {
            samples: 4,
            ..Default::default()
        };
        assert_eq!(separable_dumps(&cfg).unwrap(), separable_dumps(&cfg).unwrap());
    }
}
