//! Hidden-state dump files, manifests and deterministic dataset splits.
//!
//! Layout of one dump file (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "LPDUMP01"
//! L          u32       number of layers
//! N          u32       hidden size
//! T          u32       number of tokens
//! task       u32       0 = text classification, 1 = sequence labeling
//! acts       f32 × L·T·N, layer-major, then token, then dim
//! labels     u8 × (1 | T)
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DUMP_MAGIC: [u8; 8] = *b"LPDUMP01";
pub const HEADER_LEN: usize = 8 + 4 * 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TextClassification,
    SequenceLabeling,
}

impl TaskKind {
    pub fn code(self) -> u32 {
        match self {
            TaskKind::TextClassification => 0,
            TaskKind::SequenceLabeling => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(TaskKind::TextClassification),
            1 => Some(TaskKind::SequenceLabeling),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DumpHeader {
    pub num_layers: u32,
    pub hidden_dim: u32,
    pub num_tokens: u32,
    pub task: TaskKind,
}

impl DumpHeader {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.num_tokens == 0 {
            return Err(Error::InvalidDump(format!(
                "layers, hidden size and tokens must be positive, got L={} N={} T={}",
                self.num_layers, self.hidden_dim, self.num_tokens
            )));
        }
        if self.task == TaskKind::TextClassification && self.num_tokens != 1 {
            return Err(Error::InvalidDump(format!(
                "text classification dumps hold exactly one token, got T={}",
                self.num_tokens
            )));
        }
        Ok(())
    }

    pub fn activation_count(&self) -> usize {
        self.num_layers as usize * self.num_tokens as usize * self.hidden_dim as usize
    }

    pub fn label_count(&self) -> usize {
        match self.task {
            TaskKind::TextClassification => 1,
            TaskKind::SequenceLabeling => self.num_tokens as usize,
        }
    }

    /// Total file size implied by this header.
    pub fn file_len(&self) -> usize {
        HEADER_LEN + 4 * self.activation_count() + self.label_count()
    }
}

/// One sample's activations `[L, T, N]` plus its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStateDump {
    pub header: DumpHeader,
    pub activations: Vec<f32>,
    pub labels: Vec<u8>,
}

impl HiddenStateDump {
    pub fn new(header: DumpHeader, activations: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        let dump = Self {
            header,
            activations,
            labels,
        };
        dump.validate()?;
        Ok(dump)
    }

    pub fn validate(&self) -> Result<()> {
        self.header.validate()?;
        if self.activations.len() != self.header.activation_count() {
            return Err(Error::InvalidDump(format!(
                "expected {} activations, got {}",
                self.header.activation_count(),
                self.activations.len()
            )));
        }
        if self.labels.len() != self.header.label_count() {
            return Err(Error::InvalidDump(format!(
                "expected {} labels, got {}",
                self.header.label_count(),
                self.labels.len()
            )));
        }
        if let Some(i) = self.activations.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation {
                offset: (HEADER_LEN + 4 * i) as u64,
                value: self.activations[i],
            });
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidDump(format!("label {bad} is not binary")));
        }
        Ok(())
    }

    pub fn activation(&self, layer: usize, token: usize, dim: usize) -> f32 {
        let t = self.header.num_tokens as usize;
        let n = self.header.hidden_dim as usize;
        self.activations[(layer * t + token) * n + dim]
    }

    /// The `[L, N]` slice for one token, widened to f64.
    pub fn token_states(&self, token: usize) -> Matrix {
        let l = self.header.num_layers as usize;
        let t = self.header.num_tokens as usize;
        let n = self.header.hidden_dim as usize;
        let mut data = Vec::with_capacity(l * n);
        for layer in 0..l {
            let start = (layer * t + token) * n;
            data.extend(self.activations[start..start + n].iter().map(|&v| f64::from(v)));
        }
        Matrix::from_vec(l, n, data).expect("shape fixed by header")
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut buf = Vec::with_capacity(self.header.file_len());
        buf.extend_from_slice(&DUMP_MAGIC);
        for v in [
            self.header.num_layers,
            self.header.hidden_dim,
            self.header.num_tokens,
            self.header.task.code(),
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.activations {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.labels);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let need = |offset: usize, len: usize| -> Result<()> {
            if bytes.len() < offset + len {
                Err(Error::Truncated {
                    offset: bytes.len() as u64,
                    needed: (offset + len - bytes.len()) as u64,
                })
            } else {
                Ok(())
            }
        };
        need(0, 8)?;
        let mut magic = [0u8; 8];
        magic.copy_from_slice(&bytes[..8]);
        if magic != DUMP_MAGIC {
            return Err(Error::BadMagic { offset: 0, found: magic });
        }
        need(8, 16)?;
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        let task = TaskKind::from_code(word(3))
            .ok_or_else(|| Error::InvalidDump(format!("unknown task code {} at offset 20", word(3))))?;
        let header = DumpHeader {
            num_layers: word(0),
            hidden_dim: word(1),
            num_tokens: word(2),
            task,
        };
        header.validate()?;
        let count = header.activation_count();
        need(HEADER_LEN, 4 * count + header.label_count())?;
        if bytes.len() > header.file_len() {
            return Err(Error::InvalidDump(format!(
                "{} trailing bytes after offset {}",
                bytes.len() - header.file_len(),
                header.file_len()
            )));
        }
        let mut activations = Vec::with_capacity(count);
        for i in 0..count {
            let offset = HEADER_LEN + 4 * i;
            let value = f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
            if !value.is_finite() {
                return Err(Error::NonFiniteActivation {
                    offset: offset as u64,
                    value,
                });
            }
            activations.push(value);
        }
        let label_start = HEADER_LEN + 4 * count;
        let labels = bytes[label_start..].to_vec();
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(Error::InvalidDump(format!(
                "label {} at offset {} is not binary",
                labels[i],
                label_start + i
            )));
        }
        Ok(Self {
            header,
            activations,
            labels,
        })
    }
}

/// Validates `sample` and writes it to `destination`. Nothing is written when
/// validation fails.
pub fn write_dump(sample: &HiddenStateDump, destination: impl AsRef<Path>) -> Result<()> {
    let bytes = sample.to_bytes()?;
    let mut file = fs::File::create(destination)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_dump(source: impl AsRef<Path>) -> Result<HiddenStateDump> {
    let bytes = fs::read(source)?;
    HiddenStateDump::from_bytes(&bytes)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub label: u8,
    pub token_count: u32,
}

/// Index of a directory of dumps. Text format:
///
/// ```text
/// # benchmark: <name>
/// # llm: <name>
/// <file>\t<label>\t<token_count>
/// ```
///
/// For sequence-labeling dumps `label` is 1 iff any token is positive.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub benchmark: String,
    pub llm: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut out = format!("# benchmark: {}\n# llm: {}\n", self.benchmark, self.llm);
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.file, e.label, e.token_count));
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut manifest = Manifest::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((key, value)) = meta.split_once(':') {
                    match key.trim() {
                        "benchmark" => manifest.benchmark = value.trim().to_string(),
                        "llm" => manifest.llm = value.trim().to_string(),
                        _ => {}
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(line_no, format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let label: u8 = fields[1]
                .parse()
                .map_err(|_| bad(line_no, format!("bad label {:?}", fields[1])))?;
            if label > 1 {
                return Err(bad(line_no, format!("label {label} is not binary")));
            }
            let token_count: u32 = fields[2]
                .parse()
                .map_err(|_| bad(line_no, format!("bad token count {:?}", fields[2])))?;
            manifest.entries.push(ManifestEntry {
                file: fields[0].to_string(),
                label,
                token_count,
            });
        }
        Ok(manifest)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?, path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }
}

/// One sample prepared for modelling: a `[L, N]` matrix per token and the
/// binary labels (one for classification, one per token otherwise).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub states: Vec<Matrix>,
    pub labels: Vec<u8>,
}

impl Sample {
    pub fn from_dump(dump: &HiddenStateDump) -> Self {
        Self {
            states: (0..dump.header.num_tokens as usize).map(|t| dump.token_states(t)).collect(),
            labels: dump.labels.clone(),
        }
    }

    pub fn label(&self) -> u8 {
        self.labels[0]
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub task: TaskKind,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, task: TaskKind, samples: Vec<Sample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let (num_layers, hidden_dim) = first.states[0].shape();
        for s in &samples {
            for m in &s.states {
                if m.shape() != (num_layers, hidden_dim) {
                    return Err(Error::DimensionMismatch {
                        context: "dataset sample shape",
                        expected: num_layers * hidden_dim,
                        got: m.rows() * m.cols(),
                    });
                }
            }
            let expected_labels = match task {
                TaskKind::TextClassification => 1,
                TaskKind::SequenceLabeling => s.states.len(),
            };
            if s.labels.len() != expected_labels {
                return Err(Error::LengthMismatch {
                    left: s.labels.len(),
                    right: expected_labels,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            task,
            num_layers,
            hidden_dim,
            samples,
        })
    }

    /// Loads every dump listed in a manifest. Dump paths are relative to the
    /// manifest's directory.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = Manifest::read(manifest_path)?;
        let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        let mut samples = Vec::with_capacity(manifest.entries.len());
        let mut task = None;
        for (i, entry) in manifest.entries.iter().enumerate() {
            let dump = read_dump(dir.join(&entry.file))?;
            let mismatch = |reason: String| Error::Manifest {
                path: manifest_path.to_path_buf(),
                line: i + 3,
                reason,
            };
            if dump.header.num_tokens != entry.token_count {
                return Err(mismatch(format!(
                    "token count {} disagrees with dump ({})",
                    entry.token_count, dump.header.num_tokens
                )));
            }
            let sample_label = u8::from(dump.labels.contains(&1));
            if sample_label != entry.label {
                return Err(mismatch(format!("label {} disagrees with dump ({sample_label})", entry.label)));
            }
            if *task.get_or_insert(dump.header.task) != dump.header.task {
                return Err(mismatch("mixed task kinds in one manifest".into()));
            }
            samples.push(Sample::from_dump(&dump));
        }
        let name = if manifest.benchmark.is_empty() {
            manifest_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        } else {
            manifest.benchmark.clone()
        };
        Dataset::new(name, task.ok_or(Error::EmptyDataset)?, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<Sample> {
        indices.iter().map(|&i| self.samples[i].clone()).collect()
    }

    pub fn split(&self, spec: &SplitSpec) -> Result<DatasetSplits> {
        let idx = split(self.len(), spec)?;
        Ok(DatasetSplits {
            name: self.name.clone(),
            task: self.task,
            num_layers: self.num_layers,
            hidden_dim: self.hidden_dim,
            train: self.subset(&idx.train),
            val: self.subset(&idx.val),
            test: self.subset(&idx.test),
        })
    }
}

/// Writes `dumps` as `sample_XXXXX.lpd` files plus `manifest.tsv` into `dir`
/// and returns the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, benchmark: &str, llm: &str, dumps: &[HiddenStateDump]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest {
        benchmark: benchmark.to_string(),
        llm: llm.to_string(),
        entries: Vec::with_capacity(dumps.len()),
    };
    for (i, dump) in dumps.iter().enumerate() {
        let file = format!("sample_{i:05}.lpd");
        write_dump(dump, dir.join(&file))?;
        manifest.entries.push(ManifestEntry {
            file,
            label: u8::from(dump.labels.contains(&1)),
            token_count: dump.header.num_tokens,
        });
    }
    let path = dir.join("manifest.tsv");
    manifest.write(&path)?;
    Ok(path)
}

#[derive(Clone, Debug)]
pub struct DatasetSplits {
    pub name: String,
    pub task: TaskKind,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [0.7, 0.15, 0.15],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            ratios: [train, val, test],
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidConfig(format!("split ratios must be non-negative, got {:?}", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with the spec's seed and cuts it into
/// `floor(n·r_train)`, `floor(n·r_val)` and the remainder.
pub fn split(n: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    spec.validate()?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    // the 1e-9 guard keeps products like 10 * 0.7 = 6.999... from losing a sample
    let count = |r: f64| (((n as f64) * r + 1e-9).floor() as usize).min(n);
    let n_train = count(spec.ratios[0]);
    let n_val = count(spec.ratios[1]).min(n - n_train);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(SplitIndices {
        train: order,
        val,
        test,
    })
}
