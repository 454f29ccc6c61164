//! A trainable classifier: probe or baseline network, optional CRF, and the
//! parameter store backing both. Also the binary probe file format.
//!
//! Probe file layout (little-endian):
//!
//! ```text
//! magic     "LPPROBE1"
//! kind      u32   0 = probe, 1 = baseline
//! spec      u32 × 4  probe: depth, comparison, aggregation, outputs
//!                    baseline: kind, depth, outputs, 0
//! L, N      u32 × 2
//! count     u32   number of network tensors
//! tensor    u32 group, u32 rank, u32 × rank dims, f32 × len values
//! crf       u32   0 | 1, followed by start [K], end [K], transitions [K, K]
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineArch, BaselineKind, BaselineSpec};
use crate::error::{Error, Result};
use crate::probe::{Aggregation, Comparison, ProbeArch, ProbeSpec};
use crate::tagging::CrfParams;
use crate::tensor::{Matrix, ParamGroup, ParamStore};

pub const PROBE_MAGIC: [u8; 8] = *b"LPPROBE1";

/// What to build; this is also the on-disk `--spec` file format (JSON).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Probe(ProbeSpec),
    Baseline(BaselineSpec),
}

impl Architecture {
    pub fn outputs(&self) -> usize {
        match self {
            Architecture::Probe(s) => s.outputs,
            Architecture::Baseline(s) => s.outputs,
        }
    }

    pub fn with_outputs(self, outputs: usize) -> Self {
        match self {
            Architecture::Probe(s) => Architecture::Probe(ProbeSpec { outputs, ..s }),
            Architecture::Baseline(s) => Architecture::Baseline(BaselineSpec { outputs, ..s }),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Architecture::Probe(s) => s.label(),
            Architecture::Baseline(s) => s.label(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let arch: Architecture = serde_json::from_str(text)?;
        match &arch {
            Architecture::Probe(s) => s.validate()?,
            Architecture::Baseline(s) => s.validate()?,
        }
        Ok(arch)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Net {
    Probe(ProbeArch),
    Baseline(BaselineArch),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct CrfLayout {
    tags: usize,
    start: usize,
    end: usize,
    transitions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: Architecture,
    net: Net,
    crf: Option<CrfLayout>,
    params: ParamStore,
}

impl Model {
    /// Zero-initialized model.
    pub fn zeroed(arch: Architecture, num_layers: usize, hidden_dim: usize, with_crf: bool) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = match arch {
            Architecture::Probe(spec) => Net::Probe(ProbeArch::register(spec, num_layers, hidden_dim, &mut params)?),
            Architecture::Baseline(spec) => Net::Baseline(BaselineArch::register(spec, num_layers, hidden_dim, &mut params)?),
        };
        let crf = with_crf.then(|| {
            let tags = arch.outputs();
            CrfLayout {
                tags,
                start: params.push("crf.start", ParamGroup::Crf, &[tags]),
                end: params.push("crf.end", ParamGroup::Crf, &[tags]),
                transitions: params.push("crf.transitions", ParamGroup::Crf, &[tags, tags]),
            }
        });
        Ok(Self { arch, net, crf, params })
    }

    /// Seeded uniform initialization of the network; CRF scores start at zero.
    pub fn new(arch: Architecture, num_layers: usize, hidden_dim: usize, with_crf: bool, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(arch, num_layers, hidden_dim, with_crf)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = model.params.values_mut();
        match &model.net {
            Net::Probe(p) => p.init(values, &mut rng),
            Net::Baseline(b) => b.init(values, &mut rng),
        }
        Ok(model)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn probe_arch(&self) -> Option<&ProbeArch> {
        match &self.net {
            Net::Probe(p) => Some(p),
            Net::Baseline(_) => None,
        }
    }

    pub fn baseline_arch(&self) -> Option<&BaselineArch> {
        match &self.net {
            Net::Baseline(b) => Some(b),
            Net::Probe(_) => None,
        }
    }

    pub fn input_shape(&self) -> (usize, usize) {
        match &self.net {
            Net::Probe(p) => (p.num_layers(), p.hidden_dim()),
            Net::Baseline(b) => (b.num_layers(), b.hidden_dim()),
        }
    }

    pub fn outputs(&self) -> usize {
        self.arch.outputs()
    }

    pub fn has_crf(&self) -> bool {
        self.crf.is_some()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn logits(&self, states: &Matrix) -> Result<Vec<f64>> {
        self.logits_with(self.params.values(), states)
    }

    pub fn logits_with(&self, params: &[f64], states: &Matrix) -> Result<Vec<f64>> {
        match &self.net {
            Net::Probe(p) => p.forward(params, states),
            Net::Baseline(b) => b.forward(params, states),
        }
    }

    pub fn backward_with(&self, params: &[f64], states: &Matrix, d_logits: &[f64], grad: &mut [f64]) -> Result<()> {
        match &self.net {
            Net::Probe(p) => p.backward(params, states, d_logits, grad),
            Net::Baseline(b) => b.backward(params, states, d_logits, grad),
        }
    }

    /// `[T, K]` emissions for a token sequence.
    pub fn emissions_with(&self, params: &[f64], tokens: &[Matrix]) -> Result<Matrix> {
        let k = self.outputs();
        let mut data = Vec::with_capacity(tokens.len() * k);
        for states in tokens {
            data.extend(self.logits_with(params, states)?);
        }
        Matrix::from_vec(tokens.len(), k, data)
    }

    pub fn crf_with(&self, params: &[f64]) -> Option<CrfParams> {
        self.crf.map(|c| CrfParams {
            num_tags: c.tags,
            transitions: params[c.transitions..c.transitions + c.tags * c.tags].to_vec(),
            start: params[c.start..c.start + c.tags].to_vec(),
            end: params[c.end..c.end + c.tags].to_vec(),
        })
    }

    pub fn crf(&self) -> Option<CrfParams> {
        self.crf_with(self.params.values())
    }

    /// Adds CRF parameter gradients into the flat gradient vector.
    pub(crate) fn add_crf_gradient(&self, grad: &mut [f64], start: &[f64], end: &[f64], transitions: &[f64]) {
        if let Some(c) = self.crf {
            let add = |dst: &mut [f64], src: &[f64]| dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            add(&mut grad[c.start..c.start + c.tags], start);
            add(&mut grad[c.end..c.end + c.tags], end);
            add(&mut grad[c.transitions..c.transitions + c.tags * c.tags], transitions);
        }
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: self.params.len(),
                got: values.len(),
            });
        }
        self.params.values_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        let put = |v: u32, buf: &mut Vec<u8>| buf.extend_from_slice(&v.to_le_bytes());
        buf.extend_from_slice(&PROBE_MAGIC);
        let spec_words = match self.arch {
            Architecture::Probe(s) => [0, s.depth as u32, s.comparison.code(), s.aggregation.code(), s.outputs as u32],
            Architecture::Baseline(s) => [1, s.kind.code(), s.depth as u32, s.outputs as u32, 0],
        };
        for w in spec_words {
            put(w, &mut buf);
        }
        let (l, n) = self.input_shape();
        put(l as u32, &mut buf);
        put(n as u32, &mut buf);
        let values = self.params.values();
        let write_tensor = |t: &crate::tensor::ParamTensor, buf: &mut Vec<u8>| {
            buf.extend_from_slice(&t.group.code().to_le_bytes());
            buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                buf.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &values[t.range()] {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        };
        let (crf, net): (Vec<_>, Vec<_>) = self.params.tensors().iter().partition(|t| t.group == ParamGroup::Crf);
        put(net.len() as u32, &mut buf);
        for t in &net {
            write_tensor(t, &mut buf);
        }
        put(u32::from(!crf.is_empty()), &mut buf);
        for t in &crf {
            write_tensor(t, &mut buf);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = Reader { bytes, pos: 0 };
        if reader.take(8)? != PROBE_MAGIC {
            return Err(Error::BadProbeFile("bad magic".into()));
        }
        let w: Vec<u32> = (0..5).map(|_| reader.u32()).collect::<Result<_>>()?;
        let bad_code = |what: &str| Error::BadProbeFile(format!("unknown {what} code"));
        let arch = match w[0] {
            0 => Architecture::Probe(ProbeSpec::new(
                w[1] as usize,
                Comparison::from_code(w[2]).ok_or_else(|| bad_code("comparison"))?,
                Aggregation::from_code(w[3]).ok_or_else(|| bad_code("aggregation"))?,
                w[4] as usize,
            )?),
            1 => Architecture::Baseline(BaselineSpec::new(
                BaselineKind::from_code(w[1]).ok_or_else(|| bad_code("baseline kind"))?,
                w[2] as usize,
                w[3] as usize,
            )?),
            _ => return Err(bad_code("model kind")),
        };
        let l = reader.u32()? as usize;
        let n = reader.u32()? as usize;
        let net_count = reader.u32()? as usize;
        let mut records = Vec::new();
        for _ in 0..net_count {
            records.push(reader.tensor()?);
        }
        let has_crf = match reader.u32()? {
            0 => false,
            1 => true,
            other => return Err(Error::BadProbeFile(format!("CRF flag {other}"))),
        };
        if has_crf {
            for _ in 0..3 {
                records.push(reader.tensor()?);
            }
        }
        if reader.pos != bytes.len() {
            return Err(Error::BadProbeFile(format!("{} trailing bytes", bytes.len() - reader.pos)));
        }
        let mut model = Model::zeroed(arch, l, n, has_crf)?;
        if records.len() != model.params.tensors().len() {
            return Err(Error::BadProbeFile(format!(
                "expected {} tensors, found {}",
                model.params.tensors().len(),
                records.len()
            )));
        }
        let layout = model.params.tensors().to_vec();
        for (t, (group, shape, values)) in layout.iter().zip(records) {
            if t.group != group || t.shape != shape {
                return Err(Error::BadProbeFile(format!("tensor {} has unexpected layout", t.name)));
            }
            model.params.values_mut()[t.range()].copy_from_slice(&values);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::Truncated {
                offset: self.bytes.len() as u64,
                needed: (self.pos + len - self.bytes.len()) as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(ParamGroup, Vec<usize>, Vec<f64>)> {
        let group = ParamGroup::from_code(self.u32()?).ok_or_else(|| Error::BadProbeFile("unknown parameter group".into()))?;
        let rank = self.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let len: usize = shape.iter().product();
        let raw = self.take(4 * len)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect::<Vec<_>>();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadProbeFile("non-finite parameter".into()));
        }
        Ok((group, shape, values))
    }
}
