//! The layer-comparison probe: a shared dimension-halving extractor applied
//! to every layer's hidden state, a comparison of the resulting encodings and
//! an aggregation head producing logits.

mod compare;

pub use compare::{compare, Comparison, COSINE_ZERO_NORM};
pub(crate) use compare::compare_backward;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Mlp, ParamGroup, ParamStore};

pub const MAX_EXTRACTOR_DEPTH: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    FlatLinear,
    FlatNonlinear,
    EnsembleLinear,
    EnsembleNonlinear,
}

impl Aggregation {
    pub const ALL: [Aggregation; 4] = [
        Aggregation::FlatLinear,
        Aggregation::FlatNonlinear,
        Aggregation::EnsembleLinear,
        Aggregation::EnsembleNonlinear,
    ];

    pub fn is_ensemble(self) -> bool {
        matches!(self, Aggregation::EnsembleLinear | Aggregation::EnsembleNonlinear)
    }

    pub fn is_nonlinear(self) -> bool {
        matches!(self, Aggregation::FlatNonlinear | Aggregation::EnsembleNonlinear)
    }

    pub fn code(self) -> u32 {
        Self::ALL.iter().position(|a| *a == self).unwrap() as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::FlatLinear => "flat_linear",
            Aggregation::FlatNonlinear => "flat_nonlinear",
            Aggregation::EnsembleLinear => "ensemble_linear",
            Aggregation::EnsembleNonlinear => "ensemble_nonlinear",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub depth: usize,
    pub comparison: Comparison,
    pub aggregation: Aggregation,
    pub outputs: usize,
}

impl ProbeSpec {
    pub fn new(depth: usize, comparison: Comparison, aggregation: Aggregation, outputs: usize) -> Result<Self> {
        let spec = Self {
            depth,
            comparison,
            aggregation,
            outputs,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_EXTRACTOR_DEPTH).contains(&self.depth) {
            return Err(Error::InvalidSpec(format!("extractor depth {} outside 1..=5", self.depth)));
        }
        if self.outputs == 0 {
            return Err(Error::InvalidSpec("output count must be positive".into()));
        }
        if self.aggregation.is_ensemble() && self.comparison.is_scalar() {
            return Err(Error::InvalidSpec(format!(
                "{} yields one scalar per layer and cannot feed {}",
                self.comparison.name(),
                self.aggregation.name()
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("d{}-{}-{}", self.depth, self.comparison.name(), self.aggregation.name())
    }
}

/// Width after `depth` halvings (floor at each step).
pub fn halved(width: usize, depth: usize) -> usize {
    (0..depth).fold(width, |w, _| w / 2)
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Head {
    Flat(Mlp),
    Ensemble { shared: Mlp, combiner: Mlp },
}

/// Parameter layout of a probe for a fixed input shape `[L, N]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbeArch {
    spec: ProbeSpec,
    num_layers: usize,
    hidden_dim: usize,
    extractor: Mlp,
    head: Head,
}

fn classifier_widths(input: usize, nonlinear: bool, output: usize) -> Vec<usize> {
    if nonlinear {
        vec![input, (input / 2).max(1), output]
    } else {
        vec![input, output]
    }
}

impl ProbeArch {
    /// Lays out all tensors of the probe in `store`, in order: extractor maps,
    /// then the aggregation head.
    pub fn register(spec: ProbeSpec, num_layers: usize, hidden_dim: usize, store: &mut ParamStore) -> Result<Self> {
        spec.validate()?;
        if num_layers == 0 {
            return Err(Error::InvalidSpec("probe needs at least one layer".into()));
        }
        let encoded = halved(hidden_dim, spec.depth);
        if encoded == 0 {
            return Err(Error::InvalidSpec(format!(
                "hidden size {hidden_dim} cannot be halved {} times",
                spec.depth
            )));
        }
        let widths: Vec<usize> = (0..=spec.depth).map(|i| halved(hidden_dim, i)).collect();
        let extractor = Mlp::register(store, "extractor", ParamGroup::Extractor, &widths, true);
        let (rows, cols) = spec.comparison.output_shape(num_layers, encoded);
        let nonlinear = spec.aggregation.is_nonlinear();
        let head = if spec.aggregation.is_ensemble() {
            if cols <= 1 {
                return Err(Error::InvalidSpec(format!(
                    "ensemble aggregation needs per-layer rows wider than 1, got [{rows}, {cols}]"
                )));
            }
            let shared = Mlp::register(store, "aggregation.shared", ParamGroup::Aggregation, &classifier_widths(cols, nonlinear, 1), false);
            let combiner = Mlp::register(store, "aggregation.combiner", ParamGroup::Aggregation, &[rows, spec.outputs], false);
            Head::Ensemble { shared, combiner }
        } else {
            Head::Flat(Mlp::register(
                store,
                "aggregation.head",
                ParamGroup::Aggregation,
                &classifier_widths(rows * cols, nonlinear, spec.outputs),
                false,
            ))
        };
        Ok(Self {
            spec,
            num_layers,
            hidden_dim,
            extractor,
            head,
        })
    }

    pub fn spec(&self) -> &ProbeSpec {
        &self.spec
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn encoded_dim(&self) -> usize {
        self.extractor.output_dim()
    }

    pub fn comparison_shape(&self) -> (usize, usize) {
        self.spec.comparison.output_shape(self.num_layers, self.encoded_dim())
    }

    pub fn extractor(&self) -> &Mlp {
        &self.extractor
    }

    /// The first affine map of a flattened head, `None` for ensembles.
    pub fn flat_head(&self) -> Option<&Mlp> {
        match &self.head {
            Head::Flat(mlp) => Some(mlp),
            Head::Ensemble { .. } => None,
        }
    }

    pub fn init<R: rand::Rng>(&self, params: &mut [f64], rng: &mut R) {
        self.extractor.init_uniform(params, rng);
        match &self.head {
            Head::Flat(mlp) => mlp.init_uniform(params, rng),
            Head::Ensemble { shared, combiner } => {
                shared.init_uniform(params, rng);
                combiner.init_uniform(params, rng);
            }
        }
    }

    fn check_states(&self, states: &Matrix) -> Result<()> {
        if states.rows() != self.num_layers {
            return Err(Error::DimensionMismatch {
                context: "probe input layers",
                expected: self.num_layers,
                got: states.rows(),
            });
        }
        if states.cols() != self.hidden_dim {
            return Err(Error::DimensionMismatch {
                context: "probe input hidden size",
                expected: self.hidden_dim,
                got: states.cols(),
            });
        }
        if !states.is_finite() {
            return Err(Error::NonFinite("probe input"));
        }
        Ok(())
    }

    pub fn extract_features(&self, params: &[f64], states: &Matrix) -> Result<Matrix> {
        self.check_states(states)?;
        let width = self.encoded_dim();
        let mut data = Vec::with_capacity(self.num_layers * width);
        for l in 0..self.num_layers {
            data.extend(self.extractor.forward(params, states.row(l)));
        }
        Matrix::from_vec(self.num_layers, width, data)
    }

    pub fn aggregate(&self, params: &[f64], comparison: &Matrix) -> Result<Vec<f64>> {
        let expected = self.comparison_shape();
        if comparison.shape() != expected {
            return Err(Error::DimensionMismatch {
                context: "aggregation input",
                expected: expected.0 * expected.1,
                got: comparison.rows() * comparison.cols(),
            });
        }
        Ok(match &self.head {
            Head::Flat(mlp) => mlp.forward(params, comparison.as_slice()),
            Head::Ensemble { shared, combiner } => {
                let scores: Vec<f64> = (0..comparison.rows()).map(|l| shared.forward(params, comparison.row(l))[0]).collect();
                combiner.forward(params, &scores)
            }
        })
    }

    pub fn forward(&self, params: &[f64], states: &Matrix) -> Result<Vec<f64>> {
        let enc = self.extract_features(params, states)?;
        let cmp = compare(&enc, self.spec.comparison)?;
        self.aggregate(params, &cmp)
    }

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logits).
    pub fn backward(&self, params: &[f64], states: &Matrix, d_logits: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_states(states)?;
        let traces: Vec<Vec<Vec<f64>>> = (0..self.num_layers).map(|l| self.extractor.forward_trace(params, states.row(l))).collect();
        let width = self.encoded_dim();
        let mut enc = Matrix::zeros(self.num_layers, width);
        for (l, t) in traces.iter().enumerate() {
            enc.row_mut(l).copy_from_slice(t.last().unwrap());
        }
        let cmp = compare(&enc, self.spec.comparison)?;
        let (rows, cols) = cmp.shape();
        let d_cmp = match &self.head {
            Head::Flat(mlp) => {
                let trace = mlp.forward_trace(params, cmp.as_slice());
                let dx = mlp.backward(params, &trace, d_logits, grad, true).unwrap();
                Matrix::from_vec(rows, cols, dx)?
            }
            Head::Ensemble { shared, combiner } => {
                let row_traces: Vec<Vec<Vec<f64>>> = (0..rows).map(|l| shared.forward_trace(params, cmp.row(l))).collect();
                let scores: Vec<f64> = row_traces.iter().map(|t| t.last().unwrap()[0]).collect();
                let comb_trace = combiner.forward_trace(params, &scores);
                let d_scores = combiner.backward(params, &comb_trace, d_logits, grad, true).unwrap();
                let mut d = Matrix::zeros(rows, cols);
                for (l, t) in row_traces.iter().enumerate() {
                    let dr = shared.backward(params, t, &[d_scores[l]], grad, true).unwrap();
                    d.row_mut(l).copy_from_slice(&dr);
                }
                d
            }
        };
        let d_enc = compare_backward(&enc, self.spec.comparison, &d_cmp);
        for (l, t) in traces.iter().enumerate() {
            self.extractor.backward(params, t, d_enc.row(l), grad, false);
        }
        Ok(())
    }
}

/// A probe layout together with its parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    arch: ProbeArch,
    params: ParamStore,
}

impl Probe {
    /// Builds a probe with seeded uniform initialization.
    pub fn new(spec: ProbeSpec, num_layers: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        let mut probe = Self::zeroed(spec, num_layers, hidden_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        probe.arch.init(probe.params.values_mut(), &mut rng);
        Ok(probe)
    }

    pub fn zeroed(spec: ProbeSpec, num_layers: usize, hidden_dim: usize) -> Result<Self> {
        let mut params = ParamStore::new();
        let arch = ProbeArch::register(spec, num_layers, hidden_dim, &mut params)?;
        Ok(Self { arch, params })
    }

    pub fn from_parts(arch: ProbeArch, params: ParamStore) -> Self {
        Self { arch, params }
    }

    pub fn arch(&self) -> &ProbeArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn extract_features(&self, states: &Matrix) -> Result<Matrix> {
        self.arch.extract_features(self.params.values(), states)
    }

    pub fn aggregate(&self, comparison: &Matrix) -> Result<Vec<f64>> {
        self.arch.aggregate(self.params.values(), comparison)
    }

    pub fn forward(&self, states: &Matrix) -> Result<Vec<f64>> {
        self.arch.forward(self.params.values(), states)
    }
}

/// Binary decision for a single logit: positive iff strictly above zero.
pub fn decide(logit: f64) -> bool {
    logit > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_states(l: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(l, n, (0..l * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn halving_widths() {
        let spec = ProbeSpec::new(1, Comparison::None, Aggregation::FlatLinear, 1).unwrap();
        let p = Probe::new(spec, 2, 4, 0).unwrap();
        assert_eq!(p.extract_features(&random_states(2, 4, 1)).unwrap().shape(), (2, 2));
        let spec = ProbeSpec::new(2, Comparison::Cosine, Aggregation::FlatLinear, 1).unwrap();
        let arch = ProbeArch::register(spec, 32, 4096, &mut ParamStore::new()).unwrap();
        assert_eq!(arch.encoded_dim(), 1024);
        assert_eq!(halved(7, 1), 3);
        assert!(Probe::zeroed(ProbeSpec::new(3, Comparison::None, Aggregation::FlatLinear, 1).unwrap(), 2, 4).is_err());
    }

    #[test]
    fn zero_params_give_zero_features_and_logits() {
        let spec = ProbeSpec::new(2, Comparison::Cosine, Aggregation::FlatNonlinear, 1).unwrap();
        let p = Probe::zeroed(spec, 3, 8).unwrap();
        let states = random_states(3, 8, 2);
        assert!(p.extract_features(&states).unwrap().as_slice().iter().all(|v| *v == 0.0));
        let logits = p.forward(&states).unwrap();
        assert_eq!(logits, vec![0.0]);
        assert!(!decide(logits[0]));
    }

    #[test]
    fn spec_rejects_scalar_comparison_in_ensemble() {
        for c in [Comparison::DotSelf, Comparison::EuclideanNorm, Comparison::ManhattanNorm] {
            assert!(ProbeSpec::new(1, c, Aggregation::EnsembleLinear, 1).is_err());
            assert!(ProbeSpec::new(1, c, Aggregation::FlatLinear, 1).is_ok());
        }
        assert!(ProbeSpec::new(0, Comparison::None, Aggregation::FlatLinear, 1).is_err());
        assert!(ProbeSpec::new(6, Comparison::None, Aggregation::FlatLinear, 1).is_err());
    }

    #[test]
    fn flat_head_input_length_is_l_squared_for_cosine() {
        let spec = ProbeSpec::new(1, Comparison::Cosine, Aggregation::FlatLinear, 3).unwrap();
        let arch = ProbeArch::register(spec, 32, 64, &mut ParamStore::new()).unwrap();
        let head = arch.flat_head().unwrap();
        assert_eq!(head.input_dim(), 32 * 32);
        assert_eq!(head.output_dim(), 3);
    }

    #[test]
    fn forward_is_composition_and_deterministic() {
        for agg in Aggregation::ALL {
            let spec = ProbeSpec::new(1, Comparison::EuclideanDistance, agg, 2).unwrap();
            let p = Probe::new(spec, 3, 6, 11).unwrap();
            let s = random_states(3, 6, 5);
            let composed = p.aggregate(&compare(&p.extract_features(&s).unwrap(), Comparison::EuclideanDistance).unwrap()).unwrap();
            let direct = p.forward(&s).unwrap();
            assert_eq!(composed, direct);
            assert_eq!(p.forward(&s).unwrap(), direct);
        }
    }

    #[test]
    fn decide_threshold() {
        assert!(decide(0.5));
        assert!(!decide(0.0));
        assert!(!decide(-1e-9));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = ProbeSpec::new(1, Comparison::None, Aggregation::FlatLinear, 1).unwrap();
        let p = Probe::new(spec, 2, 4, 0).unwrap();
        assert!(matches!(p.forward(&Matrix::zeros(2, 6)), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(p.forward(&Matrix::zeros(3, 4)), Err(Error::DimensionMismatch { .. })));
        assert!(p.aggregate(&Matrix::zeros(2, 3)).is_err());
    }
}
