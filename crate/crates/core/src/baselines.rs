//! Reference classifiers built from the same MLP block as the probe's
//! extractor, with the last map emitting the scores directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::MAX_EXTRACTOR_DEPTH;
use crate::tensor::{Matrix, Mlp, ParamGroup, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    LastLayer,
    MiddleLayer,
    StackedLayers,
    AllLayersEnsemble,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::LastLayer,
        BaselineKind::MiddleLayer,
        BaselineKind::StackedLayers,
        BaselineKind::AllLayersEnsemble,
    ];

    pub fn code(self) -> u32 {
        Self::ALL.iter().position(|k| *k == self).unwrap() as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::LastLayer => "last_layer",
            BaselineKind::MiddleLayer => "middle_layer",
            BaselineKind::StackedLayers => "stacked_layers",
            BaselineKind::AllLayersEnsemble => "all_layers_ensemble",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    pub depth: usize,
    pub outputs: usize,
}

impl BaselineSpec {
    pub fn new(kind: BaselineKind, depth: usize, outputs: usize) -> Result<Self> {
        let spec = Self { kind, depth, outputs };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_EXTRACTOR_DEPTH).contains(&self.depth) {
            return Err(Error::InvalidSpec(format!("baseline depth {} outside 1..=5", self.depth)));
        }
        if self.outputs == 0 {
            return Err(Error::InvalidSpec("output count must be positive".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("d{}-{}", self.depth, self.kind.name())
    }
}

/// Index of the layer used by the middle-layer baseline.
pub fn middle_layer_index(num_layers: usize) -> usize {
    num_layers / 2
}

/// Widths of a baseline MLP: `depth - 1` hidden maps, each halving, then one
/// map to `outputs`. With `first_hidden` set, the first hidden map goes to
/// that width instead of halving.
pub fn mlp_widths(input: usize, depth: usize, outputs: usize, first_hidden: Option<usize>) -> Vec<usize> {
    let mut widths = vec![input];
    for i in 0..depth - 1 {
        let next = match (i, first_hidden) {
            (0, Some(w)) => w,
            _ => widths[widths.len() - 1] / 2,
        };
        widths.push(next);
    }
    widths.push(outputs);
    widths
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Body {
    Single { mlp: Mlp, row: Option<usize> },
    PerLayer { mlps: Vec<Mlp>, combiner: Mlp },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaselineArch {
    spec: BaselineSpec,
    num_layers: usize,
    hidden_dim: usize,
    body: Body,
}

impl BaselineArch {
    pub fn register(spec: BaselineSpec, num_layers: usize, hidden_dim: usize, store: &mut ParamStore) -> Result<Self> {
        spec.validate()?;
        if num_layers == 0 || hidden_dim == 0 {
            return Err(Error::InvalidSpec("baseline input must be non-empty".into()));
        }
        let (d, k) = (spec.depth, spec.outputs);
        let check = |widths: Vec<usize>| -> Result<Vec<usize>> {
            if widths.contains(&0) {
                Err(Error::InvalidSpec(format!("baseline widths {widths:?} collapse to zero")))
            } else {
                Ok(widths)
            }
        };
        let split = |store: &mut ParamStore, name: &str, widths: &[usize]| {
            Mlp::register_split(store, name, ParamGroup::Extractor, ParamGroup::Aggregation, widths)
        };
        let body = match spec.kind {
            BaselineKind::LastLayer | BaselineKind::MiddleLayer => {
                let row = if spec.kind == BaselineKind::LastLayer {
                    num_layers - 1
                } else {
                    middle_layer_index(num_layers)
                };
                let widths = check(mlp_widths(hidden_dim, d, k, None))?;
                Body::Single {
                    mlp: split(store, "baseline", &widths),
                    row: Some(row),
                }
            }
            BaselineKind::StackedLayers => {
                // deep stacked variants map to the embedding size first instead of halving
                let first = (d > 2).then_some(hidden_dim);
                let widths = check(mlp_widths(num_layers * hidden_dim, d, k, first))?;
                Body::Single {
                    mlp: split(store, "baseline", &widths),
                    row: None,
                }
            }
            BaselineKind::AllLayersEnsemble => {
                let widths = check(mlp_widths(hidden_dim, d, 1, None))?;
                let mlps = (0..num_layers).map(|l| split(store, &format!("baseline.layer{l}"), &widths)).collect();
                let combiner = Mlp::register(store, "baseline.combiner", ParamGroup::Aggregation, &[num_layers, k], false);
                Body::PerLayer { mlps, combiner }
            }
        };
        Ok(Self {
            spec,
            num_layers,
            hidden_dim,
            body,
        })
    }

    pub fn spec(&self) -> &BaselineSpec {
        &self.spec
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Widths of the (first) MLP, input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mlp = match &self.body {
            Body::Single { mlp, .. } => mlp,
            Body::PerLayer { mlps, .. } => &mlps[0],
        };
        let mut w = vec![mlp.input_dim()];
        w.extend(mlp.maps().iter().map(|m| m.output));
        w
    }

    pub fn init<R: rand::Rng>(&self, params: &mut [f64], rng: &mut R) {
        match &self.body {
            Body::Single { mlp, .. } => mlp.init_uniform(params, rng),
            Body::PerLayer { mlps, combiner } => {
                for m in mlps {
                    m.init_uniform(params, rng);
                }
                combiner.init_uniform(params, rng);
            }
        }
    }

    fn check_states(&self, states: &Matrix) -> Result<()> {
        if states.shape() != (self.num_layers, self.hidden_dim) {
            return Err(Error::DimensionMismatch {
                context: "baseline input",
                expected: self.num_layers * self.hidden_dim,
                got: states.rows() * states.cols(),
            });
        }
        if !states.is_finite() {
            return Err(Error::NonFinite("baseline input"));
        }
        Ok(())
    }

    fn input(states: &Matrix, row: Option<usize>) -> &[f64] {
        match row {
            Some(r) => states.row(r),
            None => states.as_slice(),
        }
    }

    pub fn forward(&self, params: &[f64], states: &Matrix) -> Result<Vec<f64>> {
        self.check_states(states)?;
        Ok(match &self.body {
            Body::Single { mlp, row } => mlp.forward(params, Self::input(states, *row)),
            Body::PerLayer { mlps, combiner } => {
                let scores: Vec<f64> = mlps.iter().enumerate().map(|(l, m)| m.forward(params, states.row(l))[0]).collect();
                combiner.forward(params, &scores)
            }
        })
    }

    pub fn backward(&self, params: &[f64], states: &Matrix, d_logits: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_states(states)?;
        match &self.body {
            Body::Single { mlp, row } => {
                let trace = mlp.forward_trace(params, Self::input(states, *row));
                mlp.backward(params, &trace, d_logits, grad, false);
            }
            Body::PerLayer { mlps, combiner } => {
                let traces: Vec<Vec<Vec<f64>>> = mlps.iter().enumerate().map(|(l, m)| m.forward_trace(params, states.row(l))).collect();
                let scores: Vec<f64> = traces.iter().map(|t| t.last().unwrap()[0]).collect();
                let comb_trace = combiner.forward_trace(params, &scores);
                let d_scores = combiner.backward(params, &comb_trace, d_logits, grad, true).unwrap();
                for ((m, t), ds) in mlps.iter().zip(&traces).zip(&d_scores) {
                    m.backward(params, t, &[*ds], grad, false);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn build(kind: BaselineKind, depth: usize, l: usize, n: usize) -> (BaselineArch, ParamStore) {
        let mut store = ParamStore::new();
        let arch = BaselineArch::register(BaselineSpec::new(kind, depth, 1).unwrap(), l, n, &mut store).unwrap();
        arch.init(store.values_mut(), &mut ChaCha8Rng::seed_from_u64(4));
        (arch, store)
    }

    fn random_states(l: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(l, n, (0..l * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn stacked_deep_widths_follow_embedding_override() {
        assert_eq!(mlp_widths(32 * 4096, 3, 1, Some(4096)), vec![131072, 4096, 2048, 1]);
        assert_eq!(mlp_widths(8, 2, 1, None), vec![8, 4, 1]);
        let (arch, _) = build(BaselineKind::StackedLayers, 3, 4, 8);
        assert_eq!(arch.widths(), vec![32, 8, 4, 1]);
        let (arch, _) = build(BaselineKind::StackedLayers, 2, 4, 8);
        assert_eq!(arch.widths(), vec![32, 16, 1]);
    }

    #[test]
    fn middle_layer_rounds_down() {
        assert_eq!(middle_layer_index(32), 16);
        assert_eq!(middle_layer_index(3), 1);
    }

    #[test]
    fn single_row_baselines_ignore_other_rows() {
        for (kind, keep) in [(BaselineKind::LastLayer, 2), (BaselineKind::MiddleLayer, 1)] {
            let (arch, store) = build(kind, 2, 3, 6);
            let states = random_states(3, 6, 1);
            let base = arch.forward(store.values(), &states).unwrap();
            let mut perturbed = random_states(3, 6, 2);
            perturbed.row_mut(keep).copy_from_slice(states.row(keep));
            assert_eq!(arch.forward(store.values(), &perturbed).unwrap(), base);
        }
    }

    #[test]
    fn ensemble_with_identical_members_averages() {
        let (arch, mut store) = build(BaselineKind::AllLayersEnsemble, 2, 3, 4);
        // copy layer 0's parameters into the other layer MLPs
        let tensors = store.tensors().to_vec();
        let layer0: Vec<_> = tensors.iter().filter(|t| t.name.starts_with("baseline.layer0.")).cloned().collect();
        for l in 1..3 {
            for t in &layer0 {
                let name = t.name.replace("layer0", &format!("layer{l}"));
                let dst = tensors.iter().find(|u| u.name == name).unwrap();
                let src: Vec<f64> = store.values()[t.range()].to_vec();
                store.values_mut()[dst.range()].copy_from_slice(&src);
            }
        }
        let comb = tensors.iter().find(|t| t.name == "baseline.combiner.0.weight").unwrap();
        store.values_mut()[comb.range()].iter_mut().for_each(|w| *w = 1.0 / 3.0);
        let bias = tensors.iter().find(|t| t.name == "baseline.combiner.0.bias").unwrap().offset;
        store.values_mut()[bias] = 0.25;
        // every row identical, so every member emits the same score
        let row = [0.3, -0.2, 0.8, 0.1];
        let states = Matrix::from_rows(&[row.to_vec(), row.to_vec(), row.to_vec()]).unwrap();
        let single = {
            let mut s = ParamStore::new();
            let a = BaselineArch::register(BaselineSpec::new(BaselineKind::LastLayer, 2, 1).unwrap(), 1, 4, &mut s).unwrap();
            for (i, t) in layer0.iter().enumerate() {
                let dst = s.tensors()[i].range();
                let src: Vec<f64> = store.values()[t.range()].to_vec();
                s.values_mut()[dst].copy_from_slice(&src);
            }
            a.forward(s.values(), &Matrix::from_rows(&[row.to_vec()]).unwrap()).unwrap()[0]
        };
        let out = arch.forward(store.values(), &states).unwrap()[0];
        assert!((out - (single + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn groups_split_hidden_and_output_maps() {
        let (_, store) = build(BaselineKind::LastLayer, 3, 2, 8);
        let groups: Vec<_> = store.tensors().iter().map(|t| (t.name.as_str(), t.group)).collect();
        assert_eq!(groups[0], ("baseline.0.weight", ParamGroup::Extractor));
        assert_eq!(groups[5], ("baseline.2.bias", ParamGroup::Aggregation));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for kind in BaselineKind::ALL {
            let (arch, store) = build(kind, 2, 3, 4);
            let states = random_states(3, 4, 9);
            let mut grad = vec![0.0; store.len()];
            arch.backward(store.values(), &states, &[1.0], &mut grad).unwrap();
            let h = 1e-6;
            for i in 0..store.len() {
                let mut p = store.values().to_vec();
                p[i] += h;
                let up = arch.forward(&p, &states).unwrap()[0];
                p[i] -= 2.0 * h;
                let down = arch.forward(&p, &states).unwrap()[0];
                let numeric = (up - down) / (2.0 * h);
                assert!((numeric - grad[i]).abs() < 1e-6, "{kind:?} param {i}");
            }
        }
    }
}
