//! Dense row-major matrices, the flat parameter store and the affine / MLP
//! building blocks shared by probes and baselines.
//!
//! Every learnable tensor lives in one contiguous `Vec<f64>` owned by a
//! [`ParamStore`]. Layers only hold offsets into it, so gradients and optimizer
//! moments can be kept in vectors of the same layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "matrix row",
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    /// Row-major view, which is also the flatten order used by aggregation.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Which module a parameter tensor belongs to. Freezing works on groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Extractor,
    Aggregation,
    Crf,
}

impl ParamGroup {
    pub fn code(self) -> u32 {
        match self {
            ParamGroup::Extractor => 0,
            ParamGroup::Aggregation => 1,
            ParamGroup::Crf => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ParamGroup::Extractor),
            1 => Some(ParamGroup::Aggregation),
            2 => Some(ParamGroup::Crf),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamTensor {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// All learnable values of a model, partitioned into named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a zero-filled tensor and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, group: ParamGroup, shape: &[usize]) -> usize {
        let offset = self.values.len();
        let tensor = ParamTensor {
            name: name.into(),
            group,
            shape: shape.to_vec(),
            offset,
        };
        self.values.resize(offset + tensor.len(), 0.0);
        self.tensors.push(tensor);
        offset
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.values[t.range()])
    }

    pub fn group_values(&self, group: ParamGroup) -> Vec<f64> {
        self.tensors
            .iter()
            .filter(|t| t.group == group)
            .flat_map(|t| self.values[t.range()].iter().copied())
            .collect()
    }

    /// Per-value mask, `true` where the value belongs to one of `groups`.
    pub fn mask_for(&self, groups: &[ParamGroup]) -> Vec<bool> {
        let mut mask = vec![false; self.values.len()];
        for t in self.tensors.iter().filter(|t| groups.contains(&t.group)) {
            mask[t.range()].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    /// Name of the tensor that owns flat index `index`.
    pub fn owner_of(&self, index: usize) -> Option<&str> {
        self.tensors
            .iter()
            .find(|t| t.range().contains(&index))
            .map(|t| t.name.as_str())
    }
}

/// Offsets of one affine map `y = W x + b` inside a [`ParamStore`].
/// `W` is stored row-major with shape `[output, input]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Affine {
    pub input: usize,
    pub output: usize,
    weight: usize,
    bias: usize,
}

impl Affine {
    pub fn register(store: &mut ParamStore, name: &str, group: ParamGroup, input: usize, output: usize) -> Self {
        let weight = store.push(format!("{name}.weight"), group, &[output, input]);
        let bias = store.push(format!("{name}.bias"), group, &[output]);
        Self {
            input,
            output,
            weight,
            bias,
        }
    }

    pub fn weight<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.weight..self.weight + self.input * self.output]
    }

    pub fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.bias..self.bias + self.output]
    }

    pub fn weight_offset(&self) -> usize {
        self.weight
    }

    /// Uniform in ±1/sqrt(fan_in) for weights and biases.
    pub fn init_uniform<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        let bound = 1.0 / (self.input as f64).sqrt();
        for v in &mut params[self.weight..self.weight + self.input * self.output] {
            *v = rng.gen_range(-bound..=bound);
        }
        for v in &mut params[self.bias..self.bias + self.output] {
            *v = rng.gen_range(-bound..=bound);
        }
    }

    pub fn apply(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input);
        let w = self.weight(params);
        self.bias(params)
            .iter()
            .enumerate()
            .map(|(o, b)| b + dot(&w[o * self.input..(o + 1) * self.input], x))
            .collect()
    }

    /// Accumulates dW and db into `grad`; returns dx when requested.
    pub fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], want_dx: bool) -> Option<Vec<f64>> {
        let w = self.weight(params);
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut grad[self.weight + o * self.input..self.weight + (o + 1) * self.input];
            for (r, xi) in row.iter_mut().zip(x) {
                *r += g * xi;
            }
            grad[self.bias + o] += g;
        }
        want_dx.then(|| {
            let mut dx = vec![0.0; self.input];
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (d, wi) in dx.iter_mut().zip(&w[o * self.input..(o + 1) * self.input]) {
                    *d += g * wi;
                }
            }
            dx
        })
    }
}

/// A stack of affine maps with ReLU between them; `relu_last` also applies
/// ReLU after the final map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    maps: Vec<Affine>,
    relu_last: bool,
}

impl Mlp {
    /// Registers one affine map per consecutive pair in `widths`.
    pub fn register(store: &mut ParamStore, name: &str, group: ParamGroup, widths: &[usize], relu_last: bool) -> Self {
        let maps = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Affine::register(store, &format!("{name}.{i}"), group, w[0], w[1]))
            .collect();
        Self { maps, relu_last }
    }

    /// Same as [`Mlp::register`] but the last map goes to a different group.
    pub fn register_split(
        store: &mut ParamStore,
        name: &str,
        hidden_group: ParamGroup,
        last_group: ParamGroup,
        widths: &[usize],
    ) -> Self {
        let n = widths.len() - 1;
        let maps = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let group = if i + 1 == n { last_group } else { hidden_group };
                Affine::register(store, &format!("{name}.{i}"), group, w[0], w[1])
            })
            .collect();
        Self { maps, relu_last: false }
    }

    pub fn maps(&self) -> &[Affine] {
        &self.maps
    }

    pub fn input_dim(&self) -> usize {
        self.maps[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.maps[self.maps.len() - 1].output
    }

    pub fn init_uniform<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        for m in &self.maps {
            m.init_uniform(params, rng);
        }
    }

    fn activated(&self, i: usize) -> bool {
        i + 1 < self.maps.len() || self.relu_last
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (i, m) in self.maps.iter().enumerate() {
            a = m.apply(params, &a);
            if self.activated(i) {
                relu_in_place(&mut a);
            }
        }
        a
    }

    /// Input followed by the (post-activation) output of every map.
    pub fn forward_trace(&self, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut trace = Vec::with_capacity(self.maps.len() + 1);
        trace.push(x.to_vec());
        for (i, m) in self.maps.iter().enumerate() {
            let mut a = m.apply(params, &trace[i]);
            if self.activated(i) {
                relu_in_place(&mut a);
            }
            trace.push(a);
        }
        trace
    }

    /// Backpropagates `dout` through a trace produced by `forward_trace`.
    pub fn backward(&self, params: &[f64], trace: &[Vec<f64>], dout: &[f64], grad: &mut [f64], want_dx: bool) -> Option<Vec<f64>> {
        let mut delta = dout.to_vec();
        for i in (0..self.maps.len()).rev() {
            if self.activated(i) {
                // relu(z) > 0 exactly when z > 0
                for (d, a) in delta.iter_mut().zip(&trace[i + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let need = i > 0 || want_dx;
            {
                let dx = self.maps[i].backward(params, &trace[i], &delta, grad, need)?;
                delta = dx
            }
        }
        Some(delta)
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}
