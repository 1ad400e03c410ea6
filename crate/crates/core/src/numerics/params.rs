use serde::{Deserialize, Serialize};

use super::Matrix;

/// A trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    #[serde(skip, default)]
    pub gradient: Option<Matrix>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        Self {
            name: name.into(),
            value,
            gradient: None,
        }
    }

    pub fn filled(name: impl Into<String>, rows: usize, cols: usize, v: f64) -> Self {
        Self::new(name, Matrix::filled(rows, cols, v))
    }

    /// Gradient, materialising zeros on first access.
    pub fn grad_mut(&mut self) -> &mut Matrix {
        let (r, c) = self.value.shape();
        self.gradient.get_or_insert_with(|| Matrix::zeros(r, c))
    }

    pub fn grad(&self) -> Matrix {
        self.gradient
            .clone()
            .unwrap_or_else(|| Matrix::zeros(self.value.rows(), self.value.cols()))
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.gradient {
            g.fill(0.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Flat, ordered collection of every trainable parameter of a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Scales every accumulated gradient, e.g. to average over a micro-batch.
    pub fn scale_grads(&mut self, s: f64) {
        for p in &mut self.params {
            if let Some(g) = &mut p.gradient {
                g.scale_in_place(s);
            }
        }
    }

    /// Structural equality of names and shapes, ignoring values.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }
}
