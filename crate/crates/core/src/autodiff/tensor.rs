use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::AutodiffError;

/// Numeric precision of forward values on a tape.
///
/// `Single` quantizes every computed value through `f32`; `Double` keeps
/// full `f64`. Gradient checking always runs in `Double`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    #[inline]
    pub(crate) fn quantize(self, v: f64) -> f64 {
        match self {
            Precision::Single => v as f32 as f64,
            Precision::Double => v,
        }
    }

    pub(crate) fn quantize_all(self, values: &mut [f64]) {
        if self == Precision::Single {
            for v in values.iter_mut() {
                *v = self.quantize(*v);
            }
        }
    }
}

/// A dense tensor with an immutable shape and a lazily allocated
/// gradient buffer.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor, checking that the value count matches the shape.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, AutodiffError> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(AutodiffError::LengthMismatch {
                shape,
                values: values.len(),
            });
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
            requires_grad: false,
            grad: None,
        }
    }

    /// Row-major matrix.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, AutodiffError> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values are mutable (optimizers update them in place); the shape is not.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Accumulate into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.values.len());
        match &mut self.grad {
            Some(buf) => {
                for (b, x) in buf.iter_mut().zip(g) {
                    *b += x;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub(crate) fn accumulate_grad_rows(&mut self, row: usize, dim: usize, g: &[f64]) {
        let buf = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.values.len()]);
        for (b, x) in buf[row * dim..(row + 1) * dim].iter_mut().zip(g) {
            *b += x;
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }
}

/// Identifier of a parameter slot in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Dense index in registration order.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, trainable (or frozen) parameter tensors shared by a model and its
/// optimizer. A tape registers parameters as leaves per instance and
/// [`super::Tape::export_grads`] accumulates leaf gradients back into the
/// store after `backward`.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<ParamId, AutodiffError> {
        if self.index.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.to_string()));
        }
        let id = self.entries.len();
        self.index.insert(name.to_string(), id);
        self.entries.push((name.to_string(), tensor));
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].1.requires_grad())
            .map(ParamId)
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.clear_grad();
        }
    }

    /// Overwrite every parameter value with zero. Used by tests that pin
    /// down the uniform-output behaviour of freshly zeroed models.
    pub fn set_all_zero(&mut self) {
        for (_, t) in &mut self.entries {
            for v in t.values_mut() {
                *v = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_length_mismatch() {
        let err = Tensor::new(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, AutodiffError::LengthMismatch { .. }));
    }

    #[test]
    fn grad_accumulates_lazily() {
        let mut t = Tensor::vector(vec![1.0, 2.0]);
        assert!(t.grad().is_none());
        t.accumulate_grad(&[0.5, 0.5]);
        t.accumulate_grad(&[0.5, 1.0]);
        assert_eq!(t.grad().unwrap(), &[1.0, 1.5]);
    }

    #[test]
    fn store_rejects_duplicate_names() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0)).unwrap();
        assert!(store.add("w", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn single_precision_quantizes() {
        let exact = 0.1f64; // not representable in f32
        assert_ne!(Precision::Single.quantize(exact), exact);
        assert_eq!(Precision::Double.quantize(exact), exact);
    }
}
