//! Minimal differentiable-operations core: dense row-major matrices, a
//! reverse-mode tape covering the layers the models need, Adam, gradient
//! clipping and a finite-difference gradient checker.

mod gradcheck;
mod optim;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{clip_gradients, Adam, AdamConfig};
pub use tape::{NodeId, PoolMode, Tape};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense row-major matrix of f64. Vectors are 1 x n or n x 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend(row);
        }
        Tensor { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Kaiming-style uniform init scaled by fan-in.
    pub fn kaiming(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Self {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
        Tensor { rows, cols, data }
    }
}

pub type ParamId = usize;

#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Named parameter store shared by the model forward passes, the
/// optimizer, and checkpointing.
#[derive(Debug, Clone, Default)]
pub struct ModelState {
    params: Vec<ParamTensor>,
    by_name: HashMap<String, ParamId>,
}

impl ModelState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.rows, value.cols);
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(ParamTensor { name, value, grad, trainable });
        id
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data.fill(0.0);
        }
    }

    pub fn trainable_element_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        for p in &self.params {
            if !p.value.all_finite() {
                return Err(Error::NonFinite(format!("parameter {}", p.name)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_roundtrip_by_name() {
        let mut state = ModelState::new();
        let id = state.add("w", Tensor::zeros(2, 3), true);
        assert_eq!(state.id_of("w"), Some(id));
        assert_eq!(state.get(id).value.rows, 2);
        assert!(state.id_of("nope").is_none());
    }

    #[test]
    fn kaiming_bound_respected() {
        let mut rng = Rng::seed_from(1);
        let t = Tensor::kaiming(10, 10, 25, &mut rng);
        let bound = (1.0_f64 / 25.0).sqrt();
        assert!(t.data.iter().all(|v| v.abs() <= bound));
    }
}
