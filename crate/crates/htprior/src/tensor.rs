//! Dense rank-≤4 tensors of `f32` and named, optimizable parameters.
//!
//! Tensors are flat row-major buffers with shape metadata. They are immutable
//! once produced by an op; only [`Parameter`]s mutate, and only inside the
//! optimizer step.

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

/// Dense row-major array of 32-bit reals, rank 0 (scalar) through 4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    /// Populated by the backward sweep for gradient-carrying tensors.
    pub grad: Option<Vec<f32>>,
}

impl Tensor {
    /// Builds a tensor from a flat row-major buffer.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        if shape.len() > MAX_RANK {
            return Err(Error::Config(format!(
                "tensor rank {} exceeds maximum {MAX_RANK}",
                shape.len()
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Config(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; numel]).expect("consistent by construction")
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    /// Scalar value of a rank-0 or single-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// True if every element is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A learnable tensor with a unique name and Adam moment buffers.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, mut value: Tensor) -> Parameter {
        value.set_requires_grad(true);
        let n = value.numel();
        Parameter {
            name: name.into(),
            value,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    /// Adds `g` into the parameter gradient, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f32]) {
        debug_assert_eq!(g.len(), self.value.numel());
        match &mut self.value.grad {
            Some(buf) => {
                for (b, gi) in buf.iter_mut().zip(g) {
                    *b += gi;
                }
            }
            None => self.value.grad = Some(g.to_vec()),
        }
    }
}
