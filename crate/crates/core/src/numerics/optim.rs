//! Named parameter storage and the Adam optimizer.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, t: Tensor) -> usize {
        debug_assert!(self.index_of(name).is_none(), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on the tape as a leaf, in store order.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }

    /// Gradients of the bound leaves after a backward pass (zeros where unused).
    pub fn grads(&self, g: &Graph, vars: &[Var]) -> Vec<Vec<f32>> {
        self.tensors
            .iter()
            .zip(vars)
            .map(|(t, &v)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f32]>::to_vec))
            .collect()
    }

    /// Replaces a parameter's values, keeping its shape.
    pub fn set(&mut self, i: usize, data: Vec<f32>) -> Result<()> {
        let shape = self.tensors[i].shape().to_vec();
        self.tensors[i] = Tensor::new(shape, data)?;
        Ok(())
    }
}

/// Adds `src` into `dst` elementwise.
pub fn accumulate_grads(dst: &mut [Vec<f32>], src: &[Vec<f32>]) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (a, b) in d.iter_mut().zip(s) {
            *a += b;
        }
    }
}

pub fn global_norm(grads: &[Vec<f32>]) -> f64 {
    libm::sqrt(grads.iter().flatten().map(|&g| f64::from(g) * f64::from(g)).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    /// Factor applied to the gradient by clipping (1 when not clipped).
    pub clip_scale: f64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, lr: f64, clip_norm: f64) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        OptimizerState { m: zeros.clone(), v: zeros, step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm }
    }

    /// One Adam update with global-norm clipping. Parameters are untouched on error.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f32>]) -> Result<StepStats> {
        if grads.len() != params.len() || grads.iter().zip(params.tensors()).any(|(g, t)| g.len() != t.len()) {
            return Err(Error::ShapeMismatch { op: "adam", detail: "gradients do not mirror parameters".into() });
        }
        let grad_norm = global_norm(grads);
        if !grad_norm.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        let clip_scale =
            if self.clip_norm > 0.0 && grad_norm > self.clip_norm { self.clip_norm / grad_norm } else { 1.0 };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, f64::from(t));
        let bc2 = 1.0 - libm::pow(self.beta2, f64::from(t));
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.get_mut(i).data_mut();
            for j in 0..g.len() {
                let gj = g[j] * clip_scale as f32;
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let m_hat = f64::from(m[j]) / bc1;
                let v_hat = f64::from(v[j]) / bc2;
                p[j] -= (self.lr * m_hat / (libm::sqrt(v_hat) + self.eps)) as f32;
            }
        }
        Ok(StepStats { grad_norm, clip_scale })
    }
}

/// Linear warmup to `peak` over `warmup` steps, then cosine decay to zero at `total`.
pub fn warmup_cosine(step: u64, warmup: u64, total: u64, peak: f64) -> f64 {
    if warmup > 0 && step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let progress = ((step - warmup.min(step)) as f64 / span).min(1.0);
    0.5 * peak * (1.0 + libm::cos(core::f64::consts::PI * progress))
}
