use std::fmt;
use std::str::FromStr;

use super::{shape_err, NnError, Tensor2};

pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Tensor2], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(s);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            o => Err(format!("unknown optimizer `{o}`")),
        }
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl Adam {
    pub fn step(&mut self, params: &mut [&mut Tensor2], grads: &[&Tensor2], lr: f64) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(shape_err("adam_step blocks", params.len(), grads.len()));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| g.zeros_like()).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(shape_err("adam_step state", self.m.len(), params.len()));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(shape_err("adam_step", format!("{:?}", p.shape()), format!("{:?}", g.shape())));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for k in 0..pd.len() {
                md[k] = self.beta1 * md[k] + (1.0 - self.beta1) * gd[k];
                vd[k] = self.beta2 * vd[k] + (1.0 - self.beta2) * gd[k] * gd[k];
                let mh = md[k] / bc1;
                let vh = vd[k] / bc2;
                pd[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sgd;

impl Sgd {
    pub fn step(&mut self, params: &mut [&mut Tensor2], grads: &[&Tensor2], lr: f64) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(shape_err("sgd_step blocks", params.len(), grads.len()));
        }
        for (p, g) in params.iter_mut().zip(grads) {
            if p.shape() != g.shape() {
                return Err(shape_err("sgd_step", format!("{:?}", p.shape()), format!("{:?}", g.shape())));
            }
            p.add_scaled(g, -lr);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::default()),
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor2], grads: &[&Tensor2], lr: f64) -> Result<(), NnError> {
        match self {
            Optimizer::Adam(a) => a.step(params, grads, lr),
            Optimizer::Sgd(s) => s.step(params, grads, lr),
        }
    }
}
