use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::NamedVars;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// Adam over a fixed group of variables. Hyperparameters are passed per
/// step; only the moments and the step count are state.
#[derive(Debug)]
pub struct Adam {
    vars: NamedVars,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(vars: NamedVars) -> Result<Self> {
        let m = vars.iter().map(|(_, v)| v.as_tensor().zeros_like()).collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self {
            v: m.clone(),
            m,
            vars,
            t: 0,
        })
    }

    pub fn vars(&self) -> &NamedVars {
        &self.vars
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub(crate) fn restore(&mut self, t: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<()> {
        if m.len() != self.vars.len() || v.len() != self.vars.len() {
            return Err(Error::Shape(format!("expected {} moment tensors", self.vars.len())));
        }
        for ((name, var), (mi, vi)) in self.vars.iter().zip(m.iter().zip(&v)) {
            if mi.dims() != var.dims() || vi.dims() != var.dims() {
                return Err(Error::Shape(format!("moment shape mismatch for {name}")));
            }
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One bias-corrected update. Variables without a gradient see zero.
    pub fn step(&mut self, grads: &GradStore, h: &AdamHyper) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - h.beta1.powi(self.t as i32);
        let c2 = 1.0 - h.beta2.powi(self.t as i32);
        for (i, (_, var)) in self.vars.iter().enumerate() {
            let p = var.as_tensor().detach();
            let g = match grads.get(var.as_tensor()) {
                Some(g) => g.detach(),
                None => p.zeros_like()?,
            };
            let m = ((&self.m[i] * h.beta1)? + (&g * (1.0 - h.beta1))?)?;
            let v = ((&self.v[i] * h.beta2)? + (g.sqr()? * (1.0 - h.beta2))?)?;
            let update = ((&m / c1)? / ((&v / c2)?.sqrt()? + ADAM_EPS)?)?;
            var.set(&(p - (update * h.learning_rate)?)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }
}
