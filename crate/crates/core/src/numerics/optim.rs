//! AdamW with decoupled weight decay, plus the linear-warmup / cosine-decay
//! learning-rate schedule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Ordered named parameter set. Iteration order is insertion order so
/// checkpoints and updates are reproducible.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: HashMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        if !self.values.contains_key(name) {
            self.names.push(name.to_string());
        }
        self.values.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.values.get_mut(name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| (n.as_str(), &self.values[n]))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-4, weight_decay: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub config: AdamWConfig,
    moments: HashMap<String, (Tensor, Tensor)>,
    pub step: u64,
}

impl OptimState {
    pub fn new(config: AdamWConfig) -> Self {
        OptimState { config, moments: HashMap::new(), step: 0 }
    }

    /// One decoupled-weight-decay update. Refuses the whole step if any
    /// gradient contains a non-finite value; state is left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &HashMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::OptimizerRefused(format!("non-finite gradient for {name}")));
            }
            if let Some(p) = params.get(name) {
                if p.shape() != g.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "adamw-step".into(),
                        detail: format!("{name}: param {:?} vs grad {:?}", p.shape(), g.shape()),
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for name in params.names().to_vec() {
            let p = params.get_mut(&name).unwrap();
            let zero = || (Tensor::zeros(p.shape().to_vec()), Tensor::zeros(p.shape().to_vec()));
            let (m, v) = self.moments.entry(name.clone()).or_insert_with(zero);
            let g = grads.get(&name);
            for i in 0..p.numel() {
                let gi = g.map(|g| g.data()[i]).unwrap_or(0.0);
                let mi = c.beta1 * m.data()[i] + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * v.data()[i] + (1.0 - c.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                let w = p.data()[i];
                p.data_mut()[i] = w - c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * w);
            }
        }
        Ok(())
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }
}

/// Linear warmup from 0 to `peak_lr`, then cosine decay to 0 at `total_steps`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(peak_lr: f64, warmup_ratio: f64, total_steps: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&warmup_ratio) {
            return Err(Error::InvalidArgument(format!("warmup_ratio {warmup_ratio} outside [0,1)")));
        }
        if peak_lr <= 0.0 {
            return Err(Error::InvalidArgument(format!("peak_lr {peak_lr} must be positive")));
        }
        Ok(LrSchedule { peak_lr, warmup_ratio, total_steps })
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_ratio * self.total_steps as f64).round() as u64
    }

    /// Rate at `step`; warmup starts at 0 at step 0.
    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::InvalidArgument(format!("step {step} past total_steps {}", self.total_steps)));
        }
        let w = self.warmup_steps();
        if step < w {
            return Ok(self.peak_lr * step as f64 / w as f64);
        }
        if self.total_steps == w {
            return Ok(if step == w { self.peak_lr } else { 0.0 });
        }
        let frac = (step - w) as f64 / (self.total_steps - w) as f64;
        Ok(self.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
    }
}
