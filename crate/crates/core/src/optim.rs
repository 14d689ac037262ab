//! Adam with the AmsGrad running maximum, L2 weight decay and global-norm clipping.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IramError, Result};
use crate::params::{GradBuffer, Params};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(1.0),
            weight_decay: 3e-5,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(IramError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

pub fn global_norm(grads: &GradBuffer) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut GradBuffer, max_norm: f64) -> Result<f64> {
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(IramError::NumericFault("non-finite gradient".into()));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        grads
            .iter_mut()
            .flatten()
            .for_each(|g| *g = *g * max_norm / norm);
    }
    Ok(norm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub config: OptimConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub v_hat: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(config: OptimConfig, params: &Params) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.get(id).numel()]).collect();
        Ok(OptimState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros.clone(),
            v_hat: zeros,
        })
    }

    /// Clips `grads` (if configured) and applies one update to every trainable
    /// parameter. A trainable parameter without a gradient is treated as
    /// having a zero gradient.
    pub fn step(&mut self, params: &mut Params, grads: &mut GradBuffer) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(IramError::dim("optimizer step", &[params.len()], &[grads.len()]));
        }
        match self.config.clip_norm {
            Some(c) => {
                clip_global_norm(grads, c)?;
            }
            None => {
                if grads.iter().flatten().any(|g| !g.is_finite()) {
                    return Err(IramError::NumericFault("non-finite gradient".into()));
                }
            }
        }
        let c = &self.config;
        let t = (self.step + 1) as f64;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        for id in params.ids() {
            let k = id.index();
            let g = grads.get(id);
            let tensor = params.get_mut(id);
            if !tensor.requires_grad() {
                continue;
            }
            if let Some(g) = g {
                if g.len() != tensor.numel() {
                    return Err(IramError::dim("optimizer gradient", tensor.shape(), &[g.len()]));
                }
            }
            let (m, v, v_hat) = (&mut self.m[k], &mut self.v[k], &mut self.v_hat[k]);
            for (j, theta) in tensor.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g[j]) + c.weight_decay * *theta;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                v_hat[j] = v_hat[j].max(v[j]);
                let m_hat = m[j] / bc1;
                let v_corr = v_hat[j] / bc2;
                *theta -= c.learning_rate * m_hat / (v_corr.sqrt() + c.epsilon);
            }
        }
        self.step += 1;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| IramError::json(path, e))?;
        std::fs::write(path, text).map_err(|e| IramError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IramError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| IramError::json(path, e))
    }
}
