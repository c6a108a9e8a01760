//! Adam, written out by hand: the published update rule with
//! bias-corrected first and second moments, keyed by parameter name so
//! optimizer state survives checkpointing.

use crate::error::{CoreError, Result};
use crate::math;
use crate::tensor::Tensor;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Hyper-parameters of the update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Standard moment decays with the given learning rate.
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.eps.is_finite();
        if !ok {
            return Err(CoreError::InvalidArgument {
                context: "adam config",
                detail: alloc::format!("{self:?}"),
            });
        }
        Ok(())
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(1e-4)
    }
}

/// First/second moment accumulators for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam optimizer state over a named parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Accumulated moments, keyed like the parameters they track.
    pub fn moments(&self) -> &BTreeMap<String, Moments> {
        &self.moments
    }

    /// Restores optimizer state from a checkpoint. Moment lengths are
    /// validated lazily against parameters on the next step.
    pub fn restore(&mut self, step: u64, moments: BTreeMap<String, Moments>) {
        self.step = step;
        self.moments = moments;
    }

    /// Applies one bias-corrected update to every parameter that has a
    /// gradient. A non-finite gradient aborts before any parameter is
    /// touched, naming the offender.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        for (name, grad) in grads {
            if grad.data().iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NanGradient {
                    parameter: name.clone(),
                });
            }
            match params.get(name) {
                Some(p) if p.shape() == grad.shape() => {}
                Some(p) => {
                    return Err(CoreError::ShapeMismatch {
                        context: "adam gradient",
                        left: p.shape().to_vec(),
                        right: grad.shape().to_vec(),
                    })
                }
                None => {
                    return Err(CoreError::InvalidArgument {
                        context: "adam_step",
                        detail: alloc::format!("gradient for unknown parameter {name}"),
                    })
                }
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let c = self.config;
        let bias1 = 1.0 - pow_int(c.beta1, t);
        let bias2 = 1.0 - pow_int(c.beta2, t);
        for (name, grad) in grads {
            let param = params.get_mut(name).expect("validated above");
            let slot = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; grad.len()],
                v: vec![0.0; grad.len()],
            });
            if slot.m.len() != grad.len() {
                return Err(CoreError::ShapeMismatch {
                    context: "adam moments",
                    left: vec![slot.m.len()],
                    right: vec![grad.len()],
                });
            }
            for ((p, g), (m, v)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(slot.m.iter_mut().zip(slot.v.iter_mut()))
            {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= c.lr * m_hat / (math::sqrt(v_hat) + c.eps);
            }
        }
        Ok(())
    }
}

/// `base^t` for integral `t ≥ 1` stored as f64; exact enough for the
/// bias-correction horizon and avoids pulling in a full powf.
fn pow_int(base: f64, t: f64) -> f64 {
    let mut n = t as u64;
    let mut acc = 1.0;
    let mut b = base;
    while n > 0 {
        if n & 1 == 1 {
            acc *= b;
        }
        b *= b;
        n >>= 1;
    }
    acc
}
