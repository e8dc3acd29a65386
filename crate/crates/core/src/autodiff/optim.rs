use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamStore, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const RMSPROP_RHO: f64 = 0.9;
pub const OPTIM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    #[serde(rename = "RMSprop")]
    RmsProp,
}

/// Moment buffers for every parameter of a [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamStore) -> Result<Self, AutodiffError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(AutodiffError::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Ok(Self {
            kind,
            lr,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients must be in store order.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<(), AutodiffError> {
        if grads.len() != params.len() {
            return Err(AutodiffError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(AutodiffError::Shape(format!(
                    "gradient shape mismatch for {name}"
                )));
            }
            if !g.all_finite() {
                return Err(AutodiffError::Numerical(format!(
                    "non-finite gradient for {name}"
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let lr = self.lr;
        for (idx, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[idx];
            let v = &mut self.second[idx];
            match self.kind {
                OptimizerKind::Adam => {
                    let c1 = 1.0 - ADAM_BETA1.powi(t);
                    let c2 = 1.0 - ADAM_BETA2.powi(t);
                    for (((w, &gv), mv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                        *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                        *w -= lr * (*mv / c1) / ((*vv / c2).sqrt() + OPTIM_EPS);
                    }
                }
                OptimizerKind::RmsProp => {
                    for ((w, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vv = RMSPROP_RHO * *vv + (1.0 - RMSPROP_RHO) * gv * gv;
                        *w -= lr * gv / (vv.sqrt() + OPTIM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}
