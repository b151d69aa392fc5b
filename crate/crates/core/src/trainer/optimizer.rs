use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamGrads};
use crate::numerics::Tensor;

/// Adaptive-moment optimizer state with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &ParamGrads, lr: f64) -> Result<()> {
        grads.check_finite()?;
        let mut slots = params.tensors_mut();
        if slots.len() != grads.tensors.len() || slots.len() != self.first.len() {
            return Err(Error::Parameter(format!(
                "{} parameters, {} gradients, {} moment slots",
                slots.len(),
                grads.tensors.len(),
                self.first.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in slots.iter_mut().enumerate() {
            let g = &grads.tensors[i];
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    name: grads.names[i].clone(),
                    expected: p.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gv;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gv * gv;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
