use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Adam optimizer state for a fixed, ordered list of parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Standard defaults: β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        Self {
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam step applied in place.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::dim(
                "adam_update",
                &[self.first_moment.len()],
                &[params.len(), grads.len()],
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::dim("adam_update", p.shape(), g.shape()));
            }
        }
        if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient of shape {:?}",
                bad.shape()
            )));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
