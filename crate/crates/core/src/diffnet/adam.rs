use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

/// Adam moments and hyperparameters for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

pub const DEFAULT_LR: f64 = 5e-4;

impl OptState {
    pub fn new(p: &ParamSet, lr: f64) -> Self {
        OptState { m: p.zeros_like(), v: p.zeros_like(), step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Applies one bias-corrected Adam update in place.
    pub fn update(&mut self, p: &mut ParamSet, g: &ParamSet) -> Result<()> {
        if !p.same_shape(g) || !p.same_shape(&self.m) {
            return Err(Error::param("parameter, gradient and optimizer shapes differ"));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let moments = self.m.flat_iter_mut().zip(self.v.flat_iter_mut());
        for ((w, &gi), (m, v)) in p.flat_iter_mut().zip(g.flat_iter()).zip(moments) {
            *m = b1 * *m + (1.0 - b1) * gi;
            *v = b2 * *v + (1.0 - b2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Pure form of [`OptState::update`].
pub fn adam_step(p: &ParamSet, g: &ParamSet, st: &OptState) -> Result<(ParamSet, OptState)> {
    let mut p = p.clone();
    let mut st = st.clone();
    st.update(&mut p, g)?;
    Ok((p, st))
}
