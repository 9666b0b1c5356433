use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

/// Step decay: `initial` for the first `decay_epoch` epochs of a stage, then
/// `initial / decay_factor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_factor: f64,
    pub decay_epoch: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: 1e-3, decay_factor: 10.0, decay_epoch: 70 }
    }
}

impl LrSchedule {
    /// Learning rate for the 0-based `epoch` within the current stage.
    pub fn rate(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.initial
        } else {
            self.initial / self.decay_factor
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, schedule: LrSchedule::default() }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    /// Moment buffers shaped like `params`.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params.into_iter().map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape()))).unzip();
        Self { config, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn update(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Option<Tensor>],
        epoch: usize,
    ) -> Result<(), NumericsError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(NumericsError::State(format!(
                "adam tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let g = g.as_ref().ok_or_else(|| NumericsError::State(format!("missing gradient for parameter {i}")))?;
            if g.shape() != p.shape() || self.m[i].shape() != p.shape() {
                return Err(NumericsError::Shape {
                    op: "adam_update",
                    detail: format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
                });
            }
            if !g.is_finite() {
                return Err(NumericsError::NonFinite { op: "adam_update" });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, schedule } = self.config;
        let lr = schedule.rate(epoch);
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].as_ref().expect("validated").data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((w, &gj), mj), vj) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                let m_hat = *mj / c1;
                let v_hat = *vj / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        let s = LrSchedule::default();
        assert_eq!(s.rate(0), 1e-3);
        assert_eq!(s.rate(69), 1e-3);
        assert_eq!(s.rate(70), 1e-4);
        assert_eq!(s.rate(99), 1e-4);
    }

    #[test]
    fn first_step_on_unit_gradient() {
        // m = 0.1, v = 0.001; bias-corrected both are 1, so w = 1 - 1e-3 / (1 + 1e-8)
        let mut w = Tensor::scalar(1.0);
        let mut adam = Adam::new(AdamConfig::default(), [&w]);
        adam.update(&mut [&mut w], &[Some(Tensor::scalar(1.0))], 0).unwrap();
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((w.item() - expected).abs() < 1e-15);
        assert!((w.item() - 0.999).abs() < 1e-10);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let init = Tensor::new(vec![3], vec![0.5, -1.5, 2.0]).unwrap();
        let mut w = init.clone();
        let mut adam = Adam::new(AdamConfig::default(), [&w]);
        for epoch in 0..100 {
            adam.update(&mut [&mut w], &[Some(Tensor::zeros(&[3]))], epoch).unwrap();
        }
        assert_eq!(w, init);
        assert_eq!(adam.step_count(), 100);
    }

    #[test]
    fn missing_gradient_is_state_error() {
        let mut w = Tensor::scalar(1.0);
        let mut adam = Adam::new(AdamConfig::default(), [&w]);
        let err = adam.update(&mut [&mut w], &[None], 0).unwrap_err();
        assert!(matches!(err, NumericsError::State(_)));
        assert_eq!(adam.step_count(), 0);
    }
}
