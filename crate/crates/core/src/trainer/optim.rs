//! Adam and an exponential moving average of the weights.

use crate::denoiser::MlpParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a single array. `step` counts from 1.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    hyper: AdamHyper,
) {
    let AdamHyper { beta1, beta2, eps } = hyper;
    let c1 = 1.0 - beta1.powf(step as f64);
    let c2 = 1.0 - beta2.powf(step as f64);
    for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = beta1 * *mi + (1.0 - beta1) * g;
        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub hyper: AdamHyper,
    m: MlpParams,
    v: MlpParams,
    step: u64,
}

impl Adam {
    pub fn new(params: &MlpParams, lr: f64) -> Self {
        Self {
            lr,
            hyper: AdamHyper::default(),
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(Error::shape("Adam moments do not match parameter shapes"));
        }
        self.step += 1;
        let m = self.m.arrays_mut();
        let v = self.v.arrays_mut();
        for (((p, g), m), v) in params.arrays_mut().into_iter().zip(grads.arrays()).zip(m).zip(v) {
            adam_step(p, g, m, v, self.step, self.lr, self.hyper);
        }
        Ok(())
    }
}

/// Shadow copy of the weights, `shadow <- decay * shadow + (1 - decay) * params`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub shadow: MlpParams,
    pub decay: f64,
}

impl EmaState {
    pub fn new(params: &MlpParams, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::config(format!("EMA decay {decay} outside [0, 1)")));
        }
        Ok(Self {
            shadow: params.clone(),
            decay,
        })
    }

    pub fn update(&mut self, params: &MlpParams) -> Result<()> {
        if !params.same_shape(&self.shadow) {
            return Err(Error::shape("EMA shadow does not mirror parameters"));
        }
        let d = self.decay;
        for (s, p) in self.shadow.arrays_mut().into_iter().zip(params.arrays()) {
            for (si, &pi) in s.iter_mut().zip(p) {
                *si = d * *si + (1.0 - d) * pi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::Dense;
    use ndarray::{Array1, Array2};

    fn params(v: f64) -> MlpParams {
        MlpParams {
            layers: vec![Dense {
                weight: Array2::from_elem((2, 3), v),
                bias: Array1::from_elem(2, v),
            }],
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = params(0.7);
        let start = p.clone();
        let mut adam = Adam::new(&p, 1e-2);
        let zero = p.zeros_like();
        for _ in 0..100 {
            adam.step(&mut p, &zero).unwrap();
        }
        assert_eq!(p, start);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let (lr, g) = (1e-3, 0.37);
        let mut p = [1.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        adam_step(&mut p, &[g], &mut m, &mut v, 1, lr, AdamHyper::default());
        // m_hat = g, v_hat = g^2
        let want = 1.0 - lr * g / (g.abs() + 1e-8);
        assert!((p[0] - want).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_bounded_by_lr() {
        let lr = 0.01;
        let mut p = [0.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        let mut prev = p[0];
        for step in 1..=2000 {
            adam_step(&mut p, &[-3.0], &mut m, &mut v, step, lr, AdamHyper::default());
            let delta = (p[0] - prev).abs();
            assert!(delta <= lr * (1.0 + 1e-6), "step {step}: {delta}");
            prev = p[0];
        }
        // fixed point: m_hat / sqrt(v_hat) -> sign(g)
        assert!(((p[0] - 2000.0 * lr) / (2000.0 * lr)).abs() < 1e-3);
    }

    #[test]
    fn ema_closed_forms() {
        let live = params(2.0);
        let mut e = EmaState::new(&params(5.0), 0.0).unwrap();
        e.update(&live).unwrap();
        assert_eq!(e.shadow, live);

        let mut e = EmaState::new(&params(5.0), 1.0 - 1e-12).unwrap();
        e.update(&live).unwrap();
        assert!(e.shadow.arrays().iter().all(|a| a.iter().all(|v| (v - 5.0).abs() < 1e-8)));

        let decay: f64 = 0.97;
        let mut e = EmaState::new(&params(5.0), decay).unwrap();
        for _ in 0..50 {
            e.update(&live).unwrap();
        }
        let want = 2.0 + 3.0 * decay.powi(50);
        assert!(e.shadow.arrays().iter().all(|a| a.iter().all(|v| (v - want).abs() < 1e-10)));
        assert!(EmaState::new(&live, 1.0).is_err());
    }
}
