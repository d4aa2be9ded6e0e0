//! Cosine noise schedule and the forward corruption process.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::tensor::AnalogTensor;

/// `gamma(t) = cos(((t + ns) / (1 + ds)) * pi / 2)^2`, the retained signal
/// variance at continuous time `t` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub ns: f64,
    pub ds: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            ns: 0.0002,
            ds: 0.00025,
        }
    }
}

impl Schedule {
    pub fn new(ns: f64, ds: f64) -> Result<Self> {
        if !(ns >= 0.0 && ds >= 0.0 && ns.is_finite() && ds.is_finite()) {
            return Err(Error::config(format!(
                "schedule shifts must be non-negative, got ns={ns} ds={ds}"
            )));
        }
        // cos^2 turns upward past pi/2, so (1 + ns) / (1 + ds) must not exceed 1
        if ns > ds {
            return Err(Error::config(format!(
                "schedule requires ns <= ds for a monotone gamma, got ns={ns} ds={ds}"
            )));
        }
        Ok(Self { ns, ds })
    }

    pub fn gamma(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Range(format!("t = {t} outside [0, 1]")));
        }
        Ok(self.gamma_unchecked(t))
    }

    /// [`Schedule::gamma`] without the range check; callers guarantee `t`.
    pub fn gamma_unchecked(&self, t: f64) -> f64 {
        let c = (((t + self.ns) / (1.0 + self.ds)) * FRAC_PI_2).cos();
        (c * c).clamp(0.0, 1.0)
    }

    /// `x_t = sqrt(gamma(t)) x0 + sqrt(1 - gamma(t)) noise`.
    pub fn forward_diffuse(
        &self,
        x0: &AnalogTensor,
        t: f64,
        noise: &AnalogTensor,
    ) -> Result<AnalogTensor> {
        let g = self.gamma(t)?;
        forward_with_gamma(x0, g, noise)
    }

    /// Forward process with one time per batch row.
    pub fn forward_diffuse_rows(
        &self,
        x0: &AnalogTensor,
        t: &[f64],
        noise: &AnalogTensor,
    ) -> Result<AnalogTensor> {
        x0.ensure_same_shape(noise, "forward_diffuse")?;
        if t.len() != x0.batch() {
            return Err(Error::shape(format!(
                "{} times for a batch of {}",
                t.len(),
                x0.batch()
            )));
        }
        let mut out = x0.clone();
        for ((mut row, nrow), &ti) in out
            .data_mut()
            .rows_mut()
            .into_iter()
            .zip(noise.data().rows())
            .zip(t)
        {
            let g = self.gamma(ti)?;
            let (a, s) = (g.sqrt(), (1.0 - g).sqrt());
            row.zip_mut_with(&nrow, |x, &e| *x = a * *x + s * e);
        }
        Ok(out)
    }
}

pub fn forward_with_gamma(x0: &AnalogTensor, g: f64, noise: &AnalogTensor) -> Result<AnalogTensor> {
    x0.ensure_same_shape(noise, "forward_diffuse")?;
    let (a, s) = (g.sqrt(), (1.0 - g).sqrt());
    let mut out = x0.clone();
    out.data_mut()
        .zip_mut_with(noise.data(), |x, &e| *x = a * *x + s * e);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn endpoint_values() {
        let s = Schedule::default();
        // 1 - cos(ns / (1 + ds) * pi/2)^2, evaluated in double precision
        assert!((s.gamma(0.0).unwrap() - (1.0 - 9.864_671_124_404_367e-8)).abs() < 1e-9);
        assert!((s.gamma(1.0).unwrap() - 6.165_419_642_888_424e-9).abs() < 1e-9);
        let mid = s.gamma(0.5).unwrap();
        assert!(s.gamma(0.6).unwrap() < mid && mid < s.gamma(0.4).unwrap());
    }

    #[test]
    fn out_of_range_t() {
        let s = Schedule::default();
        assert!(matches!(s.gamma(-0.01), Err(Error::Range(_))));
        assert!(matches!(s.gamma(1.01), Err(Error::Range(_))));
    }

    #[test]
    fn strictly_decreasing_on_grid() {
        let s = Schedule::default();
        let grid: Vec<f64> = (0..1000).map(|i| s.gamma(i as f64 / 999.0).unwrap()).collect();
        for w in grid.windows(2) {
            assert!(w[0] > w[1]);
            assert!((0.0..=1.0).contains(&w[0]));
        }
    }

    #[test]
    fn forward_limits() {
        let x0 = AnalogTensor::from_vec(1, 3, vec![1.0, -1.0, 1.0]).unwrap();
        let eps = AnalogTensor::from_vec(1, 3, vec![0.3, -2.0, 0.7]).unwrap();
        assert_eq!(forward_with_gamma(&x0, 1.0, &eps).unwrap(), x0);
        assert_eq!(forward_with_gamma(&x0, 0.0, &eps).unwrap(), eps);
        let bad = AnalogTensor::zeros(2, 3);
        assert!(matches!(
            Schedule::default().forward_diffuse(&x0, 0.5, &bad),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn forward_moments() {
        let s = Schedule::default();
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = AnalogTensor::from_vec(n, 1, vec![1.0; n]).unwrap();
        let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let eps = AnalogTensor::from_vec(n, 1, eps).unwrap();
        let xt = s.forward_diffuse(&x0, 0.5, &eps).unwrap();
        let g = s.gamma(0.5).unwrap();
        let mean = xt.as_slice().iter().sum::<f64>() / n as f64;
        let var = xt.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let band = 3.0 * ((1.0 - g) / n as f64).sqrt();
        assert!((mean - g.sqrt()).abs() < band, "mean {mean}");
        assert!((var / (1.0 - g) - 1.0).abs() < 0.02, "var {var}");
    }
}
