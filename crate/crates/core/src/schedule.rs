//! Ornstein-Uhlenbeck noising schedule and forward conditional sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Coefficients of the forward process on the window `[t0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub sigma_data: f64,
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_max: f64,
}

/// `m_t`, `sigma_t^2`, `tilde sigma_t^2` and `V(t) = m_t^2 / (2 tilde sigma_t^2)` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    pub m: f64,
    pub var: f64,
    pub tvar: f64,
    pub calv: f64,
}

impl ScheduleValues {
    pub fn sigma(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn tsigma(&self) -> f64 {
        self.tvar.sqrt()
    }
}

impl DiffusionSchedule {
    pub fn new(sigma_data: f64, t0: f64, t_max: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&sigma_data) {
            return Err(Error::invalid(format!(
                "sigma_data must lie in [0,1), got {sigma_data}"
            )));
        }
        if !(t0 > 0.0 && t0 <= t_max && t_max.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < t0 <= T < inf, got t0={t0}, T={t_max}"
            )));
        }
        Ok(Self {
            sigma_data,
            t0,
            t_max,
        })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.sigma_data, self.t0, self.t_max).map(|_| ())
    }

    /// Coefficients at time `t`, with `t` in `[0, T]`.
    pub fn eval(&self, t: f64) -> Result<ScheduleValues> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(Error::invalid(format!(
                "t={t} outside [0, T={}]",
                self.t_max
            )));
        }
        if t == 0.0 && self.sigma_data == 0.0 {
            return Err(Error::invalid(
                "t = 0 with sigma_data = 0 leaves tilde sigma^2 = 0",
            ));
        }
        Ok(self.eval_unchecked(t))
    }

    /// Same as [`eval`](Self::eval) without domain checks; callers guarantee `t` is valid.
    #[inline]
    pub fn eval_unchecked(&self, t: f64) -> ScheduleValues {
        let m = (-t).exp();
        let var = -(-2.0 * t).exp_m1();
        let tvar = m * m * self.sigma_data * self.sigma_data + var;
        ScheduleValues {
            m,
            var,
            tvar,
            calv: m * m / (2.0 * tvar),
        }
    }

    /// `tilde sigma_{t0}^2`.
    pub fn tvar_t0(&self) -> f64 {
        self.eval_unchecked(self.t0).tvar
    }

    /// `Delta_sigma = -log(1 - sigma_data^2) / 2`.
    pub fn delta_sigma(&self) -> f64 {
        -0.5 * (-self.sigma_data * self.sigma_data).ln_1p()
    }

    /// Draws `m_t x0 + sigma_t z` with `z ~ N(0, I)`.
    pub fn forward_sample<R: Rng + ?Sized>(
        &self,
        x0: &[f64],
        t: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if !(t > 0.0 && t <= self.t_max) {
            return Err(Error::invalid(format!("forward sample needs t in (0, T], got {t}")));
        }
        let v = self.eval_unchecked(t);
        let s = v.sigma();
        Ok(x0.iter().map(|&x| v.m * x + s * rng::normal(rng)).collect())
    }
}
