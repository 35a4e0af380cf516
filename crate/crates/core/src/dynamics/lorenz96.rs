use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};

/// Explicit one-step scheme used to advance the Lorenz 96 system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    /// Classical fourth-order Runge-Kutta.
    #[default]
    Rk4,
    /// Second-order Heun (explicit trapezoidal) method.
    Heun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lorenz96Config {
    /// State dimension `K`.
    pub dim: usize,
    pub forcing: f64,
    pub dt: f64,
    pub steps_per_cycle: usize,
    pub integrator: Integrator,
}

impl Default for Lorenz96Config {
    fn default() -> Self {
        Self {
            dim: 256,
            forcing: 8.0,
            dt: 0.01,
            steps_per_cycle: 100,
            integrator: Integrator::Rk4,
        }
    }
}

impl Lorenz96Config {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 4 {
            return Err(Error::invalid(format!("Lorenz 96 needs K >= 4, got {}", self.dim)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {}", self.dt)));
        }
        if !self.forcing.is_finite() {
            return Err(Error::invalid("forcing must be finite"));
        }
        Ok(())
    }
}

fn rhs_into(x: &[f64], forcing: f64, out: &mut [f64]) {
    let k = x.len();
    for j in 0..k {
        let prev = x[(j + k - 1) % k];
        let prev2 = x[(j + k - 2) % k];
        let next = x[(j + 1) % k];
        out[j] = prev * (next - prev2) - x[j] + forcing;
    }
}

/// `dx_j/dt = x_{j-1} (x_{j+1} - x_{j-2}) - x_j + F` with cyclic indices.
pub fn lorenz96_rhs(x: &[f64], forcing: f64) -> Result<Vec<f64>> {
    if x.len() < 4 {
        return Err(Error::invalid(format!("Lorenz 96 needs K >= 4, got {}", x.len())));
    }
    let mut out = vec![0.0; x.len()];
    rhs_into(x, forcing, &mut out);
    Ok(out)
}

/// One step of size `cfg.dt`.
pub fn lorenz96_step(x: &[f64], cfg: &Lorenz96Config) -> Result<Vec<f64>> {
    let mut next = x.to_vec();
    cfg.step(&mut next)?;
    Ok(next)
}

impl Model for Lorenz96Config {
    fn state_len(&self) -> usize {
        self.dim
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, x: &mut [f64]) -> Result<()> {
        self.validate()?;
        let k = x.len();
        if k != self.dim {
            return Err(Error::dims("Lorenz 96 state", self.dim, k));
        }
        let (f, h) = (self.forcing, self.dt);
        let mut k1 = vec![0.0; k];
        let mut k2 = vec![0.0; k];
        let mut stage = vec![0.0; k];
        rhs_into(x, f, &mut k1);
        match self.integrator {
            Integrator::Rk4 => {
                let mut k3 = vec![0.0; k];
                let mut k4 = vec![0.0; k];
                for i in 0..k {
                    stage[i] = x[i] + 0.5 * h * k1[i];
                }
                rhs_into(&stage, f, &mut k2);
                for i in 0..k {
                    stage[i] = x[i] + 0.5 * h * k2[i];
                }
                rhs_into(&stage, f, &mut k3);
                for i in 0..k {
                    stage[i] = x[i] + h * k3[i];
                }
                rhs_into(&stage, f, &mut k4);
                for i in 0..k {
                    x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            Integrator::Heun => {
                for i in 0..k {
                    stage[i] = x[i] + h * k1[i];
                }
                rhs_into(&stage, f, &mut k2);
                for i in 0..k {
                    x[i] += 0.5 * h * (k1[i] + k2[i]);
                }
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup("Lorenz 96 state became non-finite".into()));
        }
        Ok(())
    }
}
