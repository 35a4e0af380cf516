//! Perturbed-observation EnKF with the full sample covariance.

use nalgebra::DMatrix;

use super::observation::{ObservationNoise, ObservationSpec, PerturbedObservations};
use super::spd_solve;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

/// Stochastic EnKF analysis
/// `X^a_j = X_j - C H^T (H C H^T + R)^{-1} (H X_j - Y_j)` with `C` the
/// sample covariance.
///
/// `C` is never formed: with anomalies `A`, `C H^T = A (HA)^T / (N-1)`. For
/// `R = cI` the `k x k` inverse is replaced by the Woodbury identity, so the
/// cost stays linear in the state and data sizes.
pub fn enkf_analysis(e: &Ensemble, obs: &ObservationSpec, perturbed: &PerturbedObservations) -> Result<Ensemble> {
    let members = e.size();
    if members < 2 {
        return Err(Error::invalid("the EnKF needs at least two members"));
    }
    obs.variables_for(e.state_len())?;
    let perturbed = perturbed.explicit_for(obs);
    let k = obs.data().len();
    perturbed.check(k, members)?;

    let anomalies = e.anomalies();
    let mut observed_anomalies = DMatrix::zeros(k, members);
    let mut innovations = DMatrix::zeros(k, members);
    for j in 0..members {
        let ha = obs.observe(anomalies.column(j).as_slice())?;
        observed_anomalies.set_column(j, &ha);
        let hx = obs.observe(e.member(j))?;
        for (i, value) in hx.iter().enumerate() {
            innovations[(i, j)] = value - perturbed.member(j)[i];
        }
    }
    let dof = (members - 1) as f64;

    // weights = (H C H^T + R)^{-1} innovations
    let weights = match obs.noise() {
        ObservationNoise::Scalar(c) => {
            let mut inner = observed_anomalies.tr_mul(&observed_anomalies);
            for i in 0..members {
                inner[(i, i)] += c * dof;
            }
            let projected = observed_anomalies.tr_mul(&innovations);
            let correction = &observed_anomalies * spd_solve(inner, &projected, "EnKF ensemble-space system")?;
            (innovations - correction) / c
        }
        ObservationNoise::Covariance(r) => {
            let s = &observed_anomalies * observed_anomalies.transpose() / dof + r;
            spd_solve(s, &innovations, "EnKF innovation covariance")?
        }
    };
    let increments = &anomalies * (observed_anomalies.tr_mul(&weights) / dof);
    Ensemble::new(e.matrix() - increments)
}
