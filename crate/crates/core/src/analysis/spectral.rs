//! Structured spectral-diagonal analysis kernels.
//!
//! All four kernels keep the ensemble statistics as per-mode variances (or
//! per-mode cross-covariances between variables) and touch the state only
//! through the transform, so no `n x n` matrix is ever formed.

use nalgebra::{DMatrix, DVector};

use super::observation::{ObservationSpec, PerturbedObservations, Scenario};
use super::spd_solve;
use crate::ensemble::{cross_diagonals, spectral_diagonal, Ensemble};
use crate::error::{Error, Result};
use crate::transforms::{forward_ensemble, BlockTransform, Orthonormal};

fn check_state<T: Orthonormal + ?Sized>(e: &Ensemble, t: &T) -> Result<()> {
    if e.state_len() != t.dim() {
        return Err(Error::dims(
            "ensemble state length vs transform",
            t.dim(),
            e.state_len(),
        ));
    }
    if e.size() < 2 {
        return Err(Error::invalid("spectral analysis needs at least two members"));
    }
    Ok(())
}

/// Whole state observed with `R = cI`:
/// `X^a = X - F^* D (D + cI)^{-1} F (X - Y^j)` with `D` the spectral diagonal.
pub fn sd_analysis_full_obs<T: Orthonormal + ?Sized>(
    e: &Ensemble,
    obs: &ObservationSpec,
    transform: &T,
    perturbed: &PerturbedObservations,
) -> Result<Ensemble> {
    let Scenario::FullState { variance } = *obs.scenario() else {
        return Err(Error::invalid("full-observation kernel needs a full-state scenario"));
    };
    check_state(e, transform)?;
    obs.variables_for(e.state_len())?;
    perturbed.check(e.state_len(), e.size())?;

    let d = spectral_diagonal(&forward_ensemble(transform, e)?)?.variances;
    let gain = d.map(|v| v / (v + variance));
    let mut out = e.clone();
    for (j, member) in out.members_mut().enumerate() {
        let mut r: Vec<f64> = member.iter().zip(perturbed.member(j)).map(|(x, y)| x - y).collect();
        transform.forward_in_place(&mut r)?;
        r.iter_mut().zip(gain.iter()).for_each(|(v, g)| *v *= g);
        transform.inverse_in_place(&mut r)?;
        member.iter_mut().zip(&r).for_each(|(x, dx)| *x -= dx);
    }
    Ensemble::new(out.into_matrix())
}

/// Subtract `F^* (D_{i,1} o z)` from every variable block `i` of `member`.
fn apply_cross_update(
    member: &mut [f64],
    blocks: &crate::ensemble::CrossDiagonalBlocks,
    transform: &BlockTransform,
    spectral_weights: &DVector<f64>,
) -> Result<()> {
    let n = transform.block_len();
    for (i, block) in member.chunks_exact_mut(n).enumerate() {
        let mut z: Vec<f64> = blocks
            .block(i, 0)
            .iter()
            .zip(spectral_weights.iter())
            .map(|(d, w)| d * w)
            .collect();
        transform.per_variable().inverse_in_place(&mut z)?;
        block.iter_mut().zip(&z).for_each(|(x, dx)| *x -= dx);
    }
    Ok(())
}

/// First of `m` variables observed everywhere with `R = cI`.
///
/// Each block `i` is updated by `F^* D_{i,1} (D_{1,1} + cI)^{-1} F (X_1 - Y)`,
/// so unobserved variables move only through the spectral cross-covariances.
pub fn sd_analysis_one_var_full(
    e: &Ensemble,
    obs: &ObservationSpec,
    transform: &BlockTransform,
    perturbed: &PerturbedObservations,
) -> Result<Ensemble> {
    let Scenario::FirstVariable { variance } = *obs.scenario() else {
        return Err(Error::invalid("one-variable kernel needs a first-variable scenario"));
    };
    check_state(e, transform)?;
    let n = transform.block_len();
    if obs.data().len() != n {
        return Err(Error::dims("observed variable length", n, obs.data().len()));
    }
    perturbed.check(n, e.size())?;

    let blocks = cross_diagonals(&forward_ensemble(transform, e)?, transform.variables())?;
    let denominators = blocks.block(0, 0).map(|d| d + variance);
    let mut out = e.clone();
    for (j, member) in out.members_mut().enumerate() {
        let mut r: Vec<f64> = member[..n]
            .iter()
            .zip(perturbed.member(j))
            .map(|(x, y)| x - y)
            .collect();
        transform.per_variable().forward_in_place(&mut r)?;
        let weights = DVector::from_iterator(n, r.iter().zip(denominators.iter()).map(|(v, d)| v / d));
        apply_cross_update(member, &blocks, transform, &weights)?;
    }
    Ensemble::new(out.into_matrix())
}

/// A few point observations `H_1` of the first variable, arbitrary SPD `R`.
///
/// With `G = F H_1^T` (one transform per observation), the `k x k` system
/// `G^T D_{1,1} G + R` is solved per member and the solution is spread back
/// through `F^* D_{i,1} G`.
pub fn sd_analysis_few_points(
    e: &Ensemble,
    obs: &ObservationSpec,
    transform: &BlockTransform,
    perturbed: &PerturbedObservations,
) -> Result<Ensemble> {
    let Scenario::FewPoints { operator, noise } = obs.scenario() else {
        return Err(Error::invalid("few-points kernel needs a point-observation scenario"));
    };
    check_state(e, transform)?;
    let n = transform.block_len();
    let k = operator.nrows();
    if operator.ncols() != n {
        return Err(Error::dims("observation operator columns", n, operator.ncols()));
    }
    let perturbed = perturbed.explicit_for(obs);
    perturbed.check(k, e.size())?;

    let blocks = cross_diagonals(&forward_ensemble(transform, e)?, transform.variables())?;
    let mut g = operator.transpose();
    for mut col in g.column_iter_mut() {
        let mut v: Vec<f64> = col.iter().copied().collect();
        transform.per_variable().forward_in_place(&mut v)?;
        col.copy_from_slice(&v);
    }
    let mut scaled = g.clone();
    for (mut row, d) in scaled.row_iter_mut().zip(blocks.block(0, 0).iter()) {
        row *= *d;
    }
    let system = g.tr_mul(&scaled) + noise;

    let mut innovations = DMatrix::zeros(k, e.size());
    for (j, member) in e.members().enumerate() {
        let hx = operator * DVector::from_column_slice(&member[..n]);
        for i in 0..k {
            innovations[(i, j)] = hx[i] - perturbed.member(j)[i];
        }
    }
    let solved = spd_solve(system, &innovations, "point-observation system")?;
    let spectral = &g * solved;

    let mut out = e.clone();
    for (j, member) in out.members_mut().enumerate() {
        apply_cross_update(member, &blocks, transform, &spectral.column(j).into_owned())?;
    }
    Ensemble::new(out.into_matrix())
}

/// Augmented ensemble `(X_0, X_1, ..., X_m)` with `X_0 = X_1` on the observed
/// set and zero elsewhere, plus the matching first-variable observation.
pub(crate) fn augment(
    e: &Ensemble,
    obs: &ObservationSpec,
    transform: &BlockTransform,
) -> Result<(Ensemble, ObservationSpec, BlockTransform)> {
    let Scenario::PartialRegion {
        indices,
        block_len,
        variance,
    } = obs.scenario()
    else {
        return Err(Error::invalid("augmented kernel needs a region scenario"));
    };
    check_state(e, transform)?;
    let n = transform.block_len();
    if *block_len != n {
        return Err(Error::dims("observed variable length", n, *block_len));
    }
    let rows = e.state_len();
    let mut data = DMatrix::zeros(rows + n, e.size());
    for (j, member) in e.members().enumerate() {
        let mut col = data.column_mut(j);
        for &i in indices {
            col[i] = member[i];
        }
        col.rows_mut(n, rows).copy_from_slice(member);
    }
    let augmented_obs = ObservationSpec::first_variable(obs.perturbation_base(), *variance)?;
    let augmented_t = transform.with_variables(transform.variables() + 1)?;
    Ok((Ensemble::new(data)?, augmented_obs, augmented_t))
}

/// First variable observed on a subset `M` of the grid.
///
/// The state is augmented by a masked copy `X_0` of the observed variable,
/// data are padded with zeros off `M`, the one-variable kernel is applied to
/// the augmented state observing `X_0`, and `X_0^a` is dropped. Perturbed data
/// must be given in the padded layout (length `n`); padded entries carry
/// noise of the same variance.
pub fn sd_analysis_augmented(
    e: &Ensemble,
    obs: &ObservationSpec,
    transform: &BlockTransform,
    perturbed: &PerturbedObservations,
) -> Result<Ensemble> {
    let (augmented, augmented_obs, augmented_t) = augment(e, obs, transform)?;
    let analysis = sd_analysis_one_var_full(&augmented, &augmented_obs, &augmented_t, perturbed)?;
    analysis.rows(transform.block_len(), e.state_len())
}
