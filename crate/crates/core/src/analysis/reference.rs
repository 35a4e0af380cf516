use super::observation::{ObservationSpec, PerturbedObservations, Scenario};
use super::spd_solve;
use super::spectral::augment;
use crate::ensemble::{cross_diagonals, spectral_diagonal, Ensemble};
use crate::error::Result;
use crate::transforms::{forward_ensemble, BlockTransform, Orthonormal};

/// Literal dense form of the spectral-diagonal update.
///
/// Materializes `D = F^T D_F F` and applies
/// `X^a_j = X_j - D H^T (H D H^T + R)^{-1} (H X_j - Y_j)` with explicit `H`
/// and `R`. `D_F` is the plain spectral diagonal for full-state
/// observations and the cross-diagonal block matrix otherwise, which is what
/// the structured kernels use. Only meant as an oracle on small states.
pub fn sd_analysis_dense_reference(
    e: &Ensemble,
    obs: &ObservationSpec,
    transform: &BlockTransform,
    perturbed: &PerturbedObservations,
) -> Result<Ensemble> {
    if let Scenario::PartialRegion { .. } = obs.scenario() {
        let (augmented, augmented_obs, augmented_t) = augment(e, obs, transform)?;
        let analysis = sd_analysis_dense_reference(&augmented, &augmented_obs, &augmented_t, perturbed)?;
        return analysis.rows(transform.block_len(), e.state_len());
    }

    let f = transform.dense_matrix()?;
    let e_f = forward_ensemble(transform, e)?;
    let spectral = match obs.scenario() {
        Scenario::FullState { .. } => spectral_diagonal(&e_f)?.to_matrix(),
        _ => cross_diagonals(&e_f, transform.variables())?.to_matrix(),
    };
    let d = f.tr_mul(&spectral) * &f;

    let h = obs.explicit_operator(e.state_len())?;
    let r = obs.explicit_noise();
    let perturbed = perturbed.explicit_for(obs);
    perturbed.check(obs.data().len(), e.size())?;

    let dh = &d * h.transpose();
    let system = &h * &dh + r;
    let mut innovations = &h * e.matrix();
    for (j, mut col) in innovations.column_iter_mut().enumerate() {
        col.iter_mut().zip(perturbed.member(j)).for_each(|(v, y)| *v -= y);
    }
    let solved = spd_solve(system, &innovations, "dense reference system")?;
    Ensemble::new(e.matrix() - dh * solved)
}
