//! Analysis (Bayesian update) step: the classical perturbed-observation
//! EnKF and the spectral-diagonal kernels for structured observations.

mod enkf;
mod observation;
mod reference;
mod spectral;

use nalgebra::DMatrix;
use rand::Rng;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::transforms::BlockTransform;

pub use self::enkf::enkf_analysis;
pub use self::observation::{
    perturb_observations, ObservationNoise, ObservationSpec, PerturbedObservations, Scenario, FEW_POINTS_LIMIT,
};
pub use self::reference::sd_analysis_dense_reference;
pub use self::spectral::{
    sd_analysis_augmented, sd_analysis_few_points, sd_analysis_full_obs, sd_analysis_one_var_full,
};

/// Solve `A X = B` for symmetric positive definite `A`, symmetrized first.
pub(crate) fn spd_solve(a: DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let sym = (&a + a.transpose()) * 0.5;
    let chol = sym
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{context} is singular or indefinite")))?;
    Ok(chol.solve(b))
}

/// Settings for a spectral-diagonal analysis.
#[derive(Clone, Debug)]
pub struct AnalysisConfig {
    pub transform: BlockTransform,
    /// Covariance inflation factor, `>= 1`; `1` disables inflation.
    pub inflation: f64,
    pub rng_seed: u64,
}

impl AnalysisConfig {
    pub fn new(transform: BlockTransform) -> Self {
        Self {
            transform,
            inflation: 1.0,
            rng_seed: 0,
        }
    }

    /// Spectral-diagonal analysis with the kernel matching the observation
    /// scenario, using the given perturbed data.
    pub fn analyze(&self, e: &Ensemble, obs: &ObservationSpec, perturbed: &PerturbedObservations) -> Result<Ensemble> {
        let e = e.inflate(self.inflation)?;
        let t = &self.transform;
        match obs.scenario() {
            Scenario::FullState { .. } => sd_analysis_full_obs(&e, obs, t, perturbed),
            Scenario::FirstVariable { .. } => sd_analysis_one_var_full(&e, obs, t, perturbed),
            Scenario::FewPoints { .. } => sd_analysis_few_points(&e, obs, t, perturbed),
            Scenario::PartialRegion { .. } => sd_analysis_augmented(&e, obs, t, perturbed),
        }
    }

    /// As [`AnalysisConfig::analyze`], drawing the perturbations from `rng`.
    pub fn analyze_with_rng<R: Rng + ?Sized>(
        &self,
        e: &Ensemble,
        obs: &ObservationSpec,
        rng: &mut R,
    ) -> Result<Ensemble> {
        let perturbed = obs.perturb(e.size(), rng)?;
        self.analyze(e, obs, &perturbed)
    }

    /// As [`AnalysisConfig::analyze_with_rng`] with a stream derived from `rng_seed`.
    pub fn analyze_seeded(&self, e: &Ensemble, obs: &ObservationSpec) -> Result<Ensemble> {
        let mut rng = crate::rng::substream(self.rng_seed, &[]);
        self.analyze_with_rng(e, obs, &mut rng)
    }
}
