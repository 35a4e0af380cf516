//! Transform and kernel self-checks run by the `selftest` subcommand.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::analysis::{
    sd_analysis_augmented, sd_analysis_dense_reference, sd_analysis_few_points, sd_analysis_full_obs,
    sd_analysis_one_var_full, ObservationSpec, PerturbedObservations, Scenario,
};
use crate::ensemble::Ensemble;
use crate::error::Result;
use crate::rng::{substream, StreamRng};
use crate::transforms::{BlockTransform, Orthonormal, Shape, SpectralTransform, TransformKind};

/// One measured quantity against its tolerance.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn pass(&self) -> bool {
        self.value < self.tolerance
    }
}

/// Largest `|F F^T - I|` entry of a transform's dense matrix.
pub fn orthogonality_error<T: Orthonormal + ?Sized>(t: &T) -> Result<f64> {
    let f = t.dense_matrix()?;
    let n = f.nrows();
    Ok((&f * f.transpose() - DMatrix::<f64>::identity(n, n)).amax())
}

/// `|F^* F x - x| / |x|` for a random `x`.
pub fn round_trip_error<T: Orthonormal + ?Sized>(t: &T, rng: &mut StreamRng) -> Result<f64> {
    let x: Vec<f64> = (0..t.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let back = t.inverse(&t.forward(&x)?)?;
    let num: f64 = x.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = x.iter().map(|a| a * a).sum();
    Ok((num / den).sqrt())
}

/// Round trip and orthogonality of DCT, DST and coif2 DWT on lines of
/// length 16, 64, 256 and a 16 x 16 grid.
pub fn transform_checks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = substream(seed, &[]);
    let mut checks = Vec::new();
    let shapes = [
        Shape::Line(16),
        Shape::Line(64),
        Shape::Line(256),
        Shape::Grid { nx: 16, ny: 16 },
    ];
    for kind in [TransformKind::Dct, TransformKind::Dst, TransformKind::coif2()] {
        for shape in shapes {
            let t = SpectralTransform::new(kind, shape)?;
            let label = match shape {
                Shape::Line(n) => format!("{} n={n}", kind.label()),
                Shape::Grid { nx, ny } => format!("{} {nx}x{ny}", kind.label()),
            };
            checks.push(Check {
                name: format!("{label} round trip"),
                value: round_trip_error(&t, &mut rng)?,
                tolerance: 1e-10,
            });
            checks.push(Check {
                name: format!("{label} |FF^T - I|"),
                value: orthogonality_error(&t)?,
                tolerance: 1e-10,
            });
        }
    }
    Ok(checks)
}

/// Random observation of scenario `0..4` (full state, first variable, a few
/// interpolating points with correlated noise, a region) for `m` variables of length `n`.
pub fn random_observation(scenario: usize, n: usize, m: usize, rng: &mut StreamRng) -> ObservationSpec {
    let c = 0.1 + rng.random::<f64>();
    match scenario % 4 {
        0 => ObservationSpec::full_state(DVector::from_fn(n * m, |_, _| rng.sample(StandardNormal)), c),
        1 => ObservationSpec::first_variable(DVector::from_fn(n, |_, _| rng.sample(StandardNormal)), c),
        2 => {
            let k = rng.random_range(1..=4.min(n));
            let mut h = DMatrix::zeros(k, n);
            for r in 0..k {
                let i = rng.random_range(0..n);
                let w = rng.random::<f64>();
                h[(r, i)] = w;
                h[(r, (i + 1) % n)] += 1.0 - w;
            }
            let l = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let noise = &l * l.transpose() + DMatrix::identity(k, k) * 0.5;
            let data = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            ObservationSpec::few_points(h, noise, data)
        }
        _ => {
            let size = rng.random_range(1..=n);
            let mut indices = sample(rng, n, size).into_vec();
            indices.sort_unstable();
            let data = DVector::from_fn(size, |_, _| rng.sample::<f64, _>(StandardNormal));
            ObservationSpec::partial_region(indices, n, c, data)
        }
    }
    .expect("random observation parameters are valid")
}

/// A random small analysis problem with shared perturbation draws.
#[derive(Clone, Debug)]
pub struct KernelInstance {
    pub ensemble: Ensemble,
    pub observation: ObservationSpec,
    pub transform: BlockTransform,
    pub perturbed: PerturbedObservations,
}

impl KernelInstance {
    /// Instance `index` of the stream `seed`: `n <= 32`, `m <= 3`,
    /// `N <= 8`, scenario `index % 4`, basis cycling through
    /// identity, DCT, DST and coif2 DWT.
    pub fn random(seed: u64, index: usize) -> Self {
        let mut rng = substream(seed, &[index as u64]);
        let kind = [
            TransformKind::Identity,
            TransformKind::Dct,
            TransformKind::Dst,
            TransformKind::coif2(),
        ][(index / 4) % 4];
        let n = match kind {
            TransformKind::Dwt { .. } => 1 << rng.random_range(2..=5),
            _ => rng.random_range(2..=32),
        };
        let m = rng.random_range(1..=3);
        let members = rng.random_range(2..=8);
        let per_variable = SpectralTransform::line(kind, n).expect("valid transform size");
        let transform = BlockTransform::new(per_variable, m).expect("positive variable count");
        let spread = 0.2 + 2.0 * rng.random::<f64>();
        let ensemble = Ensemble::new(DMatrix::from_fn(n * m, members, |_, _| {
            spread * rng.sample::<f64, _>(StandardNormal)
        }))
        .expect("finite entries");
        let observation = random_observation(index, n, m, &mut rng);
        let perturbed = observation.perturb(members, &mut rng).expect("valid noise");
        Self {
            ensemble,
            observation,
            transform,
            perturbed,
        }
    }

    /// Output of the structured kernel for this scenario.
    pub fn structured(&self) -> Result<Ensemble> {
        let (e, obs, t, p) = (&self.ensemble, &self.observation, &self.transform, &self.perturbed);
        match obs.scenario() {
            Scenario::FullState { .. } => sd_analysis_full_obs(e, obs, t, p),
            Scenario::FirstVariable { .. } => sd_analysis_one_var_full(e, obs, t, p),
            Scenario::FewPoints { .. } => sd_analysis_few_points(e, obs, t, p),
            Scenario::PartialRegion { .. } => sd_analysis_augmented(e, obs, t, p),
        }
    }

    pub fn reference(&self) -> Result<Ensemble> {
        sd_analysis_dense_reference(&self.ensemble, &self.observation, &self.transform, &self.perturbed)
    }

    /// `max |structured - reference| / max(1, max |reference|)`.
    pub fn relative_difference(&self) -> Result<f64> {
        let fast = self.structured()?;
        let dense = self.reference()?;
        let scale = dense.matrix().amax().max(1.0);
        Ok((fast.matrix() - dense.matrix()).amax() / scale)
    }

    pub fn describe(&self) -> String {
        let scenario = match self.observation.scenario() {
            Scenario::FullState { .. } => "full",
            Scenario::FirstVariable { .. } => "first-variable",
            Scenario::FewPoints { .. } => "points",
            Scenario::PartialRegion { .. } => "region",
        };
        format!(
            "{scenario} {} n={} m={} N={}",
            self.transform.per_variable().kind().label(),
            self.transform.block_len(),
            self.transform.variables(),
            self.ensemble.size()
        )
    }
}

/// Structured kernels against the dense reference on `instances` random problems.
pub fn kernel_checks(seed: u64, instances: usize) -> Result<Vec<Check>> {
    (0..instances)
        .map(|i| {
            let inst = KernelInstance::random(seed, i);
            Ok(Check {
                name: format!("kernel #{i} {}", inst.describe()),
                value: inst.relative_difference()?,
                tolerance: 1e-8,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_checks_pass() {
        let checks = transform_checks(1).unwrap();
        assert_eq!(checks.len(), 24);
        for c in &checks {
            assert!(c.pass(), "{} = {}", c.name, c.value);
        }
    }

    #[test]
    fn kernel_checks_pass_and_cover_all_scenarios() {
        let checks = kernel_checks(2, 16).unwrap();
        for c in &checks {
            assert!(c.pass(), "{} = {}", c.name, c.value);
        }
        for s in ["full", "first-variable", "points", "region"] {
            assert!(checks.iter().any(|c| c.name.contains(s)));
        }
    }

    #[test]
    fn instances_are_reproducible() {
        let a = KernelInstance::random(5, 3);
        let b = KernelInstance::random(5, 3);
        assert_eq!(a.ensemble, b.ensemble);
        assert_eq!(a.perturbed, b.perturbed);
    }
}
