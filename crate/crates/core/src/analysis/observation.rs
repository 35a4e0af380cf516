use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Upper bound on the number of point observations handled by a dense `k x k` solve.
pub const FEW_POINTS_LIMIT: usize = 512;

/// Structured observation operators `H` with their noise covariances `R`.
#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    /// `H = I` on the whole state, `R = cI`.
    FullState { variance: f64 },
    /// `H = [I 0 ... 0]`: the first variable observed everywhere, `R = cI`.
    FirstVariable { variance: f64 },
    /// `H = [H_1 0 ... 0]` with `k` rows acting on the first variable, any SPD `R`.
    FewPoints {
        operator: DMatrix<f64>,
        noise: DMatrix<f64>,
    },
    /// The first variable observed on the sorted index set `indices`, `R = cI`.
    PartialRegion {
        indices: Vec<usize>,
        block_len: usize,
        variance: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObservationNoise {
    /// `R = cI`
    Scalar(f64),
    Covariance(DMatrix<f64>),
}

/// Observation scenario together with its data vector `Y`.
///
/// For [`Scenario::PartialRegion`] the data holds one value per index in `M`,
/// in the order of `indices`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSpec {
    scenario: Scenario,
    data: DVector<f64>,
}

fn check_variance(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "observation variance must be positive, got {c}"
        )))
    }
}

impl ObservationSpec {
    pub fn full_state(data: DVector<f64>, variance: f64) -> Result<Self> {
        check_variance(variance)?;
        Ok(Self {
            scenario: Scenario::FullState { variance },
            data,
        })
    }

    pub fn first_variable(data: DVector<f64>, variance: f64) -> Result<Self> {
        check_variance(variance)?;
        Ok(Self {
            scenario: Scenario::FirstVariable { variance },
            data,
        })
    }

    pub fn few_points(operator: DMatrix<f64>, noise: DMatrix<f64>, data: DVector<f64>) -> Result<Self> {
        let k = operator.nrows();
        if k == 0 || k > FEW_POINTS_LIMIT {
            return Err(Error::TooLarge {
                context: "point observations",
                size: k,
                limit: FEW_POINTS_LIMIT,
            });
        }
        if noise.shape() != (k, k) {
            return Err(Error::dims("observation noise covariance", k, noise.nrows()));
        }
        if data.len() != k {
            return Err(Error::dims("point observation data", k, data.len()));
        }
        if (&noise - noise.transpose()).amax() > 1e-12 * noise.amax() || noise.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("observation noise covariance".into()));
        }
        Ok(Self {
            scenario: Scenario::FewPoints { operator, noise },
            data,
        })
    }

    /// Point observations picking the entries `indices` of the first variable.
    pub fn selection(indices: &[usize], block_len: usize, variance: f64, data: DVector<f64>) -> Result<Self> {
        check_variance(variance)?;
        let mut h = DMatrix::zeros(indices.len(), block_len);
        for (row, &idx) in indices.iter().enumerate() {
            if idx >= block_len {
                return Err(Error::invalid(format!("observed index {idx} outside 0..{block_len}")));
            }
            h[(row, idx)] = 1.0;
        }
        let r = DMatrix::identity(indices.len(), indices.len()) * variance;
        Self::few_points(h, r, data)
    }

    pub fn partial_region(indices: Vec<usize>, block_len: usize, variance: f64, data: DVector<f64>) -> Result<Self> {
        check_variance(variance)?;
        if indices.is_empty() {
            return Err(Error::invalid("observed region must be nonempty"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("observed region indices must be strictly increasing"));
        }
        if indices.last().is_some_and(|&i| i >= block_len) {
            return Err(Error::invalid("observed region exceeds the variable length"));
        }
        if data.len() != indices.len() {
            return Err(Error::dims("region observation data", indices.len(), data.len()));
        }
        Ok(Self {
            scenario: Scenario::PartialRegion {
                indices,
                block_len,
                variance,
            },
            data,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    /// Same scenario with new data values.
    pub fn with_data(&self, data: DVector<f64>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::dims("observation data", self.data.len(), data.len()));
        }
        Ok(Self {
            scenario: self.scenario.clone(),
            data,
        })
    }

    pub fn noise(&self) -> ObservationNoise {
        match &self.scenario {
            Scenario::FullState { variance }
            | Scenario::FirstVariable { variance }
            | Scenario::PartialRegion { variance, .. } => ObservationNoise::Scalar(*variance),
            Scenario::FewPoints { noise, .. } => ObservationNoise::Covariance(noise.clone()),
        }
    }

    /// Length of one variable block, when the scenario fixes it.
    pub fn block_len(&self) -> Option<usize> {
        match &self.scenario {
            Scenario::FullState { .. } => None,
            Scenario::FirstVariable { .. } => Some(self.data.len()),
            Scenario::FewPoints { operator, .. } => Some(operator.ncols()),
            Scenario::PartialRegion { block_len, .. } => Some(*block_len),
        }
    }

    /// Checks that the scenario fits a state of length `state_len`; returns
    /// the number of variables.
    pub fn variables_for(&self, state_len: usize) -> Result<usize> {
        match self.block_len() {
            None if self.data.len() == state_len => Ok(1),
            None => Err(Error::dims("full-state observation data", state_len, self.data.len())),
            Some(n) if n > 0 && state_len % n == 0 => Ok(state_len / n),
            Some(n) => Err(Error::invalid(format!(
                "state length {state_len} is not a multiple of the observed block length {n}"
            ))),
        }
    }

    /// `H x` for a state vector.
    pub fn observe(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.variables_for(x.len())?;
        Ok(match &self.scenario {
            Scenario::FullState { .. } => DVector::from_column_slice(x),
            Scenario::FirstVariable { .. } => DVector::from_column_slice(&x[..self.data.len()]),
            Scenario::FewPoints { operator, .. } => operator * DVector::from_column_slice(&x[..operator.ncols()]),
            Scenario::PartialRegion { indices, .. } => {
                DVector::from_iterator(indices.len(), indices.iter().map(|&i| x[i]))
            }
        })
    }

    /// Dense `H` for a state of length `state_len`.
    pub fn explicit_operator(&self, state_len: usize) -> Result<DMatrix<f64>> {
        self.variables_for(state_len)?;
        let k = self.data.len();
        let mut h = DMatrix::zeros(k, state_len);
        match &self.scenario {
            Scenario::FullState { .. } | Scenario::FirstVariable { .. } => {
                h.fill_diagonal(1.0);
            }
            Scenario::FewPoints { operator, .. } => {
                h.columns_mut(0, operator.ncols()).copy_from(operator);
            }
            Scenario::PartialRegion { indices, .. } => {
                for (row, &i) in indices.iter().enumerate() {
                    h[(row, i)] = 1.0;
                }
            }
        }
        Ok(h)
    }

    /// Dense `R`.
    pub fn explicit_noise(&self) -> DMatrix<f64> {
        match self.noise() {
            ObservationNoise::Scalar(c) => DMatrix::identity(self.data.len(), self.data.len()) * c,
            ObservationNoise::Covariance(r) => r,
        }
    }

    /// Data in the layout perturbations are drawn in: padded with zeros
    /// off the observed set for [`Scenario::PartialRegion`].
    pub fn perturbation_base(&self) -> DVector<f64> {
        match &self.scenario {
            Scenario::PartialRegion { indices, block_len, .. } => {
                let mut padded = DVector::zeros(*block_len);
                for (&i, y) in indices.iter().zip(self.data.iter()) {
                    padded[i] = *y;
                }
                padded
            }
            _ => self.data.clone(),
        }
    }

    /// Point-observation form of a region observation (`H_1` selects `M`).
    pub fn region_as_points(&self) -> Result<Self> {
        match &self.scenario {
            Scenario::PartialRegion {
                indices,
                block_len,
                variance,
            } => Self::selection(indices, *block_len, *variance, self.data.clone()),
            _ => Err(Error::invalid("only region observations convert to point form")),
        }
    }
}

/// Perturbed data vectors `Y^j = Y + tau^j`, one column per member.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedObservations {
    values: DMatrix<f64>,
}

impl PerturbedObservations {
    pub fn new(values: DMatrix<f64>) -> Self {
        Self { values }
    }

    /// Every member sees the unperturbed data.
    pub fn unperturbed(obs: &ObservationSpec, members: usize) -> Self {
        let base = obs.perturbation_base();
        Self {
            values: DMatrix::from_fn(base.len(), members, |i, _| base[i]),
        }
    }

    pub fn members(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn member(&self, j: usize) -> &[f64] {
        let k = self.len();
        &self.values.as_slice()[j * k..(j + 1) * k]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Keep only the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(rows),
        }
    }

    /// Perturbed data in the explicit `H` layout of `obs`.
    pub fn explicit_for(&self, obs: &ObservationSpec) -> Self {
        match obs.scenario() {
            Scenario::PartialRegion { indices, .. } if self.len() != indices.len() => self.select_rows(indices),
            _ => self.clone(),
        }
    }

    pub(crate) fn check(&self, expected_len: usize, members: usize) -> Result<()> {
        if self.len() != expected_len {
            return Err(Error::dims("perturbed observation length", expected_len, self.len()));
        }
        if self.members() != members {
            return Err(Error::dims("perturbed observation count", members, self.members()));
        }
        Ok(())
    }
}

/// `count` perturbed copies of `data` with independent `N(0, R)` noise.
pub fn perturb_observations<R: Rng + ?Sized>(
    data: &DVector<f64>,
    noise: &ObservationNoise,
    count: usize,
    rng: &mut R,
) -> Result<PerturbedObservations> {
    let k = data.len();
    let mut values = DMatrix::from_fn(k, count, |_, _| rng.sample::<f64, _>(StandardNormal));
    match noise {
        ObservationNoise::Scalar(c) => {
            check_variance(*c)?;
            values *= c.sqrt();
        }
        ObservationNoise::Covariance(r) => {
            if r.shape() != (k, k) {
                return Err(Error::dims("observation noise covariance", k, r.nrows()));
            }
            let chol = r
                .clone()
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("observation noise covariance".into()))?;
            values = chol.l() * values;
        }
    }
    for mut col in values.column_iter_mut() {
        col += data;
    }
    Ok(PerturbedObservations { values })
}

impl ObservationSpec {
    /// Perturbed data for `members` ensemble members, drawn in the layout of
    /// [`ObservationSpec::perturbation_base`].
    pub fn perturb<R: Rng + ?Sized>(&self, members: usize, rng: &mut R) -> Result<PerturbedObservations> {
        perturb_observations(&self.perturbation_base(), &self.noise(), members, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn constructors_validate() {
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(ObservationSpec::full_state(y.clone(), 0.0).is_err());
        assert!(ObservationSpec::partial_region(vec![], 4, 1.0, DVector::zeros(0)).is_err());
        assert!(ObservationSpec::partial_region(vec![2, 1], 4, 1.0, y.clone()).is_err());
        assert!(ObservationSpec::partial_region(vec![1, 4], 4, 1.0, y.clone()).is_err());
        let bad_r = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(ObservationSpec::few_points(DMatrix::identity(2, 4), bad_r, y.clone()).is_err());
        let too_many = DMatrix::zeros(FEW_POINTS_LIMIT + 1, 4);
        assert!(ObservationSpec::few_points(
            too_many,
            DMatrix::identity(FEW_POINTS_LIMIT + 1, FEW_POINTS_LIMIT + 1),
            DVector::zeros(FEW_POINTS_LIMIT + 1)
        )
        .is_err());
    }

    #[test]
    fn operators_agree_with_explicit_matrices() {
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 1.5 - 2.0).collect();
        let specs = [
            ObservationSpec::full_state(DVector::zeros(8), 1.0).unwrap(),
            ObservationSpec::first_variable(DVector::zeros(4), 1.0).unwrap(),
            ObservationSpec::selection(&[0, 3], 4, 2.0, DVector::zeros(2)).unwrap(),
            ObservationSpec::partial_region(vec![1, 2], 4, 1.0, DVector::zeros(2)).unwrap(),
        ];
        for spec in specs {
            let h = spec.explicit_operator(8).unwrap();
            let direct = spec.observe(&x).unwrap();
            assert_eq!(h * DVector::from_column_slice(&x), direct);
        }
    }

    #[test]
    fn region_perturbation_base_is_padded() {
        let spec = ObservationSpec::partial_region(vec![1, 3], 5, 1.0, DVector::from_vec(vec![7.0, 9.0])).unwrap();
        assert_eq!(spec.perturbation_base().as_slice(), &[0.0, 7.0, 0.0, 9.0, 0.0]);
        let p = PerturbedObservations::unperturbed(&spec, 2);
        assert_eq!(p.explicit_for(&spec).member(1), &[7.0, 9.0]);
    }

    #[test]
    fn tiny_noise_gives_negligible_perturbations() {
        let y = DVector::from_vec(vec![1.0, -2.0]);
        let mut rng = substream(3, &[]);
        let p = perturb_observations(&y, &ObservationNoise::Scalar(1e-30), 10, &mut rng).unwrap();
        for j in 0..10 {
            assert!((p.member(j)[0] - 1.0).abs() < 1e-13);
            assert!((p.member(j)[1] + 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn perturbation_moments() {
        let y = DVector::from_vec(vec![0.0]);
        let mut rng = substream(5, &[]);
        let count = 100_000;
        let p = perturb_observations(&y, &ObservationNoise::Scalar(1.0), count, &mut rng).unwrap();
        let mean = p.values().sum() / count as f64;
        let var = p.values().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn correlated_perturbations_follow_r() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let y = DVector::zeros(2);
        let mut rng = substream(6, &[]);
        let p = perturb_observations(&y, &ObservationNoise::Covariance(r.clone()), 50_000, &mut rng).unwrap();
        let e = crate::ensemble::Ensemble::new(p.values().clone()).unwrap();
        let c = crate::ensemble::sample_covariance(&e).unwrap();
        assert!((c - r).amax() < 0.06);
    }

    #[test]
    fn same_seed_same_draws() {
        let spec = ObservationSpec::full_state(DVector::from_vec(vec![1.0, 2.0, 3.0]), 0.5).unwrap();
        let a = spec.perturb(4, &mut substream(9, &[1])).unwrap();
        let b = spec.perturb(4, &mut substream(9, &[1])).unwrap();
        assert_eq!(a, b);
    }
}
