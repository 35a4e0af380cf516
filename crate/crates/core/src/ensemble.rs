//! Ensemble container and the sample statistics the filters consume.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default guard on the state length for which dense `n x n` covariances are formed.
pub const DENSE_COVARIANCE_LIMIT: usize = 4096;

/// `n x N` matrix whose columns are the ensemble members.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    data: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid("ensemble must have a positive state length and size"));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Blowup(format!(
                "non-finite entry in member {} at index {}",
                pos / data.nrows(),
                pos % data.nrows()
            )));
        }
        Ok(Self { data })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::dims("ensemble member", n, bad.len()));
        }
        Self::new(DMatrix::from_iterator(
            n,
            columns.len(),
            columns.iter().flatten().copied(),
        ))
    }

    /// `size` copies of `state`.
    pub fn replicate(state: &[f64], size: usize) -> Result<Self> {
        Self::new(DMatrix::from_fn(state.len(), size, |i, _| state[i]))
    }

    pub fn state_len(&self) -> usize {
        self.data.nrows()
    }

    /// Number of members `N`.
    pub fn size(&self) -> usize {
        self.data.ncols()
    }

    pub fn member(&self, j: usize) -> &[f64] {
        let n = self.state_len();
        &self.data.as_slice()[j * n..(j + 1) * n]
    }

    pub fn members(&self) -> impl Iterator<Item = &[f64]> {
        self.data.as_slice().chunks_exact(self.state_len())
    }

    pub fn members_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        let n = self.state_len();
        self.data.as_mut_slice().chunks_exact_mut(n)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn mean(&self) -> DVector<f64> {
        sample_mean(self)
    }

    /// Deviations from the ensemble mean, one column per member.
    pub fn anomalies(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut a = self.data.clone();
        for mut col in a.column_iter_mut() {
            col -= &mean;
        }
        a
    }

    /// Scale deviations from the mean by `sqrt(factor)`, multiplying the
    /// sample covariance by `factor`.
    pub fn inflate(&self, factor: f64) -> Result<Self> {
        if !(factor >= 1.0) {
            return Err(Error::invalid(format!("inflation must be >= 1, got {factor}")));
        }
        if factor == 1.0 {
            return Ok(self.clone());
        }
        let mean = self.mean();
        let scale = factor.sqrt();
        let mut data = self.anomalies() * scale;
        for mut col in data.column_iter_mut() {
            col += &mean;
        }
        Self::new(data)
    }

    /// Rows `start..start + len` of every member.
    pub fn rows(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.state_len() {
            return Err(Error::dims("ensemble row range", self.state_len(), start + len));
        }
        Self::new(self.data.rows(start, len).into_owned())
    }
}

fn require_members(e: &Ensemble, min: usize) -> Result<()> {
    if e.size() < min {
        Err(Error::invalid(format!(
            "ensemble of size {} is too small, need at least {min} members",
            e.size()
        )))
    } else {
        Ok(())
    }
}

/// Arithmetic mean of the members.
pub fn sample_mean(e: &Ensemble) -> DVector<f64> {
    let mut mean = DVector::zeros(e.state_len());
    for member in e.members() {
        for (m, x) in mean.iter_mut().zip(member) {
            *m += x;
        }
    }
    mean / e.size() as f64
}

/// Unbiased sample covariance `(1/(N-1)) sum_j (X^j - mean)(X^j - mean)^T`.
pub fn sample_covariance(e: &Ensemble) -> Result<DMatrix<f64>> {
    sample_covariance_with_limit(e, DENSE_COVARIANCE_LIMIT)
}

pub fn sample_covariance_with_limit(e: &Ensemble, limit: usize) -> Result<DMatrix<f64>> {
    require_members(e, 2)?;
    if e.state_len() > limit {
        return Err(Error::TooLarge {
            context: "dense sample covariance",
            size: e.state_len(),
            limit,
        });
    }
    let a = e.anomalies();
    let mut c = &a * a.transpose() / (e.size() - 1) as f64;
    // The product is symmetric up to roundoff; make it exactly so.
    c = (&c + c.transpose()) * 0.5;
    Ok(c)
}

/// Per-mode sample variances `c_ii` of a (transformed) ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalCovariance {
    pub variances: DVector<f64>,
}

impl DiagonalCovariance {
    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.variances)
    }
}

/// Sample variance of every row, without forming the full covariance.
pub fn spectral_diagonal(e_f: &Ensemble) -> Result<DiagonalCovariance> {
    require_members(e_f, 2)?;
    let mean = sample_mean(e_f);
    let mut variances = DVector::zeros(e_f.state_len());
    for member in e_f.members() {
        for ((v, x), m) in variances.iter_mut().zip(member).zip(mean.iter()) {
            let d = x - m;
            *v += d * d;
        }
    }
    variances /= (e_f.size() - 1) as f64;
    Ok(DiagonalCovariance { variances })
}

/// Diagonals of the spectral cross-covariances between `m` variables.
///
/// Block `(i, j)` holds, per mode `k`, the sample covariance of entry `k` of
/// variable `i` with entry `k` of variable `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossDiagonalBlocks {
    block_len: usize,
    variables: usize,
    blocks: Vec<DVector<f64>>,
}

impl CrossDiagonalBlocks {
    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn variables(&self) -> usize {
        self.variables
    }

    pub fn block(&self, i: usize, j: usize) -> &DVector<f64> {
        &self.blocks[i * self.variables + j]
    }

    /// The full `nm x nm` matrix with each block placed on its diagonal.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.block_len, self.variables);
        let mut d = DMatrix::zeros(n * m, n * m);
        for i in 0..m {
            for j in 0..m {
                for (k, value) in self.block(i, j).iter().enumerate() {
                    d[(i * n + k, j * n + k)] = *value;
                }
            }
        }
        d
    }
}

/// Cross-diagonal blocks of a transformed multivariate ensemble.
pub fn cross_diagonals(e_f: &Ensemble, variables: usize) -> Result<CrossDiagonalBlocks> {
    require_members(e_f, 2)?;
    if variables == 0 || e_f.state_len() % variables != 0 {
        return Err(Error::invalid(format!(
            "state length {} is not divisible into {variables} variables",
            e_f.state_len()
        )));
    }
    let n = e_f.state_len() / variables;
    let a = e_f.anomalies();
    let scale = 1.0 / (e_f.size() - 1) as f64;
    let mut blocks = vec![DVector::zeros(n); variables * variables];
    for i in 0..variables {
        for j in i..variables {
            let mut block = DVector::zeros(n);
            for member in a.column_iter() {
                let xi = member.rows(i * n, n);
                let xj = member.rows(j * n, n);
                for ((b, p), q) in block.iter_mut().zip(xi.iter()).zip(xj.iter()) {
                    *b += p * q;
                }
            }
            block *= scale;
            blocks[j * variables + i] = block.clone();
            blocks[i * variables + j] = block;
        }
    }
    Ok(CrossDiagonalBlocks {
        block_len: n,
        variables,
        blocks,
    })
}

/// Correlation-shaped taper for multivariate fields on a 2-D grid.
///
/// Within a variable, nodes `a = (i_a, j_a)` and `b` are weighted by
/// `exp(-decay_x |i_a - i_b|) exp(-decay_y |j_a - j_b|)`; between different
/// variables the same weight is further multiplied by `block_scale`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TaperSpec {
    pub block_scale: f64,
    pub decay_x: f64,
    pub decay_y: f64,
}

impl Default for TaperSpec {
    fn default() -> Self {
        Self {
            block_scale: 0.9,
            decay_x: 1.0,
            decay_y: 1.0,
        }
    }
}

impl TaperSpec {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.block_scale) {
            return Err(Error::invalid("taper block scale must lie in [0, 1]"));
        }
        if !(self.decay_x >= 0.0 && self.decay_y >= 0.0) {
            return Err(Error::invalid("taper decay rates must be nonnegative"));
        }
        Ok(())
    }

    fn weight(&self, grid: (usize, usize), a: usize, b: usize, variables: usize) -> f64 {
        let (nx, ny) = grid;
        let cell = nx * ny;
        let (va, vb) = (a / cell, b / cell);
        debug_assert!(va < variables && vb < variables);
        let (pa, pb) = (a % cell, b % cell);
        let di = (pa / ny).abs_diff(pb / ny) as f64;
        let dj = (pa % ny).abs_diff(pb % ny) as f64;
        let w = (-self.decay_x * di).exp() * (-self.decay_y * dj).exp();
        if va == vb {
            w
        } else {
            self.block_scale * w
        }
    }
}

/// The taper matrix `T` itself.
pub fn taper_matrix(spec: &TaperSpec, grid: (usize, usize), variables: usize) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = variables * grid.0 * grid.1;
    Ok(DMatrix::from_fn(n, n, |a, b| spec.weight(grid, a, b, variables)))
}

/// Schur product `C o T` with the taper described by `spec`.
pub fn taper_covariance(
    c: &DMatrix<f64>,
    spec: &TaperSpec,
    grid: (usize, usize),
    variables: usize,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = variables * grid.0 * grid.1;
    if c.nrows() != n || c.ncols() != n {
        return Err(Error::dims("tapered covariance", n, c.nrows().max(c.ncols())));
    }
    Ok(DMatrix::from_fn(n, n, |a, b| {
        c[(a, b)] * spec.weight(grid, a, b, variables)
    }))
}

/// Draws from `N(0, B)` through a clamped symmetric square root of `B`.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(b: &DMatrix<f64>) -> Result<Self> {
        let n = b.nrows();
        if b.ncols() != n {
            return Err(Error::dims("covariance columns", n, b.ncols()));
        }
        let scale = b.amax();
        let asym = (b - b.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::NotPositiveDefinite(format!(
                "asymmetry {asym:.3e} exceeds tolerance"
            )));
        }
        if scale == 0.0 {
            return Ok(Self {
                factor: DMatrix::zeros(n, n),
            });
        }
        let eig = b.clone().symmetric_eigen();
        let norm = eig.eigenvalues.amax();
        let min = eig.eigenvalues.min();
        if min < -1e-8 * norm {
            return Err(Error::NotPositiveDefinite(format!(
                "eigenvalue {min:.3e} below tolerance for norm {norm:.3e}"
            )));
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let mut factor = eig.eigenvectors;
        for (mut col, r) in factor.column_iter_mut().zip(roots.iter()) {
            col *= *r;
        }
        Ok(Self { factor })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// `count` independent zero-mean draws, one per column.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Ensemble> {
        let n = self.dim();
        let z = DMatrix::from_fn(n, count, |_, _| rng.sample::<f64, _>(StandardNormal));
        Ensemble::new(&self.factor * z)
    }
}

/// `count` draws from `N(0, B)`; negative eigenvalues within tolerance are clamped.
pub fn sample_gaussian_perturbations<R: Rng + ?Sized>(b: &DMatrix<f64>, count: usize, rng: &mut R) -> Result<Ensemble> {
    GaussianSampler::new(b)?.sample(count, rng)
}

/// Clamped symmetric square root of a small symmetric PSD matrix.
fn symmetric_sqrt(a: DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.symmetric_eigen();
    let roots = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * roots * eig.eigenvectors.transpose()
}

/// Draws from `N(0, C o T)` where `C` is the sample covariance of a set of
/// snapshots and `T` the taper of a [`TaperSpec`], without forming either.
///
/// With snapshot anomalies `a_s`, `C o T = (1/(S-1)) sum_s diag(a_s) T diag(a_s)`,
/// and `T` factors as a Kronecker product of a variable-coupling matrix and
/// one Toeplitz factor per grid direction. A draw is therefore
/// `(1/sqrt(S-1)) sum_s a_s o (T^{1/2} z_s)` with independent standard
/// normal `z_s`, and `T^{1/2}` is applied one small factor at a time.
#[derive(Clone, Debug)]
pub struct TaperedSnapshotSampler {
    anomalies: DMatrix<f64>,
    grid: (usize, usize),
    variables: usize,
    root_variables: DMatrix<f64>,
    root_x: DMatrix<f64>,
    root_y: DMatrix<f64>,
}

impl TaperedSnapshotSampler {
    /// `snapshots` holds one state per column, laid out variable-major over
    /// `variables` fields on the `grid`.
    pub fn new(snapshots: &Ensemble, spec: &TaperSpec, grid: (usize, usize), variables: usize) -> Result<Self> {
        spec.validate()?;
        let n = variables * grid.0 * grid.1;
        if snapshots.state_len() != n {
            return Err(Error::dims("snapshot length", n, snapshots.state_len()));
        }
        if snapshots.size() < 2 {
            return Err(Error::invalid("at least two snapshots are needed"));
        }
        let toeplitz =
            |len: usize, decay: f64| DMatrix::from_fn(len, len, |a, b| (-decay * a.abs_diff(b) as f64).exp());
        let coupling = DMatrix::from_fn(variables, variables, |a, b| if a == b { 1.0 } else { spec.block_scale });
        Ok(Self {
            anomalies: snapshots.anomalies() / ((snapshots.size() - 1) as f64).sqrt(),
            grid,
            variables,
            root_variables: symmetric_sqrt(coupling),
            root_x: symmetric_sqrt(toeplitz(grid.0, spec.decay_x)),
            root_y: symmetric_sqrt(toeplitz(grid.1, spec.decay_y)),
        })
    }

    pub fn dim(&self) -> usize {
        self.anomalies.nrows()
    }

    /// `T^{1/2} z` for `z` laid out as `variables x nx x ny`.
    fn apply_taper_root(&self, z: &mut [f64]) {
        let (nx, ny) = self.grid;
        let cell = nx * ny;
        let mut line = vec![0.0; nx.max(ny).max(self.variables)];
        for field in z.chunks_exact_mut(cell) {
            for row in field.chunks_exact_mut(ny) {
                let y = &self.root_y * DVector::from_column_slice(row);
                row.copy_from_slice(y.as_slice());
            }
            for j in 0..ny {
                for i in 0..nx {
                    line[i] = field[i * ny + j];
                }
                let y = &self.root_x * DVector::from_column_slice(&line[..nx]);
                for i in 0..nx {
                    field[i * ny + j] = y[i];
                }
            }
        }
        for p in 0..cell {
            for v in 0..self.variables {
                line[v] = z[v * cell + p];
            }
            let y = &self.root_variables * DVector::from_column_slice(&line[..self.variables]);
            for v in 0..self.variables {
                z[v * cell + p] = y[v];
            }
        }
    }

    /// `count` independent zero-mean draws, one per column.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Ensemble> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, count);
        let mut z = vec![0.0; n];
        for mut col in out.column_iter_mut() {
            for a in self.anomalies.column_iter() {
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                self.apply_taper_root(&mut z);
                for ((o, x), t) in col.iter_mut().zip(a.iter()).zip(&z) {
                    *o += x * t;
                }
            }
        }
        Ensemble::new(out)
    }

    /// The covariance of the draws, `C o T`, formed densely (small states only).
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if n > DENSE_COVARIANCE_LIMIT {
            return Err(Error::TooLarge {
                context: "dense tapered covariance",
                size: n,
                limit: DENSE_COVARIANCE_LIMIT,
            });
        }
        let mut root = DMatrix::identity(n, n);
        for mut col in root.column_iter_mut() {
            let mut v: Vec<f64> = col.iter().copied().collect();
            self.apply_taper_root(&mut v);
            col.copy_from_slice(&v);
        }
        let taper = &root * root.transpose();
        let c = &self.anomalies * self.anomalies.transpose();
        Ok(c.component_mul(&taper))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn small() -> Ensemble {
        Ensemble::from_columns(&[vec![1.0, 0.5], vec![2.0, -1.0], vec![6.0, 2.0]]).unwrap()
    }

    #[test]
    fn means() {
        let e = Ensemble::from_columns(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(sample_mean(&e)[0], 1.0);
        let single = Ensemble::from_columns(&[vec![4.0, -3.0]]).unwrap();
        assert_eq!(sample_mean(&single).as_slice(), &[4.0, -3.0]);
        assert!((sample_mean(&small())[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn covariance_by_hand() {
        let e = Ensemble::from_columns(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(sample_covariance(&e).unwrap()[(0, 0)], 2.0);
        let same = Ensemble::replicate(&[1.0, 2.0, 3.0], 4).unwrap();
        assert_eq!(sample_covariance(&same).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn covariance_needs_two_members() {
        let e = Ensemble::from_columns(&[vec![1.0]]).unwrap();
        assert!(sample_covariance(&e).is_err());
        assert!(spectral_diagonal(&e).is_err());
    }

    #[test]
    fn covariance_guard() {
        let e = Ensemble::new(DMatrix::from_fn(10, 3, |i, j| (i + j) as f64)).unwrap();
        assert!(matches!(
            sample_covariance_with_limit(&e, 8),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn non_finite_members_are_rejected() {
        assert!(Ensemble::from_columns(&[vec![1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn spectral_diagonal_by_hand() {
        let e = Ensemble::from_columns(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(spectral_diagonal(&e).unwrap().variances.as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn cross_diagonal_with_single_variable_is_spectral_diagonal() {
        let e = small();
        let blocks = cross_diagonals(&e, 1).unwrap();
        assert_eq!(blocks.block(0, 0), &spectral_diagonal(&e).unwrap().variances);
        assert!(cross_diagonals(&e, 3).is_err());
    }

    #[test]
    fn zero_variable_has_zero_cross_blocks() {
        let e = Ensemble::from_columns(&[
            vec![1.0, 2.0, 0.0, 0.0],
            vec![3.0, -1.0, 0.0, 0.0],
            vec![0.5, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        let blocks = cross_diagonals(&e, 2).unwrap();
        assert!(blocks.block(0, 1).iter().all(|x| *x == 0.0));
        assert!(blocks.block(1, 1).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn taper_neighbour_weight() {
        // 2x2 grid, nodes (0,0) and (1,0) in zero-based indexing are one row apart.
        let spec = TaperSpec::default();
        let t = taper_matrix(&spec, (2, 2), 1).unwrap();
        assert!((t[(0, 2)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((t[(0, 3)] - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(t[(1, 1)], 1.0);
    }

    #[test]
    fn taper_with_zero_block_scale_kills_cross_blocks() {
        let spec = TaperSpec {
            block_scale: 0.0,
            ..TaperSpec::default()
        };
        let c = DMatrix::from_element(8, 8, 3.0);
        let b = taper_covariance(&c, &spec, (2, 2), 2).unwrap();
        for a in 0..8 {
            assert_eq!(b[(a, a)], 3.0);
            for other in 0..8 {
                if a / 4 != other / 4 {
                    assert_eq!(b[(a, other)], 0.0);
                }
            }
        }
    }

    #[test]
    fn taper_dimension_mismatch() {
        let c = DMatrix::zeros(5, 5);
        assert!(taper_covariance(&c, &TaperSpec::default(), (2, 2), 1).is_err());
    }

    #[test]
    fn zero_covariance_gives_zero_draws() {
        let mut rng = substream(1, &[]);
        let e = sample_gaussian_perturbations(&DMatrix::zeros(3, 3), 5, &mut rng).unwrap();
        assert!(e.matrix().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn sampler_rejects_bad_covariances() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            GaussianSampler::new(&asym),
            Err(Error::NotPositiveDefinite(_))
        ));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GaussianSampler::new(&indefinite),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn identity_draws_have_identity_covariance() {
        let mut rng = substream(11, &[]);
        let e = sample_gaussian_perturbations(&DMatrix::identity(2, 2), 50_000, &mut rng).unwrap();
        let c = sample_covariance(&e).unwrap();
        assert!((c[(0, 0)] - 1.0).abs() < 0.05);
        assert!((c[(1, 1)] - 1.0).abs() < 0.05);
        assert!(c[(0, 1)].abs() < 0.05);
    }

    #[test]
    fn diagonal_draws_keep_variance_ratio() {
        let mut rng = substream(12, &[]);
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let e = sample_gaussian_perturbations(&b, 50_000, &mut rng).unwrap();
        let d = spectral_diagonal(&e).unwrap().variances;
        assert!((d[0] / d[1] / 4.0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn inflation_scales_covariance() {
        let e = small();
        let inflated = e.inflate(2.0).unwrap();
        let c0 = sample_covariance(&e).unwrap();
        let c1 = sample_covariance(&inflated).unwrap();
        assert!((c1 - c0 * 2.0).amax() < 1e-12);
        assert!(e.inflate(0.5).is_err());
    }

    #[test]
    fn structured_sampler_has_tapered_covariance() {
        let mut rng = substream(31, &[]);
        let grid = (4, 3);
        let variables = 3;
        let n = variables * 12;
        let snaps = Ensemble::new(DMatrix::from_fn(n, 6, |_, _| rng.sample::<f64, _>(StandardNormal))).unwrap();
        let spec = TaperSpec {
            block_scale: 0.7,
            decay_x: 0.5,
            decay_y: 1.5,
        };
        let sampler = TaperedSnapshotSampler::new(&snaps, &spec, grid, variables).unwrap();
        let dense = taper_covariance(&sample_covariance(&snaps).unwrap(), &spec, grid, variables).unwrap();
        assert!((sampler.covariance().unwrap() - &dense).amax() < 1e-12 * dense.amax());

        let draws = sampler.sample(20_000, &mut rng).unwrap();
        let empirical = sample_covariance(&draws).unwrap();
        for i in 0..n {
            let rel = (empirical[(i, i)] - dense[(i, i)]).abs() / dense[(i, i)];
            assert!(rel < 0.1, "entry {i}: {rel}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn taper_is_psd_on_small_grids(
                nx in 1usize..5,
                ny in 1usize..5,
                variables in 1usize..4,
                block_scale in 0.0f64..=1.0,
                decay_x in 0.1f64..4.0,
                decay_y in 0.1f64..4.0,
            ) {
                let spec = TaperSpec { block_scale, decay_x, decay_y };
                let t = taper_matrix(&spec, (nx, ny), variables).unwrap();
                prop_assert!((&t - t.transpose()).amax() == 0.0);
                let min = t.symmetric_eigen().eigenvalues.min();
                prop_assert!(min > -1e-12, "smallest eigenvalue {}", min);
            }

            #[test]
            fn tapered_sample_covariance_stays_psd(
                seed in any::<u64>(),
                members in 2usize..6,
                block_scale in 0.0f64..=1.0,
            ) {
                let mut rng = substream(seed, &[]);
                let cols: Vec<Vec<f64>> = (0..members)
                    .map(|_| (0..18).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                    .collect();
                let c = sample_covariance(&Ensemble::from_columns(&cols).unwrap()).unwrap();
                let spec = TaperSpec { block_scale, ..TaperSpec::default() };
                let b = taper_covariance(&c, &spec, (3, 2), 3).unwrap();
                let min = b.symmetric_eigen().eigenvalues.min();
                prop_assert!(min > -1e-10 * c.amax(), "smallest eigenvalue {}", min);
            }
        }
    }
}
