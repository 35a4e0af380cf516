//! Closed-form expected errors of the sample covariance and of its spectral
//! diagonal, and Monte Carlo estimators that check them.
//!
//! For `N` i.i.d. `N(0, C)` members and a basis of eigenvectors of `C` with
//! eigenvalues `lambda`, every entry of the spectral sample covariance is
//! unbiased with variance `2 lambda_i^2 / (N-1)` on the diagonal and
//! `lambda_i lambda_j / (N-1)` off it. Summing those variances over all
//! entries, or only the diagonal, gives the two expected squared Frobenius
//! errors. The simulations work in the eigenbasis (`F = I`,
//! `C = diag(lambda)`), which the Frobenius norm does not distinguish from
//! any other orthonormal basis.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::substream;

/// Minimum Monte Carlo replication count.
pub const MIN_REPLICATIONS: usize = 1000;
/// Largest spectrum for which dense Frobenius errors are simulated.
pub const MAX_DENSE_DIM: usize = 64;

/// Nonincreasing nonnegative covariance eigenvalues.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
}

impl Spectrum {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::invalid("spectrum must be nonempty"));
        }
        if eigenvalues.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::invalid("eigenvalues must be finite and nonnegative"));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("eigenvalues must be nonincreasing"));
        }
        Ok(Self { eigenvalues })
    }

    /// `lambda_k = k^{-alpha}`, `k = 1..=n`.
    pub fn power_law(alpha: f64, n: usize) -> Result<Self> {
        Self::new((1..=n).map(|k| (k as f64).powf(-alpha)).collect())
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    fn l1(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    fn l2_squared(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l * l).sum()
    }
}

fn dof(members: usize) -> Result<f64> {
    if members < 2 {
        Err(Error::invalid(format!(
            "ensemble size must be at least 2, got {members}"
        )))
    } else {
        Ok((members - 1) as f64)
    }
}

/// `E ||C - C^N||_F^2 = (2/(N-1)) sum lambda_i^2 + (1/(N-1)) sum_{i != j} lambda_i lambda_j`.
pub fn expected_error_sample_cov(s: &Spectrum, members: usize) -> Result<f64> {
    let dof = dof(members)?;
    let l = s.eigenvalues();
    let diagonal: f64 = l.iter().map(|x| x * x).sum();
    let mut off = 0.0;
    for (i, a) in l.iter().enumerate() {
        for (j, b) in l.iter().enumerate() {
            if i != j {
                off += a * b;
            }
        }
    }
    Ok((2.0 * diagonal + off) / dof)
}

/// Same quantity through the norm identity `(||lambda||_1^2 + ||lambda||_2^2) / (N-1)`.
pub fn expected_error_sample_cov_norms(s: &Spectrum, members: usize) -> Result<f64> {
    Ok((s.l1().powi(2) + s.l2_squared()) / dof(members)?)
}

/// `E ||C - D^N||_F^2 = (2/(N-1)) sum lambda_i^2`.
pub fn expected_error_spectral_diag(s: &Spectrum, members: usize) -> Result<f64> {
    Ok(2.0 * s.l2_squared() / dof(members)?)
}

/// Variance of entry `(i, j)` (zero-based) of the spectral sample covariance.
pub fn entry_variance(s: &Spectrum, members: usize, i: usize, j: usize) -> Result<f64> {
    let dof = dof(members)?;
    let l = s.eigenvalues();
    if i >= l.len() || j >= l.len() {
        return Err(Error::invalid(format!(
            "entry ({i}, {j}) outside a spectrum of length {}",
            l.len()
        )));
    }
    Ok(if i == j {
        2.0 * l[i] * l[i] / dof
    } else {
        l[i] * l[j] / dof
    })
}

/// Ratio of the diagonal error to the sample error for `lambda_k = k^{-alpha}`.
/// It does not depend on the ensemble size.
pub fn power_law_error_ratio(alpha: f64, n: usize, members: usize) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::invalid(format!("power-law exponent must exceed 1, got {alpha}")));
    }
    let s = Spectrum::power_law(alpha, n)?;
    Ok(expected_error_spectral_diag(&s, members)? / expected_error_sample_cov(&s, members)?)
}

/// Streaming central moments up to order four (Pebay's update).
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        let n1 = self.count;
        self.count += 1.0;
        let n = self.count;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2 - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count, other.count);
        let n = na + nb;
        let delta = other.mean - self.mean;
        let d2 = delta * delta;
        let d3 = d2 * delta;
        let d4 = d2 * d2;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        let m3 =
            self.m3 + other.m3 + d3 * na * nb * (na - nb) / (n * n) + 3.0 * delta * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + d4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n;
        self.count = n;
        self.mean += delta * nb / n;
        self.m2 = m2;
        self.m3 = m3;
        self.m4 = m4;
    }

    fn variance(&self) -> f64 {
        self.m2 / self.count
    }

    fn mean_std_error(&self) -> f64 {
        (self.variance() / self.count).sqrt()
    }

    /// Large-sample standard error of the (population) variance estimate.
    fn variance_std_error(&self) -> f64 {
        let v = self.variance();
        let mu4 = self.m4 / self.count;
        ((mu4 - v * v).max(0.0) / self.count).sqrt()
    }
}

/// Sample covariance of `members` draws from `N(0, diag(lambda))`.
fn draw_sample_covariance<R: Rng + ?Sized>(s: &Spectrum, members: usize, rng: &mut R) -> DMatrix<f64> {
    let roots: Vec<f64> = s.eigenvalues().iter().map(|l| l.sqrt()).collect();
    let n = roots.len();
    let x = DMatrix::from_fn(n, members, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x = x;
    for (mut row, r) in x.row_iter_mut().zip(&roots) {
        row *= *r;
    }
    let mean = x.column_mean();
    for mut col in x.column_iter_mut() {
        col -= &mean;
    }
    &x * x.transpose() / (members - 1) as f64
}

const CHUNKS: usize = 32;

/// Run `replications` independent replications in a fixed chunk layout so the
/// reduction order does not depend on thread scheduling.
fn replicate<A, F, G>(replications: usize, init: impl Fn() -> A + Sync, step: F, merge: G) -> A
where
    A: Send,
    F: Fn(&mut A, usize) + Sync,
    G: Fn(&mut A, A),
{
    let per_chunk = replications.div_ceil(CHUNKS);
    let partials: Vec<A> = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for r in (c * per_chunk)..((c + 1) * per_chunk).min(replications) {
                step(&mut acc, r);
            }
            acc
        })
        .collect();
    let mut it = partials.into_iter();
    let mut total = it.next().expect("at least one chunk");
    for p in it {
        merge(&mut total, p);
    }
    total
}

/// Per-entry Monte Carlo statistics of the spectral sample covariance.
#[derive(Clone, Debug)]
pub struct EntryVarianceEstimate {
    pub replications: usize,
    /// Empirical variance of each entry across replications.
    pub variance: DMatrix<f64>,
    pub variance_std_error: DMatrix<f64>,
    /// Empirical mean of each entry (unbiasedness check).
    pub mean: DMatrix<f64>,
    pub mean_std_error: DMatrix<f64>,
}

pub fn monte_carlo_entry_variance(
    s: &Spectrum,
    members: usize,
    replications: usize,
    seed: u64,
) -> Result<EntryVarianceEstimate> {
    dof(members)?;
    if replications < MIN_REPLICATIONS {
        return Err(Error::invalid(format!(
            "at least {MIN_REPLICATIONS} replications are required, got {replications}"
        )));
    }
    let n = s.len();
    let moments = replicate(
        replications,
        || vec![Moments::default(); n * n],
        |acc, r| {
            let mut rng = substream(seed, &[r as u64]);
            let c = draw_sample_covariance(s, members, &mut rng);
            for (m, x) in acc.iter_mut().zip(c.iter()) {
                m.push(*x);
            }
        },
        |total, part| {
            for (t, p) in total.iter_mut().zip(&part) {
                t.merge(p);
            }
        },
    );
    let pick = |f: fn(&Moments) -> f64| DMatrix::from_iterator(n, n, moments.iter().map(f));
    Ok(EntryVarianceEstimate {
        replications,
        variance: pick(Moments::variance),
        variance_std_error: pick(Moments::variance_std_error),
        mean: pick(|m| m.mean),
        mean_std_error: pick(Moments::mean_std_error),
    })
}

/// Monte Carlo means of the squared Frobenius errors and their standard errors.
#[derive(Clone, Copy, Debug)]
pub struct FrobeniusErrorEstimate {
    pub replications: usize,
    pub sample_error: f64,
    pub sample_std_error: f64,
    pub diagonal_error: f64,
    pub diagonal_std_error: f64,
}

/// Squared Frobenius errors `||C - C^N||^2` and `||C - D^N||^2`.
pub(crate) fn frobenius_errors(c: &DMatrix<f64>, sample: &DMatrix<f64>) -> (f64, f64) {
    let full = (c - sample).norm_squared();
    let diagonal = (0..c.nrows())
        .flat_map(|i| (0..c.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| {
            let d = if i == j { sample[(i, j)] } else { 0.0 };
            (c[(i, j)] - d).powi(2)
        })
        .sum();
    (full, diagonal)
}

pub fn monte_carlo_frobenius_errors(
    s: &Spectrum,
    members: usize,
    replications: usize,
    seed: u64,
) -> Result<FrobeniusErrorEstimate> {
    dof(members)?;
    if replications < MIN_REPLICATIONS {
        return Err(Error::invalid(format!(
            "at least {MIN_REPLICATIONS} replications are required, got {replications}"
        )));
    }
    if s.len() > MAX_DENSE_DIM {
        return Err(Error::TooLarge {
            context: "dense Frobenius error simulation",
            size: s.len(),
            limit: MAX_DENSE_DIM,
        });
    }
    let c = DMatrix::from_diagonal(&DVector::from_column_slice(s.eigenvalues()));
    let (sample, diagonal) = replicate(
        replications,
        || (Moments::default(), Moments::default()),
        |acc, r| {
            let mut rng = substream(seed, &[r as u64]);
            let cn = draw_sample_covariance(s, members, &mut rng);
            let (full, diag) = frobenius_errors(&c, &cn);
            acc.0.push(full);
            acc.1.push(diag);
        },
        |total, part| {
            total.0.merge(&part.0);
            total.1.merge(&part.1);
        },
    );
    Ok(FrobeniusErrorEstimate {
        replications,
        sample_error: sample.mean,
        sample_std_error: sample.mean_std_error(),
        diagonal_error: diagonal.mean,
        diagonal_std_error: diagonal.mean_std_error(),
    })
}

/// One line of the theory verification table.
#[derive(Clone, Debug, serde::Serialize)]
pub struct TheoryCheck {
    pub quantity: String,
    pub theoretical: f64,
    pub empirical: f64,
    pub std_error: f64,
    /// Allowed deviation in standard errors.
    pub sigmas: f64,
    pub pass: bool,
}

impl TheoryCheck {
    pub fn new(quantity: impl Into<String>, theoretical: f64, empirical: f64, std_error: f64, sigmas: f64) -> Self {
        let pass = (empirical - theoretical).abs() <= sigmas * std_error;
        Self {
            quantity: quantity.into(),
            theoretical,
            empirical,
            std_error,
            sigmas,
            pass,
        }
    }
}

impl TheoryCheck {
    /// Passes when the empirical `smaller` is strictly below `larger`.
    pub fn ordering(quantity: impl Into<String>, smaller: f64, larger: f64) -> Self {
        Self {
            quantity: quantity.into(),
            theoretical: larger,
            empirical: smaller,
            std_error: 0.0,
            sigmas: 0.0,
            pass: smaller < larger,
        }
    }
}

/// Entry variances and Frobenius errors for one spectrum and ensemble size.
pub fn verify_spectrum(
    label: &str,
    s: &Spectrum,
    members: usize,
    replications: usize,
    seed: u64,
    with_entries: bool,
) -> Result<Vec<TheoryCheck>> {
    let mut checks = Vec::new();
    if with_entries {
        let est = monte_carlo_entry_variance(s, members, replications, seed)?;
        for i in 0..s.len() {
            for j in 0..s.len() {
                checks.push(TheoryCheck::new(
                    format!("{label} var C[{},{}]", i + 1, j + 1),
                    entry_variance(s, members, i, j)?,
                    est.variance[(i, j)],
                    est.variance_std_error[(i, j)],
                    4.0,
                ));
            }
        }
        for i in 0..s.len() {
            checks.push(TheoryCheck::new(
                format!("{label} mean C[{},{}]", i + 1, i + 1),
                s.eigenvalues()[i],
                est.mean[(i, i)],
                est.mean_std_error[(i, i)],
                3.0,
            ));
        }
    }
    let fro = monte_carlo_frobenius_errors(s, members, replications, seed.wrapping_add(1))?;
    checks.push(TheoryCheck::new(
        format!("{label} E|C-C^N|^2"),
        expected_error_sample_cov(s, members)?,
        fro.sample_error,
        fro.sample_std_error,
        3.0,
    ));
    checks.push(TheoryCheck::new(
        format!("{label} E|C-D^N|^2"),
        expected_error_spectral_diag(s, members)?,
        fro.diagonal_error,
        fro.diagonal_std_error,
        3.0,
    ));
    checks.push(TheoryCheck::ordering(
        format!("{label} |C-D^N|^2 < |C-C^N|^2"),
        fro.diagonal_error,
        fro.sample_error,
    ));
    Ok(checks)
}

/// Entry variances for `lambda = (4, 3, 2, 1)` and Frobenius errors for
/// that spectrum and for `k^{-1.1}`, `k^{-2}` with `n = 32`, all at `N = 10`.
pub fn standard_checks(replications: usize, seed: u64) -> Result<Vec<TheoryCheck>> {
    let members = 10;
    let mut checks = verify_spectrum(
        "(4,3,2,1)",
        &Spectrum::new(vec![4.0, 3.0, 2.0, 1.0])?,
        members,
        replications,
        seed,
        true,
    )?;
    for (k, alpha) in [1.1, 2.0].into_iter().enumerate() {
        let s = Spectrum::power_law(alpha, 32)?;
        let label = format!("k^-{alpha} n=32");
        let stream = seed.wrapping_add(1000 * (k as u64 + 1));
        checks.extend(verify_spectrum(&label, &s, members, replications, stream, false)?);
    }
    Ok(checks)
}
