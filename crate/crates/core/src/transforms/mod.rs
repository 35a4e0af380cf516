//! Orthonormal spectral transforms applied matrix-free.
//!
//! A [`SpectralTransform`] is a real orthogonal matrix `F` on `R^n` (or on an
//! `nx x ny` grid stored row-major) exposed only through its action on
//! vectors. [`BlockTransform`] applies the same transform to each of `m`
//! contiguous variable blocks of a multivariate state.

mod cosine;
mod wavelet;

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

use self::cosine::{Trig, TrigTransform};
use self::wavelet::PeriodicDwt;

pub use self::wavelet::Wavelet;

/// Largest transform that [`Orthonormal::dense_matrix`] will materialize.
pub const DENSE_MATRIX_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Identity,
    Dct,
    Dst,
    /// Periodized orthogonal wavelet; `levels = None` means full depth.
    Dwt {
        wavelet: Wavelet,
        levels: Option<usize>,
    },
}

impl TransformKind {
    pub fn coif2() -> Self {
        TransformKind::Dwt {
            wavelet: Wavelet::Coif2,
            levels: None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            TransformKind::Identity => "ID",
            TransformKind::Dct => "DCT",
            TransformKind::Dst => "DST",
            TransformKind::Dwt { .. } => "DWT",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformKind::Dwt { wavelet, levels } => match levels {
                Some(l) => write!(f, "DWT({wavelet}, {l} levels)"),
                None => write!(f, "DWT({wavelet})"),
            },
            other => f.write_str(other.label()),
        }
    }
}

/// Layout of the vectors a transform acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Line(usize),
    /// `nx` rows of length `ny`; entry `(i, j)` lives at `i * ny + j`.
    Grid {
        nx: usize,
        ny: usize,
    },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Line(n) => n,
            Shape::Grid { nx, ny } => nx * ny,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
enum Axis {
    Identity,
    Trig(TrigTransform),
    Wavelet(PeriodicDwt),
}

impl Axis {
    fn new(kind: TransformKind, len: usize) -> Result<Self> {
        Ok(match kind {
            TransformKind::Identity => Axis::Identity,
            TransformKind::Dct => Axis::Trig(TrigTransform::new(Trig::Cosine, len)),
            TransformKind::Dst => Axis::Trig(TrigTransform::new(Trig::Sine, len)),
            TransformKind::Dwt { wavelet, levels } => Axis::Wavelet(PeriodicDwt::new(wavelet, len, levels)?),
        })
    }

    fn forward(&self, v: &mut [f64]) {
        match self {
            Axis::Identity => {}
            Axis::Trig(t) => t.forward(v),
            Axis::Wavelet(w) => w.forward(v),
        }
    }

    fn inverse(&self, v: &mut [f64]) {
        match self {
            Axis::Identity => {}
            Axis::Trig(t) => t.inverse(v),
            Axis::Wavelet(w) => w.inverse(v),
        }
    }
}

/// Real orthogonal change of basis, applied without forming the matrix.
pub trait Orthonormal: Send + Sync {
    /// Length of the vectors the transform acts on.
    fn dim(&self) -> usize;

    fn forward_in_place(&self, v: &mut [f64]) -> Result<()>;

    fn inverse_in_place(&self, v: &mut [f64]) -> Result<()>;

    fn forward(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = v.to_vec();
        self.forward_in_place(&mut out)?;
        Ok(out)
    }

    fn inverse(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut out = w.to_vec();
        self.inverse_in_place(&mut out)?;
        Ok(out)
    }

    /// Dense `F` with `F * v == forward(v)`. Column `i` is `forward(e_i)`.
    fn dense_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if n > DENSE_MATRIX_LIMIT {
            return Err(Error::TooLarge {
                context: "dense transform matrix",
                size: n,
                limit: DENSE_MATRIX_LIMIT,
            });
        }
        let mut m = DMatrix::zeros(n, n);
        for (i, mut col) in m.column_iter_mut().enumerate() {
            let column = col.as_mut_slice();
            column[i] = 1.0;
            self.forward_in_place(column)?;
        }
        Ok(m)
    }
}

fn check_len(context: &'static str, expected: usize, v: &[f64]) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(Error::dims(context, expected, v.len()))
    }
}

/// Orthonormal DCT, DST, DWT or identity on a line or a 2-D grid.
#[derive(Clone, Debug)]
pub struct SpectralTransform {
    kind: TransformKind,
    shape: Shape,
    rows: Axis,
    columns: Option<Axis>,
}

impl SpectralTransform {
    pub fn new(kind: TransformKind, shape: Shape) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::invalid("transform length must be positive"));
        }
        let (rows, columns) = match shape {
            Shape::Line(n) => (Axis::new(kind, n)?, None),
            Shape::Grid { nx, ny } => (Axis::new(kind, ny)?, Some(Axis::new(kind, nx)?)),
        };
        Ok(Self {
            kind,
            shape,
            rows,
            columns,
        })
    }

    pub fn line(kind: TransformKind, n: usize) -> Result<Self> {
        Self::new(kind, Shape::Line(n))
    }

    pub fn grid(kind: TransformKind, nx: usize, ny: usize) -> Result<Self> {
        Self::new(kind, Shape::Grid { nx, ny })
    }

    pub fn identity(n: usize) -> Self {
        Self::line(TransformKind::Identity, n).expect("identity transform of positive length")
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    fn apply(&self, v: &mut [f64], inverse: bool) {
        let step = |axis: &Axis, x: &mut [f64]| {
            if inverse {
                axis.inverse(x)
            } else {
                axis.forward(x)
            }
        };
        match (self.shape, &self.columns) {
            (Shape::Grid { nx, ny }, Some(columns)) => {
                let mut column = vec![0.0; nx];
                let along_rows = |v: &mut [f64]| {
                    for row in v.chunks_exact_mut(ny) {
                        step(&self.rows, row);
                    }
                };
                let mut along_columns = |v: &mut [f64]| {
                    for j in 0..ny {
                        for i in 0..nx {
                            column[i] = v[i * ny + j];
                        }
                        step(columns, &mut column);
                        for i in 0..nx {
                            v[i * ny + j] = column[i];
                        }
                    }
                };
                if inverse {
                    along_columns(v);
                    along_rows(v);
                } else {
                    along_rows(v);
                    along_columns(v);
                }
            }
            _ => step(&self.rows, v),
        }
    }
}

impl Orthonormal for SpectralTransform {
    fn dim(&self) -> usize {
        self.shape.len()
    }

    fn forward_in_place(&self, v: &mut [f64]) -> Result<()> {
        check_len("spectral transform input", self.dim(), v)?;
        self.apply(v, false);
        Ok(())
    }

    fn inverse_in_place(&self, w: &mut [f64]) -> Result<()> {
        check_len("spectral transform input", self.dim(), w)?;
        self.apply(w, true);
        Ok(())
    }
}

/// Block-diagonal transform `diag(F, ..., F)` over `m` variables on one grid.
#[derive(Clone, Debug)]
pub struct BlockTransform {
    per_variable: SpectralTransform,
    variables: usize,
}

impl BlockTransform {
    pub fn new(per_variable: SpectralTransform, variables: usize) -> Result<Self> {
        if variables == 0 {
            return Err(Error::invalid("block transform needs at least one variable"));
        }
        Ok(Self {
            per_variable,
            variables,
        })
    }

    pub fn single(per_variable: SpectralTransform) -> Self {
        Self {
            per_variable,
            variables: 1,
        }
    }

    pub fn per_variable(&self) -> &SpectralTransform {
        &self.per_variable
    }

    pub fn variables(&self) -> usize {
        self.variables
    }

    /// Length of one variable block.
    pub fn block_len(&self) -> usize {
        self.per_variable.dim()
    }

    /// Same per-variable transform over a different number of variables.
    pub fn with_variables(&self, variables: usize) -> Result<Self> {
        Self::new(self.per_variable.clone(), variables)
    }
}

impl Orthonormal for BlockTransform {
    fn dim(&self) -> usize {
        self.block_len() * self.variables
    }

    fn forward_in_place(&self, v: &mut [f64]) -> Result<()> {
        check_len("block transform input", self.dim(), v)?;
        for block in v.chunks_exact_mut(self.block_len()) {
            self.per_variable.forward_in_place(block)?;
        }
        Ok(())
    }

    fn inverse_in_place(&self, w: &mut [f64]) -> Result<()> {
        check_len("block transform input", self.dim(), w)?;
        for block in w.chunks_exact_mut(self.block_len()) {
            self.per_variable.inverse_in_place(block)?;
        }
        Ok(())
    }
}

fn map_members<T: Orthonormal + ?Sized>(t: &T, e: &Ensemble, inverse: bool) -> Result<Ensemble> {
    if e.state_len() != t.dim() {
        return Err(Error::dims("ensemble transform", t.dim(), e.state_len()));
    }
    let mut data = e.matrix().clone();
    let n = t.dim();
    data.as_mut_slice().par_chunks_mut(n).try_for_each(|member| {
        if inverse {
            t.inverse_in_place(member)
        } else {
            t.forward_in_place(member)
        }
    })?;
    Ensemble::new(data)
}

/// Transform every member: column `j` of the output is `F X^j`.
pub fn forward_ensemble<T: Orthonormal + ?Sized>(t: &T, e: &Ensemble) -> Result<Ensemble> {
    map_members(t, e, false)
}

/// Inverse-transform every member.
pub fn inverse_ensemble<T: Orthonormal + ?Sized>(t: &T, e: &Ensemble) -> Result<Ensemble> {
    map_members(t, e, true)
}
