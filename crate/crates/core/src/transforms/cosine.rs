//! Orthonormal DCT-II and DST-II backed by FFT-based plans.
//!
//! With `s_0 = sqrt(1/n)` and `s_k = sqrt(2/n)` otherwise, the forward maps are
//!
//! ```text
//! DCT-II: y_k = s_k     sum_m x_m cos(pi (m + 1/2) k / n)
//! DST-II: y_k = s'_k    sum_m x_m sin(pi (m + 1/2) (k + 1) / n)
//! ```
//!
//! where `s'` uses the `sqrt(1/n)` factor on the last mode instead of the
//! first. Both matrices are orthogonal, so the inverses are the transposes
//! (DCT-III / DST-III with the same scaling).

use std::fmt;
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Trig {
    Cosine,
    Sine,
}

#[derive(Clone)]
pub(crate) struct TrigTransform {
    trig: Trig,
    len: usize,
    plan: Arc<dyn TransformType2And3<f64>>,
    edge: f64,
    bulk: f64,
}

impl fmt::Debug for TrigTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrigTransform")
            .field("trig", &self.trig)
            .field("len", &self.len)
            .finish()
    }
}

impl TrigTransform {
    pub(crate) fn new(trig: Trig, len: usize) -> Self {
        let plan = DctPlanner::new().plan_dct2(len);
        let n = len as f64;
        Self {
            trig,
            len,
            plan,
            edge: (1.0 / n).sqrt(),
            bulk: (2.0 / n).sqrt(),
        }
    }

    /// Index of the mode carrying the `sqrt(1/n)` factor.
    fn edge_index(&self) -> usize {
        match self.trig {
            Trig::Cosine => 0,
            Trig::Sine => self.len - 1,
        }
    }

    pub(crate) fn forward(&self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.len);
        match self.trig {
            Trig::Cosine => self.plan.process_dct2(v),
            Trig::Sine => self.plan.process_dst2(v),
        }
        v.iter_mut().for_each(|x| *x *= self.bulk);
        v[self.edge_index()] *= self.edge / self.bulk;
    }

    pub(crate) fn inverse(&self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.len);
        // The type-III kernels halve the edge term, hence the factor 2 there.
        v.iter_mut().for_each(|x| *x *= self.bulk);
        v[self.edge_index()] *= 2.0 * self.edge / self.bulk;
        match self.trig {
            Trig::Cosine => self.plan.process_dct3(v),
            Trig::Sine => self.plan.process_dst3(v),
        }
    }
}
