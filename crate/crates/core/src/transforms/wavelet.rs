//! Periodized orthogonal discrete wavelet transform.
//!
//! Coefficient layout after `levels` stages on a length-`n` signal is
//! `[a_J | d_J | d_{J-1} | ... | d_1]`, the usual pyramid ordering.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HAAR: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

const DB2: [f64; 4] = [
    0.48296291314453416,
    0.8365163037378079,
    0.2241438680420134,
    -0.12940952255126037,
];

const DB4: [f64; 8] = [
    0.2303778133088965,
    0.7148465705529157,
    0.6308807679298589,
    -0.027983769416859854,
    -0.18703481171909309,
    0.030841381835560764,
    0.0328830116668852,
    -0.010597401785069032,
];

const COIF1: [f64; 6] = [
    -0.07273261951252645,
    0.3378976624574818,
    0.8525720202116004,
    0.3848648468648578,
    -0.07273261951252645,
    -0.015655728135791993,
];

const COIF2: [f64; 12] = [
    0.01638733646320364,
    -0.04146493678687178,
    -0.0673725547237256,
    0.3861100668227629,
    0.8127236354494135,
    0.4170051844232391,
    -0.07648859907828076,
    -0.05943441864643109,
    0.02368017194684777,
    0.005611434819368834,
    -0.0018232088709110323,
    -0.000720549445520347,
];

const COIF3: [f64; 18] = [
    -0.003793512864380802,
    0.007782596425672746,
    0.023452696142077168,
    -0.06577191128146936,
    -0.06112339000297255,
    0.40517690240911824,
    0.7937772226260872,
    0.42848347637737,
    -0.07179982161915484,
    -0.08230192710629983,
    0.03455502757329774,
    0.015880544863669452,
    -0.009007976136730624,
    -0.0025745176881367972,
    0.0011175187708306303,
    0.0004662169598204029,
    -7.0983302506379e-05,
    -3.459977319727278e-05,
];

/// Orthogonal wavelet families with compact support.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    Haar,
    Db2,
    Db4,
    Coif1,
    #[default]
    Coif2,
    Coif3,
}

impl Wavelet {
    /// Low-pass (scaling) filter, normalized to unit l2 norm.
    pub fn scaling_filter(self) -> &'static [f64] {
        match self {
            Wavelet::Haar => &HAAR,
            Wavelet::Db2 => &DB2,
            Wavelet::Db4 => &DB4,
            Wavelet::Coif1 => &COIF1,
            Wavelet::Coif2 => &COIF2,
            Wavelet::Coif3 => &COIF3,
        }
    }

    /// Quadrature-mirror high-pass filter `g_j = (-1)^j h_{L-1-j}`.
    pub fn wavelet_filter(self) -> Vec<f64> {
        let h = self.scaling_filter();
        let len = h.len();
        (0..len)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * h[len - 1 - j]
            })
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Wavelet::Haar => "haar",
            Wavelet::Db2 => "db2",
            Wavelet::Db4 => "db4",
            Wavelet::Coif1 => "coif1",
            Wavelet::Coif2 => "coif2",
            Wavelet::Coif3 => "coif3",
        }
    }
}

impl fmt::Display for Wavelet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Wavelet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" | "db1" => Ok(Wavelet::Haar),
            "db2" => Ok(Wavelet::Db2),
            "db4" => Ok(Wavelet::Db4),
            "coif1" => Ok(Wavelet::Coif1),
            "coif2" => Ok(Wavelet::Coif2),
            "coif3" => Ok(Wavelet::Coif3),
            other => Err(Error::invalid(format!("unknown wavelet `{other}`"))),
        }
    }
}

/// One-dimensional periodized DWT of fixed length and depth.
#[derive(Clone, Debug)]
pub(crate) struct PeriodicDwt {
    len: usize,
    levels: usize,
    low: &'static [f64],
    high: Vec<f64>,
}

pub(crate) fn log2_exact(n: usize) -> Option<usize> {
    (n.is_power_of_two()).then(|| n.trailing_zeros() as usize)
}

impl PeriodicDwt {
    pub(crate) fn new(wavelet: Wavelet, len: usize, levels: Option<usize>) -> Result<Self> {
        let max_levels = log2_exact(len)
            .ok_or_else(|| Error::invalid(format!("wavelet transform needs a power-of-two length, got {len}")))?;
        let levels = levels.unwrap_or(max_levels);
        if levels > max_levels {
            return Err(Error::invalid(format!(
                "{levels} wavelet levels requested but length {len} allows at most {max_levels}"
            )));
        }
        Ok(Self {
            len,
            levels,
            low: wavelet.scaling_filter(),
            high: wavelet.wavelet_filter(),
        })
    }

    #[cfg(test)]
    pub(crate) fn levels(&self) -> usize {
        self.levels
    }

    pub(crate) fn forward(&self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.len);
        let mut scratch = vec![0.0; self.len];
        let mut len = self.len;
        for _ in 0..self.levels {
            let half = len / 2;
            for k in 0..half {
                let (mut approx, mut detail) = (0.0, 0.0);
                for (j, (h, g)) in self.low.iter().zip(&self.high).enumerate() {
                    let x = v[(2 * k + j) % len];
                    approx += h * x;
                    detail += g * x;
                }
                scratch[k] = approx;
                scratch[half + k] = detail;
            }
            v[..len].copy_from_slice(&scratch[..len]);
            len = half;
        }
    }

    pub(crate) fn inverse(&self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.len);
        let mut scratch = vec![0.0; self.len];
        for level in (0..self.levels).rev() {
            let len = self.len >> level;
            let half = len / 2;
            scratch[..len].iter_mut().for_each(|x| *x = 0.0);
            for k in 0..half {
                let (approx, detail) = (v[k], v[half + k]);
                for (j, (h, g)) in self.low.iter().zip(&self.high).enumerate() {
                    scratch[(2 * k + j) % len] += h * approx + g * detail;
                }
            }
            v[..len].copy_from_slice(&scratch[..len]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filters_satisfy_double_shift_orthogonality() {
        for w in [
            Wavelet::Haar,
            Wavelet::Db2,
            Wavelet::Db4,
            Wavelet::Coif1,
            Wavelet::Coif2,
            Wavelet::Coif3,
        ] {
            let h = w.scaling_filter();
            let g = w.wavelet_filter();
            assert!((h.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-12, "{w}");
            for shift in (0..h.len()).step_by(2) {
                let hh: f64 = h.iter().skip(shift).zip(h).map(|(a, b)| a * b).sum();
                let expected = if shift == 0 { 1.0 } else { 0.0 };
                assert!((hh - expected).abs() < 1e-13, "{w} shift {shift}: {hh}");
            }
            for shift in -(h.len() as isize)..(h.len() as isize) {
                if shift % 2 != 0 {
                    continue;
                }
                let hg: f64 = (0..h.len() as isize)
                    .filter_map(|j| {
                        let k = j + shift;
                        (0..g.len() as isize)
                            .contains(&k)
                            .then(|| h[j as usize] * g[k as usize])
                    })
                    .sum();
                assert!(hg.abs() < 1e-13, "{w} cross shift {shift}: {hg}");
            }
        }
    }

    #[test]
    fn coif2_has_twelve_taps() {
        assert_eq!(Wavelet::Coif2.scaling_filter().len(), 12);
        assert_eq!("COIF2".parse::<Wavelet>().unwrap(), Wavelet::Coif2);
    }

    #[test]
    fn non_power_of_two_is_rejected() {
        assert!(PeriodicDwt::new(Wavelet::Haar, 12, None).is_err());
        assert!(PeriodicDwt::new(Wavelet::Haar, 16, Some(5)).is_err());
        assert_eq!(PeriodicDwt::new(Wavelet::Haar, 16, None).unwrap().levels(), 4);
    }

    #[test]
    fn haar_single_level_by_hand() {
        let dwt = PeriodicDwt::new(Wavelet::Haar, 2, Some(1)).unwrap();
        let mut v = [3.0, 1.0];
        dwt.forward(&mut v);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[0] - 4.0 * s).abs() < 1e-15);
        assert!((v[1] - 2.0 * s).abs() < 1e-15);
    }
}
