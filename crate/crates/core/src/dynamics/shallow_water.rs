//! Two-dimensional shallow-water equations in conservative form
//!
//! ```text
//! h_t + (hu)_x + (hv)_y = 0
//! (hu)_t + (hu^2/h + g h^2/2)_x + (huv/h)_y = 0
//! (hv)_t + (huv/h)_x + (hv^2/h + g h^2/2)_y = 0
//! ```
//!
//! on a square-celled grid with reflective walls, advanced by the two-step
//! (Richtmyer) Lax-Wendroff scheme on a ghost-cell layout.
//!
//! State layout: each field is `nx x ny`, row-major with index `i * ny + j`
//! (`i` along x); the flat state vector is variable-major, `[h | hu | hv]`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};

/// Number of prognostic fields (`h`, `hu`, `hv`).
pub const SW_VARIABLES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShallowWaterConfig {
    pub nx: usize,
    pub ny: usize,
    /// Grid spacing in meters, equal in both directions.
    pub dx: f64,
    /// Time step in seconds.
    pub dt: f64,
    pub g: f64,
    pub base_height: f64,
    pub bump_height: f64,
    /// Diameter, in nodes, of the circle on which the bump falls to `e^{-1}` of its peak.
    pub bump_width: f64,
    /// Truth bump center in node coordinates; `None` is the grid center.
    pub bump_center: Option<[f64; 2]>,
    /// Shift of the background bump relative to the truth, in nodes.
    pub background_offset: [f64; 2],
}

impl Default for ShallowWaterConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ShallowWaterConfig {
    /// 64 x 64 grid at 150 km spacing with a one-second step.
    pub fn full_scale() -> Self {
        Self {
            nx: 64,
            ny: 64,
            dx: 150_000.0,
            dt: 1.0,
            g: 9.8,
            base_height: 10_000.0,
            bump_height: 1_000.0,
            bump_width: 32.0,
            bump_center: None,
            background_offset: [8.0, 0.0],
        }
    }

    /// 32 x 32 grid covering the same domain, with the bump scaled to match.
    pub fn desk() -> Self {
        Self {
            nx: 32,
            ny: 32,
            dx: 300_000.0,
            dt: 10.0,
            bump_width: 16.0,
            background_offset: [4.0, 0.0],
            ..Self::full_scale()
        }
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::invalid("shallow-water grid needs at least 2 x 2 nodes"));
        }
        for (name, v) in [
            ("dx", self.dx),
            ("dt", self.dt),
            ("g", self.g),
            ("base_height", self.base_height),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.bump_width > 0.0) || !self.bump_height.is_finite() {
            return Err(Error::invalid("bump width must be positive and height finite"));
        }
        Ok(())
    }

    /// Courant number `dt sqrt(g h_max) / dx`.
    pub fn courant(&self, h_max: f64) -> f64 {
        self.dt * (self.g * h_max).sqrt() / self.dx
    }

    fn center(&self) -> [f64; 2] {
        self.bump_center
            .unwrap_or([(self.nx as f64 - 1.0) / 2.0, (self.ny as f64 - 1.0) / 2.0])
    }
}

/// Conservative fields on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ShallowWaterState {
    pub nx: usize,
    pub ny: usize,
    pub h: Vec<f64>,
    pub hu: Vec<f64>,
    pub hv: Vec<f64>,
}

impl ShallowWaterState {
    pub fn at_rest(nx: usize, ny: usize, height: f64) -> Self {
        Self {
            nx,
            ny,
            h: vec![height; nx * ny],
            hu: vec![0.0; nx * ny],
            hv: vec![0.0; nx * ny],
        }
    }

    pub fn from_vector(nx: usize, ny: usize, v: &[f64]) -> Result<Self> {
        let cell = nx * ny;
        if v.len() != SW_VARIABLES * cell {
            return Err(Error::dims("shallow-water state vector", SW_VARIABLES * cell, v.len()));
        }
        Ok(Self {
            nx,
            ny,
            h: v[..cell].to_vec(),
            hu: v[cell..2 * cell].to_vec(),
            hv: v[2 * cell..].to_vec(),
        })
    }

    /// Variable-major flat vector `[h | hu | hv]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(SW_VARIABLES * self.h.len());
        v.extend_from_slice(&self.h);
        v.extend_from_slice(&self.hu);
        v.extend_from_slice(&self.hv);
        v
    }

    /// `sum h` over the grid (multiply by `dx^2` for volume).
    pub fn mass(&self) -> f64 {
        self.h.iter().sum()
    }

    pub fn fields(&self) -> [&[f64]; SW_VARIABLES] {
        [&self.h, &self.hu, &self.hv]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialCondition {
    Truth,
    Background,
}

/// Water at rest: base height plus a Gaussian bump
/// `height * exp(-r^2 / (width/2)^2)`, `r` in nodes.
pub fn make_initial_conditions(cfg: &ShallowWaterConfig, which: InitialCondition) -> ShallowWaterState {
    let [mut cx, mut cy] = cfg.center();
    if which == InitialCondition::Background {
        cx += cfg.background_offset[0];
        cy += cfg.background_offset[1];
    }
    let radius2 = (cfg.bump_width / 2.0).powi(2);
    let mut s = ShallowWaterState::at_rest(cfg.nx, cfg.ny, cfg.base_height);
    for i in 0..cfg.nx {
        for j in 0..cfg.ny {
            let r2 = (i as f64 - cx).powi(2) + (j as f64 - cy).powi(2);
            s.h[i * cfg.ny + j] += cfg.bump_height * (-r2 / radius2).exp();
        }
    }
    s
}

/// One Lax-Wendroff step of `state`.
pub fn shallow_water_step(state: &ShallowWaterState, cfg: &ShallowWaterConfig) -> Result<ShallowWaterState> {
    if state.nx != cfg.nx || state.ny != cfg.ny {
        return Err(Error::dims("shallow-water grid", cfg.cell_count(), state.nx * state.ny));
    }
    let mut v = state.to_vector();
    cfg.step(&mut v)?;
    ShallowWaterState::from_vector(cfg.nx, cfg.ny, &v)
}

fn flux_x(h: f64, u: f64, v: f64, g: f64) -> [f64; 3] {
    [u, u * u / h + 0.5 * g * h * h, u * v / h]
}

fn flux_y(h: f64, u: f64, v: f64, g: f64) -> [f64; 3] {
    [v, u * v / h, v * v / h + 0.5 * g * h * h]
}

impl Model for ShallowWaterConfig {
    fn state_len(&self) -> usize {
        SW_VARIABLES * self.cell_count()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, state: &mut [f64]) -> Result<()> {
        let (nx, ny, g) = (self.nx, self.ny, self.g);
        let cell = nx * ny;
        if state.len() != SW_VARIABLES * cell {
            return Err(Error::dims(
                "shallow-water state vector",
                SW_VARIABLES * cell,
                state.len(),
            ));
        }
        let (h, rest) = state.split_at_mut(cell);
        let (hu, hv) = rest.split_at_mut(cell);

        let mut h_max = f64::NEG_INFINITY;
        for &x in h.iter() {
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::Blowup(format!("water height {x} is not positive")));
            }
            h_max = h_max.max(x);
        }
        let courant = self.courant(h_max);
        if !(courant < 1.0) {
            return Err(Error::Cfl(courant));
        }

        // Ghost-cell copies: x walls mirror h and hv and negate hu; y walls
        // mirror h and hu and negate hv.
        let w = ny + 2;
        let gi = |i: usize, j: usize| i * w + j;
        let mut gh = vec![0.0; (nx + 2) * w];
        let mut gu = vec![0.0; (nx + 2) * w];
        let mut gv = vec![0.0; (nx + 2) * w];
        for i in 0..nx {
            for j in 0..ny {
                gh[gi(i + 1, j + 1)] = h[i * ny + j];
                gu[gi(i + 1, j + 1)] = hu[i * ny + j];
                gv[gi(i + 1, j + 1)] = hv[i * ny + j];
            }
        }
        for j in 1..=ny {
            for (ghost, inner) in [(0, 1), (nx + 1, nx)] {
                gh[gi(ghost, j)] = gh[gi(inner, j)];
                gu[gi(ghost, j)] = -gu[gi(inner, j)];
                gv[gi(ghost, j)] = gv[gi(inner, j)];
            }
        }
        for i in 1..=nx {
            for (ghost, inner) in [(0, 1), (ny + 1, ny)] {
                gh[gi(i, ghost)] = gh[gi(i, inner)];
                gu[gi(i, ghost)] = gu[gi(i, inner)];
                gv[gi(i, ghost)] = -gv[gi(i, inner)];
            }
        }

        let half = 0.5 * self.dt / self.dx;
        let full = self.dt / self.dx;

        // Half step at x interfaces k (between ghost rows k and k+1), interior columns.
        let mut xs = vec![[0.0; 3]; (nx + 1) * ny];
        for k in 0..=nx {
            for j in 0..ny {
                let (l, r) = (gi(k, j + 1), gi(k + 1, j + 1));
                let fl = flux_x(gh[l], gu[l], gv[l], g);
                let fr = flux_x(gh[r], gu[r], gv[r], g);
                xs[k * ny + j] = [
                    0.5 * (gh[r] + gh[l]) - half * (fr[0] - fl[0]),
                    0.5 * (gu[r] + gu[l]) - half * (fr[1] - fl[1]),
                    0.5 * (gv[r] + gv[l]) - half * (fr[2] - fl[2]),
                ];
            }
        }
        // Half step at y interfaces l (between ghost columns l and l+1), interior rows.
        let mut ys = vec![[0.0; 3]; nx * (ny + 1)];
        for i in 0..nx {
            for l in 0..=ny {
                let (b, t) = (gi(i + 1, l), gi(i + 1, l + 1));
                let fb = flux_y(gh[b], gu[b], gv[b], g);
                let ft = flux_y(gh[t], gu[t], gv[t], g);
                ys[i * (ny + 1) + l] = [
                    0.5 * (gh[t] + gh[b]) - half * (ft[0] - fb[0]),
                    0.5 * (gu[t] + gu[b]) - half * (ft[1] - fb[1]),
                    0.5 * (gv[t] + gv[b]) - half * (ft[2] - fb[2]),
                ];
            }
        }
        let xflux: Vec<[f64; 3]> = xs.iter().map(|s| flux_x(s[0], s[1], s[2], g)).collect();
        let yflux: Vec<[f64; 3]> = ys.iter().map(|s| flux_y(s[0], s[1], s[2], g)).collect();

        for i in 0..nx {
            for j in 0..ny {
                let (east, west) = (xflux[(i + 1) * ny + j], xflux[i * ny + j]);
                let (north, south) = (yflux[i * (ny + 1) + j + 1], yflux[i * (ny + 1) + j]);
                let c = i * ny + j;
                h[c] -= full * (east[0] - west[0]) + full * (north[0] - south[0]);
                hu[c] -= full * (east[1] - west[1]) + full * (north[1] - south[1]);
                hv[c] -= full * (east[2] - west[2]) + full * (north[2] - south[2]);
            }
        }
        if state.iter().any(|x| !x.is_finite()) {
            return Err(Error::Blowup("shallow-water state became non-finite".into()));
        }
        Ok(())
    }
}

/// Write a state as text: a header line `nx ny 3`, then for each of `h`,
/// `hu`, `hv` in turn, `nx` lines of `ny` space-separated values.
pub fn write_snapshot<W: Write>(state: &ShallowWaterState, mut out: W) -> Result<()> {
    writeln!(out, "{} {} {}", state.nx, state.ny, SW_VARIABLES)?;
    for field in state.fields() {
        for row in field.chunks_exact(state.ny) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
    }
    Ok(())
}

/// Inverse of [`write_snapshot`]; values round-trip exactly.
pub fn read_snapshot<R: BufRead>(input: R) -> Result<ShallowWaterState> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::invalid("empty snapshot"))??;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::invalid(format!("bad snapshot header {header:?}")))
        })
        .collect::<Result<_>>()?;
    let [nx, ny, vars] = dims[..] else {
        return Err(Error::invalid(format!("bad snapshot header {header:?}")));
    };
    if vars != SW_VARIABLES {
        return Err(Error::dims("snapshot variables", SW_VARIABLES, vars));
    }
    let mut values = Vec::with_capacity(SW_VARIABLES * nx * ny);
    for line in lines {
        for token in line?.split_whitespace() {
            values.push(
                token
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad snapshot value {token:?}")))?,
            );
        }
    }
    ShallowWaterState::from_vector(nx, ny, &values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ShallowWaterConfig {
        ShallowWaterConfig {
            nx: 16,
            ny: 16,
            dx: 600_000.0,
            dt: 60.0,
            bump_width: 8.0,
            background_offset: [2.0, 0.0],
            ..ShallowWaterConfig::full_scale()
        }
    }

    fn run(cfg: &ShallowWaterConfig, s: &ShallowWaterState, steps: usize) -> ShallowWaterState {
        let mut v = s.to_vector();
        cfg.advance(&mut v, steps).unwrap();
        ShallowWaterState::from_vector(cfg.nx, cfg.ny, &v).unwrap()
    }

    /// Quarter turn: `h'(i, j) = h(j, n-1-i)`, velocity `(u, v) -> (-v, u)`.
    fn rotate(s: &ShallowWaterState) -> ShallowWaterState {
        let n = s.nx;
        let mut r = s.clone();
        for i in 0..n {
            for j in 0..n {
                let src = j * n + (n - 1 - i);
                r.h[i * n + j] = s.h[src];
                r.hu[i * n + j] = -s.hv[src];
                r.hv[i * n + j] = s.hu[src];
            }
        }
        r
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn rest_state_is_steady() {
        let cfg = small();
        let s = ShallowWaterState::at_rest(16, 16, 10_000.0);
        let after = run(&cfg, &s, 50);
        assert!(max_diff(&after.h, &s.h) < 1e-12);
        assert!(after.hu.iter().chain(&after.hv).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mass_is_conserved() {
        let cfg = small();
        let s = make_initial_conditions(&cfg, InitialCondition::Background);
        let after = run(&cfg, &s, 1000);
        let rel = (after.mass() - s.mass()).abs() / s.mass();
        assert!(rel < 1e-8, "relative mass drift {rel}");
        assert!(max_diff(&after.h, &s.h) > 1.0);
    }

    #[test]
    fn rotation_equivariance() {
        let cfg = small();
        let mut s = make_initial_conditions(&cfg, InitialCondition::Background);
        s.hu.iter_mut()
            .enumerate()
            .for_each(|(k, v)| *v = 1e4 * ((k % 7) as f64 - 3.0));
        let a = rotate(&run(&cfg, &s, 100));
        let b = run(&cfg, &rotate(&s), 100);
        for (x, y) in a.fields().iter().zip(b.fields()) {
            let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            assert!(max_diff(x, y) / scale < 1e-10);
        }
    }

    #[test]
    fn symmetric_bump_stays_symmetric() {
        let cfg = small();
        let s = make_initial_conditions(&cfg, InitialCondition::Truth);
        assert!(max_diff(&rotate(&s).h, &s.h) < 1e-10);
        let after = run(&cfg, &s, 100);
        let turned = rotate(&after);
        for (x, y) in turned.fields().iter().zip(after.fields()) {
            let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            assert!(max_diff(x, y) / scale < 1e-10);
        }
    }

    #[test]
    fn initial_condition_shape() {
        let mut cfg = ShallowWaterConfig::full_scale();
        cfg.bump_center = Some([20.0, 30.0]);
        let s = make_initial_conditions(&cfg, InitialCondition::Truth);
        let peak = s.h.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(peak, s.h[20 * 64 + 30]);
        assert!((peak - 11_000.0).abs() < 1e-9);
        cfg.bump_height = 0.0;
        let flat = make_initial_conditions(&cfg, InitialCondition::Background);
        assert!(flat.h.iter().all(|v| *v == 10_000.0));
    }

    #[test]
    fn bump_mass_matches_gaussian_integral() {
        let cfg = ShallowWaterConfig::full_scale();
        let s = make_initial_conditions(&cfg, InitialCondition::Truth);
        let excess: f64 = s.h.iter().map(|v| v - cfg.base_height).sum();
        let analytic = cfg.bump_height * std::f64::consts::PI * (cfg.bump_width / 2.0).powi(2);
        assert!((excess - analytic).abs() / analytic < 0.02);
    }

    #[test]
    fn truth_and_background_differ_only_by_shift() {
        let cfg = small();
        let t = make_initial_conditions(&cfg, InitialCondition::Truth);
        let b = make_initial_conditions(&cfg, InitialCondition::Background);
        let peak = |s: &ShallowWaterState| (0..s.h.len()).max_by(|&a, &c| s.h[a].total_cmp(&s.h[c])).unwrap();
        // Centers at 7.5 and 9.5 along x.
        assert_eq!(peak(&b) / 16 - peak(&t) / 16, 2);
        assert!(b.hu.iter().chain(&b.hv).all(|v| *v == 0.0));
    }

    #[test]
    fn cfl_violation_and_negative_height_are_errors() {
        let mut cfg = small();
        cfg.dt = 1e5;
        let mut v = ShallowWaterState::at_rest(16, 16, 10_000.0).to_vector();
        assert!(matches!(cfg.step(&mut v), Err(Error::Cfl(_))));
        let cfg = small();
        v[3] = -1.0;
        assert!(matches!(cfg.step(&mut v), Err(Error::Blowup(_))));
    }

    #[test]
    fn presets_respect_cfl() {
        for cfg in [ShallowWaterConfig::full_scale(), ShallowWaterConfig::desk()] {
            cfg.validate().unwrap();
            assert!(cfg.courant(cfg.base_height + cfg.bump_height) < 0.1);
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let cfg = small();
        let s = run(&cfg, &make_initial_conditions(&cfg, InitialCondition::Background), 5);
        let mut buf = Vec::new();
        write_snapshot(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 16);
        assert_eq!(read_snapshot(&buf[..]).unwrap(), s);
        assert!(read_snapshot(&b"4 4 2\n"[..]).is_err());
    }

    #[test]
    fn wrapper_matches_in_place_step() {
        let cfg = small();
        let s = make_initial_conditions(&cfg, InitialCondition::Truth);
        let a = shallow_water_step(&s, &cfg).unwrap();
        assert_eq!(a, run(&cfg, &s, 1));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn any_rest_state_is_steady(
                nx in 2usize..12,
                ny in 2usize..12,
                depth in 10.0f64..20_000.0,
            ) {
                let cfg = ShallowWaterConfig { nx, ny, ..small() };
                let s = ShallowWaterState::at_rest(nx, ny, depth);
                let after = run(&cfg, &s, 20);
                prop_assert!(max_diff(&after.h, &s.h) <= 1e-12 * depth);
                prop_assert!(after.hu.iter().chain(&after.hv).all(|v| v.abs() <= 1e-12 * depth));
            }
        }
    }
}
