//! Discretized flat torus `C/(Z + tau Z)` with an optional cyclic quotient.
//!
//! Lattice coordinates `(x, y)` run over `[0,1)^2` with `z = x + tau*y`.
//! The Kahler form is `omega = (i/2) dz /\ dzbar`, so `vol = Im(tau)` and the
//! contraction of a `(1,1)` coefficient `F_{z zbar}` is `Lambda F = -2i F_{z zbar}`.
//! The scalar Laplacian convention is `Delta = dbar* dbar + d* d = -4 dz dzbar`,
//! which is nonnegative; all Green/heat-kernel helpers use this operator.
//!
//! Sections of a twist-`t` line bundle are stored in the theta gauge: periodic
//! across the `x` seam, and across the `y` seam multiplied by
//! `psi_t(z) = exp(-pi i t tau - 2 pi i t z)`. Division by the entire function
//! `G_t(x,y) = exp(-pi i t tau y^2 - 2 pi i t x y)` turns such a section into a
//! field that is periodic in `y` and Bloch-periodic in `x` with a row-constant
//! phase, so per-row/per-column FFTs with shifted wavenumbers differentiate it
//! to spectral accuracy.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::par;

const TWO_PI: f64 = std::f64::consts::TAU;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid parameter: {0}")]
    InvalidParam(String),
    #[error("form degree mismatch: {0}")]
    DegreeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivScheme {
    Spectral,
    Fd2,
    Fd4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormDegree {
    Zero,
    OneZero,
    ZeroOne,
    OneOne,
}

impl FormDegree {
    /// Phase weight of the form under the rotation `z -> zeta z`.
    pub fn rotation_weight(self) -> i64 {
        match self {
            FormDegree::Zero | FormDegree::OneOne => 0,
            FormDegree::OneZero => -1,
            FormDegree::ZeroOne => 1,
        }
    }
}

struct FftPair {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    n: usize,
}

impl FftPair {
    fn new(planner: &mut FftPlanner<f64>, n: usize) -> Self {
        FftPair {
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            n,
        }
    }

    fn forward(&self, buf: &mut [C64]) {
        self.fwd.process(buf);
    }

    fn inverse(&self, buf: &mut [C64]) {
        self.inv.process(buf);
        let scale = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Discretized flat Kahler torus with a `Z_k` rotation action.
pub struct OrbifoldGrid {
    pub n1: usize,
    pub n2: usize,
    pub tau: C64,
    pub k: u32,
    pub scheme: DerivScheme,
    pub volume: f64,
    fft_x: FftPair,
    fft_y: FftPair,
    xs: Vec<f64>,
    ys: Vec<f64>,
    gauge_cache: RwLock<HashMap<i64, Arc<Vec<C64>>>>,
}

impl std::fmt::Debug for OrbifoldGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OrbifoldGrid")
            .field("n1", &self.n1)
            .field("n2", &self.n2)
            .field("tau", &self.tau)
            .field("k", &self.k)
            .field("scheme", &self.scheme)
            .finish()
    }
}

/// Per-site complex values tagged with a form degree.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub values: Vec<C64>,
    pub degree: FormDegree,
    pub n1: usize,
    pub n2: usize,
}

impl ScalarField {
    pub fn zero(grid: &OrbifoldGrid, degree: FormDegree) -> Self {
        ScalarField {
            values: vec![C64::new(0.0, 0.0); grid.n1 * grid.n2],
            degree,
            n1: grid.n1,
            n2: grid.n2,
        }
    }

    pub fn from_fn<F: Fn(f64, f64) -> C64 + Sync>(
        grid: &OrbifoldGrid,
        degree: FormDegree,
        f: F,
    ) -> Self {
        let n1 = grid.n1;
        let values = par::map_sites(n1 * grid.n2, |idx| {
            let (j, l) = (idx % n1, idx / n1);
            f(grid.xs[j], grid.ys[l])
        });
        ScalarField {
            values,
            degree,
            n1,
            n2: grid.n2,
        }
    }

    pub fn constant(grid: &OrbifoldGrid, c: C64) -> Self {
        ScalarField {
            values: vec![c; grid.n1 * grid.n2],
            degree: FormDegree::Zero,
            n1: grid.n1,
            n2: grid.n2,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Balanced wavenumber for bin `a` of an `n`-point transform.
fn wavenumber(a: usize, n: usize) -> i64 {
    if a <= (n - 1) / 2 {
        a as i64
    } else {
        a as i64 - n as i64
    }
}

impl OrbifoldGrid {
    pub fn build(
        n1: usize,
        n2: usize,
        tau: C64,
        k: u32,
        scheme: DerivScheme,
    ) -> Result<Self, GridError> {
        if tau.im <= 0.0 {
            return Err(GridError::InvalidParam("Im(tau) must be positive".into()));
        }
        if n1 < 8 || n2 < 8 {
            return Err(GridError::InvalidParam("grid sizes must be >= 8".into()));
        }
        match k {
            1 => {}
            2 => {
                if n1 % 2 != 0 || n2 % 2 != 0 {
                    return Err(GridError::InvalidParam(
                        "k = 2 requires even grid sizes".into(),
                    ));
                }
            }
            4 => {
                if n1 != n2 || (tau - C64::new(0.0, 1.0)).norm() > 1e-12 {
                    return Err(GridError::InvalidParam(
                        "k = 4 requires n1 = n2 and tau = i".into(),
                    ));
                }
            }
            _ => {
                return Err(GridError::InvalidParam(format!(
                    "orbifold order k = {k} not in {{1, 2, 4}}"
                )))
            }
        }
        let mut planner = FftPlanner::new();
        let fft_x = FftPair::new(&mut planner, n1);
        let fft_y = FftPair::new(&mut planner, n2);
        Ok(OrbifoldGrid {
            n1,
            n2,
            tau,
            k,
            scheme,
            volume: tau.im,
            fft_x,
            fft_y,
            xs: (0..n1).map(|j| j as f64 / n1 as f64).collect(),
            ys: (0..n2).map(|l| l as f64 / n2 as f64).collect(),
            gauge_cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn site_count(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn x(&self, j: usize) -> f64 {
        self.xs[j]
    }

    pub fn y(&self, l: usize) -> f64 {
        self.ys[l]
    }

    pub fn z(&self, j: usize, l: usize) -> C64 {
        C64::new(self.xs[j], 0.0) + self.tau * self.ys[l]
    }

    pub fn idx(&self, j: usize, l: usize) -> usize {
        j + self.n1 * l
    }

    /// `G_t` gauge values, cached per twist.
    pub fn gauge(&self, twist: i64) -> Arc<Vec<C64>> {
        if let Some(g) = self.gauge_cache.read().unwrap().get(&twist) {
            return g.clone();
        }
        let t = twist as f64;
        let vals = par::map_sites(self.site_count(), |idx| {
            let (j, l) = (idx % self.n1, idx / self.n1);
            let (x, y) = (self.xs[j], self.ys[l]);
            let expo = -C64::i() * std::f64::consts::PI * t * self.tau * y * y
                - C64::i() * TWO_PI * t * x * y;
            expo.exp()
        });
        let arc = Arc::new(vals);
        self.gauge_cache
            .write()
            .unwrap()
            .insert(twist, arc.clone());
        arc
    }

    /// The seam factor `psi_t(z) = exp(-pi i t tau - 2 pi i t z)` for the `y`
    /// translation `z -> z + tau`.
    pub fn seam_factor(&self, twist: i64, z: C64) -> C64 {
        let t = twist as f64;
        (-C64::i() * std::f64::consts::PI * t * self.tau - C64::i() * TWO_PI * t * z).exp()
    }

    /// Derivative symbol of the scheme at continuous wavenumber `kappa`.
    fn sigma(&self, kappa: f64, n: usize) -> C64 {
        let nf = n as f64;
        let g = match self.scheme {
            DerivScheme::Spectral => kappa,
            DerivScheme::Fd2 => nf * (kappa / nf).sin(),
            DerivScheme::Fd4 => nf * (8.0 * (kappa / nf).sin() - (2.0 * kappa / nf).sin()) / 6.0,
        };
        C64::new(0.0, g)
    }

    fn sigma_mode(&self, m: i64, theta: f64, n: usize) -> C64 {
        // unpaired Nyquist mode of an even-length untwisted transform
        if theta == 0.0 && self.scheme == DerivScheme::Spectral && 2 * m == -(n as i64) {
            return C64::new(0.0, 0.0);
        }
        self.sigma(TWO_PI * m as f64 + theta, n)
    }

    /// Raw `d/dx` of a twist-`t` component.
    pub fn dx_component(&self, vals: &[C64], twist: i64) -> Vec<C64> {
        let (n1, n2) = (self.n1, self.n2);
        assert_eq!(vals.len(), n1 * n2);
        if twist == 0 {
            let mut out = vals.to_vec();
            par::for_rows(&mut out, n1, |l, row| {
                let _ = l;
                self.fft_x.forward(row);
                for (a, v) in row.iter_mut().enumerate() {
                    *v *= self.sigma_mode(wavenumber(a, n1), 0.0, n1);
                }
                self.fft_x.inverse(row);
            });
            return out;
        }
        let gauge = self.gauge(twist);
        let mut out: Vec<C64> = vals
            .iter()
            .zip(gauge.iter())
            .map(|(v, g)| v / g)
            .collect();
        let t = twist as f64;
        par::for_rows(&mut out, n1, |l, row| {
            let theta = TWO_PI * t * self.ys[l];
            for (j, v) in row.iter_mut().enumerate() {
                *v *= (-C64::i() * theta * self.xs[j]).exp();
            }
            self.fft_x.forward(row);
            for (a, v) in row.iter_mut().enumerate() {
                *v *= self.sigma_mode(wavenumber(a, n1), theta, n1);
            }
            self.fft_x.inverse(row);
            for (j, v) in row.iter_mut().enumerate() {
                *v *= (C64::i() * theta * self.xs[j]).exp();
            }
        });
        // d f = G * d p + f * dx(log G), with dx(log G) = -2 pi i t y
        for l in 0..n2 {
            let corr = -C64::i() * TWO_PI * t * self.ys[l];
            for j in 0..n1 {
                let idx = j + n1 * l;
                out[idx] = gauge[idx] * out[idx] + vals[idx] * corr;
            }
        }
        out
    }

    /// Raw `d/dy` of a twist-`t` component.
    pub fn dy_component(&self, vals: &[C64], twist: i64) -> Vec<C64> {
        let (n1, n2) = (self.n1, self.n2);
        assert_eq!(vals.len(), n1 * n2);
        let gauge = if twist == 0 { None } else { Some(self.gauge(twist)) };
        let work: Vec<C64> = match &gauge {
            None => vals.to_vec(),
            Some(g) => vals.iter().zip(g.iter()).map(|(v, g)| v / g).collect(),
        };
        let cols = par::map_sites(n1, |j| {
            let mut col: Vec<C64> = (0..n2).map(|l| work[j + n1 * l]).collect();
            self.fft_y.forward(&mut col);
            for (b, v) in col.iter_mut().enumerate() {
                *v *= self.sigma_mode(wavenumber(b, n2), 0.0, n2);
            }
            self.fft_y.inverse(&mut col);
            col
        });
        let mut out = vec![C64::new(0.0, 0.0); n1 * n2];
        for (j, col) in cols.iter().enumerate() {
            for l in 0..n2 {
                out[j + n1 * l] = col[l];
            }
        }
        if let Some(g) = gauge {
            // dy(log G) = -2 pi i t z
            let t = twist as f64;
            for l in 0..n2 {
                for j in 0..n1 {
                    let idx = j + n1 * l;
                    let corr = -C64::i() * TWO_PI * t * self.z(j, l);
                    out[idx] = g[idx] * out[idx] + vals[idx] * corr;
                }
            }
        }
        out
    }

    /// `d/dz` of a twist-`t` component.
    pub fn dz_component(&self, vals: &[C64], twist: i64) -> Vec<C64> {
        let dx = self.dx_component(vals, twist);
        let dy = self.dy_component(vals, twist);
        let denom = C64::new(0.0, 2.0 * self.tau.im);
        dx.iter()
            .zip(dy.iter())
            .map(|(dx, dy)| (dy - self.tau.conj() * dx) / denom)
            .collect()
    }

    /// `d/dzbar` of a twist-`t` component.
    pub fn dzbar_component(&self, vals: &[C64], twist: i64) -> Vec<C64> {
        let dx = self.dx_component(vals, twist);
        let dy = self.dy_component(vals, twist);
        let denom = C64::new(0.0, 2.0 * self.tau.im);
        dx.iter()
            .zip(dy.iter())
            .map(|(dx, dy)| (self.tau * dx - dy) / denom)
            .collect()
    }

    /// `dbar` on scalar-valued forms.
    pub fn apply_dbar(&self, f: &ScalarField) -> Result<ScalarField, GridError> {
        let (values, degree) = match f.degree {
            FormDegree::Zero => (self.dzbar_component(&f.values, 0), FormDegree::ZeroOne),
            // dbar(alpha dz) = -(dzbar alpha) dz /\ dzbar
            FormDegree::OneZero => {
                let mut v = self.dzbar_component(&f.values, 0);
                for x in v.iter_mut() {
                    *x = -*x;
                }
                (v, FormDegree::OneOne)
            }
            FormDegree::ZeroOne => {
                (vec![C64::new(0.0, 0.0); f.values.len()], FormDegree::OneOne)
            }
            FormDegree::OneOne => {
                return Err(GridError::DegreeMismatch(
                    "dbar of a (1,1)-form is not representable".into(),
                ))
            }
        };
        Ok(ScalarField {
            values,
            degree,
            n1: f.n1,
            n2: f.n2,
        })
    }

    /// `d` (the `(1,0)` exterior derivative) on scalar-valued forms.
    pub fn apply_partial(&self, f: &ScalarField) -> Result<ScalarField, GridError> {
        let (values, degree) = match f.degree {
            FormDegree::Zero => (self.dz_component(&f.values, 0), FormDegree::OneZero),
            FormDegree::ZeroOne => (self.dz_component(&f.values, 0), FormDegree::OneOne),
            FormDegree::OneZero => {
                (vec![C64::new(0.0, 0.0); f.values.len()], FormDegree::OneOne)
            }
            FormDegree::OneOne => {
                return Err(GridError::DegreeMismatch(
                    "partial of a (1,1)-form is not representable".into(),
                ))
            }
        };
        Ok(ScalarField {
            values,
            degree,
            n1: f.n1,
            n2: f.n2,
        })
    }

    /// Contraction with the Kahler form: `(1,1)` coefficient to 0-form.
    pub fn lambda_contract(&self, f: &ScalarField) -> Result<ScalarField, GridError> {
        if f.degree != FormDegree::OneOne {
            return Err(GridError::DegreeMismatch(
                "lambda_contract expects a (1,1)-form".into(),
            ));
        }
        let values = f.values.iter().map(|v| C64::new(0.0, -2.0) * v).collect();
        Ok(ScalarField {
            values,
            degree: FormDegree::Zero,
            n1: f.n1,
            n2: f.n2,
        })
    }

    /// Quadrature against the volume form.
    pub fn integrate(&self, f: &ScalarField) -> C64 {
        self.integrate_values(&f.values)
    }

    pub fn integrate_values(&self, vals: &[C64]) -> C64 {
        let sum: C64 = vals.iter().sum();
        sum * (self.volume / vals.len() as f64)
    }

    /// Nonnegative Laplacian symbol `lambda_m` of `Delta = -4 dz dzbar`.
    /// Always the exact Fourier symbol `|k_y - tau k_x|^2 / Im(tau)^2`; the
    /// finite-difference profiles modify first derivatives only.
    fn lap_symbol(&self, a: usize, b: usize) -> f64 {
        let kx = TWO_PI * wavenumber(a, self.n1) as f64;
        let ky = TWO_PI * wavenumber(b, self.n2) as f64;
        let w = C64::new(ky, 0.0) - self.tau * kx;
        w.norm_sqr() / (self.tau.im * self.tau.im)
    }

    /// Largest Laplacian eigenvalue resolved by the grid; the stiffness
    /// scale for explicit time stepping.
    pub fn lap_symbol_max(&self) -> f64 {
        let mut m = 0.0f64;
        for b in 0..self.n2 {
            for a in 0..self.n1 {
                m = m.max(self.lap_symbol(a, b));
            }
        }
        m
    }

    /// Apply the scalar heat semigroup `exp(-t Delta)` by Fourier
    /// multiplication. `t = 0` is the identity; negative `t` is rejected.
    pub fn heat_filter(&self, f: &ScalarField, t: f64) -> Result<ScalarField, GridError> {
        if t < 0.0 {
            return Err(GridError::InvalidParam(
                "heat filter time must be nonnegative".into(),
            ));
        }
        let (n1, n2) = (self.n1, self.n2);
        let mut work = f.values.clone();
        par::for_rows(&mut work, n1, |_, row| self.fft_x.forward(row));
        let cols = par::map_sites(n1, |j| {
            let mut col: Vec<C64> = (0..n2).map(|l| work[j + n1 * l]).collect();
            self.fft_y.forward(&mut col);
            for (b, v) in col.iter_mut().enumerate() {
                *v *= (-self.lap_symbol(j, b) * t).exp();
            }
            self.fft_y.inverse(&mut col);
            col
        });
        for (j, col) in cols.iter().enumerate() {
            for l in 0..n2 {
                work[j + n1 * l] = col[l];
            }
        }
        par::for_rows(&mut work, n1, |_, row| self.fft_x.inverse(row));
        Ok(ScalarField {
            values: work,
            degree: f.degree,
            n1,
            n2,
        })
    }

    /// `Delta f` for a 0-form `f` with `Delta = dbar* dbar + d* d >= 0`.
    pub fn laplacian(&self, f: &ScalarField) -> ScalarField {
        let dz = self.dz_component(&f.values, 0);
        let values = self
            .dzbar_component(&dz, 0)
            .iter()
            .map(|v| -4.0 * v)
            .collect();
        ScalarField {
            values,
            degree: FormDegree::Zero,
            n1: f.n1,
            n2: f.n2,
        }
    }

    /// Solve `Delta u = rhs` with mean-zero `u`. Returns `(u, removed_mean)`,
    /// where the mean of `rhs` is projected out before inversion.
    pub fn green_solve(&self, rhs: &ScalarField) -> (ScalarField, C64) {
        let (n1, n2) = (self.n1, self.n2);
        let mean = rhs.values.iter().sum::<C64>() / rhs.values.len() as f64;
        let mut work = rhs.values.clone();
        par::for_rows(&mut work, n1, |_, row| self.fft_x.forward(row));
        let cols = par::map_sites(n1, |j| {
            let mut col: Vec<C64> = (0..n2).map(|l| work[j + n1 * l]).collect();
            self.fft_y.forward(&mut col);
            for (b, v) in col.iter_mut().enumerate() {
                let lam = self.lap_symbol(j, b);
                if lam.abs() < 1e-14 {
                    *v = C64::new(0.0, 0.0);
                } else {
                    *v /= lam;
                }
            }
            self.fft_y.inverse(&mut col);
            col
        });
        for (j, col) in cols.iter().enumerate() {
            for l in 0..n2 {
                work[j + n1 * l] = col[l];
            }
        }
        par::for_rows(&mut work, n1, |_, row| self.fft_x.inverse(row));
        (
            ScalarField {
                values: work,
                degree: FormDegree::Zero,
                n1,
                n2,
            },
            mean,
        )
    }

    /// Supremum of the scalar heat kernel at time `t`, by Fourier summation.
    pub fn heat_kernel_sup(&self, t: f64) -> Result<f64, GridError> {
        if t <= 0.0 {
            return Err(GridError::InvalidParam(
                "heat kernel time must be positive".into(),
            ));
        }
        let mut sum = 0.0;
        for b in 0..self.n2 {
            for a in 0..self.n1 {
                sum += (-self.lap_symbol(a, b) * t).exp();
            }
        }
        Ok(sum / self.volume)
    }

    /// Grid index of the rotation `z -> zeta z` applied to site `(j, l)`.
    pub fn rotate_site(&self, j: usize, l: usize) -> (usize, usize) {
        match self.k {
            2 => ((self.n1 - j) % self.n1, (self.n2 - l) % self.n2),
            4 => ((self.n1 - l) % self.n1, j),
            _ => (j, l),
        }
    }

    /// Average over the `Z_k` orbit with the phase weight of the form degree.
    /// Twist-0 (scalar) version; bundle-valued fields project in the bundle
    /// module where seams and isotropy enter.
    pub fn group_project(&self, f: &ScalarField) -> ScalarField {
        if self.k == 1 {
            return f.clone();
        }
        let w = f.degree.rotation_weight();
        let zeta = C64::from_polar(1.0, TWO_PI / self.k as f64);
        let n1 = self.n1;
        let k = self.k as i64;
        let values = par::map_sites(f.values.len(), |idx| {
            let (mut j, mut l) = (idx % n1, idx / n1);
            let mut acc = C64::new(0.0, 0.0);
            for m in 0..k {
                let phase = zeta.powi((-w * m) as i32);
                acc += phase * f.values[j + n1 * l];
                let (rj, rl) = self.rotate_site(j, l);
                j = rj;
                l = rl;
            }
            acc / k as f64
        });
        ScalarField {
            values,
            degree: f.degree,
            n1: f.n1,
            n2: f.n2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> OrbifoldGrid {
        OrbifoldGrid::build(n, n, C64::new(0.0, 1.0), 1, DerivScheme::Spectral).unwrap()
    }

    fn mode(grid: &OrbifoldGrid, m1: i64, m2: i64) -> ScalarField {
        ScalarField::from_fn(grid, FormDegree::Zero, |x, y| {
            (C64::i() * TWO_PI * (m1 as f64 * x + m2 as f64 * y)).exp()
        })
    }

    #[test]
    fn build_validation() {
        assert!(OrbifoldGrid::build(64, 64, C64::new(0.0, 1.0), 1, DerivScheme::Spectral).is_ok());
        assert!(OrbifoldGrid::build(64, 64, C64::new(0.0, 1.0), 4, DerivScheme::Spectral).is_ok());
        let g = OrbifoldGrid::build(32, 32, C64::new(0.3, 0.8), 1, DerivScheme::Fd2).unwrap();
        assert!((g.volume - 0.8).abs() < 1e-15);
        assert!(OrbifoldGrid::build(64, 64, C64::new(0.3, 0.8), 4, DerivScheme::Spectral).is_err());
        assert!(OrbifoldGrid::build(33, 33, C64::new(0.0, 1.0), 2, DerivScheme::Spectral).is_err());
        assert!(OrbifoldGrid::build(64, 64, C64::new(0.0, 1.0), 3, DerivScheme::Spectral).is_err());
        assert!(OrbifoldGrid::build(64, 64, C64::new(0.0, -1.0), 1, DerivScheme::Spectral).is_err());
    }

    #[test]
    fn dbar_annihilates_constants() {
        for scheme in [DerivScheme::Spectral, DerivScheme::Fd2, DerivScheme::Fd4] {
            let g = OrbifoldGrid::build(16, 16, C64::new(0.2, 1.3), 1, scheme).unwrap();
            let c = ScalarField::constant(&g, C64::new(1.7, -0.3));
            assert!(g.apply_dbar(&c).unwrap().max_abs() < 1e-13);
            assert!(g.apply_partial(&c).unwrap().max_abs() < 1e-13);
        }
    }

    #[test]
    fn spectral_derivative_exact_on_modes() {
        let tau = C64::new(0.3, 1.1);
        let g = OrbifoldGrid::build(32, 32, tau, 1, DerivScheme::Spectral).unwrap();
        let (m1, m2) = (3i64, -5i64);
        let f = mode(&g, m1, m2);
        // analytic: dz e^{2 pi i (m1 x + m2 y)} = (pi/Im tau)(m2 - conj(tau) m1) f
        let cz = std::f64::consts::PI / tau.im * (C64::new(m2 as f64, 0.0) - tau.conj() * m1 as f64);
        let df = g.apply_partial(&f).unwrap();
        let res: f64 = df
            .values
            .iter()
            .zip(f.values.iter())
            .map(|(d, v)| (d - cz * v).norm())
            .fold(0.0, f64::max);
        assert!(res < 1e-11, "dz residual {res}");
        let czb = std::f64::consts::PI / tau.im * (tau * m1 as f64 - C64::new(m2 as f64, 0.0));
        let db = g.apply_dbar(&f).unwrap();
        let res: f64 = db
            .values
            .iter()
            .zip(f.values.iter())
            .map(|(d, v)| (d - czb * v).norm())
            .fold(0.0, f64::max);
        assert!(res < 1e-11, "dzbar residual {res}");
    }

    #[test]
    fn real_field_conjugate_symmetry() {
        let g = grid(32);
        let f = ScalarField::from_fn(&g, FormDegree::Zero, |x, y| {
            C64::new((TWO_PI * (2.0 * x + y)).cos() + (TWO_PI * 3.0 * y).sin(), 0.0)
        });
        let dz = g.apply_partial(&f).unwrap();
        let dzb = g.apply_dbar(&f).unwrap();
        let res: f64 = dz
            .values
            .iter()
            .zip(dzb.values.iter())
            .map(|(a, b)| (a - b.conj()).norm())
            .fold(0.0, f64::max);
        assert!(res < 1e-12);
    }

    #[test]
    fn integrate_basics() {
        let g = OrbifoldGrid::build(32, 32, C64::new(0.1, 0.7), 1, DerivScheme::Spectral).unwrap();
        let one = ScalarField::constant(&g, C64::new(1.0, 0.0));
        assert!((g.integrate(&one) - C64::new(0.7, 0.0)).norm() < 1e-12);
        let m = mode(&g, 2, -1);
        assert!(g.integrate(&m).norm() < 1e-14);
    }

    #[test]
    fn integrate_parseval_oracle() {
        // u a single mode: |dbar u|^2 integrates to the analytic value
        let tau = C64::new(0.0, 1.0);
        let g = OrbifoldGrid::build(32, 32, tau, 1, DerivScheme::Spectral).unwrap();
        let (m1, m2) = (2i64, 3i64);
        let u = mode(&g, m1, m2);
        let du = g.apply_dbar(&u).unwrap();
        let sq = ScalarField {
            values: du.values.iter().map(|v| C64::new(v.norm_sqr(), 0.0)).collect(),
            degree: FormDegree::Zero,
            n1: du.n1,
            n2: du.n2,
        };
        let got = g.integrate(&sq).re;
        let czb = std::f64::consts::PI / tau.im * (tau * m1 as f64 - C64::new(m2 as f64, 0.0));
        let want = czb.norm_sqr() * g.volume;
        assert!((got - want).abs() / want < 1e-10);
    }

    #[test]
    fn lambda_contract_normalization() {
        let g = grid(16);
        // omega has (1,1) coefficient (i/2) w.r.t. dz /\ dzbar
        let omega = ScalarField {
            values: vec![C64::new(0.0, 0.5); g.site_count()],
            degree: FormDegree::OneOne,
            n1: g.n1,
            n2: g.n2,
        };
        let lam = g.lambda_contract(&omega).unwrap();
        for v in &lam.values {
            assert!((v - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
        let zero = ScalarField::zero(&g, FormDegree::OneOne);
        assert!(g.lambda_contract(&zero).unwrap().max_abs() == 0.0);
        let bad = ScalarField::zero(&g, FormDegree::Zero);
        assert!(g.lambda_contract(&bad).is_err());
    }

    #[test]
    fn lambda_dbar_partial_is_quarter_laplacian() {
        // tau = i: Lambda(dbar d u) should equal (i/2)(u_xx + u_yy) in our
        // normalization; check against the flat Fourier evaluation.
        let g = grid(32);
        let u = ScalarField::from_fn(&g, FormDegree::Zero, |x, y| {
            C64::new((TWO_PI * (x + 2.0 * y)).cos(), 0.0)
        });
        let du = g.apply_partial(&u).unwrap();
        let ddu = g.apply_dbar(&du).unwrap();
        let lhs = g.lambda_contract(&ddu).unwrap();
        // analytic: u = cos(2 pi (x+2y)); u_xx + u_yy = -(2 pi)^2 (1+4) u
        let res: f64 = lhs
            .values
            .iter()
            .zip(u.values.iter())
            .map(|(l, v)| {
                let analytic = C64::new(0.0, 0.5) * 0.25 * (-(TWO_PI * TWO_PI) * 5.0) * v * 4.0;
                (l - analytic).norm()
            })
            .fold(0.0, f64::max);
        assert!(res < 1e-10, "residual {res}");
    }

    #[test]
    fn green_solve_inverts_laplacian() {
        let g = OrbifoldGrid::build(32, 32, C64::new(0.2, 0.9), 1, DerivScheme::Spectral).unwrap();
        let u0 = ScalarField::from_fn(&g, FormDegree::Zero, |x, y| {
            C64::new(
                (TWO_PI * (x + y)).cos() + 0.3 * (TWO_PI * 2.0 * y).sin(),
                0.1 * (TWO_PI * 3.0 * x).cos(),
            )
        });
        let rhs = g.laplacian(&u0);
        let (u, mean) = g.green_solve(&rhs);
        assert!(mean.norm() < 1e-12);
        let mean_u0 = u0.values.iter().sum::<C64>() / u0.values.len() as f64;
        let res: f64 = u
            .values
            .iter()
            .zip(u0.values.iter())
            .map(|(a, b)| (a - (b - mean_u0)).norm())
            .fold(0.0, f64::max);
        assert!(res < 1e-10, "residual {res}");
        let (zero, _) = g.green_solve(&ScalarField::zero(&g, FormDegree::Zero));
        assert!(zero.max_abs() == 0.0);
    }

    #[test]
    fn green_solve_mode_oracle() {
        let g = grid(16);
        let f = mode(&g, 1, 2);
        let (u, _) = g.green_solve(&f);
        // Fourier diagonalization: u_hat = f_hat / lambda_m
        let lam = 4.0 * TWO_PI * TWO_PI / 4.0 * (1.0 + 4.0); // 4 pi^2 (m1^2+m2^2) at tau=i
        let res: f64 = u
            .values
            .iter()
            .zip(f.values.iter())
            .map(|(a, b)| (a - b / lam).norm())
            .fold(0.0, f64::max);
        assert!(res < 1e-12, "residual {res}");
    }

    #[test]
    fn heat_kernel_limits() {
        let g = grid(32);
        assert!(g.heat_kernel_sup(0.0).is_err());
        let c_inf = g.heat_kernel_sup(100.0).unwrap();
        assert!((c_inf - 1.0 / g.volume).abs() < 1e-12);
        let c1 = g.heat_kernel_sup(0.05).unwrap();
        let c2 = g.heat_kernel_sup(0.1).unwrap();
        assert!(c1 >= c2);
        // theta-series oracle on the unit square torus: kernel sup at x = 0 is
        // (1/vol) sum_m exp(-4 pi^2 |m|^2 t) over integer modes
        let t = 0.1;
        let mut oracle = 0.0;
        for m1 in -40i64..=40 {
            for m2 in -40i64..=40 {
                oracle += (-4.0 * std::f64::consts::PI.powi(2) * ((m1 * m1 + m2 * m2) as f64) * t)
                    .exp();
            }
        }
        let got = g.heat_kernel_sup(t).unwrap();
        assert!((got - oracle).abs() / oracle < 1e-12);
    }

    /// Theta function of twist `t > 0` and characteristic `c`, with its `dz`.
    fn theta_section(
        g: &OrbifoldGrid,
        t: i64,
        c: i64,
        trunc: i64,
    ) -> (Vec<C64>, Vec<C64>) {
        let pi = std::f64::consts::PI;
        let mut f = vec![C64::new(0.0, 0.0); g.site_count()];
        let mut df = vec![C64::new(0.0, 0.0); g.site_count()];
        for l in 0..g.n2 {
            for j in 0..g.n1 {
                let idx = j + g.n1 * l;
                let z = g.z(j, l);
                let mut n = c - trunc * t;
                while n <= c + trunc * t {
                    let term = (C64::i() * pi * g.tau * (n * n) as f64 / t as f64
                        + C64::i() * TWO_PI * n as f64 * z)
                        .exp();
                    f[idx] += term;
                    df[idx] += C64::i() * TWO_PI * n as f64 * term;
                    n += t;
                }
            }
        }
        (f, df)
    }

    #[test]
    fn twisted_derivative_theta_oracle() {
        // holomorphic theta sections of a positive twist: dzbar kills them and
        // dz matches the termwise series
        let tau = C64::new(0.2, 1.1);
        let g = OrbifoldGrid::build(32, 32, tau, 1, DerivScheme::Spectral).unwrap();
        for twist in [1i64, 2] {
            let (f, df) = theta_section(&g, twist, 0, 6);
            let scale = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let got_db = g.dzbar_component(&f, twist);
            let res_db = got_db.iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(res_db / scale < 1e-7, "twist {twist} dzbar residual {res_db}");
            let got_dz = g.dz_component(&f, twist);
            let res_dz: f64 = got_dz
                .iter()
                .zip(df.iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(res_dz / scale < 1e-6, "twist {twist} dz residual {res_dz}");
        }
    }

    #[test]
    fn negative_twist_conjugate_theta_oracle() {
        // u = conj(theta) * exp(-2 pi Im(tau) y^2) is a twist -1 section:
        // dz u = 2 pi i y u and dzbar u = conj(theta') e^{...} - 2 pi i y u
        let tau = C64::new(0.2, 1.1);
        let g = OrbifoldGrid::build(32, 32, tau, 1, DerivScheme::Spectral).unwrap();
        let (th, dth) = theta_section(&g, 1, 0, 6);
        let mut u = vec![C64::new(0.0, 0.0); g.site_count()];
        let mut want_dz = u.clone();
        let mut want_db = u.clone();
        for l in 0..g.n2 {
            let y = g.y(l);
            let env = (-TWO_PI * tau.im * y * y).exp();
            for j in 0..g.n1 {
                let idx = j + g.n1 * l;
                u[idx] = th[idx].conj() * env;
                want_dz[idx] = C64::i() * TWO_PI * y * u[idx];
                want_db[idx] = dth[idx].conj() * env - C64::i() * TWO_PI * y * u[idx];
            }
        }
        let scale = u.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let got_dz = g.dz_component(&u, -1);
        let res: f64 = got_dz
            .iter()
            .zip(want_dz.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(res / scale < 1e-6, "dz residual {res}");
        let got_db = g.dzbar_component(&u, -1);
        let res: f64 = got_db
            .iter()
            .zip(want_db.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(res / scale < 1e-6, "dzbar residual {res}");
    }

    #[test]
    fn integration_by_parts() {
        let g = grid(32);
        let f = ScalarField::from_fn(&g, FormDegree::Zero, |x, y| {
            C64::new((TWO_PI * x).cos(), (TWO_PI * 2.0 * y).sin())
        });
        let h = ScalarField::from_fn(&g, FormDegree::Zero, |x, y| {
            C64::new((TWO_PI * (x + y)).sin(), 0.2 * (TWO_PI * y).cos())
        });
        let df = g.apply_dbar(&f).unwrap();
        let dh = g.apply_dbar(&h).unwrap();
        let prod1: C64 = g.integrate_values(
            &h.values
                .iter()
                .zip(df.values.iter())
                .map(|(a, b)| a * b)
                .collect::<Vec<_>>(),
        );
        let prod2: C64 = g.integrate_values(
            &f.values
                .iter()
                .zip(dh.values.iter())
                .map(|(a, b)| a * b)
                .collect::<Vec<_>>(),
        );
        assert!((prod1 + prod2).norm() < 1e-10);
    }

    #[test]
    fn kahler_identity_adjoint() {
        // <dbar f, a> = <f, dbar* a> with dbar* a = -(2/g) dz a for a (0,1)-form a.
        let g = OrbifoldGrid::build(32, 32, C64::new(0.1, 0.8), 1, DerivScheme::Spectral).unwrap();
        let f = ScalarField::from_fn(&g, FormDegree::Zero, |x, y| {
            C64::new((TWO_PI * (2.0 * x - y)).cos(), (TWO_PI * y).sin())
        });
        let a = ScalarField::from_fn(&g, FormDegree::ZeroOne, |x, y| {
            C64::new((TWO_PI * x).sin(), (TWO_PI * (x + 2.0 * y)).cos())
        });
        let df = g.apply_dbar(&f).unwrap();
        // pointwise inner product on (0,1)-forms carries the factor 2/g = 2
        let lhs: C64 = g.integrate_values(
            &df.values
                .iter()
                .zip(a.values.iter())
                .map(|(p, q)| 2.0 * p * q.conj())
                .collect::<Vec<_>>(),
        );
        let dza = g.dz_component(&a.values, 0);
        let rhs: C64 = g.integrate_values(
            &f.values
                .iter()
                .zip(dza.iter())
                .map(|(p, q)| p * (-2.0 * q).conj())
                .collect::<Vec<_>>(),
        );
        assert!((lhs - rhs).norm() < 1e-10, "residual {}", (lhs - rhs).norm());
    }

    #[test]
    fn group_project_properties() {
        let g = OrbifoldGrid::build(16, 16, C64::new(0.0, 1.0), 2, DerivScheme::Spectral).unwrap();
        let f = ScalarField::from_fn(&g, FormDegree::Zero, |x, y| {
            C64::new(
                (TWO_PI * x).cos() * (TWO_PI * y).sin() + 0.3,
                (TWO_PI * 2.0 * x).sin(),
            )
        });
        let p = g.group_project(&f);
        let pp = g.group_project(&p);
        let res: f64 = p
            .values
            .iter()
            .zip(pp.values.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(res < 1e-13, "idempotency residual {res}");
        // invariance: p(-x) = p(x) for 0-forms at k = 2
        let mut inv_res = 0.0f64;
        for l in 0..g.n2 {
            for j in 0..g.n1 {
                let (rj, rl) = g.rotate_site(j, l);
                inv_res =
                    inv_res.max((p.values[j + g.n1 * l] - p.values[rj + g.n1 * rl]).norm());
            }
        }
        assert!(inv_res < 1e-12, "equivariance residual {inv_res}");
        // an equivariant field is fixed
        let e = ScalarField::from_fn(&g, FormDegree::Zero, |x, y| {
            C64::new((TWO_PI * x).cos() * (TWO_PI * y).cos(), 0.0)
        });
        let pe = g.group_project(&e);
        let res: f64 = pe
            .values
            .iter()
            .zip(e.values.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(res < 1e-12);
    }

    #[test]
    fn group_project_weighted_one_forms() {
        // at k = 2 a (1,0)-form component picks up weight zeta^{-(-1)} = -1
        let g = OrbifoldGrid::build(16, 16, C64::new(0.0, 1.0), 2, DerivScheme::Spectral).unwrap();
        // f(z) odd: f(-z) = -f(z): the dz-component of an invariant form
        let f = ScalarField::from_fn(&g, FormDegree::OneZero, |x, y| {
            C64::new((TWO_PI * x).sin(), (TWO_PI * y).sin())
        });
        let p = g.group_project(&f);
        let res: f64 = p
            .values
            .iter()
            .zip(f.values.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(res < 1e-12, "odd (1,0) component should be fixed, res {res}");
    }

    #[test]
    fn group_project_commutes_with_dbar() {
        let g = OrbifoldGrid::build(16, 16, C64::new(0.0, 1.0), 2, DerivScheme::Spectral).unwrap();
        let f = ScalarField::from_fn(&g, FormDegree::Zero, |x, y| {
            C64::new(
                (TWO_PI * (x + y)).cos() + 0.2 * (TWO_PI * 2.0 * x).sin(),
                (TWO_PI * y).cos(),
            )
        });
        let a = g.apply_dbar(&g.group_project(&f)).unwrap();
        let b = g.group_project(&g.apply_dbar(&f).unwrap());
        let res: f64 = a
            .values
            .iter()
            .zip(b.values.iter())
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max);
        assert!(res < 1e-10, "residual {res}");
    }

    #[test]
    fn fd_schemes_converge_at_expected_order() {
        let tau = C64::new(0.0, 1.0);
        let f_exact = |x: f64, y: f64| C64::new((TWO_PI * (x + 2.0 * y)).cos(), 0.0);
        let mut errs2 = Vec::new();
        let mut errs4 = Vec::new();
        for n in [16usize, 32, 64] {
            for (scheme, errs) in [(DerivScheme::Fd2, &mut errs2), (DerivScheme::Fd4, &mut errs4)]
            {
                let g = OrbifoldGrid::build(n, n, tau, 1, scheme).unwrap();
                let f = ScalarField::from_fn(&g, FormDegree::Zero, |x, y| f_exact(x, y));
                let df = g.apply_dbar(&f).unwrap();
                let gs = OrbifoldGrid::build(n, n, tau, 1, DerivScheme::Spectral).unwrap();
                let dfe = gs.apply_dbar(&f).unwrap();
                let err: f64 = df
                    .values
                    .iter()
                    .zip(dfe.values.iter())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                errs.push(err);
            }
        }
        let order2 = (errs2[0] / errs2[2]).log2() / 2.0;
        let order4 = (errs4[0] / errs4[2]).log2() / 2.0;
        assert!(order2 > 1.9, "fd2 observed order {order2}");
        assert!(order4 > 3.8, "fd4 observed order {order4}");
    }
}
