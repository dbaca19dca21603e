//! Holomorphic bundles split as sums of line bundles `L_{d_1} + ... + L_{d_r}`
//! in the theta gauge, plus a `(0,1)` deformation `a` of the dbar operator.
//!
//! Endomorphism-valued fields store the `(a,b)` component as a twist
//! `d_a - d_b` scalar field, so every stored array is periodic-compatible with
//! the gauge machinery in `grid`. Metrics are stored relative to the flat
//! reference `K0`, whose Gram matrix is the diagonal analytic weight
//! `D0(y) = diag(exp(-2 pi d_a Im(tau) y^2))`; the stored object
//! `h = K0^{-1} H` is then itself an endomorphism field.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use thiserror::Error;

use crate::grid::{FormDegree, OrbifoldGrid, ScalarField};
use crate::par;

const TWO_PI: f64 = std::f64::consts::TAU;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("invalid bundle data: {0}")]
    Invalid(String),
    #[error("metric not positive definite at site {0}")]
    NotPositive(usize),
}

/// Background `(0,1)`-form deformation of the dbar operator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackgroundA {
    None,
    /// Constant coefficients; each entry must sit on a twist-0 component.
    Constant { entries: Vec<AEntry> },
    /// Coefficient times the standard antiholomorphic section of the entry's
    /// (negative) twist; the natural harmonic representative.
    Harmonic { entries: Vec<AEntry> },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AEntry {
    pub row: usize,
    pub col: usize,
    pub re: f64,
    pub im: f64,
}

impl AEntry {
    pub fn coeff(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

/// Endomorphism-valued field, component-major: `comps[a * rank + b]` holds the
/// `(a,b)` matrix entry at every site.
#[derive(Debug, Clone)]
pub struct EndoField {
    pub rank: usize,
    pub degree: FormDegree,
    pub comps: Vec<Vec<C64>>,
    pub n1: usize,
    pub n2: usize,
}

impl EndoField {
    pub fn zero(grid: &OrbifoldGrid, rank: usize, degree: FormDegree) -> Self {
        EndoField {
            rank,
            degree,
            comps: vec![vec![C64::new(0.0, 0.0); grid.site_count()]; rank * rank],
            n1: grid.n1,
            n2: grid.n2,
        }
    }

    pub fn identity(grid: &OrbifoldGrid, rank: usize) -> Self {
        let mut e = EndoField::zero(grid, rank, FormDegree::Zero);
        for a in 0..rank {
            for v in e.comps[a * rank + a].iter_mut() {
                *v = C64::new(1.0, 0.0);
            }
        }
        e
    }

    pub fn site_count(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn comp(&self, a: usize, b: usize) -> &[C64] {
        &self.comps[a * self.rank + b]
    }

    pub fn comp_mut(&mut self, a: usize, b: usize) -> &mut Vec<C64> {
        &mut self.comps[a * self.rank + b]
    }

    pub fn at_site(&self, idx: usize) -> DMatrix<C64> {
        DMatrix::from_fn(self.rank, self.rank, |a, b| self.comps[a * self.rank + b][idx])
    }

    pub fn set_site(&mut self, idx: usize, m: &DMatrix<C64>) {
        for a in 0..self.rank {
            for b in 0..self.rank {
                self.comps[a * self.rank + b][idx] = m[(a, b)];
            }
        }
    }

    /// Build from a per-site matrix map, in parallel.
    pub fn from_site_fn<F>(grid: &OrbifoldGrid, rank: usize, degree: FormDegree, f: F) -> Self
    where
        F: Fn(usize) -> DMatrix<C64> + Sync + Send,
    {
        let mats = par::map_sites(grid.site_count(), f);
        let mut e = EndoField::zero(grid, rank, degree);
        for (idx, m) in mats.iter().enumerate() {
            e.set_site(idx, m);
        }
        e
    }

    /// Pointwise unary transform of the site matrices.
    pub fn map_sites<F>(&self, f: F) -> Self
    where
        F: Fn(usize, DMatrix<C64>) -> DMatrix<C64> + Sync + Send,
    {
        let mats = par::map_sites(self.site_count(), |idx| f(idx, self.at_site(idx)));
        let mut out = self.clone();
        for (idx, m) in mats.iter().enumerate() {
            out.set_site(idx, m);
        }
        out
    }

    pub fn add_scaled(&mut self, other: &EndoField, c: C64) {
        assert_eq!(self.rank, other.rank);
        for (dst, src) in self.comps.iter_mut().zip(other.comps.iter()) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += c * s;
            }
        }
    }

    pub fn scaled(&self, c: C64) -> Self {
        let mut out = self.clone();
        for comp in out.comps.iter_mut() {
            for v in comp.iter_mut() {
                *v *= c;
            }
        }
        out
    }

    /// Pointwise matrix product (form degrees are the caller's business).
    pub fn mul(&self, other: &EndoField, degree: FormDegree) -> Self {
        assert_eq!(self.rank, other.rank);
        let r = self.rank;
        let n = self.site_count();
        let mut out = EndoField {
            rank: r,
            degree,
            comps: vec![vec![C64::new(0.0, 0.0); n]; r * r],
            n1: self.n1,
            n2: self.n2,
        };
        for a in 0..r {
            for b in 0..r {
                let dst = &mut out.comps[a * r + b];
                for c in 0..r {
                    let lhs = &self.comps[a * r + c];
                    let rhs = &other.comps[c * r + b];
                    for i in 0..n {
                        dst[i] += lhs[i] * rhs[i];
                    }
                }
            }
        }
        out
    }

    pub fn commutator(&self, other: &EndoField, degree: FormDegree) -> Self {
        let mut ab = self.mul(other, degree);
        let ba = other.mul(self, degree);
        ab.add_scaled(&ba, C64::new(-1.0, 0.0));
        ab
    }

    pub fn trace(&self) -> ScalarField {
        let n = self.site_count();
        let mut values = vec![C64::new(0.0, 0.0); n];
        for a in 0..self.rank {
            for (v, t) in values.iter_mut().zip(self.comps[a * self.rank + a].iter()) {
                *v += t;
            }
        }
        ScalarField {
            values,
            degree: self.degree,
            n1: self.n1,
            n2: self.n2,
        }
    }

    pub fn sup_abs(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter().map(|v| v.norm()))
            .fold(0.0, f64::max)
    }
}

/// A Hermitian metric, stored as `h = K0^{-1} H` relative to the reference.
#[derive(Debug, Clone)]
pub struct MetricField {
    pub h: EndoField,
}

/// The bundle: grid, splitting type, orbifold weights, dbar deformation.
pub struct Bundle {
    pub grid: Arc<OrbifoldGrid>,
    pub twists: Vec<i64>,
    pub iso_weights: Vec<i64>,
    pub background: BackgroundA,
    a_field: Option<EndoField>,
}

impl Bundle {
    pub fn new(
        grid: Arc<OrbifoldGrid>,
        twists: Vec<i64>,
        iso_weights: Vec<i64>,
        background: BackgroundA,
    ) -> Result<Self, BundleError> {
        if twists.is_empty() {
            return Err(BundleError::Invalid("rank must be positive".into()));
        }
        if iso_weights.len() != twists.len() {
            return Err(BundleError::Invalid(
                "isotropy weights must match the rank".into(),
            ));
        }
        if grid.k == 4 && twists.iter().any(|&d| d != 0) {
            return Err(BundleError::Invalid(
                "k = 4 quotients are supported for degree-0 splittings only".into(),
            ));
        }
        let rank = twists.len();
        let a_field = match &background {
            BackgroundA::None => None,
            BackgroundA::Constant { entries } => {
                let mut a = EndoField::zero(&grid, rank, FormDegree::ZeroOne);
                for e in entries {
                    if e.row >= rank || e.col >= rank {
                        return Err(BundleError::Invalid("background entry out of range".into()));
                    }
                    if twists[e.row] != twists[e.col] {
                        return Err(BundleError::Invalid(
                            "constant background entries need twist 0".into(),
                        ));
                    }
                    for v in a.comp_mut(e.row, e.col).iter_mut() {
                        *v += e.coeff();
                    }
                }
                Some(a)
            }
            BackgroundA::Harmonic { entries } => {
                let mut a = EndoField::zero(&grid, rank, FormDegree::ZeroOne);
                for e in entries {
                    if e.row >= rank || e.col >= rank {
                        return Err(BundleError::Invalid("background entry out of range".into()));
                    }
                    let t = twists[e.row] - twists[e.col];
                    if t >= 0 {
                        return Err(BundleError::Invalid(
                            "harmonic background entries need negative twist".into(),
                        ));
                    }
                    let sec = standard_twist_section(&grid, t);
                    let dst = a.comp_mut(e.row, e.col);
                    for (d, s) in dst.iter_mut().zip(sec.iter()) {
                        *d += e.coeff() * s;
                    }
                }
                Some(a)
            }
        };
        Ok(Bundle {
            grid,
            twists,
            iso_weights,
            background,
            a_field,
        })
    }

    pub fn rank(&self) -> usize {
        self.twists.len()
    }

    pub fn degree_sum(&self) -> i64 {
        self.twists.iter().sum()
    }

    pub fn twist_of(&self, a: usize, b: usize) -> i64 {
        self.twists[a] - self.twists[b]
    }

    pub fn background_a(&self) -> Option<&EndoField> {
        self.a_field.as_ref()
    }

    /// Reference Gram weight of factor `a` at height `y`.
    pub fn k0_weight(&self, a: usize, y: f64) -> f64 {
        (-TWO_PI * self.twists[a] as f64 * self.grid.tau.im * y * y).exp()
    }

    pub fn k0_gram_at(&self, idx: usize) -> DMatrix<C64> {
        let l = idx / self.grid.n1;
        let y = self.grid.y(l);
        DMatrix::from_fn(self.rank(), self.rank(), |a, b| {
            if a == b {
                C64::new(self.k0_weight(a, y), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    pub fn flat_reference_metric(&self) -> MetricField {
        MetricField {
            h: EndoField::identity(&self.grid, self.rank()),
        }
    }

    /// Gram matrix of `K` at a site: `D0(y) * h(site)`.
    pub fn gram_at(&self, k: &MetricField, idx: usize) -> DMatrix<C64> {
        let l = idx / self.grid.n1;
        let y = self.grid.y(l);
        let mut m = k.h.at_site(idx);
        for a in 0..self.rank() {
            let w = self.k0_weight(a, y);
            for b in 0..self.rank() {
                m[(a, b)] *= w;
            }
        }
        m
    }

    /// Componentwise `dzbar` respecting each entry's twist. Pure derivative;
    /// the `a`-commutator of the deformed operator is added by callers.
    pub fn dzbar_endo(&self, f: &EndoField) -> EndoField {
        self.deriv_endo(f, false)
    }

    /// Componentwise `dz` respecting each entry's twist.
    pub fn dz_endo(&self, f: &EndoField) -> EndoField {
        self.deriv_endo(f, true)
    }

    fn deriv_endo(&self, f: &EndoField, holo: bool) -> EndoField {
        let r = self.rank();
        assert_eq!(f.rank, r);
        let comps: Vec<Vec<C64>> = par::map_sites(r * r, |c| {
            let (a, b) = (c / r, c % r);
            let t = self.twist_of(a, b);
            if holo {
                self.grid.dz_component(&f.comps[c], t)
            } else {
                self.grid.dzbar_component(&f.comps[c], t)
            }
        });
        EndoField {
            rank: r,
            degree: f.degree,
            comps,
            n1: f.n1,
            n2: f.n2,
        }
    }

    /// `K0`-twisted dagger `D0^{-1} A^dagger D0`; endomorphism-type again.
    pub fn adjoint_k0(&self, f: &EndoField) -> EndoField {
        let r = self.rank();
        let n1 = self.grid.n1;
        let im_tau = self.grid.tau.im;
        let mut out = f.clone();
        for a in 0..r {
            for b in 0..r {
                let src = &f.comps[b * r + a];
                let dst = &mut out.comps[a * r + b];
                let dw = (self.twists[a] - self.twists[b]) as f64;
                for (idx, (d, s)) in dst.iter_mut().zip(src.iter()).enumerate() {
                    let y = (idx / n1) as f64 / self.grid.n2 as f64;
                    // D0_a^{-1} D0_b = exp(2 pi (d_a - d_b) Im tau y^2)
                    *d = s.conj() * (TWO_PI * dw * im_tau * y * y).exp();
                }
            }
        }
        out.degree = match f.degree {
            FormDegree::ZeroOne => FormDegree::OneZero,
            FormDegree::OneZero => FormDegree::ZeroOne,
            d => d,
        };
        out
    }

    /// Adjoint with respect to an arbitrary metric: `h^{-1} A^{dagger_0} h`.
    pub fn adjoint_wrt(&self, k: &MetricField, f: &EndoField) -> EndoField {
        let ad0 = self.adjoint_k0(f);
        EndoField::from_site_fn(&self.grid, self.rank(), ad0.degree, |idx| {
            let h = k.h.at_site(idx);
            let hinv = h.clone().try_inverse().expect("metric must be invertible");
            hinv * ad0.at_site(idx) * h
        })
    }

    /// Cholesky factor `L` of the Gram matrix of `K` at a site.
    pub fn gram_chol_at(&self, k: &MetricField, idx: usize) -> Result<DMatrix<C64>, BundleError> {
        let g = self.gram_at(k, idx);
        let g = (g.clone() + g.adjoint()) * C64::new(0.5, 0.0);
        g.cholesky()
            .map(|c| c.l())
            .ok_or(BundleError::NotPositive(idx))
    }

    /// `s = log(K^{-1} H)`, the `K`-self-adjoint endomorphism with `H = K e^s`.
    pub fn relate_metrics(
        &self,
        k: &MetricField,
        h: &MetricField,
    ) -> Result<EndoField, BundleError> {
        let r = self.rank();
        let mats: Vec<Result<DMatrix<C64>, BundleError>> =
            par::map_sites(self.grid.site_count(), |idx| {
                let l = self.gram_chol_at(k, idx)?;
                let gh = self.gram_at(h, idx);
                let linv = l
                    .clone()
                    .try_inverse()
                    .ok_or(BundleError::NotPositive(idx))?;
                let x = &linv * gh * linv.adjoint();
                let x = (x.clone() + x.adjoint()) * C64::new(0.5, 0.0);
                let eig = x.symmetric_eigen();
                for &ev in eig.eigenvalues.iter() {
                    if ev <= 0.0 {
                        return Err(BundleError::NotPositive(idx));
                    }
                }
                let diag = DMatrix::from_diagonal(
                    &eig.eigenvalues.map(|ev: f64| C64::new(ev.ln(), 0.0)),
                );
                let log_x = &eig.eigenvectors * diag * eig.eigenvectors.adjoint();
                Ok(linv.adjoint() * log_x * l.adjoint())
            });
        let mut s = EndoField::zero(&self.grid, r, FormDegree::Zero);
        for (idx, m) in mats.into_iter().enumerate() {
            s.set_site(idx, &m?);
        }
        Ok(s)
    }

    /// `H = K e^s` for `K`-self-adjoint `s`.
    pub fn metric_exp(
        &self,
        k: &MetricField,
        s: &EndoField,
    ) -> Result<MetricField, BundleError> {
        let r = self.rank();
        let mats: Vec<Result<DMatrix<C64>, BundleError>> =
            par::map_sites(self.grid.site_count(), |idx| {
                let l = self.gram_chol_at(k, idx)?;
                let linv = l
                    .clone()
                    .try_inverse()
                    .ok_or(BundleError::NotPositive(idx))?;
                let x = l.adjoint() * s.at_site(idx) * linv.adjoint();
                let x = (x.clone() + x.adjoint()) * C64::new(0.5, 0.0);
                let eig = x.symmetric_eigen();
                let diag = DMatrix::from_diagonal(
                    &eig.eigenvalues.map(|ev: f64| C64::new(ev.exp(), 0.0)),
                );
                let exp_x = &eig.eigenvectors * diag * eig.eigenvectors.adjoint();
                let exp_s = linv.adjoint() * exp_x * l.adjoint();
                Ok(k.h.at_site(idx) * exp_s)
            });
        let mut h = EndoField::zero(&self.grid, r, FormDegree::Zero);
        for (idx, m) in mats.into_iter().enumerate() {
            h.set_site(idx, &m?);
        }
        Ok(MetricField { h })
    }

    /// Eigenvalues of a `K`-self-adjoint field at one site, with a
    /// `K`-orthonormal eigenframe `P` (`s = P diag P^{-1}`).
    pub fn k_eigen_at(
        &self,
        k: &MetricField,
        s: &EndoField,
        idx: usize,
    ) -> Result<(Vec<f64>, DMatrix<C64>), BundleError> {
        let l = self.gram_chol_at(k, idx)?;
        let linv = l
            .clone()
            .try_inverse()
            .ok_or(BundleError::NotPositive(idx))?;
        let x = l.adjoint() * s.at_site(idx) * linv.adjoint();
        let x = (x.clone() + x.adjoint()) * C64::new(0.5, 0.0);
        let eig = x.symmetric_eigen();
        let frame = linv.adjoint() * &eig.eigenvectors;
        Ok((eig.eigenvalues.iter().copied().collect(), frame))
    }

    /// Pointwise squared norm `|A|_K^2 = tr(A^{*K} A)` with the metric form
    /// factor for one-form and two-form components.
    pub fn pointwise_norm_sq(&self, k: &MetricField, f: &EndoField) -> ScalarField {
        let factor = match f.degree {
            FormDegree::Zero => 1.0,
            FormDegree::OneZero | FormDegree::ZeroOne => 2.0,
            FormDegree::OneOne => 4.0,
        };
        let values = par::map_sites(self.grid.site_count(), |idx| {
            let g = self.gram_at(k, idx);
            let ginv = g.clone().try_inverse().expect("metric must be invertible");
            let a = f.at_site(idx);
            let m = ginv * a.adjoint() * g * &a;
            C64::new(factor * m.trace().re, 0.0)
        });
        ScalarField {
            values,
            degree: FormDegree::Zero,
            n1: f.n1,
            n2: f.n2,
        }
    }

    pub fn l2_norm(&self, k: &MetricField, f: &EndoField) -> f64 {
        self.grid
            .integrate(&self.pointwise_norm_sq(k, f))
            .re
            .max(0.0)
            .sqrt()
    }

    pub fn l1_norm(&self, k: &MetricField, f: &EndoField) -> f64 {
        let sq = self.pointwise_norm_sq(k, f);
        let vals: Vec<C64> = sq
            .values
            .iter()
            .map(|v| C64::new(v.re.max(0.0).sqrt(), 0.0))
            .collect();
        self.grid.integrate_values(&vals).re
    }

    pub fn sup_norm(&self, k: &MetricField, f: &EndoField) -> f64 {
        self.pointwise_norm_sq(k, f)
            .values
            .iter()
            .map(|v| v.re.max(0.0).sqrt())
            .fold(0.0, f64::max)
    }

    /// The pseudo-distance `sigma(K, H) = int tr(K^{-1}H) + tr(H^{-1}K) - 2r`.
    pub fn sigma_distance(&self, k: &MetricField, h: &MetricField) -> Result<f64, BundleError> {
        let r = self.rank();
        let vals: Vec<Result<C64, BundleError>> = par::map_sites(self.grid.site_count(), |idx| {
            let hk = k.h.at_site(idx);
            let hh = h.h.at_site(idx);
            let m = hk
                .clone()
                .try_inverse()
                .ok_or(BundleError::NotPositive(idx))?
                * &hh;
            let minv = m
                .clone()
                .try_inverse()
                .ok_or(BundleError::NotPositive(idx))?;
            Ok(C64::new(m.trace().re + minv.trace().re - 2.0 * r as f64, 0.0))
        });
        let mut flat = Vec::with_capacity(vals.len());
        for v in vals {
            flat.push(v?);
        }
        Ok(self.grid.integrate_values(&flat).re)
    }

    /// Rotation cocycle of a twist-`t` component at a site: the seam factor
    /// picked up when `-z` is reduced back to the fundamental domain. Rows
    /// with `y = 0` reduce by an `x` translation only, which is seam-free.
    fn rotation_cocycle(&self, t: i64, j: usize, l: usize) -> C64 {
        if t == 0 || l == 0 {
            return C64::new(1.0, 0.0);
        }
        let z = self.grid.z(j, l);
        let tf = t as f64;
        (C64::i() * std::f64::consts::PI * tf * self.grid.tau - C64::i() * TWO_PI * tf * z).exp()
    }

    /// Average of an endomorphism field over the `Z_k` action, with entry
    /// phases from the isotropy weights and the form weight of the degree,
    /// and the seam cocycle on twisted entries (`k = 2` only; `k = 4` grids
    /// are restricted to untwisted splittings).
    pub fn group_project_endo(&self, f: &EndoField) -> EndoField {
        let grid = &self.grid;
        if grid.k == 1 {
            return f.clone();
        }
        let r = self.rank();
        let w_form = f.degree.rotation_weight();
        let zeta = C64::from_polar(1.0, TWO_PI / grid.k as f64);
        let k = grid.k as i64;
        let comps: Vec<Vec<C64>> = par::map_sites(r * r, |c| {
            let (a, b) = (c / r, c % r);
            let w = w_form + self.iso_weights[a] - self.iso_weights[b];
            let t = self.twist_of(a, b);
            let src = &f.comps[c];
            let n1 = grid.n1;
            (0..src.len())
                .map(|idx| {
                    let (mut j, mut l) = (idx % n1, idx / n1);
                    let mut acc = C64::new(0.0, 0.0);
                    let mut cocycle = C64::new(1.0, 0.0);
                    for m in 0..k {
                        let phase = zeta.powi((-w * m) as i32);
                        acc += phase * cocycle * src[j + n1 * l];
                        cocycle *= self.rotation_cocycle(t, j, l);
                        let (rj, rl) = grid.rotate_site(j, l);
                        j = rj;
                        l = rl;
                    }
                    acc / k as f64
                })
                .collect()
        });
        EndoField {
            rank: r,
            degree: f.degree,
            comps,
            n1: f.n1,
            n2: f.n2,
        }
    }

    /// Random low-mode endomorphism field; twisted entries are modulated by
    /// the standard section of their twist so that every entry is a genuine
    /// section. Not self-adjointized.
    pub fn random_endo<R: Rng>(&self, rng: &mut R, amp: f64, max_mode: i64) -> EndoField {
        let r = self.rank();
        let grid = &self.grid;
        let mut f = EndoField::zero(grid, r, FormDegree::Zero);
        for a in 0..r {
            for b in 0..r {
                let t = self.twist_of(a, b);
                let carrier = standard_twist_section(grid, t);
                let mut modes: Vec<(i64, i64, C64)> = Vec::new();
                for _ in 0..4 {
                    let m1 = rng.gen_range(-max_mode..=max_mode);
                    let m2 = rng.gen_range(-max_mode..=max_mode);
                    let c = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    modes.push((m1, m2, c));
                }
                let dst = f.comp_mut(a, b);
                for l in 0..grid.n2 {
                    for j in 0..grid.n1 {
                        let idx = j + grid.n1 * l;
                        let (x, y) = (grid.x(j), grid.y(l));
                        let mut p = C64::new(0.0, 0.0);
                        for &(m1, m2, c) in &modes {
                            p += c
                                * (C64::i() * TWO_PI * (m1 as f64 * x + m2 as f64 * y)).exp();
                        }
                        dst[idx] = amp * carrier[idx] * p;
                    }
                }
            }
        }
        f
    }

    /// Random `K`-self-adjoint endomorphism field.
    pub fn random_self_adjoint<R: Rng>(
        &self,
        k: &MetricField,
        rng: &mut R,
        amp: f64,
        max_mode: i64,
    ) -> EndoField {
        let raw = self.random_endo(rng, 1.0, max_mode);
        let adj = self.adjoint_wrt(k, &raw);
        let mut s = raw;
        s.add_scaled(&adj, C64::new(1.0, 0.0));
        let sup = s.sup_abs();
        if sup > 0.0 {
            s = s.scaled(C64::new(amp / sup, 0.0));
        }
        s
    }
}

/// The standard smooth section carrying twist `t`: a theta series for `t > 0`,
/// the conjugate theta series with its Gaussian envelope for `t < 0`, and the
/// constant 1 for `t = 0`.
pub fn standard_twist_section(grid: &OrbifoldGrid, t: i64) -> Vec<C64> {
    let n = grid.site_count();
    if t == 0 {
        return vec![C64::new(1.0, 0.0); n];
    }
    let pi = std::f64::consts::PI;
    let tp = t.abs();
    let trunc = 6 * tp;
    let mut out = vec![C64::new(0.0, 0.0); n];
    for l in 0..grid.n2 {
        for j in 0..grid.n1 {
            let idx = j + grid.n1 * l;
            let z = grid.z(j, l);
            let mut acc = C64::new(0.0, 0.0);
            let mut m = -trunc;
            while m <= trunc {
                acc += (C64::i() * pi * grid.tau * (m * m) as f64 / tp as f64
                    + C64::i() * TWO_PI * m as f64 * z)
                    .exp();
                m += tp;
            }
            if t > 0 {
                out[idx] = acc;
            } else {
                let y = grid.y(l);
                let env = (TWO_PI * t as f64 * grid.tau.im * y * y).exp();
                out[idx] = acc.conj() * env;
            }
        }
    }
    out
}
