//! Chern connections and curvature.
//!
//! Everything is computed relative to the flat reference metric `K0`, whose
//! connection form `theta_0 = diag(2 pi i d_a y) dz` and curvature
//! `F_0 = diag(pi d_a / Im tau) dz /\ dzbar` are closed-form. The raw
//! connection form of an arbitrary metric has a seam anomaly in the theta
//! gauge, but `h^{-1} d_0 h` for `h = K0^{-1} H` is an honest endomorphism
//! field, so the relative formula
//! `F_H = F_{K0,a} + dbar_a(h^{-1} d_{K0,a} h)` stays inside periodic storage.
//!
//! Curvature coefficients are stored with respect to `dz /\ dzbar`; the
//! contraction is `Lambda F = -2i F_{z zbar}` and the Einstein constant is
//! `lambda = -2 pi i mu(E) / vol`.

use num_complex::Complex64 as C64;

use crate::bundle::{Bundle, EndoField, MetricField};
use crate::grid::{FormDegree, ScalarField};
use crate::par;

const TWO_PI: f64 = std::f64::consts::TAU;

impl Bundle {
    /// Commutator with the reference connection form: entry `(a,b)` picks up
    /// `2 pi i (d_a - d_b) y`.
    fn theta0_bracket(&self, f: &EndoField) -> EndoField {
        let r = self.rank();
        let mut out = f.clone();
        let n1 = self.grid.n1;
        for a in 0..r {
            for b in 0..r {
                let t = self.twist_of(a, b) as f64;
                let dst = &mut out.comps[a * r + b];
                for (idx, v) in dst.iter_mut().enumerate() {
                    let y = self.grid.y(idx / n1);
                    *v *= C64::i() * TWO_PI * t * y;
                }
            }
        }
        out
    }

    /// `(1,0)` covariant derivative of an endomorphism 0-form with respect to
    /// the deformed reference connection: `d_0 A - [a^{dagger_0}, A]`.
    pub fn d10_k0a(&self, f: &EndoField) -> EndoField {
        let mut out = self.dz_endo(f);
        out.add_scaled(&self.theta0_bracket(f), C64::new(1.0, 0.0));
        if let Some(a) = self.background_a() {
            let ad = self.adjoint_k0(a);
            out.add_scaled(&ad.commutator(f, FormDegree::Zero), C64::new(-1.0, 0.0));
        }
        out.degree = FormDegree::OneZero;
        out
    }

    /// Deformed `dbar` on endomorphism 0-forms: `dbar A + [a, A]`.
    pub fn dbar_a(&self, f: &EndoField) -> EndoField {
        let mut out = self.dzbar_endo(f);
        if let Some(a) = self.background_a() {
            out.add_scaled(&a.commutator(f, FormDegree::Zero), C64::new(1.0, 0.0));
        }
        out.degree = FormDegree::ZeroOne;
        out
    }

    /// Deformed `dbar` of an endomorphism `(1,0)`-form `beta dz`; returns the
    /// coefficient with respect to `dz /\ dzbar`, namely
    /// `-(dzbar beta + [a, beta])`.
    pub fn dbar_a_10(&self, beta: &EndoField) -> EndoField {
        let mut out = self.dzbar_endo(beta);
        if let Some(a) = self.background_a() {
            out.add_scaled(&a.commutator(beta, FormDegree::Zero), C64::new(1.0, 0.0));
        }
        let mut out = out.scaled(C64::new(-1.0, 0.0));
        out.degree = FormDegree::OneOne;
        out
    }

    /// `(1,0)` covariant derivative with respect to the Chern connection of an
    /// arbitrary metric `k`: `d_{K0,a} f + [h^{-1} d_{K0,a} h, f]`.
    pub fn d10_wrt(&self, k: &MetricField, f: &EndoField) -> EndoField {
        let mut out = self.d10_k0a(f);
        let dh = self.d10_k0a(&k.h);
        let beta = EndoField::from_site_fn(&self.grid, self.rank(), FormDegree::OneZero, |idx| {
            k.h.at_site(idx)
                .try_inverse()
                .expect("metric must be invertible")
                * dh.at_site(idx)
        });
        out.add_scaled(&beta.commutator(f, FormDegree::OneZero), C64::new(1.0, 0.0));
        out
    }

    /// Curvature coefficient `F_{z zbar}` of the deformed reference pair
    /// `(K0, a)`.
    pub fn curvature_ref(&self) -> EndoField {
        let r = self.rank();
        let mut f = EndoField::zero(&self.grid, r, FormDegree::OneOne);
        let pi = std::f64::consts::PI;
        for a in 0..r {
            let c = C64::new(pi * self.twists[a] as f64 / self.grid.tau.im, 0.0);
            for v in f.comp_mut(a, a).iter_mut() {
                *v = c;
            }
        }
        let Some(bg) = self.background_a() else {
            return f;
        };
        // F = F_0 + d_{0,z} a + dzbar(a^{dagger_0}) - [a^{dagger_0}, a]
        let mut da = self.dz_endo(bg);
        da.add_scaled(&self.theta0_bracket(bg), C64::new(1.0, 0.0));
        f.add_scaled(&da, C64::new(1.0, 0.0));
        let ad = self.adjoint_k0(bg);
        f.add_scaled(&self.dzbar_endo(&ad), C64::new(1.0, 0.0));
        f.add_scaled(&ad.commutator(bg, FormDegree::Zero), C64::new(-1.0, 0.0));
        f
    }

    /// Curvature coefficient `F_{z zbar}` of the Chern connection of `H`.
    pub fn curvature(&self, h: &MetricField) -> EndoField {
        let mut f = self.curvature_ref();
        // beta = h^{-1} d_{K0,a} h
        let dh = self.d10_k0a(&h.h);
        let beta = EndoField::from_site_fn(&self.grid, self.rank(), FormDegree::OneZero, |idx| {
            h.h.at_site(idx)
                .try_inverse()
                .expect("metric must be invertible")
                * dh.at_site(idx)
        });
        f.add_scaled(&self.dbar_a_10(&beta), C64::new(1.0, 0.0));
        f
    }

    /// `Lambda F_H` as an endomorphism 0-form: `-2i F_{z zbar}`.
    pub fn lambda_curvature(&self, h: &MetricField) -> EndoField {
        let mut out = self.curvature(h).scaled(C64::new(0.0, -2.0));
        out.degree = FormDegree::Zero;
        out
    }

    /// Analytic degree `(i / 2 pi) int tr(Lambda F) dvol`.
    pub fn degree(&self, h: &MetricField) -> f64 {
        let lf = self.lambda_curvature(h);
        let tr = lf.trace();
        (C64::i() / TWO_PI * self.grid.integrate(&tr)).re
    }

    pub fn slope(&self) -> f64 {
        self.degree_sum() as f64 / self.rank() as f64
    }

    /// The Einstein constant `lambda = -2 pi i mu / vol` (purely imaginary).
    pub fn einstein_constant(&self) -> C64 {
        -C64::i() * TWO_PI * self.slope() / self.grid.volume
    }

    /// Hermitian deviation `i Lambda F_H - i lambda` from the Einstein
    /// equation; vanishes exactly at a Hermitian-Einstein metric.
    pub fn einstein_deviation(&self, h: &MetricField) -> EndoField {
        let mut dev = self.lambda_curvature(h).scaled(C64::i());
        let shift = C64::i() * self.einstein_constant();
        for a in 0..self.rank() {
            for v in dev.comp_mut(a, a).iter_mut() {
                *v -= shift;
            }
        }
        dev
    }

    /// Pointwise Hermitian-Schmidt norm of the deviation in the metric `h`
    /// itself, together with its sup over sites. For an `h`-self-adjoint
    /// field the norm reduces to `sqrt(tr(M^2))`, no eigensolve needed.
    pub fn deviation_norms(&self, h: &MetricField) -> (f64, f64) {
        let dev = self.einstein_deviation(h);
        let vals: Vec<f64> = par::map_sites(self.grid.site_count(), |idx| {
            let m = dev.at_site(idx);
            (&m * &m).trace().re.max(0.0).sqrt()
        });
        let sup = vals.iter().copied().fold(0.0, f64::max);
        let l2 = {
            let sq: Vec<C64> = vals.iter().map(|v| C64::new(v * v, 0.0)).collect();
            self.grid.integrate_values(&sq).re.max(0.0).sqrt()
        };
        (sup, l2)
    }

    /// Degree of a weakly holomorphic projection `pi` measured against the
    /// metric `k`: `(1/2 pi) int ( i tr(pi Lambda F_K) - |dbar_a pi|_K^2 )`.
    pub fn projection_degree(&self, k: &MetricField, pi: &EndoField) -> f64 {
        let lf = self.lambda_curvature(k);
        let prod = pi.mul(&lf, FormDegree::Zero);
        let first = (C64::i() * self.grid.integrate(&prod.trace())).re;
        let dpi = self.dbar_a(pi);
        let nsq = self.pointwise_norm_sq(k, &dpi);
        let second = self.grid.integrate(&nsq).re;
        (first - second) / TWO_PI
    }
}

/// Scalar curvature helper for rank-1 sanity work: `i Lambda (F_H - F_K)` for
/// conformally related line-bundle metrics equals half the scalar Laplacian of
/// the conformal exponent.
pub fn conformal_deviation(bundle: &Bundle, u: &ScalarField) -> ScalarField {
    let lap = bundle.grid.laplacian(u);
    ScalarField {
        values: lap.values.iter().map(|v| 0.5 * v).collect(),
        degree: FormDegree::Zero,
        n1: u.n1,
        n2: u.n2,
    }
}
