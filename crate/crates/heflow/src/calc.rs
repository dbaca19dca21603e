//! Matrix functional calculus on self-adjoint endomorphism fields.
//!
//! For `s` self-adjoint with respect to a metric `K`, `phi_of_s` applies a
//! scalar function to the eigenvalues in a `K`-unitary eigenframe, and
//! `phi_pair_of_s` applies a bivariate weight to the frame components of a
//! second field: `Phi(s)(A) = sum Phi(l_a, l_b) A~_a^b e^a (x) e_b`.
//! Both depend only on eigenvalue data, so degenerate clusters are handled
//! automatically as long as the bivariate function is stable on the diagonal;
//! `diff_quotient` builds such stable difference quotients.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::bundle::{Bundle, EndoField, MetricField};
use crate::par;

/// Bivariate real function of eigenvalue pairs.
pub struct Bivariate(pub Box<dyn Fn(f64, f64) -> f64 + Sync + Send>);

impl Bivariate {
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        (self.0)(u, v)
    }
}

/// The stabilized difference quotient `(phi(u) - phi(v)) / (u - v)`, falling
/// back to the derivative at the midpoint near the diagonal.
pub fn diff_quotient<F, G>(phi: F, dphi: G) -> Bivariate
where
    F: Fn(f64) -> f64 + Sync + Send + 'static,
    G: Fn(f64) -> f64 + Sync + Send + 'static,
{
    Bivariate(Box::new(move |u, v| {
        let scale = 1.0 + u.abs().max(v.abs());
        if (u - v).abs() < 1e-5 * scale {
            dphi(0.5 * (u + v))
        } else {
            (phi(u) - phi(v)) / (u - v)
        }
    }))
}

/// `Psi(u, v) = (e^{v-u} - (v-u) - 1) / (v-u)^2`, the convexity weight of the
/// spectral form of the metric functional; `Psi(u, u) = 1/2`.
pub fn psi(u: f64, v: f64) -> f64 {
    let d = v - u;
    if d.abs() < 1e-4 {
        0.5 + d / 6.0 + d * d / 24.0 + d * d * d / 120.0
    } else {
        (d.exp() - d - 1.0) / (d * d)
    }
}

/// `l * Psi(l u, l v)`; monotone nondecreasing in `l`, with limit
/// `1/(u - v)` for `u > v` and divergence for `u <= v`.
pub fn psi_scaled(l: f64, u: f64, v: f64) -> f64 {
    l * psi(l * u, l * v)
}

impl Bundle {
    /// `phi(s)` in the `K`-unitary eigenframe of `s`.
    pub fn phi_of_s<F>(&self, k: &MetricField, s: &EndoField, phi: F) -> EndoField
    where
        F: Fn(f64) -> f64 + Sync + Send,
    {
        let r = self.rank();
        let mats = par::map_sites(self.grid.site_count(), |idx| {
            let (vals, frame) = self
                .k_eigen_at(k, s, idx)
                .expect("metric must be positive for functional calculus");
            let diag = DMatrix::from_fn(r, r, |a, b| {
                if a == b {
                    C64::new(phi(vals[a]), 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            });
            let finv = frame.clone().try_inverse().expect("eigenframe invertible");
            &frame * diag * finv
        });
        let mut out = EndoField::zero(&self.grid, r, s.degree);
        for (idx, m) in mats.iter().enumerate() {
            out.set_site(idx, m);
        }
        out
    }

    /// The eigenframe-pair transform `Phi(s)(A)`; linear in `A`.
    pub fn phi_pair_of_s(
        &self,
        k: &MetricField,
        s: &EndoField,
        a: &EndoField,
        weight: &Bivariate,
    ) -> EndoField {
        let r = self.rank();
        let mats = par::map_sites(self.grid.site_count(), |idx| {
            let (vals, frame) = self
                .k_eigen_at(k, s, idx)
                .expect("metric must be positive for functional calculus");
            let finv = frame.clone().try_inverse().expect("eigenframe invertible");
            let tilde = &finv * a.at_site(idx) * &frame;
            let weighted = DMatrix::from_fn(r, r, |p, q| tilde[(p, q)] * weight.eval(vals[p], vals[q]));
            &frame * weighted * finv
        });
        let mut out = EndoField::zero(&self.grid, r, a.degree);
        for (idx, m) in mats.iter().enumerate() {
            out.set_site(idx, m);
        }
        out
    }

    /// General `L^p` norm of an endomorphism field in the metric `k`.
    pub fn lp_norm(&self, k: &MetricField, f: &EndoField, p: f64) -> f64 {
        assert!(p >= 1.0);
        let sq = self.pointwise_norm_sq(k, f);
        let vals: Vec<C64> = sq
            .values
            .iter()
            .map(|v| C64::new(v.re.max(0.0).powf(p / 2.0), 0.0))
            .collect();
        self.grid.integrate_values(&vals).re.max(0.0).powf(1.0 / p)
    }

    /// Check of the operator-norm bound: for a weight with Lipschitz constant
    /// `c` vanishing at the origin, `|Phi(s)(A)|_{L^p} <= 2 c |s|_{L^r} |A|_{L^q}`
    /// with `1/p = 1/q + 1/r`. Returns `(lhs, rhs)`.
    pub fn holder_norm_check(
        &self,
        k: &MetricField,
        s: &EndoField,
        a: &EndoField,
        weight: &Bivariate,
        c: f64,
        p: f64,
        q: f64,
    ) -> Result<(f64, f64), crate::bundle::BundleError> {
        if !(1.0 <= p && p < q) {
            return Err(crate::bundle::BundleError::Invalid(
                "holder_norm_check needs 1 <= p < q".into(),
            ));
        }
        let r_exp = 1.0 / (1.0 / p - 1.0 / q);
        let lhs = self.lp_norm(k, &self.phi_pair_of_s(k, s, a, weight), p);
        let rhs = 2.0 * c * self.lp_norm(k, s, r_exp) * self.lp_norm(k, a, q);
        Ok((lhs, rhs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::BackgroundA;
    use crate::grid::{DerivScheme, FormDegree, OrbifoldGrid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    const TWO_PI: f64 = std::f64::consts::TAU;

    fn bundle(twists: Vec<i64>) -> Bundle {
        let grid = Arc::new(
            OrbifoldGrid::build(24, 24, C64::new(0.1, 1.2), 1, DerivScheme::Spectral).unwrap(),
        );
        let iso = vec![0; twists.len()];
        Bundle::new(grid, twists, iso, BackgroundA::None).unwrap()
    }

    /// Matrix exponential by scaling and squaring with a plain Taylor core;
    /// independent of the eigenframe route.
    fn expm(m: &DMatrix<C64>) -> DMatrix<C64> {
        let n = m.nrows();
        let norm = m.iter().map(|v| v.norm()).fold(0.0, f64::max) * n as f64;
        let k = (norm.log2().ceil().max(0.0) as u32) + 4;
        let scaled = m.map(|v| v / 2f64.powi(k as i32));
        let mut term = DMatrix::<C64>::identity(n, n);
        let mut acc = DMatrix::<C64>::identity(n, n);
        for j in 1..20 {
            term = &term * &scaled / C64::new(j as f64, 0.0);
            acc += &term;
        }
        let mut out = acc;
        for _ in 0..k {
            out = &out * &out;
        }
        out
    }

    #[test]
    fn phi_identity_and_exp() {
        let b = bundle(vec![0, 1]);
        let k0 = b.flat_reference_metric();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = b.random_self_adjoint(&k0, &mut rng, 0.8, 2);
        let id = b.phi_of_s(&k0, &s, |u| u);
        let mut res = 0.0f64;
        for (x, y) in id.comps.iter().zip(s.comps.iter()) {
            for (p, q) in x.iter().zip(y.iter()) {
                res = res.max((p - q).norm());
            }
        }
        assert!(res < 1e-10, "identity residual {res}");
        let zero = EndoField::zero(&b.grid, 2, FormDegree::Zero);
        let e = b.phi_of_s(&k0, &zero, f64::exp);
        for idx in [0usize, 101, 399] {
            assert!((e.at_site(idx) - DMatrix::<C64>::identity(2, 2)).norm() < 1e-12);
        }
    }

    #[test]
    fn phi_exp_matches_scaling_and_squaring() {
        let b = bundle(vec![0, -1]);
        let k0 = b.flat_reference_metric();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = b.random_self_adjoint(&k0, &mut rng, 1.0, 2);
        let es = b.phi_of_s(&k0, &s, f64::exp);
        let mut res = 0.0f64;
        for idx in (0..b.grid.site_count()).step_by(13) {
            let want = expm(&s.at_site(idx));
            res = res.max((es.at_site(idx) - want).norm());
        }
        assert!(res < 1e-10, "exp residual {res}");
    }

    #[test]
    fn phi_of_scalar_multiple_of_identity() {
        // degenerate spectrum everywhere: phi acts as the scalar function
        let b = bundle(vec![0, 0]);
        let k0 = b.flat_reference_metric();
        let f = crate::grid::ScalarField::from_fn(&b.grid, FormDegree::Zero, |x, y| {
            C64::new(0.5 * (TWO_PI * (x + y)).cos(), 0.0)
        });
        let mut s = EndoField::zero(&b.grid, 2, FormDegree::Zero);
        for a in 0..2 {
            s.comps[a * 2 + a] = f.values.clone();
        }
        let got = b.phi_of_s(&k0, &s, |u| u * u + 1.0);
        for idx in (0..b.grid.site_count()).step_by(7) {
            let w = f.values[idx].re;
            let want = w * w + 1.0;
            assert!((got.comp(0, 0)[idx] - C64::new(want, 0.0)).norm() < 1e-11);
            assert!(got.comp(0, 1)[idx].norm() < 1e-11);
        }
    }

    #[test]
    fn phi_pair_trivial_and_offdiagonal() {
        let b = bundle(vec![0, 0]);
        let k0 = b.flat_reference_metric();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = b.random_self_adjoint(&k0, &mut rng, 0.7, 2);
        let a = b.random_endo(&mut rng, 0.5, 2);
        let one = Bivariate(Box::new(|_, _| 1.0));
        let same = b.phi_pair_of_s(&k0, &s, &a, &one);
        let mut res = 0.0f64;
        for (x, y) in same.comps.iter().zip(a.comps.iter()) {
            for (p, q) in x.iter().zip(y.iter()) {
                res = res.max((p - q).norm());
            }
        }
        assert!(res < 1e-10, "identity weight residual {res}");
        // constant diagonal s, single off-diagonal A entry: scaled by the
        // weight at the eigenvalue pair
        let mut sd = EndoField::zero(&b.grid, 2, FormDegree::Zero);
        for v in sd.comp_mut(0, 0).iter_mut() {
            *v = C64::new(1.5, 0.0);
        }
        for v in sd.comp_mut(1, 1).iter_mut() {
            *v = C64::new(-0.5, 0.0);
        }
        let mut av = EndoField::zero(&b.grid, 2, FormDegree::Zero);
        for v in av.comp_mut(0, 1).iter_mut() {
            *v = C64::new(1.0, 0.0);
        }
        let w = Bivariate(Box::new(|u, v| u * 2.0 + v));
        let got = b.phi_pair_of_s(&k0, &sd, &av, &w);
        // eigenvalues sort ascending; entry (0,1) couples 1.5 and -0.5
        let want = 1.5 * 2.0 + (-0.5);
        for idx in (0..b.grid.site_count()).step_by(37) {
            assert!((got.comp(0, 1)[idx] - C64::new(want, 0.0)).norm() < 1e-10);
            assert!(got.comp(1, 0)[idx].norm() < 1e-10);
        }
    }

    #[test]
    fn diff_quotient_rules() {
        let dq = diff_quotient(|u| u, |_| 1.0);
        assert!((dq.eval(0.3, -0.8) - 1.0).abs() < 1e-12);
        let dq2 = diff_quotient(|u| u * u, |u| 2.0 * u);
        assert!((dq2.eval(1.2, 0.7) - 1.9).abs() < 1e-12);
        assert!((dq2.eval(0.5, 0.5) - 1.0).abs() < 1e-10);
        let dqc = diff_quotient(|_| 3.0, |_| 0.0);
        assert!(dqc.eval(2.0, -1.0).abs() < 1e-12);
        // diagonal equals the derivative
        let dqe = diff_quotient(f64::exp, f64::exp);
        for u in [-2.0, 0.0, 1.3] {
            assert!((dqe.eval(u, u) - f64::exp(u)).abs() < 1e-10);
        }
    }

    #[test]
    fn psi_values_and_monotonicity() {
        assert!((psi(0.7, 0.7) - 0.5).abs() < 1e-14);
        assert!((psi(0.0, 1.0) - (std::f64::consts::E - 2.0)).abs() < 1e-12);
        // continuity across the series branch
        let a = psi(0.0, 1.0001e-4);
        let b = psi(0.0, 0.9999e-4);
        assert!((a - b).abs() < 1e-7);
        // psi_scaled monotone in l and approaching 1/(u-v) for u > v
        let (u, v) = (1.0, 0.0);
        let mut prev = 0.0;
        for l in [1.0, 10.0, 100.0, 1000.0] {
            let val = psi_scaled(l, u, v);
            assert!(val >= prev - 1e-12, "not monotone at l = {l}");
            prev = val;
        }
        assert!((prev - 1.0).abs() < 1e-2, "limit {prev}");
        // divergence for u <= v
        assert!(psi_scaled(100.0, 0.0, 1.0) > 1e20);
    }

    #[test]
    fn chain_rule_for_exp_and_square() {
        let b = bundle(vec![0, 1]);
        let k0 = b.flat_reference_metric();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // separated spectrum: small smooth field plus a constant diag(1, -1)
        let mut s = b.random_self_adjoint(&k0, &mut rng, 0.25, 1);
        for v in s.comp_mut(0, 0).iter_mut() {
            *v += C64::new(1.0, 0.0);
        }
        for v in s.comp_mut(1, 1).iter_mut() {
            *v += C64::new(-1.0, 0.0);
        }
        let ds = b.dzbar_endo(&s);
        for (phi, dphi) in [
            (f64::exp as fn(f64) -> f64, f64::exp as fn(f64) -> f64),
            (|u: f64| u * u, |u: f64| 2.0 * u),
        ] {
            let lhs = b.dzbar_endo(&b.phi_of_s(&k0, &s, phi));
            let dq = diff_quotient(phi, dphi);
            let rhs = b.phi_pair_of_s(&k0, &s, &ds, &dq);
            let mut diff = lhs.clone();
            diff.add_scaled(&rhs, C64::new(-1.0, 0.0));
            let err = b.l2_norm(&k0, &diff);
            let scale = b.l2_norm(&k0, &lhs).max(1.0);
            assert!(err / scale < 1e-7, "chain rule residual {}", err / scale);
        }
    }

    #[test]
    fn trace_rule_diagonal_dependence() {
        // the trace of Phi(s)(A) depends only on the diagonal values of the
        // weight: two weights agreeing on the diagonal give equal traces
        let b = bundle(vec![0, 0]);
        let k0 = b.flat_reference_metric();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = b.random_self_adjoint(&k0, &mut rng, 0.9, 2);
        let a = b.random_endo(&mut rng, 0.6, 2);
        let w1 = Bivariate(Box::new(|u, v| (u + v).cos()));
        let w2 = Bivariate(Box::new(|u, v| (u + v).cos() + (u - v) * 17.0));
        let t1 = b.phi_pair_of_s(&k0, &s, &a, &w1).trace();
        let t2 = b.phi_pair_of_s(&k0, &s, &a, &w2).trace();
        let mut res = 0.0f64;
        for (p, q) in t1.values.iter().zip(t2.values.iter()) {
            res = res.max((p - q).norm());
        }
        assert!(res < 1e-9, "trace residual {res}");
    }

    #[test]
    fn holder_bound_holds_on_samples() {
        let b = bundle(vec![0, 1]);
        let k0 = b.flat_reference_metric();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        // weight: Phi(u,v) = sin(u) - sin(v) has Lipschitz constant 1 and
        // vanishes at the origin
        let w = Bivariate(Box::new(|u, v| u.sin() - v.sin()));
        for _ in 0..25 {
            let s = b.random_self_adjoint(&k0, &mut rng, 1.5, 2);
            let a = b.random_endo(&mut rng, 1.0, 2);
            let (lhs, rhs) = b.holder_norm_check(&k0, &s, &a, &w, 1.0, 1.0, 2.0).unwrap();
            assert!(lhs <= rhs + 1e-9, "violation: {lhs} > {rhs}");
        }
        let zero = EndoField::zero(&b.grid, 2, FormDegree::Zero);
        let s = b.random_self_adjoint(&k0, &mut rng, 1.0, 2);
        let (lhs, _) = b.holder_norm_check(&k0, &s, &zero, &w, 1.0, 1.0, 2.0).unwrap();
        assert!(lhs.abs() < 1e-12);
        assert!(b.holder_norm_check(&k0, &s, &zero, &w, 1.0, 2.0, 2.0).is_err());
    }
}
