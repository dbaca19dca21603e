//! Invariant suite shared by the `verify` subcommand and the test harness:
//! each check evaluates one identity of the model and reports a residual
//! against a profile-dependent tolerance.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::Arc;

use crate::bundle::{BackgroundA, Bundle, EndoField};
use crate::calc::{diff_quotient, psi, psi_scaled};
use crate::flow::FlowConfig;
use crate::grid::{DerivScheme, FormDegree, OrbifoldGrid};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub scheme: DerivScheme,
    pub n: usize,
    pub seed: u64,
    pub results: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<42} {:>14} {:>10} {:>6}\n",
            "check", "residual", "tol", "ok"
        );
        for r in &self.results {
            out.push_str(&format!(
                "{:<42} {:>14.3e} {:>10.1e} {:>6}\n",
                r.name,
                r.residual,
                r.tol,
                if r.pass { "pass" } else { "FAIL" }
            ));
        }
        out
    }
}

fn push(results: &mut Vec<CheckResult>, name: &str, residual: f64, tol: f64) {
    results.push(CheckResult {
        name: name.to_string(),
        residual,
        tol,
        pass: residual.is_finite() && residual <= tol,
    });
}

fn torus(n: usize, scheme: DerivScheme) -> Arc<OrbifoldGrid> {
    Arc::new(OrbifoldGrid::build(n, n, C64::new(0.0, 1.0), 1, scheme).unwrap())
}

/// Run the full invariant suite at grid size `n` with the given derivative
/// profile. `tol_scale` multiplies every tolerance (0 forces failures and is
/// used to check that the harness can fail).
pub fn run_suite(n: usize, scheme: DerivScheme, seed: u64, tol_scale: f64) -> VerifyReport {
    let spectral = scheme == DerivScheme::Spectral;
    // derivative-dependent identities degrade to the scheme's truncation
    // error on finite-difference profiles
    let deriv_tol: f64 = if spectral { 1e-7 } else { 5e-2 };
    let mut results = Vec::new();
    let t = |base: f64| base * tol_scale;

    // Chern-Weil degree quantization over a range of twists
    {
        let grid = torus(n, scheme);
        let mut worst = 0.0f64;
        for d in [-2i64, -1, 0, 1, 2] {
            let b = Bundle::new(grid.clone(), vec![d], vec![0], BackgroundA::None).unwrap();
            let h = b.flat_reference_metric();
            worst = worst.max((b.degree(&h) - d as f64).abs());
        }
        push(&mut results, "degree quantization (twists -2..2)", worst, t(1e-6));
    }

    // reference metric is Hermitian-Einstein
    {
        let grid = torus(n, scheme);
        let b = Bundle::new(grid, vec![1], vec![0], BackgroundA::None).unwrap();
        let h = b.flat_reference_metric();
        let (sup, _) = b.deviation_norms(&h);
        push(&mut results, "reference metric Einstein deviation", sup, t(1e-8));
    }

    let grid = torus(n, scheme);
    let bundle = Bundle::new(grid.clone(), vec![1, 0], vec![0, 0], BackgroundA::None).unwrap();
    let k = bundle.flat_reference_metric();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // two evaluators of the metric functional agree
    {
        let mut worst = 0.0f64;
        for _ in 0..3 {
            let s0 = bundle.random_self_adjoint(&k, &mut rng, 0.3, 2);
            let mut s = s0.clone();
            let shift = bundle.grid.integrate(&s.trace())
                / (bundle.rank() as f64 * bundle.grid.volume);
            for a in 0..bundle.rank() {
                for v in s.comp_mut(a, a).iter_mut() {
                    *v -= shift;
                }
            }
            let path = bundle.mk_path_of_s(&k, &s, 16).unwrap().value;
            let spec = bundle.mk_spectral(&k, &s).unwrap().value;
            worst = worst.max((path - spec).abs() / path.abs().max(1.0));
        }
        push(&mut results, "functional cross-method agreement", worst, t(deriv_tol.max(1e-7)));
    }

    // variation identities against finite differences
    {
        let s = bundle.random_self_adjoint(&k, &mut rng, 0.2, 2);
        let tt = 0.3;
        let (first, second) = bundle.variations(&k, &s, tt).unwrap();
        let eps = 1e-4;
        let m = |x: f64| bundle.mk_path_of_s(&k, &s.scaled(C64::new(x, 0.0)), 16).unwrap().value;
        let fd_first = (m(tt + eps) - m(tt - eps)) / (2.0 * eps);
        let fd_second = (m(tt + eps) - 2.0 * m(tt) + m(tt - eps)) / (eps * eps);
        let r1 = (fd_first - first).abs() / first.abs().max(1.0);
        let r2 = (fd_second - second).abs() / second.abs().max(1.0);
        push(&mut results, "first variation vs finite difference", r1, t(1e-6));
        push(&mut results, "second variation vs finite difference", r2, t(1e-6));
    }

    // chain rule for the functional calculus
    {
        let mut worst = 0.0f64;
        for _ in 0..3 {
            let mut s = bundle.random_self_adjoint(&k, &mut rng, 0.2, 1);
            for v in s.comp_mut(0, 0).iter_mut() {
                *v += C64::new(0.7, 0.0);
            }
            for v in s.comp_mut(1, 1).iter_mut() {
                *v -= C64::new(0.7, 0.0);
            }
            let es = bundle.phi_of_s(&k, &s, f64::exp);
            let lhs = bundle.dbar_a(&es);
            let dq = diff_quotient(f64::exp, f64::exp);
            let rhs = bundle.phi_pair_of_s(&k, &s, &bundle.dbar_a(&s), &dq);
            let mut diff = lhs;
            diff.add_scaled(&rhs, C64::new(-1.0, 0.0));
            worst = worst.max(bundle.l2_norm(&k, &diff));
        }
        push(&mut results, "functional-calculus chain rule (exp)", worst, t(deriv_tol));
    }

    // psi weight basic values and scaled limit
    {
        let r = (psi(0.4, 0.4) - 0.5)
            .abs()
            .max((psi(0.0, 1.0) - (1f64.exp() - 2.0)).abs());
        push(&mut results, "psi diagonal and closed-form values", r, t(1e-12));
        let lim = (psi_scaled(1000.0, 1.0, 0.0) - 1.0).abs();
        push(&mut results, "psi_scaled large-scale limit", lim, t(2e-3));
        let mut mono = 0.0f64;
        let mut prev = f64::NEG_INFINITY;
        for l in [1.0, 10.0, 100.0, 1000.0] {
            let v = psi_scaled(l, 1.0, 0.0);
            mono = mono.max(prev - v);
            prev = v;
        }
        push(&mut results, "psi_scaled monotone in scale", mono.max(0.0), t(1e-15));
    }

    // derivative-control estimate margin on random fields
    {
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let s0 = bundle.random_self_adjoint(&k, &mut rng, 0.3, 2);
            let mut s = s0;
            let shift = bundle.grid.integrate(&s.trace())
                / (bundle.rank() as f64 * bundle.grid.volume);
            for a in 0..bundle.rank() {
                for v in s.comp_mut(a, a).iter_mut() {
                    *v -= shift;
                }
            }
            let (_, _, margin) = bundle.siu_estimate_check(&k, &s).unwrap();
            worst = worst.max(-margin);
        }
        push(&mut results, "derivative-control estimate margin", worst, t(1e-9));
    }

    // short flow: monotonicity, conservation, heat-kernel comparison
    {
        let s0 = bundle.random_self_adjoint(&k, &mut rng, 0.1, 2);
        let h0 = bundle.metric_exp(&k, &s0).unwrap();
        let dt = (2.0 / bundle.flow_stiffness()).min(1e-3);
        let cfg = FlowConfig {
            dt,
            t_max: 40.0 * dt,
            monitor_every: 5,
            ..FlowConfig::default()
        };
        let trace = bundle.run_flow(&h0, &cfg).unwrap();
        let mut mono = 0.0f64;
        let mut cons = 0.0f64;
        for w in trace.rows.windows(2) {
            mono = mono.max(w[1].m_k - w[0].m_k).max(w[1].sup_dev - w[0].sup_dev);
        }
        for r in &trace.rows {
            cons = cons.max(r.trace_int.abs());
        }
        push(&mut results, "flow monotonicity per monitor row", mono.max(0.0), t(1e-9));
        push(
            &mut results,
            "flow trace conservation",
            cons,
            t(1e-9 * bundle.grid.volume),
        );
        let worst = bundle.heat_comparison_check(&trace.h_history).unwrap();
        push(&mut results, "heat-kernel comparison along flow", worst.max(0.0), t(1e-9));
    }

    // commuting-curvature relation: conformal line-bundle deformation
    {
        let grid2 = torus(n, scheme);
        let b1 = Bundle::new(grid2, vec![0], vec![0], BackgroundA::None).unwrap();
        let kk = b1.flat_reference_metric();
        let mut f = EndoField::zero(&b1.grid, 1, FormDegree::Zero);
        for l in 0..b1.grid.n2 {
            for j in 0..b1.grid.n1 {
                let (x, y) = (b1.grid.x(j), b1.grid.y(l));
                f.comp_mut(0, 0)[j + b1.grid.n1 * l] = C64::new(
                    0.3 * (std::f64::consts::TAU * (x + y)).cos(),
                    0.0,
                );
            }
        }
        let h = b1.metric_exp(&kk, &f).unwrap();
        let dev = b1.einstein_deviation(&h);
        let mut worst = 0.0f64;
        let scalar = crate::chern::conformal_deviation(
            &b1,
            &crate::grid::ScalarField {
                values: f.comp(0, 0).to_vec(),
                degree: FormDegree::Zero,
                n1: b1.grid.n1,
                n2: b1.grid.n2,
            },
        );
        let scale = scalar.max_abs().max(1.0);
        for (a, b) in dev.comp(0, 0).iter().zip(scalar.values.iter()) {
            worst = worst.max((a - b).norm());
        }
        push(
            &mut results,
            "conformal curvature relation",
            worst / scale,
            t(deriv_tol.max(1e-8)),
        );
    }

    // finite-difference profiles: observed convergence order of the first
    // derivative under refinement
    if !spectral {
        let expected = match scheme {
            DerivScheme::Fd2 => 1.9,
            DerivScheme::Fd4 => 3.8,
            DerivScheme::Spectral => unreachable!(),
        };
        let res_at = |m: usize| {
            let g = torus(m, scheme);
            let f = crate::grid::ScalarField::from_fn(&g, FormDegree::Zero, |x, y| {
                C64::new((std::f64::consts::TAU * x).sin() * (std::f64::consts::TAU * y).cos(), 0.0)
            });
            let d = g.apply_dbar(&f).unwrap();
            let gs = torus(m, DerivScheme::Spectral);
            let de = gs.apply_dbar(&f).unwrap();
            d.values
                .iter()
                .zip(de.values.iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max)
        };
        let r1 = res_at(n);
        let r2 = res_at(2 * n);
        let order = (r1 / r2).log2();
        push(
            &mut results,
            "finite-difference convergence order",
            (expected - order).max(0.0),
            t(0.0) + f64::EPSILON,
        );
    }

    VerifyReport {
        scheme,
        n,
        seed,
        results,
    }
}
