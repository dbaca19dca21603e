//! Time integration of the metric heat flow `H' = -(i/2) H (Lambda F - lambda I)`
//! with the monotonicity, conservation, and C0-control monitors.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::bundle::{Bundle, BundleError, EndoField, MetricField};
use crate::grid::{FormDegree, ScalarField};
use crate::par;

/// Fixed column order of the trace CSV.
pub const CSV_HEADER: &str = "t,M_K,sup_dev,l2_dev,trace_int,sigma_prev,c0_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowScheme {
    ExplicitEuler,
    Rk4,
    SemiImplicit,
}

impl FlowScheme {
    /// Real-axis stability bound of the explicit schemes (in units of
    /// `dt * stiffness`); the integrating-factor scheme is unconditional.
    fn stability_bound(self) -> f64 {
        match self {
            FlowScheme::ExplicitEuler => 2.0,
            FlowScheme::Rk4 => 2.78,
            FlowScheme::SemiImplicit => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub dt: f64,
    pub t_max: f64,
    pub scheme: FlowScheme,
    pub monitor_every: usize,
    pub stop_tol: f64,
    pub renormalize: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt: 1e-3,
            t_max: 1.0,
            scheme: FlowScheme::Rk4,
            monitor_every: 10,
            stop_tol: 1e-6,
            renormalize: false,
        }
    }
}

impl FlowConfig {
    fn validate(&self) -> Result<(), BundleError> {
        if !(self.dt > 0.0) {
            return Err(BundleError::Invalid("flow dt must be positive".into()));
        }
        if !(self.t_max >= 0.0) {
            return Err(BundleError::Invalid("flow t_max must be nonnegative".into()));
        }
        if self.monitor_every == 0 {
            return Err(BundleError::Invalid("monitor_every must be >= 1".into()));
        }
        if !(self.stop_tol > 0.0) {
            return Err(BundleError::Invalid("stop_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStatus {
    Converged,
    TMaxReached,
    Diverged,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MonitorRow {
    pub t: f64,
    pub m_k: f64,
    pub sup_dev: f64,
    pub l2_dev: f64,
    pub trace_int: f64,
    pub sigma_prev: f64,
    pub c0_s: f64,
}

#[derive(Debug)]
pub struct FlowTrace {
    pub rows: Vec<MonitorRow>,
    pub status: FlowStatus,
    /// `(t, s_t)` at monitor rows, `H_t = K e^{s_t}` against the initial metric.
    pub s_history: Vec<(f64, EndoField)>,
    /// `(t, H_t)` at monitor rows, for heat-kernel comparisons and post-mortems.
    pub h_history: Vec<(f64, MetricField)>,
    pub final_metric: MetricField,
    /// Largest per-step Hermiticity projection applied.
    pub hermiticity_drift: f64,
    /// Offending site when positivity was lost.
    pub diverged_site: Option<usize>,
}

impl FlowTrace {
    pub fn csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                r.t, r.m_k, r.sup_dev, r.l2_dev, r.trace_int, r.sigma_prev, r.c0_s
            ));
        }
        out
    }
}

impl Bundle {
    /// Right-hand side of the flow as a metric velocity: with the Einstein
    /// constant purely imaginary, `-(i/2) H (Lambda F - lambda I)` equals
    /// `-(1/2) H dev` with the Hermitian deviation `dev = i Lambda F - i lambda`.
    fn flow_rhs(&self, h: &MetricField) -> EndoField {
        let dev = self.einstein_deviation(h);
        h.h.mul(&dev, FormDegree::Zero).scaled(C64::new(-0.5, 0.0))
    }

    /// Stiffness estimate of the linearized flow (`s' = -(1/4) Delta s`).
    pub fn flow_stiffness(&self) -> f64 {
        self.grid.lap_symbol_max() / 4.0
    }

    /// Sup-norm of the anti-Hermitian part removed per step (against the
    /// reference dagger); the metric is replaced by its Hermitian projection.
    fn hermitize(&self, h: &mut MetricField) -> f64 {
        let adj = self.adjoint_k0(&h.h);
        let mut anti = h.h.clone();
        anti.add_scaled(&adj, C64::new(-1.0, 0.0));
        let drift = 0.5 * anti.sup_abs();
        h.h.add_scaled(&adj, C64::new(1.0, 0.0));
        h.h = h.h.scaled(C64::new(0.5, 0.0));
        drift
    }

    /// One step of the chosen scheme. `dt = 0` is the identity; negative `dt`
    /// is rejected. Returns the new metric and the Hermiticity drift removed.
    pub fn heat_step_with_drift(
        &self,
        h: &MetricField,
        dt: f64,
        scheme: FlowScheme,
    ) -> Result<(MetricField, f64), BundleError> {
        if dt < 0.0 {
            return Err(BundleError::Invalid("heat step dt must be >= 0".into()));
        }
        if dt == 0.0 {
            return Ok((MetricField { h: h.h.clone() }, 0.0));
        }
        let mut out = match scheme {
            FlowScheme::ExplicitEuler => {
                let k1 = self.flow_rhs(h);
                let mut hn = h.h.clone();
                hn.add_scaled(&k1, C64::new(dt, 0.0));
                MetricField { h: hn }
            }
            FlowScheme::Rk4 => {
                let k1 = self.flow_rhs(h);
                let mut h2 = h.h.clone();
                h2.add_scaled(&k1, C64::new(0.5 * dt, 0.0));
                let k2 = self.flow_rhs(&MetricField { h: h2 });
                let mut h3 = h.h.clone();
                h3.add_scaled(&k2, C64::new(0.5 * dt, 0.0));
                let k3 = self.flow_rhs(&MetricField { h: h3 });
                let mut h4 = h.h.clone();
                h4.add_scaled(&k3, C64::new(dt, 0.0));
                let k4 = self.flow_rhs(&MetricField { h: h4 });
                let mut hn = h.h.clone();
                hn.add_scaled(&k1, C64::new(dt / 6.0, 0.0));
                hn.add_scaled(&k2, C64::new(dt / 3.0, 0.0));
                hn.add_scaled(&k3, C64::new(dt / 3.0, 0.0));
                hn.add_scaled(&k4, C64::new(dt / 6.0, 0.0));
                MetricField { h: hn }
            }
            FlowScheme::SemiImplicit => self.semi_implicit_step(h, dt)?,
        };
        let drift = self.hermitize(&mut out);
        Ok((out, drift))
    }

    /// One step, metric only.
    pub fn heat_step(
        &self,
        h: &MetricField,
        dt: f64,
        scheme: FlowScheme,
    ) -> Result<MetricField, BundleError> {
        self.heat_step_with_drift(h, dt, scheme).map(|(m, _)| m)
    }

    /// Integrating-factor step in the exponential gauge against the flat
    /// reference: `s+ = e^{-dt Delta / 4} (s + dt (r(s) + Delta s / 4))` with
    /// `r(s) = -(1/2) dev`. Exact for line bundles (where the flow is the
    /// linear heat equation); for higher rank the gauge transport of `s'` is
    /// approximated by the commuting formula, so the scheme is limited to
    /// bundles whose entries are all untwisted (equal splitting type), where
    /// the scalar Fourier semigroup applies componentwise.
    fn semi_implicit_step(
        &self,
        h: &MetricField,
        dt: f64,
    ) -> Result<MetricField, BundleError> {
        let r = self.rank();
        for a in 0..r {
            for b in 0..r {
                if self.twist_of(a, b) != 0 {
                    return Err(BundleError::Invalid(
                        "semi-implicit scheme requires equal twists".into(),
                    ));
                }
            }
        }
        let kref = self.flat_reference_metric();
        let s = self.relate_metrics(&kref, h)?;
        let dev = self.einstein_deviation(h);
        // nonlinear remainder: full velocity minus the stiff linear part
        let mut w = s.clone();
        for a in 0..r {
            for b in 0..r {
                let comp = ScalarField {
                    values: s.comp(a, b).to_vec(),
                    degree: FormDegree::Zero,
                    n1: s.n1,
                    n2: s.n2,
                };
                let lap = self.grid.laplacian(&comp);
                let dst = w.comp_mut(a, b);
                for (i, v) in dst.iter_mut().enumerate() {
                    *v += dt * (-0.5 * dev.comp(a, b)[i] + 0.25 * lap.values[i]);
                }
            }
        }
        let mut out = w.clone();
        for a in 0..r {
            for b in 0..r {
                let comp = ScalarField {
                    values: w.comp(a, b).to_vec(),
                    degree: FormDegree::Zero,
                    n1: w.n1,
                    n2: w.n2,
                };
                let filtered = self
                    .grid
                    .heat_filter(&comp, dt / 4.0)
                    .map_err(|e| BundleError::Invalid(e.to_string()))?;
                *out.comp_mut(a, b) = filtered.values;
            }
        }
        self.metric_exp(&kref, &out)
    }

    /// Largest per-site condition number of the Gram matrix of `h`;
    /// infinity when positivity is lost.
    pub fn metric_condition(&self, h: &MetricField) -> f64 {
        let vals = par::map_sites(self.grid.site_count(), |idx| {
            let g = self.gram_at(h, idx);
            let g = (g.clone() + g.adjoint()) * C64::new(0.5, 0.0);
            let eig = g.symmetric_eigen();
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for &ev in eig.eigenvalues.iter() {
                lo = lo.min(ev);
                hi = hi.max(ev);
            }
            if lo <= 0.0 {
                f64::INFINITY
            } else {
                hi / lo
            }
        });
        vals.into_iter().fold(0.0, f64::max)
    }

    /// Pointwise `sigma(K, H) = tr(K^{-1}H) + tr(H^{-1}K) - 2r` as a field.
    pub fn sigma_field(
        &self,
        k: &MetricField,
        h: &MetricField,
    ) -> Result<ScalarField, BundleError> {
        let r = self.rank();
        let vals: Vec<Result<C64, BundleError>> = par::map_sites(self.grid.site_count(), |idx| {
            let m = k
                .h
                .at_site(idx)
                .try_inverse()
                .ok_or(BundleError::NotPositive(idx))?
                * h.h.at_site(idx);
            let minv = m
                .clone()
                .try_inverse()
                .ok_or(BundleError::NotPositive(idx))?;
            Ok(C64::new(
                m.trace().re + minv.trace().re - 2.0 * r as f64,
                0.0,
            ))
        });
        let mut values = Vec::with_capacity(vals.len());
        for v in vals {
            values.push(v?);
        }
        Ok(ScalarField {
            values,
            degree: FormDegree::Zero,
            n1: self.grid.n1,
            n2: self.grid.n2,
        })
    }

    /// Equivariance defect under the orbifold action; zero (to rounding) for
    /// fields of invariant scenarios.
    pub fn equivariance_residual(&self, f: &EndoField) -> f64 {
        let mut diff = f.clone();
        diff.add_scaled(&self.group_project_endo(f), C64::new(-1.0, 0.0));
        diff.sup_abs()
    }

    /// Integrate the flow from `h0` until convergence, `t_max`, or divergence.
    /// The functional base `K` is the initial metric, so `trace_int` starts at
    /// zero exactly and conservation is checked against zero.
    pub fn run_flow(&self, h0: &MetricField, cfg: &FlowConfig) -> Result<FlowTrace, BundleError> {
        cfg.validate()?;
        let stiffness = self.flow_stiffness();
        if cfg.dt * stiffness > cfg.scheme.stability_bound() {
            return Err(BundleError::Invalid(format!(
                "dt {} exceeds the stability bound {} / stiffness {:.3e}",
                cfg.dt,
                cfg.scheme.stability_bound(),
                stiffness
            )));
        }
        let k = MetricField { h: h0.h.clone() };
        let mut h = MetricField { h: h0.h.clone() };
        let n_steps = (cfg.t_max / cfg.dt).round().max(0.0) as usize;

        let mut rows: Vec<MonitorRow> = Vec::new();
        let mut s_history: Vec<(f64, EndoField)> = Vec::new();
        let mut h_history: Vec<(f64, MetricField)> = Vec::new();
        let mut prev_h: Option<MetricField> = None;
        let mut status = FlowStatus::TMaxReached;
        let mut diverged_site = None;
        let mut drift_max = 0.0f64;
        let mut consecutive = 0usize;
        let mut step = 0usize;

        loop {
            let t = step as f64 * cfg.dt;
            let at_monitor = step % cfg.monitor_every == 0 || step == n_steps;
            if at_monitor {
                let mut s = match self.relate_metrics(&k, &h) {
                    Ok(s) => s,
                    Err(BundleError::NotPositive(site)) => {
                        status = FlowStatus::Diverged;
                        diverged_site = Some(site);
                        if let Some(p) = prev_h.take() {
                            h = p;
                        }
                        break;
                    }
                    Err(e) => return Err(e),
                };
                if self.metric_condition(&h).is_infinite()
                    || self.metric_condition(&h) > 1e12
                {
                    status = FlowStatus::Diverged;
                    if let Some(p) = prev_h.take() {
                        h = p;
                    }
                    break;
                }
                let mut trace_int = self.grid.integrate(&s.trace()).re;
                if cfg.renormalize && step > 0 {
                    let shift =
                        trace_int / (self.rank() as f64 * self.grid.volume);
                    for a in 0..self.rank() {
                        for v in s.comp_mut(a, a).iter_mut() {
                            *v -= shift;
                        }
                    }
                    h = self.metric_exp(&k, &s)?;
                    trace_int = self.grid.integrate(&s.trace()).re;
                }
                let m_k = match self.mk_spectral(&k, &s) {
                    Ok(ev) => ev.value,
                    Err(_) => self.mk_path_of_s(&k, &s, 16)?.value,
                };
                let (sup_dev, l2_dev) = self.deviation_norms(&h);
                let sigma_prev = match &prev_h {
                    Some(p) => self.sigma_distance(p, &h)?,
                    None => 0.0,
                };
                let c0_s = self.sup_norm(&k, &s);
                rows.push(MonitorRow {
                    t,
                    m_k,
                    sup_dev,
                    l2_dev,
                    trace_int,
                    sigma_prev,
                    c0_s,
                });
                s_history.push((t, s));
                h_history.push((t, MetricField { h: h.h.clone() }));
                prev_h = Some(MetricField { h: h.h.clone() });
                if l2_dev < cfg.stop_tol {
                    consecutive += 1;
                    if consecutive >= 10 {
                        status = FlowStatus::Converged;
                        break;
                    }
                } else {
                    consecutive = 0;
                }
            }
            if step >= n_steps {
                break;
            }
            match self.heat_step_with_drift(&h, cfg.dt, cfg.scheme) {
                Ok((hn, drift)) => {
                    drift_max = drift_max.max(drift);
                    h = hn;
                }
                Err(BundleError::NotPositive(site)) => {
                    status = FlowStatus::Diverged;
                    diverged_site = Some(site);
                    break;
                }
                Err(e) => return Err(e),
            }
            step += 1;
        }

        Ok(FlowTrace {
            rows,
            status,
            s_history,
            h_history,
            final_metric: h,
            hermiticity_drift: drift_max,
            diverged_site,
        })
    }

    /// Heat-kernel comparison along a recorded flow: for sampled monitor
    /// indices, `sup sigma(H_{t+t'}, H_{t+tau+t'}) <= c(t') int sigma(H_t,
    /// H_{t+tau})` with `c` the scalar kernel supremum at the flow's quarter
    /// time scaling. Returns the worst signed violation (negative = all pass).
    pub fn heat_comparison_check(
        &self,
        history: &[(f64, MetricField)],
    ) -> Result<f64, BundleError> {
        let n = history.len();
        let mut worst = f64::NEG_INFINITY;
        if n < 3 {
            return Ok(0.0);
        }
        for i in 0..n - 2 {
            for d_tau in 1..=(n - 1 - i).min(3) {
                for d_tp in 1..=(n - 1 - i - d_tau).min(3) {
                    let (t0, ref h0) = history[i];
                    let (_, ref h1) = history[i + d_tau];
                    let (t2, ref h2) = history[i + d_tp];
                    let (_, ref h3) = history[i + d_tau + d_tp];
                    let tp = t2 - t0;
                    if tp <= 0.0 {
                        continue;
                    }
                    let sig0 = self.sigma_field(h0, h1)?;
                    let sig1 = self.sigma_field(h2, h3)?;
                    let c = self
                        .grid
                        .heat_kernel_sup(tp / 4.0)
                        .map_err(|e| BundleError::Invalid(e.to_string()))?;
                    let lhs = sig1.values.iter().map(|v| v.re).fold(0.0, f64::max);
                    let rhs = c * self.grid.integrate(&sig0).re;
                    worst = worst.max(lhs - rhs);
                }
            }
        }
        if worst == f64::NEG_INFINITY {
            worst = 0.0;
        }
        Ok(worst)
    }
}

/// Fit the affine bound `sup|s_t| <= C1 + C2 || |s_t|^2 ||_{L2}^{1/2}` over a
/// flow history: least-squares slope clamped to be nonnegative, intercept
/// lifted to the upper envelope. Returns `(C1, C2, max_violation)`.
pub fn c0_control_fit(
    bundle: &Bundle,
    k: &MetricField,
    s_history: &[(f64, EndoField)],
) -> (f64, f64, f64) {
    let mut xs = Vec::with_capacity(s_history.len());
    let mut ys = Vec::with_capacity(s_history.len());
    for (_, s) in s_history {
        let nsq = bundle.pointwise_norm_sq(k, s);
        let sq: Vec<C64> = nsq
            .values
            .iter()
            .map(|v| C64::new(v.re * v.re, 0.0))
            .collect();
        let l2 = bundle.grid.integrate_values(&sq).re.max(0.0).sqrt();
        xs.push(l2.sqrt());
        ys.push(bundle.sup_norm(k, s));
    }
    fit_affine_envelope(&xs, &ys)
}

/// Least-squares slope (clamped nonnegative), envelope intercept, and the
/// resulting worst violation `max(y - C1 - C2 x)` (zero by construction when
/// the data admits the bound).
pub fn fit_affine_envelope(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0, 0.0);
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    let c2 = if den > 1e-30 { (num / den).max(0.0) } else { 0.0 };
    let c1 = xs
        .iter()
        .zip(ys.iter())
        .map(|(&x, &y)| y - c2 * x)
        .fold(f64::NEG_INFINITY, f64::max);
    let viol = xs
        .iter()
        .zip(ys.iter())
        .map(|(&x, &y)| y - c1 - c2 * x)
        .fold(f64::NEG_INFINITY, f64::max);
    (c1, c2, viol)
}
