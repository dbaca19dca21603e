//! Destabilization machinery: normalized blow-up directions, eigenvalue
//! flags with smoothed-step projections, weak-holomorphy residuals, and the
//! telescoping slope probe run on recorded flow traces.

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::bundle::{Bundle, BundleError, EndoField, MetricField};
use crate::calc::Bivariate;
use crate::flow::{FlowStatus, FlowTrace};
use crate::grid::FormDegree;

/// Default blow-up threshold on the normalization scale.
pub const ELL_MIN_DEFAULT: f64 = 10.0;

/// Smoothed descending step separating eigenvalues below `center` from those
/// above: logistic with scale `gap / 16`, so the transition band covers a
/// quarter of the gap and the step is within `~3e-4` of 0/1 at the
/// eigenvalues themselves.
#[derive(Clone, Copy, Debug)]
pub struct SmoothStep {
    pub center: f64,
    pub scale: f64,
}

impl SmoothStep {
    pub fn between(lo: f64, hi: f64) -> Self {
        SmoothStep {
            center: 0.5 * (lo + hi),
            scale: (hi - lo).max(1e-300) / 16.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        1.0 / (1.0 + ((x - self.center) / self.scale).exp())
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let p = self.eval(x);
        -p * (1.0 - p) / self.scale
    }

    /// Difference quotient of the step, with the derivative on the diagonal.
    pub fn diff_quotient(&self) -> Bivariate {
        let step = *self;
        Bivariate(Box::new(move |u, v| {
            if (u - v).abs() < 1e-9 * (1.0 + u.abs().max(v.abs())) {
                step.deriv(0.5 * (u + v))
            } else {
                (step.eval(u) - step.eval(v)) / (u - v)
            }
        }))
    }
}

/// Eigenvalue flag of a normalized blow-up direction.
#[derive(Debug)]
pub struct Flag {
    /// Site-averaged eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Site standard deviation of each eigenvalue.
    pub dispersions: Vec<f64>,
    /// Retained cut positions: `cuts[i] = c` means the projection separates
    /// eigenvalues `0..=c` from `c+1..`.
    pub cuts: Vec<usize>,
    /// Gap positions merged because the gap was below `gap_tol`.
    pub merged: Vec<usize>,
    /// The smoothed steps used, one per retained cut.
    pub steps: Vec<SmoothStep>,
    /// Projections onto the lowest eigenspaces, one per retained cut.
    pub projections: Vec<EndoField>,
    /// Sup-norm residuals `|pi^2 - pi|` per projection.
    pub idempotency: Vec<f64>,
    /// Sup-norm residuals `|pi - pi^{*K}|` per projection.
    pub self_adjointness: Vec<f64>,
    /// `int tr(u)`; vanishes for directions from trace-conserving flows.
    pub trace_integral: f64,
}

impl Flag {
    pub fn separated(&self) -> bool {
        !self.cuts.is_empty()
    }
}

/// `s -> (u, ell)` with `ell = || |s|^2_K ||_{L2}^{1/2}` and `u = s / ell`.
pub fn normalize(
    bundle: &Bundle,
    k: &MetricField,
    s: &EndoField,
) -> Result<(EndoField, f64), BundleError> {
    let nsq = bundle.pointwise_norm_sq(k, s);
    let sq: Vec<C64> = nsq
        .values
        .iter()
        .map(|v| C64::new(v.re * v.re, 0.0))
        .collect();
    let ell = bundle.grid.integrate_values(&sq).re.max(0.0).sqrt().sqrt();
    if ell == 0.0 {
        return Err(BundleError::Invalid("cannot normalize the zero field".into()));
    }
    Ok((s.scaled(C64::new(1.0 / ell, 0.0)), ell))
}

/// Per-site spectra of a `K`-self-adjoint `u`, eigenvalue constancy report,
/// and the flag of smoothed-step eigenprojections. Gaps below `gap_tol` are
/// merged (the step cannot separate them) and reported.
pub fn eigen_flag(
    bundle: &Bundle,
    k: &MetricField,
    u: &EndoField,
    gap_tol: f64,
) -> Result<Flag, BundleError> {
    let r = bundle.rank();
    let n = bundle.grid.site_count();
    let mut sums = vec![0.0; r];
    let mut sq_sums = vec![0.0; r];
    for idx in 0..n {
        let (mut vals, _) = bundle.k_eigen_at(k, u, idx)?;
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for a in 0..r {
            sums[a] += vals[a];
            sq_sums[a] += vals[a] * vals[a];
        }
    }
    let eigenvalues: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let dispersions: Vec<f64> = (0..r)
        .map(|a| {
            let m = eigenvalues[a];
            (sq_sums[a] / n as f64 - m * m).max(0.0).sqrt()
        })
        .collect();

    let mut cuts = Vec::new();
    let mut merged = Vec::new();
    let mut steps = Vec::new();
    let mut projections = Vec::new();
    let mut idempotency = Vec::new();
    let mut self_adjointness = Vec::new();
    for c in 0..r.saturating_sub(1) {
        let gap = eigenvalues[c + 1] - eigenvalues[c];
        if gap <= gap_tol {
            merged.push(c);
            continue;
        }
        let step = SmoothStep::between(eigenvalues[c], eigenvalues[c + 1]);
        let pi = bundle.phi_of_s(k, u, move |x| step.eval(x));
        let mut idem = pi.mul(&pi, FormDegree::Zero);
        idem.add_scaled(&pi, C64::new(-1.0, 0.0));
        idempotency.push(idem.sup_abs());
        let mut anti = pi.clone();
        anti.add_scaled(&bundle.adjoint_wrt(k, &pi), C64::new(-1.0, 0.0));
        self_adjointness.push(anti.sup_abs());
        cuts.push(c);
        steps.push(step);
        projections.push(pi);
    }

    let trace_integral = bundle.grid.integrate(&u.trace()).re;
    Ok(Flag {
        eigenvalues,
        dispersions,
        cuts,
        merged,
        steps,
        projections,
        idempotency,
        self_adjointness,
        trace_integral,
    })
}

/// `|| (I - pi) dbar_a pi ||_{L2_K}`, the weak-holomorphy defect of a
/// projection.
pub fn weak_holo_residual(bundle: &Bundle, k: &MetricField, pi: &EndoField) -> f64 {
    let dpi = bundle.dbar_a(pi);
    let mut proj = dpi.clone();
    proj.add_scaled(&pi.mul(&dpi, FormDegree::ZeroOne), C64::new(-1.0, 0.0));
    bundle.l2_norm(k, &proj)
}

/// Residual between the two expressions for `(I - pi_alpha) dbar pi_alpha`:
/// the direct one and the pair transform with weight
/// `(1 - p_alpha(u)) dp_alpha(u, v)` applied to `dbar u`.
pub fn weak_phi_agreement(
    bundle: &Bundle,
    k: &MetricField,
    u: &EndoField,
    flag: &Flag,
    which: usize,
) -> f64 {
    let pi = &flag.projections[which];
    let step = flag.steps[which];
    let dpi = bundle.dbar_a(pi);
    let mut lhs = dpi.clone();
    lhs.add_scaled(&pi.mul(&dpi, FormDegree::ZeroOne), C64::new(-1.0, 0.0));
    let dq = step.diff_quotient();
    let weight = Bivariate(Box::new(move |a, b| (1.0 - step.eval(a)) * dq.eval(a, b)));
    let du = bundle.dbar_a(u);
    let rhs = bundle.phi_pair_of_s(k, u, &du, &weight);
    let mut diff = lhs;
    diff.add_scaled(&rhs, C64::new(-1.0, 0.0));
    bundle.l2_norm(k, &diff)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DestabilizeVerdict {
    /// A projection with slope at least the bundle slope was found.
    Found,
    /// The flow converged; there is nothing to destabilize.
    FlowConverged,
    /// No recorded state reached the blow-up threshold.
    NoBlowUp,
    /// The blow-up direction has (numerically) constant spectrum.
    NoSeparation,
}

#[derive(Debug, Serialize)]
pub struct DestabilizeReport {
    pub verdict: DestabilizeVerdict,
    /// Normalization scale of the state used.
    pub ell: f64,
    /// Flow time of that state.
    pub t_used: f64,
    pub eigenvalues: Vec<f64>,
    pub dispersions: Vec<f64>,
    /// Degree, trace-rank, and slope per retained projection.
    pub deg_pi: Vec<f64>,
    pub rank_pi: Vec<f64>,
    pub mu_pi: Vec<f64>,
    pub weak_holo: Vec<f64>,
    pub mu_e: f64,
    pub deg_e: f64,
    /// Telescoping degree combination; the slope argument needs `w <= tol`.
    pub w: f64,
    pub w_tol: f64,
    /// `L2` residual of the telescoping reconstruction of `u`.
    pub telescope_residual: f64,
    pub trace_integral: f64,
    /// Index (into the retained projections) of the best slope, if any.
    pub best: Option<usize>,
}

/// Run the destabilization probe on a recorded flow trace: pick the latest
/// state past the blow-up threshold, normalize it, extract the eigenvalue
/// flag, and evaluate the telescoping slope test.
pub fn destabilize_probe(
    bundle: &Bundle,
    k: &MetricField,
    trace: &FlowTrace,
    gap_tol: f64,
    ell_min: f64,
) -> Result<DestabilizeReport, BundleError> {
    let empty = |verdict| DestabilizeReport {
        verdict,
        ell: 0.0,
        t_used: 0.0,
        eigenvalues: vec![],
        dispersions: vec![],
        deg_pi: vec![],
        rank_pi: vec![],
        mu_pi: vec![],
        weak_holo: vec![],
        mu_e: bundle.slope(),
        deg_e: bundle.degree_sum() as f64,
        w: 0.0,
        w_tol: 0.0,
        telescope_residual: 0.0,
        trace_integral: 0.0,
        best: None,
    };
    if trace.status == FlowStatus::Converged {
        return Ok(empty(DestabilizeVerdict::FlowConverged));
    }
    let mut picked: Option<(f64, &EndoField, f64)> = None;
    for (t, s) in trace.s_history.iter() {
        let (_, ell) = match normalize(bundle, k, s) {
            Ok(v) => v,
            Err(_) => continue,
        };
        if ell >= ell_min {
            picked = Some((*t, s, ell));
        }
    }
    let Some((t_used, s, ell)) = picked else {
        return Ok(empty(DestabilizeVerdict::NoBlowUp));
    };
    let (u, _) = normalize(bundle, k, s)?;
    let flag = eigen_flag(bundle, k, &u, gap_tol)?;
    if !flag.separated() {
        let mut rep = empty(DestabilizeVerdict::NoSeparation);
        rep.ell = ell;
        rep.t_used = t_used;
        rep.eigenvalues = flag.eigenvalues;
        rep.dispersions = flag.dispersions;
        rep.trace_integral = flag.trace_integral;
        return Ok(rep);
    }

    let deg_e = bundle.degree(k);
    let mu_e = bundle.slope();
    let vol = bundle.grid.volume;
    let r = bundle.rank();
    let mut deg_pi = Vec::new();
    let mut rank_pi = Vec::new();
    let mut mu_pi = Vec::new();
    let mut weak_holo = Vec::new();
    for pi in &flag.projections {
        let d = bundle.projection_degree(k, pi);
        let rk = bundle.grid.integrate(&pi.trace()).re / vol;
        deg_pi.push(d);
        rank_pi.push(rk);
        mu_pi.push(if rk.abs() > 1e-9 { d / rk } else { f64::NEG_INFINITY });
        weak_holo.push(weak_holo_residual(bundle, k, pi));
    }

    // telescoping: u = nu_r I - sum over cuts (nu_{c+1} - nu_c) pi_c
    let nu = &flag.eigenvalues;
    let nu_top = nu[r - 1];
    let mut w = nu_top * deg_e;
    let mut recon = EndoField::identity(&bundle.grid, r).scaled(C64::new(nu_top, 0.0));
    for (i, &c) in flag.cuts.iter().enumerate() {
        let gap = nu[c + 1] - nu[c];
        w -= gap * deg_pi[i];
        recon.add_scaled(&flag.projections[i], C64::new(-gap, 0.0));
    }
    let mut diff = u.clone();
    diff.add_scaled(&recon, C64::new(-1.0, 0.0));
    let telescope_residual = bundle.l2_norm(k, &diff);

    let w_tol = 1e-3 * deg_e.abs().max(1.0);
    let best = mu_pi
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i);
    let verdict = match best {
        Some(i) if w <= w_tol && mu_pi[i] >= mu_e - w_tol => DestabilizeVerdict::Found,
        _ => DestabilizeVerdict::NoSeparation,
    };
    Ok(DestabilizeReport {
        verdict,
        ell,
        t_used,
        eigenvalues: flag.eigenvalues,
        dispersions: flag.dispersions,
        deg_pi,
        rank_pi,
        mu_pi,
        weak_holo,
        mu_e,
        deg_e,
        w,
        w_tol,
        telescope_residual,
        trace_integral: flag.trace_integral,
        best,
    })
}
