//! Local D-optimal designs and equivalence certificates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{canonical_merge, information_matrix, DesignMeasure, MergeRule};
use crate::engine::{scan_maxima, Criterion, Optimizer};
use crate::error::{DesignError, Result};
use crate::grid::GridSpec;
use crate::models::ModelSpec;

/// Relative tolerance of local and Bayesian certificates.
pub const CERTIFICATE_TOL: f64 = 1e-6;

/// Weight of one parameter value in a least-favorable measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaWeight {
    pub beta: f64,
    pub weight: f64,
}

/// Audit of the (possibly averaged) directional derivative of a design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCertificate {
    pub max_directional_derivative: f64,
    /// The parameter dimension `m`.
    pub bound: f64,
    pub tolerance: f64,
    pub worst_point: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub least_favorable_weights: Option<Vec<BetaWeight>>,
    /// Largest `|d(x_k) - m|` over the support points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_support_deviation: Option<f64>,
}

impl EquivalenceCertificate {
    pub(crate) fn new(max: f64, worst_point: f64, bound: f64, tolerance: f64) -> Self {
        EquivalenceCertificate {
            max_directional_derivative: max,
            bound,
            tolerance,
            worst_point,
            passed: max <= bound * (1.0 + tolerance),
            least_favorable_weights: None,
            max_support_deviation: None,
        }
    }
}

/// `trace(M^{-1}(xi, beta) I(x, beta))`.
pub fn directional_derivative(design: &DesignMeasure, model: &ModelSpec, beta: f64, x: f64) -> Result<f64> {
    let m = information_matrix(design, model, beta)?;
    if m.is_singular() {
        return Err(DesignError::Singular { beta });
    }
    let inv = m.inverse().ok_or(DesignError::Singular { beta })?;
    Ok(inv.quad_form(&model.score(x, beta)))
}

/// Audits `x -> sum_j nu_j f^T M_j^{-1} f` over the grid and its refinements.
pub(crate) fn certify(
    crit: &Criterion<'_>,
    design: &DesignMeasure,
    nu: &[f64],
    grid: &GridSpec,
    tolerance: f64,
) -> Result<EquivalenceCertificate> {
    let (lo, hi) = crit.model.design_interval();
    let d = crit.derivative(design, nu)?;
    let f = |x: f64| d.eval(x);
    let pts = grid.points(lo, hi);
    let top = scan_maxima(&f, &pts, grid, 16);
    let (worst, max) = top.first().copied().unwrap_or((lo, f(lo)));
    let m = crit.model.dim() as f64;
    let mut cert = EquivalenceCertificate::new(max, worst, m, tolerance);
    let dev = design.points().iter().map(|&x| (f(x) - m).abs()).fold(0.0, f64::max);
    cert.max_support_deviation = Some(dev);
    Ok(cert)
}

pub(crate) fn seeds_for(model: &ModelSpec, beta: f64) -> Vec<f64> {
    model
        .analytic_local(beta)
        .map(|d| d.points().to_vec())
        .unwrap_or_default()
}

/// Local D-optimal design at `beta`, computed on the grid and certified.
pub fn solve_local(model: &ModelSpec, beta: f64, grid: &GridSpec) -> Result<(DesignMeasure, EquivalenceCertificate)> {
    model.check_beta(beta)?;
    let crit = Criterion::sum(model, &[(beta, 1.0)], vec![0.0]);
    let sol = Optimizer {
        crit: &crit,
        grid: *grid,
        seeds: seeds_for(model, beta),
    }
    .run()?;
    let rule = MergeRule::for_model(model);
    let design = canonical_merge(&sol.design, rule.merge_radius, rule.weight_floor)?;
    let cert = certify(&crit, &design, &[1.0], grid, CERTIFICATE_TOL)?;
    Ok((design, cert))
}

/// Certificate of a given design for local D-optimality at `beta`.
pub fn verify_local(
    design: &DesignMeasure,
    model: &ModelSpec,
    beta: f64,
    grid: &GridSpec,
) -> Result<EquivalenceCertificate> {
    model.check_beta(beta)?;
    design.check_inside(model)?;
    let crit = Criterion::sum(model, &[(beta, 1.0)], vec![0.0]);
    certify(&crit, design, &[1.0], grid, CERTIFICATE_TOL)
}

/// Local design from the analytic oracle when available, numerically otherwise.
pub fn local_design(model: &ModelSpec, beta: f64, grid: &GridSpec) -> Result<DesignMeasure> {
    model.check_beta(beta)?;
    match model.analytic_local(beta) {
        Some(d) => Ok(d),
        None => solve_local(model, beta, grid).map(|r| r.0),
    }
}

/// `log det M(xi[beta], beta)`.
pub fn local_log_det(model: &ModelSpec, beta: f64, grid: &GridSpec) -> Result<f64> {
    let d = local_design(model, beta, grid)?;
    let v = information_matrix(&d, model, beta)?.log_det();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DesignError::Internal(format!("local design at beta = {beta} is singular")))
    }
}

/// `local_log_det` for many parameter values, evaluated in parallel.
pub fn local_log_dets(model: &ModelSpec, betas: &[f64], grid: &GridSpec) -> Result<Vec<f64>> {
    betas.par_iter().map(|&b| local_log_det(model, b, grid)).collect()
}
