//! Standardized maximin D-optimal designs over a finite parameter grid.

use crate::design::{canonical_merge, DesignMeasure, MergeRule};
use crate::engine::{least_favorable, Criterion, Optimizer};
use crate::error::Result;
use crate::grid::{BetaGrid, GridSpec};
use crate::local::{local_log_dets, seeds_for, BetaWeight, EquivalenceCertificate};
use crate::models::ModelSpec;

/// Relative slack for membership in the active set of worst-case parameters.
pub const ACTIVE_TOL: f64 = 1e-5;
/// Relative tolerance of the maximin certificate.
pub const MAXIMIN_TOL: f64 = 1e-5;
/// Allowed `|d(x_k) - m|` at support points of a certified maximin design.
pub const SUPPORT_TOL: f64 = 1e-4;

/// Efficiencies `det M(xi, beta) / det M(xi[beta], beta)` on the grid.
pub fn efficiency_curve(design: &DesignMeasure, model: &ModelSpec, grid: &BetaGrid) -> Result<Vec<(f64, f64)>> {
    for &b in grid.values() {
        model.check_beta(b)?;
    }
    let offsets = local_log_dets(model, grid.values(), &GridSpec::default())?;
    let crit = Criterion::min(model, grid.values().to_vec(), offsets);
    Ok(grid
        .values()
        .iter()
        .zip(crit.terms(design))
        .map(|(&b, t)| (b, t.exp()))
        .collect())
}

/// Worst-case efficiency over the grid and the (lowest) parameter attaining it.
pub fn maximin_criterion(design: &DesignMeasure, model: &ModelSpec, grid: &BetaGrid) -> Result<(f64, f64)> {
    let curve = efficiency_curve(design, model, grid)?;
    let mut best = (f64::INFINITY, curve[0].0);
    for (b, e) in curve {
        if e < best.0 {
            best = (e, b);
        }
    }
    Ok(best)
}

/// Number of support points after the default canonical merge.
pub fn support_count(design: &DesignMeasure, model: &ModelSpec) -> usize {
    let rule = MergeRule::for_model(model);
    canonical_merge(design, rule.merge_radius, rule.weight_floor)
        .map(|d| d.len())
        .unwrap_or(0)
}

/// Maximin design on `xgrid` for the parameter grid, with a least-favorable
/// certificate.
pub fn solve_maximin(
    model: &ModelSpec,
    grid: &BetaGrid,
    xgrid: &GridSpec,
) -> Result<(DesignMeasure, EquivalenceCertificate)> {
    for &b in grid.values() {
        model.check_beta(b)?;
    }
    let offsets = local_log_dets(model, grid.values(), xgrid)?;
    let crit = Criterion::min(model, grid.values().to_vec(), offsets);
    let mut seeds = Vec::new();
    for &b in grid.values().iter().step_by((grid.len() / 20).max(1)) {
        seeds.extend(seeds_for(model, b));
    }
    let sol = Optimizer {
        crit: &crit,
        grid: *xgrid,
        seeds,
    }
    .run()?;
    let rule = MergeRule::for_model(model);
    let design = canonical_merge(&sol.design, rule.merge_radius, rule.weight_floor)?;
    let cert = least_favorable_certificate(&crit, &design, xgrid)?;
    Ok((design, cert))
}

/// Certificate of a given design for maximin optimality on the parameter grid.
pub fn verify_maximin(
    design: &DesignMeasure,
    model: &ModelSpec,
    grid: &BetaGrid,
    xgrid: &GridSpec,
) -> Result<EquivalenceCertificate> {
    for &b in grid.values() {
        model.check_beta(b)?;
    }
    design.check_inside(model)?;
    let offsets = local_log_dets(model, grid.values(), xgrid)?;
    let crit = Criterion::min(model, grid.values().to_vec(), offsets);
    least_favorable_certificate(&crit, design, xgrid)
}

/// Certificate for the maximin criterion: a least-favorable measure on the
/// active set minimizing the supremum of the averaged directional derivative.
pub(crate) fn least_favorable_certificate(
    crit: &Criterion<'_>,
    design: &DesignMeasure,
    xgrid: &GridSpec,
) -> Result<EquivalenceCertificate> {
    let m = crit.model.dim() as f64;
    let lf = least_favorable(crit, design, xgrid, ACTIVE_TOL)?;
    let mut cert = EquivalenceCertificate::new(lf.top.1, lf.top.0, m, MAXIMIN_TOL);
    cert.max_support_deviation = Some(lf.support_deviation);
    cert.least_favorable_weights = Some(
        lf.betas
            .iter()
            .zip(&lf.mu)
            .map(|(&beta, &weight)| BetaWeight { beta, weight })
            .collect(),
    );
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::exp_q_closed_form;

    #[test]
    fn singleton_grid_local_design_has_value_one() {
        let model = ModelSpec::exp1();
        let grid = BetaGrid::singleton(3.0);
        let (v, b) = maximin_criterion(&model.analytic_local(3.0).unwrap(), &model, &grid).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        assert_eq!(b, 3.0);
    }

    #[test]
    fn midpoint_design_is_limited_by_endpoints() {
        let model = ModelSpec::exp1();
        let grid = BetaGrid::log(1.0, 10.0).unwrap();
        let mid = 10f64.sqrt();
        let d = DesignMeasure::point_mass(1.0 / mid);
        let (v, _) = maximin_criterion(&d, &model, &grid).unwrap();
        let expect = exp_q_closed_form(1.0, mid).min(exp_q_closed_form(10.0, mid));
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn singular_design_scores_zero() {
        let model = ModelSpec::exp2();
        let grid = BetaGrid::log(1.0, 4.0).unwrap();
        let (v, b) = maximin_criterion(&DesignMeasure::point_mass(0.3), &model, &grid).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(b, 1.0);
    }

    #[test]
    fn singleton_grid_reproduces_local_design() {
        let model = ModelSpec::exp2();
        let (d, cert) = solve_maximin(&model, &BetaGrid::singleton(4.0), &GridSpec::default()).unwrap();
        assert_eq!(d.len(), 2);
        assert!((d.points()[1] - 0.25).abs() < 1e-6);
        assert!(cert.passed, "{cert:?}");
    }

    #[test]
    fn counts_after_merge() {
        let model = ModelSpec::exp1();
        assert_eq!(support_count(&DesignMeasure::point_mass(0.3), &model), 1);
        let d = DesignMeasure::new(vec![0.1, 0.1005, 0.5], vec![0.3, 0.3, 0.4]).unwrap();
        assert_eq!(support_count(&d, &model), 2);
    }
}
