//! Bayesian D-optimal designs.

use rayon::prelude::*;

use crate::design::{canonical_merge, information_matrix_unchecked, DesignMeasure, MergeRule};
use crate::engine::{Criterion, Optimizer};
use crate::error::{DesignError, Result};
use crate::grid::GridSpec;
use crate::local::{certify, local_design, local_log_dets, EquivalenceCertificate, CERTIFICATE_TOL};
use crate::models::ModelSpec;
use crate::quadrature::{quadrature, ParameterPrior, PriorKind};

/// Extra room beyond the largest atom of a discrete prior for the logistic
/// design interval.
const LOGISTIC_DISCRETE_MARGIN: f64 = 5.0;

/// Logistic model whose design interval contains every local optimum `x = beta`
/// under the prior: `[0, 2/a]` for the truncated exponential, `[0, L + 5]` for
/// the discrete uniform, and the upper prior bound otherwise.
pub fn logistic_for_prior(prior: &ParameterPrior) -> Result<ModelSpec> {
    let x_max = match prior.kind {
        PriorKind::TruncExp { a } => 2.0 / a,
        PriorKind::DiscreteUniform { l } => l as f64 + LOGISTIC_DISCRETE_MARGIN,
        PriorKind::Uniform { hi, .. } => hi.max(1.0),
        PriorKind::PointMass { beta } => (2.0 * beta).max(1.0),
    };
    ModelSpec::logistic(x_max)
}

fn check_nodes(model: &ModelSpec, nodes: &[(f64, f64)]) -> Result<()> {
    for (b, _) in nodes {
        model.check_beta(*b)?;
    }
    Ok(())
}

/// `sum_j w_j log det M(xi, beta_j)` over the quadrature nodes, minus the local
/// optimum's log determinant at each node when `standardized`.
pub fn bayes_criterion(
    design: &DesignMeasure,
    model: &ModelSpec,
    prior: &ParameterPrior,
    standardized: bool,
) -> Result<f64> {
    let nodes = quadrature(prior);
    check_nodes(model, &nodes)?;
    let offsets = if standardized {
        let betas: Vec<f64> = nodes.iter().map(|n| n.0).collect();
        local_log_dets(model, &betas, &GridSpec::default())?
    } else {
        vec![0.0; nodes.len()]
    };
    Ok(Criterion::sum(model, &nodes, offsets).value(design))
}

/// Bayesian D-optimal design for the prior, certified by the prior-averaged
/// directional derivative.
pub fn solve_bayes(
    model: &ModelSpec,
    prior: &ParameterPrior,
    grid: &GridSpec,
) -> Result<(DesignMeasure, EquivalenceCertificate)> {
    let nodes = quadrature(prior);
    check_nodes(model, &nodes)?;
    // the standardizing constants do not move the maximizer
    let crit = Criterion::sum(model, &nodes, vec![0.0; nodes.len()]);
    let mut seeds = Vec::new();
    for (b, _) in nodes.iter().step_by((nodes.len() / 20).max(1)) {
        seeds.extend(crate::local::seeds_for(model, *b));
    }
    let sol = Optimizer {
        crit: &crit,
        grid: *grid,
        seeds,
    }
    .run()?;
    let rule = MergeRule::for_model(model);
    let design = canonical_merge(&sol.design, rule.merge_radius, rule.weight_floor)?;
    let cert = certify(&crit, &design, &crit.weights, grid, CERTIFICATE_TOL)?;
    Ok((design, cert))
}

/// Certificate of a given design for Bayesian D-optimality under the prior.
pub fn verify_bayes(
    design: &DesignMeasure,
    model: &ModelSpec,
    prior: &ParameterPrior,
    grid: &GridSpec,
) -> Result<EquivalenceCertificate> {
    design.check_inside(model)?;
    let nodes = quadrature(prior);
    check_nodes(model, &nodes)?;
    let crit = Criterion::sum(model, &nodes, vec![0.0; nodes.len()]);
    certify(&crit, design, &crit.weights, grid, CERTIFICATE_TOL)
}

/// `int trace(M^{-1}(xi, beta)) / trace(M^{-1}(xi[beta], beta)) pi(d beta)`;
/// `+inf` when the design is singular at some node.
pub fn bayes_a_criterion(design: &DesignMeasure, model: &ModelSpec, prior: &ParameterPrior) -> Result<f64> {
    let nodes = quadrature(prior);
    check_nodes(model, &nodes)?;
    let grid = GridSpec::default();
    let parts: Vec<f64> = nodes
        .par_iter()
        .map(|&(b, w)| {
            let m = information_matrix_unchecked(design, model, b);
            let inv = match (m.is_singular(), m.inverse()) {
                (false, Some(inv)) => inv,
                _ => return Ok(f64::INFINITY),
            };
            let local = local_design(model, b, &grid)?;
            let lm = information_matrix_unchecked(&local, model, b);
            let linv = lm
                .inverse()
                .ok_or_else(|| DesignError::Internal(format!("local design at beta = {b} is singular")))?;
            Ok(w * inv.trace() / linv.trace())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_prior_standardized_value_is_zero_at_local_design() {
        let model = ModelSpec::exp1();
        let prior = ParameterPrior::point_mass(3.0);
        let d = model.analytic_local(3.0).unwrap();
        assert!(bayes_criterion(&d, &model, &prior, true).unwrap().abs() < 1e-14);
    }

    #[test]
    fn raw_value_for_point_prior() {
        let model = ModelSpec::exp1();
        let prior = ParameterPrior::point_mass(2.0);
        let d = DesignMeasure::point_mass(0.4);
        let v = bayes_criterion(&d, &model, &prior, false).unwrap();
        assert!((v - (0.16 * (-1.6f64).exp()).ln()).abs() < 1e-13);
    }

    #[test]
    fn a_criterion_for_point_prior() {
        let model = ModelSpec::exp1();
        let prior = ParameterPrior::point_mass(2.0);
        let v = bayes_a_criterion(&DesignMeasure::point_mass(0.4), &model, &prior).unwrap();
        let expect = (2.0 * std::f64::consts::E).powi(-2) / (0.16 * (-1.6f64).exp());
        assert!((v - expect).abs() < 1e-12 * expect);
        let local = model.analytic_local(2.0).unwrap();
        assert!((bayes_a_criterion(&local, &model, &prior).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_design_gives_sentinels() {
        let model = ModelSpec::exp2();
        let prior = ParameterPrior::uniform(1.0, 2.0).unwrap();
        let d = DesignMeasure::point_mass(0.5);
        assert_eq!(bayes_criterion(&d, &model, &prior, false).unwrap(), f64::NEG_INFINITY);
        assert_eq!(bayes_a_criterion(&d, &model, &prior).unwrap(), f64::INFINITY);
    }

    #[test]
    fn point_prior_reproduces_local_solution() {
        let model = ModelSpec::exp2();
        let (d, cert) = solve_bayes(&model, &ParameterPrior::point_mass(4.0), &GridSpec::default()).unwrap();
        let (l, _) = crate::local::solve_local(&model, 4.0, &GridSpec::default()).unwrap();
        assert_eq!(d.len(), l.len());
        for (a, b) in d.points().iter().zip(l.points()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(cert.passed);
    }

    #[test]
    fn logistic_interval_covers_prior() {
        let p = ParameterPrior::trunc_exp(0.25).unwrap();
        assert_eq!(logistic_for_prior(&p).unwrap().design_interval(), (0.0, 8.0));
        let p = ParameterPrior::discrete_uniform(6).unwrap();
        assert_eq!(logistic_for_prior(&p).unwrap().design_interval(), (0.0, 11.0));
    }
}
