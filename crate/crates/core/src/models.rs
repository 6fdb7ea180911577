//! Regression models described by their Fisher score vectors.
//!
//! Every model supplies `f(x, beta)` with `I(x, beta) = f f^T`. Built-in
//! instances cover the one-, two- and three-parameter exponential models and
//! the binary logistic model.

use std::fmt;
use std::sync::Arc;

use crate::design::DesignMeasure;
use crate::error::{DesignError, Result};
use crate::linalg::{Score, MAX_DIM};

pub type ScoreFn = dyn Fn(f64, f64) -> Score + Send + Sync;
pub type LocalDesignFn = dyn Fn(f64) -> DesignMeasure + Send + Sync;

/// A nonlinear regression model in which one parameter `beta` enters the
/// information matrix nonlinearly.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    m: usize,
    m_eta: usize,
    design_interval: (f64, f64),
    beta_range: (f64, f64),
    score: Arc<ScoreFn>,
    analytic_local: Option<Arc<LocalDesignFn>>,
    fixed_support: Vec<f64>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("m_eta", &self.m_eta)
            .field("design_interval", &self.design_interval)
            .field("beta_range", &self.beta_range)
            .field("analytic_local", &self.analytic_local.is_some())
            .field("fixed_support", &self.fixed_support)
            .finish()
    }
}

impl ModelSpec {
    /// A user model from a score function. `m_eta` defaults to zero.
    pub fn custom<F>(
        name: impl Into<String>,
        m: usize,
        design_interval: (f64, f64),
        beta_range: (f64, f64),
        score: F,
    ) -> Result<Self>
    where
        F: Fn(f64, f64) -> Score + Send + Sync + 'static,
    {
        if !(1..=MAX_DIM).contains(&m) {
            return Err(DesignError::Usage(format!(
                "parameter dimension must be 1..={MAX_DIM}, got {m}"
            )));
        }
        let (lo, hi) = design_interval;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(DesignError::Usage(format!(
                "design interval [{lo}, {hi}] must be finite and nonempty"
            )));
        }
        if !(beta_range.0 <= beta_range.1) {
            return Err(DesignError::Usage("empty parameter range".into()));
        }
        Ok(ModelSpec {
            name: name.into(),
            m,
            m_eta: 0,
            design_interval,
            beta_range,
            score: Arc::new(score),
            analytic_local: None,
            fixed_support: Vec::new(),
        })
    }

    /// Declares the support points shared by all local D-optimal designs.
    pub fn with_fixed_support(mut self, points: Vec<f64>) -> Result<Self> {
        if points.len() >= self.m {
            return Err(DesignError::Usage(format!(
                "need m_eta < m, got {} common points for m = {}",
                points.len(),
                self.m
            )));
        }
        let (lo, hi) = self.design_interval;
        if let Some(p) = points.iter().find(|&&p| p < lo || p > hi) {
            return Err(DesignError::Usage(format!(
                "common support point {p} outside [{lo}, {hi}]"
            )));
        }
        self.m_eta = points.len();
        self.fixed_support = points;
        Ok(self)
    }

    pub fn with_analytic_local<F>(mut self, local: F) -> Self
    where
        F: Fn(f64) -> DesignMeasure + Send + Sync + 'static,
    {
        self.analytic_local = Some(Arc::new(local));
        self
    }

    /// `eta = exp(-beta x)` on `[0, 1]`.
    pub fn exp1() -> Self {
        ModelSpec::custom("exp1", 1, (0.0, 1.0), (0.0, f64::INFINITY), |x, b| {
            [x * (-b * x).exp(), 0.0, 0.0]
        })
        .expect("valid built-in")
        .with_analytic_local(|b| DesignMeasure::point_mass((1.0 / b).clamp(0.0, 1.0)))
    }

    /// `eta = alpha + exp(-beta x)` on `[0, 1]`.
    pub fn exp2() -> Self {
        ModelSpec::custom("exp2", 2, (0.0, 1.0), (0.0, f64::INFINITY), |x, b| {
            [1.0, -x * (-b * x).exp(), 0.0]
        })
        .expect("valid built-in")
        .with_fixed_support(vec![0.0])
        .expect("valid built-in")
        .with_analytic_local(|b| {
            DesignMeasure::new(vec![0.0, (1.0 / b).clamp(0.0, 1.0)], vec![0.5, 0.5])
                .expect("two distinct points")
        })
    }

    /// `eta = alpha1 + alpha2 exp(-beta x)` on `[0, 1]` with `alpha2 = 1`.
    ///
    /// A free `alpha2` multiplies every determinant by `alpha2^2`, so designs
    /// are unaffected; see [`ModelSpec::exp3_with_amplitude`].
    pub fn exp3() -> Self {
        Self::exp3_with_amplitude(1.0)
    }

    pub fn exp3_with_amplitude(alpha2: f64) -> Self {
        ModelSpec::custom("exp3", 3, (0.0, 1.0), (0.0, f64::INFINITY), move |x, b| {
            let e = (-b * x).exp();
            [1.0, e, -alpha2 * x * e]
        })
        .expect("valid built-in")
        .with_fixed_support(vec![0.0, 1.0])
        .expect("valid built-in")
        .with_analytic_local(exp3_local)
    }

    /// Binary logistic model `eta = 1 / (1 + exp(x - beta))` on `[0, x_max]`.
    pub fn logistic(x_max: f64) -> Result<Self> {
        let model = ModelSpec::custom("logistic", 1, (0.0, x_max), (0.0, x_max), |x, b| {
            // sqrt(e^u / (1 + e^u)^2) = 1 / (2 cosh(u / 2))
            [0.5 / (0.5 * (x - b)).cosh(), 0.0, 0.0]
        })?;
        Ok(model.with_analytic_local(|b| DesignMeasure::point_mass(b)))
    }

    /// Looks up a built-in model. `x_max` only applies to `logistic`.
    pub fn by_name(name: &str, x_max: Option<f64>) -> Result<Self> {
        match name {
            "exp1" => Ok(Self::exp1()),
            "exp2" => Ok(Self::exp2()),
            "exp3" => Ok(Self::exp3()),
            "logistic" => Self::logistic(x_max.unwrap_or(10.0)),
            other => Err(DesignError::Usage(format!(
                "unknown model '{other}' (expected exp1 | exp2 | exp3 | logistic)"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn m_eta(&self) -> usize {
        self.m_eta
    }

    pub fn design_interval(&self) -> (f64, f64) {
        self.design_interval
    }

    pub fn interval_length(&self) -> f64 {
        self.design_interval.1 - self.design_interval.0
    }

    pub fn beta_range(&self) -> (f64, f64) {
        self.beta_range
    }

    pub fn fixed_support(&self) -> &[f64] {
        &self.fixed_support
    }

    pub fn has_analytic_local(&self) -> bool {
        self.analytic_local.is_some()
    }

    /// The closed-form local design, when the model has one.
    pub fn analytic_local(&self, beta: f64) -> Option<DesignMeasure> {
        self.analytic_local.as_ref().map(|f| f(beta))
    }

    #[inline]
    pub fn score(&self, x: f64, beta: f64) -> Score {
        (self.score)(x, beta)
    }

    pub fn check_beta(&self, beta: f64) -> Result<()> {
        let (lo, hi) = self.beta_range;
        if beta.is_finite() && beta >= lo && beta <= hi {
            Ok(())
        } else {
            Err(DesignError::Domain { beta, lo, hi })
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.design_interval;
        let slack = 1e-12 * (hi - lo);
        x >= lo - slack && x <= hi + slack
    }
}

/// Result of an efficiency evaluation `Q(beta, beta_tilde)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QValue {
    pub value: f64,
    /// Set when the numerator design is singular at `beta`.
    pub singular: bool,
}

/// `Q(beta, beta_tilde) = det M(xi[beta_tilde], beta) / det M(xi[beta], beta)`.
///
/// `local` returns the local D-optimal design for a parameter value, either in
/// closed form or numerically.
pub fn q_efficiency(
    model: &ModelSpec,
    beta: f64,
    beta_tilde: f64,
    local: &dyn Fn(f64) -> Result<DesignMeasure>,
) -> Result<QValue> {
    model.check_beta(beta)?;
    model.check_beta(beta_tilde)?;
    let own = local(beta)?;
    let denom = crate::design::information_matrix(&own, model, beta)?;
    if denom.is_singular() {
        return Err(DesignError::Internal(format!(
            "local design at beta = {beta} has a singular information matrix"
        )));
    }
    if beta == beta_tilde {
        return Ok(QValue {
            value: 1.0,
            singular: false,
        });
    }
    let other = local(beta_tilde)?;
    let num = crate::design::information_matrix(&other, model, beta)?;
    if num.is_singular() {
        return Ok(QValue {
            value: 0.0,
            singular: true,
        });
    }
    Ok(QValue {
        value: (num.log_det() - denom.log_det()).exp(),
        singular: false,
    })
}

/// Closed-form efficiency for `exp1` (and `exp2`): `((b / bt) e^{1 - b / bt})^2`.
pub fn exp_q_closed_form(beta: f64, beta_tilde: f64) -> f64 {
    let y = beta / beta_tilde;
    (y * (1.0 - y).exp()).powi(2)
}

/// Closed-form efficiency for the logistic model: `4 e^u / (1 + e^u)^2`, `u = bt - b`.
pub fn logistic_q_closed_form(beta: f64, beta_tilde: f64) -> f64 {
    let u = beta_tilde - beta;
    1.0 / (0.5 * u).cosh().powi(2)
}

/// Local `exp3` design: equal weights on `{0, x*, 1}`, with `x*` maximizing
/// `|H(0, x, 1, beta)|` (the design is saturated, so only the free point is unknown).
fn exp3_local(beta: f64) -> DesignMeasure {
    const SCAN: usize = 2001;
    let f = |x: f64| h_function(0.0, x, 1.0, beta).abs();
    let pts = crate::grid::uniform(0.0, 1.0, SCAN);
    let start = pts[1..SCAN - 1]
        .iter()
        .copied()
        .max_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap_or(0.5);
    let spacing = 1.0 / (SCAN - 1) as f64;
    let (x, _) = crate::grid::refine_max(&f, start, spacing, 4, 1.0, 0.0, 1.0);
    DesignMeasure::uniform(vec![0.0, x, 1.0]).expect("three distinct points")
}

/// Signed bracket `H(x1, x2, x3, beta)` whose square is the `exp3` Gram determinant.
pub fn h_function(x1: f64, x2: f64, x3: f64, beta: f64) -> f64 {
    let e = |x: f64| (-beta * x).exp();
    let (e1, e2, e3) = (e(x1), e(x2), e(x3));
    x1 * e1 * (e3 - e2) + x2 * e2 * (e1 - e3) + x3 * e3 * (e2 - e1)
}

/// `H` through the three-term expansion around the common support `{0, 1}`:
/// `sum_k a_k H(0, x_k, 1, beta)`.
pub fn h_function_expanded(x1: f64, x2: f64, x3: f64, beta: f64) -> (f64, [f64; 3]) {
    let e = |x: f64| (-beta * x).exp();
    let denom = 1.0 - (-beta).exp();
    let a = [
        (e(x3) - e(x2)) / denom,
        (e(x1) - e(x3)) / denom,
        (e(x2) - e(x1)) / denom,
    ];
    let h0 = |x: f64| h_function(0.0, x, 1.0, beta);
    let value = a[0] * h0(x1) + a[1] * h0(x2) + a[2] * h0(x3);
    (value, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_closed_forms_at_reference_points() {
        assert!((exp_q_closed_form(2.0, 1.0) - 4.0 * (-2.0f64).exp()).abs() < 1e-15);
        let e1 = (-1.0f64).exp();
        let expect = 4.0 * e1 / (1.0 + e1).powi(2);
        assert!((logistic_q_closed_form(3.0, 2.0) - expect).abs() < 1e-15);
        assert!((expect - 0.7864).abs() < 1e-4);
        assert!(expect >= 0.5);
    }

    #[test]
    fn h_vanishes_at_common_support() {
        for beta in [0.5, 1.0, 7.0] {
            assert_eq!(h_function(0.0, 0.0, 1.0, beta), 0.0);
            assert!(h_function(0.0, 1.0, 1.0, beta).abs() < 1e-16);
        }
        assert!(h_function(0.0, 0.5, 1.0, 2.0) > 0.0);
    }

    #[test]
    fn h_matches_three_point_bracket() {
        for &(x, beta) in &[(0.3f64, 2.0f64), (0.7, 5.0), (0.05, 30.0)] {
            let eb = (-beta).exp();
            let bracket = x * (-beta * x).exp() * (1.0 - eb) - eb * (1.0 - (-beta * x).exp());
            assert!((h_function(0.0, x, 1.0, beta) - bracket).abs() < 1e-15);
        }
    }

    #[test]
    fn h_expansion_matches_direct() {
        for &(a, b, c, beta) in &[(0.1, 0.4, 0.9, 3.0), (0.8, 0.2, 0.5, 10.0)] {
            let (v, coef) = h_function_expanded(a, b, c, beta);
            assert!((v - h_function(a, b, c, beta)).abs() < 1e-14);
            assert!(coef.iter().all(|k| k.abs() <= 1.0));
        }
    }

    #[test]
    fn by_name_rejects_unknown() {
        assert!(matches!(
            ModelSpec::by_name("michaelis", None),
            Err(DesignError::Usage(_))
        ));
    }

    #[test]
    fn fixed_support_must_be_smaller_than_dimension() {
        let m = ModelSpec::custom("t", 2, (0.0, 1.0), (0.0, 1.0), |x, _| [1.0, x, 0.0]).unwrap();
        assert!(m.clone().with_fixed_support(vec![0.0, 1.0]).is_err());
        assert!(m.clone().with_fixed_support(vec![2.0]).is_err());
        assert_eq!(m.with_fixed_support(vec![0.0]).unwrap().m_eta(), 1);
    }

    #[test]
    fn domain_error_outside_beta_range() {
        let m = ModelSpec::logistic(5.0).unwrap();
        assert!(matches!(m.check_beta(6.0), Err(DesignError::Domain { .. })));
        assert!(m.check_beta(5.0).is_ok());
    }
}
