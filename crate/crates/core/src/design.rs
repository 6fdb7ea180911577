//! Design measures and the information-matrix machinery shared by all solvers.

use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::linalg::{det_columns, InfoMatrix, Score, MAX_DIM};
use crate::models::ModelSpec;

/// Tolerance on the total mass of a design.
pub const MASS_TOL: f64 = 1e-12;

/// A finitely supported probability measure on the design interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDesign", into = "RawDesign")]
pub struct DesignMeasure {
    points: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawDesign {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl TryFrom<RawDesign> for DesignMeasure {
    type Error = DesignError;

    fn try_from(raw: RawDesign) -> Result<Self> {
        DesignMeasure::new(raw.points, raw.weights)
    }
}

impl From<DesignMeasure> for RawDesign {
    fn from(d: DesignMeasure) -> Self {
        RawDesign {
            points: d.points,
            weights: d.weights,
        }
    }
}

impl DesignMeasure {
    /// Validates lengths, finiteness, nonnegativity and total mass.
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(DesignError::InvalidDesign(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.is_empty() {
            return Err(DesignError::InvalidDesign("empty support".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(DesignError::InvalidDesign("non-finite support point".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(DesignError::InvalidDesign(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(DesignError::InvalidDesign(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(DesignMeasure { points, weights })
    }

    /// Normalizes nonnegative weights to unit mass.
    pub fn from_unnormalized(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(DesignError::InvalidDesign("total mass must be positive".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Self::new(points, weights)
    }

    pub fn point_mass(x: f64) -> Self {
        DesignMeasure {
            points: vec![x],
            weights: vec![1.0],
        }
    }

    pub fn uniform(points: Vec<f64>) -> Result<Self> {
        let n = points.len();
        Self::from_unnormalized(points, vec![1.0; n])
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }

    /// Support sorted by location.
    pub fn sorted(&self) -> Self {
        let mut pairs: Vec<(f64, f64)> = self.iter().collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (points, weights) = pairs.into_iter().unzip();
        DesignMeasure { points, weights }
    }

    /// `sum_i c_i xi_i` for nonnegative coefficients summing to one.
    pub fn mixture(parts: &[(f64, &DesignMeasure)]) -> Result<Self> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (c, d) in parts {
            for (x, w) in d.iter() {
                points.push(x);
                weights.push(c * w);
            }
        }
        Self::from_unnormalized(points, weights).map(|d| d.sorted())
    }

    pub fn check_inside(&self, model: &ModelSpec) -> Result<()> {
        match self.points.iter().find(|&&x| !model.contains(x)) {
            Some(x) => {
                let (lo, hi) = model.design_interval();
                Err(DesignError::InvalidDesign(format!(
                    "support point {x} outside [{lo}, {hi}]"
                )))
            }
            None => Ok(()),
        }
    }
}

/// Merge/floor rule used to identify the support of a computed design.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeRule {
    pub merge_radius: f64,
    pub weight_floor: f64,
}

impl MergeRule {
    pub const DEFAULT_FLOOR: f64 = 1e-3;
    pub const DEFAULT_RADIUS_FRACTION: f64 = 1e-3;

    /// Radius `1e-3 * |X|` and floor `1e-3`.
    pub fn for_model(model: &ModelSpec) -> Self {
        MergeRule {
            merge_radius: Self::DEFAULT_RADIUS_FRACTION * model.interval_length(),
            weight_floor: Self::DEFAULT_FLOOR,
        }
    }

    /// Defaults for the unit design interval.
    pub fn unit() -> Self {
        MergeRule {
            merge_radius: Self::DEFAULT_RADIUS_FRACTION,
            weight_floor: Self::DEFAULT_FLOOR,
        }
    }
}

/// Merges points closer than `merge_radius` (chained, weight-averaged
/// location, summed weight), drops clusters lighter than `weight_floor`, and
/// renormalizes.
pub fn canonical_merge(design: &DesignMeasure, merge_radius: f64, weight_floor: f64) -> Result<DesignMeasure> {
    if !(merge_radius >= 0.0 && weight_floor >= 0.0) {
        return Err(DesignError::Usage(
            "merge radius and weight floor must be nonnegative".into(),
        ));
    }
    let sorted = design.sorted();
    // (weighted location sum, weight, last raw point)
    let mut clusters: Vec<(f64, f64, f64)> = Vec::new();
    for (x, w) in sorted.iter() {
        match clusters.last_mut() {
            Some(c) if x - c.2 <= merge_radius => {
                c.0 += x * w;
                c.1 += w;
                c.2 = x;
            }
            _ => clusters.push((x * w, w, x)),
        }
    }
    let kept: Vec<(f64, f64)> = clusters
        .into_iter()
        .filter(|c| c.1 >= weight_floor && c.1 > 0.0)
        .map(|c| (c.0 / c.1, c.1))
        .collect();
    if kept.is_empty() {
        return Err(DesignError::Degenerate {
            floor: weight_floor,
        });
    }
    let (points, weights): (Vec<f64>, Vec<f64>) = kept.into_iter().unzip();
    DesignMeasure::from_unnormalized(points, weights)
}

/// `M(xi, beta) = sum_k w_k f(x_k, beta) f(x_k, beta)^T`.
pub fn information_matrix(design: &DesignMeasure, model: &ModelSpec, beta: f64) -> Result<InfoMatrix> {
    model.check_beta(beta)?;
    Ok(information_matrix_unchecked(design, model, beta))
}

pub(crate) fn information_matrix_unchecked(design: &DesignMeasure, model: &ModelSpec, beta: f64) -> InfoMatrix {
    let mut m = InfoMatrix::zeros(model.dim());
    for (x, w) in design.iter() {
        m.add_outer(w, &model.score(x, beta));
    }
    m
}

/// `log det`, with `f64::NEG_INFINITY` for singular matrices.
pub fn log_det(matrix: &InfoMatrix) -> f64 {
    matrix.log_det()
}

/// `I_m(x_1, ..., x_m, beta)`: squared determinant of the score columns.
pub fn gram_determinant(points: &[f64], model: &ModelSpec, beta: f64) -> Result<f64> {
    let m = model.dim();
    if points.len() != m {
        return Err(DesignError::Usage(format!(
            "gram determinant needs exactly {m} points, got {}",
            points.len()
        )));
    }
    model.check_beta(beta)?;
    Ok(gram_unchecked(points, model, beta))
}

fn gram_unchecked(points: &[f64], model: &ModelSpec, beta: f64) -> f64 {
    let m = model.dim();
    let mut cols: [Score; MAX_DIM] = [[0.0; MAX_DIM]; MAX_DIM];
    for (c, &x) in cols.iter_mut().zip(points) {
        *c = model.score(x, beta);
    }
    let d = det_columns(m, &cols[..m]);
    d * d
}

/// Determinant of `M(xi, beta)` by the Cauchy-Binet expansion over
/// `m`-subsets of the support.
pub fn det_via_cauchy_binet(design: &DesignMeasure, model: &ModelSpec, beta: f64) -> Result<f64> {
    model.check_beta(beta)?;
    let m = model.dim();
    let n = design.len();
    let pts = design.points();
    let ws = design.weights();
    let mut total = 0.0;
    let mut idx: Vec<usize> = (0..m).collect();
    if n < m {
        return Ok(0.0);
    }
    loop {
        let wprod: f64 = idx.iter().map(|&i| ws[i]).product();
        if wprod > 0.0 {
            let sub: Vec<f64> = idx.iter().map(|&i| pts[i]).collect();
            total += wprod * gram_unchecked(&sub, model, beta);
        }
        // next combination in lexicographic order
        let mut k = m;
        loop {
            if k == 0 {
                return Ok(total);
            }
            k -= 1;
            if idx[k] < n - m + k {
                idx[k] += 1;
                for j in (k + 1)..m {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Monotone reparameterization `ell` of the nonlinear parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleFunction {
    Identity,
    Logarithm,
    /// `ell(beta) = int_0^beta c sqrt(a) e^{-a t} dt` on `[0, 1/a)`, the scale
    /// paired with the truncated-exponential prior.
    TruncExpIntegral { a: f64 },
    /// Right-continuous counting function with unit jumps at each atom.
    UnitStep { atoms: Vec<f64> },
}

/// `c = (1 - e^{-1})^{-1}`, the truncated-exponential normalizer.
pub fn trunc_exp_normalizer() -> f64 {
    1.0 / (1.0 - (-1.0f64).exp())
}

impl ScaleFunction {
    pub fn eval(&self, beta: f64) -> f64 {
        match self {
            ScaleFunction::Identity => beta,
            ScaleFunction::Logarithm => beta.ln(),
            ScaleFunction::TruncExpIntegral { a } => {
                let b = beta.clamp(0.0, 1.0 / a);
                trunc_exp_normalizer() / a.sqrt() * (1.0 - (-a * b).exp())
            }
            ScaleFunction::UnitStep { atoms } => atoms.iter().filter(|&&t| t <= beta).count() as f64,
        }
    }

    /// Smallest `beta` with `ell(beta) >= value` (exact inverse for the
    /// continuous scales).
    pub fn inverse(&self, value: f64) -> f64 {
        match self {
            ScaleFunction::Identity => value,
            ScaleFunction::Logarithm => value.exp(),
            ScaleFunction::TruncExpIntegral { a } => {
                let frac = value * a.sqrt() / trunc_exp_normalizer();
                -(1.0 - frac).ln() / a
            }
            ScaleFunction::UnitStep { atoms } => {
                let mut sorted = atoms.clone();
                sorted.sort_by(f64::total_cmp);
                let k = value.ceil().max(1.0) as usize;
                sorted
                    .get(k - 1)
                    .copied()
                    .unwrap_or_else(|| *sorted.last().unwrap_or(&f64::NAN))
            }
        }
    }

    /// `|ell(b1) - ell(b2)|`.
    pub fn distance(&self, b1: f64, b2: f64) -> f64 {
        (self.eval(b1) - self.eval(b2)).abs()
    }
}
