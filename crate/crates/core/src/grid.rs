//! Discretizations of the design interval and of the parameter interval.

use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    Uniform,
    /// Uniform points plus an equal number of geometrically spaced points
    /// accumulating at the lower end of the interval.
    LogTilted,
}

/// Candidate grid on the design interval and its local refinement schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub count: usize,
    pub spacing: Spacing,
    /// Rounds of local refinement around each candidate maximum; every round
    /// divides the spacing by ten.
    pub refinement_rounds: usize,
    /// Half-width of each refinement window, in units of the current spacing.
    pub refinement_radius: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            count: 2001,
            spacing: Spacing::Uniform,
            refinement_rounds: 3,
            refinement_radius: 1.0,
        }
    }
}

/// Smallest geometric offset of a log-tilted grid, relative to the interval length.
const LOG_TILT_FLOOR: f64 = 1e-6;

impl GridSpec {
    pub fn log_tilted() -> Self {
        GridSpec {
            spacing: Spacing::LogTilted,
            ..Self::default()
        }
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.count < m + 1 {
            return Err(DesignError::Infeasible(format!(
                "grid needs at least {} points to support a nonsingular design, got {}",
                m + 1,
                self.count
            )));
        }
        if self.refinement_rounds > 0 && !(self.refinement_radius > 0.0) {
            return Err(DesignError::Usage("refinement radius must be positive".into()));
        }
        Ok(())
    }

    /// Sorted, deduplicated grid points on `[lo, hi]`.
    pub fn points(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut pts = uniform(lo, hi, self.count);
        if self.spacing == Spacing::LogTilted {
            let len = hi - lo;
            let first = (LOG_TILT_FLOOR * len).ln();
            let last = len.ln();
            let n = self.count.max(2);
            pts.extend((0..n).map(|i| lo + (first + (last - first) * i as f64 / (n - 1) as f64).exp()));
            pts.sort_by(f64::total_cmp);
            pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * len);
        }
        pts
    }
}

pub fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Spacing of the parameter grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaSpacing {
    Log,
    Uniform,
}

/// Finite grid over the parameter interval on which the maximin criterion is
/// evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaGrid {
    beta_min: f64,
    beta_max: f64,
    spacing: BetaSpacing,
    values: Vec<f64>,
}

impl BetaGrid {
    pub const DEFAULT_COUNT: usize = 400;

    pub fn new(beta_min: f64, beta_max: f64, count: usize, spacing: BetaSpacing) -> Result<Self> {
        if !(beta_min < beta_max) || !beta_min.is_finite() || !beta_max.is_finite() {
            return Err(DesignError::Usage(format!(
                "parameter grid needs beta_min < beta_max, got [{beta_min}, {beta_max}]"
            )));
        }
        if count < 2 {
            return Err(DesignError::Usage("parameter grid needs at least 2 points".into()));
        }
        let values = match spacing {
            BetaSpacing::Uniform => uniform(beta_min, beta_max, count),
            BetaSpacing::Log => {
                if beta_min <= 0.0 {
                    return Err(DesignError::Usage(
                        "log-spaced parameter grid needs beta_min > 0".into(),
                    ));
                }
                let (a, b) = (beta_min.ln(), beta_max.ln());
                let mut v: Vec<f64> = uniform(a, b, count).into_iter().map(f64::exp).collect();
                v[0] = beta_min;
                v[count - 1] = beta_max;
                v
            }
        };
        Ok(BetaGrid {
            beta_min,
            beta_max,
            spacing,
            values,
        })
    }

    /// 400 log-spaced values.
    pub fn log(beta_min: f64, beta_max: f64) -> Result<Self> {
        Self::new(beta_min, beta_max, Self::DEFAULT_COUNT, BetaSpacing::Log)
    }

    /// A single parameter value; the maximin problem reduces to the local one.
    pub fn singleton(beta: f64) -> Self {
        BetaGrid {
            beta_min: beta,
            beta_max: beta,
            spacing: BetaSpacing::Uniform,
            values: vec![beta],
        }
    }

    /// Arbitrary sorted values (used to build supersets in tests and sweeps).
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(DesignError::Usage("parameter grid values must be finite".into()));
        }
        values.sort_by(f64::total_cmp);
        values.dedup();
        Ok(BetaGrid {
            beta_min: values[0],
            beta_max: *values.last().unwrap(),
            spacing: BetaSpacing::Uniform,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.beta_min, self.beta_max)
    }

    pub fn spacing(&self) -> BetaSpacing {
        self.spacing
    }
}

/// Indices of local maxima of `values` (plateaus report their lowest index).
pub(crate) fn local_maxima(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut out = Vec::new();
    for i in 0..n {
        let left_ok = i == 0 || values[i] > values[i - 1];
        let right_ok = i + 1 == n || values[i] >= values[i + 1];
        if left_ok && right_ok {
            out.push(i);
        }
    }
    out
}

/// Maximizes `f` near `x0` by shrinking local grids and a final golden-section
/// step. Returns the best location and value found (never worse than `x0`).
pub(crate) fn refine_max<F>(f: &F, x0: f64, spacing: f64, rounds: usize, radius: f64, lo: f64, hi: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let mut best_x = x0;
    let mut best_v = f(x0);
    let mut h = spacing;
    for _ in 0..rounds {
        let half = radius * h;
        let a = (best_x - half).max(lo);
        let b = (best_x + half).min(hi);
        let steps = 20;
        let mut cur_x = best_x;
        let mut cur_v = best_v;
        for i in 0..=steps {
            let x = a + (b - a) * i as f64 / steps as f64;
            let v = f(x);
            if v > cur_v {
                cur_v = v;
                cur_x = x;
            }
        }
        best_x = cur_x;
        best_v = cur_v;
        h /= 10.0;
    }
    // golden-section polish on the last bracket
    let half = radius.max(1.0) * h * 10.0;
    let (gx, gv) = golden_max(f, (best_x - half).max(lo), (best_x + half).min(hi), 1e-13 * (hi - lo).max(1e-300));
    if gv > best_v {
        (gx, gv)
    } else {
        (best_x, best_v)
    }
}

pub(crate) fn golden_max<F>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iters = 0;
    while (b - a) > tol && iters < 200 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        iters += 1;
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_is_2001_uniform() {
        let g = GridSpec::default();
        let pts = g.points(0.0, 1.0);
        assert_eq!(pts.len(), 2001);
        assert_eq!(pts[0], 0.0);
        assert_eq!(pts[2000], 1.0);
    }

    #[test]
    fn log_tilted_grid_reaches_small_points() {
        let pts = GridSpec::log_tilted().points(0.0, 1.0);
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
        assert!(pts[1] <= 1.1e-6);
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::default().with_count(2).validate(2).is_err());
        assert!(GridSpec::default().with_count(3).validate(2).is_ok());
        let bad = GridSpec {
            refinement_radius: 0.0,
            ..GridSpec::default()
        };
        assert!(bad.validate(1).is_err());
    }

    #[test]
    fn beta_grid_endpoints_exact() {
        let g = BetaGrid::log(1.0, 40.0).unwrap();
        assert_eq!(g.len(), 400);
        assert_eq!(g.values()[0], 1.0);
        assert_eq!(g.values()[399], 40.0);
        assert!(g.values().windows(2).all(|w| w[0] < w[1]));
        assert!(BetaGrid::log(2.0, 1.0).is_err());
        assert!(BetaGrid::new(1.0, 2.0, 1, BetaSpacing::Log).is_err());
    }

    #[test]
    fn refine_finds_smooth_maximum() {
        let f = |x: f64| -(x - 0.123456789).powi(2);
        let (x, _) = refine_max(&f, 0.1233, 5e-4, 3, 1.0, 0.0, 1.0);
        assert!((x - 0.123456789).abs() < 1e-7);
    }

    #[test]
    fn local_maxima_tie_break_low() {
        assert_eq!(local_maxima(&[0.0, 1.0, 1.0, 0.0, 2.0]), vec![1, 4]);
    }
}
