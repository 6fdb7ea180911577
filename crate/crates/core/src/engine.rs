//! Shared optimizer for concave log-determinant criteria over designs.
//!
//! A criterion is a finite family of terms `log det M(xi, beta_j) - offset_j`,
//! aggregated either as a weighted sum (local and Bayesian designs) or as a
//! minimum (maximin designs). Weights on a finite support are found by a
//! barrier Newton method; the support is grown by an exchange step that adds
//! local maxima of the directional derivative, and finally polished.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::design::{canonical_merge, DesignMeasure, MergeRule};
use crate::error::{DesignError, Result};
use crate::grid::{local_maxima, refine_max, GridSpec};
use crate::joint::Joint;
use crate::linalg::{InfoMatrix, Score};
use crate::models::ModelSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Aggregate {
    Sum,
    Min,
}

/// Components are processed in fixed-size chunks so that parallel reductions
/// are independent of the thread count.
const CHUNK: usize = 16;

pub(crate) struct Criterion<'a> {
    pub model: &'a ModelSpec,
    pub betas: Vec<f64>,
    /// Prior weights (sum aggregate only).
    pub weights: Vec<f64>,
    pub offsets: Vec<f64>,
    pub aggregate: Aggregate,
}

impl<'a> Criterion<'a> {
    pub fn sum(model: &'a ModelSpec, nodes: &[(f64, f64)], offsets: Vec<f64>) -> Self {
        Criterion {
            model,
            betas: nodes.iter().map(|n| n.0).collect(),
            weights: nodes.iter().map(|n| n.1).collect(),
            offsets,
            aggregate: Aggregate::Sum,
        }
    }

    pub fn min(model: &'a ModelSpec, betas: Vec<f64>, offsets: Vec<f64>) -> Self {
        let n = betas.len();
        Criterion {
            model,
            betas,
            weights: vec![1.0 / n as f64; n],
            offsets,
            aggregate: Aggregate::Min,
        }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    fn matrix(&self, design: &DesignMeasure, j: usize) -> InfoMatrix {
        let mut m = InfoMatrix::zeros(self.model.dim());
        for (x, w) in design.iter() {
            m.add_outer(w, &self.model.score(x, self.betas[j]));
        }
        m
    }

    /// `log det M(xi, beta_j) - offset_j` for every component.
    pub fn terms(&self, design: &DesignMeasure) -> Vec<f64> {
        (0..self.len())
            .into_par_iter()
            .map(|j| self.matrix(design, j).log_det() - self.offsets[j])
            .collect()
    }

    pub fn aggregate_terms(&self, terms: &[f64]) -> f64 {
        match self.aggregate {
            Aggregate::Sum => {
                let mut s = 0.0;
                for (t, p) in terms.iter().zip(&self.weights) {
                    if *p > 0.0 {
                        s += p * t;
                    }
                }
                s
            }
            Aggregate::Min => terms.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn value(&self, design: &DesignMeasure) -> f64 {
        self.aggregate_terms(&self.terms(design))
    }

    /// Directional derivative `x -> sum_j nu_j f^T M_j^{-1} f` for the given
    /// component measure `nu`.
    pub fn derivative(&self, design: &DesignMeasure, nu: &[f64]) -> Result<Derivative<'a>> {
        let parts: Vec<Option<(f64, f64, InfoMatrix)>> = (0..self.len())
            .into_par_iter()
            .map(|j| {
                if nu[j] <= 0.0 {
                    return Ok(None);
                }
                let m = self.matrix(design, j);
                if m.is_singular() {
                    return Err(DesignError::Singular { beta: self.betas[j] });
                }
                let inv = m.inverse().ok_or(DesignError::Singular { beta: self.betas[j] })?;
                Ok(Some((self.betas[j], nu[j], inv)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Derivative {
            model: self.model,
            parts: parts.into_iter().flatten().collect(),
        })
    }
}

/// Averaged sensitivity function of a fixed design.
pub(crate) struct Derivative<'a> {
    model: &'a ModelSpec,
    parts: Vec<(f64, f64, InfoMatrix)>,
}

impl Derivative<'_> {
    pub fn eval(&self, x: f64) -> f64 {
        let mut s = 0.0;
        for (beta, nu, inv) in &self.parts {
            s += nu * inv.quad_form(&self.model.score(x, *beta));
        }
        s
    }

    /// Per-component values `f^T M_j^{-1} f` at `x`, in component order.
    pub fn components(&self, x: f64) -> Vec<f64> {
        self.parts
            .iter()
            .map(|(beta, _, inv)| inv.quad_form(&self.model.score(x, *beta)))
            .collect()
    }
}

/// Grid scan followed by local refinement of the best local maxima. Returns
/// `(x, value)` pairs sorted by decreasing value; ties keep the lower `x`.
pub(crate) fn scan_maxima<F>(f: &F, pts: &[f64], grid: &GridSpec, keep: usize) -> Vec<(f64, f64)>
where
    F: Fn(f64) -> f64 + Sync,
{
    let vals: Vec<f64> = pts.par_iter().map(|&x| f(x)).collect();
    let mut idx = local_maxima(&vals);
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    idx.truncate(keep);
    let lo = pts[0];
    let hi = *pts.last().unwrap();
    let n = pts.len();
    let mut out: Vec<(f64, f64)> = idx
        .par_iter()
        .map(|&i| {
            let left = if i > 0 { pts[i] - pts[i - 1] } else { 0.0 };
            let right = if i + 1 < n { pts[i + 1] - pts[i] } else { 0.0 };
            let h = left.max(right);
            let (x, v) = refine_max(f, pts[i], h, grid.refinement_rounds, grid.refinement_radius.max(1.0), lo, hi);
            if v >= vals[i] {
                (x, v)
            } else {
                (pts[i], vals[i])
            }
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    out
}

/// Log-determinant components restricted to a finite support.
struct LogDetSystem {
    m: usize,
    /// `scores[j][k] = f(x_k, beta_j)`.
    scores: Vec<Vec<Score>>,
    offsets: Vec<f64>,
}

/// Linear components `g_i(mu) = -sum_j mu_j a_ij`.
struct LinearSystem {
    rows: Vec<Vec<f64>>,
}

trait Concave: Sync {
    fn vars(&self) -> usize;
    fn count(&self) -> usize;
    /// Component values, `None` outside the domain.
    fn values(&self, w: &[f64]) -> Option<Vec<f64>>;
    /// Component gradients (count x vars) and `sum_j c_j Hess g_j`.
    fn derivatives(&self, w: &[f64], curvature: &[f64]) -> (DMatrix<f64>, DMatrix<f64>);
}

impl LogDetSystem {
    fn matrix(&self, j: usize, w: &[f64]) -> InfoMatrix {
        let mut m = InfoMatrix::zeros(self.m);
        for (f, wk) in self.scores[j].iter().zip(w) {
            m.add_outer(*wk, f);
        }
        m
    }
}

impl Concave for LogDetSystem {
    fn vars(&self) -> usize {
        self.scores[0].len()
    }

    fn count(&self) -> usize {
        self.scores.len()
    }

    fn values(&self, w: &[f64]) -> Option<Vec<f64>> {
        let v: Vec<f64> = (0..self.count())
            .into_par_iter()
            .map(|j| self.matrix(j, w).log_det() - self.offsets[j])
            .collect();
        if v.iter().all(|x| x.is_finite()) {
            Some(v)
        } else {
            None
        }
    }

    fn derivatives(&self, w: &[f64], curvature: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = self.vars();
        let j_count = self.count();
        let chunks: Vec<(Vec<(usize, Vec<f64>)>, DMatrix<f64>)> = (0..j_count.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut hess = DMatrix::zeros(k, k);
                let mut rows = Vec::new();
                for j in c * CHUNK..((c + 1) * CHUNK).min(j_count) {
                    let inv = self.matrix(j, w).inverse().unwrap_or_else(|| InfoMatrix::zeros(self.m));
                    let g: Vec<Score> = self.scores[j]
                        .iter()
                        .map(|f| {
                            let mut out = [0.0; 3];
                            for (a, o) in out.iter_mut().enumerate().take(self.m) {
                                *o = (0..self.m).map(|b| inv.get(a, b) * f[b]).sum();
                            }
                            out
                        })
                        .collect();
                    let row: Vec<f64> = (0..k)
                        .map(|p| (0..self.m).map(|a| self.scores[j][p][a] * g[p][a]).sum())
                        .collect();
                    let cj = curvature[j];
                    if cj != 0.0 {
                        for p in 0..k {
                            for q in p..k {
                                let b: f64 = (0..self.m).map(|a| self.scores[j][p][a] * g[q][a]).sum();
                                let v = cj * b * b;
                                hess[(p, q)] -= v;
                                if q != p {
                                    hess[(q, p)] -= v;
                                }
                            }
                        }
                    }
                    rows.push((j, row));
                }
                (rows, hess)
            })
            .collect();
        let mut grads = DMatrix::zeros(j_count, k);
        let mut hess = DMatrix::zeros(k, k);
        for (rows, h) in chunks {
            for (j, row) in rows {
                for (p, v) in row.into_iter().enumerate() {
                    grads[(j, p)] = v;
                }
            }
            hess += h;
        }
        (grads, hess)
    }
}

impl Concave for LinearSystem {
    fn vars(&self) -> usize {
        self.rows[0].len()
    }

    fn count(&self) -> usize {
        self.rows.len()
    }

    fn values(&self, w: &[f64]) -> Option<Vec<f64>> {
        Some(
            self.rows
                .iter()
                .map(|r| -r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
                .collect(),
        )
    }

    fn derivatives(&self, _w: &[f64], _curvature: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = self.vars();
        let grads = DMatrix::from_fn(self.count(), k, |i, j| -self.rows[i][j]);
        (grads, DMatrix::zeros(k, k))
    }
}

struct BarrierOutput {
    w: Vec<f64>,
    /// Component measure: prior weights for sums, barrier duals for minima.
    duals: Vec<f64>,
}

const TAU_GAP: f64 = 1e-12;
const MAX_NEWTON: usize = 80;

/// Maximizes `sum_j pi_j g_j(w)` (sum) or `min_j g_j(w)` (min) over the simplex.
fn barrier_solve(sys: &dyn Concave, aggregate: Aggregate, pi: &[f64], w0: &[f64]) -> Result<BarrierOutput> {
    let k = sys.vars();
    let jn = sys.count();
    let mut w: Vec<f64> = w0.to_vec();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    let g0 = sys
        .values(&w)
        .ok_or_else(|| DesignError::Infeasible("starting support gives a singular information matrix".into()))?;
    let mut t = g0.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let is_min = aggregate == Aggregate::Min;
    let n_barrier = if is_min { (jn + k) as f64 } else { k as f64 };
    let tau_max = n_barrier / TAU_GAP;
    let mut tau = n_barrier.max(1.0);

    let objective = |w: &[f64], t: f64, g: &[f64], tau: f64| -> f64 {
        let bw: f64 = w.iter().map(|x| x.ln()).sum();
        if is_min {
            tau * t + g.iter().map(|gj| (gj - t).ln()).sum::<f64>() + bw
        } else {
            tau * g.iter().zip(pi).map(|(a, b)| a * b).sum::<f64>() + bw
        }
    };

    loop {
        let mut prev_decrement = f64::INFINITY;
        for _ in 0..MAX_NEWTON {
            let g = sys.values(&w).ok_or_else(|| DesignError::Internal("iterate left the domain".into()))?;
            let s: Vec<f64> = g.iter().map(|gj| gj - t).collect();
            let curv: Vec<f64> = if is_min {
                s.iter().map(|sj| 1.0 / sj).collect()
            } else {
                pi.iter().map(|p| tau * p).collect()
            };
            let (grads, hw) = sys.derivatives(&w, &curv);
            let n = if is_min { k + 1 } else { k };
            let mut grad = DVector::zeros(n);
            let mut hess = DMatrix::zeros(n, n);
            hess.view_mut((0, 0), (k, k)).copy_from(&hw);
            for p in 0..k {
                let mut gp = 1.0 / w[p];
                for j in 0..jn {
                    gp += curv[j] * grads[(j, p)];
                }
                grad[p] = gp;
                hess[(p, p)] -= 1.0 / (w[p] * w[p]);
            }
            if is_min {
                for j in 0..jn {
                    let inv2 = 1.0 / (s[j] * s[j]);
                    for p in 0..k {
                        let gp = grads[(j, p)];
                        if gp == 0.0 {
                            continue;
                        }
                        for q in 0..k {
                            hess[(p, q)] -= gp * grads[(j, q)] * inv2;
                        }
                        hess[(p, k)] += gp * inv2;
                        hess[(k, p)] += gp * inv2;
                    }
                    hess[(k, k)] -= inv2;
                }
                grad[k] = tau - curv.iter().sum::<f64>();
            }
            // scale by current weights so the barrier block becomes the identity
            let scale: Vec<f64> = (0..n).map(|i| if i < k { w[i] } else { 1.0 }).collect();
            let a = DMatrix::from_fn(n, n, |i, j| -hess[(i, j)] * scale[i] * scale[j]);
            let gs = DVector::from_fn(n, |i, _| grad[i] * scale[i]);
            let cons = DVector::from_fn(n, |i, _| if i < k { w[i] } else { 0.0 });
            let (ag, ac) = match solve_spd(&a, &gs, &cons) {
                Some(v) => v,
                None => break,
            };
            let nu = cons.dot(&ag) / cons.dot(&ac);
            let u = &ag - &ac * nu;
            let decrement = u.dot(&(&a * &u));
            // rounding noise stops quadratic convergence; further steps only
            // wander along flat directions
            let stalled = decrement < 1e-3 && decrement > 0.5 * prev_decrement;
            if !(decrement.is_finite()) || decrement < 1e-12 || stalled {
                break;
            }
            prev_decrement = decrement;
            let dw: Vec<f64> = (0..k).map(|i| u[i] * w[i]).collect();
            let dt = if is_min { u[k] } else { 0.0 };
            let f0 = objective(&w, t, &g, tau);
            let slope = gs.dot(&u);
            let mut step = 1.0;
            for (wi, di) in w.iter().zip(&dw) {
                if *di < 0.0 {
                    step = f64::min(step, -0.99 * wi / di);
                }
            }
            let mut accepted = false;
            for _ in 0..60 {
                let wn: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + step * b).collect();
                let tn = t + step * dt;
                if let Some(gn) = sys.values(&wn) {
                    if !is_min || gn.iter().all(|gj| gj - tn > 0.0) {
                        let f1 = objective(&wn, tn, &gn, tau);
                        // near the center the full Newton step is taken without
                        // an objective test, which rounding makes unreliable
                        let quadratic = decrement < 0.25 && step == 1.0;
                        if f1.is_finite() && (quadratic || f1 >= f0 + 1e-4 * step * slope) {
                            let tot: f64 = wn.iter().sum();
                            w = wn.iter().map(|x| x / tot).collect();
                            t = tn;
                            accepted = true;
                            break;
                        }
                    }
                }
                step *= 0.5;
            }
            if !accepted || decrement < 1e-10 {
                break;
            }
        }
        if tau >= tau_max {
            break;
        }
        tau = (tau * 10.0).min(tau_max);
        if is_min {
            // keep the epigraph variable strictly feasible for the new level
            let g = sys.values(&w).unwrap();
            let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
            if t >= gmin {
                t = gmin - 1.0 / tau;
            }
        }
    }
    let duals = if is_min {
        let g = sys.values(&w).unwrap();
        let raw: Vec<f64> = g.iter().map(|gj| 1.0 / (tau * (gj - t))).collect();
        let tot: f64 = raw.iter().sum();
        raw.iter().map(|x| x / tot).collect()
    } else {
        pi.to_vec()
    };
    Ok(BarrierOutput { w, duals })
}

/// Solves `A x = b` and `A y = c` for a symmetric positive definite `A`,
/// adding a small ridge when the factorization fails.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = a.nrows();
    let diag_max = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            return Some((ch.solve(b), ch.solve(c)));
        }
        ridge = if ridge == 0.0 { 1e-14 * diag_max } else { ridge * 100.0 };
    }
    None
}

/// Minimizes `max_i sum_j mu_j a_ij` over probability vectors `mu`.
pub(crate) fn minimax_weights(rows: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let k = rows[0].len();
    if k == 1 {
        let v = rows.iter().map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max);
        return Ok((vec![1.0], v));
    }
    let sys = LinearSystem { rows: rows.to_vec() };
    let out = barrier_solve(&sys, Aggregate::Min, &[], &vec![1.0 / k as f64; k])?;
    let v = sys.values(&out.w).unwrap().iter().map(|g| -g).fold(f64::NEG_INFINITY, f64::max);
    Ok((out.w, v))
}

const MAX_CUTS: usize = 60;
/// Relative efficiency slack of the active set used for convergence checks.
const LF_ACTIVE_TOL: f64 = 1e-5;

/// Least-favorable measure of a minimum-type criterion.
pub(crate) struct LeastFavorable {
    /// Parameters of the active set.
    pub betas: Vec<f64>,
    pub mu: Vec<f64>,
    /// Location and value of the largest averaged directional derivative.
    pub top: (f64, f64),
    /// Largest `|d(x_k) - m|` over the support points.
    pub support_deviation: f64,
}

/// Restricts the criterion to terms within `active_tol` (relative efficiency)
/// of the minimum and finds the measure on them that minimizes the largest
/// averaged directional derivative, by cutting planes over its local maxima.
pub(crate) fn least_favorable(
    crit: &Criterion<'_>,
    design: &DesignMeasure,
    xgrid: &GridSpec,
    active_tol: f64,
) -> Result<LeastFavorable> {
    let model = crit.model;
    let m = model.dim() as f64;
    let terms = crit.terms(design);
    let floor = crit.aggregate_terms(&terms);
    let active: Vec<usize> = (0..terms.len())
        .filter(|&j| terms[j] <= floor + (1.0 + active_tol).ln())
        .collect();
    let sub = Criterion::min(
        model,
        active.iter().map(|&j| crit.betas[j]).collect(),
        active.iter().map(|&j| crit.offsets[j]).collect(),
    );
    let (lo, hi) = model.design_interval();
    let pts = xgrid.points(lo, hi);
    let all = sub.derivative(design, &vec![1.0; active.len()])?;

    let mut cuts: Vec<f64> = design.points().to_vec();
    let uniform = vec![1.0 / active.len() as f64; active.len()];
    let d0 = sub.derivative(design, &uniform)?;
    cuts.extend(scan_maxima(&|x| d0.eval(x), &pts, xgrid, 8).into_iter().map(|c| c.0));

    let mut mu = uniform;
    let mut top = (lo, f64::INFINITY);
    for _ in 0..MAX_CUTS {
        let rows: Vec<Vec<f64>> = cuts.iter().map(|&x| all.components(x)).collect();
        let (w, v) = minimax_weights(&rows)?;
        mu = w;
        let d = sub.derivative(design, &mu)?;
        let found = scan_maxima(&|x| d.eval(x), &pts, xgrid, 8);
        top = found[0];
        if top.1 <= v * (1.0 + 1e-10) + 1e-12 {
            break;
        }
        let before = cuts.len();
        for (x, val) in found {
            if val > v && cuts.iter().all(|c| (c - x).abs() > 1e-13 * (hi - lo)) {
                cuts.push(x);
            }
        }
        if cuts.len() == before {
            break;
        }
    }
    let d = sub.derivative(design, &mu)?;
    let support_deviation = design.points().iter().map(|&x| (d.eval(x) - m).abs()).fold(0.0, f64::max);
    Ok(LeastFavorable {
        betas: sub.betas.clone(),
        mu,
        top,
        support_deviation,
    })
}

/// Result of a full optimization run.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct Solution {
    pub design: DesignMeasure,
    /// Component measure at the solution (prior weights or least-favorable duals).
    pub nu: Vec<f64>,
    pub value: f64,
    /// Criterion value after each accepted outer step; nondecreasing.
    pub history: Vec<f64>,
}

/// Stopping tolerance on the relative excess of the directional derivative.
pub(crate) const CONVERGENCE_TOL: f64 = 1e-9;
const MAX_OUTER: usize = 200;
const MAX_ROUNDS: usize = 12;
const MAX_POLISH: usize = 40;
/// Relative loss tolerated when a clustered iterate is collapsed.
const ACCEPT_SLACK: f64 = 1e-8;

type Iterate = (DesignMeasure, Vec<f64>, f64);
const MAX_ADD: usize = 8;
const PRUNE: f64 = 1e-10;
/// Relative weight below which polished points are dropped.
const COLLAPSE_PRUNE: f64 = 1e-6;
/// Relative dip of the directional derivative that separates two support points.
const FLAT_DIP: f64 = 1e-3;
/// Relative distance below which two movable points are tentatively merged.
const PAIR_RADIUS: f64 = 0.02;

pub(crate) struct Optimizer<'c, 'a> {
    pub crit: &'c Criterion<'a>,
    pub grid: GridSpec,
    pub seeds: Vec<f64>,
}

impl Optimizer<'_, '_> {
    fn solve_weights(&self, support: &[f64], w0: &[f64]) -> Result<BarrierOutput> {
        let sys = LogDetSystem {
            m: self.crit.model.dim(),
            scores: self
                .crit
                .betas
                .iter()
                .map(|&b| support.iter().map(|&x| self.crit.model.score(x, b)).collect())
                .collect(),
            offsets: self.crit.offsets.clone(),
        };
        barrier_solve(&sys, self.crit.aggregate, &self.crit.weights, w0)
    }

    /// Multiplicative updates `w_k <- w_k d_k / m` on a coarse grid.
    fn multiplicative(&self, pts: &[f64], iters: usize) -> Result<Vec<f64>> {
        let m = self.crit.model.dim() as f64;
        let mut w = vec![1.0 / pts.len() as f64; pts.len()];
        for _ in 0..iters {
            let design = DesignMeasure::new(pts.to_vec(), w.clone())?;
            let d = self.crit.derivative(&design, &self.crit.weights)?;
            let dv: Vec<f64> = pts.par_iter().map(|&x| d.eval(x)).collect();
            for (wk, dk) in w.iter_mut().zip(&dv) {
                *wk *= dk / m;
            }
            let tot: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= tot);
        }
        Ok(w)
    }

    fn initial_support(&self, lo: f64, hi: f64) -> Result<Vec<f64>> {
        let coarse = self.grid.with_count(41).points(lo, hi);
        let mut support: Vec<f64> = Vec::new();
        if self.crit.aggregate == Aggregate::Sum {
            let fine = self.grid.with_count(201).points(lo, hi);
            let w = self.multiplicative(&fine, 300)?;
            let wmax = w.iter().copied().fold(0.0, f64::max);
            support.extend(fine.iter().zip(&w).filter(|(_, wk)| **wk > 1e-3 * wmax).map(|(x, _)| *x));
        } else {
            support.extend(coarse);
        }
        support.extend(self.crit.model.fixed_support().iter().copied());
        support.extend(self.seeds.iter().copied());
        Ok(dedup(support, 1e-12 * (hi - lo)))
    }

    pub fn run(&self) -> Result<Solution> {
        let model = self.crit.model;
        let (lo, hi) = model.design_interval();
        self.grid.validate(model.dim())?;
        let pts = self.grid.points(lo, hi);
        let m = model.dim() as f64;
        let support = self.initial_support(lo, hi)?;
        let w0 = vec![1.0; support.len()];
        let mut history: Vec<f64> = Vec::new();
        let mut best = self.exchange(support, w0, None, &mut history, &pts)?;

        for _ in 0..MAX_ROUNDS {
            let (design, nu, value) = best.clone();
            let (pd, pnu, pv) = self.collapse(&design, &nu)?;
            if pv >= value - ACCEPT_SLACK * value.abs().max(1.0) {
                if history.last().map_or(true, |h| pv >= *h) {
                    history.push(pv);
                }
                best = (pd, pnu, pv);
            }
            if self.top(&best, &pts)? <= m * (1.0 + CONVERGENCE_TOL) {
                break;
            }
            let (design, _, _) = best.clone();
            let support = design.points().to_vec();
            let w0 = design.weights().to_vec();
            best = self.exchange(support, w0, Some(best), &mut history, &pts)?;
        }
        let (mut design, mut nu, mut value) = best;
        if let Some((d2, nu2, v2)) = self.consolidate(&design, value)? {
            if v2 >= value {
                history.push(v2);
            }
            design = d2;
            nu = nu2;
            value = v2;
        }
        Ok(Solution {
            design: design.sorted(),
            nu,
            value,
            history,
        })
    }

    /// Exchange phase: re-solve weights, then add the largest local maxima of
    /// the directional derivative until it is bounded by `m`.
    fn exchange(
        &self,
        mut support: Vec<f64>,
        mut w0: Vec<f64>,
        mut best: Option<Iterate>,
        history: &mut Vec<f64>,
        pts: &[f64],
    ) -> Result<Iterate> {
        let m = self.crit.model.dim() as f64;
        let len = self.crit.model.interval_length();
        for _ in 0..MAX_OUTER {
            let out = self.solve_weights(&support, &w0)?;
            let (sup, w) = prune(&support, &out.w);
            let design = DesignMeasure::from_unnormalized(sup, w)?;
            let value = self.crit.value(&design);
            let improved = best.as_ref().map_or(true, |b| value >= b.2);
            if !improved {
                break;
            }
            history.push(value);
            best = Some((design.clone(), out.duals.clone(), value));
            let d = self.crit.derivative(&design, &out.duals)?;
            let f = |x: f64| d.eval(x);
            let cands = scan_maxima(&f, pts, &self.grid, 4 * MAX_ADD);
            let top = cands.first().map_or(f64::NEG_INFINITY, |c| c.1);
            if top <= m * (1.0 + CONVERGENCE_TOL) {
                break;
            }
            support = design.points().to_vec();
            let n = support.len() as f64;
            w0 = design.weights().iter().map(|x| 0.9 * x + 0.1 / n).collect();
            let before = support.len();
            for (x, v) in cands.into_iter().take(MAX_ADD) {
                if v > m * (1.0 + CONVERGENCE_TOL) && support.iter().all(|s| (s - x).abs() > 1e-12 * len) {
                    support.push(x);
                    w0.push(0.1 / n);
                }
            }
            if support.len() == before {
                break;
            }
        }
        best.ok_or_else(|| DesignError::Internal("no iterate".into()))
    }

    /// Weights on the support after repeatedly dropping negligible points.
    fn solve_pruned(&self, support: &[f64], w0: &[f64]) -> Result<(DesignMeasure, Vec<f64>)> {
        let mut support = support.to_vec();
        let mut w0 = w0.to_vec();
        loop {
            let out = self.solve_weights(&support, &w0)?;
            let (sup, w) = prune_below(&support, &out.w, COLLAPSE_PRUNE);
            if sup.len() == support.len() {
                return Ok((DesignMeasure::from_unnormalized(sup, w)?, out.duals));
            }
            support = sup;
            w0 = w;
        }
    }

    /// Collapses clusters left by the exchange phase and moves the remaining
    /// points onto maxima of the directional derivative, then refines locations
    /// and weights jointly.
    fn collapse(&self, design: &DesignMeasure, nu: &[f64]) -> Result<Iterate> {
        let len = self.crit.model.interval_length();
        let radius = MergeRule::for_model(self.crit.model).merge_radius;
        let merged = self.merge_flat(&canonical_merge(design, radius, 0.0)?, design, nu)?;
        let (mut cur, mut cur_nu) = self.solve_pruned(merged.points(), merged.weights())?;
        let mut cur_v = self.crit.value(&cur);
        for _ in 0..MAX_POLISH {
            let targets = self.polish_targets(&cur, &cur_nu)?;
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..8 {
                let moved: Vec<f64> = cur
                    .points()
                    .iter()
                    .zip(&targets)
                    .map(|(x, t)| x + alpha * (t - x))
                    .collect();
                let trial = canonical_merge(
                    &DesignMeasure::from_unnormalized(moved, cur.weights().to_vec())?,
                    1e-9 * len,
                    0.0,
                )?;
                let (next, next_nu) = self.solve_pruned(trial.points(), trial.weights())?;
                let v = self.crit.value(&next);
                if v >= cur_v {
                    accepted = Some((next, next_nu, v));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((next, next_nu, v)) = accepted else {
                break;
            };
            let shift = if next.len() == cur.len() {
                next.points()
                    .iter()
                    .zip(cur.points())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            } else {
                f64::INFINITY
            };
            cur = next;
            cur_nu = next_nu;
            cur_v = v;
            if shift <= 1e-12 * len {
                break;
            }
        }
        // the unmerged iterate may sit near a better local optimum
        let (plain, _) = self.solve_pruned(design.points(), design.weights())?;
        for start in [cur.clone(), plain] {
            if let Some((next, next_nu, v)) = self.joint(&start)? {
                if v >= cur_v {
                    cur = next;
                    cur_nu = next_nu;
                    cur_v = v;
                }
            }
        }
        cur = cur.sorted();
        while let Some(pair) = self.closest_free_pair(&cur) {
            let Some((next, next_nu, v)) = self.joint(&merge_pair(&cur, pair)?)? else {
                break;
            };
            if v < cur_v - ACCEPT_SLACK * cur_v.abs().max(1.0) || next.len() >= cur.len() {
                break;
            }
            cur = next.sorted();
            cur_nu = next_nu;
            cur_v = v;
        }
        Ok((cur, cur_nu, cur_v))
    }

    /// Largest directional derivative of an iterate, averaged with the prior
    /// weights or with a least-favorable measure.
    fn top(&self, it: &Iterate, pts: &[f64]) -> Result<f64> {
        if self.crit.aggregate == Aggregate::Min {
            return Ok(least_favorable(self.crit, &it.0, &self.grid, LF_ACTIVE_TOL)?.top.1);
        }
        let d = self.crit.derivative(&it.0, &it.1)?;
        Ok(scan_maxima(&|x| d.eval(x), pts, &self.grid, 1)
            .first()
            .map_or(f64::NEG_INFINITY, |c| c.1))
    }

    /// Joint Newton refinement of locations and weights; points at common
    /// support points or at the ends of the interval stay in place.
    fn joint(&self, design: &DesignMeasure) -> Result<Option<Iterate>> {
        let (lo, hi) = self.crit.model.design_interval();
        let len = hi - lo;
        let fixed = self.crit.model.fixed_support();
        let free: Vec<bool> = design
            .points()
            .iter()
            .map(|&x| {
                !fixed.iter().any(|s| (s - x).abs() <= 1e-12 * len) && x - lo > 1e-9 * len && hi - x > 1e-9 * len
            })
            .collect();
        let Some(r) = (Joint { crit: self.crit, free }).refine(design.points(), design.weights()) else {
            return Ok(None);
        };
        let (sup, w) = prune_below(&r.points, &r.weights, COLLAPSE_PRUNE);
        let merged = canonical_merge(&DesignMeasure::from_unnormalized(sup, w)?, 1e-9 * len, 0.0)?;
        if merged.len() == r.points.len() {
            // the joint duals account for the optimized locations
            let v = self.crit.value(&merged);
            let sorted = DesignMeasure::from_unnormalized(r.points, r.weights)?;
            return Ok(Some((sorted, r.duals, v)));
        }
        let (next, nu) = self.solve_pruned(merged.points(), merged.weights())?;
        let v = self.crit.value(&next);
        Ok(Some((next, nu, v)))
    }

    /// Adjacent movable support points closer than `PAIR_RADIUS` times the
    /// interval length.
    fn closest_free_pair(&self, design: &DesignMeasure) -> Option<usize> {
        let len = self.crit.model.interval_length();
        let fixed = self.crit.model.fixed_support();
        let p = design.points();
        let is_fixed = |x: f64| fixed.iter().any(|s| (s - x).abs() <= 1e-12 * len);
        (1..p.len())
            .filter(|&k| !is_fixed(p[k]) && !is_fixed(p[k - 1]) && p[k] - p[k - 1] < PAIR_RADIUS * len)
            .min_by(|&a, &b| (p[a] - p[a - 1]).total_cmp(&(p[b] - p[b - 1])))
    }

    /// Transfers the mass of points that are numerically indistinguishable
    /// from a common support point onto that point, then re-solves weights.
    fn consolidate(&self, design: &DesignMeasure, value: f64) -> Result<Option<(DesignMeasure, Vec<f64>, f64)>> {
        let fixed = self.crit.model.fixed_support();
        if fixed.is_empty() {
            return Ok(None);
        }
        let len = self.crit.model.interval_length();
        let slack = 1e-12 * value.abs().max(1.0);
        let mut pts = design.points().to_vec();
        let w = design.weights().to_vec();
        let mut changed = false;
        for k in 0..pts.len() {
            if fixed.iter().any(|s| (s - pts[k]).abs() <= 1e-12 * len) {
                continue;
            }
            let original = pts[k];
            let mut best: Option<(f64, f64)> = None;
            for &s in fixed {
                pts[k] = s;
                let v = self.crit.value(&DesignMeasure::from_unnormalized(pts.clone(), w.clone())?);
                if v >= value - slack && best.map_or(true, |b| v > b.1) {
                    best = Some((s, v));
                }
            }
            match best {
                Some((s, _)) => {
                    pts[k] = s;
                    changed = true;
                }
                None => pts[k] = original,
            }
        }
        if !changed {
            return Ok(None);
        }
        let support = dedup(pts, 1e-12 * len);
        let out = self.solve_weights(&support, &vec![1.0; support.len()])?;
        let (sup, w) = prune(&support, &out.w);
        let d = DesignMeasure::from_unnormalized(sup, w)?;
        let v = self.crit.value(&d);
        if v >= value - slack {
            Ok(Some((d, out.duals, v)))
        } else {
            Ok(None)
        }
    }

    /// Merges neighbouring support points when the directional derivative of
    /// `reference` stays within `FLAT_DIP` of `m` on the segment between them.
    fn merge_flat(&self, design: &DesignMeasure, reference: &DesignMeasure, nu: &[f64]) -> Result<DesignMeasure> {
        let m = self.crit.model.dim() as f64;
        let len = self.crit.model.interval_length();
        let fixed = self.crit.model.fixed_support();
        let is_fixed = |x: f64| fixed.iter().any(|s| (s - x).abs() <= 1e-12 * len);
        let d = self.crit.derivative(reference, nu)?;
        let sorted = design.sorted();
        let (p, w) = (sorted.points(), sorted.weights());
        let mut clusters: Vec<(f64, f64)> = Vec::new();
        for k in 0..p.len() {
            let joins = k > 0 && !is_fixed(p[k]) && !is_fixed(p[k - 1]) && {
                let (a, b) = (p[k - 1], p[k]);
                (1..10).all(|i| d.eval(a + (b - a) * i as f64 / 10.0) >= m * (1.0 - FLAT_DIP))
            };
            match clusters.last_mut() {
                Some(c) if joins => {
                    c.0 += p[k] * w[k];
                    c.1 += w[k];
                }
                _ => clusters.push((p[k] * w[k], w[k])),
            }
        }
        let (pts, ws): (Vec<f64>, Vec<f64>) = clusters.into_iter().map(|c| (c.0 / c.1, c.1)).unzip();
        DesignMeasure::from_unnormalized(pts, ws)
    }

    /// Nearby maxima of the directional derivative for every support point;
    /// common support points stay in place.
    fn polish_targets(&self, design: &DesignMeasure, nu: &[f64]) -> Result<Vec<f64>> {
        let (lo, hi) = self.crit.model.design_interval();
        let len = hi - lo;
        let h = len / (self.grid.count.max(2) - 1) as f64;
        let d = self.crit.derivative(design, nu)?;
        let f = |x: f64| d.eval(x);
        Ok(design
            .points()
            .par_iter()
            .map(|&x| {
                let fixed = self.crit.model.fixed_support().iter().any(|s| (s - x).abs() <= 1e-12 * len);
                if fixed {
                    x
                } else {
                    let (y, v) = refine_max(&f, x, h, self.grid.refinement_rounds, 2.0, lo, hi);
                    if v >= f(x) {
                        y
                    } else {
                        x
                    }
                }
            })
            .collect())
    }
}

/// Replaces points `k - 1` and `k` of a sorted design by their weighted mean.
fn merge_pair(design: &DesignMeasure, k: usize) -> Result<DesignMeasure> {
    let (p, w) = (design.points(), design.weights());
    let mut pts = p.to_vec();
    let mut ws = w.to_vec();
    let tot = w[k - 1] + w[k];
    pts[k - 1] = (p[k - 1] * w[k - 1] + p[k] * w[k]) / tot;
    ws[k - 1] = tot;
    pts.remove(k);
    ws.remove(k);
    DesignMeasure::from_unnormalized(pts, ws)
}

fn dedup(mut v: Vec<f64>, tol: f64) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= tol);
    v
}

fn prune(support: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    prune_below(support, w, PRUNE)
}

fn prune_below(support: &[f64], w: &[f64], threshold: f64) -> (Vec<f64>, Vec<f64>) {
    let wmax = w.iter().copied().fold(0.0, f64::max);
    support
        .iter()
        .zip(w)
        .filter(|(_, wk)| **wk > threshold * wmax)
        .map(|(x, wk)| (*x, *wk))
        .unzip()
}
