//! Joint Newton refinement of support locations and weights for a design
//! with a small, fixed number of support points.
//!
//! Variables are the weights, the free locations and (for the minimum
//! aggregate) an epigraph level `t`. The barrier objective is
//! `tau t + sum_j log(g_j - t) + sum_k log w_k + sum_k log((x_k - lo)(hi - x_k))`
//! for minima and `tau sum_j pi_j g_j + ...` for sums. The objective is not
//! concave in the locations, so the Newton matrix is regularized when needed
//! and every step must increase the objective.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::engine::{Aggregate, Criterion};
use crate::linalg::{InfoMatrix, Score};

const TAU_GAP: f64 = 1e-12;
const MAX_NEWTON: usize = 60;
/// Initial barrier weight relative to the number of barrier terms; large, so
/// the refinement stays near the starting local optimum.
const TAU_START: f64 = 1e6;
/// Smallest eigenvalue of the modified Newton matrix relative to the largest.
const EIGEN_FLOOR: f64 = 1e-12;

pub(crate) struct JointResult {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub duals: Vec<f64>,
}

struct Local {
    f: Vec<Score>,
    df: Vec<Score>,
    d2f: Vec<Score>,
}

fn dot(m: usize, inv: &InfoMatrix, a: &Score, b: &Score) -> f64 {
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..m {
            s += a[i] * inv.get(i, j) * b[j];
        }
    }
    s
}

pub(crate) struct Joint<'c, 'a> {
    pub crit: &'c Criterion<'a>,
    /// Which support points may move.
    pub free: Vec<bool>,
}

impl Joint<'_, '_> {
    fn step(&self) -> f64 {
        1e-6 * self.crit.model.interval_length()
    }

    fn scores(&self, x: &[f64], j: usize) -> Local {
        let b = self.crit.betas[j];
        let h = self.step();
        let model = self.crit.model;
        let mut f = Vec::with_capacity(x.len());
        let mut df = Vec::with_capacity(x.len());
        let mut d2f = Vec::with_capacity(x.len());
        for &xk in x {
            let c = model.score(xk, b);
            let p = model.score(xk + h, b);
            let q = model.score(xk - h, b);
            let mut d1 = [0.0; 3];
            let mut d2 = [0.0; 3];
            for i in 0..3 {
                d1[i] = (p[i] - q[i]) / (2.0 * h);
                d2[i] = (p[i] - 2.0 * c[i] + q[i]) / (h * h);
            }
            f.push(c);
            df.push(d1);
            d2f.push(d2);
        }
        Local { f, df, d2f }
    }

    fn values(&self, x: &[f64], w: &[f64]) -> Option<Vec<f64>> {
        let m = self.crit.model.dim();
        let v: Vec<f64> = (0..self.crit.len())
            .into_par_iter()
            .map(|j| {
                let b = self.crit.betas[j];
                let mut mat = InfoMatrix::zeros(m);
                for (xk, wk) in x.iter().zip(w) {
                    mat.add_outer(*wk, &self.crit.model.score(*xk, b));
                }
                mat.log_det() - self.crit.offsets[j]
            })
            .collect();
        v.iter().all(|g| g.is_finite()).then_some(v)
    }

    /// Gradient and Hessian of component `j` in the variables `(w, x_free)`.
    fn derivatives(&self, x: &[f64], w: &[f64], j: usize, idx: &[usize]) -> Option<(Vec<f64>, DMatrix<f64>)> {
        let m = self.crit.model.dim();
        let n = x.len();
        let nf = idx.len();
        let loc = self.scores(x, j);
        let mut mat = InfoMatrix::zeros(m);
        for k in 0..n {
            mat.add_outer(w[k], &loc.f[k]);
        }
        let inv = mat.inverse()?;
        let a = DMatrix::from_fn(n, n, |k, l| dot(m, &inv, &loc.f[k], &loc.f[l]));
        let bm = DMatrix::from_fn(n, n, |k, l| dot(m, &inv, &loc.f[k], &loc.df[l]));
        let c = DMatrix::from_fn(n, n, |k, l| dot(m, &inv, &loc.df[k], &loc.df[l]));
        let e: Vec<f64> = (0..n).map(|k| dot(m, &inv, &loc.f[k], &loc.d2f[k])).collect();

        let dim = n + nf;
        let mut grad = vec![0.0; dim];
        let mut hess: DMatrix<f64> = DMatrix::zeros(dim, dim);
        for k in 0..n {
            grad[k] = a[(k, k)];
            for l in 0..n {
                hess[(k, l)] = -a[(k, l)] * a[(k, l)];
            }
        }
        for (p, &l) in idx.iter().enumerate() {
            grad[n + p] = 2.0 * w[l] * bm[(l, l)];
            for k in 0..n {
                let delta = if k == l { 2.0 * bm[(l, l)] } else { 0.0 };
                let v = delta - 2.0 * w[l] * a[(k, l)] * bm[(k, l)];
                hess[(k, n + p)] = v;
                hess[(n + p, k)] = v;
            }
            for (q, &k) in idx.iter().enumerate() {
                let mut v = -2.0 * w[k] * w[l] * (bm[(k, l)] * bm[(l, k)] + a[(k, l)] * c[(k, l)]);
                if k == l {
                    v += 2.0 * w[k] * (c[(k, k)] + e[k]);
                }
                hess[(n + q, n + p)] = v;
            }
        }
        Some((grad, hess))
    }

    pub fn refine(&self, x0: &[f64], w0: &[f64]) -> Option<JointResult> {
        let (lo, hi) = self.crit.model.design_interval();
        let idx: Vec<usize> = (0..x0.len()).filter(|&k| self.free[k]).collect();
        let n = x0.len();
        let nf = idx.len();
        let jn = self.crit.len();
        let is_min = self.crit.aggregate == Aggregate::Min;
        let pi = &self.crit.weights;

        let mut x = x0.to_vec();
        let mut w = w0.to_vec();
        let margin = 1e-9 * (hi - lo);
        for &k in &idx {
            x[k] = x[k].clamp(lo + margin, hi - margin);
        }
        let g0 = self.values(&x, &w)?;
        let mut t = g0.iter().copied().fold(f64::INFINITY, f64::min) - 1e-3;
        let n_barrier = (n + 2 * nf + if is_min { jn } else { 0 }) as f64;
        let tau_max = n_barrier / TAU_GAP;
        let mut tau = n_barrier * TAU_START;

        let barrier = |x: &[f64], w: &[f64]| -> f64 {
            let mut b: f64 = w.iter().map(|v| v.ln()).sum();
            for &k in &idx {
                b += (x[k] - lo).ln() + (hi - x[k]).ln();
            }
            b
        };
        let objective = |x: &[f64], w: &[f64], t: f64, g: &[f64], tau: f64| -> f64 {
            let main = if is_min {
                tau * t + g.iter().map(|gj| (gj - t).ln()).sum::<f64>()
            } else {
                tau * g.iter().zip(pi).map(|(a, b)| a * b).sum::<f64>()
            };
            main + barrier(x, w)
        };

        loop {
            let mut prev = f64::INFINITY;
            for _ in 0..MAX_NEWTON {
                let g = self.values(&x, &w)?;
                if is_min && g.iter().any(|gj| *gj <= t) {
                    return None;
                }
                let dim = n + nf + usize::from(is_min);
                let parts: Vec<(Vec<f64>, DMatrix<f64>)> = (0..jn)
                    .into_par_iter()
                    .map(|j| self.derivatives(&x, &w, j, &idx))
                    .collect::<Option<Vec<_>>>()?;
                let mut grad: DVector<f64> = DVector::zeros(dim);
                let mut hess: DMatrix<f64> = DMatrix::zeros(dim, dim);
                for (j, (gj, hj)) in parts.iter().enumerate() {
                    let (c1, c2) = if is_min {
                        let s = g[j] - t;
                        (1.0 / s, 1.0 / (s * s))
                    } else {
                        (tau * pi[j], 0.0)
                    };
                    for p in 0..n + nf {
                        grad[p] += c1 * gj[p];
                        for q in 0..n + nf {
                            hess[(p, q)] += c1 * hj[(p, q)] - c2 * gj[p] * gj[q];
                        }
                        if is_min {
                            hess[(p, n + nf)] += c2 * gj[p];
                            hess[(n + nf, p)] += c2 * gj[p];
                        }
                    }
                    if is_min {
                        hess[(n + nf, n + nf)] -= c2;
                    }
                }
                if is_min {
                    grad[n + nf] = tau - g.iter().map(|gj| 1.0 / (gj - t)).sum::<f64>();
                }
                for k in 0..n {
                    grad[k] += 1.0 / w[k];
                    hess[(k, k)] -= 1.0 / (w[k] * w[k]);
                }
                for (p, &k) in idx.iter().enumerate() {
                    let (u, v) = (x[k] - lo, hi - x[k]);
                    grad[n + p] += 1.0 / u - 1.0 / v;
                    hess[(n + p, n + p)] -= 1.0 / (u * u) + 1.0 / (v * v);
                }
                let scale: Vec<f64> = (0..dim)
                    .map(|i| {
                        if i < n {
                            w[i]
                        } else if i < n + nf {
                            let k = idx[i - n];
                            (x[k] - lo).min(hi - x[k]).min(0.1 * (hi - lo))
                        } else {
                            1.0
                        }
                    })
                    .collect();
                let a = DMatrix::from_fn(dim, dim, |i, j| -hess[(i, j)] * scale[i] * scale[j]);
                let gs = DVector::from_fn(dim, |i, _| grad[i] * scale[i]);
                let cons = DVector::from_fn(dim, |i, _| if i < n { w[i] } else { 0.0 });
                let Some((u, decrement)) = modified_newton(&a, &gs, &cons) else {
                    break;
                };
                let stalled = decrement < 1e-3 && decrement > 0.5 * prev;
                if !decrement.is_finite() || decrement < 1e-14 || stalled {
                    break;
                }
                prev = decrement;
                let dz: Vec<f64> = (0..dim).map(|i| u[i] * scale[i]).collect();
                let mut step: f64 = 1.0;
                for k in 0..n {
                    if dz[k] < 0.0 {
                        step = step.min(-0.99 * w[k] / dz[k]);
                    }
                }
                for (p, &k) in idx.iter().enumerate() {
                    let d = dz[n + p];
                    if d < 0.0 {
                        step = step.min(-0.99 * (x[k] - lo) / d);
                    } else if d > 0.0 {
                        step = step.min(0.99 * (hi - x[k]) / d);
                    }
                }
                let f0 = objective(&x, &w, t, &g, tau);
                let slope = gs.dot(&u);
                let mut accepted = false;
                for _ in 0..50 {
                    let mut wn: Vec<f64> = (0..n).map(|k| w[k] + step * dz[k]).collect();
                    let tot: f64 = wn.iter().sum();
                    wn.iter_mut().for_each(|v| *v /= tot);
                    let mut xn = x.clone();
                    for (p, &k) in idx.iter().enumerate() {
                        xn[k] += step * dz[n + p];
                    }
                    let tn = if is_min { t + step * dz[n + nf] } else { t };
                    if let Some(gn) = self.values(&xn, &wn) {
                        if !is_min || gn.iter().all(|gj| gj - tn > 0.0) {
                            let f1 = objective(&xn, &wn, tn, &gn, tau);
                            let quadratic = decrement < 0.25 && step == 1.0;
                            if f1.is_finite() && (quadratic || f1 >= f0 + 1e-4 * step * slope) {
                                w = wn;
                                x = xn;
                                t = tn;
                                accepted = true;
                                break;
                            }
                        }
                    }
                    step *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            if tau >= tau_max {
                break;
            }
            tau = (tau * 10.0).min(tau_max);
        }
        let duals = if is_min {
            let g = self.values(&x, &w)?;
            let raw: Vec<f64> = g.iter().map(|gj| 1.0 / (tau * (gj - t))).collect();
            let tot: f64 = raw.iter().sum();
            raw.iter().map(|v| v / tot).collect()
        } else {
            pi.to_vec()
        };
        Some(JointResult {
            points: x,
            weights: w,
            duals,
        })
    }
}

/// Newton direction for maximizing with negated Hessian `a` and gradient `g`
/// subject to `c . u = 0` (`c[0] > 0`), with the reduced matrix made positive
/// definite by reflecting and flooring its eigenvalues. Returns the direction and
/// the squared Newton decrement.
fn modified_newton(a: &DMatrix<f64>, g: &DVector<f64>, c: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let dim = a.nrows();
    // a single variable is pinned by the constraint
    if c[0] <= 0.0 || dim < 2 {
        return None;
    }
    let z = DMatrix::from_fn(dim, dim - 1, |i, j| {
        if i == 0 {
            -c[j + 1] / c[0]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let zt = z.transpose();
    let h = &zt * a * &z;
    let h = (&h + h.transpose()) * 0.5;
    let eig = h.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(top > 0.0) || !top.is_finite() {
        return None;
    }
    let floor = EIGEN_FLOOR * top;
    let gr = &zt * g;
    let proj = eig.eigenvectors.transpose() * &gr;
    let mut step = DVector::zeros(dim - 1);
    let mut decrement = 0.0;
    for i in 0..dim - 1 {
        let lam = eig.eigenvalues[i].abs().max(floor);
        let coef = proj[i] / lam;
        decrement += proj[i] * coef;
        step += eig.eigenvectors.column(i) * coef;
    }
    Some((z * step, decrement))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;

    #[test]
    fn pinned_single_weight_has_no_direction() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let g = DVector::from_element(1, 1.0);
        assert!(modified_newton(&a, &g, &g).is_none());
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let model = ModelSpec::exp3();
        let crit = Criterion::min(&model, vec![3.0], vec![0.0]);
        let joint = Joint {
            crit: &crit,
            free: vec![false, true, true, false],
        };
        let x = vec![0.0, 0.2, 0.55, 1.0];
        let w = vec![0.3, 0.25, 0.2, 0.25];
        let idx = vec![1, 2];
        let (g, h) = joint.derivatives(&x, &w, 0, &idx).unwrap();
        let val = |x: &[f64], w: &[f64]| joint.values(x, w).unwrap()[0];
        let eps = 1e-5;
        // variables: w0..w3, x1, x2
        let perturb = |i: usize, s: f64| {
            let mut xx = x.clone();
            let mut ww = w.clone();
            if i < 4 {
                ww[i] += s;
            } else {
                xx[idx[i - 4]] += s;
            }
            (xx, ww)
        };
        for i in 0..6 {
            let (xp, wp) = perturb(i, eps);
            let (xm, wm) = perturb(i, -eps);
            let fd = (val(&xp, &wp) - val(&xm, &wm)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-5 * g[i].abs().max(1.0), "grad {i}: {fd} vs {}", g[i]);
            let (gp, _) = joint.derivatives(&xp, &wp, 0, &idx).unwrap();
            let (gm, _) = joint.derivatives(&xm, &wm, 0, &idx).unwrap();
            for k in 0..6 {
                let fd2 = (gp[k] - gm[k]) / (2.0 * eps);
                assert!(
                    (fd2 - h[(k, i)]).abs() < 1e-3 * h[(k, i)].abs().max(1.0),
                    "hess {k},{i}: {fd2} vs {}",
                    h[(k, i)]
                );
            }
        }
    }
}
