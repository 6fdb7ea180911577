//! Fixed-size symmetric matrices for parameter dimensions up to three.
//!
//! Determinants and inverses use closed forms (cofactor expansion). Entries
//! carry a compensation term and the determinant is evaluated in
//! double-double arithmetic, so nearly collinear score vectors keep their
//! relative accuracy.

use serde::{Deserialize, Serialize};

/// Largest parameter dimension handled by the closed-form routines.
pub const MAX_DIM: usize = 3;

/// A Fisher score vector `f(x, beta)`; entries past the model dimension are zero.
pub type Score = [f64; MAX_DIM];

/// Relative singularity threshold: `det <= SINGULAR_RATIO * prod(diag)`.
///
/// Hadamard's inequality bounds `det` by the diagonal product for PSD
/// matrices, so the ratio is scale-free in each parameter.
pub const SINGULAR_RATIO: f64 = 1e-13;

/// Symmetric `m x m` information matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoMatrix {
    m: usize,
    a: [[f64; MAX_DIM]; MAX_DIM],
    /// Rounding error of each entry of `a`.
    #[serde(default)]
    lo: [[f64; MAX_DIM]; MAX_DIM],
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy, Debug)]
struct Dd {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    #[inline]
    fn new(hi: f64, lo: f64) -> Self {
        let (h, l) = two_sum(hi, lo);
        Dd { hi: h, lo: l }
    }

    #[inline]
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        Dd::new(s, e + self.lo + o.lo)
    }

    #[inline]
    fn sub(self, o: Dd) -> Dd {
        self.add(Dd { hi: -o.hi, lo: -o.lo })
    }

    #[inline]
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        Dd::new(p, e + self.hi * o.lo + self.lo * o.hi)
    }
}

impl InfoMatrix {
    pub fn zeros(m: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&m), "dimension {m} not supported");
        InfoMatrix {
            m,
            a: [[0.0; MAX_DIM]; MAX_DIM],
            lo: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    #[inline]
    fn entry(&self, i: usize, j: usize) -> Dd {
        Dd {
            hi: self.a[i][j],
            lo: self.lo[i][j],
        }
    }

    pub fn identity(m: usize) -> Self {
        let mut out = Self::zeros(m);
        for i in 0..m {
            out.a[i][i] = 1.0;
        }
        out
    }

    /// Builds a matrix from row-major entries; the input is symmetrized.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let m = rows.len();
        let mut out = Self::zeros(m);
        for i in 0..m {
            for j in 0..m {
                out.a[i][j] = 0.5 * (rows[i][j] + rows[j][i]);
            }
        }
        out
    }

    /// `w * f f^T` added in place.
    #[inline]
    pub fn add_outer(&mut self, w: f64, f: &Score) {
        for i in 0..self.m {
            let (wh, wl) = two_prod(w, f[i]);
            for j in i..self.m {
                let (p, e) = two_prod(wh, f[j]);
                let term = Dd::new(p, e + wl * f[j]);
                let sum = self.entry(i, j).add(term);
                self.a[i][j] = sum.hi;
                self.lo[i][j] = sum.lo;
            }
        }
        for i in 0..self.m {
            for j in 0..i {
                self.a[i][j] = self.a[j][i];
                self.lo[i][j] = self.lo[j][i];
            }
        }
    }

    pub fn outer(m: usize, f: &Score) -> Self {
        let mut out = Self::zeros(m);
        out.add_outer(1.0, f);
        out
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| self.a[i][..self.m].to_vec()).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.m).map(|i| self.a[i][i]).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = *self;
        for i in 0..MAX_DIM {
            for j in 0..MAX_DIM {
                let v = self.entry(i, j).mul(Dd { hi: s, lo: 0.0 });
                out.a[i][j] = v.hi;
                out.lo[i][j] = v.lo;
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.m, other.m);
        let mut out = *self;
        for i in 0..MAX_DIM {
            for j in 0..MAX_DIM {
                let v = self.entry(i, j).add(other.entry(i, j));
                out.a[i][j] = v.hi;
                out.lo[i][j] = v.lo;
            }
        }
        out
    }

    pub fn det(&self) -> f64 {
        let a = |i, j| self.entry(i, j);
        let d = match self.m {
            1 => a(0, 0),
            2 => a(0, 0).mul(a(1, 1)).sub(a(0, 1).mul(a(1, 0))),
            _ => {
                let c0 = a(1, 1).mul(a(2, 2)).sub(a(1, 2).mul(a(2, 1)));
                let c1 = a(1, 0).mul(a(2, 2)).sub(a(1, 2).mul(a(2, 0)));
                let c2 = a(1, 0).mul(a(2, 1)).sub(a(1, 1).mul(a(2, 0)));
                a(0, 0).mul(c0).sub(a(0, 1).mul(c1)).add(a(0, 2).mul(c2))
            }
        };
        d.hi + d.lo
    }

    fn diag_product(&self) -> f64 {
        (0..self.m).map(|i| self.a[i][i]).product()
    }

    pub fn is_singular(&self) -> bool {
        let scale = self.diag_product();
        if !(scale > 0.0) || !scale.is_finite() {
            return true;
        }
        let d = self.det();
        !(d > SINGULAR_RATIO * scale)
    }

    /// `log det`, or `f64::NEG_INFINITY` when the matrix is singular.
    pub fn log_det(&self) -> f64 {
        if self.is_singular() {
            f64::NEG_INFINITY
        } else {
            self.det().ln()
        }
    }

    /// Inverse via the adjugate; `None` for singular matrices.
    pub fn inverse(&self) -> Option<Self> {
        if self.is_singular() {
            return None;
        }
        let a = &self.a;
        let d = self.det();
        let mut inv = Self::zeros(self.m);
        match self.m {
            1 => inv.a[0][0] = 1.0 / a[0][0],
            2 => {
                inv.a[0][0] = a[1][1] / d;
                inv.a[1][1] = a[0][0] / d;
                inv.a[0][1] = -a[0][1] / d;
                inv.a[1][0] = inv.a[0][1];
            }
            _ => {
                let c = |i: usize, j: usize| {
                    let r: Vec<usize> = (0..3).filter(|&k| k != i).collect();
                    let s: Vec<usize> = (0..3).filter(|&k| k != j).collect();
                    let minor = a[r[0]][s[0]] * a[r[1]][s[1]] - a[r[0]][s[1]] * a[r[1]][s[0]];
                    if (i + j) % 2 == 0 {
                        minor
                    } else {
                        -minor
                    }
                };
                for i in 0..3 {
                    for j in i..3 {
                        // inverse = adj / det, adj(i,j) = cofactor(j,i)
                        let v = c(j, i) / d;
                        inv.a[i][j] = v;
                        inv.a[j][i] = v;
                    }
                }
            }
        }
        Some(inv)
    }

    /// `f^T A g`.
    #[inline]
    pub fn bilinear(&self, f: &Score, g: &Score) -> f64 {
        let mut s = 0.0;
        for i in 0..self.m {
            let mut row = 0.0;
            for j in 0..self.m {
                row += self.a[i][j] * g[j];
            }
            s += f[i] * row;
        }
        s
    }

    #[inline]
    pub fn quad_form(&self, f: &Score) -> f64 {
        self.bilinear(f, f)
    }

    /// `trace(self * other)` for symmetric matrices.
    pub fn trace_product(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.m {
            for j in 0..self.m {
                s += self.a[i][j] * other.a[j][i];
            }
        }
        s
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.m {
            for j in 0..self.m {
                worst = worst.max((self.a[i][j] - self.a[j][i]).abs());
            }
        }
        worst
    }

    /// `true` when every eigenvalue is at least `-rel_tol * trace`.
    ///
    /// Checks all principal minors of the shifted matrix `A + rel_tol * trace * I`.
    pub fn is_psd(&self, rel_tol: f64) -> bool {
        let slack = rel_tol * self.trace().abs();
        let mut s = *self;
        for i in 0..self.m {
            s.a[i][i] += slack;
        }
        let n = self.m;
        for i in 0..n {
            if s.a[i][i] < 0.0 {
                return false;
            }
            for j in (i + 1)..n {
                if s.a[i][i] * s.a[j][j] - s.a[i][j] * s.a[j][i] < 0.0 {
                    return false;
                }
            }
        }
        n < 3 || s.det() >= 0.0
    }
}

/// Determinant of an `m x m` matrix given by columns (each column a score),
/// evaluated in double-double arithmetic.
pub fn det_columns(m: usize, cols: &[Score]) -> f64 {
    debug_assert_eq!(cols.len(), m);
    let e = |k: usize, i: usize| Dd { hi: cols[k][i], lo: 0.0 };
    let minor = |r0: usize, r1: usize, k0: usize, k1: usize| e(k0, r0).mul(e(k1, r1)).sub(e(k1, r0).mul(e(k0, r1)));
    let d = match m {
        1 => e(0, 0),
        2 => minor(0, 1, 0, 1),
        _ => e(0, 0)
            .mul(minor(1, 2, 1, 2))
            .sub(e(1, 0).mul(minor(1, 2, 0, 2)))
            .add(e(2, 0).mul(minor(1, 2, 0, 1))),
    };
    d.hi + d.lo
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_log_det() {
        assert_eq!(InfoMatrix::identity(2).log_det(), 0.0);
        assert_eq!(InfoMatrix::identity(3).log_det(), 0.0);
    }

    #[test]
    fn rank_one_is_singular() {
        let m = InfoMatrix::outer(2, &[1.0, -0.3, 0.0]);
        assert!(m.is_singular());
        assert_eq!(m.log_det(), f64::NEG_INFINITY);
    }

    #[test]
    fn inverse_round_trip_3x3() {
        let m = InfoMatrix::from_rows(&[
            vec![2.0, 0.3, 0.1],
            vec![0.3, 1.5, -0.2],
            vec![0.1, -0.2, 0.9],
        ]);
        let inv = m.inverse().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += m.get(i, k) * inv.get(k, j);
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn det_columns_matches_gram() {
        let cols = [[1.0, 2.0, 0.5], [0.0, 1.0, 3.0], [2.0, -1.0, 1.0]];
        let d = det_columns(3, &cols);
        let mut g = InfoMatrix::zeros(3);
        for c in &cols {
            g.add_outer(1.0, c);
        }
        assert!((g.det() - d * d).abs() < 1e-10 * d * d);
    }
}
