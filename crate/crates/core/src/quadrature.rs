//! Prior distributions on the nonlinear parameter and their quadrature rules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::design::trunc_exp_normalizer;
use crate::error::{DesignError, Result};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
///
/// Newton iteration on `P_n` from the Tricomi initial guesses; accurate to a
/// few ulps for the node counts used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "need at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p, d)
}

/// Kinds of prior on the nonlinear parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorKind {
    Uniform { lo: f64, hi: f64 },
    /// Density `c a e^{-a beta}` on `[0, 1/a)`, `c = (1 - e^{-1})^{-1}`.
    TruncExp { a: f64 },
    /// Equal mass on `{1, ..., L}`.
    DiscreteUniform { l: usize },
    PointMass { beta: f64 },
}

/// A prior together with the number of quadrature nodes used to integrate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterPrior {
    pub kind: PriorKind,
    pub quadrature_nodes: usize,
}

/// Nodes per panel of the composite rule for the truncated exponential.
const PANEL_NODES: usize = 20;

impl ParameterPrior {
    pub const DEFAULT_UNIFORM_NODES: usize = 200;
    pub const DEFAULT_TRUNC_EXP_NODES: usize = 400;

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(DesignError::Usage(format!("uniform prior needs lo < hi, got [{lo}, {hi}]")));
        }
        Ok(ParameterPrior {
            kind: PriorKind::Uniform { lo, hi },
            quadrature_nodes: Self::DEFAULT_UNIFORM_NODES,
        })
    }

    pub fn trunc_exp(a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(DesignError::Usage(format!("truncated exponential needs a in (0, 1), got {a}")));
        }
        Ok(ParameterPrior {
            kind: PriorKind::TruncExp { a },
            quadrature_nodes: Self::DEFAULT_TRUNC_EXP_NODES,
        })
    }

    pub fn discrete_uniform(l: usize) -> Result<Self> {
        if l < 1 {
            return Err(DesignError::Usage("discrete prior needs L >= 1".into()));
        }
        Ok(ParameterPrior {
            kind: PriorKind::DiscreteUniform { l },
            quadrature_nodes: l,
        })
    }

    pub fn point_mass(beta: f64) -> Self {
        ParameterPrior {
            kind: PriorKind::PointMass { beta },
            quadrature_nodes: 1,
        }
    }

    pub fn with_nodes(mut self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(DesignError::Usage("quadrature needs at least one node".into()));
        }
        if matches!(self.kind, PriorKind::Uniform { .. } | PriorKind::TruncExp { .. }) {
            self.quadrature_nodes = n;
        }
        Ok(self)
    }

    /// Closed interval containing the prior's support.
    pub fn support(&self) -> (f64, f64) {
        match self.kind {
            PriorKind::Uniform { lo, hi } => (lo, hi),
            PriorKind::TruncExp { a } => (0.0, 1.0 / a),
            PriorKind::DiscreteUniform { l } => (1.0, l as f64),
            PriorKind::PointMass { beta } => (beta, beta),
        }
    }

    /// Exact prior mass of `[lo, hi]`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        match self.kind {
            PriorKind::Uniform { lo: a, hi: b } => {
                let l = lo.max(a);
                let h = hi.min(b);
                ((h - l) / (b - a)).max(0.0)
            }
            PriorKind::TruncExp { a } => {
                let l = lo.clamp(0.0, 1.0 / a);
                let h = hi.clamp(0.0, 1.0 / a);
                if h <= l {
                    0.0
                } else {
                    trunc_exp_normalizer() * ((-a * l).exp() - (-a * h).exp())
                }
            }
            PriorKind::DiscreteUniform { l } => {
                (1..=l).filter(|&k| (k as f64) >= lo && (k as f64) <= hi).count() as f64 / l as f64
            }
            PriorKind::PointMass { beta } => {
                if beta >= lo && beta <= hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for ParameterPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PriorKind::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
            PriorKind::TruncExp { a } => write!(f, "truncexp:{a}"),
            PriorKind::DiscreteUniform { l } => write!(f, "discrete:{l}"),
            PriorKind::PointMass { beta } => write!(f, "point:{beta}"),
        }
    }
}

impl FromStr for ParameterPrior {
    type Err = DesignError;

    /// `uniform:LO:HI | truncexp:A | discrete:L | point:B`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| DesignError::Usage(format!("bad number '{t}' in prior '{s}'")))
        };
        match parts.as_slice() {
            ["uniform", lo, hi] => Self::uniform(num(lo)?, num(hi)?),
            ["truncexp", a] => Self::trunc_exp(num(a)?),
            ["discrete", l] => {
                let l = l
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| DesignError::Usage(format!("bad count in prior '{s}'")))?;
                Self::discrete_uniform(l)
            }
            ["point", b] => Ok(Self::point_mass(num(b)?)),
            _ => Err(DesignError::Usage(format!(
                "unrecognized prior '{s}' (expected uniform:LO:HI | truncexp:A | discrete:L | point:B)"
            ))),
        }
    }
}

/// Quadrature nodes `(beta, weight)` for the prior; weights sum to one.
pub fn quadrature(prior: &ParameterPrior) -> Vec<(f64, f64)> {
    let mut out = match prior.kind {
        PriorKind::PointMass { beta } => vec![(beta, 1.0)],
        PriorKind::DiscreteUniform { l } => (1..=l).map(|k| (k as f64, 1.0 / l as f64)).collect(),
        PriorKind::Uniform { lo, hi } => {
            let (t, w) = gauss_legendre(prior.quadrature_nodes);
            t.iter()
                .zip(&w)
                .map(|(&t, &w)| (lo + 0.5 * (hi - lo) * (t + 1.0), 0.5 * w))
                .collect()
        }
        PriorKind::TruncExp { a } => {
            let panels = prior.quadrature_nodes.div_ceil(PANEL_NODES).max(1);
            let per = prior.quadrature_nodes.div_ceil(panels);
            let (t, w) = gauss_legendre(per);
            let top = 1.0 / a;
            let c = trunc_exp_normalizer();
            let mut nodes = Vec::with_capacity(panels * per);
            for p in 0..panels {
                let a0 = top * p as f64 / panels as f64;
                let a1 = top * (p + 1) as f64 / panels as f64;
                for (&ti, &wi) in t.iter().zip(&w) {
                    let beta = a0 + 0.5 * (a1 - a0) * (ti + 1.0);
                    nodes.push((beta, 0.5 * (a1 - a0) * wi * c * a * (-a * beta).exp()));
                }
            }
            nodes
        }
    };
    let total: f64 = out.iter().map(|p| p.1).sum();
    for p in out.iter_mut() {
        p.1 /= total;
    }
    out
}
