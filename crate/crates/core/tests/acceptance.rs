//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::f64::consts::{E, LN_2};
use std::process::ExitCode;
use std::time::Instant;

use optdesign::design::det_via_cauchy_binet;
use optdesign::models::{exp_q_closed_form, logistic_q_closed_form, q_efficiency};
use optdesign::theory::{check_uniform_decrease, verify_lower_bounds, DecayEnvelope};
use optdesign::{
    bayes_criterion, information_matrix, maximin_criterion, solve_bayes, solve_local, solve_maximin, BetaGrid,
    BetaSpacing, DesignMeasure, EquivalenceCertificate, GridSpec, ModelSpec, ParameterPrior, ScaleFunction,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_611;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome {
            passed,
            detail: detail.into(),
        }
    }
}

/// Reference column: `(B, points, weights)`.
type Column = (f64, &'static [f64], &'static [f64]);

const TABLE_MAXIMIN: [Column; 5] = [
    (10.0, &[0.142, 0.771], &[0.553, 0.447]),
    (40.0, &[0.037, 0.193, 0.772], &[0.414, 0.272, 0.314]),
    (50.0, &[0.028, 0.131, 0.374, 0.972], &[0.379, 0.221, 0.170, 0.230]),
    (100.0, &[0.014, 0.064, 0.156, 0.287, 0.838], &[0.336, 0.193, 0.093, 0.137, 0.241]),
    (
        200.0,
        &[0.007, 0.034, 0.101, 0.250, 0.326, 0.856],
        &[0.306, 0.182, 0.147, 0.089, 0.066, 0.210],
    ),
];

const TABLE_BAYES: [Column; 7] = [
    (10.0, &[0.182], &[1.000]),
    (40.0, &[0.048, 0.354], &[0.981, 0.019]),
    (50.0, &[0.038, 0.318], &[0.973, 0.027]),
    (100.0, &[0.019, 0.215], &[0.962, 0.038]),
    (200.0, &[0.010, 0.134], &[0.959, 0.041]),
    (300.0, &[0.006, 0.084, 0.236], &[0.957, 0.037, 0.006]),
    (3000.0, &[0.0006, 0.009, 0.055, 1.000], &[0.951, 0.039, 0.006, 0.004]),
];

/// A solved design together with what is needed to re-evaluate its criterion.
struct Solved {
    label: String,
    design: DesignMeasure,
    cert: EquivalenceCertificate,
    kind: Kind,
}

enum Kind {
    Local(ModelSpec, f64),
    Bayes(ModelSpec, ParameterPrior),
    Maximin(ModelSpec, BetaGrid),
}

impl Solved {
    fn value(&self, d: &DesignMeasure) -> f64 {
        match &self.kind {
            Kind::Local(model, beta) => information_matrix(d, model, *beta).unwrap().log_det(),
            Kind::Bayes(model, prior) => bayes_criterion(d, model, prior, false).unwrap(),
            Kind::Maximin(model, grid) => maximin_criterion(d, model, grid).unwrap().0,
        }
    }

    fn model(&self) -> &ModelSpec {
        match &self.kind {
            Kind::Local(m, _) | Kind::Bayes(m, _) | Kind::Maximin(m, _) => m,
        }
    }
}

fn fmt_design(d: &DesignMeasure) -> String {
    let parts: Vec<String> = d.iter().map(|(x, w)| format!("{x:.4}:{w:.4}")).collect();
    format!("[{}]", parts.join(" "))
}

/// Largest point and weight deviations from a reference column, or `None`
/// when the support sizes differ.
fn deviations(d: &DesignMeasure, points: &[f64], weights: &[f64]) -> Option<(f64, f64)> {
    if d.len() != points.len() {
        return None;
    }
    let s = d.sorted();
    let dx = s.points().iter().zip(points).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let dw = s.weights().iter().zip(weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Some((dx, dw))
}

fn criterion_1(solved: &mut Vec<Solved>, counts: &mut Vec<(f64, usize)>) -> Outcome {
    let model = ModelSpec::exp1();
    let mut ok = true;
    let mut lines = Vec::new();
    for (b, points, weights) in TABLE_MAXIMIN {
        let grid = BetaGrid::log(1.0, b).unwrap();
        let start = Instant::now();
        let (d, cert) = solve_maximin(&model, &grid, &GridSpec::default()).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let (phi, _) = maximin_criterion(&d, &model, &grid).unwrap();
        let reference = DesignMeasure::from_unnormalized(points.to_vec(), weights.to_vec()).unwrap();
        let (phi_ref, _) = maximin_criterion(&reference, &model, &grid).unwrap();
        let (tol_x, tol_w) = if b <= 50.0 { (0.01, 0.02) } else { (0.02, f64::INFINITY) };
        let dev = deviations(&d, points, weights);
        let col_ok = cert.passed && dev.is_some_and(|(dx, dw)| dx <= tol_x && dw <= tol_w);
        ok &= col_ok;
        lines.push(format!(
            "  B={b}: {} n={} (ref {}) dev={:?} cert={} max_d={:.8} phi={phi:.6} phi(ref)={phi_ref:.6} {secs:.1}s",
            if col_ok { "ok" } else { "mismatch" },
            d.len(),
            points.len(),
            dev.map(|(a, b)| (format!("{a:.4}"), format!("{b:.4}"))),
            cert.passed,
            cert.max_directional_derivative,
        ));
        lines.push(format!("    design {}", fmt_design(&d)));
        counts.push((b, d.len()));
        solved.push(Solved {
            label: format!("maximin exp1 B={b}"),
            design: d,
            cert,
            kind: Kind::Maximin(model.clone(), grid),
        });
    }
    Outcome::new(ok, lines.join("\n"))
}

fn criterion_2(solved: &mut Vec<Solved>, counts: &mut Vec<(f64, usize)>) -> Outcome {
    let model = ModelSpec::exp1();
    let mut ok = true;
    let mut lines = Vec::new();
    for (b, points, weights) in TABLE_BAYES {
        let prior = ParameterPrior::uniform(1.0, b).unwrap();
        let start = Instant::now();
        let (d, cert) = solve_bayes(&model, &prior, &GridSpec::log_tilted()).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let dev = deviations(&d, points, weights);
        let col_ok = if b < 1000.0 {
            dev.is_some_and(|(dx, dw)| dx <= 0.01 && dw <= 0.01)
        } else {
            let s = d.sorted();
            d.len() == 4
                && (s.points()[3] - 1.0).abs() <= 0.0005
                && (s.weights()[3] - 0.004).abs() <= 0.003
        };
        ok &= col_ok;
        lines.push(format!(
            "  B={b}: {} n={} (ref {}) dev={:?} cert={} {secs:.1}s",
            if col_ok { "ok" } else { "mismatch" },
            d.len(),
            points.len(),
            dev.map(|(a, b)| (format!("{a:.4}"), format!("{b:.4}"))),
            cert.passed,
        ));
        lines.push(format!("    design {}", fmt_design(&d)));
        counts.push((b, d.len()));
        solved.push(Solved {
            label: format!("bayes exp1 B={b}"),
            design: d,
            cert,
            kind: Kind::Bayes(model.clone(), prior),
        });
    }
    Outcome::new(ok, lines.join("\n"))
}

fn criterion_3(solved: &mut Vec<Solved>) -> Outcome {
    let mut ok = true;
    let mut worst = (0.0f64, 0.0f64);
    for beta in [1.0f64, 2.0, 5.0, 10.0, 25.0] {
        let cases = [
            (ModelSpec::exp1(), vec![(1.0 / beta).min(1.0)], 1.0 / (E * beta).powi(2)),
            (ModelSpec::exp2(), vec![0.0, 1.0 / beta], 1.0 / (4.0 * (E * beta).powi(2))),
            (ModelSpec::logistic(30.0).unwrap(), vec![beta], 0.25),
        ];
        for (model, support, det) in cases {
            let (d, cert) = solve_local(&model, beta, &GridSpec::default()).unwrap();
            let s = d.sorted();
            let dx = if s.len() == support.len() {
                s.points().iter().zip(&support).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            } else {
                f64::INFINITY
            };
            let got = information_matrix(&d, &model, beta).unwrap().det();
            let rel = (got - det).abs() / det;
            worst = (worst.0.max(dx), worst.1.max(rel));
            ok &= dx <= 1e-6 && rel <= 1e-8 && cert.passed;
            solved.push(Solved {
                label: format!("local {} beta={beta}", model.name()),
                design: d,
                cert,
                kind: Kind::Local(model, beta),
            });
        }
    }
    Outcome::new(
        ok,
        format!("  max support error {:.2e}, max relative determinant error {:.2e}", worst.0, worst.1),
    )
}

fn criterion_4() -> Outcome {
    let cases = [
        (ModelSpec::exp1(), BetaGrid::new(1.0, 1e3, 100, BetaSpacing::Log).unwrap()),
        (
            ModelSpec::logistic(20.0).unwrap(),
            BetaGrid::new(0.0, 20.0, 100, BetaSpacing::Uniform).unwrap(),
        ),
    ];
    let mut worst = 0.0f64;
    let mut pairs = 0usize;
    for (model, grid) in cases {
        let local = |b: f64| Ok(model.analytic_local(b).unwrap());
        for &b in grid.values() {
            for &bt in grid.values() {
                let q = q_efficiency(&model, b, bt, &local).unwrap().value;
                let closed = if model.name() == "exp1" {
                    exp_q_closed_form(b, bt)
                } else {
                    logistic_q_closed_form(b, bt)
                };
                worst = worst.max((q - closed).abs() / closed.abs().max(f64::MIN_POSITIVE));
                pairs += 1;
            }
        }
    }
    Outcome::new(
        worst <= 1e-10,
        format!("  {pairs} pairs, max relative error {worst:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let betas = BetaGrid::new(1.0, 1e3, 200, BetaSpacing::Log).unwrap();
    let env = DecayEnvelope::exponential(E * E, 2.0).unwrap();
    let r = check_uniform_decrease(&ModelSpec::exp1(), &ScaleFunction::Logarithm, &env, betas.values()).unwrap();
    let lambda = r.lambda_estimate.unwrap_or(f64::NAN);
    let band_ok = (lambda - LN_2).abs() <= 0.01;
    Outcome::new(
        r.passed && band_ok,
        format!(
            "  {} pairs, {} envelope violations (worst margin {:.3}); lambda = {lambda:.4} vs log 2 = {LN_2:.4}",
            r.samples, r.violations, r.worst_margin
        ),
    )
}

fn criterion_6() -> Outcome {
    let range = (1.0, 4f64.exp());
    let mut ok = true;
    let mut lines = Vec::new();
    for model in [ModelSpec::exp1(), ModelSpec::exp2(), ModelSpec::exp3()] {
        let r = verify_lower_bounds(&model, &ScaleFunction::Logarithm, range, LN_2).unwrap();
        let c = &r.constants;
        let mut line = format!(
            "  {}: n={} support={} min efficiency {:.4} vs {:.4} ({} samples, {} violations)",
            model.name(),
            c["n"],
            c["support_points"],
            c["phi"],
            c["pointwise_bound"],
            r.samples,
            r.violations
        );
        let model_ok = if model.name() == "exp1" {
            let phi_ok = c["phi"] >= LN_2 / 8.0;
            let psi_ok = c["psi_st"] >= -4.0 + LN_2.ln();
            line.push_str(&format!(
                "; phi {:.4} >= {:.4}, psi_st {:.4} >= {:.4}",
                c["phi"],
                LN_2 / 8.0,
                c["psi_st"],
                -4.0 + LN_2.ln()
            ));
            phi_ok && psi_ok
        } else {
            r.violations == 0 && c["phi"] >= c["pointwise_bound"]
        };
        ok &= model_ok;
        lines.push(line);
    }
    Outcome::new(ok, lines.join("\n"))
}

/// Random feasible perturbation: weight jitter, point moves, or a new point,
/// at a random scale between 1e-6 and 1e-1.
fn perturb(d: &DesignMeasure, model: &ModelSpec, rng: &mut ChaCha8Rng) -> DesignMeasure {
    let (lo, hi) = model.design_interval();
    let scale = 10f64.powf(rng.gen_range(-6.0..-1.0));
    let mut pts = d.points().to_vec();
    let mut ws = d.weights().to_vec();
    match rng.gen_range(0..3) {
        0 => {
            for w in ws.iter_mut() {
                *w = (*w * (1.0 + scale * rng.gen_range(-1.0..1.0))).max(0.0);
            }
        }
        1 => {
            for x in pts.iter_mut() {
                *x = (*x + scale * (hi - lo) * rng.gen_range(-1.0..1.0)).clamp(lo, hi);
            }
        }
        _ => {
            pts.push(rng.gen_range(lo..hi));
            ws.push(scale);
        }
    }
    DesignMeasure::from_unnormalized(pts, ws).unwrap()
}

fn criterion_7(solved: &[Solved]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut checked = 0;
    let mut worst = (f64::NEG_INFINITY, String::new());
    for s in solved.iter().filter(|s| s.cert.passed) {
        let base = s.value(&s.design);
        for _ in 0..1000 {
            let p = perturb(&s.design, s.model(), &mut rng);
            let gain = (s.value(&p) - base) / base.abs().max(1e-300);
            if gain > worst.0 {
                worst = (gain, s.label.clone());
            }
        }
        checked += 1;
    }
    Outcome::new(
        worst.0 <= 1e-6,
        format!(
            "  {checked} certified designs x 1000 perturbations, largest relative gain {:.2e} ({})",
            worst.0, worst.1
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8);
    let models = [
        ModelSpec::exp1(),
        ModelSpec::exp2(),
        ModelSpec::exp3(),
        ModelSpec::logistic(10.0).unwrap(),
    ];
    let mut worst = 0.0f64;
    let mut skipped = 0usize;
    let mut total = 0usize;
    for model in &models {
        let (lo, hi) = model.design_interval();
        let mut done = 0;
        while done < 10_000 {
            let n = rng.gen_range(model.dim()..=8);
            let pts: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
            let ws: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let d = DesignMeasure::from_unnormalized(pts, ws).unwrap();
            let beta = if model.name() == "logistic" {
                rng.gen_range(0.0..10.0)
            } else {
                rng.gen_range(0.0..50f64.ln()).exp()
            };
            let mm = information_matrix(&d, model, beta).unwrap();
            if mm.is_singular() {
                skipped += 1;
                continue;
            }
            let a = mm.det();
            let b = det_via_cauchy_binet(&d, model, beta).unwrap();
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
            done += 1;
            total += 1;
        }
    }
    Outcome::new(
        worst <= 1e-10,
        format!(
            "  {total} nonsingular designs over 4 models, max relative difference {worst:.2e} ({skipped} numerically singular draws skipped)"
        ),
    )
}

fn criterion_9(maximin: &[(f64, usize)], bayes: &[(f64, usize)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for &(b, nm) in maximin {
        if let Some(&(_, nb)) = bayes.iter().find(|(bb, _)| *bb == b) {
            ok &= nm >= nb;
            parts.push(format!("B={b}: {nm} >= {nb}"));
        }
    }
    Outcome::new(ok, format!("  {}", parts.join(", ")))
}

fn main() -> ExitCode {
    let mut solved = Vec::new();
    let mut maximin_counts = Vec::new();
    let mut bayes_counts = Vec::new();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = f();
        println!(
            "criterion {id} ({name}): {} [{:.1}s]\n{}",
            if out.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            out.detail
        );
        results.push((id, name, out));
    };
    run(1, "maximin table reproduction", &mut || criterion_1(&mut solved, &mut maximin_counts));
    run(2, "bayesian table reproduction", &mut || criterion_2(&mut solved, &mut bayes_counts));
    run(3, "analytic local designs", &mut || criterion_3(&mut solved));
    run(4, "efficiency closed forms", &mut criterion_4);
    run(5, "envelope and band", &mut criterion_5);
    run(6, "lower-bound designs", &mut criterion_6);
    run(7, "certificate soundness", &mut || criterion_7(&solved));
    run(8, "cauchy-binet equivalence", &mut criterion_8);
    run(9, "support-count ordering", &mut || criterion_9(&maximin_counts, &bayes_counts));

    println!("\nsummary");
    for (id, name, out) in &results {
        println!("{} criterion {id}: {name}", if out.passed { "PASS" } else { "FAIL" });
    }
    if results.iter().all(|r| r.2.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
