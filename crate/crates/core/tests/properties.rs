use optdesign::design::{det_via_cauchy_binet, gram_determinant, information_matrix};
use optdesign::theory::{lower_bound_parameters, lower_bound_size};
use optdesign::{
    bayes_criterion, maximin_criterion, BetaGrid, BetaSpacing, DesignMeasure, ModelSpec, ParameterPrior,
    ScaleFunction,
};
use proptest::prelude::*;

fn model(idx: usize) -> ModelSpec {
    match idx {
        0 => ModelSpec::exp1(),
        1 => ModelSpec::exp2(),
        2 => ModelSpec::exp3(),
        _ => ModelSpec::logistic(10.0).unwrap(),
    }
}

fn beta_for(model: &ModelSpec, u: f64) -> f64 {
    if model.name() == "logistic" {
        10.0 * u
    } else {
        (u * 50f64.ln()).exp()
    }
}

fn design_for(model: &ModelSpec, raw: &[(f64, f64)]) -> DesignMeasure {
    let (lo, hi) = model.design_interval();
    let pts = raw.iter().map(|p| lo + (hi - lo) * p.0).collect();
    let ws = raw.iter().map(|p| 0.01 + p.1).collect();
    DesignMeasure::from_unnormalized(pts, ws).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cauchy_binet_matches_determinant(
        idx in 0usize..4,
        u in 0.0f64..1.0,
        raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..8),
    ) {
        let model = model(idx);
        let beta = beta_for(&model, u);
        let d = design_for(&model, &raw);
        let mm = information_matrix(&d, &model, beta).unwrap();
        prop_assume!(!mm.is_singular());
        let det = mm.det();
        let cb = det_via_cauchy_binet(&d, &model, beta).unwrap();
        prop_assert!((det - cb).abs() <= 1e-10 * cb.abs().max(det.abs()) + 1e-300, "{det} vs {cb}");
    }

    #[test]
    fn gram_determinant_is_symmetric_and_vanishes_on_repeats(
        idx in 1usize..3,
        u in 0.0f64..1.0,
        x in prop::collection::vec(0.0f64..1.0, 3),
    ) {
        let model = model(idx);
        let beta = beta_for(&model, u);
        let m = model.dim();
        let pts = &x[..m];
        let mut rev = pts.to_vec();
        rev.reverse();
        let a = gram_determinant(pts, &model, beta).unwrap();
        let b = gram_determinant(&rev, &model, beta).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!(rel_close(a, b, 1e-9) || (a - b).abs() < 1e-300);
        let mut rep = pts.to_vec();
        rep[m - 1] = rep[0];
        prop_assert!(gram_determinant(&rep, &model, beta).unwrap().abs() < 1e-15);
    }

    #[test]
    fn information_is_linear_in_the_design(
        idx in 0usize..4,
        u in 0.0f64..1.0,
        a in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..5),
        b in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..5),
        t in 0.0f64..1.0,
    ) {
        let model = model(idx);
        let beta = beta_for(&model, u);
        let (da, db) = (design_for(&model, &a), design_for(&model, &b));
        let mix = DesignMeasure::mixture(&[(t, &da), (1.0 - t, &db)]);
        prop_assume!(mix.is_ok());
        let mm = information_matrix(&mix.unwrap(), &model, beta).unwrap();
        let expect = information_matrix(&da, &model, beta)
            .unwrap()
            .scaled(t)
            .add(&information_matrix(&db, &model, beta).unwrap().scaled(1.0 - t));
        let m = model.dim();
        for i in 0..m {
            for j in 0..m {
                prop_assert!((mm.get(i, j) - expect.get(i, j)).abs() <= 1e-12 * (1.0 + expect.get(i, j).abs()));
            }
        }
    }

    #[test]
    fn bayes_criterion_is_concave(
        a in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..5),
        b in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..5),
        t in 0.0f64..1.0,
    ) {
        let model = ModelSpec::exp2();
        let prior = ParameterPrior::uniform(1.0, 20.0).unwrap().with_nodes(24).unwrap();
        let (da, db) = (design_for(&model, &a), design_for(&model, &b));
        let va = bayes_criterion(&da, &model, &prior, false).unwrap();
        let vb = bayes_criterion(&db, &model, &prior, false).unwrap();
        prop_assume!(va.is_finite() && vb.is_finite());
        let mix = DesignMeasure::mixture(&[(t, &da), (1.0 - t, &db)]).unwrap();
        let vm = bayes_criterion(&mix, &model, &prior, false).unwrap();
        prop_assert!(vm >= t * va + (1.0 - t) * vb - 1e-9 * (1.0 + va.abs().max(vb.abs())));
    }

    #[test]
    fn maximin_value_does_not_increase_on_a_larger_grid(
        raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..5),
        b in 2.0f64..100.0,
        extra in prop::collection::vec(0.0f64..1.0, 1..10),
    ) {
        let model = ModelSpec::exp1();
        let d = design_for(&model, &raw);
        let coarse = BetaGrid::new(1.0, b, 7, BetaSpacing::Log).unwrap();
        let mut values = coarse.values().to_vec();
        values.extend(extra.iter().map(|u| 1.0 + (b - 1.0) * u));
        let fine = BetaGrid::from_values(values).unwrap();
        let (vc, _) = maximin_criterion(&d, &model, &coarse).unwrap();
        let (vf, _) = maximin_criterion(&d, &model, &fine).unwrap();
        prop_assert!(vf <= vc + 1e-15);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&vf));
    }

    #[test]
    fn lower_bound_centres_are_evenly_spaced_and_cover(
        lo_log in 0.0f64..2.0,
        width in 0.0f64..1.0,
        lambda in 0.1f64..2.0,
        probe in 0.0f64..1.0,
    ) {
        let scale = ScaleFunction::Logarithm;
        let lo = lo_log.exp();
        let hi = (lo_log + 4.0 * lambda + 20.0 * width).exp();
        let (b, n) = lower_bound_size(&scale, lo, hi, lambda).unwrap();
        let c = lower_bound_parameters(&scale, lo, hi, lambda).unwrap();
        prop_assert_eq!(c.len(), n);
        prop_assert!(b / n as f64 <= 2.0 * lambda * (1.0 + 1e-12));
        for w in c.windows(2) {
            prop_assert!(rel_close(scale.distance(w[0], w[1]), b / n as f64, 1e-9));
        }
        let beta = (lo.ln() + probe * b).exp();
        let nearest = c.iter().map(|&ck| scale.distance(beta, ck)).fold(f64::INFINITY, f64::min);
        prop_assert!(nearest <= lambda * (1.0 + 1e-9));
    }
}
