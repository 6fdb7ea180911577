mod args;
mod document;
mod output;

use std::f64::consts::{E, LN_2};
use std::fs;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::Parser;
use optdesign::bayes::logistic_for_prior;
use optdesign::grid::Spacing;
use optdesign::local::directional_derivative;
use optdesign::quadrature::quadrature;
use optdesign::theory::{
    check_dominance, check_uniform_decrease, growth_study, verify_lower_bounds, DecayEnvelope, GrowthCriterion,
    TheoryReport,
};
use optdesign::{
    bayes_criterion, efficiency_curve, information_matrix, maximin_criterion, solve_bayes, solve_local,
    solve_maximin, verify_bayes, verify_local, verify_maximin, BetaGrid, BetaSpacing, DesignError, DesignMeasure,
    EquivalenceCertificate, GridSpec, ModelSpec, ParameterPrior, ScaleFunction,
};

use args::{
    BayesArgs, BetaSpacingArg, Check, Cli, Command, GrowthArgs, GrowthCriterionArg, LocalArgs, MaximinArgs,
    ModelArgs, OutputArgs, ScaleArg, TheoryArgs, VerifyArgs, XGridArgs, XSpacing,
};
use document::{DesignDocument, ModelRef, Problem, VerifyReport};

const THREADS_VAR: &str = "OPTDESIGN_THREADS";

/// How a command ended; maps onto the process exit status.
enum Failure {
    /// Bad flags or arguments (exit 2).
    Usage(String),
    /// Solver, certificate or I/O failure (exit 1).
    Failed(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<DesignError>() {
            Some(DesignError::Usage(_) | DesignError::Domain { .. } | DesignError::Precondition(_)) => {
                Failure::Usage(format!("{e:#}"))
            }
            _ => Failure::Failed(e),
        }
    }
}

impl From<DesignError> for Failure {
    fn from(e: DesignError) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

type CmdResult = Result<bool, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Local(a) => run_local(a),
        Command::Bayes(a) => run_bayes(a),
        Command::Maximin(a) => run_maximin(a),
        Command::Verify(a) => run_verify(a),
        Command::Theory(a) => run_theory(a),
        Command::Growth(a) => run_growth(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("certificate or check failed");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Failed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_VAR} must be a positive integer, got '{raw}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_number(s: &str, what: &str) -> Result<f64, Failure> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| usage(format!("{what}: '{s}' is not a finite number")))
}

/// Parses `LO:HI`.
fn parse_range(s: &str) -> Result<(f64, f64), Failure> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| usage(format!("range '{s}' must look like LO:HI")))?;
    let (lo, hi) = (parse_number(lo, "range")?, parse_number(hi, "range")?);
    if !(lo < hi) {
        return Err(usage(format!("range '{s}' needs LO < HI")));
    }
    Ok((lo, hi))
}

fn parse_prior(s: &str, nodes: Option<usize>) -> Result<ParameterPrior, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    let prior = match parts.as_slice() {
        ["uniform", lo, hi] => ParameterPrior::uniform(parse_number(lo, "prior")?, parse_number(hi, "prior")?)?,
        ["trunc-exp", a] => ParameterPrior::trunc_exp(parse_number(a, "prior")?)?,
        ["discrete", l] => {
            let l = l.parse().map_err(|_| usage(format!("discrete prior size '{l}' is not an integer")))?;
            ParameterPrior::discrete_uniform(l)?
        }
        ["point", b] => ParameterPrior::point_mass(parse_number(b, "prior")?),
        _ => {
            return Err(usage(format!(
                "prior '{s}' must be uniform:LO:HI, trunc-exp:A, discrete:L or point:BETA"
            )))
        }
    };
    match nodes {
        Some(n) => Ok(prior.with_nodes(n)?),
        None => Ok(prior),
    }
}

fn parse_envelope(s: &str) -> Result<DecayEnvelope, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["exponential", c1, g] => Ok(DecayEnvelope::exponential(
            parse_number(c1, "envelope")?,
            parse_number(g, "envelope")?,
        )?),
        ["power", c1, g] => Ok(DecayEnvelope::power(parse_number(c1, "envelope")?, parse_number(g, "envelope")?)?),
        _ => Err(usage(format!("envelope '{s}' must be exponential:C1:GAMMA or power:C1:GAMMA"))),
    }
}

fn x_grid(args: &XGridArgs, default: Spacing) -> Result<GridSpec, Failure> {
    let spacing = match args.grid_spacing {
        Some(XSpacing::Uniform) => Spacing::Uniform,
        Some(XSpacing::LogTilted) => Spacing::LogTilted,
        None => default,
    };
    let grid = GridSpec {
        spacing,
        ..GridSpec::default().with_count(args.grid_count)
    };
    Ok(grid)
}

/// Builds the model; logistic intervals default to `default_x_max`.
fn build_model(args: &ModelArgs, default_x_max: f64) -> Result<(ModelSpec, ModelRef), Failure> {
    let x_max = (args.model == "logistic").then(|| args.x_max.unwrap_or(default_x_max));
    let model = ModelSpec::by_name(&args.model, x_max)?;
    let r = ModelRef {
        name: args.model.clone(),
        x_max,
    };
    Ok((model, r))
}

fn model_from_ref(r: &ModelRef) -> Result<ModelSpec, Failure> {
    Ok(ModelSpec::by_name(&r.name, r.x_max)?)
}

/// Directional derivative averaged with `weights` over parameter values.
fn derivative_curve(
    design: &DesignMeasure,
    model: &ModelSpec,
    weights: &[(f64, f64)],
    grid: &GridSpec,
) -> Result<Vec<(f64, f64)>, Failure> {
    let (lo, hi) = model.design_interval();
    grid.points(lo, hi)
        .into_iter()
        .map(|x| {
            let mut d = 0.0;
            for &(b, w) in weights {
                if w > 0.0 {
                    d += w * directional_derivative(design, model, b, x)?;
                }
            }
            Ok((x, d))
        })
        .collect()
}

fn derivative_weights(problem: &Problem, cert: &EquivalenceCertificate) -> Vec<(f64, f64)> {
    match problem {
        Problem::Local { beta } => vec![(*beta, 1.0)],
        Problem::Bayes { prior } => quadrature(prior),
        Problem::Maximin { .. } => cert
            .least_favorable_weights
            .as_ref()
            .map(|v| v.iter().map(|bw| (bw.beta, bw.weight)).collect())
            .unwrap_or_default(),
    }
}

fn efficiency_betas(problem: &Problem) -> Result<Option<BetaGrid>, Failure> {
    Ok(match problem {
        Problem::Local { .. } => None,
        Problem::Bayes { prior } => Some(BetaGrid::from_values(quadrature(prior).iter().map(|n| n.0).collect())?),
        Problem::Maximin { beta_grid } => Some(beta_grid.clone()),
    })
}

fn write_curves(doc: &DesignDocument, model: &ModelSpec, out: &OutputArgs) -> Result<(), Failure> {
    if let Some(path) = &out.derivative_curve {
        let weights = derivative_weights(&doc.problem, &doc.certificate);
        let curve = derivative_curve(&doc.design, model, &weights, &doc.grid)?;
        output::write_columns(path, &curve)?;
    }
    if let Some(path) = &out.efficiency_curve {
        let grid = efficiency_betas(&doc.problem)?
            .ok_or_else(|| usage("efficiency curves need a bayes or maximin problem"))?;
        let curve = efficiency_curve(&doc.design, model, &grid)?;
        output::write_columns(path, &curve)?;
    }
    Ok(())
}

fn emit(doc: &DesignDocument, model: &ModelSpec, out: &OutputArgs) -> CmdResult {
    output::write_json(out.out.as_deref(), doc)?;
    write_curves(doc, model, out)?;
    Ok(doc.certificate.passed)
}

fn run_local(a: LocalArgs) -> CmdResult {
    let (model, mref) = build_model(&a.model, (2.0 * a.beta).max(10.0))?;
    let grid = x_grid(&a.grid, Spacing::Uniform)?;
    let (design, certificate) = solve_local(&model, a.beta, &grid)?;
    let value = information_matrix(&design, &model, a.beta)?.log_det();
    let doc = DesignDocument {
        model: mref,
        problem: Problem::Local { beta: a.beta },
        grid,
        design,
        value,
        certificate,
    };
    emit(&doc, &model, &a.output)
}

fn run_bayes(a: BayesArgs) -> CmdResult {
    let prior = parse_prior(&a.prior, a.nodes)?;
    let default_x_max = logistic_for_prior(&prior)?.design_interval().1;
    let (model, mref) = build_model(&a.model, default_x_max)?;
    let grid = x_grid(&a.grid, Spacing::LogTilted)?;
    let (design, certificate) = solve_bayes(&model, &prior, &grid)?;
    let value = bayes_criterion(&design, &model, &prior, true)?;
    let doc = DesignDocument {
        model: mref,
        problem: Problem::Bayes { prior },
        grid,
        design,
        value,
        certificate,
    };
    emit(&doc, &model, &a.output)
}

fn run_maximin(a: MaximinArgs) -> CmdResult {
    let (lo, hi) = parse_range(&a.beta_range)?;
    let spacing = match a.beta_spacing {
        BetaSpacingArg::Log => BetaSpacing::Log,
        BetaSpacingArg::Uniform => BetaSpacing::Uniform,
    };
    let beta_grid = BetaGrid::new(lo, hi, a.beta_count, spacing)?;
    let (model, mref) = build_model(&a.model, (2.0 * hi).max(10.0))?;
    let grid = x_grid(&a.grid, Spacing::Uniform)?;
    let (design, certificate) = solve_maximin(&model, &beta_grid, &grid)?;
    let (value, _) = maximin_criterion(&design, &model, &beta_grid)?;
    let doc = DesignDocument {
        model: mref,
        problem: Problem::Maximin { beta_grid },
        grid,
        design,
        value,
        certificate,
    };
    emit(&doc, &model, &a.output)
}

fn run_verify(a: VerifyArgs) -> CmdResult {
    let text = fs::read_to_string(&a.design).with_context(|| format!("reading {}", a.design.display()))?;
    let mut doc: DesignDocument =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.design.display()))?;
    let model = model_from_ref(&doc.model)?;
    let (certificate, value) = match &doc.problem {
        Problem::Local { beta } => (
            verify_local(&doc.design, &model, *beta, &doc.grid)?,
            information_matrix(&doc.design, &model, *beta)?.log_det(),
        ),
        Problem::Bayes { prior } => (
            verify_bayes(&doc.design, &model, prior, &doc.grid)?,
            bayes_criterion(&doc.design, &model, prior, true)?,
        ),
        Problem::Maximin { beta_grid } => (
            verify_maximin(&doc.design, &model, beta_grid, &doc.grid)?,
            maximin_criterion(&doc.design, &model, beta_grid)?.0,
        ),
    };
    let report = VerifyReport {
        passed: certificate.passed,
        value,
        certificate: certificate.clone(),
    };
    output::write_json(a.output.out.as_deref(), &report)?;
    doc.certificate = certificate;
    write_curves(&doc, &model, &a.output)?;
    Ok(report.passed)
}

fn default_scale(model: &ModelSpec, arg: Option<ScaleArg>) -> ScaleFunction {
    match arg {
        Some(ScaleArg::Identity) => ScaleFunction::Identity,
        Some(ScaleArg::Log) => ScaleFunction::Logarithm,
        None if model.name() == "logistic" => ScaleFunction::Identity,
        None => ScaleFunction::Logarithm,
    }
}

fn beta_samples(range: (f64, f64), count: usize, scale: &ScaleFunction) -> Result<BetaGrid, Failure> {
    let spacing = match scale {
        ScaleFunction::Logarithm => BetaSpacing::Log,
        _ => BetaSpacing::Uniform,
    };
    Ok(BetaGrid::new(range.0, range.1, count, spacing)?)
}

/// All strictly increasing `m`-tuples from `count` evenly spaced points.
fn point_tuples(model: &ModelSpec, count: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let m = model.dim();
    if count < m {
        return Err(usage(format!("--points must be at least {m}")));
    }
    let (lo, hi) = model.design_interval();
    let xs = optdesign::grid::uniform(lo, hi, count);
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        out.push(idx.iter().map(|&i| xs[i]).collect());
        let Some(k) = (0..m).rev().find(|&k| idx[k] < count - m + k) else {
            return Ok(out);
        };
        idx[k] += 1;
        for j in (k + 1)..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn run_theory(a: TheoryArgs) -> CmdResult {
    let logistic = a.model.model == "logistic";
    let range = match &a.beta_range {
        Some(s) => parse_range(s)?,
        None => match (a.check, logistic) {
            (Check::LowerBound, false) => (1.0, 4f64.exp()),
            (_, false) => (1.0, 1e3),
            (_, true) => (0.0, a.model.x_max.unwrap_or(20.0)),
        },
    };
    let (model, _) = build_model(&a.model, range.1.max(10.0))?;
    let scale = default_scale(&model, a.scale);
    let report: TheoryReport = match a.check {
        Check::QDecay => {
            let envelope = match &a.envelope {
                Some(s) => parse_envelope(s)?,
                None if logistic => DecayEnvelope::exponential(4.0 * E, 1.0)?,
                None => DecayEnvelope::exponential(E * E, 2.0)?,
            };
            let betas = beta_samples(range, a.samples, &scale)?;
            check_uniform_decrease(&model, &scale, &envelope, betas.values())?
        }
        Check::Dominance => {
            let tuples = point_tuples(&model, a.points)?;
            let betas = beta_samples(range, a.samples, &scale)?;
            check_dominance(&model, &tuples, &betas)?
        }
        Check::LowerBound => {
            let lambda = a.lambda.unwrap_or(if logistic { 1.0 } else { LN_2 });
            verify_lower_bounds(&model, &scale, range, lambda)?
        }
    };
    output::write_json(a.out.as_deref(), &report)?;
    Ok(report.passed)
}

fn run_growth(a: GrowthArgs) -> CmdResult {
    let top = a.b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (model, _) = build_model(&a.model, (2.0 * top).max(10.0))?;
    let criterion = match a.criterion {
        GrowthCriterionArg::Maximin => GrowthCriterion::Maximin,
        GrowthCriterionArg::Bayes => GrowthCriterion::BayesUniform,
    };
    let rows = growth_study(&model, criterion, &a.b)?;
    output::write_growth_csv(a.out.as_deref(), &rows)?;
    for row in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("B = {}: {}", row.b, row.error.as_deref().unwrap_or_default());
    }
    if rows.iter().all(|r| r.error.is_some()) {
        return Err(Failure::Failed(anyhow!("every row of the growth study failed")));
    }
    Ok(rows.iter().all(|r| r.passed))
}
