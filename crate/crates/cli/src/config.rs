//! Run configuration files and the shipped scenario library.
//!
//! A configuration is TOML with four sections:
//!
//! ```toml
//! name = "layered-linear"
//!
//! [problem]
//! p = 1.0
//! r = 1.0
//! dim = 1            # optional, default 1
//! length = 1.0       # optional, default 1
//! horizon = 0.25
//! initial = "sin(pi*x)"
//! forcing = "0"      # optional, default 0
//!
//! [coefficient]
//! family = "layered" # or file = "table.csv"
//! params = { a = 2.0, b = 1.0, d = 4.0 }
//! scale = 1.0        # optional
//!
//! [study]
//! epsilons = [0.25, 0.125, 0.0625]
//! cells_per_period = 16
//! steps_per_period = 16
//! compare = ["supercritical"]
//!
//! [solver]           # optional, every key optional
//! newton_tolerance = 1e-9
//! ```
//!
//! Optional top-level keys `output` and `threads` give the default output
//! directory and thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use homoglab::cell::Regime;
use homoglab::coeff::{CoefficientField, Tabulated};
use homoglab::corrector::StudyConfig;
use homoglab::diffusion::{Data, StepperConfig};
use homoglab::cell::PeriodicConfig;
use serde::Deserialize;
use toml::Spanned;

use crate::expr::Expr;

pub const SCENARIOS: [(&str, &str); 7] = [
    ("identity-sanity", include_str!("../scenarios/identity-sanity.toml")),
    ("layered-linear", include_str!("../scenarios/layered-linear.toml")),
    ("layered-fde", include_str!("../scenarios/layered-fde.toml")),
    ("supercritical", include_str!("../scenarios/supercritical.toml")),
    ("critical-pme", include_str!("../scenarios/critical-pme.toml")),
    ("critical-fde", include_str!("../scenarios/critical-fde.toml")),
    ("coupled-gap", include_str!("../scenarios/coupled-gap.toml")),
];

/// Rejected input, with the location it came from.
#[derive(Debug)]
pub struct InvalidInput(pub String);

impl fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    #[allow(dead_code)]
    description: Option<String>,
    output: Option<String>,
    threads: Option<Spanned<usize>>,
    problem: RawProblem,
    coefficient: Spanned<RawCoefficient>,
    study: RawStudy,
    #[serde(default)]
    solver: RawSolver,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    p: Spanned<f64>,
    r: Spanned<f64>,
    dim: Option<Spanned<usize>>,
    length: Option<Spanned<f64>>,
    horizon: Spanned<f64>,
    initial: Spanned<String>,
    forcing: Option<Spanned<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoefficient {
    family: Option<Spanned<String>>,
    file: Option<Spanned<String>>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    scale: Option<Spanned<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStudy {
    epsilons: Spanned<Vec<f64>>,
    cells_per_period: Option<Spanned<usize>>,
    steps_per_period: Option<Spanned<usize>>,
    #[serde(default)]
    compare: Vec<Spanned<String>>,
    spot_checks: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    newton_tolerance: Option<f64>,
    max_newton: Option<usize>,
    max_halvings: Option<usize>,
    linear_tolerance: Option<f64>,
    max_linear_iterations: Option<usize>,
    period_tolerance: Option<f64>,
    max_periods: Option<usize>,
    accelerate: Option<bool>,
}

/// A parsed and validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub study: StudyConfig,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
}

/// Where a configuration came from, for error messages and relative paths.
struct Origin<'a> {
    label: String,
    text: &'a str,
    base: PathBuf,
}

impl Origin<'_> {
    fn line(&self, offset: usize) -> usize {
        self.text[..offset.min(self.text.len())].matches('\n').count() + 1
    }

    fn at<T>(&self, spanned: &Spanned<T>, msg: impl fmt::Display) -> InvalidInput {
        InvalidInput(format!("{}:{}: {msg}", self.label, self.line(spanned.span().start)))
    }
}

pub fn scenario_names() -> impl Iterator<Item = &'static str> {
    SCENARIOS.iter().map(|(n, _)| *n)
}

pub fn scenario_text(name: &str) -> Result<&'static str, InvalidInput> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
        InvalidInput(format!(
            "unknown scenario '{name}' (shipped: {})",
            scenario_names().collect::<Vec<_>>().join(", ")
        ))
    })
}

pub fn load_scenario(name: &str) -> Result<RunConfig, InvalidInput> {
    parse(scenario_text(name)?, &format!("scenario {name}"), Path::new("."))
}

pub fn load_file(path: &Path) -> Result<RunConfig, InvalidInput> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse(&text, &path.display().to_string(), &base)
}

fn expression(origin: &Origin, s: &Spanned<String>, what: &str) -> Result<Data, InvalidInput> {
    let e = Expr::parse(s.get_ref()).map_err(|e| origin.at(s, format!("{what} '{}': {e}", s.get_ref())))?;
    if e.is_zero() {
        return Ok(Data::Zero);
    }
    let description = e.source().to_string();
    Ok(Data::closed(description, move |x, t| e.eval(x, t)))
}

pub fn parse(text: &str, label: &str, base: &Path) -> Result<RunConfig, InvalidInput> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| format!(":{}", text[..s.start].matches('\n').count() + 1)).unwrap_or_default();
        InvalidInput(format!("{label}{line}: {}", e.message()))
    })?;
    let origin = Origin {
        label: label.to_string(),
        text,
        base: base.to_path_buf(),
    };
    let pr = &raw.problem;

    let p = *pr.p.get_ref();
    if !(p > 0.0 && p.is_finite()) {
        return Err(origin.at(&pr.p, format!("p must be positive, got {p}")));
    }
    let r = *pr.r.get_ref();
    if !(r > 0.0 && r.is_finite()) {
        return Err(origin.at(&pr.r, format!("r must be positive, got {r}")));
    }
    Regime::classify(p, r).map_err(|e| origin.at(&pr.r, e))?;
    let dim = pr.dim.as_ref().map_or(1, |d| *d.get_ref());
    if let Some(d) = &pr.dim {
        if dim != 1 && dim != 2 {
            return Err(origin.at(d, format!("dim must be 1 or 2, got {dim}")));
        }
    }
    let length = pr.length.as_ref().map_or(1.0, |l| *l.get_ref());
    if let Some(l) = &pr.length {
        if !(length > 0.0 && length.is_finite()) {
            return Err(origin.at(l, format!("length must be positive, got {length}")));
        }
    }
    let horizon = *pr.horizon.get_ref();
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(origin.at(&pr.horizon, format!("horizon must be positive, got {horizon}")));
    }
    let initial = expression(&origin, &pr.initial, "initial")?;
    let forcing = match &pr.forcing {
        Some(f) => expression(&origin, f, "forcing")?,
        None => Data::Zero,
    };

    let coefficient = coefficient(&origin, &raw.coefficient, dim)?;

    let st = &raw.study;
    let epsilons = st.epsilons.get_ref().clone();
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(origin.at(&st.epsilons, format!("epsilons must be a non-empty list in (0, 1], got {epsilons:?}")));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(origin.at(&st.epsilons, format!("epsilons must be strictly decreasing, got {epsilons:?}")));
    }
    let per_period = |v: &Option<Spanned<usize>>, what: &str| -> Result<usize, InvalidInput> {
        match v {
            None => Ok(16),
            Some(n) if *n.get_ref() >= 8 => Ok(*n.get_ref()),
            Some(n) => Err(origin.at(n, format!("{what} must be at least 8, got {}", n.get_ref()))),
        }
    };
    let cells_per_period = per_period(&st.cells_per_period, "cells_per_period")?;
    let steps_per_period = per_period(&st.steps_per_period, "steps_per_period")?;
    let compare_regimes = st
        .compare
        .iter()
        .map(|c| Regime::from_name(c.get_ref()).map_err(|e| origin.at(c, e)))
        .collect::<Result<Vec<_>, _>>()?;

    let defaults = StepperConfig::default();
    let sv = &raw.solver;
    let mut stepper = StepperConfig {
        newton_tolerance: sv.newton_tolerance.unwrap_or(defaults.newton_tolerance),
        max_newton: sv.max_newton.unwrap_or(defaults.max_newton),
        max_halvings: sv.max_halvings.unwrap_or(defaults.max_halvings),
        ..defaults
    };
    stepper.linear.tolerance = sv.linear_tolerance.unwrap_or(stepper.linear.tolerance);
    if sv.max_linear_iterations.is_some() {
        stepper.linear.max_iterations = sv.max_linear_iterations;
    }
    let mut periodic = PeriodicConfig::default();
    periodic.tolerance = sv.period_tolerance.unwrap_or(periodic.tolerance);
    periodic.max_periods = sv.max_periods.unwrap_or(periodic.max_periods);
    periodic.accelerate = sv.accelerate.unwrap_or(periodic.accelerate);
    periodic.linear = stepper.linear;

    let study = StudyConfig {
        name: raw.name.clone().unwrap_or_else(|| label.to_string()),
        p,
        r,
        dim,
        domain_length: length,
        horizon,
        epsilons,
        cells_per_period,
        steps_per_period,
        coefficient,
        initial,
        forcing,
        stepper,
        periodic,
        compare_regimes,
        spot_checks: st.spot_checks.unwrap_or(5),
        seed: st.seed.unwrap_or(0),
    };
    for &e in &study.epsilons {
        study.grid_for(e).map_err(|err| origin.at(&st.epsilons, err))?;
    }
    study
        .validate()
        .map_err(|e| InvalidInput(format!("{}: {e}", origin.label)))?;

    let threads = match &raw.threads {
        Some(t) if *t.get_ref() == 0 => return Err(origin.at(t, "threads must be positive")),
        Some(t) => Some(*t.get_ref()),
        None => None,
    };
    Ok(RunConfig {
        study,
        output: raw.output.map(PathBuf::from),
        threads,
    })
}

fn coefficient(origin: &Origin, raw: &Spanned<RawCoefficient>, dim: usize) -> Result<CoefficientField, InvalidInput> {
    let c = raw.get_ref();
    let field = match (&c.family, &c.file) {
        (Some(f), None) => CoefficientField::from_name(f.get_ref(), dim, &c.params).map_err(|e| origin.at(f, e))?,
        (None, Some(f)) => {
            if !c.params.is_empty() {
                return Err(origin.at(raw, "params only apply to named families"));
            }
            let path = origin.base.join(f.get_ref());
            let table = Tabulated::from_csv(&path).map_err(|e| origin.at(f, format!("{}: {e}", path.display())))?;
            if table.dim != dim {
                return Err(origin.at(f, format!("table is {}-dimensional, problem is {dim}-dimensional", table.dim)));
            }
            CoefficientField::from_table(table)
        }
        _ => return Err(origin.at(raw, "give exactly one of 'family' or 'file'")),
    };
    match &c.scale {
        Some(s) if !(*s.get_ref() > 0.0 && s.get_ref().is_finite()) => {
            Err(origin.at(s, format!("scale must be positive, got {}", s.get_ref())))
        }
        Some(s) => Ok(field.scaled(*s.get_ref())),
        None => Ok(field),
    }
}
