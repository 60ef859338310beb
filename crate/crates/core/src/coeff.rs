//! The periodic coefficient field `a(y,s)` on `□×J`.
//!
//! Every built-in family is a scalar multiple of the identity; tabulated
//! fields may carry full matrices. Arguments are wrapped into the unit cell
//! before evaluation, so sampling is `(□×J)`-periodic by construction.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Built-in analytic families.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Family {
    Identity,
    /// `(A + B sin 2πy₁)/D`
    LayeredY { a: f64, b: f64, d: f64 },
    /// `(A + B sin 2πs)/D`
    LayeredS { a: f64, b: f64, d: f64 },
    /// `(2 + sin 2πy₁)(2 + sin 2πs)/16`
    Product,
    /// `(2 + sin 2πy₁ · sin 2πs)/4`
    Coupled,
    /// Two-phase field: `alpha` where `⌊2y₁⌋ + ⌊2y₂⌋` is even, `beta` otherwise.
    Checkerboard { alpha: f64, beta: f64 },
}

impl Family {
    pub const NAMES: [&'static str; 6] = ["identity", "layered", "layered-s", "product", "coupled", "checkerboard"];

    /// Looks a family up by name; `params` may override the defaults
    /// (`a`, `b`, `d` for the layered families, `alpha`, `beta` for the
    /// checkerboard).
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let allowed: &[&str] = match name {
            "layered" | "layered-y" | "layered-s" => &["a", "b", "d"],
            "checkerboard" => &["alpha", "beta"],
            "identity" | "product" | "coupled" => &[],
            _ => {
                return Err(Error::Config(format!(
                    "unknown coefficient family '{name}' (known: {})",
                    Self::NAMES.join(", ")
                )))
            }
        };
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!("family '{name}' has no parameter '{k}'")));
        }
        let get = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
        let fam = match name {
            "identity" => Family::Identity,
            "layered" | "layered-y" => Family::LayeredY {
                a: get("a", 2.0),
                b: get("b", 1.0),
                d: get("d", 4.0),
            },
            "layered-s" => Family::LayeredS {
                a: get("a", 2.0),
                b: get("b", 1.0),
                d: get("d", 4.0),
            },
            "product" => Family::Product,
            "coupled" => Family::Coupled,
            _ => Family::Checkerboard {
                alpha: get("alpha", 1.0),
                beta: get("beta", 4.0),
            },
        };
        fam.check()?;
        Ok(fam)
    }

    fn check(&self) -> Result<()> {
        match *self {
            Family::LayeredY { a, b, d } | Family::LayeredS { a, b, d } => {
                if !(d > 0.0 && a > b.abs()) {
                    return Err(Error::Config(format!(
                        "layered family needs d > 0 and a > |b| (got a={a}, b={b}, d={d})"
                    )));
                }
            }
            Family::Checkerboard { alpha, beta } => {
                if !(alpha > 0.0 && beta > 0.0) {
                    return Err(Error::Config("checkerboard phases must be positive".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Ellipticity constants `(λ, Λ)`.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Family::Identity => (1.0, 1.0),
            Family::LayeredY { a, b, d } | Family::LayeredS { a, b, d } => ((a - b.abs()) / d, (a + b.abs()) / d),
            Family::Product => (1.0 / 16.0, 9.0 / 16.0),
            Family::Coupled => (0.25, 0.75),
            Family::Checkerboard { alpha, beta } => (alpha.min(beta), alpha.max(beta)),
        }
    }

    pub fn is_s_independent(&self) -> bool {
        matches!(
            self,
            Family::Identity | Family::LayeredY { .. } | Family::Checkerboard { .. }
        )
    }

    fn scalar(&self, dim: usize, y: [f64; 2], s: f64) -> f64 {
        match *self {
            Family::Identity => 1.0,
            Family::LayeredY { a, b, d } => (a + b * (2.0 * PI * y[0]).sin()) / d,
            Family::LayeredS { a, b, d } => (a + b * (2.0 * PI * s).sin()) / d,
            Family::Product => (2.0 + (2.0 * PI * y[0]).sin()) * (2.0 + (2.0 * PI * s).sin()) / 16.0,
            Family::Coupled => (2.0 + (2.0 * PI * y[0]).sin() * (2.0 * PI * s).sin()) / 4.0,
            Family::Checkerboard { alpha, beta } => {
                let mut k = (2.0 * y[0]).floor() as i64;
                if dim == 2 {
                    k += (2.0 * y[1]).floor() as i64;
                }
                if k.rem_euclid(2) == 0 {
                    alpha
                } else {
                    beta
                }
            }
        }
    }
}

/// Coefficient samples on a periodic `(y, s)` lattice, interpolated
/// multilinearly with periodic wrap.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    pub dim: usize,
    pub ny: usize,
    pub ns: usize,
    /// `values[(is * ny + iy₂) * ny + iy₁]` (no `iy₂` factor in 1D).
    pub values: Vec<Tensor>,
}

impl Tabulated {
    pub fn new(dim: usize, ny: usize, ns: usize, values: Vec<Tensor>) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("tabulated dim must be 1 or 2, got {dim}")));
        }
        if ny == 0 || ns == 0 {
            return Err(Error::Config("tabulated ny and ns must be positive".into()));
        }
        let expected = ny.pow(dim as u32) * ns;
        if values.len() != expected {
            return Err(Error::Validation(format!(
                "tabulated field has {} samples, expected {expected}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|t| !t.is_finite()) {
            return Err(Error::Validation(format!("non-finite tabulated entry at sample {i}")));
        }
        Ok(Tabulated { dim, ny, ns, values })
    }

    /// Parses the CSV layout
    ///
    /// ```text
    /// dim,ny,ns
    /// 2,8,4
    /// iy1,iy2,is,a11,a12,a21,a22
    /// 0,0,0,1.0,0.0,0.0,1.0
    /// ...
    /// ```
    ///
    /// Column-name rows are optional; `#` starts a comment line.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            // header rows contain a non-numeric first column
            if fields[0].parse::<f64>().is_err() {
                continue;
            }
            let nums = fields
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Format(format!("line {}: cannot parse '{f}'", lineno + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push((lineno + 1, nums));
        }
        let Some((line, head)) = rows.first() else {
            return Err(Error::Format("empty coefficient table".into()));
        };
        if head.len() != 3 {
            return Err(Error::Format(format!("line {line}: expected 'dim,ny,ns'")));
        }
        let as_count = |v: f64, what: &str| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Format(format!("line {line}: {what} must be a positive integer")))
            }
        };
        let dim = as_count(head[0], "dim")?;
        let ny = as_count(head[1], "ny")?;
        let ns = as_count(head[2], "ns")?;
        if dim != 1 && dim != 2 {
            return Err(Error::Format(format!("line {line}: dim must be 1 or 2")));
        }
        let nidx = dim + 1;
        let ncols = nidx + dim * dim;
        let total = ny.pow(dim as u32) * ns;
        let mut slots: Vec<Option<Tensor>> = vec![None; total];
        for (line, r) in &rows[1..] {
            if r.len() != ncols {
                return Err(Error::Format(format!("line {line}: expected {ncols} columns, found {}", r.len())));
            }
            let mut idx = [0usize; 3];
            for k in 0..nidx {
                let bound = if k == dim { ns } else { ny };
                let v = r[k];
                if v < 0.0 || v.fract() != 0.0 || v as usize >= bound {
                    return Err(Error::Format(format!("line {line}: index {v} out of range")));
                }
                idx[k] = v as usize;
            }
            let flat = match dim {
                1 => idx[1] * ny + idx[0],
                _ => (idx[2] * ny + idx[1]) * ny + idx[0],
            };
            if slots[flat].is_some() {
                return Err(Error::Format(format!("line {line}: duplicate sample")));
            }
            let t = Tensor::from_row_major(dim, &r[nidx..]);
            if !t.is_finite() {
                return Err(Error::Validation(format!("line {line}: non-finite coefficient entry")));
            }
            slots[flat] = Some(t);
        }
        let missing = slots.iter().filter(|s| s.is_none()).count();
        if missing > 0 {
            return Err(Error::Format(format!("{missing} of {total} lattice samples missing")));
        }
        Self::new(dim, ny, ns, slots.into_iter().map(Option::unwrap).collect())
    }

    fn at(&self, iy: [usize; 2], is: usize) -> &Tensor {
        let ny = self.ny;
        let flat = match self.dim {
            1 => is * ny + iy[0],
            _ => (is * ny + iy[1]) * ny + iy[0],
        };
        &self.values[flat]
    }

    fn interpolate(&self, y: [f64; 2], s: f64) -> Tensor {
        let split = |x: f64, n: usize| -> (usize, usize, f64) {
            let u = x * n as f64;
            let i = (u.floor() as usize).min(n - 1);
            (i, (i + 1) % n, u - i as f64)
        };
        let (s0, s1, ws) = split(s, self.ns);
        let (x0, x1, wx) = split(y[0], self.ny);
        let (y0, y1, wy) = if self.dim == 2 { split(y[1], self.ny) } else { (0, 0, 0.0) };
        let mut acc = Tensor::zeros(self.dim);
        for (is, fs) in [(s0, 1.0 - ws), (s1, ws)] {
            for (iy2, fy) in [(y0, 1.0 - wy), (y1, wy)] {
                for (iy1, fx) in [(x0, 1.0 - wx), (x1, wx)] {
                    let w = fs * fy * fx;
                    if w != 0.0 {
                        acc = acc.axpy(w, self.at([iy1, iy2], is));
                    }
                }
            }
        }
        acc
    }

    /// Range of Rayleigh quotients (of the symmetric part) over the samples.
    pub fn sample_bounds(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
            let (a, b) = t.rayleigh_range();
            (lo.min(a), hi.max(b))
        })
    }

    fn is_s_independent(&self) -> bool {
        let per_slice = self.values.len() / self.ns;
        (1..self.ns).all(|is| self.values[is * per_slice..(is + 1) * per_slice] == self.values[..per_slice])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Family(Family),
    Tabulated(Tabulated),
}

/// The matrix field `a(y,s)` with its ellipticity constants.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub dim: usize,
    pub source: Source,
    /// Constant factor applied to the source.
    pub scale: f64,
    pub lambda: f64,
    pub upper: f64,
}

/// Result of [`CoefficientField::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub resolution: usize,
    pub lambda: f64,
    pub upper: f64,
    pub min_rayleigh: f64,
    pub max_rayleigh: f64,
    pub max_symmetry_defect: f64,
    pub max_periodicity_defect: f64,
    pub passed: bool,
}

impl ValidationReport {
    pub fn summary(&self) -> String {
        format!(
            "{}: Rayleigh range [{:.6e}, {:.6e}] vs bounds [{:.6e}, {:.6e}], symmetry defect {:.3e}, periodicity defect {:.3e} (lattice {})",
            if self.passed { "pass" } else { "FAIL" },
            self.min_rayleigh,
            self.max_rayleigh,
            self.lambda,
            self.upper,
            self.max_symmetry_defect,
            self.max_periodicity_defect,
            self.resolution
        )
    }
}

impl CoefficientField {
    pub fn from_family(family: Family, dim: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("dim must be 1 or 2, got {dim}")));
        }
        family.check()?;
        let (lambda, upper) = family.bounds();
        Ok(CoefficientField {
            dim,
            source: Source::Family(family),
            scale: 1.0,
            lambda,
            upper,
        })
    }

    pub fn from_name(name: &str, dim: usize, params: &BTreeMap<String, f64>) -> Result<Self> {
        Self::from_family(Family::from_name(name, params)?, dim)
    }

    /// Tabulated field; `λ`, `Λ` are the extreme Rayleigh quotients of the
    /// samples, which bound the interpolant as well.
    pub fn from_table(table: Tabulated) -> Self {
        let (lambda, upper) = table.sample_bounds();
        CoefficientField {
            dim: table.dim,
            source: Source::Tabulated(table),
            scale: 1.0,
            lambda,
            upper,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_family(Family::Identity, dim).expect("identity is valid")
    }

    /// `α · a` for `α > 0`.
    pub fn scaled(&self, alpha: f64) -> Self {
        CoefficientField {
            scale: self.scale * alpha,
            lambda: self.lambda * alpha,
            upper: self.upper * alpha,
            ..self.clone()
        }
    }

    pub fn is_s_independent(&self) -> bool {
        match &self.source {
            Source::Family(f) => f.is_s_independent(),
            Source::Tabulated(t) => t.is_s_independent(),
        }
    }

    /// Short human-readable name of the source.
    pub fn describe(&self) -> String {
        let base = match &self.source {
            Source::Family(f) => format!("{f:?}"),
            Source::Tabulated(t) => format!("tabulated(dim={}, ny={}, ns={})", t.dim, t.ny, t.ns),
        };
        if self.scale == 1.0 {
            base
        } else {
            format!("{} x {base}", self.scale)
        }
    }

    /// `a(y,s)` after wrapping `y ↦ y − ⌊y⌋`, `s ↦ s − ⌊s⌋`.
    pub fn sample(&self, y: [f64; 2], s: f64) -> Tensor {
        let wrap = |v: f64| {
            let w = v - v.floor();
            // v slightly below an integer can round up to exactly 1
            if w >= 1.0 {
                0.0
            } else {
                w
            }
        };
        let yw = [wrap(y[0]), if self.dim == 2 { wrap(y[1]) } else { 0.0 }];
        let sw = wrap(s);
        match &self.source {
            Source::Family(f) => Tensor::scalar(self.dim, self.scale * f.scalar(self.dim, yw, sw)),
            Source::Tabulated(t) => t.interpolate(yw, sw).scale(self.scale),
        }
    }

    /// Checks symmetry, ellipticity and periodicity on the lattice
    /// `{k/res}^dim × {l/res}`.
    pub fn validate(&self, resolution: usize) -> Result<ValidationReport> {
        if resolution < 2 {
            return Err(Error::Config(format!("lattice resolution must be >= 2, got {resolution}")));
        }
        let res = resolution as f64;
        let ny2 = if self.dim == 2 { resolution } else { 1 };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut sym: f64 = 0.0;
        let mut per: f64 = 0.0;
        for l in 0..resolution {
            let s = l as f64 / res;
            for j in 0..ny2 {
                for i in 0..resolution {
                    let y = [i as f64 / res, j as f64 / res];
                    let a = self.sample(y, s);
                    let (a_lo, a_hi) = a.rayleigh_range();
                    lo = lo.min(a_lo);
                    hi = hi.max(a_hi);
                    sym = sym.max(a.symmetry_defect());
                    let shifted = self.sample([y[0] + 1.0, y[1] + 1.0], s + 1.0);
                    per = per.max(shifted.max_abs_diff(&a));
                }
            }
        }
        let passed = sym < 1e-12 && lo >= self.lambda - 1e-12 && hi <= self.upper + 1e-12 && lo > 0.0;
        Ok(ValidationReport {
            resolution,
            lambda: self.lambda,
            upper: self.upper,
            min_rayleigh: lo,
            max_rayleigh: hi,
            max_symmetry_defect: sym,
            max_periodicity_defect: per,
            passed,
        })
    }

    /// Midpoint-rule average over `s ∈ (0,1)` with `ns` nodes.
    pub fn time_average(&self, ns: usize) -> Result<CoefficientSliceY> {
        if ns == 0 {
            return Err(Error::Config("time average needs ns >= 1".into()));
        }
        Ok(CoefficientSliceY {
            field: self.clone(),
            mode: SliceMode::Average(ns),
        })
    }
}

/// A coefficient depending on `y` only: either a frozen time slice
/// `a(·, s₀)` or the average `ā(y) = ∫₀¹ a(y,s) ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSliceY {
    field: CoefficientField,
    mode: SliceMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SliceMode {
    Frozen(f64),
    /// Midpoint rule with `ns` nodes.
    Average(usize),
}

impl CoefficientSliceY {
    pub fn frozen(field: &CoefficientField, s: f64) -> Self {
        CoefficientSliceY {
            field: field.clone(),
            mode: SliceMode::Frozen(s),
        }
    }

    pub fn dim(&self) -> usize {
        self.field.dim
    }

    pub fn lambda(&self) -> f64 {
        self.field.lambda
    }

    pub fn upper(&self) -> f64 {
        self.field.upper
    }

    pub fn sample(&self, y: [f64; 2]) -> Tensor {
        match self.mode {
            SliceMode::Frozen(s) => self.field.sample(y, s),
            SliceMode::Average(_) if self.field.is_s_independent() => self.field.sample(y, 0.0),
            SliceMode::Average(ns) => {
                let unit = CoefficientField {
                    scale: 1.0,
                    ..self.field.clone()
                };
                let mut acc = Tensor::zeros(self.field.dim);
                for j in 0..ns {
                    acc = acc.add(&unit.sample(y, (j as f64 + 0.5) / ns as f64));
                }
                acc.scale(self.field.scale / ns as f64)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layered(dim: usize) -> CoefficientField {
        CoefficientField::from_name("layered", dim, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn layered_quarter_point() {
        let a = layered(1).sample([0.25, 0.0], 0.3);
        assert!((a.get(0, 0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn builtin_families_validate() {
        for name in Family::NAMES {
            for dim in [1, 2] {
                let c = CoefficientField::from_name(name, dim, &BTreeMap::new()).unwrap();
                let rep = c.validate(64).unwrap();
                assert!(rep.passed, "{name} dim {dim}: {}", rep.summary());
                assert!(rep.max_periodicity_defect < 1e-12);
            }
        }
    }

    #[test]
    fn unknown_family_and_parameter_rejected() {
        assert!(matches!(
            CoefficientField::from_name("plaid", 1, &BTreeMap::new()),
            Err(Error::Config(_))
        ));
        let mut p = BTreeMap::new();
        p.insert("alpha".to_string(), 1.0);
        assert!(CoefficientField::from_name("layered", 1, &p).is_err());
        let mut p = BTreeMap::new();
        p.insert("b".to_string(), 3.0);
        assert!(CoefficientField::from_name("layered", 1, &p).is_err());
    }

    #[test]
    fn time_average_of_s_independent_field_is_exact() {
        let c = layered(2);
        let avg = c.time_average(7).unwrap();
        for y in [[0.1, 0.2], [0.77, 0.5]] {
            assert_eq!(avg.sample(y), c.sample(y, 0.4));
        }
    }

    #[test]
    fn time_average_of_separable_field() {
        let c = CoefficientField::from_name("layered-s", 1, &BTreeMap::new())
            .unwrap()
            .scaled(2.0);
        // (2 + sin 2πs)/2 averages to 1
        let avg = c.time_average(16).unwrap();
        assert!((avg.sample([0.3, 0.0]).get(0, 0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn asymmetric_table_fails_validation() {
        let text = "dim,ny,ns\n2,2,1\niy1,iy2,is,a11,a12,a21,a22\n\
                    0,0,0,1,0.2,0,1\n1,0,0,1,0.2,0,1\n0,1,0,1,0.2,0,1\n1,1,0,1,0.2,0,1\n";
        let t = Tabulated::parse_csv(text).unwrap();
        let rep = CoefficientField::from_table(t).validate(4).unwrap();
        assert!(!rep.passed);
        assert!(rep.max_symmetry_defect > 0.0);
    }

    #[test]
    fn table_rejects_missing_and_nonfinite_entries() {
        assert!(Tabulated::parse_csv("dim,ny,ns\n1,2,1\n0,0,1\n").is_err());
        let err = Tabulated::parse_csv("dim,ny,ns\n1,2,1\n0,0,1\n1,0,NaN\n").unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn table_interpolates_periodically() {
        let vals = vec![Tensor::scalar(1, 1.0), Tensor::scalar(1, 3.0)];
        let c = CoefficientField::from_table(Tabulated::new(1, 2, 1, vals).unwrap());
        assert!((c.sample([0.25, 0.0], 0.0).get(0, 0) - 2.0).abs() < 1e-15);
        assert!((c.sample([0.75, 0.0], 0.0).get(0, 0) - 2.0).abs() < 1e-15);
        assert_eq!(c.lambda, 1.0);
        assert_eq!(c.upper, 3.0);
        assert!(c.validate(8).unwrap().passed);
    }
}
