//! Scenario files: a flat, sectioned `key = value` format.
//!
//! ```text
//! # classic pair on the quadratic cost
//! [cost]
//! builtin = j1
//!
//! [axis]
//! generator = classic
//! k = 1
//!
//! [dither]
//! eps = 0.1
//!
//! [run]
//! x0 = 0.0
//! t_end = 10.0
//! sample_stride = 400
//!
//! [mode]
//! kind = es
//! ```
//!
//! `[axis]` repeats once per coordinate.  Costs and generators are either
//! builtin names or expressions (`expr = 2*(x1-1)^2`, `f1 = z` / `f0 = 1`).
//! Optional sections: `[vib]` (when `kind = vib`), `[checks]` (assertions
//! applied after a simulation), `[certificate]` (inputs for `certify`).
//! Unknown sections, unknown keys, and duplicate keys are parse errors with
//! file/line locations.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use esvf::costs::{builtin_cost, CostConstants, CostProfile};
use esvf::dithers::DitherPair;
use esvf::dynamics::{EsAxis, EsSystem, StateMap, VibSystem};
use esvf::expr::Expr;
use esvf::generators::{builtin_generator, from_f1_f0, GeneratorPair, ScalarFn};
use esvf::{Error, Result};

#[derive(Debug, Clone)]
pub enum CostSpec {
    Builtin { name: String, params: Vec<f64> },
    Custom { expr: String, minimizer: Vec<f64>, min_value: f64 },
}

#[derive(Debug, Clone)]
pub enum GenSpec {
    Builtin { name: String, params: Vec<f64> },
    Custom { f1: String, f0: String, z_ref: f64, domain: (f64, f64) },
}

#[derive(Debug, Clone)]
pub struct AxisSpec {
    pub gen: GenSpec,
    pub k: u32,
    /// Adds a constant to `F2`, deliberately breaking the generator identity;
    /// used to exercise verification failure paths.
    pub f2_offset: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub h: Option<f64>,
    pub sample_stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Es,
    Lie,
    Vib,
}

#[derive(Debug, Clone)]
pub struct VibSpec {
    pub drift: String,
    pub input: String,
    pub mu: f64,
    pub alpha: f64,
    pub averaged: bool,
}

/// Post-simulation assertions; every field is optional.
#[derive(Debug, Clone, Default)]
pub struct Checks {
    /// `||x(t_end) - x*|| <= v`.
    pub final_dist: Option<f64>,
    /// `J(x(t_end)) - J* <= v`.
    pub final_cost: Option<f64>,
    /// `||x(t) - x*|| <= v` for every sample with `t >= ball_from`.
    pub ball_radius: Option<f64>,
    pub ball_from: f64,
    /// Late-window peak control <= v * early-window peak (vanishing gains).
    pub control_decay_ratio: Option<f64>,
    /// Late-window peak control >= v * early-window peak (persistent dither).
    pub control_floor_ratio: Option<f64>,
    /// Per-period cost contraction rate for `check_descent`.
    pub descent_lambda: Option<f64>,
    pub descent_m1: f64,
    pub descent_m_tilde: f64,
    pub envelope: Option<EnvelopeCheck>,
    /// Reference trajectory CSV to diff against (with `compare_tolerance`).
    pub compare_to: Option<PathBuf>,
    pub compare_tolerance: f64,
}

/// Explicit-amplitude decay envelope: `amplitude * phi(lambda (t - eps)) + rho`.
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeCheck {
    pub lambda: f64,
    pub rho: f64,
    pub m_tilde: f64,
    pub m1: f64,
    /// Defaults to `||x0 - x*||` at check time.
    pub amplitude: Option<f64>,
    /// Defaults to `J(x0) - J*` at check time.
    pub j0: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum LambdaBar {
    Absolute(f64),
    /// Fraction of `alpha1 * kappa1`, resolved once the gain constants are
    /// known.
    Fraction(f64),
}

#[derive(Debug, Clone)]
pub struct CertSpec {
    pub delta: f64,
    pub delta0: f64,
    pub delta_cap: f64,
    pub lambda_bar: LambdaBar,
    pub grid_points: usize,
    pub follow_up: bool,
    pub follow_up_periods: usize,
    /// Gain floor for non-vanishing pairs; estimated from `F0` when absent.
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub rho0: Option<f64>,
    pub rho_min: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub cost: CostSpec,
    /// Declared regularity constants (all six keys or none).
    pub cost_constants: Option<CostConstants>,
    pub axes: Vec<AxisSpec>,
    pub eps: f64,
    pub run: RunSpec,
    pub mode: Mode,
    pub vib: Option<VibSpec>,
    pub checks: Checks,
    pub certificate: Option<CertSpec>,
}

// ---------------------------------------------------------------------------
// Raw sectioned key-value layer
// ---------------------------------------------------------------------------

struct RawEntry {
    key: String,
    value: String,
    line: usize,
}

struct RawSection {
    name: String,
    line: usize,
    entries: Vec<RawEntry>,
}

fn parse_raw(text: &str, file: &str) -> Result<Vec<RawSection>> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let name = inner.strip_suffix(']').ok_or_else(|| {
                Error::config(format!("{file}:{line_no}: section header is missing `]`"))
            })?;
            let name = name.trim().to_ascii_lowercase();
            if name.is_empty() {
                return Err(Error::config(format!(
                    "{file}:{line_no}: empty section name"
                )));
            }
            sections.push(RawSection {
                name,
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(format!(
                "{file}:{line_no}: expected `key = value` or `[section]`, got `{line}`"
            )));
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::config(format!("{file}:{line_no}: empty key")));
        }
        let Some(section) = sections.last_mut() else {
            return Err(Error::config(format!(
                "{file}:{line_no}: `{key}` appears before any [section] header"
            )));
        };
        if section.entries.iter().any(|e| e.key == key) {
            return Err(Error::config(format!(
                "{file}:{line_no}: duplicate key `{key}` in [{}]",
                section.name
            )));
        }
        section.entries.push(RawEntry {
            key,
            value,
            line: line_no,
        });
    }
    Ok(sections)
}

/// Typed access to one section instance.
struct View<'a> {
    sec: &'a RawSection,
    file: &'a str,
}

impl<'a> View<'a> {
    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for e in &self.sec.entries {
            if !allowed.contains(&e.key.as_str()) {
                return Err(Error::config(format!(
                    "{}:{}: unknown key `{}` in [{}] (allowed: {})",
                    self.file,
                    e.line,
                    e.key,
                    self.sec.name,
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&'a RawEntry> {
        self.sec.entries.iter().find(|e| e.key == key)
    }

    fn str_opt(&self, key: &str) -> Option<&'a str> {
        self.raw(key).map(|e| e.value.as_str())
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => parse_f64(&e.value)
                .map(Some)
                .ok_or_else(|| self.bad(e, "a number")),
        }
    }

    fn f64_req(&self, key: &str) -> Result<f64> {
        self.f64_opt(key)?.ok_or_else(|| self.missing(key))
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(e) => e
                .value
                .parse::<usize>()
                .map_err(|_| self.bad(e, "a non-negative integer")),
        }
    }

    fn u32_req(&self, key: &str) -> Result<u32> {
        let e = self.raw(key).ok_or_else(|| self.missing(key))?;
        e.value
            .parse::<u32>()
            .map_err(|_| self.bad(e, "a non-negative integer"))
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some(e) => match e.value.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(self.bad(e, "a boolean (true/false)")),
            },
        }
    }

    fn list_or_empty(&self, key: &str) -> Result<Vec<f64>> {
        match self.raw(key) {
            None => Ok(Vec::new()),
            Some(e) => parse_f64_list(&e.value).ok_or_else(|| self.bad(e, "a comma-separated list of numbers")),
        }
    }

    fn list_req(&self, key: &str) -> Result<Vec<f64>> {
        let e = self.raw(key).ok_or_else(|| self.missing(key))?;
        let v = parse_f64_list(&e.value).ok_or_else(|| self.bad(e, "a comma-separated list of numbers"))?;
        if v.is_empty() {
            return Err(self.bad(e, "a non-empty list of numbers"));
        }
        Ok(v)
    }

    fn missing(&self, key: &str) -> Error {
        Error::config(format!(
            "{}:{}: [{}] is missing required key `{key}`",
            self.file, self.sec.line, self.sec.name
        ))
    }

    fn bad(&self, e: &RawEntry, expected: &str) -> Error {
        Error::config(format!(
            "{}:{}: `{}` must be {expected}, got `{}`",
            self.file, e.line, e.key, e.value
        ))
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "inf" | "+inf" => Some(f64::INFINITY),
        _ => s.parse::<f64>().ok().filter(|v| !v.is_nan()),
    }
}

fn parse_f64_list(s: &str) -> Option<Vec<f64>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|p| parse_f64(p.trim())).collect()
}

// ---------------------------------------------------------------------------
// Typed scenario assembly
// ---------------------------------------------------------------------------

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read scenario `{}`: {e}", path.display()))
        })?;
        let label = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        let mut scn = Scenario::parse(&text, &label)?;
        // Parse errors cite the full file name; the display name drops the
        // extension.
        if let Some(stem) = path.file_stem() {
            scn.name = stem.to_string_lossy().into_owned();
        }
        Ok(scn)
    }

    /// `file` labels parse errors (a file stem or path).
    pub fn parse(text: &str, file: &str) -> Result<Scenario> {
        let sections = parse_raw(text, file)?;
        for sec in &sections {
            match sec.name.as_str() {
                "cost" | "axis" | "dither" | "run" | "mode" | "vib" | "checks" | "certificate" => {}
                other => {
                    return Err(Error::config(format!(
                        "{file}:{}: unknown section [{other}]",
                        sec.line
                    )))
                }
            }
        }
        let one = |name: &str| -> Result<Option<View<'_>>> {
            let mut found = None;
            for sec in sections.iter().filter(|s| s.name == name) {
                if found.is_some() {
                    return Err(Error::config(format!(
                        "{file}:{}: section [{name}] appears more than once",
                        sec.line
                    )));
                }
                found = Some(View { sec, file });
            }
            Ok(found)
        };
        let require = |name: &str| -> Result<View<'_>> {
            one(name)?.ok_or_else(|| Error::config(format!("{file}: missing section [{name}]")))
        };

        let cost_view = require("cost")?;
        cost_view.check_keys(&[
            "builtin", "params", "expr", "minimizer", "min_value", "m1", "gamma1", "gamma2",
            "kappa1", "kappa2", "mu",
        ])?;
        let cost = match (cost_view.str_opt("builtin"), cost_view.str_opt("expr")) {
            (Some(name), None) => CostSpec::Builtin {
                name: name.to_string(),
                params: cost_view.list_or_empty("params")?,
            },
            (None, Some(expr)) => CostSpec::Custom {
                expr: expr.to_string(),
                minimizer: cost_view.list_req("minimizer")?,
                min_value: cost_view.f64_or("min_value", 0.0)?,
            },
            (Some(_), Some(_)) => {
                return Err(Error::config(format!(
                    "{file}:{}: [cost] declares both `builtin` and `expr`; pick one",
                    cost_view.sec.line
                )))
            }
            (None, None) => {
                return Err(Error::config(format!(
                    "{file}:{}: [cost] needs either `builtin` or `expr`",
                    cost_view.sec.line
                )))
            }
        };
        let constant_keys = ["m1", "gamma1", "gamma2", "kappa1", "kappa2", "mu"];
        let present = constant_keys
            .iter()
            .filter(|k| cost_view.raw(k).is_some())
            .count();
        let cost_constants = match present {
            0 => None,
            6 => Some(CostConstants {
                m1: cost_view.f64_req("m1")?,
                gamma1: cost_view.f64_req("gamma1")?,
                gamma2: cost_view.f64_req("gamma2")?,
                kappa1: cost_view.f64_req("kappa1")?,
                kappa2: cost_view.f64_req("kappa2")?,
                mu: cost_view.f64_req("mu")?,
            }),
            _ => {
                return Err(Error::config(format!(
                    "{file}:{}: [cost] declares {present} of the 6 regularity constants \
                     (m1, gamma1, gamma2, kappa1, kappa2, mu); declare all or none",
                    cost_view.sec.line
                )))
            }
        };

        let mut axes = Vec::new();
        for sec in sections.iter().filter(|s| s.name == "axis") {
            let v = View { sec, file };
            v.check_keys(&["generator", "params", "k", "f2_offset", "f1", "f0", "z_ref", "domain"])?;
            let gen = match (v.str_opt("generator"), v.str_opt("f1")) {
                (Some(name), None) => GenSpec::Builtin {
                    name: name.to_string(),
                    params: v.list_or_empty("params")?,
                },
                (None, Some(f1)) => {
                    let f0 = v
                        .str_opt("f0")
                        .ok_or_else(|| v.missing("f0"))?
                        .to_string();
                    let dom = v.list_req("domain")?;
                    if dom.len() != 2 {
                        return Err(Error::config(format!(
                            "{file}:{}: `domain` must be `lo, hi`",
                            sec.line
                        )));
                    }
                    GenSpec::Custom {
                        f1: f1.to_string(),
                        f0,
                        z_ref: v.f64_req("z_ref")?,
                        domain: (dom[0], dom[1]),
                    }
                }
                (Some(_), Some(_)) => {
                    return Err(Error::config(format!(
                        "{file}:{}: [axis] declares both `generator` and `f1`; pick one",
                        sec.line
                    )))
                }
                (None, None) => {
                    return Err(Error::config(format!(
                        "{file}:{}: [axis] needs either `generator` or an `f1`/`f0` pair",
                        sec.line
                    )))
                }
            };
            axes.push(AxisSpec {
                gen,
                k: v.u32_req("k")?,
                f2_offset: v.f64_opt("f2_offset")?,
            });
        }
        if axes.is_empty() {
            return Err(Error::config(format!("{file}: missing section [axis]")));
        }

        let dither = require("dither")?;
        dither.check_keys(&["eps"])?;
        let eps = dither.f64_req("eps")?;

        let run_view = require("run")?;
        run_view.check_keys(&["x0", "t_end", "h", "sample_stride"])?;
        let run = RunSpec {
            x0: run_view.list_req("x0")?,
            t_end: run_view.f64_req("t_end")?,
            h: run_view.f64_opt("h")?,
            sample_stride: run_view.usize_or("sample_stride", 400)?,
        };

        let mode = match one("mode")? {
            None => Mode::Es,
            Some(v) => {
                v.check_keys(&["kind", "averaged"])?;
                match v.str_opt("kind").unwrap_or("es") {
                    "es" => Mode::Es,
                    "lie" => Mode::Lie,
                    "vib" => Mode::Vib,
                    other => {
                        return Err(Error::config(format!(
                            "{file}:{}: mode kind must be es, lie, or vib, got `{other}`",
                            v.sec.line
                        )))
                    }
                }
            }
        };
        let averaged = match one("mode")? {
            Some(v) => v.bool_or("averaged", false)?,
            None => false,
        };

        let vib = match one("vib")? {
            None => None,
            Some(v) => {
                v.check_keys(&["drift", "input", "mu", "alpha"])?;
                Some(VibSpec {
                    drift: v.str_opt("drift").ok_or_else(|| v.missing("drift"))?.to_string(),
                    input: v.str_opt("input").ok_or_else(|| v.missing("input"))?.to_string(),
                    mu: v.f64_or("mu", 1.0)?,
                    alpha: v.f64_or("alpha", 1.0)?,
                    averaged,
                })
            }
        };
        if mode == Mode::Vib && vib.is_none() {
            return Err(Error::config(format!(
                "{file}: mode `vib` needs a [vib] section"
            )));
        }
        if mode != Mode::Vib && vib.is_some() {
            return Err(Error::config(format!(
                "{file}: [vib] section requires mode kind = vib"
            )));
        }

        let checks = match one("checks")? {
            None => Checks {
                ball_from: 0.0,
                descent_m1: 1.0,
                descent_m_tilde: 0.0,
                compare_tolerance: 1e-9,
                ..Checks::default()
            },
            Some(v) => {
                v.check_keys(&[
                    "final_dist",
                    "final_cost",
                    "ball_radius",
                    "ball_from",
                    "control_decay_ratio",
                    "control_floor_ratio",
                    "descent_lambda",
                    "descent_m1",
                    "descent_m_tilde",
                    "envelope_lambda",
                    "envelope_rho",
                    "envelope_m_tilde",
                    "envelope_m1",
                    "envelope_amplitude",
                    "envelope_j0",
                    "compare_to",
                    "compare_tolerance",
                ])?;
                let envelope = match v.f64_opt("envelope_lambda")? {
                    None => None,
                    Some(lambda) => Some(EnvelopeCheck {
                        lambda,
                        rho: v.f64_or("envelope_rho", 0.0)?,
                        m_tilde: v.f64_or("envelope_m_tilde", 0.0)?,
                        m1: v.f64_or("envelope_m1", 1.0)?,
                        amplitude: v.f64_opt("envelope_amplitude")?,
                        j0: v.f64_opt("envelope_j0")?,
                    }),
                };
                Checks {
                    final_dist: v.f64_opt("final_dist")?,
                    final_cost: v.f64_opt("final_cost")?,
                    ball_radius: v.f64_opt("ball_radius")?,
                    ball_from: v.f64_or("ball_from", 0.0)?,
                    control_decay_ratio: v.f64_opt("control_decay_ratio")?,
                    control_floor_ratio: v.f64_opt("control_floor_ratio")?,
                    descent_lambda: v.f64_opt("descent_lambda")?,
                    descent_m1: v.f64_or("descent_m1", 1.0)?,
                    descent_m_tilde: v.f64_or("descent_m_tilde", 0.0)?,
                    envelope,
                    compare_to: v.str_opt("compare_to").map(PathBuf::from),
                    compare_tolerance: v.f64_or("compare_tolerance", 1e-9)?,
                }
            }
        };

        let certificate = match one("certificate")? {
            None => None,
            Some(v) => {
                v.check_keys(&[
                    "delta",
                    "delta0",
                    "delta_cap",
                    "lambda_bar",
                    "lambda_bar_fraction",
                    "grid_points",
                    "follow_up",
                    "follow_up_periods",
                    "alpha",
                    "rho",
                    "rho0",
                    "rho_min",
                ])?;
                let lambda_bar = match (v.f64_opt("lambda_bar")?, v.f64_opt("lambda_bar_fraction")?)
                {
                    (Some(a), None) => LambdaBar::Absolute(a),
                    (None, Some(f)) => LambdaBar::Fraction(f),
                    (None, None) => {
                        return Err(Error::config(format!(
                            "{file}:{}: [certificate] needs `lambda_bar` or `lambda_bar_fraction`",
                            v.sec.line
                        )))
                    }
                    (Some(_), Some(_)) => {
                        return Err(Error::config(format!(
                            "{file}:{}: give `lambda_bar` or `lambda_bar_fraction`, not both",
                            v.sec.line
                        )))
                    }
                };
                Some(CertSpec {
                    delta: v.f64_req("delta")?,
                    delta0: v.f64_req("delta0")?,
                    delta_cap: v.f64_or("delta_cap", f64::INFINITY)?,
                    lambda_bar,
                    grid_points: v.usize_or("grid_points", 41)?,
                    follow_up: v.bool_or("follow_up", true)?,
                    follow_up_periods: v.usize_or("follow_up_periods", 20)?,
                    alpha: v.f64_opt("alpha")?,
                    rho: v.f64_opt("rho")?,
                    rho0: v.f64_opt("rho0")?,
                    rho_min: v.f64_opt("rho_min")?,
                })
            }
        };

        Ok(Scenario {
            name: file.to_string(),
            cost,
            cost_constants,
            axes,
            eps,
            run,
            mode,
            vib,
            checks,
            certificate,
        })
    }

    pub fn build_cost(&self) -> Result<CostProfile> {
        match &self.cost {
            CostSpec::Builtin { name, params } => builtin_cost(name, params),
            CostSpec::Custom { expr, minimizer, min_value } => {
                let dim = minimizer.len();
                let parsed = Expr::parse(expr)?;
                let names: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
                let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
                parsed.check_vars(&refs)?;
                let eval_names = names.clone();
                let profile = CostProfile::new(
                    dim,
                    "custom",
                    move |x: &[f64]| {
                        let vars: Vec<(&str, f64)> = eval_names
                            .iter()
                            .map(|s| s.as_str())
                            .zip(x.iter().copied())
                            .collect();
                        parsed.eval(&vars).unwrap_or(f64::NAN)
                    },
                    None,
                    minimizer.clone(),
                    *min_value,
                )?;
                profile.validate()?;
                Ok(profile)
            }
        }
    }

    pub fn build_axes(&self) -> Result<Vec<EsAxis>> {
        let mut out = Vec::with_capacity(self.axes.len());
        for (i, spec) in self.axes.iter().enumerate() {
            let mut gen = build_generator(&spec.gen)
                .map_err(|e| Error::config(format!("axis {}: {e}", i + 1)))?;
            if let Some(c) = spec.f2_offset {
                gen = gen.with_f2_offset(c);
            }
            let dither = DitherPair::new(spec.k, self.eps)?;
            out.push(EsAxis { gen, dither });
        }
        Ok(out)
    }

    pub fn build_es(&self) -> Result<EsSystem> {
        let cost = self.build_cost()?;
        if cost.dim != self.run.x0.len() {
            return Err(Error::config(format!(
                "x0 has {} coordinates but the cost is {}-dimensional",
                self.run.x0.len(),
                cost.dim
            )));
        }
        if cost.dim != self.axes.len() {
            return Err(Error::config(format!(
                "scenario declares {} axes but the cost is {}-dimensional",
                self.axes.len(),
                cost.dim
            )));
        }
        EsSystem::new(cost, self.build_axes()?)
    }

    pub fn build_vib(&self) -> Result<VibSystem> {
        let spec = self
            .vib
            .as_ref()
            .ok_or_else(|| Error::config("scenario has no [vib] section"))?;
        if self.axes.len() != 1 {
            return Err(Error::config(
                "vibrational scenarios use exactly one [axis] (a single scalar input channel)",
            ));
        }
        let clf = self.build_cost()?;
        if clf.dim != self.run.x0.len() {
            return Err(Error::config(format!(
                "x0 has {} coordinates but the Lyapunov function is {}-dimensional",
                self.run.x0.len(),
                clf.dim
            )));
        }
        let drift = state_map(&spec.drift, clf.dim, spec.mu, "drift")?;
        let input = state_map(&spec.input, clf.dim, spec.mu, "input")?;
        let mut gen = build_generator(&self.axes[0].gen)?;
        if let Some(c) = self.axes[0].f2_offset {
            gen = gen.with_f2_offset(c);
        }
        let dither = DitherPair::new(self.axes[0].k, self.eps)?;
        VibSystem::new(drift, input, clf, spec.alpha, gen, dither)
    }
}

fn build_generator(spec: &GenSpec) -> Result<GeneratorPair> {
    match spec {
        GenSpec::Builtin { name, params } => builtin_generator(name, params),
        GenSpec::Custom { f1, f0, z_ref, domain } => {
            let f1_expr = Expr::parse(f1)?;
            f1_expr.check_vars(&["z"])?;
            let f0_expr = Expr::parse(f0)?;
            f0_expr.check_vars(&["z"])?;
            let f1: ScalarFn = Arc::new(f1_expr.into_fn_of("z"));
            let f0: ScalarFn = Arc::new(f0_expr.into_fn_of("z"));
            from_f1_f0(f1, None, f0, *z_ref, *domain)
        }
    }
}

/// Builds an n-component state map from `;`-separated expressions in
/// `x1..xn` and the constant `mu`.
fn state_map(src: &str, dim: usize, mu: f64, what: &str) -> Result<StateMap> {
    let comps: Vec<Expr> = src
        .split(';')
        .map(|s| Expr::parse(s.trim()))
        .collect::<Result<_>>()?;
    if comps.len() != dim {
        return Err(Error::config(format!(
            "{what} has {} component(s) but the state is {dim}-dimensional \
             (separate components with `;`)",
            comps.len()
        )));
    }
    let names: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    {
        let mut allowed: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        allowed.push("mu");
        for c in &comps {
            c.check_vars(&allowed)?;
        }
    }
    Ok(Arc::new(move |x: &[f64]| {
        let mut vars: Vec<(&str, f64)> = names
            .iter()
            .map(|s| s.as_str())
            .zip(x.iter().copied())
            .collect();
        vars.push(("mu", mu));
        comps
            .iter()
            .map(|c| c.eval(&vars).unwrap_or(f64::NAN))
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[cost]
builtin = j1

[axis]
generator = classic
k = 1

[dither]
eps = 0.1

[run]
x0 = 0.0
t_end = 1.0
";

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let s = Scenario::parse(MINIMAL, "t").unwrap();
        assert_eq!(s.mode, Mode::Es);
        assert_eq!(s.run.sample_stride, 400);
        assert!(s.run.h.is_none());
        assert!(s.checks.final_dist.is_none());
        assert!(s.certificate.is_none());
        let sys = s.build_es().unwrap();
        assert_eq!(sys.axes.len(), 1);
        assert_eq!(sys.eps(), 0.1);
    }

    #[test]
    fn unknown_key_error_carries_location() {
        let text = MINIMAL.replace("eps = 0.1", "eps = 0.1\nepz = 3");
        let err = Scenario::parse(&text, "s.scn").unwrap_err().to_string();
        assert!(err.contains("s.scn:10"), "{err}");
        assert!(err.contains("epz"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = MINIMAL.replace("k = 1", "k = 1\nk = 2");
        let err = Scenario::parse(&text, "s").unwrap_err().to_string();
        assert!(err.contains("duplicate key `k`"), "{err}");
    }

    #[test]
    fn repeated_axis_sections_accumulate() {
        let text = "\
[cost]
builtin = quadratic_nd
params = 2

[axis]
generator = classic
k = 1

[axis]
generator = bounded
k = 2

[dither]
eps = 0.05

[run]
x0 = 0.5, -0.5
t_end = 1.0
";
        let s = Scenario::parse(text, "t").unwrap();
        assert_eq!(s.axes.len(), 2);
        let sys = s.build_es().unwrap();
        assert_eq!(sys.axes[1].dither.k, 2);
        assert_eq!(sys.axes[1].gen.name, "bounded");
    }

    #[test]
    fn duplicate_frequencies_rejected_at_build() {
        let text = "\
[cost]
builtin = quadratic_nd
params = 2

[axis]
generator = classic
k = 1

[axis]
generator = classic
k = 1

[dither]
eps = 0.05

[run]
x0 = 0.5, -0.5
t_end = 1.0
";
        let s = Scenario::parse(text, "t").unwrap();
        let err = s.build_es().unwrap_err().to_string();
        assert!(err.contains("distinct"), "{err}");
    }

    #[test]
    fn custom_cost_expression_builds() {
        let text = "\
[cost]
expr = 2*(x1-1)^2
minimizer = 1.0

[axis]
generator = classic
k = 1

[dither]
eps = 0.1

[run]
x0 = 0.0
t_end = 1.0
";
        let s = Scenario::parse(text, "t").unwrap();
        let cost = s.build_cost().unwrap();
        assert!((cost.eval(&[0.0]) - 2.0).abs() < 1e-15);
        assert!((cost.eval(&[1.0])).abs() < 1e-15);
    }

    #[test]
    fn custom_generator_expressions_build() {
        let text = "\
[cost]
builtin = j1

[axis]
f1 = z
f0 = 1
z_ref = 1.0
domain = 0.1, 10
k = 1

[dither]
eps = 0.1

[run]
x0 = 0.0
t_end = 1.0
";
        let s = Scenario::parse(text, "t").unwrap();
        let axes = s.build_axes().unwrap();
        // F2 = -z * int_1^z 1/s^2 ds = -(z - 1): one gauge unit off classic.
        assert!((axes[0].gen.f2(2.0) + 1.0).abs() < 1e-7);
    }

    #[test]
    fn f2_offset_flows_into_the_pair() {
        let text = MINIMAL.replace("k = 1", "k = 1\nf2_offset = 0.1");
        let s = Scenario::parse(&text, "t").unwrap();
        let axes = s.build_axes().unwrap();
        assert!((axes[0].gen.f2(0.7) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn vib_mode_requires_vib_section() {
        let text = MINIMAL.to_string() + "\n[mode]\nkind = vib\n";
        let err = Scenario::parse(&text, "t").unwrap_err().to_string();
        assert!(err.contains("[vib]"), "{err}");

        let text = MINIMAL.to_string() + "\n[vib]\ndrift = x1\ninput = mu\n";
        let err = Scenario::parse(&text, "t").unwrap_err().to_string();
        assert!(err.contains("kind = vib"), "{err}");
    }

    #[test]
    fn vib_system_builds_and_matches_closed_form() {
        let text = "\
[cost]
builtin = quadratic_nd
params = 1

[axis]
generator = classic
k = 1

[dither]
eps = 0.1

[run]
x0 = 1.0
t_end = 1.0

[mode]
kind = vib
averaged = true

[vib]
drift = x1
input = mu
mu = 1.0
alpha = 1.0
";
        let s = Scenario::parse(text, "t").unwrap();
        let sys = s.build_vib().unwrap();
        // Averaged law: x' = x - alpha*mu^2*2x = -x at x = 1.
        let dx = sys.vib_field(0.0, &[1.0], true).unwrap();
        assert!((dx[0] + 1.0).abs() < 1e-12, "dx = {dx:?}");
    }

    #[test]
    fn certificate_section_parses() {
        let text = MINIMAL.to_string()
            + "\n[certificate]\ndelta = 1.0\ndelta0 = 1.5\nlambda_bar_fraction = 0.5\ndelta_cap = inf\n";
        let s = Scenario::parse(&text, "t").unwrap();
        let c = s.certificate.unwrap();
        assert!(c.delta_cap.is_infinite());
        assert!(matches!(c.lambda_bar, LambdaBar::Fraction(f) if f == 0.5));
        assert_eq!(c.grid_points, 41);
        assert!(c.follow_up);
    }

    #[test]
    fn partial_cost_constants_rejected() {
        let text = MINIMAL.replace("builtin = j1", "builtin = j1\nm1 = 1\ngamma1 = 2");
        let err = Scenario::parse(&text, "t").unwrap_err().to_string();
        assert!(err.contains("all or none"), "{err}");
    }

    #[test]
    fn checks_section_parses() {
        let text = MINIMAL.to_string()
            + "\n[checks]\nfinal_dist = 0.15\nball_radius = 0.2\nball_from = 5\n\
               control_floor_ratio = 0.45\nenvelope_lambda = 1.5\nenvelope_rho = 0.05\n";
        let s = Scenario::parse(&text, "t").unwrap();
        assert_eq!(s.checks.final_dist, Some(0.15));
        assert_eq!(s.checks.ball_from, 5.0);
        let env = s.checks.envelope.unwrap();
        assert_eq!(env.lambda, 1.5);
        assert_eq!(env.rho, 0.05);
        assert_eq!(env.m_tilde, 0.0);
    }

    #[test]
    fn entries_before_any_section_rejected() {
        let err = Scenario::parse("x = 1\n[cost]\n", "t").unwrap_err().to_string();
        assert!(err.contains("before any [section]"), "{err}");
    }
}
