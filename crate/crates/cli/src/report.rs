//! Report rows, pass/fail aggregation and convergence tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use homlab_core::convex_cell::LagrangianForm;
use homlab_core::stats::{loglog_slope, mean_std};
use homlab_core::{FieldModel, ValueDistribution};
use serde::{Deserialize, Serialize};

use crate::config::{AlphaSweep, Experiment, GammaDiag, HomogConvex, MinamCheck, YmeasureDiag};
use crate::pipelines::{distance_name, modulus_pieces, Cell};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const REL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// `rel_error ≤ tolerance`.
    Relative,
    /// `|measured - reference| ≤ tolerance`.
    Absolute,
    /// `measured ≥ tolerance`.
    AtLeast,
    /// `measured > tolerance`.
    Above,
    /// Not graded.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub kind: String,
    pub metric: String,
    /// Parameter along which the row belongs to a convergence table; empty for
    /// summary rows.
    pub axis: String,
    pub axis_value: Option<f64>,
    pub tuple: String,
    pub measured: f64,
    pub reference: Option<f64>,
    pub provenance: String,
    pub rel_error: Option<f64>,
    pub rule: Rule,
    pub tolerance: Option<f64>,
    pub pass: bool,
    pub note: String,
}

pub fn rel_error(measured: f64, reference: f64) -> f64 {
    (measured - reference).abs() / reference.abs().max(REL_FLOOR)
}

struct RowBuilder<'a> {
    exp: &'a Experiment,
    rows: Vec<ReportRow>,
}

impl<'a> RowBuilder<'a> {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        metric: &str,
        axis: Option<(&str, f64)>,
        tuple: String,
        measured: f64,
        reference: Option<(f64, &str)>,
        rule: Rule,
        tolerance: Option<f64>,
        note: String,
    ) {
        let rel = reference.map(|(r, _)| rel_error(measured, r));
        let tol = tolerance.unwrap_or(f64::NAN);
        let pass = !measured.is_nan()
            && match rule {
                Rule::Relative => rel.is_some_and(|e| e <= tol),
                Rule::Absolute => reference.is_some_and(|(r, _)| (measured - r).abs() <= tol),
                Rule::AtLeast => measured >= tol,
                Rule::Above => measured > tol,
                Rule::Info => true,
            };
        self.rows.push(ReportRow {
            experiment: self.exp.id().to_string(),
            kind: self.exp.kind().to_string(),
            metric: metric.to_string(),
            axis: axis.map(|a| a.0.to_string()).unwrap_or_default(),
            axis_value: axis.map(|a| a.1),
            tuple,
            measured,
            reference: reference.map(|r| r.0),
            provenance: reference.map(|r| r.1.to_string()).unwrap_or_default(),
            rel_error: rel,
            rule,
            tolerance: if rule == Rule::Info { None } else { tolerance },
            pass,
            note,
        });
    }

    fn refusals(&mut self, cells: &[Cell]) {
        for c in cells {
            if let Some(err) = &c.error {
                self.push(
                    "refused",
                    None,
                    c.task.key(),
                    f64::NAN,
                    None,
                    Rule::Info,
                    None,
                    err.clone(),
                );
                self.rows.last_mut().unwrap().pass = false;
            }
        }
    }
}

/// Values of `output` over the successful cells matching `filter`.
fn collect(cells: &[Cell], output: &str, filter: impl Fn(&Cell) -> bool) -> Vec<f64> {
    cells
        .iter()
        .filter(|c| c.error.is_none() && c.task.role == "run" && filter(c))
        .filter_map(|c| c.output(output))
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        mean_std(xs).0
    }
}

fn std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        mean_std(xs).1
    }
}

fn last(xs: &[f64]) -> f64 {
    xs[xs.len() - 1]
}

fn finest(eps: &[f64]) -> f64 {
    eps.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn coarsest(eps: &[f64]) -> f64 {
    eps.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn seeds_note(n: usize) -> String {
    format!("{n} seeds")
}

/// Rows of one experiment from its cells, in task order.
pub fn rows_for(exp: &Experiment, cells: &[Cell]) -> Result<Vec<ReportRow>> {
    let mut b = RowBuilder { exp, rows: vec![] };
    match exp {
        Experiment::AlphaSweep(e) => alpha_rows(&mut b, e, cells),
        Experiment::MinamCheck(e) => minam_rows(&mut b, e, cells)?,
        Experiment::HomogConvex(e) => homog_rows(&mut b, e, cells),
        Experiment::YmeasureDiag(e) => ymeasure_rows(&mut b, e, cells),
        Experiment::GammaDiag(e) => gamma_rows(&mut b, e, cells),
    }
    b.refusals(cells);
    Ok(b.rows)
}

/// `2^{2/3} c^{1/3}`: the uniform sawtooth optimum for `a·m ≡ c`.
fn alpha_constant(c: f64) -> f64 {
    2f64.powf(2.0 / 3.0) * c.cbrt()
}

fn alpha_rows(b: &mut RowBuilder, e: &AlphaSweep, cells: &[Cell]) {
    let constant = match e.field {
        FieldModel::Constant { value } => Some(value),
        _ => None,
    };
    let r_max = last(&e.r);
    let mut top = Vec::new();
    for m in &e.m {
        for r in &e.r {
            let xs = collect(cells, "energy", |c| {
                c.task.param("m") == *m && c.task.param("r") == *r
            });
            let tuple = format!("m={m};r={r}");
            let graded = *r == r_max;
            let reference =
                constant.map(|a| (alpha_constant(a * m), "closed_form_uniform_sawtooth"));
            let rule = if graded && reference.is_some() {
                Rule::Relative
            } else {
                Rule::Info
            };
            b.push(
                "alpha",
                Some(("r", *r)),
                tuple.clone(),
                mean(&xs),
                reference,
                rule,
                Some(e.tolerance),
                seeds_note(xs.len()),
            );
            b.push(
                "alpha_std",
                Some(("r", *r)),
                tuple,
                std(&xs),
                None,
                Rule::Info,
                None,
                String::new(),
            );
            if graded {
                top.push(mean(&xs));
            }
        }
    }
    if e.m.len() >= 2 {
        let slope = loglog_slope(&e.m, &top);
        let reference = constant.map(|_| (1.0 / 3.0, "closed_form_uniform_sawtooth"));
        let rule = if reference.is_some() {
            Rule::Absolute
        } else {
            Rule::Info
        };
        b.push(
            "m_exponent",
            None,
            format!("r={r_max}"),
            slope,
            reference,
            rule,
            Some(0.05),
            "log-log fit over m".into(),
        );
    }
}

fn minam_rows(b: &mut RowBuilder, e: &MinamCheck, cells: &[Cell]) -> Result<()> {
    let mut target = 0.0;
    for (m, w) in modulus_pieces(e)? {
        let alpha = cells
            .iter()
            .find(|c| c.task.role == "alpha" && c.task.param("m") == m)
            .and_then(|c| c.output("alpha"))
            .unwrap_or(f64::NAN);
        b.push(
            "alpha_m",
            Some(("m", m)),
            format!("m={m}"),
            alpha,
            None,
            Rule::Info,
            None,
            format!("weight {w}"),
        );
        target += w * alpha;
    }
    let fine = finest(&e.eps);
    for eps in &e.eps {
        let at = |c: &Cell| c.task.param("eps") == *eps;
        let energy = collect(cells, "energy", at);
        let lower = collect(cells, "lower", at);
        let upper = collect(cells, "upper", at);
        let inside = energy
            .iter()
            .zip(lower.iter().zip(&upper))
            .filter(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
            .count();
        let tuple = format!("eps={eps}");
        let rule = if *eps == fine {
            Rule::Relative
        } else {
            Rule::Info
        };
        let reference = (!target.is_nan()).then_some((target, "dp_alpha_integral"));
        b.push(
            "energy",
            Some(("eps", *eps)),
            tuple.clone(),
            mean(&energy),
            reference,
            rule,
            Some(e.tolerance),
            seeds_note(energy.len()),
        );
        b.push(
            "lower",
            Some(("eps", *eps)),
            tuple.clone(),
            mean(&lower),
            None,
            Rule::Info,
            None,
            String::new(),
        );
        b.push(
            "upper",
            Some(("eps", *eps)),
            tuple.clone(),
            mean(&upper),
            None,
            Rule::Info,
            None,
            String::new(),
        );
        let frac = if energy.is_empty() {
            f64::NAN
        } else {
            inside as f64 / energy.len() as f64
        };
        b.push(
            "bracketed",
            Some(("eps", *eps)),
            tuple,
            frac,
            None,
            Rule::Info,
            None,
            "fraction of seeds with lower <= energy <= upper".into(),
        );
    }
    Ok(())
}

/// `E[a^{-k}]` under the value law of a constant or checkerboard field.
fn inverse_moment(field: &FieldModel, k: f64) -> Option<f64> {
    match field {
        FieldModel::Constant { value } => Some(value.powf(-k)),
        FieldModel::Checkerboard { values, .. } => Some(match values {
            ValueDistribution::Discrete { support } => {
                support.iter().map(|a| a.powf(-k)).sum::<f64>() / support.len() as f64
            }
            ValueDistribution::Uniform { lo, hi } if hi > lo => {
                if k == 1.0 {
                    (hi / lo).ln() / (hi - lo)
                } else {
                    (hi.powf(1.0 - k) - lo.powf(1.0 - k)) / ((1.0 - k) * (hi - lo))
                }
            }
            ValueDistribution::Uniform { lo, .. } => lo.powf(-k),
        }),
        _ => None,
    }
}

/// `|q|^p E[a^{-1/(p-1)}]^{-(p-1)}` for `L = a|s|^p` with i.i.d. or constant `a`.
fn homogenized_power(field: &FieldModel, p: f64, q: f64) -> Option<f64> {
    let k = 1.0 / (p - 1.0);
    inverse_moment(field, k).map(|mom| q.abs().powf(p) * mom.powf(-(p - 1.0)))
}

fn homog_rows(b: &mut RowBuilder, e: &HomogConvex, cells: &[Cell]) {
    let r_max = last(&e.r);
    for q in &e.q {
        let reference = match e.lagrangian.form {
            LagrangianForm::Power => homogenized_power(&e.field, e.lagrangian.p, *q),
            _ => None,
        }
        .map(|v| (v, "harmonic_mean_identity"));
        for r in &e.r {
            let xs = collect(cells, "m_r", |c| {
                c.task.param("q") == *q && c.task.param("r") == *r
            });
            let tuple = format!("q={q};r={r}");
            let rule = if *r == r_max && reference.is_some() {
                Rule::Relative
            } else {
                Rule::Info
            };
            b.push(
                "f_star",
                Some(("r", *r)),
                tuple.clone(),
                mean(&xs),
                reference,
                rule,
                Some(e.tolerance),
                seeds_note(xs.len()),
            );
            b.push(
                "m_r_std",
                Some(("r", *r)),
                tuple,
                std(&xs),
                None,
                Rule::Info,
                None,
                String::new(),
            );
        }
    }
}

fn ymeasure_rows(b: &mut RowBuilder, e: &YmeasureDiag, cells: &[Cell]) {
    let fine = finest(&e.eps);
    for eps in &e.eps {
        let at = |c: &Cell| c.task.param("eps") == *eps;
        let tuple = format!("eps={eps}");
        let inv = collect(cells, "invariance", at);
        let marg = collect(cells, "marginal", at);
        let ident = collect(cells, "identity_error", at);
        b.push(
            "energy",
            Some(("eps", *eps)),
            tuple.clone(),
            mean(&collect(cells, "energy", at)),
            None,
            Rule::Info,
            None,
            seeds_note(inv.len()),
        );
        b.push(
            "invariance",
            Some(("eps", *eps)),
            tuple.clone(),
            mean(&inv),
            None,
            Rule::Info,
            None,
            format!("y = {}", e.y),
        );
        let rule = if *eps == fine {
            Rule::Absolute
        } else {
            Rule::Info
        };
        b.push(
            "marginal",
            Some(("eps", *eps)),
            tuple.clone(),
            mean(&marg),
            Some((0.0, "law_of_field")),
            rule,
            Some(e.tolerance),
            String::new(),
        );
        let worst = if ident.is_empty() {
            f64::NAN
        } else {
            ident.iter().cloned().fold(0.0, f64::max)
        };
        b.push(
            "identity_error",
            Some(("eps", *eps)),
            tuple,
            worst,
            Some((0.0, "algebraic_identity")),
            Rule::Absolute,
            Some(1e-12),
            "worst seed".into(),
        );
    }
    if e.eps.len() >= 2 {
        let (hi, lo) = (coarsest(&e.eps), fine);
        let mut wins = 0;
        let mut n = 0;
        for s in &e.seeds {
            let get = |eps: f64| {
                collect(cells, "invariance", |c| {
                    c.task.param("eps") == eps && c.task.seed == Some(*s)
                })
            };
            if let ([a], [z]) = (get(hi).as_slice(), get(lo).as_slice()) {
                n += 1;
                wins += (z < a) as usize;
            }
        }
        let frac = if n == 0 {
            f64::NAN
        } else {
            wins as f64 / n as f64
        };
        b.push(
            "invariance_trend",
            None,
            format!("eps={hi}->{lo}"),
            frac,
            None,
            Rule::Above,
            Some(0.5),
            "fraction of seeds whose invariance distance decreases".into(),
        );
    }
}

fn gamma_rows(b: &mut RowBuilder, e: &GammaDiag, cells: &[Cell]) {
    for eps in &e.eps {
        let d = collect(cells, &distance_name(*eps), |_| true);
        b.push(
            "distance",
            Some(("eps", *eps)),
            format!("eps={eps}"),
            mean(&d),
            None,
            Rule::Info,
            None,
            seeds_note(d.len()),
        );
    }
    let dec = collect(cells, "strictly_decreasing", |_| true);
    b.push(
        "strictly_decreasing",
        None,
        format!("eps={:?}", e.eps),
        mean(&dec),
        None,
        Rule::AtLeast,
        Some(1.0),
        "fraction of seeds".into(),
    );
    for c in cells.iter().filter(|c| c.error.is_none()) {
        if let (Some(v), Some(s)) = (c.output("transition"), c.output("transition_sharp")) {
            let seed = c.task.seed.unwrap_or_default();
            b.push(
                "single_transition",
                None,
                format!("eps={};seed={seed}", finest(&e.eps)),
                v,
                Some((s, "sharp_integrand")),
                Rule::Relative,
                Some(e.tolerance),
                String::new(),
            );
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub id: String,
    pub kind: String,
    pub rows: usize,
    pub passed: usize,
    pub failed: usize,
    /// `metric[tuple]` of every failing row.
    pub failing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub all_pass: bool,
    pub experiments: Vec<ExperimentSummary>,
    pub tables: Vec<String>,
}

pub fn write_rows(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<ReportRow>, _>>()?;
    Ok(rows)
}

#[derive(Serialize)]
struct TableRow<'a> {
    axis_value: Option<f64>,
    metric: &'a str,
    tuple: &'a str,
    measured: f64,
    reference: Option<f64>,
    rel_error: Option<f64>,
    pass: bool,
}

/// Writes `summary.json` and one table per (experiment, axis) under `dir`.
pub fn emit(dir: &Path, rows: &[ReportRow]) -> Result<Summary> {
    ensure!(!rows.is_empty(), "no report rows");
    let mut order: Vec<(String, String)> = Vec::new();
    let mut per: BTreeMap<(String, String), ExperimentSummary> = BTreeMap::new();
    let mut tables: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.experiment.clone(), r.kind.clone());
        if !per.contains_key(&key) {
            order.push(key.clone());
        }
        let s = per.entry(key).or_insert_with(|| ExperimentSummary {
            id: r.experiment.clone(),
            kind: r.kind.clone(),
            rows: 0,
            passed: 0,
            failed: 0,
            failing: vec![],
        });
        s.rows += 1;
        if r.pass {
            s.passed += 1;
        } else {
            s.failed += 1;
            s.failing.push(format!("{}[{}]", r.metric, r.tuple));
        }
        if !r.axis.is_empty() {
            let t = (r.experiment.clone(), r.axis.clone());
            if !tables.contains(&t) {
                tables.push(t);
            }
        }
    }
    let table_dir = dir.join("tables");
    fs::create_dir_all(&table_dir)?;
    let mut names = Vec::new();
    for (exp, axis) in &tables {
        let name = format!("{exp}__{axis}.csv");
        let mut w = csv::Writer::from_path(table_dir.join(&name))?;
        for r in rows
            .iter()
            .filter(|r| &r.experiment == exp && &r.axis == axis)
        {
            w.serialize(TableRow {
                axis_value: r.axis_value,
                metric: &r.metric,
                tuple: &r.tuple,
                measured: r.measured,
                reference: r.reference,
                rel_error: r.rel_error,
                pass: r.pass,
            })?;
        }
        w.flush()?;
        names.push(format!("tables/{name}"));
    }
    let experiments: Vec<ExperimentSummary> = order.iter().map(|k| per[k].clone()).collect();
    let summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        all_pass: experiments.iter().all(|e| e.failed == 0),
        experiments,
        tables: names,
    };
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(summary)
}

pub fn print(summary: &Summary) {
    for e in &summary.experiments {
        let status = if e.failed == 0 { "PASS" } else { "FAIL" };
        println!(
            "{status} {} ({}): {}/{} rows pass",
            e.id, e.kind, e.passed, e.rows
        );
        for f in &e.failing {
            println!("  failing: {f}");
        }
    }
}
