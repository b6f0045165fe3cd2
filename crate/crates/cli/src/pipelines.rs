//! Cells of each experiment kind: enumeration and execution.
//!
//! A cell is the unit of scheduling and of resumption. Its outputs are a flat
//! list of named numbers so that every kind writes the same CSV layout.

use anyhow::Result;
use homlab_core::convex_cell::homogenized_lagrangian;
use homlab_core::diffuse::{
    default_cells, default_warm_starts, macro_cells, minimize_diffuse, sharp_bounds,
    DiffuseProblem, MicroProfile,
};
use homlab_core::gamma::{default_probes, gamma_limit_check, single_transition_probe};
use homlab_core::lbfgs::LbfgsOptions;
use homlab_core::sharp_cell::{estimate_alpha, minimize_sharp_dp};
use homlab_core::ymeasure::{
    direct_energy_sum, energy_from_measure, invariance_diagnostic, marginal_q_diagnostic,
    window_samples,
};
use homlab_core::{Boundary, CoefficientField};
use serde::{Deserialize, Serialize};

use crate::config::{AlphaSweep, Experiment, GammaDiag, HomogConvex, MinamCheck, YmeasureDiag};

/// Macro cells used to sample a non-piecewise-constant modulus.
pub const SAMPLED_CELLS: usize = 16;

/// Transition location and offset of the single-transition probe.
const TRANSITION: (f64, f64) = (0.1, -0.2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    /// `"alpha"` for reference cells, `"run"` otherwise.
    pub role: String,
    pub params: Vec<(String, f64)>,
    pub seed: Option<u64>,
}

impl Task {
    fn run(params: &[(&str, f64)], seed: u64) -> Self {
        Self {
            role: "run".into(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            seed: Some(seed),
        }
    }

    pub fn key(&self) -> String {
        let mut parts = vec![self.role.clone()];
        parts.extend(self.params.iter().map(|(k, v)| format!("{k}={v}")));
        if let Some(s) = self.seed {
            parts.push(format!("seed={s}"));
        }
        parts.join(";")
    }

    pub fn param(&self, name: &str) -> f64 {
        self.params
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
            .unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub task: Task,
    pub outputs: Vec<(String, f64)>,
    /// Solver refusal or failure; outputs are empty when set.
    pub error: Option<String>,
}

impl Cell {
    pub fn output(&self, name: &str) -> Option<f64> {
        self.outputs
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
    }
}

/// `(m, weight)` pairs of the macro cells whose `α_m` averages to the target.
pub fn modulus_pieces(e: &MinamCheck) -> Result<Vec<(f64, f64)>> {
    let mut pieces: Vec<(f64, f64)> = Vec::new();
    for (lo, hi, m) in macro_cells(&e.modulus, SAMPLED_CELLS)? {
        match pieces.iter_mut().find(|(v, _)| *v == m) {
            Some(p) => p.1 += hi - lo,
            None => pieces.push((m, hi - lo)),
        }
    }
    pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pieces)
}

pub fn tasks(exp: &Experiment) -> Result<Vec<Task>> {
    let mut out = Vec::new();
    match exp {
        Experiment::AlphaSweep(e) => {
            for m in &e.m {
                for r in &e.r {
                    for s in &e.seeds {
                        out.push(Task::run(&[("m", *m), ("r", *r)], *s));
                    }
                }
            }
        }
        Experiment::MinamCheck(e) => {
            for (m, _) in modulus_pieces(e)? {
                out.push(Task {
                    role: "alpha".into(),
                    params: vec![("m".into(), m)],
                    seed: None,
                });
            }
            for eps in &e.eps {
                for s in &e.seeds {
                    out.push(Task::run(&[("eps", *eps)], *s));
                }
            }
        }
        Experiment::HomogConvex(e) => {
            for q in &e.q {
                for r in &e.r {
                    for s in &e.seeds {
                        out.push(Task::run(&[("q", *q), ("r", *r)], *s));
                    }
                }
            }
        }
        Experiment::YmeasureDiag(e) => {
            for eps in &e.eps {
                for s in &e.seeds {
                    out.push(Task::run(&[("eps", *eps)], *s));
                }
            }
        }
        Experiment::GammaDiag(e) => {
            for s in &e.seeds {
                out.push(Task::run(&[], *s));
            }
        }
    }
    Ok(out)
}

pub fn execute(exp: &Experiment, task: &Task) -> Cell {
    let res = match exp {
        Experiment::AlphaSweep(e) => alpha_cell(e, task),
        Experiment::MinamCheck(e) => minam_cell(e, task),
        Experiment::HomogConvex(e) => homog_cell(e, task),
        Experiment::YmeasureDiag(e) => ymeasure_cell(e, task),
        Experiment::GammaDiag(e) => gamma_cell(e, task),
    };
    match res {
        Ok(outputs) => Cell {
            task: task.clone(),
            outputs,
            error: None,
        },
        Err(err) => Cell {
            task: task.clone(),
            outputs: vec![],
            error: Some(format!("{err:#}")),
        },
    }
}

type Outputs = Vec<(String, f64)>;

fn named(pairs: &[(&str, f64)]) -> Outputs {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn seed(task: &Task) -> u64 {
    task.seed.expect("run cells carry a seed")
}

fn alpha_cell(e: &AlphaSweep, task: &Task) -> Result<Outputs> {
    let field = CoefficientField::realize(&e.field, seed(task))?;
    let (c, _) = minimize_sharp_dp(
        &field,
        task.param("m"),
        task.param("r"),
        &e.grid,
        e.boundary,
    )?;
    Ok(named(&[
        ("energy", c.energy_per_length),
        ("jumps", c.jump_count as f64),
        ("min_spacing", c.min_spacing),
        ("sup_u", c.sup_abs_u),
    ]))
}

fn minam_cell(e: &MinamCheck, task: &Task) -> Result<Outputs> {
    if task.role == "alpha" {
        let est = estimate_alpha(
            &e.field,
            task.param("m"),
            &[e.reference_r],
            &e.reference_seeds,
            &e.grid,
            Boundary::Pinned,
        )?;
        return Ok(named(&[("alpha", est.alpha)]));
    }
    let eps = task.param("eps");
    let field = CoefficientField::realize(&e.field, seed(task))?;
    let problem = DiffuseProblem::new(eps, default_cells(eps), &field, &e.modulus)?;
    let bounds = sharp_bounds(&field, &e.modulus, eps, &e.grid, SAMPLED_CELLS)?;
    let starts = default_warm_starts(&problem, &field, &e.modulus, &e.grid, SAMPLED_CELLS)?;
    let upper = problem.energy(&starts[0].profile)?;
    let opts = LbfgsOptions {
        max_iterations: e.max_iterations,
        ..Default::default()
    };
    let r = minimize_diffuse(&problem, &starts, &opts)?;
    Ok(named(&[
        ("energy", r.energy),
        ("lower", bounds.free),
        ("pinned", bounds.pinned),
        ("upper", upper),
        ("iterations", r.iterations as f64),
        ("gradient_norm", r.gradient_norm),
        ("converged", r.converged as u8 as f64),
        ("hit_cap", r.hit_iteration_cap as u8 as f64),
    ]))
}

fn homog_cell(e: &HomogConvex, task: &Task) -> Result<Outputs> {
    let est = homogenized_lagrangian(
        &e.lagrangian,
        &e.field,
        &[task.param("q")],
        &[task.param("r")],
        &[seed(task)],
        e.dx,
    )?;
    let p = &est[0].points[0];
    Ok(named(&[
        ("m_r", p.m_r),
        ("lambda", p.lambda),
        ("constraint_error", p.constraint_error),
    ]))
}

fn ymeasure_cell(e: &YmeasureDiag, task: &Task) -> Result<Outputs> {
    let eps = task.param("eps");
    let field = CoefficientField::realize(&e.field, seed(task))?;
    let problem = DiffuseProblem::new(eps, default_cells(eps), &field, &e.modulus)?;
    let starts = default_warm_starts(&problem, &field, &e.modulus, &e.grid, SAMPLED_CELLS)?;
    let opts = LbfgsOptions {
        max_iterations: e.max_iterations,
        ..Default::default()
    };
    let r = minimize_diffuse(&problem, &starts, &opts)?;
    let u = MicroProfile::from_diffuse(&r.profile, eps)?;
    let p = window_samples(&u, &field, &e.modulus, eps, e.window, e.atoms)?;
    let from_measure = energy_from_measure(&p)?;
    let direct = direct_energy_sum(&u, &field, &p)?;
    let refs: Vec<u64> = (e.reference_seeds[0]..e.reference_seeds[1]).collect();
    Ok(named(&[
        ("energy", r.energy),
        ("energy_from_measure", from_measure),
        (
            "identity_error",
            (from_measure - direct).abs() / direct.abs().max(1e-12),
        ),
        ("invariance", invariance_diagnostic(&p, e.y)?),
        ("marginal", marginal_q_diagnostic(&p, &e.field, &refs)?),
        ("atoms", p.atoms.len() as f64),
        ("dropped", p.dropped as f64),
    ]))
}

fn gamma_cell(e: &GammaDiag, task: &Task) -> Result<Outputs> {
    let field = CoefficientField::realize(&e.field, seed(task))?;
    // the trend is judged from the coarsest to the finest eps
    let mut schedule = e.eps.clone();
    schedule.sort_by(|a, b| b.total_cmp(a));
    let rep = gamma_limit_check(&schedule, &field, e.m, &default_probes(e.probe_seed))?;
    let eps_min = schedule[schedule.len() - 1];
    let (value, sharp) = single_transition_probe(eps_min, TRANSITION.0, TRANSITION.1, &field, e.m)?;
    let mut out = named(&[
        ("strictly_decreasing", rep.strictly_decreasing as u8 as f64),
        ("diverging", rep.diverging.len() as f64),
        ("transition", value),
        ("transition_sharp", sharp),
    ]);
    for (eps, d) in schedule.iter().zip(&rep.distances) {
        out.push((distance_name(*eps), *d));
    }
    Ok(out)
}

pub fn distance_name(eps: f64) -> String {
    format!("distance@eps={eps}")
}
