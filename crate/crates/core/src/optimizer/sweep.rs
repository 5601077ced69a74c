use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{constant_strategy, evaluate_cost, percent_improvement, resource_allocation, zero_strategy};
use crate::dynamics::simulate_grouped;
use crate::error::{Error, Result};

use super::{initial_guess, optimize, OptimizationProblem, OptimizerOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Beta,
    B,
    C,
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(Self::Beta),
            "b" => Ok(Self::B),
            "c" => Ok(Self::C),
            other => Err(Error::param(format!("unknown sweep parameter `{other}` (beta, b, c)"))),
        }
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Beta => "beta",
            Self::B => "b",
            Self::C => "c",
        })
    }
}

impl SweepParameter {
    fn apply(self, template: &OptimizationProblem, value: f64) -> Result<OptimizationProblem> {
        let mut p = template.clone();
        match self {
            Self::Beta => p.params.beta = value,
            Self::B => p.cost.b = value,
            Self::C => p.cost.c = value,
        }
        OptimizationProblem::new(p.gd, p.cg, p.params, p.cost, p.grid)
    }
}

/// One sweep point. Every J is evaluated by [`evaluate_cost`], so rows agree
/// bitwise with an experiment run. Numeric fields are NaN when `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub j_optimal: f64,
    pub j_constant: f64,
    pub j_none: f64,
    pub improvement_vs_constant: f64,
    pub improvement_vs_none: f64,
    pub infected_optimal: f64,
    pub infected_constant: f64,
    pub infected_none: f64,
    /// Share of the optimal strategy's resources spent on vaccination, %.
    pub vaccination_share: f64,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(value: f64, err: &Error) -> Self {
        Self {
            value,
            j_optimal: f64::NAN,
            j_constant: f64::NAN,
            j_none: f64::NAN,
            improvement_vs_constant: f64::NAN,
            improvement_vs_none: f64::NAN,
            infected_optimal: f64::NAN,
            infected_constant: f64::NAN,
            infected_none: f64::NAN,
            vaccination_share: f64::NAN,
            iterations: 0,
            converged: false,
            error: Some(err.to_string()),
        }
    }
}

fn run_point(problem: &OptimizationProblem, value: f64, options: &OptimizerOptions) -> Result<SweepRow> {
    let m = problem.cg.num_controls();
    let heuristic = |schedule| -> Result<_> {
        let traj = simulate_grouped(&problem.gd, &problem.cg, &schedule, &problem.params, &problem.grid)?;
        evaluate_cost(&traj, &schedule, &problem.cg, &problem.cost)
    };
    let constant_schedule = constant_strategy(&problem.params, &problem.grid, m);
    let constant = heuristic(constant_schedule)?;
    let none = heuristic(zero_strategy(&problem.grid, m))?;
    let opt = optimize(problem, &initial_guess(problem)?, options)?;
    let share = resource_allocation(&opt.schedule, &problem.cg, &problem.cost)?
        .shares()
        .map_or(f64::NAN, |s| s.strategy_totals[0]);
    Ok(SweepRow {
        value,
        j_optimal: opt.breakdown.total,
        j_constant: constant.total,
        j_none: none.total,
        improvement_vs_constant: percent_improvement(constant.total, opt.breakdown.total),
        improvement_vs_none: percent_improvement(none.total, opt.breakdown.total),
        infected_optimal: opt.breakdown.infection,
        infected_constant: constant.infection,
        infected_none: none.infection,
        vaccination_share: share,
        iterations: opt.iterations,
        converged: opt.converged,
        error: None,
    })
}

/// Optimal, constant and no-control strategies at each value of `parameter`.
/// Points run in parallel; a failing point is recorded and the rest continue.
pub fn sweep(
    template: &OptimizationProblem,
    parameter: SweepParameter,
    values: &[f64],
    options: &OptimizerOptions,
) -> Vec<SweepRow> {
    values
        .par_iter()
        .map(|&value| {
            parameter
                .apply(template, value)
                .and_then(|problem| run_point(&problem, value, options))
                .unwrap_or_else(|e| SweepRow::failed(value, &e))
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(parameter: SweepParameter, rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        parameter.to_string().as_str(),
        "j_optimal",
        "j_constant",
        "j_none",
        "improvement_vs_constant_pct",
        "improvement_vs_none_pct",
        "infected_optimal",
        "infected_constant",
        "infected_none",
        "vaccination_share_pct",
        "iterations",
        "converged",
        "error",
    ])?;
    for r in rows {
        w.write_record([
            r.value.to_string(),
            r.j_optimal.to_string(),
            r.j_constant.to_string(),
            r.j_none.to_string(),
            r.improvement_vs_constant.to_string(),
            r.improvement_vs_none.to_string(),
            r.infected_optimal.to_string(),
            r.infected_constant.to_string(),
            r.infected_none.to_string(),
            r.vaccination_share.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
