//! Direct transcription of the optimal control problem: the sampled controls
//! u_m(t_n), v_m(t_n) are the decision variables of a bound-constrained
//! nonlinear program solved by projected L-BFGS with adjoint gradients.

mod adjoint;
mod lbfgs;
mod sweep;

use serde::{Deserialize, Serialize};

pub use adjoint::{finite_difference_gradient, objective, objective_and_gradient};
pub use lbfgs::{minimize_nonnegative, projected_gradient_norm, LbfgsSettings, Minimization, Termination};
pub use sweep::{sweep, write_sweep_csv, SweepParameter, SweepRow};

use crate::control::{constant_strategy, evaluate_cost, zero_strategy, ControlSchedule, CostBreakdown, CostParams};
use crate::dynamics::{check_schedule, simulate_grouped, EpidemicParams, MeanFieldModel, TimeGrid};
use crate::error::{Error, Result};
use crate::grouping::{ControlGroups, GroupedDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationProblem {
    pub gd: GroupedDistribution,
    pub cg: ControlGroups,
    pub params: EpidemicParams,
    pub cost: CostParams,
    pub grid: TimeGrid,
}

impl OptimizationProblem {
    pub fn new(
        gd: GroupedDistribution,
        cg: ControlGroups,
        params: EpidemicParams,
        cost: CostParams,
        grid: TimeGrid,
    ) -> Result<Self> {
        params.validate()?;
        cost.validate()?;
        if (grid.t_final() - params.t_final).abs() > 1e-12 * params.t_final {
            return Err(Error::param(format!(
                "grid ends at {} but T = {}",
                grid.t_final(),
                params.t_final
            )));
        }
        if cg.num_groups() != gd.num_groups() {
            return Err(Error::param("control groups and grouped distribution disagree on Z"));
        }
        Ok(Self {
            gd,
            cg,
            params,
            cost,
            grid,
        })
    }

    pub(crate) fn model(&self) -> Result<MeanFieldModel> {
        MeanFieldModel::grouped(&self.gd, &self.cg, &self.params)
    }

    /// 2·M·N.
    pub fn num_variables(&self) -> usize {
        2 * self.cg.num_controls() * self.grid.len()
    }
}

pub type OptimizerOptions = LbfgsSettings;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub schedule: ControlSchedule,
    /// Achieved objective J.
    pub objective: f64,
    pub breakdown: CostBreakdown,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub gradient_norm: f64,
    /// J at the start and after every iteration.
    pub history: Vec<f64>,
    pub clamp_events: usize,
}

impl OptimizationResult {
    /// CSV `iteration,objective`.
    pub fn write_history_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "objective"])?;
        for (k, j) in self.history.iter().enumerate() {
            w.write_record([k.to_string(), j.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// The constant or the zero schedule, whichever has the lower J. Ties go to
/// the zero schedule, so an epidemic that never starts needs no iterations.
pub fn initial_guess(problem: &OptimizationProblem) -> Result<ControlSchedule> {
    let m = problem.cg.num_controls();
    let zero = zero_strategy(&problem.grid, m);
    let constant = constant_strategy(&problem.params, &problem.grid, m);
    let j_zero = objective(problem, &zero.to_decision_vector())?;
    let j_constant = objective(problem, &constant.to_decision_vector())?;
    Ok(if j_constant < j_zero { constant } else { zero })
}

/// Minimizes J over nonnegative schedules starting from `initial`.
pub fn optimize(
    problem: &OptimizationProblem,
    initial: &ControlSchedule,
    options: &OptimizerOptions,
) -> Result<OptimizationResult> {
    check_schedule(initial, &problem.cg, &problem.grid)?;
    let model = problem.model()?;
    let m = problem.cg.num_controls();
    let fg = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let eval = adjoint::evaluate(problem, &model, x, true)?;
        Ok((eval.value, eval.gradient.expect("gradient requested")))
    };
    let min = minimize_nonnegative(fg, initial.to_decision_vector(), options)?;
    if !min.termination.is_converged() {
        log::warn!(
            "optimizer stopped without converging ({:?}) after {} iterations",
            min.termination,
            min.iterations
        );
    }

    let schedule = ControlSchedule::from_decision_vector(&problem.grid, m, &min.x)?;
    let traj = simulate_grouped(&problem.gd, &problem.cg, &schedule, &problem.params, &problem.grid)?;
    let breakdown = evaluate_cost(&traj, &schedule, &problem.cg, &problem.cost)?;
    Ok(OptimizationResult {
        schedule,
        objective: min.f,
        breakdown,
        iterations: min.iterations,
        evaluations: min.evaluations,
        converged: min.termination.is_converged(),
        termination: min.termination,
        gradient_norm: min.projected_gradient_norm,
        history: min.history,
        clamp_events: traj.clamp_events,
    })
}
