//! Objective of the discretized control problem and its exact gradient by a
//! reverse sweep through the Heun steps.

use crate::dynamics::{forward, gather_controls, MeanFieldModel};
use crate::error::{Error, Result};

use super::OptimizationProblem;

pub(crate) struct Evaluation {
    pub(crate) value: f64,
    pub(crate) gradient: Option<Vec<f64>>,
}

/// J = Σ_n w_n [Σ_z p̂_z î_z(t_n) + Σ_m x_m (b u_m(t_n)² + c v_m(t_n)²)] with
/// trapezoid weights w_n. No sign check on `x`.
pub(crate) fn evaluate(
    problem: &OptimizationProblem,
    model: &MeanFieldModel,
    x: &[f64],
    with_gradient: bool,
) -> Result<Evaluation> {
    let grid = &problem.grid;
    let n_points = grid.len();
    let m = problem.cg.num_controls();
    let z = model.num_groups();
    if x.len() != 2 * m * n_points {
        return Err(Error::param(format!(
            "decision vector has {} entries, expected {}",
            x.len(),
            2 * m * n_points
        )));
    }
    let pass = forward(model, x, grid, problem.params.i0, with_gradient)?;
    let population = model.population();
    let (b, c) = (problem.cost.b, problem.cost.c);
    let xm = &problem.cg.x;
    let v_off = m * n_points;

    let mut value = 0.0;
    for (n, state) in pass.states.iter().enumerate() {
        let infected: f64 = population.iter().zip(&state[z..]).map(|(p, i)| p * i).sum();
        let mut control = 0.0;
        for k in 0..m {
            let u = x[k * n_points + n];
            let v = x[v_off + k * n_points + n];
            control += xm[k] * (b * u * u + c * v * v);
        }
        value += grid.trapezoid_weight(n) * (infected + control);
    }
    if !value.is_finite() {
        return Err(Error::NumericalFailure {
            step: n_points - 1,
            message: format!("objective is {value}"),
        });
    }
    if !with_gradient {
        return Ok(Evaluation { value, gradient: None });
    }

    let dt = grid.dt();
    let half = 0.5 * dt;
    let dim = 2 * z;
    let mut grad = vec![0.0; x.len()];
    // Direct dependence of the running cost on the controls.
    for k in 0..m {
        for n in 0..n_points {
            let w = grid.trapezoid_weight(n);
            grad[k * n_points + n] += 2.0 * w * b * xm[k] * x[k * n_points + n];
            grad[v_off + k * n_points + n] += 2.0 * w * c * xm[k] * x[v_off + k * n_points + n];
        }
    }

    let mut lambda = vec![0.0; dim];
    for (l, p) in lambda[z..].iter_mut().zip(population) {
        *l = grid.trapezoid_weight(n_points - 1) * p;
    }
    let mut adj_k = vec![0.0; dim];
    let mut d_pred = vec![0.0; dim];
    let mut adj_y = vec![0.0; dim];
    let (mut u0, mut v0, mut u1, mut v1) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let (mut du, mut dv) = (vec![0.0; m], vec![0.0; m]);

    for n in (0..n_points - 1).rev() {
        gather_controls(x, m, n_points, n, &mut u0, &mut v0);
        gather_controls(x, m, n_points, n + 1, &mut u1, &mut v1);

        // y_{n+1} = y_n + h/2 (k1 + k2), k2 = f(ỹ, c_{n+1}), ỹ = y_n + h k1.
        for (a, l) in adj_k.iter_mut().zip(&lambda) {
            *a = half * l;
        }
        d_pred.fill(0.0);
        du.fill(0.0);
        dv.fill(0.0);
        model.vjp(&pass.predicted[n], &u1, &v1, &adj_k, &mut d_pred, &mut du, &mut dv);
        for k in 0..m {
            grad[k * n_points + n + 1] += du[k];
            grad[v_off + k * n_points + n + 1] += dv[k];
        }

        // k1 = f(y_n, c_n) feeds y_{n+1} directly and through ỹ.
        for ((a, l), d) in adj_k.iter_mut().zip(&lambda).zip(&d_pred) {
            *a = half * l + dt * d;
        }
        for ((y, l), d) in adj_y.iter_mut().zip(&lambda).zip(&d_pred) {
            *y = l + d;
        }
        du.fill(0.0);
        dv.fill(0.0);
        model.vjp(&pass.states[n], &u0, &v0, &adj_k, &mut adj_y, &mut du, &mut dv);
        for k in 0..m {
            grad[k * n_points + n] += du[k];
            grad[v_off + k * n_points + n] += dv[k];
        }

        let w = grid.trapezoid_weight(n);
        for (y, p) in adj_y[z..].iter_mut().zip(population) {
            *y += w * p;
        }
        std::mem::swap(&mut lambda, &mut adj_y);
    }

    Ok(Evaluation {
        value,
        gradient: Some(grad),
    })
}

fn check_feasible(x: &[f64]) -> Result<()> {
    if let Some((j, v)) = x.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::param(format!(
            "decision variable {j} is {v}; controls must be finite and >= 0"
        )));
    }
    Ok(())
}

/// Objective value at a nonnegative decision vector.
pub fn objective(problem: &OptimizationProblem, x: &[f64]) -> Result<f64> {
    check_feasible(x)?;
    let model = problem.model()?;
    Ok(evaluate(problem, &model, x, false)?.value)
}

/// Objective value and its exact gradient with respect to all 2·M·N
/// sampled control values (layout of
/// [`ControlSchedule::to_decision_vector`](crate::control::ControlSchedule::to_decision_vector)).
pub fn objective_and_gradient(problem: &OptimizationProblem, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_feasible(x)?;
    let model = problem.model()?;
    let eval = evaluate(problem, &model, x, true)?;
    Ok((eval.value, eval.gradient.expect("gradient requested")))
}

/// Central finite differences of the objective at the listed coordinates,
/// step 1e-6 · max(|x_j|, 1).
pub fn finite_difference_gradient(problem: &OptimizationProblem, x: &[f64], coords: &[usize]) -> Result<Vec<f64>> {
    let model = problem.model()?;
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&j| {
            let h = 1e-6 * x[j].abs().max(1.0);
            probe[j] = x[j] + h;
            let plus = evaluate(problem, &model, &probe, false)?.value;
            probe[j] = x[j] - h;
            let minus = evaluate(problem, &model, &probe, false)?.value;
            probe[j] = x[j];
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}
