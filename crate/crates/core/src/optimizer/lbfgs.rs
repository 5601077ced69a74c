//! Projected limited-memory BFGS for min f(x) subject to x ≥ 0.
//!
//! Coordinates sitting on the bound with a gradient pushing outward are held
//! fixed; the quasi-Newton direction is computed for the rest and the trial
//! point is projected back onto the orthant. Steps are accepted by a
//! backtracking Armijo test along the projected path.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsSettings {
    /// Number of (s, y) correction pairs kept.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when ‖projected gradient‖∞ falls below this.
    pub gradient_tol: f64,
    /// Stop when f decreased by less than this fraction over `stall_window` iterations.
    pub relative_decrease_tol: f64,
    pub stall_window: usize,
    pub max_backtracks: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 2000,
            gradient_tol: 1e-6,
            relative_decrease_tol: 1e-9,
            stall_window: 5,
            max_backtracks: 50,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ProjectedGradient,
    RelativeDecrease,
    MaxIterations,
    LineSearchFailure,
}

impl Termination {
    pub fn is_converged(self) -> bool {
        matches!(self, Termination::ProjectedGradient | Termination::RelativeDecrease)
    }
}

#[derive(Debug, Clone)]
pub struct Minimization {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub projected_gradient_norm: f64,
    /// f at the start and after every accepted step.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// ‖P(x − g) − x‖∞ for the orthant, i.e. g with outward-pushing bound
/// components removed.
pub fn projected_gradient_norm(x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| if xi > 0.0 { gi.abs() } else { (-gi).max(0.0) })
        .fold(0.0, f64::max)
}

struct Memory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    capacity: usize,
}

impl Memory {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        // Skip pairs without enough positive curvature to keep H positive definite.
        if sy <= 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            return;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion: returns H·q.
    fn apply(&self, mut q: Vec<f64>) -> Vec<f64> {
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let scale = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= scale);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q
    }
}

/// Minimizes `fg` (value and gradient) over x ≥ 0 starting from `x0`
/// (projected first). The returned point never has a larger value than the
/// projected start.
pub fn minimize_nonnegative<F>(mut fg: F, x0: Vec<f64>, settings: &LbfgsSettings) -> Result<Minimization>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x: Vec<f64> = x0.into_iter().map(|v| v.max(0.0)).collect();
    let (mut f, mut g) = fg(&x)?;
    if !f.is_finite() {
        return Err(Error::NumericalFailure {
            step: 0,
            message: format!("objective is {f} at the starting point"),
        });
    }
    let mut evaluations = 1;
    let mut history = vec![f];
    let mut memory = Memory {
        pairs: VecDeque::new(),
        capacity: settings.memory.max(1),
    };
    let mut iterations = 0;

    let termination = loop {
        let pg_norm = projected_gradient_norm(&x, &g);
        if pg_norm < settings.gradient_tol {
            break Termination::ProjectedGradient;
        }
        if iterations >= settings.max_iterations {
            break Termination::MaxIterations;
        }

        // Bound-active set: on the bound with the gradient pointing outward.
        let active: Vec<bool> = x.iter().zip(&g).map(|(&xi, &gi)| xi <= 0.0 && gi > 0.0).collect();
        let free_grad: Vec<f64> = g
            .iter()
            .zip(&active)
            .map(|(&gi, &a)| if a { 0.0 } else { gi })
            .collect();

        let mut accepted = None;
        for attempt in 0..2 {
            let mut d: Vec<f64> = if memory.pairs.is_empty() {
                free_grad.iter().map(|gi| -gi).collect()
            } else {
                memory.apply(free_grad.clone()).into_iter().map(|v| -v).collect()
            };
            for (di, &a) in d.iter_mut().zip(&active) {
                if a {
                    *di = 0.0;
                }
            }
            if dot(&d, &free_grad) >= 0.0 {
                memory.pairs.clear();
                d = free_grad.iter().map(|gi| -gi).collect();
            }
            let mut alpha = if memory.pairs.is_empty() {
                (1.0 / d.iter().fold(0.0f64, |m, v| m.max(v.abs()))).min(1.0)
            } else {
                1.0
            };
            for _ in 0..settings.max_backtracks {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| (xi + alpha * di).max(0.0)).collect();
                let predicted: f64 = g
                    .iter()
                    .zip(trial.iter().zip(&x))
                    .map(|(gi, (t, xi))| gi * (t - xi))
                    .sum();
                if predicted < 0.0 {
                    evaluations += 1;
                    if let Ok((ft, gt)) = fg(&trial) {
                        if ft.is_finite() && ft <= f + settings.armijo * predicted {
                            accepted = Some((trial, ft, gt));
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() || attempt == 1 || memory.pairs.is_empty() {
                break;
            }
            // Retry once from steepest descent with a fresh memory.
            memory.pairs.clear();
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            break Termination::LineSearchFailure;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        memory.push(s, y);
        x = x_new;
        f = f_new;
        g = g_new;
        iterations += 1;
        history.push(f);

        let w = settings.stall_window;
        if history.len() > w {
            let before = history[history.len() - 1 - w];
            if before - f <= settings.relative_decrease_tol * f.abs().max(f64::MIN_POSITIVE) {
                break Termination::RelativeDecrease;
            }
        }
    };

    Ok(Minimization {
        projected_gradient_norm: projected_gradient_norm(&x, &g),
        x,
        f,
        iterations,
        evaluations,
        termination,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bound_constrained_quadratic() {
        // min Σ (x_j − c_j)², c = (1, −2, 3): solution (1, 0, 3).
        let c = [1.0, -2.0, 3.0];
        let fg = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let f = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            let g = x.iter().zip(&c).map(|(a, b)| 2.0 * (a - b)).collect();
            Ok((f, g))
        };
        let r = minimize_nonnegative(fg, vec![5.0, 5.0, 0.0], &LbfgsSettings::default()).unwrap();
        assert!(r.termination.is_converged());
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-6);
        assert_eq!(r.x[1], 0.0);
        assert_abs_diff_eq!(r.x[2], 3.0, epsilon = 1e-6);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rosenbrock_interior_minimum() {
        let fg = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((f, g))
        };
        let settings = LbfgsSettings {
            relative_decrease_tol: 0.0,
            gradient_tol: 1e-9,
            ..Default::default()
        };
        let r = minimize_nonnegative(fg, vec![0.2, 1.5], &settings).unwrap();
        assert_eq!(r.termination, Termination::ProjectedGradient);
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.x[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn already_optimal_start() {
        let fg = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((x[0], vec![1.0])) };
        let r = minimize_nonnegative(fg, vec![0.0], &LbfgsSettings::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.termination, Termination::ProjectedGradient);
    }

    #[test]
    fn projected_gradient_ignores_outward_bound_components() {
        assert_eq!(projected_gradient_norm(&[0.0, 1.0], &[5.0, -0.5]), 0.5);
        assert_eq!(projected_gradient_norm(&[0.0], &[-2.0]), 2.0);
    }
}
