//! Degree-based mean-field SIR dynamics, integrated with Heun's method on a
//! uniform grid.
//!
//! The per-group state is laid out as `[ŝ_1 … ŝ_Z, î_1 … î_Z]`; r̂ follows
//! from ŝ + î + r̂ = 1. The same right-hand side serves the full per-class
//! model (one group per degree class) and the grouped model.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::ControlSchedule;
use crate::error::{Error, Result};
use crate::grouping::{ControlGroups, GroupedDistribution};
use crate::network::{excess_distribution, DegreeDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpidemicParams {
    /// Spreading rate per contact per unit time.
    pub beta: f64,
    /// Natural recovery rate.
    pub gamma: f64,
    /// Initially infected fraction, identical in every group.
    pub i0: f64,
    /// Epidemic duration T.
    pub t_final: f64,
}

impl Default for EpidemicParams {
    fn default() -> Self {
        Self {
            beta: 0.5,
            gamma: 0.25,
            i0: 0.01,
            t_final: 20.0,
        }
    }
}

impl EpidemicParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::param(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::param(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.i0 >= 0.0 && self.i0 < 1.0) {
            return Err(Error::param(format!("i0 must lie in [0, 1), got {}", self.i0)));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(Error::param(format!("T must be > 0, got {}", self.t_final)));
        }
        Ok(())
    }
}

/// `n` equidistant samples t_0 = 0 … t_{n−1} = T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    n: usize,
    t_final: f64,
}

impl TimeGrid {
    pub fn new(n: usize, t_final: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::param(format!("grid needs at least 2 points, got {n}")));
        }
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::param(format!("T must be > 0, got {t_final}")));
        }
        Ok(Self { n, t_final })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn dt(&self) -> f64 {
        self.t_final / (self.n - 1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k + 1 == self.n {
            self.t_final
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.time(k)).collect()
    }

    /// Trapezoid weights: dt inside, dt/2 at both ends.
    pub fn trapezoid_weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.n {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }
}

/// Trapezoidal rule for samples on a uniform grid of spacing `dt`.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

/// Right-hand side of the controlled mean-field SIR system.
#[derive(Debug, Clone)]
pub struct MeanFieldModel {
    degree: Vec<f64>,
    edge_weight: Vec<f64>,
    population: Vec<f64>,
    assignment: Vec<usize>,
    num_controls: usize,
    beta: f64,
    gamma: f64,
}

impl MeanFieldModel {
    /// Grouped model: k̂_z as degree, q̂_z as edge weight, p̂_z as population.
    pub fn grouped(gd: &GroupedDistribution, cg: &ControlGroups, params: &EpidemicParams) -> Result<Self> {
        params.validate()?;
        if cg.num_groups() != gd.num_groups() {
            return Err(Error::param(format!(
                "control groups cover {} groups, distribution has {}",
                cg.num_groups(),
                gd.num_groups()
            )));
        }
        Ok(Self {
            degree: gd.k_hat.clone(),
            edge_weight: gd.q_hat.clone(),
            population: gd.p_hat.clone(),
            assignment: cg.assignment.clone(),
            num_controls: cg.num_controls(),
            beta: params.beta,
            gamma: params.gamma,
        })
    }

    /// Full model: one state pair per degree class, uncontrolled (a single
    /// control group that is always zero).
    pub fn full(dist: &DegreeDistribution, params: &EpidemicParams) -> Result<Self> {
        params.validate()?;
        let excess = excess_distribution(dist);
        Ok(Self {
            degree: dist.degrees().map(|k| k as f64).collect(),
            edge_weight: dist.degrees().map(|k| excess.class_weight(k)).collect(),
            population: dist.probabilities().to_vec(),
            assignment: vec![0; dist.num_classes()],
            num_controls: 1,
            beta: params.beta,
            gamma: params.gamma,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.degree.len()
    }

    pub fn num_controls(&self) -> usize {
        self.num_controls
    }

    pub fn population(&self) -> &[f64] {
        &self.population
    }

    pub fn initial_state(&self, i0: f64) -> Vec<f64> {
        let z = self.num_groups();
        let mut y = vec![1.0 - i0; 2 * z];
        y[z..].fill(i0);
        y
    }

    /// Σ_l q̂_l î_l.
    fn pressure(&self, state: &[f64]) -> f64 {
        let z = self.num_groups();
        self.edge_weight.iter().zip(&state[z..]).map(|(w, i)| w * i).sum()
    }

    /// `u`, `v` hold one value per control group at the current instant.
    pub fn rhs(&self, state: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
        let z = self.num_groups();
        let theta = self.pressure(state);
        let (s, i) = state.split_at(z);
        let (ds, di) = out.split_at_mut(z);
        for g in 0..z {
            let m = self.assignment[g];
            let infection = self.beta * self.degree[g] * s[g] * theta;
            ds[g] = -infection - s[g] * u[m];
            di[g] = infection - (self.gamma + v[m]) * i[g];
        }
    }

    /// Adds adjᵀ·∂f/∂state to `d_state` and adjᵀ·∂f/∂(u, v) to `d_u`, `d_v`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn vjp(
        &self,
        state: &[f64],
        u: &[f64],
        v: &[f64],
        adj: &[f64],
        d_state: &mut [f64],
        d_u: &mut [f64],
        d_v: &mut [f64],
    ) {
        let z = self.num_groups();
        let theta = self.pressure(state);
        let (s, i) = state.split_at(z);
        let (a_s, a_i) = adj.split_at(z);
        let mut sigma = 0.0;
        for g in 0..z {
            let m = self.assignment[g];
            let gap = a_i[g] - a_s[g];
            let bk = self.beta * self.degree[g];
            d_state[g] += bk * theta * gap - u[m] * a_s[g];
            sigma += bk * s[g] * gap;
            d_u[m] -= s[g] * a_s[g];
            d_v[m] -= i[g] * a_i[g];
        }
        for l in 0..z {
            let m = self.assignment[l];
            d_state[z + l] += self.edge_weight[l] * sigma - (self.gamma + v[m]) * a_i[l];
        }
    }

    /// One Heun step from t_n to t_{n+1}: Euler predictor with controls at
    /// t_n, trapezoidal corrector with controls at t_{n+1}. Returns the new
    /// state and the number of components clamped back into [0, 1].
    pub fn heun_step(
        &self,
        state: &[f64],
        now: (&[f64], &[f64]),
        next: (&[f64], &[f64]),
        dt: f64,
    ) -> (Vec<f64>, usize) {
        let mut ws = StepWorkspace::new(state.len());
        let mut out = vec![0.0; state.len()];
        let clamps = self.step_into(state, now, next, dt, &mut ws, &mut out);
        (out, clamps)
    }

    pub(crate) fn step_into(
        &self,
        state: &[f64],
        now: (&[f64], &[f64]),
        next: (&[f64], &[f64]),
        dt: f64,
        ws: &mut StepWorkspace,
        out: &mut [f64],
    ) -> usize {
        debug_assert!(dt > 0.0);
        self.rhs(state, now.0, now.1, &mut ws.k1);
        for ((p, y), k) in ws.predicted.iter_mut().zip(state).zip(&ws.k1) {
            *p = y + dt * k;
        }
        self.rhs(&ws.predicted, next.0, next.1, &mut ws.k2);
        for (((o, y), a), b) in out.iter_mut().zip(state).zip(&ws.k1).zip(&ws.k2) {
            *o = y + 0.5 * dt * (a + b);
        }
        let (events, violation) = clamp_state(out);
        ws.violation = violation;
        events
    }
}

/// Largest excursion outside [0, 1] (or of ŝ + î above 1) that the clamp is
/// allowed to repair. Anything larger means Δt is too coarse for the rates.
pub const MAX_CLAMP_VIOLATION: f64 = 1e-6;

/// Clamps ŝ, î into [0, 1] and, if needed, rescales so that ŝ + î ≤ 1.
/// Returns the number of repairs and the largest excursion seen.
fn clamp_state(state: &mut [f64]) -> (usize, f64) {
    let z = state.len() / 2;
    let mut events = 0;
    let mut worst = 0.0f64;
    for x in state.iter_mut() {
        if *x < 0.0 {
            worst = worst.max(-*x);
            *x = 0.0;
            events += 1;
        } else if *x > 1.0 {
            worst = worst.max(*x - 1.0);
            *x = 1.0;
            events += 1;
        }
    }
    for g in 0..z {
        let total = state[g] + state[z + g];
        if total > 1.0 + 1e-12 {
            worst = worst.max(total - 1.0);
            state[g] /= total;
            state[z + g] /= total;
            events += 1;
        }
    }
    (events, worst)
}

pub(crate) struct StepWorkspace {
    pub(crate) k1: Vec<f64>,
    pub(crate) k2: Vec<f64>,
    pub(crate) predicted: Vec<f64>,
    /// Largest clamp excursion of the last step.
    pub(crate) violation: f64,
}

impl StepWorkspace {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            predicted: vec![0.0; dim],
            violation: 0.0,
        }
    }
}

/// States at every grid node, plus the predictor states needed by the adjoint.
pub(crate) struct ForwardPass {
    pub(crate) states: Vec<Vec<f64>>,
    pub(crate) predicted: Vec<Vec<f64>>,
    pub(crate) clamp_events: usize,
}

/// Control values of every group at node `n` from a decision vector laid
/// out as `[u_1(t_0..), …, u_M(t_0..), v_1(t_0..), …, v_M(t_0..)]`.
pub(crate) fn gather_controls(controls: &[f64], m: usize, n_points: usize, n: usize, u: &mut [f64], v: &mut [f64]) {
    let offset = m * n_points;
    for c in 0..m {
        u[c] = controls[c * n_points + n];
        v[c] = controls[offset + c * n_points + n];
    }
}

pub(crate) fn forward(
    model: &MeanFieldModel,
    controls: &[f64],
    grid: &TimeGrid,
    i0: f64,
    keep_predicted: bool,
) -> Result<ForwardPass> {
    let n_points = grid.len();
    let m = model.num_controls();
    debug_assert_eq!(controls.len(), 2 * m * n_points);
    let dt = grid.dt();
    let dim = 2 * model.num_groups();
    let mut ws = StepWorkspace::new(dim);
    let (mut u0, mut v0, mut u1, mut v1) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);

    let mut states = Vec::with_capacity(n_points);
    let mut predicted = Vec::with_capacity(if keep_predicted { n_points - 1 } else { 0 });
    states.push(model.initial_state(i0));
    let mut clamp_events = 0;
    gather_controls(controls, m, n_points, 0, &mut u0, &mut v0);
    for n in 0..n_points - 1 {
        gather_controls(controls, m, n_points, n + 1, &mut u1, &mut v1);
        let mut next = vec![0.0; dim];
        clamp_events += model.step_into(&states[n], (&u0, &v0), (&u1, &v1), dt, &mut ws, &mut next);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure {
                step: n + 1,
                message: "non-finite state".into(),
            });
        }
        if ws.violation > MAX_CLAMP_VIOLATION {
            return Err(Error::NumericalFailure {
                step: n + 1,
                message: format!(
                    "state left [0, 1] by {:.3e}; the time step {dt} is too large for these rates",
                    ws.violation
                ),
            });
        }
        if keep_predicted {
            predicted.push(ws.predicted.clone());
        }
        states.push(next);
        std::mem::swap(&mut u0, &mut u1);
        std::mem::swap(&mut v0, &mut v1);
    }
    Ok(ForwardPass {
        states,
        predicted,
        clamp_events,
    })
}

/// Per-group and population-level state fractions over a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// `s_hat[z][n]`.
    pub s_hat: Vec<Vec<f64>>,
    pub i_hat: Vec<Vec<f64>>,
    pub r_hat: Vec<Vec<f64>>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
    /// Components clamped back into [0, 1] during integration.
    pub clamp_events: usize,
}

impl Trajectory {
    fn from_pass(pass: ForwardPass, population: &[f64], grid: TimeGrid) -> Self {
        let z = population.len();
        let n_points = pass.states.len();
        let mut s_hat = vec![Vec::with_capacity(n_points); z];
        let mut i_hat = vec![Vec::with_capacity(n_points); z];
        let mut r_hat = vec![Vec::with_capacity(n_points); z];
        for state in &pass.states {
            for g in 0..z {
                s_hat[g].push(state[g]);
                i_hat[g].push(state[z + g]);
                r_hat[g].push(1.0 - state[g] - state[z + g]);
            }
        }
        let (s, i, r) = aggregate(&s_hat, &i_hat, population);
        Self {
            grid,
            s_hat,
            i_hat,
            r_hat,
            s,
            i,
            r,
            clamp_events: pass.clamp_events,
        }
    }

    pub fn num_groups(&self) -> usize {
        self.s_hat.len()
    }

    /// ∫ i dt by the trapezoidal rule.
    pub fn cumulative_infected(&self) -> f64 {
        trapezoid(&self.i, self.grid.dt())
    }

    /// (time, value) of the largest aggregate infected fraction on the grid.
    pub fn peak_infected(&self) -> (f64, f64) {
        let (n, v) = self.i.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (n, &v)| if v > acc.1 { (n, v) } else { acc },
        );
        (self.grid.time(n), v)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let z = self.num_groups();
        let mut h = vec!["t".to_string(), "s".into(), "i".into(), "r".into()];
        for prefix in ["s_hat", "i_hat", "r_hat"] {
            h.extend((1..=z).map(|g| format!("{prefix}_{g}")));
        }
        h
    }

    pub fn csv_record(&self, n: usize) -> Vec<String> {
        let mut row = vec![
            self.grid.time(n).to_string(),
            self.s[n].to_string(),
            self.i[n].to_string(),
            self.r[n].to_string(),
        ];
        for block in [&self.s_hat, &self.i_hat, &self.r_hat] {
            row.extend(block.iter().map(|series| series[n].to_string()));
        }
        row
    }

    /// CSV with columns t, s, i, r, then ŝ_z, î_z, r̂_z for every group.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.csv_header())?;
        for n in 0..self.grid.len() {
            w.write_record(self.csv_record(n))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }
}

/// Population aggregates s = Σ p̂ ŝ, i = Σ p̂ î, r = 1 − s − i.
pub fn aggregate(s_hat: &[Vec<f64>], i_hat: &[Vec<f64>], population: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_points = s_hat.first().map_or(0, Vec::len);
    let mut s = vec![0.0; n_points];
    let mut i = vec![0.0; n_points];
    for ((ss, ii), w) in s_hat.iter().zip(i_hat).zip(population) {
        for n in 0..n_points {
            s[n] += w * ss[n];
            i[n] += w * ii[n];
        }
    }
    let r = s.iter().zip(&i).map(|(a, b)| 1.0 - a - b).collect();
    (s, i, r)
}

/// Uncontrolled dynamics over every degree class of `dist`.
pub fn simulate_full(dist: &DegreeDistribution, params: &EpidemicParams, grid: &TimeGrid) -> Result<Trajectory> {
    let model = MeanFieldModel::full(dist, params)?;
    let controls = vec![0.0; 2 * grid.len()];
    let pass = forward(&model, &controls, grid, params.i0, false)?;
    Ok(Trajectory::from_pass(pass, model.population(), *grid))
}

/// Grouped dynamics under a control schedule; a zero schedule gives the
/// uncontrolled grouped system.
pub fn simulate_grouped(
    gd: &GroupedDistribution,
    cg: &ControlGroups,
    schedule: &ControlSchedule,
    params: &EpidemicParams,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    let model = MeanFieldModel::grouped(gd, cg, params)?;
    check_schedule(schedule, cg, grid)?;
    let pass = forward(&model, &schedule.to_decision_vector(), grid, params.i0, false)?;
    Ok(Trajectory::from_pass(pass, model.population(), *grid))
}

pub(crate) fn check_schedule(schedule: &ControlSchedule, cg: &ControlGroups, grid: &TimeGrid) -> Result<()> {
    if schedule.grid() != grid {
        return Err(Error::param(format!(
            "schedule grid ({} points, T={}) does not match simulation grid ({} points, T={})",
            schedule.grid().len(),
            schedule.grid().t_final(),
            grid.len(),
            grid.t_final()
        )));
    }
    if schedule.num_controls() != cg.num_controls() {
        return Err(Error::param(format!(
            "schedule has {} control groups, expected {}",
            schedule.num_controls(),
            cg.num_controls()
        )));
    }
    Ok(())
}
