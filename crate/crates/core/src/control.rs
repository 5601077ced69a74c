//! Control schedules, the cost functional, heuristic strategies, and the
//! resource-allocation breakdown.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{trapezoid, EpidemicParams, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::grouping::ControlGroups;

/// Weights b (vaccination) and c (treatment) of the quadratic control costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub b: f64,
    pub c: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self { b: 0.25, c: 0.5 }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.b.is_finite() && self.b >= 0.0 && self.c.is_finite() && self.c >= 0.0) {
            return Err(Error::param(format!(
                "cost weights must be >= 0, got b={}, c={}",
                self.b, self.c
            )));
        }
        Ok(())
    }
}

/// Vaccination rates u_m(t_n) and treatment rates v_m(t_n) sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    grid: TimeGrid,
    /// `u[m][n]`.
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl ControlSchedule {
    pub fn new(grid: TimeGrid, u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<Self> {
        if u.is_empty() || u.len() != v.len() {
            return Err(Error::param(format!(
                "need the same positive number of u and v signals, got {} and {}",
                u.len(),
                v.len()
            )));
        }
        for series in u.iter().chain(&v) {
            if series.len() != grid.len() {
                return Err(Error::param(format!(
                    "control series has {} samples, grid has {}",
                    series.len(),
                    grid.len()
                )));
            }
            if let Some(x) = series.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(Error::param(format!("control values must be finite and >= 0, got {x}")));
            }
        }
        Ok(Self { grid, u, v })
    }

    pub fn constant(grid: &TimeGrid, m: usize, u: f64, v: f64) -> Result<Self> {
        Self::new(*grid, vec![vec![u; grid.len()]; m], vec![vec![v; grid.len()]; m])
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn num_controls(&self) -> usize {
        self.u.len()
    }

    pub fn u(&self) -> &[Vec<f64>] {
        &self.u
    }

    pub fn v(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn is_zero(&self) -> bool {
        self.u.iter().chain(&self.v).all(|s| s.iter().all(|&x| x == 0.0))
    }

    /// Flattened `[u_1(t_0..t_{N−1}), …, u_M(…), v_1(…), …, v_M(…)]`.
    pub fn to_decision_vector(&self) -> Vec<f64> {
        self.u.iter().chain(&self.v).flatten().copied().collect()
    }

    pub fn from_decision_vector(grid: &TimeGrid, m: usize, x: &[f64]) -> Result<Self> {
        let n = grid.len();
        if x.len() != 2 * m * n {
            return Err(Error::param(format!(
                "decision vector has {} entries, expected {}",
                x.len(),
                2 * m * n
            )));
        }
        let series: Vec<Vec<f64>> = x.chunks(n).map(<[f64]>::to_vec).collect();
        let (u, v) = series.split_at(m);
        Self::new(*grid, u.to_vec(), v.to_vec())
    }

    /// CSV with columns t, u_1..u_M, v_1..v_M.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.csv_header())?;
        for n in 0..self.grid.len() {
            w.write_record(self.csv_record(n))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn csv_header(&self) -> Vec<String> {
        let m = self.num_controls();
        std::iter::once("t".to_string())
            .chain((1..=m).map(|k| format!("u_{k}")))
            .chain((1..=m).map(|k| format!("v_{k}")))
            .collect()
    }

    pub fn csv_record(&self, n: usize) -> Vec<String> {
        std::iter::once(self.grid.time(n).to_string())
            .chain(self.u.iter().chain(&self.v).map(|s| s[n].to_string()))
            .collect()
    }

    /// Reads the CSV layout written by [`write_csv`](Self::write_csv). Times
    /// must be uniform and start at 0.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols = headers.len();
        if cols < 3 || (cols - 1) % 2 != 0 || &headers[0] != "t" {
            return Err(Error::Ingestion {
                line: 1,
                message: "expected header `t,u_1..u_M,v_1..v_M`".into(),
            });
        }
        let m = (cols - 1) / 2;
        let mut times = Vec::new();
        let mut u = vec![Vec::new(); m];
        let mut v = vec![Vec::new(); m];
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let line = row + 2;
            let parse = |j: usize| -> Result<f64> {
                record[j].trim().parse::<f64>().map_err(|_| Error::Ingestion {
                    line,
                    message: format!("bad number `{}` in column {}", &record[j], &headers[j]),
                })
            };
            times.push(parse(0)?);
            for k in 0..m {
                u[k].push(parse(1 + k)?);
                v[k].push(parse(1 + m + k)?);
            }
        }
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::Ingestion {
                line: 2,
                message: "schedule needs at least two rows starting at t = 0".into(),
            });
        }
        let grid = TimeGrid::new(times.len(), *times.last().unwrap())?;
        for (n, t) in times.iter().enumerate() {
            if (t - grid.time(n)).abs() > 1e-9 * grid.t_final().max(1.0) {
                return Err(Error::Ingestion {
                    line: n + 2,
                    message: format!("time {t} is off the uniform grid (expected {})", grid.time(n)),
                });
            }
        }
        Self::new(grid, u, v)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }
}

/// u ≡ β/2 and v ≡ γ/2 in every control group.
pub fn constant_strategy(params: &EpidemicParams, grid: &TimeGrid, m: usize) -> ControlSchedule {
    ControlSchedule::constant(grid, m, params.beta / 2.0, params.gamma / 2.0)
        .expect("validated parameters give a valid schedule")
}

pub fn zero_strategy(grid: &TimeGrid, m: usize) -> ControlSchedule {
    ControlSchedule::constant(grid, m, 0.0, 0.0).expect("zero schedule is valid")
}

/// Terms of J = ∫ Σ p̂ î + b Σ x u² + c Σ x v² dt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    /// Cumulative infected population ∫ i dt.
    pub infection: f64,
    pub vaccination: f64,
    pub treatment: f64,
}

impl CostBreakdown {
    pub(crate) fn from_terms(infection: f64, vaccination: f64, treatment: f64) -> Self {
        Self {
            total: infection + vaccination + treatment,
            infection,
            vaccination,
            treatment,
        }
    }
}

/// Per-group integrated control cost ∫ w x_m s_m² dt.
fn resource_per_group(series: &[Vec<f64>], cg: &ControlGroups, weight: f64, dt: f64) -> Vec<f64> {
    series
        .iter()
        .zip(&cg.x)
        .map(|(s, x)| {
            let sq: Vec<f64> = s.iter().map(|v| v * v).collect();
            weight * x * trapezoid(&sq, dt)
        })
        .collect()
}

pub fn evaluate_cost(
    traj: &Trajectory,
    schedule: &ControlSchedule,
    cg: &ControlGroups,
    cost: &CostParams,
) -> Result<CostBreakdown> {
    cost.validate()?;
    if traj.grid != *schedule.grid() {
        return Err(Error::param("trajectory and schedule grids differ"));
    }
    if schedule.num_controls() != cg.num_controls() {
        return Err(Error::param(format!(
            "schedule has {} control groups, expected {}",
            schedule.num_controls(),
            cg.num_controls()
        )));
    }
    let dt = traj.grid.dt();
    let infection = trapezoid(&traj.i, dt);
    let vaccination = resource_per_group(schedule.u(), cg, cost.b, dt).iter().sum();
    let treatment = resource_per_group(schedule.v(), cg, cost.c, dt).iter().sum();
    let breakdown = CostBreakdown::from_terms(infection, vaccination, treatment);
    if !breakdown.total.is_finite() {
        return Err(Error::NumericalFailure {
            step: traj.grid.len() - 1,
            message: format!("objective is {}", breakdown.total),
        });
    }
    Ok(breakdown)
}

/// Percentage shares of the control resources ∫ b x_m u_m² and ∫ c x_m v_m².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationShares {
    /// Raw resource per control group, vaccination then treatment.
    pub vaccination_resource: Vec<f64>,
    pub treatment_resource: Vec<f64>,
    /// The 2M (strategy, group) shares; together they sum to 100.
    pub vaccination_by_group: Vec<f64>,
    pub treatment_by_group: Vec<f64>,
    /// Vaccination plus treatment per group; sums to 100.
    pub group_totals: Vec<f64>,
    /// [vaccination, treatment]; sums to 100.
    pub strategy_totals: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Allocation {
    NoResourcesDeployed,
    Deployed(AllocationShares),
}

impl Allocation {
    pub fn shares(&self) -> Option<&AllocationShares> {
        match self {
            Allocation::Deployed(s) => Some(s),
            Allocation::NoResourcesDeployed => None,
        }
    }
}

pub fn resource_allocation(schedule: &ControlSchedule, cg: &ControlGroups, cost: &CostParams) -> Result<Allocation> {
    cost.validate()?;
    if schedule.num_controls() != cg.num_controls() {
        return Err(Error::param(format!(
            "schedule has {} control groups, expected {}",
            schedule.num_controls(),
            cg.num_controls()
        )));
    }
    let dt = schedule.grid().dt();
    let vacc = resource_per_group(schedule.u(), cg, cost.b, dt);
    let treat = resource_per_group(schedule.v(), cg, cost.c, dt);
    let total: f64 = vacc.iter().chain(&treat).sum();
    if total <= 0.0 {
        return Ok(Allocation::NoResourcesDeployed);
    }
    let pct = |x: f64| 100.0 * x / total;
    let vacc_total: f64 = vacc.iter().sum();
    let treat_total: f64 = treat.iter().sum();
    Ok(Allocation::Deployed(AllocationShares {
        vaccination_by_group: vacc.iter().map(|&x| pct(x)).collect(),
        treatment_by_group: treat.iter().map(|&x| pct(x)).collect(),
        group_totals: vacc.iter().zip(&treat).map(|(a, b)| pct(a + b)).collect(),
        strategy_totals: [pct(vacc_total), pct(treat_total)],
        vaccination_resource: vacc,
        treatment_resource: treat,
    }))
}

/// (J_heuristic − J_optimal) / J_heuristic × 100.
pub fn percent_improvement(j_heuristic: f64, j_optimal: f64) -> f64 {
    if j_heuristic == 0.0 {
        0.0
    } else {
        100.0 * (j_heuristic - j_optimal) / j_heuristic
    }
}
