//! Config-driven experiment runner: builds the network and grouping from an
//! [`ExperimentConfig`], runs the requested strategies and writes the report
//! bundle (`trajectories.csv`, `controls.csv`, `allocation.csv`,
//! `summary.txt`, plus `history.csv` and the effective `config.toml`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{
    constant_strategy, evaluate_cost, percent_improvement, resource_allocation, zero_strategy, Allocation,
    ControlSchedule, CostBreakdown, CostParams,
};
use crate::dynamics::{simulate_grouped, EpidemicParams, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::grouping::{
    amass_control_groups, grouped_stats, grouping_error, partition_equal_mass, ControlGroups, GroupedDistribution,
};
use crate::network::{
    poisson_distribution, power_law_distribution, read_edge_list, DegreeDistribution, EdgeListOptions, EdgeListSummary,
};
use crate::optimizer::{
    initial_guess, optimize, sweep, OptimizationProblem, OptimizerOptions, SweepParameter, SweepRow, Termination,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    /// p_k ∝ k^(−alpha) on [k_min, k_max].
    PowerLaw { alpha: f64, k_min: usize, k_max: usize },
    /// Truncated Poisson with parameter `mean` on [k_min, k_max].
    Poisson { mean: f64, k_min: usize, k_max: usize },
    /// Empirical distribution of an undirected edge list.
    EdgeList {
        path: PathBuf,
        #[serde(default)]
        reject_duplicates: bool,
        #[serde(default)]
        reject_self_loops: bool,
    },
    /// Two-column `k p_k` file as written by `ingest`.
    Distribution { path: PathBuf },
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec::PowerLaw {
            alpha: 2.0,
            k_min: 6,
            k_max: 105,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingSpec {
    /// Number of degree groups Z.
    pub z: usize,
    /// Number of control groups M.
    pub m: usize,
}

impl Default for GroupingSpec {
    fn default() -> Self {
        Self { z: 21, m: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Number of time samples including both ends.
    pub n: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n: 4001 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Optimal,
    /// u ≡ β/2, v ≡ γ/2.
    Constant,
    None,
    /// Schedule read from `schedule_file`.
    File,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Optimal => "optimal",
            Strategy::Constant => "constant",
            Strategy::None => "none",
            Strategy::File => "file",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(Strategy::Optimal),
            "constant" => Ok(Strategy::Constant),
            "none" => Ok(Strategy::None),
            "file" => Ok(Strategy::File),
            other => Err(Error::Config {
                path: "strategies".into(),
                message: format!("unknown strategy `{other}` (optimal, constant, none, file)"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategies: Vec<Strategy>,
    pub output_dir: PathBuf,
    /// Controls CSV used by the `file` strategy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule_file: Option<PathBuf>,
    pub network: NetworkSpec,
    pub grouping: GroupingSpec,
    pub epidemic: EpidemicParams,
    pub cost: CostParams,
    pub grid: GridSpec,
    pub solver: OptimizerOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategies: vec![Strategy::Optimal, Strategy::Constant, Strategy::None],
            output_dir: PathBuf::from("results"),
            schedule_file: None,
            network: NetworkSpec::default(),
            grouping: GroupingSpec::default(),
            epidemic: EpidemicParams::default(),
            cost: CostParams::default(),
            grid: GridSpec::default(),
            solver: OptimizerOptions::default(),
        }
    }
}

fn config_error(path: &str, err: Error) -> Error {
    match err {
        Error::Parameter(message) | Error::DegenerateDistribution(message) => Error::Config {
            path: path.to_string(),
            message,
        },
        other => other,
    }
}

impl ExperimentConfig {
    /// Parses TOML; errors name the offending field, e.g. `epidemic.beta`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config {
                path,
                message: inner.message().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file. Relative data paths inside it are taken relative
    /// to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            let resolve = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            match &mut config.network {
                NetworkSpec::EdgeList { path, .. } | NetworkSpec::Distribution { path } => resolve(path),
                _ => {}
            }
            if let Some(p) = config.schedule_file.as_mut() {
                resolve(p);
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.epidemic.validate().map_err(|e| config_error("epidemic", e))?;
        self.cost.validate().map_err(|e| config_error("cost", e))?;
        TimeGrid::new(self.grid.n, self.epidemic.t_final).map_err(|e| config_error("grid.n", e))?;
        if self.grouping.z == 0 {
            return Err(config_error("grouping.z", Error::param("Z must be >= 1")));
        }
        if self.grouping.m == 0 || self.grouping.m > self.grouping.z {
            return Err(config_error("grouping.m", Error::param("M must lie in [1, Z]")));
        }
        let s = &self.solver;
        if s.memory == 0 || s.max_backtracks == 0 || s.stall_window == 0 {
            return Err(config_error(
                "solver",
                Error::param("memory, max_backtracks and stall_window must be >= 1"),
            ));
        }
        if !(s.gradient_tol >= 0.0 && s.relative_decrease_tol >= 0.0 && s.armijo > 0.0 && s.armijo < 1.0) {
            return Err(config_error(
                "solver",
                Error::param("tolerances must be >= 0 and armijo in (0, 1)"),
            ));
        }
        if self.strategies.is_empty() {
            return Err(config_error(
                "strategies",
                Error::param("at least one strategy is required"),
            ));
        }
        if self.strategies.contains(&Strategy::File) && self.schedule_file.is_none() {
            return Err(config_error(
                "schedule_file",
                Error::param("the `file` strategy needs schedule_file"),
            ));
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.n, self.epidemic.t_final)
    }
}

pub fn build_network(spec: &NetworkSpec) -> Result<(DegreeDistribution, Option<EdgeListSummary>)> {
    match spec {
        NetworkSpec::PowerLaw { alpha, k_min, k_max } => Ok((power_law_distribution(*alpha, *k_min, *k_max)?, None)),
        NetworkSpec::Poisson { mean, k_min, k_max } => Ok((poisson_distribution(*mean, *k_min, *k_max)?, None)),
        NetworkSpec::EdgeList {
            path,
            reject_duplicates,
            reject_self_loops,
        } => {
            let options = EdgeListOptions {
                reject_duplicates: *reject_duplicates,
                reject_self_loops: *reject_self_loops,
            };
            let (dist, summary) = read_edge_list(path, &options)?;
            Ok((dist, Some(summary)))
        }
        NetworkSpec::Distribution { path } => Ok((DegreeDistribution::read(path)?, None)),
    }
}

/// Network, grouping and grid resolved from a config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub distribution: DegreeDistribution,
    pub edge_list: Option<EdgeListSummary>,
    pub grouped: GroupedDistribution,
    pub control_groups: ControlGroups,
    pub grid: TimeGrid,
}

impl Setup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (distribution, edge_list) = build_network(&config.network).map_err(|e| config_error("network", e))?;
        let grouping =
            partition_equal_mass(&distribution, config.grouping.z).map_err(|e| config_error("grouping.z", e))?;
        let grouped = grouped_stats(&distribution, &grouping)?;
        let control_groups =
            amass_control_groups(&grouped, config.grouping.m).map_err(|e| config_error("grouping.m", e))?;
        Ok(Self {
            distribution,
            edge_list,
            grouped,
            control_groups,
            grid: config.time_grid()?,
        })
    }

    pub fn problem(&self, config: &ExperimentConfig) -> Result<OptimizationProblem> {
        OptimizationProblem::new(
            self.grouped.clone(),
            self.control_groups.clone(),
            config.epidemic,
            config.cost,
            self.grid,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDiagnostics {
    pub k_min: usize,
    pub k_max: usize,
    pub degree_classes: usize,
    pub mean_degree: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_list: Option<EdgeListSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingDiagnostics {
    pub requested_z: usize,
    pub achieved_z: usize,
    /// Inclusive degree range of every group.
    pub degree_ranges: Vec<(usize, usize)>,
    pub p_hat: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub k_hat: Vec<f64>,
    /// 1-based control group of every group.
    pub control_group: Vec<usize>,
    /// Population fraction x_m of each control group.
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub variables: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub projected_gradient_norm: f64,
    pub initial_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub cost: CostBreakdown,
    pub cumulative_infected: f64,
    pub peak_infected: f64,
    pub peak_time: f64,
    pub final_recovered: f64,
    pub clamp_events: usize,
    pub allocation: Allocation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverDiagnostics>,
}

/// Percentage reduction of J achieved by the optimal strategy over another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub versus: Strategy,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub network: NetworkDiagnostics,
    pub grouping: GroupingDiagnostics,
    pub strategies: Vec<StrategyOutcome>,
    pub improvements: Vec<Improvement>,
}

impl Summary {
    pub fn outcome(&self, strategy: Strategy) -> Option<&StrategyOutcome> {
        self.strategies.iter().find(|o| o.strategy == strategy)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub summary: Summary,
    pub trajectories: Vec<(Strategy, Trajectory)>,
    pub schedules: Vec<(Strategy, ControlSchedule)>,
    /// J per optimizer iteration, when the optimal strategy ran.
    pub history: Option<Vec<f64>>,
}

fn diagnostics(setup: &Setup) -> (NetworkDiagnostics, GroupingDiagnostics) {
    let d = &setup.distribution;
    let gd = &setup.grouped;
    let network = NetworkDiagnostics {
        k_min: d.k_min(),
        k_max: d.k_max(),
        degree_classes: d.num_classes(),
        mean_degree: d.mean_degree(),
        edge_list: setup.edge_list.clone(),
    };
    let grouping = GroupingDiagnostics {
        requested_z: gd.grouping.requested(),
        achieved_z: gd.num_groups(),
        degree_ranges: gd.degree_ranges.clone(),
        p_hat: gd.p_hat.clone(),
        q_hat: gd.q_hat.clone(),
        k_hat: gd.k_hat.clone(),
        control_group: setup.control_groups.assignment.iter().map(|m| m + 1).collect(),
        x: setup.control_groups.x.clone(),
    };
    (network, grouping)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let setup = Setup::new(config)?;
    let problem = setup.problem(config)?;
    let m = setup.control_groups.num_controls();
    let (network, grouping) = diagnostics(&setup);

    let mut strategies: Vec<Strategy> = Vec::new();
    for &s in &config.strategies {
        if !strategies.contains(&s) {
            strategies.push(s);
        }
    }
    let mut outcomes = Vec::new();
    let mut trajectories = Vec::new();
    let mut schedules = Vec::new();
    let mut history = None;

    for &strategy in &strategies {
        log::info!("running strategy `{}`", strategy.name());
        let (schedule, solver) = match strategy {
            Strategy::Constant => (constant_strategy(&config.epidemic, &setup.grid, m), None),
            Strategy::None => (zero_strategy(&setup.grid, m), None),
            Strategy::File => {
                let path = config.schedule_file.as_ref().expect("validated");
                (ControlSchedule::load_csv(path)?, None)
            }
            Strategy::Optimal => {
                let result = optimize(&problem, &initial_guess(&problem)?, &config.solver)?;
                let diag = SolverDiagnostics {
                    variables: problem.num_variables(),
                    iterations: result.iterations,
                    evaluations: result.evaluations,
                    converged: result.converged,
                    termination: result.termination,
                    projected_gradient_norm: result.gradient_norm,
                    initial_objective: result.history[0],
                };
                history = Some(result.history);
                (result.schedule, Some(diag))
            }
        };
        let traj = simulate_grouped(
            &setup.grouped,
            &setup.control_groups,
            &schedule,
            &config.epidemic,
            &setup.grid,
        )?;
        let cost = evaluate_cost(&traj, &schedule, &setup.control_groups, &config.cost)?;
        let allocation = resource_allocation(&schedule, &setup.control_groups, &config.cost)?;
        let (peak_time, peak_infected) = traj.peak_infected();
        outcomes.push(StrategyOutcome {
            strategy,
            cost,
            cumulative_infected: traj.cumulative_infected(),
            peak_infected,
            peak_time,
            final_recovered: *traj.r.last().expect("grid has points"),
            clamp_events: traj.clamp_events,
            allocation,
            solver,
        });
        trajectories.push((strategy, traj));
        schedules.push((strategy, schedule));
    }

    let mut improvements = Vec::new();
    if let Some(opt) = outcomes.iter().find(|o| o.strategy == Strategy::Optimal) {
        for o in outcomes.iter().filter(|o| o.strategy != Strategy::Optimal) {
            improvements.push(Improvement {
                versus: o.strategy,
                percent: percent_improvement(o.cost.total, opt.cost.total),
            });
        }
    }

    Ok(ExperimentReport {
        config: config.clone(),
        summary: Summary {
            network,
            grouping,
            strategies: outcomes,
            improvements,
        },
        trajectories,
        schedules,
        history,
    })
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_bytes(f: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    f(&mut w)?;
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

impl ExperimentReport {
    /// Trajectories of every strategy, prefixed by a `strategy` column.
    pub fn trajectories_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(|w| {
            if let Some((_, first)) = self.trajectories.first() {
                w.write_record(std::iter::once("strategy".to_string()).chain(first.csv_header()))?;
            }
            for (strategy, traj) in &self.trajectories {
                for n in 0..traj.grid.len() {
                    w.write_record(std::iter::once(strategy.name().to_string()).chain(traj.csv_record(n)))?;
                }
            }
            Ok(())
        })
    }

    pub fn controls_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(|w| {
            if let Some((_, first)) = self.schedules.first() {
                w.write_record(std::iter::once("strategy".to_string()).chain(first.csv_header()))?;
            }
            for (strategy, schedule) in &self.schedules {
                for n in 0..schedule.grid().len() {
                    w.write_record(std::iter::once(strategy.name().to_string()).chain(schedule.csv_record(n)))?;
                }
            }
            Ok(())
        })
    }

    /// One row per (strategy, control group) with percentage shares, plus an
    /// `all` row holding the vaccination/treatment split.
    pub fn allocation_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(|w| {
            w.write_record([
                "strategy",
                "status",
                "control_group",
                "vaccination_pct",
                "treatment_pct",
                "total_pct",
                "vaccination_resource",
                "treatment_resource",
            ])?;
            for o in &self.summary.strategies {
                let name = o.strategy.name();
                match o.allocation.shares() {
                    None => w.write_record([name, "no_resources_deployed", "", "", "", "", "", ""])?,
                    Some(s) => {
                        for m in 0..s.group_totals.len() {
                            w.write_record([
                                name.to_string(),
                                "deployed".into(),
                                (m + 1).to_string(),
                                s.vaccination_by_group[m].to_string(),
                                s.treatment_by_group[m].to_string(),
                                s.group_totals[m].to_string(),
                                s.vaccination_resource[m].to_string(),
                                s.treatment_resource[m].to_string(),
                            ])?;
                        }
                        w.write_record([
                            name.to_string(),
                            "deployed".into(),
                            "all".into(),
                            s.strategy_totals[0].to_string(),
                            s.strategy_totals[1].to_string(),
                            "100".into(),
                            s.vaccination_resource.iter().sum::<f64>().to_string(),
                            s.treatment_resource.iter().sum::<f64>().to_string(),
                        ])?;
                    }
                }
            }
            Ok(())
        })
    }

    pub fn summary_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }

    /// Writes the bundle into `dir` (created if missing).
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("trajectories.csv"), &self.trajectories_csv()?)?;
        write_atomic(&dir.join("controls.csv"), &self.controls_csv()?)?;
        write_atomic(&dir.join("allocation.csv"), &self.allocation_csv()?)?;
        write_atomic(&dir.join("summary.txt"), self.summary_text().as_bytes())?;
        write_atomic(&dir.join("config.toml"), self.config.to_toml_string().as_bytes())?;
        if let Some(history) = &self.history {
            let bytes = csv_bytes(|w| {
                w.write_record(["iteration", "objective"])?;
                for (k, j) in history.iter().enumerate() {
                    w.write_record([k.to_string(), j.to_string()])?;
                }
                Ok(())
            })?;
            write_atomic(&dir.join("history.csv"), &bytes)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupErrorRow {
    pub z: usize,
    pub error: f64,
}

/// Combined relative error of the uncontrolled grouped model for each Z.
pub fn run_group_error(config: &ExperimentConfig, zs: &[usize]) -> Result<Vec<GroupErrorRow>> {
    config.validate()?;
    let (dist, _) = build_network(&config.network).map_err(|e| config_error("network", e))?;
    let grid = config.time_grid()?;
    let classes = dist.num_classes();
    if let Some(&z) = zs.iter().find(|&&z| z == 0 || z > classes) {
        return Err(Error::param(format!("Z = {z} outside [1, {classes}]")));
    }
    zs.par_iter()
        .map(|&z| {
            Ok(GroupErrorRow {
                z,
                error: grouping_error(&dist, z, &config.epidemic, &grid)?,
            })
        })
        .collect()
}

pub fn write_group_error_csv<W: Write>(rows: &[GroupErrorRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["z", "combined_relative_error"])?;
    for r in rows {
        w.write_record([r.z.to_string(), r.error.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Optimal, constant and no-control J at each value of `parameter`, all other
/// settings taken from `config`.
pub fn run_sweep(config: &ExperimentConfig, parameter: SweepParameter, values: &[f64]) -> Result<Vec<SweepRow>> {
    let setup = Setup::new(config)?;
    let problem = setup.problem(config)?;
    Ok(sweep(&problem, parameter, values, &config.solver))
}
