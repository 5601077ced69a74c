use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netsir::experiment::{
    run_experiment, run_group_error, run_sweep, write_atomic, write_group_error_csv, ExperimentConfig,
    ExperimentReport, NetworkSpec, Strategy,
};
use netsir::network::{read_edge_list, EdgeListOptions};
use netsir::optimizer::{write_sweep_csv, SweepParameter};
use netsir::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "netsir",
    version,
    about = "Optimal vaccination and treatment control of network SIR epidemics"
)]
struct Cli {
    /// TOML experiment config; omitted sections take their defaults.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long, global = true, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    i0: Option<f64>,
    /// Epidemic duration T.
    #[arg(long, global = true, allow_hyphen_values = true)]
    t_final: Option<f64>,
    /// Vaccination cost weight.
    #[arg(long, global = true, allow_hyphen_values = true)]
    b: Option<f64>,
    /// Treatment cost weight.
    #[arg(long, global = true, allow_hyphen_values = true)]
    c: Option<f64>,
    /// Number of degree groups Z.
    #[arg(long, global = true)]
    z: Option<usize>,
    /// Number of control groups M.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Number of time samples N.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    max_iterations: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    gradient_tol: Option<f64>,
    /// Use a power-law network with this exponent (keeps configured bounds if any).
    #[arg(long, global = true, conflicts_with_all = ["poisson_mean", "edge_list", "distribution"])]
    alpha: Option<f64>,
    /// Use a truncated Poisson network with this mean.
    #[arg(long, global = true, conflicts_with_all = ["edge_list", "distribution"])]
    poisson_mean: Option<f64>,
    #[arg(long, global = true, requires = "k_max")]
    k_min: Option<usize>,
    #[arg(long, global = true, requires = "k_min")]
    k_max: Option<usize>,
    /// Use the degree distribution of this edge list.
    #[arg(long, global = true, conflicts_with = "distribution")]
    edge_list: Option<PathBuf>,
    /// Use a `k p_k` distribution file.
    #[arg(long, global = true)]
    distribution: Option<PathBuf>,
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate heuristic strategies (default: none and constant).
    Simulate {
        /// Strategies to run: constant, none, file, optimal.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
        /// Controls CSV (t,u_1..,v_1..) to simulate as the `file` strategy.
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Compute the optimal control schedule.
    Optimize,
    /// Optimal strategy against the constant and no-control heuristics.
    Compare,
    /// Combined relative error of the grouped model for a range of Z.
    GroupError {
        #[arg(long, default_value_t = 1)]
        z_min: usize,
        /// Defaults to the number of degree classes.
        #[arg(long)]
        z_max: Option<usize>,
        #[arg(long, default_value_t = 1)]
        z_step: usize,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Optimal, constant and no-control J over a range of one parameter.
    Sweep {
        /// beta, b or c.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Convert an edge list into a degree-distribution file.
    Ingest {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        reject_duplicates: bool,
        #[arg(long)]
        reject_self_loops: bool,
    },
}

fn apply_overrides(config: &mut ExperimentConfig, o: &Overrides) {
    macro_rules! set {
        ($field:expr, $value:expr) => {
            if let Some(v) = $value {
                $field = v;
            }
        };
    }
    set!(config.epidemic.beta, o.beta);
    set!(config.epidemic.gamma, o.gamma);
    set!(config.epidemic.i0, o.i0);
    set!(config.epidemic.t_final, o.t_final);
    set!(config.cost.b, o.b);
    set!(config.cost.c, o.c);
    set!(config.grouping.z, o.z);
    set!(config.grouping.m, o.m);
    set!(config.grid.n, o.n);
    set!(config.solver.max_iterations, o.max_iterations);
    set!(config.solver.gradient_tol, o.gradient_tol);
    set!(config.output_dir, o.output_dir.clone());

    let bounds = |config: &ExperimentConfig| match (o.k_min, o.k_max, &config.network) {
        (Some(lo), Some(hi), _) => (lo, hi),
        (_, _, NetworkSpec::PowerLaw { k_min, k_max, .. } | NetworkSpec::Poisson { k_min, k_max, .. }) => {
            (*k_min, *k_max)
        }
        _ => (1, 100),
    };
    if let Some(alpha) = o.alpha {
        let (k_min, k_max) = bounds(config);
        config.network = NetworkSpec::PowerLaw { alpha, k_min, k_max };
    } else if let Some(mean) = o.poisson_mean {
        let (k_min, k_max) = bounds(config);
        config.network = NetworkSpec::Poisson { mean, k_min, k_max };
    } else if let Some(path) = &o.edge_list {
        config.network = NetworkSpec::EdgeList {
            path: path.clone(),
            reject_duplicates: false,
            reject_self_loops: false,
        };
    } else if let Some(path) = &o.distribution {
        config.network = NetworkSpec::Distribution { path: path.clone() };
    } else if let (Some(lo), Some(hi)) = (o.k_min, o.k_max) {
        match &mut config.network {
            NetworkSpec::PowerLaw { k_min, k_max, .. } | NetworkSpec::Poisson { k_min, k_max, .. } => {
                *k_min = lo;
                *k_max = hi;
            }
            _ => log::warn!("--k-min/--k-max ignored for file-based networks"),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    apply_overrides(&mut config, &cli.overrides);
    Ok(config)
}

fn print_report(report: &ExperimentReport, dir: &Path) {
    let s = &report.summary;
    println!(
        "network: {} degree classes [{}, {}], <k> = {:.4}; Z = {} (requested {}), M = {}",
        s.network.degree_classes,
        s.network.k_min,
        s.network.k_max,
        s.network.mean_degree,
        s.grouping.achieved_z,
        s.grouping.requested_z,
        s.grouping.x.len()
    );
    println!(
        "{:<10} {:>12} {:>12} {:>12} {:>12}",
        "strategy", "J", "infected", "vaccination", "treatment"
    );
    for o in &s.strategies {
        println!(
            "{:<10} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            o.strategy.name(),
            o.cost.total,
            o.cost.infection,
            o.cost.vaccination,
            o.cost.treatment
        );
        if let Some(d) = &o.solver {
            println!(
                "           {} iterations, {:?}, projected gradient {:.2e}",
                d.iterations, d.termination, d.projected_gradient_norm
            );
        }
    }
    for imp in &s.improvements {
        println!("improvement over {}: {:.2}%", imp.versus.name(), imp.percent);
    }
    println!("report written to {}", dir.display());
}

fn run_strategies(mut config: ExperimentConfig, strategies: Vec<Strategy>) -> Result<()> {
    config.strategies = strategies;
    config.validate()?;
    let report = run_experiment(&config)?;
    report.write(&config.output_dir)?;
    print_report(&report, &config.output_dir);
    Ok(())
}

fn emit(output: Option<&Path>, bytes: Vec<u8>) -> Result<()> {
    match output {
        Some(path) => write_atomic(path, &bytes),
        None => io::stdout().write_all(&bytes).map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Simulate { strategies, schedule } => {
            let mut config = config;
            if let Some(path) = schedule {
                config.schedule_file = Some(path);
            }
            let strategies = match strategies {
                Some(names) => names.iter().map(|s| s.parse()).collect::<Result<Vec<_>>>()?,
                None if config.schedule_file.is_some() => vec![Strategy::File, Strategy::Constant, Strategy::None],
                None => vec![Strategy::Constant, Strategy::None],
            };
            run_strategies(config, strategies)
        }
        Command::Optimize => run_strategies(config, vec![Strategy::Optimal]),
        Command::Compare => run_strategies(config, vec![Strategy::Optimal, Strategy::Constant, Strategy::None]),
        Command::GroupError {
            z_min,
            z_max,
            z_step,
            output,
        } => {
            let z_max = match z_max {
                Some(z) => z,
                None => netsir::experiment::build_network(&config.network)?.0.num_classes(),
            };
            if z_step == 0 || z_min == 0 || z_min > z_max {
                return Err(Error::Parameter(format!(
                    "empty Z range {z_min}..={z_max} step {z_step}"
                )));
            }
            let zs: Vec<usize> = (z_min..=z_max).step_by(z_step).collect();
            let rows = run_group_error(&config, &zs)?;
            let mut bytes = Vec::new();
            write_group_error_csv(&rows, &mut bytes)?;
            emit(output.as_deref(), bytes)
        }
        Command::Sweep { param, values, output } => {
            let parameter: SweepParameter = param.parse()?;
            let rows = run_sweep(&config, parameter, &values)?;
            for r in rows.iter().filter(|r| r.error.is_some()) {
                log::error!(
                    "{} = {}: {}",
                    parameter,
                    r.value,
                    r.error.as_deref().unwrap_or_default()
                );
            }
            let mut bytes = Vec::new();
            write_sweep_csv(parameter, &rows, &mut bytes)?;
            emit(output.as_deref(), bytes)?;
            match rows.iter().find(|r| r.error.is_some()) {
                Some(r) => Err(Error::NumericalFailure {
                    step: 0,
                    message: format!("sweep point {} = {} failed", parameter, r.value),
                }),
                None => Ok(()),
            }
        }
        Command::Ingest {
            input,
            output,
            reject_duplicates,
            reject_self_loops,
        } => {
            let options = EdgeListOptions {
                reject_duplicates,
                reject_self_loops,
            };
            let (dist, summary) = read_edge_list(&input, &options)?;
            if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::Io {
                    path: parent.to_path_buf(),
                    source: e,
                })?;
            }
            write_atomic(&output, dist.to_text().as_bytes())?;
            println!(
                "{} nodes, {} edges, <k> = {:.4}, degrees {}..={} ({} distinct); dropped {} duplicates, {} self-loops",
                summary.nodes,
                summary.edges,
                summary.mean_degree,
                dist.k_min(),
                dist.k_max(),
                summary.distinct_degrees,
                summary.duplicates_removed,
                summary.self_loops_removed
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
