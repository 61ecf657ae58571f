//! `parasdm` command line. [`run`] returns the process exit code.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{brute_force_routes, compare, emit_report, load_datasets, random_instance, RunConfig};
use crate::error::{Error, Result};
use crate::learning::{q_learn, StepRule};
use crate::lifted::{
    gradient_fixed_point, lambda_fixed_point, lift, policy_from_lambda, solve_parasdm_annealed, ParamMap, StateParams,
};
use crate::model::{generate_dataset, Beta, DatasetSpec, FacilityLayout, Network, Point2};
use crate::stagewise::{hard_cost, solve_flpo_annealed};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "parasdm",
    version,
    about = "Stage-wise and lifted FLPO solvers with a comparison harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate benchmark datasets (N=50 in 5 clusters, M=5).
    Gen {
        /// Seeds as `a..b` (inclusive), a comma list, or a single value.
        #[arg(long, default_value = "1..10")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        /// Override the facility count.
        #[arg(long)]
        facilities: Option<usize>,
    },
    /// Annealed stage-wise solve of one dataset.
    SolveFlpo {
        #[arg(long)]
        dataset: PathBuf,
        /// Solution JSON path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Annealed lifted solve of one dataset.
    SolveSdm {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        lifted: LiftedArgs,
        /// Include the stationary policy rows in the solution.
        #[arg(long)]
        dump_policy: bool,
    },
    /// Run both solvers on every dataset in a directory and write the report.
    Compare {
        #[arg(long)]
        datasets: PathBuf,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        lifted: LiftedArgs,
    },
    /// Check the stage-wise hard cost against route enumeration.
    Oracle {
        /// Check the annealed layout of this dataset instead of random instances.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 4)]
        max_nodes: usize,
        #[arg(long, default_value_t = 3)]
        max_facilities: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tabular soft Q-learning against the exact fixed points.
    Learn {
        /// Dataset to learn on; facilities sit on the first M nodes. Defaults
        /// to the one-node, one-facility instance.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        episodes: usize,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// [default: 0.01 / max squared distance]
    #[arg(long)]
    beta_min: Option<f64>,
    /// [default: 1e4 / min positive squared distance]
    #[arg(long)]
    beta_max: Option<f64>,
    /// [default: 1.2]
    #[arg(long)]
    growth: Option<f64>,
    /// [default: 1e-4]
    #[arg(long)]
    perturbation: Option<f64>,
    /// [default: 1e-8]
    #[arg(long)]
    inner_tol: Option<f64>,
    /// [default: 200]
    #[arg(long)]
    inner_max_iter: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct LiftedArgs {
    /// Discount factor in (0, 1] [default: 1.0]
    #[arg(long)]
    gamma: Option<f64>,
    /// One location per facility shared by all stages [default]
    #[arg(long, conflicts_with = "untied")]
    tie_stages: bool,
    /// Independent location per facility and stage
    #[arg(long)]
    untied: bool,
    /// [default: 1e-12]
    #[arg(long)]
    fixed_point_tol: Option<f64>,
    /// BFGS iterations per β [default: 100]
    #[arg(long)]
    param_max_iter: Option<usize>,
}

impl ScheduleArgs {
    fn config(&self, lifted: Option<&LiftedArgs>) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let tie = lifted.and_then(|l| {
            if l.untied {
                Some(false)
            } else if l.tie_stages {
                Some(true)
            } else {
                None
            }
        });
        let flags = RunConfig {
            beta_min: self.beta_min,
            beta_max: self.beta_max,
            growth: self.growth,
            perturbation: self.perturbation,
            inner_tol: self.inner_tol,
            inner_max_iter: self.inner_max_iter,
            seed: self.seed,
            gamma: lifted.and_then(|l| l.gamma),
            tie_stages: tie,
            fixed_point_tol: lifted.and_then(|l| l.fixed_point_tol),
            param_max_iter: lifted.and_then(|l| l.param_max_iter),
            fixed_point_max_sweeps: None,
        };
        Ok(file.overridden_by(&flags))
    }
}

enum Failure {
    Validation(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::TooManyPaths { .. } | Error::Contract(_) => Failure::Validation(e.to_string()),
            e if e.is_validation() => Failure::Validation(e.to_string()),
            e => Failure::Solver(e.to_string()),
        }
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            EXIT_VALIDATION
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver failure: {m}");
            EXIT_SOLVER
        }
    }
}

fn parse_seeds(text: &str) -> std::result::Result<Vec<u64>, String> {
    let bad = || format!("cannot parse seeds '{text}'");
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn dispatch(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Gen { seeds, out, facilities } => {
            let seeds = parse_seeds(&seeds).map_err(Failure::Validation)?;
            std::fs::create_dir_all(&out).map_err(Error::from)?;
            for seed in seeds {
                let mut spec = DatasetSpec::benchmark(seed);
                if let Some(m) = facilities {
                    spec.facility_count = m;
                }
                let net = generate_dataset(&spec)?;
                let path = out.join(format!("dataset_{seed:03}.json"));
                net.save(&path)?;
                println!("{}", path.display());
            }
        }
        Command::SolveFlpo { dataset, out, schedule } => {
            let net = Network::load(&dataset)?;
            let schedule = schedule.config(None)?.schedule_for(&net)?;
            let sol = solve_flpo_annealed(&net, &schedule)?;
            write_or_print(out.as_deref(), &sol.to_json()?)?;
        }
        Command::SolveSdm {
            dataset,
            out,
            schedule,
            lifted,
            dump_policy,
        } => {
            let net = Network::load(&dataset)?;
            let config = schedule.config(Some(&lifted))?;
            let sol = solve_parasdm_annealed(&net, &config.schedule_for(&net)?, &config.lifted_options()?)?;
            write_or_print(out.as_deref(), &sol.to_json(dump_policy)?)?;
        }
        Command::Compare {
            datasets,
            out,
            schedule,
            lifted,
        } => {
            let config = schedule.config(Some(&lifted))?;
            let sets = load_datasets(&datasets)?;
            if sets.is_empty() {
                return Err(Failure::Validation(format!("no datasets in {}", datasets.display())));
            }
            let table = compare(&sets, &config)?;
            emit_report(&table, &out)?;
            let s = table.summary();
            println!(
                "{} datasets, max gap {:.4}, median time lifted/stagewise {:.3}; report in {}",
                s.datasets,
                s.max_gap,
                s.median_time_ratio,
                out.display()
            );
        }
        Command::Oracle {
            dataset,
            instances,
            max_nodes,
            max_facilities,
            seed,
        } => {
            let cases: Vec<(Network, FacilityLayout)> = match dataset {
                Some(p) => {
                    let net = Network::load(&p)?;
                    let schedule = RunConfig::default().schedule_for(&net)?;
                    let layout = solve_flpo_annealed(&net, &schedule)?.layout;
                    vec![(net, layout)]
                }
                None => {
                    if max_nodes == 0 || max_facilities == 0 {
                        return Err(Failure::Validation("instance sizes must be positive".into()));
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    (0..instances)
                        .map(|_| {
                            let n = 1 + rand::Rng::random_range(&mut rng, 0..max_nodes);
                            let m = 1 + rand::Rng::random_range(&mut rng, 0..max_facilities);
                            random_instance(&mut rng, n, m, true)
                        })
                        .collect::<Result<_>>()?
                }
            };
            let mut mismatches = 0;
            for (i, (net, layout)) in cases.iter().enumerate() {
                let dp = hard_cost(net, layout)?;
                let (cost, routes) = brute_force_routes(net, layout)?;
                let ok = dp.cost == cost && dp.routes == routes;
                if !ok {
                    mismatches += 1;
                }
                println!(
                    "case {i}: dp {:.17e} oracle {:.17e} {}",
                    dp.cost,
                    cost,
                    if ok { "ok" } else { "MISMATCH" }
                );
            }
            if mismatches > 0 {
                return Err(Failure::Validation(format!(
                    "{mismatches} of {} cases differ from the oracle",
                    cases.len()
                )));
            }
        }
        Command::Learn {
            dataset,
            episodes,
            beta,
            gamma,
            seed,
            out,
        } => {
            let (net, layout) = match dataset {
                Some(p) => {
                    let net = Network::load(&p)?;
                    let m = net.facility_count();
                    let spots = (0..m).map(|j| net.nodes()[j % net.node_count()]).collect();
                    (net, FacilityLayout::tied(spots))
                }
                None => (
                    Network::uniform(vec![Point2::new(0.0, 0.0)], Point2::new(1.0, 0.0), 1)?,
                    FacilityLayout::tied(vec![Point2::new(0.5, 0.2)]),
                ),
            };
            let beta = Beta::new(beta)?;
            let topo = lift(&net).with_discount(gamma)?;
            let params = StateParams::from_layout(&topo, &net, &layout)?;
            let map = ParamMap::new(&topo, true);
            let exact = lambda_fixed_point(&topo, &params, beta, 1e-13, 1000)?;
            let policy = policy_from_lambda(&exact, &topo);
            let grads = gradient_fixed_point(&topo, &params, &map, &policy, 1e-13, 1000)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let outcome = q_learn(
                &topo,
                &params,
                &map,
                net.weights(),
                beta,
                episodes,
                StepRule::Harmonic,
                &mut rng,
            )?;
            #[derive(Serialize)]
            struct LearnReport {
                episodes: usize,
                beta: f64,
                gamma: f64,
                max_psi_error: f64,
                max_k_error: f64,
            }
            let report = LearnReport {
                episodes,
                beta: beta.value(),
                gamma,
                max_psi_error: outcome.state.psi_deviation(&exact),
                max_k_error: outcome.state.k_deviation(&grads),
            };
            write_or_print(
                out.as_deref(),
                &serde_json::to_string_pretty(&report).map_err(Error::from)?,
            )?;
        }
    }
    Ok(())
}
