//! Comparison harness: brute-force oracle, both solvers over a dataset
//! directory, and the CSV/SVG/JSON report.

pub mod cli;
mod config;
mod oracle;
mod report;

use rand::Rng;

pub use config::RunConfig;
pub use oracle::{brute_force_route_oracle, brute_force_routes, total_path_count, PATH_LIMIT};
pub use report::{
    compare, emit_report, grouped_bar_svg, load_datasets, run_dataset, thread_cap, ComparisonTable, RunReport, Solver,
    Summary, NORMALIZATION,
};

use crate::error::Result;
use crate::model::{FacilityLayout, Network, Point2};

/// Small random instance in the unit square: uniform nodes, random
/// positive weights, uniform destination and a random untied layout when
/// `tied` is false.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    m: usize,
    tied: bool,
) -> Result<(Network, FacilityLayout)> {
    let mut point = || Point2::new(rng.random::<f64>(), rng.random::<f64>());
    let nodes: Vec<Point2> = (0..n).map(|_| point()).collect();
    let destination = point();
    let layout = if tied {
        FacilityLayout::tied((0..m).map(|_| point()).collect())
    } else {
        FacilityLayout::untied((0..m).map(|_| (0..m).map(|_| point()).collect()).collect())?
    };
    let raw: Vec<f64> = (0..n).map(|_| 0.1 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let rest: f64 = weights[..n - 1].iter().sum();
    weights[n - 1] = 1.0 - rest;
    Ok((Network::new(nodes, weights, destination, m)?, layout))
}
