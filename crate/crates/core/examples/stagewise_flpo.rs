//! Annealed stage-wise FLPO on a generated dataset.

use parasdm::model::generate_dataset;
use parasdm::optimizer::AnnealingSchedule;
use parasdm::stagewise::solve_flpo_annealed;
use parasdm::DatasetSpec;

fn main() -> parasdm::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let net = generate_dataset(&DatasetSpec::benchmark(seed))?;
    let schedule = AnnealingSchedule::for_network(&net);
    let sol = solve_flpo_annealed(&net, &schedule)?;

    println!("beta steps: {}", sol.beta_steps());
    for (k, (beta, f)) in sol.free_energy_trace.iter().enumerate().step_by(16) {
        println!("  step {k:3}  beta {beta:12.4e}  F {f:.6}");
    }
    for (j, y) in sol.layout.facilities().iter().enumerate() {
        println!("facility {j}: ({:.4}, {:.4})", y.x, y.y);
    }
    println!(
        "hard cost {:.6}, converged {}, {:.3}s",
        sol.hard_cost, sol.converged, sol.wall_time_s
    );
    let first: Vec<String> = sol.routes[0].iter().map(|e| e.to_string()).collect();
    println!("route of node 0: {}", first.join(" -> "));
    Ok(())
}
