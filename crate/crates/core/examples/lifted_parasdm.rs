//! The same dataset solved on the lifted, time-invariant model.
//!
//! cargo run --example lifted_parasdm -- [seed] [--untied]

use parasdm::lifted::{solve_parasdm_annealed, ParaSdmOptions};
use parasdm::model::generate_dataset;
use parasdm::optimizer::AnnealingSchedule;
use parasdm::DatasetSpec;

fn main() -> parasdm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.iter().find_map(|a| a.parse().ok()).unwrap_or(1);
    let opts = ParaSdmOptions {
        tie_stages: !args.iter().any(|a| a == "--untied"),
        ..ParaSdmOptions::default()
    };
    let net = generate_dataset(&DatasetSpec::benchmark(seed))?;
    let sol = solve_parasdm_annealed(&net, &AnnealingSchedule::for_network(&net), &opts)?;

    let topo = &sol.topology;
    println!("{} states, {} feasible pairs", topo.state_count(), topo.pair_count());
    println!(
        "hard cost {:.6}, converged {}, {:.3}s",
        sol.hard_cost, sol.converged, sol.wall_time_s
    );

    let s = topo.node(0);
    print!("policy at {}:", topo.kind(s));
    for (a, p) in topo.actions(s).iter().zip(sol.policy.row(topo, s)) {
        print!(" {}={p:.3}", topo.kind(*a));
    }
    println!();
    Ok(())
}
