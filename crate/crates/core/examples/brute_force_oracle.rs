//! Exhaustive route enumeration against the min-plus dynamic program.

use parasdm::bench::{brute_force_routes, random_instance, total_path_count};
use parasdm::stagewise::hard_cost;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> parasdm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut agree = 0;
    let cases = 20;
    for _ in 0..cases {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=3);
        let (net, layout) = random_instance(&mut rng, n, m, true)?;
        let dp = hard_cost(&net, &layout)?;
        let (cost, routes) = brute_force_routes(&net, &layout)?;
        let same = dp.cost == cost && dp.routes == routes;
        agree += usize::from(same);
        println!(
            "N={n} M={m} paths={:4}  dp={:.12}  oracle={:.12}  {}",
            total_path_count(&net),
            dp.cost,
            cost,
            if same { "same" } else { "DIFFERENT" }
        );
    }
    println!("{agree}/{cases} bit-identical");
    Ok(())
}
