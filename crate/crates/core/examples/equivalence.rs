//! With γ = 1 the lifted soft values equal the stage-wise free energies and
//! the unlifted policy reproduces the stage-wise Gibbs associations.

use parasdm::bench::random_instance;
use parasdm::lifted::{lambda_fixed_point, lift, policy_from_lambda, unlift_policy, StateParams};
use parasdm::stagewise::{backward_log_partition, stage_gibbs};
use parasdm::Beta;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> parasdm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (net, layout) = random_instance(&mut rng, 4, 3, true)?;
    for b in [0.5, 5.0, 50.0] {
        let beta = Beta::new(b)?;
        let pt = backward_log_partition(&net, &layout, beta)?;
        let assoc = stage_gibbs(&pt, &net, &layout)?;

        let topo = lift(&net);
        let params = StateParams::from_layout(&topo, &net, &layout)?;
        let table = lambda_fixed_point(&topo, &params, beta, 1e-13, 100)?;
        let unlifted = unlift_policy(&policy_from_lambda(&table, &topo), &topo);

        let mut value_gap: f64 = 0.0;
        for i in 0..net.node_count() {
            value_gap = value_gap.max((table.value[topo.node(i)] + pt.log_z[0][i] / b).abs());
        }
        let mut row_gap: f64 = 0.0;
        for (k, rows) in assoc.rows.iter().enumerate() {
            for (from, row) in rows.iter().enumerate() {
                for (&(_, p), &(_, q)) in row.iter().zip(&unlifted.rows[k][from]) {
                    row_gap = row_gap.max((p - q).abs());
                }
            }
        }
        println!(
            "beta {b:5}: max |V + log Z / beta| = {value_gap:.2e}, max row gap = {row_gap:.2e}, sweeps {}",
            table.sweeps
        );
    }
    Ok(())
}
