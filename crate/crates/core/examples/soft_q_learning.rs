//! Tabular soft Q-learning on the one-node, one-facility instance, compared
//! against the exact fixed points as the episode count grows.

use parasdm::learning::{q_learn, StepRule};
use parasdm::lifted::{gradient_fixed_point, lambda_fixed_point, lift, policy_from_lambda, ParamMap, StateParams};
use parasdm::{Beta, FacilityLayout, Network, Point2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> parasdm::Result<()> {
    let net = Network::uniform(vec![Point2::new(0.0, 0.0)], Point2::new(1.0, 0.0), 1)?;
    let layout = FacilityLayout::tied(vec![Point2::new(0.5, 0.2)]);
    let beta = Beta::new(1.0)?;
    let topo = lift(&net);
    let params = StateParams::from_layout(&topo, &net, &layout)?;
    let map = ParamMap::new(&topo, true);

    let exact = lambda_fixed_point(&topo, &params, beta, 1e-14, 100)?;
    let grads = gradient_fixed_point(&topo, &params, &map, &policy_from_lambda(&exact, &topo), 1e-14, 100)?;

    for episodes in [100, 1_000, 10_000, 100_000] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = q_learn(
            &topo,
            &params,
            &map,
            net.weights(),
            beta,
            episodes,
            StepRule::Harmonic,
            &mut rng,
        )?;
        println!(
            "{episodes:>7} episodes: max|Psi - Lambda| = {:.2e}, max|K - K*| = {:.2e}",
            out.state.psi_deviation(&exact),
            out.state.k_deviation(&grads)
        );
    }
    Ok(())
}
