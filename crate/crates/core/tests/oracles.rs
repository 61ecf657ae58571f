mod common;

use common::*;
use parasdm::bench::{brute_force_routes, random_instance};
use parasdm::lifted::{gradient_fixed_point, lambda_fixed_point, lift, policy_from_lambda, ParamMap, StateParams};
use parasdm::stagewise::{backward_log_partition, free_energy, free_energy_gradient, hard_cost};
use parasdm::{Beta, FacilityLayout, Network, Point2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn beta(b: f64) -> Beta {
    Beta::new(b).unwrap()
}

fn two_path() -> (Network, FacilityLayout) {
    let net = Network::uniform(vec![Point2::new(0.0, 0.0)], Point2::new(1.0, 0.0), 1).unwrap();
    (net, FacilityLayout::tied(vec![Point2::new(0.5, 0.2)]))
}

fn instances(seed: u64, count: usize) -> Vec<(Network, FacilityLayout)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|c| {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(1..=3);
            let (net, layout) = random_instance(&mut rng, n, m, c % 2 == 0).unwrap();
            (net.with_early_exit(c % 3 != 0), layout)
        })
        .collect()
}

// Closed forms for the two-route instance, evaluated in 30-digit arithmetic.
const LOG_Z_BETA_1: f64 = -0.074_963_006_182_246_3;
const F_BETA_10: f64 = 0.578_511_574_532_808_2;
const GRAD_Y_BETA_1: f64 = 0.482_786_599_891_781;

#[test]
fn two_path_closed_forms() {
    let (net, layout) = two_path();
    let pt = backward_log_partition(&net, &layout, beta(1.0)).unwrap();
    assert!((pt.log_z[0][0] - LOG_Z_BETA_1).abs() < 1e-15);
    assert!((free_energy(&net, &layout, beta(10.0)).unwrap() - F_BETA_10).abs() < 1e-15);
    let g = free_energy_gradient(&net, &layout, beta(1.0)).unwrap();
    assert!(g[0].abs() < 1e-15);
    assert!((g[1] - GRAD_Y_BETA_1).abs() < 1e-14);
}

#[test]
fn log_partition_matches_path_sum() {
    for (net, layout) in instances(1, 60) {
        for b in [0.3, 4.0, 40.0] {
            let pt = backward_log_partition(&net, &layout, beta(b)).unwrap();
            for i in 0..net.node_count() {
                let want = log_z_oracle(&net, &layout, i, b);
                let got = pt.log_z[0][i];
                // relative on Z itself
                assert!((got - want).exp_m1().abs() < 1e-9, "{got} vs {want}");
            }
        }
    }
}

#[test]
fn hard_cost_matches_independent_enumerations() {
    for (net, layout) in instances(2, 80) {
        let dp = hard_cost(&net, &layout).unwrap();
        let (cost, routes) = brute_force_routes(&net, &layout).unwrap();
        assert_eq!(dp.cost, cost);
        assert_eq!(dp.routes, routes);
        assert!((dp.cost - min_cost_oracle(&net, &layout)).abs() < 1e-12);
    }
}

#[test]
fn stagewise_gradient_matches_finite_differences() {
    for (net, layout) in instances(3, 30) {
        let b = beta(2.0);
        let g = free_energy_gradient(&net, &layout, b).unwrap();
        let fd = central_difference(
            |p| free_energy(&net, &layout.with_params(p), b).unwrap(),
            &layout.params(),
            1e-6,
        );
        assert!(relative_error(&g, &fd) < 1e-6, "{g:?} vs {fd:?}");
    }
}

#[test]
fn lifted_gradient_matches_finite_differences() {
    for (k, (net, layout)) in instances(4, 30).into_iter().enumerate() {
        let b = beta(2.0);
        let topo = lift(&net);
        let map = ParamMap::new(&topo, layout.is_tied());
        let params = StateParams::from_layout(&topo, &net, &layout).unwrap();
        let table = lambda_fixed_point(&topo, &params, b, 1e-14, 100).unwrap();
        let grads = gradient_fixed_point(&topo, &params, &map, &policy_from_lambda(&table, &topo), 1e-14, 100).unwrap();
        let x0 = map.extract(&params);
        // per-node soft values, not just the weighted sum
        let i = k % net.node_count();
        let fd = central_difference(
            |p| {
                let mut q = params.clone();
                map.apply(p, &mut q);
                lambda_fixed_point(&topo, &q, b, 1e-14, 100).unwrap().value[topo.node(i)]
            },
            &x0,
            1e-6,
        );
        let g: Vec<f64> = (0..map.len()).map(|a| grads.g(a, topo.node(i))).collect();
        assert!(relative_error(&g, &fd) < 1e-6, "{g:?} vs {fd:?}");
    }
}

#[test]
fn lifted_values_are_stagewise_free_energies() {
    for (net, layout) in instances(5, 40) {
        for b in [0.5, 5.0, 50.0] {
            let topo = lift(&net);
            let params = StateParams::from_layout(&topo, &net, &layout).unwrap();
            let table = lambda_fixed_point(&topo, &params, beta(b), 1e-14, 100).unwrap();
            for i in 0..net.node_count() {
                let want = -log_z_oracle(&net, &layout, i, b) / b;
                assert!((table.value[topo.node(i)] - want).abs() < 1e-9);
            }
        }
    }
}
