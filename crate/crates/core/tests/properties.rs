mod common;

use common::*;
use parasdm::learning::sample_episode;
use parasdm::lifted::{
    bellman_residual, gradient_fixed_point, lambda_fixed_point, lift, policy_from_lambda, ParamMap, StateParams,
    StationaryPolicy,
};
use parasdm::model::{generate_dataset, stage_cost};
use parasdm::optimizer::{gradient_descent_step, quasi_newton_minimize, Parameters, QuasiNewtonConfig};
use parasdm::stagewise::{backward_log_partition, expected_cost, free_energy, hard_cost, path_entropy, stage_gibbs};
use parasdm::{Beta, DatasetSpec, FacilityLayout, Network, Point2};
use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn b(v: f64) -> Beta {
    Beta::new(v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn stage_cost_is_a_symmetric_square(a in point(), c in point()) {
        let ab = stage_cost(a, c).unwrap();
        prop_assert_eq!(ab, stage_cost(c, a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab == 0.0, a == c);
        prop_assert_eq!(stage_cost(a, a).unwrap(), 0.0);
    }

    #[test]
    fn stage_rows_are_distributions((net, layout) in instance(), beta in beta()) {
        let pt = backward_log_partition(&net, &layout, b(beta)).unwrap();
        let assoc = stage_gibbs(&pt, &net, &layout).unwrap();
        for stage in &assoc.rows {
            for row in stage {
                let s: f64 = row.iter().map(|(_, p)| p).sum();
                prop_assert!((s - 1.0).abs() <= 1e-10);
                prop_assert!(row.iter().all(|(_, p)| (0.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn lifted_fixed_point_on_the_dag((net, layout) in instance(), beta in beta()) {
        let topo = lift(&net);
        let params = StateParams::from_layout(&topo, &net, &layout).unwrap();
        let m = net.facility_count();
        let table = lambda_fixed_point(&topo, &params, b(beta), 1e-12, m + 2).unwrap();
        prop_assert!(table.sweeps <= m + 2);
        prop_assert!(bellman_residual(&topo, &params, &table) <= 1e-12);
        prop_assert_eq!(table.get(&topo, topo.destination(), topo.destination()), Some(0.0));
        let policy = policy_from_lambda(&table, &topo);
        for s in 0..topo.state_count() {
            let row = policy.row(&topo, s);
            prop_assert_eq!(row.len(), topo.actions(s).len());
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }
        let map = ParamMap::new(&topo, layout.is_tied());
        let grads = gradient_fixed_point(&topo, &params, &map, &policy, 1e-12, m + 2).unwrap();
        for alpha in 0..map.len() {
            prop_assert_eq!(grads.g(alpha, topo.destination()), 0.0);
            for s in 0..topo.state_count() {
                let mixed: f64 = topo.pair_range(s).zip(policy.row(&topo, s)).map(|(p, mu)| mu * grads.k(alpha, p)).sum();
                prop_assert!((mixed - grads.g(alpha, s)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn free_energy_is_within_the_entropy_bound((net, layout) in instance(), beta in beta()) {
        let f = free_energy(&net, &layout, b(beta)).unwrap();
        let hard = hard_cost(&net, &layout).unwrap().cost;
        let paths = route_count(&net, &layout) as f64;
        prop_assert!(f <= hard + 1e-12);
        prop_assert!(hard - f <= paths.ln() / beta + 1e-12);
    }

    #[test]
    fn free_energy_splits_into_cost_and_entropy((net, layout) in instance(), beta in beta()) {
        let pt = backward_log_partition(&net, &layout, b(beta)).unwrap();
        let assoc = stage_gibbs(&pt, &net, &layout).unwrap();
        let d = expected_cost(&net, &layout, &assoc).unwrap();
        let h = path_entropy(&net, &assoc).unwrap();
        let f = free_energy(&net, &layout, b(beta)).unwrap();
        prop_assert!((f - (d - h / beta)).abs() <= 1e-8, "F {} D {} H {}", f, d, h);
        prop_assert!(h >= -1e-12);
    }

    #[test]
    fn soft_value_never_exceeds_hard_cost((net, layout) in instance(), beta in beta()) {
        let topo = lift(&net);
        let params = StateParams::from_layout(&topo, &net, &layout).unwrap();
        let table = lambda_fixed_point(&topo, &params, b(beta), 1e-12, 100).unwrap();
        let hard = hard_cost(&net, &layout).unwrap();
        for i in 0..net.node_count() {
            prop_assert!(table.value[topo.node(i)] <= hard.node_costs[i] + 1e-12);
        }
    }

    #[test]
    fn large_beta_stays_finite((net, layout) in instance(), scale in 1.0..100.0f64) {
        let beta = b(1e4 * scale);
        let pt = backward_log_partition(&net, &layout, beta).unwrap();
        prop_assert!(pt.log_z.iter().flatten().all(|v| v.is_finite()));
        let assoc = stage_gibbs(&pt, &net, &layout).unwrap();
        prop_assert!(assoc.rows.iter().flatten().flatten().all(|(_, p)| p.is_finite()));
        let topo = lift(&net);
        let params = StateParams::from_layout(&topo, &net, &layout).unwrap();
        let table = lambda_fixed_point(&topo, &params, beta, 1e-12, 100).unwrap();
        prop_assert!(table.lambda_sa.iter().chain(&table.value).all(|v| v.is_finite()));
        let hard = hard_cost(&net, &layout).unwrap().cost;
        let f = free_energy(&net, &layout, beta).unwrap();
        prop_assert!((f - hard).abs() <= route_count(&net, &layout) as f64 / beta.value());
    }

    /// Rows whose successors each have a single continuation see fixed
    /// energies, so their largest probability can only grow with β.
    #[test]
    fn fixed_energy_rows_harden((net, layout) in instance(), lo in -2.0..2.0f64, steps in 2usize..30) {
        let m = net.facility_count();
        let betas: Vec<f64> = (0..steps).map(|k| 10f64.powf(lo) * 1.2f64.powi(k as i32)).collect();
        let mut prev: Option<Vec<Vec<f64>>> = None;
        for &beta in &betas {
            let pt = backward_log_partition(&net, &layout, b(beta)).unwrap();
            let assoc = stage_gibbs(&pt, &net, &layout).unwrap();
            let maxes: Vec<Vec<f64>> = assoc.rows[m.saturating_sub(1)..]
                .iter()
                .map(|stage| stage.iter().map(|row| row.iter().map(|r| r.1).fold(0.0, f64::max)).collect())
                .collect();
            if let Some(p) = &prev {
                for (a, c) in p.iter().flatten().zip(maxes.iter().flatten()) {
                    prop_assert!(c + 1e-12 >= *a);
                }
            }
            prev = Some(maxes);
        }
    }

    #[test]
    fn network_round_trips_exactly(
        nodes in vec((-1e6..1e6f64, -1e-6..1e-6f64), 1..20),
        dest in (any::<f64>().prop_filter("finite", |v| v.is_finite()), -1.0..1.0f64),
        m in 1usize..6,
        exit in any::<bool>(),
        seed in proptest::option::of(any::<u64>()),
    ) {
        let pts: Vec<Point2> = nodes.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        let net = Network::uniform(pts, Point2::new(dest.0, dest.1), m).unwrap().with_early_exit(exit).with_seed(seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save(&path).unwrap();
        prop_assert_eq!(Network::load(&path).unwrap(), net);
    }

    #[test]
    fn generated_datasets_fit_the_unit_square(seed in any::<u64>()) {
        let spec = DatasetSpec::benchmark(seed);
        let net = generate_dataset(&spec).unwrap();
        prop_assert_eq!(net.node_count(), 50);
        prop_assert!(net.points().all(|p| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)));
        prop_assert_eq!(generate_dataset(&spec).unwrap(), net);
    }

    #[test]
    fn episodes_chain_to_the_destination((net, layout) in instance(), seed in any::<u64>()) {
        let topo = lift(&net);
        let params = StateParams::from_layout(&topo, &net, &layout).unwrap();
        let uniform = StationaryPolicy::uniform(&topo, b(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ep = sample_episode(&topo, &params, net.weights(), &uniform, &mut rng).unwrap();
        prop_assert!(!ep.is_empty() && ep.len() <= net.facility_count() + 1);
        prop_assert_eq!(ep.transitions.last().unwrap().next, topo.destination());
        for w in ep.transitions.windows(2) {
            prop_assert_eq!(w[0].next, w[1].state);
        }
        for t in &ep.transitions {
            prop_assert!(topo.is_feasible(t.state, t.action));
            prop_assert_eq!(t.next, t.action);
        }
    }

    #[test]
    fn quasi_newton_never_increases(center in vec(-5.0..5.0f64, 1..6), diag in vec(0.1..10.0f64, 6), x0 in vec(-5.0..5.0f64, 6)) {
        let n = center.len();
        let f = |x: &[f64]| {
            let mut v = 0.0;
            let mut g = vec![0.0; n];
            for i in 0..n {
                let d = x[i] - center[i];
                v += 0.5 * diag[i] * d * d + 0.1 * d.powi(4);
                g[i] = diag[i] * d + 0.4 * d.powi(3);
            }
            (v, g)
        };
        let start = f(&x0[..n]).0;
        let min = quasi_newton_minimize(f, &x0[..n], &QuasiNewtonConfig::default()).unwrap();
        prop_assert!(min.value <= start);
        prop_assert!(min.converged());
        for (x, c) in min.x.iter().zip(&center) {
            prop_assert!((x - c).abs() < 1e-6);
        }
    }

    #[test]
    fn descent_step_is_linear_in_step(values in vec(-1.0..1.0f64, 1..8), grads in vec(-1.0..1.0f64, 8), eps in 0.01..1.0f64) {
        let n = values.len();
        let p = Parameters::free(values.clone());
        let one = gradient_descent_step(&p, &grads[..n], eps).unwrap();
        let two = gradient_descent_step(&p, &grads[..n], 2.0 * eps).unwrap();
        for ((v, a), c) in values.iter().zip(&one.params.values).zip(&two.params.values) {
            let d1 = a - v;
            let d2 = c - v;
            prop_assert!((d2 - 2.0 * d1).abs() <= 1e-12);
        }
    }
}

/// Counterexample to monotone hardening on rows whose successors differ in
/// how many continuations they carry: the facility successors each lead to
/// three routes, so at small β they hold most of the mass, and it drains to
/// `δ` before it concentrates again.
#[test]
fn hardening_is_not_monotone_on_every_row() {
    let net = Network::uniform(vec![Point2::new(0.0, 0.0)], Point2::new(1.0, 0.0), 2).unwrap();
    let y = Point2::new(0.5, 0.3f64.sqrt());
    let layout = FacilityLayout::tied(vec![y, y]);
    let row_max = |beta: f64| {
        let pt = backward_log_partition(&net, &layout, b(beta)).unwrap();
        let assoc = stage_gibbs(&pt, &net, &layout).unwrap();
        assoc.rows[0][0].iter().map(|r| r.1).fold(0.0, f64::max)
    };
    // facility routes cost 1.1 against 1 for the direct exit; at
    // β = 10 ln 3 the three facility rows and the exit weigh the same
    let cold = row_max(1e-9);
    let mid = row_max(10.0 * 3f64.ln());
    let hot = row_max(1e3);
    assert!((cold - 3.0 / 7.0).abs() < 1e-6);
    assert!((mid - 1.0 / 3.0).abs() < 1e-12, "{mid}");
    assert!(hot > 0.999);
}
