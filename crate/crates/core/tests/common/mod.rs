//! Reference computations shared by the integration tests. Nothing here
//! calls into the solvers.

#![allow(dead_code)]

use parasdm::{FacilityLayout, Network, Point2};
use proptest::collection::vec;
use proptest::prelude::*;

/// Every stage-respecting route of node `i` as a sequence of points, built
/// directly from the stage rules: at each of the `M` facility stages pick a
/// facility or exit to the destination (only at the last stage when early
/// exit is off), and stay at the destination once there.
pub fn route_points(net: &Network, layout: &FacilityLayout, i: usize) -> Vec<Vec<Point2>> {
    let m = net.facility_count();
    let z = net.destination();
    let mut done = Vec::new();
    let mut open = vec![(vec![net.nodes()[i]], false)];
    for k in 1..=m {
        let mut next = Vec::new();
        for (path, exited) in open {
            if exited {
                let mut p = path.clone();
                p.push(z);
                next.push((p, true));
                continue;
            }
            for j in 0..m {
                let mut p = path.clone();
                p.push(layout.at(k, j));
                next.push((p, false));
            }
            if net.early_exit() {
                let mut p = path;
                p.push(z);
                next.push((p, true));
            }
        }
        open = next;
    }
    for (mut p, _) in open {
        p.push(z);
        done.push(p);
    }
    done
}

pub fn path_cost(points: &[Point2]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let dx = w[0].x - w[1].x;
            let dy = w[0].y - w[1].y;
            dx * dx + dy * dy
        })
        .sum()
}

/// `log Σ_paths exp(−β cost)` for node `i`.
pub fn log_z_oracle(net: &Network, layout: &FacilityLayout, i: usize, beta: f64) -> f64 {
    let terms: Vec<f64> = route_points(net, layout, i)
        .iter()
        .map(|p| -beta * path_cost(p))
        .collect();
    let hi = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi + terms.iter().map(|t| (t - hi).exp()).sum::<f64>().ln()
}

pub fn free_energy_oracle(net: &Network, layout: &FacilityLayout, beta: f64) -> f64 {
    -net.weights()
        .iter()
        .enumerate()
        .map(|(i, w)| w * log_z_oracle(net, layout, i, beta))
        .sum::<f64>()
        / beta
}

/// Minimum route cost per node.
pub fn min_cost_oracle(net: &Network, layout: &FacilityLayout) -> f64 {
    (0..net.node_count())
        .map(|i| {
            let best = route_points(net, layout, i)
                .iter()
                .map(|p| path_cost(p))
                .fold(f64::INFINITY, f64::min);
            net.weights()[i] * best
        })
        .sum()
}

pub fn route_count(net: &Network, layout: &FacilityLayout) -> usize {
    (0..net.node_count()).map(|i| route_points(net, layout, i).len()).sum()
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖∞ / max(‖b‖∞, 1e-3)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let den = b.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(1e-3);
    num / den
}

pub fn point() -> impl Strategy<Value = Point2> {
    (0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y)| Point2::new(x, y))
}

pub fn instance() -> impl Strategy<Value = (Network, FacilityLayout)> {
    instance_up_to(4, 3)
}

/// Random network with `N ≤ max_n`, `M ≤ max_m`, random weights, either
/// layout kind and either exit rule.
pub fn instance_up_to(max_n: usize, max_m: usize) -> impl Strategy<Value = (Network, FacilityLayout)> {
    (1..=max_n, 1..=max_m, any::<bool>(), any::<bool>())
        .prop_flat_map(|(n, m, tied, exit)| {
            let copies = if tied { m } else { m * m };
            (
                vec(point(), n),
                point(),
                vec(point(), copies),
                vec(0.05..1.0f64, n),
                Just((m, tied, exit)),
            )
        })
        .prop_map(|(nodes, dest, spots, raw, (m, tied, exit))| {
            let total: f64 = raw.iter().sum();
            let mut w: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let head: f64 = w[..w.len() - 1].iter().sum();
            *w.last_mut().unwrap() = 1.0 - head;
            let net = Network::new(nodes, w, dest, m).unwrap().with_early_exit(exit);
            let layout = if tied {
                FacilityLayout::tied(spots)
            } else {
                FacilityLayout::untied(spots.chunks(m).map(<[Point2]>::to_vec).collect()).unwrap()
            };
            (net, layout)
        })
}

/// log-uniform on [1e-2, 1e4]
pub fn beta() -> impl Strategy<Value = f64> {
    (-2.0..4.0f64).prop_map(|e| 10f64.powf(e))
}
