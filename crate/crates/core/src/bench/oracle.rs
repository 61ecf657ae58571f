//! Exhaustive route enumeration, independent of the stage-graph bookkeeping
//! used by the solvers.

use crate::error::{Error, Result};
use crate::model::{FacilityLayout, Network, Point2};
use crate::stagewise::{Route, StageElement};

/// Refuse to enumerate more routes than this.
pub const PATH_LIMIT: u128 = 1_000_000;

/// Number of stage-respecting routes over all nodes.
pub fn total_path_count(net: &Network) -> u128 {
    let m = net.facility_count() as u128;
    let exit = u128::from(net.early_exit());
    // paths leaving a facility at stage M
    let mut p: u128 = 1;
    for _ in 1..net.facility_count() {
        p = p.saturating_mul(m).saturating_add(exit);
    }
    let per_node = p.saturating_mul(m).saturating_add(exit);
    per_node.saturating_mul(net.node_count() as u128)
}

/// Exact minimum weighted routing cost by enumeration.
pub fn brute_force_route_oracle(net: &Network, layout: &FacilityLayout) -> Result<f64> {
    Ok(brute_force_routes(net, layout)?.0)
}

/// Minimum weighted cost and the per-node minimizing routes. Routes are
/// visited in lexicographic order (facilities by index, then `δ`) and the
/// first strict minimum is kept.
pub fn brute_force_routes(net: &Network, layout: &FacilityLayout) -> Result<(f64, Vec<Route>)> {
    layout.check_matches(net)?;
    let paths = total_path_count(net);
    if paths > PATH_LIMIT {
        return Err(Error::TooManyPaths {
            paths,
            limit: PATH_LIMIT,
        });
    }
    let mut cost = 0.0;
    let mut routes = Vec::with_capacity(net.node_count());
    for (i, &x) in net.nodes().iter().enumerate() {
        let mut best: Option<(f64, Vec<StageElement>)> = None;
        for (c, tail) in suffixes(net, layout, 0, x, false) {
            if best.as_ref().is_none_or(|b| c < b.0) {
                best = Some((c, tail));
            }
        }
        let (c, mut tail) = best.expect("every node has a route");
        tail.reverse();
        let mut route = vec![StageElement::Node(i)];
        route.extend(tail);
        cost += net.weights()[i] * c;
        routes.push(route);
    }
    Ok((cost, routes))
}

/// All continuations from an element at stage `k` located at `from`, as
/// `(cost, reversed tail)` pairs in lexicographic order.
fn suffixes(
    net: &Network,
    layout: &FacilityLayout,
    k: usize,
    from: Point2,
    at_delta: bool,
) -> Vec<(f64, Vec<StageElement>)> {
    let m = net.facility_count();
    let z = net.destination();
    if k == m + 1 {
        return vec![(0.0, Vec::new())];
    }
    let mut out = Vec::new();
    if !at_delta && k < m {
        for j in 0..m {
            let y = layout.at(k + 1, j);
            let d = from.squared_distance(y);
            for (c, mut tail) in suffixes(net, layout, k + 1, y, false) {
                tail.push(StageElement::Facility(j));
                out.push((d + c, tail));
            }
        }
    }
    if at_delta || k == m || net.early_exit() {
        let d = if at_delta { 0.0 } else { from.squared_distance(z) };
        for (c, mut tail) in suffixes(net, layout, k + 1, z, true) {
            tail.push(StageElement::Destination);
            out.push((d + c, tail));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    #[test]
    fn two_path_instance() {
        let net = Network::uniform(vec![p(0.0, 0.0)], p(1.0, 0.0), 1).unwrap();
        let layout = FacilityLayout::tied(vec![p(0.5, 0.2)]);
        assert_eq!(total_path_count(&net), 2);
        let (c, routes) = brute_force_routes(&net, &layout).unwrap();
        assert!((c - 0.58).abs() < 1e-15);
        assert_eq!(
            routes[0],
            vec![
                StageElement::Node(0),
                StageElement::Facility(0),
                StageElement::Destination
            ]
        );
    }

    #[test]
    fn node_at_destination_is_free() {
        let net = Network::uniform(vec![p(0.3, 0.3)], p(0.3, 0.3), 2).unwrap();
        let layout = FacilityLayout::tied(vec![p(0.0, 1.0), p(1.0, 1.0)]);
        assert_eq!(brute_force_route_oracle(&net, &layout).unwrap(), 0.0);
    }

    #[test]
    fn path_counts() {
        let net = Network::uniform(vec![p(0.0, 0.0)], p(1.0, 0.0), 2).unwrap();
        assert_eq!(total_path_count(&net), 7);
        assert_eq!(total_path_count(&net.clone().with_early_exit(false)), 4);
    }

    #[test]
    fn guard_refuses_large_instances() {
        let nodes = vec![p(0.1, 0.1); 400];
        let net = Network::uniform(nodes, p(1.0, 0.0), 6).unwrap();
        let layout = FacilityLayout::collapsed(6, p(0.5, 0.5), true);
        match brute_force_route_oracle(&net, &layout) {
            Err(Error::TooManyPaths { paths, .. }) => assert!(paths > PATH_LIMIT),
            other => panic!("expected refusal, got {other:?}"),
        }
    }
}
