//! Finite-horizon, time-varying FLPO solver.
//!
//! The routing DAG has stage `Γ_0` holding the nodes, stages `Γ_1..Γ_M`
//! holding every facility plus the destination `δ`, and the terminal stage
//! `Γ_{M+1} = {δ}`. `δ` is absorbing with zero cost. All partition sums are
//! kept in the log domain.

use std::fmt;
use std::time::Instant;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{Beta, FacilityLayout, Network, Point2};
use crate::numeric::{first_argmax, logsumexp_iter};
use crate::optimizer::{anneal_driver, quasi_newton_minimize, AnnealingSchedule, InnerSolve, QuasiNewtonConfig};

/// An element of some stage of the routing DAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageElement {
    Node(usize),
    Facility(usize),
    Destination,
}

impl fmt::Display for StageElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageElement::Node(i) => write!(f, "n{i}"),
            StageElement::Facility(j) => write!(f, "f{j}"),
            StageElement::Destination => write!(f, "delta"),
        }
    }
}

impl Serialize for StageElement {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// A full route `γ_0, γ_1, …, γ_{M+1}` from a node to the destination.
pub type Route = Vec<StageElement>;

/// Index bookkeeping for the stage DAG of one network.
///
/// Stage `0` has `N` entries, stages `1..=M` have `M + 1` entries
/// (facilities first, `δ` last) and stage `M + 1` has the single entry `δ`.
#[derive(Debug, Clone)]
pub struct StageGraph {
    n: usize,
    m: usize,
    early_exit: bool,
}

impl StageGraph {
    pub fn new(net: &Network) -> Self {
        StageGraph {
            n: net.node_count(),
            m: net.facility_count(),
            early_exit: net.early_exit(),
        }
    }

    pub(crate) fn from_parts(n: usize, m: usize, early_exit: bool) -> Self {
        StageGraph { n, m, early_exit }
    }

    /// Index of the terminal stage, `M + 1`.
    pub fn last_stage(&self) -> usize {
        self.m + 1
    }

    pub fn stage_len(&self, k: usize) -> usize {
        if k == 0 {
            self.n
        } else if k <= self.m {
            self.m + 1
        } else {
            1
        }
    }

    pub fn destination_index(&self, k: usize) -> usize {
        debug_assert!(k >= 1);
        if k <= self.m {
            self.m
        } else {
            0
        }
    }

    pub fn element(&self, k: usize, idx: usize) -> StageElement {
        if k == 0 {
            StageElement::Node(idx)
        } else if k <= self.m && idx < self.m {
            StageElement::Facility(idx)
        } else {
            StageElement::Destination
        }
    }

    pub fn index_of(&self, k: usize, e: StageElement) -> usize {
        match e {
            StageElement::Node(i) => i,
            StageElement::Facility(j) => j,
            StageElement::Destination => self.destination_index(k),
        }
    }

    /// Successor indices in stage `k + 1`, facilities in index order then `δ`.
    pub fn successors(&self, k: usize, idx: usize) -> Successors {
        debug_assert!(k <= self.m);
        let next = k + 1;
        if k >= 1 && idx == self.m {
            // δ is absorbing.
            return Successors::only(self.destination_index(next));
        }
        if next > self.m {
            return Successors::only(0);
        }
        Successors {
            facilities: 0..self.m,
            destination: self.early_exit.then_some(self.m),
        }
    }

    pub fn point(&self, net: &Network, layout: &FacilityLayout, k: usize, idx: usize) -> Point2 {
        match self.element(k, idx) {
            StageElement::Node(i) => net.nodes()[i],
            StageElement::Facility(j) => layout.at(k, j),
            StageElement::Destination => net.destination(),
        }
    }

    /// Number of stage-respecting routes leaving each node.
    pub fn paths_per_node(&self) -> u128 {
        // counts[idx] for the current stage, filled backward.
        let mut counts = vec![1u128];
        for k in (0..=self.m).rev() {
            let len = if k == 0 { 1 } else { self.stage_len(k) };
            counts = (0..len)
                .map(|idx| self.successors(k, idx).iter().map(|s| counts[s]).sum())
                .collect();
        }
        counts[0]
    }
}

/// Successor set of one stage element.
#[derive(Debug, Clone)]
pub struct Successors {
    facilities: std::ops::Range<usize>,
    destination: Option<usize>,
}

impl Successors {
    fn only(idx: usize) -> Self {
        Successors {
            facilities: 0..0,
            destination: Some(idx),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + Clone + '_ {
        self.facilities.clone().chain(self.destination)
    }

    pub fn len(&self) -> usize {
        self.facilities.len() + usize::from(self.destination.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `log Z_k(γ_k)` for every stage element, `k = 0..=M+1`.
#[derive(Debug, Clone)]
pub struct PartitionTable {
    pub log_z: Vec<Vec<f64>>,
    pub beta: Beta,
}

/// Backward recursion
/// `log Z_k(a) = logsumexp_b(−β d(a, b) + log Z_{k+1}(b))` with
/// `log Z_{M+1}(δ) = 0`.
pub fn backward_log_partition(net: &Network, layout: &FacilityLayout, beta: Beta) -> Result<PartitionTable> {
    layout.check_matches(net)?;
    let graph = StageGraph::new(net);
    let b = beta.value();
    let last = graph.last_stage();
    let mut log_z: Vec<Vec<f64>> = vec![Vec::new(); last + 1];
    log_z[last] = vec![0.0];
    for k in (0..last).rev() {
        let next = &log_z[k + 1];
        let row: Vec<f64> = (0..graph.stage_len(k))
            .map(|idx| {
                let from = graph.point(net, layout, k, idx);
                let succ = graph.successors(k, idx);
                logsumexp_iter(succ.iter().map(|s| {
                    let to = graph.point(net, layout, k + 1, s);
                    -b * from.squared_distance(to) + next[s]
                }))
            })
            .collect();
        log_z[k] = row;
    }
    Ok(PartitionTable { log_z, beta })
}

/// Gibbs stage associations `p_k(γ_{k+1} | γ_k)` for `k = 0..=M`.
#[derive(Debug, Clone)]
pub struct StageAssociations {
    /// `rows[k][idx]` lists `(successor index, probability)`.
    pub rows: Vec<Vec<Vec<(usize, f64)>>>,
    pub beta: Beta,
    graph: StageGraph,
}

impl StageAssociations {
    pub(crate) fn from_parts(rows: Vec<Vec<Vec<(usize, f64)>>>, beta: Beta, graph: StageGraph) -> Self {
        StageAssociations { rows, beta, graph }
    }

    pub fn graph(&self) -> &StageGraph {
        &self.graph
    }

    /// `p_k(to | from)`, zero for infeasible successors.
    pub fn prob(&self, k: usize, from: StageElement, to: StageElement) -> f64 {
        let i = self.graph.index_of(k, from);
        let t = self.graph.index_of(k + 1, to);
        self.rows[k][i].iter().find(|(s, _)| *s == t).map_or(0.0, |(_, p)| *p)
    }

    /// Row of `from` at stage `k` as `(element, probability)` pairs.
    pub fn row(&self, k: usize, from: StageElement) -> Vec<(StageElement, f64)> {
        let i = self.graph.index_of(k, from);
        self.rows[k][i]
            .iter()
            .map(|&(s, p)| (self.graph.element(k + 1, s), p))
            .collect()
    }

    /// Most probable successor index of every row, first on ties.
    pub fn argmax_successor(&self, k: usize, idx: usize) -> usize {
        let row = &self.rows[k][idx];
        let probs: Vec<f64> = row.iter().map(|(_, p)| *p).collect();
        row[first_argmax(&probs)].0
    }
}

/// `p_k(b|a) = exp(−β d_k(a, b) + log Z_{k+1}(b) − log Z_k(a))`.
pub fn stage_gibbs(pt: &PartitionTable, net: &Network, layout: &FacilityLayout) -> Result<StageAssociations> {
    layout.check_matches(net)?;
    let graph = StageGraph::new(net);
    if pt.log_z.len() != graph.last_stage() + 1 {
        return Err(Error::InvalidInput("partition table does not match the network".into()));
    }
    let b = pt.beta.value();
    let mut rows = Vec::with_capacity(graph.last_stage());
    for k in 0..graph.last_stage() {
        let stage_rows: Vec<Vec<(usize, f64)>> = (0..graph.stage_len(k))
            .map(|idx| {
                let from = graph.point(net, layout, k, idx);
                let succ = graph.successors(k, idx);
                let logits: Vec<(usize, f64)> = succ
                    .iter()
                    .map(|s| {
                        let to = graph.point(net, layout, k + 1, s);
                        (s, -b * from.squared_distance(to) + pt.log_z[k + 1][s])
                    })
                    .collect();
                normalize_logits(logits)
            })
            .collect();
        rows.push(stage_rows);
    }
    Ok(StageAssociations {
        rows,
        beta: pt.beta,
        graph,
    })
}

/// Softmax over the logits, shifted by their maximum. Normalizing against
/// the row's own log-sum keeps each row stochastic to round-off even when
/// `log Z_k` came from a separately rounded computation.
fn normalize_logits(mut logits: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    let m = logits.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (_, l) in logits.iter_mut() {
        *l = (*l - m).exp();
        total += *l;
    }
    for (_, l) in logits.iter_mut() {
        *l /= total;
    }
    logits
}

/// `F = −(1/β) Σ_i ρ_i log Z_0(x_i)`.
pub fn free_energy(net: &Network, layout: &FacilityLayout, beta: Beta) -> Result<f64> {
    let pt = backward_log_partition(net, layout, beta)?;
    Ok(free_energy_from_partition(net, &pt))
}

fn free_energy_from_partition(net: &Network, pt: &PartitionTable) -> f64 {
    let weighted: f64 = net.weights().iter().zip(&pt.log_z[0]).map(|(w, l)| w * l).sum();
    -weighted / pt.beta.value()
}

/// Forward edge flows `ρ(γ_0) · P(path passes through edge)` per stage.
struct Flows {
    /// `edges[k][idx]` aligned with `StageAssociations::rows[k][idx]`.
    edges: Vec<Vec<Vec<f64>>>,
}

fn forward_flows(net: &Network, assoc: &StageAssociations) -> Flows {
    let graph = &assoc.graph;
    let mut mass: Vec<f64> = net.weights().to_vec();
    let mut edges = Vec::with_capacity(graph.last_stage());
    for k in 0..graph.last_stage() {
        let mut next = vec![0.0; graph.stage_len(k + 1)];
        let stage_edges: Vec<Vec<f64>> = assoc.rows[k]
            .iter()
            .zip(&mass)
            .map(|(row, &q)| {
                row.iter()
                    .map(|&(s, p)| {
                        let f = q * p;
                        next[s] += f;
                        f
                    })
                    .collect()
            })
            .collect();
        edges.push(stage_edges);
        mass = next;
    }
    Flows { edges }
}

/// `∂F/∂y` in the layout's parameter order, by reverse accumulation: each
/// stage edge contributes its expected flow times `∂d/∂y`.
pub fn free_energy_gradient(net: &Network, layout: &FacilityLayout, beta: Beta) -> Result<Vec<f64>> {
    Ok(free_energy_and_gradient(net, layout, beta)?.1)
}

/// Free energy and its gradient from a single backward/forward pass.
pub fn free_energy_and_gradient(net: &Network, layout: &FacilityLayout, beta: Beta) -> Result<(f64, Vec<f64>)> {
    let pt = backward_log_partition(net, layout, beta)?;
    let assoc = stage_gibbs(&pt, net, layout)?;
    let flows = forward_flows(net, &assoc);
    let graph = &assoc.graph;
    let m = net.facility_count();
    let mut grad = vec![0.0; layout.param_count()];
    for k in 0..graph.last_stage() {
        for (idx, row) in assoc.rows[k].iter().enumerate() {
            let from = graph.point(net, layout, k, idx);
            let from_param = (k >= 1 && idx < m).then_some((k, idx));
            for (&(s, _), &flow) in row.iter().zip(&flows.edges[k][idx]) {
                if flow == 0.0 {
                    continue;
                }
                let to_param = (k < m && s < m).then_some((k + 1, s));
                if from_param.is_none() && to_param.is_none() {
                    continue;
                }
                let to = graph.point(net, layout, k + 1, s);
                let diff = from.minus(to);
                for c in 0..2 {
                    let g = 2.0 * diff.coord(c) * flow;
                    if let Some((st, j)) = from_param {
                        grad[layout.param_index(st, j, c)] += g;
                    }
                    if let Some((st, j)) = to_param {
                        grad[layout.param_index(st, j, c)] -= g;
                    }
                }
            }
        }
    }
    Ok((free_energy_from_partition(net, &pt), grad))
}

/// Expected routing cost `D` under the associations, by forward propagation
/// of the path marginals.
pub fn expected_cost(net: &Network, layout: &FacilityLayout, assoc: &StageAssociations) -> Result<f64> {
    layout.check_matches(net)?;
    check_assoc(net, assoc)?;
    let flows = forward_flows(net, assoc);
    let graph = &assoc.graph;
    let mut total = 0.0;
    for k in 0..graph.last_stage() {
        for (idx, row) in assoc.rows[k].iter().enumerate() {
            let from = graph.point(net, layout, k, idx);
            for (&(s, _), &flow) in row.iter().zip(&flows.edges[k][idx]) {
                if flow > 0.0 {
                    total += flow * from.squared_distance(graph.point(net, layout, k + 1, s));
                }
            }
        }
    }
    Ok(total)
}

/// Weighted Shannon entropy of the path distribution, `Σ_i ρ_i H(p(·|x_i))`.
pub fn path_entropy(net: &Network, assoc: &StageAssociations) -> Result<f64> {
    check_assoc(net, assoc)?;
    let flows = forward_flows(net, assoc);
    let mut h = 0.0;
    for (k, stage) in assoc.rows.iter().enumerate() {
        for (idx, row) in stage.iter().enumerate() {
            for (&(_, p), &flow) in row.iter().zip(&flows.edges[k][idx]) {
                if p > 0.0 && flow > 0.0 {
                    h -= flow * p.ln();
                }
            }
        }
    }
    Ok(h)
}

fn check_assoc(net: &Network, assoc: &StageAssociations) -> Result<()> {
    let g = &assoc.graph;
    if g.n != net.node_count() || g.m != net.facility_count() || g.early_exit != net.early_exit() {
        return Err(Error::InvalidInput(
            "associations were computed for a different network".into(),
        ));
    }
    Ok(())
}

/// Minimum-cost routes and their weighted total.
#[derive(Debug, Clone, PartialEq)]
pub struct HardRouting {
    pub cost: f64,
    pub node_costs: Vec<f64>,
    pub routes: Vec<Route>,
}

/// Cost of a route, summed from the destination backwards.
pub fn route_cost(net: &Network, layout: &FacilityLayout, route: &[StageElement]) -> f64 {
    let graph = StageGraph::new(net);
    let mut acc = 0.0;
    for k in (0..route.len().saturating_sub(1)).rev() {
        let a = graph.point(net, layout, k, graph.index_of(k, route[k]));
        let b = graph.point(net, layout, k + 1, graph.index_of(k + 1, route[k + 1]));
        acc += a.squared_distance(b);
    }
    acc
}

/// Exact shortest routes over the stage DAG by backward min-plus dynamic
/// programming. Ties go to the lower facility index, then to `δ`.
pub fn hard_cost(net: &Network, layout: &FacilityLayout) -> Result<HardRouting> {
    layout.check_matches(net)?;
    let graph = StageGraph::new(net);
    let last = graph.last_stage();
    let mut value: Vec<Vec<f64>> = vec![Vec::new(); last + 1];
    let mut choice: Vec<Vec<usize>> = vec![Vec::new(); last];
    value[last] = vec![0.0];
    for k in (0..last).rev() {
        let len = graph.stage_len(k);
        let mut vals = Vec::with_capacity(len);
        let mut picks = Vec::with_capacity(len);
        for idx in 0..len {
            let from = graph.point(net, layout, k, idx);
            let mut best = (f64::INFINITY, usize::MAX);
            for s in graph.successors(k, idx).iter() {
                let to = graph.point(net, layout, k + 1, s);
                let v = from.squared_distance(to) + value[k + 1][s];
                if v < best.0 {
                    best = (v, s);
                }
            }
            vals.push(best.0);
            picks.push(best.1);
        }
        value[k] = vals;
        choice[k] = picks;
    }
    let mut routes = Vec::with_capacity(graph.n);
    for i in 0..graph.n {
        let mut route = vec![StageElement::Node(i)];
        let mut idx = i;
        for (k, picks) in choice.iter().enumerate() {
            idx = picks[idx];
            route.push(graph.element(k + 1, idx));
        }
        routes.push(route);
    }
    let node_costs = value[0].clone();
    let cost = net.weights().iter().zip(&node_costs).map(|(w, c)| w * c).sum();
    Ok(HardRouting {
        cost,
        node_costs,
        routes,
    })
}

/// Outcome of an annealed stage-wise solve.
#[derive(Debug, Clone)]
pub struct FlpoSolution {
    pub layout: FacilityLayout,
    pub associations: StageAssociations,
    /// `(β, F)` after each inner minimization, β strictly increasing.
    pub free_energy_trace: Vec<(f64, f64)>,
    pub hard_cost: f64,
    pub routes: Vec<Route>,
    pub wall_time_s: f64,
    /// False if any inner minimization stopped short of its tolerance.
    pub converged: bool,
}

#[derive(Serialize)]
struct FlpoSolutionFile<'a> {
    layout: &'a [Point2],
    beta_trace: &'a [(f64, f64)],
    hard_cost: f64,
    routes: &'a [Route],
    wall_time_s: f64,
    converged: bool,
}

impl FlpoSolution {
    pub fn beta_steps(&self) -> usize {
        self.free_energy_trace.len()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = FlpoSolutionFile {
            layout: self.layout.facilities(),
            beta_trace: &self.free_energy_trace,
            hard_cost: self.hard_cost,
            routes: &self.routes,
            wall_time_s: self.wall_time_s,
            converged: self.converged,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

/// Deterministic annealing over β: at every step the free energy is
/// minimized over the (tied) facility locations with BFGS, warm-started from
/// the previous step. The hard routes are read off at the final layout.
pub fn solve_flpo_annealed(net: &Network, schedule: &AnnealingSchedule) -> Result<FlpoSolution> {
    schedule.validate()?;
    let start = Instant::now();
    let m = net.facility_count();
    let init = FacilityLayout::tied(vec![net.centroid(); m]);
    let cfg = QuasiNewtonConfig::with_limits(schedule.inner_tol, schedule.inner_max_iter);

    let trace = anneal_driver(schedule, &init.params(), |beta, start_params| {
        let objective = |p: &[f64]| {
            let layout = init.with_params(p);
            match free_energy_and_gradient(net, &layout, beta) {
                Ok(v) => v,
                Err(_) => (f64::NAN, vec![f64::NAN; p.len()]),
            }
        };
        let min = quasi_newton_minimize(objective, start_params, &cfg)?;
        Ok(InnerSolve {
            converged: min.converged(),
            iterations: min.iterations,
            params: min.x,
            value: min.value,
        })
    })?;

    let layout = init.with_params(trace.final_params().unwrap_or(&init.params()));
    let beta_final = Beta::new(*schedule.betas().last().expect("schedule has a step"))?;
    let pt = backward_log_partition(net, &layout, beta_final)?;
    let associations = stage_gibbs(&pt, net, &layout)?;
    let hard = hard_cost(net, &layout)?;
    Ok(FlpoSolution {
        free_energy_trace: trace.entries.iter().map(|e| (e.beta, e.value)).collect(),
        converged: trace.all_converged(),
        layout,
        associations,
        hard_cost: hard.cost,
        routes: hard.routes,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
