//! Time-invariant reformulation of the stage-wise problem.
//!
//! Every stage of the routing DAG is merged into one state space
//! `Σ = Γ_0 ∪ … ∪ Γ_{M+1}` in which the facility `j` of stage `k` becomes
//! its own state `f_j^k`. Action masks keep transitions stage-monotone, so
//! a single stationary policy on `Σ` carries the whole time-varying routing
//! policy. Transitions are deterministic (`s' = a`), which makes the
//! `(γ/β) log p` correction of the transition cost vanish.

use std::fmt;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Beta, FacilityLayout, Network, Point2};
use crate::numeric::first_argmax;
use crate::optimizer::{anneal_driver, quasi_newton_minimize, AnnealingSchedule, InnerSolve, QuasiNewtonConfig};
use crate::stagewise::{route_cost, Route, StageAssociations, StageElement, StageGraph};

/// Identifier of a lifted state. Actions are identified with their target
/// state.
pub type StateId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Node(usize),
    /// Facility `facility` tagged with its stage `1..=M`.
    Facility {
        facility: usize,
        stage: usize,
    },
    Destination,
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateKind::Node(i) => write!(f, "n{i}"),
            StateKind::Facility { facility, stage } => write!(f, "f{facility}^{stage}"),
            StateKind::Destination => write!(f, "delta"),
        }
    }
}

/// The augmented state/action space with stage masks.
#[derive(Debug, Clone)]
pub struct LiftedTopology {
    node_count: usize,
    facility_count: usize,
    early_exit: bool,
    gamma: f64,
    kinds: Vec<StateKind>,
    stage_of: Vec<usize>,
    /// Feasible actions (= successor states) per state, facilities in index
    /// order then `δ`.
    actions: Vec<Vec<StateId>>,
    /// `pair_offset[s]..pair_offset[s + 1]` indexes the pairs of state `s`.
    pair_offset: Vec<usize>,
    /// `δ` first, then stages `M` down to `0`.
    sweep_order: Vec<StateId>,
}

/// Lifts `net` with discount `γ = 1`.
pub fn lift(net: &Network) -> LiftedTopology {
    let n = net.node_count();
    let m = net.facility_count();
    let early_exit = net.early_exit();
    let delta = n + m * m;
    let facility = |j: usize, k: usize| n + (k - 1) * m + j;

    let mut kinds = Vec::with_capacity(delta + 1);
    let mut stage_of = Vec::with_capacity(delta + 1);
    for i in 0..n {
        kinds.push(StateKind::Node(i));
        stage_of.push(0);
    }
    for k in 1..=m {
        for j in 0..m {
            kinds.push(StateKind::Facility { facility: j, stage: k });
            stage_of.push(k);
        }
    }
    kinds.push(StateKind::Destination);
    stage_of.push(m + 1);

    let next_stage = |k: usize| -> Vec<StateId> {
        // Successors of a non-δ state in stage k.
        let mut acts = Vec::new();
        if k < m {
            acts.extend((0..m).map(|j| facility(j, k + 1)));
            if early_exit {
                acts.push(delta);
            }
        } else {
            acts.push(delta);
        }
        acts
    };
    let actions: Vec<Vec<StateId>> = (0..=delta)
        .map(|s| {
            if s == delta {
                vec![delta]
            } else {
                next_stage(stage_of[s])
            }
        })
        .collect();
    let mut pair_offset = Vec::with_capacity(delta + 2);
    pair_offset.push(0);
    for a in &actions {
        pair_offset.push(pair_offset.last().unwrap() + a.len());
    }
    let mut sweep_order = vec![delta];
    for k in (1..=m).rev() {
        sweep_order.extend((0..m).map(|j| facility(j, k)));
    }
    sweep_order.extend(0..n);

    LiftedTopology {
        node_count: n,
        facility_count: m,
        early_exit,
        gamma: 1.0,
        kinds,
        stage_of,
        actions,
        pair_offset,
        sweep_order,
    }
}

impl LiftedTopology {
    /// Same topology with discount `γ ∈ (0, 1]`.
    pub fn with_discount(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidInput(format!("discount must lie in (0, 1], got {gamma}")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn state_count(&self) -> usize {
        self.kinds.len()
    }

    /// Size of the action set `Γ_1 ∪ … ∪ Γ_{M+1}`.
    pub fn action_count(&self) -> usize {
        self.facility_count * self.facility_count + 1
    }

    pub fn pair_count(&self) -> usize {
        *self.pair_offset.last().unwrap()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn facility_count(&self) -> usize {
        self.facility_count
    }

    pub fn destination(&self) -> StateId {
        self.kinds.len() - 1
    }

    pub fn node(&self, i: usize) -> StateId {
        i
    }

    /// State of facility `j` at stage `k` (1-based).
    pub fn facility(&self, j: usize, k: usize) -> StateId {
        self.node_count + (k - 1) * self.facility_count + j
    }

    pub fn kind(&self, s: StateId) -> StateKind {
        self.kinds[s]
    }

    pub fn stage_of(&self, s: StateId) -> usize {
        self.stage_of[s]
    }

    pub fn actions(&self, s: StateId) -> &[StateId] {
        &self.actions[s]
    }

    pub fn is_feasible(&self, s: StateId, a: StateId) -> bool {
        s < self.actions.len() && self.actions[s].contains(&a)
    }

    /// Deterministic successor of a feasible pair.
    pub fn transition(&self, s: StateId, a: StateId) -> Option<StateId> {
        self.is_feasible(s, a).then_some(a)
    }

    /// Flat index of the pair `(s, a)`.
    pub fn pair_index(&self, s: StateId, a: StateId) -> Option<usize> {
        self.actions[s]
            .iter()
            .position(|&b| b == a)
            .map(|p| self.pair_offset[s] + p)
    }

    pub fn pair_range(&self, s: StateId) -> std::ops::Range<usize> {
        self.pair_offset[s]..self.pair_offset[s + 1]
    }

    /// States in reverse topological order.
    pub fn sweep_order(&self) -> &[StateId] {
        &self.sweep_order
    }

    fn stage_graph(&self) -> StageGraph {
        StageGraph::from_parts(self.node_count, self.facility_count, self.early_exit)
    }

    fn stage_element(&self, s: StateId) -> StageElement {
        match self.kinds[s] {
            StateKind::Node(i) => StageElement::Node(i),
            StateKind::Facility { facility, .. } => StageElement::Facility(facility),
            StateKind::Destination => StageElement::Destination,
        }
    }
}

/// Per-state positions and which of them are free.
#[derive(Debug, Clone, PartialEq)]
pub struct StateParams {
    pub xi: Vec<Point2>,
    pub free: Vec<bool>,
    /// Action parameters; empty for the plain facility-location problem.
    pub lambda: Vec<f64>,
}

impl StateParams {
    /// Node and destination positions are fixed, facility copies free.
    pub fn from_layout(topo: &LiftedTopology, net: &Network, layout: &FacilityLayout) -> Result<Self> {
        layout.check_matches(net)?;
        if net.node_count() != topo.node_count || net.facility_count() != topo.facility_count {
            return Err(Error::InvalidInput("network does not match the lifted topology".into()));
        }
        let xi = topo
            .kinds
            .iter()
            .map(|k| match *k {
                StateKind::Node(i) => net.nodes()[i],
                StateKind::Facility { facility, stage } => layout.at(stage, facility),
                StateKind::Destination => net.destination(),
            })
            .collect();
        let free = topo
            .kinds
            .iter()
            .map(|k| matches!(k, StateKind::Facility { .. }))
            .collect();
        Ok(StateParams {
            xi,
            free,
            lambda: Vec::new(),
        })
    }

    /// Facility copies read back as a layout.
    pub fn to_layout(&self, topo: &LiftedTopology, tied: bool) -> FacilityLayout {
        let m = topo.facility_count;
        if tied {
            FacilityLayout::tied((0..m).map(|j| self.xi[topo.facility(j, 1)]).collect())
        } else {
            let grid = (1..=m)
                .map(|k| (0..m).map(|j| self.xi[topo.facility(j, k)]).collect())
                .collect();
            FacilityLayout::untied(grid).expect("square grid")
        }
    }
}

/// Mapping from free scalar parameters to the state coordinates they move.
///
/// When stages are tied, parameter `2j + c` drives coordinate `c` of every
/// copy `f_j^k`; otherwise each copy has its own pair of parameters, in the
/// same order as [`FacilityLayout::params`].
#[derive(Debug, Clone)]
pub struct ParamMap {
    tied: bool,
    len: usize,
    /// Base parameter index of each state (`None` for fixed states).
    base: Vec<Option<usize>>,
}

impl ParamMap {
    pub fn new(topo: &LiftedTopology, tied: bool) -> Self {
        let m = topo.facility_count;
        let base = topo
            .kinds
            .iter()
            .map(|k| match *k {
                StateKind::Facility { facility, stage } => Some(if tied {
                    2 * facility
                } else {
                    2 * ((stage - 1) * m + facility)
                }),
                _ => None,
            })
            .collect();
        ParamMap {
            tied,
            len: if tied { 2 * m } else { 2 * m * m },
            base,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_tied(&self) -> bool {
        self.tied
    }

    pub fn base(&self, s: StateId) -> Option<usize> {
        self.base[s]
    }

    /// Writes the parameter vector into the free state positions.
    pub fn apply(&self, values: &[f64], params: &mut StateParams) {
        assert_eq!(values.len(), self.len, "parameter vector length");
        for (s, b) in self.base.iter().enumerate() {
            if let Some(b) = *b {
                params.xi[s] = Point2::new(values[b], values[b + 1]);
            }
        }
    }

    /// Reads the parameter vector from the state positions.
    pub fn extract(&self, params: &StateParams) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (s, b) in self.base.iter().enumerate().rev() {
            if let Some(b) = *b {
                out[b] = params.xi[s].x;
                out[b + 1] = params.xi[s].y;
            }
        }
        out
    }
}

/// Transition cost `c(s, a, s')`: squared distance between the positions of
/// `s` and `s'`. Deterministic transitions make `c̄ = c`.
pub fn lifted_cost(
    topo: &LiftedTopology,
    params: &StateParams,
    s: StateId,
    a: StateId,
    s_next: StateId,
) -> Result<f64> {
    if !topo.is_feasible(s, a) {
        return Err(Error::Contract(format!(
            "action {} is not feasible at {}",
            topo.kinds.get(a).map_or("?".into(), |k| k.to_string()),
            topo.kinds.get(s).map_or("?".into(), |k| k.to_string())
        )));
    }
    if s_next != a {
        return Err(Error::Contract("successor state must equal the action".into()));
    }
    Ok(params.xi[s].squared_distance(params.xi[a]))
}

#[inline]
fn pair_cost(params: &StateParams, s: StateId, a: StateId) -> f64 {
    params.xi[s].squared_distance(params.xi[a])
}

/// `Λ_β(s, a)` on every feasible pair, with the soft values it induces.
#[derive(Debug, Clone)]
pub struct SoftValueTable {
    pub lambda_sa: Vec<f64>,
    /// `V(s) = −(γ/β) log Σ_a exp(−(β/γ) Λ(s, a))`.
    pub value: Vec<f64>,
    pub beta: Beta,
    pub gamma: f64,
    /// ∞-norm change of the last sweep.
    pub residual: f64,
    pub sweeps: usize,
}

impl SoftValueTable {
    pub fn get(&self, topo: &LiftedTopology, s: StateId, a: StateId) -> Option<f64> {
        topo.pair_index(s, a).map(|p| self.lambda_sa[p])
    }

    /// `Σ_i ρ_i V(n_i)`.
    pub fn weighted_node_value(&self, weights: &[f64]) -> f64 {
        weights.iter().enumerate().map(|(i, w)| w * self.value[i]).sum()
    }
}

#[inline]
fn soft_min(lambdas: &[f64], beta_over_gamma: f64) -> f64 {
    // −(γ/β) logsumexp(−(β/γ) Λ), shifted by the minimum.
    let lo = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = lambdas.iter().map(|&l| (-(l - lo) * beta_over_gamma).exp()).sum();
    lo - s.ln() / beta_over_gamma
}

/// Soft Bellman fixed point
/// `Λ(s, a) = c(s, a, a) − (γ²/β) log Σ_{a'∈A(a)} exp(−(β/γ) Λ(a, a'))`,
/// iterated with in-place sweeps in reverse topological order until the
/// ∞-norm change drops to `tol`. On the lifted DAG the first sweep already
/// lands on the fixed point and the second confirms it.
pub fn lambda_fixed_point(
    topo: &LiftedTopology,
    params: &StateParams,
    beta: Beta,
    tol: f64,
    max_iter: usize,
) -> Result<SoftValueTable> {
    let gamma = topo.gamma;
    let bg = beta.value() / gamma;
    let mut lambda = vec![0.0; topo.pair_count()];
    let mut value: Vec<f64> = topo.actions.iter().map(|a| -(a.len() as f64).ln() / bg).collect();
    let delta = topo.destination();
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < max_iter {
        residual = 0.0;
        for &s in &topo.sweep_order {
            let range = topo.pair_range(s);
            for (p, &a) in range.clone().zip(&topo.actions[s]) {
                let new = if s == delta {
                    0.0
                } else {
                    pair_cost(params, s, a) + gamma * value[a]
                };
                residual = residual.max((new - lambda[p]).abs());
                lambda[p] = new;
            }
            value[s] = soft_min(&lambda[range], bg);
        }
        sweeps += 1;
        if residual <= tol {
            break;
        }
    }
    if !residual.is_finite() || residual > tol {
        return Err(Error::NonConvergence {
            iterations: sweeps,
            residual,
        });
    }
    Ok(SoftValueTable {
        lambda_sa: lambda,
        value,
        beta,
        gamma,
        residual,
        sweeps,
    })
}

/// One synchronous application of the soft Bellman operator to `table`,
/// returning `‖TΛ − Λ‖∞`.
pub fn bellman_residual(topo: &LiftedTopology, params: &StateParams, table: &SoftValueTable) -> f64 {
    let bg = table.beta.value() / table.gamma;
    let value: Vec<f64> = (0..topo.state_count())
        .map(|s| soft_min(&table.lambda_sa[topo.pair_range(s)], bg))
        .collect();
    let delta = topo.destination();
    let mut r: f64 = 0.0;
    for s in 0..topo.state_count() {
        for (p, &a) in topo.pair_range(s).zip(&topo.actions[s]) {
            let t = if s == delta {
                0.0
            } else {
                pair_cost(params, s, a) + table.gamma * value[a]
            };
            r = r.max((t - table.lambda_sa[p]).abs());
        }
    }
    r
}

/// Gibbs stationary policy `μ(a|s) ∝ exp(−(β/γ) Λ(s, a))` over `A(s)`.
#[derive(Debug, Clone)]
pub struct StationaryPolicy {
    pub mu: Vec<f64>,
    pub beta: Beta,
    pub gamma: f64,
}

impl StationaryPolicy {
    /// Uniform over every feasible action.
    pub fn uniform(topo: &LiftedTopology, beta: Beta) -> Self {
        let mut mu = vec![0.0; topo.pair_count()];
        for s in 0..topo.state_count() {
            let r = topo.pair_range(s);
            let w = 1.0 / r.len() as f64;
            mu[r].iter_mut().for_each(|v| *v = w);
        }
        StationaryPolicy {
            mu,
            beta,
            gamma: topo.gamma,
        }
    }

    pub fn prob(&self, topo: &LiftedTopology, s: StateId, a: StateId) -> f64 {
        topo.pair_index(s, a).map_or(0.0, |p| self.mu[p])
    }

    pub fn row<'a>(&'a self, topo: &LiftedTopology, s: StateId) -> &'a [f64] {
        &self.mu[topo.pair_range(s)]
    }

    /// Most probable action at `s`, first on ties.
    pub fn argmax(&self, topo: &LiftedTopology, s: StateId) -> StateId {
        topo.actions[s][first_argmax(self.row(topo, s))]
    }
}

pub fn policy_from_lambda(table: &SoftValueTable, topo: &LiftedTopology) -> StationaryPolicy {
    let bg = table.beta.value() / table.gamma;
    let mut mu = vec![0.0; topo.pair_count()];
    for s in 0..topo.state_count() {
        let r = topo.pair_range(s);
        let row = &table.lambda_sa[r.clone()];
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for (out, &l) in mu[r.clone()].iter_mut().zip(row) {
            *out = (-(l - lo) * bg).exp();
            total += *out;
        }
        mu[r].iter_mut().for_each(|v| *v /= total);
    }
    StationaryPolicy {
        mu,
        beta: table.beta,
        gamma: table.gamma,
    }
}

/// Per-parameter value gradients `G_α(s)` and their action form
/// `K_α(s, a) = ∂c(s, a)/∂α + γ G_α(a)`.
#[derive(Debug, Clone)]
pub struct GradientTable {
    params: usize,
    /// `g[s * params + α]`.
    g: Vec<f64>,
    /// `k[pair * params + α]`.
    k: Vec<f64>,
    pub residual: f64,
    pub sweeps: usize,
}

impl GradientTable {
    pub fn param_count(&self) -> usize {
        self.params
    }

    pub fn g(&self, alpha: usize, s: StateId) -> f64 {
        self.g[s * self.params + alpha]
    }

    pub fn k(&self, alpha: usize, pair: usize) -> f64 {
        self.k[pair * self.params + alpha]
    }

    /// `Σ_i ρ_i G_α(n_i)` for every α.
    pub fn weighted_node_gradient(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.params];
        for (i, w) in weights.iter().enumerate() {
            for (o, g) in out.iter_mut().zip(&self.g[i * self.params..(i + 1) * self.params]) {
                *o += w * g;
            }
        }
        out
    }

    pub(crate) fn from_parts(params: usize, g: Vec<f64>, k: Vec<f64>) -> Self {
        GradientTable {
            params,
            g,
            k,
            residual: 0.0,
            sweeps: 0,
        }
    }
}

/// `∂c(s, a)/∂α` for every α touched by the pair, added into `out`.
#[inline]
pub(crate) fn add_cost_gradient(map: &ParamMap, params: &StateParams, s: StateId, a: StateId, out: &mut [f64]) {
    let (bs, ba) = (map.base[s], map.base[a]);
    if bs.is_none() && ba.is_none() {
        return;
    }
    let diff = params.xi[s].minus(params.xi[a]);
    for c in 0..2 {
        let d = 2.0 * diff.coord(c);
        if let Some(b) = bs {
            out[b + c] += d;
        }
        if let Some(b) = ba {
            out[b + c] -= d;
        }
    }
}

/// Gradient fixed point
/// `G_α(s) = Σ_a μ(a|s) [∂c(s, a)/∂α + γ G_α(a)]` for every free
/// parameter, iterated with in-place reverse-topological sweeps.
pub fn gradient_fixed_point(
    topo: &LiftedTopology,
    params: &StateParams,
    map: &ParamMap,
    policy: &StationaryPolicy,
    tol: f64,
    max_iter: usize,
) -> Result<GradientTable> {
    let np = map.len();
    let gamma = topo.gamma;
    let mut g = vec![0.0; topo.state_count() * np];
    let mut k = vec![0.0; topo.pair_count() * np];
    let mut row = vec![0.0; np];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    let delta = topo.destination();
    while sweeps < max_iter {
        residual = 0.0;
        for &s in &topo.sweep_order {
            row.iter_mut().for_each(|v| *v = 0.0);
            if s != delta {
                for (p, &a) in topo.pair_range(s).zip(&topo.actions[s]) {
                    let kp = &mut k[p * np..(p + 1) * np];
                    kp.iter_mut().for_each(|v| *v = 0.0);
                    add_cost_gradient(map, params, s, a, kp);
                    let ga = &g[a * np..(a + 1) * np];
                    let w = policy.mu[p];
                    for ((kv, gv), r) in kp.iter_mut().zip(ga).zip(row.iter_mut()) {
                        *kv += gamma * gv;
                        *r += w * *kv;
                    }
                }
            }
            let gs = &mut g[s * np..(s + 1) * np];
            for (old, new) in gs.iter_mut().zip(&row) {
                residual = residual.max((new - *old).abs());
                *old = *new;
            }
        }
        sweeps += 1;
        if residual <= tol {
            break;
        }
    }
    if !residual.is_finite() || residual > tol {
        return Err(Error::NonConvergence {
            iterations: sweeps,
            residual,
        });
    }
    Ok(GradientTable {
        params: np,
        g,
        k,
        residual,
        sweeps,
    })
}

/// Weighted soft value `Σ_i ρ_i V(n_i)` and its gradient at fixed policy.
pub fn value_and_gradient(
    topo: &LiftedTopology,
    params: &StateParams,
    map: &ParamMap,
    weights: &[f64],
    beta: Beta,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, Vec<f64>)> {
    let table = lambda_fixed_point(topo, params, beta, tol, max_iter)?;
    let policy = policy_from_lambda(&table, topo);
    let grads = gradient_fixed_point(topo, params, map, &policy, tol, max_iter)?;
    Ok((
        table.weighted_node_value(weights),
        grads.weighted_node_gradient(weights),
    ))
}

/// Reads the time-varying stage policies out of a stationary policy: row
/// `γ_k` of stage `k` is the lifted row of the stage-tagged state.
pub fn unlift_policy(policy: &StationaryPolicy, topo: &LiftedTopology) -> StageAssociations {
    let graph = topo.stage_graph();
    let m = topo.facility_count;
    let mut rows = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let stage_rows: Vec<Vec<(usize, f64)>> = (0..graph.stage_len(k))
            .map(|idx| {
                let state = match graph.element(k, idx) {
                    StageElement::Node(i) => topo.node(i),
                    StageElement::Facility(j) => topo.facility(j, k),
                    StageElement::Destination => {
                        return vec![(graph.destination_index(k + 1), 1.0)];
                    }
                };
                topo.actions[state]
                    .iter()
                    .zip(policy.row(topo, state))
                    .map(|(&a, &p)| (graph.index_of(k + 1, topo.stage_element(a)), p))
                    .collect()
            })
            .collect();
        rows.push(stage_rows);
    }
    StageAssociations::from_parts(rows, policy.beta, graph)
}

/// Route of every node when following the most probable action until `δ`,
/// padded with `δ` to the full `M + 2` stages.
pub fn argmax_routes(policy: &StationaryPolicy, topo: &LiftedTopology) -> Vec<Route> {
    let delta = topo.destination();
    (0..topo.node_count)
        .map(|i| {
            let mut route = vec![StageElement::Node(i)];
            let mut s = topo.node(i);
            while s != delta {
                s = policy.argmax(topo, s);
                route.push(topo.stage_element(s));
            }
            route.resize(topo.facility_count + 2, StageElement::Destination);
            route
        })
        .collect()
}

/// Knobs of the lifted annealed solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParaSdmOptions {
    pub gamma: f64,
    pub tie_stages: bool,
    pub fixed_point_tol: f64,
    pub fixed_point_max_sweeps: usize,
    /// BFGS iteration cap per β.
    pub param_max_iter: usize,
}

impl Default for ParaSdmOptions {
    fn default() -> Self {
        ParaSdmOptions {
            gamma: 1.0,
            tie_stages: true,
            fixed_point_tol: 1e-12,
            fixed_point_max_sweeps: 100,
            param_max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParaSdmSolution {
    pub topology: LiftedTopology,
    pub layout: FacilityLayout,
    pub policy: StationaryPolicy,
    /// `(β, Σ_i ρ_i V_β(n_i))` after each parameter update.
    pub value_trace: Vec<(f64, f64)>,
    /// Undiscounted routing cost of the argmax routes.
    pub hard_cost: f64,
    pub routes: Vec<Route>,
    pub wall_time_s: f64,
    pub converged: bool,
    pub gamma: f64,
    pub tie_stages: bool,
}

#[derive(Serialize)]
struct PolicyRow {
    state: String,
    actions: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct ParaSdmSolutionFile<'a> {
    layout: Vec<Point2>,
    beta_trace: &'a [(f64, f64)],
    hard_cost: f64,
    routes: &'a [Route],
    wall_time_s: f64,
    converged: bool,
    gamma: f64,
    tie_stages: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    stationary_policy_rows: Option<Vec<PolicyRow>>,
}

impl ParaSdmSolution {
    pub fn beta_steps(&self) -> usize {
        self.value_trace.len()
    }

    /// JSON record. `layout` lists the `M` facility locations when stages
    /// are tied, otherwise all `M²` copies stage by stage.
    pub fn to_json(&self, include_policy: bool) -> Result<String> {
        let topo = &self.topology;
        let rows = include_policy.then(|| {
            (0..topo.state_count())
                .map(|s| PolicyRow {
                    state: topo.kind(s).to_string(),
                    actions: topo
                        .actions(s)
                        .iter()
                        .zip(self.policy.row(topo, s))
                        .map(|(&a, &p)| (topo.kind(a).to_string(), p))
                        .collect(),
                })
                .collect()
        });
        let layout = if self.tie_stages {
            self.layout.facilities().to_vec()
        } else {
            self.layout.grid().iter().flatten().copied().collect()
        };
        let file = ParaSdmSolutionFile {
            layout,
            beta_trace: &self.value_trace,
            hard_cost: self.hard_cost,
            routes: &self.routes,
            wall_time_s: self.wall_time_s,
            converged: self.converged,
            gamma: self.gamma,
            tie_stages: self.tie_stages,
            stationary_policy_rows: rows,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

/// Deterministic annealing on the lifted problem: at each β the weighted
/// soft value is minimized over the facility copies with BFGS, re-solving
/// the `Λ` and gradient fixed points at every evaluated point.
pub fn solve_parasdm_annealed(
    net: &Network,
    schedule: &AnnealingSchedule,
    opts: &ParaSdmOptions,
) -> Result<ParaSdmSolution> {
    schedule.validate()?;
    let start = Instant::now();
    let topo = lift(net).with_discount(opts.gamma)?;
    let map = ParamMap::new(&topo, opts.tie_stages);
    let init_layout = FacilityLayout::collapsed(net.facility_count(), net.centroid(), opts.tie_stages);
    let base = StateParams::from_layout(&topo, net, &init_layout)?;
    let cfg = QuasiNewtonConfig::with_limits(schedule.inner_tol, opts.param_max_iter);
    let (tol, sweeps) = (opts.fixed_point_tol, opts.fixed_point_max_sweeps);

    let trace = anneal_driver(schedule, &map.extract(&base), |beta, start_params| {
        let mut scratch = base.clone();
        let objective = |p: &[f64]| {
            map.apply(p, &mut scratch);
            match value_and_gradient(&topo, &scratch, &map, net.weights(), beta, tol, sweeps) {
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

    let mut params = base.clone();
    map.apply(trace.final_params().unwrap_or(&map.extract(&base)), &mut params);
    let layout = params.to_layout(&topo, opts.tie_stages);
    let beta_final = Beta::new(*schedule.betas().last().expect("schedule has a step"))?;
    let table = lambda_fixed_point(&topo, &params, beta_final, tol, sweeps)?;
    let policy = policy_from_lambda(&table, &topo);
    let routes = argmax_routes(&policy, &topo);
    let hard_cost = net
        .weights()
        .iter()
        .zip(&routes)
        .map(|(w, r)| w * route_cost(net, &layout, r))
        .sum();
    Ok(ParaSdmSolution {
        value_trace: trace.entries.iter().map(|e| (e.beta, e.value)).collect(),
        converged: trace.all_converged(),
        topology: topo,
        layout,
        policy,
        hard_cost,
        routes,
        wall_time_s: start.elapsed().as_secs_f64(),
        gamma: opts.gamma,
        tie_stages: opts.tie_stages,
    })
}
