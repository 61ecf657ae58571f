//! Tabular soft Q-learning on the lifted topology.
//!
//! `Ψ` tracks the soft state-action value `Λ` and `K_α` tracks its
//! parameter gradients, both from sampled transitions. Successor rows are
//! bootstrapped: the log-sum and the policy-weighted gradient are taken over
//! the actions of the successor state.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lifted::{
    add_cost_gradient, GradientTable, LiftedTopology, ParamMap, SoftValueTable, StateId, StateParams, StationaryPolicy,
};
use crate::model::Beta;

/// Step-size schedule `ν` as a function of prior visits to the pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StepRule {
    /// `1 / (1 + visits)`.
    Harmonic,
    /// `(1 + visits)^(−ω)`, Robbins–Monro for `ω ∈ (0.5, 1]`.
    Polynomial(f64),
    Constant(f64),
}

impl StepRule {
    pub fn step(&self, visits: u64) -> f64 {
        match *self {
            StepRule::Harmonic => 1.0 / (1.0 + visits as f64),
            StepRule::Polynomial(w) => (1.0 + visits as f64).powf(-w),
            StepRule::Constant(nu) => nu,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepRule::Harmonic => true,
            StepRule::Polynomial(w) => w > 0.0 && w.is_finite(),
            StepRule::Constant(nu) => nu > 0.0 && nu <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("step sizes must lie in (0, 1]: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub state: StateId,
    pub action: StateId,
    pub cost: f64,
    pub next: StateId,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Episode {
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = row.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &w) in row.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return Some(i);
            }
            u -= w;
            last = Some(i);
        }
    }
    last
}

/// Rolls out one episode from a node drawn from `start_weights` until `δ`.
pub fn sample_episode<R: Rng + ?Sized>(
    topo: &LiftedTopology,
    params: &StateParams,
    start_weights: &[f64],
    behavior: &StationaryPolicy,
    rng: &mut R,
) -> Result<Episode> {
    let start =
        sample_row(start_weights, rng).ok_or_else(|| Error::InvalidInput("initial distribution has no mass".into()))?;
    let delta = topo.destination();
    let mut s = topo.node(start);
    let mut transitions = Vec::with_capacity(topo.facility_count() + 1);
    // Stage monotonicity bounds the length; the cap only guards bad input.
    for _ in 0..=topo.facility_count() + 1 {
        if s == delta {
            break;
        }
        let pick = sample_row(behavior.row(topo, s), rng)
            .ok_or_else(|| Error::InvalidPolicy(format!("behavior row of {} has no support", topo.kind(s))))?;
        let a = topo.actions(s)[pick];
        transitions.push(Transition {
            state: s,
            action: a,
            cost: params.xi[s].squared_distance(params.xi[a]),
            next: a,
        });
        s = a;
    }
    Ok(Episode { transitions })
}

/// Learner tables over the feasible pairs of a topology.
#[derive(Debug, Clone)]
pub struct LearnerState {
    pub psi: Vec<f64>,
    /// `k[pair * params + α]`.
    k: Vec<f64>,
    params: usize,
    pub visits: Vec<u64>,
    pub step_rule: StepRule,
}

impl LearnerState {
    /// `Ψ ≡ 0`, `K ≡ 0`.
    pub fn new(topo: &LiftedTopology, map: &ParamMap, step_rule: StepRule) -> Self {
        LearnerState {
            psi: vec![0.0; topo.pair_count()],
            k: vec![0.0; topo.pair_count() * map.len()],
            params: map.len(),
            visits: vec![0; topo.pair_count()],
            step_rule,
        }
    }

    pub fn k(&self, alpha: usize, pair: usize) -> f64 {
        self.k[pair * self.params + alpha]
    }

    fn pair(&self, topo: &LiftedTopology, t: &Transition) -> Result<usize> {
        if t.next != t.action {
            return Err(Error::Contract("successor state must equal the action".into()));
        }
        topo.pair_index(t.state, t.action).ok_or_else(|| {
            Error::Contract(format!(
                "infeasible transition {} -> {}",
                topo.kind(t.state),
                topo.kind(t.action)
            ))
        })
    }

    /// `Ψ(s,a) ← (1−ν)Ψ(s,a) + ν[c − (γ²/β) log Σ_{a'∈A(s')} exp(−(β/γ)Ψ(s',a'))]`.
    /// Increments the visit count of the pair. `Ψ(δ,δ)` stays pinned at 0.
    pub fn psi_update(&mut self, topo: &LiftedTopology, t: &Transition, nu: f64, beta: Beta, gamma: f64) -> Result<()> {
        let pair = self.pair(topo, t)?;
        self.visits[pair] += 1;
        if t.state == topo.destination() {
            return Ok(());
        }
        let bg = beta.value() / gamma;
        let next = &self.psi[topo.pair_range(t.next)];
        let lo = next.iter().copied().fold(f64::INFINITY, f64::min);
        let s: f64 = next.iter().map(|&v| (-(v - lo) * bg).exp()).sum();
        // −(γ²/β) log Σ exp(−(β/γ)Ψ) = γ·(lo − (γ/β) log s)
        let target = t.cost + gamma * (lo - s.ln() / bg);
        self.psi[pair] = (1.0 - nu) * self.psi[pair] + nu * target;
        Ok(())
    }

    /// `K_α(s,a) ← (1−ν)K_α(s,a) + ν[∂c/∂α + γ Σ_{a'} μ(a'|s') K_α(s',a')]`.
    #[allow(clippy::too_many_arguments)]
    pub fn k_update(
        &mut self,
        topo: &LiftedTopology,
        params: &StateParams,
        map: &ParamMap,
        t: &Transition,
        nu: f64,
        policy: &StationaryPolicy,
        gamma: f64,
    ) -> Result<()> {
        let pair = self.pair(topo, t)?;
        self.k_update_pair(topo, params, map, t, pair, nu, policy.row(topo, t.next), gamma);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn k_update_pair(
        &mut self,
        topo: &LiftedTopology,
        params: &StateParams,
        map: &ParamMap,
        t: &Transition,
        pair: usize,
        nu: f64,
        next_row: &[f64],
        gamma: f64,
    ) {
        if t.state == topo.destination() {
            return;
        }
        let np = self.params;
        let mut target = vec![0.0; np];
        add_cost_gradient(map, params, t.state, t.action, &mut target);
        for (p, &w) in topo.pair_range(t.next).zip(next_row) {
            if w == 0.0 {
                continue;
            }
            for (tv, kv) in target.iter_mut().zip(&self.k[p * np..(p + 1) * np]) {
                *tv += gamma * w * kv;
            }
        }
        for (kv, tv) in self.k[pair * np..(pair + 1) * np].iter_mut().zip(&target) {
            *kv = (1.0 - nu) * *kv + nu * tv;
        }
    }

    /// Gibbs row of the current `Ψ` at `s`.
    fn greedy_row(&self, topo: &LiftedTopology, s: StateId, bg: f64) -> Vec<f64> {
        let row = &self.psi[topo.pair_range(s)];
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let mut out: Vec<f64> = row.iter().map(|&v| (-(v - lo) * bg).exp()).collect();
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
        out
    }

    /// Applies one transition to both tables with the step size given by the
    /// rule, using the Gibbs policy of the current `Ψ` for the gradient.
    pub fn observe(
        &mut self,
        topo: &LiftedTopology,
        params: &StateParams,
        map: &ParamMap,
        t: &Transition,
        beta: Beta,
        gamma: f64,
    ) -> Result<()> {
        let pair = self.pair(topo, t)?;
        let nu = self.step_rule.step(self.visits[pair]);
        let row = self.greedy_row(topo, t.next, beta.value() / gamma);
        self.k_update_pair(topo, params, map, t, pair, nu, &row, gamma);
        self.psi_update(topo, t, nu, beta, gamma)
    }

    /// `Ψ` packaged as a value table.
    pub fn values(&self, topo: &LiftedTopology, beta: Beta, gamma: f64) -> SoftValueTable {
        let bg = beta.value() / gamma;
        let value = (0..topo.state_count())
            .map(|s| {
                let row = &self.psi[topo.pair_range(s)];
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                let sum: f64 = row.iter().map(|&v| (-(v - lo) * bg).exp()).sum();
                lo - sum.ln() / bg
            })
            .collect();
        SoftValueTable {
            lambda_sa: self.psi.clone(),
            value,
            beta,
            gamma,
            residual: f64::NAN,
            sweeps: 0,
        }
    }

    /// `K` packaged as a gradient table, with `G = Σ_a μ K` under the Gibbs
    /// policy of `Ψ`.
    pub fn gradients(&self, topo: &LiftedTopology, beta: Beta, gamma: f64) -> GradientTable {
        let np = self.params;
        let mut g = vec![0.0; topo.state_count() * np];
        for s in 0..topo.state_count() {
            if s == topo.destination() {
                continue;
            }
            let row = self.greedy_row(topo, s, beta.value() / gamma);
            for (p, w) in topo.pair_range(s).zip(row) {
                for (gv, kv) in g[s * np..(s + 1) * np].iter_mut().zip(&self.k[p * np..(p + 1) * np]) {
                    *gv += w * kv;
                }
            }
        }
        GradientTable::from_parts(np, g, self.k.clone())
    }

    /// Largest `|Ψ − Λ|` over feasible pairs.
    pub fn psi_deviation(&self, exact: &SoftValueTable) -> f64 {
        self.psi
            .iter()
            .zip(&exact.lambda_sa)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest `|K_α − K*_α|` over parameters and feasible pairs.
    pub fn k_deviation(&self, exact: &GradientTable) -> f64 {
        let mut m: f64 = 0.0;
        for pair in 0..self.visits.len() {
            for alpha in 0..self.params {
                m = m.max((self.k(alpha, pair) - exact.k(alpha, pair)).abs());
            }
        }
        m
    }
}

/// Result of a learning run.
#[derive(Debug, Clone)]
pub struct QLearnOutcome {
    pub state: LearnerState,
    pub values: SoftValueTable,
    pub gradients: GradientTable,
    pub episodes: usize,
}

/// Off-policy soft Q-learning with uniform exploration over `A(s)`.
#[allow(clippy::too_many_arguments)]
pub fn q_learn<R: Rng + ?Sized>(
    topo: &LiftedTopology,
    params: &StateParams,
    map: &ParamMap,
    start_weights: &[f64],
    beta: Beta,
    episodes: usize,
    step_rule: StepRule,
    rng: &mut R,
) -> Result<QLearnOutcome> {
    step_rule.validate()?;
    let gamma = topo.gamma();
    let behavior = StationaryPolicy::uniform(topo, beta);
    let mut state = LearnerState::new(topo, map, step_rule);
    for _ in 0..episodes {
        let ep = sample_episode(topo, params, start_weights, &behavior, rng)?;
        for t in &ep.transitions {
            state.observe(topo, params, map, t, beta, gamma)?;
        }
    }
    Ok(QLearnOutcome {
        values: state.values(topo, beta, gamma),
        gradients: state.gradients(topo, beta, gamma),
        state,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::lifted::{lambda_fixed_point, lift};
    use crate::model::{FacilityLayout, Network, Point2};

    fn setup() -> (Network, LiftedTopology, StateParams, ParamMap) {
        let net = Network::uniform(vec![Point2::new(0.0, 0.0)], Point2::new(1.0, 0.0), 1).unwrap();
        let topo = lift(&net);
        let params = StateParams::from_layout(&topo, &net, &FacilityLayout::tied(vec![Point2::new(0.5, 0.2)])).unwrap();
        let map = ParamMap::new(&topo, true);
        (net, topo, params, map)
    }

    fn beta(b: f64) -> Beta {
        Beta::new(b).unwrap()
    }

    #[test]
    fn episodes_follow_the_dag() {
        let (net, topo, params, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let uniform = StationaryPolicy::uniform(&topo, beta(1.0));
        for _ in 0..200 {
            let ep = sample_episode(&topo, &params, net.weights(), &uniform, &mut rng).unwrap();
            assert!(ep.len() == 1 || ep.len() == 2);
            for w in ep.transitions.windows(2) {
                assert_eq!(w[0].next, w[1].state);
            }
            assert_eq!(ep.transitions.last().unwrap().next, topo.destination());
        }
    }

    #[test]
    fn degenerate_and_broken_behaviors() {
        let (net, topo, params, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut exit_now = StationaryPolicy::uniform(&topo, beta(1.0));
        let f = topo.facility(0, 1);
        let d = topo.destination();
        exit_now.mu[topo.pair_index(0, f).unwrap()] = 0.0;
        exit_now.mu[topo.pair_index(0, d).unwrap()] = 1.0;
        for _ in 0..20 {
            assert_eq!(
                sample_episode(&topo, &params, net.weights(), &exit_now, &mut rng)
                    .unwrap()
                    .len(),
                1
            );
        }
        let mut broken = exit_now.clone();
        broken.mu[topo.pair_index(0, d).unwrap()] = 0.0;
        assert!(matches!(
            sample_episode(&topo, &params, net.weights(), &broken, &mut rng),
            Err(Error::InvalidPolicy(_))
        ));
    }

    #[test]
    fn same_seed_same_episodes() {
        let (net, topo, params, _) = setup();
        let uniform = StationaryPolicy::uniform(&topo, beta(1.0));
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| sample_episode(&topo, &params, net.weights(), &uniform, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn psi_update_examples() {
        let (_, topo, params, map) = setup();
        let d = topo.destination();
        let f = topo.facility(0, 1);
        let mut st = LearnerState::new(&topo, &map, StepRule::Harmonic);
        st.psi[topo.pair_index(0, f).unwrap()] = 0.7;
        let t = Transition {
            state: 0,
            action: f,
            cost: 0.29,
            next: f,
        };
        let before = st.psi.clone();
        st.psi_update(&topo, &t, 0.0, beta(1.0), 1.0).unwrap();
        assert_eq!(st.psi, before);
        assert_eq!(st.visits[topo.pair_index(0, f).unwrap()], 1);

        let term = Transition {
            state: f,
            action: d,
            cost: 0.29,
            next: d,
        };
        st.psi_update(&topo, &term, 1.0, beta(1.0), 1.0).unwrap();
        assert_eq!(st.psi[topo.pair_index(f, d).unwrap()], 0.29);
        // Exactly one entry changed.
        let changed = st.psi.iter().zip(&before).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 1);
        assert_eq!(st.psi[topo.pair_index(d, d).unwrap()], 0.0);

        let bad = Transition {
            state: f,
            action: 0,
            cost: 0.0,
            next: 0,
        };
        assert!(st.psi_update(&topo, &bad, 1.0, beta(1.0), 1.0).is_err());
        let _ = params;
    }

    #[test]
    fn k_update_examples() {
        let (_, topo, params, map) = setup();
        let d = topo.destination();
        let f = topo.facility(0, 1);
        let mut st = LearnerState::new(&topo, &map, StepRule::Harmonic);
        let policy = StationaryPolicy::uniform(&topo, beta(1.0));
        let term = Transition {
            state: f,
            action: d,
            cost: 0.29,
            next: d,
        };
        st.k_update(&topo, &params, &map, &term, 1.0, &policy, 1.0).unwrap();
        let pair = topo.pair_index(f, d).unwrap();
        // ∂c/∂y for c = |y − z|², y = (0.5, 0.2), z = (1, 0).
        assert!((st.k(0, pair) - (-1.0)).abs() < 1e-15);
        assert!((st.k(1, pair) - 0.4).abs() < 1e-15);

        let direct = Transition {
            state: 0,
            action: d,
            cost: 1.0,
            next: d,
        };
        st.k_update(&topo, &params, &map, &direct, 1.0, &policy, 1.0).unwrap();
        let pair = topo.pair_index(0, d).unwrap();
        assert_eq!((st.k(0, pair), st.k(1, pair)), (0.0, 0.0));
    }

    #[test]
    fn zero_episodes_leave_tables_untouched() {
        let (net, topo, params, map) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = q_learn(
            &topo,
            &params,
            &map,
            net.weights(),
            beta(1.0),
            0,
            StepRule::Harmonic,
            &mut rng,
        )
        .unwrap();
        assert!(out.state.psi.iter().all(|v| *v == 0.0));
        assert!(out.state.visits.iter().all(|v| *v == 0));
    }

    #[test]
    fn small_beta_stays_finite() {
        let (net, topo, params, map) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = q_learn(
            &topo,
            &params,
            &map,
            net.weights(),
            beta(1e-8),
            500,
            StepRule::Harmonic,
            &mut rng,
        )
        .unwrap();
        assert!(out.state.psi.iter().all(|v| v.is_finite()));
        assert!(out.values.value.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn converges_toward_exact_lambda() {
        let (net, topo, params, map) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = q_learn(
            &topo,
            &params,
            &map,
            net.weights(),
            beta(1.0),
            5_000,
            StepRule::Harmonic,
            &mut rng,
        )
        .unwrap();
        let exact = lambda_fixed_point(&topo, &params, beta(1.0), 1e-12, 10).unwrap();
        assert!(out.state.psi_deviation(&exact) < 1e-3);
    }
}
