//! BFGS minimization, the plain gradient step and the annealing driver
//! shared by both solvers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::model::{Beta, Network};

/// Geometric inverse-temperature schedule together with inner-solve limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealingSchedule {
    pub beta_min: f64,
    pub growth: f64,
    pub beta_max: f64,
    /// Standard deviation of the Gaussian jitter applied to free parameters
    /// before each inner solve.
    pub perturbation: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Seed of the perturbation noise.
    pub seed: u64,
}

impl Default for AnnealingSchedule {
    fn default() -> Self {
        AnnealingSchedule {
            beta_min: 0.01,
            growth: 1.2,
            beta_max: 1e4,
            perturbation: 1e-4,
            inner_tol: 1e-8,
            inner_max_iter: 200,
            seed: 0,
        }
    }
}

impl AnnealingSchedule {
    /// Schedule scaled to the instance: `beta_min = 0.01 / max d²` and
    /// `beta_max = 1e4 / s`, where `s` is the smallest positive squared
    /// distance between instance points, floored at `1e-4 · max d²`.
    pub fn for_network(net: &Network) -> Self {
        let max_sq = net.max_squared_distance();
        let max_sq = if max_sq > 0.0 { max_sq } else { 1.0 };
        let scale = net.min_positive_squared_distance().unwrap_or(max_sq).max(1e-4 * max_sq);
        AnnealingSchedule {
            beta_min: 0.01 / max_sq,
            beta_max: 1e4 / scale,
            ..AnnealingSchedule::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.beta_min > 0.0
            && self.beta_min.is_finite()
            && self.beta_max.is_finite()
            && self.beta_min < self.beta_max
            && self.growth > 1.0
            && self.growth.is_finite()
            && self.perturbation >= 0.0
            && self.inner_tol > 0.0
            && self.inner_max_iter > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid annealing schedule {self:?}")))
        }
    }

    /// `beta_min, κ·beta_min, …` up to and including the first value at or
    /// above `beta_max`.
    pub fn betas(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut b = self.beta_min;
        loop {
            out.push(b);
            if b >= self.beta_max {
                break;
            }
            b *= self.growth;
        }
        out
    }
}

/// Settings for [`quasi_newton_minimize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiNewtonConfig {
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Step shrink factor of the backtracking search, in `(0, 1)`.
    pub shrink: f64,
    /// Armijo sufficient-decrease constant.
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for QuasiNewtonConfig {
    fn default() -> Self {
        QuasiNewtonConfig {
            grad_tol: 1e-8,
            max_iter: 200,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 60,
        }
    }
}

impl QuasiNewtonConfig {
    pub fn with_limits(grad_tol: f64, max_iter: usize) -> Self {
        QuasiNewtonConfig {
            grad_tol,
            max_iter,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.grad_tol > 0.0
            && self.max_iter > 0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.sufficient_decrease > 0.0
            && self.sufficient_decrease < 1.0
        {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid quasi-Newton config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    GradientTolerance,
    /// Neither the BFGS direction nor steepest descent produced a
    /// representable decrease: the predicted decrease is at round-off level.
    RoundOff,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::GradientTolerance | Termination::RoundOff)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS on the inverse Hessian with Armijo backtracking.
///
/// `objective` returns the value and gradient at a point. The inverse
/// Hessian is reset to the identity whenever the curvature condition
/// `sᵀy > 0` fails. A failed line search retries once along steepest
/// descent before giving up.
pub fn quasi_newton_minimize<F>(mut objective: F, x0: &[f64], cfg: &QuasiNewtonConfig) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    cfg.validate()?;
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = objective(&x);
    let mut evaluations = 1;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimization(format!(
            "non-finite objective at the start point (f = {f})"
        )));
    }
    if g.len() != n {
        return Err(Error::InvalidInput("gradient length differs from x0".into()));
    }

    // Row-major inverse Hessian approximation.
    let mut h = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    while iterations < cfg.max_iter {
        if inf_norm(&g) <= cfg.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut direction = mat_vec(&h, &g);
        direction.iter_mut().for_each(|d| *d = -*d);
        if dot(&direction, &g) >= 0.0 {
            h = identity(n);
            fresh = true;
            direction = g.iter().map(|v| -v).collect();
        }

        let mut step = line_search(&mut objective, &x, f, &g, &direction, cfg, &mut evaluations)?;
        if step.is_none() && !fresh {
            // Steepest-descent fallback.
            h = identity(n);
            fresh = true;
            direction = g.iter().map(|v| -v).collect();
            step = line_search(&mut objective, &x, f, &g, &direction, cfg, &mut evaluations)?;
        }
        let Some((x_new, f_new, g_new)) = step else {
            let predicted = dot(&g, &direction).abs();
            termination = if predicted <= 64.0 * f64::EPSILON * f.abs().max(1e-300) {
                Termination::RoundOff
            } else {
                Termination::LineSearchFailed
            };
            break;
        };
        iterations += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if fresh {
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= scale);
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        } else {
            h = identity(n);
            fresh = true;
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    if termination == Termination::MaxIterations && inf_norm(&g) <= cfg.grad_tol {
        termination = Termination::GradientTolerance;
    }

    Ok(Minimum {
        x,
        value: f,
        gradient: g,
        iterations,
        evaluations,
        termination,
    })
}

#[allow(clippy::type_complexity)]
fn line_search<F>(
    objective: &mut F,
    x: &[f64],
    f: f64,
    g: &[f64],
    direction: &[f64],
    cfg: &QuasiNewtonConfig,
    evaluations: &mut usize,
) -> Result<Option<(Vec<f64>, f64, Vec<f64>)>>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let slope = dot(g, direction);
    let mut alpha = 1.0;
    let mut trial = vec![0.0; x.len()];
    for _ in 0..cfg.max_backtracks {
        for i in 0..x.len() {
            trial[i] = x[i] + alpha * direction[i];
        }
        let (ft, gt) = objective(&trial);
        *evaluations += 1;
        if !ft.is_finite() || gt.iter().any(|v| !v.is_finite()) {
            return Err(Error::Optimization(format!(
                "non-finite objective during line search at step {alpha:e}"
            )));
        }
        if ft <= f + cfg.sufficient_decrease * alpha * slope && ft <= f {
            return Ok(Some((trial, ft, gt)));
        }
        alpha *= cfg.shrink;
    }
    Ok(None)
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ` with `ρ = 1 / sᵀy`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Parameters with a per-entry frozen flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub values: Vec<f64>,
    pub frozen: Vec<bool>,
}

impl Parameters {
    pub fn free(values: Vec<f64>) -> Self {
        let frozen = vec![false; values.len()];
        Parameters { values, frozen }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentStep {
    pub params: Parameters,
    /// Frozen entries that were handed a non-zero gradient and left alone.
    pub ignored: Vec<usize>,
}

/// `ξ⁺ = ξ⁻ − ε·g` on every free entry.
pub fn gradient_descent_step(params: &Parameters, gradients: &[f64], step: f64) -> Result<DescentStep> {
    if params.values.len() != gradients.len() || params.frozen.len() != params.values.len() {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: {} parameters, {} flags, {} gradients",
            params.values.len(),
            params.frozen.len(),
            gradients.len()
        )));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!("step size must be positive, got {step}")));
    }
    let mut next = params.clone();
    let mut ignored = Vec::new();
    for (i, (&g, &frozen)) in gradients.iter().zip(&params.frozen).enumerate() {
        if frozen {
            if g != 0.0 {
                ignored.push(i);
            }
        } else {
            next.values[i] -= step * g;
        }
    }
    if !ignored.is_empty() {
        warn!(
            count = ignored.len(),
            "gradient reported for frozen parameters; ignored"
        );
    }
    Ok(DescentStep { params: next, ignored })
}

/// Result of one inner solve at a fixed β.
#[derive(Debug, Clone)]
pub struct InnerSolve {
    pub params: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub beta: f64,
    pub value: f64,
    pub params: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the inner solve returned an error; the previous parameters
    /// are carried forward.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AnnealTrace {
    pub entries: Vec<TraceEntry>,
}

impl AnnealTrace {
    pub fn final_params(&self) -> Option<&[f64]> {
        self.entries.last().map(|e| e.params.as_slice())
    }

    pub fn all_converged(&self) -> bool {
        self.entries.iter().all(|e| e.converged && e.failure.is_none())
    }
}

/// Runs `per_beta_solve` along the schedule, warm-starting each β from the
/// previous solution after jittering it with the schedule's perturbation.
pub fn anneal_driver<F>(schedule: &AnnealingSchedule, init_params: &[f64], mut per_beta_solve: F) -> Result<AnnealTrace>
where
    F: FnMut(Beta, &[f64]) -> Result<InnerSolve>,
{
    schedule.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let noise = if schedule.perturbation > 0.0 {
        Some(Normal::new(0.0, schedule.perturbation).map_err(|e| Error::InvalidInput(e.to_string()))?)
    } else {
        None
    };
    let mut params = init_params.to_vec();
    let mut last_value = f64::NAN;
    let mut trace = AnnealTrace::default();
    for b in schedule.betas() {
        let beta = Beta::new(b)?;
        let mut start = params.clone();
        if let Some(noise) = &noise {
            for v in start.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        match per_beta_solve(beta, &start) {
            Ok(inner) => {
                params = inner.params;
                last_value = inner.value;
                trace.entries.push(TraceEntry {
                    beta: b,
                    value: inner.value,
                    params: params.clone(),
                    converged: inner.converged,
                    iterations: inner.iterations,
                    failure: None,
                });
            }
            Err(e) => {
                warn!(beta = b, error = %e, "inner solve failed");
                trace.entries.push(TraceEntry {
                    beta: b,
                    value: last_value,
                    params: params.clone(),
                    converged: false,
                    iterations: 0,
                    failure: Some(e.to_string()),
                });
            }
        }
    }
    Ok(trace)
}
