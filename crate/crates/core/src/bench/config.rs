use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::lifted::ParaSdmOptions;
use crate::model::Network;
use crate::optimizer::AnnealingSchedule;

/// Run settings read from a `key = value` file. Every key is optional; unset
/// keys fall back to the per-instance defaults.
///
/// ```text
/// beta_min = 0.01          # first inverse temperature
/// beta_max = 1e4           # last inverse temperature (inclusive)
/// growth = 1.2             # geometric factor between steps
/// perturbation = 1e-4      # jitter sd before each inner solve
/// inner_tol = 1e-8         # gradient infinity-norm tolerance
/// inner_max_iter = 200     # BFGS iterations per step (stage-wise)
/// param_max_iter = 100     # BFGS iterations per step (lifted)
/// seed = 0                 # jitter seed
/// gamma = 1.0              # lifted discount
/// tie_stages = true        # one location per facility across stages
/// fixed_point_tol = 1e-12  # lifted fixed-point residual tolerance
/// fixed_point_max_sweeps = 100
/// ```
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    pub growth: Option<f64>,
    pub perturbation: Option<f64>,
    pub inner_tol: Option<f64>,
    pub inner_max_iter: Option<usize>,
    pub param_max_iter: Option<usize>,
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub tie_stages: Option<bool>,
    pub fixed_point_tol: Option<f64>,
    pub fixed_point_max_sweeps: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(format!("config: {}", e.message())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Values set in `over` win.
    pub fn overridden_by(&self, over: &RunConfig) -> RunConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            beta_min,
            beta_max,
            growth,
            perturbation,
            inner_tol,
            inner_max_iter,
            param_max_iter,
            seed,
            gamma,
            tie_stages,
            fixed_point_tol,
            fixed_point_max_sweeps
        )
    }

    pub fn schedule_for(&self, net: &Network) -> Result<AnnealingSchedule> {
        let base = AnnealingSchedule::for_network(net);
        let s = AnnealingSchedule {
            beta_min: self.beta_min.unwrap_or(base.beta_min),
            beta_max: self.beta_max.unwrap_or(base.beta_max),
            growth: self.growth.unwrap_or(base.growth),
            perturbation: self.perturbation.unwrap_or(base.perturbation),
            inner_tol: self.inner_tol.unwrap_or(base.inner_tol),
            inner_max_iter: self.inner_max_iter.unwrap_or(base.inner_max_iter),
            seed: self.seed.unwrap_or(base.seed),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn lifted_options(&self) -> Result<ParaSdmOptions> {
        let d = ParaSdmOptions::default();
        let o = ParaSdmOptions {
            gamma: self.gamma.unwrap_or(d.gamma),
            tie_stages: self.tie_stages.unwrap_or(d.tie_stages),
            fixed_point_tol: self.fixed_point_tol.unwrap_or(d.fixed_point_tol),
            fixed_point_max_sweeps: self.fixed_point_max_sweeps.unwrap_or(d.fixed_point_max_sweeps),
            param_max_iter: self.param_max_iter.unwrap_or(d.param_max_iter),
        };
        if !(o.gamma > 0.0 && o.gamma <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "gamma must lie in (0, 1], got {}",
                o.gamma
            )));
        }
        if !(o.fixed_point_tol > 0.0) || o.fixed_point_max_sweeps == 0 || o.param_max_iter == 0 {
            return Err(Error::InvalidInput(
                "fixed-point tolerance and iteration caps must be positive".into(),
            ));
        }
        Ok(o)
    }
}
