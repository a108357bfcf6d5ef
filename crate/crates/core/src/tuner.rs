//! Online revision-rate tuning.
//!
//! After each update the rate is held for at least `2 d_max`. From then on
//! the gating conditions are checked at every step; the first step where
//! both hold sets `λ = -(grad_x S · V) / (2 f)`, which is below
//! `λ_k / (2 (1 - δ))` and therefore strictly smaller than `λ_k`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Observer, StepView};
use crate::error::{Error, Result};
use crate::revision::{coupling_f, dissipation, CertifiedConstants, ProtocolParams};

/// Condition 1 requires `f > F_TOL`.
pub const F_TOL: f64 = 1e-12;

/// Smallest rate the tuner will set.
pub const LAMBDA_FLOOR: f64 = 1e-8;

/// Positive dissipation below this is treated as rounding noise.
const DOT_NOISE: f64 = 1e-12;

/// Dwell without updates, in units of `d_max`, after which the tuner is
/// reported as terminated.
pub const TERMINATION_DWELL: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    pub delta: f64,
    pub lambda0: f64,
    pub enabled: bool,
}

impl TunerConfig {
    pub fn new(delta: f64, lambda0: f64, enabled: bool) -> Result<Self> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::InvalidDelta(delta));
        }
        if !(lambda0.is_finite() && lambda0 > 0.0) {
            return Err(Error::NonPositiveRate(lambda0));
        }
        Ok(Self { delta, lambda0, enabled })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateUpdate {
    pub k: usize,
    pub t: f64,
    pub lambda: f64,
    /// Rate in force before this update.
    pub previous: f64,
    pub dot_val: f64,
    pub f_val: f64,
    pub floored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TunerState {
    pub k: usize,
    pub lambda_k: f64,
    pub t_k: f64,
    pub update_log: Vec<RateUpdate>,
    pub terminated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    pub cond1: bool,
    pub cond2: bool,
    pub f_val: f64,
    pub dot_val: f64,
}

pub fn evaluate_conditions(
    x: &[f64],
    p: &[f64],
    lambda_k: f64,
    consts: &CertifiedConstants,
    params: &ProtocolParams,
) -> ConditionReport {
    let f_val = coupling_f(x, p, params, consts);
    let dot_val = dissipation(x, p, params);
    ConditionReport {
        cond1: f_val > F_TOL,
        cond2: condition_two(dot_val, f_val, lambda_k, consts.delta),
        f_val,
        dot_val,
    }
}

/// `dot + λ_k f / (1 - δ) >= 0`.
pub fn condition_two(dot_val: f64, f_val: f64, lambda_k: f64, delta: f64) -> bool {
    dot_val + lambda_k * f_val / (1.0 - delta) >= 0.0
}

/// `-dot / (2 f)`, the rate minimizing the bound on the storage derivative.
pub fn propose_rate(dot_val: f64, f_val: f64) -> Result<f64> {
    if !(f_val > 0.0) {
        return Err(Error::Contract(format!("rate proposal needs f > 0, got {f_val}")));
    }
    let rate = -dot_val / (2.0 * f_val);
    if rate < 0.0 {
        return Err(Error::NumericAnomaly(format!(
            "positive dissipation {dot_val:e} gives negative rate proposal"
        )));
    }
    Ok(rate)
}

#[derive(Debug, Clone)]
pub struct Tuner {
    config: TunerConfig,
    consts: CertifiedConstants,
    params: ProtocolParams,
    state: TunerState,
    lambda_floor: f64,
}

impl Tuner {
    pub fn new(config: TunerConfig, consts: CertifiedConstants, params: ProtocolParams) -> Self {
        Self {
            state: TunerState {
                k: 0,
                lambda_k: config.lambda0,
                t_k: 0.0,
                update_log: Vec::new(),
                terminated: false,
            },
            config,
            consts,
            params,
            lambda_floor: LAMBDA_FLOOR,
        }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.lambda_floor = floor;
        self
    }

    pub fn state(&self) -> &TunerState {
        &self.state
    }

    pub fn into_state(self) -> TunerState {
        self.state
    }

    pub fn config(&self) -> &TunerConfig {
        &self.config
    }

    /// Applies one step of the tuning rule at time `t`. Returns the new rate
    /// when an update fires.
    pub fn maybe_update(&mut self, t: f64, x: &[f64], p: &[f64]) -> Result<Option<f64>> {
        if !self.config.enabled {
            return Ok(None);
        }
        let d_max = self.consts.d_max;
        let since = t - self.state.t_k;
        if since + 1e-9 < 2.0 * d_max {
            return Ok(None);
        }
        let cond = evaluate_conditions(x, p, self.state.lambda_k, &self.consts, &self.params);
        if !(cond.cond1 && cond.cond2) {
            if d_max > 0.0 && since >= TERMINATION_DWELL * d_max {
                self.state.terminated = true;
            }
            return Ok(None);
        }
        let dot = if cond.dot_val > 0.0 && cond.dot_val <= DOT_NOISE {
            0.0
        } else {
            cond.dot_val
        };
        let proposal = propose_rate(dot, cond.f_val)?;
        let floored = proposal < self.lambda_floor;
        let lambda = proposal.max(self.lambda_floor);
        if lambda >= self.state.lambda_k {
            // Already at the floor.
            return Ok(None);
        }
        let previous = self.state.lambda_k;
        self.state.k += 1;
        self.state.lambda_k = lambda;
        self.state.t_k = t;
        self.state.terminated = false;
        self.state.update_log.push(RateUpdate {
            k: self.state.k,
            t,
            lambda,
            previous,
            dot_val: cond.dot_val,
            f_val: cond.f_val,
            floored,
        });
        Ok(Some(lambda))
    }
}

impl Observer for Tuner {
    fn observe(&mut self, view: &StepView<'_>) -> Result<Option<f64>> {
        self.maybe_update(view.t, view.x, view.p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DelayMatrix;
    use crate::games::Game;
    use crate::revision::compute_constants;
    use approx::assert_abs_diff_eq;

    fn setup() -> (CertifiedConstants, ProtocolParams) {
        let params = ProtocolParams::new(0.25, 3).unwrap();
        let c = compute_constants(&Game::rps(1.0, 2.0), &params, &DelayMatrix::abs_diff(3), 0.25)
            .unwrap();
        (c, params)
    }

    #[test]
    fn conditions_at_equilibrium() {
        let (c, params) = setup();
        let third = 1.0 / 3.0;
        let r = evaluate_conditions(&[third; 3], &[third; 3], 1.0, &c, &params);
        assert_eq!(r.f_val, 0.0);
        assert!(!r.cond1);
    }

    #[test]
    fn condition_two_boundary() {
        // x = e2 with p = (0, 2, -1): strategy 2 is best, so nothing flows
        // and the dissipation is zero while f is positive.
        let (c, params) = setup();
        let r = evaluate_conditions(&[0.0, 1.0, 0.0], &[0.0, 2.0, -1.0], 0.3, &c, &params);
        assert_eq!(r.dot_val, 0.0);
        assert!(r.f_val > 0.0);
        assert!(r.cond1 && r.cond2);

        // Exactly on the boundary: -1 + 1 * 0.75 / 0.75 = 0.
        assert!(condition_two(-1.0, 0.75, 1.0, 0.25));
        assert!(!condition_two(-1.0 - 1e-12, 0.75, 1.0, 0.25));
    }

    #[test]
    fn proposal_formula() {
        assert_eq!(propose_rate(-1.0, 1.0).unwrap(), 0.5);
        assert_eq!(propose_rate(0.0, 3.0).unwrap(), 0.0);
        let (lambda_k, f, delta) = (0.8, 2.5, 0.25);
        let dot = -lambda_k * f / (1.0 - delta);
        assert_abs_diff_eq!(propose_rate(dot, f).unwrap(), lambda_k * 2.0 / 3.0, epsilon = 1e-15);
        assert!(matches!(propose_rate(-1.0, 0.0), Err(Error::Contract(_))));
        assert!(matches!(propose_rate(0.5, 1.0), Err(Error::NumericAnomaly(_))));
    }

    #[test]
    fn spacing_constraint_blocks_updates() {
        let (c, params) = setup();
        let cfg = TunerConfig::new(0.25, 1.0, true).unwrap();
        let mut tuner = Tuner::new(cfg, c, params);
        let x = [0.6, 0.2, 0.2];
        let p = Game::rps(1.0, 2.0).payoff(&x);
        assert_eq!(tuner.maybe_update(4.0 - 0.01, &x, &p).unwrap(), None);
        let fired = tuner.maybe_update(4.0, &x, &p).unwrap().unwrap();
        assert!(fired < 1.0 / (2.0 * 0.75));
        assert_eq!(tuner.state().update_log.len(), 1);
        assert_eq!(tuner.maybe_update(7.99, &x, &p).unwrap(), None);
    }

    #[test]
    fn disabled_tuner_never_fires() {
        let (c, params) = setup();
        let cfg = TunerConfig::new(0.25, 1.0, false).unwrap();
        let mut tuner = Tuner::new(cfg, c, params);
        let x = [0.6, 0.2, 0.2];
        let p = Game::rps(1.0, 2.0).payoff(&x);
        for k in 0..100 {
            assert_eq!(tuner.maybe_update(k as f64, &x, &p).unwrap(), None);
        }
    }

    #[test]
    fn floor_applies_to_zero_proposals() {
        let (c, params) = setup();
        let cfg = TunerConfig::new(0.25, 1.0, true).unwrap();
        let mut tuner = Tuner::new(cfg, c, params);
        // Zero dissipation with f > 0 proposes a zero rate.
        let fired = tuner.maybe_update(4.0, &[0.0, 1.0, 0.0], &[0.0, 2.0, -1.0]).unwrap();
        assert_eq!(fired, Some(LAMBDA_FLOOR));
        assert!(tuner.state().update_log[0].floored);
        // Already at the floor: no further updates.
        assert_eq!(tuner.maybe_update(9.0, &[0.0, 1.0, 0.0], &[0.0, 2.0, -1.0]).unwrap(), None);
    }

    #[test]
    fn invalid_config() {
        assert!(TunerConfig::new(0.5, 1.0, true).is_err());
        assert!(TunerConfig::new(0.0, 1.0, true).is_err());
        assert!(TunerConfig::new(0.25, 0.0, true).is_err());
    }
}
