//! Experiment configuration and the end-to-end run driver.

use serde::{Deserialize, Serialize};

use crate::analysis::{verify_certificates, RunReport, Thresholds};
use crate::dynamics::{default_step, default_stride, DelayMatrix, Scheme, Simulator, TrajectorySample};
use crate::error::{Error, Result};
use crate::games::{Game, GameSpec, PopulationState};
use crate::revision::{auto_rho, compute_constants, CertifiedConstants, ProtocolParams};
use crate::tuner::{RateUpdate, Tuner, TunerConfig, TunerState};

/// Rate used when the "auto" setting finds no upper bound.
pub const UNBOUNDED_AUTO_RHO: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelayGenerator {
    /// `d_ji = |i - j|`.
    #[serde(rename = "abs-diff")]
    AbsDiff,
    #[serde(rename = "zero")]
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DelaySpec {
    Generator(DelayGenerator),
    Matrix(DelayMatrix),
}

impl Default for DelaySpec {
    fn default() -> Self {
        DelaySpec::Generator(DelayGenerator::AbsDiff)
    }
}

impl DelaySpec {
    pub fn materialize(&self, n: usize) -> Result<DelayMatrix> {
        match self {
            DelaySpec::Generator(DelayGenerator::AbsDiff) => Ok(DelayMatrix::abs_diff(n)),
            DelaySpec::Generator(DelayGenerator::Zero) => Ok(DelayMatrix::zeros(n)),
            DelaySpec::Matrix(m) if m.n() == n => Ok(m.clone()),
            DelaySpec::Matrix(m) => Err(Error::DimensionMismatch { expected: n, got: m.n() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoTag {
    #[serde(rename = "auto")]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSpec {
    Value(f64),
    Auto(AutoTag),
}

impl Default for RhoSpec {
    fn default() -> Self {
        RhoSpec::Auto(AutoTag::Auto)
    }
}

fn default_lambda0() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.25
}

fn default_tail_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub game: GameSpec,
    #[serde(default)]
    pub delays: DelaySpec,
    #[serde(default)]
    pub rho: RhoSpec,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub tuner: bool,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
}

/// A config with every default filled in, plus the objects built from it.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    /// Fully explicit config: numeric `rho`, a delay matrix, `h` and `stride`.
    pub config: ExperimentConfig,
    pub game: Game,
    pub params: ProtocolParams,
    pub delays: DelayMatrix,
    pub x0: PopulationState,
    pub h: f64,
    pub stride: usize,
    pub consts: CertifiedConstants,
}

impl ExperimentConfig {
    /// Parses JSON, reporting the line and column of syntax and schema errors.
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {}, column {}: {}", e.line(), e.column(), e))
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn label_or(&self, fallback: &str) -> String {
        self.label.clone().unwrap_or_else(|| fallback.to_string())
    }

    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let game = Game::from_spec(&self.game)?;
        let n = game.n();
        if self.x0.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.x0.len() });
        }
        let x0 = PopulationState::on_simplex(self.x0.clone())?;
        let delays = self.delays.materialize(n)?;
        let rho = match self.rho {
            RhoSpec::Value(r) => r,
            RhoSpec::Auto(_) => auto_rho(&game)?.unwrap_or(UNBOUNDED_AUTO_RHO),
        };
        let params = ProtocolParams::new(rho, n)?;
        TunerConfig::new(self.delta, self.lambda0, self.tuner)?;
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be finite and non-negative, got {}",
                self.horizon
            )));
        }
        let h = self.h.unwrap_or_else(|| default_step(&delays));
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {h}")));
        }
        let stride = match self.stride {
            Some(0) => return Err(Error::InvalidParameter("stride must be at least 1".into())),
            Some(s) => s,
            None => default_stride(h),
        };
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tail fraction must lie in (0, 1], got {}",
                self.tail_fraction
            )));
        }
        let consts = compute_constants(&game, &params, &delays, self.delta)?;
        let mut config = self.clone();
        config.rho = RhoSpec::Value(rho);
        config.delays = DelaySpec::Matrix(delays.clone());
        config.h = Some(h);
        config.stride = Some(stride);
        Ok(ResolvedExperiment {
            config,
            game,
            params,
            delays,
            x0,
            h,
            stride,
            consts,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: Vec<TrajectorySample>,
    pub tuner: TunerState,
    pub report: RunReport,
}

impl RunOutcome {
    pub fn updates(&self) -> &[RateUpdate] {
        &self.tuner.update_log
    }
}

/// Runs the simulation described by `exp` and checks the certificates on the
/// recorded trace.
pub fn run_experiment(exp: &ResolvedExperiment) -> Result<RunOutcome> {
    let cfg = &exp.config;
    let mut sim = Simulator::init(&exp.game, exp.params, &exp.delays, &exp.x0, cfg.lambda0, exp.h)?
        .with_scheme(cfg.scheme);
    let tuner_cfg = TunerConfig::new(cfg.delta, cfg.lambda0, cfg.tuner)?;
    let mut tuner = Tuner::new(tuner_cfg, exp.consts.clone(), exp.params);
    let trace = sim.run(cfg.horizon, exp.stride, &mut [&mut tuner])?;
    let state = tuner.into_state();
    let undelayed_fixed_rate = exp.delays.is_zero() && state.update_log.is_empty();
    let violations = verify_certificates(
        &trace,
        &state.update_log,
        &exp.consts,
        &exp.game,
        &exp.params,
        undelayed_fixed_rate,
    )?;
    let report = RunReport::new(
        cfg.label_or("run"),
        &trace,
        cfg.tail_fraction,
        violations,
        state.update_log.len(),
        state.terminated,
        sim.clipped_mass(),
        &cfg.thresholds,
    )?;
    Ok(RunOutcome {
        trace,
        tuner: state,
        report,
    })
}
