//! Post-run diagnostics: oscillation metrics, certificate checks and run
//! comparison.

use serde::{Deserialize, Serialize};

use crate::dynamics::TrajectorySample;
use crate::error::{Error, Result};
use crate::games::Game;
use crate::revision::{edm_field, CertifiedConstants, ProtocolParams};
use crate::tuner::RateUpdate;

/// Slack absorbing discretization error in the certificate checks.
pub const CERTIFICATE_TOL: f64 = 1e-6;

/// Slack for the δ-passivity integral inequality.
pub const PASSIVITY_TOL: f64 = 1e-4;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "default_threshold")]
    pub ne_dist: f64,
    #[serde(default = "default_threshold")]
    pub transit: f64,
}

fn default_threshold() -> f64 {
    1e-2
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            ne_dist: default_threshold(),
            transit: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscillationMetrics {
    pub amplitude: f64,
    pub mean_transit: f64,
}

/// Sup of the NE distance and mean transit mass over the final
/// `tail_fraction` of the run's time span.
pub fn oscillation_metrics(trace: &[TrajectorySample], tail_fraction: f64) -> Result<OscillationMetrics> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tail fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    let (first, last) = match (trace.first(), trace.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(Error::EmptyTrace),
    };
    let start = last - tail_fraction * (last - first);
    let window: Vec<&TrajectorySample> = trace.iter().filter(|s| s.t + TIME_EPS >= start).collect();
    let amplitude = window.iter().map(|s| s.ne_dist).fold(0.0, f64::max);
    let mean_transit = window.iter().map(|s| s.transit_mass).sum::<f64>() / window.len() as f64;
    Ok(OscillationMetrics { amplitude, mean_transit })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CertificateViolations {
    /// `|dx/dt| <= N λ` failures.
    pub state_rate: usize,
    /// `|dy/dt| <= M λ^2` failures.
    pub transit_rate: usize,
    /// Storage above the envelope between updates.
    pub envelope: usize,
    /// δ-passivity integral inequality failures.
    pub passivity: usize,
    pub checked_derivatives: usize,
    pub checked_envelope: usize,
    pub max_passivity_residual: Option<f64>,
}

impl CertificateViolations {
    pub fn total(&self) -> usize {
        self.state_rate + self.transit_rate + self.envelope + self.passivity
    }
}

/// Counts violations of the certified inequalities along a recorded run.
///
/// Derivatives are forward differences between consecutive samples, so any
/// recording stride is valid. An interval is checked only if it starts at or
/// after `d_max` and the rate has been constant over `[t_a - d_max, t_b]`
/// for the `x` bound and over `[t_a - 2 d_max, t_b]` for the `y` bound.
/// The envelope `S̄ < ε̄(λ_k)` is checked on `[t_{k+1}, t_{k+2})` for every
/// logged update. The passivity inequality only holds for the undelayed
/// dynamics and is checked when `check_passivity` is set.
pub fn verify_certificates(
    trace: &[TrajectorySample],
    update_log: &[RateUpdate],
    consts: &CertifiedConstants,
    game: &Game,
    params: &ProtocolParams,
    check_passivity: bool,
) -> Result<CertificateViolations> {
    let (t0, t_end) = match (trace.first(), trace.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(Error::EmptyTrace),
    };
    for w in update_log.windows(2) {
        if w[1].t < w[0].t {
            return Err(Error::TraceMismatch("update times are not sorted".into()));
        }
    }
    if let Some(u) = update_log
        .iter()
        .find(|u| u.t < t0 - TIME_EPS || u.t > t_end + TIME_EPS)
    {
        return Err(Error::TraceMismatch(format!(
            "update at t = {} outside the trace span [{t0}, {t_end}]",
            u.t
        )));
    }

    let mut out = CertificateViolations::default();
    let d_max = consts.d_max;
    let switch_in = |lo: f64, hi: f64| {
        update_log
            .iter()
            .any(|u| u.t > lo + TIME_EPS && u.t <= hi + TIME_EPS)
    };
    for pair in trace.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let dt = b.t - a.t;
        if dt <= 0.0 || a.t + TIME_EPS < d_max || switch_in(a.t - d_max, b.t) {
            continue;
        }
        out.checked_derivatives += 1;
        let dx = diff_norm(&a.x, &b.x) / dt;
        if dx > consts.big_n * a.lambda + CERTIFICATE_TOL {
            out.state_rate += 1;
        }
        // The transit bound compares departures now and `d` ago, so it needs
        // the state bound over the whole delay span as well.
        if switch_in(a.t - 2.0 * d_max, b.t) {
            continue;
        }
        let dy = diff_norm(&a.y.arrivals(), &b.y.arrivals()) / dt;
        if dy > consts.m * a.lambda * a.lambda + CERTIFICATE_TOL {
            out.transit_rate += 1;
        }
    }

    for (idx, update) in update_log.iter().enumerate() {
        let lambda_k = update.previous;
        let start = update.t;
        let end = update_log.get(idx + 1).map_or(f64::INFINITY, |u| u.t);
        let bound = consts.epsilon_bar(lambda_k)?;
        for s in trace.iter().filter(|s| s.t + TIME_EPS >= start && s.t + TIME_EPS < end) {
            out.checked_envelope += 1;
            if !(s.s_bar < bound) {
                out.envelope += 1;
            }
        }
    }

    if check_passivity {
        let residuals = passivity_residuals(trace, game, params);
        out.passivity = residuals.iter().filter(|r| **r > PASSIVITY_TOL).count();
        out.max_passivity_residual = Some(residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(out)
}

/// `S(x(t), p(t)) - S(x(t0), p(t0)) - ∫ x'ᵀ p' dτ` at each sample, with the
/// integral taken by the trapezoid rule over the samples. Valid for runs of
/// the undelayed EDM, where `x' = λ V̄(x, p)` and `p' = DF x'`.
pub fn passivity_residuals(trace: &[TrajectorySample], game: &Game, params: &ProtocolParams) -> Vec<f64> {
    let supply = |s: &TrajectorySample| {
        let p = game.payoff(&s.x);
        let xdot: Vec<f64> = edm_field(&s.x, &p, params).iter().map(|v| s.lambda * v).collect();
        let pdot = game.payoff(&xdot);
        xdot.iter().zip(&pdot).map(|(a, b)| a * b).sum::<f64>()
    };
    let Some(first) = trace.first() else {
        return Vec::new();
    };
    let s0 = first.lambda * first.s_bar;
    let mut integral = 0.0;
    let mut prev = supply(first);
    let mut out = Vec::with_capacity(trace.len());
    out.push(0.0);
    for pair in trace.windows(2) {
        let cur = supply(&pair[1]);
        integral += 0.5 * (prev + cur) * (pair[1].t - pair[0].t);
        prev = cur;
        out.push(pair[1].lambda * pair[1].s_bar - s0 - integral);
    }
    out
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (v - u) * (v - u)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub final_time: f64,
    pub final_ne_dist: f64,
    pub final_transit_mass: f64,
    pub final_lambda: f64,
    pub osc_amplitude: f64,
    pub mean_transit_mass_tail: f64,
    pub bound_violations: CertificateViolations,
    pub update_count: usize,
    pub tuner_terminated: bool,
    pub clipped_mass: f64,
    pub converged: bool,
}

impl RunReport {
    pub fn new(
        label: impl Into<String>,
        trace: &[TrajectorySample],
        tail_fraction: f64,
        bound_violations: CertificateViolations,
        update_count: usize,
        tuner_terminated: bool,
        clipped_mass: f64,
        thresholds: &Thresholds,
    ) -> Result<Self> {
        let osc = oscillation_metrics(trace, tail_fraction)?;
        let last = trace.last().ok_or(Error::EmptyTrace)?;
        Ok(Self {
            label: label.into(),
            final_time: last.t,
            final_ne_dist: last.ne_dist,
            final_transit_mass: last.transit_mass,
            final_lambda: last.lambda,
            osc_amplitude: osc.amplitude,
            mean_transit_mass_tail: osc.mean_transit,
            bound_violations,
            update_count,
            tuner_terminated,
            clipped_mass,
            converged: last.ne_dist <= thresholds.ne_dist && last.transit_mass <= thresholds.transit,
        })
    }

    pub fn to_text_block(&self) -> String {
        let v = &self.bound_violations;
        format!(
            "label = {}\nfinal_time = {}\nfinal_ne_dist = {:.6e}\nfinal_transit_mass = {:.6e}\n\
             final_lambda = {:.6e}\nosc_amplitude = {:.6e}\nmean_transit_mass_tail = {:.6e}\n\
             update_count = {}\ntuner_terminated = {}\nclipped_mass = {:.3e}\n\
             violations_state_rate = {}\nviolations_transit_rate = {}\nviolations_envelope = {}\n\
             violations_passivity = {}\nconverged = {}\n",
            self.label,
            self.final_time,
            self.final_ne_dist,
            self.final_transit_mass,
            self.final_lambda,
            self.osc_amplitude,
            self.mean_transit_mass_tail,
            self.update_count,
            self.tuner_terminated,
            self.clipped_mass,
            v.state_rate,
            v.transit_rate,
            v.envelope,
            v.passivity,
            self.converged
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<RunReport>,
}

/// Reports ordered by final NE distance; ties keep their input order.
pub fn compare_runs(reports: &[RunReport]) -> ComparisonTable {
    let mut rows = reports.to_vec();
    rows.sort_by(|a, b| a.final_ne_dist.total_cmp(&b.final_ne_dist));
    ComparisonTable { rows }
}

impl ComparisonTable {
    pub const HEADER: &'static str = "rank,label,final_ne_dist,final_transit_mass,osc_amplitude,\
mean_transit_mass_tail,final_lambda,update_count,violations,converged";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for (rank, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{},{},{}\n",
                rank + 1,
                r.label,
                r.final_ne_dist,
                r.final_transit_mass,
                r.osc_amplitude,
                r.mean_transit_mass_tail,
                r.final_lambda,
                r.update_count,
                r.bound_violations.total(),
                r.converged
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:>4}  {:<24} {:>12} {:>12} {:>12} {:>12} {:>12} {:>7} {:>9}\n",
            "rank", "label", "ne_dist", "transit", "amplitude", "mean_tr", "lambda", "updates", "converged"
        );
        for (rank, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{:>4}  {:<24} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>7} {:>9}\n",
                rank + 1,
                r.label,
                r.final_ne_dist,
                r.final_transit_mass,
                r.osc_amplitude,
                r.mean_transit_mass_tail,
                r.final_lambda,
                r.update_count,
                r.converged
            ));
        }
        out
    }
}
