//! Fixed-step integration of the Smith EDM with transition delays.
//!
//! The state is the in-game population `x` and the transit matrix `y`, where
//! `y[j][i]` is the mass that left strategy `j` and has not yet arrived at
//! `i`. Mass leaves `j` at the current rate and rejoins the game at `i`
//! exactly `d_ji` later, so the arrival rate is the departure rate evaluated
//! on the stored history.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{Game, PopulationState, TOL};
use crate::revision::{edm_field, storage, ProtocolParams};

/// Transition times `d_ji` from strategy `j` to strategy `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DelayMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DelayMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidDelays("empty matrix".into()));
        }
        let mut d = Vec::with_capacity(n * n);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidDelays(format!(
                    "row {} has {} entries, expected {n}",
                    j + 1,
                    row.len()
                )));
            }
            for (i, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidDelays(format!(
                        "d[{}][{}] = {v} must be finite and non-negative",
                        j + 1,
                        i + 1
                    )));
                }
                if i == j && v != 0.0 {
                    return Err(Error::InvalidDelays(format!(
                        "diagonal entry d[{}][{}] = {v} must be zero",
                        j + 1,
                        i + 1
                    )));
                }
                d.push(v);
            }
        }
        Ok(Self { n, d })
    }

    /// `d_ji = |i - j|`.
    pub fn abs_diff(n: usize) -> Self {
        let d = (0..n)
            .flat_map(|j| (0..n).map(move |i| (i as f64 - j as f64).abs()))
            .collect();
        Self { n, d }
    }

    pub fn zeros(n: usize) -> Self {
        Self { n, d: vec![0.0; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Delay from `j` to `i`.
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.d[j * self.n + i]
    }

    pub fn d_max(&self) -> f64 {
        self.d.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_positive(&self) -> Option<f64> {
        self.d
            .iter()
            .copied()
            .filter(|v| *v > 0.0)
            .min_by(|a, b| a.total_cmp(b))
    }

    /// `d_i = sum_j d_ji` for each destination `i`.
    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(j, i)).sum())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.d.iter().all(|v| *v == 0.0)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.d.chunks(self.n).map(|r| r.to_vec()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for DelayMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<DelayMatrix> for Vec<Vec<f64>> {
    fn from(d: DelayMatrix) -> Self {
        d.rows()
    }
}

/// Mass in transit, `y[j][i]` from `j` to `i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitMatrix {
    n: usize,
    y: Vec<f64>,
}

impl TransitMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, y: vec![0.0; n * n] }
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.y[j * self.n + i]
    }

    pub fn entries(&self) -> &[f64] {
        &self.y
    }

    /// `y_i = sum_j y_ji`, the mass on its way to each strategy.
    pub fn arrivals(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(j, i)).sum())
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.y.iter().sum()
    }
}

/// Integration scheme for the delayed system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Euler,
    /// Two-stage predictor-corrector with linear history interpolation.
    Heun,
}

/// `min(1e-2, smallest positive delay / 50)`.
pub fn default_step(delays: &DelayMatrix) -> f64 {
    match delays.min_positive() {
        Some(d) => (d / 50.0).min(1e-2),
        None => 1e-2,
    }
}

/// Number of steps between recorded samples, about every 0.05 time units.
pub fn default_stride(h: f64) -> usize {
    ((0.05 / h).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistorySample {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    /// Rate active at `t`; right-continuous at switch instants.
    pub lambda: f64,
}

impl HistorySample {
    fn departure_rate(&self, j: usize, i: usize, rho: f64) -> f64 {
        self.lambda * self.x[j] * rho * (self.p[i] - self.p[j]).max(0.0)
    }
}

/// Equally spaced past samples needed by the delayed arrival terms.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    h: f64,
    first_step: u64,
    samples: VecDeque<HistorySample>,
    capacity: usize,
}

impl HistoryBuffer {
    pub fn new(h: f64, d_max: f64, stages: usize) -> Self {
        let capacity = (d_max / h).ceil() as usize + stages + 2;
        Self {
            h,
            first_step: 0,
            samples: VecDeque::with_capacity(capacity + 1),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: HistorySample) {
        self.samples.push_back(sample);
        while self.samples.len() > self.capacity {
            self.samples.pop_front();
            self.first_step += 1;
        }
    }

    pub fn last(&self) -> Option<&HistorySample> {
        self.samples.back()
    }

    fn last_mut(&mut self) -> Option<&mut HistorySample> {
        self.samples.back_mut()
    }

    fn last_step(&self) -> u64 {
        self.first_step + self.samples.len() as u64 - 1
    }

    fn at_step<'a>(&'a self, k: u64, head: Option<&'a HistorySample>) -> Result<&'a HistorySample> {
        if k < self.first_step {
            return Err(Error::Contract(format!(
                "history underrun: step {k} evicted (oldest kept {})",
                self.first_step
            )));
        }
        let last = self.last_step();
        if k <= last {
            return Ok(&self.samples[(k - self.first_step) as usize]);
        }
        match head {
            Some(s) if k == last + 1 => Ok(s),
            _ => Err(Error::Contract(format!(
                "history lookup at step {k} beyond newest sample {last}"
            ))),
        }
    }

    /// Departure rate `λ x_j rho [p_i - p_j]_+` at time `s`, zero before the
    /// start of the run. Off-grid times interpolate the rate linearly between
    /// the bracketing samples, which carries the piecewise-constant outflow
    /// of an Euler step through the delay line without loss or overshoot.
    /// `head` is a provisional sample one step past the newest stored one.
    pub fn departure_rate_at(
        &self,
        s: f64,
        j: usize,
        i: usize,
        rho: f64,
        head: Option<&HistorySample>,
    ) -> Result<f64> {
        self.lookup(s, j, i, rho, head, false)
    }

    /// Like [`departure_rate_at`](Self::departure_rate_at) but takes the
    /// limit from the left at grid times, so a rate switch or the start of
    /// the run at exactly `s` is not yet in effect.
    pub fn departure_rate_before(
        &self,
        s: f64,
        j: usize,
        i: usize,
        rho: f64,
        head: Option<&HistorySample>,
    ) -> Result<f64> {
        self.lookup(s, j, i, rho, head, true)
    }

    fn lookup(
        &self,
        s: f64,
        j: usize,
        i: usize,
        rho: f64,
        head: Option<&HistorySample>,
        left: bool,
    ) -> Result<f64> {
        let u = s / self.h;
        let nearest = u.round();
        let on_grid = (u - nearest).abs() <= 1e-9 * nearest.abs().max(1.0);
        if (on_grid && nearest < 0.0) || u <= -1.0 {
            return Ok(0.0);
        }
        if on_grid {
            let k = nearest.max(0.0) as u64;
            let sample = self.at_step(k, head)?;
            if !left {
                return Ok(sample.departure_rate(j, i, rho));
            }
            if k == 0 {
                return Ok(0.0);
            }
            let lambda = self.at_step(k - 1, head)?.lambda;
            return Ok(lambda * sample.x[j] * rho * (sample.p[i] - sample.p[j]).max(0.0));
        }
        let k0 = u.floor();
        let w = u - k0;
        let before = if k0 < 0.0 {
            0.0
        } else {
            self.at_step(k0 as u64, head)?.departure_rate(j, i, rho)
        };
        let after = self.at_step((k0 + 1.0) as u64, head)?.departure_rate(j, i, rho);
        Ok((1.0 - w) * before + w * after)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: TransitMatrix,
    pub lambda: f64,
    pub s_bar: f64,
    pub ne_dist: f64,
    pub transit_mass: f64,
}

/// Read-only view handed to observers before each step.
#[derive(Debug)]
pub struct StepView<'a> {
    pub step: u64,
    pub t: f64,
    pub x: &'a [f64],
    pub p: &'a [f64],
    pub y: &'a TransitMatrix,
    pub lambda: f64,
}

/// Hook invoked synchronously once per step. Returning a rate switches the
/// simulation to it from the current instant onward.
pub trait Observer {
    fn observe(&mut self, view: &StepView<'_>) -> Result<Option<f64>>;
}

#[derive(Debug, Clone)]
pub struct Simulator {
    game: Game,
    params: ProtocolParams,
    delays: DelayMatrix,
    scheme: Scheme,
    h: f64,
    step: u64,
    x: Vec<f64>,
    p: Vec<f64>,
    y: TransitMatrix,
    lambda: f64,
    history: HistoryBuffer,
    clipped: f64,
}

impl Simulator {
    /// Starts from `x0` on the simplex with nobody in transit.
    pub fn init(
        game: &Game,
        params: ProtocolParams,
        delays: &DelayMatrix,
        x0: &PopulationState,
        lambda0: f64,
        h: f64,
    ) -> Result<Self> {
        let n = game.n();
        for got in [x0.len(), delays.n(), params.n] {
            if got != n {
                return Err(Error::DimensionMismatch { expected: n, got });
            }
        }
        let x0 = PopulationState::on_simplex(x0.shares().to_vec())?;
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {h}")));
        }
        if !(lambda0.is_finite() && lambda0 > 0.0) {
            return Err(Error::NonPositiveRate(lambda0));
        }
        let x = x0.into_inner();
        let p = game.payoff(&x);
        let mut history = HistoryBuffer::new(h, delays.d_max(), 2);
        history.push(HistorySample {
            t: 0.0,
            x: x.clone(),
            p: p.clone(),
            lambda: lambda0,
        });
        Ok(Self {
            game: game.clone(),
            params,
            delays: delays.clone(),
            scheme: Scheme::Euler,
            h,
            step: 0,
            x,
            p,
            y: TransitMatrix::zeros(n),
            lambda: lambda0,
            history,
            clipped: 0.0,
        })
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.h
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &TransitMatrix {
        &self.y
    }

    pub fn payoffs(&self) -> &[f64] {
        &self.p
    }

    pub fn rate(&self) -> f64 {
        self.lambda
    }

    pub fn game(&self) -> &Game {
        &self.game
    }

    /// Total mass removed by clipping negative entries to zero.
    pub fn clipped_mass(&self) -> f64 {
        self.clipped
    }

    pub fn history(&self) -> &HistoryBuffer {
        &self.history
    }

    /// Switches the revision rate at the current instant.
    pub fn set_rate(&mut self, lambda: f64) -> Result<()> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::NonPositiveRate(lambda));
        }
        self.lambda = lambda;
        if let Some(last) = self.history.last_mut() {
            last.lambda = lambda;
        }
        Ok(())
    }

    /// `(dx/dt, dy/dt)` at the current state.
    pub fn derivatives(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.field(self.time(), &self.x, &self.p, self.lambda, None)
    }

    fn field(
        &self,
        t: f64,
        x: &[f64],
        p: &[f64],
        lambda: f64,
        head: Option<&HistorySample>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = x.len();
        let rho = self.params.rho;
        let mut dx = vec![0.0; n];
        let mut dy = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                if i == j {
                    continue;
                }
                let departure = lambda * x[j] * rho * (p[i] - p[j]).max(0.0);
                let d = self.delays.get(j, i);
                let arrival = if d == 0.0 {
                    departure
                } else if head.is_some() {
                    // End-of-step stage: match the left-limit rate used on
                    // the departure side of the same interval.
                    self.history.departure_rate_before(t - d, j, i, rho, head)?
                } else {
                    self.history.departure_rate_at(t - d, j, i, rho, head)?
                };
                dy[j * n + i] = departure - arrival;
                dx[j] -= departure;
                dx[i] += arrival;
            }
        }
        Ok((dx, dy))
    }

    /// Advances by one step of size `h`.
    pub fn step(&mut self) -> Result<()> {
        let t = self.time();
        let h = self.h;
        let (dx, dy) = self.field(t, &self.x, &self.p, self.lambda, None)?;
        let (mut x_new, mut y_new) = match self.scheme {
            Scheme::Euler => (
                axpy(&self.x, h, &dx),
                axpy(&self.y.y, h, &dy),
            ),
            Scheme::Heun => {
                let x_pred = axpy(&self.x, h, &dx);
                let p_pred = self.game.payoff(&x_pred);
                let head = HistorySample {
                    t: t + h,
                    x: x_pred.clone(),
                    p: p_pred.clone(),
                    lambda: self.lambda,
                };
                let (dx2, dy2) = self.field(t + h, &x_pred, &p_pred, self.lambda, Some(&head))?;
                let avg_x: Vec<f64> = dx.iter().zip(&dx2).map(|(a, b)| 0.5 * (a + b)).collect();
                let avg_y: Vec<f64> = dy.iter().zip(&dy2).map(|(a, b)| 0.5 * (a + b)).collect();
                (axpy(&self.x, h, &avg_x), axpy(&self.y.y, h, &avg_y))
            }
        };
        if x_new.iter().chain(&y_new).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: t + h, last_good: t });
        }
        self.clipped += clip_negative(&mut x_new) + clip_negative(&mut y_new);
        self.step += 1;
        self.x = x_new;
        self.y.y = y_new;
        self.p = self.game.payoff(&self.x);
        self.history.push(HistorySample {
            t: self.time(),
            x: self.x.clone(),
            p: self.p.clone(),
            lambda: self.lambda,
        });
        Ok(())
    }

    pub fn sample(&self) -> TrajectorySample {
        TrajectorySample {
            t: self.time(),
            x: self.x.clone(),
            y: self.y.clone(),
            lambda: self.lambda,
            s_bar: storage(&self.x, &self.p, &self.params),
            ne_dist: self.game.ne_metric(&self.x),
            transit_mass: self.y.total(),
        }
    }

    /// Steps until `t >= horizon`, calling the observers before every step
    /// and recording a sample every `stride` steps, at every rate switch and
    /// at the final time.
    pub fn run(
        &mut self,
        horizon: f64,
        stride: usize,
        observers: &mut [&mut dyn Observer],
    ) -> Result<Vec<TrajectorySample>> {
        let stride = stride.max(1) as u64;
        let remaining = ((horizon - self.time()) / self.h - 1e-9).ceil().max(0.0) as u64;
        let start = self.step;
        let mut trace = Vec::with_capacity((remaining / stride + 2) as usize);
        for k in 0..=remaining {
            let mut switched = false;
            for obs in observers.iter_mut() {
                let view = StepView {
                    step: self.step,
                    t: self.time(),
                    x: &self.x,
                    p: &self.p,
                    y: &self.y,
                    lambda: self.lambda,
                };
                if let Some(rate) = obs.observe(&view)? {
                    self.set_rate(rate)?;
                    switched = true;
                }
            }
            if (self.step - start) % stride == 0 || switched || k == remaining {
                trace.push(self.sample());
            }
            if k < remaining {
                self.step()?;
            }
        }
        Ok(trace)
    }
}

fn axpy(base: &[f64], h: f64, d: &[f64]) -> Vec<f64> {
    base.iter().zip(d).map(|(b, v)| b + h * v).collect()
}

fn clip_negative(v: &mut [f64]) -> f64 {
    let mut removed = 0.0;
    for e in v.iter_mut() {
        if *e < 0.0 {
            removed -= *e;
            *e = 0.0;
        }
    }
    removed
}

/// Explicit Euler integration of the undelayed Smith EDM.
pub fn run_baseline_edm(
    game: &Game,
    params: &ProtocolParams,
    x0: &PopulationState,
    lambda: f64,
    h: f64,
    horizon: f64,
    stride: usize,
) -> Result<Vec<TrajectorySample>> {
    let n = game.n();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
    }
    let mut x = PopulationState::on_simplex(x0.shares().to_vec())?.into_inner();
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {h}")));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::NonPositiveRate(lambda));
    }
    let steps = (horizon / h - 1e-9).ceil().max(0.0) as u64;
    let stride = stride.max(1) as u64;
    let zero_y = TransitMatrix::zeros(n);
    let record = |k: u64, x: &[f64], p: &[f64]| TrajectorySample {
        t: k as f64 * h,
        x: x.to_vec(),
        y: zero_y.clone(),
        lambda,
        s_bar: storage(x, p, params),
        ne_dist: game.ne_metric(x),
        transit_mass: 0.0,
    };
    let mut trace = Vec::with_capacity((steps / stride + 2) as usize);
    let mut p = game.payoff(&x);
    for k in 0..=steps {
        if k % stride == 0 || k == steps {
            trace.push(record(k, &x, &p));
        }
        if k == steps {
            break;
        }
        let v = edm_field(&x, &p, params);
        let next: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| xi + h * lambda * vi).collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: (k + 1) as f64 * h,
                last_good: k as f64 * h,
            });
        }
        x = next;
        clip_negative(&mut x);
        p = game.payoff(&x);
    }
    debug_assert!(trace
        .iter()
        .all(|s| (s.x.iter().sum::<f64>() - 1.0).abs() <= TOL));
    Ok(trace)
}
