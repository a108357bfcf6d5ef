//! Smith revision protocol, the normalized EDM vector field, the δ-storage
//! function and the constants certifying the rate-tuning rule.
//!
//! Everything here is expressed with the revision rate factored out:
//! `edm_field` is `V / λ` and `storage` is `S / λ`.

use serde::{Deserialize, Serialize};

use crate::dynamics::DelayMatrix;
use crate::error::{Error, Result};
use crate::games::{for_each_grid_point, grid_point_count, Game};

/// Relative margin by which `K` exceeds its lower bound.
pub const K_MARGIN: f64 = 0.01;

/// Grid resolution used when `rho` is set to "auto".
pub const AUTO_RHO_RESOLUTION: usize = 200;

/// Factor applied to the grid maximum when `rho` is set to "auto".
pub const AUTO_RHO_SAFETY: f64 = 0.999;

/// Upper limit on grid points visited by [`max_valid_rho`].
const MAX_GRID_POINTS: f64 = 2e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub rho: f64,
    pub n: usize,
}

impl ProtocolParams {
    pub fn new(rho: f64, n: usize) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("strategy count must be positive".into()));
        }
        Ok(Self { rho, n })
    }
}

/// Result of calibrating `rho` against a game.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoBound {
    /// Largest `rho` for which switch probabilities stay valid on the grid.
    Finite(f64),
    /// All payoff gaps vanish; any `rho` is valid.
    Any,
}

impl RhoBound {
    pub fn admits(&self, rho: f64) -> bool {
        match self {
            RhoBound::Finite(max) => rho <= *max * (1.0 + 1e-12),
            RhoBound::Any => true,
        }
    }
}

#[inline]
fn pos(v: f64) -> f64 {
    v.max(0.0)
}

/// Probability `rho [p_j - p_i]_+` of switching from `i` to `j`.
pub fn switch_rate(p: &[f64], i: usize, j: usize, params: &ProtocolParams) -> Result<f64> {
    let n = p.len();
    for index in [i, j] {
        if index >= n {
            return Err(Error::IndexOutOfRange { index, n });
        }
    }
    Ok(params.rho * pos(p[j] - p[i]))
}

/// `1 / max_x max_i sum_j [p_j - p_i]_+` over a grid of the extended
/// simplex. The per-pair condition is implied by the row-sum condition but
/// is enforced as well.
pub fn max_valid_rho(game: &Game, grid_resolution: usize) -> Result<RhoBound> {
    if grid_resolution < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid resolution must be at least 2, got {grid_resolution}"
        )));
    }
    let n = game.n();
    let mut resolution = grid_resolution;
    while resolution > 2 && grid_point_count(n, resolution, true) > MAX_GRID_POINTS {
        resolution /= 2;
    }
    let mut worst: f64 = 0.0;
    for_each_grid_point(n, resolution, true, |x| {
        let p = game.payoff(x);
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let g = pos(p[j] - p[i]);
                row += g;
                worst = worst.max(g);
            }
            worst = worst.max(row);
        }
    });
    if worst <= f64::MIN_POSITIVE {
        Ok(RhoBound::Any)
    } else {
        Ok(RhoBound::Finite(1.0 / worst))
    }
}

/// `rho` used for the "auto" setting. `None` when any value is valid.
pub fn auto_rho(game: &Game) -> Result<Option<f64>> {
    Ok(match max_valid_rho(game, AUTO_RHO_RESOLUTION)? {
        RhoBound::Finite(r) => Some(r * AUTO_RHO_SAFETY),
        RhoBound::Any => None,
    })
}

/// Normalized Smith EDM field: inflow minus outflow for each strategy.
pub fn edm_field(x: &[f64], p: &[f64], params: &ProtocolParams) -> Vec<f64> {
    let n = x.len();
    let rho = params.rho;
    (0..n)
        .map(|i| {
            let mut inflow = 0.0;
            let mut out_rate = 0.0;
            for j in 0..n {
                inflow += x[j] * rho * pos(p[i] - p[j]);
                out_rate += rho * pos(p[j] - p[i]);
            }
            inflow - x[i] * out_rate
        })
        .collect()
}

/// Normalized δ-storage `(1/2) sum_i sum_j x_i rho [p_j - p_i]_+^2`.
pub fn storage(x: &[f64], p: &[f64], params: &ProtocolParams) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let g = pos(p[j] - p[i]);
            s += x[i] * params.rho * g * g;
        }
    }
    0.5 * s
}

/// Gradient of [`storage`] in `x`. It does not depend on `x`.
pub fn grad_x_storage(p: &[f64], params: &ProtocolParams) -> Vec<f64> {
    let n = p.len();
    (0..n)
        .map(|k| {
            0.5 * (0..n)
                .map(|j| {
                    let g = pos(p[j] - p[k]);
                    params.rho * g * g
                })
                .sum::<f64>()
        })
        .collect()
}

/// Gradient of [`storage`] in `p`, which coincides with the EDM field.
pub fn grad_p_storage(x: &[f64], p: &[f64], params: &ProtocolParams) -> Vec<f64> {
    edm_field(x, p, params)
}

/// `grad_x S · V`, non-positive for the Smith protocol.
pub fn dissipation(x: &[f64], p: &[f64], params: &ProtocolParams) -> f64 {
    let g = grad_x_storage(p, params);
    let v = edm_field(x, p, params);
    dot(&g, &v)
}

/// `f(x, p) = M (B_DF |V| + |grad_x S|)`.
pub fn coupling_f(x: &[f64], p: &[f64], params: &ProtocolParams, consts: &CertifiedConstants) -> f64 {
    let v = edm_field(x, p, params);
    let g = grad_x_storage(p, params);
    consts.m * (consts.b_df * norm(&v) + norm(&g))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedConstants {
    pub n: usize,
    pub rho: f64,
    /// Bound on `|dx/dt| / λ`.
    #[serde(rename = "N")]
    pub big_n: f64,
    /// Bound on `|dy/dt| / λ²`.
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "B_DF")]
    pub b_df: f64,
    pub d_max: f64,
    /// Column sums `d_i = sum_j d_ji`.
    pub d_col_sums: Vec<f64>,
    pub delta: f64,
}

pub fn compute_constants(
    game: &Game,
    params: &ProtocolParams,
    delays: &DelayMatrix,
    delta: f64,
) -> Result<CertifiedConstants> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidDelta(delta));
    }
    let n = game.n();
    if delays.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: delays.n(),
        });
    }
    let nf = n as f64;
    let rho = params.rho;
    let b_df = game.bound_df();
    let d_col_sums = delays.column_sums();
    let d_norm = d_col_sums.iter().map(|d| d * d).sum::<f64>().sqrt();
    let m = (1.0 + 2.0 * rho * b_df * nf.sqrt()) * nf * d_norm;
    let k = (1.0 + K_MARGIN) * m * (b_df + 1.0 / (2.0 * rho)) * nf.sqrt() / (1.0 - delta);
    let l = nf.sqrt() / (2.0 * rho) + b_df * nf.sqrt();
    Ok(CertifiedConstants {
        n,
        rho,
        big_n: nf.powf(1.5),
        m,
        k,
        l,
        b_df,
        d_max: delays.d_max(),
        d_col_sums,
        delta,
    })
}

impl CertifiedConstants {
    /// `sqrt(n^4 K λ / (2 rho))`: bound on the storage at an update instant.
    pub fn epsilon(&self, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0) {
            return Err(Error::NonPositiveRate(lambda));
        }
        let n4 = (self.n as f64).powi(4);
        Ok((n4 * self.k * lambda / (2.0 * self.rho)).sqrt())
    }

    /// `epsilon(λ) + 2 d_max L n^1.5 λ`: bound on the storage between updates.
    pub fn epsilon_bar(&self, lambda: f64) -> Result<f64> {
        Ok(self.epsilon(lambda)? + 2.0 * self.d_max * self.l * self.big_n * lambda)
    }

    /// Upper bound on `f(x, p)` over the extended simplex.
    pub fn coupling_bound(&self) -> f64 {
        self.m * (self.b_df + 1.0 / (2.0 * self.rho)) * (self.n as f64).sqrt()
    }

    /// Key-value text block for run headers.
    pub fn to_text_block(&self) -> String {
        format!(
            "N = {:.6}\nM = {:.6}\nK = {:.6}\nL = {:.6}\nB_DF = {:.9}\nrho = {:.9}\nd_max = {}\ndelta = {}\n",
            self.big_n, self.m, self.k, self.l, self.b_df, self.rho, self.d_max, self.delta
        )
    }
}
