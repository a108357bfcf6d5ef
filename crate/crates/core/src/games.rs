//! Population games with linear payoff maps.
//!
//! A game is a map `F` from the extended state space (non-negative shares
//! summing to at most one) to per-strategy payoffs. Only single-population
//! linear games `F(x) = A x` are supported; the Rock-Paper-Scissors family
//! is built in.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for simplex membership and zero tests on residuals.
pub const TOL: f64 = 1e-9;

/// Seed used by [`Game::verify_contractive`] so reports are reproducible.
pub const CONTRACTIVITY_SEED: u64 = 0x5eed_c0de;

/// Step at which the NE refinement search stops.
const NE_SEARCH_RESOLUTION: f64 = 1e-3;

/// Shares of the population currently playing each strategy.
///
/// Agents in transit are not counted, so the shares may sum to less than one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PopulationState(Vec<f64>);

impl PopulationState {
    /// Builds a state in the extended simplex.
    pub fn new(shares: Vec<f64>) -> Result<Self> {
        check_extended(&shares)?;
        Ok(Self(shares))
    }

    /// Builds a state on the simplex proper (shares sum to one).
    pub fn on_simplex(shares: Vec<f64>) -> Result<Self> {
        check_extended(&shares)?;
        let sum: f64 = shares.iter().sum();
        if (sum - 1.0).abs() > TOL {
            return Err(Error::NotOnSimplex(sum));
        }
        Ok(Self(shares))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn shares(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn check_extended(shares: &[f64]) -> Result<()> {
    if shares.is_empty() {
        return Err(Error::OutsideExtendedSimplex("no strategies".into()));
    }
    if let Some((i, v)) = shares
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(Error::OutsideExtendedSimplex(format!(
            "share {} is {v}",
            i + 1
        )));
    }
    let sum: f64 = shares.iter().sum();
    if sum > 1.0 + TOL {
        return Err(Error::OutsideExtendedSimplex(format!(
            "shares sum to {sum} > 1"
        )));
    }
    Ok(())
}

/// Game description as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum GameSpec {
    /// `F(x) = (-a x2 + b x3, b x1 - a x3, -a x1 + b x2)`.
    Rps { a: f64, b: f64 },
    /// `F(x) = A x` with an optional list of known Nash equilibria.
    Linear {
        matrix: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ne: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub tangent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractivityReport {
    pub contractive: bool,
    /// Exact value when available, otherwise the sampled maximum.
    pub worst_value: f64,
    pub sampled_worst: f64,
    pub exact_worst: Option<f64>,
    pub witness: Option<Witness>,
}

/// A linear population game `F(x) = A x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    matrix: DMatrix<f64>,
    bound_df: f64,
    ne_set: Vec<PopulationState>,
}

impl Game {
    pub fn rps(a: f64, b: f64) -> Self {
        #[rustfmt::skip]
        let matrix = DMatrix::from_row_slice(3, 3, &[
            0.0, -a, b,
            b, 0.0, -a,
            -a, b, 0.0,
        ]);
        Self {
            bound_df: spectral_norm(&matrix),
            matrix,
            ne_set: vec![PopulationState::uniform(3)],
        }
    }

    /// Linear game with an explicit NE list. An empty list leaves the NE set
    /// unknown and [`Game::nash_distance`] will fail.
    pub fn linear(matrix: DMatrix<f64>, ne_set: Vec<PopulationState>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::InvalidParameter(format!(
                "payoff matrix must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("payoff matrix has non-finite entries".into()));
        }
        let game = Self {
            bound_df: spectral_norm(&matrix),
            matrix,
            ne_set: Vec::new(),
        };
        for z in &ne_set {
            if z.len() != game.n() {
                return Err(Error::DimensionMismatch {
                    expected: game.n(),
                    got: z.len(),
                });
            }
            let r = game.ne_residual(z.shares());
            if r > TOL {
                return Err(Error::InvalidParameter(format!(
                    "listed equilibrium {:?} has NE residual {r:e}",
                    z.shares()
                )));
            }
        }
        Ok(Self { ne_set, ..game })
    }

    /// Linear game whose NE set is populated by [`search_equilibrium`].
    pub fn linear_with_search(matrix: DMatrix<f64>) -> Result<Self> {
        let mut game = Self::linear(matrix, Vec::new())?;
        let z = search_equilibrium(&game);
        game.ne_set = vec![z];
        Ok(game)
    }

    pub fn zero(n: usize) -> Result<Self> {
        Self::linear_with_search(DMatrix::zeros(n, n))
    }

    pub fn from_spec(spec: &GameSpec) -> Result<Self> {
        match spec {
            GameSpec::Rps { a, b } => {
                if !(a.is_finite() && b.is_finite()) {
                    return Err(Error::InvalidParameter("RPS parameters must be finite".into()));
                }
                Ok(Self::rps(*a, *b))
            }
            GameSpec::Linear { matrix, ne } => {
                let n = matrix.len();
                if let Some(row) = matrix.iter().find(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: row.len(),
                    });
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                let m = DMatrix::from_row_slice(n, n, &flat);
                match ne {
                    Some(points) => {
                        let set = points
                            .iter()
                            .map(|z| PopulationState::on_simplex(z.clone()))
                            .collect::<Result<Vec<_>>>()?;
                        Self::linear(m, set)
                    }
                    None => Self::linear_with_search(m),
                }
            }
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Cached `B_DF`, the spectral norm of the (constant) differential.
    pub fn bound_df(&self) -> f64 {
        self.bound_df
    }

    pub fn ne_set(&self) -> &[PopulationState] {
        &self.ne_set
    }

    /// Unchecked payoff evaluation for the integrator hot path.
    pub fn payoff(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n());
        let n = self.n();
        (0..n)
            .map(|i| (0..n).map(|j| self.matrix[(i, j)] * x[j]).sum())
            .collect()
    }

    pub fn evaluate_payoff(&self, x: &PopulationState) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        check_extended(x.shares())?;
        Ok(self.payoff(x.shares()))
    }

    pub fn evaluate_jacobian(&self, x: &PopulationState) -> Result<DMatrix<f64>> {
        self.check_dim(x.len())?;
        Ok(self.matrix.clone())
    }

    /// `B_DF` estimate. The differential of a linear game is constant, so the
    /// exact spectral norm is returned and the grid is not sampled.
    pub fn estimate_bound_df(&self, grid_resolution: usize) -> Result<f64> {
        if grid_resolution < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid resolution must be at least 2, got {grid_resolution}"
            )));
        }
        Ok(spectral_norm(&self.matrix))
    }

    pub fn verify_contractive(&self, sample_count: usize) -> ContractivityReport {
        self.verify_contractive_seeded(sample_count, CONTRACTIVITY_SEED)
    }

    /// Samples points of the simplex and unit tangent vectors and reports the
    /// largest value of `t' DF(z) t`. The exact tangent-space eigenvalue test
    /// is always added since the game is linear.
    pub fn verify_contractive_seeded(&self, sample_count: usize, seed: u64) -> ContractivityReport {
        let n = self.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sampled_worst = f64::NEG_INFINITY;
        let mut sampled_witness = None;
        if n >= 2 {
            for _ in 0..sample_count.max(1) {
                let z = sample_simplex(&mut rng, n);
                let Some(t) = sample_tangent(&mut rng, n) else {
                    continue;
                };
                let v = quadratic_form(&self.matrix, &t);
                if v > sampled_worst {
                    sampled_worst = v;
                    sampled_witness = Some(Witness { x: z, tangent: t });
                }
            }
        }
        if !sampled_worst.is_finite() {
            sampled_worst = 0.0;
        }

        let exact = tangent_max_eigen(&self.matrix);
        let (worst_value, witness) = match &exact {
            Some((value, tangent)) => (
                *value,
                Some(Witness {
                    x: vec![1.0 / n as f64; n],
                    tangent: tangent.clone(),
                }),
            ),
            None => (sampled_worst, sampled_witness),
        };
        let contractive = worst_value <= TOL;
        ContractivityReport {
            contractive,
            worst_value,
            sampled_worst,
            exact_worst: exact.map(|(v, _)| v),
            witness: if contractive { None } else { witness },
        }
    }

    /// `|1 - sum x| + max_i x_i [max_j p_j - p_i]_+` with `p = F(x)`.
    pub fn ne_residual(&self, x: &[f64]) -> f64 {
        let p = self.payoff(x);
        let best = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let deficit = (1.0 - x.iter().sum::<f64>()).abs();
        let support_gap = x
            .iter()
            .zip(&p)
            .map(|(xi, pi)| xi * (best - pi).max(0.0))
            .fold(0.0, f64::max);
        deficit + support_gap
    }

    pub fn nash_distance(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        if self.ne_set.is_empty() {
            return Err(Error::NeSetUnknown);
        }
        Ok(self
            .ne_set
            .iter()
            .map(|z| euclidean_distance(x, z.shares()))
            .fold(f64::INFINITY, f64::min))
    }

    /// NE distance when the set is known, otherwise the NE residual.
    pub fn ne_metric(&self, x: &[f64]) -> f64 {
        self.nash_distance(x)
            .unwrap_or_else(|_| self.ne_residual(x))
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got,
            });
        }
        Ok(())
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

fn quadratic_form(m: &DMatrix<f64>, t: &[f64]) -> f64 {
    let v = DVector::from_column_slice(t);
    v.dot(&(m * &v))
}

fn sample_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut z: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = z.iter().sum();
    z.iter_mut().for_each(|v| *v /= s);
    z
}

/// Standard normal draw projected onto the zero-sum hyperplane and normalized.
fn sample_tangent(rng: &mut ChaCha8Rng, n: usize) -> Option<Vec<f64>> {
    let mut t: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let mean = t.iter().sum::<f64>() / n as f64;
    t.iter_mut().for_each(|v| *v -= mean);
    let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return None;
    }
    t.iter_mut().for_each(|v| *v /= norm);
    Some(t)
}

/// Largest eigenvalue of the symmetric part of `m` restricted to the
/// zero-sum subspace, with its unit eigenvector in ambient coordinates.
fn tangent_max_eigen(m: &DMatrix<f64>) -> Option<(f64, Vec<f64>)> {
    let n = m.nrows();
    if n < 2 {
        return None;
    }
    let mut spanning = DMatrix::zeros(n, n - 1);
    for c in 0..n - 1 {
        spanning[(c, c)] = 1.0;
        spanning[(n - 1, c)] = -1.0;
    }
    let basis = spanning.qr().q();
    let sym = (m + m.transpose()) * 0.5;
    let restricted = basis.transpose() * &sym * &basis;
    let eig = restricted.symmetric_eigen();
    let (idx, value) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let tangent = &basis * eig.eigenvectors.column(idx);
    let norm = tangent.norm();
    Some((value, tangent.iter().map(|v| v / norm).collect()))
}

/// Calls `visit` on every grid point `k / resolution` with non-negative
/// integer `k` summing to `resolution` (or at most `resolution` when
/// `extended`).
pub fn for_each_grid_point(
    n: usize,
    resolution: usize,
    extended: bool,
    mut visit: impl FnMut(&[f64]),
) {
    fn recurse(
        idx: usize,
        remaining: usize,
        resolution: usize,
        extended: bool,
        point: &mut [f64],
        visit: &mut dyn FnMut(&[f64]),
    ) {
        let n = point.len();
        if idx == n - 1 {
            if extended {
                for k in 0..=remaining {
                    point[idx] = k as f64 / resolution as f64;
                    visit(point);
                }
            } else {
                point[idx] = remaining as f64 / resolution as f64;
                visit(point);
            }
            return;
        }
        for k in 0..=remaining {
            point[idx] = k as f64 / resolution as f64;
            recurse(idx + 1, remaining - k, resolution, extended, point, visit);
        }
    }
    if n == 0 || resolution == 0 {
        return;
    }
    let mut point = vec![0.0; n];
    recurse(0, resolution, resolution, extended, &mut point, &mut visit);
}

/// Number of points visited by [`for_each_grid_point`].
pub fn grid_point_count(n: usize, resolution: usize, extended: bool) -> f64 {
    // C(resolution + n - 1, n - 1), plus one more dimension for the slack
    // variable in the extended case.
    let dims = if extended { n } else { n.saturating_sub(1) };
    (1..=dims).fold(1.0, |acc, k| acc * (resolution + k) as f64 / k as f64)
}

/// Coarse grid over the simplex followed by a pairwise-exchange pattern
/// search on the NE residual, refined down to a step of 1e-3, and a final
/// support-equalization solve.
pub fn search_equilibrium(game: &Game) -> PopulationState {
    let n = game.n();
    let mut coarse = 100;
    while coarse > 2 && grid_point_count(n, coarse, false) > 2e5 {
        coarse /= 2;
    }
    let mut best = vec![1.0 / n as f64; n];
    let mut best_r = game.ne_residual(&best);
    for_each_grid_point(n, coarse, false, |x| {
        let r = game.ne_residual(x);
        if r < best_r {
            best_r = r;
            best.copy_from_slice(x);
        }
    });

    let mut step = 1.0 / coarse as f64;
    while step >= NE_SEARCH_RESOLUTION {
        let mut improved = false;
        for i in 0..n {
            for j in 0..n {
                if i == j || best[j] < step {
                    continue;
                }
                let mut cand = best.clone();
                cand[i] += step;
                cand[j] -= step;
                let r = game.ne_residual(&cand);
                if r < best_r {
                    best_r = r;
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }

    if let Some(polished) = equalize_support(game, &best, 2.0 * NE_SEARCH_RESOLUTION) {
        if game.ne_residual(&polished) < best_r {
            best = polished;
        }
    }
    PopulationState(best)
}

/// Solves `A_SS x_S = v 1, sum x_S = 1` on the support of `x`.
fn equalize_support(game: &Game, x: &[f64], threshold: f64) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] > threshold).collect();
    let s = support.len();
    if s == 0 {
        return None;
    }
    let mut lhs = DMatrix::zeros(s + 1, s + 1);
    let mut rhs = DVector::zeros(s + 1);
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            lhs[(r, c)] = game.matrix[(i, j)];
        }
        lhs[(r, s)] = -1.0;
        lhs[(s, r)] = 1.0;
    }
    rhs[s] = 1.0;
    let sol = lhs.lu().solve(&rhs)?;
    if sol.iter().take(s).any(|v| *v < 0.0 || !v.is_finite()) {
        return None;
    }
    let mut out = vec![0.0; x.len()];
    for (r, &i) in support.iter().enumerate() {
        out[i] = sol[r];
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn state(v: &[f64]) -> PopulationState {
        PopulationState::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rps_payoffs() {
        let g = Game::rps(1.0, 2.0);
        let third = 1.0 / 3.0;
        let p = g.evaluate_payoff(&state(&[third, third, third])).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, third, epsilon = 1e-15);
        }
        assert_eq!(g.evaluate_payoff(&state(&[1.0, 0.0, 0.0])).unwrap(), vec![0.0, 2.0, -1.0]);
        assert_eq!(g.evaluate_payoff(&state(&[0.0, 0.0, 0.0])).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn payoff_rejects_bad_states() {
        let g = Game::rps(1.0, 2.0);
        assert!(matches!(
            g.evaluate_payoff(&PopulationState(vec![0.5, 0.5])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(PopulationState::new(vec![0.7, 0.7, 0.0]).is_err());
        assert!(PopulationState::new(vec![-0.1, 0.5, 0.0]).is_err());
        assert!(PopulationState::on_simplex(vec![0.2, 0.2, 0.2]).is_err());
    }

    #[test]
    fn rps_jacobians() {
        let x = state(&[0.2, 0.3, 0.1]);
        let j = Game::rps(1.0, 2.0).evaluate_jacobian(&x).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 2.0, 2.0, 0.0, -1.0, -1.0, 2.0, 0.0]);
        assert_eq!(j, expect);
        let j = Game::rps(1.0, 1.0).evaluate_jacobian(&x).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 1.0, 1.0, 0.0, -1.0, -1.0, 1.0, 0.0]);
        assert_eq!(j, expect);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -3.0, 0.5, 2.0]);
        let g = Game::linear(a.clone(), vec![]).unwrap();
        assert_eq!(g.evaluate_jacobian(&state(&[0.5, 0.5])).unwrap(), a);
    }

    /// Power iteration on `A^T A`, independent of the SVD path.
    fn power_iteration_norm(m: &DMatrix<f64>) -> f64 {
        let ata = m.transpose() * m;
        let mut v = DVector::from_element(m.ncols(), 1.0);
        v[0] = 0.3;
        let mut est = 0.0;
        for _ in 0..2000 {
            let w = &ata * &v;
            let nw = w.norm();
            if nw == 0.0 {
                return 0.0;
            }
            est = nw / v.norm();
            v = w / nw;
        }
        est.sqrt()
    }

    #[test]
    fn bound_df_values() {
        let g = Game::rps(1.0, 2.0);
        assert_abs_diff_eq!(g.estimate_bound_df(10).unwrap(), 7f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(power_iteration_norm(g.matrix()), 7f64.sqrt(), epsilon = 1e-9);

        let g = Game::rps(1.0, 1.0);
        let oracle = power_iteration_norm(g.matrix());
        assert_abs_diff_eq!(oracle, 3f64.sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(g.estimate_bound_df(10).unwrap(), oracle, epsilon = 1e-9);

        let z = Game::linear(DMatrix::zeros(3, 3), vec![]).unwrap();
        assert_eq!(z.estimate_bound_df(2).unwrap(), 0.0);
        assert!(z.estimate_bound_df(1).is_err());
    }

    #[test]
    fn contractivity_classification() {
        let r = Game::rps(1.0, 2.0).verify_contractive(500);
        assert!(r.contractive);
        assert_abs_diff_eq!(r.worst_value, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.sampled_worst, -0.5, epsilon = 1e-12);
        assert!(r.witness.is_none());

        let r = Game::rps(2.0, 1.0).verify_contractive(1000);
        assert!(!r.contractive);
        assert_abs_diff_eq!(r.worst_value, 0.5, epsilon = 1e-12);
        let w = r.witness.unwrap();
        let v = quadratic_form(Game::rps(2.0, 1.0).matrix(), &w.tangent);
        assert!(v > 0.0);
        assert_abs_diff_eq!(w.tangent.iter().sum::<f64>(), 0.0, epsilon = 1e-12);

        let r = Game::rps(1.0, 1.0).verify_contractive(100);
        assert!(r.contractive);
        assert_abs_diff_eq!(r.worst_value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn residual_examples() {
        let g = Game::rps(1.0, 2.0);
        let third = 1.0 / 3.0;
        assert!(g.ne_residual(&[third, third, third]) < 1e-15);
        // p = (0, 2, -1), strategy 1 is supported with gap 2.
        assert_abs_diff_eq!(g.ne_residual(&[1.0, 0.0, 0.0]), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.ne_residual(&[0.0, 0.0, 0.0]), 1.0, epsilon = 1e-15);
        let z = Game::zero(4).unwrap();
        assert_abs_diff_eq!(z.ne_residual(&[0.0; 4]), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn distance_examples() {
        let g = Game::rps(1.0, 2.0);
        let third = 1.0 / 3.0;
        assert!(g.nash_distance(&[third, third, third]).unwrap() < 1e-15);
        assert_abs_diff_eq!(
            g.nash_distance(&[1.0, 0.0, 0.0]).unwrap(),
            6f64.sqrt() / 3.0,
            epsilon = 1e-12
        );

        // Coordination game: both pure profiles are equilibria.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let e1 = PopulationState::on_simplex(vec![1.0, 0.0]).unwrap();
        let e2 = PopulationState::on_simplex(vec![0.0, 1.0]).unwrap();
        let g = Game::linear(a.clone(), vec![e1, e2]).unwrap();
        assert_eq!(g.nash_distance(&[1.0, 0.0]).unwrap(), 0.0);

        let unknown = Game::linear(a, vec![]).unwrap();
        assert!(matches!(unknown.nash_distance(&[1.0, 0.0]), Err(Error::NeSetUnknown)));
    }

    #[test]
    fn linear_rejects_false_equilibrium() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let bad = PopulationState::on_simplex(vec![1.0, 0.0]).unwrap();
        // Strategy 1 earns 1 but strategy 2 earns 0 at e1: e1 is an NE. Use a
        // point where it is not.
        assert!(Game::linear(a.clone(), vec![bad]).is_ok());
        let bad = PopulationState::on_simplex(vec![0.5, 0.5]).unwrap();
        assert!(Game::linear(a, vec![bad]).is_err());
    }

    #[test]
    fn search_finds_rps_equilibrium() {
        let g = Game::linear_with_search(Game::rps(1.0, 2.0).matrix().clone()).unwrap();
        let z = &g.ne_set()[0];
        assert!(euclidean_distance(z.shares(), &[1.0 / 3.0; 3]) < 1e-9);
        assert!(g.ne_residual(z.shares()) < TOL);
    }

    #[test]
    fn search_finds_boundary_equilibrium() {
        // Strategy 2 strictly dominates.
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5]);
        let g = Game::linear_with_search(a).unwrap();
        let z = &g.ne_set()[0];
        assert!(euclidean_distance(z.shares(), &[0.0, 1.0, 0.0]) < 1e-9);
    }

    #[test]
    fn grid_enumeration_counts() {
        let mut count = 0;
        for_each_grid_point(3, 4, false, |x| {
            assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            count += 1;
        });
        assert_eq!(count, 15);
        assert_eq!(grid_point_count(3, 4, false), 15.0);
        let mut count = 0;
        for_each_grid_point(3, 4, true, |x| {
            assert!(x.iter().sum::<f64>() <= 1.0 + 1e-12);
            count += 1;
        });
        assert_eq!(count, 35);
        assert_eq!(grid_point_count(3, 4, true), 35.0);
    }

    #[test]
    fn spec_parsing() {
        let s: GameSpec = serde_json::from_str(r#"{"type":"rps","a":1.0,"b":2.0}"#).unwrap();
        assert_eq!(s, GameSpec::Rps { a: 1.0, b: 2.0 });
        let s: GameSpec =
            serde_json::from_str(r#"{"type":"linear","matrix":[[0,1],[1,0]],"ne":[[0.5,0.5]]}"#)
                .unwrap();
        let g = Game::from_spec(&s).unwrap();
        assert_eq!(g.ne_set().len(), 1);
        assert!(serde_json::from_str::<GameSpec>(r#"{"type":"rps","a":1,"b":2,"c":3}"#).is_err());
        let ragged = GameSpec::Linear {
            matrix: vec![vec![0.0, 1.0], vec![1.0]],
            ne: None,
        };
        assert!(Game::from_spec(&ragged).is_err());
    }
}
