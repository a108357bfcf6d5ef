use nalgebra::DMatrix;
use proptest::prelude::*;

use popdelay_core::dynamics::{DelayMatrix, Simulator};
use popdelay_core::games::{spectral_norm, Game, PopulationState};
use popdelay_core::revision::{
    compute_constants, dissipation, edm_field, grad_p_storage, grad_x_storage, storage, ProtocolParams,
};
use popdelay_core::tuner::{Tuner, TunerConfig};

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_filter_map("degenerate", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-6).then(|| w.iter().map(|v| v / s).collect())
    })
}

fn extended_simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    (simplex(n), 0.0f64..=1.0).prop_map(|(x, m)| x.into_iter().map(|v| v * m).collect())
}

fn state_and_payoff() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (2usize..7).prop_flat_map(|n| {
        (
            extended_simplex(n),
            prop::collection::vec(-3.0f64..3.0, n),
            0.01f64..2.0,
        )
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|e| e * e).sum::<f64>().sqrt()
}

fn gaps(p: &[f64]) -> impl Iterator<Item = f64> + '_ {
    p.iter().flat_map(move |a| p.iter().map(move |b| a - b))
}

fn max_gap_sum(p: &[f64]) -> f64 {
    p.iter()
        .map(|pi| p.iter().map(|pj| (pj - pi).max(0.0)).sum::<f64>())
        .fold(0.0, f64::max)
}

fn linear_game() -> impl Strategy<Value = Game> {
    (2usize..6).prop_flat_map(|n| {
        prop::collection::vec(-3.0f64..3.0, n * n)
            .prop_map(move |v| Game::linear(DMatrix::from_row_slice(n, n, &v), vec![]).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn dissipation_is_non_positive((x, p, rho) in state_and_payoff()) {
        let params = ProtocolParams::new(rho, x.len()).unwrap();
        prop_assert!(dissipation(&x, &p, &params) <= 1e-12);
    }

    #[test]
    fn field_components_bounded((x, p, scale) in state_and_payoff()) {
        let worst = max_gap_sum(&p);
        prop_assume!(worst > 0.0);
        let rho = scale.min(1.0) / worst;
        let params = ProtocolParams::new(rho, x.len()).unwrap();
        for v in edm_field(&x, &p, &params) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v), "component {v}");
        }
    }

    #[test]
    fn field_sums_to_zero_on_simplex(
        (x, p, rho) in (2usize..7).prop_flat_map(|n| (simplex(n), prop::collection::vec(-3.0f64..3.0, n), 0.01f64..2.0))
    ) {
        let params = ProtocolParams::new(rho, x.len()).unwrap();
        let total: f64 = edm_field(&x, &p, &params).iter().sum();
        prop_assert!(total.abs() <= 1e-12, "sum {total}");
    }

    #[test]
    fn storage_dominates_each_term((x, p, rho) in state_and_payoff()) {
        let params = ProtocolParams::new(rho, x.len()).unwrap();
        let s = storage(&x, &p, &params);
        for i in 0..x.len() {
            for j in 0..x.len() {
                let g = (p[j] - p[i]).max(0.0);
                prop_assert!(s >= 0.5 * x[i] * rho * g * g - 1e-15);
            }
        }
    }

    #[test]
    fn gradients_match_central_differences((x, p, rho) in state_and_payoff()) {
        prop_assume!(gaps(&p).all(|g| g == 0.0 || g.abs() >= 1e-4));
        let params = ProtocolParams::new(rho, x.len()).unwrap();
        let step = 1e-6;
        let fd = |f: &dyn Fn(usize, f64) -> f64, k: usize| (f(k, step) - f(k, -step)) / (2.0 * step);

        let gx = grad_x_storage(&p, &params);
        let shift_x = |k: usize, e: f64| {
            let mut y = x.clone();
            y[k] += e;
            storage(&y, &p, &params)
        };
        let fx: Vec<f64> = (0..x.len()).map(|k| fd(&shift_x, k)).collect();

        let gp = grad_p_storage(&x, &p, &params);
        let shift_p = |k: usize, e: f64| {
            let mut q = p.clone();
            q[k] += e;
            storage(&x, &q, &params)
        };
        let fp: Vec<f64> = (0..p.len()).map(|k| fd(&shift_p, k)).collect();

        for (g, f) in [(&gx, &fx), (&gp, &fp)] {
            let scale = norm(g);
            prop_assume!(scale > 1e-6);
            let err: Vec<f64> = g.iter().zip(f).map(|(a, b)| a - b).collect();
            prop_assert!(norm(&err) / scale <= 1e-6, "relative error {}", norm(&err) / scale);
        }
    }

    #[test]
    fn payoff_is_lipschitz_with_jacobian_bound(
        (game, x, y) in linear_game().prop_flat_map(|g| {
            let n = g.n();
            (Just(g), extended_simplex(n), extended_simplex(n))
        })
    ) {
        let b = game.bound_df();
        let fx = game.payoff(&x);
        let fy = game.payoff(&y);
        let df: Vec<f64> = fx.iter().zip(&fy).map(|(a, c)| a - c).collect();
        let dx: Vec<f64> = x.iter().zip(&y).map(|(a, c)| a - c).collect();
        prop_assert!(norm(&df) <= (b + 1e-9) * norm(&dx));

        let jac = game.evaluate_jacobian(&PopulationState::new(x).unwrap()).unwrap();
        prop_assert!(spectral_norm(&jac) <= game.estimate_bound_df(10).unwrap() + 1e-9);
    }

    #[test]
    fn rps_classifier_follows_parameter_order(a in 0.1f64..5.0, b in 0.1f64..5.0) {
        prop_assume!((a - b).abs() > 1e-6);
        let r = Game::rps(a, b).verify_contractive(1000);
        prop_assert_eq!(r.contractive, b >= a);
        prop_assert_eq!(r.witness.is_some(), b < a);
    }
}

fn delays_strategy(n: usize) -> impl Strategy<Value = DelayMatrix> {
    prop::collection::vec(0.0f64..2.0, n * n).prop_map(move |v| {
        let rows = (0..n)
            .map(|j| (0..n).map(|i| if i == j { 0.0 } else { v[j * n + i] }).collect())
            .collect();
        DelayMatrix::new(rows).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn delayed_runs_conserve_mass(
        (x0, delays, lambda) in (simplex(3), delays_strategy(3), 0.1f64..2.0)
    ) {
        let game = Game::rps(1.0, 2.0);
        let params = ProtocolParams::new(0.25, 3).unwrap();
        let x0 = PopulationState::on_simplex(x0).unwrap();
        let mut sim = Simulator::init(&game, params, &delays, &x0, lambda, 0.01).unwrap();
        let trace = sim.run(15.0, 1, &mut []).unwrap();
        for s in &trace {
            let total: f64 = s.x.iter().sum::<f64>() + s.y.total();
            prop_assert!((total - 1.0).abs() <= 1e-9, "mass {total} at t = {}", s.t);
            prop_assert!(s.x.iter().chain(s.y.entries()).all(|v| *v >= -1e-9));
            prop_assert!((s.transit_mass - (1.0 - s.x.iter().sum::<f64>())).abs() <= 1e-9);
        }
        prop_assert!(sim.clipped_mass() <= 1e-6);
    }

    #[test]
    fn tuned_schedule_is_monotone_and_spaced(x0 in simplex(3), delta in 0.05f64..0.45) {
        let game = Game::rps(1.0, 2.0);
        let params = ProtocolParams::new(0.25, 3).unwrap();
        let delays = DelayMatrix::abs_diff(3);
        let consts = compute_constants(&game, &params, &delays, delta).unwrap();
        let x0 = PopulationState::on_simplex(x0).unwrap();
        let mut sim = Simulator::init(&game, params, &delays, &x0, 1.0, 0.01).unwrap();
        let mut tuner = Tuner::new(TunerConfig::new(delta, 1.0, true).unwrap(), consts.clone(), params);
        let trace = sim.run(40.0, 5, &mut [&mut tuner]).unwrap();
        let log = &tuner.state().update_log;
        let mut prev_t = f64::NEG_INFINITY;
        let mut prev_lambda = 1.0;
        for u in log {
            prop_assert!(u.t - prev_t >= 2.0 * consts.d_max - 1e-12);
            prop_assert!(u.lambda < prev_lambda);
            if !u.floored {
                prop_assert!(u.lambda <= prev_lambda / (2.0 * (1.0 - delta)) + 1e-12);
            }
            let at = trace.iter().find(|s| (s.t - u.t).abs() < 1e-9).expect("sample at switch");
            let p = game.payoff(&at.x);
            let cond = popdelay_core::tuner::evaluate_conditions(&at.x, &p, u.previous, &consts, &params);
            prop_assert!(cond.cond1 && cond.cond2);
            prev_t = u.t;
            prev_lambda = u.lambda;
        }
    }
}
