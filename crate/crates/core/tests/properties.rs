use lora_capacity::analytic::{evaluate, interference_survival, solve, SolverOptions, SteadyState};
use lora_capacity::metrics::{self, fairness};
use lora_capacity::optimize::project_to_simplex;
use lora_capacity::scenario::{ScenarioConfig, SfDistribution, SfVector, NUM_SF};
use lora_capacity::Error;
use proptest::prelude::*;

fn distribution() -> impl Strategy<Value = SfDistribution> {
    // sparse vectors are allowed: several zero weights, never all
    (prop::array::uniform6(0.0f64..1.0), prop::array::uniform6(any::<bool>()), 0usize..NUM_SF)
        .prop_map(|(w, keep, forced)| {
            let mut v = [0.0; NUM_SF];
            for i in 0..NUM_SF {
                if keep[i] || i == forced {
                    v[i] = w[i] + 1e-3;
                }
            }
            SfDistribution::renormalized(v).unwrap()
        })
}

prop_compose! {
    fn scenario()(
        log_lambda in -3.0f64..2.0,
        alpha in 0.0f64..=1.0,
        p_u in distribution(),
        p_c in distribution(),
        h in 1u32..=8,
        m in 1u32..=8,
        d1 in prop_oneof![Just(0.0), 0.0f64..200.0],
        d2 in prop_oneof![Just(0.0), 0.0f64..50.0],
        tau1 in any::<bool>(),
        tau2 in any::<bool>(),
        c in 1u32..=8,
        mu in 0.0f64..5.0,
        w_gw in 0.0f64..=1.0,
        w_ed in 0.0f64..=1.0,
        n_demod in 1u32..=16,
    ) -> ScenarioConfig {
        ScenarioConfig {
            lambda_total: 10f64.powf(log_lambda),
            alpha,
            p_unconfirmed: p_u,
            p_confirmed: p_c,
            h,
            m,
            delta_sb1: d1,
            delta_sb2: d2,
            tau1,
            tau2,
            c_channels: c,
            mu_retx: mu,
            w_gw,
            w_ed,
            n_demodulators: n_demod,
            ..ScenarioConfig::default()
        }
    }
}

fn solved(cfg: &ScenarioConfig) -> SteadyState {
    match solve(cfg, &SolverOptions::default()) {
        Ok(s) => s,
        Err(Error::NotConverged { best, .. }) => *best,
        Err(e) => panic!("solve failed for {cfg:?}: {e}"),
    }
}

fn prob(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

fn all_prob(v: &SfVector) -> bool {
    v.iter().all(prob)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn analytic_outputs_are_probabilities(cfg in scenario()) {
        let s = solved(&cfg);
        for v in [&s.s_ul, &s.s_dl, &s.s_int, &s.s_tx, &s.f_tx1, &s.f_tx2, &s.s_int_ack1, &s.s_sb1] {
            prop_assert!(all_prob(v), "{v:?}");
        }
        prop_assert!(prob(s.s_sb2));
        prop_assert!(prob(s.demod.s_demod));
        prop_assert!(s.demod.p_lock.iter().all(|p| prob(*p)));
        for sb in &s.sb {
            prop_assert!(prob(sb.p_on) && prob(sb.p_off) && prob(sb.p_t));
            prop_assert!(all_prob(&sb.b));
        }
        prop_assert!(all_prob(&s.rates.d));

        let (p_ul, p_dl) = s.attempts(cfg.m);
        for i in 0..NUM_SF {
            let ul: f64 = p_ul[i].iter().sum();
            let dl: f64 = p_dl[i].iter().sum();
            prop_assert!(p_ul[i].iter().chain(&p_dl[i]).all(|p| prob(*p)));
            prop_assert!(dl <= ul + 1e-15);
        }

        let cats = metrics::fairness_categories(&metrics::reliability(&s, &cfg), &cfg);
        let r = match metrics::report(&s, &cfg) {
            Err(Error::ZeroFairness) => {
                prop_assert!(cats.iter().all(|x| *x == 0.0));
                return Ok(());
            }
            r => r.unwrap(),
        };
        for x in [r.uu, r.cu, r.cd, r.f_nmd, r.f_gwtx, r.f_int] {
            prop_assert!(prob(x), "{r:?}");
        }
        prop_assert!(r.cd <= r.cu + 1e-15);
        let n = cats.len() as f64;
        prop_assert!(r.jain >= 1.0 / n - 1e-12 && r.jain <= 1.0 + 1e-12);
        let total: f64 = r.retx.shares.iter().sum::<f64>() + r.retx.failure;
        prop_assert!(r.retx.shares.iter().all(|x| *x >= 0.0));
        prop_assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn demodulator_locks_decrease_along_chain(cfg in scenario()) {
        let s = solved(&cfg);
        for w in s.demod.p_lock.windows(2) {
            prop_assert!(w[0] >= w[1], "{:?}", s.demod.p_lock);
        }
    }

    #[test]
    fn telescoping_loss_identity(cfg in scenario()) {
        let s = solved(&cfg);
        let l = metrics::loss_decomposition(&s, &cfg);
        let total = l.f_nmd + l.f_gwtx + l.f_int + metrics::mean_phy_success(&s, &cfg);
        prop_assert!((total - 1.0).abs() <= 1e-12, "{total}");
    }

    #[test]
    fn returned_state_satisfies_both_identities(cfg in scenario()) {
        let s = solved(&cfg);
        for i in 0..NUM_SF {
            prop_assert_eq!(s.s_ul[i], s.s_int[i] * s.s_tx[i] * s.demod.s_demod);
            prop_assert_eq!(s.s_dl[i], s.s_sb1[i] + s.s_sb2);
        }
    }

    #[test]
    fn interference_survival_strictly_decreasing(
        t in 0.01f64..2.0, r in 0.0f64..20.0, dr in 1e-3f64..5.0, w in 0.0f64..0.999
    ) {
        prop_assert!(interference_survival(t, r + dr, w) < interference_survival(t, r, w));
    }

    #[test]
    fn jain_scale_invariant(x in prop::collection::vec(0.0f64..1.0, 1..12), k in 0.01f64..100.0) {
        prop_assume!(x.iter().any(|v| *v > 0.0));
        let scaled: Vec<f64> = x.iter().map(|v| v * k).collect();
        let (a, b) = (fairness(&x).unwrap(), fairness(&scaled).unwrap());
        prop_assert!((a - b).abs() <= 1e-12);
        let n = x.len() as f64;
        prop_assert!(a >= 1.0 / n - 1e-12 && a <= 1.0 + 1e-12);
    }

    #[test]
    fn jain_equal_entries_is_one(v in 0.001f64..1.0, n in 1usize..12) {
        prop_assert!((fairness(&vec![v; n]).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn projection_lands_on_simplex(v in prop::array::uniform6(-10.0f64..10.0)) {
        let p = project_to_simplex(&SfVector(v));
        prop_assert!(p.values().iter().all(|x| *x >= 0.0));
        prop_assert!((p.as_vector().sum() - 1.0).abs() <= 1e-12);
        // idempotent
        let again = project_to_simplex(p.as_vector());
        prop_assert!(again.as_vector().max_abs_diff(p.as_vector()) <= 1e-12);
        // no simplex vertex is closer to v than the projection
        let d = |q: &SfVector| q.iter().zip(v.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        for i in 0..NUM_SF {
            let mut e = SfVector::ZERO;
            e.0[i] = 1.0;
            prop_assert!(d(p.as_vector()) <= d(&e) + 1e-12);
        }
    }
}

fn log_sweep(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
        .collect()
}

#[test]
fn uu_cu_non_increasing_in_load() {
    for (alpha, m, h) in [(0.3, 8, 1), (0.5, 4, 3), (1.0, 2, 1), (0.0, 1, 8)] {
        let mut last = (f64::INFINITY, f64::INFINITY);
        for lambda in log_sweep(0.01, 100.0, 60) {
            let cfg = ScenarioConfig {
                lambda_total: lambda,
                alpha,
                m,
                h,
                ..ScenarioConfig::default()
            };
            let r = metrics::reliability(&solved(&cfg), &cfg);
            assert!(r.uu <= last.0 + 1e-12, "UU rose at {lambda} (alpha {alpha})");
            assert!(r.cu <= last.1 + 1e-12, "CU rose at {lambda} (alpha {alpha})");
            last = (r.uu, r.cu);
        }
    }
}

/// Below demodulator saturation every loss cause grows with load. Beyond it
/// F_GWTX and F_INT carry the shrinking S_demod factor and fall, while F_NMD
/// and the total loss keep growing.
#[test]
fn loss_fractions_grow_with_load() {
    let mut last = (0.0, 0.0, 0.0, 0.0);
    for lambda in log_sweep(0.01, 10.0, 50) {
        let cfg = ScenarioConfig {
            lambda_total: lambda,
            ..ScenarioConfig::default()
        };
        let s = solved(&cfg);
        let l = metrics::loss_decomposition(&s, &cfg);
        let lost = 1.0 - metrics::mean_phy_success(&s, &cfg);
        assert!(l.f_nmd >= last.0 - 1e-12, "F_NMD fell at {lambda}");
        assert!(lost >= last.3 - 1e-12, "total loss fell at {lambda}");
        if lambda <= 1.0 {
            assert!(l.f_gwtx >= last.1 - 1e-12, "F_GWTX fell at {lambda}");
            assert!(l.f_int >= last.2 - 1e-12, "F_INT fell at {lambda}");
        }
        last = (l.f_nmd, l.f_gwtx, l.f_int, lost);
    }
}

#[test]
fn fixed_point_continuous_in_load() {
    for alpha in [0.0, 0.3, 1.0] {
        for m in [1, 8] {
            for lambda in log_sweep(0.01, 100.0, 40) {
                let cfg = ScenarioConfig {
                    lambda_total: lambda,
                    alpha,
                    m,
                    ..ScenarioConfig::default()
                };
                let near = ScenarioConfig {
                    lambda_total: lambda * 1.01,
                    ..cfg.clone()
                };
                let (a, b) = (solved(&cfg), solved(&near));
                let jump = a.s_ul.max_abs_diff(&b.s_ul).max(a.s_dl.max_abs_diff(&b.s_dl));
                assert!(jump <= 0.05, "jump {jump} at lambda {lambda}, alpha {alpha}, m {m}");
            }
        }
    }
}

#[test]
fn single_sf_demod_survival_limits() {
    let sf = SfDistribution::point(lora_capacity::scenario::SpreadingFactor::ALL[3]);
    let mut last = 1.0;
    for lambda in log_sweep(1e-6, 100.0, 50) {
        let cfg = ScenarioConfig {
            lambda_total: lambda,
            p_unconfirmed: sf,
            p_confirmed: sf,
            alpha: 0.5,
            ..ScenarioConfig::default()
        };
        let s = solved(&cfg);
        if lambda == 1e-6 {
            assert!(s.demod.s_demod > 1.0 - 1e-9);
        }
        assert!(s.demod.s_demod <= last + 1e-15);
        last = s.demod.s_demod;
    }
}

#[test]
fn reapplying_an_iteration_is_a_no_op() {
    for lambda in log_sweep(0.01, 100.0, 25) {
        let cfg = ScenarioConfig {
            lambda_total: lambda,
            alpha: 0.3,
            h: 3,
            ..ScenarioConfig::default()
        };
        let opts = SolverOptions::default();
        let s = solve(&cfg, &opts).unwrap();
        let t = evaluate(&cfg, &s.s_ul, &s.s_dl).unwrap();
        assert!(t.s_ul.max_abs_diff(&s.s_ul).max(t.s_dl.max_abs_diff(&s.s_dl)) <= opts.tol);
    }
}
