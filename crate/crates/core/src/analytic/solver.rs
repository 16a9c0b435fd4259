use crate::error::{Error, Result};
use crate::scenario::{ScenarioConfig, SfVector, SpreadingFactor, NUM_SF};

use super::downlink::{ack_interference_survival, dl_success, subband_states};
use super::uplink::{demod_chain, gw_tx_survival, interference_survival, phy_rates};
use super::{AttemptMatrix, SteadyState};

/// Stopping rule of the fixed-point iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Sup-norm change of `(S_UL, S_DL)` below which the iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1000,
        }
    }
}

fn finite(v: &SfVector, quantity: &'static str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { quantity })
    }
}

fn finite_scalar(v: f64, quantity: &'static str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { quantity })
    }
}

/// One full pass of the model from the iterate `(s_ul, s_dl)`.
///
/// Order: attempt distributions, PHY rates, demodulator chain, sub-band
/// states, interference and GW-TX survival, `S_UL`, ACK interference, `S_DL`.
/// `iterations` and `residual` of the result are left at zero.
pub fn evaluate(cfg: &ScenarioConfig, s_ul: &SfVector, s_dl: &SfVector) -> Result<SteadyState> {
    let mut p_dl: AttemptMatrix = Default::default();
    for i in 0..NUM_SF {
        p_dl[i] = super::attempt_distributions(s_ul[i], s_dl[i], cfg.m).1;
    }
    let rates = phy_rates(cfg, &p_dl)?;
    finite(&rates.r_phy, "R_phy")?;

    let demod = demod_chain(cfg, &rates);
    finite_scalar(demod.s_demod, "S_demod")?;
    finite_scalar(demod.e_lock, "E_L")?;

    let sb = subband_states(cfg, &rates, s_ul);
    for s in &sb {
        finite(&s.b, "b_k")?;
        finite_scalar(s.e_off, "E_OFF")?;
        finite_scalar(s.p_on, "P_ON")?;
        finite_scalar(s.p_t, "P_T")?;
    }

    let mut s_int = SfVector::ZERO;
    let mut s_tx = SfVector::ZERO;
    let mut f_tx1 = SfVector::ZERO;
    let mut f_tx2 = SfVector::ZERO;
    let mut s_int_ack1 = SfVector::ZERO;
    for sf in SpreadingFactor::iter() {
        s_int[sf] = interference_survival(cfg.airtimes.t_data[sf], rates.r_phy[sf], cfg.w_gw);
        let (f1, f2, s) = gw_tx_survival(cfg, &sb, sf);
        f_tx1[sf] = f1;
        f_tx2[sf] = f2;
        s_tx[sf] = s;
        s_int_ack1[sf] = ack_interference_survival(cfg, &rates, sf);
    }
    finite(&s_int, "S_INT")?;
    finite(&s_tx, "S_TX")?;
    finite(&s_int_ack1, "S_INT_ack1")?;

    let new_ul = SfVector::from_fn(|i| s_int[i] * s_tx[i] * demod.s_demod);
    let dl = dl_success(&sb, &s_int_ack1)?;
    finite(&dl.s_dl, "S_DL")?;

    Ok(SteadyState {
        s_ul: new_ul,
        s_dl: dl.s_dl,
        s_int,
        s_tx,
        f_tx1,
        f_tx2,
        s_int_ack1,
        s_sb1: dl.s_sb1,
        s_sb2: dl.s_sb2,
        rates,
        sb,
        demod,
        iterations: 0,
        residual: 0.0,
    })
}

/// Solves the coupled system by fixed-point iteration from `S_UL = S_DL = 1`.
///
/// With `cfg.relaxation < 1` the next iterate is blended with the previous
/// one; the returned state is always a plain evaluation, so the
/// `S_UL = S_INT S_TX S_demod` and `S_DL = S_SB1 + S_SB2` identities hold
/// exactly. On budget exhaustion the iterate with the smallest residual is
/// returned inside [`Error::NotConverged`].
pub fn solve(cfg: &ScenarioConfig, opts: &SolverOptions) -> Result<SteadyState> {
    cfg.validate()?;
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Validation(
            "solver needs tol > 0 and max_iter >= 1".into(),
        ));
    }
    let omega = cfg.relaxation;
    let mut s_ul = SfVector::ONES;
    let mut s_dl = SfVector::ONES;
    let mut best: Option<SteadyState> = None;

    for it in 1..=opts.max_iter {
        let mut state = evaluate(cfg, &s_ul, &s_dl)?;
        let residual = state
            .s_ul
            .max_abs_diff(&s_ul)
            .max(state.s_dl.max_abs_diff(&s_dl));
        state.iterations = it;
        state.residual = residual;
        if residual <= opts.tol {
            return Ok(state);
        }
        s_ul = state.s_ul.zip_with(&s_ul, |new, old| omega * new + (1.0 - omega) * old);
        s_dl = state.s_dl.zip_with(&s_dl, |new, old| omega * new + (1.0 - omega) * old);
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(state);
        }
    }
    let best = best.expect("max_iter >= 1");
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual: best.residual,
        best: Box::new(best),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::SfDistribution;

    #[test]
    fn zero_load_is_all_ones() {
        let cfg = ScenarioConfig {
            lambda_total: 0.0,
            ..ScenarioConfig::default()
        };
        let s = solve(&cfg, &SolverOptions::default()).unwrap();
        assert_eq!(s.s_ul, SfVector::ONES);
        assert_eq!(s.s_dl, SfVector::ONES);
        assert!(s.iterations <= 2);
    }

    #[test]
    fn tiny_load_converges_to_near_ones() {
        let cfg = ScenarioConfig {
            lambda_total: 1e-6,
            ..ScenarioConfig::default()
        };
        let s = solve(&cfg, &SolverOptions::default()).unwrap();
        assert!(s.s_ul.iter().all(|v| v > 0.999));
        assert!(s.s_dl.iter().all(|v| v > 0.999));
    }

    #[test]
    fn identities_hold_at_returned_state() {
        let cfg = ScenarioConfig {
            lambda_total: 5.0,
            alpha: 0.6,
            h: 2,
            ..ScenarioConfig::default()
        };
        let s = solve(&cfg, &SolverOptions::default()).unwrap();
        for i in 0..NUM_SF {
            assert_eq!(s.s_ul[i], s.s_int[i] * s.s_tx[i] * s.demod.s_demod);
            assert_eq!(s.s_dl[i], s.s_sb1[i] + s.s_sb2);
        }
        assert!(s.residual <= 1e-10);
    }

    #[test]
    fn one_more_iteration_stays_put() {
        for lambda in [0.1, 1.0, 10.0, 60.0] {
            let cfg = ScenarioConfig {
                lambda_total: lambda,
                ..ScenarioConfig::default()
            };
            let opts = SolverOptions::default();
            let s = solve(&cfg, &opts).unwrap();
            let again = evaluate(&cfg, &s.s_ul, &s.s_dl).unwrap();
            let moved = again.s_ul.max_abs_diff(&s.s_ul).max(again.s_dl.max_abs_diff(&s.s_dl));
            assert!(moved <= opts.tol, "lambda {lambda}: moved {moved}");
        }
    }

    #[test]
    fn relaxation_reaches_same_point() {
        let base = ScenarioConfig {
            lambda_total: 8.0,
            ..ScenarioConfig::default()
        };
        let damped = ScenarioConfig {
            relaxation: 0.5,
            ..base.clone()
        };
        let opts = SolverOptions::default();
        let a = solve(&base, &opts).unwrap();
        let b = solve(&damped, &opts).unwrap();
        assert!(a.s_ul.max_abs_diff(&b.s_ul) < 1e-8);
        assert!(a.s_dl.max_abs_diff(&b.s_dl) < 1e-8);
    }

    #[test]
    fn budget_exhaustion_reports_best_iterate() {
        let cfg = ScenarioConfig {
            lambda_total: 20.0,
            ..ScenarioConfig::default()
        };
        let opts = SolverOptions {
            tol: 1e-14,
            max_iter: 2,
        };
        match solve(&cfg, &opts) {
            Err(Error::NotConverged { iterations, best, .. }) => {
                assert_eq!(iterations, 2);
                assert!(best.residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_options_rejected() {
        let cfg = ScenarioConfig::default();
        let opts = SolverOptions {
            tol: 0.0,
            max_iter: 10,
        };
        assert!(matches!(solve(&cfg, &opts), Err(Error::Validation(_))));
    }

    #[test]
    fn single_sf_demod_monotone_in_load() {
        let sf12 = SfDistribution::point(SpreadingFactor::ALL[5]);
        let mut last = 1.0;
        for k in 0..30 {
            let cfg = ScenarioConfig {
                lambda_total: 0.01 * 1.4f64.powi(k),
                alpha: 0.0,
                p_unconfirmed: sf12,
                p_confirmed: sf12,
                ..ScenarioConfig::default()
            };
            let s = solve(&cfg, &SolverOptions::default()).unwrap();
            assert!(s.demod.s_demod <= last + 1e-15);
            last = s.demod.s_demod;
        }
    }
}
