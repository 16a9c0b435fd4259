use crate::error::{Error, Result};
use crate::scenario::{ScenarioConfig, SfVector, SpreadingFactor, SubBand};

use super::{AttemptMatrix, DemodChainState, SubBandState, TrafficRates};

/// Application-layer rates per channel: `(confirmed, unconfirmed)`.
pub fn app_rates(cfg: &ScenarioConfig) -> (SfVector, SfVector) {
    let per_channel = cfg.lambda_total / cfg.c_channels as f64;
    let confirmed = cfg
        .p_confirmed
        .as_vector()
        .scale(per_channel * cfg.alpha);
    let unconfirmed = cfg
        .p_unconfirmed
        .as_vector()
        .scale(per_channel * (1.0 - cfg.alpha));
    (confirmed, unconfirmed)
}

/// Expected number of transmissions of a confirmed packet given the
/// probabilities of being acknowledged at exactly attempt `j`.
pub(crate) fn expected_attempts(p_dl: &[f64], m: usize) -> f64 {
    let head = &p_dl[..m - 1];
    let weighted: f64 = head
        .iter()
        .enumerate()
        .map(|(j, p)| (j + 1) as f64 * p)
        .sum();
    let acked_early: f64 = head.iter().sum();
    weighted + m as f64 * (1.0 - acked_early)
}

/// PHY-layer rates given the per-attempt acknowledgement probabilities.
pub fn phy_rates(cfg: &ScenarioConfig, p_dl: &AttemptMatrix) -> Result<TrafficRates> {
    let m = cfg.m as usize;
    for (i, row) in p_dl.iter().enumerate() {
        if row.len() != m {
            return Err(Error::Validation(format!(
                "P_DL row for {} has {} entries, expected m = {m}",
                SpreadingFactor::from_index(i),
                row.len()
            )));
        }
        if !row.iter().all(|p| (0.0..=1.0).contains(p)) {
            return Err(Error::Validation(format!(
                "P_DL row for {} has entries outside [0, 1]",
                SpreadingFactor::from_index(i)
            )));
        }
        if row.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Validation(format!(
                "P_DL row for {} sums above 1",
                SpreadingFactor::from_index(i)
            )));
        }
    }

    let (r_c_app, r_u_app) = app_rates(cfg);
    let r_c_phy = SfVector::from_fn(|i| r_c_app[i] * expected_attempts(&p_dl[i], m));
    let r_u_phy = r_u_app.scale(cfg.h as f64);
    let r_phy = r_c_phy.zip_with(&r_u_phy, |c, u| c + u);
    let total = r_phy.sum();
    let d = if total > 0.0 {
        r_phy.scale(1.0 / total)
    } else {
        SfVector::ZERO
    };
    Ok(TrafficRates {
        r_c_app,
        r_u_app,
        r_c_phy,
        r_u_phy,
        r_phy,
        d,
    })
}

/// Probability that a UL packet survives same-SF interference: no arrival in
/// the `2T` vulnerability window, or exactly one and the packet is captured.
pub fn interference_survival(t_data: f64, r_phy: f64, w_gw: f64) -> f64 {
    let load = 2.0 * t_data * r_phy;
    let none = (-load).exp();
    none + load * none * w_gw
}

/// Probability that the UL packet does not fall in a gateway transmission
/// vulnerability period, per sub-band and combined: `(F_TX1, F_TX2, S_TX)`.
///
/// The ratio is clamped to 1: with `δ = 0` and TX priority the numerator can
/// exceed a very short renewal cycle.
pub fn gw_tx_survival(
    cfg: &ScenarioConfig,
    sb: &[SubBandState; 2],
    sf: SpreadingFactor,
) -> (f64, f64, f64) {
    let f = |band: SubBand| -> f64 {
        let state = &sb[band.index()];
        if state.is_idle() {
            return 0.0;
        }
        let ack = state.b.dot(cfg.t_ack(band));
        let gate = if cfg.tau(band) {
            cfg.airtimes.t_data[sf]
        } else {
            0.0
        };
        ((ack + gate) / state.cycle()).min(1.0)
    };
    let f1 = f(SubBand::Sb1);
    let f2 = f(SubBand::Sb2);
    (f1, f2, (1.0 - f1) * (1.0 - f2))
}

/// Lock probabilities of the sequentially activated demodulator chains.
pub fn demod_chain(cfg: &ScenarioConfig, rates: &TrafficRates) -> DemodChainState {
    let n = cfg.n_demodulators as usize;
    let total = rates.total_phy(cfg.c_channels);
    if total <= 0.0 {
        return DemodChainState {
            e_lock: 0.0,
            e_avail: vec![f64::INFINITY; n],
            p_lock: vec![0.0; n],
            s_demod: 1.0,
        };
    }
    let e_lock = rates.d.dot(&cfg.airtimes.t_data);
    let mut e_avail = Vec::with_capacity(n);
    let mut p_lock = Vec::with_capacity(n);
    let mut avail = 1.0 / total;
    for _ in 0..n {
        let p = e_lock / (avail + e_lock);
        e_avail.push(avail);
        p_lock.push(p);
        // once a chain is never locked, later ones are never reached
        avail = if p > 0.0 { avail / p } else { f64::INFINITY };
    }
    let s_demod = 1.0 - p_lock.iter().product::<f64>();
    DemodChainState {
        e_lock,
        e_avail,
        p_lock,
        s_demod,
    }
}
