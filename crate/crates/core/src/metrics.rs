//! Reliability, delay, fairness, retransmission and loss metrics derived from
//! a converged [`SteadyState`].

use serde::Serialize;

use crate::analytic::SteadyState;
use crate::error::{Error, Result};
use crate::scenario::{ScenarioConfig, SfVector, NUM_SF};

/// Delivery ratios, aggregate and per SF.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Reliability {
    pub uu: f64,
    pub cu: f64,
    pub cd: f64,
    pub uu_per_sf: SfVector,
    pub cu_per_sf: SfVector,
    pub cd_per_sf: SfVector,
}

/// UU: unconfirmed packet reaches the GW in one of `h` copies. CU: confirmed
/// packet reaches the GW within `m` attempts. CD: it is also acknowledged.
pub fn reliability(state: &SteadyState, cfg: &ScenarioConfig) -> Reliability {
    let h = cfg.h as i32;
    let m = cfg.m as i32;
    let uu_per_sf = state.s_ul.map(|s| 1.0 - (1.0 - s).powi(h));
    let cu_per_sf = state.s_ul.map(|s| 1.0 - (1.0 - s).powi(m));
    let cd_per_sf = state
        .s_ul
        .zip_with(&state.s_dl, |u, d| 1.0 - (1.0 - u * d).powi(m));
    // weights sum to one only up to rounding
    Reliability {
        uu: cfg.p_unconfirmed.as_vector().dot(&uu_per_sf).min(1.0),
        cu: cfg.p_confirmed.as_vector().dot(&cu_per_sf).min(1.0),
        cd: cfg.p_confirmed.as_vector().dot(&cd_per_sf).min(1.0),
        uu_per_sf,
        cu_per_sf,
        cd_per_sf,
    }
}

/// Mean delays of successful confirmed packets, seconds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Delays {
    /// First transmission to successful reception at the GW.
    pub delta_ul: f64,
    /// First transmission to reception of the ACK.
    pub delta_dl: f64,
    /// Mean spacing of two transmissions of the same packet.
    pub gamma: SfVector,
    /// Mean ACK delay after a successful uplink, unnormalized mixture of the
    /// two windows (a lower bound on the conditional delay when
    /// `S_SB1 + S_SB2 < 1`).
    pub phi: SfVector,
}

/// Delay metrics. SFs whose success probability is exactly zero are dropped
/// and the remaining SF weights renormalized.
pub fn delays(state: &SteadyState, cfg: &ScenarioConfig) -> Result<Delays> {
    let t = &cfg.airtimes;
    let gamma = t.t_data.map(|d| (cfg.delta_sb1 + 1.0) * d + cfg.mu_retx);
    let phi = SfVector::from_fn(|i| {
        state.s_sb1[i] * (1.0 + t.t_ack1[i]) + state.s_sb2 * (2.0 + t.t_ack2[i])
    });
    if cfg.alpha <= 0.0 {
        return Err(Error::UndefinedDelay);
    }
    let (p_ul, p_dl) = state.attempts(cfg.m);
    let p = cfg.p_confirmed.as_vector();

    let mean = |rows: &[Vec<f64>; NUM_SF], per_attempt: &dyn Fn(usize, f64) -> f64| {
        let mut acc = 0.0;
        let mut weight = 0.0;
        for i in 0..NUM_SF {
            let mass: f64 = rows[i].iter().sum();
            if p[i] <= 0.0 || mass <= 0.0 {
                continue;
            }
            let inner: f64 = rows[i]
                .iter()
                .enumerate()
                .map(|(j, pj)| pj / mass * per_attempt(i, (j + 1) as f64))
                .sum();
            acc += p[i] * inner;
            weight += p[i];
        }
        if weight > 0.0 {
            Ok(acc / weight)
        } else {
            Err(Error::UndefinedDelay)
        }
    };
    let delta_ul = mean(&p_ul, &|i, j| t.t_data[i] + (j - 1.0) * gamma[i])?;
    let delta_dl = mean(&p_dl, &|i, j| {
        t.t_data[i] + (j - 1.0) * gamma[i] + j * phi[i]
    })?;
    Ok(Delays {
        delta_ul,
        delta_dl,
        gamma,
        phi,
    })
}

/// Jain's index `(Σx)² / (n Σx²)`.
pub fn fairness(x: &[f64]) -> Result<f64> {
    if x.is_empty() || x.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Validation(
            "fairness needs a non-empty vector of finite, non-negative entries".into(),
        ));
    }
    let sum: f64 = x.iter().sum();
    let sq: f64 = x.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return Err(Error::ZeroFairness);
    }
    Ok(sum * sum / (x.len() as f64 * sq))
}

/// Throughput proxies per populated (SF, traffic type) category: `UU_i` for
/// unconfirmed and `CU_i` for confirmed devices. Categories without devices
/// are left out.
pub fn fairness_categories(rel: &Reliability, cfg: &ScenarioConfig) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * NUM_SF);
    for i in 0..NUM_SF {
        if (1.0 - cfg.alpha) * cfg.p_unconfirmed[i] > 0.0 {
            x.push(rel.uu_per_sf[i]);
        }
    }
    for i in 0..NUM_SF {
        if cfg.alpha * cfg.p_confirmed[i] > 0.0 {
            x.push(rel.cu_per_sf[i]);
        }
    }
    x
}

/// Share of confirmed packets acknowledged at exactly attempt `j`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetxDistribution {
    /// `shares[j - 1]` for `j = 1..=m`.
    pub shares: Vec<f64>,
    /// Never acknowledged within `m` attempts.
    pub failure: f64,
}

pub fn retx_distribution(state: &SteadyState, cfg: &ScenarioConfig) -> RetxDistribution {
    let (_, p_dl) = state.attempts(cfg.m);
    let p = cfg.p_confirmed.as_vector();
    let shares: Vec<f64> = (0..cfg.m as usize)
        .map(|j| (0..NUM_SF).map(|i| p[i] * p_dl[i][j]).sum())
        .collect();
    let failure = (1.0 - shares.iter().sum::<f64>()).max(0.0);
    RetxDistribution { shares, failure }
}

/// PHY loss split in the order a gateway checks it: no free demodulator,
/// aborted/blocked by a GW transmission, interference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub f_nmd: f64,
    pub f_gwtx: f64,
    pub f_int: f64,
}

fn loss_weights(state: &SteadyState, cfg: &ScenarioConfig) -> SfVector {
    if state.rates.d.sum() > 0.0 {
        state.rates.d
    } else {
        cfg.p_confirmed
            .as_vector()
            .scale(cfg.alpha)
            .zip_with(cfg.p_unconfirmed.as_vector(), |c, u| c + (1.0 - cfg.alpha) * u)
    }
}

/// Expectations are over the PHY SF share `d`; without traffic the
/// application SF mix stands in so `F_NMD + F_GWTX + F_INT + E[S_UL] = 1`
/// still holds.
pub fn loss_decomposition(state: &SteadyState, cfg: &ScenarioConfig) -> LossBreakdown {
    let weights = loss_weights(state, cfg);
    let sd = state.demod.s_demod;
    LossBreakdown {
        f_nmd: 1.0 - sd,
        f_gwtx: weights.dot(&state.s_tx.map(|s| sd * (1.0 - s))),
        f_int: weights.dot(&state.s_tx.zip_with(&state.s_int, |tx, int| sd * tx * (1.0 - int))),
    }
}

/// Expected PHY success `E_d[S_UL]` with the same weights as
/// [`loss_decomposition`].
pub fn mean_phy_success(state: &SteadyState, cfg: &ScenarioConfig) -> f64 {
    loss_weights(state, cfg).dot(&state.s_ul)
}

/// Every metric for one solved scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub uu: f64,
    pub cu: f64,
    pub cd: f64,
    pub uu_per_sf: SfVector,
    pub cu_per_sf: SfVector,
    pub cd_per_sf: SfVector,
    /// `None` without confirmed traffic.
    pub delta_ul: Option<f64>,
    pub delta_dl: Option<f64>,
    pub jain: f64,
    pub retx: RetxDistribution,
    pub f_nmd: f64,
    pub f_gwtx: f64,
    pub f_int: f64,
}

pub fn report(state: &SteadyState, cfg: &ScenarioConfig) -> Result<MetricsReport> {
    let rel = reliability(state, cfg);
    let (delta_ul, delta_dl) = match delays(state, cfg) {
        Ok(d) => (Some(d.delta_ul), Some(d.delta_dl)),
        Err(Error::UndefinedDelay) => (None, None),
        Err(e) => return Err(e),
    };
    let jain = fairness(&fairness_categories(&rel, cfg))?;
    let loss = loss_decomposition(state, cfg);
    Ok(MetricsReport {
        uu: rel.uu,
        cu: rel.cu,
        cd: rel.cd,
        uu_per_sf: rel.uu_per_sf,
        cu_per_sf: rel.cu_per_sf,
        cd_per_sf: rel.cd_per_sf,
        delta_ul,
        delta_dl,
        jain,
        retx: retx_distribution(state, cfg),
        f_nmd: loss.f_nmd,
        f_gwtx: loss.f_gwtx,
        f_int: loss.f_int,
    })
}
