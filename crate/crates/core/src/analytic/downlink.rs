use crate::error::{Error, Result};
use crate::scenario::{ScenarioConfig, SfVector, SpreadingFactor, SubBand, NUM_SF};

use super::{SubBandState, TrafficRates};

/// Probability that the gateway is allowed to start an ACK on `band`: always
/// with TX priority, otherwise only if no uplink reception is in progress.
pub fn gw_may_transmit(cfg: &ScenarioConfig, rates: &TrafficRates, band: SubBand) -> f64 {
    if cfg.tau(band) {
        return 1.0;
    }
    let busy = cfg.c_channels as f64 * rates.r_phy.dot(&cfg.airtimes.t_data);
    (-busy).exp()
}

fn renewal_state(
    cfg: &ScenarioConfig,
    band: SubBand,
    r: SfVector,
    p_t: f64,
) -> SubBandState {
    let per_channel = r.sum();
    if per_channel <= 0.0 {
        return SubBandState {
            r,
            b: SfVector::ZERO,
            e_on: f64::INFINITY,
            e_off: 0.0,
            p_on: 1.0,
            p_off: 0.0,
            p_t,
        };
    }
    let e_on = 1.0 / (cfg.c_channels as f64 * per_channel);
    let b = r.scale(1.0 / per_channel);
    let e_off = (1.0 + cfg.delta(band)) * b.dot(cfg.t_ack(band));
    let cycle = e_on + e_off;
    SubBandState {
        r,
        b,
        e_on,
        e_off,
        p_on: e_on / cycle,
        p_off: e_off / cycle,
        p_t,
    }
}

/// ON/OFF renewal states of SB1 and SB2 for the ACK traffic generated by the
/// current uplink success vector. SB2 only sees ACKs that SB1 could not take.
pub fn subband_states(
    cfg: &ScenarioConfig,
    rates: &TrafficRates,
    s_ul: &SfVector,
) -> [SubBandState; 2] {
    let r1 = rates.r_c_phy.zip_with(s_ul, |r, s| r * s);
    let sb1 = renewal_state(
        cfg,
        SubBand::Sb1,
        r1,
        gw_may_transmit(cfg, rates, SubBand::Sb1),
    );
    let fall_through = sb1.p_off + sb1.p_on * (1.0 - sb1.p_t);
    let r2 = r1.scale(fall_through);
    let sb2 = renewal_state(
        cfg,
        SubBand::Sb2,
        r2,
        gw_may_transmit(cfg, rates, SubBand::Sb2),
    );
    [sb1, sb2]
}

/// Probability that an RX1 ACK at SF `sf` survives uplink interference at the
/// end device.
///
/// The vulnerable window is `T_ack1 + T_data` with TX priority (an uplink
/// already on the air can hit the ACK) and `T_ack1` without it. The flag
/// gates the window in both the no-collision and the capture term; gating
/// only the first would push the value above 1 when `tau1` is off.
pub fn ack_interference_survival(
    cfg: &ScenarioConfig,
    rates: &TrafficRates,
    sf: SpreadingFactor,
) -> f64 {
    let r = rates.r_phy[sf];
    let t_ack = cfg.airtimes.t_ack1[sf];
    let t_data = cfg.airtimes.t_data[sf];
    let window = if cfg.tau1 { t_ack + t_data } else { t_ack };
    (-r * window).exp() * (1.0 + r * window * cfg.w_ed)
}

/// Downlink success split by receive window.
#[derive(Clone, Debug, PartialEq)]
pub struct DlSuccess {
    pub s_sb1: SfVector,
    pub s_sb2: f64,
    pub s_dl: SfVector,
}

/// ACK delivered in RX1 (SB1 ON, GW may transmit, no interference) or, if SB1
/// is unusable, in RX2 (SB2 ON, GW may transmit).
pub fn dl_success(sb: &[SubBandState; 2], s_int_ack1: &SfVector) -> Result<DlSuccess> {
    let [sb1, sb2] = sb;
    let s_sb1 = s_int_ack1.scale(sb1.p_on * sb1.p_t);
    let s_sb2 = (sb1.p_off + sb1.p_on * (1.0 - sb1.p_t)) * sb2.p_on * sb2.p_t;
    let s_dl = s_sb1.map(|s| s + s_sb2);
    for i in 0..NUM_SF {
        if s_dl[i] > 1.0 + 1e-9 {
            return Err(Error::Consistency(format!(
                "S_DL for {} is {} > 1",
                SpreadingFactor::from_index(i),
                s_dl[i]
            )));
        }
    }
    Ok(DlSuccess {
        s_sb1,
        s_sb2,
        s_dl,
    })
}

/// Per-attempt success probabilities for `m` attempts, neglecting the time
/// correlation of retransmissions: `(P_UL, P_DL)` with
/// `P_UL_j = S_UL (1 - S_UL)^(j-1)` and `P_DL_j = q (1 - q)^(j-1)`, `q = S_UL S_DL`.
pub fn attempt_distributions(s_ul: f64, s_dl: f64, m: u32) -> (Vec<f64>, Vec<f64>) {
    let geometric = |q: f64| -> Vec<f64> {
        let mut out = Vec::with_capacity(m as usize);
        let mut miss = 1.0;
        for _ in 0..m {
            out.push(q * miss);
            miss *= 1.0 - q;
        }
        out
    };
    (geometric(s_ul), geometric(s_ul * s_dl))
}
