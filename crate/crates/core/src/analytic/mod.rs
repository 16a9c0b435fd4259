//! Analytic steady-state model of a single-gateway cell.
//!
//! Uplink traffic is a superposition of Poisson processes, one per SF and
//! frequency channel. It is thinned by interference (with two-packet capture),
//! by the gateway being busy transmitting, and by demodulator exhaustion. ACK
//! opportunities in RX1 and RX2 are alternating ON/OFF renewal processes whose
//! OFF periods come from the gateway duty cycle. Uplink and downlink success
//! probabilities depend on each other through the retransmission load, so the
//! per-SF vectors `S_UL` and `S_DL` are found by fixed-point iteration.

mod downlink;
mod solver;
mod uplink;

pub use downlink::{
    ack_interference_survival, attempt_distributions, dl_success, gw_may_transmit,
    subband_states, DlSuccess,
};
pub use solver::{evaluate, solve, SolverOptions};
pub use uplink::{app_rates, demod_chain, gw_tx_survival, interference_survival, phy_rates};

use serde::Serialize;

use crate::scenario::{SfVector, NUM_SF};

/// Per-SF, per-attempt probabilities `P_{i,j}`, `j = 1..=m` (index `j - 1`).
pub type AttemptMatrix = [Vec<f64>; NUM_SF];

/// Uplink rates per frequency channel, pck/s.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrafficRates {
    pub r_c_app: SfVector,
    pub r_u_app: SfVector,
    pub r_c_phy: SfVector,
    pub r_u_phy: SfVector,
    pub r_phy: SfVector,
    /// SF share of PHY transmissions; all zero when there is no traffic.
    pub d: SfVector,
}

impl TrafficRates {
    /// Aggregate PHY rate over all channels and SFs.
    pub fn total_phy(&self, c_channels: u32) -> f64 {
        c_channels as f64 * self.r_phy.sum()
    }
}

/// ON/OFF availability of one sub-band for ACK transmissions.
///
/// An idle sub-band (no ACK attempts) is always ON: `e_on` is infinite,
/// `e_off` is zero and `b` is all zero.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubBandState {
    /// ACK attempt rate per channel and SF.
    pub r: SfVector,
    /// SF distribution of ACK attempts.
    pub b: SfVector,
    pub e_on: f64,
    pub e_off: f64,
    pub p_on: f64,
    pub p_off: f64,
    /// Probability that the gateway may transmit (TX/RX prioritization).
    pub p_t: f64,
}

impl SubBandState {
    pub fn is_idle(&self) -> bool {
        self.e_on.is_infinite()
    }

    /// Mean ON+OFF cycle length.
    pub fn cycle(&self) -> f64 {
        self.e_on + self.e_off
    }
}

/// Sequential demodulator chain: packet goes to the first free chain.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DemodChainState {
    /// Mean lock time of a chain.
    pub e_lock: f64,
    /// Mean available time of chain j (infinite without traffic).
    pub e_avail: Vec<f64>,
    /// Probability that chain j is locked.
    pub p_lock: Vec<f64>,
    /// Probability that a packet finds a free chain.
    pub s_demod: f64,
}

/// A fixed point of the model with every intermediate quantity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SteadyState {
    pub s_ul: SfVector,
    pub s_dl: SfVector,
    pub s_int: SfVector,
    pub s_tx: SfVector,
    pub f_tx1: SfVector,
    pub f_tx2: SfVector,
    pub s_int_ack1: SfVector,
    pub s_sb1: SfVector,
    pub s_sb2: f64,
    pub rates: TrafficRates,
    /// SB1 then SB2.
    pub sb: [SubBandState; 2],
    pub demod: DemodChainState,
    pub iterations: usize,
    /// Sup-norm change of `(S_UL, S_DL)` in the last iteration.
    pub residual: f64,
}

impl SteadyState {
    /// `P^UL_{i,j}` and `P^DL_{i,j}` at this state for `m` attempts.
    pub fn attempts(&self, m: u32) -> (AttemptMatrix, AttemptMatrix) {
        let mut ul: AttemptMatrix = Default::default();
        let mut dl: AttemptMatrix = Default::default();
        for i in 0..NUM_SF {
            let (u, d) = attempt_distributions(self.s_ul[i], self.s_dl[i], m);
            ul[i] = u;
            dl[i] = d;
        }
        (ul, dl)
    }
}
