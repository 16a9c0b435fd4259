use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::report::{Audit, Counts};
use super::{ArrivalModel, CaptureModel, Device, SimConfig};
use crate::error::{Error, Result};
use crate::scenario::{ScenarioConfig, SubBand, NUM_SF};

/// History entries older than this (seconds) can no longer overlap anything
/// still to be checked.
const HISTORY_SPAN: f64 = 5.0;
/// Slack after the counting window for its last transmissions to resolve.
const TAIL: f64 = 10.0;

#[derive(Clone, Copy, Debug)]
enum Ev {
    Arrival(usize),
    TxStart(usize),
    TxEnd(usize),
    Rx1(usize),
    Rx2(usize),
    AckEnd(usize, SubBand),
}

struct Scheduled {
    time: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Locked,
    Delivered,
    Interference,
    GwTx,
    NoDemod,
}

impl Outcome {
    fn name(self) -> &'static str {
        match self {
            Self::Locked => "locked",
            Self::Delivered => "delivered",
            Self::Interference => "interference",
            Self::GwTx => "gw_tx",
            Self::NoDemod => "no_demod",
        }
    }
}

struct Tx {
    device: usize,
    packet: usize,
    sf: usize,
    channel: usize,
    start: f64,
    end: f64,
    outcome: Outcome,
    counted: bool,
}

struct Packet {
    device: usize,
    counted: bool,
    first_start: f64,
    attempts: u32,
    delivered_at: Option<f64>,
}

struct DeviceState {
    queue: VecDeque<usize>,
    active: Option<usize>,
    dc_free: f64,
    prev_start: f64,
    prev_airtime: f64,
}

pub(super) struct Engine<'a> {
    cfg: &'a SimConfig,
    s: &'a ScenarioConfig,
    devices: Vec<Device>,
    state: Vec<DeviceState>,
    rng: ChaCha8Rng,
    trace: Option<&'a mut dyn Write>,

    heap: BinaryHeap<Scheduled>,
    seq: u64,
    now: f64,
    warmup: f64,

    txs: Vec<Tx>,
    packets: Vec<Packet>,
    /// Transmissions per (channel, SF), ordered by start.
    history: Vec<VecDeque<usize>>,
    locked: Vec<usize>,
    gw_tx_until: f64,
    sb_free: [f64; 2],
    pending: u64,

    counts: Counts,
    audit: Audit,
}

impl<'a> Engine<'a> {
    pub(super) fn new(
        cfg: &'a SimConfig,
        devices: Vec<Device>,
        rng: ChaCha8Rng,
        trace: Option<&'a mut dyn Write>,
    ) -> Self {
        let state = devices
            .iter()
            .map(|_| DeviceState {
                queue: VecDeque::new(),
                active: None,
                dc_free: 0.0,
                prev_start: f64::NEG_INFINITY,
                prev_airtime: 0.0,
            })
            .collect();
        Self {
            cfg,
            s: &cfg.scenario,
            devices,
            state,
            rng,
            trace,
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            warmup: cfg.warmup(),
            txs: Vec::new(),
            packets: Vec::new(),
            history: (0..cfg.scenario.c_channels as usize * NUM_SF)
                .map(|_| VecDeque::new())
                .collect(),
            locked: Vec::new(),
            gw_tx_until: f64::NEG_INFINITY,
            sb_free: [0.0; 2],
            pending: 0,
            counts: Counts::default(),
            audit: Audit::default(),
        }
    }

    fn at(&mut self, time: f64, ev: Ev) {
        self.seq += 1;
        self.heap.push(Scheduled {
            time,
            seq: self.seq,
            ev,
        });
    }

    fn log(&mut self, device: usize, channel: Option<usize>, kind: &str, outcome: &str) {
        if let Some(w) = self.trace.as_mut() {
            let ch = channel.map(|c| c.to_string()).unwrap_or_default();
            let sf = self.devices[device].sf;
            let _ = writeln!(w, "{:.6},{device},{sf},{ch},{kind},{outcome}", self.now);
        }
    }

    fn in_window(&self, t: f64) -> bool {
        t >= self.warmup && t <= self.cfg.sim_duration
    }

    fn retx_timeout(&mut self) -> f64 {
        let mu = self.s.mu_retx;
        self.rng.random_range(mu - 1.0..=mu + 1.0)
    }

    pub(super) fn run(mut self) -> Result<(Counts, Audit)> {
        let lambda = self.s.lambda_total;
        if lambda > 0.0 {
            match self.cfg.arrival_model {
                ArrivalModel::Poisson => {
                    let t = Exp::new(lambda).expect("positive rate").sample(&mut self.rng);
                    self.at(t, Ev::Arrival(usize::MAX));
                }
                ArrivalModel::Periodic => {
                    let period = self.cfg.n_devices as f64 / lambda;
                    for d in 0..self.devices.len() {
                        let t = period * self.rng.random::<f64>();
                        self.at(t, Ev::Arrival(d));
                    }
                }
            }
        }

        let mut events = 0u64;
        let stop = self.cfg.sim_duration + TAIL;
        while let Some(Scheduled { time, ev, .. }) = self.heap.pop() {
            self.now = time;
            if time > stop && self.pending == 0 {
                break;
            }
            events += 1;
            if events > self.cfg.max_events {
                return Err(Error::Simulation(format!(
                    "event budget of {} exhausted at t = {time}",
                    self.cfg.max_events
                )));
            }
            match ev {
                Ev::Arrival(d) => self.arrival(d),
                Ev::TxStart(d) => self.tx_start(d),
                Ev::TxEnd(k) => self.tx_end(k),
                Ev::Rx1(k) => self.rx_window(k, SubBand::Sb1),
                Ev::Rx2(k) => self.rx_window(k, SubBand::Sb2),
                Ev::AckEnd(k, band) => self.ack_end(k, band),
            }
        }
        for tx in &self.txs {
            if tx.counted && tx.outcome == Outcome::Locked {
                self.audit.unclassified += 1;
            }
        }
        Ok((self.counts, self.audit))
    }

    fn arrival(&mut self, tag: usize) {
        let lambda = self.s.lambda_total;
        let device = if tag == usize::MAX {
            let next = self.now + Exp::new(lambda).expect("positive rate").sample(&mut self.rng);
            self.at(next, Ev::Arrival(usize::MAX));
            self.rng.random_range(0..self.devices.len())
        } else {
            let period = self.cfg.n_devices as f64 / lambda;
            self.at(self.now + period, Ev::Arrival(tag));
            tag
        };
        let counted = self.in_window(self.now);
        let id = self.packets.len();
        self.packets.push(Packet {
            device,
            counted,
            first_start: f64::NAN,
            attempts: 0,
            delivered_at: None,
        });
        if counted {
            self.pending += 1;
        }
        self.log(device, None, "arrival", "");

        let st = &mut self.state[device];
        if st.active.is_none() {
            st.active = Some(id);
            let t = self.now.max(st.dc_free);
            self.at(t, Ev::TxStart(device));
        } else if st.queue.len() < self.cfg.queue_capacity {
            st.queue.push_back(id);
        } else {
            let sf = self.devices[device].sf.index();
            if counted {
                self.counts.queue_dropped[sf] += 1;
            }
            self.log(device, None, "drop", "queue_full");
            self.finish_packet(id, false, None);
        }
    }

    fn tx_start(&mut self, device: usize) {
        let now = self.now;
        let packet = self.state[device].active.expect("transmitting device has a packet");
        let sf = self.devices[device].sf.index();
        let airtime = self.s.airtimes.t_data[sf];
        let channel = self.rng.random_range(0..self.s.c_channels as usize);

        let st = &mut self.state[device];
        if now < st.prev_start + (1.0 + self.s.delta_sb1) * st.prev_airtime - 1e-9 {
            self.audit.dc_violations += 1;
        }
        st.prev_start = now;
        st.prev_airtime = airtime;
        st.dc_free = now + (1.0 + self.s.delta_sb1) * airtime;

        let p = &mut self.packets[packet];
        p.attempts += 1;
        if p.first_start.is_nan() {
            p.first_start = now;
        }

        let outcome = if self.locked.len() >= self.s.n_demodulators as usize {
            Outcome::NoDemod
        } else if now < self.gw_tx_until {
            Outcome::GwTx
        } else {
            Outcome::Locked
        };
        let k = self.txs.len();
        self.txs.push(Tx {
            device,
            packet,
            sf,
            channel,
            start: now,
            end: now + airtime,
            outcome,
            counted: self.in_window(now),
        });
        if outcome == Outcome::Locked {
            self.locked.push(k);
            if self.locked.len() > self.s.n_demodulators as usize {
                self.audit.demod_overflows += 1;
            }
        } else {
            self.tally_phy(k);
        }

        let h = &mut self.history[channel * NUM_SF + sf];
        while h.front().is_some_and(|&j| self.txs[j].end < now - HISTORY_SPAN) {
            h.pop_front();
        }
        h.push_back(k);
        self.log(device, Some(channel), "tx_start", outcome.name());
        self.at(now + airtime, Ev::TxEnd(k));
    }

    fn tally_phy(&mut self, k: usize) {
        let tx = &self.txs[k];
        if !tx.counted {
            return;
        }
        let slot = match tx.outcome {
            Outcome::Delivered => &mut self.counts.phy_delivered,
            Outcome::Interference => &mut self.counts.lost_interference,
            Outcome::GwTx => &mut self.counts.lost_gw_tx,
            Outcome::NoDemod => &mut self.counts.lost_no_demod,
            Outcome::Locked => return,
        };
        slot[tx.sf] += 1;
    }

    /// Whether `victim` (an uplink at the GW, or an ACK at device `rx_device`
    /// over `[start, end]`) survives same-channel, same-SF uplinks.
    fn survives(&mut self, victim: usize, start: f64, end: f64, at_device: bool) -> bool {
        let v = &self.txs[victim];
        let list = &self.history[v.channel * NUM_SF + v.sf];
        let me = &self.devices[v.device];
        let mut count = 0usize;
        let mut power = 0.0;
        let n = self.cfg.path_loss_exponent;
        for &j in list {
            let o = &self.txs[j];
            if j == victim || o.device == v.device {
                continue;
            }
            let overlap = o.end.min(end) - o.start.max(start);
            if overlap <= 0.0 {
                continue;
            }
            count += 1;
            if self.cfg.capture_model == CaptureModel::Geometric {
                let src = &self.devices[o.device];
                let d = if at_device {
                    (src.x - me.x).hypot(src.y - me.y)
                } else {
                    src.distance()
                };
                power += d.max(1.0).powf(-n) * overlap / (end - start);
            }
        }
        match self.cfg.capture_model {
            CaptureModel::Probabilistic => match count {
                0 => true,
                1 => {
                    let w = if at_device { self.s.w_ed } else { self.s.w_gw };
                    self.rng.random::<f64>() < w
                }
                _ => false,
            },
            CaptureModel::Geometric => {
                count == 0 || me.distance().max(1.0).powf(-n) >= 10f64.powf(self.cfg.cr_db / 10.0) * power
            }
        }
    }

    fn tx_end(&mut self, k: usize) {
        if self.txs[k].outcome == Outcome::Locked {
            self.locked.retain(|&j| j != k);
            let (start, end) = (self.txs[k].start, self.txs[k].end);
            self.txs[k].outcome = if self.survives(k, start, end, false) {
                Outcome::Delivered
            } else {
                Outcome::Interference
            };
            self.tally_phy(k);
        }
        let tx = &self.txs[k];
        let (device, packet, channel, end) = (tx.device, tx.packet, tx.channel, tx.end);
        let delivered = tx.outcome == Outcome::Delivered;
        self.log(device, Some(channel), "tx_end", self.txs[k].outcome.name());
        let p = &mut self.packets[packet];
        if delivered && p.delivered_at.is_none() {
            p.delivered_at = Some(end);
        }
        if self.devices[device].confirmed {
            self.at(end + 1.0, Ev::Rx1(k));
        } else if p.attempts < self.s.h {
            let t = (end + self.retx_timeout()).max(self.state[device].dc_free);
            self.at(t, Ev::TxStart(device));
        } else {
            self.finish_packet(packet, false, None);
            self.next_packet(device, end);
        }
    }

    fn gw_may_transmit(&self, band: SubBand) -> bool {
        self.now >= self.sb_free[band.index()]
            && self.now >= self.gw_tx_until
            && (self.s.tau(band) || self.locked.is_empty())
    }

    fn rx_window(&mut self, k: usize, band: SubBand) {
        let delivered = self.txs[k].outcome == Outcome::Delivered;
        let (sf, device, channel) = (self.txs[k].sf, self.txs[k].device, self.txs[k].channel);
        if delivered && self.gw_may_transmit(band) {
            let airtime = self.s.t_ack(band)[sf];
            for j in std::mem::take(&mut self.locked) {
                self.txs[j].outcome = Outcome::GwTx;
                self.tally_phy(j);
            }
            if self.now < self.sb_free[band.index()] - 1e-9 {
                self.audit.gw_dc_violations += 1;
            }
            self.gw_tx_until = self.now + airtime;
            self.sb_free[band.index()] = self.now + (1.0 + self.s.delta(band)) * airtime;
            if self.txs[k].counted {
                match band {
                    SubBand::Sb1 => self.counts.ack_rx1[sf] += 1,
                    SubBand::Sb2 => self.counts.ack_rx2[sf] += 1,
                }
            }
            let ch = match band {
                SubBand::Sb1 => Some(channel),
                SubBand::Sb2 => None,
            };
            self.log(device, ch, "ack_start", if band == SubBand::Sb1 { "rx1" } else { "rx2" });
            self.at(self.now + airtime, Ev::AckEnd(k, band));
            return;
        }
        match band {
            SubBand::Sb1 => {
                let t = self.txs[k].end + 2.0;
                self.at(t, Ev::Rx2(k));
            }
            SubBand::Sb2 => {
                if delivered && self.txs[k].counted {
                    self.counts.no_ack_window[sf] += 1;
                }
                let close = self.now + self.s.airtimes.t_ack2[sf];
                self.attempt_failed(device, close);
            }
        }
    }

    fn ack_end(&mut self, k: usize, band: SubBand) {
        let (device, sf) = (self.txs[k].device, self.txs[k].sf);
        let ok = match band {
            SubBand::Sb2 => true,
            SubBand::Sb1 => {
                let start = self.now - self.s.airtimes.t_ack1[sf];
                self.survives(k, start, self.now, true)
            }
        };
        self.log(device, None, "ack_end", if ok { "ok" } else { "interfered" });
        if ok {
            let packet = self.txs[k].packet;
            self.finish_packet(packet, true, Some(self.now));
            self.next_packet(device, self.now);
        } else {
            if self.txs[k].counted {
                self.counts.ack_rx1_interfered[sf] += 1;
            }
            let close = self.txs[k].end + 2.0 + self.s.airtimes.t_ack2[sf];
            self.attempt_failed(device, close);
        }
    }

    fn attempt_failed(&mut self, device: usize, close: f64) {
        let packet = self.state[device].active.expect("device has a packet");
        if self.packets[packet].attempts < self.s.m {
            let t = (close + self.retx_timeout()).max(self.state[device].dc_free);
            self.at(t, Ev::TxStart(device));
        } else {
            self.finish_packet(packet, false, None);
            self.next_packet(device, close);
        }
    }

    fn next_packet(&mut self, device: usize, free_at: f64) {
        let st = &mut self.state[device];
        st.active = st.queue.pop_front();
        if st.active.is_some() {
            let t = free_at.max(st.dc_free).max(self.now);
            self.at(t, Ev::TxStart(device));
        }
    }

    /// Final application-level accounting of a packet.
    fn finish_packet(&mut self, id: usize, acked: bool, acked_at: Option<f64>) {
        let p = &self.packets[id];
        if !p.counted {
            return;
        }
        self.pending -= 1;
        let d = &self.devices[p.device];
        let sf = d.sf.index();
        let c = &mut self.counts;
        if d.confirmed {
            c.confirmed_generated[sf] += 1;
            if let Some(t) = p.delivered_at {
                c.confirmed_delivered[sf] += 1;
                c.delay_ul_sum += t - p.first_start;
                c.delay_ul_n += 1;
            }
            if acked {
                c.confirmed_acked[sf] += 1;
                c.delay_dl_sum += acked_at.expect("ack time") - p.first_start;
                c.delay_dl_n += 1;
            }
        } else {
            c.unconfirmed_generated[sf] += 1;
            if p.delivered_at.is_some() {
                c.unconfirmed_delivered[sf] += 1;
            }
        }
    }
}
