//! Event-driven Monte-Carlo simulator of the cell.
//!
//! Every device keeps its own duty-cycle timer, the gateway has a finite pool
//! of demodulators, cannot receive while transmitting and obeys its own
//! per-sub-band duty cycle, and retransmissions happen at real times. Used to
//! check the analytic model against a system without its independence
//! assumptions.

mod engine;
mod report;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::{ScenarioConfig, SpreadingFactor, NUM_SF};

pub use report::{Audit, Counts, Empirical, Estimate, Replication, SimReport, Summary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalModel {
    /// Superposition of independent per-device Poisson processes.
    Poisson,
    /// One packet every `n_devices / λ` seconds per device, random phase.
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureModel {
    /// A packet overlapped by exactly one same-SF packet survives with
    /// probability `w_gw` (uplink) or `w_ed` (ACK); two or more overlaps
    /// always destroy it.
    Probabilistic,
    /// Log-distance path loss from random positions; a packet survives if
    /// its power beats the overlap-weighted sum of interferers by `cr_db`.
    Geometric,
}

impl ArrivalModel {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" => Ok(Self::Poisson),
            "periodic" => Ok(Self::Periodic),
            _ => Err(Error::Validation(format!("unknown arrival model {s:?}"))),
        }
    }
}

impl CaptureModel {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "probabilistic" => Ok(Self::Probabilistic),
            "geometric" => Ok(Self::Geometric),
            _ => Err(Error::Validation(format!("unknown capture model {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub scenario: ScenarioConfig,
    pub n_devices: usize,
    pub arrival_model: ArrivalModel,
    pub capture_model: CaptureModel,
    pub radius_m: f64,
    pub path_loss_exponent: f64,
    pub cr_db: f64,
    /// End of the counting window, seconds.
    pub sim_duration: f64,
    /// Start of the counting window; `None` picks ten times the largest
    /// retransmission spacing.
    pub warmup: Option<f64>,
    pub seed: u64,
    pub n_replications: usize,
    /// Application packets a device buffers while busy; overflow is lost.
    pub queue_capacity: usize,
    /// Abort a replication after this many events.
    pub max_events: u64,
}

impl SimConfig {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self {
            scenario,
            n_devices: 1200,
            arrival_model: ArrivalModel::Poisson,
            capture_model: CaptureModel::Probabilistic,
            radius_m: 2500.0,
            path_loss_exponent: 3.76,
            cr_db: 6.0,
            sim_duration: 20_000.0,
            warmup: None,
            seed: 1,
            n_replications: 10,
            queue_capacity: 64,
            max_events: 200_000_000,
        }
    }

    pub fn warmup(&self) -> f64 {
        self.warmup.unwrap_or_else(|| {
            let t = &self.scenario.airtimes.t_data;
            let gamma = t
                .iter()
                .map(|d| (self.scenario.delta_sb1 + 1.0) * d + self.scenario.mu_retx)
                .fold(0.0, f64::max);
            10.0 * gamma
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let warmup = self.warmup();
        if !(warmup >= 0.0) || !(self.sim_duration > warmup) || !self.sim_duration.is_finite() {
            return Err(Error::Validation(format!(
                "need sim_duration > warmup >= 0 (got {} and {warmup})",
                self.sim_duration
            )));
        }
        if self.n_devices == 0 || self.n_replications == 0 || self.queue_capacity == 0 {
            return Err(Error::Validation(
                "n_devices, n_replications and queue_capacity must be >= 1".into(),
            ));
        }
        if !(self.radius_m > 0.0) || !(self.path_loss_exponent > 0.0) || !self.cr_db.is_finite() {
            return Err(Error::Validation(
                "radius_m and path_loss_exponent must be positive, cr_db finite".into(),
            ));
        }
        if self.scenario.mu_retx < 1.0 {
            return Err(Error::Validation(
                "the simulator draws retransmission timeouts from [mu - 1, mu + 1] and needs mu >= 1"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Device {
    pub x: f64,
    pub y: f64,
    pub sf: SpreadingFactor,
    pub confirmed: bool,
}

impl Device {
    pub fn distance(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

fn sample_index(rng: &mut ChaCha8Rng, p: &[f64; NUM_SF]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // rounding leaves a sliver above the last cumulative sum
    p.iter().rposition(|pi| *pi > 0.0).unwrap_or(NUM_SF - 1)
}

/// Uniform positions on the disc, traffic type with probability `α` and SF
/// drawn from the matching distribution.
pub fn place_devices(cfg: &SimConfig, seed: u64) -> Vec<Device> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    place_with(cfg, &mut rng)
}

fn place_with(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<Device> {
    let s = &cfg.scenario;
    (0..cfg.n_devices)
        .map(|_| {
            let r = cfg.radius_m * rng.random::<f64>().sqrt();
            let phi = std::f64::consts::TAU * rng.random::<f64>();
            let confirmed = rng.random::<f64>() < s.alpha;
            let p = if confirmed {
                s.p_confirmed.values()
            } else {
                s.p_unconfirmed.values()
            };
            Device {
                x: r * phi.cos(),
                y: r * phi.sin(),
                sf: SpreadingFactor::from_index(sample_index(rng, &p)),
                confirmed,
            }
        })
        .collect()
}

fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn run_replication<'a>(
    cfg: &'a SimConfig,
    rep: usize,
    trace: Option<&'a mut dyn Write>,
) -> Result<Replication> {
    let mut rng = replication_rng(cfg.seed, rep);
    let devices = place_with(cfg, &mut rng);
    let (counts, audit) = engine::Engine::new(cfg, devices, rng, trace).run()?;
    if !audit.is_clean() {
        return Err(Error::Simulation(format!(
            "replication {rep} violated an invariant: {audit:?}"
        )));
    }
    Ok(Replication::new(counts, audit, &cfg.scenario))
}

/// Runs all replications (in parallel) and pools them.
pub fn run(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let reps = (0..cfg.n_replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimReport::from_replications(reps, &cfg.scenario))
}

/// Like [`run`], additionally writing an event trace of replication 0 as
/// comma-separated lines `time,device,sf,channel,kind,outcome`.
pub fn run_traced(cfg: &SimConfig, trace: &mut dyn Write) -> Result<SimReport> {
    cfg.validate()?;
    writeln!(trace, "time,device,sf,channel,kind,outcome")
        .map_err(|e| Error::Simulation(format!("trace: {e}")))?;
    let first = run_replication(cfg, 0, Some(trace))?;
    let rest = (1..cfg.n_replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep, None))
        .collect::<Result<Vec<_>>>()?;
    let mut reps = vec![first];
    reps.extend(rest);
    Ok(SimReport::from_replications(reps, &cfg.scenario))
}

/// PHY loss fractions `(F_NMD, F_GWTX, F_INT)` over pooled transmissions.
pub fn loss_breakdown(report: &SimReport) -> Option<(f64, f64, f64)> {
    let e = &report.pooled;
    Some((e.f_nmd?, e.f_gwtx?, e.f_int?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::SfDistribution;

    fn quick(scenario: ScenarioConfig) -> SimConfig {
        SimConfig {
            sim_duration: 4000.0,
            warmup: Some(500.0),
            n_replications: 2,
            ..SimConfig::new(scenario)
        }
    }

    #[test]
    fn positions_inside_disc_and_alpha_one() {
        let cfg = SimConfig::new(ScenarioConfig::default());
        let devices = place_devices(&cfg, 7);
        assert_eq!(devices.len(), 1200);
        assert!(devices.iter().all(|d| d.distance() <= 2500.0));
        assert!(devices.iter().all(|d| d.confirmed));
    }

    #[test]
    fn sf_histogram_follows_distribution() {
        let scenario = ScenarioConfig {
            alpha: 0.0,
            p_unconfirmed: SfDistribution::explora(),
            ..ScenarioConfig::default()
        };
        let cfg = SimConfig {
            n_devices: 100_000,
            ..SimConfig::new(scenario)
        };
        let devices = place_devices(&cfg, 3);
        let mut hist = [0usize; NUM_SF];
        for d in &devices {
            hist[d.sf.index()] += 1;
            assert!(!d.confirmed);
        }
        for i in 0..NUM_SF {
            let share = hist[i] as f64 / 1e5;
            assert!((share - SfDistribution::explora()[i]).abs() < 0.01, "SF index {i}: {share}");
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimConfig::new(ScenarioConfig::default());
        cfg.warmup = Some(30_000.0);
        assert!(cfg.validate().is_err());
        let mut cfg = SimConfig::new(ScenarioConfig::default());
        cfg.n_devices = 0;
        assert!(cfg.validate().is_err());
        let cfg = SimConfig::new(ScenarioConfig::default());
        assert!((cfg.warmup() - 10.0 * (100.0 * 1.318 + 2.0)).abs() < 1e-9);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn zero_load_reports_undefined_ratios() {
        let cfg = quick(ScenarioConfig {
            lambda_total: 0.0,
            ..ScenarioConfig::default()
        });
        let r = run(&cfg).unwrap();
        assert_eq!(r.pooled_counts.phy_offered(), 0);
        assert!(r.pooled.uu.is_none() && r.pooled.cu.is_none() && r.pooled.cd.is_none());
        assert!(loss_breakdown(&r).is_none());
    }

    #[test]
    fn lone_device_always_acked() {
        let cfg = SimConfig {
            n_devices: 1,
            ..quick(ScenarioConfig {
                lambda_total: 0.005,
                m: 1,
                ..ScenarioConfig::default()
            })
        };
        let r = run(&cfg).unwrap();
        let c = &r.pooled_counts;
        assert!(c.confirmed_generated.iter().sum::<u64>() > 10);
        assert_eq!(r.pooled.cd, Some(1.0));
        assert_eq!(c.ack_rx1.iter().sum::<u64>(), c.confirmed_acked.iter().sum::<u64>());
        let (nmd, gwtx, int) = loss_breakdown(&r).unwrap();
        assert_eq!((nmd, gwtx, int), (0.0, 0.0, 0.0));
    }

    #[test]
    fn same_seed_same_report() {
        let cfg = quick(ScenarioConfig {
            lambda_total: 0.5,
            alpha: 0.5,
            h: 2,
            ..ScenarioConfig::default()
        });
        assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
        let other = SimConfig { seed: 2, ..cfg.clone() };
        assert_ne!(run(&cfg).unwrap().pooled_counts, run(&other).unwrap().pooled_counts);
    }

    #[test]
    fn trace_has_one_line_per_event_kind() {
        let cfg = SimConfig {
            n_replications: 1,
            sim_duration: 800.0,
            ..quick(ScenarioConfig {
                lambda_total: 0.2,
                ..ScenarioConfig::default()
            })
        };
        let mut buf = Vec::new();
        let traced = run_traced(&cfg, &mut buf).unwrap();
        assert_eq!(traced, run(&cfg).unwrap());
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,device,sf,channel,kind,outcome"));
        let kinds: std::collections::BTreeSet<&str> =
            lines.map(|l| l.split(',').nth(4).unwrap()).collect();
        for k in ["arrival", "tx_start", "tx_end", "ack_start"] {
            assert!(kinds.contains(k), "missing {k}");
        }
    }
}
