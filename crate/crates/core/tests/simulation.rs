use std::collections::HashMap;

use lora_capacity::scenario::{ScenarioConfig, SfDistribution, SpreadingFactor};
use lora_capacity::simulate::{self, ArrivalModel, CaptureModel, SimConfig};

fn short(scenario: ScenarioConfig) -> SimConfig {
    SimConfig {
        sim_duration: 3000.0,
        warmup: Some(300.0),
        n_replications: 2,
        ..SimConfig::new(scenario)
    }
}

fn grid() -> Vec<SimConfig> {
    let mut out = Vec::new();
    for (alpha, tau, lambda) in [(1.0, true, 2.0), (0.5, false, 1.0), (0.0, true, 5.0), (0.3, false, 0.2)] {
        for capture in [CaptureModel::Probabilistic, CaptureModel::Geometric] {
            for arrival in [ArrivalModel::Poisson, ArrivalModel::Periodic] {
                let scenario = ScenarioConfig {
                    lambda_total: lambda,
                    alpha,
                    tau1: tau,
                    tau2: tau,
                    h: 3,
                    m: 4,
                    n_demodulators: 4,
                    c_channels: 2,
                    ..ScenarioConfig::default()
                };
                out.push(SimConfig {
                    capture_model: capture,
                    arrival_model: arrival,
                    seed: out.len() as u64 + 11,
                    ..short(scenario)
                });
            }
        }
    }
    out
}

#[test]
fn audits_clean_and_counts_consistent() {
    for cfg in grid() {
        let r = simulate::run(&cfg).unwrap();
        assert!(r.audit.is_clean(), "{:?}", r.audit);
        let c = &r.pooled_counts;
        for i in 0..6 {
            assert!(c.unconfirmed_delivered[i] + c.queue_dropped[i] <= c.unconfirmed_generated[i] + c.confirmed_generated[i]);
            assert!(c.confirmed_acked[i] <= c.confirmed_delivered[i]);
            assert!(c.confirmed_delivered[i] <= c.confirmed_generated[i]);
            assert!(c.ack_rx1[i] + c.ack_rx2[i] <= c.phy_delivered[i]);
        }
        if let Some((nmd, gwtx, int)) = simulate::loss_breakdown(&r) {
            let total = nmd + gwtx + int + r.pooled.phy_success.unwrap();
            assert!((total - 1.0).abs() <= 1e-12, "{total}");
        }
        if cfg.scenario.alpha == 0.0 {
            assert_eq!(c.lost_gw_tx.iter().sum::<u64>(), 0);
        }
    }
}

/// Every counted transmission start in the trace is closed by exactly one end with
/// one of the four final outcomes, and consecutive starts of a device respect
/// its duty cycle.
#[test]
fn trace_conservation_and_duty_cycle() {
    let scenario = ScenarioConfig {
        lambda_total: 3.0,
        alpha: 0.6,
        h: 2,
        n_demodulators: 3,
        c_channels: 1,
        ..ScenarioConfig::default()
    };
    for capture in [CaptureModel::Probabilistic, CaptureModel::Geometric] {
        let cfg = SimConfig {
            n_replications: 1,
            capture_model: capture,
            ..short(scenario.clone())
        };
        let mut buf = Vec::new();
        simulate::run_traced(&cfg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let mut open: HashMap<usize, f64> = HashMap::new();
        let mut last_start: HashMap<usize, f64> = HashMap::new();
        let (mut starts, mut ends) = (0u64, 0u64);
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let (t, dev) = (f[0].parse::<f64>().unwrap(), f[1].parse::<usize>().unwrap());
            let sf: u8 = f[2].trim_start_matches("SF").parse().unwrap();
            let airtime = scenario.airtimes.t_data[SpreadingFactor::new(sf).unwrap().index()];
            match f[4] {
                "tx_start" => {
                    starts += 1;
                    assert!(open.insert(dev, t).is_none(), "device {dev} started twice at {t}");
                    if let Some(prev) = last_start.insert(dev, t) {
                        let gap = (1.0 + scenario.delta_sb1) * airtime;
                        assert!(t - prev >= gap - 1e-5, "device {dev} duty cycle at {t}");
                    }
                }
                "tx_end" => {
                    ends += 1;
                    assert!(open.remove(&dev).is_some(), "end without start at {t}");
                    assert!(
                        ["delivered", "interference", "gw_tx", "no_demod"].contains(&f[5]),
                        "unexpected outcome {}",
                        f[5]
                    );
                }
                _ => {}
            }
        }
        // only transmissions started after the counting window may still be in flight
        assert!(starts > 1000);
        assert_eq!(starts, ends + open.len() as u64);
        assert!(open.values().all(|t| *t > cfg.sim_duration), "{open:?}");
    }
}

#[test]
fn pure_aloha_limit() {
    let sf7 = SfDistribution::point(SpreadingFactor::new(7).unwrap());
    for lambda in [3.0, 10.0] {
        let scenario = ScenarioConfig {
            lambda_total: lambda,
            alpha: 0.0,
            p_unconfirmed: sf7,
            p_confirmed: sf7,
            h: 1,
            m: 1,
            w_gw: 0.0,
            n_demodulators: 1000,
            ..ScenarioConfig::default()
        };
        let cfg = SimConfig {
            n_devices: 5000,
            sim_duration: 5000.0,
            warmup: Some(200.0),
            n_replications: 4,
            ..SimConfig::new(scenario.clone())
        };
        let r = simulate::run(&cfg).unwrap();
        let c = &r.pooled_counts;
        let locked = c.phy_offered() - c.lost_no_demod.iter().sum::<u64>() - c.lost_gw_tx.iter().sum::<u64>();
        let survival = 1.0 - c.lost_interference.iter().sum::<u64>() as f64 / locked as f64;
        let rate = lambda / scenario.c_channels as f64;
        let expected = (-2.0 * scenario.airtimes.t_data[0] * rate).exp();
        assert!((survival - expected).abs() <= 0.03, "lambda {lambda}: {survival} vs {expected}");
    }
}
