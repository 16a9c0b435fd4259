use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::metrics::fairness;
use crate::scenario::{ScenarioConfig, NUM_SF};

type PerSf = [u64; NUM_SF];

fn add(a: &mut PerSf, b: &PerSf) {
    for i in 0..NUM_SF {
        a[i] += b[i];
    }
}

fn total(a: &PerSf) -> u64 {
    a.iter().sum()
}

/// Raw tallies of one or more replications, per SF. Application counters
/// cover packets generated inside the counting window, PHY counters cover
/// transmissions started inside it.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Counts {
    pub unconfirmed_generated: PerSf,
    pub unconfirmed_delivered: PerSf,
    pub confirmed_generated: PerSf,
    /// Reached the gateway within `m` attempts.
    pub confirmed_delivered: PerSf,
    pub confirmed_acked: PerSf,
    /// Lost to a full device buffer (included in `*_generated`).
    pub queue_dropped: PerSf,

    pub phy_delivered: PerSf,
    pub lost_no_demod: PerSf,
    pub lost_gw_tx: PerSf,
    pub lost_interference: PerSf,

    pub ack_rx1: PerSf,
    pub ack_rx1_interfered: PerSf,
    pub ack_rx2: PerSf,
    /// Confirmed uplinks received but acknowledged in neither window.
    pub no_ack_window: PerSf,

    pub delay_ul_sum: f64,
    pub delay_ul_n: u64,
    pub delay_dl_sum: f64,
    pub delay_dl_n: u64,
}

impl Counts {
    /// Associative, commutative merge.
    pub fn merge(&mut self, o: &Counts) {
        add(&mut self.unconfirmed_generated, &o.unconfirmed_generated);
        add(&mut self.unconfirmed_delivered, &o.unconfirmed_delivered);
        add(&mut self.confirmed_generated, &o.confirmed_generated);
        add(&mut self.confirmed_delivered, &o.confirmed_delivered);
        add(&mut self.confirmed_acked, &o.confirmed_acked);
        add(&mut self.queue_dropped, &o.queue_dropped);
        add(&mut self.phy_delivered, &o.phy_delivered);
        add(&mut self.lost_no_demod, &o.lost_no_demod);
        add(&mut self.lost_gw_tx, &o.lost_gw_tx);
        add(&mut self.lost_interference, &o.lost_interference);
        add(&mut self.ack_rx1, &o.ack_rx1);
        add(&mut self.ack_rx1_interfered, &o.ack_rx1_interfered);
        add(&mut self.ack_rx2, &o.ack_rx2);
        add(&mut self.no_ack_window, &o.no_ack_window);
        self.delay_ul_sum += o.delay_ul_sum;
        self.delay_ul_n += o.delay_ul_n;
        self.delay_dl_sum += o.delay_dl_sum;
        self.delay_dl_n += o.delay_dl_n;
    }

    pub fn phy_offered_per_sf(&self) -> PerSf {
        std::array::from_fn(|i| {
            self.phy_delivered[i]
                + self.lost_no_demod[i]
                + self.lost_gw_tx[i]
                + self.lost_interference[i]
        })
    }

    pub fn phy_offered(&self) -> u64 {
        total(&self.phy_offered_per_sf())
    }
}

/// In-simulation invariant checks; all zero in a correct run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Audit {
    /// Device transmission started before its duty cycle allowed it.
    pub dc_violations: u64,
    /// GW transmission started before its sub-band duty cycle allowed it.
    pub gw_dc_violations: u64,
    pub demod_overflows: u64,
    /// GW held a locked reception while transmitting.
    pub tx_rx_overlaps: u64,
    /// Transmissions without exactly one outcome.
    pub unclassified: u64,
}

impl Audit {
    pub fn is_clean(&self) -> bool {
        *self == Audit::default()
    }

    pub fn merge(&mut self, o: &Audit) {
        self.dc_violations += o.dc_violations;
        self.gw_dc_violations += o.gw_dc_violations;
        self.demod_overflows += o.demod_overflows;
        self.tx_rx_overlaps += o.tx_rx_overlaps;
        self.unclassified += o.unclassified;
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Ratios derived from [`Counts`]; `None` where the denominator is zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Empirical {
    pub uu: Option<f64>,
    pub cu: Option<f64>,
    pub cd: Option<f64>,
    pub uu_per_sf: [Option<f64>; NUM_SF],
    pub cu_per_sf: [Option<f64>; NUM_SF],
    pub cd_per_sf: [Option<f64>; NUM_SF],
    pub delta_ul: Option<f64>,
    pub delta_dl: Option<f64>,
    pub jain: Option<f64>,
    pub phy_success: Option<f64>,
    pub f_nmd: Option<f64>,
    pub f_gwtx: Option<f64>,
    pub f_int: Option<f64>,
}

impl Empirical {
    pub fn from_counts(c: &Counts, scenario: &ScenarioConfig) -> Self {
        let per = |num: &PerSf, den: &PerSf| std::array::from_fn(|i| ratio(num[i], den[i]));
        let uu_per_sf = per(&c.unconfirmed_delivered, &c.unconfirmed_generated);
        let cu_per_sf = per(&c.confirmed_delivered, &c.confirmed_generated);
        // categories populated in the configuration and observed in the run
        let mut x = Vec::new();
        for i in 0..NUM_SF {
            if (1.0 - scenario.alpha) * scenario.p_unconfirmed[i] > 0.0 {
                x.extend(uu_per_sf[i]);
            }
        }
        for i in 0..NUM_SF {
            if scenario.alpha * scenario.p_confirmed[i] > 0.0 {
                x.extend(cu_per_sf[i]);
            }
        }
        let offered = c.phy_offered();
        Self {
            uu: ratio(total(&c.unconfirmed_delivered), total(&c.unconfirmed_generated)),
            cu: ratio(total(&c.confirmed_delivered), total(&c.confirmed_generated)),
            cd: ratio(total(&c.confirmed_acked), total(&c.confirmed_generated)),
            uu_per_sf,
            cu_per_sf,
            cd_per_sf: per(&c.confirmed_acked, &c.confirmed_generated),
            delta_ul: (c.delay_ul_n > 0).then(|| c.delay_ul_sum / c.delay_ul_n as f64),
            delta_dl: (c.delay_dl_n > 0).then(|| c.delay_dl_sum / c.delay_dl_n as f64),
            jain: if x.is_empty() { None } else { fairness(&x).ok() },
            phy_success: ratio(total(&c.phy_delivered), offered),
            f_nmd: ratio(total(&c.lost_no_demod), offered),
            f_gwtx: ratio(total(&c.lost_gw_tx), offered),
            f_int: ratio(total(&c.lost_interference), offered),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Replication {
    pub counts: Counts,
    pub audit: Audit,
    pub metrics: Empirical,
}

impl Replication {
    pub fn new(counts: Counts, audit: Audit, scenario: &ScenarioConfig) -> Self {
        let metrics = Empirical::from_counts(&counts, scenario);
        Self {
            counts,
            audit,
            metrics,
        }
    }
}

/// Mean over replications with a 95% Student-t half-width (`None` with fewer
/// than two defined values).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: Option<f64>,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Option<Self> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let half_width = (n >= 2).then(|| {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
                .expect("positive degrees of freedom")
                .inverse_cdf(0.975);
            t * (var / n as f64).sqrt()
        });
        Some(Self {
            mean,
            half_width,
            n,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub uu: Option<Estimate>,
    pub cu: Option<Estimate>,
    pub cd: Option<Estimate>,
    pub delta_ul: Option<Estimate>,
    pub delta_dl: Option<Estimate>,
    pub jain: Option<Estimate>,
    pub phy_success: Option<Estimate>,
    pub f_nmd: Option<Estimate>,
    pub f_gwtx: Option<Estimate>,
    pub f_int: Option<Estimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub replications: Vec<Replication>,
    pub pooled_counts: Counts,
    /// Ratios of the pooled counts.
    pub pooled: Empirical,
    pub summary: Summary,
    pub audit: Audit,
}

impl SimReport {
    pub fn from_replications(replications: Vec<Replication>, scenario: &ScenarioConfig) -> Self {
        let mut pooled_counts = Counts::default();
        let mut audit = Audit::default();
        for r in &replications {
            pooled_counts.merge(&r.counts);
            audit.merge(&r.audit);
        }
        let est = |f: &dyn Fn(&Empirical) -> Option<f64>| {
            let xs: Vec<f64> = replications.iter().filter_map(|r| f(&r.metrics)).collect();
            Estimate::from_samples(&xs)
        };
        let summary = Summary {
            uu: est(&|e| e.uu),
            cu: est(&|e| e.cu),
            cd: est(&|e| e.cd),
            delta_ul: est(&|e| e.delta_ul),
            delta_dl: est(&|e| e.delta_dl),
            jain: est(&|e| e.jain),
            phy_success: est(&|e| e.phy_success),
            f_nmd: est(&|e| e.f_nmd),
            f_gwtx: est(&|e| e.f_gwtx),
            f_int: est(&|e| e.f_int),
        };
        Self {
            pooled: Empirical::from_counts(&pooled_counts, scenario),
            replications,
            pooled_counts,
            summary,
            audit,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(k: u64) -> Counts {
        Counts {
            unconfirmed_generated: [k, 1, 0, 0, 0, 2],
            unconfirmed_delivered: [k / 2, 1, 0, 0, 0, 1],
            phy_delivered: [k, 0, 0, 0, 0, 0],
            lost_interference: [1, 2, 0, 0, 0, 0],
            delay_ul_sum: 1.5 * k as f64,
            delay_ul_n: k,
            ..Counts::default()
        }
    }

    #[test]
    fn merge_is_order_independent() {
        let (a, b, c) = (sample(3), sample(10), sample(7));
        let mut x = a.clone();
        x.merge(&b);
        x.merge(&c);
        let mut y = c.clone();
        let mut bc = b.clone();
        bc.merge(&a);
        y.merge(&bc);
        assert_eq!(x, y);
    }

    #[test]
    fn student_t_half_width() {
        // t_{0.975, 3} = 3.182446305284263
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_relative_eq!(e.mean, 2.5);
        let s = (5.0f64 / 3.0).sqrt();
        assert_relative_eq!(e.half_width.unwrap(), 3.182446305284263 * s / 2.0, epsilon = 1e-9);
        assert_eq!(Estimate::from_samples(&[0.3]).unwrap().half_width, None);
        assert!(Estimate::from_samples(&[]).is_none());
    }

    #[test]
    fn phy_fractions_partition() {
        let c = sample(9);
        let e = Empirical::from_counts(&c, &ScenarioConfig::default());
        let sum = e.phy_success.unwrap() + e.f_nmd.unwrap() + e.f_gwtx.unwrap() + e.f_int.unwrap();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-15);
        assert_eq!(e.cu, None);
        assert_relative_eq!(e.delta_ul.unwrap(), 1.5);
    }
}
