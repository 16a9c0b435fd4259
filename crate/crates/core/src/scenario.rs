//! Scenario definition: spreading factors, airtimes, SF distributions and the
//! full set of tunable cell parameters, plus the TOML document format used to
//! load and store them.
//!
//! Defaults reproduce the EU868 plan: three uplink channels sharing a 1% duty
//! cycle sub-band (SB1), one dedicated 10% downlink channel (SB2), eight
//! demodulation chains at the gateway and RX2 fixed at SF12.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of spreading factors (SF7..=SF12).
pub const NUM_SF: usize = 6;

/// Current version of the scenario document grammar.
pub const SCHEMA_VERSION: u32 = 1;

/// Tolerance on `Σ p_i = 1` for SF distributions.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

/// A LoRa spreading factor in `7..=12`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct SpreadingFactor(u8);

impl SpreadingFactor {
    pub const MIN: u8 = 7;
    pub const MAX: u8 = 12;

    pub const ALL: [SpreadingFactor; NUM_SF] = [
        SpreadingFactor(7),
        SpreadingFactor(8),
        SpreadingFactor(9),
        SpreadingFactor(10),
        SpreadingFactor(11),
        SpreadingFactor(12),
    ];

    pub fn new(value: u8) -> Result<Self> {
        if (Self::MIN..=Self::MAX).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Validation(format!(
                "spreading factor {value} outside 7..=12"
            )))
        }
    }

    /// Position of this SF in a [`SfVector`] (SF7 -> 0).
    pub fn from_index(index: usize) -> Self {
        Self::ALL[index]
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        (self.0 - Self::MIN) as usize
    }

    pub fn iter() -> impl Iterator<Item = SpreadingFactor> {
        Self::ALL.into_iter()
    }
}

impl fmt::Display for SpreadingFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SF{}", self.0)
    }
}

/// Six reals indexed by spreading factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SfVector(pub [f64; NUM_SF]);

impl SfVector {
    pub const ZERO: SfVector = SfVector([0.0; NUM_SF]);
    pub const ONES: SfVector = SfVector([1.0; NUM_SF]);

    pub fn splat(v: f64) -> Self {
        Self([v; NUM_SF])
    }

    pub fn from_fn(f: impl FnMut(usize) -> f64) -> Self {
        Self(std::array::from_fn(f))
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn dot(&self, other: &SfVector) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self(self.0.map(&mut f))
    }

    pub fn zip_with(&self, other: &SfVector, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        Self::from_fn(|i| f(self.0[i], other.0[i]))
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    /// Sup-norm distance.
    pub fn max_abs_diff(&self, other: &SfVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Index of the largest entry (first one on ties).
    pub fn argmax(&self) -> SpreadingFactor {
        let mut best = 0;
        for i in 1..NUM_SF {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        SpreadingFactor::from_index(best)
    }
}

impl Index<usize> for SfVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for SfVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Index<SpreadingFactor> for SfVector {
    type Output = f64;
    fn index(&self, sf: SpreadingFactor) -> &f64 {
        &self.0[sf.index()]
    }
}

impl IndexMut<SpreadingFactor> for SfVector {
    fn index_mut(&mut self, sf: SpreadingFactor) -> &mut f64 {
        &mut self.0[sf.index()]
    }
}

/// Per-SF airtimes in seconds for a 10-byte data frame and a payload-less ACK.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AirtimeTable {
    pub t_data: SfVector,
    pub t_ack1: SfVector,
    /// ACK airtime in RX2 for an uplink sent with SF i. With the default RX2
    /// data rate (SF12) every entry equals `t_ack1[SF12]`.
    pub t_ack2: SfVector,
}

impl AirtimeTable {
    pub const EU868_DATA: [f64; NUM_SF] = [0.051, 0.102, 0.185, 0.329, 0.659, 1.318];
    pub const EU868_ACK: [f64; NUM_SF] = [0.041, 0.072, 0.144, 0.247, 0.495, 0.991];

    pub fn eu868() -> Self {
        let t_ack1 = SfVector(Self::EU868_ACK);
        Self {
            t_data: SfVector(Self::EU868_DATA),
            t_ack1,
            t_ack2: SfVector::splat(t_ack1[5]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, col) in [
            ("t_data", &self.t_data),
            ("t_ack1", &self.t_ack1),
            ("t_ack2", &self.t_ack2),
        ] {
            if !col.iter().all(|t| t.is_finite() && t > 0.0) {
                return Err(Error::Validation(format!(
                    "airtimes.{name}: every entry must be finite and > 0"
                )));
            }
        }
        for (name, col) in [("t_data", &self.t_data), ("t_ack1", &self.t_ack1)] {
            if !col.0.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Validation(format!(
                    "airtimes.{name}: must be strictly increasing in SF"
                )));
            }
        }
        Ok(())
    }
}

impl Default for AirtimeTable {
    fn default() -> Self {
        Self::eu868()
    }
}

/// A probability distribution over the six spreading factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SfDistribution(SfVector);

impl SfDistribution {
    /// EXPLoRa allocation as tabulated (sums to 0.998).
    pub const EXPLORA_RAW: [f64; NUM_SF] = [0.487, 0.243, 0.135, 0.076, 0.038, 0.019];

    /// Builds a distribution, rejecting negative entries and sums away from 1.
    pub fn new(values: [f64; NUM_SF]) -> Result<Self> {
        if !values.iter().all(|p| p.is_finite() && *p >= 0.0) {
            return Err(Error::Validation(
                "distribution entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::Validation(format!(
                "distribution must sum to 1 (got {sum})"
            )));
        }
        Ok(Self(SfVector(values)))
    }

    /// Builds a distribution after dividing by the sum.
    pub fn renormalized(values: [f64; NUM_SF]) -> Result<Self> {
        if !values.iter().all(|p| p.is_finite() && *p >= 0.0) {
            return Err(Error::Validation(
                "distribution entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Validation("distribution has zero mass".into()));
        }
        Ok(Self(SfVector(values.map(|p| p / sum))))
    }

    pub fn equal() -> Self {
        Self(SfVector::splat(1.0 / NUM_SF as f64))
    }

    pub fn explora() -> Self {
        Self::renormalized(Self::EXPLORA_RAW).expect("preset is positive")
    }

    /// All mass on one SF.
    pub fn point(sf: SpreadingFactor) -> Self {
        let mut v = SfVector::ZERO;
        v[sf] = 1.0;
        Self(v)
    }

    pub fn as_vector(&self) -> &SfVector {
        &self.0
    }

    pub fn values(&self) -> [f64; NUM_SF] {
        self.0 .0
    }
}

impl Index<usize> for SfDistribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Index<SpreadingFactor> for SfDistribution {
    type Output = f64;
    fn index(&self, sf: SpreadingFactor) -> &f64 {
        &self.0[sf]
    }
}

/// Looks up a named SF distribution (`equal` or `explora`).
pub fn preset(name: &str) -> Result<SfDistribution> {
    match name.to_ascii_lowercase().as_str() {
        "equal" => Ok(SfDistribution::equal()),
        "explora" => Ok(SfDistribution::explora()),
        other => Err(Error::Validation(format!(
            "unknown SF distribution preset '{other}' (expected 'equal' or 'explora')"
        ))),
    }
}

/// Sub-band of the EU868 plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SubBand {
    /// Shared UL/DL channels, used for RX1.
    Sb1,
    /// Dedicated DL channel, used for RX2.
    Sb2,
}

impl SubBand {
    pub const BOTH: [SubBand; 2] = [SubBand::Sb1, SubBand::Sb2];

    pub fn index(self) -> usize {
        match self {
            SubBand::Sb1 => 0,
            SubBand::Sb2 => 1,
        }
    }
}

/// Every tunable input of the analytic model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioConfig {
    /// Aggregate application packet rate, pck/s.
    pub lambda_total: f64,
    /// Fraction of application traffic that is confirmed.
    pub alpha: f64,
    pub p_unconfirmed: SfDistribution,
    pub p_confirmed: SfDistribution,
    /// Transmissions per unconfirmed packet.
    pub h: u32,
    /// Maximum transmission attempts per confirmed packet.
    pub m: u32,
    /// Silent-to-airtime ratio on SB1 (99 for a 1% duty cycle).
    pub delta_sb1: f64,
    /// Silent-to-airtime ratio on SB2 (9 for a 10% duty cycle).
    pub delta_sb2: f64,
    /// TX prioritized over RX for RX1 ACKs.
    pub tau1: bool,
    /// TX prioritized over RX for RX2 ACKs.
    pub tau2: bool,
    pub c_channels: u32,
    /// Mean RETRANSMIT_TIMEOUT, seconds.
    pub mu_retx: f64,
    /// Probability that a UL packet survives a two-packet collision at the GW.
    pub w_gw: f64,
    /// Probability that an ACK survives a collision with one UL packet at the ED.
    pub w_ed: f64,
    pub airtimes: AirtimeTable,
    pub n_demodulators: u32,
    /// Relaxation factor of the fixed-point iteration, in `(0, 1]`.
    pub relaxation: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            lambda_total: 1.0,
            alpha: 1.0,
            p_unconfirmed: SfDistribution::equal(),
            p_confirmed: SfDistribution::equal(),
            h: 1,
            m: 8,
            delta_sb1: 99.0,
            delta_sb2: 9.0,
            tau1: true,
            tau2: true,
            c_channels: 3,
            mu_retx: 2.0,
            w_gw: 0.1796,
            w_ed: 0.5682,
            airtimes: AirtimeTable::eu868(),
            n_demodulators: 8,
            relaxation: 1.0,
        }
    }
}

impl ScenarioConfig {
    pub fn tau(&self, band: SubBand) -> bool {
        match band {
            SubBand::Sb1 => self.tau1,
            SubBand::Sb2 => self.tau2,
        }
    }

    pub fn delta(&self, band: SubBand) -> f64 {
        match band {
            SubBand::Sb1 => self.delta_sb1,
            SubBand::Sb2 => self.delta_sb2,
        }
    }

    pub fn t_ack(&self, band: SubBand) -> &SfVector {
        match band {
            SubBand::Sb1 => &self.airtimes.t_ack1,
            SubBand::Sb2 => &self.airtimes.t_ack2,
        }
    }

    /// Checks every field invariant; distributions are checked at construction.
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Validation(msg.to_string()))
            }
        }
        check(
            self.lambda_total.is_finite() && self.lambda_total >= 0.0,
            "lambda_total must be finite and >= 0",
        )?;
        check((0.0..=1.0).contains(&self.alpha), "alpha must lie in [0, 1]")?;
        check(self.h >= 1, "h must be >= 1")?;
        check(self.m >= 1, "m must be >= 1")?;
        check(
            self.delta_sb1.is_finite() && self.delta_sb1 >= 0.0,
            "delta_sb1 must be finite and >= 0",
        )?;
        check(
            self.delta_sb2.is_finite() && self.delta_sb2 >= 0.0,
            "delta_sb2 must be finite and >= 0",
        )?;
        check(self.c_channels >= 1, "c_channels must be >= 1")?;
        check(
            self.mu_retx.is_finite() && self.mu_retx >= 0.0,
            "mu_retx must be finite and >= 0",
        )?;
        check((0.0..=1.0).contains(&self.w_gw), "w_gw must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.w_ed), "w_ed must lie in [0, 1]")?;
        check(self.n_demodulators >= 1, "n_demodulators must be >= 1")?;
        check(
            self.relaxation > 0.0 && self.relaxation <= 1.0,
            "relaxation must lie in (0, 1]",
        )?;
        for p in [&self.p_unconfirmed, &self.p_confirmed] {
            SfDistribution::new(p.values())?;
        }
        self.airtimes.validate()
    }

    /// Serializes to the TOML document grammar, every field explicit.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ScenarioDocument::from(self)).expect("scenario document serializes")
    }
}

/// An SF distribution as written in a document: a preset name or six values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistributionSpec {
    Preset(String),
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Flag {
    Int(i64),
    Bool(bool),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AirtimeDocument {
    #[serde(skip_serializing_if = "Option::is_none")]
    t_data: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_ack1: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_ack2: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDocument {
    #[serde(skip_serializing_if = "Option::is_none")]
    schema_version: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    renormalize: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_unconfirmed: Option<DistributionSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_confirmed: Option<DistributionSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    h: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_sb1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_sb2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau1: Option<Flag>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau2: Option<Flag>,
    #[serde(skip_serializing_if = "Option::is_none")]
    c_channels: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu_retx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w_gw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w_ed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_demodulators: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relaxation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    airtimes: Option<AirtimeDocument>,
}

impl From<&ScenarioConfig> for ScenarioDocument {
    fn from(cfg: &ScenarioConfig) -> Self {
        Self {
            schema_version: Some(SCHEMA_VERSION),
            renormalize: None,
            lambda_total: Some(cfg.lambda_total),
            alpha: Some(cfg.alpha),
            p_unconfirmed: Some(DistributionSpec::Values(cfg.p_unconfirmed.values().to_vec())),
            p_confirmed: Some(DistributionSpec::Values(cfg.p_confirmed.values().to_vec())),
            h: Some(cfg.h as i64),
            m: Some(cfg.m as i64),
            delta_sb1: Some(cfg.delta_sb1),
            delta_sb2: Some(cfg.delta_sb2),
            tau1: Some(Flag::Int(cfg.tau1 as i64)),
            tau2: Some(Flag::Int(cfg.tau2 as i64)),
            c_channels: Some(cfg.c_channels as i64),
            mu_retx: Some(cfg.mu_retx),
            w_gw: Some(cfg.w_gw),
            w_ed: Some(cfg.w_ed),
            n_demodulators: Some(cfg.n_demodulators as i64),
            relaxation: Some(cfg.relaxation),
            airtimes: Some(AirtimeDocument {
                t_data: Some(cfg.airtimes.t_data.0.to_vec()),
                t_ack1: Some(cfg.airtimes.t_ack1.0.to_vec()),
                t_ack2: Some(cfg.airtimes.t_ack2.0.to_vec()),
            }),
        }
    }
}

fn six(name: &str, values: &[f64]) -> Result<[f64; NUM_SF]> {
    values.try_into().map_err(|_| {
        Error::Validation(format!(
            "{name}: expected {NUM_SF} entries (SF7..SF12), got {}",
            values.len()
        ))
    })
}

fn count(name: &str, v: i64) -> Result<u32> {
    if v < 1 {
        return Err(Error::Validation(format!("{name} must be >= 1 (got {v})")));
    }
    u32::try_from(v).map_err(|_| Error::Validation(format!("{name} too large ({v})")))
}

fn flag(name: &str, f: &Flag) -> Result<bool> {
    match f {
        Flag::Bool(b) => Ok(*b),
        Flag::Int(0) => Ok(false),
        Flag::Int(1) => Ok(true),
        Flag::Int(v) => Err(Error::Validation(format!("{name} must be 0 or 1 (got {v})"))),
    }
}

impl ScenarioDocument {
    fn resolve(self) -> Result<ScenarioConfig> {
        if let Some(v) = self.schema_version {
            if v != SCHEMA_VERSION {
                return Err(Error::Validation(format!(
                    "unsupported schema_version {v} (this build reads {SCHEMA_VERSION})"
                )));
            }
        }
        let renormalize = self.renormalize.unwrap_or(false);
        let dist = |name: &str, spec: Option<DistributionSpec>| -> Result<SfDistribution> {
            match spec {
                None => Ok(SfDistribution::equal()),
                Some(DistributionSpec::Preset(p)) => preset(&p),
                Some(DistributionSpec::Values(v)) => {
                    let v = six(name, &v)?;
                    let d = if renormalize {
                        SfDistribution::renormalized(v)
                    } else {
                        SfDistribution::new(v)
                    };
                    d.map_err(|e| Error::Validation(format!("{name}: {e}")))
                }
            }
        };

        let mut cfg = ScenarioConfig {
            p_unconfirmed: dist("p_unconfirmed", self.p_unconfirmed)?,
            p_confirmed: dist("p_confirmed", self.p_confirmed)?,
            ..ScenarioConfig::default()
        };
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        take!(lambda_total);
        take!(alpha);
        take!(delta_sb1);
        take!(delta_sb2);
        take!(mu_retx);
        take!(w_gw);
        take!(w_ed);
        take!(relaxation);
        if let Some(v) = self.h {
            cfg.h = count("h", v)?;
        }
        if let Some(v) = self.m {
            cfg.m = count("m", v)?;
        }
        if let Some(v) = self.c_channels {
            cfg.c_channels = count("c_channels", v)?;
        }
        if let Some(v) = self.n_demodulators {
            cfg.n_demodulators = count("n_demodulators", v)?;
        }
        if let Some(f) = &self.tau1 {
            cfg.tau1 = flag("tau1", f)?;
        }
        if let Some(f) = &self.tau2 {
            cfg.tau2 = flag("tau2", f)?;
        }
        if let Some(a) = self.airtimes {
            if let Some(v) = a.t_data {
                cfg.airtimes.t_data = SfVector(six("airtimes.t_data", &v)?);
            }
            if let Some(v) = a.t_ack1 {
                cfg.airtimes.t_ack1 = SfVector(six("airtimes.t_ack1", &v)?);
            }
            if let Some(v) = a.t_ack2 {
                cfg.airtimes.t_ack2 = SfVector(six("airtimes.t_ack2", &v)?);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses and validates a scenario document. Missing keys take EU868 defaults.
pub fn load_scenario(source: &str) -> Result<ScenarioConfig> {
    let table: toml::Table = toml::from_str(source).map_err(|e| Error::Parse(e.to_string()))?;
    load_scenario_table(table)
}

/// Same as [`load_scenario`] for an already-parsed (and possibly edited) table.
pub fn load_scenario_table(table: toml::Table) -> Result<ScenarioConfig> {
    let doc: ScenarioDocument = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    doc.resolve()
}

/// Sets `path` (dotted, e.g. `airtimes.t_ack2`) in `table`. `raw` is read as
/// a TOML value when possible and as a bare string otherwise.
pub fn set_path(table: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let value = parse_value(raw);
    let mut keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Parse(format!("malformed key path '{path}'")));
    }
    let last = keys.pop().expect("split yields at least one key");
    let mut cur = table;
    for k in keys {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Parse(format!("'{k}' in '{path}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
