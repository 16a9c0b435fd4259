//! Config files: scenario keys at top level, optional `[simulation]` and
//! `[optimize]` tables for the matching subcommands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use lora_capacity::optimize::{Objective, OptimizationProblem};
use lora_capacity::scenario::{self, ScenarioConfig};
use lora_capacity::simulate::{ArrivalModel, CaptureModel, SimConfig};
use lora_capacity::Error;

use crate::CliError;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationSection {
    n_devices: Option<usize>,
    arrival_model: Option<String>,
    capture_model: Option<String>,
    radius_m: Option<f64>,
    path_loss_exponent: Option<f64>,
    cr_db: Option<f64>,
    sim_duration: Option<f64>,
    warmup: Option<f64>,
    seed: Option<u64>,
    n_replications: Option<usize>,
    queue_capacity: Option<usize>,
    max_events: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizeSection {
    objective: Option<String>,
    m_grid: Option<Vec<u32>>,
    h_grid: Option<Vec<u32>>,
    simplex_tolerance: Option<f64>,
    max_steps: Option<usize>,
    ftol: Option<f64>,
    tie_tolerance: Option<f64>,
}

/// Resolved simulation settings as echoed into output headers.
#[derive(Clone, Debug, Serialize)]
pub struct SimulationEcho {
    pub n_devices: usize,
    pub arrival_model: String,
    pub capture_model: String,
    pub radius_m: f64,
    pub path_loss_exponent: f64,
    pub cr_db: f64,
    pub sim_duration: f64,
    pub warmup: f64,
    pub seed: u64,
    pub n_replications: usize,
    pub queue_capacity: usize,
    pub max_events: u64,
}

impl SimulationEcho {
    pub fn of(cfg: &SimConfig) -> Self {
        Self {
            n_devices: cfg.n_devices,
            arrival_model: match cfg.arrival_model {
                ArrivalModel::Poisson => "poisson",
                ArrivalModel::Periodic => "periodic",
            }
            .into(),
            capture_model: match cfg.capture_model {
                CaptureModel::Probabilistic => "probabilistic",
                CaptureModel::Geometric => "geometric",
            }
            .into(),
            radius_m: cfg.radius_m,
            path_loss_exponent: cfg.path_loss_exponent,
            cr_db: cfg.cr_db,
            sim_duration: cfg.sim_duration,
            warmup: cfg.warmup(),
            seed: cfg.seed,
            n_replications: cfg.n_replications,
            queue_capacity: cfg.queue_capacity,
            max_events: cfg.max_events,
        }
    }
}

/// Resolved optimizer settings as echoed into output headers.
#[derive(Clone, Debug, Serialize)]
pub struct OptimizeEcho {
    pub objective: String,
    pub m_grid: Vec<u32>,
    pub h_grid: Vec<u32>,
    pub lambda: f64,
    pub simplex_tolerance: f64,
    pub max_steps: usize,
    pub ftol: f64,
    pub tie_tolerance: f64,
}

impl OptimizeEcho {
    pub fn of(p: &OptimizationProblem) -> Self {
        let objective = p
            .objective
            .terms
            .iter()
            .map(|(m, w)| format!("{}:{w}", m.name()))
            .collect::<Vec<_>>()
            .join(",");
        Self {
            objective,
            m_grid: p.m_grid.clone(),
            h_grid: p.h_grid.clone(),
            lambda: p.lambda,
            simplex_tolerance: p.simplex_tolerance,
            max_steps: p.max_steps,
            ftol: p.ftol,
            tie_tolerance: p.tie_tolerance,
        }
    }
}

/// A config file with `--set` overrides applied, split into its parts.
#[derive(Clone, Debug)]
pub struct Loaded {
    /// Scenario keys only; sweeps edit this table per point.
    pub scenario_table: toml::Table,
    pub scenario: ScenarioConfig,
    simulation: SimulationSection,
    optimize: OptimizeSection,
}

fn section<T: for<'de> Deserialize<'de> + Default>(
    table: &mut toml::Table,
    name: &str,
) -> Result<T, CliError> {
    match table.remove(name) {
        None => Ok(T::default()),
        Some(v) => v
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse(format!("[{name}]: {e}")).into()),
    }
}

impl Loaded {
    pub fn read(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let source = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut table: toml::Table =
            toml::from_str(&source).map_err(|e| Error::Parse(e.to_string()))?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("--set expects key=value, got '{o}'")))?;
            scenario::set_path(&mut table, key.trim(), value.trim())?;
        }
        let simulation = section(&mut table, "simulation")?;
        let optimize = section(&mut table, "optimize")?;
        let scenario = scenario::load_scenario_table(table.clone())?;
        Ok(Self {
            scenario_table: table,
            scenario,
            simulation,
            optimize,
        })
    }

    pub fn sim_config(&self, seed: Option<u64>) -> Result<SimConfig, CliError> {
        let s = &self.simulation;
        let mut cfg = SimConfig::new(self.scenario.clone());
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = s.$field {
                    cfg.$field = v;
                }
            };
        }
        take!(n_devices);
        take!(radius_m);
        take!(path_loss_exponent);
        take!(cr_db);
        take!(sim_duration);
        take!(seed);
        take!(n_replications);
        take!(queue_capacity);
        take!(max_events);
        if s.warmup.is_some() {
            cfg.warmup = s.warmup;
        }
        if let Some(a) = &s.arrival_model {
            cfg.arrival_model = ArrivalModel::parse(a)?;
        }
        if let Some(c) = &s.capture_model {
            cfg.capture_model = CaptureModel::parse(c)?;
        }
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn problem(&self) -> Result<OptimizationProblem, CliError> {
        let o = &self.optimize;
        let mut p = OptimizationProblem::new(self.scenario.clone(), self.scenario.lambda_total);
        if let Some(obj) = &o.objective {
            p.objective = Objective::parse(obj)?;
        }
        if let Some(g) = &o.m_grid {
            p.m_grid = g.clone();
        }
        if let Some(g) = &o.h_grid {
            p.h_grid = g.clone();
        }
        if let Some(v) = o.simplex_tolerance {
            p.simplex_tolerance = v;
        }
        if let Some(v) = o.max_steps {
            p.max_steps = v;
        }
        if let Some(v) = o.ftol {
            p.ftol = v;
        }
        if let Some(v) = o.tie_tolerance {
            p.tie_tolerance = v;
        }
        p.validate()?;
        Ok(p)
    }
}
