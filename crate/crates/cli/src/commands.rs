use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use lora_capacity::analytic::{solve, SolverOptions, SteadyState};
use lora_capacity::metrics::{self, RetxDistribution};
use lora_capacity::optimize::{optimize, Configuration, GridRecord};
use lora_capacity::scenario::{self, ScenarioConfig, SfVector, SpreadingFactor, NUM_SF};
use lora_capacity::simulate::{self, Estimate, SimReport};
use lora_capacity::Error;

use crate::config::{Loaded, OptimizeEcho, SimulationEcho};
use crate::output::{self, num, opt};
use crate::sweep::Axis;
use crate::{CliError, Format, EXIT_NOT_CONVERGED, EXIT_OK};

/// Every analytic metric of one point. Undefined quantities are `None`.
#[derive(Clone, Debug, Serialize)]
pub struct PointMetrics {
    pub uu: f64,
    pub cu: f64,
    pub cd: f64,
    pub uu_per_sf: SfVector,
    pub cu_per_sf: SfVector,
    pub cd_per_sf: SfVector,
    pub delta_ul: Option<f64>,
    pub delta_dl: Option<f64>,
    pub gamma: Option<SfVector>,
    pub phi: Option<SfVector>,
    pub jain: Option<f64>,
    pub retx: RetxDistribution,
    pub phy_success: f64,
    pub f_nmd: f64,
    pub f_gwtx: f64,
    pub f_int: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Point {
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub metrics: PointMetrics,
    #[serde(skip)]
    pub state: SteadyState,
}

/// Solves `cfg`. A solve that runs out of iterations still yields its best
/// iterate, flagged as not converged.
pub fn evaluate(cfg: &ScenarioConfig) -> Result<Point, Error> {
    let (state, converged, iterations) = match solve(cfg, &SolverOptions::default()) {
        Ok(s) => {
            let it = s.iterations;
            (s, true, it)
        }
        Err(Error::NotConverged { iterations, best, .. }) => (*best, false, iterations),
        Err(e) => return Err(e),
    };
    let rel = metrics::reliability(&state, cfg);
    let delays = match metrics::delays(&state, cfg) {
        Ok(d) => Some(d),
        Err(Error::UndefinedDelay) => None,
        Err(e) => return Err(e),
    };
    let jain = match metrics::fairness(&metrics::fairness_categories(&rel, cfg)) {
        Ok(j) => Some(j),
        Err(Error::ZeroFairness) => None,
        Err(e) => return Err(e),
    };
    let loss = metrics::loss_decomposition(&state, cfg);
    let m = PointMetrics {
        uu: rel.uu,
        cu: rel.cu,
        cd: rel.cd,
        uu_per_sf: rel.uu_per_sf,
        cu_per_sf: rel.cu_per_sf,
        cd_per_sf: rel.cd_per_sf,
        delta_ul: delays.as_ref().map(|d| d.delta_ul),
        delta_dl: delays.as_ref().map(|d| d.delta_dl),
        gamma: delays.as_ref().map(|d| d.gamma),
        phi: delays.as_ref().map(|d| d.phi),
        jain,
        retx: metrics::retx_distribution(&state, cfg),
        phy_success: metrics::mean_phy_success(&state, cfg),
        f_nmd: loss.f_nmd,
        f_gwtx: loss.f_gwtx,
        f_int: loss.f_int,
    };
    Ok(Point {
        converged,
        iterations,
        residual: state.residual,
        metrics: m,
        state,
    })
}

const SCALARS: [&str; 10] = [
    "uu", "cu", "cd", "delta_ul", "delta_dl", "jain", "phy_success", "f_nmd", "f_gwtx", "f_int",
];
const VECTORS: [&str; 5] = ["uu_per_sf", "cu_per_sf", "cd_per_sf", "gamma", "phi"];
pub const DEFAULT_OUTPUTS: &str = "uu,cu,cd,delta_ul,delta_dl,jain,f_nmd,f_gwtx,f_int";
const MAX_RETX_COLUMNS: usize = 8;

fn sf_columns(prefix: &str) -> impl Iterator<Item = String> + '_ {
    SpreadingFactor::iter().map(move |sf| format!("{prefix}_sf{}", sf.value()))
}

/// Expands an output list into column names (`cu_per_sf` gives `cu_sf7`..`cu_sf12`,
/// `retx` gives `retx_1`..`retx_8` and `retx_failure`).
pub fn output_columns(outputs: &str) -> Result<Vec<String>, Error> {
    let mut cols = Vec::new();
    for o in outputs.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if SCALARS.contains(&o) {
            cols.push(o.to_string());
        } else if VECTORS.contains(&o) {
            cols.extend(sf_columns(o.trim_end_matches("_per_sf")));
        } else if o == "retx" {
            cols.extend((1..=MAX_RETX_COLUMNS).map(|j| format!("retx_{j}")));
            cols.push("retx_failure".into());
        } else {
            return Err(Error::Validation(format!(
                "unknown output '{o}' (known: {}, {}, retx)",
                SCALARS.join(", "),
                VECTORS.join(", ")
            )));
        }
    }
    if cols.is_empty() {
        return Err(Error::Validation("no outputs selected".into()));
    }
    Ok(cols)
}

fn column_value(m: &PointMetrics, col: &str) -> Option<f64> {
    let sf = |v: &SfVector, suffix: &str| -> Option<f64> {
        let n: u8 = suffix.parse().ok()?;
        Some(v[SpreadingFactor::new(n).ok()?.index()])
    };
    Some(match col {
        "uu" => m.uu,
        "cu" => m.cu,
        "cd" => m.cd,
        "delta_ul" => m.delta_ul?,
        "delta_dl" => m.delta_dl?,
        "jain" => m.jain?,
        "phy_success" => m.phy_success,
        "f_nmd" => m.f_nmd,
        "f_gwtx" => m.f_gwtx,
        "f_int" => m.f_int,
        "retx_failure" => m.retx.failure,
        _ => {
            let (head, tail) = col.rsplit_once('_')?;
            if head == "retx" {
                return m.retx.shares.get(tail.parse::<usize>().ok()?.checked_sub(1)?).copied();
            }
            let n = tail.strip_prefix("sf")?;
            match head {
                "uu" => sf(&m.uu_per_sf, n)?,
                "cu" => sf(&m.cu_per_sf, n)?,
                "cd" => sf(&m.cd_per_sf, n)?,
                "gamma" => sf(m.gamma.as_ref()?, n)?,
                "phi" => sf(m.phi.as_ref()?, n)?,
                _ => return None,
            }
        }
    })
}

fn status(converged: bool) -> &'static str {
    if converged {
        "converged"
    } else {
        "not_converged"
    }
}

#[derive(Serialize)]
struct SolveDoc<'a> {
    config: &'a ScenarioConfig,
    status: &'static str,
    #[serde(flatten)]
    point: &'a Point,
    #[serde(skip_serializing_if = "Option::is_none")]
    state: Option<&'a SteadyState>,
}

pub fn solve_cmd(loaded: &Loaded, format: Format, full: bool, out: &mut dyn Write) -> Result<u8, CliError> {
    let cfg = &loaded.scenario;
    let p = evaluate(cfg)?;
    match format {
        Format::Doc => output::json(
            out,
            &SolveDoc {
                config: cfg,
                status: status(p.converged),
                point: &p,
                state: full.then_some(&p.state),
            },
        )?,
        Format::Csv => {
            output::header(out, "solve", &[], cfg, None, None)?;
            let cols = output_columns(&format!("{DEFAULT_OUTPUTS},phy_success"))?;
            let mut header = vec!["status".to_string(), "iterations".into(), "residual".into()];
            header.extend(cols.iter().cloned());
            let mut row = vec![status(p.converged).to_string(), p.iterations.to_string(), num(p.residual)];
            row.extend(cols.iter().map(|c| opt(column_value(&p.metrics, c))));
            output::csv_rows(out, &header, &[row])?;
        }
    }
    Ok(if p.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

/// Writes the fields of a configuration row into `table`, so swept keys
/// applied afterwards take precedence.
fn configure(table: &mut toml::Table, c: Configuration) {
    use toml::Value;
    let cfg = c.apply(&ScenarioConfig::default());
    let dist = |p: [f64; NUM_SF]| Value::Array(p.iter().map(|x| Value::Float(*x)).collect());
    table.insert("tau1".into(), Value::Boolean(cfg.tau1));
    table.insert("tau2".into(), Value::Boolean(cfg.tau2));
    table.insert("m".into(), Value::Integer(cfg.m.into()));
    table.insert("h".into(), Value::Integer(cfg.h.into()));
    table.insert("p_unconfirmed".into(), dist(cfg.p_unconfirmed.values()));
    table.insert("p_confirmed".into(), dist(cfg.p_confirmed.values()));
}

#[derive(Serialize)]
struct SweepRow {
    #[serde(skip_serializing_if = "Option::is_none")]
    by: Option<String>,
    value: String,
    status: &'static str,
    #[serde(flatten)]
    point: Point,
}

#[derive(Serialize)]
struct SweepDoc<'a> {
    config: &'a ScenarioConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    configuration: Option<&'static str>,
    axis: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    by: Option<&'a str>,
    rows: Vec<SweepRow>,
}

pub struct SweepArgs<'a> {
    pub axis: &'a Axis,
    pub by: Option<&'a Axis>,
    pub outputs: &'a str,
    pub configuration: Option<Configuration>,
}

pub fn sweep_cmd(loaded: &Loaded, format: Format, args: &SweepArgs, out: &mut dyn Write) -> Result<u8, CliError> {
    let cols = output_columns(args.outputs)?;
    let by_values: Vec<Option<&String>> = match args.by {
        Some(b) => b.values.iter().map(Some).collect(),
        None => vec![None],
    };
    let tasks: Vec<(Option<&String>, &String)> = by_values
        .iter()
        .flat_map(|b| args.axis.values.iter().map(move |v| (*b, v)))
        .collect();

    let mut base_table = loaded.scenario_table.clone();
    if let Some(c) = args.configuration {
        configure(&mut base_table, c);
    }
    let base = scenario::load_scenario_table(base_table.clone())?;
    let points: Vec<Result<Point, CliError>> = tasks
        .par_iter()
        .map(|(b, v)| {
            let mut table = base_table.clone();
            if let (Some(by), Some(b)) = (args.by, b) {
                scenario::set_path(&mut table, &by.key, b)?;
            }
            scenario::set_path(&mut table, &args.axis.key, v)?;
            Ok(evaluate(&scenario::load_scenario_table(table)?)?)
        })
        .collect();
    let mut rows = Vec::with_capacity(points.len());
    for ((b, v), p) in tasks.iter().zip(points) {
        let p = p?;
        rows.push(SweepRow {
            by: b.cloned(),
            value: (*v).clone(),
            status: status(p.converged),
            point: p,
        });
    }
    let all_converged = rows.iter().all(|r| r.point.converged);

    match format {
        Format::Doc => output::json(
            out,
            &SweepDoc {
                config: &base,
                configuration: args.configuration.map(Configuration::name),
                axis: &args.axis.key,
                by: args.by.map(|b| b.key.as_str()),
                rows,
            },
        )?,
        Format::Csv => {
            let mut notes = vec![format!("sweep {} over {} values", args.axis.key, args.axis.values.len())];
            if let Some(b) = args.by {
                notes.push(format!("by {} = {}", b.key, b.values.join(",")));
            }
            if let Some(c) = args.configuration {
                notes.push(format!("configuration {}", c.name()));
            }
            output::header(out, "sweep", &notes, &base, None, None)?;
            let mut header = Vec::new();
            if let Some(b) = args.by {
                header.push(b.key.clone());
            }
            header.extend([args.axis.key.clone(), "status".into(), "iterations".into()]);
            header.extend(cols.iter().cloned());
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let mut row = Vec::new();
                    if let Some(b) = &r.by {
                        row.push(b.clone());
                    }
                    row.extend([r.value.clone(), r.status.to_string(), r.point.iterations.to_string()]);
                    row.extend(cols.iter().map(|c| opt(column_value(&r.point.metrics, c))));
                    row
                })
                .collect();
            output::csv_rows(out, &header, &table)?;
        }
    }
    Ok(if all_converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

const SIM_COLUMNS: [&str; 10] = [
    "uu", "cu", "cd", "delta_ul", "delta_dl", "jain", "phy_success", "f_nmd", "f_gwtx", "f_int",
];

fn empirical_row(e: &simulate::Empirical) -> Vec<Option<f64>> {
    vec![
        e.uu, e.cu, e.cd, e.delta_ul, e.delta_dl, e.jain, e.phy_success, e.f_nmd, e.f_gwtx, e.f_int,
    ]
}

fn summary_row(s: &simulate::Summary) -> Vec<Option<Estimate>> {
    vec![
        s.uu, s.cu, s.cd, s.delta_ul, s.delta_dl, s.jain, s.phy_success, s.f_nmd, s.f_gwtx, s.f_int,
    ]
}

#[derive(Serialize)]
struct SimulateDoc<'a> {
    config: &'a ScenarioConfig,
    simulation: &'a SimulationEcho,
    report: &'a SimReport,
}

fn run_simulation(
    loaded: &Loaded,
    seed: Option<u64>,
    trace: Option<&std::path::Path>,
) -> Result<(lora_capacity::simulate::SimConfig, SimReport), CliError> {
    let cfg = loaded.sim_config(seed)?;
    let report = match trace {
        Some(path) => {
            let mut w = output::open(Some(path))?;
            let r = simulate::run_traced(&cfg, &mut *w)?;
            w.flush().map_err(output::io_err)?;
            r
        }
        None => simulate::run(&cfg)?,
    };
    Ok((cfg, report))
}

pub fn simulate_cmd(
    loaded: &Loaded,
    format: Format,
    seed: Option<u64>,
    trace: Option<&std::path::Path>,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let (cfg, report) = run_simulation(loaded, seed, trace)?;
    let echo = SimulationEcho::of(&cfg);
    match format {
        Format::Doc => output::json(
            out,
            &SimulateDoc {
                config: &cfg.scenario,
                simulation: &echo,
                report: &report,
            },
        )?,
        Format::Csv => {
            let notes = vec![format!("seed {}", cfg.seed)];
            output::header(out, "simulate", &notes, &cfg.scenario, Some(&echo), None)?;
            let mut header = vec!["row".to_string()];
            header.extend(SIM_COLUMNS.iter().map(|s| s.to_string()));
            let mut rows = Vec::new();
            for (i, r) in report.replications.iter().enumerate() {
                let mut row = vec![i.to_string()];
                row.extend(empirical_row(&r.metrics).into_iter().map(opt));
                rows.push(row);
            }
            let est = summary_row(&report.summary);
            let mut mean = vec!["mean".to_string()];
            mean.extend(est.iter().map(|e| opt(e.map(|e| e.mean))));
            let mut hw = vec!["half_width".to_string()];
            hw.extend(est.iter().map(|e| opt(e.and_then(|e| e.half_width))));
            let mut pooled = vec!["pooled".to_string()];
            pooled.extend(empirical_row(&report.pooled).into_iter().map(opt));
            rows.extend([mean, hw, pooled]);
            output::csv_rows(out, &header, &rows)?;
        }
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct CompareLine {
    metric: &'static str,
    analytic: Option<f64>,
    simulated: Option<f64>,
    half_width: Option<f64>,
    abs_diff: Option<f64>,
}

#[derive(Serialize)]
struct CompareDoc<'a> {
    config: &'a ScenarioConfig,
    simulation: &'a SimulationEcho,
    converged: bool,
    rows: &'a [CompareLine],
}

pub fn compare_cmd(loaded: &Loaded, format: Format, seed: Option<u64>, out: &mut dyn Write) -> Result<u8, CliError> {
    let point = evaluate(&loaded.scenario)?;
    let (cfg, report) = run_simulation(loaded, seed, None)?;
    let echo = SimulationEcho::of(&cfg);
    let m = &point.metrics;
    let analytic = [
        Some(m.uu),
        Some(m.cu),
        Some(m.cd),
        m.delta_ul,
        m.delta_dl,
        m.jain,
        Some(m.phy_success),
        Some(m.f_nmd),
        Some(m.f_gwtx),
        Some(m.f_int),
    ];
    let sim = empirical_row(&report.pooled);
    let est = summary_row(&report.summary);
    // UU and CU/CD are undefined without the matching traffic class
    let defined = |name: &str| match name {
        "uu" => cfg.scenario.alpha < 1.0,
        "cu" | "cd" | "delta_ul" | "delta_dl" => cfg.scenario.alpha > 0.0,
        _ => true,
    };
    let rows: Vec<CompareLine> = SIM_COLUMNS
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let a = analytic[i].filter(|_| defined(name));
            let s = sim[i];
            CompareLine {
                metric: name,
                analytic: a,
                simulated: s,
                half_width: est[i].and_then(|e| e.half_width),
                abs_diff: a.zip(s).map(|(a, s)| (a - s).abs()),
            }
        })
        .collect();
    match format {
        Format::Doc => output::json(
            out,
            &CompareDoc {
                config: &cfg.scenario,
                simulation: &echo,
                converged: point.converged,
                rows: &rows,
            },
        )?,
        Format::Csv => {
            let notes = vec![format!("seed {}", cfg.seed), format!("analytic {}", status(point.converged))];
            output::header(out, "compare", &notes, &cfg.scenario, Some(&echo), None)?;
            let header: Vec<String> = ["metric", "analytic", "simulated", "half_width", "abs_diff"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.metric.to_string(),
                        opt(r.analytic),
                        opt(r.simulated),
                        opt(r.half_width),
                        opt(r.abs_diff),
                    ]
                })
                .collect();
            output::csv_rows(out, &header, &table)?;
        }
    }
    Ok(if point.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

#[derive(Serialize)]
struct OptimizeDoc<'a> {
    config: &'a ScenarioConfig,
    optimize: &'a OptimizeEcho,
    best_value: f64,
    best_cfg: &'a ScenarioConfig,
    records: &'a [GridRecord],
}

pub fn optimize_cmd(loaded: &Loaded, format: Format, out: &mut dyn Write) -> Result<u8, CliError> {
    let problem = loaded.problem()?;
    let result = optimize(&problem)?;
    let echo = OptimizeEcho::of(&problem);
    let best = &result.best_cfg;
    match format {
        Format::Doc => output::json(
            out,
            &OptimizeDoc {
                config: &loaded.scenario,
                optimize: &echo,
                best_value: result.best_value,
                best_cfg: best,
                records: &result.records,
            },
        )?,
        Format::Csv => {
            let notes = vec![format!(
                "best m {} h {} value {}",
                best.m,
                best.h,
                num(result.best_value)
            )];
            output::header(out, "optimize", &notes, &loaded.scenario, None, Some(&echo))?;
            let mut header: Vec<String> = [
                "m", "h", "best", "value", "start_value", "start", "converged", "steps", "solver_iterations",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect();
            header.extend(sf_columns("pu"));
            header.extend(sf_columns("pc"));
            let table: Vec<Vec<String>> = result
                .records
                .iter()
                .map(|r| {
                    let is_best = r.m == best.m && r.h == best.h;
                    let mut row = vec![
                        r.m.to_string(),
                        r.h.to_string(),
                        u8::from(is_best).to_string(),
                        num(r.value),
                        num(r.start_value),
                        r.start.to_string(),
                        r.converged.to_string(),
                        r.steps.to_string(),
                        r.solver_iterations.to_string(),
                    ];
                    row.extend(r.p_unconfirmed.values().iter().map(|x| num(*x)));
                    row.extend(r.p_confirmed.values().iter().map(|x| num(*x)));
                    row
                })
                .collect();
            output::csv_rows(out, &header, &table)?;
        }
    }
    Ok(EXIT_OK)
}
