//! Choice of SF distributions and repetition counts maximizing a weighted
//! combination of model metrics.
//!
//! For every `(m, h)` in the grid, `(p^u, p^c)` is improved by projected
//! gradient ascent on the product of two simplices, started from the uniform
//! distribution and from three fixed perturbations of it.

use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::{solve, SolverOptions, SteadyState};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::scenario::{ScenarioConfig, SfDistribution, SfVector, NUM_SF};

/// Euclidean projection onto `{p : p_i >= 0, Σ p_i = 1}` (sort-based).
pub fn project_to_simplex(v: &SfVector) -> SfDistribution {
    let mut sorted = v.0;
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let p = v.map(|x| (x - theta).max(0.0));
    // absorb the last ulp so the sum check in the constructor never trips
    let s = p.sum();
    SfDistribution::new(p.scale(1.0 / s).0).expect("projection lies on the simplex")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Uu,
    Cu,
    Cd,
    Jain,
    DeltaUl,
    DeltaDl,
}

impl Metric {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "uu" => Self::Uu,
            "cu" => Self::Cu,
            "cd" => Self::Cd,
            "j" | "jain" => Self::Jain,
            "delta_ul" => Self::DeltaUl,
            "delta_dl" => Self::DeltaDl,
            other => return Err(Error::Validation(format!("unknown metric {other:?}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Uu => "uu",
            Self::Cu => "cu",
            Self::Cd => "cd",
            Self::Jain => "jain",
            Self::DeltaUl => "delta_ul",
            Self::DeltaDl => "delta_dl",
        }
    }

    fn read(self, r: &MetricsReport) -> Option<f64> {
        match self {
            Self::Uu => Some(r.uu),
            Self::Cu => Some(r.cu),
            Self::Cd => Some(r.cd),
            Self::Jain => Some(r.jain),
            Self::DeltaUl => r.delta_ul,
            Self::DeltaDl => r.delta_dl,
        }
    }
}

/// Weighted sum of metrics. Use negative weights for delays.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Objective {
    pub terms: Vec<(Metric, f64)>,
}

impl Objective {
    pub fn uu_plus_cd() -> Self {
        Self {
            terms: vec![(Metric::Uu, 1.0), (Metric::Cd, 1.0)],
        }
    }

    pub fn mean_uu_cu() -> Self {
        Self {
            terms: vec![(Metric::Uu, 0.5), (Metric::Cu, 0.5)],
        }
    }

    /// `uu+cd`, `mean_uu_cu`, or a list like `uu:0.5,cd:1,delta_dl:-0.01`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec {
            "uu+cd" => return Ok(Self::uu_plus_cd()),
            "mean_uu_cu" => return Ok(Self::mean_uu_cu()),
            _ => {}
        }
        let mut terms = Vec::new();
        for item in spec.split(',') {
            let (name, w) = item
                .split_once(':')
                .ok_or_else(|| Error::Validation(format!("objective term {item:?} is not metric:weight")))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| Error::Validation(format!("bad weight in {item:?}")))?;
            terms.push((Metric::parse(name.trim())?, w));
        }
        let obj = Self { terms };
        obj.validate()?;
        Ok(obj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() || self.terms.iter().any(|(_, w)| !w.is_finite()) {
            return Err(Error::Validation(
                "objective needs at least one term with a finite weight".into(),
            ));
        }
        Ok(())
    }

    /// `None` when a term is undefined (delay without confirmed traffic).
    pub fn value(&self, r: &MetricsReport) -> Option<f64> {
        self.terms
            .iter()
            .map(|(m, w)| m.read(r).map(|v| w * v))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationProblem {
    pub objective: Objective,
    pub m_grid: Vec<u32>,
    pub h_grid: Vec<u32>,
    pub lambda: f64,
    pub base_cfg: ScenarioConfig,
    pub simplex_tolerance: f64,
    pub solver: SolverOptions,
    /// Ascent iterations per start.
    pub max_steps: usize,
    /// Stop once a step improves the objective by less than this.
    pub ftol: f64,
    /// Grid points whose values differ by at most this are treated as tied.
    pub tie_tolerance: f64,
}

impl OptimizationProblem {
    /// Objective UU + CD, `m, h ∈ 1..=8`.
    pub fn new(base_cfg: ScenarioConfig, lambda: f64) -> Self {
        Self {
            objective: Objective::uu_plus_cd(),
            m_grid: (1..=8).collect(),
            h_grid: (1..=8).collect(),
            lambda,
            base_cfg,
            simplex_tolerance: 1e-9,
            solver: SolverOptions::default(),
            max_steps: 200,
            ftol: 1e-9,
            tie_tolerance: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if self.m_grid.is_empty() || self.h_grid.is_empty() {
            return Err(Error::Validation("m and h grids must be non-empty".into()));
        }
        if self.m_grid.iter().chain(&self.h_grid).any(|v| *v == 0) {
            return Err(Error::Validation("m and h grid values must be >= 1".into()));
        }
        if !(self.simplex_tolerance > 0.0)
            || !(self.ftol >= 0.0)
            || !(self.tie_tolerance >= 0.0)
            || self.max_steps == 0
        {
            return Err(Error::Validation(
                "simplex_tolerance > 0, ftol >= 0, tie_tolerance >= 0 and max_steps >= 1 required"
                    .into(),
            ));
        }
        let mut cfg = self.base_cfg.clone();
        cfg.lambda_total = self.lambda;
        cfg.validate()
    }
}

/// Outcome of the ascent at one `(m, h)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRecord {
    pub m: u32,
    pub h: u32,
    pub p_unconfirmed: SfDistribution,
    pub p_confirmed: SfDistribution,
    pub value: f64,
    /// Objective at the uniform start.
    pub start_value: f64,
    /// Which start produced the returned point.
    pub start: &'static str,
    pub solver_iterations: usize,
    /// False if any solve along the winning path hit its iteration budget.
    pub converged: bool,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizationResult {
    pub best_cfg: ScenarioConfig,
    /// Value of the selected record, within `tie_tolerance` of the maximum.
    pub best_value: f64,
    pub records: Vec<GridRecord>,
}

const STARTS: [&str; 4] = ["uniform", "tilt_low", "tilt_high", "alternate"];

fn start_point(k: usize) -> SfVector {
    let w = SfVector::from_fn(|i| match k {
        0 => 0.0,
        1 => 1.0 - 2.0 * i as f64 / 5.0,
        2 => -1.0 + 2.0 * i as f64 / 5.0,
        _ => {
            if i % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }
    });
    let raw = w.map(|x| (1.0 + 0.5 * x) / NUM_SF as f64);
    raw.scale(1.0 / raw.sum())
}

struct Eval {
    value: f64,
    iterations: usize,
    converged: bool,
}

struct Evaluator<'a> {
    problem: &'a OptimizationProblem,
    cfg: ScenarioConfig,
}

impl Evaluator<'_> {
    fn state(&self, cfg: &ScenarioConfig) -> Result<(SteadyState, bool)> {
        match solve(cfg, &self.problem.solver) {
            Ok(s) => Ok((s, true)),
            Err(Error::NotConverged { best, .. }) => Ok((*best, false)),
            Err(e) => Err(e),
        }
    }

    /// Objective at `(u, c)`; each block is renormalized to sum to one, so
    /// coordinate perturbations act on the simplex.
    fn eval(&self, u: &SfVector, c: &SfVector) -> Eval {
        let mut cfg = self.cfg.clone();
        cfg.p_unconfirmed = SfDistribution::renormalized(u.0).expect("non-negative block");
        cfg.p_confirmed = SfDistribution::renormalized(c.0).expect("non-negative block");
        let failed = Eval {
            value: f64::NEG_INFINITY,
            iterations: 0,
            converged: false,
        };
        let Ok((state, converged)) = self.state(&cfg) else {
            return failed;
        };
        let value = metrics::report(&state, &cfg)
            .ok()
            .and_then(|r| self.problem.objective.value(&r))
            .filter(|v| v.is_finite());
        match value {
            Some(value) => Eval {
                value,
                iterations: state.iterations,
                converged,
            },
            None => failed,
        }
    }

    /// Simplex-tangent gradient of both blocks by central differences,
    /// forward at coordinates too close to zero.
    fn gradient(&self, u: &SfVector, c: &SfVector, f0: f64) -> [SfVector; 2] {
        const H: f64 = 1e-4;
        let mut g = [SfVector::ZERO; 2];
        for block in 0..2 {
            for i in 0..NUM_SF {
                let at = |delta: f64| {
                    let (mut u, mut c) = (*u, *c);
                    let x = if block == 0 { &mut u } else { &mut c };
                    x.0[i] += delta;
                    self.eval(&u, &c).value
                };
                let x = if block == 0 { u } else { c };
                let d = if x[i] >= H {
                    (at(H) - at(-H)) / (2.0 * H)
                } else {
                    (at(H) - f0) / H
                };
                g[block].0[i] = if d.is_finite() { d } else { 0.0 };
            }
            let mean = g[block].sum() / NUM_SF as f64;
            g[block] = g[block].map(|d| d - mean);
        }
        g
    }

    /// Projected gradient ascent with Armijo backtracking.
    fn ascend(&self, u0: SfVector, c0: SfVector) -> (SfVector, SfVector, Eval, usize) {
        let (mut u, mut c) = (u0, c0);
        let mut cur = self.eval(&u, &c);
        let mut converged = cur.converged;
        let mut step = 1.0;
        let mut steps = 0;
        while steps < self.problem.max_steps && cur.value.is_finite() {
            let [gu, gc] = self.gradient(&u, &c, cur.value);
            if gu.dot(&gu) + gc.dot(&gc) < 1e-20 {
                break;
            }
            let mut accepted = None;
            while step > 1e-8 {
                let nu = *project_to_simplex(&u.zip_with(&gu, |x, g| x + step * g)).as_vector();
                let nc = *project_to_simplex(&c.zip_with(&gc, |x, g| x + step * g)).as_vector();
                let ascent = gu.dot(&nu.zip_with(&u, |a, b| a - b))
                    + gc.dot(&nc.zip_with(&c, |a, b| a - b));
                let trial = self.eval(&nu, &nc);
                if ascent > 0.0 && trial.value >= cur.value + 1e-4 * ascent {
                    accepted = Some((nu, nc, trial));
                    break;
                }
                step *= 0.5;
            }
            let Some((nu, nc, trial)) = accepted else {
                break;
            };
            let gain = trial.value - cur.value;
            u = nu;
            c = nc;
            converged &= trial.converged;
            cur = trial;
            steps += 1;
            step = (step * 2.0).min(1.0);
            if gain < self.problem.ftol {
                break;
            }
        }
        cur.converged = converged;
        (u, c, cur, steps)
    }
}

fn optimize_point(problem: &OptimizationProblem, m: u32, h: u32) -> GridRecord {
    let mut cfg = problem.base_cfg.clone();
    cfg.lambda_total = problem.lambda;
    cfg.m = m;
    cfg.h = h;
    let ev = Evaluator { problem, cfg };
    let uniform = start_point(0);
    let start_value = ev.eval(&uniform, &uniform).value;

    let mut best: Option<(usize, SfVector, SfVector, Eval, usize)> = None;
    for k in 0..STARTS.len() {
        let p0 = start_point(k);
        let (u, c, e, steps) = ev.ascend(p0, p0);
        // later starts must beat the incumbent clearly to displace it
        let better = match &best {
            None => true,
            Some((_, _, _, b, _)) => e.value > b.value + problem.ftol.max(1e-12),
        };
        if better {
            best = Some((k, u, c, e, steps));
        }
    }
    let (k, u, c, e, steps) = best.expect("at least one start");
    GridRecord {
        m,
        h,
        p_unconfirmed: project_to_simplex(&u),
        p_confirmed: project_to_simplex(&c),
        value: e.value,
        start_value,
        start: STARTS[k],
        solver_iterations: e.iterations,
        converged: e.converged,
        steps,
    }
}

/// Runs the ascent on every `(m, h)` of the grid in parallel and returns the
/// best record. Records within `tie_tolerance` of the maximum count as tied;
/// ties go to the lexicographically larger `(m, h)`.
pub fn optimize(problem: &OptimizationProblem) -> Result<OptimizationResult> {
    problem.validate()?;
    let grid: Vec<(u32, u32)> = problem
        .m_grid
        .iter()
        .flat_map(|&m| problem.h_grid.iter().map(move |&h| (m, h)))
        .collect();
    let records: Vec<GridRecord> = grid
        .par_iter()
        .map(|&(m, h)| optimize_point(problem, m, h))
        .collect();
    let top = records
        .iter()
        .map(|r| r.value)
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let best = records
        .iter()
        .filter(|r| r.value.is_finite() && r.value >= top - problem.tie_tolerance)
        .max_by_key(|r| (r.m, r.h))
        .ok_or_else(|| Error::Validation("objective undefined at every grid point".into()))?;
    let mut best_cfg = problem.base_cfg.clone();
    best_cfg.lambda_total = problem.lambda;
    best_cfg.m = best.m;
    best_cfg.h = best.h;
    best_cfg.p_unconfirmed = best.p_unconfirmed;
    best_cfg.p_confirmed = best.p_confirmed;
    Ok(OptimizationResult {
        best_cfg,
        best_value: best.value,
        records,
    })
}

/// Fixed configurations compared against the optimized one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Configuration {
    C1,
    C2,
    C3,
}

impl Configuration {
    pub const ALL: [Configuration; 3] = [Self::C1, Self::C2, Self::C3];

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "C1" => Ok(Self::C1),
            "C2" => Ok(Self::C2),
            "C3" => Ok(Self::C3),
            _ => Err(Error::Validation(format!("unknown configuration {name:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::C1 => "C1",
            Self::C2 => "C2",
            Self::C3 => "C3",
        }
    }

    /// `(tau1, tau2, m, h, p^u = p^c)`.
    pub fn apply(self, base: &ScenarioConfig) -> ScenarioConfig {
        let (tau1, tau2, m, h, p) = match self {
            Self::C1 => (true, true, 1, 1, SfDistribution::equal()),
            Self::C2 => (false, true, 1, 4, SfDistribution::explora()),
            Self::C3 => (false, true, 4, 4, SfDistribution::explora()),
        };
        ScenarioConfig {
            tau1,
            tau2,
            m,
            h,
            p_unconfirmed: p,
            p_confirmed: p,
            ..base.clone()
        }
    }
}

/// Solves `cfg` at each λ and reports all metrics, one result per λ.
pub fn evaluate_configuration(
    cfg: &ScenarioConfig,
    lambda_values: &[f64],
    opts: &SolverOptions,
) -> Vec<Result<MetricsReport>> {
    lambda_values
        .par_iter()
        .map(|&lambda| {
            let cfg = ScenarioConfig {
                lambda_total: lambda,
                ..cfg.clone()
            };
            let state = solve(&cfg, opts)?;
            metrics::report(&state, &cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: [f64; 6]) -> SfVector {
        SfVector(x)
    }

    #[test]
    fn projection_examples() {
        let p = project_to_simplex(&v([2.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(p.values(), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

        let p = project_to_simplex(&v([0.5, 0.5, 0.5, 0.0, 0.0, 0.0]));
        for i in 0..3 {
            assert_relative_eq!(p[i], 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_eq!(&p.values()[3..], &[0.0; 3]);

        let on = v([0.1, 0.2, 0.3, 0.15, 0.05, 0.2]);
        let p = project_to_simplex(&on);
        assert!(p.as_vector().max_abs_diff(&on) < 1e-15);
    }

    /// Exhaustive active-set oracle: the projection is `max(v - θ, 0)` for the
    /// support set whose equality-constrained minimizer is feasible and
    /// nearest to `v`.
    fn projection_oracle(v: &SfVector) -> SfVector {
        let mut best = (f64::INFINITY, SfVector::ZERO);
        for mask in 1u32..64 {
            let support: Vec<usize> = (0..6).filter(|i| mask & (1 << i) != 0).collect();
            let theta = (support.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / support.len() as f64;
            let p = SfVector::from_fn(|i| if mask & (1 << i) != 0 { v[i] - theta } else { 0.0 });
            if p.iter().any(|x| x < -1e-12) {
                continue;
            }
            let d: f64 = p.iter().zip(v.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best.0 {
                best = (d, p);
            }
        }
        best.1
    }

    #[test]
    fn projection_matches_oracle() {
        let cases = [
            [0.5, 0.5, 0.5, 0.0, 0.0, 0.0],
            [3.0, -1.0, 0.2, 0.7, -0.2, 0.1],
            [-5.0, -4.0, -3.0, -2.0, -1.0, 0.0],
            [0.2, 0.2, 0.2, 0.2, 0.2, 0.2],
            [1e3, 1e3 - 0.5, 0.0, 0.0, 0.0, 1.0],
        ];
        for c in cases {
            let p = project_to_simplex(&v(c));
            let o = projection_oracle(&v(c));
            assert!(p.as_vector().max_abs_diff(&o) < 1e-12, "{c:?}: {:?} vs {o:?}", p.values());
        }
    }

    #[test]
    fn objective_parsing() {
        assert_eq!(Objective::parse("uu+cd").unwrap(), Objective::uu_plus_cd());
        let o = Objective::parse("uu:0.5, delta_dl:-0.01").unwrap();
        assert_eq!(o.terms, vec![(Metric::Uu, 0.5), (Metric::DeltaDl, -0.01)]);
        assert!(Objective::parse("uu").is_err());
        assert!(Objective::parse("xx:1").is_err());
        assert!(Objective::parse("uu:inf").is_err());
    }

    #[test]
    fn start_points_are_distinct_simplex_points() {
        for k in 0..STARTS.len() {
            let p = start_point(k);
            assert_relative_eq!(p.sum(), 1.0, epsilon = 1e-15);
            assert!(p.iter().all(|x| x > 0.0));
            assert!(p.max_abs_diff(&start_point(0)) <= 0.1);
        }
    }

    #[test]
    fn degenerate_grid_returns_valid_point() {
        let base = ScenarioConfig {
            alpha: 0.0,
            ..ScenarioConfig::default()
        };
        let mut problem = OptimizationProblem::new(base, 1e-9);
        problem.m_grid = vec![1];
        problem.h_grid = vec![1];
        let r = optimize(&problem).unwrap();
        assert_relative_eq!(r.best_value, 2.0, epsilon = 1e-6);
        assert_eq!(r.records.len(), 1);
        let p = r.best_cfg.p_unconfirmed;
        assert!(p.values().iter().all(|x| *x >= 0.0));
        assert_relative_eq!(p.as_vector().sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ascent_does_not_lose_ground() {
        let base = ScenarioConfig {
            alpha: 0.3,
            ..ScenarioConfig::default()
        };
        let mut problem = OptimizationProblem::new(base, 2.0);
        problem.m_grid = vec![2];
        problem.h_grid = vec![3];
        let r = optimize(&problem).unwrap();
        let rec = &r.records[0];
        assert!(rec.value >= rec.start_value);
        assert!(rec.value > rec.start_value + 1e-3, "no progress at high load");
        assert_eq!(r.best_value, rec.value);
        assert!(rec.converged);
    }

    #[test]
    fn near_ties_go_to_larger_grid_point() {
        let base = ScenarioConfig {
            alpha: 0.0,
            ..ScenarioConfig::default()
        };
        let mut problem = OptimizationProblem::new(base, 1e-6);
        problem.m_grid = vec![1, 2];
        problem.h_grid = vec![3, 4];
        problem.max_steps = 2;
        let r = optimize(&problem).unwrap();
        assert_eq!((r.best_cfg.m, r.best_cfg.h), (2, 4));
        let top = r.records.iter().map(|x| x.value).fold(f64::MIN, f64::max);
        assert!(r.best_value >= top - problem.tie_tolerance);
    }

    #[test]
    fn invalid_problems() {
        let mut p = OptimizationProblem::new(ScenarioConfig::default(), 1.0);
        p.m_grid.clear();
        assert!(optimize(&p).is_err());
        let mut p = OptimizationProblem::new(ScenarioConfig::default(), -1.0);
        p.m_grid = vec![1];
        assert!(optimize(&p).is_err());
    }

    #[test]
    fn table_configurations() {
        let base = ScenarioConfig {
            alpha: 0.3,
            ..ScenarioConfig::default()
        };
        let c1 = Configuration::C1.apply(&base);
        assert!(c1.tau1 && c1.tau2);
        assert_eq!((c1.m, c1.h), (1, 1));
        assert_eq!(c1.p_confirmed, SfDistribution::equal());
        let c3 = Configuration::C3.apply(&base);
        assert!(!c3.tau1 && c3.tau2);
        assert_eq!((c3.m, c3.h), (4, 4));
        assert_eq!(c3.p_unconfirmed, SfDistribution::explora());
        assert_eq!(c3.alpha, 0.3);
        assert_eq!(Configuration::parse("c2").unwrap(), Configuration::C2);
    }

    #[test]
    fn evaluate_configuration_sweeps() {
        let cfg = Configuration::C1.apply(&ScenarioConfig::default());
        let opts = SolverOptions::default();
        assert!(evaluate_configuration(&cfg, &[], &opts).is_empty());
        let out = evaluate_configuration(&cfg, &[0.1, 1.0, 10.0], &opts);
        let uu: Vec<f64> = out.iter().map(|r| r.as_ref().unwrap().uu).collect();
        assert!(uu[0] > uu[1] && uu[1] > uu[2]);
        assert_eq!(out.len(), 3);
    }
}
