//! Maximization of coverage and capacity over the duty cycle `D` and the
//! reflection coefficient `beta`.
//!
//! One-dimensional searches evaluate a coarse grid, check it for separated
//! local maxima, then refine the best bracket by golden section. Monte Carlo
//! objectives reuse one seed for every evaluation, which makes them
//! deterministic functions of the parameter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{capacity_approx, success_lower_bound, QuadSpec};
use crate::error::{check_range, Error, Result};
use crate::mc::{estimate_capacity, estimate_success, SimConfig};
use crate::power::ModelConfig;

pub const GRID_STEP: f64 = 0.05;
pub const DEFAULT_BETA_MIN: f64 = 0.05;
/// Golden-section stops once the bracket is this narrow.
pub const ARG_TOL: f64 = 1e-4;
/// Coordinate ascent stops once a sweep moves both coordinates less than this.
pub const JOINT_TOL: f64 = 1e-3;

/// Monte Carlo settings shared by every evaluation of an objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub window_radius: f64,
    pub trials: u64,
    pub seed: u64,
}

impl McSettings {
    fn sim(&self, model: ModelConfig) -> SimConfig {
        SimConfig::new(model)
            .with_window_radius(self.window_radius)
            .with_trials(self.trials)
            .with_seed(self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    SuccessLowerBound { quad: QuadSpec },
    CapacityApprox,
    McSuccess { mc: McSettings },
    McCapacity { mc: McSettings },
}

impl Objective {
    /// Objective value and its noise level (standard error or quadrature
    /// error estimate).
    pub fn evaluate(&self, cfg: &ModelConfig) -> Result<(f64, f64)> {
        match self {
            Objective::SuccessLowerBound { quad } => {
                let b = success_lower_bound(cfg, quad)?;
                Ok((b.value, b.error))
            }
            Objective::CapacityApprox => Ok((capacity_approx(cfg)?, 0.0)),
            Objective::McSuccess { mc } => {
                let e = estimate_success(&mc.sim(*cfg))?;
                Ok((e.value, e.std_error))
            }
            Objective::McCapacity { mc } => {
                let e = estimate_capacity(&mc.sim(*cfg))?;
                Ok((e.value, e.std_error))
            }
        }
    }

    /// Band within which two values are indistinguishable.
    fn noise_band(&self, noise: f64, value: f64) -> f64 {
        match self {
            Objective::McSuccess { .. } | Objective::McCapacity { .. } => 2.0 * noise,
            _ => noise.max(1e-12 * value.abs()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    #[serde(rename = "D", alias = "duty_cycle")]
    DutyCycle,
    Beta,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptProblem {
    pub objective: Objective,
    pub variable: Variable,
    pub duty_bounds: (f64, f64),
    pub beta_bounds: (f64, f64),
    /// Maximum number of objective evaluations.
    pub budget: usize,
}

impl OptProblem {
    pub fn new(objective: Objective, variable: Variable) -> Self {
        Self {
            objective,
            variable,
            duty_bounds: (0.0, 1.0),
            beta_bounds: (DEFAULT_BETA_MIN, 1.0),
            budget: if variable == Variable::Joint { 400 } else { 60 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("duty_bounds", self.duty_bounds), ("beta_bounds", self.beta_bounds)] {
            check_range(name, lo, 0.0, 1.0)?;
            check_range(name, hi, 0.0, 1.0)?;
            if lo > hi {
                return Err(Error::invalid(name, format!("lower bound {lo} exceeds upper bound {hi}")));
            }
        }
        if self.budget < 3 {
            return Err(Error::invalid("budget", "must be >= 3"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub duty_cycle: f64,
    pub beta: f64,
    pub value: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptStatus {
    Converged,
    /// The grid showed separated local maxima; the result is the best grid point.
    NotUnimodal,
    /// Budget ran out; the result is the best point evaluated.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum1d {
    pub arg: f64,
    pub value: f64,
    pub noise: f64,
    pub status: OptStatus,
    /// Every evaluation, in the order made.
    pub trace: Vec<Evaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumJoint {
    pub duty_cycle: f64,
    pub beta: f64,
    pub value: f64,
    pub status: OptStatus,
    /// Accepted iterates, starting from the initial point.
    pub trace: Vec<Evaluation>,
    pub evaluations: usize,
}

/// Largest `x <= hi` with `x * other < 1`.
fn feasible_upper(hi: f64, other: f64) -> f64 {
    if hi * other < 1.0 {
        hi
    } else {
        (1.0 - 1e-9) / other
    }
}

fn set(cfg: &ModelConfig, variable: Variable, x: f64) -> ModelConfig {
    match variable {
        Variable::DutyCycle => ModelConfig { duty_cycle: x, ..*cfg },
        _ => ModelConfig { beta: x, ..*cfg },
    }
}

fn grid_points(lo: f64, hi: f64, max_points: usize) -> Vec<f64> {
    if hi - lo <= 0.0 {
        return vec![lo];
    }
    let steps = (((hi - lo) / GRID_STEP) - 1e-9).ceil().max(1.0) as usize;
    let steps = steps.min(max_points.saturating_sub(1)).max(1);
    (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64).collect()
}

/// Number of local maxima on the grid separated by a dip deeper than the noise.
fn separated_maxima(objective: &Objective, grid: &[Evaluation]) -> usize {
    let band = |e: &Evaluation| objective.noise_band(e.noise, e.value);
    let mut peaks = 0;
    // Track the running peak and whether a significant dip followed it.
    let mut peak: Option<Evaluation> = None;
    let mut trough: Option<Evaluation> = None;
    for e in grid {
        match (peak, trough) {
            (None, _) => peak = Some(*e),
            (Some(p), None) => {
                if e.value >= p.value {
                    peak = Some(*e);
                } else if p.value - e.value > band(&p) + band(e) {
                    peaks += 1;
                    trough = Some(*e);
                }
            }
            (Some(_), Some(t)) => {
                if e.value < t.value {
                    trough = Some(*e);
                } else if e.value - t.value > band(&t) + band(e) {
                    peak = Some(*e);
                    trough = None;
                }
            }
        }
    }
    if trough.is_none() && peak.is_some() {
        peaks += 1;
    }
    peaks
}

/// Maximizes the objective over `D` or `beta`, holding the other at its value in `cfg`.
pub fn maximize_1d(problem: &OptProblem, cfg: &ModelConfig) -> Result<Optimum1d> {
    problem.validate()?;
    cfg.validate()?;
    let (lo, hi) = match problem.variable {
        Variable::DutyCycle => (problem.duty_bounds.0, feasible_upper(problem.duty_bounds.1, cfg.beta)),
        Variable::Beta => (problem.beta_bounds.0, feasible_upper(problem.beta_bounds.1, cfg.duty_cycle)),
        Variable::Joint => return Err(Error::invalid("variable", "maximize_1d needs D or beta")),
    };
    if lo > hi {
        return Err(Error::invalid("bounds", "no feasible point with beta * D < 1"));
    }
    search_1d(problem, cfg, problem.variable, lo, hi, problem.budget)
}

fn search_1d(problem: &OptProblem, cfg: &ModelConfig, variable: Variable, lo: f64, hi: f64, budget: usize) -> Result<Optimum1d> {
    let objective = &problem.objective;
    let eval = |x: f64| -> Result<Evaluation> {
        let point = set(cfg, variable, x);
        let (value, noise) = objective.evaluate(&point)?;
        Ok(Evaluation {
            duty_cycle: point.duty_cycle,
            beta: point.beta,
            value,
            noise,
        })
    };
    let arg_of = |e: &Evaluation| match variable {
        Variable::DutyCycle => e.duty_cycle,
        _ => e.beta,
    };

    // Leave room for at least one golden-section step.
    let xs = grid_points(lo, hi, budget.saturating_sub(2).max(1));
    let grid: Vec<Evaluation> = xs.par_iter().map(|&x| eval(x)).collect::<Result<_>>()?;
    let mut trace = grid.clone();
    let best_index = grid
        .iter()
        .enumerate()
        .fold(0, |b, (i, e)| if e.value > grid[b].value { i } else { b });
    let mut best = grid[best_index];

    let finish = |best: Evaluation, status, trace| Optimum1d {
        arg: arg_of(&best),
        value: best.value,
        noise: best.noise,
        status,
        trace,
    };

    if separated_maxima(objective, &grid) >= 2 {
        return Ok(finish(best, OptStatus::NotUnimodal, trace));
    }
    if xs.len() == 1 {
        return Ok(finish(best, OptStatus::Converged, trace));
    }

    let mut a = xs[best_index.saturating_sub(1)];
    let mut b = xs[(best_index + 1).min(xs.len() - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut remaining = budget.saturating_sub(trace.len());
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut e1 = None;
    let mut e2 = None;
    let mut status = OptStatus::Converged;
    while b - a > ARG_TOL {
        if e1.is_none() || e2.is_none() {
            if remaining < 2 {
                status = OptStatus::BudgetExhausted;
                break;
            }
        } else if remaining == 0 {
            status = OptStatus::BudgetExhausted;
            break;
        }
        let v1 = match e1 {
            Some(v) => v,
            None => {
                let v = eval(x1)?;
                trace.push(v);
                remaining -= 1;
                v
            }
        };
        let v2 = match e2 {
            Some(v) => v,
            None => {
                let v = eval(x2)?;
                trace.push(v);
                remaining -= 1;
                v
            }
        };
        for v in [v1, v2] {
            if v.value > best.value {
                best = v;
            }
        }
        if v1.value >= v2.value {
            b = x2;
            x2 = x1;
            e2 = Some(v1);
            x1 = b - inv_phi * (b - a);
            e1 = None;
        } else {
            a = x1;
            x1 = x2;
            e1 = Some(v2);
            x2 = a + inv_phi * (b - a);
            e2 = None;
        }
    }
    Ok(finish(best, status, trace))
}

/// Coordinate ascent over `(D, beta)` starting from the values in `cfg`.
pub fn maximize_joint(problem: &OptProblem, cfg: &ModelConfig) -> Result<OptimumJoint> {
    problem.validate()?;
    cfg.validate()?;
    if problem.variable != Variable::Joint {
        return Err(Error::invalid("variable", "maximize_joint needs the joint variable"));
    }
    let clamp = |x: f64, (lo, hi): (f64, f64)| x.clamp(lo, hi);
    let mut d = clamp(cfg.duty_cycle, problem.duty_bounds);
    let beta = clamp(cfg.beta, problem.beta_bounds);
    if beta * d >= 1.0 {
        d = feasible_upper(d, beta);
    }
    let start = ModelConfig { duty_cycle: d, beta, ..*cfg };
    let (value, noise) = problem.objective.evaluate(&start)?;
    let mut current = Evaluation { duty_cycle: d, beta, value, noise };
    let mut trace = vec![current];
    let mut used = 1;
    let mut status = OptStatus::Converged;

    loop {
        let before = current;
        for variable in [Variable::DutyCycle, Variable::Beta] {
            let remaining = problem.budget.saturating_sub(used);
            if remaining < 3 {
                status = OptStatus::BudgetExhausted;
                break;
            }
            let point = ModelConfig {
                duty_cycle: current.duty_cycle,
                beta: current.beta,
                ..*cfg
            };
            let (lo, hi) = match variable {
                Variable::DutyCycle => (problem.duty_bounds.0, feasible_upper(problem.duty_bounds.1, current.beta)),
                _ => (problem.beta_bounds.0, feasible_upper(problem.beta_bounds.1, current.duty_cycle)),
            };
            let step = search_1d(problem, &point, variable, lo, hi, remaining)?;
            used += step.trace.len();
            if step.status == OptStatus::BudgetExhausted {
                status = OptStatus::BudgetExhausted;
            }
            // Ascent: keep the current point unless the line search improved on it.
            let candidate = step
                .trace
                .iter()
                .copied()
                .fold(None::<Evaluation>, |b, e| match b {
                    Some(b) if b.value >= e.value => Some(b),
                    _ => Some(e),
                });
            if let Some(c) = candidate {
                if c.value > current.value {
                    current = c;
                    trace.push(current);
                }
            }
        }
        let moved = (current.duty_cycle - before.duty_cycle).abs().max((current.beta - before.beta).abs());
        if status == OptStatus::BudgetExhausted || moved < JOINT_TOL {
            break;
        }
    }
    Ok(OptimumJoint {
        duty_cycle: current.duty_cycle,
        beta: current.beta,
        value: current.value,
        status,
        trace,
        evaluations: used,
    })
}
