//! Executes a resolved experiment.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use wpbc::analytic::{self, QuadSpec};
use wpbc::mc::{self, Estimate};
use wpbc::optimize::{maximize_1d, maximize_joint, Variable};
use wpbc::{ModelConfig, SimConfig};

use crate::config::{Estimator, ExperimentSpec, Mode, Quantity};
use crate::error::CliError;
use crate::output::{Cell, Manifest, Table};

/// Result table plus the mode-specific summary stored in the manifest.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub table: Table,
    pub result: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub csv: PathBuf,
    pub manifest: PathBuf,
    pub rows: usize,
}

fn sim(spec: &ExperimentSpec, model: ModelConfig) -> SimConfig {
    SimConfig::new(model)
        .with_window_radius(spec.window_radius)
        .with_trials(spec.trials)
        .with_seed(spec.seed)
}

fn standard(mc: Option<Estimate>, analytic: Option<f64>) -> Vec<Cell> {
    let float = |x: Option<f64>| x.map_or(Cell::Empty, Cell::Float);
    vec![
        float(mc.map(|e| e.value)),
        float(mc.map(|e| e.std_error)),
        float(analytic),
        mc.map_or(Cell::Empty, |e| Cell::Int(e.trials)),
        mc.map_or(Cell::Empty, |e| Cell::Int(e.seed)),
    ]
}

fn measure(
    spec: &ExperimentSpec,
    quantity: Quantity,
    cfg: &ModelConfig,
    quad: &QuadSpec,
) -> Result<(Option<Estimate>, Option<f64>), CliError> {
    let mc = if spec.uses(Estimator::Mc) {
        let sim = sim(spec, *cfg);
        Some(match quantity {
            Quantity::Success => mc::estimate_success(&sim)?,
            Quantity::Outage => mc::estimate_power_outage(&sim)?,
            Quantity::Capacity => mc::estimate_capacity(&sim)?,
        })
    } else {
        None
    };
    let analytic = if spec.uses(Estimator::Analytic) {
        Some(match quantity {
            Quantity::Success => analytic::success_lower_bound(cfg, quad)?.value,
            Quantity::Outage => analytic::power_outage(cfg)?,
            Quantity::Capacity => analytic::capacity_approx(cfg)?,
        })
    } else {
        None
    };
    Ok((mc, analytic))
}

/// Runs the experiment without touching the filesystem.
pub fn evaluate(spec: &ExperimentSpec) -> Result<Outcome, CliError> {
    spec.validate()?;
    let cfg = spec.model;
    let quad = spec.quad;
    match spec.mode {
        Mode::Success | Mode::Outage | Mode::Capacity => {
            let quantity = match spec.mode {
                Mode::Success => Quantity::Success,
                Mode::Outage => Quantity::Outage,
                _ => Quantity::Capacity,
            };
            let (mc, an) = measure(spec, quantity, &cfg, &quad)?;
            let mut table = Table::new(&[]);
            table.push(standard(mc, an));
            let result = if spec.mode == Mode::Success && spec.uses(Estimator::Analytic) {
                json!({ "lower_bound": analytic::success_lower_bound(&cfg, &quad)? })
            } else {
                serde_json::Value::Null
            };
            Ok(Outcome { table, result })
        }
        Mode::Bound => {
            let bound = analytic::success_lower_bound(&cfg, &quad)?;
            let mut table = Table::new(&[]);
            table.push(standard(None, Some(bound.value)));
            Ok(Outcome {
                table,
                result: json!({ "lower_bound": bound }),
            })
        }
        Mode::Laplace => {
            let s = &spec.laplace_s;
            let mc = if spec.uses(Estimator::Mc) {
                Some(mc::estimate_laplace_many(&sim(spec, cfg), s)?)
            } else {
                None
            };
            let an = if spec.uses(Estimator::Analytic) {
                Some(
                    s.par_iter()
                        .map(|&s| analytic::laplace(s, &cfg, &quad))
                        .collect::<Result<Vec<_>, _>>()?,
                )
            } else {
                None
            };
            let mut table = Table::new(&["s"]);
            for (i, &si) in s.iter().enumerate() {
                let mut row = vec![Cell::Float(si)];
                row.extend(standard(mc.as_ref().map(|v| v[i]), an.as_ref().map(|v| v[i].value)));
                table.push(row);
            }
            let errors: Option<Vec<f64>> = an.map(|v| v.iter().map(|i| i.error).collect());
            Ok(Outcome {
                table,
                result: json!({ "analytic_error": errors }),
            })
        }
        Mode::Sweep => {
            let sweep = spec.sweep.as_ref().expect("validated");
            let keys: Vec<&str> = sweep.axes.iter().map(|a| a.param.key()).collect();
            let points = sweep.points();
            let results = points
                .par_iter()
                .map(|p| {
                    let cfg = sweep.config_at(&cfg, p);
                    measure(spec, sweep.quantity, &cfg, &quad).map_err(|e| match e {
                        CliError::Model(source) => CliError::at_point(sweep, p, source),
                        other => other,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut table = Table::new(&keys);
            for (p, (mc, an)) in points.iter().zip(results) {
                let mut row: Vec<Cell> = p.iter().map(|&v| Cell::Float(v)).collect();
                row.extend(standard(mc, an));
                table.push(row);
            }
            Ok(Outcome {
                table,
                result: serde_json::Value::Null,
            })
        }
        Mode::Optimize => {
            let opt = spec.optimize.expect("validated");
            let problem = spec.problem(&opt);
            let (trace, result) = if opt.variable == Variable::Joint {
                let best = maximize_joint(&problem, &cfg)?;
                (best.trace.clone(), serde_json::to_value(&best)?)
            } else {
                let best = maximize_1d(&problem, &cfg)?;
                (best.trace.clone(), serde_json::to_value(&best)?)
            };
            let mut table = Table::new(&["D", "beta"]);
            for e in trace {
                let mut row = vec![Cell::Float(e.duty_cycle), Cell::Float(e.beta)];
                if opt.objective.is_mc() {
                    let est = Estimate {
                        value: e.value,
                        std_error: e.noise,
                        trials: spec.trials,
                        seed: spec.seed,
                    };
                    row.extend(standard(Some(est), None));
                } else {
                    row.extend(standard(None, Some(e.value)));
                }
                table.push(row);
            }
            Ok(Outcome {
                table,
                result: json!({ "optimum": result }),
            })
        }
        Mode::Region => {
            let region = spec.region.expect("validated");
            let r = analytic::feasible_region(&cfg, region.epsilon, region.grid_step, &quad)?;
            let mut table = Table::new(&["D", "beta"]);
            table.header.push("feasible".into());
            table.header.push("status".into());
            for c in &r.cells {
                let mut row = vec![Cell::Float(c.duty_cycle), Cell::Float(c.beta)];
                row.extend(standard(None, c.laplace.map(|l| l.value)));
                row.push(Cell::Int(c.feasible as u64));
                let status = serde_json::to_value(c.status)?;
                row.push(Cell::Text(status.as_str().unwrap_or_default().to_string()));
                table.push(row);
            }
            let feasible = r.cells.iter().filter(|c| c.feasible).count();
            Ok(Outcome {
                table,
                result: json!({ "feasible_cells": feasible, "cells": r.cells.len() }),
            })
        }
    }
}

/// Runs the experiment and writes its CSV and manifest.
pub fn execute(spec: &ExperimentSpec) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let outcome = evaluate(spec)?;
    outcome.table.write(&spec.output)?;
    let manifest = Manifest {
        tool: "wpbc".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        spec: spec.clone(),
        csv: spec.output.clone(),
        rows: outcome.table.rows.len(),
        workers: rayon::current_num_threads(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        result: outcome.result,
    };
    let manifest_path = spec.manifest_path();
    manifest.write(&manifest_path)?;
    Ok(RunSummary {
        csv: spec.output.clone(),
        manifest: manifest_path,
        rows: manifest.rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse;

    fn quick(text: &str) -> Outcome {
        let spec = parse(&format!("output = \"o.csv\"\ntrials = 300\nwindow_radius = 20\n{text}")).unwrap();
        evaluate(&spec).unwrap()
    }

    #[test]
    fn success_row_has_both_estimators() {
        let out = quick("mode = \"success\"\n");
        assert_eq!(out.table.rows.len(), 1);
        let row = &out.table.rows[0];
        assert!(matches!(row[0], Cell::Float(v) if (0.0..=1.0).contains(&v)));
        assert!(matches!(row[2], Cell::Float(v) if (0.0..=1.0).contains(&v)));
        assert_eq!(row[3], Cell::Int(300));
        assert_eq!(row[4], Cell::Int(1));
        assert!(out.result["lower_bound"]["s_star"].as_f64().unwrap() > 79.0);
    }

    #[test]
    fn analytic_only_leaves_mc_cells_empty() {
        let out = quick("mode = \"outage\"\nestimators = [\"analytic\"]\n");
        let row = &out.table.rows[0];
        assert_eq!(row[0], Cell::Empty);
        assert_eq!(row[1], Cell::Empty);
        assert_eq!(row[3], Cell::Empty);
        let Cell::Float(p0) = row[2] else { panic!() };
        let direct = analytic::power_outage(&ModelConfig::default()).unwrap();
        assert_eq!(p0, direct);
    }

    #[test]
    fn sweep_rows_are_in_grid_order() {
        let out = quick("mode = \"sweep\"\nestimators = [\"analytic\"]\nquantity = \"capacity\"\nsweep_c_bar = [3, 4]\nsweep_D = [0.2, 0.4, 0.6]\n");
        assert_eq!(out.table.header[..2], ["c_bar".to_string(), "D".to_string()]);
        assert_eq!(out.table.rows.len(), 6);
        for (i, row) in out.table.rows.iter().enumerate() {
            let (c, d) = ([3.0, 4.0][i / 3], [0.2, 0.4, 0.6][i % 3]);
            assert_eq!(row[0], Cell::Float(c));
            assert_eq!(row[1], Cell::Float(d));
            let cfg = ModelConfig { c_bar: c, duty_cycle: d, ..ModelConfig::default() };
            assert_eq!(row[4], Cell::Float(analytic::capacity_approx(&cfg).unwrap()));
        }
    }

    #[test]
    fn laplace_rows() {
        let out = quick("mode = \"laplace\"\nestimators = [\"mc\"]\ns = [0, 1]\n");
        assert_eq!(out.table.rows.len(), 2);
        assert_eq!(out.table.rows[0][1], Cell::Float(1.0));
        assert_eq!(out.table.rows[0][3], Cell::Empty);
    }

    #[test]
    fn optimize_trace_matches_result() {
        let out = quick("mode = \"optimize\"\nobjective = \"capacity_approx\"\nvariable = \"D\"\ncluster = \"matern\"\na = 20\n");
        let best = out.result["optimum"]["value"].as_f64().unwrap();
        let max = out
            .table
            .rows
            .iter()
            .filter_map(|r| match r[4] {
                Cell::Float(v) => Some(v),
                _ => None,
            })
            .fold(f64::MIN, f64::max);
        assert_eq!(best, max);
    }

    #[test]
    fn region_table() {
        let out = quick("mode = \"region\"\nepsilon = 0.5\ngrid_step = 0.5\nlambda_p = 0.01\n");
        assert_eq!(out.table.header.last().map(String::as_str), Some("status"));
        assert_eq!(out.table.rows.len(), 9);
        // beta = 0 cells cannot be evaluated.
        assert_eq!(out.table.rows[0][8], Cell::Text("zero_beta".into()));
    }
}
