//! The four reference parameter studies: success probability against `beta`
//! and `D`, network capacity against `lambda_p` and `beta`, each for
//! `c_bar` in {3, 4, 5}.

use std::path::{Path, PathBuf};

use wpbc::mc::{DEFAULT_TRIALS, DEFAULT_WINDOW_RADIUS};

use crate::config::{ExperimentSpec, Mode, Quantity, SweepAxis, SweepParam, SweepSpec, DEFAULT_SEED};
use crate::error::CliError;
use crate::runner::{execute, RunSummary};

pub const FIGURE_NAMES: [&str; 4] = ["ps_vs_beta", "ps_vs_D", "capacity_vs_lambda_p", "capacity_vs_beta"];
pub const C_BAR_VALUES: [f64; 3] = [3.0, 4.0, 5.0];
pub const LAMBDA_P_VALUES: [f64; 13] = [0.01, 0.02, 0.03, 0.04, 0.05, 0.1, 0.2, 0.5, 1.0, 1.5, 1.8, 2.0, 2.2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureSettings {
    pub trials: u64,
    pub seed: u64,
    pub window_radius: f64,
}

impl Default for FigureSettings {
    fn default() -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
            window_radius: DEFAULT_WINDOW_RADIUS,
        }
    }
}

/// `first, first + 0.05, ..., 1.0`, computed in hundredths to avoid drift.
fn twentieths(first: u32) -> Vec<f64> {
    (first..=20).map(|k| f64::from(5 * k) / 100.0).collect()
}

pub fn figure_specs(out_dir: &Path, settings: FigureSettings) -> Vec<ExperimentSpec> {
    let betas = twentieths(2);
    let duties = twentieths(1);
    let studies = [
        (SweepParam::Beta, betas.clone(), Quantity::Success),
        (SweepParam::DutyCycle, duties, Quantity::Success),
        (SweepParam::LambdaP, LAMBDA_P_VALUES.to_vec(), Quantity::Capacity),
        (SweepParam::Beta, betas, Quantity::Capacity),
    ];
    FIGURE_NAMES
        .iter()
        .zip(studies)
        .map(|(name, (param, values, quantity))| {
            let mut spec = ExperimentSpec::with_defaults(Mode::Sweep, out_dir.join(format!("{name}.csv")));
            spec.trials = settings.trials;
            spec.seed = settings.seed;
            spec.window_radius = settings.window_radius;
            spec.quad = spec.quad.with_outer_radius(settings.window_radius);
            spec.sweep = Some(SweepSpec {
                axes: vec![
                    SweepAxis {
                        param: SweepParam::CBar,
                        values: C_BAR_VALUES.to_vec(),
                    },
                    SweepAxis { param, values },
                ],
                quantity,
            });
            spec
        })
        .collect()
}

/// Writes the four CSVs (and their manifests) into `out_dir`.
pub fn reproduce_figures(out_dir: &Path, settings: FigureSettings) -> Result<Vec<RunSummary>, CliError> {
    figure_specs(out_dir, settings).iter().map(execute).collect()
}

pub fn figure_paths(out_dir: &Path) -> Vec<PathBuf> {
    FIGURE_NAMES.iter().map(|n| out_dir.join(format!("{n}.csv"))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let b = twentieths(2);
        assert_eq!(b.len(), 19);
        assert_eq!(b[0], 0.1);
        assert_eq!(b[10], 0.6);
        assert_eq!(*b.last().unwrap(), 1.0);
        assert_eq!(twentieths(1).len(), 20);
    }

    #[test]
    fn specs_validate() {
        let specs = figure_specs(Path::new("out"), FigureSettings::default());
        assert_eq!(specs.len(), 4);
        for s in &specs {
            s.validate().unwrap();
            let sweep = s.sweep.as_ref().unwrap();
            assert_eq!(sweep.axes[0].param, SweepParam::CBar);
            assert_eq!(sweep.axes.len(), 2);
        }
        assert_eq!(specs[2].output, Path::new("out/capacity_vs_lambda_p.csv"));
    }
}
