//! Experiment files.
//!
//! A run is described by a flat TOML table. Powers are in dBm, the SIR
//! threshold in dB, densities per m², distances in meters. Everything is
//! resolved into an [`ExperimentSpec`] in SI units with all defaults filled in;
//! that resolved form is what the run manifest stores.
//!
//! Recognized keys:
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `mode` | success, outage, capacity, laplace, bound, sweep, optimize, region | required |
//! | `output` | CSV path (relative to the experiment file) | required |
//! | `lambda_p`, `c_bar`, `D`, `beta` | network parameters | 0.2, 3, 0.4, 0.6 |
//! | `eta_dbm`, `p_c_dbm`, `theta_db` | PB power, circuit power, SIR threshold | 40, 7, -5 |
//! | `g`, `alpha1`, `alpha2`, `d2d_distance` | | 1, 3, 3, 1 |
//! | `cluster`, `sigma2`, `a` | `"thomas"` (uses `sigma2`) or `"matern"` (uses `a`) | thomas, 4 |
//! | `trials`, `seed`, `window_radius` | Monte Carlo settings | 100000, 1, 100 |
//! | `rel_tol`, `abs_tol`, `max_subdivisions`, `outer_radius` | quadrature | 1e-4, 1e-8, 2000, `window_radius` |
//! | `estimators` | subset of `["mc", "analytic"]` | both |
//! | `s` | Laplace arguments, 1/W (laplace mode) | required |
//! | `sweep_<p>` / `sweep_<p>_range` | value list / `[min, max, steps]` (sweep mode) | |
//! | `quantity` | success, outage, capacity (sweep mode) | success |
//! | `objective`, `variable`, `budget`, `duty_bounds`, `beta_bounds` | optimize mode | |
//! | `epsilon`, `grid_step` | region mode | 0.05 step |
//!
//! Sweepable parameters `<p>`: `c_bar`, `lambda_p`, `D`, `beta`, `theta_db`,
//! `p_c_dbm`, `eta_dbm`. At most two may be swept; rows enumerate the grid with
//! the parameter earlier in that list varying slowest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use wpbc::analytic::QuadSpec;
use wpbc::optimize::{Variable, DEFAULT_BETA_MIN};
use wpbc::power::{db_to_linear, dbm_to_watts, linear_to_db, watts_to_dbm};
use wpbc::{ClusterModel, ModelConfig};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_REGION_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Success,
    Outage,
    Capacity,
    Laplace,
    Bound,
    Sweep,
    Optimize,
    Region,
}

impl Mode {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "success" => Mode::Success,
            "outage" => Mode::Outage,
            "capacity" => Mode::Capacity,
            "laplace" => Mode::Laplace,
            "bound" => Mode::Bound,
            "sweep" => Mode::Sweep,
            "optimize" => Mode::Optimize,
            "region" => Mode::Region,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Success => "success",
            Mode::Outage => "outage",
            Mode::Capacity => "capacity",
            Mode::Laplace => "laplace",
            Mode::Bound => "bound",
            Mode::Sweep => "sweep",
            Mode::Optimize => "optimize",
            Mode::Region => "region",
        }
    }

    /// Whether the `estimators` key applies.
    fn has_estimators(self) -> bool {
        !matches!(self, Mode::Bound | Mode::Optimize | Mode::Region)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Mc,
    Analytic,
}

/// What a sweep measures at each point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Success,
    Outage,
    Capacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "c_bar")]
    CBar,
    #[serde(rename = "lambda_p")]
    LambdaP,
    #[serde(rename = "D")]
    DutyCycle,
    #[serde(rename = "beta")]
    Beta,
    #[serde(rename = "theta_db")]
    ThetaDb,
    #[serde(rename = "p_c_dbm")]
    PcDbm,
    #[serde(rename = "eta_dbm")]
    EtaDbm,
}

impl SweepParam {
    /// Canonical order; also the column order in sweep output.
    pub const ALL: [SweepParam; 7] = [
        SweepParam::CBar,
        SweepParam::LambdaP,
        SweepParam::DutyCycle,
        SweepParam::Beta,
        SweepParam::ThetaDb,
        SweepParam::PcDbm,
        SweepParam::EtaDbm,
    ];

    pub fn key(self) -> &'static str {
        match self {
            SweepParam::CBar => "c_bar",
            SweepParam::LambdaP => "lambda_p",
            SweepParam::DutyCycle => "D",
            SweepParam::Beta => "beta",
            SweepParam::ThetaDb => "theta_db",
            SweepParam::PcDbm => "p_c_dbm",
            SweepParam::EtaDbm => "eta_dbm",
        }
    }

    /// Writes `value` (in file units) into `cfg`.
    pub fn apply(self, cfg: &mut ModelConfig, value: f64) {
        match self {
            SweepParam::CBar => cfg.c_bar = value,
            SweepParam::LambdaP => cfg.lambda_p = value,
            SweepParam::DutyCycle => cfg.duty_cycle = value,
            SweepParam::Beta => cfg.beta = value,
            SweepParam::ThetaDb => cfg.theta = db_to_linear(value),
            SweepParam::PcDbm => cfg.p_c = dbm_to_watts(value),
            SweepParam::EtaDbm => cfg.eta = dbm_to_watts(value),
        }
    }

    /// Value of the parameter in `cfg`, in file units.
    pub fn read(self, cfg: &ModelConfig) -> f64 {
        match self {
            SweepParam::CBar => cfg.c_bar,
            SweepParam::LambdaP => cfg.lambda_p,
            SweepParam::DutyCycle => cfg.duty_cycle,
            SweepParam::Beta => cfg.beta,
            SweepParam::ThetaDb => linear_to_db(cfg.theta),
            SweepParam::PcDbm => watts_to_dbm(cfg.p_c),
            SweepParam::EtaDbm => watts_to_dbm(cfg.eta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// In canonical parameter order.
    pub axes: Vec<SweepAxis>,
    pub quantity: Quantity,
}

impl SweepSpec {
    /// Grid points in output order, each as one value per axis.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut points = vec![Vec::new()];
        for axis in &self.axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        points
    }

    pub fn config_at(&self, base: &ModelConfig, point: &[f64]) -> ModelConfig {
        let mut cfg = *base;
        for (axis, &v) in self.axes.iter().zip(point) {
            axis.param.apply(&mut cfg, v);
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    SuccessLowerBound,
    CapacityApprox,
    McSuccess,
    McCapacity,
}

impl ObjectiveKind {
    pub fn is_mc(self) -> bool {
        matches!(self, ObjectiveKind::McSuccess | ObjectiveKind::McCapacity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeSpec {
    pub objective: ObjectiveKind,
    pub variable: Variable,
    pub duty_bounds: (f64, f64),
    pub beta_bounds: (f64, f64),
    pub budget: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub epsilon: f64,
    pub grid_step: f64,
}

/// A fully resolved experiment. Units are SI except sweep values, which stay
/// in file units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub output: PathBuf,
    pub model: ModelConfig,
    pub window_radius: f64,
    pub trials: u64,
    pub seed: u64,
    pub quad: QuadSpec,
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub laplace_s: Vec<f64>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub optimize: Option<OptimizeSpec>,
    #[serde(default)]
    pub region: Option<RegionSpec>,
}

impl ExperimentSpec {
    /// Experiment with every default and the given mode; used by figure generation.
    pub fn with_defaults(mode: Mode, output: PathBuf) -> Self {
        let window_radius = wpbc::mc::DEFAULT_WINDOW_RADIUS;
        Self {
            mode,
            output,
            model: ModelConfig::default(),
            window_radius,
            trials: wpbc::mc::DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
            quad: QuadSpec::default().with_outer_radius(window_radius),
            estimators: vec![Estimator::Mc, Estimator::Analytic],
            laplace_s: Vec::new(),
            sweep: None,
            optimize: None,
            region: None,
        }
    }

    pub fn uses(&self, e: Estimator) -> bool {
        self.estimators.contains(&e)
    }

    /// Path of the manifest written next to the CSV.
    pub fn manifest_path(&self) -> PathBuf {
        manifest_path_for(&self.output)
    }

    /// Checks every invariant, including each sweep point.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.quad.validate()?;
        let needs_mc = match self.mode {
            Mode::Optimize => matches!(self.optimize, Some(o) if o.objective.is_mc()),
            _ => self.uses(Estimator::Mc),
        };
        if needs_mc {
            wpbc::SimConfig::new(self.model)
                .with_window_radius(self.window_radius)
                .with_trials(self.trials)
                .validate()?;
        }
        if self.estimators.is_empty() {
            return Err(CliError::config("estimators", "at least one estimator is required"));
        }
        match self.mode {
            Mode::Laplace => {
                if self.laplace_s.is_empty() {
                    return Err(CliError::config("s", "laplace mode needs a nonempty list `s`"));
                }
                if let Some(s) = self.laplace_s.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
                    return Err(CliError::config("s", format!("must be finite and >= 0, got {s}")));
                }
            }
            Mode::Success | Mode::Bound if self.model.beta == 0.0 && self.uses(Estimator::Analytic) => {
                return Err(CliError::config("beta", "the analytic bound needs beta > 0"));
            }
            Mode::Sweep => {
                let sweep = self
                    .sweep
                    .as_ref()
                    .ok_or_else(|| CliError::config("sweep", "sweep mode needs at least one sweep_<param> key"))?;
                if sweep.axes.is_empty() || sweep.axes.len() > 2 {
                    return Err(CliError::config("sweep", "sweep one or two parameters"));
                }
                for axis in &sweep.axes {
                    if axis.values.is_empty() {
                        return Err(CliError::config(axis.param.key(), "sweep values must be nonempty"));
                    }
                }
                for point in sweep.points() {
                    let cfg = sweep.config_at(&self.model, &point);
                    cfg.validate().map_err(|e| CliError::at_point(sweep, &point, e))?;
                    if self.uses(Estimator::Analytic) && sweep.quantity == Quantity::Success && cfg.beta == 0.0 {
                        return Err(CliError::config("beta", "the analytic bound needs beta > 0"));
                    }
                }
            }
            Mode::Optimize => {
                let opt = self
                    .optimize
                    .ok_or_else(|| CliError::config("objective", "optimize mode needs `objective` and `variable`"))?;
                self.problem(&opt).validate()?;
            }
            _ => {}
        }
        if let Some(region) = self.region {
            if !(region.epsilon > 0.0 && region.epsilon < 1.0) {
                return Err(CliError::config("epsilon", format!("must lie in (0, 1), got {}", region.epsilon)));
            }
            if !(region.grid_step > 0.0 && region.grid_step <= 1.0) {
                return Err(CliError::config("grid_step", format!("must lie in (0, 1], got {}", region.grid_step)));
            }
        }
        Ok(())
    }

    /// Core optimization problem for this spec.
    pub fn problem(&self, opt: &OptimizeSpec) -> wpbc::optimize::OptProblem {
        use wpbc::optimize::{McSettings, Objective, OptProblem};
        let mc = McSettings {
            window_radius: self.window_radius,
            trials: self.trials,
            seed: self.seed,
        };
        let objective = match opt.objective {
            ObjectiveKind::SuccessLowerBound => Objective::SuccessLowerBound { quad: self.quad },
            ObjectiveKind::CapacityApprox => Objective::CapacityApprox,
            ObjectiveKind::McSuccess => Objective::McSuccess { mc },
            ObjectiveKind::McCapacity => Objective::McCapacity { mc },
        };
        OptProblem {
            objective,
            variable: opt.variable,
            duty_bounds: opt.duty_bounds,
            beta_bounds: opt.beta_bounds,
            budget: opt.budget,
        }
    }
}

pub fn manifest_path_for(csv: &Path) -> PathBuf {
    csv.with_extension("manifest.json")
}

/// Reads and resolves an experiment file. Relative `output` paths are taken
/// relative to the file's directory.
pub fn load(path: &Path) -> Result<ExperimentSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut spec = parse(&text)?;
    if spec.output.is_relative() {
        if let Some(dir) = path.parent() {
            spec.output = dir.join(&spec.output);
        }
    }
    Ok(spec)
}

/// Parses experiment-file text; `output` is left as written.
pub fn parse(text: &str) -> Result<ExperimentSpec, CliError> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| CliError::Parse(e.to_string()))?;
    let mut keys = Keys::new(table);

    let mode_name = keys.string("mode")?.ok_or_else(|| CliError::config("mode", "missing"))?;
    let mode = Mode::parse(&mode_name).ok_or_else(|| CliError::config("mode", format!("unknown mode `{mode_name}`")))?;
    let output = keys.string("output")?.ok_or_else(|| CliError::config("output", "missing"))?;

    let mut spec = ExperimentSpec::with_defaults(mode, PathBuf::from(output));
    let m = &mut spec.model;
    keys.set_f64("lambda_p", &mut m.lambda_p)?;
    keys.set_f64("c_bar", &mut m.c_bar)?;
    keys.set_f64("D", &mut m.duty_cycle)?;
    keys.set_f64("beta", &mut m.beta)?;
    keys.set_f64("g", &mut m.g)?;
    keys.set_f64("alpha1", &mut m.alpha1)?;
    keys.set_f64("alpha2", &mut m.alpha2)?;
    keys.set_f64("d2d_distance", &mut m.d2d_distance)?;
    if let Some(v) = keys.f64("eta_dbm")? {
        m.eta = dbm_to_watts(v);
    }
    if let Some(v) = keys.f64("p_c_dbm")? {
        m.p_c = dbm_to_watts(v);
    }
    if let Some(v) = keys.f64("theta_db")? {
        m.theta = db_to_linear(v);
    }
    let sigma2 = keys.f64("sigma2")?;
    let a = keys.f64("a")?;
    m.cluster = match keys.string("cluster")?.as_deref() {
        None | Some("thomas") => {
            if a.is_some() {
                return Err(CliError::config("a", "only used with cluster = \"matern\""));
            }
            ClusterModel::Thomas { sigma2: sigma2.unwrap_or(4.0) }
        }
        Some("matern") => {
            if sigma2.is_some() {
                return Err(CliError::config("sigma2", "only used with cluster = \"thomas\""));
            }
            ClusterModel::Matern {
                a: a.ok_or_else(|| CliError::config("a", "matern clusters need a radius `a`"))?,
            }
        }
        Some(other) => return Err(CliError::config("cluster", format!("unknown cluster model `{other}`"))),
    };

    if let Some(t) = keys.u64("trials")? {
        spec.trials = t;
    }
    if let Some(s) = keys.u64("seed")? {
        spec.seed = s;
    }
    keys.set_f64("window_radius", &mut spec.window_radius)?;
    keys.set_f64("rel_tol", &mut spec.quad.rel_tol)?;
    keys.set_f64("abs_tol", &mut spec.quad.abs_tol)?;
    if let Some(n) = keys.u64("max_subdivisions")? {
        spec.quad.max_subdivisions = n as usize;
    }
    spec.quad.outer_truncation_radius = Some(keys.f64("outer_radius")?.unwrap_or(spec.window_radius));

    if !mode.has_estimators() {
        // These modes have a single estimator fixed by the mode or objective.
        spec.estimators = vec![Estimator::Analytic];
    } else if let Some(list) = keys.strings("estimators")? {
        let mut set = BTreeSet::new();
        for name in list {
            set.insert(match name.as_str() {
                "mc" => 0,
                "analytic" => 1,
                _ => return Err(CliError::config("estimators", format!("unknown estimator `{name}`"))),
            });
        }
        spec.estimators = set.into_iter().map(|i| [Estimator::Mc, Estimator::Analytic][i]).collect();
    }

    match mode {
        Mode::Laplace => {
            spec.laplace_s = keys.f64_list("s")?.unwrap_or_default();
        }
        Mode::Sweep => {
            let mut axes = Vec::new();
            for param in SweepParam::ALL {
                let list_key = format!("sweep_{}", param.key());
                let range_key = format!("sweep_{}_range", param.key());
                let values = match (keys.f64_list(&list_key)?, keys.f64_list(&range_key)?) {
                    (Some(_), Some(_)) => {
                        return Err(CliError::config(param.key(), format!("give either `{list_key}` or `{range_key}`")))
                    }
                    (Some(v), None) => v,
                    (None, Some(r)) => range_values(&range_key, &r)?,
                    (None, None) => continue,
                };
                axes.push(SweepAxis { param, values });
            }
            let quantity = match keys.string("quantity")?.as_deref() {
                None | Some("success") => Quantity::Success,
                Some("outage") => Quantity::Outage,
                Some("capacity") => Quantity::Capacity,
                Some(other) => return Err(CliError::config("quantity", format!("unknown quantity `{other}`"))),
            };
            spec.sweep = Some(SweepSpec { axes, quantity });
        }
        Mode::Optimize => {
            let objective = match keys.string("objective")?.as_deref() {
                Some("success_lower_bound") => ObjectiveKind::SuccessLowerBound,
                Some("capacity_approx") => ObjectiveKind::CapacityApprox,
                Some("mc_success") => ObjectiveKind::McSuccess,
                Some("mc_capacity") => ObjectiveKind::McCapacity,
                Some(other) => return Err(CliError::config("objective", format!("unknown objective `{other}`"))),
                None => return Err(CliError::config("objective", "missing")),
            };
            let variable = match keys.string("variable")?.as_deref() {
                Some("D") => Variable::DutyCycle,
                Some("beta") => Variable::Beta,
                Some("joint") => Variable::Joint,
                Some(other) => return Err(CliError::config("variable", format!("unknown variable `{other}`"))),
                None => return Err(CliError::config("variable", "missing")),
            };
            let defaults = wpbc::optimize::OptProblem::new(wpbc::optimize::Objective::CapacityApprox, variable);
            let budget = keys.u64("budget")?.map(|b| b as usize).unwrap_or(defaults.budget);
            let duty_bounds = keys.pair("duty_bounds")?.unwrap_or((0.0, 1.0));
            let beta_bounds = keys.pair("beta_bounds")?.unwrap_or((DEFAULT_BETA_MIN, 1.0));
            spec.optimize = Some(OptimizeSpec {
                objective,
                variable,
                duty_bounds,
                beta_bounds,
                budget,
            });
        }
        Mode::Region => {
            let epsilon = keys.f64("epsilon")?.ok_or_else(|| CliError::config("epsilon", "region mode needs `epsilon`"))?;
            let grid_step = keys.f64("grid_step")?.unwrap_or(DEFAULT_REGION_STEP);
            spec.region = Some(RegionSpec { epsilon, grid_step });
        }
        _ => {}
    }

    keys.finish(mode)?;
    spec.validate()?;
    Ok(spec)
}

fn range_values(key: &str, r: &[f64]) -> Result<Vec<f64>, CliError> {
    if r.len() != 3 {
        return Err(CliError::config(key, "range must be [min, max, steps]"));
    }
    let (lo, hi, steps) = (r[0], r[1], r[2]);
    if !(steps >= 1.0 && steps.fract() == 0.0) {
        return Err(CliError::config(key, format!("steps must be a positive integer, got {steps}")));
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(CliError::config(key, format!("need finite min <= max, got [{lo}, {hi}]")));
    }
    let n = steps as usize;
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

/// Typed access to the flat table that remembers which keys were consumed.
struct Keys {
    table: Table,
}

impl Keys {
    fn new(table: Table) -> Self {
        Self { table }
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.table.remove(key)
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(x)),
            Some(Value::Integer(i)) => Ok(Some(i as f64)),
            Some(other) => Err(CliError::config(key, format!("expected a number, got {}", other.type_str()))),
        }
    }

    fn set_f64(&mut self, key: &str, slot: &mut f64) -> Result<(), CliError> {
        if let Some(v) = self.f64(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if i >= 0 => Ok(Some(i as u64)),
            Some(other) => Err(CliError::config(key, format!("expected a nonnegative integer, got {other}"))),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(CliError::config(key, format!("expected a string, got {}", other.type_str()))),
        }
    }

    fn array(&mut self, key: &str) -> Result<Option<Vec<Value>>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(a)) => Ok(Some(a)),
            Some(other) => Err(CliError::config(key, format!("expected an array, got {}", other.type_str()))),
        }
    }

    fn f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        let Some(items) = self.array(key)? else {
            return Ok(None);
        };
        items
            .into_iter()
            .map(|v| match v {
                Value::Float(x) => Ok(x),
                Value::Integer(i) => Ok(i as f64),
                other => Err(CliError::config(key, format!("expected numbers, got {}", other.type_str()))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn strings(&mut self, key: &str) -> Result<Option<Vec<String>>, CliError> {
        let Some(items) = self.array(key)? else {
            return Ok(None);
        };
        items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                other => Err(CliError::config(key, format!("expected strings, got {}", other.type_str()))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn pair(&mut self, key: &str) -> Result<Option<(f64, f64)>, CliError> {
        match self.f64_list(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Ok(Some((v[0], v[1]))),
            Some(_) => Err(CliError::config(key, "expected [lower, upper]")),
        }
    }

    /// Errors on the first key that was never consumed.
    fn finish(self, mode: Mode) -> Result<(), CliError> {
        match self.table.keys().next() {
            None => Ok(()),
            Some(key) => Err(CliError::config(
                key,
                format!("unknown key, or not used by mode `{}`", mode.name()),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_materialized() {
        let spec = parse("mode = \"success\"\noutput = \"out.csv\"\n").unwrap();
        assert_eq!(spec.model, ModelConfig::default());
        assert_eq!(spec.trials, 100_000);
        assert_eq!(spec.quad.outer_truncation_radius, Some(100.0));
        assert_eq!(spec.estimators, vec![Estimator::Mc, Estimator::Analytic]);
    }

    #[test]
    fn units_are_converted() {
        let spec = parse(
            "mode = \"bound\"\noutput = \"o.csv\"\ntheta_db = 0\np_c_dbm = 30\neta_dbm = 30\ncluster = \"matern\"\na = 5\n",
        )
        .unwrap();
        assert!((spec.model.theta - 1.0).abs() < 1e-15);
        assert!((spec.model.p_c - 1.0).abs() < 1e-15);
        assert!((spec.model.eta - 1.0).abs() < 1e-15);
        assert_eq!(spec.model.cluster, ClusterModel::Matern { a: 5.0 });
    }

    #[test]
    fn sweep_axes_follow_canonical_order() {
        let spec = parse(
            "mode = \"sweep\"\noutput = \"o.csv\"\nsweep_beta_range = [0.1, 0.9, 9]\nsweep_c_bar = [3, 4, 5]\n",
        )
        .unwrap();
        let sweep = spec.sweep.unwrap();
        assert_eq!(sweep.axes[0].param, SweepParam::CBar);
        assert_eq!(sweep.axes[1].param, SweepParam::Beta);
        let points = sweep.points();
        assert_eq!(points.len(), 27);
        assert_eq!(points[0], vec![3.0, 0.1]);
        assert_eq!(points[1][0], 3.0);
        assert!((points[8][1] - 0.9).abs() < 1e-15);
        assert_eq!(points[9], vec![4.0, 0.1]);
    }

    #[test]
    fn sweep_values_apply_in_file_units() {
        let mut cfg = ModelConfig::default();
        SweepParam::ThetaDb.apply(&mut cfg, 3.0);
        assert!((SweepParam::ThetaDb.read(&cfg) - 3.0).abs() < 1e-12);
        SweepParam::PcDbm.apply(&mut cfg, 0.0);
        assert!((cfg.p_c - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn invalid_product_names_invariant() {
        let err = parse("mode = \"success\"\noutput = \"o.csv\"\nbeta = 1.0\nD = 1.0\n").unwrap_err();
        assert_eq!(err.parameter(), Some("beta*duty_cycle"));

        let err = parse("mode = \"sweep\"\noutput = \"o.csv\"\nD = 1.0\nsweep_beta = [0.5, 1.0]\n").unwrap_err();
        assert_eq!(err.parameter(), Some("beta*duty_cycle"));
        assert!(err.to_string().contains("beta=1"), "{err}");
    }

    #[test]
    fn rejects_unknown_and_misplaced_keys() {
        let err = parse("mode = \"success\"\noutput = \"o.csv\"\nbetta = 0.5\n").unwrap_err();
        assert_eq!(err.parameter(), Some("betta"));
        let err = parse("mode = \"success\"\noutput = \"o.csv\"\nsweep_beta = [0.5]\n").unwrap_err();
        assert_eq!(err.parameter(), Some("sweep_beta"));
        let err = parse("mode = \"fly\"\noutput = \"o.csv\"\n").unwrap_err();
        assert_eq!(err.parameter(), Some("mode"));
        let err = parse("mode = \"laplace\"\noutput = \"o.csv\"\n").unwrap_err();
        assert_eq!(err.parameter(), Some("s"));
        let err = parse("mode = \"sweep\"\noutput = \"o.csv\"\nsweep_D = [0.1]\nsweep_beta = [0.1]\nsweep_c_bar = [3]\n")
            .unwrap_err();
        assert_eq!(err.parameter(), Some("sweep"));
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = parse("mode = \"success\"\noutput = \"o.csv\"\ntrials = 1.5\n").unwrap_err();
        assert_eq!(err.parameter(), Some("trials"));
        let err = parse("mode = \"success\"\noutput = \"o.csv\"\nbeta = \"high\"\n").unwrap_err();
        assert_eq!(err.parameter(), Some("beta"));
    }

    #[test]
    fn ranges() {
        assert_eq!(range_values("k", &[1.0, 2.0, 1.0]).unwrap(), vec![1.0]);
        assert_eq!(range_values("k", &[0.0, 1.0, 3.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(range_values("k", &[0.0, 1.0, 0.0]).is_err());
        assert!(range_values("k", &[1.0, 0.0, 2.0]).is_err());
        assert!(range_values("k", &[0.0, 1.0]).is_err());
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let spec = parse(
            "mode = \"sweep\"\noutput = \"o.csv\"\ntheta_db = -3.3\nsweep_eta_dbm_range = [30, 40, 7]\nquantity = \"capacity\"\n",
        )
        .unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: ExperimentSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
