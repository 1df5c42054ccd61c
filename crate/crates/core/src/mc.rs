//! Palm-conditioned Monte Carlo for the typical backscatter link.
//!
//! Each trial places the typical node at the origin and its PB at `-V`, with
//! `V` drawn from the cluster law. The typical cluster gains Poisson(c̄)
//! further members around that PB; every other PB comes from a PPP on the
//! disk window and carries its own Poisson(c̄) cluster. All nodes other than
//! the typical one are thinned by the duty cycle (they interfere only when
//! they share the typical node's mini-slot) and powered by their own PB only.
//!
//! Trial `t` draws from a Xoshiro256++ generator keyed by ChaCha8 stream
//! `(seed, t)`. The trial stream carries the typical link, cluster sizes,
//! PB positions and one thinning uniform per node; a node that survives
//! thinning takes its offset and fading from a generator keyed by its index
//! within the trial. Runs that differ in `D`, `beta`, `theta`, `eta`, `g` or
//! `P_c` thus see identical point patterns, with the active set growing
//! monotonically in `D` (common random numbers), and results do not depend on
//! how trials are spread over threads.

use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};
use crate::geometry::{sample_offset, ClusterModel, Point2, PoissonCount, Window};
use crate::power::{distance_threshold, gated_power, ModelConfig};

pub const DEFAULT_WINDOW_RADIUS: f64 = 100.0;
pub const DEFAULT_TRIALS: u64 = 100_000;

/// Trials per work item. Fixed so that partial sums, and therefore results,
/// are identical for any thread count.
const BLOCK: u64 = 512;

/// Which interferers a trial includes. Restricting to one class gives the MC
/// counterparts of the intra- and inter-cluster characteristic functionals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterferenceSources {
    #[default]
    All,
    IntraOnly,
    InterOnly,
}

impl InterferenceSources {
    fn intra(self) -> bool {
        self != InterferenceSources::InterOnly
    }

    fn inter(self) -> bool {
        self != InterferenceSources::IntraOnly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: ModelConfig,
    pub window_radius: f64,
    pub trials: u64,
    pub seed: u64,
    #[serde(default)]
    pub sources: InterferenceSources,
}

impl SimConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            window_radius: DEFAULT_WINDOW_RADIUS,
            trials: DEFAULT_TRIALS,
            seed: 0,
            sources: InterferenceSources::All,
        }
    }

    pub fn with_trials(mut self, trials: u64) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_window_radius(mut self, radius: f64) -> Self {
        self.window_radius = radius;
        self
    }

    pub fn with_sources(mut self, sources: InterferenceSources) -> Self {
        self.sources = sources;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        check_positive("window_radius", self.window_radius)?;
        let guard = guard_radius(&self.model);
        if self.window_radius < guard {
            return Err(Error::invalid(
                "window_radius",
                format!(
                    "must be at least the guard radius {guard:.3} m \
                     (D2D distance plus the 1e-6 mass radius of the cluster law), got {}",
                    self.window_radius
                ),
            ));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be >= 1"));
        }
        Ok(())
    }
}

/// Smallest admissible window: the receiver plus essentially all of the
/// typical cluster must fit inside it.
pub fn guard_radius(model: &ModelConfig) -> f64 {
    model.d2d_distance + model.cluster.support_radius(1e-6)
}

/// An interfering backscatter node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interferer {
    pub location: Point2,
    /// Distance to the node's own PB.
    pub pb_distance: f64,
    /// Rayleigh power fading towards the typical receiver.
    pub fading: f64,
}

/// One Palm-conditioned realization seen from the typical node at the origin.
///
/// Interferers belong to PBs inside `window`; daughters of PBs near its edge
/// may fall slightly outside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub typical_node: Point2,
    pub typical_pb: Point2,
    pub receiver: Point2,
    pub signal_fading: f64,
    pub interferers: Vec<Interferer>,
    pub window: Window,
}

impl Scenario {
    /// Distance between the typical node and its PB.
    pub fn typical_pb_distance(&self) -> f64 {
        self.typical_pb.distance(self.typical_node)
    }
}

/// Monte Carlo point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub trials: u64,
    pub seed: u64,
}

impl Estimate {
    pub fn scaled(self, k: f64) -> Self {
        Self {
            value: self.value * k,
            std_error: self.std_error * k.abs(),
            ..self
        }
    }
}

/// The generator used by trial `trial` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> Xoshiro256PlusPlus {
    let mut keys = ChaCha8Rng::seed_from_u64(seed);
    keys.set_stream(trial);
    Xoshiro256PlusPlus::from_rng(&mut keys)
}

/// Murmur3 finalizer, a bijection on `u64`.
fn fmix64(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^ (x >> 33)
}

/// Generator for node `index` of the trial with key `key`.
fn node_rng(key: u64, index: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(fmix64(key.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))))
}

/// `x^(-alpha/2)`; exact-integer `alpha` avoids `powf`.
fn inv_pow_half(x: f64, alpha: f64) -> f64 {
    if alpha == alpha.trunc() && (1.0..=16.0).contains(&alpha) {
        let n = alpha as i32;
        let whole = x.powi(n / 2);
        if n % 2 == 0 {
            1.0 / whole
        } else {
            1.0 / (whole * x.sqrt())
        }
    } else {
        x.powf(-0.5 * alpha)
    }
}

/// Offsets of exactly zero make the path loss singular; they have
/// probability zero and are redrawn.
fn nonzero_offset<R: Rng + ?Sized>(model: ClusterModel, rng: &mut R) -> Point2 {
    loop {
        let v = sample_offset(model, rng);
        if v.norm_sq() > 0.0 {
            return v;
        }
    }
}

/// Typical-link part of a trial, drawn before any interferer.
#[derive(Debug, Clone, Copy)]
struct Head {
    typical_pb: Point2,
    receiver: Point2,
    signal_fading: f64,
    node_key: u64,
}

/// Per-run constants of the scenario sampler.
struct Sampler {
    cluster: ClusterModel,
    window: Window,
    cluster_size: PoissonCount,
    pb_count: PoissonCount,
    keep_prob: f64,
    d2d: f64,
    sources: InterferenceSources,
}

impl Sampler {
    fn new(sim: &SimConfig) -> Result<Self> {
        sim.validate()?;
        let window = Window::new(sim.window_radius)?;
        let m = &sim.model;
        Ok(Self {
            cluster: m.cluster,
            window,
            cluster_size: PoissonCount::new(m.c_bar)?,
            pb_count: PoissonCount::new(m.lambda_p * window.area())?,
            keep_prob: m.duty_cycle,
            d2d: m.d2d_distance,
            sources: sim.sources,
        })
    }

    fn head<R: Rng + ?Sized>(&self, rng: &mut R) -> Head {
        let typical_pb = -nonzero_offset(self.cluster, rng);
        let angle = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        let receiver = Point2::from_polar(self.d2d, angle);
        let signal_fading = rng.sample(Exp1);
        Head {
            typical_pb,
            receiver,
            signal_fading,
            node_key: rng.random(),
        }
    }

    /// Draws one cluster around `center`, visiting the members that survive
    /// thinning. `next_node` numbers nodes across the trial.
    fn cluster<R, F>(&self, center: Point2, rng: &mut R, key: u64, next_node: &mut u64, emit: bool, visit: &mut F) -> ControlFlow<()>
    where
        R: Rng + ?Sized,
        F: FnMut(Interferer) -> ControlFlow<()>,
    {
        let count = self.cluster_size.sample(rng);
        for _ in 0..count {
            let index = *next_node;
            *next_node += 1;
            let keep = rng.random::<f64>() < self.keep_prob;
            if emit && keep {
                let mut node = node_rng(key, index);
                let offset = nonzero_offset(self.cluster, &mut node);
                visit(Interferer {
                    location: center + offset,
                    pb_distance: offset.norm(),
                    fading: node.sample(Exp1),
                })?;
            }
        }
        ControlFlow::Continue(())
    }

    /// Visits every interferer of the trial in draw order; stops early when
    /// `visit` breaks.
    fn interferers<R, F>(&self, head: &Head, rng: &mut R, mut visit: F)
    where
        R: Rng + ?Sized,
        F: FnMut(Interferer) -> ControlFlow<()>,
    {
        let mut next_node = 0;
        let key = head.node_key;
        if self.cluster(head.typical_pb, rng, key, &mut next_node, self.sources.intra(), &mut visit).is_break() {
            return;
        }
        if !self.sources.inter() {
            return;
        }
        let pbs = self.pb_count.sample(rng);
        for _ in 0..pbs {
            let pb = self.window.sample_uniform(rng);
            if self.cluster(pb, rng, key, &mut next_node, true, &mut visit).is_break() {
                return;
            }
        }
    }
}

/// Received interference power from one interferer, with the circuit gate.
struct Kernel {
    d0: f64,
    amplitude: f64,
    alpha1: f64,
    alpha2: f64,
}

impl Kernel {
    fn new(cfg: &ModelConfig) -> Self {
        Self {
            d0: distance_threshold(cfg),
            amplitude: cfg.beta * cfg.wpt_power(),
            alpha1: cfg.alpha1,
            alpha2: cfg.alpha2,
        }
    }

    fn signal(&self, head: &Head) -> Option<f64> {
        let r = head.typical_pb.norm();
        (r <= self.d0).then(|| self.amplitude * r.powf(-self.alpha1) * head.signal_fading)
    }

    fn power_at(&self, x: &Interferer, receiver: Point2) -> f64 {
        if x.pb_distance > self.d0 {
            return 0.0;
        }
        self.mean_power_at(x, receiver) * x.fading
    }

    /// Received power with the fading averaged out.
    fn mean_power_at(&self, x: &Interferer, receiver: Point2) -> f64 {
        if x.pb_distance > self.d0 {
            return 0.0;
        }
        let dist_sq = (x.location - receiver).norm_sq();
        let pb_sq = x.pb_distance * x.pb_distance;
        let path = if self.alpha1 == self.alpha2 {
            inv_pow_half(pb_sq * dist_sq, self.alpha1)
        } else {
            inv_pow_half(pb_sq, self.alpha1) * inv_pow_half(dist_sq, self.alpha2)
        };
        self.amplitude * path
    }
}

/// Draws one scenario from `rng`.
pub fn sample_scenario<R: Rng + ?Sized>(sim: &SimConfig, rng: &mut R) -> Result<Scenario> {
    let sampler = Sampler::new(sim)?;
    let head = sampler.head(rng);
    let mut interferers = Vec::new();
    sampler.interferers(&head, rng, |x| {
        interferers.push(x);
        ControlFlow::Continue(())
    });
    Ok(Scenario {
        typical_node: Point2::ORIGIN,
        typical_pb: head.typical_pb,
        receiver: head.receiver,
        signal_fading: head.signal_fading,
        interferers,
        window: sampler.window,
    })
}

/// Interference power at the scenario's receiver using the fading stored
/// with each interferer.
pub fn interference_power(scenario: &Scenario, cfg: &ModelConfig) -> Result<f64> {
    scenario.interferers.iter().try_fold(0.0, |acc, x| {
        let tx = gated_power(cfg, x.pb_distance)?;
        Ok(acc + tx.value * x.fading * x.location.distance(scenario.receiver).powf(-cfg.alpha2))
    })
}

/// Redraws the i.i.d. Exp(1) fading of the signal and every interferer.
pub fn redraw_fading<R: Rng + ?Sized>(scenario: &mut Scenario, rng: &mut R) {
    scenario.signal_fading = rng.sample(Exp1);
    for x in &mut scenario.interferers {
        x.fading = rng.sample(Exp1);
    }
}

/// Streaming mean/variance (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        Moments { n, mean, m2 }
    }

    fn estimate(&self, seed: u64) -> Estimate {
        let std_error = if self.n > 1 {
            (self.m2.max(0.0) / (self.n - 1) as f64).sqrt() / (self.n as f64).sqrt()
        } else {
            0.0
        };
        Estimate {
            value: self.mean,
            std_error,
            trials: self.n,
            seed,
        }
    }
}

fn bernoulli_estimate(hits: u64, trials: u64, seed: u64) -> Estimate {
    let n = trials as f64;
    let p = hits as f64 / n;
    let std_error = if trials > 1 {
        (p * (1.0 - p) * n / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Estimate {
        value: p,
        std_error,
        trials,
        seed,
    }
}

/// Runs `step` for every trial in fixed blocks and merges block results in
/// block order.
fn run_trials<A, I, S, M>(trials: u64, init: I, step: S, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    S: Fn(&mut A, u64) + Sync,
    M: Fn(A, A) -> A,
{
    let blocks = trials.div_ceil(BLOCK);
    let partials: Vec<A> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            for t in b * BLOCK..((b + 1) * BLOCK).min(trials) {
                step(&mut acc, t);
            }
            acc
        })
        .collect();
    partials.into_iter().fold(init(), merge)
}

/// Success probability of the typical link: the typical node is not in power
/// outage and its received signal is at least `theta` times the interference.
pub fn estimate_success(sim: &SimConfig) -> Result<Estimate> {
    let sampler = Sampler::new(sim)?;
    let kernel = Kernel::new(&sim.model);
    let theta = sim.model.theta;
    let hits = run_trials(
        sim.trials,
        || 0u64,
        |hits, t| {
            let mut rng = trial_rng(sim.seed, t);
            let head = sampler.head(&mut rng);
            let Some(signal) = kernel.signal(&head) else {
                return;
            };
            if signal <= 0.0 {
                return;
            }
            let mut interference = 0.0;
            let mut failed = false;
            sampler.interferers(&head, &mut rng, |x| {
                interference += kernel.power_at(&x, head.receiver);
                if signal < theta * interference {
                    failed = true;
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            });
            if !failed {
                *hits += 1;
            }
        },
        |a, b| a + b,
    );
    Ok(bernoulli_estimate(hits, sim.trials, sim.seed))
}

/// Fraction of trials in which the typical node is farther than `d0` from
/// its PB.
pub fn estimate_power_outage(sim: &SimConfig) -> Result<Estimate> {
    let sampler = Sampler::new(sim)?;
    let d0 = distance_threshold(&sim.model);
    let hits = run_trials(
        sim.trials,
        || 0u64,
        |hits, t| {
            let head = sampler.head(&mut trial_rng(sim.seed, t));
            if head.typical_pb.norm() > d0 {
                *hits += 1;
            }
        },
        |a, b| a + b,
    );
    Ok(bernoulli_estimate(hits, sim.trials, sim.seed))
}

/// Transmission capacity `lambda_p c_bar D P_s`, links per m².
pub fn estimate_capacity(sim: &SimConfig) -> Result<Estimate> {
    Ok(estimate_success(sim)?.scaled(sim.model.active_density()))
}

/// `E[exp(-s I)]` at the typical receiver.
pub fn estimate_laplace(sim: &SimConfig, s: f64) -> Result<Estimate> {
    Ok(estimate_laplace_many(sim, &[s])?.remove(0))
}

/// `E[exp(-s I)]` for several `s` from one pass over the same scenarios.
pub fn estimate_laplace_many(sim: &SimConfig, s_values: &[f64]) -> Result<Vec<Estimate>> {
    laplace_pass(sim, s_values, false)
}

/// `E[exp(-s I)]` estimated by averaging `E[exp(-s I) | positions]
/// = prod 1 / (1 + s P_j)` over trials, where `P_j` is the fading-free
/// received power. Same expectation as [`estimate_laplace_many`] with far
/// smaller variance when `exp(-s I)` is driven by rare fading events.
pub fn estimate_laplace_fading_averaged(sim: &SimConfig, s_values: &[f64]) -> Result<Vec<Estimate>> {
    laplace_pass(sim, s_values, true)
}

fn laplace_pass(sim: &SimConfig, s_values: &[f64], average_fading: bool) -> Result<Vec<Estimate>> {
    for &s in s_values {
        if s.is_nan() || s < 0.0 {
            return Err(Error::invalid("s", format!("must be >= 0, got {s}")));
        }
    }
    let sampler = Sampler::new(sim)?;
    let kernel = Kernel::new(&sim.model);
    let k = s_values.len();
    let moments = run_trials(
        sim.trials,
        || vec![Moments::default(); k],
        |acc, t| {
            let mut rng = trial_rng(sim.seed, t);
            let head = sampler.head(&mut rng);
            if average_fading {
                let mut log_terms = vec![0.0; k];
                sampler.interferers(&head, &mut rng, |x| {
                    let p = kernel.mean_power_at(&x, head.receiver);
                    if p > 0.0 {
                        for (acc, &s) in log_terms.iter_mut().zip(s_values) {
                            *acc += (s * p).ln_1p();
                        }
                    }
                    ControlFlow::Continue(())
                });
                for ((m, &s), lt) in acc.iter_mut().zip(s_values).zip(log_terms) {
                    m.push(if s == 0.0 { 1.0 } else { (-lt).exp() });
                }
            } else {
                let mut interference = 0.0;
                sampler.interferers(&head, &mut rng, |x| {
                    interference += kernel.power_at(&x, head.receiver);
                    ControlFlow::Continue(())
                });
                for (m, &s) in acc.iter_mut().zip(s_values) {
                    m.push(laplace_term(s, interference));
                }
            }
        },
        |a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect(),
    );
    Ok(moments.iter().map(|m| m.estimate(sim.seed)).collect())
}

fn laplace_term(s: f64, interference: f64) -> f64 {
    if s == 0.0 || interference == 0.0 {
        1.0
    } else {
        (-s * interference).exp()
    }
}
