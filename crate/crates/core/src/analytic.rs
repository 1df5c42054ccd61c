//! Closed forms and quadrature for the interference characteristic
//! functionals, the coverage lower bound and the capacity approximation.
//!
//! With Rayleigh fading, a cluster whose PB sits at `p` contributes
//! `exp(-c_bar D q)` to `E[exp(-s I)]`, where
//!
//! ```text
//! q(s, w) = ∫_{|x| <= d0} f(x) / (1 + |x|^a1 |x - w|^a2 / (s beta eta g)) dx,   w = z - p.
//! ```
//!
//! `q` depends on `w` only through `rho = |w|`, so both functionals reduce to
//! one-dimensional integrals over `rho`:
//!
//! ```text
//! C_a(s) = ∫ exp(-c_bar D Q(rho)) rho Fbar(rho) drho
//! C_b(s) = exp(-lambda_p ∫_0^{R+d} (1 - exp(-c_bar D Q(rho))) rho arc(rho; d, R) drho)
//! ```
//!
//! `Fbar` is the angular average of `f` on the circle of radius `rho` around
//! the receiver and `arc(rho; d, R)` the angle of that circle lying inside
//! the disk of radius `R`. The `*_at` variants integrate over the plane in
//! polar coordinates instead; they are slower and serve as cross-checks.
//!
//! For `alpha2 <= alpha1` the inter-cluster integral diverges as `R` grows
//! (nodes close to their PB transmit with unbounded power), so `C_b` is
//! always the functional of the PBs inside the disk of radius `R`;
//! [`inter_tail_bound`] quantifies the remainder when it is finite.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_nonnegative, check_positive, check_range, Error, Result};
use crate::geometry::{ClusterModel, Point2};
use crate::power::{distance_threshold, ModelConfig};
use crate::quadrature::{integrate, Integral, Tolerance};

/// Tolerance and truncation policy for the functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Radius of the PB disk in the inter-cluster functional. `None` means
    /// `50 / sqrt(lambda_p)`.
    pub outer_truncation_radius: Option<f64>,
}

impl Default for QuadSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-4,
            abs_tol: 1e-8,
            max_subdivisions: 2000,
            outer_truncation_radius: None,
        }
    }
}

impl QuadSpec {
    pub fn with_outer_radius(mut self, radius: f64) -> Self {
        self.outer_truncation_radius = Some(radius);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("rel_tol", self.rel_tol)?;
        check_positive("abs_tol", self.abs_tol)?;
        if self.max_subdivisions == 0 {
            return Err(Error::invalid("max_subdivisions", "must be >= 1"));
        }
        if let Some(r) = self.outer_truncation_radius {
            check_positive("outer_truncation_radius", r)?;
        }
        Ok(())
    }

    /// Effective PB-disk radius for `cfg`.
    pub fn outer_radius(&self, cfg: &ModelConfig) -> f64 {
        self.outer_truncation_radius.unwrap_or_else(|| {
            if cfg.lambda_p > 0.0 {
                50.0 / cfg.lambda_p.sqrt()
            } else {
                0.0
            }
        })
    }

    fn tolerance(&self, rel_scale: f64, abs: f64) -> Tolerance {
        Tolerance {
            rel: self.rel_tol * rel_scale,
            abs,
            max_panels: self.max_subdivisions,
        }
    }
}

fn check_s(s: f64) -> Result<()> {
    if s.is_nan() || s < 0.0 {
        return Err(Error::invalid("s", format!("must be >= 0, got {s}")));
    }
    Ok(())
}

/// `exp(-x) I_0(x)` for `x >= 0`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    if x <= 50.0 {
        let q = 0.25 * x * x;
        let (mut term, mut sum, mut k) = (1.0, 1.0, 0.0);
        loop {
            k += 1.0;
            term *= q / (k * k);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        sum * (-x).exp()
    } else {
        // Hankel expansion; the first omitted term is below 1e-16 here.
        let (mut term, mut sum) = (1.0, 1.0);
        for k in 1..10 {
            let odd = (2 * k - 1) as f64;
            term *= odd * odd / (8.0 * k as f64 * x);
            sum += term;
        }
        sum / (2.0 * PI * x).sqrt()
    }
}

/// Angle of the circle `{c + rho e^{i t}}` lying in the disk of radius
/// `radius` about the origin, where `|c| = d`.
pub fn arc_inside(rho: f64, d: f64, radius: f64) -> f64 {
    if rho + d <= radius {
        2.0 * PI
    } else if rho >= radius + d || rho <= d - radius {
        0.0
    } else {
        let cos = (rho * rho + d * d - radius * radius) / (2.0 * rho * d);
        2.0 * cos.clamp(-1.0, 1.0).acos()
    }
}

/// Radius of the node-to-PB domain of `q`: the gate `d0`, cut for Thomas
/// where the offset law has less than `abs_tol` mass left.
fn kernel_radius(cfg: &ModelConfig, quad: &QuadSpec) -> f64 {
    let d0 = distance_threshold(cfg);
    match cfg.cluster {
        ClusterModel::Matern { a } => d0.min(a),
        ClusterModel::Thomas { sigma2 } => {
            let tail = cfg.cluster.support_radius(quad.abs_tol).max(6.0 * sigma2.sqrt());
            d0.min(tail)
        }
    }
}

/// `q` as a function of `rho = |w|`, for fixed `s` and configuration.
struct QKernel {
    /// `1 / (s beta eta g)`; zero for `s = inf`.
    c: f64,
    alpha1: f64,
    half_alpha2: f64,
    cluster: ClusterModel,
    r_max: f64,
    radial: Tolerance,
    angular: Tolerance,
    /// Set when `q` does not depend on `rho`.
    constant: Option<f64>,
}

impl QKernel {
    fn new(s: f64, cfg: &ModelConfig, quad: &QuadSpec) -> Self {
        let r_max = kernel_radius(cfg, quad);
        let amplitude = s * cfg.beta * cfg.wpt_power();
        let constant = if amplitude == 0.0 {
            Some(0.0)
        } else if amplitude.is_infinite() {
            Some(cfg.cluster.cdf(r_max))
        } else {
            None
        };
        Self {
            c: 1.0 / amplitude,
            alpha1: cfg.alpha1,
            half_alpha2: 0.5 * cfg.alpha2,
            cluster: cfg.cluster,
            r_max,
            radial: quad.tolerance(0.1, quad.abs_tol * 1e-6),
            angular: quad.tolerance(0.01, 0.0),
            constant,
        }
    }

    /// Distance scale around the receiver where a node at PB distance `r`
    /// is as strong as the `s^-1` reference.
    fn near_width(&self, r: f64) -> f64 {
        (self.c * r.powf(self.alpha1)).powf(-0.5 / self.half_alpha2)
    }

    /// `∫_0^{2π} dpsi / (1 + c r^a1 |x - w|^a2)` with `|x| = r`, `|w| = rho`.
    fn angular(&self, r: f64, rho: f64) -> Result<Integral> {
        let cr = self.c * r.powf(self.alpha1);
        let diff = r - rho;
        let g = |psi: f64| {
            let half = (0.5 * psi).sin();
            let dist_sq = diff * diff + 4.0 * r * rho * half * half;
            1.0 / (1.0 + cr * dist_sq.powf(self.half_alpha2))
        };
        if r == 0.0 || rho == 0.0 {
            return Ok(Integral::exact(2.0 * PI * g(0.0)));
        }
        let width = self.near_width(r) / r.max(rho);
        let breaks = [width, 4.0 * width, 16.0 * width];
        let half = integrate(g, 0.0, PI, &breaks, self.angular)?;
        Ok(Integral {
            value: 2.0 * half.value,
            error: 2.0 * half.error,
        })
    }

    fn eval(&self, rho: f64) -> Result<Integral> {
        if let Some(v) = self.constant {
            return Ok(Integral::exact(v));
        }
        let mut failure = None;
        let mut worst_rel: f64 = 0.0;
        let integrand = |r: f64| {
            if r == 0.0 {
                return 0.0;
            }
            match self.angular(r, rho) {
                Ok(a) => {
                    if a.value > 0.0 {
                        worst_rel = worst_rel.max(a.error / a.value);
                    }
                    self.cluster.density(r) * r * a.value
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        };
        let transition = if rho > 0.0 {
            (self.c * rho.powf(2.0 * self.half_alpha2)).powf(-1.0 / self.alpha1)
        } else {
            self.c.powf(-1.0 / (self.alpha1 + 2.0 * self.half_alpha2))
        };
        let near = if rho > 0.0 { self.near_width(rho) } else { 0.0 };
        let breaks = [
            0.25 * transition,
            transition,
            4.0 * transition,
            rho - 4.0 * near,
            rho - near,
            rho,
            rho + near,
            rho + 4.0 * near,
        ];
        let radial = integrate(integrand, 0.0, self.r_max, &breaks, self.radial)?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(Integral {
            value: radial.value,
            error: radial.error + worst_rel * radial.value.abs(),
        })
    }
}

/// `q(s, y, z)`: the probability-weighted interference factor of one
/// interferer of the cluster whose PB sees the receiver at `y + z`.
///
/// Integrated over the node position in polar coordinates about the origin.
pub fn q_kernel(s: f64, y: Point2, z: Point2, cfg: &ModelConfig, quad: &QuadSpec) -> Result<Integral> {
    check_s(s)?;
    cfg.validate()?;
    quad.validate()?;
    let kernel = QKernel::new(s, cfg, quad);
    if let Some(v) = kernel.constant {
        return Ok(Integral::exact(v));
    }
    let w = y + z;
    let phase = w.y.atan2(w.x);
    let rho = w.norm();
    let mut failure = None;
    let mut worst_rel: f64 = 0.0;
    let integrand = |r: f64| {
        if r == 0.0 {
            return 0.0;
        }
        let cr = kernel.c * r.powf(kernel.alpha1);
        let g = |phi: f64| {
            let x = Point2::from_polar(r, phi);
            1.0 / (1.0 + cr * (x - w).norm_sq().powf(kernel.half_alpha2))
        };
        let width = if rho > 0.0 { kernel.near_width(r) / r.max(rho) } else { 0.0 };
        let breaks = [phase - width, phase, phase + width, phase + PI];
        let breaks = breaks.map(|b| b.rem_euclid(2.0 * PI));
        match integrate(g, 0.0, 2.0 * PI, &breaks, kernel.angular) {
            Ok(a) => {
                if a.value > 0.0 {
                    worst_rel = worst_rel.max(a.error / a.value);
                }
                kernel.cluster.density(r) * r * a.value
            }
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    let near = if rho > 0.0 { kernel.near_width(rho) } else { 0.0 };
    let breaks = [rho - near, rho, rho + near];
    let radial = integrate(integrand, 0.0, kernel.r_max, &breaks, kernel.radial)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Integral {
        value: radial.value,
        error: radial.error + worst_rel * radial.value.abs(),
    })
}

/// Tracks the worst inner error seen by an outer integrand.
#[derive(Default)]
struct InnerErrors {
    failure: Option<Error>,
    max_abs: f64,
    max_rel: f64,
}

impl InnerErrors {
    fn record(&mut self, q: Result<Integral>) -> Option<f64> {
        match q {
            Ok(q) => {
                self.max_abs = self.max_abs.max(q.error);
                if q.value > 0.0 {
                    self.max_rel = self.max_rel.max(q.error / q.value);
                }
                Some(q.value)
            }
            Err(e) => {
                self.failure.get_or_insert(e);
                None
            }
        }
    }

    fn into_result(self) -> Result<Self> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

fn trivial_laplace(s: f64, cfg: &ModelConfig) -> bool {
    s == 0.0 || cfg.c_bar == 0.0 || cfg.duty_cycle == 0.0 || cfg.beta == 0.0
}

/// Density of `|z + V|` in `rho`, with `V` drawn from the cluster law and `|z| = d`.
fn receiver_distance_density(cluster: ClusterModel, d: f64, rho: f64) -> f64 {
    match cluster {
        ClusterModel::Matern { a } => rho * arc_inside(rho, d, a) / (PI * a * a),
        ClusterModel::Thomas { sigma2 } => {
            let gap = rho - d;
            rho / sigma2 * (-gap * gap / (2.0 * sigma2)).exp() * bessel_i0_scaled(rho * d / sigma2)
        }
    }
}

/// Characteristic functional of the interference from the typical node's own
/// cluster, `E[exp(-s I_a)]`.
pub fn charfun_intra(s: f64, cfg: &ModelConfig, quad: &QuadSpec) -> Result<Integral> {
    check_s(s)?;
    cfg.validate()?;
    quad.validate()?;
    if trivial_laplace(s, cfg) {
        return Ok(Integral::exact(1.0));
    }
    let kernel = QKernel::new(s, cfg, quad);
    let weight = cfg.c_bar * cfg.duty_cycle;
    let d = cfg.d2d_distance;
    let (upper, dropped) = match cfg.cluster {
        ClusterModel::Matern { a } => (a + d, 0.0),
        ClusterModel::Thomas { .. } => {
            let mass = 0.1 * quad.abs_tol;
            (d + cfg.cluster.support_radius(mass), mass)
        }
    };
    let mut inner = InnerErrors::default();
    let integrand = |rho: f64| match inner.record(kernel.eval(rho)) {
        Some(q) => (-weight * q).exp() * receiver_distance_density(cfg.cluster, d, rho),
        None => 0.0,
    };
    let r = kernel.r_max;
    let mut breaks = vec![d, r, (r - d).abs(), r + d];
    if let ClusterModel::Matern { a } = cfg.cluster {
        breaks.push((a - d).abs());
    }
    let outer = integrate(integrand, 0.0, upper, &breaks, quad.tolerance(1.0, quad.abs_tol))?;
    let inner = inner.into_result()?;
    Ok(Integral {
        value: outer.value.clamp(0.0, 1.0),
        error: outer.error + weight * inner.max_abs + dropped,
    })
}

/// Characteristic functional of the interference from the other clusters,
/// with their PBs restricted to the disk of radius
/// [`QuadSpec::outer_radius`].
pub fn charfun_inter(s: f64, cfg: &ModelConfig, quad: &QuadSpec) -> Result<Integral> {
    check_s(s)?;
    cfg.validate()?;
    quad.validate()?;
    if trivial_laplace(s, cfg) || cfg.lambda_p == 0.0 {
        return Ok(Integral::exact(1.0));
    }
    let kernel = QKernel::new(s, cfg, quad);
    let weight = cfg.c_bar * cfg.duty_cycle;
    let d = cfg.d2d_distance;
    let radius = quad.outer_radius(cfg);
    let mut inner = InnerErrors::default();
    let integrand = |rho: f64| {
        let arc = arc_inside(rho, d, radius);
        if arc == 0.0 {
            return 0.0;
        }
        match inner.record(kernel.eval(rho)) {
            Some(q) => -(-weight * q).exp_m1() * rho * arc,
            None => 0.0,
        }
    };
    let mut breaks = vec![kernel.r_max, radius - d, radius];
    let mut b = 1.0;
    while b < radius {
        breaks.push(b);
        b *= 2.0;
    }
    let abs = quad.abs_tol / cfg.lambda_p;
    let outer = integrate(integrand, 0.0, radius + d, &breaks, quad.tolerance(1.0, abs))?;
    let inner = inner.into_result()?;
    let j_error = outer.error + inner.max_rel * outer.value;
    let value = (-cfg.lambda_p * outer.value).exp();
    Ok(Integral {
        value,
        error: value * (cfg.lambda_p * j_error).exp_m1(),
    })
}

/// `E[exp(-s I)] = C_a(s) C_b(s)`.
pub fn laplace(s: f64, cfg: &ModelConfig, quad: &QuadSpec) -> Result<Integral> {
    let a = charfun_intra(s, cfg, quad)?;
    let b = charfun_inter(s, cfg, quad)?;
    Ok(product(a, b))
}

fn product(a: Integral, b: Integral) -> Integral {
    Integral {
        value: a.value * b.value,
        error: a.value.abs() * b.error + b.value.abs() * a.error + a.error * b.error,
    }
}

/// [`charfun_intra`] with the receiver at `receiver` and the outer integral
/// taken over the PB offset in polar coordinates about the origin.
pub fn charfun_intra_at(s: f64, receiver: Point2, cfg: &ModelConfig, quad: &QuadSpec) -> Result<Integral> {
    check_s(s)?;
    cfg.validate()?;
    quad.validate()?;
    if trivial_laplace(s, cfg) {
        return Ok(Integral::exact(1.0));
    }
    let kernel = QKernel::new(s, cfg, quad);
    let weight = cfg.c_bar * cfg.duty_cycle;
    let upper = cfg.cluster.support_radius(0.1 * quad.abs_tol);
    let q_at = |y: Point2| kernel.eval((y + receiver).norm());
    let (value, inner) = polar_integral(q_at, |q| (-weight * q).exp(), upper, |r| cfg.cluster.density(r), quad)?;
    Ok(Integral {
        value: value.value.clamp(0.0, 1.0),
        error: value.error + weight * inner.max_abs,
    })
}

/// [`charfun_inter`] with the receiver at `receiver` and the outer integral
/// taken over PB positions in polar coordinates about the origin.
pub fn charfun_inter_at(s: f64, receiver: Point2, cfg: &ModelConfig, quad: &QuadSpec) -> Result<Integral> {
    check_s(s)?;
    cfg.validate()?;
    quad.validate()?;
    if trivial_laplace(s, cfg) || cfg.lambda_p == 0.0 {
        return Ok(Integral::exact(1.0));
    }
    let kernel = QKernel::new(s, cfg, quad);
    let weight = cfg.c_bar * cfg.duty_cycle;
    let radius = quad.outer_radius(cfg);
    // Written as a function of the PB position p; the kernel sees |z - p|.
    let q_at = |p: Point2| kernel.eval((receiver - p).norm());
    let (j, inner) = polar_integral(q_at, |q| -(-weight * q).exp_m1(), radius, |_| 1.0, quad)?;
    let j_error = j.error + inner.max_rel * j.value;
    let value = (-cfg.lambda_p * j.value).exp();
    Ok(Integral {
        value,
        error: value * (cfg.lambda_p * j_error).exp_m1(),
    })
}

/// `∫_{|y| <= upper} map(q_at(y)) density(|y|) dy` in polar coordinates.
fn polar_integral<F, M, W>(q_at: F, map: M, upper: f64, density: W, quad: &QuadSpec) -> Result<(Integral, InnerErrors)>
where
    F: Fn(Point2) -> Result<Integral>,
    M: Fn(f64) -> f64,
    W: Fn(f64) -> f64,
{
    let mut inner = InnerErrors::default();
    let mut worst_rel: f64 = 0.0;
    let angular_tol = quad.tolerance(0.1, 0.0);
    let mut radial = |r: f64| {
        let weight = density(r) * r;
        if weight == 0.0 {
            return 0.0;
        }
        let ring = integrate(
            |phi| inner.record(q_at(Point2::from_polar(r, phi))).map(&map).unwrap_or(0.0),
            0.0,
            2.0 * PI,
            &[0.5 * PI, PI, 1.5 * PI],
            angular_tol,
        );
        match ring {
            Ok(a) => {
                if a.value > 0.0 {
                    worst_rel = worst_rel.max(a.error / a.value);
                }
                weight * a.value
            }
            Err(e) => {
                inner.failure.get_or_insert(e);
                0.0
            }
        }
    };
    let mut breaks = Vec::new();
    let mut b = 0.5;
    while b < upper {
        breaks.push(b);
        b *= 2.0;
    }
    let outer = integrate(&mut radial, 0.0, upper, &breaks, quad.tolerance(1.0, quad.abs_tol))?;
    let inner = inner.into_result()?;
    Ok((
        Integral {
            value: outer.value,
            error: outer.error + worst_rel * outer.value.abs(),
        },
        inner,
    ))
}

/// Upper bound on `lambda_p ∫_{|p| > R} (1 - exp(-c_bar D q)) dp`, the part
/// of the inter-cluster exponent dropped by truncating the PB disk at
/// `radius`. The full functional then lies in
/// `[C_b e^{-bound}, C_b]`. Infinite when the integral diverges
/// (`alpha2 <= alpha1`) or `radius` is too small for the bound to apply.
///
/// Uses `1 - e^{-x} <= x`, `f <= f(0)` and `|x - w| >= rho - r_max`, which give
/// `q(rho) <= f(0) (2 pi^2 / (a1 sin(2 pi / a1))) (s beta eta g)^{2/a1} (rho - r_max)^{-2 a2/a1}`.
pub fn inter_tail_bound(s: f64, cfg: &ModelConfig, quad: &QuadSpec, radius: f64) -> Result<f64> {
    check_s(s)?;
    cfg.validate()?;
    quad.validate()?;
    check_nonnegative("radius", radius)?;
    if trivial_laplace(s, cfg) || cfg.lambda_p == 0.0 {
        return Ok(0.0);
    }
    let p = 2.0 * cfg.alpha2 / cfg.alpha1;
    let gap = radius - cfg.d2d_distance - kernel_radius(cfg, quad);
    if p <= 2.0 || gap <= 0.0 || s.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let a1 = cfg.alpha1;
    let scale = (s * cfg.beta * cfg.wpt_power()).powf(2.0 / a1);
    let q_coeff = cfg.cluster.peak_density() * 2.0 * PI * PI / (a1 * (2.0 * PI / a1).sin()) * scale;
    let offset = cfg.d2d_distance + kernel_radius(cfg, quad);
    let radial = gap.powf(2.0 - p) / (p - 2.0) + offset * gap.powf(1.0 - p) / (p - 1.0);
    Ok(cfg.lambda_p * cfg.c_bar * cfg.duty_cycle * q_coeff * 2.0 * PI * radial)
}

/// Probability that a node is too far from its PB to cover its circuit power.
pub fn power_outage(cfg: &ModelConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(cfg.cluster.tail(distance_threshold(cfg)))
}

/// `1 - power_outage`, computed without cancellation.
pub fn transmit_probability(cfg: &ModelConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(cfg.cluster.cdf(distance_threshold(cfg)))
}

/// `Pr(P_t >= tau)` for `tau` on the nonzero part of the support,
/// `tau >= beta P_c / (1 - beta D)`.
pub fn tx_power_ccdf(tau: f64, cfg: &ModelConfig) -> Result<f64> {
    cfg.validate()?;
    if tau.is_nan() {
        return Err(Error::invalid("tau", "must not be NaN"));
    }
    let tau_min = cfg.min_tx_power();
    if tau < tau_min {
        return Err(Error::invalid(
            "tau",
            format!("must be >= beta * P_c / (1 - beta * D) = {tau_min}, got {tau}"),
        ));
    }
    if cfg.beta == 0.0 {
        // P_t is identically zero.
        return Ok(if tau > 0.0 { 0.0 } else { 1.0 });
    }
    let amplitude = cfg.beta * cfg.wpt_power();
    if let ClusterModel::Matern { a } = cfg.cluster {
        if tau <= amplitude * a.powf(-cfg.alpha1) {
            return Ok(1.0);
        }
    }
    let radius = if tau == tau_min {
        distance_threshold(cfg)
    } else {
        (amplitude / tau).powf(1.0 / cfg.alpha1)
    };
    Ok(cfg.cluster.cdf(radius))
}

/// Coverage lower bound `(1 - p0) C(s*)` with its ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub value: f64,
    pub error: f64,
    pub s_star: f64,
    pub power_outage: f64,
    pub intra: Integral,
    pub inter: Integral,
}

pub fn success_lower_bound(cfg: &ModelConfig, quad: &QuadSpec) -> Result<LowerBound> {
    cfg.validate()?;
    if cfg.beta == 0.0 {
        return Err(Error::invalid("beta", "must be > 0 for the coverage bound"));
    }
    let s_star = cfg.bound_laplace_arg();
    let transmit = transmit_probability(cfg)?;
    let intra = charfun_intra(s_star, cfg, quad)?;
    let inter = charfun_inter(s_star, cfg, quad)?;
    let c = product(intra, inter);
    Ok(LowerBound {
        value: transmit * c.value,
        error: transmit * c.error,
        s_star,
        power_outage: power_outage(cfg)?,
        intra,
        inter,
    })
}

/// Transmission capacity approximation `lambda_p c_bar D (1 - p0)`.
pub fn capacity_approx(cfg: &ModelConfig) -> Result<f64> {
    Ok(cfg.active_density() * transmit_probability(cfg)?)
}

/// Matern closed form `(lambda_p c_bar D / a^2) (eta g (1 - beta D) / P_c)^{2/a1}`,
/// valid while `d0 < a`; `lambda_p c_bar D` otherwise.
pub fn capacity_matern_closed_form(cfg: &ModelConfig) -> Result<f64> {
    cfg.validate()?;
    let ClusterModel::Matern { a } = cfg.cluster else {
        return Err(Error::invalid("cluster", "closed form needs the Matern model"));
    };
    if distance_threshold(cfg) >= a {
        return Ok(cfg.active_density());
    }
    let ratio = cfg.wpt_power() * (1.0 - cfg.beta * cfg.duty_cycle) / cfg.p_c;
    Ok(cfg.active_density() / (a * a) * ratio.powf(2.0 / cfg.alpha1))
}

/// Which closed-form candidate a grid search confirmed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateAgreement {
    Both,
    Published,
    Stationary,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutyOptimum {
    /// Maximizer of [`capacity_approx`] over `D` by grid search and refinement.
    pub d_star: f64,
    pub c_star: f64,
    /// `min(1, a1 / (2 + a1 beta))`.
    pub published: f64,
    /// `min(1, a1 / (beta (a1 + 2)))`, the stationary point of `D (1 - beta D)^{2/a1}`.
    pub stationary: f64,
    pub agreement: CandidateAgreement,
}

/// Tolerance for calling a closed-form candidate confirmed by the grid.
pub const DUTY_AGREEMENT_TOL: f64 = 1e-3;

/// Duty cycle maximizing the Matern capacity approximation.
pub fn optimal_duty_matern(cfg: &ModelConfig) -> Result<DutyOptimum> {
    cfg.validate()?;
    if !matches!(cfg.cluster, ClusterModel::Matern { .. }) {
        return Err(Error::invalid("cluster", "optimal_duty_matern needs the Matern model"));
    }
    let (beta, a1) = (cfg.beta, cfg.alpha1);
    let d_max = if beta >= 1.0 { 1.0 - 1e-9 } else { 1.0 };
    let capacity = |d: f64| capacity_approx(&ModelConfig { duty_cycle: d, ..*cfg }).unwrap_or(f64::NEG_INFINITY);

    let step: f64 = 1e-4;
    let n = (d_max / step).floor() as usize;
    let (mut best_d, mut best_c) = (d_max, capacity(d_max));
    for i in 1..=n {
        let d = (i as f64 * step).min(d_max);
        let c = capacity(d);
        if c > best_c {
            best_d = d;
            best_c = c;
        }
    }
    let lo = (best_d - step).max(step);
    let hi = (best_d + step).min(d_max);
    let (d_ref, c_ref) = golden_max(capacity, lo, hi, 1e-12);
    if c_ref > best_c {
        best_d = d_ref;
        best_c = c_ref;
    }

    let published = (a1 / (2.0 + a1 * beta)).min(1.0);
    let stationary = if beta > 0.0 { (a1 / (beta * (a1 + 2.0))).min(1.0) } else { 1.0 };
    let near = |x: f64| (x.min(d_max) - best_d).abs() <= DUTY_AGREEMENT_TOL;
    let agreement = match (near(published), near(stationary)) {
        (true, true) => CandidateAgreement::Both,
        (true, false) => CandidateAgreement::Published,
        (false, true) => CandidateAgreement::Stationary,
        (false, false) => CandidateAgreement::Neither,
    };
    Ok(DutyOptimum {
        d_star: best_d,
        c_star: best_c,
        published,
        stationary,
        agreement,
    })
}

/// Golden-section maximization of `f` on `[lo, hi]`; returns the best point seen.
pub(crate) fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Evaluated,
    /// `beta = 0`: the bound's Laplace argument is undefined.
    ZeroBeta,
    /// `beta D >= 1`.
    Invalid,
    QuadratureFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    pub duty_cycle: f64,
    pub beta: f64,
    pub s_star: f64,
    /// `C(s*)`, when evaluated.
    pub laplace: Option<Integral>,
    pub feasible: bool,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    pub epsilon: f64,
    pub grid_step: f64,
    /// Row-major: `D` varies slowest.
    pub cells: Vec<RegionCell>,
}

fn grid_axis(step: f64) -> Vec<f64> {
    let n = (1.0 / step + 1e-9).floor() as usize;
    let mut axis: Vec<f64> = (0..=n).map(|i| (i as f64 * step).min(1.0)).collect();
    if 1.0 - axis[n] > 1e-9 {
        axis.push(1.0);
    }
    axis
}

/// Grid approximation of `{(D, beta): C(theta (1 - beta D) / (beta P_c)) >= 1 - epsilon}`.
pub fn feasible_region(cfg: &ModelConfig, epsilon: f64, grid_step: f64, quad: &QuadSpec) -> Result<FeasibleRegion> {
    cfg.validate()?;
    quad.validate()?;
    check_range("epsilon", epsilon, 0.0, 1.0)?;
    if epsilon == 0.0 || epsilon == 1.0 {
        return Err(Error::invalid("epsilon", "must lie strictly inside (0, 1)"));
    }
    check_range("grid_step", grid_step, 0.0, 0.5)?;
    if grid_step == 0.0 {
        return Err(Error::invalid("grid_step", "must be > 0"));
    }
    let axis = grid_axis(grid_step);
    let points: Vec<(f64, f64)> = axis
        .iter()
        .flat_map(|&d| axis.iter().map(move |&b| (d, b)))
        .collect();
    let cells = points
        .into_par_iter()
        .map(|(duty_cycle, beta)| {
            let cell = |status, s_star, laplace: Option<Integral>| RegionCell {
                duty_cycle,
                beta,
                s_star,
                laplace,
                feasible: laplace.is_some_and(|c| c.value >= 1.0 - epsilon),
                status,
            };
            if beta * duty_cycle >= 1.0 {
                return cell(CellStatus::Invalid, f64::NAN, None);
            }
            if beta == 0.0 {
                return cell(CellStatus::ZeroBeta, f64::INFINITY, None);
            }
            let point = ModelConfig { duty_cycle, beta, ..*cfg };
            let s_star = point.bound_laplace_arg();
            match laplace(s_star, &point, quad) {
                Ok(c) => cell(CellStatus::Evaluated, s_star, Some(c)),
                Err(_) => cell(CellStatus::QuadratureFailure, s_star, None),
            }
        })
        .collect();
    Ok(FeasibleRegion {
        epsilon,
        grid_step,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs())
    }

    fn thomas() -> ModelConfig {
        ModelConfig::default()
    }

    fn matern(a: f64) -> ModelConfig {
        ModelConfig {
            cluster: ClusterModel::Matern { a },
            ..Default::default()
        }
    }

    #[test]
    fn bessel_scaled_values() {
        // exp(-x) I0(x), reference values from scipy.special.i0e.
        let cases = [
            (0.0, 1.0),
            (1.0, 0.465_759_607_593_640_43),
            (10.0, 0.127_833_337_163_428_6),
            (50.0, 0.056_561_626_647_454_184),
            (100.0, 0.039_944_379_299_096_68),
        ];
        for (x, want) in cases {
            assert!(close(bessel_i0_scaled(x), want, 1e-13), "{x}");
        }
        // Continuity across the switch between series and expansion.
        assert!(close(bessel_i0_scaled(50.0 - 1e-12), bessel_i0_scaled(50.0 + 1e-12), 1e-13));
    }

    #[test]
    fn arc_inside_limits() {
        assert_eq!(arc_inside(1.0, 1.0, 5.0), 2.0 * PI);
        assert_eq!(arc_inside(7.0, 1.0, 5.0), 0.0);
        assert_eq!(arc_inside(0.5, 3.0, 1.0), 0.0);
        // rho = d = R: the inside arc spans 2pi/3.
        assert!(close(arc_inside(1.0, 1.0, 1.0), 2.0 * PI / 3.0, 1e-14));
        // Total area check: ∫ rho arc drho = pi R^2.
        let area = integrate(|r| r * arc_inside(r, 2.0, 3.0), 0.0, 5.0, &[1.0], Tolerance { rel: 1e-12, abs: 0.0, max_panels: 200 }).unwrap();
        assert!(close(area.value, 9.0 * PI, 1e-10));
    }

    #[test]
    fn receiver_distance_density_integrates_to_one() {
        let tol = Tolerance { rel: 1e-11, abs: 0.0, max_panels: 500 };
        for cluster in [ClusterModel::Thomas { sigma2: 4.0 }, ClusterModel::Matern { a: 3.0 }] {
            let m = integrate(|r| receiver_distance_density(cluster, 1.0, r), 0.0, 40.0, &[1.0, 2.0, 4.0], tol).unwrap();
            assert!(close(m.value, 1.0, 1e-9), "{cluster:?} {}", m.value);
        }
    }

    #[test]
    fn q_kernel_limits() {
        let cfg = thomas();
        let q = QuadSpec::default();
        let y = Point2::new(0.5, -0.3);
        let z = Point2::new(1.0, 0.0);
        assert_eq!(q_kernel(0.0, y, z, &cfg, &q).unwrap().value, 0.0);
        assert!(q_kernel(-1.0, y, z, &cfg, &q).is_err());

        let mass = q_kernel(f64::INFINITY, y, z, &cfg, &q).unwrap().value;
        let d0 = distance_threshold(&cfg);
        assert!(close(mass, crate::geometry::radial_cdf(cfg.cluster, d0).unwrap(), 1e-12));

        // Very large s approaches the same mass.
        let big = q_kernel(1e12, y, z, &cfg, &q).unwrap().value;
        assert!((big - mass).abs() < 1e-3, "{big} vs {mass}");

        let tiny_beta = ModelConfig { beta: 1e-12, ..cfg };
        assert!(q_kernel(10.0, y, z, &tiny_beta, &q).unwrap().value < 1e-3);
    }

    #[test]
    fn q_kernel_matches_reduced_form() {
        let q = QuadSpec { rel_tol: 1e-7, ..Default::default() };
        for cfg in [thomas(), matern(8.0)] {
            let k = QKernel::new(79.9, &cfg, &q);
            for (y, z) in [
                (Point2::new(0.3, 0.2), Point2::new(1.0, 0.0)),
                (Point2::new(-2.0, 1.0), Point2::from_polar(1.0, 2.0)),
                (Point2::new(7.0, -3.0), Point2::new(0.0, 1.0)),
            ] {
                let direct = q_kernel(79.9, y, z, &cfg, &q).unwrap();
                let reduced = k.eval((y + z).norm()).unwrap();
                assert!(close(direct.value, reduced.value, 1e-6), "{} {}", direct.value, reduced.value);
            }
        }
    }

    #[test]
    fn q_kernel_against_monte_carlo_oracle() {
        use rand::{Rng, SeedableRng};
        // Independent estimator: E_X[ 1 / (1 + c |X|^a1 |X - w|^a2) ; |X| <= d0 ].
        let cfg = thomas();
        let s = 10.0;
        let w = Point2::new(2.5, 0.0);
        let c = 1.0 / (s * cfg.beta * cfg.wpt_power());
        let d0 = distance_threshold(&cfg);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 400_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let x = crate::geometry::sample_offset(cfg.cluster, &mut rng);
            let _ = rng.random::<f64>();
            let r = x.norm();
            let v = if r <= d0 { 1.0 / (1.0 + c * r.powi(3) * (x - w).norm().powi(3)) } else { 0.0 };
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        let got = q_kernel(s, w, Point2::ORIGIN, &cfg, &QuadSpec::default()).unwrap().value;
        assert!((got - mean).abs() < 4.0 * se, "{got} vs {mean} ± {se}");
    }

    #[test]
    fn charfun_trivial_cases() {
        let q = QuadSpec::default();
        let cfg = thomas();
        assert_eq!(charfun_intra(0.0, &cfg, &q).unwrap().value, 1.0);
        assert_eq!(charfun_inter(0.0, &cfg, &q).unwrap().value, 1.0);
        let no_nodes = ModelConfig { c_bar: 0.0, ..cfg };
        assert_eq!(charfun_intra(50.0, &no_nodes, &q).unwrap().value, 1.0);
        let no_pbs = ModelConfig { lambda_p: 0.0, ..cfg };
        assert_eq!(charfun_inter(50.0, &no_pbs, &q).unwrap().value, 1.0);
        assert!(charfun_intra(-1.0, &cfg, &q).is_err());
    }

    #[test]
    fn charfuns_in_unit_interval_and_nonincreasing() {
        let q = QuadSpec::default().with_outer_radius(30.0);
        let cfg = thomas();
        let mut prev = (1.0, 1.0);
        for s in [1.0, 10.0, 100.0, 1000.0] {
            let a = charfun_intra(s, &cfg, &q).unwrap();
            let b = charfun_inter(s, &cfg, &q).unwrap();
            assert!(a.value > 0.0 && a.value <= 1.0);
            assert!(b.value > 0.0 && b.value <= 1.0);
            assert!(a.value <= prev.0 + a.error && b.value <= prev.1 + b.error);
            prev = (a.value, b.value);
        }
    }

    #[test]
    fn reduced_and_planar_routes_agree_and_are_isotropic() {
        let q = QuadSpec { rel_tol: 1e-5, ..QuadSpec::default().with_outer_radius(20.0) };
        let cfg = ModelConfig { lambda_p: 0.2, ..thomas() };
        let s = 79.9;
        let d = cfg.d2d_distance;
        let reduced_a = charfun_intra(s, &cfg, &q).unwrap();
        let reduced_b = charfun_inter(s, &cfg, &q).unwrap();
        for angle in [0.0, 0.5 * PI] {
            let z = Point2::from_polar(d, angle);
            let a = charfun_intra_at(s, z, &cfg, &q).unwrap();
            let b = charfun_inter_at(s, z, &cfg, &q).unwrap();
            assert!((a.value - reduced_a.value).abs() <= 1e-4, "{} {}", a.value, reduced_a.value);
            assert!((b.value - reduced_b.value).abs() <= 1e-4 * reduced_b.value.max(1e-3), "{} {}", b.value, reduced_b.value);
        }
    }

    #[test]
    fn tail_bound() {
        let q = QuadSpec::default();
        // Equal exponents: the inter-cluster exponent diverges.
        assert!(inter_tail_bound(79.9, &thomas(), &q, 100.0).unwrap().is_infinite());
        let steep = ModelConfig { alpha2: 4.0, ..thomas() };
        let b100 = inter_tail_bound(79.9, &steep, &q, 100.0).unwrap();
        let b200 = inter_tail_bound(79.9, &steep, &q, 200.0).unwrap();
        assert!(b100.is_finite() && b200 < b100);
        // The bound covers the exponent actually gained by widening the disk.
        let j = |r: f64| -charfun_inter(79.9, &steep, &q.with_outer_radius(r)).unwrap().value.ln();
        assert!(j(200.0) - j(100.0) <= b100);
    }

    #[test]
    fn outage_closed_forms() {
        let p = power_outage(&thomas()).unwrap();
        let d0 = distance_threshold(&thomas());
        assert!(close(p, (-d0 * d0 / 8.0).exp(), 1e-14));
        assert!((p - 6.9e-8).abs() < 2e-9);
        assert_eq!(power_outage(&matern(2.0)).unwrap(), 0.0);
        let p20 = power_outage(&matern(20.0)).unwrap();
        assert!((p20 - 0.6700).abs() < 5e-4, "{p20}");
        assert!(close(transmit_probability(&thomas()).unwrap(), 1.0 - p, 1e-15));
    }

    #[test]
    fn ccdf_identity_and_branches() {
        for cfg in [thomas(), matern(20.0), matern(2.0)] {
            let tau = cfg.min_tx_power();
            let ccdf = tx_power_ccdf(tau, &cfg).unwrap();
            assert!(close(ccdf, 1.0 - power_outage(&cfg).unwrap(), 1e-12));
            assert!(tx_power_ccdf(tau * 0.999, &cfg).is_err());
            assert!(tx_power_ccdf(1e12, &cfg).unwrap() < 1e-6);
        }
        let cfg = matern(5.0);
        let tau = cfg.beta * cfg.wpt_power() / 5f64.powf(cfg.alpha1);
        assert_eq!(tx_power_ccdf(tau, &cfg).unwrap(), 1.0);
        assert_eq!(tx_power_ccdf(tau * 0.5, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn lower_bound_limits() {
        let q = QuadSpec::default().with_outer_radius(30.0);
        assert!(success_lower_bound(&ModelConfig { beta: 0.0, ..thomas() }, &q).is_err());
        let quiet = ModelConfig { lambda_p: 0.0, c_bar: 0.0, ..matern(20.0) };
        let b = success_lower_bound(&quiet, &q).unwrap();
        assert!(close(b.value, 1.0 - power_outage(&quiet).unwrap(), 1e-14));
        let low_theta = ModelConfig { theta: 1e-300, ..matern(20.0) };
        let b = success_lower_bound(&low_theta, &q).unwrap();
        assert!((b.value - (1.0 - power_outage(&low_theta).unwrap())).abs() <= b.error + 1e-15);
        let b = success_lower_bound(&thomas(), &q).unwrap();
        assert!(b.value <= 1.0 - b.power_outage);
        assert!((b.s_star - 79.9).abs() < 0.1);
    }

    #[test]
    fn capacity_examples() {
        let c = capacity_approx(&matern(20.0)).unwrap();
        assert!((c - 0.0006 * 131.99).abs() < 1e-4, "{c}");
        assert!(close(c, capacity_matern_closed_form(&matern(20.0)).unwrap(), 1e-12));
        assert_eq!(capacity_approx(&ModelConfig { duty_cycle: 0.0, ..matern(20.0) }).unwrap(), 0.0);
        let small = matern(2.0);
        assert!(close(capacity_approx(&small).unwrap(), small.active_density(), 1e-15));
        assert!(close(capacity_matern_closed_form(&small).unwrap(), small.active_density(), 1e-15));
        assert!(capacity_matern_closed_form(&thomas()).is_err());
    }

    #[test]
    fn duty_optimum_audit() {
        let big = |alpha1, beta| ModelConfig { alpha1, beta, ..matern(1e4) };
        let tiny_beta = optimal_duty_matern(&big(3.0, 1e-6)).unwrap();
        assert!(tiny_beta.d_star > 0.9999);

        let r = optimal_duty_matern(&big(3.0, 0.6)).unwrap();
        // Oracle: brute force on D (1 - 0.6 D)^{2/3}.
        let (mut bd, mut bv) = (0.0, 0.0);
        for i in 1..=10_000 {
            let d = i as f64 * 1e-4;
            let v = d * (1.0 - 0.6 * d).powf(2.0 / 3.0);
            if v > bv {
                bd = d;
                bv = v;
            }
        }
        assert!((r.d_star - bd).abs() <= 1e-4);
        assert!((r.published - 0.7894736842105263).abs() < 1e-12);
        assert_eq!(r.stationary, 1.0);
        assert_eq!(r.agreement, CandidateAgreement::Stationary);

        let r = optimal_duty_matern(&big(3.0, 1.0)).unwrap();
        assert!((r.d_star - 0.6).abs() < 1e-3);
        assert_eq!(r.agreement, CandidateAgreement::Both);
    }

    #[test]
    fn region_trivial_epsilon_and_monotone_in_s_star() {
        let q = QuadSpec { rel_tol: 1e-3, ..QuadSpec::default().with_outer_radius(15.0) };
        let cfg = ModelConfig { lambda_p: 0.05, ..thomas() };
        let r = feasible_region(&cfg, 1.0 - 1e-12, 0.5, &q).unwrap();
        for c in &r.cells {
            match c.status {
                CellStatus::Evaluated => assert!(c.feasible),
                CellStatus::Invalid => assert!(c.beta * c.duty_cycle >= 1.0),
                CellStatus::ZeroBeta => assert_eq!(c.beta, 0.0),
                CellStatus::QuadratureFailure => panic!("quadrature failed"),
            }
        }
        assert!(feasible_region(&cfg, 0.0, 0.5, &q).is_err());
        assert!(feasible_region(&cfg, 0.5, 0.6, &q).is_err());

        let r = feasible_region(&cfg, 0.3, 0.25, &q).unwrap();
        let mut evaluated: Vec<&RegionCell> = r.cells.iter().filter(|c| c.status == CellStatus::Evaluated).collect();
        // At fixed D a larger beta lowers both s* beta and d0, so C(s*) can
        // only rise as s* falls: feasibility is monotone along s*.
        evaluated.sort_by(|a, b| a.duty_cycle.total_cmp(&b.duty_cycle).then(a.s_star.total_cmp(&b.s_star)));
        for w in evaluated.windows(2) {
            if w[0].duty_cycle == w[1].duty_cycle && w[1].feasible {
                assert!(w[0].feasible);
            }
        }
    }
}
