//! Point-process sampling: the PB Poisson point process on a disk window,
//! Matern/Thomas daughter offsets, Poisson cluster sizes and independent
//! thinning by the duty cycle.
//!
//! Every sampler takes an explicit generator and consumes a number of draws
//! that does not depend on thinning or gating parameters, so two runs that
//! differ only in those parameters see the same underlying points.

use std::f64::consts::PI;
use std::ops::{Add, Neg, Sub};

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_nonnegative, check_positive, check_range, Error, Result};

/// Means below this are sampled by CDF inversion, larger ones by `rand_distr`'s
/// exact PTRS sampler.
const POISSON_INVERSION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_polar(r: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(r * c, r * s)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Daughter-point law of a cluster around its PB.
///
/// `Matern` places nodes uniformly on a disk of radius `a`; `Thomas` uses a
/// circular Gaussian with per-axis variance `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClusterModel {
    Matern { a: f64 },
    Thomas { sigma2: f64 },
}

impl ClusterModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ClusterModel::Matern { a } => check_positive("a", a),
            ClusterModel::Thomas { sigma2 } => check_positive("sigma2", sigma2),
        }
    }

    /// Planar density `f(x)` at `|x| = r` (integrates to one over the plane).
    pub fn density(&self, r: f64) -> f64 {
        match *self {
            ClusterModel::Matern { a } => {
                if r <= a {
                    1.0 / (PI * a * a)
                } else {
                    0.0
                }
            }
            ClusterModel::Thomas { sigma2 } => {
                (-r * r / (2.0 * sigma2)).exp() / (2.0 * PI * sigma2)
            }
        }
    }

    /// `sup_x f(x)`, attained at the cluster center for both laws.
    pub fn peak_density(&self) -> f64 {
        self.density(0.0)
    }

    /// `Pr(|offset| <= r)` for `r >= 0`, without argument checks.
    pub(crate) fn cdf(&self, r: f64) -> f64 {
        match *self {
            ClusterModel::Matern { a } => ((r / a) * (r / a)).min(1.0),
            ClusterModel::Thomas { sigma2 } => -(-r * r / (2.0 * sigma2)).exp_m1(),
        }
    }

    /// `Pr(|offset| > r)`, computed without cancellation.
    pub(crate) fn tail(&self, r: f64) -> f64 {
        match *self {
            ClusterModel::Matern { a } => (1.0 - (r / a) * (r / a)).max(0.0),
            ClusterModel::Thomas { sigma2 } => (-r * r / (2.0 * sigma2)).exp(),
        }
    }

    /// Radius beyond which the daughter law carries at most `mass` probability.
    pub fn support_radius(&self, mass: f64) -> f64 {
        match *self {
            ClusterModel::Matern { a } => a,
            ClusterModel::Thomas { sigma2 } => {
                let mass = mass.clamp(f64::MIN_POSITIVE, 1.0);
                (-2.0 * sigma2 * mass.ln()).max(0.0).sqrt()
            }
        }
    }
}

/// Disk simulation window centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub radius: f64,
}

impl Window {
    pub fn new(radius: f64) -> Result<Self> {
        check_positive("window_radius", radius)?;
        Ok(Self { radius })
    }

    pub fn area(&self) -> f64 {
        PI * self.radius * self.radius
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.norm_sq() <= self.radius * self.radius
    }

    /// Uniform point on the disk.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point2 {
        // Rejection from the bounding square; accepts with probability pi/4.
        loop {
            let x = self.radius * (2.0 * rng.random::<f64>() - 1.0);
            let y = self.radius * (2.0 * rng.random::<f64>() - 1.0);
            let p = Point2::new(x, y);
            if p.norm_sq() <= self.radius * self.radius {
                return p;
            }
        }
    }
}

/// Poisson sampler with the mean's constants precomputed.
///
/// Small means use sequential CDF inversion from a single uniform, so the
/// count is a nondecreasing function of the mean for a fixed draw.
#[derive(Debug, Clone)]
pub struct PoissonCount {
    mean: f64,
    exp_neg_mean: f64,
    large: Option<Poisson<f64>>,
}

impl PoissonCount {
    pub fn new(mean: f64) -> Result<Self> {
        check_nonnegative("poisson mean", mean)?;
        let large = if mean >= POISSON_INVERSION_LIMIT {
            Some(Poisson::new(mean).map_err(|e| Error::invalid("poisson mean", e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            mean,
            exp_neg_mean: (-mean).exp(),
            large,
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if let Some(dist) = &self.large {
            return dist.sample(rng) as u64;
        }
        let u: f64 = rng.random();
        if self.mean == 0.0 {
            return 0;
        }
        let mut k = 0u64;
        let mut p = self.exp_neg_mean;
        let mut cdf = p;
        while u >= cdf {
            k += 1;
            p *= self.mean / k as f64;
            let next = cdf + p;
            // cdf saturated below u through rounding; the remaining mass is < 1 ulp.
            if next == cdf {
                break;
            }
            cdf = next;
        }
        k
    }
}

/// Homogeneous PPP of the given density on `window`.
pub fn sample_ppp<R: Rng + ?Sized>(density: f64, window: Window, rng: &mut R) -> Result<Vec<Point2>> {
    check_nonnegative("density", density)?;
    let count = PoissonCount::new(density * window.area())?.sample(rng);
    Ok((0..count).map(|_| window.sample_uniform(rng)).collect())
}

/// Isotropic daughter offset drawn from the cluster law.
pub fn sample_offset<R: Rng + ?Sized>(model: ClusterModel, rng: &mut R) -> Point2 {
    match model {
        ClusterModel::Matern { a } => {
            let r = a * rng.random::<f64>().sqrt();
            let angle = 2.0 * PI * rng.random::<f64>();
            Point2::from_polar(r, angle)
        }
        ClusterModel::Thomas { sigma2 } => {
            let sigma = sigma2.sqrt();
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            Point2::new(sigma * x, sigma * y)
        }
    }
}

/// One cluster: Poisson(`mean_size`) daughters around `center`.
pub fn sample_cluster<R: Rng + ?Sized>(
    center: Point2,
    model: ClusterModel,
    mean_size: f64,
    rng: &mut R,
) -> Result<Vec<Point2>> {
    let count = PoissonCount::new(mean_size)?.sample(rng);
    Ok((0..count)
        .map(|_| center + sample_offset(model, rng))
        .collect())
}

/// Independent thinning; survivors keep their order. One uniform is consumed
/// per input item regardless of `keep_prob`.
pub fn thin<T: Clone, R: Rng + ?Sized>(items: &[T], keep_prob: f64, rng: &mut R) -> Result<Vec<T>> {
    check_range("keep_prob", keep_prob, 0.0, 1.0)?;
    Ok(items
        .iter()
        .filter(|_| rng.random::<f64>() < keep_prob)
        .cloned()
        .collect())
}

/// `Pr(|offset| <= r)` under the cluster law.
pub fn radial_cdf(model: ClusterModel, r: f64) -> Result<f64> {
    if r.is_nan() || r < 0.0 {
        return Err(Error::invalid("r", format!("must be >= 0, got {r}")));
    }
    Ok(model.cdf(r))
}
