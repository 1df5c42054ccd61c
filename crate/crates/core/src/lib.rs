//! Stochastic-geometry toolkit for wirelessly powered backscatter (WP-BC)
//! networks.
//!
//! Power beacons (PBs) form a Poisson point process; backscatter nodes form
//! Matern or Thomas clusters around them and harvest energy from their own PB.
//! A node transmits only when its harvested power covers the circuit power,
//! which gates transmission by PB distance. The crate provides:
//!
//! - [`geometry`]: PPP and cluster sampling, duty-cycle thinning, radial laws.
//! - [`power`]: model configuration, link budget and circuit-power gating.
//! - [`mc`]: Palm-conditioned Monte Carlo estimators (success probability,
//!   power outage, transmission capacity, interference Laplace functional).
//! - [`analytic`]: closed forms and quadrature of the interference
//!   characteristic functionals, the coverage lower bound and the capacity
//!   approximation.
//! - [`optimize`]: grid-seeded golden-section search over duty cycle and
//!   reflection coefficient.

pub mod analytic;
pub mod error;
pub mod geometry;
pub mod mc;
pub mod optimize;
pub mod power;
pub mod quadrature;

pub use error::{Error, Result};
pub use geometry::{ClusterModel, Point2, Window};
pub use mc::{Estimate, InterferenceSources, Scenario, SimConfig};
pub use power::{ModelConfig, TxPower};
