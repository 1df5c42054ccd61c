//! Link budget of the wireless power transfer (WPT) hop and the
//! circuit-power gate.
//!
//! A node at distance `d` from its PB receives `eta * g * d^-alpha1`. During
//! its backscatter mini-slot it reflects a fraction `beta` and harvests the
//! rest; in the waiting phase it harvests everything. It can run its circuit
//! only if `(1 - beta) P D + P (1 - D) >= P_c`, i.e. `P >= P_c / (1 - beta D)`,
//! which holds exactly for `d <= d0`.

use serde::{Deserialize, Serialize};

use crate::error::{check_nonnegative, check_positive, check_range, Error, Result};
use crate::geometry::ClusterModel;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Every scalar of the network model, in SI units (watts, meters, linear
/// ratios).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// PB density per m².
    pub lambda_p: f64,
    /// Mean number of nodes per cluster.
    pub c_bar: f64,
    /// Backscatter duty cycle `D`.
    pub duty_cycle: f64,
    /// Reflection coefficient `beta`.
    pub beta: f64,
    /// PB transmit power allocated per node, watts.
    pub eta: f64,
    /// Beamforming gain of the WPT link.
    pub g: f64,
    /// Circuit power, watts.
    pub p_c: f64,
    /// WPT path-loss exponent.
    pub alpha1: f64,
    /// D2D path-loss exponent.
    pub alpha2: f64,
    /// SIR threshold (linear).
    pub theta: f64,
    /// Transmitter-receiver separation of every D2D link, meters.
    pub d2d_distance: f64,
    pub cluster: ClusterModel,
}

impl Default for ModelConfig {
    /// Reference parameter set: 40 dBm per-node PB power, 7 dBm circuit power,
    /// -5 dB SIR threshold, Thomas clusters with sigma² = 4.
    fn default() -> Self {
        Self {
            lambda_p: 0.2,
            c_bar: 3.0,
            duty_cycle: 0.4,
            beta: 0.6,
            eta: dbm_to_watts(40.0),
            g: 1.0,
            p_c: dbm_to_watts(7.0),
            alpha1: 3.0,
            alpha2: 3.0,
            theta: db_to_linear(-5.0),
            d2d_distance: 1.0,
            cluster: ClusterModel::Thomas { sigma2: 4.0 },
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        check_nonnegative("lambda_p", self.lambda_p)?;
        check_nonnegative("c_bar", self.c_bar)?;
        check_range("duty_cycle", self.duty_cycle, 0.0, 1.0)?;
        check_range("beta", self.beta, 0.0, 1.0)?;
        if self.beta * self.duty_cycle >= 1.0 {
            return Err(Error::invalid(
                "beta*duty_cycle",
                format!(
                    "beta * duty_cycle must be < 1, got {} * {}",
                    self.beta, self.duty_cycle
                ),
            ));
        }
        check_positive("eta", self.eta)?;
        check_positive("g", self.g)?;
        check_positive("p_c", self.p_c)?;
        for (name, alpha) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(alpha.is_finite() && alpha > 2.0) {
                return Err(Error::invalid(name, format!("must be > 2, got {alpha}")));
            }
        }
        check_positive("theta", self.theta)?;
        check_positive("d2d_distance", self.d2d_distance)?;
        self.cluster.validate()
    }

    /// `eta * g`, the WPT power at unit distance.
    pub fn wpt_power(&self) -> f64 {
        self.eta * self.g
    }

    /// Smallest nonzero transmit power, `beta P_c / (1 - beta D)`.
    pub fn min_tx_power(&self) -> f64 {
        self.beta * self.p_c / (1.0 - self.beta * self.duty_cycle)
    }

    /// Laplace argument of the coverage lower bound, `theta (1 - beta D) / (beta P_c)`.
    pub fn bound_laplace_arg(&self) -> f64 {
        self.theta * (1.0 - self.beta * self.duty_cycle) / (self.beta * self.p_c)
    }

    /// Density of backscatter nodes active in a given mini-slot.
    pub fn active_density(&self) -> f64 {
        self.lambda_p * self.c_bar * self.duty_cycle
    }
}

/// Transmit power after circuit-power gating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxPower {
    pub value: f64,
    pub is_outage: bool,
}

impl TxPower {
    pub const OUTAGE: TxPower = TxPower {
        value: 0.0,
        is_outage: true,
    };
}

fn check_distance(dist: f64) -> Result<()> {
    if !(dist.is_finite() && dist > 0.0) {
        return Err(Error::invalid(
            "distance",
            format!("must be finite and > 0 (path loss is singular at 0), got {dist}"),
        ));
    }
    Ok(())
}

/// Power received from the PB at `dist` meters.
pub fn receive_power(cfg: &ModelConfig, dist: f64) -> Result<f64> {
    check_distance(dist)?;
    Ok(cfg.wpt_power() * dist.powf(-cfg.alpha1))
}

/// PB distance `d0` beyond which the circuit-power constraint fails.
pub fn distance_threshold(cfg: &ModelConfig) -> f64 {
    (cfg.wpt_power() * (1.0 - cfg.beta * cfg.duty_cycle) / cfg.p_c).powf(1.0 / cfg.alpha1)
}

/// Backscattered power of a node `dist_to_pb` meters from its PB. The
/// boundary `dist_to_pb == d0` transmits.
pub fn gated_power(cfg: &ModelConfig, dist_to_pb: f64) -> Result<TxPower> {
    check_distance(dist_to_pb)?;
    if dist_to_pb <= distance_threshold(cfg) {
        Ok(TxPower {
            value: cfg.beta * cfg.wpt_power() * dist_to_pb.powf(-cfg.alpha1),
            is_outage: false,
        })
    } else {
        Ok(TxPower::OUTAGE)
    }
}
